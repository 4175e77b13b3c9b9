"""Synthetic concept-drift stream generator.

Produces a ring-graph sensor network whose signal switches regime (offset,
amplitude, period) at each incremental segment. Within an incremental segment
the training zone is dominated by the new regime with sparse recall blocks of
earlier regimes, while the validation/test tail alternates blocks of the new
regime with earlier ones. The resulting stream rewards methods that retain
previously learned regimes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import GRAPH_FILE, META_FILE, OBSERVATIONS_FILE, split_lengths, subsplit_lengths

BLOCK_WIDTH = 12          # slots per regime block in mixed zones
RECALL_EVERY = 5          # every n-th training block replays an old regime
TAIL_OLD_RUN = 1          # old-regime blocks per new-regime block in val/test
NOISE_SIGMA = 0.05

_OFFSETS_STEP = 0.55
_BASE_AMPLITUDE = 0.35
_PERIODS = (24, 16, 32, 12, 20)


def _regime_params(regime: int) -> tuple[float, float, float]:
    offset = _OFFSETS_STEP * regime
    amplitude = _BASE_AMPLITUDE + 0.05 * ((3 * regime) % 4)
    period = float(_PERIODS[regime % len(_PERIODS)])
    return offset, amplitude, period


def regime_schedule(slots: int, n_incremental: int,
                    base_fraction: float = 0.3) -> np.ndarray:
    """Regime id per slot for the whole stream."""
    lengths = split_lengths(slots, base_fraction, n_incremental)
    schedule = np.zeros(slots, dtype=np.int64)
    cursor = lengths[0]                      # base segment stays regime 0
    for k in range(1, n_incremental + 1):
        length = lengths[k]
        n_train, n_val, _ = subsplit_lengths(length)
        old_cycle = list(range(k - 1, -1, -1))
        # training zone: regime k with sparse recall blocks
        recall_index = 0
        for block, start in enumerate(range(0, n_train, BLOCK_WIDTH)):
            stop = min(start + BLOCK_WIDTH, n_train)
            if block % RECALL_EVERY == RECALL_EVERY - 1:
                regime = old_cycle[recall_index % len(old_cycle)]
                recall_index += 1
            else:
                regime = k
            schedule[cursor + start:cursor + stop] = regime
        # validation and test zones alternate old-regime runs with the new
        # regime, starting old: retention is what the tail measures
        tail_start = cursor + n_train
        tail_len = length - n_train
        old_index = 0
        period = TAIL_OLD_RUN + 1
        for block, start in enumerate(range(0, tail_len, BLOCK_WIDTH)):
            stop = min(start + BLOCK_WIDTH, tail_len)
            if block % period < TAIL_OLD_RUN:
                regime = old_cycle[old_index % len(old_cycle)]
                old_index += 1
            else:
                regime = k
            schedule[tail_start + start:tail_start + stop] = regime
        cursor += length
    return schedule


def generate_stream_values(nodes: int, slots: int, n_incremental: int, seed: int,
                           channels: int = 1,
                           base_fraction: float = 0.3) -> np.ndarray:
    """Observation tensor (T, V, C) for the regime-shifted sinusoid stream."""
    rng = np.random.default_rng(seed)
    schedule = regime_schedule(slots, n_incremental, base_fraction)
    t = np.arange(slots, dtype=np.float64)
    node_phase = 2.0 * np.pi * np.arange(nodes) / nodes
    values = np.zeros((slots, nodes, channels), dtype=np.float64)
    for regime in np.unique(schedule):
        offset, amplitude, period = _regime_params(int(regime))
        mask = schedule == regime
        phase = 2.0 * np.pi * t[mask, None] / period + node_phase[None, :]
        values[mask, :, 0] = offset + amplitude * np.sin(phase)
        for channel in range(1, channels):
            values[mask, :, channel] = offset + 0.8 * amplitude * np.cos(phase * (channel + 1))
    values += rng.normal(0.0, NOISE_SIGMA, size=values.shape)
    return values


def ring_edges(nodes: int) -> list[tuple[int, int, float]]:
    return [(i, (i + 1) % nodes, 1.0) for i in range(nodes)]


def write_synthetic_dataset(out_dir: str | Path, nodes: int, slots: int,
                            n_incremental: int, seed: int, channels: int = 1,
                            interval_minutes: float = 5.0,
                            base_fraction: float = 0.3) -> Path:
    """Write the synthetic stream in the standard dataset directory format."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / META_FILE).write_text(json.dumps({
        "node_count": nodes,
        "channels": channels,
        "interval_minutes": interval_minutes,
        "directed": False,
    }, indent=2) + "\n")
    with open(out / GRAPH_FILE, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["src", "dst", "distance"])
        for src, dst, dis in ring_edges(nodes):
            writer.writerow([src, dst, dis])
    values = generate_stream_values(nodes, slots, n_incremental, seed,
                                    channels=channels, base_fraction=base_fraction)
    header = ["t"] + [f"n{v}_c{c}" for v in range(nodes) for c in range(channels)]
    with open(out / OBSERVATIONS_FILE, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for slot in range(slots):
            writer.writerow([slot] + [repr(float(x)) for x in values[slot].reshape(-1)])
    return out


def drift_benchmark_config(data_dir: str, strategy: str = "urcl",
                           seed: int = 0) -> ExperimentConfig:
    """Desk-scale config for the bundled 10-node concept-drift stream.

    Short windows and a small replay buffer keep a full three-strategy,
    multi-seed comparison within a CPU budget while leaving every mechanism
    (interference-ranked sampling, mixup, contrastive head) active.
    """
    return ExperimentConfig(
        data_dir=data_dir, strategy=strategy, seed=seed,
        input_steps=6, output_steps=1,
        batch_size=32, epochs=12, patience=3,
        buffer_capacity=48, sample_size=8, pool_size=24,
        base_fraction=0.3, n_incremental=4,
    )


DRIFT_BENCHMARK_NODES = 10
DRIFT_BENCHMARK_SLOTS = 1200


def write_drift_benchmark(out_dir: str | Path, seed: int = 0) -> Path:
    """The bundled synthetic stream at its canonical size."""
    return write_synthetic_dataset(out_dir, nodes=DRIFT_BENCHMARK_NODES,
                                   slots=DRIFT_BENCHMARK_SLOTS, n_incremental=4,
                                   seed=seed)


def smoke_format_config(data_dir: str, seed: int = 0) -> ExperimentConfig:
    """Config for the truncated real-format (207-node, 2-channel) smoke run."""
    return ExperimentConfig(
        data_dir=data_dir, strategy="urcl", seed=seed,
        input_steps=12, output_steps=1,
        batch_size=32, epochs=2, patience=2,
        buffer_capacity=16, sample_size=8, pool_size=16,
        diffusion_steps=1,
        base_fraction=0.3, n_incremental=4,
    )
