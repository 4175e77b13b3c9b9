"""Streaming-training harness: per-segment training, the three strategies,
evaluation, and checkpointing.

One experiment processes the base segment and each incremental segment in
order. Strategy ``urcl`` trains continually with the replay buffer, mixup
fusion, and the contrastive objective; ``finetune`` re-trains on every segment
from the previous weights with none of those components; ``one_fit_all``
trains on the base segment only and is evaluated unchanged afterwards.
"""

from __future__ import annotations

import base64
import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .augment import AugmentationParams, GraphSample, edge_weight_threshold, random_view_pair
from .config import ExperimentConfig, config_hash, write_config
from .data import (NormalizationStats, ObservationSeries, SensorNetwork, StreamSegment,
                   count_windows, load_dataset, make_windows, min_max_normalize, split_stream)
from .exceptions import ConfigError, ContractError, NumericalError
from .losses import ViewPairEmbeddings, graphcl_batch_loss, task_loss_mae, total_loss
from .model import STForecaster, load_model_checkpoint, save_model_checkpoint
from .replay import MixupConfig, ReplayBuffer, buffer_insert, rmir_sample, stmixup

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.csv"
LOSSES_FILE = "losses.csv"
SUMMARY_COLUMNS = ("segment", "strategy", "mae", "rmse",
                   "train_seconds", "infer_seconds_per_window")


@dataclass
class StepRecord:
    step: int
    task: float
    ssl: float
    total: float


@dataclass
class SegmentReport:
    """Per-segment training and evaluation record."""

    role: str
    strategy: str
    epochs_trained: int = 0
    train_task: list[float] = field(default_factory=list)
    train_ssl: list[float] = field(default_factory=list)
    train_total: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    test_mae: float = float("nan")
    test_rmse: float = float("nan")
    train_seconds: float = 0.0
    infer_seconds_per_window: float = 0.0


@dataclass
class CheckpointRecord:
    """Pointers needed to resume an experiment after a finished segment."""

    model_path: str
    buffer_path: str
    config_hash: str
    segment_index: int
    next_step: int
    numpy_rng_state: dict

    def save(self, path: Path) -> None:
        payload = dict(self.__dict__)
        path.write_text(json.dumps(payload, default=_json_default, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CheckpointRecord":
        payload = json.loads(Path(path).read_text())
        return cls(**payload)


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, bytes):
        return base64.b64encode(value).decode()
    raise TypeError(f"cannot serialize {type(value)}")


def mae_rmse(predictions: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
    """Plain MAE and RMSE over all elements."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ContractError(f"shape mismatch {predictions.shape} vs {targets.shape}")
    err = predictions - targets
    return float(np.abs(err).mean()), float(np.sqrt((err * err).mean()))


def evaluate_metrics(model: nn.Module, batches, stats: NormalizationStats | None = None,
                     target_channel: int = 0) -> tuple[float, float]:
    """MAE/RMSE of the model over the given window batches.

    When normalization stats are supplied, both predictions and targets are
    mapped back to dataset units before the metrics are computed.
    """
    abs_sum = 0.0
    sq_sum = 0.0
    count = 0
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        for batch in batches:
            inputs = torch.as_tensor(batch.inputs, dtype=dtype)
            preds = model(inputs).cpu().numpy().astype(np.float64)
            targets = np.asarray(batch.targets, dtype=np.float64)
            if stats is not None:
                preds = stats.invert(preds, target_channel)
                targets = stats.invert(targets, target_channel)
            err = preds - targets
            abs_sum += float(np.abs(err).sum())
            sq_sum += float((err * err).sum())
            count += err.size
    if count == 0:
        raise ContractError("evaluation received no windows")
    return abs_sum / count, float(np.sqrt(sq_sum / count))


def build_model(cfg: ExperimentConfig, network: SensorNetwork, channels: int) -> STForecaster:
    return STForecaster(
        num_nodes=network.node_count,
        in_channels=channels,
        horizon=cfg.output_steps,
        out_channels=1,
        adjacency=network.adjacency,
        dilations=cfg.dilations,
        diffusion_steps=cfg.diffusion_steps,
        embed_dim=cfg.embed_dim,
    )


def _build_optimizer(cfg: ExperimentConfig, model: nn.Module) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(model.parameters(), lr=cfg.learning_rate)
    raise ConfigError(f"unknown optimizer {cfg.optimizer!r}")


def _augmentation_params(cfg: ExperimentConfig, network: SensorNetwork) -> AugmentationParams:
    threshold = cfg.de_threshold
    if threshold < 0:
        threshold = edge_weight_threshold(network.adjacency)
    return AugmentationParams(
        dn_ratio=cfg.dn_ratio, de_ratio=cfg.de_ratio, de_threshold=threshold,
        sg_coverage=cfg.sg_coverage, ae_ratio=cfg.ae_ratio, ae_min_hops=cfg.ae_min_hops,
        ts_slice_len=cfg.effective_slice_len,
    )


def train_segment(model: STForecaster, buffer: ReplayBuffer, series: ObservationSeries,
                  segment: StreamSegment, stats: NormalizationStats,
                  cfg: ExperimentConfig, rng: np.random.Generator,
                  network: SensorNetwork, augment_params: AugmentationParams,
                  step_log: list[StepRecord] | None = None,
                  global_step: int = 0) -> tuple[SegmentReport, int]:
    """Train (or, for a frozen strategy, just evaluate) one stream segment.

    Returns the report and the updated global step counter. The model and
    buffer are updated in place; the raw pre-mixup batches are what enters the
    buffer.
    """
    report = SegmentReport(role=segment.role, strategy=cfg.strategy)
    is_base = segment.role == "base"
    eval_only = cfg.strategy == "one_fit_all" and not is_base
    use_replay = cfg.strategy == "urcl"
    use_ssl = cfg.strategy == "urcl" and cfg.ssl_weight > 0.0
    dtype = next(model.parameters()).dtype
    mixup_cfg = MixupConfig(alpha=cfg.mixup_alpha, rng_seed=cfg.seed)

    if not eval_only:
        optimizer = _build_optimizer(cfg, model)
        best_val = float("inf")
        epochs_without_improvement = 0
        train_start = time.perf_counter()
        for epoch in range(cfg.epochs):
            epoch_task: list[float] = []
            epoch_ssl: list[float] = []
            epoch_total: list[float] = []
            for batch in make_windows(series, segment.train_range, cfg.input_steps,
                                      cfg.output_steps, cfg.batch_size):
                sampled = []
                if use_replay and len(buffer) > 0:
                    sampled = rmir_sample(
                        buffer, batch, model,
                        lr=optimizer.param_groups[0]["lr"],
                        pool_size=cfg.effective_pool_size,
                        sample_size=cfg.effective_sample_size,
                        rng=rng,
                    )
                mixed = stmixup(batch, sampled, mixup_cfg, rng=rng) if sampled else batch

                inputs = torch.as_tensor(mixed.inputs, dtype=dtype)
                targets = torch.as_tensor(mixed.targets, dtype=dtype)

                if use_ssl and mixed.batch_size >= 2:
                    sample = GraphSample(window=mixed.inputs,
                                         adjacency=network.adjacency,
                                         directed=network.directed)
                    view1, view2 = random_view_pair(sample, augment_params, rng)
                    _, z1 = model.encode(torch.as_tensor(view1.window, dtype=dtype),
                                         torch.as_tensor(view1.adjacency, dtype=dtype))
                    _, z2 = model.encode(torch.as_tensor(view2.window, dtype=dtype),
                                         torch.as_tensor(view2.adjacency, dtype=dtype))
                    ssl_term = cfg.ssl_weight * graphcl_batch_loss(
                        ViewPairEmbeddings(p1=model.project(z1), z1=z1,
                                           p2=model.project(z2), z2=z2),
                        cfg.tau,
                    )
                else:
                    ssl_term = torch.zeros((), dtype=dtype)

                task = task_loss_mae(model(inputs), targets)
                try:
                    breakdown = total_loss(task, ssl_term)
                except NumericalError as exc:
                    raise NumericalError(
                        f"segment {segment.role}, epoch {epoch}, step {global_step}: {exc}"
                    ) from None
                optimizer.zero_grad()
                breakdown.total.backward()
                if cfg.grad_clip > 0:
                    nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optimizer.step()
                if use_replay:
                    buffer_insert(buffer, batch)

                record = StepRecord(step=global_step,
                                    task=breakdown.task.detach().item(),
                                    ssl=breakdown.ssl.detach().item(),
                                    total=breakdown.total.detach().item())
                if step_log is not None:
                    step_log.append(record)
                epoch_task.append(record.task)
                epoch_ssl.append(record.ssl)
                epoch_total.append(record.total)
                global_step += 1

            report.train_task.append(float(np.mean(epoch_task)))
            report.train_ssl.append(float(np.mean(epoch_ssl)))
            report.train_total.append(float(np.mean(epoch_total)))
            val_mae, val_rmse = evaluate_metrics(
                model,
                make_windows(series, segment.val_range, cfg.input_steps,
                             cfg.output_steps, cfg.batch_size),
                stats,
            )
            report.val_mae.append(val_mae)
            report.val_rmse.append(val_rmse)
            report.epochs_trained = epoch + 1
            if val_mae < best_val:
                best_val = val_mae
                epochs_without_improvement = 0
            else:
                epochs_without_improvement += 1
                if epochs_without_improvement >= cfg.patience:
                    logger.info("early stop on %s after %d epochs", segment.role, epoch + 1)
                    break
        report.train_seconds = time.perf_counter() - train_start

    infer_start = time.perf_counter()
    report.test_mae, report.test_rmse = evaluate_metrics(
        model,
        make_windows(series, segment.test_range, cfg.input_steps,
                     cfg.output_steps, cfg.batch_size),
        stats,
    )
    n_test = count_windows(segment.test_range, cfg.input_steps, cfg.output_steps)
    report.infer_seconds_per_window = (time.perf_counter() - infer_start) / max(1, n_test)
    return report, global_step


def run_stream_experiment(cfg: ExperimentConfig, out_dir: str | Path,
                          resume: str | Path | None = None) -> list[SegmentReport]:
    """Run one strategy over the whole stream, writing summary, losses, and
    per-segment checkpoints into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    network, series = load_dataset(cfg.data_dir)
    segments = split_stream(series, cfg.base_fraction, cfg.n_incremental,
                            cfg.input_steps, cfg.output_steps)
    series, stats = min_max_normalize(series, fit_range=segments[0].train_range)
    augment_params = _augmentation_params(cfg, network)

    model = build_model(cfg, network, series.num_channels)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    digest = config_hash(cfg)
    start_index = 0
    global_step = 0
    if resume is not None:
        record = CheckpointRecord.load(resume)
        if record.config_hash != digest:
            raise ContractError(
                f"resume checkpoint was written for config {record.config_hash}, "
                f"current config is {digest}"
            )
        load_model_checkpoint(model, record.model_path, expected_hash=digest)
        buffer = ReplayBuffer.load(record.buffer_path)
        rng.bit_generator.state = record.numpy_rng_state
        start_index = record.segment_index + 1
        global_step = record.next_step
        logger.info("resumed after segment %d", record.segment_index)

    write_config(cfg, out / "config_used.cfg")
    step_log: list[StepRecord] = []
    reports: list[SegmentReport] = []
    for index in range(start_index, len(segments)):
        segment = segments[index]
        logger.info("training segment %s with strategy %s", segment.role, cfg.strategy)
        report, global_step = train_segment(
            model, buffer, series, segment, stats, cfg, rng, network,
            augment_params, step_log=step_log, global_step=global_step,
        )
        reports.append(report)
        ckpt_dir = out / "checkpoints" / f"segment_{index}"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        model_path = ckpt_dir / "model.npz"
        buffer_path = ckpt_dir / "buffer.npz"
        save_model_checkpoint(model, model_path, config_hash=digest)
        buffer.save(buffer_path)
        CheckpointRecord(
            model_path=str(model_path), buffer_path=str(buffer_path),
            config_hash=digest, segment_index=index, next_step=global_step,
            numpy_rng_state=rng.bit_generator.state,
        ).save(ckpt_dir / "record.json")

    write_summary(out / SUMMARY_FILE, reports)
    write_losses(out / LOSSES_FILE, step_log)
    return reports


def write_summary(path: Path, reports: list[SegmentReport]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(SUMMARY_COLUMNS)
        for report in reports:
            writer.writerow([
                report.role, report.strategy,
                f"{report.test_mae:.6f}", f"{report.test_rmse:.6f}",
                f"{report.train_seconds:.3f}",
                f"{report.infer_seconds_per_window:.6f}",
            ])


def write_losses(path: Path, step_log: list[StepRecord]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["step", "task", "ssl", "total"])
        for record in step_log:
            writer.writerow([record.step, f"{record.task:.6f}",
                             f"{record.ssl:.6f}", f"{record.total:.6f}"])
