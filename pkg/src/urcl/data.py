"""Sensor-network dataset ingestion, normalization, stream splitting, and windowing.

A dataset directory contains three files:

* ``meta.json``   -- ``{"node_count": int, "channels": int, "interval_minutes": number,
  "directed": bool}``
* ``graph.csv``   -- header ``src,dst,distance``, one row per edge, 0-based node ids.
  For undirected graphs each edge may be listed once; it is mirrored on load.
* ``observations.csv`` -- header ``t,n0_c0,...,n{V-1}_c{C-1}`` (node-major,
  channel-minor), one row per time slot. Empty cells denote missing values and
  are imputed to 0 with the position recorded in a mask.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .exceptions import ConfigError, DomainError, IngestError, ParseError, SchemaError

GRAPH_FILE = "graph.csv"
OBSERVATIONS_FILE = "observations.csv"
META_FILE = "meta.json"

TRAIN_FRACTION = 0.7
VAL_FRACTION = 0.1


@dataclass
class SensorNetwork:
    """Weighted directed graph of sensors with a dense adjacency matrix."""

    node_count: int
    adjacency: np.ndarray
    directed: bool = True

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.shape != (self.node_count, self.node_count):
            raise SchemaError(
                f"adjacency shape {a.shape} does not match node count {self.node_count}"
            )
        if (a < 0).any():
            raise DomainError("adjacency entries must be non-negative")
        if np.diagonal(a).any():
            raise SchemaError("adjacency diagonal must be zero before self-loop augmentation")
        if not self.directed and not np.array_equal(a, a.T):
            raise SchemaError("undirected network requires a symmetric adjacency")
        self.adjacency = a


@dataclass
class ObservationSeries:
    """Dense observation tensor of shape (T, |V|, C) on a regular time grid."""

    values: np.ndarray
    interval_minutes: float
    start_slot_index: int = 0
    mask: np.ndarray | None = None  # 1.0 observed, 0.0 imputed

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise SchemaError(f"series must be (T, V, C), got shape {self.values.shape}")
        if self.interval_minutes <= 0:
            raise DomainError("interval_minutes must be positive")
        if self.mask is None:
            self.mask = np.ones_like(self.values)
        else:
            self.mask = np.asarray(self.mask, dtype=np.float64)
            if self.mask.shape != self.values.shape:
                raise SchemaError("mask shape must match values shape")

    @property
    def num_slots(self) -> int:
        return self.values.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def num_channels(self) -> int:
        return self.values.shape[2]


@dataclass
class NormalizationStats:
    """Per-channel min/max recorded on the fitting range."""

    per_channel_min: np.ndarray
    per_channel_max: np.ndarray

    def __post_init__(self):
        self.per_channel_min = np.asarray(self.per_channel_min, dtype=np.float64)
        self.per_channel_max = np.asarray(self.per_channel_max, dtype=np.float64)
        if self.per_channel_min.shape != self.per_channel_max.shape:
            raise SchemaError("min and max vectors must have equal length")
        if (self.per_channel_max < self.per_channel_min).any():
            raise DomainError("per-channel max must be >= min")

    def span(self) -> np.ndarray:
        return self.per_channel_max - self.per_channel_min

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Map values into [0, 1] on the fitting range; constant channels map to 0."""
        span = self.span()
        safe = np.where(span > 0, span, 1.0)
        out = (values - self.per_channel_min) / safe
        return np.where(span > 0, out, 0.0)

    def invert(self, values: np.ndarray, channel: int = 0) -> np.ndarray:
        """Undo normalization for a single channel's values."""
        span = float(self.per_channel_max[channel] - self.per_channel_min[channel])
        return values * span + float(self.per_channel_min[channel])


@dataclass
class StreamSegment:
    """One contiguous slice of the stream with its temporal train/val/test ranges.

    Ranges are half-open (start, stop) slot indices into the parent series.
    """

    role: str  # "base" or "incremental_<k>"
    start: int
    stop: int
    train_range: tuple[int, int]
    val_range: tuple[int, int]
    test_range: tuple[int, int]

    @property
    def length(self) -> int:
        return self.stop - self.start


@dataclass
class WindowBatch:
    """A batch of (input window, target) pairs cut from a series.

    inputs: (B, M, V, C); targets: (B, N, V, C_out); origin_slots holds the
    absolute slot index of each window's first input observation.
    """

    inputs: np.ndarray
    targets: np.ndarray
    origin_slots: np.ndarray

    @property
    def batch_size(self) -> int:
        return self.inputs.shape[0]


def build_adjacency(
    edges: Sequence[tuple[int, int, float]], node_count: int, directed: bool = True
) -> SensorNetwork:
    """Build the inverse-distance adjacency: A[i, j] = 1/distance for connected pairs."""
    a = np.zeros((node_count, node_count), dtype=np.float64)
    for src, dst, dis in edges:
        if not (0 <= src < node_count and 0 <= dst < node_count):
            raise SchemaError(f"edge ({src}, {dst}) outside node range 0..{node_count - 1}")
        if dis <= 0:
            raise DomainError(f"edge ({src}, {dst}) has non-positive distance {dis}")
        a[src, dst] = 1.0 / dis
        if not directed:
            a[dst, src] = 1.0 / dis
    return SensorNetwork(node_count=node_count, adjacency=a, directed=directed)


def _parse_float_cell(text: str, row: int, column: str) -> tuple[float, float]:
    """Return (value, observed-flag); empty cells impute to 0 and flag 0."""
    stripped = text.strip()
    if stripped == "":
        return 0.0, 0.0
    try:
        return float(stripped), 1.0
    except ValueError:
        raise ParseError(
            f"non-numeric cell {text!r} at row {row}, column {column}"
        ) from None


def load_dataset(root_path: str | Path) -> tuple[SensorNetwork, ObservationSeries]:
    """Load a dataset directory into a network and observation series."""
    root = Path(root_path)
    missing = [name for name in (META_FILE, GRAPH_FILE, OBSERVATIONS_FILE)
               if not (root / name).is_file()]
    if missing:
        raise IngestError(f"dataset {root} is missing {', '.join(missing)}")

    try:
        meta = json.loads((root / META_FILE).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{META_FILE}: invalid JSON ({exc})") from None
    for key in ("node_count", "channels", "interval_minutes", "directed"):
        if key not in meta:
            raise SchemaError(f"{META_FILE} is missing required key {key!r}")
    node_count = int(meta["node_count"])
    channels = int(meta["channels"])
    directed = bool(meta["directed"])

    edges = []
    with open(root / GRAPH_FILE, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["src", "dst", "distance"]:
            raise SchemaError(f"{GRAPH_FILE} header must be 'src,dst,distance', got {header}")
        for row_idx, row in enumerate(reader, start=1):
            if len(row) != 3:
                raise SchemaError(f"{GRAPH_FILE} row {row_idx} has {len(row)} fields, expected 3")
            try:
                src, dst = int(row[0]), int(row[1])
            except ValueError:
                raise ParseError(
                    f"non-integer node id at {GRAPH_FILE} row {row_idx}"
                ) from None
            dis, _ = _parse_float_cell(row[2], row_idx, "distance")
            edges.append((src, dst, dis))
    network = build_adjacency(edges, node_count, directed=directed)

    expected_header = ["t"] + [f"n{v}_c{c}" for v in range(node_count) for c in range(channels)]
    rows: list[list[float]] = []
    flags: list[list[float]] = []
    start_slot = 0
    with open(root / OBSERVATIONS_FILE, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected_header:
            raise SchemaError(
                f"{OBSERVATIONS_FILE} header does not match node_count={node_count}, "
                f"channels={channels}"
            )
        for row_idx, row in enumerate(reader, start=1):
            if len(row) != len(expected_header):
                raise SchemaError(
                    f"{OBSERVATIONS_FILE} row {row_idx} has {len(row)} fields, "
                    f"expected {len(expected_header)}"
                )
            try:
                t = int(row[0])
            except ValueError:
                raise ParseError(f"non-integer slot index at row {row_idx}") from None
            if row_idx == 1:
                start_slot = t
            elif t != start_slot + row_idx - 1:
                raise SchemaError(
                    f"{OBSERVATIONS_FILE} slot index {t} at row {row_idx} breaks contiguity"
                )
            values_row, flags_row = [], []
            for col_name, cell in zip(expected_header[1:], row[1:]):
                value, observed = _parse_float_cell(cell, row_idx, col_name)
                values_row.append(value)
                flags_row.append(observed)
            rows.append(values_row)
            flags.append(flags_row)

    if not rows:
        raise SchemaError(f"{OBSERVATIONS_FILE} contains no observation rows")
    values = np.asarray(rows, dtype=np.float64).reshape(len(rows), node_count, channels)
    mask = np.asarray(flags, dtype=np.float64).reshape(len(rows), node_count, channels)
    series = ObservationSeries(
        values=values,
        interval_minutes=float(meta["interval_minutes"]),
        start_slot_index=start_slot,
        mask=mask,
    )
    return network, series


def min_max_normalize(
    series: ObservationSeries,
    stats: NormalizationStats | None = None,
    fit_range: tuple[int, int] | None = None,
) -> tuple[ObservationSeries, NormalizationStats]:
    """Min-max normalize per channel.

    When ``stats`` is absent they are computed over ``fit_range`` (whole series
    by default). Values outside the fitting range may fall outside [0, 1] and
    are not clipped.
    """
    if stats is None:
        start, stop = fit_range if fit_range is not None else (0, series.num_slots)
        window = series.values[start:stop]
        if window.size == 0:
            raise ConfigError("normalization fitting range is empty")
        stats = NormalizationStats(
            per_channel_min=window.min(axis=(0, 1)),
            per_channel_max=window.max(axis=(0, 1)),
        )
    normalized = ObservationSeries(
        values=stats.apply(series.values),
        interval_minutes=series.interval_minutes,
        start_slot_index=series.start_slot_index,
        mask=series.mask.copy(),
    )
    return normalized, stats


def split_lengths(total: int, base_fraction: float, n_incremental: int) -> list[int]:
    """Segment lengths: floor(base_fraction * T), then equal parts (last takes remainder)."""
    if not 0 < base_fraction < 1:
        raise ConfigError(f"base_fraction must be in (0, 1), got {base_fraction}")
    if n_incremental < 1:
        raise ConfigError(f"n_incremental must be >= 1, got {n_incremental}")
    base = int(math.floor(base_fraction * total))
    rest = total - base
    part = rest // n_incremental
    lengths = [base] + [part] * n_incremental
    lengths[-1] += rest - part * n_incremental
    return lengths


def subsplit_lengths(length: int) -> tuple[int, int, int]:
    """70/10/20 train/val/test slot counts in temporal order."""
    n_train = int(math.floor(TRAIN_FRACTION * length))
    n_val = int(math.floor(VAL_FRACTION * length))
    return n_train, n_val, length - n_train - n_val


def split_stream(
    series: ObservationSeries,
    base_fraction: float,
    n_incremental: int,
    input_steps: int,
    output_steps: int,
) -> list[StreamSegment]:
    """Split the series into one base segment plus incremental segments.

    Each segment gets temporal 70/10/20 train/val/test ranges; every range must
    accommodate at least one full (input, target) window.
    """
    window = input_steps + output_steps
    lengths = split_lengths(series.num_slots, base_fraction, n_incremental)
    segments: list[StreamSegment] = []
    cursor = 0
    for index, length in enumerate(lengths):
        role = "base" if index == 0 else f"incremental_{index}"
        n_train, n_val, n_test = subsplit_lengths(length)
        if min(n_train, n_val, n_test) < window:
            raise ConfigError(
                f"segment {role} ({length} slots) cannot fit a {window}-slot window "
                "in each of train/val/test"
            )
        start = cursor
        segments.append(
            StreamSegment(
                role=role,
                start=start,
                stop=start + length,
                train_range=(start, start + n_train),
                val_range=(start + n_train, start + n_train + n_val),
                test_range=(start + n_train + n_val, start + length),
            )
        )
        cursor += length
    return segments


def count_windows(slot_range: tuple[int, int], input_steps: int, output_steps: int) -> int:
    length = slot_range[1] - slot_range[0]
    return max(0, length - (input_steps + output_steps) + 1)


def make_windows(
    series: ObservationSeries,
    slot_range: tuple[int, int],
    input_steps: int,
    output_steps: int,
    batch_size: int,
    target_channel: int = 0,
) -> Iterator[WindowBatch]:
    """Yield stride-1 sliding windows over a slot range in sequential order.

    Targets keep a single channel (``target_channel``). The final partial batch
    is yielded as-is; a range shorter than one window yields nothing.
    """
    if input_steps < 1 or output_steps < 1:
        raise ConfigError("input_steps and output_steps must be >= 1")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    start, stop = slot_range
    values = series.values
    last_origin = stop - (input_steps + output_steps)
    origins = range(start, last_origin + 1)
    for chunk_start in range(0, len(origins), batch_size):
        chunk = origins[chunk_start:chunk_start + batch_size]
        inputs = np.stack([values[o:o + input_steps] for o in chunk])
        targets = np.stack(
            [values[o + input_steps:o + input_steps + output_steps,
                    :, target_channel:target_channel + 1] for o in chunk]
        )
        yield WindowBatch(
            inputs=inputs,
            targets=targets,
            origin_slots=np.asarray(chunk, dtype=np.int64),
        )
