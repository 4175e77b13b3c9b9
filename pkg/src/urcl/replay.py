"""Replay buffer with interference-ranked sampling and mixup fusion.

The buffer is a bounded FIFO queue of raw (pre-mixup) window/target pairs.
Sampling runs in two stages: rank buffered items by the increase in their
forecasting loss under a one-step virtual parameter update on the current
batch, keep the top pool, then rerank the pool by Pearson similarity to the
current batch's mean input window and keep the top sample.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
import torch
from torch import nn
from torch.func import functional_call

from .data import WindowBatch
from .exceptions import ContractError, NumericalError, SchemaError

logger = logging.getLogger(__name__)

BUFFER_MAGIC = "URCL-BUF-v1"
DEFAULT_CAPACITY = 256


@dataclass
class ReplayItem:
    """One stored raw window/target pair with its monotone insertion counter."""

    input_window: np.ndarray   # (M, V, C)
    target: np.ndarray         # (N, V, C_out)
    insert_counter: int


@dataclass
class MixupConfig:
    """Beta concentration and seed for the interpolation coefficient."""

    alpha: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ContractError(f"mixup alpha must be positive, got {self.alpha}")


@dataclass
class InterferenceScore:
    """Loss of one buffered item before/after the virtual update."""

    item_index: int
    insert_counter: int
    loss_before: float
    loss_after: float

    @property
    def delta(self) -> float:
        return self.loss_after - self.loss_before


class ReplayBuffer:
    """Bounded FIFO store of previously trained raw samples.

    Capacity 0 disables the buffer (inserts are dropped), which turns replay
    off without special-casing the training loop.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 0:
            raise ContractError(f"capacity must be >= 0, got {capacity}")
        self.capacity = capacity
        self._items: deque[ReplayItem] = deque(maxlen=capacity)
        self._next_counter = 0
        self._input_shape: tuple[int, ...] | None = None
        self._target_shape: tuple[int, ...] | None = None

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[ReplayItem]:
        return iter(self._items)

    @property
    def items(self) -> tuple[ReplayItem, ...]:
        return tuple(self._items)

    @property
    def next_counter(self) -> int:
        return self._next_counter

    def insert(self, batch: WindowBatch) -> None:
        """Append each pair of the batch; oldest items are evicted past capacity."""
        for row in range(batch.batch_size):
            window = np.array(batch.inputs[row], dtype=np.float64)
            target = np.array(batch.targets[row], dtype=np.float64)
            if self._input_shape is None:
                self._input_shape = window.shape
                self._target_shape = target.shape
            elif window.shape != self._input_shape or target.shape != self._target_shape:
                raise ContractError(
                    f"item shapes {window.shape}/{target.shape} do not match buffer "
                    f"shapes {self._input_shape}/{self._target_shape}"
                )
            self._items.append(ReplayItem(window, target, self._next_counter))
            self._next_counter += 1

    def save(self, path) -> None:
        items = list(self._items)
        if items:
            inputs = np.stack([item.input_window for item in items])
            targets = np.stack([item.target for item in items])
            counters = np.array([item.insert_counter for item in items], dtype=np.int64)
        else:
            inputs = np.zeros((0,), dtype=np.float64)
            targets = np.zeros((0,), dtype=np.float64)
            counters = np.zeros((0,), dtype=np.int64)
        np.savez(path, __magic__=np.array(BUFFER_MAGIC),
                 capacity=np.array(self.capacity, dtype=np.int64),
                 next_counter=np.array(self._next_counter, dtype=np.int64),
                 inputs=inputs, targets=targets, counters=counters)

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        with np.load(path, allow_pickle=False) as archive:
            if "__magic__" not in archive or str(archive["__magic__"]) != BUFFER_MAGIC:
                raise SchemaError(f"{path} is not a {BUFFER_MAGIC} buffer checkpoint")
            buffer = cls(capacity=int(archive["capacity"]))
            buffer._next_counter = int(archive["next_counter"])
            inputs, targets, counters = archive["inputs"], archive["targets"], archive["counters"]
            for row in range(counters.shape[0]):
                buffer._items.append(
                    ReplayItem(np.array(inputs[row]), np.array(targets[row]),
                               int(counters[row]))
                )
            if buffer._items:
                buffer._input_shape = buffer._items[0].input_window.shape
                buffer._target_shape = buffer._items[0].target.shape
        return buffer


def buffer_insert(buffer: ReplayBuffer, batch: WindowBatch) -> ReplayBuffer:
    buffer.insert(batch)
    return buffer


def _as_tensor(array: np.ndarray, like: nn.Module) -> torch.Tensor:
    dtype = next(like.parameters()).dtype
    return torch.as_tensor(array, dtype=dtype)


def virtual_update(model: nn.Module, batch: WindowBatch, lr: float) -> dict[str, torch.Tensor]:
    """One gradient-descent step of the sampling loss, on a copy of the weights.

    Returns the stepped parameters keyed by name; the model itself is never
    mutated. The sampling loss is the MAE of the model's predictions on the
    batch. Parameters unused by the prediction path keep their values.
    """
    inputs = _as_tensor(batch.inputs, model)
    targets = _as_tensor(batch.targets, model)
    names = [name for name, _ in model.named_parameters()]
    params = {name: p for name, p in model.named_parameters()}
    predictions = functional_call(model, params, (inputs,))
    loss = (predictions - targets).abs().mean()
    grads = torch.autograd.grad(loss, [params[name] for name in names], allow_unused=True)
    stepped: dict[str, torch.Tensor] = {}
    for name, grad in zip(names, grads):
        if grad is None:
            stepped[name] = params[name].detach().clone()
            continue
        if not torch.isfinite(grad).all():
            raise NumericalError(f"non-finite gradient for parameter {name}")
        stepped[name] = (params[name] - lr * grad).detach()
    return stepped


def _per_item_mae(model: nn.Module, params: dict[str, torch.Tensor],
                  inputs: torch.Tensor, targets: torch.Tensor,
                  chunk_size: int = 64) -> np.ndarray:
    losses = []
    with torch.no_grad():
        for start in range(0, inputs.shape[0], chunk_size):
            chunk_in = inputs[start:start + chunk_size]
            chunk_tg = targets[start:start + chunk_size]
            preds = functional_call(model, params, (chunk_in,))
            err = (preds - chunk_tg).abs()
            losses.append(err.reshape(err.shape[0], -1).mean(dim=1).cpu().numpy())
    return np.concatenate(losses)


def interference_rank(buffer: ReplayBuffer, model: nn.Module,
                      virtual_params: dict[str, torch.Tensor],
                      chunk_size: int = 64) -> list[InterferenceScore]:
    """Per-item MAE under current and virtual weights, sorted by loss increase.

    Descending by delta; ties broken by smaller insert counter.
    """
    items = buffer.items
    if not items:
        return []
    inputs = _as_tensor(np.stack([item.input_window for item in items]), model)
    targets = _as_tensor(np.stack([item.target for item in items]), model)
    current = {name: p.detach() for name, p in model.named_parameters()}
    for name, tensor in model.named_buffers():
        current[name] = tensor
    virtual = dict(virtual_params)
    for name, tensor in model.named_buffers():
        virtual.setdefault(name, tensor)
    before = _per_item_mae(model, current, inputs, targets, chunk_size)
    after = _per_item_mae(model, virtual, inputs, targets, chunk_size)
    scores = [
        InterferenceScore(item_index=index, insert_counter=item.insert_counter,
                          loss_before=float(before[index]), loss_after=float(after[index]))
        for index, item in enumerate(items)
    ]
    scores.sort(key=lambda s: (-s.delta, s.insert_counter))
    return scores


def pearson_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of two flattened vectors; 0 if either is constant."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractError(f"length mismatch {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ContractError("vectors must have length >= 2")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0:
        return 0.0
    return float((da * db).sum() / denom)


def rmir_sample(buffer: ReplayBuffer, current_batch: WindowBatch, model: nn.Module,
                lr: float, pool_size: int, sample_size: int,
                rng: np.random.Generator | None = None) -> list[ReplayItem]:
    """Two-stage selection: interference top pool, then Pearson top sample.

    An underfull buffer returns all items; a failed virtual update falls back
    to uniform random sampling.
    """
    if sample_size > pool_size:
        raise ContractError(f"sample_size {sample_size} exceeds pool_size {pool_size}")
    items = buffer.items
    if not items:
        return []
    if len(items) < sample_size:
        return list(items)
    try:
        virtual = virtual_update(model, current_batch, lr)
    except NumericalError as exc:
        logger.warning("virtual update failed (%s); falling back to random sampling", exc)
        rng = rng if rng is not None else np.random.default_rng()
        chosen = rng.choice(len(items), size=sample_size, replace=False)
        return [items[i] for i in sorted(chosen)]
    scores = interference_rank(buffer, model, virtual)
    pool = scores if len(items) <= pool_size else scores[:pool_size]
    reference = np.asarray(current_batch.inputs, dtype=np.float64).mean(axis=0).ravel()
    ranked = sorted(
        pool,
        key=lambda s: (-pearson_similarity(items[s.item_index].input_window, reference),
                       s.insert_counter),
    )
    return [items[s.item_index] for s in ranked[:sample_size]]


def stmixup(current: WindowBatch, sampled: Sequence[ReplayItem], cfg: MixupConfig,
            rng: np.random.Generator | None = None,
            lam: float | None = None) -> WindowBatch:
    """Convex interpolation of the current batch with replayed samples.

    One lambda ~ Beta(alpha, alpha) is drawn per batch and applied to both the
    inputs and the targets. Sampled items cycle when fewer than the batch size.
    """
    if not sampled:
        raise ContractError("stmixup requires at least one sampled item")
    if lam is None:
        rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
        lam = float(rng.beta(cfg.alpha, cfg.alpha))
    batch = current.batch_size
    replay_inputs = np.stack(
        [sampled[i % len(sampled)].input_window for i in range(batch)]
    )
    replay_targets = np.stack(
        [sampled[i % len(sampled)].target for i in range(batch)]
    )
    if replay_inputs.shape != current.inputs.shape:
        raise ContractError(
            f"sampled window shape {replay_inputs.shape[1:]} does not match batch "
            f"{current.inputs.shape[1:]}"
        )
    return WindowBatch(
        inputs=lam * current.inputs + (1.0 - lam) * replay_inputs,
        targets=lam * current.targets + (1.0 - lam) * replay_targets,
        origin_slots=current.origin_slots.copy(),
    )
