"""Training objectives: stop-gradient cosine similarity, the symmetric
contrastive batch loss, the forecasting error, and their combination."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
from torch import Tensor

from .exceptions import ContractError, NumericalError

logger = logging.getLogger(__name__)


@dataclass
class ViewPairEmbeddings:
    """Projected (p) and raw (z) encoder vectors for two augmented views.

    All tensors are (S, D). The z tensors are treated as constants wherever
    they appear as similarity targets (stop-gradient).
    """

    p1: Tensor
    z1: Tensor
    p2: Tensor
    z2: Tensor

    def __post_init__(self):
        shapes = {t.shape for t in (self.p1, self.z1, self.p2, self.z2)}
        if len(shapes) != 1:
            raise ContractError(f"view embeddings must share one shape, got {shapes}")


@dataclass
class LossBreakdown:
    """Task and self-supervised components plus their 1:1 combination."""

    task: Tensor
    ssl: Tensor
    total: Tensor


def _safe_unit(x: Tensor) -> Tensor:
    """L2-normalize rows; zero-norm rows stay zero (similarity contributes 0)."""
    norm = x.norm(dim=-1, keepdim=True)
    if (norm == 0).any():
        logger.warning("zero-norm embedding encountered; similarity treated as 0")
    return torch.where(norm > 0, x / torch.where(norm > 0, norm, torch.ones_like(norm)), 0.0)


def cosine_similarity_stopgrad(p: Tensor, z: Tensor) -> Tensor:
    """Cosine similarity of p against a detached z; zero-norm inputs give 0."""
    if p.shape != z.shape:
        raise ContractError(f"shape mismatch {p.shape} vs {z.shape}")
    return (_safe_unit(p) * _safe_unit(z.detach())).sum(dim=-1)


def _symmetric_similarity_matrix(pairs: ViewPairEmbeddings) -> Tensor:
    """Matrix S where S[s, s'] = 1/2 C(p1[s], z2[s']) + 1/2 C(p2[s], z1[s'])."""
    p1 = _safe_unit(pairs.p1)
    p2 = _safe_unit(pairs.p2)
    z1 = _safe_unit(pairs.z1.detach())
    z2 = _safe_unit(pairs.z2.detach())
    return 0.5 * (p1 @ z2.T) + 0.5 * (p2 @ z1.T)


def graphcl_batch_loss(pairs: ViewPairEmbeddings, tau: float) -> Tensor:
    """Symmetric contrastive loss averaged over the batch.

    Per sample: -log( exp(sym(s, s)/tau) / sum_{s' != s} exp(sym(s, s')/tau) ),
    with the positive pair excluded from the denominator.
    """
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    batch = pairs.p1.shape[0]
    if batch < 2:
        raise ContractError("contrastive batch loss needs at least 2 samples")
    logits = _symmetric_similarity_matrix(pairs) / tau
    positive = torch.diagonal(logits)
    off_diag = logits.masked_fill(
        torch.eye(batch, dtype=torch.bool, device=logits.device), float("-inf")
    )
    return (-positive + torch.logsumexp(off_diag, dim=1)).mean()


def task_loss_mae(prediction: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over all elements."""
    if prediction.shape != target.shape:
        raise ContractError(f"shape mismatch {prediction.shape} vs {target.shape}")
    return (prediction - target).abs().mean()


def total_loss(task: Tensor, ssl: Tensor) -> LossBreakdown:
    """Combine the components 1:1, keeping both for logging."""
    task = torch.as_tensor(task)
    ssl = torch.as_tensor(ssl)
    if not (torch.isfinite(task) and torch.isfinite(ssl)):
        raise NumericalError(f"non-finite loss component (task={task}, ssl={ssl})")
    return LossBreakdown(task=task, ssl=ssl, total=task + ssl)
