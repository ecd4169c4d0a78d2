"""Student-t low-dimensional kernel, the KL objective, and its exact gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import fused_loss_grad
from .affinities import CalibratedAffinities, squared_distances
from .core_types import Embedding
from .errors import ValidationError


@dataclass(frozen=True)
class LossReport:
    loss: float
    grad: np.ndarray          # (n, s)
    q_normalizer: float       # sum over ordered pairs k != l of (1+||Yk-Yl||^2)^-1


def q_matrix(emb: Embedding) -> np.ndarray:
    """Normalized heavy-tailed affinities q_{ij}; entries sum to 1, zero diagonal."""
    if emb.n < 2:
        raise ValidationError("need at least 2 embedded points")
    w = 1.0 / (1.0 + squared_distances(emb.points))
    np.fill_diagonal(w, 0.0)
    return w / np.sum(w)


def sum_p_log_p(p: CalibratedAffinities) -> float:
    """Entropy term of the KL loss; constant in Y, cached on the instance."""
    cached = getattr(p, "_sum_p_log_p", None)
    if cached is None:
        pm = p.symmetric
        nz = pm > 0.0
        cached = float(np.sum(pm[nz] * np.log(pm[nz])))
        object.__setattr__(p, "_sum_p_log_p", cached)
    return cached


def loss(p: CalibratedAffinities, emb: Embedding) -> float:
    """KL divergence sum p_{ij} log(p_{ij}/q_{ij}); zero-p terms contribute 0."""
    return loss_report(p, emb).loss


def loss_gradient(p: CalibratedAffinities, emb: Embedding) -> np.ndarray:
    """Exact gradient in Y: 4 * sum_j (p_ij - q_ij)(Y_i - Y_j)/(1+||Y_i-Y_j||^2)."""
    return loss_report(p, emb).grad


def loss_report(p: CalibratedAffinities, emb: Embedding) -> LossReport:
    """Loss, gradient, and normalizer in one fused pass over the pairs."""
    if p.n != emb.n:
        raise ValidationError(f"p has n={p.n}, embedding has n={emb.n}")
    value, grad, z = fused_loss_grad(emb.points, p.symmetric, sum_p_log_p(p))
    return LossReport(loss=value, grad=grad, q_normalizer=z)
