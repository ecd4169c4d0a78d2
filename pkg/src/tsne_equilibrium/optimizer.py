"""Gradient descent with momentum for the pairwise KL objective.

Produces the low-dimensional output as the (approximate) minimizer of the
loss. Monotone descent after the optional early-exaggeration phase is
enforced by step halving; convergence is declared on the unit-factor
stationarity residual (gradient / 4), whose zero set matches the gradient's.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import grad_rows, loss_from_d2, pairwise_d2_wsum
from .affinities import CalibratedAffinities
from .core_types import Embedding
from .errors import InvalidScale, NonFiniteLoss, ValidationError
from .lowdim_kernel import sum_p_log_p

MAX_HALVINGS = 30


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 3000
    learning_rate: float | None = None   # None -> n / 12
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    momentum_switch_iter: int = 250
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    use_exaggeration: bool = False
    grad_tol: float = 1e-7
    init_scale: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        for m in (self.momentum_early, self.momentum_late):
            if not (0.0 <= m < 1.0):
                raise ValidationError("momentum must lie in [0, 1)")
        if self.early_exaggeration < 1.0:
            raise ValidationError("early_exaggeration must be >= 1")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")


@dataclass(frozen=True)
class OptimizeResult:
    embedding: Embedding
    final_loss: float
    iters_run: int
    final_grad_norm: float    # max row norm of the unit-factor residual
    converged: bool
    loss_trace: list = field(default_factory=list)   # [(iter, loss), ...]


def init_embedding(n: int, s: int, scale: float, seed: int) -> Embedding:
    """Small centered Gaussian start; deterministic for a fixed seed."""
    if scale <= 0:
        raise InvalidScale(f"init scale must be positive, got {scale}")
    if n < 3 or s < 2:
        raise ValidationError("need n >= 3 and s >= 2")
    rng = np.random.default_rng(seed)
    return Embedding(points=rng.normal(0.0, scale, size=(n, s)))


def _residual_max_norm(grad: np.ndarray) -> float:
    """Max row norm of grad/4, the unit-factor stationarity residual."""
    return float(np.max(np.linalg.norm(grad / 4.0, axis=1)))


def minimize(p: CalibratedAffinities, cfg: OptimizerConfig, s: int = 2) -> OptimizeResult:
    """Run momentum gradient descent from a fresh random initialization."""
    n = p.n
    lr = cfg.learning_rate if cfg.learning_rate is not None else n / 12.0
    y = init_embedding(n, s, cfg.init_scale, cfg.seed).points.copy()
    v = np.zeros_like(y)
    pm = p.symmetric
    plogp = sum_p_log_p(p)

    exag_until = cfg.exaggeration_iters if cfg.use_exaggeration else 0
    pm_exag = pm * cfg.early_exaggeration if exag_until > 0 else None

    d2 = np.empty((n, n))
    d2_try = np.empty((n, n))
    z = pairwise_d2_wsum(y, d2)
    cur_loss = loss_from_d2(pm, d2, z, plogp)
    true_grad = grad_rows(y, pm, d2, z)

    trace = []
    converged = False
    iters_run = 0
    final_norm = _residual_max_norm(true_grad)

    for t in range(cfg.max_iters):
        exaggerating = t < exag_until
        grad_step = grad_rows(y, pm_exag, d2, z) if exaggerating else true_grad
        if not (np.isfinite(cur_loss) and np.all(np.isfinite(grad_step))):
            raise NonFiniteLoss(f"non-finite loss/gradient at iteration {t}")

        m = cfg.momentum_early if t < cfg.momentum_switch_iter else cfg.momentum_late
        step = m * v - lr * grad_step
        y_try = y + step
        z_try = pairwise_d2_wsum(y_try, d2_try)
        loss_try = loss_from_d2(pm, d2_try, z_try, plogp)

        if not exaggerating:
            # enforce monotone descent on the true objective by step halving
            halvings = 0
            while (not np.isfinite(loss_try) or loss_try > cur_loss) \
                    and halvings < MAX_HALVINGS:
                step *= 0.5
                y_try = y + step
                z_try = pairwise_d2_wsum(y_try, d2_try)
                loss_try = loss_from_d2(pm, d2_try, z_try, plogp)
                halvings += 1
            if not np.isfinite(loss_try) or loss_try > cur_loss:
                step = np.zeros_like(step)
                y_try, z_try, loss_try = y, z, cur_loss
                d2_try[:] = d2

        y, v, cur_loss, z = y_try, step, loss_try, z_try
        d2, d2_try = d2_try, d2
        true_grad = grad_rows(y, pm, d2, z)
        iters_run = t + 1
        trace.append((iters_run, cur_loss))
        prev_norm = final_norm
        final_norm = _residual_max_norm(true_grad)
        # a shrinking residual distinguishes a minimum from the unstable
        # stationary point at the near-zero initialization, where the
        # residual is tiny but grows geometrically
        if not exaggerating and final_norm <= cfg.grad_tol and final_norm <= prev_norm:
            converged = True
            break

    if not np.isfinite(cur_loss):
        raise NonFiniteLoss("non-finite final loss")
    return OptimizeResult(
        embedding=Embedding(points=y),
        final_loss=cur_loss,
        iters_run=iters_run,
        final_grad_norm=final_norm,
        converged=converged,
        loss_trace=trace,
    )


def multistart_minimize(p: CalibratedAffinities, cfg: OptimizerConfig,
                        restarts: int = 1, s: int = 2) -> OptimizeResult:
    """Best of `restarts` runs with seeds cfg.seed + 0 .. restarts-1."""
    if restarts < 1:
        raise ValidationError("restarts must be >= 1")
    best = None
    last_err = None
    for k in range(restarts):
        try:
            res = minimize(p, replace(cfg, seed=cfg.seed + k), s=s)
        except NonFiniteLoss as exc:
            last_err = exc
            continue
        if best is None or res.final_loss < best.final_loss:
            best = res
    if best is None:
        raise last_err if last_err is not None else NonFiniteLoss("all restarts failed")
    return best
