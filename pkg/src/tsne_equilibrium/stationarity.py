"""Zero-force stationarity residuals for embedding diagnostics.

Two conventions are reported separately and never merged:
  * discrete: the finite-n first-order condition, sums over j != i of
    (p_ij - q_ij)(Y_i - Y_j)/(1 + ||Y_i - Y_j||^2) -- exactly the loss
    gradient divided by 4.
  * plugin: the same force field with the population kernels evaluated on
    the empirical joint measure; its decay with n is what the membership
    condition of the limit class predicts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .affinities import CalibratedAffinities, squared_distances
from .core_types import Embedding
from .errors import ValidationError
from .lowdim_kernel import loss_report
from .population import PopulationContext, p_kernel_matrix, sigma_field


@dataclass(frozen=True)
class StationarityReport:
    per_point_residual: np.ndarray   # (n, s)
    max_norm: float
    mean_norm: float
    convention: str                  # "discrete" or "plugin"


def _report(res: np.ndarray, convention: str) -> StationarityReport:
    norms = np.linalg.norm(res, axis=1)
    return StationarityReport(
        per_point_residual=res,
        max_norm=float(np.max(norms)),
        mean_norm=float(np.mean(norms)),
        convention=convention,
    )


def residual_discrete(p: CalibratedAffinities, emb: Embedding) -> StationarityReport:
    """Unit-factor first-order residual; vanishes at any minimizer."""
    if p.n != emb.n:
        raise ValidationError(f"p has n={p.n}, embedding has n={emb.n}")
    return _report(loss_report(p, emb).grad / 4.0, "discrete")


def residual_plugin(ctx: PopulationContext, tol: float = 1e-10,
                    discrete_correction: bool = False,
                    field=None) -> StationarityReport:
    """Force residual with population kernels on an empirical joint measure.

    Residual at (x_i, y_i) is the weighted sum over j of
    (p(x_i, x_j) - q(y_i, y_j)) (y_i - y_j)/(1 + ||y_i - y_j||^2).
    A sigma* field already solved on the same marginal (e.g. by the
    functional) can be passed in to avoid re-solving it.
    """
    if ctx.nodes_y is None:
        raise ValidationError("plugin residual needs a joint measure")
    y = ctx.nodes_y
    marginal = PopulationContext(rho=ctx.rho, nodes_x=ctx.nodes_x,
                                 weights=ctx.weights, meta=ctx.meta)
    field_ = field if field is not None else sigma_field(marginal, ctx.nodes_x, tol=tol)
    p_mat = p_kernel_matrix(marginal, field_.values,
                            discrete_correction=discrete_correction)

    d2 = squared_distances(y)
    g = 1.0 / (1.0 + d2)
    zq = float(ctx.weights @ g @ ctx.weights)
    if discrete_correction:
        zq -= float(np.sum(ctx.weights ** 2))
    q_mat = g / zq

    # force_i = sum_j w_j (p_ij - q_ij) g'_ij (y_i - y_j), g' = 1/(1+||.||^2)
    coeff = (p_mat - q_mat) / (1.0 + d2) * ctx.weights[None, :]
    res = coeff.sum(axis=1)[:, None] * y - coeff @ y
    return _report(res, "plugin")
