"""Population-level objects: the bandwidth criterion F, its unique root
sigma*(x), the symmetrized Gaussian kernel, the heavy-tailed output kernel,
and the limiting KL functional.

F(x, sigma) = -E_p[||x-x'||^2 / 2 sigma^2] - log(integral of the Gaussian
kernel against mu) + log rho, where the expectation is under the tilted
kernel weights. F is strictly decreasing in sigma, tends to +infinity as
sigma -> 0 (on the support) and to log rho < 0 as sigma -> infinity, so its
zero is found by bracketed bisection in log sigma.

Integrals against a measure are evaluated on a fixed node/weight plan:
exact sums for empirical measures, tensor Gauss-Legendre for analytic
densities up to dimension 3, importance-weighted Monte Carlo above that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core_types import MeasureSpec
from .errors import NoSignChange, ValidationError, VanishingNormalizer

BRACKET_LO = 2.0 ** -10
BRACKET_HI = 2.0 ** 10
BRACKET_FLOOR = 2.0 ** -60
BRACKET_CEIL = 2.0 ** 60
MAX_SOLVE_ITERS = 200
DENSITY_MASS_TOL = 1e-6


@dataclass(frozen=True)
class QuadraturePlan:
    """How to discretize an analytic density: Gauss-Legendre nodes per axis
    for d <= 3, Monte Carlo sample count and seed otherwise."""

    nodes_per_axis: int = 200
    mc_samples: int = 8192
    mc_seed: int = 0


@dataclass(frozen=True)
class PopulationContext:
    """A measure reduced to nodes and normalized weights, plus rho.

    nodes_x are the input-space coordinates; nodes_y is present when the
    context was built from a joint (input, output) measure.
    """

    rho: float
    nodes_x: np.ndarray               # (m, d)
    weights: np.ndarray               # (m,), positive, sums to 1
    nodes_y: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise ValidationError(f"rho must lie in (0, 1), got {self.rho}")
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w <= 0.0) or abs(np.sum(w) - 1.0) > 1e-12:
            raise ValidationError("weights must be positive and sum to 1")

    @property
    def m(self) -> int:
        return self.nodes_x.shape[0]


def _gauss_legendre_nodes(mu: MeasureSpec, per_axis: int):
    axes = []
    for k in range(mu.dimension):
        t, w = np.polynomial.legendre.leggauss(per_axis)
        lo, hi = mu.support_lo[k], mu.support_hi[k]
        axes.append(((hi - lo) / 2.0 * t + (hi + lo) / 2.0, (hi - lo) / 2.0 * w))
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    wts = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return nodes, wts


def context_from_measure(mu: MeasureSpec, rho: float,
                         plan: QuadraturePlan = QuadraturePlan()) -> PopulationContext:
    """Build the node/weight discretization of a measure on R^d."""
    if mu.is_empirical:
        return PopulationContext(
            rho=rho, nodes_x=mu.points, weights=mu.weights(),
            meta={"kind": "empirical", "n": mu.n},
        )
    if mu.dimension <= 3:
        nodes, box_w = _gauss_legendre_nodes(mu, plan.nodes_per_axis)
        dens = np.asarray(mu.density(nodes), dtype=np.float64)
        raw = box_w * dens
        mass = float(np.sum(raw))
        if abs(mass - 1.0) > DENSITY_MASS_TOL:
            raise ValidationError(
                f"density integrates to {mass:.8g} over its box, expected 1"
            )
        keep = raw > 0.0
        return PopulationContext(
            rho=rho, nodes_x=nodes[keep], weights=raw[keep] / mass,
            meta={"kind": "gauss-legendre", "nodes_per_axis": plan.nodes_per_axis,
                  "mass": mass},
        )
    # d > 3: importance-weighted uniform Monte Carlo over the support box
    rng = np.random.default_rng(plan.mc_seed)
    nodes = rng.uniform(mu.support_lo, mu.support_hi, size=(plan.mc_samples, mu.dimension))
    dens = np.asarray(mu.density(nodes), dtype=np.float64)
    vol = float(np.prod(mu.support_hi - mu.support_lo))
    raw = dens * vol / plan.mc_samples
    mass = float(np.sum(raw))
    se = float(np.std(dens * vol, ddof=1) / np.sqrt(plan.mc_samples))
    keep = raw > 0.0
    return PopulationContext(
        rho=rho, nodes_x=nodes[keep], weights=raw[keep] / mass,
        meta={"kind": "monte-carlo", "samples": plan.mc_samples,
              "seed": plan.mc_seed, "mass": mass, "mass_se": se},
    )


def context_from_joint_points(x: np.ndarray, y: np.ndarray, rho: float) -> PopulationContext:
    """Empirical joint measure (1/n on each (x_i, y_i) pair)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[0] != y.shape[0]:
        raise ValidationError("joint measure needs matching point counts")
    n = x.shape[0]
    return PopulationContext(
        rho=rho, nodes_x=x, weights=np.full(n, 1.0 / n), nodes_y=y,
        meta={"kind": "empirical-joint", "n": n},
    )


# ---------------------------------------------------------------------------
# F and its root


def _sq_dists_to_nodes(ctx: PopulationContext, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    diff = x[:, None, :] - ctx.nodes_x[None, :, :]
    return np.sum(diff * diff, axis=2)


def _F_from_r2(ctx: PopulationContext, r2: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """F at many (probe, sigma) pairs; r2 is (k, m), sigma is (k,)."""
    half = r2 / (2.0 * sigma[:, None] ** 2)
    a = -half
    shift = np.max(a, axis=1, keepdims=True)
    t = ctx.weights[None, :] * np.exp(a - shift)
    s = np.sum(t, axis=1)
    bad = ~np.isfinite(shift[:, 0]) | (s <= 0.0)
    if np.any(bad):
        raise VanishingNormalizer("Gaussian normalizer underflowed after log-shift")
    ratio = np.sum(t * half, axis=1) / s
    log_norm = shift[:, 0] + np.log(s)
    return -ratio - log_norm + np.log(ctx.rho)


def F_value(ctx: PopulationContext, x, sigma: float) -> float:
    """The bandwidth criterion at a single probe point and bandwidth."""
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    r2 = _sq_dists_to_nodes(ctx, x)
    return float(_F_from_r2(ctx, r2, np.array([sigma]))[0])


def F_eta_derivative_sign(ctx: PopulationContext, x, sigma: float) -> int:
    """Sign of the inverse-temperature derivative of the reparametrized F.

    Equals eta * Var_p(||x - x'||^2) under the tilted kernel weights, hence
    0 or +1 by Cauchy-Schwarz. Diagnostic only.
    """
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    r2 = _sq_dists_to_nodes(ctx, x)[0]
    a = -r2 / (2.0 * sigma * sigma)
    shift = np.max(a)
    t = ctx.weights * np.exp(a - shift)
    p = t / np.sum(t)
    m2 = float(np.sum(p * r2))
    m4 = float(np.sum(p * r2 * r2))
    var = m4 - m2 * m2
    return 0 if var <= 1e-14 * max(m4, 1.0) else 1


def _solve_many(ctx: PopulationContext, points: np.ndarray, tol: float):
    """Vectorized bracketed bisection for sigma* at several probe points."""
    r2 = _sq_dists_to_nodes(ctx, points)
    k = r2.shape[0]
    lo = np.full(k, BRACKET_LO)
    hi = np.full(k, BRACKET_HI)

    # F is decreasing in sigma: need F(lo) >= 0 >= F(hi)
    f_lo = _F_from_r2(ctx, r2, lo)
    f_hi = _F_from_r2(ctx, r2, hi)
    while np.any((f_lo < 0.0) & (lo > BRACKET_FLOOR)):
        grow = (f_lo < 0.0) & (lo > BRACKET_FLOOR)
        lo[grow] /= 2.0
        f_lo[grow] = _F_from_r2(ctx, r2[grow], lo[grow])
    while np.any((f_hi > 0.0) & (hi < BRACKET_CEIL)):
        grow = (f_hi > 0.0) & (hi < BRACKET_CEIL)
        hi[grow] *= 2.0
        f_hi[grow] = _F_from_r2(ctx, r2[grow], hi[grow])

    bad = (f_lo < 0.0) | (f_hi > 0.0)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NoSignChange(x=np.asarray(points)[i])

    log_lo, log_hi = np.log(lo), np.log(hi)
    sigma = np.exp(0.5 * (log_lo + log_hi))
    resid = _F_from_r2(ctx, r2, sigma)
    for _ in range(MAX_SOLVE_ITERS):
        done = (np.abs(resid) <= tol) & (log_hi - log_lo <= 1e-12)
        if np.all(done):
            break
        mid = 0.5 * (log_lo + log_hi)
        f_mid = _F_from_r2(ctx, r2, np.exp(mid))
        pos = f_mid > 0.0
        log_lo = np.where(pos, mid, log_lo)
        log_hi = np.where(pos, log_hi, mid)
        sigma = np.exp(0.5 * (log_lo + log_hi))
        resid = _F_from_r2(ctx, r2, sigma)
    return sigma, np.abs(resid)


def solve_sigma_star(ctx: PopulationContext, x, tol: float = 1e-10) -> float:
    """Unique root of F(x, .); bracketed bisection in log sigma."""
    sigma, resid = _solve_many(ctx, np.atleast_2d(np.asarray(x, dtype=np.float64)), tol)
    return float(sigma[0])


@dataclass(frozen=True)
class SigmaField:
    """sigma* evaluated at a list of probe points, with solver residuals."""

    points: np.ndarray
    values: np.ndarray
    residuals: np.ndarray
    tol: float

    def __call__(self, x) -> float:
        """Exact match lookup; the field is never interpolated."""
        x = np.asarray(x, dtype=np.float64)
        hit = np.nonzero(np.all(self.points == x, axis=1))[0]
        if hit.size == 0:
            raise ValidationError("point not among the field's evaluation points")
        return float(self.values[hit[0]])


def sigma_field(ctx: PopulationContext, points, tol: float = 1e-10) -> SigmaField:
    """Solve sigma* at every probe point."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    values, residuals = _solve_many(ctx, pts, tol)
    return SigmaField(points=pts, values=values, residuals=residuals, tol=tol)


# ---------------------------------------------------------------------------
# population kernels and the limiting functional


def _row_normalized_kernel(ctx: PopulationContext, x_rows: np.ndarray,
                           sigma_rows: np.ndarray, x_cols: np.ndarray,
                           discrete_correction: bool = False) -> np.ndarray:
    """Rows of f_sigma(x_k, .) / integral f_sigma(x_k, u) dmu(u) at x_cols.

    The normalizer integrates over the whole measure (diagonal included);
    with discrete_correction the empirical normalizer drops the 1/n
    self-term, mirroring the finite-n estimator convention.
    """
    diff = x_rows[:, None, :] - ctx.nodes_x[None, :, :]
    a_nodes = -np.sum(diff * diff, axis=2) / (2.0 * sigma_rows[:, None] ** 2)
    shift = np.max(a_nodes, axis=1, keepdims=True)
    z = np.sum(ctx.weights[None, :] * np.exp(a_nodes - shift), axis=1)
    if discrete_correction:
        n = ctx.m
        z = z - np.exp(-shift[:, 0]) / n
        if np.any(z <= 0.0):
            raise VanishingNormalizer("normalizer vanished after 1/n correction")
    diff_c = x_rows[:, None, :] - x_cols[None, :, :]
    a_cols = -np.sum(diff_c * diff_c, axis=2) / (2.0 * sigma_rows[:, None] ** 2)
    return np.exp(a_cols - shift) / z[:, None]


def p_psi_kernel(ctx: PopulationContext, psi: Callable, x, xp) -> float:
    """Symmetrized Gaussian kernel at a pair of input points.

    psi maps an input point to a positive bandwidth (typically a SigmaField
    or solve_sigma_star closure). The diagonal x = xp is a valid argument.
    """
    x = np.asarray(x, dtype=np.float64)
    xp = np.asarray(xp, dtype=np.float64)
    rows = np.stack([x, xp])
    sig = np.array([float(psi(x)), float(psi(xp))])
    k = _row_normalized_kernel(ctx, rows, sig, rows)
    # k[0,1] = f_{psi(x)}(x,xp)/Z(x), k[1,0] = f_{psi(xp)}(xp,x)/Z(xp)
    return float(0.5 * (k[0, 1] + k[1, 0]))


def q_population(ctx: PopulationContext, y, yp,
                 discrete_correction: bool = False) -> float:
    """Normalized heavy-tailed kernel under the joint measure's output marginal."""
    if ctx.nodes_y is None:
        raise ValidationError("context has no output-space nodes")
    g = 1.0 / (1.0 + float(np.sum((np.asarray(y) - np.asarray(yp)) ** 2)))
    return g / _q_normalizer(ctx, discrete_correction)


def _q_normalizer(ctx: PopulationContext, discrete_correction: bool) -> float:
    d2 = _pairwise_sq(ctx.nodes_y)
    g = 1.0 / (1.0 + d2)
    z = float(ctx.weights @ g @ ctx.weights)
    if discrete_correction:
        z -= float(np.sum(ctx.weights ** 2))
    if z <= 0.0:
        raise ValidationError("output kernel normalizer must be positive")
    return z


def _pairwise_sq(points: np.ndarray) -> np.ndarray:
    sq = np.sum(points * points, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


@dataclass(frozen=True)
class FunctionalReport:
    value: float
    sigma: SigmaField
    p_mass: float         # double integral of the input kernel (should be 1)
    q_mass: float         # double integral of the output kernel (should be 1)
    discrete_correction: bool
    meta: dict


def p_kernel_matrix(ctx: PopulationContext, sig: np.ndarray,
                    discrete_correction: bool = False) -> np.ndarray:
    """Symmetrized input kernel at all node pairs, given per-node bandwidths."""
    rows = _row_normalized_kernel(ctx, ctx.nodes_x, sig, ctx.nodes_x,
                                  discrete_correction=discrete_correction)
    return 0.5 * (rows + rows.T)


def functional_I(ctx: PopulationContext, tol: float = 1e-10,
                 discrete_correction: bool = False) -> FunctionalReport:
    """Plug-in value of the limiting KL functional on a joint measure.

    Solves sigma* at every node of the input marginal, assembles the
    symmetrized input kernel and the output kernel, and integrates
    p log(p/q) over node pairs.
    """
    if ctx.nodes_y is None:
        raise ValidationError("the functional needs a joint measure")
    marginal = PopulationContext(rho=ctx.rho, nodes_x=ctx.nodes_x,
                                 weights=ctx.weights, meta=ctx.meta)
    field_ = sigma_field(marginal, ctx.nodes_x, tol=tol)

    p_mat = p_kernel_matrix(marginal, field_.values,
                            discrete_correction=discrete_correction)
    g = 1.0 / (1.0 + _pairwise_sq(ctx.nodes_y))
    zq = float(ctx.weights @ g @ ctx.weights)
    if discrete_correction:
        zq -= float(np.sum(ctx.weights ** 2))
    q_mat = g / zq

    w2 = np.outer(ctx.weights, ctx.weights)
    value = float(np.sum(w2 * p_mat * (np.log(p_mat) - np.log(q_mat))))
    return FunctionalReport(
        value=value,
        sigma=field_,
        p_mass=float(np.sum(w2 * p_mat)),
        q_mass=float(np.sum(w2 * q_mat)),
        discrete_correction=discrete_correction,
        meta=dict(ctx.meta),
    )
