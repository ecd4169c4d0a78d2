"""Conditional affinities with per-point bandwidths solving the perplexity equation.

Each row i carries a Gaussian kernel over the other points with its own
bandwidth sigma_i, chosen so the row entropy hits log(rho*n). Row entropy is
nondecreasing in sigma, so a bracket-and-bisect solve is exact and robust.
All kernel evaluations go through a max-log shift so no sigma underflows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_types import Dataset
from .errors import BracketFailure, DegenerateRow, PerplexityInfeasible, ValidationError

MAX_DOUBLINGS = 200
MAX_BISECTIONS = 80
DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class CalibratedAffinities:
    """Bandwidths, conditional rows p_{j|i}, and symmetrized matrix p_{ij}."""

    sigma: np.ndarray          # (n,) bandwidths
    conditional: np.ndarray    # (n, n), row i sums to 1, zero diagonal
    symmetric: np.ndarray      # (n, n), sums to 1, zero diagonal
    target_log_perp: float

    @property
    def n(self) -> int:
        return self.symmetric.shape[0]


def squared_distances(points: np.ndarray) -> np.ndarray:
    """Full n x n matrix of squared Euclidean distances, exact zero diagonal."""
    sq = np.sum(points * points, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _conditional_from_logits(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with -inf masking already applied; stable shift."""
    m = np.max(logits, axis=-1, keepdims=True)
    z = np.exp(logits - m)
    return z / np.sum(z, axis=-1, keepdims=True)


def _row_logits(d2_row: np.ndarray, i: int, sigma: float) -> np.ndarray:
    logits = -d2_row / (2.0 * sigma * sigma)
    logits[i] = -np.inf
    return logits


def row_conditionals(ds: Dataset, i: int, sigma: float) -> np.ndarray:
    """Conditional probabilities p_{j|i} for one row at a given bandwidth."""
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    if not 0 <= i < ds.n:
        raise ValidationError(f"row index {i} out of range")
    d2_row = np.sum((ds.points - ds.points[i]) ** 2, axis=1)
    d2_row[i] = 0.0
    others = np.delete(d2_row, i)
    if np.all(others == 0.0):
        raise DegenerateRow(i)
    return _conditional_from_logits(_row_logits(d2_row, i, sigma))


def row_entropy(p_row: np.ndarray) -> float:
    """Shannon entropy in nats with the 0*log0 = 0 convention."""
    p = np.asarray(p_row, dtype=np.float64)
    nz = p > 0.0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def _entropies_at(d2: np.ndarray, rows: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Entropy of each selected row at its own bandwidth. Vectorized over rows."""
    logits = -d2[rows] / (2.0 * sigma[:, None] ** 2)
    logits[np.arange(len(rows)), rows] = -np.inf
    m = np.max(logits, axis=1, keepdims=True)
    shifted = np.where(np.isfinite(logits), logits - m, 0.0)
    z = np.where(np.isfinite(logits), np.exp(shifted), 0.0)
    zs = np.sum(z, axis=1)
    # H = log Z_shift - sum z*(logits-m)/Z_shift
    num = np.sum(z * shifted, axis=1)
    return np.log(zs) - num / zs


def _calibrate_rows(d2: np.ndarray, target: float, tol: float):
    """Solve the entropy equation for every row of a squared-distance matrix.

    Returns (sigma, entropy) arrays. Raises per-row errors with row indices.
    """
    n = d2.shape[0]
    all_rows = np.arange(n)
    off = d2 + np.where(np.eye(n, dtype=bool), np.inf, 0.0)

    for i in range(n):
        finite = off[i][np.isfinite(off[i])]
        if np.all(finite == 0.0):
            raise DegenerateRow(i)

    # rows whose off-diagonal distances are all equal have constant entropy
    lo_d = np.min(off, axis=1)
    hi_d = np.max(np.where(np.isfinite(off), off, -np.inf), axis=1)
    constant = lo_d == hi_d
    const_h = np.log(n - 1)

    sigma = np.ones(n)
    for i in np.nonzero(constant)[0]:
        if abs(const_h - target) > tol:
            raise PerplexityInfeasible(int(i), target)
        # canonical representative: sigma = 1

    active = all_rows[~constant]
    if active.size:
        lo = np.ones(active.size)
        hi = np.ones(active.size)
        h_lo = _entropies_at(d2, active, lo)
        h_hi = h_lo.copy()
        for _ in range(MAX_DOUBLINGS):
            grow = h_hi < target
            if not np.any(grow):
                break
            hi[grow] *= 2.0
            h_hi[grow] = _entropies_at(d2, active[grow], hi[grow])
        for _ in range(MAX_DOUBLINGS):
            shrink = h_lo > target
            if not np.any(shrink):
                break
            lo[shrink] /= 2.0
            h_lo[shrink] = _entropies_at(d2, active[shrink], lo[shrink])

        bad_hi = h_hi < target - tol
        bad_lo = h_lo > target + tol
        if np.any(bad_hi) or np.any(bad_lo):
            i = int(active[np.argmax(bad_hi | bad_lo)])
            # entropy range is [log(min-distance multiplicity), log(n-1)];
            # an unreachable target is infeasible, not a bracketing bug
            h_inf = _entropies_at(d2, np.array([i]), np.array([2.0 ** -250]))[0]
            h_sup = const_h
            if target >= h_sup - tol or target <= h_inf + tol:
                raise PerplexityInfeasible(i, target)
            raise BracketFailure(f"row {i}: no sign change after {MAX_DOUBLINGS} doublings")

        log_lo, log_hi = np.log(lo), np.log(hi)
        h_mid = None
        for _ in range(MAX_BISECTIONS):
            mid = 0.5 * (log_lo + log_hi)
            h_mid = _entropies_at(d2, active, np.exp(mid))
            below = h_mid < target
            log_lo = np.where(below, mid, log_lo)
            log_hi = np.where(below, log_hi, mid)
            if np.all(np.abs(h_mid - target) <= tol):
                break
        sigma[active] = np.exp(0.5 * (log_lo + log_hi))

    entropy = _entropies_at(d2, all_rows, sigma)
    return sigma, entropy


def calibrate_sigma(ds: Dataset, i: int, target_log_perp: float,
                    tol: float = DEFAULT_TOL) -> float:
    """Bandwidth sigma_i whose row entropy matches target_log_perp within tol."""
    if not (0.0 < target_log_perp <= np.log(ds.n - 1)):
        raise ValidationError(
            f"entropy target must lie in (0, log(n-1)], got {target_log_perp}"
        )
    d2 = squared_distances(ds.points)
    sigma, entropy = _calibrate_single(d2, i, target_log_perp, tol)
    return sigma


def _calibrate_single(d2: np.ndarray, i: int, target: float, tol: float):
    n = d2.shape[0]
    row = d2[i].copy()
    others = np.delete(row, i)
    if np.all(others == 0.0):
        raise DegenerateRow(i)
    if np.min(others) == np.max(others):
        if abs(np.log(n - 1) - target) > tol:
            raise PerplexityInfeasible(i, target)
        return 1.0, np.log(n - 1)
    # non-constant rows approach log(n-1) only as sigma -> inf; the supremum
    # is never attained
    if target >= np.log(n - 1) - 1e-12:
        raise PerplexityInfeasible(i, target)

    def h(sig):
        return _entropies_at(d2, np.array([i]), np.array([sig]))[0]

    lo = hi = 1.0
    h_lo = h_hi = h(1.0)
    k = 0
    while h_hi < target and k < MAX_DOUBLINGS:
        hi *= 2.0
        h_hi = h(hi)
        k += 1
    k = 0
    while h_lo > target and k < MAX_DOUBLINGS:
        lo /= 2.0
        h_lo = h(lo)
        k += 1
    if h_hi < target - tol or h_lo > target + tol:
        h_inf = h(2.0 ** -250)
        if target >= np.log(n - 1) - tol or target <= h_inf + tol:
            raise PerplexityInfeasible(i, target)
        raise BracketFailure(f"row {i}: no sign change after {MAX_DOUBLINGS} doublings")

    log_lo, log_hi = np.log(lo), np.log(hi)
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (log_lo + log_hi)
        h_mid = h(np.exp(mid))
        if h_mid < target:
            log_lo = mid
        else:
            log_hi = mid
        if abs(h_mid - target) <= tol:
            break
    sig = float(np.exp(0.5 * (log_lo + log_hi)))
    return sig, h(sig)


def calibrate_all(ds: Dataset, rho: float, tol: float = DEFAULT_TOL) -> CalibratedAffinities:
    """Calibrate every row to perplexity rho*n and assemble the symmetric matrix."""
    n = ds.n
    perp = rho * n
    if not (1.0 < perp < n - 1):
        raise PerplexityInfeasible(
            -1, float(np.log(perp)) if perp > 0 else float("-inf"),
            msg=f"perplexity rho*n = {perp:g} must lie in (1, {n - 1})",
        )
    target = float(np.log(perp))
    d2 = squared_distances(ds.points)
    sigma, _ = _calibrate_rows(d2, target, tol)

    logits = -d2 / (2.0 * sigma[:, None] ** 2)
    np.fill_diagonal(logits, -np.inf)
    conditional = _conditional_from_logits(logits)
    np.fill_diagonal(conditional, 0.0)

    symmetric = (conditional + conditional.T) / (2.0 * n)
    np.fill_diagonal(symmetric, 0.0)
    return CalibratedAffinities(
        sigma=sigma, conditional=conditional, symmetric=symmetric,
        target_log_perp=target,
    )
