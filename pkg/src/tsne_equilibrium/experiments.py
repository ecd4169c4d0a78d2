"""Desk-scale convergence experiments.

Samples i.i.d. inputs, runs calibration + optimization, evaluates the
population-level estimators on the resulting empirical joint measure, and
collects everything into self-describing records. A record carries the full
resolved configuration, so any cell can be re-run bit-for-bit from its echo.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .affinities import calibrate_all
from .core_types import Dataset, MeasureSpec, RunConfig
from .errors import GridTooShort, TsneEqError, ValidationError
from .optimizer import OptimizerConfig, multistart_minimize
from .population import (
    PopulationContext,
    QuadraturePlan,
    _F_from_r2,
    _sq_dists_to_nodes,
    context_from_joint_points,
    context_from_measure,
    functional_I,
    sigma_field,
)
from .stationarity import residual_discrete, residual_plugin


@dataclass(frozen=True)
class DistributionSpec:
    """An input distribution family: axis-aligned uniform box or isotropic
    Gaussian. Only compact-support families feed population comparisons."""

    family: str                      # "uniform_box" | "gaussian_iso"
    d: int
    lo: float = -1.0
    hi: float = 1.0
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if self.family not in ("uniform_box", "gaussian_iso"):
            raise ValidationError(f"unknown family {self.family!r}")
        if self.family == "uniform_box" and not self.lo < self.hi:
            raise ValidationError("uniform box needs lo < hi")
        if self.family == "gaussian_iso" and not self.sd > 0:
            raise ValidationError("gaussian sd must be positive")

    @property
    def compact_support(self) -> bool:
        return self.family == "uniform_box"

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.family == "uniform_box":
            return rng.uniform(self.lo, self.hi, size=(n, self.d))
        return rng.normal(self.mean, self.sd, size=(n, self.d))

    def to_measure(self) -> Optional[MeasureSpec]:
        """Analytic measure for population comparisons; None when gated off."""
        if not self.compact_support:
            return None
        vol = (self.hi - self.lo) ** self.d
        dens = 1.0 / vol

        def density(x):
            x = np.atleast_2d(x)
            return np.full(x.shape[0], dens)

        def density_grad(x):
            x = np.atleast_2d(x)
            return np.zeros_like(x)

        return MeasureSpec(
            dimension=self.d, density=density, density_grad=density_grad,
            support_lo=np.full(self.d, float(self.lo)),
            support_hi=np.full(self.d, float(self.hi)),
        )


def derive_seed(base_seed: int, cell: int, replica: int) -> int:
    """Stable per-(cell, replica) stream seed from the base seed."""
    ss = np.random.SeedSequence(base_seed, spawn_key=(cell, replica))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def sample_dataset(spec: DistributionSpec, n: int, seed: int) -> Dataset:
    """n i.i.d. draws; deterministic per seed.

    Built directly (not via validate_dataset) so 1-d population fixtures
    are allowed; structural finiteness still holds by construction.
    """
    if n < 3:
        raise ValidationError(f"need n >= 3, got {n}")
    rng = np.random.default_rng(seed)
    return Dataset(points=spec.sample(n, rng))


@dataclass(frozen=True)
class ProbeGrid:
    """Where the empirical-vs-population F gap is measured."""

    n_probes: int = 20
    sigma_lo: float = 0.5
    sigma_hi: float = 5.0
    n_sigmas: int = 10

    def sigmas(self) -> np.ndarray:
        return np.geomspace(self.sigma_lo, self.sigma_hi, self.n_sigmas)


@dataclass
class ExperimentRecord:
    family: str
    d: int
    s: int
    rho: float
    n: int
    base_seed: int
    cell: int
    replica: int
    seed: int
    restarts: int
    optimizer: dict
    exaggeration_used: bool
    error: Optional[str] = None
    d_n: Optional[float] = None
    I_plugin: Optional[float] = None
    sup_sigma_gap: Optional[float] = None
    sup_F_gap: Optional[float] = None
    stationarity_discrete: Optional[float] = None
    stationarity_plugin: Optional[float] = None
    max_embed_norm: Optional[float] = None
    converged: Optional[bool] = None
    iters_run: Optional[int] = None
    runtime_seconds: Optional[float] = None
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _probe_points(spec: DistributionSpec, grid: ProbeGrid) -> np.ndarray:
    # deterministic probes: equally spaced along the box diagonal
    t = np.linspace(0.05, 0.95, grid.n_probes)
    lo, hi = spec.lo, spec.hi
    return lo + (hi - lo) * t[:, None] * np.ones((1, spec.d))


def _sup_F_gap(emp_ctx, pop_ctx, probes, sigmas) -> float:
    gap = 0.0
    r2_emp = _sq_dists_to_nodes(emp_ctx, probes)
    r2_pop = _sq_dists_to_nodes(pop_ctx, probes)
    for s in sigmas:
        sg = np.full(probes.shape[0], s)
        gap = max(gap, float(np.max(np.abs(
            _F_from_r2(emp_ctx, r2_emp, sg) - _F_from_r2(pop_ctx, r2_pop, sg)))))
    return gap


def run_replica(spec: DistributionSpec, n: int, run_cfg: RunConfig,
                opt_cfg: OptimizerConfig, restarts: int, cell: int,
                replica: int, base_seed: int,
                probe_grid: ProbeGrid = ProbeGrid(),
                quad_plan: QuadraturePlan = QuadraturePlan(),
                sigma_tol: float = 1e-10) -> ExperimentRecord:
    """One (distribution, n, replica) cell: the full pipeline.

    The sample seed depends on the replica only, not the cell: cells of one
    replica draw nested prefixes of a single i.i.d. stream, so per-replica
    comparisons across the n grid are paired (common random numbers). The
    grid trends the sweep asserts are swamped by independent sampling noise
    otherwise.
    """
    seed = derive_seed(base_seed, 0, replica)
    rec = ExperimentRecord(
        family=spec.family, d=spec.d, s=run_cfg.s, rho=run_cfg.rho, n=n,
        base_seed=base_seed, cell=cell, replica=replica, seed=seed,
        restarts=restarts,
        optimizer={k: v for k, v in asdict(opt_cfg).items() if k != "seed"},
        exaggeration_used=opt_cfg.use_exaggeration,
    )
    t0 = time.perf_counter()
    try:
        ds = sample_dataset(spec, n, seed)
        p = calibrate_all(ds, run_cfg.rho, tol=run_cfg.sigma_tol)
        from dataclasses import replace
        res = multistart_minimize(p, replace(opt_cfg, seed=seed),
                                  restarts=restarts, s=run_cfg.s)
        rec.d_n = res.final_loss
        rec.converged = res.converged
        rec.iters_run = res.iters_run
        y = res.embedding.points
        rec.max_embed_norm = float(np.max(np.linalg.norm(y, axis=1)))
        rec.stationarity_discrete = residual_discrete(p, res.embedding).max_norm

        joint = context_from_joint_points(ds.points, y, run_cfg.rho)
        rep = functional_I(joint, tol=sigma_tol)
        rec.I_plugin = rep.value
        rec.stationarity_plugin = residual_plugin(
            joint, tol=sigma_tol, field=rep.sigma).max_norm

        mu = spec.to_measure()
        if mu is not None:
            pop_ctx = context_from_measure(mu, run_cfg.rho, plan=quad_plan)
            emp_ctx = PopulationContext(rho=run_cfg.rho, nodes_x=ds.points,
                                        weights=np.full(n, 1.0 / n))
            pop_field = sigma_field(pop_ctx, ds.points, tol=sigma_tol)
            rec.sup_sigma_gap = float(np.max(np.abs(
                rep.sigma.values - pop_field.values)))
            probes = _probe_points(spec, probe_grid)
            rec.sup_F_gap = _sup_F_gap(emp_ctx, pop_ctx, probes,
                                       probe_grid.sigmas())
    except TsneEqError as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.runtime_seconds = time.perf_counter() - t0
    return rec


def run_cell(spec: DistributionSpec, n: int, run_cfg: RunConfig,
             opt_cfg: OptimizerConfig, replicas: int, cell: int = 0,
             base_seed: int = 0, restarts: int = 1, **kwargs) -> list:
    """All replicas of one cell; per-replica failures are recorded, not raised."""
    return [
        run_replica(spec, n, run_cfg, opt_cfg, restarts, cell, r, base_seed, **kwargs)
        for r in range(replicas)
    ]


def _median(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else None


def _trend(medians) -> str:
    vals = [m for m in medians if m is not None]
    if len(vals) < 2:
        return "undetermined"
    return "decreasing" if all(b < a for a, b in zip(vals, vals[1:])) else "not-decreasing"


def _loglog_slope(ns, medians) -> Optional[float]:
    pairs = [(n, m) for n, m in zip(ns, medians) if m is not None and m > 0]
    if len(pairs) < 2:
        return None
    ln = np.log([p[0] for p in pairs])
    lm = np.log([p[1] for p in pairs])
    return float(np.polyfit(ln, lm, 1)[0])


def validate_n_grid(n_grid) -> list:
    n_grid = list(n_grid)
    if len(n_grid) < 3:
        raise GridTooShort(f"n grid needs at least 3 sizes, got {len(n_grid)}")
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValidationError("n grid must be strictly increasing")
    return n_grid


def summarize_records(records, n_grid) -> dict:
    """Per-n medians, trend verdicts, and log-log slopes from raw records."""
    metrics = {
        "sigma_gap": lambda r: r.sup_sigma_gap,
        "F_gap": lambda r: r.sup_F_gap,
        "loss_vs_functional": lambda r: (
            abs(r.d_n - r.I_plugin)
            if r.d_n is not None and r.I_plugin is not None else None),
        "stationarity_plugin": lambda r: r.stationarity_plugin,
        "d_n": lambda r: r.d_n,
        "max_embed_norm": lambda r: r.max_embed_norm,
    }
    per_n = {}
    for cell, n in enumerate(n_grid):
        cell_recs = [r for r in records if r.cell == cell and r.error is None]
        per_n[n] = {name: _median(f(r) for r in cell_recs)
                    for name, f in metrics.items()}
        per_n[n]["failures"] = sum(1 for r in records
                                   if r.cell == cell and r.error is not None)

    summary = {"n_grid": n_grid, "per_n": per_n, "trend": {}, "slope": {}}
    for name in ("sigma_gap", "F_gap", "loss_vs_functional", "stationarity_plugin"):
        meds = [per_n[n][name] for n in n_grid]
        summary["trend"][name] = _trend(meds)
        summary["slope"][name] = _loglog_slope(n_grid, meds)
    # Successive |d_{2n} - d_n| differences, paired per replica (replicas use
    # common random numbers across cells, so the paired differences isolate
    # the n-trend from between-replica sampling noise), then median over
    # replicas -- the same summary convention as the other sweep statistics.
    diffs = []
    for cell_a, cell_b in zip(range(len(n_grid)), range(1, len(n_grid))):
        by_rep_a = {r.replica: r.d_n for r in records
                    if r.cell == cell_a and r.error is None}
        by_rep_b = {r.replica: r.d_n for r in records
                    if r.cell == cell_b and r.error is None}
        paired = [abs(by_rep_b[k] - by_rep_a[k])
                  for k in sorted(by_rep_a.keys() & by_rep_b.keys())
                  if by_rep_a[k] is not None and by_rep_b[k] is not None]
        diffs.append(_median(paired))
    summary["d_n_successive_diffs"] = diffs
    return summary


def convergence_sweep(spec: DistributionSpec, n_grid, run_cfg: RunConfig,
                      opt_cfg: OptimizerConfig, replicas: int,
                      base_seed: int = 0, restarts: int = 1, **kwargs) -> dict:
    """Run every (n, replica) cell and summarize per-n medians and trends."""
    n_grid = validate_n_grid(n_grid)
    records = []
    for cell, n in enumerate(n_grid):
        records.extend(run_cell(spec, n, run_cfg, opt_cfg, replicas,
                                cell=cell, base_seed=base_seed,
                                restarts=restarts, **kwargs))
    return {"records": records, "summary": summarize_records(records, n_grid)}


def tail_bound_check(d: int, n: int, t_grid, replicas: int,
                     C: float = 2.0, c1: float = 0.25,
                     delta: Optional[float] = None, seed: int = 0) -> dict:
    """Monte Carlo check of the max-norm tail bound for standard Gaussians.

    Counts how often max_i ||X_i|| exceeds sqrt(log n / c1) + sqrt(d) + t and
    compares with C exp(-c1 t^2) plus 3 binomial standard errors.
    """
    if C <= 0 or c1 <= 0:
        raise ValidationError("tail bound constants must be positive")
    warnings = []
    if delta is not None and c1 * delta ** 2 <= 16:
        warnings.append(
            f"c1*delta^2 = {c1 * delta ** 2:g} <= 16: outside the regime the "
            "uniform-convergence statement assumes")

    rng = np.random.default_rng(seed)
    max_norms = np.empty(replicas)
    for r in range(replicas):
        x = rng.normal(size=(n, d))
        max_norms[r] = np.max(np.linalg.norm(x, axis=1))

    offset = np.sqrt(np.log(n) / c1) + np.sqrt(d)
    rows = []
    for t in t_grid:
        freq = float(np.mean(max_norms >= offset + t))
        bound = float(C * np.exp(-c1 * t * t))
        se = float(np.sqrt(max(freq * (1.0 - freq), 1.0 / replicas) / replicas))
        rows.append({
            "t": float(t), "frequency": freq, "bound": bound,
            "std_err": se, "flagged": bool(freq > bound + 3.0 * se),
        })
    return {"d": d, "n": n, "replicas": replicas, "C": C, "c1": c1,
            "seed": seed, "warnings": warnings, "rows": rows}
