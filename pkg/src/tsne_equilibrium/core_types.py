"""Shared data model: datasets, embeddings, measures, run configuration.

All coordinates are stored as float64 and containers are frozen after
construction, so instances can be shared freely across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionTooSmall, NonFiniteInput, TooFewPoints, ValidationError

SCHEMA_VERSION = 1


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """n input vectors in R^d, n >= 3, d >= 2, all finite."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(np.atleast_2d(self.points)))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class Embedding:
    """n output vectors in R^s."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(np.atleast_2d(self.points)))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def s(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class MeasureSpec:
    """A probability measure on R^dim.

    Two variants:
      * empirical: uniform weights 1/n on `points` (rows).
      * analytic density: callable `density` (and its gradient) supported on
        the compact box [lo, hi] per axis; integrates to 1 over the box.
    """

    dimension: int
    points: Optional[np.ndarray] = None
    density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    density_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    support_lo: Optional[np.ndarray] = None
    support_hi: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.points is not None:
            object.__setattr__(self, "points", _frozen(np.atleast_2d(self.points)))
            if self.points.shape[1] != self.dimension:
                raise ValidationError("point dimension does not match measure dimension")
        else:
            if self.density is None:
                raise ValidationError("measure needs either points or a density")
            lo = np.asarray(self.support_lo, dtype=np.float64)
            hi = np.asarray(self.support_hi, dtype=np.float64)
            if lo.shape != (self.dimension,) or hi.shape != (self.dimension,):
                raise ValidationError("support box must have one (lo, hi) per axis")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValidationError("support box must be bounded")
            if not np.all(lo < hi):
                raise ValidationError("support box needs lo < hi per axis")
            object.__setattr__(self, "support_lo", _frozen(lo))
            object.__setattr__(self, "support_hi", _frozen(hi))

    @property
    def is_empirical(self) -> bool:
        return self.points is not None

    @property
    def n(self) -> int:
        if self.points is None:
            raise ValidationError("analytic measure has no point count")
        return self.points.shape[0]

    def weights(self) -> np.ndarray:
        """Uniform weights 1/n for the empirical variant."""
        return np.full(self.n, 1.0 / self.n)

    def integrate(self, g: Callable[[np.ndarray], np.ndarray]) -> float:
        """Integrate g against an empirical measure: mean of g over the points."""
        if not self.is_empirical:
            raise ValidationError("use a quadrature plan to integrate analytic measures")
        return float(np.mean([g(p) for p in self.points]))


@dataclass(frozen=True)
class RunConfig:
    """Perplexity ratio, output dimension, solver tolerances, seed."""

    rho: float = 0.3
    s: int = 2
    sigma_tol: float = 1e-10
    seed: int = 0
    optimizer: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise ValidationError(f"rho must lie in (0, 1), got {self.rho}")
        if self.s < 2:
            raise DimensionTooSmall(f"output dimension must be >= 2, got {self.s}")

    def target_log_perp(self, n: int) -> float:
        """log(rho*n); raises if the target is outside (0, log(n-1))."""
        t = float(np.log(self.rho * n))
        if not (0.0 < t < np.log(n - 1)):
            raise ValidationError(
                f"perplexity rho*n = {self.rho * n:g} must lie in (1, {n - 1})"
            )
        return t


def validate_dataset(raw) -> Dataset:
    """Validate a raw matrix and wrap it as a Dataset. Rows kept in order."""
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-d matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("dataset contains NaN or Inf")
    if arr.shape[0] < 3:
        raise TooFewPoints(f"need at least 3 points, got {arr.shape[0]}")
    if arr.shape[1] < 2:
        raise DimensionTooSmall(f"need input dimension >= 2, got {arr.shape[1]}")
    return Dataset(points=arr)


def validate_embedding(raw, n: Optional[int] = None) -> Embedding:
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-d matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("embedding contains NaN or Inf")
    if n is not None and arr.shape[0] != n:
        raise ValidationError(f"embedding has {arr.shape[0]} rows, dataset has {n}")
    return Embedding(points=arr)


def empirical_measure(ds: Dataset) -> MeasureSpec:
    """Uniform measure (weight 1/n) on the dataset points."""
    return MeasureSpec(dimension=ds.d, points=ds.points)


# ---------------------------------------------------------------------------
# persistence: CSV for point sets, JSON for configs


def format_float(v: float) -> str:
    """17 significant digits: round-trips any float64 exactly."""
    return f"{v:.17g}"


def write_points_csv(path, points: np.ndarray, header: Optional[list] = None) -> None:
    points = np.atleast_2d(points)
    with open(path, "w") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in points:
            fh.write(",".join(format_float(v) for v in row) + "\n")


def read_points_csv(path, header: bool = False) -> np.ndarray:
    rows = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    if header and lines:
        lines = lines[1:]
    width = None
    for ln, line in enumerate(lines):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise ValidationError(f"ragged CSV at line {ln + 1}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ValidationError(f"bad number in CSV at line {ln + 1}: {exc}") from exc
    if not rows:
        raise ValidationError("empty CSV")
    return np.asarray(rows, dtype=np.float64)


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        doc = json.load(fh)
    doc.pop("schema_version", None)
    known = {k: doc[k] for k in ("rho", "s", "sigma_tol", "seed", "optimizer") if k in doc}
    return RunConfig(**known)
