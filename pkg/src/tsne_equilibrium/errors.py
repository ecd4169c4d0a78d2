"""Exception hierarchy for the library.

Every error raised on purpose derives from TsneEqError so callers (and the
CLI exit-code mapping) can distinguish validation problems, infeasible
calibration targets, and numerical failures.
"""


class TsneEqError(Exception):
    """Base class for all library errors."""


class ValidationError(TsneEqError):
    """Input failed a structural validation rule."""


class NonFiniteInput(ValidationError):
    """NaN or Inf found in input coordinates."""


class TooFewPoints(ValidationError):
    """Fewer than 3 points; pairwise structure is undefined."""


class DimensionTooSmall(ValidationError):
    """Input dimension below 2."""


class InvalidScale(ValidationError):
    """Non-positive initialization scale."""


class GridTooShort(ValidationError):
    """Sweep grid needs at least 3 sizes to assert a trend."""


class DegenerateRow(TsneEqError):
    """All other points coincide with point i; conditional row undefined."""

    def __init__(self, row, msg=None):
        self.row = row
        super().__init__(msg or f"row {row}: all other points coincide with point {row}")


class PerplexityInfeasible(TsneEqError):
    """Entropy target outside the attainable band for a row."""

    def __init__(self, row, target, msg=None):
        self.row = row
        self.target = target
        super().__init__(
            msg or f"row {row}: entropy target {target!r} not attainable"
        )


class BracketFailure(TsneEqError):
    """Bandwidth bracket expansion found no sign change."""


class NonFiniteLoss(TsneEqError):
    """Loss or gradient became non-finite during optimization."""


class VanishingNormalizer(TsneEqError):
    """Gaussian normalizer underflowed even after log-shift."""


class NoSignChange(TsneEqError):
    """Population bandwidth equation has no root inside the bracket limits."""

    def __init__(self, x=None, msg=None):
        self.x = x
        super().__init__(msg or f"no sign change bracketing sigma* at x={x!r}")
