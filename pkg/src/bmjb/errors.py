"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Rejected at construction time: malformed interval, measure, or config."""


class DomainError(ValueError):
    """Evaluation argument outside the mathematical domain (t <= 0, x on the boundary, ...)."""


class PairError(ValueError):
    """Coupled-pair precondition violated (gap >= support distance, midpoint rules)."""


class SearchError(RuntimeError):
    """Root search could not certify its result (contour instability, expansion cap)."""


class WindowError(ValueError):
    """Requested statistical window is outside the estimable range (noise floor, tail samples)."""


class ToleranceError(RuntimeError):
    """A declared numerical tolerance could not be met."""
