"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input data violates a structural invariant (weights, finiteness, shapes)."""


class DimensionError(ValidationError):
    """Point sets are empty or dimensions do not line up."""


class DatasetFormatError(ValueError):
    """A dataset file could not be parsed; message carries line/offset context."""


class CapacityError(ValueError):
    """Problem size exceeds what the exact solver accepts."""


class SupportError(RuntimeError):
    """No training pairs survive the kernel truncation around a reference."""


class TrainingError(RuntimeError):
    """Optimization produced a non-finite loss; message names the epoch."""


class NumericError(RuntimeError):
    """A numerical guarantee failed (monotonicity, nonnegativity at convergence)."""


class DegenerateBaselineError(NumericError):
    """The evaluation denominator is (numerically) zero: target equals baseline."""
