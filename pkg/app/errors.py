"""Exception hierarchy shared by every DeconfoundLab package.

Library code raises these; only ``app.main`` maps them to exit codes.
"""


class DeconfoundError(Exception):
    """Base class for all DeconfoundLab errors."""


class SpecValidationError(DeconfoundError, ValueError):
    """A family/expert spec, dataset or report file violates its schema."""

    def __init__(self, message: str, violations: list[str] | None = None) -> None:
        super().__init__(message)
        self.violations = list(violations or [])


class DimensionMismatchError(DeconfoundError, ValueError):
    """A table, policy output or index disagrees with the family dimensions."""


class ImpossibleEvidenceError(DeconfoundError, ValueError):
    """Every latent has zero likelihood under the observed evidence."""


class ConfigError(DeconfoundError, ValueError):
    """Unknown config key, uncoercible value or violated config invariant."""


class NumericalAbort(DeconfoundError, ArithmeticError):
    """A gradient or parameter became NaN/inf during training."""

    def __init__(self, step: int, block: str, message: str = "") -> None:
        detail = f"non-finite values in '{block}' at step {step}"
        if message:
            detail = f"{detail}: {message}"
        super().__init__(detail)
        self.step = step
        self.block = block
