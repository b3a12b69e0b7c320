"""Exception types shared across the package."""


class SingularSpectrumError(ValueError):
    """A negative power or singular function hit an eigenvalue at (or near) zero."""

    def __init__(self, eigenvalue: float, zero_tol: float, what: str = "operation"):
        self.eigenvalue = float(eigenvalue)
        self.zero_tol = float(zero_tol)
        super().__init__(
            f"{what} is singular at eigenvalue {self.eigenvalue:.6e} "
            f"(|lambda| <= zero_tol={self.zero_tol:g})"
        )


class OracleCapError(ValueError):
    """Dense 2^n oracle requested beyond the configured site cap."""


class InvalidSampleError(RuntimeError):
    """A disorder sample cannot be evaluated; counted, never silently dropped."""


class ConfigError(ValueError):
    """Experiment configuration failed validation."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
