"""Exception hierarchy shared by every setml module.

Each module raises its own subclass so callers can catch a single stage
(``except DatasetError``) or everything at once (``except SetMlError``).
Errors that describe bad input also derive from ``ValueError``.
"""

from __future__ import annotations


class SetMlError(Exception):
    """Root of all errors raised by setml."""


class ConfigError(SetMlError, ValueError):
    """Raised for unusable paths or inconsistent run configuration."""


class DatasetError(SetMlError, ValueError):
    """Raised for malformed waveform files or invalid dataset operations."""


class OracleError(SetMlError, ValueError):
    """Raised when the surrogate waveform generator is asked for bad inputs."""


class ModelError(SetMlError, ValueError):
    """Raised for inconsistent network shapes or unknown transfer tags."""


class ModelFormatError(ModelError):
    """Raised when a model file is truncated, inconsistent or of another version."""


class TrainingError(SetMlError):
    """Raised when the Levenberg-Marquardt update breaks down numerically."""


class CodegenError(SetMlError, ValueError):
    """Raised when a model cannot be emitted as Verilog-A."""


class VaParseError(SetMlError, ValueError):
    """Raised when the Verilog-A expression evaluator meets text it cannot read."""


class CircuitError(SetMlError, ValueError):
    """Raised for netlists that reference unknown nodes or devices."""


class ConvergenceError(SetMlError):
    """Raised when Newton iteration fails even at the smallest allowed step."""

    def __init__(self, message: str, time: float) -> None:
        """Initialise with a message and the simulation time that failed."""
        self.time = time
        super().__init__(f"{message} (t = {time:.6e} s)")
