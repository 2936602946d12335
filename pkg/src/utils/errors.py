"""
errors.py
---------
Exception family shared by every layer of the package.

Every class inherits from ``VLocError`` so callers (the CLI in particular)
can catch the whole family, and from the closest builtin so generic
``except ValueError`` handlers keep working.

``exit_code`` is what ``src.cli.main`` returns when the error escapes a
subcommand:
    1  usage / configuration
    2  data error
    3  check failure
"""

from __future__ import annotations


class VLocError(Exception):
    exit_code: int = 2


class GeometryError(VLocError, ValueError):
    """Degenerate rotation, point behind the camera, invalid intrinsics."""


class ShapeError(VLocError, ValueError):
    """Shape mismatch between primitive inputs."""


class NonFiniteError(VLocError, ArithmeticError):
    exit_code = 3


class TapeError(VLocError, RuntimeError):
    """Backward called on something that cannot be differentiated."""

    exit_code = 3


class WarpError(VLocError, ValueError):
    pass


class DataFormatError(VLocError, ValueError):
    """Malformed file on disk. The message always names the path."""


class ConfigError(VLocError, ValueError):
    exit_code = 1

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key {key!r}: {message}")


class CheckpointError(VLocError, ValueError):
    pass


class TrainingHaltedError(VLocError, RuntimeError):
    exit_code = 3

    def __init__(self, parameter: str, message: str = "non-finite gradient"):
        self.parameter = parameter
        super().__init__(f"{message} for parameter {parameter!r}")


class TrajectoryError(VLocError, RuntimeError):
    pass


class LabelError(VLocError, ValueError):
    """Class id outside [0, C)."""


class MetricError(VLocError, ValueError):
    """Metric inputs of mismatched length or shape, or a degenerate path."""
