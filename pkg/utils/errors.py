"""
Exception hierarchy shared by the library, the CLI and the HTTP layer.

These do not derive from ValueError so they pass through pydantic
validators untouched.
"""

from typing import Optional


class PosthocError(Exception):
    """Base class for domain errors"""

    exit_code = 1


class InputParseError(PosthocError):
    """A CSV or subset file could not be parsed"""

    exit_code = 2

    def __init__(
            self,
            message: str,
            file: Optional[str] = None,
            line: Optional[int] = None,
            column: Optional[int] = None
    ):
        self.file = file
        self.line = line
        self.column = column
        location = []
        if file:
            location.append(str(file))
        if line is not None:
            location.append(f"line {line}")
        if column is not None:
            location.append(f"column {column}")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


class DimensionMismatchError(PosthocError):
    """Design, response and contrast shapes disagree"""

    exit_code = 3

    def __init__(self, message: str, file: Optional[str] = None):
        self.file = file
        self.message = message
        super().__init__(f"{file}: {message}" if file else message)


class ScenarioError(PosthocError):
    """Simulation scenario cannot be built"""

    exit_code = 4


class CalibrationError(PosthocError):
    """Calibration inputs are inconsistent"""
