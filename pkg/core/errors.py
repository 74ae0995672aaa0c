"""
Exception hierarchy shared by every core module.
The CLI maps each family to a process exit code (see EXIT_CODES).
"""

from __future__ import annotations


class BelleError(Exception):
    """Base class for all errors raised by this project."""

    exit_code = 1


class ShapeError(BelleError, ValueError):
    """An operation received operands whose shapes do not conform."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        shape_txt = ", ".join(str(tuple(s)) for s in shapes)
        msg = f"{op}: incompatible shapes {shape_txt}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ConfigError(BelleError, ValueError):
    """Unknown config key or invalid value."""

    exit_code = 1


class DataError(BelleError, ValueError):
    """Bad input data: ids out of range, infeasible plans, corrupt files."""

    exit_code = 2


class FormatError(DataError):
    """A binary container failed validation at a known byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class CorpusFormatError(FormatError):
    pass


class CheckpointFormatError(FormatError):
    pass


class StreamError(DataError):
    """The text stream ended before the final chunk was signalled."""


class NumericalFailure(BelleError, ArithmeticError):
    """A loss or gradient became non-finite."""

    exit_code = 3

    def __init__(self, message: str, step: int | None = None, component: str | None = None):
        self.step = step
        self.component = component
        parts = [message]
        if step is not None:
            parts.append(f"step={step}")
        if component is not None:
            parts.append(f"component={component}")
        super().__init__(" ".join(parts))


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, BelleError):
        return exc.exit_code
    return EXIT_USAGE
