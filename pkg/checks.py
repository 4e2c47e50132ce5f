# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Assertions for preconditions of the toolkit's operations.

- :func:`imperative()` raises :class:`errors.RejectedInput` when its condition
  fails. The reason tells the caller what kind of input was wrong.
- :func:`expect()` logs a warning for conditions that degrade a result without
  invalidating it, and raises only if configured with the `expect_raises`
  setting.
- :func:`precondition()` marks a section where input is validated. Exceptions
  raised by numpy inside it (bad shapes, bad indices) are converted to
  :class:`errors.RejectedInput`.

Shortcuts for the checks that occur everywhere (finite arrays, matching shapes)
are defined on top of these.
"""

from collections.abc import Generator
from contextlib import contextmanager
import inspect
import logging
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import settings
from .errors import (
    DimensionMismatch,
    ExceptionParent,
    NonFinite,
    Reason,
    RejectedInput,
    ViolatedPrecondition,
)

_logger = logging.getLogger(__name__)


def get_function_info(depth: int = 1) -> tuple[str, str, int]:
    """
    Get the file name, function name and line number of a caller.

    :param depth: 1 for the caller of this function, 2 for its caller, ...
    :return: `(filename, function_name, line_number)`
    """
    frame = inspect.currentframe()
    for _ in range(depth):
        if frame is None or frame.f_back is None:
            break

        frame = frame.f_back
    # endfor

    if frame is None:
        return ('<unknown>', '<unknown>', 0)

    return (frame.f_code.co_filename, frame.f_code.co_name, frame.f_lineno)


def imperative(
    condition: bool,  # noqa: FBT001
    message: str | None = None,
    *,
    reason: Reason | None = None,
    level: int = logging.ERROR,
    logger: logging.Logger = _logger,
) -> None:
    """
    Raise exception, if condition is not met.

    :param condition: Needs to be `True` not to raise an exception.
    :param message: Message to be logged if `condition` is `False`.
    :param reason: Reason attached to the raised exception.
    :param level: Level for logging.
    :param logger: Logger to use for logging.

    :raise RejectedInput: `condition` is not met.
    """
    if not condition:
        if message is None:
            _, function_name, _ = get_function_info(2)
            message = "Rejected input in " + function_name

        logger.log(level, message)
        raise RejectedInput(message, reason=reason, logger=logger)

    # endif


def expect(
    condition: bool,  # noqa: FBT001
    message: str | None = None,
    *,
    reason: Reason | None = None,
    logger: logging.Logger = _logger,
    throw: bool | None = None,
) -> bool:
    """
    Log warning, if condition is not met.

    :param condition: Condition to check.
    :param message: Message to log, when `condition` is not met.
    :param reason: Reason attached to the exception, if thrown.
    :param logger: Logger to use for logging.
    :param throw: Whether to raise an exception when `not condition`.
      If `None`, the `expect_raises` setting decides.

    :return: `condition`, so that callers can record a flag.

    :raise RejectedInput: `condition` is not met and raising is enabled.
    """
    if not condition:
        if message is None:
            _, function_name, _ = get_function_info(2)
            message = "Expect failure in " + function_name

        logger.warning(message)

        if throw or ((throw is None) and settings.get('expect_raises')):
            raise RejectedInput(message, reason=reason, logger=logger)

    # endif

    return condition


@contextmanager
def precondition(logger: logging.Logger = _logger) -> Generator[None, None, None]:
    """
    Specify section where preconditions are checked.

    Exceptions of this package pass through unchanged. `ValueError`,
    `IndexError` and `TypeError` (typically from numpy) are converted.

    :param logger: Logger to use for logging exceptions.

    :raise RejectedInput: At least one precondition is not met.
    """
    try:
        yield

    except ExceptionParent:
        raise

    except (ValueError, IndexError, TypeError) as exception:
        logger.exception("Violated precondition")
        raise RejectedInput(
            "Violated precondition", reason=ViolatedPrecondition(), logger=logger
        ) from exception

    # endtry


def finite(what: str, value: ArrayLike) -> NDArray[np.float64]:
    """
    Convert to a float array and reject NaN or infinity.

    >>> finite('gain', [1, 2]).tolist()
    [1.0, 2.0]

    :param what: Name used in the error.
    :param value: Anything `numpy.asarray()` accepts.
    :return: The float array.

    :raise RejectedInput: Non-finite entries.
    """
    array = np.asarray(value, dtype=float)
    imperative(
        bool(np.all(np.isfinite(array))),
        f"{what} has non-finite entries",
        reason=NonFinite(what),
    )
    return array


def shaped(what: str, array: NDArray[Any], expected: tuple[int, ...]) -> None:
    """
    Reject arrays with an unexpected shape.

    :param what: Name used in the error.
    :param array: Array to check.
    :param expected: Required shape.

    :raise RejectedInput: Shape differs.
    """
    imperative(
        array.shape == expected,
        f"{what} has shape {array.shape}, expected {expected}",
        reason=DimensionMismatch(what, expected, array.shape),
    )
