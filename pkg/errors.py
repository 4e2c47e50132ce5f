# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Exceptions and reasons raised by the partitioning toolkit.

The main characteristics of the exception handling are:

- Every exception is an :class:`ExceptionParent` and carries a :class:`Reason`,
  so that a handler can branch on *why* something failed without parsing
  messages.
- Reasons hold an `info` `dict` with structured details (node ids, line
  numbers, dimensions), which the command line shows to the user.
- Bad inputs raise :class:`RejectedInput`. Numerical kernels that cannot
  produce an answer raise :class:`SolverFailure`. Results that are usable but
  not certified are flagged on the result instead.
"""

from __future__ import annotations

import logging
import os
import pathlib
from typing import Any

_logger = logging.getLogger(__name__)


class Reason:
    """
    Super class for reasons in :class:`ExceptionParent`.

    :param info: Information regarding the exception.
        The information will obtainable with :meth:`get_info()`.
    """

    def __init__(self, **info: Any) -> None:
        super().__init__()

        self._info = info

    def __repr__(self) -> str:
        return type(self).__name__

    @classmethod
    def isa(cls, other: type[Reason] | tuple[type[Reason], ...]) -> bool:
        """
        Check whether this reason is a subclass of another reason.

        :param other: The potential superclass(es) of this reason.

        :return: `True` if this reason is a subclass.
        """
        return issubclass(cls, other)

    def get_info(self) -> dict[str, Any]:
        """
        Get information regarding this `Reason`.

        .. note:: This doesn't return a deep copy of the `dict`.
        """
        return self._info


#: Use this class itself, if reason is not specific.
UnspecificReason = Reason


# Reasons for rejected input


class DimensionMismatch(Reason):
    """
    Array shapes do not agree.

    :param what: Name of the offending quantity.
    :param expected: Expected shape or size.
    :param actual: Actual shape or size.
    """

    def __init__(self, what: str, expected: object, actual: object) -> None:
        super().__init__(what=what, expected=expected, actual=actual)


class UnknownNode(Reason):
    """A node id that does not exist in the graph."""

    def __init__(self, node: object) -> None:
        super().__init__(node=node)


class DanglingIndex(Reason):
    """A constraint refers to a variable that was never declared."""

    def __init__(self, constraint: int, index: object) -> None:
        super().__init__(constraint=constraint, index=index)


class NonFinite(Reason):
    """A NaN or infinite value where a finite real is required."""

    def __init__(self, what: str) -> None:
        super().__init__(what=what)


class Unbounded(Reason):
    """A box with an infinite or inverted bound."""

    def __init__(self, what: str) -> None:
        super().__init__(what=what)


class TooLarge(Reason):
    """
    Problem size beyond what an exhaustive method can handle.

    :param what: Name of the method or quantity.
    :param size: Requested size.
    :param limit: Largest supported size.
    :param hint: What to use instead.
    """

    def __init__(self, what: str, size: int, limit: int, hint: str = '') -> None:
        super().__init__(what=what, size=size, limit=limit, hint=hint)


class Unactuated(Reason):
    """State nodes that no input can influence."""

    def __init__(self, nodes: list[int]) -> None:
        super().__init__(nodes=nodes)


class MissingValue(Reason):
    """A lookup table lacks an entry."""

    def __init__(self, what: str, key: object) -> None:
        super().__init__(what=what, key=key)


class InvalidPartition(Reason):
    """A partition that is not total, overlaps, or has empty sets."""

    def __init__(self, detail: str) -> None:
        super().__init__(detail=detail)


class UnsupportedModel(Reason):
    """A model that the requested operation does not handle."""

    def __init__(self, detail: str) -> None:
        super().__init__(detail=detail)


class Duplicate(Reason):
    """An edge, incidence or group member given twice."""

    def __init__(self, what: object) -> None:
        super().__init__(what=what)


class EmptyGraph(Reason):
    """A graph without edges where at least one is needed."""


class ParseFailure(Reason):
    """
    Malformed line in one of the text formats.

    Information obtained from :meth:`Reason.get_info()` with the following keys:

    - `'path'`: absolute path, or `'<string>'` for in-memory text
    - `'line'`: 1-based line number
    - `'text'`: the offending line

    :param path: File being parsed, if any.
    :param line: 1-based line number.
    :param text: Content of the line.
    """

    def __init__(
        self, path: str | pathlib.Path | None, line: int, text: str = ''
    ) -> None:
        abs_path = '<string>' if path is None else os.path.abspath(path)
        super().__init__(path=abs_path, line=line, text=text)

        self._line = line

    def get_line(self) -> int:
        """Get the 1-based line number of the failure."""
        return self._line


class ViolatedPrecondition(Reason):
    """Reason set by :func:`checks.precondition()` on converted exceptions."""


# Reasons for solver failures


class Infeasible(Reason):
    """No point satisfies the constraints."""

    def __init__(self, stage: str) -> None:
        super().__init__(stage=stage)


class NoConsistentAssignment(Reason):
    """
    No (or more than one) binary assignment satisfies an MLD band.

    :param band: Label of the band that could not be satisfied.
    :param step: Simulation step.
    :param count: Number of satisfying assignments found.
    """

    def __init__(self, band: str, step: int, count: int = 0) -> None:
        super().__init__(band=band, step=step, count=count)


class SimulationAborted(Reason):
    """
    Closed loop stopped by a solver error.

    The partial log is kept under `'log'`.
    """

    def __init__(self, step: int, log: object) -> None:
        super().__init__(step=step, log=log)


class ExceptionParent(Exception):
    """
    Superclass of all exceptions raised by this package.

    :param message: Message for exception
    :param reason: `Reason` for the exception. If `None`, same as
        `UnspecificReason()`.
    :param logger: Logger for logging exception.
    """

    def __init__(
        self,
        message: str,
        reason: Reason | None = None,
        logger: logging.Logger = _logger,
    ) -> None:
        super().__init__(message)

        self._message = message
        self._reason = reason if reason else UnspecificReason()
        self._logger = logger

    def __str__(self) -> str:
        if self.__cause__ is not None:
            cause = self.__cause__
            new_message = (
                f"{self._message}, from ({type(cause).__name__}) {cause}"
            )

        else:
            new_message = self._message

        shown = {
            key: value
            for key, value in self._reason.get_info().items()
            if key != 'log'
        }
        return f"{self._reason!r}, {shown}\n{new_message}"

    def get_message(self) -> str:
        """Get message assigned to this exception."""
        return self._message

    def get_reason(self) -> Reason:
        """Get the reason for this exception."""
        return self._reason

    def get_info(self) -> dict[str, Any]:
        """
        Get information regarding this exception.

        Information builds up as the exceptions are chained, the outermost
        reason winning on duplicate keys.
        """
        if isinstance(self.__cause__, ExceptionParent):
            info = dict(self.__cause__.get_info())

        else:
            info = {}

        info.update(self._reason.get_info())

        return info


class RecoveredException(ExceptionParent):
    """The superclass for exceptions after which the caller can carry on."""


class RejectedInput(RecoveredException):
    """Input that violates the preconditions of an operation."""


class SolverFailure(ExceptionParent):
    """A numerical kernel could not return a usable answer."""
