# Copyright (C) 2025, Kan Torii (qoolloop).
"""Context managers that turn failures into recorded statuses."""

from __future__ import annotations

from contextlib import AbstractContextManager
from dataclasses import dataclass, field
import logging
from types import TracebackType
from typing import Any

from typing_extensions import Self

from .errors import ExceptionParent

#: Status of a run that finished without flags.
OK = 'ok'


@dataclass
class Status:
    """
    Outcome of a guarded block.

    `text` is `'ok'`, `'flagged: <what>'` or `'error: <reason>'`.
    """

    text: str = OK
    info: dict[str, Any] = field(default_factory=dict)

    def is_ok(self) -> bool:
        """Tell whether neither an error nor a flag was recorded."""
        return self.text == OK

    def flag(self, what: str) -> None:
        """Record a non-fatal flag unless an error was already recorded."""
        if self.text.startswith('error'):
            return

        if self.text == OK:
            self.text = f"flagged: {what}"

        elif what not in self.text:
            self.text = f"{self.text}; {what}"

        # endif


# Context managers are not capitalized
# c.f. https://docs.python.org/3/library/contextlib.html
class failure_capture(  # noqa: N801
    AbstractContextManager['failure_capture']
):
    """
    Context manager that records exceptions of this package in a `Status`.

    Exceptions that are not :class:`errors.ExceptionParent` (bugs) are
    re-raised, unless listed in `also`.
    """

    def __init__(
        self,
        status: Status | None = None,
        *,
        also: tuple[type[Exception], ...] = (),
        logger: logging.Logger | None = None,
    ) -> None:
        """
        Initialize the handler.

        :param status: Status to record into. A new one is created if `None`.
        :param also: Additional exception types to capture.
        :param logger: Logger to log captured exceptions. `None` to not log.
        """
        self.status = status if status is not None else Status()
        self.__captured = (ExceptionParent, *also)
        self.__logger = logger

    def __enter__(self) -> Self:
        return self

    def __exit__(
        self,
        exception_type: type[BaseException] | None,
        exception_value: BaseException | None,
        traceback: TracebackType | None,
    ) -> bool:
        if exception_value is None:
            return False

        if not isinstance(exception_value, self.__captured):
            return False

        if self.__logger:
            self.__logger.error("Captured failure: %s", exception_value)

        if isinstance(exception_value, ExceptionParent):
            reason = repr(exception_value.get_reason())
            self.status.info = exception_value.get_info()
            self.status.text = f"error: {reason}: {exception_value.get_message()}"

        else:
            self.status.text = f"error: {type(exception_value).__name__}: "
            self.status.text += str(exception_value)

        return True
