# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Numerical settings shared by the whole toolkit.

Settings are thread local and kept on a stack, so that a block of code can
tighten a tolerance with :func:`localcontext()` and the previous values are
resumed afterwards::

    with settings.localcontext(zero_tol=1e-6):
        graph = build_associated_graph_nonlinear(...)

Defaults
--------

===================== ========= ===============================================
key                   default   meaning
===================== ========= ===============================================
`zero_tol`            1e-9      edges with smaller weight magnitude are omitted
`fd_step`             1e-5      central-difference step
`strict_margin`       1e-9      a strict guard `g < c` is encoded `g <= c - eta`
`qp_eps_abs`          1e-8      absolute residual tolerance of the QP kernel
`qp_eps_rel`          1e-8      relative residual tolerance of the QP kernel
`qp_max_iter`         20000     iteration cap of the QP kernel
`bnb_node_budget`     100000    branch-and-bound node budget
`bnb_rel_gap`         1e-6      relative optimality gap for pruning
`hybrid_max_horizon`  5         largest horizon accepted by the hybrid solver
`hybrid_max_modes`    2         largest mode count per agent
`bqp_exact_max_nodes` 12        node limit of the exact BQP solver
`exact_split_limit`   10        bisection enumerates splits up to this size
`power_iter_cap`      10000     iteration cap of the power iteration
`expect_raises`       False     :func:`checks.expect()` raises on failure
===================== ========= ===============================================
"""

from collections.abc import Generator
from contextlib import contextmanager
import logging
import os
import threading
from typing import Any

_logger = logging.getLogger(__name__)

#: Environment variable that caps the number of worker threads.
THREADS_ENVIRONMENT_VARIABLE = 'PYPARTITION_THREADS'

_DEFAULTS: dict[str, Any] = {
    'zero_tol': 1e-9,
    'fd_step': 1e-5,
    'strict_margin': 1e-9,
    'qp_eps_abs': 1e-8,
    'qp_eps_rel': 1e-8,
    'qp_max_iter': 20000,
    'bnb_node_budget': 100_000,
    'bnb_rel_gap': 1e-6,
    'hybrid_max_horizon': 5,
    'hybrid_max_modes': 2,
    'bqp_exact_max_nodes': 12,
    'exact_split_limit': 10,
    'power_iter_cap': 10000,
    'expect_raises': False,
}


class _Settings(threading.local):
    """
    Thread local settings.

    It is implemented as a stack, so that previous values can be resumed
    by popping.
    """

    def __init__(self) -> None:
        super().__init__()

        self._stack = [dict(_DEFAULTS)]
        self._lock = threading.RLock()

    def set(self, key: str, value: Any) -> None:  # noqa: ANN401
        """
        Set a value for a key.

        :param key: Key of value.
        :param value: Value for key.

        :raise KeyError: `key` is not a known setting.
        """
        with self._lock:
            if key not in self._stack[-1]:
                raise KeyError(key)

            self._stack[-1][key] = value

    def get(self, key: str) -> Any:  # noqa: ANN401
        """
        Get a value for a key.

        :param key: Key of the value.

        :return: Value for the key.
        """
        with self._lock:
            return self._stack[-1][key]

    def current(self) -> dict[str, Any]:
        """Get a copy of the active settings."""
        with self._lock:
            return self._stack[-1].copy()

    def push(self) -> None:
        """Create copy of the current settings and push onto the stack."""
        with self._lock:
            self._stack.append(self._stack[-1].copy())

    def pop(self) -> None:
        """Remove the last settings from the stack."""
        with self._lock:
            self._stack.pop()


_settings = _Settings()


def get(key: str) -> Any:  # noqa: ANN401
    """
    Get the current value of a setting.

    >>> get('fd_step')
    1e-05

    :param key: Name of the setting.
    :return: Its value in the active thread.
    """
    return _settings.get(key)


def current() -> dict[str, Any]:
    """
    Get a copy of every setting active in this thread.

    Worker threads start from the defaults, so tasks submitted to a pool
    re-enter the caller's settings::

        snapshot = settings.current()

        def task() -> None:
            with settings.localcontext(**snapshot):
                ...

    >>> with localcontext(zero_tol=1e-3):
    ...     current()['zero_tol']
    0.001
    """
    return _settings.current()


@contextmanager
def localcontext(**overrides: Any) -> Generator[None, None, None]:
    """
    Return context manager with new settings for the active thread.

    >>> with localcontext(zero_tol=1e-3):
    ...     get('zero_tol')
    0.001
    >>> get('zero_tol')
    1e-09

    :param overrides: Settings to change inside the block.

    :raise KeyError: Unknown setting name.
    """
    _settings.push()

    try:
        for key, value in overrides.items():
            _settings.set(key, value)

        yield

    finally:
        _settings.pop()

    # endtry


def thread_cap() -> int:
    """
    Get the number of worker threads to use.

    Reads :data:`THREADS_ENVIRONMENT_VARIABLE`; invalid values are ignored
    with a warning.
    """
    fallback = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENVIRONMENT_VARIABLE)
    if raw is None:
        return fallback

    try:
        value = int(raw)

    except ValueError:
        _logger.warning(
            "Ignoring %s=%r, not an integer", THREADS_ENVIRONMENT_VARIABLE, raw
        )
        return fallback

    # endtry

    if value < 1:
        _logger.warning(
            "Ignoring %s=%r, must be positive", THREADS_ENVIRONMENT_VARIABLE, raw
        )
        return fallback

    return value
