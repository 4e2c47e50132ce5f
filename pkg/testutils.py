# Copyright (C) 2025, Kan Torii (qoolloop).
"""Module with useful functions for unit testing."""

from __future__ import annotations

from collections.abc import Iterable
from types import TracebackType

import numpy as np
from typing_extensions import Self

from .errors import (
    ExceptionParent,
    Reason,
)
from .graph import NodeKind, WeightedDigraph


class raises:  # noqa: N801
    """Context handler that expects exceptions to be raised in the suite."""

    def __init__(
        self,
        exception: type[ExceptionParent],
        reason: type[Reason],
        info_keys: Iterable[str] | str = (),
    ) -> None:
        """
        Initialize context manager.

        :param exception: Type of exception that is expected
        :param reason: The expected reason for the raised exception.
        :param info_keys: Keys that are expected in the information of the
          raised exception.
        """
        self.__exception = exception
        self.__reason_type = reason

        if isinstance(info_keys, str):
            self.__info_keys: tuple[str, ...] = (info_keys,)

        else:
            self.__info_keys = tuple(info_keys)
        # endif

        self.info: dict[str, object] = {}

    def __enter__(self) -> Self:
        return self

    def __exit__(
        self,
        exception_type: type[BaseException] | None,
        exception_value: BaseException | None,
        traceback: TracebackType | None,
    ) -> bool:
        assert exception_value is not None, (
            f"Didn't raise exception: {self.__exception.__name__}"
        )
        assert exception_type is not None  # for mypy

        if not issubclass(exception_type, self.__exception):
            return False

        assert isinstance(exception_value, self.__exception)  # for mypy
        if not exception_value.get_reason().isa(self.__reason_type):
            return False

        self.info = exception_value.get_info()
        for each in self.__info_keys:
            assert each in self.info, f"{each} not in {self.info}"

        return True


def random_digraph(
    rng: np.random.Generator,
    n_nodes: int,
    density: float = 0.4,
    *,
    symmetric: bool = False,
    low: float = 0.05,
    high: float = 1.0,
) -> WeightedDigraph:
    """
    Draw a random agent graph without self-loops.

    :param rng: Random generator.
    :param n_nodes: Number of nodes.
    :param density: Probability of each ordered (or unordered) pair.
    :param symmetric: Make every edge bidirectional with the same weight.
    :param low: Smallest weight.
    :param high: Largest weight.
    """
    edges: list[tuple[int, int, float]] = []
    for src in range(n_nodes):
        for dst in range(n_nodes):
            if src == dst or (symmetric and dst < src):
                continue

            if rng.random() < density:
                weight = float(rng.uniform(low, high))
                edges.append((src, dst, weight))
                if symmetric:
                    edges.append((dst, src, weight))

            # endif
        # endfor
    # endfor

    return WeightedDigraph([NodeKind.AGENT] * n_nodes, edges)
