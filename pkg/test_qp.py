# Copyright (C) 2025, Kan Torii (qoolloop).
"""Tests for the `qp` module."""

import itertools
import logging

import numpy as np
import pytest

from .errors import DimensionMismatch, RejectedInput, Unbounded
from .qp import QpKernel, QpStatus, solve_qp
from .testutils import raises

_logger = logging.getLogger(__name__)


def _random_box_qp(
    rng: np.random.Generator, n: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    factor = rng.normal(size=(n, n))
    P = factor @ factor.T + 0.1 * np.eye(n)  # noqa: N806
    q = rng.normal(scale=3.0, size=n)
    lower = -rng.uniform(0.1, 1.0, size=n)
    upper = rng.uniform(0.1, 1.0, size=n)
    return P, q, lower, upper


def _active_set_oracle(
    P: np.ndarray,  # noqa: N803
    q: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
) -> float:
    """Best objective over every free/lower/upper choice of the variables."""
    n = q.size
    best = np.inf
    for choice in itertools.product(range(3), repeat=n):
        x = np.zeros(n)
        free = [index for index in range(n) if choice[index] == 0]
        for index in range(n):
            if choice[index] == 1:
                x[index] = lower[index]

            elif choice[index] == 2:
                x[index] = upper[index]

        # endfor

        if free:
            fixed = [index for index in range(n) if choice[index] != 0]
            rhs = -q[free] - P[np.ix_(free, fixed)] @ x[fixed]
            x[free] = np.linalg.solve(P[np.ix_(free, free)], rhs)

        if np.all(x >= lower - 1e-12) and np.all(x <= upper + 1e-12):
            best = min(best, float(0.5 * x @ P @ x + q @ x))

    # endfor

    return best


def test__solve_qp__box_oracle() -> None:
    """Test random box QPs against active-set enumeration and the KKT residual."""
    rng = np.random.default_rng(2)
    for trial in range(50):
        n = 2 + trial % 5
        P, q, lower, upper = _random_box_qp(rng, n)  # noqa: N806
        result = solve_qp(P, q, np.eye(n), lower, upper)

        assert result.status is QpStatus.SOLVED
        assert result.objective == pytest.approx(
            _active_set_oracle(P, q, lower, upper), abs=1e-7
        )

        gradient = P @ result.x + q
        projected = result.x - np.clip(result.x - gradient, lower, upper)
        assert np.max(np.abs(projected)) <= 1e-8
    # endfor


def test__solve_qp__equality() -> None:
    """Test an equality-constrained problem."""
    result = solve_qp(2 * np.eye(2), [0.0, 0.0], [[1.0, 1.0]], [1.0], [1.0])

    assert result.is_solved()
    assert result.x == pytest.approx([0.5, 0.5], abs=1e-9)
    assert result.objective == pytest.approx(0.5, abs=1e-9)
    assert result.y[0] == pytest.approx(-1.0, abs=1e-7)


def test__solve_qp__free_rows() -> None:
    """Test that rows without bounds carry no constraint."""
    result = solve_qp([[2.0]], [-2.0], [[1.0]], [-np.inf], [np.inf])

    assert result.is_solved()
    assert result.x[0] == pytest.approx(1.0, abs=1e-9)


def test__solve_qp__primal_infeasible() -> None:
    """Test that `x >= 1` and `x <= 0` together are detected."""
    result = solve_qp(
        [[1.0]], [0.0], [[1.0], [1.0]], [1.0, -np.inf], [np.inf, 0.0]
    )

    assert result.status is QpStatus.PRIMAL_INFEASIBLE
    assert not result.is_solved()
    assert result.objective == np.inf


def test__solve_qp__dual_infeasible() -> None:
    """Test that a problem unbounded below is detected."""
    result = solve_qp([[0.0]], [-1.0], [[1.0]], [0.0], [np.inf])

    assert result.status is QpStatus.DUAL_INFEASIBLE


def test__QpKernel__reuse() -> None:
    """Test that a kernel solves a sequence of problems like fresh kernels."""
    rng = np.random.default_rng(8)
    P, _, lower, upper = _random_box_qp(rng, 4)  # noqa: N806
    A = np.vstack((np.eye(4), np.ones((1, 4))))  # noqa: N806
    kernel = QpKernel(P, A)
    previous = None
    for _ in range(5):
        q = rng.normal(size=4)
        low = np.append(lower, -1.0)
        high = np.append(upper, 1.0)
        warm = {} if previous is None else {'x0': previous.x, 'y0': previous.y}
        result = kernel.solve(q, low, high, **warm)
        fresh = solve_qp(P, q, A, low, high)

        assert result.is_solved()
        assert result.x == pytest.approx(fresh.x, abs=1e-7)
        previous = result
    # endfor


def test__QpKernel__rejected() -> None:
    """Test inverted bounds and mismatching shapes."""
    kernel = QpKernel(np.eye(2), np.eye(2))
    with raises(RejectedInput, Unbounded):
        kernel.solve([0.0, 0.0], [1.0, 0.0], [0.0, 1.0])

    # endwith
    with raises(RejectedInput, DimensionMismatch):
        kernel.solve([0.0, 0.0, 0.0], [0.0, 0.0], [1.0, 1.0])

    # endwith
    with raises(RejectedInput, DimensionMismatch):
        QpKernel(np.eye(2), np.ones((1, 3)))

    # endwith
