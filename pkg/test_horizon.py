# Copyright (C) 2025, Kan Torii (qoolloop).
"""Tests for the `horizon` module."""

import logging

import numpy as np
import pytest

from .errors import (
    DimensionMismatch,
    RejectedInput,
    Unbounded,
    UnknownNode,
    UnsupportedModel,
)
from .horizon import HorizonQp, MpcProblem, horizon_cost
from .models import Box, Coupling, LinearSubsystem, NetworkModel, PwaSubsystem
from .networks import hybrid_agent
from .testutils import raises

_logger = logging.getLogger(__name__)


def _scalar_net(a: float = 0.5) -> NetworkModel:
    return NetworkModel([LinearSubsystem([[a]], [[1.0]])])


def _hybrid_single() -> NetworkModel:
    return NetworkModel(
        [hybrid_agent()], (), [Box.uniform(1, -0.9, 0.9)], [Box.uniform(1, -0.5, 0.5)]
    )


def test__MpcProblem__rejected() -> None:
    """Test the horizon and weight preconditions."""
    with raises(RejectedInput, DimensionMismatch):
        MpcProblem(horizon=0)

    # endwith
    with raises(RejectedInput, UnsupportedModel):
        MpcProblem(q=-1.0)

    # endwith


def test__horizon_cost__by_hand() -> None:
    """Test the weights of inner, terminal and input terms."""
    prob = MpcProblem(horizon=2, q=2.0, r=3.0, p=5.0)
    states = np.array([[9.0], [1.0], [2.0]])
    inputs = np.array([[1.0], [-1.0]])

    assert horizon_cost(prob, states, inputs) == pytest.approx(2 + 5 * 4 + 3 * 2)


def test__HorizonQp__single_step() -> None:
    """Test `x+ = 0.5 x + u` over one step from 1."""
    solution = HorizonQp(_scalar_net(), MpcProblem(horizon=1), [1.0]).solve()

    assert solution.inputs[0][0, 0] == pytest.approx(-0.25, abs=1e-9)
    assert solution.states[0][:, 0] == pytest.approx([1.0, 0.25], abs=1e-9)
    assert solution.cost == pytest.approx(0.125, abs=1e-9)
    assert solution.objective == pytest.approx(0.125, abs=1e-9)


def test__HorizonQp__least_squares() -> None:
    """Test an unconstrained two-step problem against the normal equations."""
    prob = MpcProblem(horizon=2, q=1.0, r=0.5, p=3.0)
    solution = HorizonQp(_scalar_net(0.8), prob, [1.0]).solve()

    # x1 = 0.8 + u0, x2 = 0.64 + 0.8 u0 + u1 as residuals of weighted rows.
    root3, root_half = np.sqrt(3.0), np.sqrt(0.5)
    rows = np.array(
        [[1.0, 0.0], [0.8 * root3, root3], [root_half, 0.0], [0.0, root_half]]
    )
    offsets = np.array([0.8, 0.64 * root3, 0.0, 0.0])
    expected, *_ = np.linalg.lstsq(rows, -offsets, rcond=None)

    assert solution.inputs[0][:, 0] == pytest.approx(expected, abs=1e-8)


def test__HorizonQp__box() -> None:
    """Test that the input box binds."""
    net = NetworkModel(
        [LinearSubsystem([[1.0]], [[1.0]])],
        (),
        [Box.uniform(1, -5.0, 5.0)],
        [Box.uniform(1, -0.1, 0.1)],
    )
    solution = HorizonQp(net, MpcProblem(horizon=1, r=0.0), [2.0]).solve()

    assert solution.inputs[0][0, 0] == pytest.approx(-0.1, abs=1e-9)


def test__HorizonQp__copies() -> None:
    """Test that a neighbour outside the set becomes a copy."""
    net = NetworkModel(
        [LinearSubsystem([[0.5]], [[1.0]]) for _ in range(3)],
        [Coupling(1, 0, np.array([[0.2]])), Coupling(2, 1, np.array([[0.3]]))],
    )
    problem = HorizonQp(
        net, MpcProblem(horizon=3), [1.0, -1.0, 0.5], [0], shared=[1], rho=1.0
    )
    solution = problem.solve(targets={(1, 1): [0.1], (1, 2): [0.2]})

    assert problem.agents == (0,)
    assert problem.copied == (1,)
    assert problem.shared == (1,)
    assert solution.copies[1].shape == (3, 1)
    assert solution.copies[1][0, 0] == -1.0
    assert solution.trajectory(1).shape == (2, 1)
    assert solution.objective >= solution.cost - 1e-9

    with raises(RejectedInput, UnknownNode):
        problem.solve(targets={(0, 1): [0.0]})

    # endwith


def test__HorizonQp__relaxed_modes() -> None:
    """Test the relaxed mode choices of a hybrid agent."""
    problem = HorizonQp(_hybrid_single(), MpcProblem(horizon=3), [0.4])

    assert problem.undecided == [(0, 1), (0, 2)]
    assert problem.n_modes((0, 1)) == 2

    relaxed = problem.solve()
    assert set(relaxed.deltas) == {(0, 1), (0, 2)}
    for weights in relaxed.deltas.values():
        assert weights.sum() == pytest.approx(1.0, abs=1e-7)

    # endfor

    with raises(RejectedInput, UnknownNode):
        problem.solve({(0, 1): 2})

    # endwith


def test__HorizonQp__mode_fixed() -> None:
    """Test that fixing the `x >= 0` mode equals the linear problem of that mode."""
    prob = MpcProblem(horizon=2)
    fixed = HorizonQp(_hybrid_single(), prob, [0.4]).solve({(0, 1): 0})
    linear = NetworkModel(
        [LinearSubsystem([[0.5]], [[1.0]])],
        (),
        [Box.uniform(1, -0.9, 0.9)],
        [Box.uniform(1, -0.5, 0.5)],
    )
    expected = HorizonQp(linear, prob, [0.4]).solve()

    assert fixed.cost == pytest.approx(expected.cost, abs=1e-8)
    assert fixed.inputs[0] == pytest.approx(expected.inputs[0], abs=1e-7)
    assert fixed.is_integral()


def test__HorizonQp__strict_guard() -> None:
    """Test that the `x < 0` mode keeps the state below zero."""
    fixed = HorizonQp(_hybrid_single(), MpcProblem(horizon=2), [0.4]).solve(
        {(0, 1): 1}
    )

    assert fixed.feasible
    assert fixed.states[0][1, 0] < 0


def test__HorizonQp__unbounded_hybrid() -> None:
    """Test that relaxing modes needs bounded boxes."""
    net = NetworkModel([hybrid_agent()])
    with raises(RejectedInput, Unbounded):
        HorizonQp(net, MpcProblem(horizon=2), [0.0])

    # endwith


def test__HorizonQp__x0_size() -> None:
    """Test the size of the measured state."""
    with raises(RejectedInput, DimensionMismatch):
        HorizonQp(_scalar_net(), MpcProblem(), [1.0, 2.0])

    # endwith


def test__HorizonQp__single_mode_pwa() -> None:
    """Test that a one-mode piecewise-affine agent has nothing to relax."""
    sub = PwaSubsystem(hybrid_agent().modes[:1])
    net = NetworkModel([sub])
    problem = HorizonQp(net, MpcProblem(horizon=3), [0.5])

    assert problem.undecided == []
