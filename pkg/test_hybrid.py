# Copyright (C) 2025, Kan Torii (qoolloop).
"""Tests for the `hybrid` module."""

import itertools
import logging

import numpy as np
import pytest

from . import settings
from .errors import Infeasible, SolverFailure
from .horizon import HorizonQp, MpcProblem
from .hybrid import BnbStats, branch_and_bound
from .models import Box, NetworkModel
from .networks import hybrid_agent, random_network
from .testutils import raises

_logger = logging.getLogger(__name__)


def _enumerated(problem: HorizonQp) -> float:
    """Best objective over every mode sequence."""
    keys = problem.undecided
    best = np.inf
    for modes in itertools.product(*(range(problem.n_modes(key)) for key in keys)):
        solution = problem.solve(dict(zip(keys, modes, strict=True)))
        if solution.feasible:
            best = min(best, solution.objective)

    # endfor

    return best


_parametrize__seed = pytest.mark.parametrize('seed', (0, 1, 2, 3))


@_parametrize__seed
def test__branch_and_bound__enumeration(seed: int) -> None:
    """Test that the search finds the best mode sequence."""
    net = random_network(3, 0.5, seed, max_weight=0.2)
    x0 = np.random.default_rng(seed).uniform(-0.7, 0.7, size=3)
    problem = HorizonQp(net, MpcProblem(horizon=2), x0)
    stats = BnbStats()

    solution = branch_and_bound(problem, stats=stats)

    assert solution.objective == pytest.approx(_enumerated(problem), abs=1e-5)
    assert solution.is_integral()
    assert solution.status.is_ok()
    assert solution.nodes == stats.explored


def test__branch_and_bound__guards_hold() -> None:
    """Test that the chosen modes agree with the predicted states."""
    net = random_network(4, 0.4, 5, max_weight=0.2)
    problem = HorizonQp(net, MpcProblem(horizon=3), [0.6, -0.3, 0.2, -0.8])

    solution = branch_and_bound(problem)

    for (agent, t), mode in solution.rounded_modes().items():
        sub = net.subsystems[agent]
        mode_guard = sub.modes[mode].guard  # type: ignore[union-attr]
        assert mode_guard is not None
        assert mode_guard.holds(solution.states[agent][t] + 1e-7 * (1 - 2 * mode))
    # endfor


def test__branch_and_bound__single_qp() -> None:
    """Test a horizon of one, which leaves nothing to branch on."""
    net = random_network(3, 0.5, 0, max_weight=0.2)
    problem = HorizonQp(net, MpcProblem(horizon=1), [0.1, -0.2, 0.3])
    stats = BnbStats()

    solution = branch_and_bound(problem, stats=stats)

    assert problem.undecided == []
    assert stats.explored == 1
    assert not stats.heuristic
    assert solution.feasible


def test__branch_and_bound__infeasible_root() -> None:
    """Test a state that cannot be kept in its box."""
    net = NetworkModel(
        [hybrid_agent(gain=2.0)],
        (),
        [Box.uniform(1, -0.9, 0.9)],
        [Box.uniform(1, -0.1, 0.1)],
    )
    problem = HorizonQp(net, MpcProblem(horizon=2), [0.9])

    with raises(SolverFailure, Infeasible) as caught:
        branch_and_bound(problem)

    # endwith
    assert caught.info['stage'] == 'branch-and-bound root'


def test__branch_and_bound__node_budget() -> None:
    """Test that running out of nodes is flagged."""
    for seed in range(20):
        net = random_network(3, 0.6, seed, max_weight=0.2)
        x0 = np.random.default_rng(seed).uniform(-0.6, 0.6, size=3)
        problem = HorizonQp(net, MpcProblem(horizon=3), x0)
        root = problem.solve()
        if root.is_integral():
            continue

        stats = BnbStats()
        with settings.localcontext(bnb_node_budget=2):
            try:
                solution = branch_and_bound(problem, stats=stats)

            except SolverFailure:
                continue

            # endtry
        # endwith

        assert stats.heuristic
        assert 'branch-and-bound node budget' in solution.status.text
        return
    # endfor

    pytest.skip("No fractional root among the drawn networks")
