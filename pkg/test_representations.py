# Copyright (C) 2025, Kan Torii (qoolloop).
"""Tests for the `representations` module."""

import logging

import numpy as np
from numpy.typing import NDArray
import pytest

from . import settings
from .errors import (
    DanglingIndex,
    DimensionMismatch,
    NonFinite,
    RejectedInput,
    UnsupportedModel,
)
from .graph import NodeKind
from .models import Box, LinearSubsystem, NetworkModel
from .networks import (
    BENCHMARK_TOPOLOGY,
    example_linear_system,
    hybrid_agent,
    modular64_network,
    random_benchmark_network,
)
from .representations import (
    bipartite_constraint_graph,
    build_agent_graph,
    build_associated_graph,
    build_associated_graph_nonlinear,
    complicating_constraints,
)
from .testutils import raises

_logger = logging.getLogger(__name__)


def test__build_associated_graph__example() -> None:
    """Test node and edge counts of the 10-state example."""
    g = build_associated_graph(example_linear_system())

    assert g.n_nodes == 13
    assert g.n_edges == 19
    assert len(g.nodes_of_kind(NodeKind.INPUT)) == 3
    assert g.weight(g.labels().index('u1'), g.labels().index('x4')) == 0.04


def test__build_associated_graph__trivial() -> None:
    """Test empty dynamics and the identity."""
    empty = build_associated_graph(LinearSubsystem(np.zeros((2, 2)), np.zeros((2, 1))))
    assert empty.n_nodes == 3
    assert empty.n_edges == 0

    identity = build_associated_graph(LinearSubsystem(np.eye(2), np.zeros((2, 1))))
    assert identity.edges() == [(1, 1, 1.0), (2, 2, 1.0)]


def test__build_associated_graph__pattern() -> None:
    """Test that the weights read back as the matrices, outputs included."""
    rng = np.random.default_rng(3)
    a_matrix = rng.normal(size=(4, 4)) * (rng.random((4, 4)) < 0.5)
    b_matrix = rng.normal(size=(4, 2)) * (rng.random((4, 2)) < 0.5)
    c_matrix = rng.normal(size=(1, 4)) * (rng.random((1, 4)) < 0.5)

    g = build_associated_graph(LinearSubsystem(a_matrix, b_matrix, c_matrix))

    weights = g.weight_matrix()
    assert np.array_equal(weights[0:2, 2:6], b_matrix.T)
    assert np.array_equal(weights[2:6, 2:6], a_matrix.T)
    assert np.array_equal(weights[2:6, 6:7], c_matrix.T)


def test__build_associated_graph__rejected() -> None:
    """Test hybrid systems and bad dimensions."""
    with raises(RejectedInput, UnsupportedModel):
        build_associated_graph(hybrid_agent())  # type: ignore[arg-type]

    # endwith
    with raises(RejectedInput, DimensionMismatch):
        LinearSubsystem(np.eye(2), np.zeros((3, 1)))

    # endwith


def test__build_associated_graph_nonlinear__linear() -> None:
    """Test that a linear field gives its matrices back."""
    system = example_linear_system()

    def _field(x: NDArray[np.float64], u: NDArray[np.float64]) -> NDArray[np.float64]:
        return system.A @ x + system.B @ u

    g = build_associated_graph_nonlinear(_field, None, np.ones(10), np.zeros(3))

    exact = build_associated_graph(system)
    assert [(src, dst) for src, dst, _ in g.edges()] == [
        (src, dst) for src, dst, _ in exact.edges()
    ]
    assert np.allclose(g.weight_matrix(), exact.weight_matrix(), atol=1e-6)


def test__build_associated_graph_nonlinear__square() -> None:
    """Test `x^2` at 3 and an output map."""
    g = build_associated_graph_nonlinear(
        lambda x, u: x**2 + u, lambda x: 2 * x, [3.0], [0.0]
    )

    assert g.weight(1, 1) == pytest.approx(6.0, abs=1e-6)
    assert g.weight(1, 2) == pytest.approx(2.0, abs=1e-6)
    assert g.label(2) == 'y1'


def test__build_associated_graph_nonlinear__convergence() -> None:
    """Test that halving the step quarters the error on a smooth field."""
    errors = []
    for step in (0.1, 0.05):
        g = build_associated_graph_nonlinear(
            lambda x, u: np.sin(x) + u, None, [0.7], [0.0], step=step
        )
        errors.append(abs(g.weight(1, 1) - np.cos(0.7)))
    # endfor

    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.05)


def test__build_associated_graph_nonlinear__zero_tol() -> None:
    """Test that tiny partials give no edge under the tolerance."""

    def _field(x: NDArray[np.float64], u: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.array([x[0] + 1e-4 * x[1], x[1]]) + u

    loose = build_associated_graph_nonlinear(_field, None, [0.0, 0.0], [0.0])
    with settings.localcontext(zero_tol=1e-3):
        tight = build_associated_graph_nonlinear(_field, None, [0.0, 0.0], [0.0])

    # endwith

    assert loose.has_edge(2, 1)
    assert not tight.has_edge(2, 1)


def test__build_associated_graph_nonlinear__rejected() -> None:
    """Test non-finite values, bad steps and wrong sizes."""
    with raises(RejectedInput, NonFinite):
        build_associated_graph_nonlinear(
            lambda x, u: x * np.nan + u, None, [0.0], [0.0]
        )

    # endwith
    with raises(RejectedInput, NonFinite):
        build_associated_graph_nonlinear(lambda x, u: x + u, None, [0.0], [0.0], 0.0)

    # endwith
    with raises(RejectedInput, DimensionMismatch):
        build_associated_graph_nonlinear(
            lambda x, u: np.concatenate([x, u]), None, [0.0], [0.0]
        )

    # endwith


def test__build_agent_graph__benchmark() -> None:
    """Test the published topology edge by edge."""
    g = build_agent_graph(random_benchmark_network())

    assert g.n_nodes == 50
    assert sorted((dst + 1, src + 1, w) for src, dst, w in g.edges()) == sorted(
        BENCHMARK_TOPOLOGY
    )


def test__build_agent_graph__uncoupled_and_modular() -> None:
    """Test a network without couplings and the tiers of the modular one."""
    uncoupled = NetworkModel(
        [LinearSubsystem([[0.5]], [[1.0]])] * 50,
        (),
        [Box.uniform(1, -1.0, 1.0)] * 50,
        [Box.uniform(1, -1.0, 1.0)] * 50,
    )
    assert build_agent_graph(uncoupled).n_edges == 0

    modular = build_agent_graph(modular64_network())
    assert {w for _, _, w in modular.edges()} == {0.1, 0.01, 0.001}
    for src, dst, weight in modular.edges():
        assert modular.weight(dst, src) == weight

    # endfor


def test__build_agent_graph__relabeling() -> None:
    """Test that permuting the subsystems permutes the graph."""
    net = random_benchmark_network()
    permutation = [int(i) for i in np.random.default_rng(1).permutation(50)]

    moved = build_agent_graph(net.permuted(permutation))

    assert moved == build_agent_graph(net).permuted(permutation)


def test__bipartite_constraint_graph__example() -> None:
    """Test the four-constraint example and its complicating constraints."""
    variables = ['x1', 'x2', 'x3', 'x4', 'u1', 'u2']
    constraints = [{0, 1}, {0, 2}, {4, 5, 3}, {5, 0, 2}]

    bip = bipartite_constraint_graph(variables, constraints)

    assert len(bip.incidences) == 10
    assert bip.variables_of(2) == [3, 4, 5]
    owner = {0: 0, 1: 0, 2: 1, 3: 1, 4: 1, 5: 1}
    assert complicating_constraints(bip, owner) == [1, 3]


def test__bipartite_constraint_graph__trivial() -> None:
    """Test no constraints and one singleton constraint per variable."""
    empty = bipartite_constraint_graph(['x1', 'x2'], [])
    assert list(empty.right_nodes) == []
    assert empty.incidences == ()

    matching = bipartite_constraint_graph(['x1', 'x2'], [{0}, {1}])
    assert matching.incidences == ((0, 0), (1, 1))


def test__bipartite_constraint_graph__rejected() -> None:
    """Test dangling indices and variables without owner."""
    with raises(RejectedInput, DanglingIndex, ('constraint', 'index')) as context:
        bipartite_constraint_graph(['x1'], [{0}, {0, 3}])

    # endwith
    assert context.info['constraint'] == 1
    assert context.info['index'] == 3

    bip = bipartite_constraint_graph(['x1', 'x2'], [{0, 1}])
    with raises(RejectedInput, DanglingIndex):
        complicating_constraints(bip, {0: 0})

    # endwith
