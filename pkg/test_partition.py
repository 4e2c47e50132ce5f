# Copyright (C) 2025, Kan Torii (qoolloop).
"""Tests for the `partition` module."""

import logging

import networkx as nx
import numpy as np
import pytest

from .errors import (
    DimensionMismatch,
    EmptyGraph,
    InvalidPartition,
    RejectedInput,
    TooLarge,
)
from .graph import NodeKind, WeightedDigraph
from .partition import (
    ModularityMatrix,
    Partition,
    bqp_objective,
    bqp_terms,
    enumerate_partitions_oracle,
    modularity,
    partition_index,
)
from .testutils import raises, random_digraph

_logger = logging.getLogger(__name__)


def _pair_graph() -> WeightedDigraph:
    return WeightedDigraph([NodeKind.AGENT] * 2, [(0, 1, 0.5)])


def _triangles() -> WeightedDigraph:
    arcs = [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]
    return WeightedDigraph([NodeKind.AGENT] * 6, [(s, d, 1.0) for s, d in arcs])


def test__Partition__canonical() -> None:
    """Test that equal partitions compare equal whatever their labels."""
    assert Partition([3, 3, 7, 3]) == Partition([0, 0, 1, 0])
    assert Partition({0: 2, 1: 1, 2: 2}) == Partition([0, 1, 0])
    assert hash(Partition([1, 0])) == hash(Partition([5, 2]))
    assert Partition([0, 1]) != Partition([0, 0])


def test__Partition__sets() -> None:
    """Test set accessors."""
    p = Partition.from_sets([[3, 1], [0, 2]])

    assert p.sets() == [[0, 2], [1, 3]]
    assert p.set_of(3) == 1
    assert p.n_sets == 2
    assert p.sizes() == [2, 2]
    assert p.describe() == '2 sets'
    assert Partition.grand(3).describe() == 'grand coalition'
    assert Partition.singletons(3).describe() == '3 singletons'


_BAD_SETS_ARGUMENTS = 'sets, n_nodes'
_parametrize__bad_sets = pytest.mark.parametrize(
    _BAD_SETS_ARGUMENTS,
    (
        ([[0, 1], [1, 2]], None),
        ([[0], []], None),
        ([[0], [2]], None),
        ([[0, 1]], 3),
    ),
)


@_parametrize__bad_sets
def test__Partition__from_sets__rejected(
    sets: list[list[int]], n_nodes: int | None
) -> None:
    """Test that overlapping, empty or incomplete sets are rejected."""
    with raises(RejectedInput, InvalidPartition):
        Partition.from_sets(sets, n_nodes)

    # endwith


def test__Partition__mapping__not_total() -> None:
    """Test that a mapping with a hole is rejected."""
    with raises(RejectedInput, InvalidPartition):
        Partition({0: 0, 2: 1})

    # endwith


def test__Partition__expand() -> None:
    """Test mapping a partition of groups to their members."""
    groups = [[0, 3], [1], [2, 4]]
    expanded = Partition([0, 1, 0]).expand(groups)

    assert expanded.sets() == [[0, 2, 3, 4], [1]]

    with raises(RejectedInput, DimensionMismatch):
        Partition([0, 1]).expand(groups)

    # endwith


def test__bqp_objective__pair() -> None:
    """Test the objective on one edge of weight 0.5."""
    g = _pair_graph()
    for alpha in (0.0, 0.5, 1.0, 2.0):
        merged = bqp_objective(Partition.grand(2), g, alpha)
        split = bqp_objective(Partition.singletons(2), g, alpha)

        assert merged == pytest.approx(-1 + 4 * alpha)
        assert split == pytest.approx(1 + 2 * alpha)
        assert (merged < split) == (alpha < 1)
    # endfor


def test__bqp_objective__edgeless() -> None:
    """Test that only the size term remains without edges."""
    g = WeightedDigraph([NodeKind.AGENT] * 4)

    assert bqp_objective(Partition.singletons(4), g, 0.3) == pytest.approx(1.2)
    assert bqp_objective(Partition([0, 0, 1, 2]), g, 0.3) == pytest.approx(1.8)


def test__bqp_terms__self_loop() -> None:
    """Test that a self-loop counts once per member of its set."""
    g = WeightedDigraph([NodeKind.AGENT] * 2, [(0, 0, 0.25), (0, 1, 0.5)])
    inter, intra, size = bqp_terms(Partition.grand(2), g)

    # 2 * (0.25 + 0.5) from the ordered pairs, 2 * 2 * 0.25 from the loop term.
    assert inter == 0.0
    assert intra == pytest.approx(2.5)
    assert size == 4.0


def test__bqp_objective__relabeling() -> None:
    """Test invariance under set relabeling and reordering of sets."""
    rng = np.random.default_rng(3)
    g = random_digraph(rng, 6)

    assert bqp_objective(Partition([0, 1, 1, 2, 0, 2]), g, 0.2) == bqp_objective(
        Partition.from_sets([[5, 3], [1, 2], [0, 4]]), g, 0.2
    )


def test__bqp_objective__not_total() -> None:
    """Test that a partition of another size is rejected."""
    with raises(RejectedInput, InvalidPartition):
        bqp_objective(Partition.grand(3), _pair_graph(), 0.0)

    # endwith


def test__partition_index__pair() -> None:
    """Test the partition index on one edge of weight 0.5."""
    g = _pair_graph()
    for alpha in (0.0, 1.0, 3.0, 4.0):
        grand = partition_index(Partition.grand(2), g, alpha)
        split = partition_index(Partition.singletons(2), g, alpha)

        assert grand == pytest.approx(0.5 + alpha / 5)
        assert split == pytest.approx(alpha / 3)
        assert (grand > split) == (alpha < 3.75)
    # endfor


def test__partition_index__edgeless() -> None:
    """Test the edgeless singleton partition."""
    g = WeightedDigraph([NodeKind.AGENT] * 5)

    assert partition_index(Partition.singletons(5), g, 2.0) == pytest.approx(2 / 6)


def test__modularity__triangles() -> None:
    """Test two disjoint triangles."""
    g = _triangles()

    assert modularity(g, Partition([0, 0, 0, 1, 1, 1])) == pytest.approx(0.5)
    assert modularity(g, Partition.grand(6)) == pytest.approx(0.0, abs=1e-12)


def test__modularity__reference() -> None:
    """Test against networkx on random graphs and partitions."""
    rng = np.random.default_rng(11)
    for _ in range(20):
        g = random_digraph(rng, 8, 0.3)
        if not any(src != dst for src, dst, _ in g.edges()):
            continue

        p = Partition(rng.integers(0, 3, size=8).tolist())
        undirected = nx.Graph()
        undirected.add_nodes_from(g.nodes)
        undirected.add_edges_from((src, dst) for src, dst, _ in g.edges())
        expected = nx.community.modularity(undirected, p.sets())

        assert modularity(g, p) == pytest.approx(expected, abs=1e-12)
    # endfor


def test__modularity__relabeling() -> None:
    """Test invariance under relabeling of the nodes."""
    rng = np.random.default_rng(5)
    g = random_digraph(rng, 7, 0.4)
    p = Partition([0, 0, 1, 1, 2, 2, 0])
    permutation = [3, 6, 0, 5, 1, 4, 2]
    moved = Partition({permutation[node]: p.set_of(node) for node in range(7)})

    assert modularity(g.permuted(permutation), moved) == pytest.approx(modularity(g, p))


def test__modularity__edgeless() -> None:
    """Test that a graph without edges is rejected."""
    g = WeightedDigraph([NodeKind.AGENT] * 3, [(1, 1, 1.0)])
    with raises(RejectedInput, EmptyGraph):
        modularity(g, Partition.grand(3))

    # endwith


def test__ModularityMatrix__sums() -> None:
    """Test zero row sums and the split gain of the triangles."""
    g = _triangles()
    matrix = ModularityMatrix.of(g)

    assert np.allclose(matrix.B.sum(axis=1), 0.0)
    assert matrix.m == 12.0

    signs = np.array([1.0, 1.0, 1.0, -1.0, -1.0, -1.0])
    assert matrix.split_gain(list(g.nodes), signs) == pytest.approx(0.5)


_BELL_ARGUMENTS = 'n, count'
_parametrize__bell = pytest.mark.parametrize(
    _BELL_ARGUMENTS, ((1, 1), (3, 5), (5, 52), (8, 4140))
)


@_parametrize__bell
def test__enumerate_partitions_oracle__bell(n: int, count: int) -> None:
    """Test that every partition is yielded once."""
    seen = list(enumerate_partitions_oracle(n))

    assert len(seen) == count
    assert len(set(seen)) == count


def test__enumerate_partitions_oracle__too_large() -> None:
    """Test the size limit."""
    with raises(RejectedInput, TooLarge, ('size', 'limit')):
        next(enumerate_partitions_oracle(14))

    # endwith


def test__bqp_objective__scaling() -> None:
    """Test that scaling weights and alpha together keeps the minimizer."""
    rng = np.random.default_rng(17)
    g = random_digraph(rng, 5, 0.5)
    scaled = WeightedDigraph(
        g.kinds(), [(src, dst, 3.0 * weight) for src, dst, weight in g.edges()]
    )
    alpha = 0.1

    def best(graph: WeightedDigraph, a: float) -> Partition:
        return min(
            enumerate_partitions_oracle(5),
            key=lambda p: (bqp_objective(p, graph, a), p.assignment),
        )

    assert best(scaled, 3.0 * alpha) == best(g, alpha)
