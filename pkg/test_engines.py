# Copyright (C) 2025, Kan Torii (qoolloop).
"""Tests for the `engines` module."""

import itertools
import logging

import numpy as np
import pytest

from . import settings
from .engines import (
    best_split,
    greedy_partition,
    modularity_bisect,
    oracle_partition,
    run_method,
    select_fsu,
    solve_bqp_exact,
    solve_bqp_local,
)
from .errors import EmptyGraph, RejectedInput, TooLarge, Unactuated
from .graph import NodeKind, WeightedDigraph
from .networks import (
    example_linear_system,
    modular64_edges,
    modular64_network,
    module_partition,
)
from .partition import (
    Method,
    ModularityMatrix,
    Partition,
    bqp_objective,
    partition_index,
)
from .representations import build_agent_graph, build_associated_graph
from .testutils import raises, random_digraph

_logger = logging.getLogger(__name__)


def _pair_graph() -> WeightedDigraph:
    return WeightedDigraph([NodeKind.AGENT] * 2, [(0, 1, 0.5)])


def _triangles() -> WeightedDigraph:
    arcs = [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]
    return WeightedDigraph([NodeKind.AGENT] * 6, [(s, d, 1.0) for s, d in arcs])


def _connected(rng: np.random.Generator, n_nodes: int) -> WeightedDigraph:
    # A path plus random extra edges.
    extra = random_digraph(rng, n_nodes, 0.3)
    edges = {(src, dst): weight for src, dst, weight in extra.edges()}
    for node in range(n_nodes - 1):
        edges.setdefault((node, node + 1), 0.5)

    return WeightedDigraph(
        [NodeKind.AGENT] * n_nodes, [(s, d, w) for (s, d), w in edges.items()]
    )


def _is_partition_of(sets: list[list[int]], n_nodes: int) -> bool:
    flat = sorted(node for members in sets for node in members)
    return flat == list(range(n_nodes)) and all(sets)


def test__select_fsu__example() -> None:
    """Test the FSUs of the 10-state example system."""
    g = build_associated_graph(example_linear_system())
    fsus = select_fsu(g)
    inputs = set(g.nodes_of_kind(NodeKind.INPUT))

    assert len(fsus) == 3
    assert _is_partition_of(fsus, g.n_nodes)
    for index, members in enumerate(fsus):
        assert [node for node in members if node in inputs] == [index]

    # u1 -> x10 is the strongest input edge.
    assert g.labels().index('x10') in fsus[0]


def test__select_fsu__chains() -> None:
    """Test inputs driving disjoint chains."""
    kinds = [NodeKind.INPUT, NodeKind.INPUT] + [NodeKind.STATE] * 4
    edges = [(0, 2, 1.0), (2, 3, 0.5), (1, 4, 1.0), (4, 5, 0.5)]
    g = WeightedDigraph(kinds, edges)

    assert select_fsu(g) == [[0, 2, 3], [1, 4, 5]]


def test__select_fsu__single_input() -> None:
    """Test that one input gives one FSU with every node."""
    g = build_associated_graph(example_linear_system())
    kinds = g.kinds()
    # Keep u1 and every state.
    keep = [0, *range(3, 13)]
    index = {old: new for new, old in enumerate(keep)}
    edges = [
        (index[s], index[d], w) for s, d, w in g.edges() if s in index and d in index
    ]
    reduced = WeightedDigraph([kinds[old] for old in keep], edges)

    # Every state is weakly connected to u1.
    assert select_fsu(reduced) == [list(range(11))]


def test__select_fsu__tie() -> None:
    """Test that equally strong edges go to the lowest FSU."""
    kinds = [NodeKind.INPUT, NodeKind.INPUT, NodeKind.STATE]
    g = WeightedDigraph(kinds, [(0, 2, 0.3), (1, 2, 0.3)])

    assert select_fsu(g) == [[0, 2], [1]]


def test__select_fsu__unactuated() -> None:
    """Test that a state without a path from an input is rejected."""
    kinds = [NodeKind.INPUT, NodeKind.STATE, NodeKind.STATE]
    g = WeightedDigraph(kinds, [(0, 1, 1.0)])

    with raises(RejectedInput, Unactuated, 'nodes') as context:
        select_fsu(g)

    # endwith
    assert context.info['nodes'] == [2]


def test__select_fsu__isolated_output(caplog: pytest.LogCaptureFixture) -> None:
    """Test that an isolated output joins the first FSU with a warning."""
    kinds = [NodeKind.INPUT, NodeKind.INPUT, NodeKind.STATE, NodeKind.OUTPUT]
    g = WeightedDigraph(kinds, [(1, 2, 1.0), (0, 0, 0.1)])

    with caplog.at_level(logging.WARNING):
        fsus = select_fsu(g)

    # endwith
    assert fsus == [[0, 3], [1, 2]]
    assert 'no coupling' in caplog.text


def test__solve_bqp_exact__oracle() -> None:
    """Test that the exact solver matches exhaustive search."""
    rng = np.random.default_rng(2025)
    for _ in range(30):
        n_nodes = int(rng.integers(2, 8))
        g = random_digraph(rng, n_nodes, float(rng.uniform(0.2, 0.7)))
        alpha = float(rng.uniform(0.0, 1.0))
        exact = solve_bqp_exact(g, alpha)
        oracle = oracle_partition(g, alpha)

        assert exact.objective == oracle.objective
        assert exact.partition == oracle.partition
        assert exact.method is Method.BQP_EXACT
        assert exact.objective == bqp_objective(exact.partition, g, alpha)
    # endfor


def test__solve_bqp_exact__self_loops() -> None:
    """Test agreement with exhaustive search when self-loops are present."""
    rng = np.random.default_rng(8)
    for _ in range(5):
        base = random_digraph(rng, 5, 0.4)
        loops = [(node, node, float(rng.uniform(0.1, 1.0))) for node in range(5)]
        g = WeightedDigraph(base.kinds(), [*base.edges(), *loops])

        assert solve_bqp_exact(g, 0.3).objective == oracle_partition(g, 0.3).objective
    # endfor


def test__solve_bqp_exact__alpha_zero() -> None:
    """Test that the grand coalition is optimal without a size penalty."""
    rng = np.random.default_rng(4)
    for n_nodes in (3, 5, 7):
        result = solve_bqp_exact(_connected(rng, n_nodes), 0.0)

        assert result.partition == Partition.grand(n_nodes)
    # endfor


def test__solve_bqp_exact__large_alpha() -> None:
    """Test that singletons are optimal once alpha exceeds twice the total weight."""
    rng = np.random.default_rng(6)
    g = _connected(rng, 6)
    total = float(np.abs(g.weight_matrix()).sum())

    assert solve_bqp_exact(g, 2 * total + 0.01).partition == Partition.singletons(6)


def test__solve_bqp_exact__pair() -> None:
    """Test the switch at alpha = 1 on one edge of weight 0.5."""
    assert solve_bqp_exact(_pair_graph(), 0.5).partition == Partition.grand(2)
    assert solve_bqp_exact(_pair_graph(), 1.5).partition == Partition.singletons(2)


def test__solve_bqp_exact__too_large() -> None:
    """Test the node limit and the hint."""
    rng = np.random.default_rng(0)
    g = random_digraph(rng, 13, 0.2)

    with raises(RejectedInput, TooLarge, ('limit', 'hint')) as context:
        solve_bqp_exact(g, 0.1)

    # endwith
    assert 'solve_bqp_local' in str(context.info['hint'])

    with settings.localcontext(bqp_exact_max_nodes=3):
        with raises(RejectedInput, TooLarge):
            solve_bqp_exact(random_digraph(rng, 4), 0.1)

        # endwith
    # endwith


def test__solve_bqp_local__near_exact() -> None:
    """Test that local search is within 5% of the optimum on most instances."""
    rng = np.random.default_rng(99)
    close = 0
    trials = 40
    for trial in range(trials):
        n_nodes = int(rng.integers(3, 9))
        g = random_digraph(rng, n_nodes, 0.4)
        alpha = float(rng.choice([0.05, 0.2, 0.5]))
        exact = solve_bqp_exact(g, alpha).objective
        local = solve_bqp_local(g, alpha, seed=trial)

        assert local.objective >= exact - 1e-9
        assert local.objective <= bqp_objective(Partition.singletons(n_nodes), g, alpha)
        if local.objective - exact <= 0.05 * abs(exact) + 1e-9:
            close += 1

    # endfor

    assert close >= 0.9 * trials


def test__solve_bqp_local__edgeless() -> None:
    """Test that the edgeless graph stays all-singletons."""
    g = WeightedDigraph([NodeKind.AGENT] * 5)
    result = solve_bqp_local(g, 0.2)

    assert result.partition == Partition.singletons(5)
    assert result.objective == pytest.approx(1.0)
    assert result.modularity_q is None


def test__solve_bqp_local__deterministic() -> None:
    """Test that the same seed gives the same result."""
    rng = np.random.default_rng(12)
    g = random_digraph(rng, 10, 0.3)

    assert (
        solve_bqp_local(g, 0.1, seed=4).partition
        == solve_bqp_local(g, 0.1, seed=4).partition
    )


_MODULAR_ALPHAS_ARGUMENTS = 'alpha, size'
_parametrize__modular_alphas = pytest.mark.parametrize(
    _MODULAR_ALPHAS_ARGUMENTS, ((1.0, 1), (0.1, 4), (5e-4, 16), (1e-6, 64))
)


@_parametrize__modular_alphas
def test__solve_bqp_local__modular(alpha: float, size: int) -> None:
    """Test that the tiers of the modular network are recovered."""
    g = build_agent_graph(modular64_network())
    result = solve_bqp_local(g, alpha)

    assert result.partition == Partition.from_sets(module_partition(size))


def test__greedy_partition__pair() -> None:
    """Test the pair graph at both sides of the switch."""
    merged = greedy_partition(_pair_graph(), 1.0)
    split = greedy_partition(_pair_graph(), 10.0)

    assert merged.partition == Partition.grand(2)
    assert merged.objective == pytest.approx(0.7)
    assert merged.history == pytest.approx((1 / 3, 0.7))
    assert split.partition == Partition.singletons(2)
    assert split.history == pytest.approx((10 / 3,))


def _moves(p: Partition) -> list[Partition]:
    labels = list(p.assignment)
    found = []
    for node in range(p.n_nodes):
        for target in range(p.n_sets + 1):
            if target != labels[node]:
                moved = labels.copy()
                moved[node] = target
                found.append(Partition(moved))

        # endfor
    # endfor
    for first, second in itertools.combinations(range(p.n_sets), 2):
        merged = [first if label == second else label for label in labels]
        found.append(Partition(merged))

    return found


def test__greedy_partition__ascent() -> None:
    """Test monotone history and a local optimum on random graphs."""
    rng = np.random.default_rng(7)
    for _ in range(100):
        n_nodes = int(rng.integers(2, 7))
        g = random_digraph(rng, n_nodes, 0.4)
        alpha = float(rng.uniform(0.0, 2.0))
        result = greedy_partition(g, alpha)

        assert all(
            later >= earlier
            for earlier, later in itertools.pairwise(result.history)
        )
        assert result.history[-1] == pytest.approx(result.objective)
        assert result.objective == pytest.approx(
            partition_index(result.partition, g, alpha)
        )
        for neighbour in _moves(result.partition):
            assert partition_index(neighbour, g, alpha) <= result.objective + 1e-12

        # endfor
    # endfor


def test__greedy_partition__modular_extremes() -> None:
    """Test both extremes on the modular network."""
    g = WeightedDigraph([NodeKind.AGENT] * 64, modular64_edges())

    assert greedy_partition(g, 0.0).partition == Partition.grand(64)
    assert greedy_partition(g, 100.0).partition == Partition.singletons(64)


def _joins_modules(p: Partition) -> bool:
    # Every four-agent module sits inside one set.
    labels = p.assignment
    return all(
        len({labels[node] for node in module}) == 1 for module in module_partition(4)
    )


@pytest.mark.slow
def test__greedy_partition__modular_sweep() -> None:
    """Test that greedy ascent on the modular network only stops at extremes."""
    g = WeightedDigraph([NodeKind.AGENT] * 64, modular64_edges())
    for alpha in np.logspace(-8, 2, 41):
        result = greedy_partition(g, float(alpha))

        assert result.partition.n_sets in (1, 64)
        assert result.partition == Partition.singletons(64) or _joins_modules(
            result.partition
        )
    # endfor


def test__greedy_partition__modular_tier_missed() -> None:
    """Test that single moves and merges from singletons miss the 16-agent tier."""
    g = WeightedDigraph([NodeKind.AGENT] * 64, modular64_edges())
    alpha = 1e3
    tiers = {
        size: partition_index(Partition.from_sets(module_partition(size)), g, alpha)
        for size in (1, 4, 16, 64)
    }
    result = greedy_partition(g, alpha)

    assert tiers[16] > max(tiers[1], tiers[4], tiers[64])
    assert result.objective < tiers[16]
    assert result.partition != Partition.from_sets(module_partition(16))


def test__modularity_bisect__triangles() -> None:
    """Test that two triangles are split into the triangles."""
    result = modularity_bisect(_triangles())

    assert result.partition == Partition([0, 0, 0, 1, 1, 1])
    assert result.objective == pytest.approx(0.5)
    assert result.modularity_q == pytest.approx(0.5)


def test__modularity_bisect__spectral() -> None:
    """Test the eigenvector path on the triangles."""
    with settings.localcontext(exact_split_limit=0):
        result = modularity_bisect(_triangles())

    # endwith
    assert result.partition == Partition([0, 0, 0, 1, 1, 1])
    assert result.status.is_ok()


def test__modularity_bisect__complete() -> None:
    """Test that a complete graph is not split."""
    edges = [(s, d, 1.0) for s in range(5) for d in range(5) if s != d]
    result = modularity_bisect(WeightedDigraph([NodeKind.AGENT] * 5, edges))

    assert result.partition == Partition.grand(5)
    assert result.objective == pytest.approx(0.0, abs=1e-12)


def test__modularity_bisect__best_first_split() -> None:
    """Test the enumerated first split against every bipartition, and Q."""
    rng = np.random.default_rng(21)
    for _ in range(10):
        g = random_digraph(rng, 8, 0.35)
        if g.n_edges == 0:
            continue

        matrix = ModularityMatrix.of(g)
        nodes = list(g.nodes)
        best = max(
            matrix.split_gain(nodes, np.array((1.0, *rest)))
            for rest in list(itertools.product((1.0, -1.0), repeat=7))[1:]
        )
        _, gain = best_split(matrix, nodes, np.random.default_rng(0))
        result = modularity_bisect(g)

        assert gain == pytest.approx(best, abs=1e-9)
        assert result.objective >= max(best, 0.0) - 1e-9
    # endfor


def test__best_split__spectral_oracle() -> None:
    """Test the eigenvector split of small groups against every bipartition."""
    rng = np.random.default_rng(5)
    agreed = 0
    for _ in range(30):
        n_nodes = int(rng.integers(4, 11))
        g = _connected(rng, n_nodes)
        matrix = ModularityMatrix.of(g)
        nodes = list(g.nodes)
        best = max(
            matrix.split_gain(nodes, np.array((1.0, *rest)))
            for rest in list(itertools.product((1.0, -1.0), repeat=n_nodes - 1))[1:]
        )
        with settings.localcontext(exact_split_limit=0):
            _, gain = best_split(matrix, nodes, np.random.default_rng(0))

        # endwith
        if gain >= best - 1e-9:
            agreed += 1

        assert gain >= best - 0.15
    # endfor

    # Single-node shifts stop short of the best split on a few percent of graphs.
    assert agreed >= 24


def test__modularity_bisect__fallback(caplog: pytest.LogCaptureFixture) -> None:
    """Test the random split when power iteration does not converge."""
    rng = np.random.default_rng(1)
    g = random_digraph(rng, 12, 0.3, symmetric=True)
    with settings.localcontext(exact_split_limit=0, power_iter_cap=1):
        with caplog.at_level(logging.WARNING):
            result = modularity_bisect(g)

        # endwith
    # endwith

    assert 'power iteration fallback' in result.status.text
    assert 'did not converge' in caplog.text
    assert result.objective >= 0.0


def test__modularity_bisect__modular() -> None:
    """Test that the modules of the modular network are recovered."""
    g = WeightedDigraph([NodeKind.AGENT] * 64, modular64_edges())
    result = modularity_bisect(g)

    assert result.partition == Partition.from_sets(module_partition(4))


def test__modularity_bisect__edgeless() -> None:
    """Test that a graph without edges is rejected."""
    with raises(RejectedInput, EmptyGraph):
        modularity_bisect(WeightedDigraph([NodeKind.AGENT] * 3))

    # endwith


def test__run_method__groups() -> None:
    """Test partitioning FSUs and expanding back to the nodes."""
    g = build_associated_graph(example_linear_system())
    fsus = select_fsu(g)
    result = run_method('bqp-exact', g, 0.1, groups=fsus)

    assert result.partition.n_nodes == g.n_nodes
    for members in fsus:
        assert len({result.partition.set_of(node) for node in members}) == 1

    assert result.objective == pytest.approx(bqp_objective(result.partition, g, 0.1))


def test__run_method__unknown() -> None:
    """Test that unknown or non-partitioning methods are rejected."""
    with pytest.raises(RejectedInput):
        run_method('k-means', _pair_graph())

    # endwith
    with pytest.raises(RejectedInput):
        run_method(Method.GIVEN, _pair_graph())

    # endwith
