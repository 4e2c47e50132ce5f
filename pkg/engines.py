# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Partitioning engines.

- :func:`select_fsu`: grow one fundamental system unit (FSU) around every
  input node.
- :func:`solve_bqp_exact`: branch-and-bound over set partitions for the global
  minimum of :func:`partition.bqp_objective`.
- :func:`solve_bqp_local`: steepest descent over node moves, swaps and set
  merges, with Kernighan-Lin passes to leave shallow minima.
- :func:`greedy_partition`: ascent of :func:`partition.partition_index`.
- :func:`modularity_bisect`: recursive spectral bisection.
- :func:`oracle_partition`: exhaustive search, for tests and small graphs.

Every engine returns a :class:`partition.PartitionResult` whose partition
index and modularity are filled in.
"""

from __future__ import annotations

from collections.abc import Collection, Sequence
import itertools
import logging

import networkx as nx
import numpy as np
from numpy.typing import NDArray

from . import settings
from .checks import expect, imperative
from .errors import EmptyGraph, RejectedInput, TooLarge, Unactuated
from .graph import NodeKind, WeightedDigraph, contract
from .handler import Status
from .partition import (
    Method,
    ModularityMatrix,
    Partition,
    PartitionResult,
    bqp_objective,
    enumerate_partitions_oracle,
    modularity,
    partition_index,
)

_logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int_]

# Smallest change that counts as an improvement.
_IMPROVEMENT = 1e-12
# Objective values this close to the best are kept as ties.
_TIE = 1e-9
_LOCAL_ROUNDS = 10000


def _annotate(result: PartitionResult, g: WeightedDigraph) -> PartitionResult:
    alpha = result.alpha if result.alpha is not None else 0.0
    result.p_idx = partition_index(result.partition, g, alpha)
    try:
        result.modularity_q = modularity(g, result.partition)

    except RejectedInput as exception:
        if not exception.get_reason().isa(EmptyGraph):
            raise

        result.modularity_q = None

    # endtry

    _logger.info(
        "%s found %s (objective %.6g)",
        result.method.value,
        result.partition.describe(),
        result.objective,
    )
    return result


def select_fsu(g: WeightedDigraph) -> list[list[int]]:
    """
    Group the nodes of an associated graph into FSUs.

    Every FSU starts from one input node, in ascending order. Repeatedly, the
    unassigned node with the strongest edge (either direction) to a member of
    some FSU joins it; ties go to the lowest FSU, then the lowest node. Output
    nodes without edges join FSU 0 with a warning.

    :return: Members of each FSU, ascending.

    :raise RejectedInput: No input node, or a state node without an undirected
      path to any input.
    """
    inputs = g.nodes_of_kind(NodeKind.INPUT)
    states = g.nodes_of_kind(NodeKind.STATE)

    actuated: set[int] = set()
    for component in nx.weakly_connected_components(g.as_networkx()):
        if any(node in component for node in inputs):
            actuated.update(component)

    # endfor
    unactuated = [node for node in states if node not in actuated]
    imperative(
        not unactuated,
        f"States {[node + 1 for node in unactuated]} cannot be reached from an input",
        reason=Unactuated(unactuated),
    )

    weights = np.abs(g.weight_matrix())
    strength = np.maximum(weights, weights.T)
    adjacent = np.zeros_like(strength, dtype=bool)
    for src, dst, _ in g.edges():
        adjacent[src, dst] = adjacent[dst, src] = True

    owner = np.full(g.n_nodes, -1)
    for fsu, node in enumerate(inputs):
        owner[node] = fsu

    while True:
        # Best (strength, fsu, node) among unassigned nodes next to an FSU.
        best: tuple[float, int, int] | None = None
        for node in np.flatnonzero(owner < 0):
            members = np.flatnonzero((owner >= 0) & adjacent[node])
            for member in members:
                candidate = (
                    float(strength[node, member]), int(owner[member]), int(node)
                )
                if best is None or (
                    candidate[0] > best[0]
                    or (candidate[0] == best[0] and candidate[1:] < best[1:])
                ):
                    best = candidate

            # endfor
        # endfor

        if best is None:
            break

        owner[best[2]] = best[1]
    # endwhile

    for node in np.flatnonzero(owner < 0):
        expect(
            False,
            f"Node {g.label(int(node))} has no coupling and joins FSU 1",
            throw=False,
            logger=_logger,
        )
        owner[node] = 0
    # endfor

    return [
        [int(node) for node in np.flatnonzero(owner == fsu)]
        for fsu in range(len(inputs))
    ]


def _bqp_parts(g: WeightedDigraph) -> tuple[FloatArray, FloatArray, float]:
    # (absolute weights, self-loop weights, total)
    weights = np.abs(g.weight_matrix())
    return weights, np.diag(weights).copy(), float(weights.sum())


def solve_bqp_exact(
    g: WeightedDigraph, alpha: float, max_nodes: int | None = None
) -> PartitionResult:
    """
    Find a global minimizer of the BQP objective.

    Partitions are enumerated as restricted-growth strings, depth first. A
    branch is cut when a lower bound of any completion exceeds the best
    objective found. Ties are resolved by the lexicographically smallest
    assignment.

    :param max_nodes: Largest graph accepted. `None` for the
      `bqp_exact_max_nodes` setting.

    :raise RejectedInput: Too many nodes, or `alpha < 0`.
    """
    limit = settings.get('bqp_exact_max_nodes') if max_nodes is None else max_nodes
    imperative(alpha >= 0, f"alpha = {alpha} must be nonnegative")
    n = g.n_nodes
    imperative(
        n <= limit,
        f"Exact BQP limited to {limit} nodes, got {n}",
        reason=TooLarge('solve_bqp_exact', n, limit, 'use solve_bqp_local'),
    )
    if n == 0:
        return PartitionResult(Partition([]), 0.0, Method.BQP_EXACT, alpha)

    weights, loops, total = _bqp_parts(g)
    pair = weights + weights.T
    loop_total = float(loops.sum())
    # Weight on edges touching a node at index >= d.
    remaining = [total - float(weights[:d, :d].sum()) for d in range(n + 1)]

    labels = [0] * n
    set_members: list[list[int]] = []
    set_loops: list[float] = []
    best = np.inf
    ties: list[tuple[int, ...]] = []

    def visit(depth: int, inside: float, loop_term: float, size: float) -> None:
        nonlocal best, ties
        if depth == n:
            value = 2 * total - 4 * inside - 2 * loop_term + alpha * size
            if value < best - _TIE:
                best = value
                ties = [tuple(labels)]

            elif value <= best + _TIE:
                best = min(best, value)
                ties.append(tuple(labels))

            # endif
            return

        bound = (
            2 * total
            - 4 * (inside + remaining[depth])
            - 2 * n * loop_total
            + alpha * (size + n - depth)
        )
        if bound > best + _TIE:
            return

        for label in range(len(set_members) + 1):
            if label == len(set_members):
                set_members.append([])
                set_loops.append(0.0)

            members = set_members[label]
            gained = float(pair[depth, members].sum()) + loops[depth]
            count = len(members)
            loop_gain = set_loops[label] + (count + 1) * loops[depth]

            labels[depth] = label
            members.append(depth)
            set_loops[label] += loops[depth]
            visit(
                depth + 1, inside + gained, loop_term + loop_gain, size + 2 * count + 1
            )
            members.pop()
            set_loops[label] -= loops[depth]

            if not members:
                set_members.pop()
                set_loops.pop()

            # endif
        # endfor

    visit(0, 0.0, 0.0, 0.0)
    _logger.debug("Exact BQP kept %d tied assignments", len(ties))

    scored = [
        (bqp_objective(Partition(assignment), g, alpha), assignment)
        for assignment in ties
    ]
    objective, assignment = min(scored)
    return _annotate(
        PartitionResult(Partition(assignment), objective, Method.BQP_EXACT, alpha), g
    )


class _LocalState:
    """Assignment with the quantities needed to price moves."""

    def __init__(
        self, pair: FloatArray, loops: FloatArray, labels: IntArray, alpha: float
    ) -> None:
        self.pair = pair
        self.loops = loops
        self.alpha = alpha
        self.labels = Partition(labels.tolist()).labels()

    def _tables(self) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
        n_sets = int(self.labels.max()) + 1
        onehot = np.eye(n_sets)[self.labels]
        coupling = self.pair @ onehot
        sizes = onehot.sum(axis=0)
        set_loops = self.loops @ onehot
        return onehot, coupling, sizes, set_loops

    def moves(self) -> FloatArray:
        """
        Objective change of moving node `v` to set `b` at `[v, b]`.

        The last column is a new set. Invalid moves are `inf`.
        """
        _, coupling, sizes, set_loops = self._tables()
        n = len(self.labels)
        own = self.labels
        coupling = np.hstack([coupling, np.zeros((n, 1))])
        target_sizes = np.append(sizes, 0.0)[None, :]
        target_loops = np.append(set_loops, 0.0)[None, :]
        own_sizes = sizes[own][:, None]
        own_loops = set_loops[own][:, None]
        loop = self.loops[:, None]

        d_inside = coupling - coupling[np.arange(n), own][:, None]
        d_loop = (-own_loops - (own_sizes - 1) * loop) + (
            target_loops + (target_sizes + 1) * loop
        )
        d_size = 2 * (target_sizes - own_sizes) + 2
        delta = -4 * d_inside - 2 * d_loop + self.alpha * d_size

        delta[np.arange(n), own] = np.inf
        delta[sizes[own] == 1, -1] = np.inf
        return delta

    def swaps(self) -> FloatArray:
        """Objective change of exchanging the sets of `v` and `w` at `[v, w]`."""
        _, coupling, sizes, _ = self._tables()
        n = len(self.labels)
        own = self.labels
        across = coupling[:, own]
        mine = coupling[np.arange(n), own]
        d_inside = across - mine[:, None] + across.T - mine[None, :] - 2 * self.pair
        size_of = sizes[own]
        d_loop = (size_of[:, None] - size_of[None, :]) * (
            self.loops[None, :] - self.loops[:, None]
        )
        delta = -4 * d_inside - 2 * d_loop
        delta[own[:, None] == own[None, :]] = np.inf
        return delta

    def merges(self) -> FloatArray:
        """Objective change of merging sets `a < b` at `[a, b]`."""
        onehot, coupling, sizes, set_loops = self._tables()
        between = onehot.T @ coupling
        d_loop = np.outer(sizes, set_loops) + np.outer(set_loops, sizes)
        delta = -4 * between - 2 * d_loop + 2 * self.alpha * np.outer(sizes, sizes)
        delta[np.tril_indices_from(delta)] = np.inf
        return delta

    def apply_move(self, node: int, target: int) -> None:
        labels = self.labels.copy()
        labels[node] = target
        self.labels = Partition(labels.tolist()).labels()

    def apply_swap(self, first: int, second: int) -> None:
        labels = self.labels.copy()
        labels[first], labels[second] = labels[second], labels[first]
        self.labels = Partition(labels.tolist()).labels()

    def apply_merge(self, first: int, second: int) -> None:
        labels = self.labels.copy()
        labels[labels == second] = first
        self.labels = Partition(labels.tolist()).labels()


def _pick(
    delta: FloatArray, rng: np.random.Generator
) -> tuple[float, tuple[int, ...]]:
    lowest = float(delta.min()) if delta.size else np.inf
    if not np.isfinite(lowest):
        return np.inf, ()

    tied = np.argwhere(delta <= lowest + _IMPROVEMENT)
    chosen = tied[rng.integers(len(tied))] if len(tied) > 1 else tied[0]
    return lowest, tuple(int(i) for i in chosen)


def _descend(state: _LocalState, rng: np.random.Generator, status: Status) -> None:
    for _ in range(_LOCAL_ROUNDS):
        options = [
            (*_pick(state.moves(), rng), state.apply_move),
            (*_pick(state.swaps(), rng), state.apply_swap),
            (*_pick(state.merges(), rng), state.apply_merge),
        ]
        value, where, apply = min(options, key=lambda option: option[0])
        if value >= -_IMPROVEMENT:
            return

        apply(*where)
    # endfor

    status.flag('local search round limit')


def _kernighan_lin_pass(state: _LocalState, rng: np.random.Generator) -> bool:
    """
    Move every node once, best move first, and keep the best prefix.

    :return: Whether the kept prefix improved the objective.
    """
    n = len(state.labels)
    locked = np.zeros(n, dtype=bool)
    snapshots = [state.labels.copy()]
    cumulative = 0.0
    best_total = 0.0
    best_index = 0
    for step in range(1, n + 1):
        delta = state.moves()
        delta[locked] = np.inf
        value, where = _pick(delta, rng)
        if not where:
            break

        node, target = where
        state.apply_move(node, target)
        locked[node] = True
        cumulative += value
        snapshots.append(state.labels.copy())
        if cumulative < best_total - _IMPROVEMENT:
            best_total = cumulative
            best_index = step

        # endif
    # endfor

    state.labels = snapshots[best_index]
    return best_index > 0


def solve_bqp_local(g: WeightedDigraph, alpha: float, seed: int = 0) -> PartitionResult:
    """
    Approximate the BQP minimum from the all-singletons partition.

    Steepest descent applies the best node move, swap or set merge until none
    improves; a Kernighan-Lin pass then tries to escape, and descent resumes
    when it succeeds. `seed` only decides between equally good moves.

    :raise RejectedInput: `alpha < 0`.
    """
    imperative(alpha >= 0, f"alpha = {alpha} must be nonnegative")
    status = Status()
    if g.n_nodes == 0:
        return PartitionResult(
            Partition([]), 0.0, Method.BQP_LOCAL, alpha, status=status
        )

    weights, loops, _ = _bqp_parts(g)
    pair = weights + weights.T
    np.fill_diagonal(pair, 0.0)
    rng = np.random.default_rng(seed)
    state = _LocalState(pair, loops, np.arange(g.n_nodes), alpha)

    _descend(state, rng, status)
    while _kernighan_lin_pass(state, rng):
        _descend(state, rng, status)
        if not status.is_ok():
            break

    # endwhile

    partition = Partition(state.labels.tolist())
    result = PartitionResult(
        partition,
        bqp_objective(partition, g, alpha),
        Method.BQP_LOCAL,
        alpha,
        status=status,
    )
    return _annotate(result, g)


def greedy_partition(g: WeightedDigraph, alpha: float) -> PartitionResult:
    """
    Ascend the partition index from the all-singletons partition.

    Each round evaluates moving one node to another set (or to a new set) and
    merging two sets, and applies the candidate that raises the index most.
    Ties go to the lowest source node, then the lowest target set. The search
    stops when nothing raises the index.

    :raise RejectedInput: `alpha < 0`.
    """
    imperative(alpha >= 0, f"alpha = {alpha} must be nonnegative")
    n = g.n_nodes
    if n == 0:
        return PartitionResult(Partition([]), alpha, Method.GREEDY, alpha)

    weights = np.abs(g.weight_matrix())
    pair = weights + weights.T
    np.fill_diagonal(pair, 0.0)
    total = float(weights.sum())

    def index(inside: float, size: float) -> float:
        return inside / (1 + 2 * (total - inside)) + alpha / (1 + size)

    labels = np.arange(n)
    inside = float(np.trace(weights))
    size = float(n)
    history = [index(inside, size)]
    while True:
        n_sets = int(labels.max()) + 1
        onehot = np.eye(n_sets)[labels]
        coupling = pair @ onehot
        sizes = onehot.sum(axis=0)
        first_member = [int(np.flatnonzero(labels == s)[0]) for s in range(n_sets)]

        current = history[-1]
        # (gain, -source, -target, -kind) is maximized; kind 0 moves, 1 merges.
        best: tuple[float, int, int, int] | None = None
        for node in range(n):
            own = int(labels[node])
            for target in range(n_sets + 1):
                if target == own or (target == n_sets and sizes[own] == 1):
                    continue

                if target < n_sets:
                    joined = float(coupling[node, target])
                    target_size = float(sizes[target])

                else:
                    joined, target_size = 0.0, 0.0

                # endif
                gained = joined - coupling[node, own]
                resized = 2 * (target_size - sizes[own]) + 2
                gain = index(inside + gained, size + resized) - current
                candidate = (gain, -node, -target, 0)
                if best is None or candidate > best:
                    best = candidate

            # endfor
        # endfor

        between = onehot.T @ coupling
        for first, second in itertools.combinations(range(n_sets), 2):
            resized = 2 * sizes[first] * sizes[second]
            gain = index(inside + between[first, second], size + resized) - current
            candidate = (gain, -first_member[first], -second, -1)
            if best is None or candidate > best:
                best = candidate

        # endfor

        if best is None or best[0] <= _IMPROVEMENT:
            break

        _, source, target, kind = best
        if kind == 0:
            node = -source
            labels[node] = -target

        else:
            labels[labels == -target] = labels[-source]

        labels = Partition(labels.tolist()).labels()
        same = labels[:, None] == labels[None, :]
        inside = float(weights[same].sum())
        size = float(np.bincount(labels) @ np.bincount(labels))
        history.append(index(inside, size))
        _logger.debug("Greedy move %s raised the index to %.6g", best[1:], history[-1])
    # endwhile

    partition = Partition(labels.tolist())
    result = PartitionResult(
        partition,
        partition_index(partition, g, alpha),
        Method.GREEDY,
        alpha,
        history=tuple(history),
    )
    return _annotate(result, g)


def _fine_tune(block: FloatArray, signs: FloatArray) -> FloatArray:
    # Flip single nodes while s^T B s grows.
    signs = signs.copy()
    diagonal = np.diag(block)
    for _ in range(len(signs) ** 2 + 1):
        flips = -4 * signs * (block @ signs - diagonal * signs)
        best = int(np.argmax(flips))
        if flips[best] <= _IMPROVEMENT:
            break

        signs[best] = -signs[best]
    # endfor

    return signs


def best_split(
    matrix: ModularityMatrix,
    nodes: Sequence[int],
    rng: np.random.Generator,
    status: Status | None = None,
) -> tuple[FloatArray, float]:
    """
    Find a split of `nodes` that gains the most modularity.

    Groups of at most `exact_split_limit` nodes are split by trying every sign
    vector. Larger groups use the signs of the leading eigenvector of the
    generalized modularity matrix, found by power iteration, followed by
    single-node shifts. Without convergence a random split is shifted instead
    and `status` is flagged.

    :return: Signs (+1 or -1) of the nodes and the modularity gain.
    """
    block = matrix.restricted(nodes)
    size = len(nodes)
    if size < 2:
        return np.ones(size), 0.0

    if size <= settings.get('exact_split_limit'):
        candidates = np.array(
            [(1.0, *rest) for rest in itertools.product((1.0, -1.0), repeat=size - 1)]
        )[1:]
        gains = np.einsum('ij,jk,ik->i', candidates, block, candidates)
        chosen = int(np.argmax(gains))
        return candidates[chosen], float(gains[chosen]) / (2 * matrix.m)

    shift = float(np.abs(block).sum(axis=1).max())
    shifted = block + shift * np.eye(size)
    vector = np.ones(size) + 1e-3 * rng.standard_normal(size)
    vector /= np.linalg.norm(vector)
    converged = False
    for _ in range(settings.get('power_iter_cap')):
        following = shifted @ vector
        norm = np.linalg.norm(following)
        if norm == 0:
            break

        following /= norm
        if np.linalg.norm(following - vector) < 1e-10:
            vector = following
            converged = True
            break

        vector = following
    # endfor

    if converged:
        if float(vector @ block @ vector) <= settings.get('zero_tol'):
            return np.ones(size), 0.0

        signs = np.where(vector >= 0, 1.0, -1.0)

    else:
        expect(
            False,
            f"Power iteration did not converge for a group of {size}",
            throw=False,
            logger=_logger,
        )
        if status is not None:
            status.flag('power iteration fallback')

        signs = rng.choice((-1.0, 1.0), size=size)

    # endif

    signs = _fine_tune(block, signs)
    return signs, float(signs @ block @ signs) / (2 * matrix.m)


def modularity_bisect(
    g: WeightedDigraph,
    min_gain: float = 1e-9,
    *,
    weighted: bool = False,
    seed: int = 0,
) -> PartitionResult:
    """
    Split the graph in two recursively while modularity grows by `min_gain`.

    :raise RejectedInput: The graph has no edges between distinct nodes.
    """
    matrix = ModularityMatrix.of(g, weighted=weighted)
    rng = np.random.default_rng(seed)
    status = Status()
    pending = [list(g.nodes)]
    final: list[list[int]] = []
    while pending:
        group = pending.pop(0)
        signs, gain = best_split(matrix, group, rng, status)
        plus = [node for node, sign in zip(group, signs, strict=True) if sign > 0]
        minus = [node for node, sign in zip(group, signs, strict=True) if sign < 0]
        if gain > min_gain and plus and minus:
            _logger.debug(
                "Split %d nodes into %d and %d", len(group), len(plus), len(minus)
            )
            pending.extend([plus, minus])

        else:
            final.append(group)

        # endif
    # endwhile

    partition = Partition.from_sets(final)
    result = PartitionResult(
        partition,
        matrix.q_of(partition.labels()),
        Method.MODULARITY,
        status=status,
    )
    return _annotate(result, g)


def oracle_partition(
    g: WeightedDigraph, alpha: float, *, objective: str = 'bqp'
) -> PartitionResult:
    """
    Search every partition for the best `'bqp'` (lowest) or `'index'` (highest).

    Ties go to the first partition in restricted-growth order.

    :raise RejectedInput: More than 13 nodes, or unknown objective.
    """
    imperative(
        objective in ('bqp', 'index'), f"Unknown objective {objective!r}"
    )
    best: tuple[float, Partition] | None = None
    for candidate in enumerate_partitions_oracle(g.n_nodes):
        if objective == 'bqp':
            value = bqp_objective(candidate, g, alpha)

        else:
            value = -partition_index(candidate, g, alpha)

        if best is None or value < best[0]:
            best = (value, candidate)

    # endfor
    assert best is not None  # for mypy

    value, partition = best
    result = PartitionResult(
        partition, value if objective == 'bqp' else -value, Method.ORACLE, alpha
    )
    return _annotate(result, g)


def run_method(
    method: Method | str,
    g: WeightedDigraph,
    alpha: float = 0.0,
    *,
    seed: int = 0,
    groups: Sequence[Collection[int]] | None = None,
) -> PartitionResult:
    """
    Run one engine by name.

    With `groups` (typically FSUs), the engine partitions the contracted graph
    of the groups and the result is expanded back to the nodes of `g`; the
    objective is then evaluated on `g`.

    :raise RejectedInput: Unknown method, or as the engine.
    """
    try:
        chosen = Method(method)

    except ValueError as exception:
        raise RejectedInput(f"Unknown method {method!r}") from exception

    # endtry

    target = g if groups is None else contract(g, groups)
    if chosen is Method.BQP_EXACT:
        result = solve_bqp_exact(target, alpha)

    elif chosen is Method.BQP_LOCAL:
        result = solve_bqp_local(target, alpha, seed)

    elif chosen is Method.GREEDY:
        result = greedy_partition(target, alpha)

    elif chosen is Method.MODULARITY:
        result = modularity_bisect(target, seed=seed)

    elif chosen is Method.ORACLE:
        result = oracle_partition(target, alpha)

    else:
        raise RejectedInput(f"Method {chosen.value!r} does not compute partitions")

    # endif

    if groups is None:
        return result

    partition = result.partition.expand(groups)
    if chosen is Method.GREEDY:
        objective = partition_index(partition, g, alpha)

    elif chosen is Method.MODULARITY:
        objective = modularity(g, partition)

    else:
        objective = bqp_objective(partition, g, alpha)

    # endif

    expanded = PartitionResult(
        partition, objective, chosen, result.alpha, status=result.status
    )
    return _annotate(expanded, g)
