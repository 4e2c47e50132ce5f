# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Partitions of graph nodes and the objectives that rate them.

- :func:`bqp_objective`: inter-set weight minus intra-set weight plus a size
  penalty scaled by the granularity `alpha` (to be minimized).
- :func:`partition_index`: intra weight over one plus frontier weight, plus
  `alpha` over one plus the size term (to be maximized).
- :func:`modularity`: in-set edge density against a degree-preserving null
  model, on the symmetrized graph.
"""

from __future__ import annotations

from collections.abc import Collection, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
import enum
import logging

import numpy as np
from numpy.typing import NDArray

from .checks import imperative
from .errors import (
    DimensionMismatch,
    EmptyGraph,
    InvalidPartition,
    TooLarge,
)
from .graph import WeightedDigraph
from .handler import Status

_logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

#: Largest `n` accepted by :func:`enumerate_partitions_oracle`.
ORACLE_MAX_NODES = 13


class Method(enum.Enum):
    """Engine that produced a partition."""

    BQP_EXACT = 'bqp-exact'
    BQP_LOCAL = 'bqp-local'
    GREEDY = 'greedy'
    MODULARITY = 'modularity'
    ORACLE = 'oracle'
    GIVEN = 'given'


class Partition:
    """
    Complete, non-overlapping assignment of nodes to sets.

    Set indices are canonical: sets are numbered in order of their smallest
    node, so equal partitions have equal assignments.

    >>> Partition([5, 5, 2]).assignment
    (0, 0, 1)

    :param assignment: Set label of every node, by node id, or a mapping
      covering ids `0..n-1`.

    :raise RejectedInput: Mapping misses nodes, or negative labels.
    """

    def __init__(self, assignment: Sequence[int] | Mapping[int, int]) -> None:
        if isinstance(assignment, Mapping):
            n_nodes = len(assignment)
            imperative(
                set(assignment) == set(range(n_nodes)),
                f"Assignment keys {sorted(assignment)} are not 0..{n_nodes - 1}",
                reason=InvalidPartition('not total'),
            )
            labels = [int(assignment[node]) for node in range(n_nodes)]

        else:
            labels = [int(label) for label in assignment]

        # endif

        imperative(
            all(label >= 0 for label in labels),
            "Set labels must be nonnegative",
            reason=InvalidPartition('negative label'),
        )
        canonical: dict[int, int] = {}
        for label in labels:
            canonical.setdefault(label, len(canonical))

        self._assignment: tuple[int, ...] = tuple(canonical[label] for label in labels)
        self._n_sets = len(canonical)

    @classmethod
    def from_sets(
        cls, sets: Sequence[Collection[int]], n_nodes: int | None = None
    ) -> Partition:
        """
        Build from explicit sets.

        >>> Partition.from_sets([[2], [0, 1]]).sets()
        [[0, 1], [2]]

        :raise RejectedInput: Empty set, overlap, or missing nodes.
        """
        owner: dict[int, int] = {}
        for index, members in enumerate(sets):
            imperative(
                len(members) > 0,
                f"Set {index} is empty",
                reason=InvalidPartition(f"empty set {index}"),
            )
            for node in members:
                imperative(
                    node not in owner,
                    f"Node {node} is in two sets",
                    reason=InvalidPartition(f"overlap at node {node}"),
                )
                owner[int(node)] = index
            # endfor
        # endfor

        total = len(owner) if n_nodes is None else n_nodes
        imperative(
            set(owner) == set(range(total)),
            f"Sets do not cover nodes 0..{total - 1}",
            reason=InvalidPartition('not total'),
        )
        return cls(owner)

    @classmethod
    def grand(cls, n_nodes: int) -> Partition:
        """A single set with every node."""
        return cls([0] * n_nodes)

    @classmethod
    def singletons(cls, n_nodes: int) -> Partition:
        """One set per node."""
        return cls(range(n_nodes))

    def __repr__(self) -> str:
        return f"Partition({self.sets()})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Partition):
            return NotImplemented

        return self._assignment == other._assignment

    def __hash__(self) -> int:
        return hash(self._assignment)

    @property
    def assignment(self) -> tuple[int, ...]:
        """Set index of every node."""
        return self._assignment

    @property
    def n_nodes(self) -> int:
        """Number of nodes."""
        return len(self._assignment)

    @property
    def n_sets(self) -> int:
        """Number of sets."""
        return self._n_sets

    def labels(self) -> NDArray[np.int_]:
        """Assignment as an integer array."""
        return np.array(self._assignment, dtype=int)

    def set_of(self, node: int) -> int:
        """Set index of a node."""
        return self._assignment[node]

    def sets(self) -> list[list[int]]:
        """Members of each set, ascending."""
        members: list[list[int]] = [[] for _ in range(self._n_sets)]
        for node, label in enumerate(self._assignment):
            members[label].append(node)

        return members

    def sizes(self) -> list[int]:
        """Size of each set."""
        return [len(members) for members in self.sets()]

    def is_grand(self) -> bool:
        """Tell whether all nodes share one set."""
        return self._n_sets == 1

    def describe(self) -> str:
        """Short label such as `'6 sets'`."""
        if self._n_sets == 1:
            return 'grand coalition'

        if self._n_sets == self.n_nodes:
            return f"{self.n_nodes} singletons"

        return f"{self._n_sets} sets"

    def expand(self, groups: Sequence[Collection[int]]) -> Partition:
        """
        Map a partition of groups to a partition of their members.

        :param groups: Members of each group; group `i` is node `i` of this
          partition.

        :raise RejectedInput: Group count differs, or groups overlap or miss
          members.
        """
        imperative(
            len(groups) == self.n_nodes,
            f"{len(groups)} groups for a partition of {self.n_nodes}",
            reason=DimensionMismatch('groups', self.n_nodes, len(groups)),
        )
        merged: list[list[int]] = [[] for _ in range(self._n_sets)]
        for group, members in enumerate(groups):
            merged[self._assignment[group]].extend(members)

        return Partition.from_sets(merged)


def check_total(p: Partition, g: WeightedDigraph) -> None:
    """
    Reject partitions whose node count differs from the graph's.

    :raise RejectedInput: Node count differs.
    """
    imperative(
        p.n_nodes == g.n_nodes,
        f"Partition of {p.n_nodes} nodes for a graph of {g.n_nodes}",
        reason=InvalidPartition('not total over graph'),
    )


@dataclass
class PartitionResult:
    """
    Partition with the value of the objective its engine optimized.

    `p_idx` and `modularity_q` are filled for every engine; `modularity_q` is
    `None` for graphs without edges. `history` holds the partition index after
    each accepted greedy move.
    """

    partition: Partition
    objective: float
    method: Method
    alpha: float | None = None
    p_idx: float | None = None
    modularity_q: float | None = None
    status: Status = field(default_factory=Status)
    history: tuple[float, ...] = ()


def _absolute(g: WeightedDigraph) -> FloatArray:
    return np.abs(g.weight_matrix())


def bqp_terms(p: Partition, g: WeightedDigraph) -> tuple[float, float, float]:
    """
    Inter, intra and size terms of the BQP objective.

    Intra sums `|w(i,i)| + |w(i,j)| + |w(j,i)| + |w(j,j)|` over ordered pairs
    inside a set; inter sums `|w(i,j)| + |w(j,i)|` over ordered pairs in
    different sets; size sums the squared set sizes.
    """
    check_total(p, g)
    weights = _absolute(g)
    labels = p.labels()
    same = labels[:, None] == labels[None, :]
    total = float(weights.sum())
    inside = float(weights[same].sum())
    loops = np.diag(weights)
    sizes = np.bincount(labels, minlength=p.n_sets)
    loop_sums = np.bincount(labels, weights=loops, minlength=p.n_sets)

    inter = 2 * (total - inside)
    intra = 2 * inside + 2 * float(sizes @ loop_sums)
    size = float(sizes @ sizes)
    return inter, intra, size


def bqp_objective(p: Partition, g: WeightedDigraph, alpha: float) -> float:
    """
    `W_inter - W_intra + alpha * W_size`.

    >>> from .graph import NodeKind
    >>> g = WeightedDigraph([NodeKind.AGENT] * 2, [(0, 1, 0.5)])
    >>> bqp_objective(Partition.grand(2), g, 0.0)
    -1.0
    >>> bqp_objective(Partition.singletons(2), g, 0.0)
    1.0
    """
    inter, intra, size = bqp_terms(p, g)
    return inter - intra + alpha * size


def index_terms(p: Partition, g: WeightedDigraph) -> tuple[float, float, float]:
    """
    Summed intra, inter (frontier) and size terms of the partition index.

    Intra sums `|w(s,t)|` over ordered pairs inside each set. Inter sums
    `|w(s,t)| + |w(t,s)|` over frontier pairs seen from each side.
    """
    check_total(p, g)
    weights = _absolute(g)
    labels = p.labels()
    same = labels[:, None] == labels[None, :]
    inside = float(weights[same].sum())
    crossing = float(weights.sum()) - inside
    sizes = np.bincount(labels, minlength=p.n_sets)
    return inside, 2 * crossing, float(sizes @ sizes)


def partition_index(p: Partition, g: WeightedDigraph, alpha: float) -> float:
    """
    `sum W_intra / (1 + sum W_inter) + alpha / (1 + sum W_size)`.

    >>> from .graph import NodeKind
    >>> g = WeightedDigraph([NodeKind.AGENT] * 2, [(0, 1, 0.5)])
    >>> partition_index(Partition.grand(2), g, 1.0)
    0.7
    """
    intra, inter, size = index_terms(p, g)
    return intra / (1 + inter) + alpha / (1 + size)


def symmetric_adjacency(g: WeightedDigraph, *, weighted: bool = False) -> FloatArray:
    """
    Undirected adjacency without self-loops.

    Unweighted: 1 wherever an edge joins the pair in either direction.
    Weighted: `|w(i,j)| + |w(j,i)|`.
    """
    weights = _absolute(g)
    if weighted:
        adjacency = weights + weights.T

    else:
        pattern = np.zeros_like(weights)
        for src, dst, _ in g.edges():
            pattern[src, dst] = 1.0

        adjacency = np.maximum(pattern, pattern.T)

    # endif

    np.fill_diagonal(adjacency, 0.0)
    return adjacency


@dataclass(frozen=True, eq=False)
class ModularityMatrix:
    """
    `B = A - k k^T / m` of the symmetrized graph.

    `m` is the number of arcs, twice the number of undirected edges, so
    `Q = s^T B s / (2 m)` for a split vector `s` of +-1.
    """

    B: FloatArray  # noqa: N815
    m: float
    degrees: FloatArray

    @classmethod
    def of(cls, g: WeightedDigraph, *, weighted: bool = False) -> ModularityMatrix:
        """
        Build the matrix of a graph.

        :raise RejectedInput: The graph has no edges between distinct nodes.
        """
        adjacency = symmetric_adjacency(g, weighted=weighted)
        arcs = float(adjacency.sum())
        imperative(
            arcs > 0,
            "Modularity needs at least one edge between distinct nodes",
            reason=EmptyGraph(),
        )
        degrees = adjacency.sum(axis=1)
        return cls(adjacency - np.outer(degrees, degrees) / arcs, arcs, degrees)

    def restricted(self, nodes: Sequence[int]) -> FloatArray:
        """
        Generalized matrix of a group: `B_ij - delta_ij sum_l B_il`.

        Splits of the group by `s` gain `s^T B_g s / (2 m)` modularity.
        """
        index = np.asarray(nodes, dtype=int)
        block = self.B[np.ix_(index, index)].copy()
        block[np.diag_indices_from(block)] -= block.sum(axis=1)
        return block

    def split_gain(self, nodes: Sequence[int], s: NDArray[np.float64]) -> float:
        """Modularity gained by splitting `nodes` by the signs in `s`."""
        return float(s @ self.restricted(nodes) @ s) / (2 * self.m)

    def q_of(self, labels: NDArray[np.int_]) -> float:
        """Modularity of an assignment."""
        same = labels[:, None] == labels[None, :]
        return float(self.B[same].sum()) / self.m


def modularity(g: WeightedDigraph, p: Partition, *, weighted: bool = False) -> float:
    """
    Modularity of a partition on the symmetrized graph.

    Self-loops are ignored. Unweighted adjacency unless `weighted`.

    >>> from .graph import NodeKind
    >>> triangles = [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]
    >>> g = WeightedDigraph([NodeKind.AGENT] * 6, [(s, d, 1.0) for s, d in triangles])
    >>> round(modularity(g, Partition([0, 0, 0, 1, 1, 1])), 12)
    0.5

    :raise RejectedInput: No edges, or partition not over `g`.
    """
    check_total(p, g)
    return ModularityMatrix.of(g, weighted=weighted).q_of(p.labels())


def enumerate_partitions_oracle(n: int) -> Iterator[Partition]:
    """
    Yield every set partition of `n` nodes once, in restricted-growth order.

    >>> [p.assignment for p in enumerate_partitions_oracle(3)]
    [(0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 1, 1), (0, 1, 2)]

    :raise RejectedInput: `n` outside `1..13`.
    """
    imperative(
        1 <= n <= ORACLE_MAX_NODES,
        f"Cannot enumerate partitions of {n} nodes",
        reason=TooLarge('enumerate_partitions_oracle', n, ORACLE_MAX_NODES),
    )
    growth = [0] * n
    maxima = [0] * n
    while True:
        yield Partition(growth)

        position = n - 1
        while position > 0 and growth[position] == maxima[position - 1] + 1:
            position -= 1

        if position == 0:
            return

        growth[position] += 1
        maxima[position] = max(maxima[position - 1], growth[position])
        for later in range(position + 1, n):
            growth[later] = 0
            maxima[later] = maxima[position]
        # endfor
    # endwhile
