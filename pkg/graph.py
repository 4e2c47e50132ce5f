# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Weighted directed graphs with kind-tagged nodes.

:class:`WeightedDigraph` is the substrate for every partitioner. Node ids are
dense 0-based integers; each node is tagged as an input, state, output or
agent node. Graphs are immutable after construction and can be shared across
threads.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Collection, Iterable, Sequence
import enum
import logging
import math

import networkx as nx
import numpy as np
from numpy.typing import NDArray

from .checks import imperative
from .errors import DimensionMismatch, Duplicate, NonFinite, UnknownNode

_logger = logging.getLogger(__name__)


class NodeKind(enum.Enum):
    """Role of a node."""

    INPUT = 'input'
    STATE = 'state'
    OUTPUT = 'output'
    AGENT = 'agent'


Edge = tuple[int, int, float]


class WeightedDigraph:
    """
    Immutable weighted digraph.

    >>> g = WeightedDigraph([NodeKind.AGENT] * 2, [(0, 1, 0.5)])
    >>> g.n_nodes, g.n_edges, g.weight(0, 1), g.weight(1, 0)
    (2, 1, 0.5, 0.0)

    :param kinds: Kind of each node; the position is the node id.
    :param edges: `(src, dst, weight)` triples.
    :param labels: Display label of each node. Defaults to 1-based ids.

    :raise RejectedInput: Edge to an unknown node, duplicate edge, or
      non-finite weight.
    """

    def __init__(
        self,
        kinds: Sequence[NodeKind],
        edges: Iterable[Edge] = (),
        labels: Sequence[str] | None = None,
    ) -> None:
        n_nodes = len(kinds)
        if labels is None:
            labels = [str(node + 1) for node in range(n_nodes)]

        imperative(
            len(labels) == n_nodes,
            "One label per node required",
            reason=DimensionMismatch('labels', n_nodes, len(labels)),
        )

        graph = nx.DiGraph()
        for node, (kind, label) in enumerate(zip(kinds, labels, strict=True)):
            graph.add_node(node, kind=NodeKind(kind), label=label)

        for src, dst, weight in edges:
            for end in (src, dst):
                imperative(
                    isinstance(end, (int, np.integer)) and 0 <= end < n_nodes,
                    f"Edge ({src}, {dst}) references unknown node {end}",
                    reason=UnknownNode(end),
                )
            # endfor
            imperative(
                not graph.has_edge(src, dst),
                f"Duplicate edge ({src}, {dst})",
                reason=Duplicate((src, dst)),
            )
            imperative(
                math.isfinite(weight),
                f"Edge ({src}, {dst}) has weight {weight}",
                reason=NonFinite(f"edge ({src}, {dst})"),
            )
            graph.add_edge(int(src), int(dst), weight=float(weight))
        # endfor

        self._graph: nx.DiGraph = nx.freeze(graph)

    def __repr__(self) -> str:
        return f"WeightedDigraph(n_nodes={self.n_nodes}, n_edges={self.n_edges})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WeightedDigraph):
            return NotImplemented

        return (
            self.kinds() == other.kinds()
            and self.labels() == other.labels()
            and self.edges() == other.edges()
        )

    def __hash__(self) -> int:
        return hash((tuple(self.kinds()), tuple(self.edges())))

    @property
    def n_nodes(self) -> int:
        """Number of nodes."""
        return int(self._graph.number_of_nodes())

    @property
    def n_edges(self) -> int:
        """Number of edges."""
        return int(self._graph.number_of_edges())

    @property
    def nodes(self) -> range:
        """Node ids."""
        return range(self.n_nodes)

    def as_networkx(self) -> nx.DiGraph:
        """Get the frozen `networkx` view with `kind`, `label` and `weight`."""
        return self._graph

    def check_node(self, node: int) -> None:
        """
        Reject node ids that do not exist.

        :raise RejectedInput: Unknown node.
        """
        imperative(
            isinstance(node, (int, np.integer)) and 0 <= node < self.n_nodes,
            f"Unknown node {node}",
            reason=UnknownNode(node),
        )

    def kind(self, node: int) -> NodeKind:
        """Get the kind of a node."""
        self.check_node(node)
        kind: NodeKind = self._graph.nodes[node]['kind']
        return kind

    def kinds(self) -> list[NodeKind]:
        """Get the kinds of all nodes, by id."""
        return [self._graph.nodes[node]['kind'] for node in self.nodes]

    def label(self, node: int) -> str:
        """Get the display label of a node."""
        self.check_node(node)
        label: str = self._graph.nodes[node]['label']
        return label

    def labels(self) -> list[str]:
        """Get the labels of all nodes, by id."""
        return [self._graph.nodes[node]['label'] for node in self.nodes]

    def nodes_of_kind(self, kind: NodeKind) -> list[int]:
        """Get the ids of all nodes of one kind, ascending."""
        return [node for node in self.nodes if self._graph.nodes[node]['kind'] == kind]

    def edges(self) -> list[Edge]:
        """Get all edges sorted by `(src, dst)`."""
        return sorted(
            (src, dst, data['weight'])
            for src, dst, data in self._graph.edges(data=True)
        )

    def has_edge(self, src: int, dst: int) -> bool:
        """Tell whether the edge `src -> dst` exists."""
        return bool(self._graph.has_edge(src, dst))

    def weight(self, src: int, dst: int) -> float:
        """Get the weight of `src -> dst`, 0 if there is no such edge."""
        data = self._graph.get_edge_data(src, dst)
        return 0.0 if data is None else float(data['weight'])

    def successors(self, node: int) -> list[int]:
        """Get the heads of the edges leaving `node`."""
        self.check_node(node)
        return sorted(self._graph.successors(node))

    def predecessors(self, node: int) -> list[int]:
        """Get the tails of the edges entering `node`."""
        self.check_node(node)
        return sorted(self._graph.predecessors(node))

    def weight_matrix(self) -> NDArray[np.float64]:
        """Get the matrix `W` with `W[src, dst]` the weight of `src -> dst`."""
        matrix = np.zeros((self.n_nodes, self.n_nodes))
        for src, dst, weight in self.edges():
            matrix[src, dst] = weight

        return matrix

    def permuted(self, permutation: Sequence[int]) -> WeightedDigraph:
        """
        Relabel nodes: node `i` becomes node `permutation[i]`.

        :param permutation: A permutation of `range(n_nodes)`.
        """
        imperative(
            sorted(permutation) == list(self.nodes),
            "Not a permutation of the node ids",
            reason=DimensionMismatch('permutation', self.n_nodes, len(permutation)),
        )
        kinds: list[NodeKind] = [NodeKind.AGENT] * self.n_nodes
        labels = [''] * self.n_nodes
        for old, new in enumerate(permutation):
            kinds[new] = self.kind(old)
            labels[new] = self.label(old)

        edges = [
            (permutation[src], permutation[dst], weight)
            for src, dst, weight in self.edges()
        ]
        return WeightedDigraph(kinds, edges, labels)


def neighborhood(g: WeightedDigraph, node: int) -> frozenset[int]:
    """
    Get the nodes joined to `node` by an edge in either direction.

    A self-loop does not make a node its own neighbour.

    >>> g = WeightedDigraph([NodeKind.AGENT] * 3, [(0, 1, 1.0), (2, 0, 1.0)])
    >>> sorted(neighborhood(g, 0))
    [1, 2]

    :raise RejectedInput: Unknown node.
    """
    g.check_node(node)
    graph = g.as_networkx()
    around = set(graph.successors(node)) | set(graph.predecessors(node))
    around.discard(node)
    return frozenset(around)


def frontier(g: WeightedDigraph, subset: Collection[int]) -> frozenset[int]:
    """
    Get the nodes of `subset` that are adjacent to a node outside it.

    :raise RejectedInput: Unknown node in `subset`.
    """
    inside = set(subset)
    for node in inside:
        g.check_node(node)

    return frozenset(
        node for node in inside if any(n not in inside for n in neighborhood(g, node))
    )


def contract(g: WeightedDigraph, groups: Sequence[Collection[int]]) -> WeightedDigraph:
    """
    Collapse each group of nodes into one agent node.

    The weight of an edge between two groups is the sum of the absolute weights
    of the member edges; the weight inside a group becomes a self-loop.

    :param g: Graph to contract.
    :param groups: Disjoint node groups covering `g`.

    :raise RejectedInput: Groups overlap or miss nodes.
    """
    owner: dict[int, int] = {}
    for index, group in enumerate(groups):
        for node in group:
            g.check_node(node)
            imperative(
                node not in owner,
                f"Node {node} in two groups",
                reason=Duplicate(node),
            )
            owner[node] = index
        # endfor
    # endfor
    imperative(
        len(owner) == g.n_nodes,
        "Groups do not cover the graph",
        reason=DimensionMismatch('groups', g.n_nodes, len(owner)),
    )

    totals: dict[tuple[int, int], float] = {}
    for src, dst, weight in g.edges():
        key = (owner[src], owner[dst])
        totals[key] = totals.get(key, 0.0) + abs(weight)

    edges = [(src, dst, weight) for (src, dst), weight in sorted(totals.items())]
    return WeightedDigraph([NodeKind.AGENT] * len(groups), edges)


def degree_histogram(g: WeightedDigraph) -> dict[int, int]:
    """
    Count nodes by the size of their neighbourhood.

    >>> g = WeightedDigraph([NodeKind.AGENT] * 3, [(0, 1, 1.0), (1, 0, 1.0)])
    >>> degree_histogram(g)
    {0: 1, 1: 2}
    """
    counts = Counter(len(neighborhood(g, node)) for node in g.nodes)
    return dict(sorted(counts.items()))


def weight_tiers(g: WeightedDigraph) -> list[float]:
    """Get the distinct edge weights, ascending."""
    return sorted({weight for _, _, weight in g.edges()})


class BipartiteGraph:
    """
    Variables on the left, constraints on the right.

    :param variables: Names of the variables; the position is the id.
    :param n_constraints: Number of constraints.
    :param incidences: `(variable, constraint)` pairs.

    :raise RejectedInput: Unknown ids or duplicate incidence.
    """

    def __init__(
        self,
        variables: Sequence[str],
        n_constraints: int,
        incidences: Iterable[tuple[int, int]],
    ) -> None:
        self.variables = tuple(variables)
        self.n_constraints = n_constraints

        seen: set[tuple[int, int]] = set()
        for variable, constraint in incidences:
            imperative(
                0 <= variable < len(self.variables)
                and 0 <= constraint < n_constraints,
                f"Incidence ({variable}, {constraint}) out of range",
                reason=UnknownNode((variable, constraint)),
            )
            imperative(
                (variable, constraint) not in seen,
                f"Duplicate incidence ({variable}, {constraint})",
                reason=Duplicate((variable, constraint)),
            )
            seen.add((variable, constraint))
        # endfor

        self.incidences: tuple[tuple[int, int], ...] = tuple(sorted(seen))

    @property
    def left_nodes(self) -> range:
        """Variable ids."""
        return range(len(self.variables))

    @property
    def right_nodes(self) -> range:
        """Constraint ids."""
        return range(self.n_constraints)

    def variables_of(self, constraint: int) -> list[int]:
        """Get the variables taking part in a constraint."""
        return [v for v, c in self.incidences if c == constraint]

    def constraints_of(self, variable: int) -> list[int]:
        """Get the constraints a variable takes part in."""
        return [c for v, c in self.incidences if v == variable]
