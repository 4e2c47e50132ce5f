# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Graph representations of dynamical systems.

- The associated graph of one system has a node per input, state and output
  and an edge wherever one variable enters the update of another.
- The agent graph of a network has a node per subsystem and an edge wherever
  a coupling gain maps one subsystem into another.
- The bipartite graph relates variables to the constraints they appear in.
"""

from __future__ import annotations

from collections.abc import Callable, Collection, Mapping, Sequence
import logging

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import settings
from .checks import finite, imperative, precondition
from .errors import DanglingIndex, DimensionMismatch, NonFinite, UnsupportedModel
from .graph import BipartiteGraph, Edge, NodeKind, WeightedDigraph
from .models import LinearSubsystem, NetworkModel

_logger = logging.getLogger(__name__)

VectorField = Callable[[NDArray[np.float64], NDArray[np.float64]], ArrayLike]
OutputMap = Callable[[NDArray[np.float64]], ArrayLike]


def _variable_layout(n_x: int, n_u: int, n_y: int) -> tuple[list[NodeKind], list[str]]:
    kinds = [NodeKind.INPUT] * n_u + [NodeKind.STATE] * n_x + [NodeKind.OUTPUT] * n_y
    labels = (
        [f"u{i + 1}" for i in range(n_u)]
        + [f"x{i + 1}" for i in range(n_x)]
        + [f"y{i + 1}" for i in range(n_y)]
    )
    return kinds, labels


def _pattern_edges(
    matrix: NDArray[np.float64], src_offset: int, dst_offset: int, tolerance: float
) -> list[Edge]:
    # Entry (row j, column i) is the edge i -> j.
    rows, columns = np.nonzero(np.abs(matrix) > tolerance)
    return [
        (src_offset + int(i), dst_offset + int(j), float(matrix[j, i]))
        for j, i in zip(rows, columns, strict=True)
    ]


def build_associated_graph(sys: LinearSubsystem) -> WeightedDigraph:
    """
    Build the associated graph of a linear system.

    Nodes are ordered inputs, states, outputs. Edge `u_i -> x_j` carries
    `B[j, i]`, `x_i -> x_j` carries `A[j, i]`, `x_i -> y_j` carries `C[j, i]`;
    zero entries give no edge.

    >>> sys = LinearSubsystem([[0.5, 0.0], [0.2, 0.1]], [[1.0], [0.0]])
    >>> g = build_associated_graph(sys)
    >>> [(g.label(s), g.label(d), w) for s, d, w in g.edges()]
    [('u1', 'x1', 1.0), ('x1', 'x1', 0.5), ('x1', 'x2', 0.2), ('x2', 'x2', 0.1)]

    :raise RejectedInput: `sys` is not linear.
    """
    imperative(
        isinstance(sys, LinearSubsystem),
        "The associated graph needs a linear system",
        reason=UnsupportedModel(type(sys).__name__),
    )
    n_x, n_u, n_y = sys.dims
    kinds, labels = _variable_layout(n_x, n_u, n_y)

    edges = _pattern_edges(sys.B, 0, n_u, 0.0)
    edges += _pattern_edges(sys.A, n_u, n_u, 0.0)
    if sys.C is not None:
        edges += _pattern_edges(sys.C, n_u, n_u + n_x, 0.0)

    return WeightedDigraph(kinds, edges, labels)


def _central_jacobian(
    function: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    point: NDArray[np.float64],
    step: float,
    what: str,
) -> NDArray[np.float64]:
    columns = []
    for index in range(point.size):
        shift = np.zeros(point.size)
        shift[index] = step
        upper = finite(what, function(point + shift))
        lower = finite(what, function(point - shift))
        columns.append((upper - lower) / (2 * step))
    # endfor

    if not columns:
        return np.zeros((finite(what, function(point)).size, 0))

    return np.column_stack(columns)


def build_associated_graph_nonlinear(
    f: VectorField,
    h: OutputMap | None,
    x: ArrayLike,
    u: ArrayLike,
    step: float | None = None,
) -> WeightedDigraph:
    """
    Build the associated graph of `x+ = f(x, u)`, `y = h(x)` around a point.

    Weights are central finite-difference estimates of the partial
    derivatives; entries with magnitude below the `zero_tol` setting give no
    edge.

    >>> g = build_associated_graph_nonlinear(lambda x, u: x**2 + u, None, [3.0], [0.0])
    >>> [(g.label(s), g.label(d), round(w, 6)) for s, d, w in g.edges()]
    [('u1', 'x1', 1.0), ('x1', 'x1', 6.0)]

    :param f: State update.
    :param h: Output map, or `None` for no outputs.
    :param x: State at which to differentiate.
    :param u: Input at which to differentiate.
    :param step: Difference step. The `fd_step` setting if `None`.

    :raise RejectedInput: Non-finite evaluation, or `step <= 0`.
    """
    step = settings.get('fd_step') if step is None else step
    tolerance = settings.get('zero_tol')
    imperative(step > 0, f"Step must be positive, got {step}", reason=NonFinite('step'))

    state = finite('x', x).ravel()
    inputs = finite('u', u).ravel()
    n_x, n_u = state.size, inputs.size

    with precondition():
        value = finite('f', f(state, inputs)).ravel()
        imperative(
            value.size == n_x,
            f"f returns {value.size} values for {n_x} states",
            reason=DimensionMismatch('f', n_x, value.size),
        )
        d_state = _central_jacobian(lambda v: np.ravel(f(v, inputs)), state, step, 'f')
        d_input = _central_jacobian(lambda v: np.ravel(f(state, v)), inputs, step, 'f')
        if h is None:
            d_output = np.zeros((0, n_x))

        else:
            d_output = _central_jacobian(lambda v: np.ravel(h(v)), state, step, 'h')

    # endwith

    n_y = d_output.shape[0]
    kinds, labels = _variable_layout(n_x, n_u, n_y)
    edges = _pattern_edges(d_input, 0, n_u, tolerance)
    edges += _pattern_edges(d_state, n_u, n_u, tolerance)
    edges += _pattern_edges(d_output, n_u, n_u + n_x, tolerance)
    _logger.debug("Linearized graph has %d edges", len(edges))

    return WeightedDigraph(kinds, edges, labels)


def build_agent_graph(net: NetworkModel) -> WeightedDigraph:
    """
    Build the graph with one node per subsystem.

    Edge `j -> i` carries the Frobenius norm of the gain from `j` into `i`;
    zero gains give no edge.
    """
    edges = []
    for coupling in net.couplings:
        strength = float(np.linalg.norm(coupling.gain))
        if strength > 0:
            edges.append((coupling.source, coupling.target, strength))

    return WeightedDigraph([NodeKind.AGENT] * net.n_agents, edges)


def bipartite_constraint_graph(
    variables: Sequence[str], constraints: Sequence[Collection[int]]
) -> BipartiteGraph:
    """
    Relate variables to the constraints they take part in.

    >>> bip = bipartite_constraint_graph(['x1', 'x2'], [{0, 1}, {1}])
    >>> bip.incidences
    ((0, 0), (1, 0), (1, 1))

    :param variables: Variable names.
    :param constraints: For each constraint, the indices of its variables.

    :raise RejectedInput: A constraint refers to an undeclared variable.
    """
    incidences = []
    for constraint, members in enumerate(constraints):
        for variable in sorted(set(members)):
            imperative(
                0 <= variable < len(variables),
                f"Constraint {constraint} refers to undeclared variable {variable}",
                reason=DanglingIndex(constraint, variable),
            )
            incidences.append((variable, constraint))
        # endfor
    # endfor

    return BipartiteGraph(variables, len(constraints), incidences)


def complicating_constraints(
    bip: BipartiteGraph, owner: Mapping[int, int]
) -> list[int]:
    """
    Find constraints whose variables belong to more than one subsystem.

    :param bip: Variable-constraint graph.
    :param owner: Subsystem of every variable.

    :raise RejectedInput: A variable has no owner.
    """
    for variable in bip.left_nodes:
        imperative(
            variable in owner,
            f"Variable {bip.variables[variable]} has no owner",
            reason=DanglingIndex(-1, variable),
        )

    return [
        constraint
        for constraint in bip.right_nodes
        if len({owner[v] for v in bip.variables_of(constraint)}) > 1
    ]
