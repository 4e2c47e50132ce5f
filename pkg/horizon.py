# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Finite-horizon control problems of a set of agents, as QPs.

The problem of agents `S` over horizon `N` from the measured state `x0` is::

    minimize   sum_{t=1}^{N-1} q |x_a(t)|^2 + p |x_a(N)|^2
             + sum_{t=0}^{N-1} r |u_a(t)|^2                 over a in S
    subject to x_a(t+1) = A_a x_a(t) + B_a u_a(t) + sum_c G_ac x_c(t)
               x_a(t), u_a(t) within the agents' boxes

It is kept in lifted form: inputs and predicted states are all variables and
the dynamics are equality rows. States of agents outside `S` that enter the
update of an agent in `S` are *copies*, free variables in the coupling terms,
which a coordination layer ties to their owners.

Piecewise-affine agents have their mode at `t = 0` fixed by `x0`. For
`1 <= t < N` the mode choice is relaxed to the convex hull of the modes: one
weight `delta_m` in `[0, 1]` per mode, with `sum_m delta_m = 1`, and one
lifted copy of state and input per mode scaled by its weight. Fixing a mode
sets its weight to 1, which makes the relaxation exact. Fixing only changes
bounds, so that all relaxations of one problem share a factorized kernel.
"""

from __future__ import annotations

from collections.abc import Collection, Mapping, Sequence
from dataclasses import dataclass, field
import logging

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import sparse

from . import settings
from .checks import finite, imperative, shaped
from .errors import DimensionMismatch, UnknownNode, Unbounded, UnsupportedModel
from .handler import Status
from .models import Box, NetworkModel, PwaSubsystem
from .qp import QpKernel, QpResult, QpStatus

_logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

#: `(agent, t)`
AgentTime = tuple[int, int]

_INTEGRAL_TOL = 1e-6


@dataclass(frozen=True)
class MpcProblem:
    """
    Horizon and quadratic weights of the control problem.

    Bounds are the boxes of the network. The terminal weight `p` defaults to
    the state weight `q`.

    >>> MpcProblem(horizon=2).terminal
    1.0
    """

    horizon: int = 5
    q: float = 1.0
    r: float = 1.0
    p: float | None = None

    def __post_init__(self) -> None:
        imperative(
            self.horizon >= 1,
            f"Horizon must be at least 1, got {self.horizon}",
            reason=DimensionMismatch('horizon', '>= 1', self.horizon),
        )
        weights = [self.q, self.r, self.terminal]
        finite('weights', weights)
        imperative(
            min(weights) >= 0,
            f"Weights must be nonnegative, got {weights}",
            reason=UnsupportedModel('negative weight'),
        )

    @property
    def terminal(self) -> float:
        """Weight of the last predicted state."""
        return self.q if self.p is None else self.p

    def stage_cost(self, x: ArrayLike, u: ArrayLike) -> float:
        """`q |x|^2 + r |u|^2`."""
        state = np.asarray(x, dtype=float)
        inputs = np.asarray(u, dtype=float)
        return float(self.q * state @ state + self.r * inputs @ inputs)


def horizon_cost(prob: MpcProblem, states: FloatArray, inputs: FloatArray) -> float:
    """
    Cost of one agent's predictions.

    :param states: `(N + 1, n_x)` predictions, the measured state first.
    :param inputs: `(N, n_u)` inputs.
    """
    horizon = prob.horizon
    cost = sum(float(states[t] @ states[t]) for t in range(1, horizon)) * prob.q
    cost += prob.terminal * float(states[horizon] @ states[horizon])
    cost += prob.r * float(np.sum(inputs * inputs))
    return cost


@dataclass
class HorizonSolution:
    """
    Predictions of a solved horizon problem.

    - `inputs`: `(N, n_u)` per agent of the set.
    - `states`: `(N + 1, n_x)` per agent of the set, the measured state first.
    - `copies`: `(N, n_x)` per copied neighbour, its measured state first.
    - `deltas`: relaxed mode weights per undecided `(agent, t)`.
    - `cost`: control cost of the agents of the set.
    - `objective`: `cost` plus the consensus penalty.
    """

    inputs: dict[int, FloatArray]
    states: dict[int, FloatArray]
    copies: dict[int, FloatArray]
    deltas: dict[AgentTime, FloatArray]
    cost: float
    objective: float
    result: QpResult | None = None
    status: Status = field(default_factory=Status)
    nodes: int = 0

    @property
    def feasible(self) -> bool:
        """Tell whether the QP was not found infeasible."""
        return self.result is None or self.result.status not in (
            QpStatus.PRIMAL_INFEASIBLE,
            QpStatus.DUAL_INFEASIBLE,
        )

    def is_integral(self, tol: float = _INTEGRAL_TOL) -> bool:
        """Tell whether every relaxed mode weight is 0 or 1."""
        return all(
            bool(np.all(np.minimum(np.abs(weights), np.abs(weights - 1.0)) <= tol))
            for weights in self.deltas.values()
        )

    def rounded_modes(self) -> dict[AgentTime, int]:
        """Mode of largest weight per undecided `(agent, t)`."""
        return {key: int(np.argmax(weights)) for key, weights in self.deltas.items()}

    def trajectory(self, agent: int) -> FloatArray:
        """Predicted `x(1) .. x(N - 1)` of an agent of the set or a copy."""
        if agent in self.states:
            return self.states[agent][1:-1]

        return self.copies[agent][1:]


class _Rows:
    """Sparse constraint rows collected block by block."""

    def __init__(self) -> None:
        self.row_index: list[int] = []
        self.col_index: list[int] = []
        self.values: list[float] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.count = 0

    def add(
        self,
        blocks: Sequence[tuple[slice, ArrayLike]],
        lower: ArrayLike,
        upper: ArrayLike,
    ) -> slice:
        low = np.atleast_1d(np.asarray(lower, dtype=float))
        high = np.atleast_1d(np.asarray(upper, dtype=float))
        height = low.size
        for columns, block in blocks:
            matrix = np.asarray(block, dtype=float).reshape(height, -1)
            rows, cols = np.nonzero(matrix)
            self.row_index.extend((rows + self.count).tolist())
            self.col_index.extend((cols + columns.start).tolist())
            self.values.extend(matrix[rows, cols].tolist())
        # endfor

        self.lower.extend(low.tolist())
        self.upper.extend(high.tolist())
        self.count += height
        return slice(self.count - height, self.count)

    def matrix(self, n_columns: int) -> sparse.csc_matrix:
        return sparse.csc_matrix(
            (self.values, (self.row_index, self.col_index)),
            shape=(self.count, n_columns),
        )


@dataclass(frozen=True)
class _Hull:
    weights: tuple[int, ...]
    weight_rows: tuple[int, ...]
    states: tuple[slice, ...]
    inputs: tuple[slice, ...]


class HorizonQp:
    """
    Lifted horizon problem of a set of agents.

    :param net: Network.
    :param prob: Horizon and weights.
    :param x0: Measured stacked state.
    :param agents: Agents of the set. All agents if `None`.
    :param shared: Agents of the set or copies whose predictions
      `x(1) .. x(N - 1)` carry a consensus penalty.
    :param rho: Weight of the consensus penalty `rho/2 |x - target|^2`.

    :raise RejectedInput: `x0` of the wrong size, unknown agents, a state
      matching no mode, or a multi-mode agent with an unbounded box.
    """

    def __init__(
        self,
        net: NetworkModel,
        prob: MpcProblem,
        x0: ArrayLike,
        agents: Collection[int] | None = None,
        *,
        shared: Collection[int] = (),
        rho: float = 0.0,
    ) -> None:
        state = finite('x0', x0).ravel()
        shaped('x0', state, (net.n_x,))
        owned = sorted(range(net.n_agents) if agents is None else set(agents))
        for agent in owned:
            imperative(
                0 <= agent < net.n_agents,
                f"Unknown agent {agent}",
                reason=UnknownNode(agent),
            )

        self.net = net
        self.prob = prob
        self.x0 = state
        self.agents: tuple[int, ...] = tuple(owned)
        self.copied: tuple[int, ...] = tuple(
            sorted(
                {
                    coupling.source
                    for agent in owned
                    for coupling in net.couplings_into(agent)
                }
                - set(owned)
            )
        )
        self.rho = rho
        self._size = 0
        horizon = prob.horizon

        self._u: dict[AgentTime, slice] = {}
        self._x: dict[AgentTime, slice] = {}
        for agent in self.agents:
            n_x, n_u, _ = net.subsystems[agent].dims
            for t in range(horizon):
                self._u[(agent, t)] = self._allocate(n_u)

            for t in range(1, horizon + 1):
                self._x[(agent, t)] = self._allocate(n_x)

        # endfor
        for agent in self.copied:
            n_x = net.subsystems[agent].dims[0]
            for t in range(1, horizon):
                self._x[(agent, t)] = self._allocate(n_x)

        # endfor

        rows = _Rows()
        self._hulls: dict[AgentTime, _Hull] = {}
        for agent in self.agents:
            self._add_hulls(agent, rows)
            self._add_dynamics(agent, rows)

        self._add_boxes(rows)

        self._lower = np.array(rows.lower)
        self._upper = np.array(rows.upper)
        diagonal = np.zeros(self._size)
        for (agent, t), columns in self._x.items():
            if agent in self.agents:
                diagonal[columns] = 2 * (prob.terminal if t == horizon else prob.q)

        for columns in self._u.values():
            diagonal[columns] = 2 * prob.r

        self.shared: tuple[int, ...] = tuple(
            sorted(set(shared) & (set(self.agents) | set(self.copied)))
        )
        for agent in self.shared:
            for t in range(1, horizon):
                diagonal[self._x[(agent, t)]] += rho

        # endfor

        self._kernel = QpKernel(sparse.diags(diagonal), rows.matrix(self._size))
        _logger.debug(
            "Horizon QP of agents %s: %d variables, %d rows, %d relaxed modes",
            list(self.agents),
            self._size,
            rows.count,
            len(self._hulls),
        )

    def __repr__(self) -> str:
        return (
            f"HorizonQp(agents={list(self.agents)}, copies={list(self.copied)}, "
            f"horizon={self.prob.horizon})"
        )

    def _allocate(self, width: int) -> slice:
        start = self._size
        self._size += width
        return slice(start, self._size)

    def _local(self, agent: int) -> FloatArray:
        return self.x0[self.net.state_slice(agent)]

    def _add_hulls(self, agent: int, rows: _Rows) -> None:
        sub = self.net.subsystems[agent]
        if not isinstance(sub, PwaSubsystem) or len(sub.modes) == 1:
            return

        state_box = self.net.state_boxes[agent]
        input_box = self.net.input_boxes[agent]
        imperative(
            state_box.is_bounded() and input_box.is_bounded(),
            f"Agent {agent} has several modes and an unbounded box",
            reason=Unbounded(f"box of agent {agent}"),
        )
        n_x, n_u, _ = sub.dims
        eta = settings.get('strict_margin')
        for t in range(1, self.prob.horizon):
            weights = []
            weight_rows = []
            states = []
            inputs = []
            for mode in sub.modes:
                weight = self._allocate(1)
                lifted_x = self._allocate(n_x)
                lifted_u = self._allocate(n_u)
                weight_rows.append(rows.add([(weight, [[1.0]])], 0.0, 1.0).start)
                assert mode.guard is not None  # for mypy
                if mode.guard.strict:
                    offset = mode.guard.offset - eta
                    rows.add(
                        [(lifted_x, mode.guard.normal), (weight, [[-offset]])],
                        -np.inf,
                        0.0,
                    )

                else:
                    offset = mode.guard.offset
                    rows.add(
                        [(lifted_x, mode.guard.normal), (weight, [[-offset]])],
                        0.0,
                        np.inf,
                    )

                # endif
                self._add_scaled_box(rows, lifted_x, weight, state_box)
                self._add_scaled_box(rows, lifted_u, weight, input_box)
                weights.append(weight.start)
                states.append(lifted_x)
                inputs.append(lifted_u)
            # endfor

            rows.add([(slice(w, w + 1), [[1.0]]) for w in weights], 1.0, 1.0)
            rows.add(
                [(self._x[(agent, t)], np.eye(n_x))]
                + [(lifted, -np.eye(n_x)) for lifted in states],
                np.zeros(n_x),
                np.zeros(n_x),
            )
            rows.add(
                [(self._u[(agent, t)], np.eye(n_u))]
                + [(lifted, -np.eye(n_u)) for lifted in inputs],
                np.zeros(n_u),
                np.zeros(n_u),
            )
            self._hulls[(agent, t)] = _Hull(
                tuple(weights), tuple(weight_rows), tuple(states), tuple(inputs)
            )
        # endfor

    @staticmethod
    def _add_scaled_box(rows: _Rows, lifted: slice, weight: slice, box: Box) -> None:
        size = box.size
        rows.add(
            [(lifted, np.eye(size)), (weight, -box.lower.reshape(size, 1))],
            np.zeros(size),
            np.full(size, np.inf),
        )
        rows.add(
            [(lifted, np.eye(size)), (weight, -box.upper.reshape(size, 1))],
            np.full(size, -np.inf),
            np.zeros(size),
        )

    def _add_dynamics(self, agent: int, rows: _Rows) -> None:
        sub = self.net.subsystems[agent]
        n_x = sub.dims[0]
        local = self._local(agent)
        first = sub.modes[sub.mode_of(local)]
        for t in range(self.prob.horizon):
            blocks: list[tuple[slice, ArrayLike]] = [
                (self._x[(agent, t + 1)], np.eye(n_x))
            ]
            known = np.zeros(n_x)
            if t == 0:
                known += first.A @ local
                blocks.append((self._u[(agent, 0)], -first.B))

            elif (agent, t) in self._hulls:
                hull = self._hulls[(agent, t)]
                for mode, lifted_x, lifted_u in zip(
                    sub.modes, hull.states, hull.inputs, strict=True
                ):
                    blocks.append((lifted_x, -mode.A))
                    blocks.append((lifted_u, -mode.B))

            else:
                mode = sub.modes[0]
                blocks.append((self._x[(agent, t)], -mode.A))
                blocks.append((self._u[(agent, t)], -mode.B))

            # endif

            for coupling in self.net.couplings_into(agent):
                if t == 0:
                    known += coupling.gain @ self._local(coupling.source)

                else:
                    blocks.append((self._x[(coupling.source, t)], -coupling.gain))

            # endfor
            rows.add(blocks, known, known)
        # endfor

    def _add_boxes(self, rows: _Rows) -> None:
        for (agent, _), columns in self._x.items():
            box = self.net.state_boxes[agent]
            if np.any(np.isfinite(box.lower)) or np.any(np.isfinite(box.upper)):
                rows.add([(columns, np.eye(box.size))], box.lower, box.upper)

        # endfor
        for (agent, _), columns in self._u.items():
            box = self.net.input_boxes[agent]
            if np.any(np.isfinite(box.lower)) or np.any(np.isfinite(box.upper)):
                rows.add([(columns, np.eye(box.size))], box.lower, box.upper)

        # endfor

    @property
    def undecided(self) -> list[AgentTime]:
        """Relaxed mode choices, by time and then agent."""
        return sorted(self._hulls, key=lambda key: (key[1], key[0]))

    def n_modes(self, key: AgentTime) -> int:
        """Number of modes of a relaxed choice."""
        return len(self._hulls[key].weights)

    def solve(
        self,
        fixed: Mapping[AgentTime, int] | None = None,
        targets: Mapping[AgentTime, ArrayLike] | None = None,
        warm: QpResult | None = None,
    ) -> HorizonSolution:
        """
        Solve with some mode choices fixed.

        :param fixed: Mode per relaxed `(agent, t)`.
        :param targets: Consensus target per `(agent, t)` of a shared agent.
          Missing targets are zero.
        :param warm: Solution of a problem with the same structure.

        :raise RejectedInput: Unknown keys or mode indices.
        """
        fixed = {} if fixed is None else fixed
        targets = {} if targets is None else targets
        linear = np.zeros(self._size)
        constant = 0.0
        for key, target in targets.items():
            imperative(
                key[0] in self.shared and key in self._x,
                f"No consensus term for {key}",
                reason=UnknownNode(key),
            )
            value = finite('target', target).ravel()
            linear[self._x[key]] -= self.rho * value
            constant += 0.5 * self.rho * float(value @ value)
        # endfor

        lower = self._lower.copy()
        upper = self._upper.copy()
        for key, mode in fixed.items():
            imperative(
                key in self._hulls and 0 <= mode < self.n_modes(key),
                f"Cannot fix mode {mode} of {key}",
                reason=UnknownNode(key),
            )
            for index, row in enumerate(self._hulls[key].weight_rows):
                lower[row] = upper[row] = 1.0 if index == mode else 0.0

        # endfor

        options = {} if warm is None else {'x0': warm.x, 'y0': warm.y}
        result = self._kernel.solve(linear, lower, upper, **options)
        return self._solution(result, constant)

    def _solution(self, result: QpResult, constant: float) -> HorizonSolution:
        horizon = self.prob.horizon
        values = result.x
        inputs: dict[int, FloatArray] = {}
        states: dict[int, FloatArray] = {}
        copies: dict[int, FloatArray] = {}
        cost = 0.0
        for agent in self.agents:
            inputs[agent] = np.array(
                [values[self._u[(agent, t)]] for t in range(horizon)]
            )
            states[agent] = np.array(
                [self._local(agent)]
                + [values[self._x[(agent, t)]] for t in range(1, horizon + 1)]
            )
            cost += horizon_cost(self.prob, states[agent], inputs[agent])
        # endfor
        for agent in self.copied:
            copies[agent] = np.array(
                [self._local(agent)]
                + [values[self._x[(agent, t)]] for t in range(1, horizon)]
            )

        deltas = {
            key: values[list(hull.weights)].copy() for key, hull in self._hulls.items()
        }
        status = Status()
        if result.status is QpStatus.MAX_ITER:
            status.flag('qp iteration limit')

        return HorizonSolution(
            inputs,
            states,
            copies,
            deltas,
            cost,
            result.objective + constant,
            result,
            status,
            nodes=1,
        )
