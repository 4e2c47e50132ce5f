# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Multi-topological links between subsystems.

A coupling `j -> i` may carry several superposed binary layers. At every step
each layer is on or off, and the coupling acts only while all of its layers are
on. A layer is one of:

- :class:`StateDependent`: on while the state and input of `j` lie in the
  polytope `S x_j + R u_j <= T`.
- :class:`Decision`: on or off as decided by the user (a schedule).
- :class:`ExternalSignal`: an exogenous binary sequence.

Couplings without layers are always on.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
import logging

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .checks import expect, finite, imperative, shaped
from .errors import (
    DimensionMismatch,
    MissingValue,
    Unbounded,
    UnknownNode,
    UnsupportedModel,
)
from .handler import Status
from .models import Box, NetworkModel

_logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

#: Coupling key `(source, target)`.
LinkKey = tuple[int, int]


@dataclass(frozen=True, eq=False)
class StateDependent:
    """
    Layer that is on while `S x + R u <= T` (every row) for the source agent.

    A point on the boundary is inside.
    """

    S: FloatArray  # noqa: N815
    R: FloatArray  # noqa: N815
    T: FloatArray  # noqa: N815

    def __post_init__(self) -> None:
        s_matrix = np.atleast_2d(finite('S', self.S))
        t_vector = np.atleast_1d(finite('T', self.T)).ravel()
        r_matrix = finite('R', self.R)
        if r_matrix.size == 0:
            r_matrix = np.zeros((s_matrix.shape[0], 0))

        r_matrix = np.atleast_2d(r_matrix)
        shaped('T', t_vector, (s_matrix.shape[0],))
        imperative(
            r_matrix.shape[0] == s_matrix.shape[0],
            f"R has {r_matrix.shape[0]} rows, S has {s_matrix.shape[0]}",
            reason=DimensionMismatch('R', s_matrix.shape[0], r_matrix.shape[0]),
        )
        object.__setattr__(self, 'S', s_matrix)
        object.__setattr__(self, 'R', r_matrix)
        object.__setattr__(self, 'T', t_vector)

    @property
    def n_rows(self) -> int:
        """Number of half-spaces."""
        return int(self.S.shape[0])

    def value(self, x: ArrayLike, u: ArrayLike) -> int:
        """1 if `(x, u)` lies in the polytope, else 0."""
        lhs = self.S @ np.asarray(x, dtype=float)
        if self.R.shape[1]:
            lhs = lhs + self.R @ np.asarray(u, dtype=float)

        return int(bool(np.all(lhs <= self.T)))


@dataclass(frozen=True)
class Decision:
    """
    Layer set by a decision maker.

    Without a schedule the layer is always on.
    """

    schedule: tuple[int, ...] = ()

    def value(self, step: int) -> int | None:
        """The decided value at `step`, `None` past the end of the schedule."""
        if not self.schedule:
            return 1

        return self.schedule[step] if step < len(self.schedule) else None


@dataclass(frozen=True)
class ExternalSignal:
    """Layer driven by an exogenous binary sequence."""

    schedule: tuple[int, ...] = field(default_factory=tuple)

    def value(self, step: int) -> int | None:
        """The signal at `step`, `None` past the end of the schedule."""
        return self.schedule[step] if step < len(self.schedule) else None


Layer = StateDependent | Decision | ExternalSignal


def _check_schedule(what: str, schedule: Sequence[int]) -> tuple[int, ...]:
    values = tuple(int(bit) for bit in schedule)
    imperative(
        all(bit in (0, 1) for bit in values),
        f"{what} schedule must be binary, got {list(schedule)}",
        reason=UnsupportedModel(f"non-binary {what} schedule"),
    )
    return values


class TopologyLayers:
    """
    Layers of every multi-topological coupling of a network.

    :param net: Network whose couplings carry the layers.
    :param layers: Layers per coupling `(source, target)`, in layer order.

    :raise RejectedInput: Unknown coupling, no layers for a listed coupling,
      non-binary schedule, or polytope dimensions that do not fit the source
      agent.
    """

    def __init__(
        self, net: NetworkModel, layers: Mapping[LinkKey, Sequence[Layer]]
    ) -> None:
        couplings = {(c.source, c.target) for c in net.couplings}
        checked: dict[LinkKey, tuple[Layer, ...]] = {}
        for key, stack in sorted(layers.items()):
            imperative(
                key in couplings,
                f"No coupling {key[0] + 1} -> {key[1] + 1} for layers",
                reason=UnknownNode(key),
            )
            imperative(
                len(stack) >= 1,
                f"Coupling {key[0] + 1} -> {key[1] + 1} has an empty layer list",
                reason=DimensionMismatch('layers', 1, 0),
            )
            source = key[0]
            n_x, n_u, _ = net.subsystems[source].dims
            normalized: list[Layer] = []
            for layer in stack:
                if isinstance(layer, StateDependent):
                    shaped('S', layer.S, (layer.n_rows, n_x))
                    if layer.R.shape[1]:
                        shaped('R', layer.R, (layer.n_rows, n_u))

                    normalized.append(layer)

                elif isinstance(layer, Decision):
                    schedule = _check_schedule('decision', layer.schedule)
                    normalized.append(Decision(schedule))

                else:
                    normalized.append(
                        ExternalSignal(_check_schedule('signal', layer.schedule))
                    )

                # endif
            # endfor
            checked[key] = tuple(normalized)
        # endfor

        self.net = net
        self.layers: dict[LinkKey, tuple[Layer, ...]] = checked

    def __repr__(self) -> str:
        return f"TopologyLayers(n_links={len(self.layers)})"

    def keys(self) -> list[LinkKey]:
        """Couplings with layers, sorted."""
        return list(self.layers)

    def of(self, key: LinkKey) -> tuple[Layer, ...]:
        """Layers of a coupling; empty for couplings that are always on."""
        return self.layers.get(key, ())

    def values(
        self, key: LinkKey, step: int, x: ArrayLike, u: ArrayLike
    ) -> list[int | None]:
        """
        Value of every layer of a coupling.

        :param key: Coupling `(source, target)`.
        :param step: Time step, for schedules.
        :param x: Stacked state.
        :param u: Stacked input.
        """
        source = key[0]
        local_x = np.asarray(x, dtype=float)[self.net.state_slice(source)]
        local_u = np.asarray(u, dtype=float)[self.net.input_slice(source)]
        result: list[int | None] = []
        for layer in self.of(key):
            if isinstance(layer, StateDependent):
                result.append(layer.value(local_x, local_u))

            else:
                result.append(layer.value(step))

        return result

    def active(self, step: int, x: ArrayLike, u: ArrayLike) -> dict[LinkKey, bool]:
        """Composed state of every layered coupling at a step."""
        return {
            key: bool(compose_links(self.values(key, step, x, u), key, step))
            for key in self.layers
        }


def compose_links(
    values: Sequence[int | None], key: LinkKey | None = None, step: int | None = None
) -> int:
    """
    Combine layer values: a link is on only if every layer is on.

    >>> compose_links([1, 1, 1]), compose_links([1, 0, 1]), compose_links([1])
    (1, 0, 1)

    :param values: Value of each layer; `None` where it is unknown.
    :param key: Coupling, for the error message.
    :param step: Step, for the error message.

    :raise RejectedInput: A value is missing.
    """
    for index, value in enumerate(values):
        imperative(
            value is not None,
            f"Layer {index + 1} of link {key} has no value at step {step}",
            reason=MissingValue('layer', (key, index, step)),
        )

    product = 1
    for value in values:
        product *= int(value)  # type: ignore[arg-type]

    return product


@dataclass(frozen=True, eq=False)
class BigM:
    """
    Bounds that make the big-M rows of one coupling exact over its boxes.

    - `M`, `m`: row-wise bounds of `A_ij x_j` (`m = -M`).
    - `M_star`, `m_star`: row-wise max and min of `S x + R u - T` per
      state-dependent layer (empty when the coupling has none).
    """

    M: FloatArray  # noqa: N815
    m: FloatArray
    M_star: tuple[FloatArray, ...] = ()  # noqa: N815
    m_star: tuple[FloatArray, ...] = ()

    @property
    def scalar(self) -> float:
        """The largest row bound."""
        return float(np.max(self.M)) if self.M.size else 0.0


def _affine_range(
    matrix: FloatArray, box: Box, offset: ArrayLike = 0.0
) -> tuple[FloatArray, FloatArray]:
    # Sign-based vertex selection: exact extremes of a linear map over a box.
    upper = np.maximum(matrix * box.lower, matrix * box.upper).sum(axis=1)
    lower = np.minimum(matrix * box.lower, matrix * box.upper).sum(axis=1)
    shift = np.asarray(offset, dtype=float)
    return lower + shift, upper + shift


def affine_range(
    matrix: ArrayLike, box: Box, offset: ArrayLike = 0.0
) -> tuple[FloatArray, FloatArray]:
    """
    Row-wise minimum and maximum of `matrix @ v + offset` over a box.

    >>> low, high = affine_range([[0.31]], Box.uniform(1, -0.9, 0.9))
    >>> round(float(low[0]), 6), round(float(high[0]), 6)
    (-0.279, 0.279)

    :raise RejectedInput: The box is unbounded.
    """
    imperative(
        box.is_bounded(),
        "Big-M constants need a bounded box",
        reason=Unbounded('box'),
    )
    return _affine_range(np.atleast_2d(np.asarray(matrix, dtype=float)), box, offset)


def compute_bigM(  # noqa: N802
    gain: ArrayLike,
    box: Box,
    layers: Sequence[Layer] = (),
    input_box: Box | None = None,
) -> BigM:
    """
    Compute the big-M constants of a coupling.

    >>> compute_bigM([[0.5]], Box.uniform(1, -1.0, 1.0)).scalar
    0.5

    :param gain: Coupling gain `A_ij`.
    :param box: State box of the source agent `j`.
    :param layers: Layers of the coupling; state-dependent ones get `M*`.
    :param input_box: Input box of the source agent, needed when a polytope
      involves the input.

    :raise RejectedInput: Unbounded box.
    """
    low, high = affine_range(gain, box)
    bound = np.maximum(np.abs(low), np.abs(high))

    maxima: list[FloatArray] = []
    minima: list[FloatArray] = []
    for layer in layers:
        if not isinstance(layer, StateDependent):
            continue

        s_low, s_high = affine_range(layer.S, box, -layer.T)
        if layer.R.shape[1]:
            imperative(
                input_box is not None,
                "Polytope involves the input, but no input box given",
                reason=Unbounded('input box'),
            )
            assert input_box is not None  # for mypy
            r_low, r_high = affine_range(layer.R, input_box)
            s_low, s_high = s_low + r_low, s_high + r_high

        maxima.append(s_high)
        minima.append(s_low)
    # endfor

    return BigM(bound, -bound, tuple(maxima), tuple(minima))


@dataclass
class PwaTrajectory:
    """
    Open-loop trajectory of a multi-topological PWA network.

    - `states`: `(steps + 1, n_x)`.
    - `links`: composed value of each layered coupling, `(steps,)` per key.
    - `status`: flagged when the trajectory left the state box.
    """

    states: FloatArray
    links: dict[LinkKey, NDArray[np.int_]]
    status: Status


def _input_sequence(net: NetworkModel, inputs: ArrayLike, steps: int) -> FloatArray:
    sequence = finite('inputs', inputs)
    if sequence.ndim == 1 and net.n_u == 1:
        sequence = sequence.reshape(-1, 1)

    imperative(
        sequence.ndim == 2
        and sequence.shape[0] >= steps
        and sequence.shape[1] == net.n_u,
        f"Inputs of shape {sequence.shape} do not cover {steps} steps",
        reason=DimensionMismatch('inputs', (steps, net.n_u), sequence.shape),
    )
    return sequence


def simulate_pwa(
    net: NetworkModel,
    layers: TopologyLayers | None,
    x0: ArrayLike,
    inputs: ArrayLike,
    steps: int,
) -> PwaTrajectory:
    """
    Simulate the network with guards evaluated and layers composed per step.

    Leaving the state box is flagged, not an error.

    :param net: Network.
    :param layers: Layers of the couplings; `None` if every coupling is
      always on.
    :param x0: Initial stacked state, inside the state box.
    :param inputs: `(steps, n_u)` input sequence.
    :param steps: Number of steps.

    :raise RejectedInput: `x0` outside the box, or inputs too short.
    """
    state = finite('x0', x0).ravel()
    shaped('x0', state, (net.n_x,))
    box = net.state_box()
    imperative(
        box.contains(state),
        f"x0 = {state.tolist()} outside the state box",
        reason=Unbounded('x0'),
    )
    sequence = _input_sequence(net, inputs, steps)

    states = np.zeros((steps + 1, net.n_x))
    states[0] = state
    keys = layers.keys() if layers is not None else []
    links = {key: np.zeros(steps, dtype=int) for key in keys}
    status = Status()

    for step in range(steps):
        u = sequence[step]
        active = layers.active(step, state, u) if layers is not None else None
        for key in keys:
            assert active is not None  # for mypy
            links[key][step] = int(active[key])

        state = net.step(state, u, active)
        states[step + 1] = state
        if not expect(
            box.contains(state),
            f"State left the box at step {step + 1}: {state.tolist()}",
            logger=_logger,
            throw=False,
        ):
            status.flag('left state box')

        # endif
    # endfor

    return PwaTrajectory(states, links, status)
