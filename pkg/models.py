# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Dynamics of subsystems and of networks of coupled subsystems.

A subsystem is either linear (`x+ = A x + B u`, `y = C x`) or piecewise
affine with modes selected by half-space guards on its own state. A network
adds coupling gains `A_ij` through which the state of subsystem `j` enters the
update of subsystem `i`, and box bounds on every state and input.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
import itertools
import logging

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .checks import finite, imperative, precondition, shaped
from .errors import (
    DimensionMismatch,
    Duplicate,
    InvalidPartition,
    Unbounded,
    UnknownNode,
    UnsupportedModel,
)

_logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

_GUARD_SAMPLES = 64


def _matrix(what: str, value: ArrayLike, rows: int | None = None) -> FloatArray:
    array = finite(what, value)
    if array.ndim == 0:
        array = array.reshape(1, 1)

    elif array.ndim == 1:
        array = array.reshape(rows if rows is not None else 1, -1)

    imperative(
        array.ndim == 2,
        f"{what} must be a matrix",
        reason=DimensionMismatch(what, 2, array.ndim),
    )
    return array


@dataclass(frozen=True, eq=False)
class Box:
    """
    Componentwise bounds `lower <= v <= upper`.

    >>> Box.uniform(2, -1.0, 1.0).contains([0.5, -1.0])
    True
    """

    lower: FloatArray
    upper: FloatArray

    def __post_init__(self) -> None:
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        shaped('upper bound', upper, lower.shape)
        imperative(
            not (np.any(np.isnan(lower)) or np.any(np.isnan(upper))),
            "Bounds must not be NaN",
            reason=Unbounded('box'),
        )
        imperative(
            bool(np.all(lower <= upper)),
            f"Lower bound above upper bound: {lower} > {upper}",
            reason=Unbounded('box'),
        )
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    @classmethod
    def uniform(cls, size: int, lower: float, upper: float) -> Box:
        """Create a box with the same bounds on every component."""
        return cls(np.full(size, lower), np.full(size, upper))

    @classmethod
    def concatenate(cls, boxes: Sequence[Box]) -> Box:
        """Stack boxes of several subsystems."""
        if not boxes:
            return cls(np.zeros(0), np.zeros(0))

        return cls(
            np.concatenate([box.lower for box in boxes]),
            np.concatenate([box.upper for box in boxes]),
        )

    @property
    def size(self) -> int:
        """Number of components."""
        return int(self.lower.size)

    def is_bounded(self) -> bool:
        """Tell whether all bounds are finite."""
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def contains(self, point: ArrayLike, tol: float = 0.0) -> bool:
        """Tell whether `point` lies in the box, up to `tol`."""
        values = np.asarray(point, dtype=float)
        return bool(
            np.all(values >= self.lower - tol) and np.all(values <= self.upper + tol)
        )

    def scaled(self, factor: float) -> Box:
        """Shrink or grow the box about its centre."""
        centre = (self.lower + self.upper) / 2
        half = (self.upper - self.lower) / 2 * factor
        return Box(centre - half, centre + half)

    def sample_points(self, rng: np.random.Generator, count: int) -> FloatArray:
        """
        Draw points covering the box: vertices, centre and uniform samples.

        Infinite bounds are replaced by a unit distance from the finite one.
        """
        lower = np.where(np.isfinite(self.lower), self.lower, -1.0)
        upper = np.where(np.isfinite(self.upper), self.upper, lower + 2.0)
        lower = np.where(np.isfinite(self.lower), lower, upper - 2.0)
        points = [(lower + upper) / 2]
        if self.size <= 8:
            points.extend(
                np.array(corner)
                for corner in itertools.product(*zip(lower, upper, strict=True))
            )

        points.extend(rng.uniform(lower, upper, size=(count, self.size)))
        return np.array(points)


@dataclass(frozen=True, eq=False)
class Guard:
    """
    Half-space on the local state.

    `normal @ x >= offset` when closed, `normal @ x < offset` when strict.
    A point on the boundary therefore belongs to the closed side.
    """

    normal: FloatArray
    offset: float
    strict: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, 'normal', np.atleast_1d(finite('guard', self.normal)))

    @classmethod
    def at_least(cls, offset: float = 0.0, normal: ArrayLike = (1.0,)) -> Guard:
        """Guard `normal @ x >= offset`."""
        return cls(np.asarray(normal, dtype=float), offset, strict=False)

    @classmethod
    def below(cls, offset: float = 0.0, normal: ArrayLike = (1.0,)) -> Guard:
        """Guard `normal @ x < offset`."""
        return cls(np.asarray(normal, dtype=float), offset, strict=True)

    def holds(self, x: ArrayLike) -> bool:
        """Tell whether `x` satisfies the guard."""
        value = float(self.normal @ np.asarray(x, dtype=float))
        return value < self.offset if self.strict else value >= self.offset

    def describe(self) -> str:
        """Text form used in the network file, for scalar guards."""
        relation = '<' if self.strict else '>='
        if self.normal.size == 1 and self.normal[0] == 1.0:
            return f"x{relation}{self.offset:g}"

        return f"{self.normal.tolist()}.x{relation}{self.offset:g}"


@dataclass(frozen=True, eq=False)
class Mode:
    """One affine piece `x+ = A x + B u`, active where `guard` holds."""

    A: FloatArray  # noqa: N815
    B: FloatArray  # noqa: N815
    guard: Guard | None = None


@dataclass(frozen=True, eq=False)
class LinearSubsystem:
    """
    `x+ = A x + B u`, `y = C x`.

    >>> LinearSubsystem([[0.5]], [[1.0]]).dims
    (1, 1, 0)
    """

    A: FloatArray  # noqa: N815
    B: FloatArray  # noqa: N815
    C: FloatArray | None = None  # noqa: N815

    def __post_init__(self) -> None:
        a_matrix = _matrix('A', self.A)
        n_x = a_matrix.shape[0]
        shaped('A', a_matrix, (n_x, n_x))
        b_matrix = _matrix('B', self.B, rows=n_x)
        imperative(
            b_matrix.shape[0] == n_x,
            f"B has {b_matrix.shape[0]} rows, A has {n_x}",
            reason=DimensionMismatch('B', n_x, b_matrix.shape[0]),
        )
        object.__setattr__(self, 'A', a_matrix)
        object.__setattr__(self, 'B', b_matrix)
        if self.C is not None:
            c_matrix = _matrix('C', self.C)
            imperative(
                c_matrix.shape[1] == n_x,
                f"C has {c_matrix.shape[1]} columns, A has {n_x}",
                reason=DimensionMismatch('C', n_x, c_matrix.shape[1]),
            )
            object.__setattr__(self, 'C', c_matrix)

        # endif

    @property
    def dims(self) -> tuple[int, int, int]:
        """`(n_x, n_u, n_y)`."""
        n_y = 0 if self.C is None else self.C.shape[0]
        return (self.A.shape[0], self.B.shape[1], n_y)

    @property
    def modes(self) -> tuple[Mode, ...]:
        """The single, always active mode."""
        return (Mode(self.A, self.B),)

    def mode_of(self, x: ArrayLike) -> int:  # noqa: ARG002
        """Index of the active mode: always 0."""
        return 0


@dataclass(frozen=True, eq=False)
class PwaSubsystem:
    """Piecewise-affine subsystem whose mode depends on its own state."""

    pieces: tuple[Mode, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        pieces = tuple(self.pieces)
        imperative(
            len(pieces) >= 1,
            "A piecewise-affine subsystem needs at least one mode",
            reason=DimensionMismatch('modes', 1, 0),
        )
        checked: list[Mode] = []
        for index, mode in enumerate(pieces):
            a_matrix = _matrix(f"A[{index}]", mode.A)
            n_x = a_matrix.shape[0]
            shaped(f"A[{index}]", a_matrix, (n_x, n_x))
            b_matrix = _matrix(f"B[{index}]", mode.B, rows=n_x)
            shaped(f"B[{index}]", b_matrix, (n_x, b_matrix.shape[1]))
            if checked:
                shaped(f"A[{index}]", a_matrix, checked[0].A.shape)
                shaped(f"B[{index}]", b_matrix, checked[0].B.shape)

            imperative(
                mode.guard is not None or len(pieces) == 1,
                f"Mode {index} has no guard",
                reason=UnsupportedModel(f"mode {index} without guard"),
            )
            if mode.guard is not None:
                shaped(f"guard[{index}]", mode.guard.normal, (n_x,))

            checked.append(Mode(a_matrix, b_matrix, mode.guard))
        # endfor
        object.__setattr__(self, 'pieces', tuple(checked))

    @property
    def dims(self) -> tuple[int, int, int]:
        """`(n_x, n_u, 0)`."""
        return (self.pieces[0].A.shape[0], self.pieces[0].B.shape[1], 0)

    @property
    def modes(self) -> tuple[Mode, ...]:
        """All modes in guard order."""
        return self.pieces

    def matching_modes(self, x: ArrayLike) -> list[int]:
        """Indices of the modes whose guard holds at `x`."""
        return [
            index
            for index, mode in enumerate(self.pieces)
            if mode.guard is None or mode.guard.holds(x)
        ]

    def mode_of(self, x: ArrayLike) -> int:
        """
        Index of the active mode at `x`.

        :raise RejectedInput: `x` satisfies no guard or several guards.
        """
        matching = self.matching_modes(x)
        imperative(
            len(matching) == 1,
            f"State {np.asarray(x).tolist()} matches modes {matching}",
            reason=InvalidPartition('guards'),
        )
        return matching[0]


Subsystem = LinearSubsystem | PwaSubsystem


@dataclass(frozen=True, eq=False)
class Coupling:
    """Gain through which the state of `source` enters the update of `target`."""

    source: int
    target: int
    gain: FloatArray


class NetworkModel:
    """
    Subsystems, their couplings and their bounds.

    :param subsystems: Dynamics of each subsystem; the position is the id.
    :param couplings: Couplings between subsystems. Scalar gains are accepted
      for scalar subsystems.
    :param state_boxes: Bounds of each subsystem's state. Unbounded if `None`.
    :param input_boxes: Bounds of each subsystem's input. Unbounded if `None`.

    :raise RejectedInput: Inconsistent dimensions, unknown subsystems,
      duplicate couplings, or guards that do not partition the state box.
    """

    def __init__(
        self,
        subsystems: Sequence[Subsystem],
        couplings: Sequence[Coupling | tuple[int, int, ArrayLike]] = (),
        state_boxes: Sequence[Box] | None = None,
        input_boxes: Sequence[Box] | None = None,
    ) -> None:
        self.subsystems: tuple[Subsystem, ...] = tuple(subsystems)
        n_agents = len(self.subsystems)
        dims = [sub.dims for sub in self.subsystems]

        with precondition():
            if state_boxes is None:
                state_boxes = [Box.uniform(d[0], -np.inf, np.inf) for d in dims]

            if input_boxes is None:
                input_boxes = [Box.uniform(d[1], -np.inf, np.inf) for d in dims]

            imperative(
                len(state_boxes) == n_agents and len(input_boxes) == n_agents,
                "One state box and one input box per subsystem required",
                reason=DimensionMismatch('boxes', n_agents, len(state_boxes)),
            )
            for agent, (box_x, box_u) in enumerate(
                zip(state_boxes, input_boxes, strict=True)
            ):
                shaped(f"state box {agent}", box_x.lower, (dims[agent][0],))
                shaped(f"input box {agent}", box_u.lower, (dims[agent][1],))

            self.state_boxes: tuple[Box, ...] = tuple(state_boxes)
            self.input_boxes: tuple[Box, ...] = tuple(input_boxes)

            seen: set[tuple[int, int]] = set()
            checked: list[Coupling] = []
            for each in couplings:
                coupling = each if isinstance(each, Coupling) else Coupling(*each)
                source, target = coupling.source, coupling.target
                for end in (source, target):
                    imperative(
                        0 <= end < n_agents,
                        f"Coupling references unknown subsystem {end}",
                        reason=UnknownNode(end),
                    )
                imperative(
                    (source, target) not in seen,
                    f"Duplicate coupling {source} -> {target}",
                    reason=Duplicate((source, target)),
                )
                seen.add((source, target))
                gain = _matrix('gain', coupling.gain, rows=dims[target][0])
                shaped(
                    f"gain {source} -> {target}",
                    gain,
                    (dims[target][0], dims[source][0]),
                )
                checked.append(Coupling(source, target, gain))
            # endfor
        # endwith

        self.couplings: tuple[Coupling, ...] = tuple(
            sorted(checked, key=lambda c: (c.target, c.source))
        )
        self._into: dict[int, list[Coupling]] = {agent: [] for agent in range(n_agents)}
        for coupling in self.couplings:
            self._into[coupling.target].append(coupling)

        self.state_offsets = np.concatenate(([0], np.cumsum([d[0] for d in dims])))
        self.input_offsets = np.concatenate(([0], np.cumsum([d[1] for d in dims])))

        self._check_guards()

    def _check_guards(self) -> None:
        rng = np.random.default_rng(0)
        for agent, sub in enumerate(self.subsystems):
            if not isinstance(sub, PwaSubsystem) or len(sub.modes) == 1:
                continue

            for point in self.state_boxes[agent].sample_points(rng, _GUARD_SAMPLES):
                matching = sub.matching_modes(point)
                imperative(
                    len(matching) == 1,
                    f"Guards of subsystem {agent} do not partition its box "
                    f"at {point.tolist()}: modes {matching}",
                    reason=InvalidPartition(f"guards of subsystem {agent}"),
                )
            # endfor
        # endfor

    def __repr__(self) -> str:
        return (
            f"NetworkModel(n_agents={self.n_agents}, "
            f"n_couplings={len(self.couplings)})"
        )

    @property
    def n_agents(self) -> int:
        """Number of subsystems."""
        return len(self.subsystems)

    @property
    def n_x(self) -> int:
        """Total number of states."""
        return int(self.state_offsets[-1])

    @property
    def n_u(self) -> int:
        """Total number of inputs."""
        return int(self.input_offsets[-1])

    def state_slice(self, agent: int) -> slice:
        """Position of an agent's state in the stacked state vector."""
        return slice(int(self.state_offsets[agent]), int(self.state_offsets[agent + 1]))

    def input_slice(self, agent: int) -> slice:
        """Position of an agent's input in the stacked input vector."""
        return slice(int(self.input_offsets[agent]), int(self.input_offsets[agent + 1]))

    def state_box(self) -> Box:
        """Bounds of the stacked state."""
        return Box.concatenate(self.state_boxes)

    def input_box(self) -> Box:
        """Bounds of the stacked input."""
        return Box.concatenate(self.input_boxes)

    def couplings_into(self, agent: int) -> list[Coupling]:
        """Couplings whose target is `agent`, by source."""
        return self._into[agent]

    def in_neighbors(self, agent: int) -> list[int]:
        """Subsystems whose state enters the update of `agent`."""
        return [c.source for c in self._into[agent]]

    def is_linear(self) -> bool:
        """Tell whether every subsystem has a single mode."""
        return all(len(sub.modes) == 1 for sub in self.subsystems)

    def max_modes(self) -> int:
        """Largest number of modes of a subsystem."""
        return max((len(sub.modes) for sub in self.subsystems), default=0)

    def mode_of(self, agent: int, x: ArrayLike) -> int:
        """Active mode of `agent` given the stacked state `x`."""
        local = np.asarray(x, dtype=float)[self.state_slice(agent)]
        return self.subsystems[agent].mode_of(local)

    def step(
        self,
        x: ArrayLike,
        u: ArrayLike,
        active: dict[tuple[int, int], bool] | None = None,
    ) -> FloatArray:
        """
        Advance the stacked state by one step.

        :param x: Stacked state.
        :param u: Stacked input.
        :param active: Activity of each coupling keyed by `(source, target)`.
          Missing couplings are active.
        :return: The next stacked state.
        """
        state = np.asarray(x, dtype=float)
        inputs = np.asarray(u, dtype=float)
        following = np.zeros(self.n_x)
        for agent, sub in enumerate(self.subsystems):
            local = state[self.state_slice(agent)]
            mode = sub.modes[sub.mode_of(local)]
            value = mode.A @ local + mode.B @ inputs[self.input_slice(agent)]
            for coupling in self._into[agent]:
                if active is None or active.get((coupling.source, agent), True):
                    source = state[self.state_slice(coupling.source)]
                    value = value + coupling.gain @ source

            following[self.state_slice(agent)] = value
        # endfor

        return following

    def permuted(self, permutation: Sequence[int]) -> NetworkModel:
        """Relabel subsystems: subsystem `i` becomes `permutation[i]`."""
        order = np.argsort(permutation)
        return NetworkModel(
            [self.subsystems[old] for old in order],
            [
                Coupling(permutation[c.source], permutation[c.target], c.gain)
                for c in self.couplings
            ],
            [self.state_boxes[old] for old in order],
            [self.input_boxes[old] for old in order],
        )
