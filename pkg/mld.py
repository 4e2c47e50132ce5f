# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Mixed-logical-dynamical (MLD) form of multi-topological PWA networks.

The variables of one step are stacked as `[x, u, binaries, auxiliaries, x+]`.
Every constraint is a dense row `coefficients @ v <= rhs` (or `==`), and rows
are grouped in bands. A band owns some binaries and the auxiliaries that the
binaries gate:

- a link band per layered coupling `j -> i`: layer binaries `eps^l`, product
  auxiliaries `z^l = eps^l * z^(l-1)` with `z^0 = A_ij x_j`, four product rows
  per level and component, and a row defining each binary;
- a mode band per PWA agent with several modes: mode binaries `delta_m` that
  sum to one, a guard row per mode and `z_m = delta_m * (A_m x + B_m u)`;
- the dynamics band, equating `x+` with the own part plus the coupling terms.

Given `(x, u)`, each band admits exactly one binary assignment when the
big-M constants are valid, which :func:`simulate_mld` finds by enumeration.
"""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass
import itertools
import logging

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import settings
from .checks import expect, finite, imperative, shaped
from .errors import (
    MissingValue,
    NoConsistentAssignment,
    SolverFailure,
    Unbounded,
    UnsupportedModel,
)
from .models import Box, NetworkModel
from .topology import (
    BigM,
    Decision,
    Layer,
    LinkKey,
    StateDependent,
    TopologyLayers,
    affine_range,
    compute_bigM,
)

_logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

LE = '<='
EQ = '=='

#: Row tolerance when checking a candidate assignment.
ROW_TOLERANCE = 1e-11
#: Largest interval width accepted for an auxiliary pinned by its rows.
PIN_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class Row:
    """
    `coefficients @ v <relation> rhs`.

    When `schedule` is set, the right-hand side at step `k` is `schedule[k]`.
    """

    coefficients: FloatArray
    relation: str
    rhs: float
    schedule: tuple[int, ...] | None = None

    def rhs_at(self, step: int) -> float:
        """
        Right-hand side at a step.

        :raise RejectedInput: The schedule ends before `step`.
        """
        if self.schedule is None:
            return self.rhs

        imperative(
            step < len(self.schedule),
            f"Schedule of length {len(self.schedule)} ends before step {step}",
            reason=MissingValue('schedule', step),
        )
        return float(self.schedule[step])

    def holds(self, values: FloatArray, step: int, tol: float = ROW_TOLERANCE) -> bool:
        """Tell whether the row is satisfied by the full variable vector."""
        lhs = float(self.coefficients @ np.nan_to_num(values))
        rhs = self.rhs_at(step)
        if self.relation == EQ:
            return abs(lhs - rhs) <= tol

        return lhs <= rhs + tol


@dataclass(frozen=True, eq=False)
class Band:
    """
    Rows sharing a group of binaries and the auxiliaries they gate.

    `levels` lists auxiliary indices in the order they can be resolved.
    """

    label: str
    binaries: tuple[int, ...]
    levels: tuple[tuple[int, ...], ...]
    rows: tuple[Row, ...]


@dataclass(frozen=True, eq=False)
class MldSystem:
    """
    Compiled MLD system of a network.

    :ivar variables: Names of all variables, in stacking order.
    :ivar n_x: Number of states.
    :ivar n_u: Number of inputs.
    :ivar n_binaries: Number of binaries.
    :ivar n_auxiliaries: Number of auxiliaries.
    :ivar bands: Link and mode bands.
    :ivar dynamics: Band defining `x+`.
    :ivar bigm: Big-M constants per layered coupling.
    """

    variables: tuple[str, ...]
    n_x: int
    n_u: int
    n_binaries: int
    n_auxiliaries: int
    bands: tuple[Band, ...]
    dynamics: Band
    bigm: dict[LinkKey, BigM]

    @property
    def n_variables(self) -> int:
        """Length of the stacked variable vector."""
        return len(self.variables)

    @property
    def binary_slice(self) -> slice:
        """Position of the binaries."""
        start = self.n_x + self.n_u
        return slice(start, start + self.n_binaries)

    @property
    def auxiliary_slice(self) -> slice:
        """Position of the auxiliaries."""
        start = self.n_x + self.n_u + self.n_binaries
        return slice(start, start + self.n_auxiliaries)

    @property
    def next_slice(self) -> slice:
        """Position of `x+`."""
        return slice(self.n_variables - self.n_x, self.n_variables)

    def rows(self) -> Iterator[tuple[str, Row]]:
        """Every row with the label of its band, dynamics last."""
        for band in (*self.bands, self.dynamics):
            for row in band.rows:
                yield band.label, row

        # endfor

    @property
    def n_rows(self) -> int:
        """Number of rows."""
        return sum(1 for _ in self.rows())


_KIND_ORDER = ('x', 'u', 'binary', 'auxiliary', 'next')

_Sparse = dict[str, float]
_RowSpec = tuple[_Sparse, str, float, tuple[int, ...] | None]


class _Builder:
    """Collects named variables and sparse rows, then densifies them."""

    def __init__(self) -> None:
        self._kinds: dict[str, str] = {}
        self._bands: list[tuple[str, list[str], list[list[str]], list[_RowSpec]]] = []

    def variable(self, kind: str, name: str) -> str:
        self._kinds[name] = kind
        return name

    def band(
        self, label: str
    ) -> tuple[list[str], list[list[str]], list[_RowSpec]]:
        binaries: list[str] = []
        levels: list[list[str]] = []
        rows: list[_RowSpec] = []
        self._bands.append((label, binaries, levels, rows))
        return binaries, levels, rows

    def build(self, n_x: int, n_u: int, bigm: dict[LinkKey, BigM]) -> MldSystem:
        order = sorted(
            self._kinds,
            key=lambda name: _KIND_ORDER.index(self._kinds[name]),
        )
        index = {name: position for position, name in enumerate(order)}

        def dense(sparse: _Sparse) -> FloatArray:
            coefficients = np.zeros(len(order))
            for name, value in sparse.items():
                coefficients[index[name]] += value

            return coefficients

        bands = [
            Band(
                label,
                tuple(index[name] for name in binaries),
                tuple(tuple(index[name] for name in level) for level in levels),
                tuple(
                    Row(dense(sparse), relation, rhs, schedule)
                    for sparse, relation, rhs, schedule in rows
                ),
            )
            for label, binaries, levels, rows in self._bands
        ]
        kinds = [self._kinds[name] for name in order]
        return MldSystem(
            variables=tuple(order),
            n_x=n_x,
            n_u=n_u,
            n_binaries=kinds.count('binary'),
            n_auxiliaries=kinds.count('auxiliary'),
            bands=tuple(bands[:-1]),
            dynamics=bands[-1],
            bigm=bigm,
        )


def _product_rows(
    rows: list[_RowSpec],
    z: str,
    binary: str,
    inner: _Sparse,
    bound: float,
) -> None:
    # z = binary * inner, given |inner| <= bound
    negated = {name: -value for name, value in inner.items()}
    rows.append(({z: 1.0, binary: -bound}, LE, 0.0, None))
    rows.append(({z: -1.0, binary: -bound}, LE, 0.0, None))
    rows.append(({z: 1.0, binary: bound, **negated}, LE, bound, None))
    rows.append(({z: -1.0, binary: bound, **inner}, LE, bound, None))


def _link_band(
    builder: _Builder,
    net: NetworkModel,
    key: LinkKey,
    layers: tuple[Layer, ...],
    x_names: list[str],
    u_names: list[str],
    margin: float,
) -> tuple[list[str], BigM]:
    source, target = key
    tag = f"{source + 1}_{target + 1}"
    gain = next(
        c.gain for c in net.couplings if (c.source, c.target) == key
    )
    bigm = compute_bigM(
        gain, net.state_boxes[source], layers, net.input_boxes[source]
    )
    source_x = x_names[net.state_slice(source)]
    source_u = u_names[net.input_slice(source)]

    binaries, levels, rows = builder.band(f"link {source + 1}->{target + 1}")
    inner = [
        {name: float(gain[r, c]) for c, name in enumerate(source_x) if gain[r, c]}
        for r in range(gain.shape[0])
    ]
    polytope = 0
    for level, layer in enumerate(layers, start=1):
        eps = builder.variable('binary', f"eps{tag}^{level}")
        binaries.append(eps)
        z = [
            builder.variable('auxiliary', f"z{tag}^{level}[{r + 1}]")
            for r in range(gain.shape[0])
        ]
        levels.append(z)
        for r, name in enumerate(z):
            _product_rows(rows, name, eps, inner[r], float(bigm.M[r]))

        inner = [{name: 1.0} for name in z]

        if isinstance(layer, StateDependent):
            imperative(
                layer.n_rows == 1,
                f"Link {source + 1}->{target + 1} layer {level} has "
                f"{layer.n_rows} half-spaces; MLD links need one",
                reason=UnsupportedModel('multi-row link polytope'),
            )
            upper = float(bigm.M_star[polytope][0])
            lower = float(bigm.m_star[polytope][0])
            polytope += 1
            region = {name: float(layer.S[0, c]) for c, name in enumerate(source_x)}
            if layer.R.shape[1]:
                region.update(
                    {name: float(layer.R[0, c]) for c, name in enumerate(source_u)}
                )

            offset = float(layer.T[0])
            if not expect(
                lower <= 0.0,
                f"Link {source + 1}->{target + 1} layer {level}: polytope misses "
                "the box; the layer is forced off",
                logger=_logger,
                throw=False,
            ):
                rows.append(({eps: 1.0}, EQ, 0.0, None))
                continue

            upper = max(upper, 0.0)
            # forward: eps = 1 implies S x + R u <= T
            rows.append(({**region, eps: upper}, LE, offset + upper, None))
            # reverse: eps = 0 implies S x + R u - T >= margin
            reverse = {name: -value for name, value in region.items()}
            reverse[eps] = lower - margin
            rows.append((reverse, LE, -offset - margin, None))

        elif isinstance(layer, Decision) and not layer.schedule:
            rows.append(({eps: 1.0}, EQ, 1.0, None))

        else:
            rows.append(({eps: 1.0}, EQ, 0.0, tuple(layer.schedule)))

        # endif
    # endfor

    return levels[-1], bigm


def _mode_band(
    builder: _Builder,
    net: NetworkModel,
    agent: int,
    x_names: list[str],
    u_names: list[str],
    margin: float,
) -> list[str]:
    sub = net.subsystems[agent]
    own_x = x_names[net.state_slice(agent)]
    own_u = u_names[net.input_slice(agent)]
    box = net.state_boxes[agent]
    joint = Box.concatenate([box, net.input_boxes[agent]])
    n_x = len(own_x)

    binaries, levels, rows = builder.band(f"modes {agent + 1}")
    deltas = [
        builder.variable('binary', f"delta{agent + 1}^{m + 1}")
        for m in range(len(sub.modes))
    ]
    binaries.extend(deltas)
    rows.append(({delta: 1.0 for delta in deltas}, EQ, 1.0, None))

    sums: list[str] = []
    outputs: list[list[str]] = [[] for _ in range(n_x)]
    for m, (mode, delta) in enumerate(zip(sub.modes, deltas, strict=True)):
        guard = mode.guard
        assert guard is not None  # for mypy
        low, high = affine_range(guard.normal.reshape(1, -1), box)
        if guard.strict:
            # n x <= offset - margin when delta = 1
            bound = max(float(high[0]) - guard.offset + margin, 0.0)
            row = {name: float(guard.normal[c]) for c, name in enumerate(own_x)}
            row[delta] = bound
            rows.append((row, LE, bound + guard.offset - margin, None))

        else:
            # n x >= offset when delta = 1
            bound = max(guard.offset - float(low[0]), 0.0)
            row = {name: -float(guard.normal[c]) for c, name in enumerate(own_x)}
            row[delta] = bound
            rows.append((row, LE, bound - guard.offset, None))

        # endif

        joined = np.hstack([mode.A, mode.B])
        low, high = affine_range(joined, joint)
        names = own_x + own_u
        for r in range(n_x):
            z = builder.variable('auxiliary', f"zm{agent + 1}^{m + 1}[{r + 1}]")
            sums.append(z)
            outputs[r].append(z)
            inner = {
                name: float(joined[r, c])
                for c, name in enumerate(names)
                if joined[r, c]
            }
            bound = max(abs(float(low[r])), abs(float(high[r])))
            _product_rows(rows, z, delta, inner, bound)
        # endfor
    # endfor

    levels.append(sums)
    return [name for r in range(n_x) for name in outputs[r]]


def to_mld(net: NetworkModel, layers: TopologyLayers | None = None) -> MldSystem:
    """
    Compile a network with layered couplings into MLD form.

    :param net: Network with bounded state boxes (and bounded input boxes for
      agents with several modes or input-dependent polytopes).
    :param layers: Layers of the couplings; couplings without layers enter
      the dynamics linearly.

    :raise RejectedInput: Unbounded box, or a link polytope with more than one
      half-space.
    """
    for agent, box in enumerate(net.state_boxes):
        imperative(
            box.is_bounded(),
            f"State box of agent {agent + 1} is unbounded",
            reason=Unbounded(f"state box {agent + 1}"),
        )

    margin = settings.get('strict_margin')
    builder = _Builder()
    x_names = [builder.variable('x', f"x{r + 1}") for r in range(net.n_x)]
    u_names = [builder.variable('u', f"u{r + 1}") for r in range(net.n_u)]

    own_terms: dict[int, list[str]] = {}
    for agent, sub in enumerate(net.subsystems):
        if len(sub.modes) > 1:
            imperative(
                net.input_boxes[agent].is_bounded(),
                f"Input box of agent {agent + 1} is unbounded",
                reason=Unbounded(f"input box {agent + 1}"),
            )
            outputs = _mode_band(builder, net, agent, x_names, u_names, margin)
            own_terms[agent] = outputs

    # endfor

    bigm: dict[LinkKey, BigM] = {}
    link_terms: dict[LinkKey, list[str]] = {}
    for coupling in net.couplings:
        key = (coupling.source, coupling.target)
        stack = layers.of(key) if layers is not None else ()
        if stack:
            link_terms[key], bigm[key] = _link_band(
                builder, net, key, stack, x_names, u_names, margin
            )

    # endfor

    next_names = [builder.variable('next', f"x{r + 1}+") for r in range(net.n_x)]
    _, levels, rows = builder.band('dynamics')
    levels.append(next_names)
    for agent, sub in enumerate(net.subsystems):
        own_x = x_names[net.state_slice(agent)]
        own_u = u_names[net.input_slice(agent)]
        targets = next_names[net.state_slice(agent)]
        n_modes = len(sub.modes)
        for r, name in enumerate(targets):
            row: dict[str, float] = {name: 1.0}
            if n_modes > 1:
                for z in own_terms[agent][r * n_modes:(r + 1) * n_modes]:
                    row[z] = row.get(z, 0.0) - 1.0

            else:
                mode = sub.modes[0]
                for c, variable in enumerate(own_x):
                    row[variable] = row.get(variable, 0.0) - float(mode.A[r, c])

                for c, variable in enumerate(own_u):
                    row[variable] = row.get(variable, 0.0) - float(mode.B[r, c])

            # endif

            for coupling in net.couplings_into(agent):
                key = (coupling.source, agent)
                if key in link_terms:
                    z = link_terms[key][r]
                    row[z] = row.get(z, 0.0) - 1.0
                    continue

                for c, variable in enumerate(x_names[net.state_slice(coupling.source)]):
                    row[variable] = row.get(variable, 0.0) - float(coupling.gain[r, c])

            # endfor
            rows.append((row, EQ, 0.0, None))
        # endfor
    # endfor

    mld = builder.build(net.n_x, net.n_u, bigm)
    _logger.info(
        "Compiled MLD system: %d binaries, %d auxiliaries, %d rows",
        mld.n_binaries,
        mld.n_auxiliaries,
        mld.n_rows,
    )
    return mld


def _pin_levels(band: Band, values: FloatArray, step: int) -> bool:
    known = ~np.isnan(values)
    filled = np.where(known, values, 0.0)
    for level in band.levels:
        for index in level:
            lower, upper = -np.inf, np.inf
            for row in band.rows:
                coefficient = row.coefficients[index]
                if coefficient == 0.0:
                    continue

                others = row.coefficients.copy()
                others[index] = 0.0
                if np.any((others != 0.0) & ~known):
                    continue

                bound = (row.rhs_at(step) - float(others @ filled)) / coefficient
                if row.relation == EQ:
                    lower, upper = max(lower, bound), min(upper, bound)

                elif coefficient > 0:
                    upper = min(upper, bound)

                else:
                    lower = max(lower, bound)

                # endif
            # endfor

            if not (np.isfinite(lower) and np.isfinite(upper)):
                return False

            if upper - lower > PIN_TOLERANCE or lower - upper > PIN_TOLERANCE:
                return False

            filled[index] = (lower + upper) / 2
            known[index] = True
        # endfor
    # endfor

    values[:] = np.where(known, filled, np.nan)
    return True


def _resolve(band: Band, values: FloatArray, step: int) -> FloatArray:
    found: list[FloatArray] = []
    for bits in itertools.product((0.0, 1.0), repeat=len(band.binaries)):
        trial = values.copy()
        trial[list(band.binaries)] = bits
        if not _pin_levels(band, trial, step):
            continue

        if all(row.holds(trial, step) for row in band.rows):
            found.append(trial)

    # endfor

    if len(found) != 1:
        _logger.error(
            "Band %s at step %d has %d consistent assignments",
            band.label,
            step,
            len(found),
        )
        raise SolverFailure(
            f"Band {band.label} has {len(found)} consistent assignments at step {step}",
            reason=NoConsistentAssignment(band.label, step, len(found)),
            logger=_logger,
        )

    return found[0]


def evaluate_step(
    mld: MldSystem, x: ArrayLike, u: ArrayLike, step: int = 0
) -> FloatArray:
    """
    Find the binaries, auxiliaries and `x+` consistent with `(x, u)`.

    :return: The full variable vector.

    :raise SolverFailure: A band has no, or several, consistent assignments.
    """
    state = finite('x', x).ravel()
    inputs = finite('u', u).ravel()
    shaped('x', state, (mld.n_x,))
    shaped('u', inputs, (mld.n_u,))

    values = np.full(mld.n_variables, np.nan)
    values[: mld.n_x] = state
    values[mld.n_x: mld.n_x + mld.n_u] = inputs
    for band in (*mld.bands, mld.dynamics):
        values = _resolve(band, values, step)

    return values


@dataclass
class MldTrajectory:
    """States `(steps + 1, n_x)`, binaries and auxiliaries `(steps, ...)`."""

    states: FloatArray
    binaries: FloatArray
    auxiliaries: FloatArray


def simulate_mld(
    mld: MldSystem, x0: ArrayLike, inputs: ArrayLike, steps: int
) -> MldTrajectory:
    """
    Simulate by solving the logic constraints at every step.

    :param mld: Compiled system.
    :param x0: Initial state.
    :param inputs: `(steps, n_u)` input sequence.
    :param steps: Number of steps.

    :raise RejectedInput: Bad shapes.
    :raise SolverFailure: No unique consistent assignment, naming the band.
    """
    state = finite('x0', x0).ravel()
    sequence = finite('inputs', inputs)
    if sequence.ndim == 1 and mld.n_u == 1:
        sequence = sequence.reshape(-1, 1)

    shaped('inputs', sequence[:steps], (steps, mld.n_u))

    states = np.zeros((steps + 1, mld.n_x))
    binaries = np.zeros((steps, mld.n_binaries))
    auxiliaries = np.zeros((steps, mld.n_auxiliaries))
    states[0] = state
    for step in range(steps):
        values = evaluate_step(mld, state, sequence[step], step)
        binaries[step] = values[mld.binary_slice]
        auxiliaries[step] = values[mld.auxiliary_slice]
        state = values[mld.next_slice]
        states[step + 1] = state
    # endfor

    return MldTrajectory(states, binaries, auxiliaries)


def listing(mld: MldSystem, step: int = 0) -> str:
    """
    Plain-text constraint listing, one row per line.

    The first line names the variables; each row line is
    `<band>: <coefficients> <relation> <rhs>`, with scheduled right-hand
    sides taken at `step`.
    """
    lines = ['# variables: ' + ' '.join(mld.variables)]
    for label, row in mld.rows():
        coefficients = ' '.join(f"{value:.17g}" for value in row.coefficients)
        lines.append(f"{label}: {coefficients} {row.relation} {row.rhs_at(step):.17g}")

    return '\n'.join(lines) + '\n'
