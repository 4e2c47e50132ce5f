# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Networks shipped with the toolkit, and generators of synthetic ones.

- :func:`example_linear_system`: the 10-state, 3-input linear system used to
  illustrate associated graphs and FSU selection.
- :func:`random_benchmark_network`: 50 hybrid scalar agents coupled by the
  published random topology (52 weighted edges).
- :func:`modular64_network`: 64 agents in modules of 4, groups of 16 and one
  network, with interaction strengths 0.1, 0.01 and 0.001 per tier.
- :func:`linear_chain`: weakly coupled scalar agents on a line.
- :func:`random_network`: random topology with a given density.
"""

from __future__ import annotations

import logging
import re

import numpy as np

from .checks import imperative
from .errors import ParseFailure, RejectedInput
from .models import (
    Box,
    Coupling,
    Guard,
    LinearSubsystem,
    Mode,
    NetworkModel,
    PwaSubsystem,
)

_logger = logging.getLogger(__name__)

#: Bounds of the hybrid benchmark agents.
HYBRID_STATE_BOUNDS = (-0.9, 0.9)
HYBRID_INPUT_BOUNDS = (-0.5, 0.5)

# (i, j, w_ij), 1-based: agent j influences agent i with weight w_ij.
BENCHMARK_TOPOLOGY: tuple[tuple[int, int, float], ...] = (
    (1, 25, 0.53), (2, 3, 0.36), (2, 12, 0.01), (3, 33, 0.60), (4, 26, 0.41),
    (5, 31, 0.47), (6, 38, 0.32), (7, 33, 0.24), (8, 19, 0.24), (9, 49, 0.20),
    (10, 40, 0.36), (11, 35, 0.72), (12, 2, 0.01), (12, 10, 0.42), (13, 7, 0.17),
    (14, 44, 0.44), (15, 31, 0.67), (16, 7, 0.46), (17, 28, 0.42), (18, 40, 0.76),
    (19, 14, 0.67), (20, 31, 0.55), (21, 34, 0.37), (22, 4, 0.66), (23, 1, 0.20),
    (24, 47, 0.51), (25, 46, 0.78), (26, 41, 0.10), (27, 40, 0.60), (28, 22, 0.35),
    (29, 47, 0.43), (30, 46, 0.16), (31, 13, 0.68), (32, 15, 0.34), (33, 10, 0.66),
    (34, 29, 0.19), (35, 6, 0.43), (36, 33, 0.60), (37, 7, 0.41), (38, 36, 0.40),
    (39, 46, 0.23), (40, 36, 0.44), (41, 35, 0.31), (42, 39, 0.66), (43, 38, 0.39),
    (44, 29, 0.19), (45, 39, 0.49), (46, 21, 0.69), (47, 16, 0.40), (48, 12, 0.29),
    (49, 12, 0.13), (50, 40, 0.77),
)  # fmt: skip

BENCHMARK_AGENTS = 50

# (j, i, value), 1-based: entry A[j, i] of the example system.
_EXAMPLE_A = (
    (2, 1, 0.5), (6, 1, 0.1), (8, 2, 0.84), (9, 2, 0.57), (8, 4, 0.54),
    (9, 5, 0.91), (2, 6, 0.98), (3, 6, 0.96), (5, 6, 0.8), (6, 7, 0.6),
    (2, 8, 0.31),
)  # fmt: skip
_EXAMPLE_B = (
    (4, 1, 0.04), (9, 1, 0.6), (10, 1, 0.63), (2, 2, 0.02), (4, 2, 0.6),
    (10, 2, 0.11), (1, 3, 0.19), (2, 3, 0.03),
)  # fmt: skip

MODULE_SIZE = 4
GROUP_SIZE = 16
MODULAR_AGENTS = 64
TIER_WEIGHTS = (0.1, 0.01, 0.001)


def example_linear_system() -> LinearSubsystem:
    """Get the 10-state, 3-input example system (zero entries elsewhere)."""
    a_matrix = np.zeros((10, 10))
    for row, column, value in _EXAMPLE_A:
        a_matrix[row - 1, column - 1] = value

    b_matrix = np.zeros((10, 3))
    for row, column, value in _EXAMPLE_B:
        b_matrix[row - 1, column - 1] = value

    return LinearSubsystem(a_matrix, b_matrix)


def hybrid_agent(gain: float = 0.5) -> PwaSubsystem:
    """
    Scalar agent `x+ = gain*|x| + u` (plus couplings).

    The "x >= 0" mode has `A = gain`, the "x < 0" mode `A = -gain`.
    """
    return PwaSubsystem(
        (
            Mode(np.array([[gain]]), np.array([[1.0]]), Guard.at_least(0.0)),
            Mode(np.array([[-gain]]), np.array([[1.0]]), Guard.below(0.0)),
        )
    )


def _scalar_boxes(
    n_agents: int, state: tuple[float, float], inputs: tuple[float, float]
) -> tuple[list[Box], list[Box]]:
    return (
        [Box.uniform(1, *state) for _ in range(n_agents)],
        [Box.uniform(1, *inputs) for _ in range(n_agents)],
    )


def random_benchmark_network() -> NetworkModel:
    """Get the 50-agent hybrid benchmark with the published topology."""
    couplings = [
        Coupling(j - 1, i - 1, np.array([[w]])) for i, j, w in BENCHMARK_TOPOLOGY
    ]
    state_boxes, input_boxes = _scalar_boxes(
        BENCHMARK_AGENTS, HYBRID_STATE_BOUNDS, HYBRID_INPUT_BOUNDS
    )
    return NetworkModel(
        [hybrid_agent() for _ in range(BENCHMARK_AGENTS)],
        couplings,
        state_boxes,
        input_boxes,
    )


def modular64_edges() -> list[tuple[int, int, float]]:
    """
    Get the bidirectional edges `(src, dst, weight)` of the modular network.

    Modules of 4 are complete graphs with weight 0.1. The four modules of a
    group are joined in a ring with weight 0.01, and the four groups are
    joined in a ring with weight 0.001.
    """
    pairs: list[tuple[int, int, float]] = []
    for module in range(MODULAR_AGENTS // MODULE_SIZE):
        base = module * MODULE_SIZE
        for first in range(MODULE_SIZE):
            for second in range(first + 1, MODULE_SIZE):
                pairs.append((base + first, base + second, TIER_WEIGHTS[0]))
        # endfor
    # endfor

    modules_per_group = GROUP_SIZE // MODULE_SIZE
    for group in range(MODULAR_AGENTS // GROUP_SIZE):
        for position in range(modules_per_group):
            module = group * modules_per_group + position
            following = group * modules_per_group + (position + 1) % modules_per_group
            pairs.append(
                (module * MODULE_SIZE + 3, following * MODULE_SIZE, TIER_WEIGHTS[1])
            )
        # endfor
    # endfor

    n_groups = MODULAR_AGENTS // GROUP_SIZE
    for group in range(n_groups):
        following = (group + 1) % n_groups
        pairs.append(
            (group * GROUP_SIZE + 14, following * GROUP_SIZE + 1, TIER_WEIGHTS[2])
        )

    edges = []
    for src, dst, weight in pairs:
        edges.append((src, dst, weight))
        edges.append((dst, src, weight))

    return sorted(edges)


def modular64_network() -> NetworkModel:
    """Get the 64-agent modular network with stable linear scalar agents."""
    couplings = [
        Coupling(src, dst, np.array([[weight]]))
        for src, dst, weight in modular64_edges()
    ]
    state_boxes, input_boxes = _scalar_boxes(MODULAR_AGENTS, (-1.0, 1.0), (-1.0, 1.0))
    return NetworkModel(
        [LinearSubsystem([[0.5]], [[1.0]]) for _ in range(MODULAR_AGENTS)],
        couplings,
        state_boxes,
        input_boxes,
    )


def module_partition(size: int) -> list[list[int]]:
    """Get the modular network's ground-truth sets of `size` (1, 4, 16 or 64)."""
    return [
        list(range(start, start + size)) for start in range(0, MODULAR_AGENTS, size)
    ]


def linear_chain(
    n_agents: int = 10,
    weight: float = 0.05,
    a: float = 0.9,
    bounds: tuple[float, float] = (-2.0, 2.0),
) -> NetworkModel:
    """
    Get scalar agents `x+ = a x + u` with neighbours on a line coupled by `weight`.
    """
    couplings = []
    for agent in range(n_agents - 1):
        couplings.append(Coupling(agent, agent + 1, np.array([[weight]])))
        couplings.append(Coupling(agent + 1, agent, np.array([[weight]])))

    state_boxes, input_boxes = _scalar_boxes(n_agents, bounds, (-1.0, 1.0))
    return NetworkModel(
        [LinearSubsystem([[a]], [[1.0]]) for _ in range(n_agents)],
        couplings,
        state_boxes,
        input_boxes,
    )


def random_network(
    n_agents: int,
    density: float,
    seed: int,
    *,
    hybrid: bool = True,
    max_weight: float = 0.8,
) -> NetworkModel:
    """
    Draw a network with each ordered agent pair coupled with probability `density`.

    Weights are uniform on `(0.01, max_weight)`, rounded to two decimals like
    the published benchmark. Agents are hybrid benchmark agents, or linear
    `x+ = 0.5 x + u` agents when `hybrid` is `False`.
    """
    rng = np.random.default_rng(seed)
    couplings = []
    for target in range(n_agents):
        for source in range(n_agents):
            if source == target or rng.random() >= density:
                continue

            weight = round(float(rng.uniform(0.01, max_weight)), 2)
            couplings.append(Coupling(source, target, np.array([[weight]])))
        # endfor
    # endfor

    if hybrid:
        subsystems: list[LinearSubsystem | PwaSubsystem] = [
            hybrid_agent() for _ in range(n_agents)
        ]

    else:
        subsystems = [LinearSubsystem([[0.5]], [[1.0]]) for _ in range(n_agents)]

    state_boxes, input_boxes = _scalar_boxes(
        n_agents, HYBRID_STATE_BOUNDS, HYBRID_INPUT_BOUNDS
    )
    return NetworkModel(subsystems, couplings, state_boxes, input_boxes)


_RANDOM_SPEC = re.compile(r'^random\s*[:{(]\s*(?P<body>[^})]*)[})]?\s*$')


def from_spec(spec: str) -> NetworkModel:
    """
    Build a network from a generator spec.

    Accepted: `modular64`, `random-benchmark`, and
    `random{n=20, density=0.1, seed=3}` (also `random:n=20,density=0.1,seed=3`).

    >>> from_spec('random{n=4, density=0.5, seed=1}').n_agents
    4

    :raise RejectedInput: Malformed spec.
    """
    text = spec.strip()
    if text == 'modular64':
        return modular64_network()

    if text == 'random-benchmark':
        return random_benchmark_network()

    match = _RANDOM_SPEC.match(text)
    imperative(
        match is not None,
        f"Unknown network generator {spec!r}",
        reason=ParseFailure(None, 1, spec),
    )
    assert match is not None  # for mypy

    fields: dict[str, str] = {}
    for item in match.group('body').split(','):
        if not item.strip():
            continue

        key, separator, value = item.partition('=')
        imperative(
            separator == '=',
            f"Expected key=value in {spec!r}",
            reason=ParseFailure(None, 1, spec),
        )
        fields[key.strip()] = value.strip()
    # endfor

    imperative(
        set(fields) == {'n', 'density', 'seed'},
        f"random needs exactly n, density and seed, got {sorted(fields)}",
        reason=ParseFailure(None, 1, spec),
    )
    try:
        return random_network(
            int(fields['n']), float(fields['density']), int(fields['seed'])
        )

    except ValueError as exception:
        raise RejectedInput(
            f"Bad number in {spec!r}: {exception}", reason=ParseFailure(None, 1, spec)
        ) from exception

    # endtry
