# Copyright (C) 2025, Kan Torii (qoolloop).
"""Tests for the `mld` module."""

import logging

import numpy as np
from numpy.typing import NDArray
import pytest

from .errors import (
    MissingValue,
    NoConsistentAssignment,
    RejectedInput,
    SolverFailure,
    Unbounded,
    UnsupportedModel,
)
from .mld import evaluate_step, listing, simulate_mld, to_mld
from .models import Box, LinearSubsystem, NetworkModel
from .networks import random_network
from .testutils import raises
from .topology import (
    Decision,
    ExternalSignal,
    Layer,
    StateDependent,
    TopologyLayers,
    simulate_pwa,
)

_logger = logging.getLogger(__name__)

_GAIN = 0.3


def _linear_pair() -> NetworkModel:
    return NetworkModel(
        [LinearSubsystem(0.5, 1.0), LinearSubsystem(0.8, 1.0)],
        [(0, 1, _GAIN)],
        [Box.uniform(1, -0.9, 0.9)] * 2,
        [Box.uniform(1, -0.5, 0.5)] * 2,
    )


def _three_layers(net: NetworkModel) -> TopologyLayers:
    # on while x_1 >= 0
    return TopologyLayers(
        net,
        {
            (0, 1): [
                StateDependent([[-1.0]], (), [0.0]),
                Decision(),
                ExternalSignal((1, 1)),
            ]
        },
    )


def test__to_mld__counts() -> None:
    """Test the variables and rows of one coupling with three layers."""
    net = _linear_pair()

    mld = to_mld(net, _three_layers(net))

    assert (mld.n_binaries, mld.n_auxiliaries) == (3, 3)
    # product rows, two indicator rows plus two definitions, dynamics
    assert mld.n_rows == 12 + 4 + 2
    assert mld.variables == (
        'x1',
        'x2',
        'u1',
        'u2',
        'eps1_2^1',
        'eps1_2^2',
        'eps1_2^3',
        'z1_2^1[1]',
        'z1_2^2[1]',
        'z1_2^3[1]',
        'x1+',
        'x2+',
    )
    assert mld.bigm[(0, 1)].M == pytest.approx([0.27])


def test__to_mld__no_couplings() -> None:
    """Test that an uncoupled network keeps its linear dynamics."""
    net = NetworkModel(
        [LinearSubsystem(0.5, 1.0), LinearSubsystem(0.8, 2.0)],
        (),
        [Box.uniform(1, -1.0, 1.0)] * 2,
    )

    mld = to_mld(net)

    assert (mld.n_binaries, mld.n_auxiliaries, mld.n_rows) == (0, 0, 2)
    values = evaluate_step(mld, [0.4, -0.2], [0.1, 0.1])
    assert values[mld.next_slice] == pytest.approx([0.3, 0.04])


def test__evaluate_step__layers_on() -> None:
    """Test that fixed layers and a satisfied guard pass the coupling."""
    net = _linear_pair()
    mld = to_mld(net, _three_layers(net))

    values = evaluate_step(mld, [0.4, 0.1], [0.0, 0.2])

    assert values[mld.binary_slice].tolist() == [1.0, 1.0, 1.0]
    assert values[mld.variables.index('z1_2^3[1]')] == pytest.approx(_GAIN * 0.4)
    assert values[mld.next_slice] == pytest.approx([0.2, 0.08 + 0.2 + 0.12])


def test__evaluate_step__layer_off() -> None:
    """Test that one layer off zeroes every later auxiliary."""
    net = _linear_pair()
    mld = to_mld(net, _three_layers(net))

    values = evaluate_step(mld, [-0.4, 0.1], [0.0, 0.2])

    assert values[mld.binary_slice].tolist() == [0.0, 1.0, 1.0]
    assert values[mld.auxiliary_slice].tolist() == [0.0, 0.0, 0.0]
    assert values[mld.next_slice] == pytest.approx([-0.2, 0.28])


def test__evaluate_step__outside_box() -> None:
    """Test that a state beyond the big-M bounds names the failing band."""
    net = _linear_pair()
    mld = to_mld(net, TopologyLayers(net, {(0, 1): [Decision()]}))

    with raises(SolverFailure, NoConsistentAssignment, 'band') as context:
        evaluate_step(mld, [2.0, 0.0], [0.0, 0.0], 3)

    # endwith
    assert context.info['band'] == 'link 1->2'
    assert context.info['step'] == 3
    assert context.info['count'] == 0


def test__to_mld__empty_polytope() -> None:
    """Test that a polytope missing the box forces its layer off."""
    net = _linear_pair()
    layers = TopologyLayers(net, {(0, 1): [StateDependent([[1.0]], (), [-2.0])]})

    mld = to_mld(net, layers)

    values = evaluate_step(mld, [-0.8, 0.0], [0.0, 0.0])
    assert values[mld.binary_slice].tolist() == [0.0]
    assert values[mld.next_slice] == pytest.approx([-0.4, 0.0])


def test__to_mld__rejected() -> None:
    """Test unbounded boxes and multi-row link polytopes."""
    with raises(RejectedInput, Unbounded):
        to_mld(NetworkModel([LinearSubsystem(0.5, 1.0)]))

    # endwith
    net = _linear_pair()
    square = StateDependent([[1.0], [-1.0]], (), [0.5, 0.5])
    with raises(RejectedInput, UnsupportedModel):
        to_mld(net, TopologyLayers(net, {(0, 1): [square]}))

    # endwith


def test__simulate_mld__all_layers_off() -> None:
    """Test that an all-zero schedule decouples the agents."""
    net = _linear_pair()
    mld = to_mld(net, TopologyLayers(net, {(0, 1): [ExternalSignal((0, 0, 0))]}))

    trajectory = simulate_mld(mld, [0.8, -0.8], np.zeros((3, 2)), 3)

    assert trajectory.binaries.tolist() == [[0.0], [0.0], [0.0]]
    assert trajectory.states[:, 0] == pytest.approx([0.8, 0.4, 0.2, 0.1])
    assert trajectory.states[3, 1] == pytest.approx(-0.8 * 0.8**3)


def test__simulate_mld__schedule_too_short() -> None:
    """Test that a schedule ending early is rejected."""
    net = _linear_pair()
    mld = to_mld(net, TopologyLayers(net, {(0, 1): [ExternalSignal((1,))]}))

    with raises(RejectedInput, MissingValue):
        simulate_mld(mld, [0.0, 0.0], np.zeros((2, 2)), 2)

    # endwith


def test__listing() -> None:
    """Test the header and the scheduled right-hand sides."""
    net = _linear_pair()
    mld = to_mld(net, TopologyLayers(net, {(0, 1): [ExternalSignal((1, 0))]}))

    first = listing(mld, 0).splitlines()
    second = listing(mld, 1).splitlines()

    assert first[0] == '# variables: x1 x2 u1 u2 eps1_2^1 z1_2^1[1] x1+ x2+'
    assert len(first) == mld.n_rows + 1
    assert sum(line.startswith('dynamics: ') for line in first) == 2
    changed = [
        (old, new) for old, new in zip(first, second, strict=True) if old != new
    ]
    assert len(changed) == 1
    assert changed[0][0].endswith(' == 1')
    assert changed[0][1].endswith(' == 0')


def _random_layers(
    net: NetworkModel, rng: np.random.Generator, steps: int
) -> TopologyLayers:
    layers: dict[tuple[int, int], list[Layer]] = {}
    for coupling in net.couplings:
        stack: list[Layer] = []
        for _ in range(int(rng.integers(1, 4))):
            kind = int(rng.integers(3))
            if kind == 0:
                sign = 1.0 if rng.random() < 0.5 else -1.0
                offset = round(float(rng.uniform(-0.5, 0.5)), 2)
                stack.append(StateDependent([[sign]], (), [offset]))

            elif kind == 1:
                stack.append(Decision(tuple(rng.integers(0, 2, size=steps).tolist())))

            else:
                bits = rng.integers(0, 2, size=steps).tolist()
                stack.append(ExternalSignal(tuple(bits)))

            # endif
        # endfor
        layers[(coupling.source, coupling.target)] = stack
    # endfor
    return TopologyLayers(net, layers)


def _deviation(seed: int, steps: int) -> float:
    rng = np.random.default_rng(seed)
    # |x+| <= 0.45 + 0.05 + 4 * 0.1 * 0.9 keeps every trajectory in the box
    net = random_network(5, 0.4, seed, max_weight=0.1)
    layers = _random_layers(net, rng, steps)
    x0 = rng.uniform(-0.8, 0.8, size=net.n_x)
    inputs: NDArray[np.float64] = rng.uniform(-0.05, 0.05, size=(steps, net.n_u))

    expected = simulate_pwa(net, layers, x0, inputs, steps)
    actual = simulate_mld(to_mld(net, layers), x0, inputs, steps)

    assert expected.status.is_ok()
    return float(np.max(np.abs(expected.states - actual.states)))


@pytest.mark.parametrize('seed', range(3))
def test__simulate_mld__matches_pwa(seed: int) -> None:
    """Test that both forms give the same trajectory."""
    assert _deviation(seed, 20) <= 1e-9


@pytest.mark.slow
def test__simulate_mld__matches_pwa_sweep() -> None:
    """Test 20 random networks over 50 steps."""
    assert max(_deviation(seed, 50) for seed in range(20)) <= 1e-9
