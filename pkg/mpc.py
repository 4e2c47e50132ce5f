# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Receding-horizon control of networks: centralized and distributed.

- :func:`solve_cmpc_linear` and :func:`solve_cmpc_hybrid` solve the horizon
  problem of the whole network in one QP or one branch-and-bound search.
- :func:`solve_dmpc_admm` gives every set of a partition (a *coalition*) its
  own horizon problem. Coalitions keep local copies of the predicted states of
  neighbours in other coalitions and agree on them by consensus ADMM::

      z_j(t)  = mean over holders of (x_j(t) + lambda)
      lambda += x_j(t) - z_j(t)

  The iteration stops when the largest disagreement and `rho` times the
  largest change of `z` are both at most `tol`.
- :func:`simulate_closed_loop` applies the first input of every solve to the
  network over a number of steps, and logs states, inputs, solve times,
  iteration counts and message counts in a :class:`TrajectoryLog`.

Coalition solves of one ADMM iteration run in a thread pool bounded by
:func:`settings.thread_cap()`. Results are merged by coalition index, so that
trajectories do not depend on scheduling; only the recorded times do.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import ExitStack
import csv
from dataclasses import dataclass, field
import enum
import logging
import pathlib
import time

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import settings
from .checks import expect, finite, imperative, shaped
from .errors import (
    DimensionMismatch,
    ExceptionParent,
    Infeasible,
    InvalidPartition,
    SimulationAborted,
    SolverFailure,
    TooLarge,
    Unbounded,
    UnsupportedModel,
)
from .handler import Status
from .horizon import AgentTime, HorizonQp, HorizonSolution, MpcProblem
from .hybrid import branch_and_bound
from .models import NetworkModel
from .partition import Partition
from .topology import TopologyLayers

_logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]


class Strategy(enum.Enum):
    """Controller architecture of a closed loop."""

    CMPC = 'cmpc'
    DMPC = 'dmpc'


@dataclass(frozen=True)
class AdmmParams:
    """Step size, iteration cap and tolerance of consensus ADMM."""

    rho: float = 1.0
    max_iter: int = 500
    tol: float = 1e-6

    def __post_init__(self) -> None:
        imperative(
            self.rho > 0 and self.tol > 0 and self.max_iter >= 1,
            f"Invalid ADMM parameters {self}",
            reason=UnsupportedModel('admm parameters'),
        )


@dataclass(frozen=True)
class SimConfig:
    """
    Length and initial state of a closed loop.

    Without `x0`, the initial state is drawn uniformly from the state box
    shrunk to 80 % about its centre, with `seed`.
    """

    steps: int = 10
    x0: tuple[float, ...] | None = None
    seed: int = 0
    admm: AdmmParams = field(default_factory=AdmmParams)

    def __post_init__(self) -> None:
        imperative(
            self.steps >= 1,
            f"Need at least one step, got {self.steps}",
            reason=DimensionMismatch('steps', '>= 1', self.steps),
        )

    def initial_state(self, net: NetworkModel) -> FloatArray:
        """
        Get the initial stacked state.

        :raise RejectedInput: `x0` of the wrong size or outside the box, or
          no `x0` and an unbounded box.
        """
        box = net.state_box()
        if self.x0 is not None:
            state = finite('x0', self.x0)
            shaped('x0', state, (net.n_x,))
            imperative(
                box.contains(state),
                f"x0 = {state.tolist()} outside the state box",
                reason=Unbounded('x0'),
            )
            return state

        imperative(
            box.is_bounded(),
            "Cannot draw x0 from an unbounded state box",
            reason=Unbounded('state box'),
        )
        shrunk = box.scaled(0.8)
        rng = np.random.default_rng(self.seed)
        return rng.uniform(shrunk.lower, shrunk.upper)


@dataclass
class ControlResult:
    """
    Outcome of one horizon solve of the network.

    - `inputs`: `(N, n_u)` stacked input sequence.
    - `states`: `(N + 1, n_x)` stacked predictions, the measured state first.
    - `seconds`: solve time per coalition (one entry for CMPC).
    - `iterations`: ADMM iterations, 1 for CMPC.
    """

    inputs: FloatArray
    states: FloatArray
    cost: float
    iterations: int
    seconds: list[float]
    status: Status = field(default_factory=Status)


def _stack(
    net: NetworkModel, prob: MpcProblem, solutions: Sequence[HorizonSolution]
) -> tuple[FloatArray, FloatArray]:
    inputs = np.zeros((prob.horizon, net.n_u))
    states = np.zeros((prob.horizon + 1, net.n_x))
    for solution in solutions:
        for agent, sequence in solution.inputs.items():
            inputs[:, net.input_slice(agent)] = sequence
            states[:, net.state_slice(agent)] = solution.states[agent]

    # endfor

    return inputs, states


def _timed(
    function: Callable[[], HorizonSolution],
) -> tuple[HorizonSolution, float]:
    start = time.perf_counter()
    solution = function()
    return solution, time.perf_counter() - start


def _solve_central(
    net: NetworkModel,
    prob: MpcProblem,
    x0: ArrayLike,
    solver: Callable[[HorizonQp], HorizonSolution],
) -> ControlResult:
    problem = HorizonQp(net, prob, x0)
    solution, seconds = _timed(lambda: solver(problem))
    inputs, states = _stack(net, prob, [solution])
    return ControlResult(inputs, states, solution.cost, 1, [seconds], solution.status)


def _single_qp(problem: HorizonQp) -> HorizonSolution:
    solution = problem.solve()
    if not solution.feasible:
        message = f"Horizon problem of agents {list(problem.agents)} is infeasible"
        _logger.error(message)
        raise SolverFailure(message, reason=Infeasible('horizon qp'))

    expect(
        solution.status.is_ok(),
        f"Horizon QP of agents {list(problem.agents)}: {solution.status.text}",
        logger=_logger,
        throw=False,
    )
    return solution


def solve_cmpc_linear(
    net: NetworkModel, prob: MpcProblem, x0: ArrayLike
) -> ControlResult:
    """
    Solve the horizon problem of a network of linear agents.

    >>> from .models import LinearSubsystem
    >>> net = NetworkModel([LinearSubsystem([[0.5]], [[1.0]])])
    >>> result = solve_cmpc_linear(net, MpcProblem(horizon=1), [1.0])
    >>> round(float(result.inputs[0, 0]), 9), round(result.cost, 9)
    (-0.25, 0.125)

    :raise RejectedInput: An agent with several modes.
    :raise SolverFailure: The boxes admit no trajectory.
    """
    imperative(
        net.is_linear(),
        "solve_cmpc_linear needs agents with a single mode",
        reason=UnsupportedModel('piecewise-affine agents'),
    )
    return _solve_central(net, prob, x0, _single_qp)


def _check_hybrid_size(net: NetworkModel, prob: MpcProblem) -> None:
    max_horizon = settings.get('hybrid_max_horizon')
    max_modes = settings.get('hybrid_max_modes')
    imperative(
        prob.horizon <= max_horizon,
        f"Horizon {prob.horizon} is beyond the hybrid limit {max_horizon}",
        reason=TooLarge('horizon', prob.horizon, max_horizon, 'shorten the horizon'),
    )
    imperative(
        net.max_modes() <= max_modes,
        f"Agents with {net.max_modes()} modes are beyond the limit {max_modes}",
        reason=TooLarge('modes', net.max_modes(), max_modes),
    )


def solve_cmpc_hybrid(
    net: NetworkModel, prob: MpcProblem, x0: ArrayLike
) -> ControlResult:
    """
    Solve the horizon problem of a network of piecewise-affine agents.

    The result is optimal over all mode sequences unless its status is
    flagged with the branch-and-bound node budget.

    :raise RejectedInput: Horizon or mode count beyond the settings
      `hybrid_max_horizon` and `hybrid_max_modes`.
    :raise SolverFailure: No feasible mode sequence.
    """
    _check_hybrid_size(net, prob)
    return _solve_central(net, prob, x0, branch_and_bound)


def solve_cmpc(net: NetworkModel, prob: MpcProblem, x0: ArrayLike) -> ControlResult:
    """Solve centrally, by QP for linear networks and branch-and-bound otherwise."""
    if net.is_linear():
        return solve_cmpc_linear(net, prob, x0)

    return solve_cmpc_hybrid(net, prob, x0)


@dataclass
class _Coalition:
    index: int
    problem: HorizonQp
    solve: Callable[[dict[AgentTime, FloatArray]], HorizonSolution]
    seconds: float = 0.0
    last: HorizonSolution | None = None


def _coalitions(
    net: NetworkModel,
    prob: MpcProblem,
    x0: FloatArray,
    partition: Partition,
    rho: float,
) -> tuple[list[_Coalition], dict[int, list[int]]]:
    members = partition.sets()
    holders: dict[int, list[int]] = {}
    for index, agents in enumerate(members):
        copied = {
            c.source for agent in agents for c in net.couplings_into(agent)
        } - set(agents)
        for agent in sorted(set(agents) | copied):
            holders.setdefault(agent, []).append(index)

    # endfor
    shared = (
        {agent for agent, held in holders.items() if len(held) > 1}
        if prob.horizon > 1
        else set()
    )

    coalitions = []
    for index, agents in enumerate(members):
        problem = HorizonQp(net, prob, x0, agents, shared=shared, rho=rho)
        coalitions.append(_Coalition(index, problem, _local_solver(problem)))

    # endfor

    return coalitions, {agent: holders[agent] for agent in sorted(shared)}


def _local_solver(
    problem: HorizonQp,
) -> Callable[[dict[AgentTime, FloatArray]], HorizonSolution]:
    if problem.undecided:
        return lambda targets: branch_and_bound(problem, targets)

    warm: list[HorizonSolution] = []

    def solve(targets: dict[AgentTime, FloatArray]) -> HorizonSolution:
        previous = warm[-1].result if warm else None
        solution = problem.solve(targets=targets, warm=previous)
        if not solution.feasible:
            message = f"Local problem of agents {list(problem.agents)} is infeasible"
            _logger.error(message)
            raise SolverFailure(message, reason=Infeasible('local qp'))

        warm[:] = [solution]
        return solution

    return solve


def _free_response(
    net: NetworkModel, x0: FloatArray, horizon: int
) -> list[FloatArray]:
    box = net.state_box()
    states = [x0]
    for _ in range(1, horizon):
        following = net.step(states[-1], np.zeros(net.n_u))
        states.append(np.clip(following, box.lower, box.upper))

    return states


def _run_round(
    coalitions: Sequence[_Coalition],
    targets: Sequence[dict[AgentTime, FloatArray]],
    executor: Executor | None,
) -> list[HorizonSolution]:
    snapshot = settings.current()

    def task(coalition: _Coalition) -> tuple[HorizonSolution, float]:
        with settings.localcontext(**snapshot):
            return _timed(lambda: coalition.solve(targets[coalition.index]))

        # endwith

    if executor is None:
        outcomes = [task(coalition) for coalition in coalitions]

    else:
        outcomes = list(executor.map(task, coalitions))

    for coalition, (solution, seconds) in zip(coalitions, outcomes, strict=True):
        coalition.seconds += seconds
        coalition.last = solution

    return [solution for solution, _ in outcomes]


def solve_dmpc_admm(
    net: NetworkModel,
    partition: Partition,
    prob: MpcProblem,
    x0: ArrayLike,
    admm: AdmmParams | None = None,
    *,
    executor: Executor | None = None,
) -> ControlResult:
    """
    Solve the horizon problem coalition by coalition with consensus ADMM.

    Without couplings between coalitions, one iteration solves the problem.
    Reaching `max_iter` returns the last iterate with a flagged status.

    :param net: Network.
    :param partition: Coalitions of agents.
    :param prob: Horizon and weights.
    :param x0: Measured stacked state.
    :param admm: ADMM parameters. Defaults if `None`.
    :param executor: Runs the coalition solves of an iteration. A thread pool
      bounded by :func:`settings.thread_cap()` is created if `None`.

    :raise RejectedInput: Partition of another size, or hybrid limits
      exceeded.
    :raise SolverFailure: A local problem is infeasible.
    """
    admm = admm if admm is not None else AdmmParams()
    state = finite('x0', x0).ravel()
    imperative(
        partition.n_nodes == net.n_agents,
        f"Partition of {partition.n_nodes} nodes for {net.n_agents} agents",
        reason=InvalidPartition('partition size differs from the network'),
    )
    if not net.is_linear():
        _check_hybrid_size(net, prob)

    coalitions, holders = _coalitions(net, prob, state, partition, admm.rho)
    horizon = prob.horizon
    free = _free_response(net, state, horizon)
    consensus = {
        agent: np.array([free[t][net.state_slice(agent)] for t in range(1, horizon)])
        for agent in holders
    }
    duals = {
        (index, agent): np.zeros_like(consensus[agent])
        for agent, held in holders.items()
        for index in held
    }

    with ExitStack() as stack:
        if executor is None and len(coalitions) > 1:
            workers = min(settings.thread_cap(), len(coalitions))
            executor = stack.enter_context(ThreadPoolExecutor(max_workers=workers))

        converged = False
        iteration = 0
        for iteration in range(1, admm.max_iter + 1):  # noqa: B007
            targets: list[dict[AgentTime, FloatArray]] = [{} for _ in coalitions]
            for (index, agent), dual in duals.items():
                for t in range(1, horizon):
                    targets[index][(agent, t)] = consensus[agent][t - 1] - dual[t - 1]

            # endfor
            solutions = _run_round(coalitions, targets, executor)
            if not holders:
                converged = True
                break

            primal = 0.0
            dual_change = 0.0
            for agent, held in holders.items():
                local = {index: solutions[index].trajectory(agent) for index in held}
                updated = np.mean(
                    [local[index] + duals[(index, agent)] for index in held], axis=0
                )
                for index in held:
                    duals[(index, agent)] += local[index] - updated
                    primal = max(primal, float(np.max(np.abs(local[index] - updated))))

                dual_change = max(
                    dual_change, float(np.max(np.abs(updated - consensus[agent])))
                )
                consensus[agent] = updated
            # endfor

            _logger.debug(
                "ADMM iteration %d: primal %.3g, dual %.3g",
                iteration,
                primal,
                admm.rho * dual_change,
            )
            if primal <= admm.tol and admm.rho * dual_change <= admm.tol:
                converged = True
                break

        # endfor
    # endwith

    status = Status()
    for coalition in coalitions:
        assert coalition.last is not None  # for mypy
        if not coalition.last.status.is_ok():
            status.flag(coalition.last.status.text.removeprefix('flagged: '))

    # endfor
    if not expect(
        converged,
        f"ADMM did not converge in {admm.max_iter} iterations",
        logger=_logger,
        throw=False,
    ):
        status.flag('admm not converged')

    last = [coalition.last for coalition in coalitions if coalition.last is not None]
    inputs, states = _stack(net, prob, last)
    return ControlResult(
        inputs,
        states,
        sum(solution.cost for solution in last),
        iteration,
        [coalition.seconds for coalition in coalitions],
        status,
    )


def coalition_links(net: NetworkModel, partition: Partition) -> list[set[int]]:
    """
    Get the neighbours of every coalition in the information graph.

    Two coalitions are neighbours when a coupling joins their agents in
    either direction.
    """
    neighbours: list[set[int]] = [set() for _ in range(partition.n_sets)]
    for coupling in net.couplings:
        source = partition.set_of(coupling.source)
        target = partition.set_of(coupling.target)
        if source != target:
            neighbours[source].add(target)
            neighbours[target].add(source)

    # endfor

    return neighbours


@dataclass
class TrajectoryLog:
    """
    Record of a closed loop.

    - `states`: `x(0) .. x(N_sim)`, stacked.
    - `inputs`: `u(0) .. u(N_sim - 1)`, stacked.
    - `solve_seconds`: solve time per coalition per step.
    - `iterations`: ADMM iterations per step (1 for CMPC).
    - `messages`: shared prediction sequences per step.
    - `n_seq`: length of a shared prediction sequence.
    - `flags`: one entry per step whose solve was flagged.
    """

    strategy: Strategy
    partition: Partition | None
    states: list[FloatArray] = field(default_factory=list)
    inputs: list[FloatArray] = field(default_factory=list)
    solve_seconds: list[list[float]] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    messages: list[int] = field(default_factory=list)
    n_seq: int = 0
    flags: list[str] = field(default_factory=list)

    @property
    def steps(self) -> int:
        """Number of completed steps."""
        return len(self.inputs)

    def slowest_seconds(self) -> list[float]:
        """Solve time of the slowest coalition per step."""
        return [max(seconds, default=0.0) for seconds in self.solve_seconds]

    def status(self) -> Status:
        """Status flagged with every flagged step."""
        status = Status()
        for each in self.flags:
            status.flag(each)

        return status

    def write_csv(
        self,
        net: NetworkModel,
        path: str | pathlib.Path,
        sidecar: str | pathlib.Path | None = None,
    ) -> None:
        """
        Write `step, agent, x, u` rows, and optionally the solve times.

        Vector values are space-separated; `u` is empty at the last step. The
        sidecar has `step, coalition, solve_seconds, iterations` rows.
        """
        with open(path, 'w', newline='', encoding='utf-8') as handle:
            writer = csv.DictWriter(handle, fieldnames=['step', 'agent', 'x', 'u'])
            writer.writeheader()
            for step, state in enumerate(self.states):
                for agent in range(net.n_agents):
                    inputs = (
                        self.inputs[step][net.input_slice(agent)]
                        if step < self.steps
                        else np.zeros(0)
                    )
                    writer.writerow(
                        {
                            'step': step,
                            'agent': agent + 1,
                            'x': _format(state[net.state_slice(agent)]),
                            'u': _format(inputs),
                        }
                    )
                # endfor
            # endfor
        # endwith

        if sidecar is None:
            return

        with open(sidecar, 'w', newline='', encoding='utf-8') as handle:
            fieldnames = ['step', 'coalition', 'solve_seconds', 'iterations']
            writer = csv.DictWriter(handle, fieldnames=fieldnames)
            writer.writeheader()
            for step, seconds in enumerate(self.solve_seconds):
                for coalition, value in enumerate(seconds):
                    writer.writerow(
                        {
                            'step': step,
                            'coalition': coalition + 1,
                            'solve_seconds': repr(value),
                            'iterations': self.iterations[step],
                        }
                    )
                # endfor
            # endfor
        # endwith


def _format(values: FloatArray) -> str:
    return ' '.join(repr(float(value)) for value in values)


def simulate_closed_loop(
    strategy: Strategy,
    net: NetworkModel,
    prob: MpcProblem,
    cfg: SimConfig,
    partition: Partition | None = None,
    *,
    layers: TopologyLayers | None = None,
) -> TrajectoryLog:
    """
    Run receding-horizon control for `cfg.steps` steps.

    Predictions assume every coupling active; the network itself is advanced
    with the layers, if given.

    :param strategy: CMPC, or DMPC over `partition`.
    :param partition: Coalitions; required for DMPC.

    :raise RejectedInput: Missing partition, or invalid `cfg`.
    :raise SolverFailure: A solve failed. The log up to the failing step is
      in the information under `'log'`.
    """
    imperative(
        strategy is Strategy.CMPC or partition is not None,
        "DMPC needs a partition",
        reason=InvalidPartition('missing partition'),
    )
    state = cfg.initial_state(net)
    log = TrajectoryLog(strategy, partition, states=[state], n_seq=prob.horizon)
    links = 0
    if strategy is Strategy.DMPC:
        assert partition is not None  # for mypy
        links = sum(len(each) for each in coalition_links(net, partition))

    with ExitStack() as stack:
        executor: Executor | None = None
        if strategy is Strategy.DMPC:
            assert partition is not None  # for mypy
            workers = min(settings.thread_cap(), partition.n_sets)
            if workers > 1:
                executor = stack.enter_context(ThreadPoolExecutor(max_workers=workers))

        # endif

        for step in range(cfg.steps):
            try:
                if strategy is Strategy.CMPC:
                    result = solve_cmpc(net, prob, state)

                else:
                    assert partition is not None  # for mypy
                    result = solve_dmpc_admm(
                        net, partition, prob, state, cfg.admm, executor=executor
                    )

            except ExceptionParent as exception:
                message = f"Closed loop aborted at step {step}"
                _logger.error(message)
                raise SolverFailure(
                    message, reason=SimulationAborted(step, log)
                ) from exception

            # endtry

            applied = result.inputs[0]
            active = layers.active(step, state, applied) if layers is not None else None
            state = net.step(state, applied, active)
            log.states.append(state)
            log.inputs.append(applied)
            log.solve_seconds.append(result.seconds)
            log.iterations.append(result.iterations)
            log.messages.append(result.iterations * links)
            if not result.status.is_ok():
                log.flags.append(f"step {step}: {result.status.text}")

            _logger.info(
                "Step %d of %d (%s): cost %.6g, %d iterations",
                step + 1,
                cfg.steps,
                strategy.value,
                result.cost,
                result.iterations,
            )
        # endfor
    # endwith

    return log
