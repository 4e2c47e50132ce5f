# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Mode sequences of piecewise-affine agents by branch-and-bound.

Each node of the tree fixes the modes of some `(agent, t)` and solves the
convex-hull relaxation of the others (:class:`horizon.HorizonQp`), whose
objective bounds every completion. The tree is explored depth first,
branching on the earliest relaxed choice with a fractional weight (by time,
then agent) and trying modes in guard order. Relaxations of children are
warm-started from their parent.

Before the search, the relaxed root states fix a mode sequence through the
guards, which is solved as a mode-fixed QP to seed the incumbent.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
import logging

import numpy as np
from numpy.typing import ArrayLike

from . import settings
from .checks import expect
from .errors import Infeasible, SolverFailure
from .horizon import AgentTime, HorizonQp, HorizonSolution
from .models import PwaSubsystem

_logger = logging.getLogger(__name__)


@dataclass
class BnbStats:
    """Counters of one search."""

    explored: int = 0
    pruned: int = 0
    infeasible: int = 0
    heuristic: bool = False


@dataclass
class _Node:
    fixed: dict[AgentTime, int]
    relaxed: HorizonSolution = field(repr=False)


def _prunes(bound: float, incumbent: HorizonSolution | None, gap: float) -> bool:
    if incumbent is None:
        return False

    best = incumbent.objective
    return bound >= best - gap * abs(best) - 1e-9


def _guard_modes(problem: HorizonQp, relaxed: HorizonSolution) -> dict[AgentTime, int]:
    modes = relaxed.rounded_modes()
    for agent, t in problem.undecided:
        sub = problem.net.subsystems[agent]
        assert isinstance(sub, PwaSubsystem)  # for mypy
        matching = sub.matching_modes(relaxed.states[agent][t])
        if matching:
            modes[(agent, t)] = matching[0]

    # endfor

    return modes


def _branch_key(problem: HorizonQp, node: _Node) -> AgentTime | None:
    for key in problem.undecided:
        if key in node.fixed:
            continue

        weights = node.relaxed.deltas[key]
        if np.any(np.minimum(weights, 1.0 - weights) > 1e-6):
            return key

    # endfor

    return None


def branch_and_bound(
    problem: HorizonQp,
    targets: Mapping[AgentTime, ArrayLike] | None = None,
    *,
    stats: BnbStats | None = None,
) -> HorizonSolution:
    """
    Minimize over the mode sequences of a horizon problem.

    Without relaxed choices this is one QP. The returned solution's `nodes`
    is the number of QPs solved; its status is flagged when the node budget
    (setting `bnb_node_budget`) ran out before the tree was closed.

    :param problem: Horizon problem.
    :param targets: Consensus targets, see :meth:`horizon.HorizonQp.solve()`.
    :param stats: Counters to fill in.

    :raise SolverFailure: No mode sequence is feasible, or the budget ran out
      before any was found.
    """
    stats = stats if stats is not None else BnbStats()
    budget = settings.get('bnb_node_budget')
    gap = settings.get('bnb_rel_gap')

    root = problem.solve(targets=targets)
    stats.explored = 1
    if not root.feasible:
        message = f"Horizon problem of agents {list(problem.agents)} is infeasible"
        _logger.error(message)
        raise SolverFailure(message, reason=Infeasible('branch-and-bound root'))

    if not problem.undecided:
        return root

    incumbent: HorizonSolution | None = None
    guessed = problem.solve(_guard_modes(problem, root), targets, warm=root.result)
    stats.explored += 1
    if guessed.feasible:
        incumbent = guessed
        stats.heuristic = True

    stack = [_Node({}, root)]
    exhausted = False
    while stack and not exhausted:
        node = stack.pop()
        if _prunes(node.relaxed.objective, incumbent, gap):
            stats.pruned += 1
            continue

        key = _branch_key(problem, node)
        if key is None:
            candidate = node.relaxed
            if len(node.fixed) < len(problem.undecided):
                candidate = problem.solve(
                    {**candidate.rounded_modes(), **node.fixed},
                    targets,
                    warm=candidate.result,
                )
                stats.explored += 1

            if candidate.feasible and (
                incumbent is None or candidate.objective < incumbent.objective
            ):
                incumbent = candidate

            continue

        # endif

        children = []
        for mode in range(problem.n_modes(key)):
            if stats.explored >= budget:
                exhausted = True
                break

            fixed = {**node.fixed, key: mode}
            relaxed = problem.solve(fixed, targets, warm=node.relaxed.result)
            stats.explored += 1
            if not relaxed.feasible:
                stats.infeasible += 1

            elif _prunes(relaxed.objective, incumbent, gap):
                stats.pruned += 1

            else:
                children.append(_Node(fixed, relaxed))

            # endif
        # endfor

        stack.extend(reversed(children))
    # endwhile

    _logger.debug(
        "Branch-and-bound on agents %s: %d explored, %d pruned, %d infeasible",
        list(problem.agents),
        stats.explored,
        stats.pruned,
        stats.infeasible,
    )
    if incumbent is None:
        message = f"No feasible mode sequence for agents {list(problem.agents)}"
        _logger.error(message)
        raise SolverFailure(message, reason=Infeasible('branch-and-bound'))

    incumbent.nodes = stats.explored
    if not expect(
        not exhausted,
        f"Branch-and-bound stopped at the node budget of {budget}",
        logger=_logger,
        throw=False,
    ):
        incumbent.status.flag('branch-and-bound node budget')

    return incumbent
