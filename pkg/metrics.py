# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Evaluation metrics of closed loops.

For a :class:`mpc.TrajectoryLog` of `N_sim` steps:

- stage cost: `sum_k q |x(k)|^2 + r |u(k - 1)|^2` for `k = 1 .. N_sim`;
- computation time: `sum_k max_i tau_i(k)`, the slowest coalition per step;
- computation cost in core-seconds: `sum_k sum_i tau_i(k)` (exact), or
  `sum_k n_cores * max_i tau_i(k)` when cores idle for the slowest solve;
- communication cost, iterative: every ADMM iteration, each coalition sends
  its predicted sequence of length `N_seq` to each neighbouring coalition,
  costing `nu(x_i) + nu(u_i)` per sample; static: every step, each coupling
  between coalitions costs `nu(link)`.

The centralized controller serves as the reference: its communication cost is
every agent (iterative) or every coupling (static) transmitting once a step.
"""

from __future__ import annotations

from collections.abc import Mapping
import dataclasses
from dataclasses import dataclass, field
import enum
import logging
from typing import Any

from .checks import finite, imperative
from .errors import MissingValue, UnsupportedModel
from .horizon import MpcProblem
from .models import NetworkModel
from .mpc import Strategy, TrajectoryLog, coalition_links

_logger = logging.getLogger(__name__)

#: Names of the normalized metrics, in report order.
METRICS = ('stage', 'time', 'comp', 'comm')

Cost = float | Mapping[int, float]
LinkCost = float | Mapping[tuple[int, int], float]


class CommMode(enum.Enum):
    """Communication model of :func:`communication_cost`."""

    STATIC = 'static'
    ITERATIVE = 'iterative'


class CompMode(enum.Enum):
    """Accounting of :func:`computation_cost`."""

    EXACT = 'exact'
    IDLE_SLOWEST = 'idle-slowest'


def _check_costs(what: str, costs: float | Mapping[Any, float]) -> None:
    values = list(costs.values()) if isinstance(costs, Mapping) else [costs]
    finite(what, values)
    imperative(
        all(value >= 0 for value in values),
        f"Transmission costs {what} must be nonnegative",
        reason=UnsupportedModel(f"negative {what}"),
    )


@dataclass(frozen=True)
class CommModel:
    """
    Transmission costs.

    `nu_x` and `nu_u` are indexed by the nodes of the information graph:
    coalitions for distributed control, agents for the centralized
    reference. `nu_link` is indexed by coupling `(source, target)`. A scalar
    is a uniform cost.
    """

    nu_x: Cost = 1.0
    nu_u: Cost = 1.0
    nu_link: LinkCost = 1.0
    mode: CommMode = CommMode.ITERATIVE

    def __post_init__(self) -> None:
        _check_costs('nu_x', self.nu_x)
        _check_costs('nu_u', self.nu_u)
        _check_costs('nu_link', self.nu_link)

    def node_cost(self, node: int) -> float:
        """
        `nu(x) + nu(u)` of one node.

        :raise RejectedInput: No cost given for the node.
        """
        return _lookup('nu_x', self.nu_x, node) + _lookup('nu_u', self.nu_u, node)

    def link_cost(self, link: tuple[int, int]) -> float:
        """
        `nu` of one coupling.

        :raise RejectedInput: No cost given for the coupling.
        """
        return _lookup('nu_link', self.nu_link, link)


def _lookup(what: str, costs: float | Mapping[Any, float], key: object) -> float:
    if not isinstance(costs, Mapping):
        return float(costs)

    imperative(
        key in costs,
        f"No transmission cost {what} for {key}",
        reason=MissingValue(what, key),
    )
    return float(costs[key])


@dataclass
class MetricsReport:
    """
    Metrics of one closed loop.

    `normalized` maps the names in :data:`METRICS` to the ratio against a
    baseline; a ratio is `None` where the baseline is zero.
    """

    j_stage: float
    j_time: float
    j_comp: float
    j_comm: float
    n_cores: int
    label: str
    normalized: dict[str, float | None] = field(default_factory=dict)

    def raw(self) -> dict[str, float]:
        """Raw metrics by the names in :data:`METRICS`."""
        return {
            'stage': self.j_stage,
            'time': self.j_time,
            'comp': self.j_comp,
            'comm': self.j_comm,
        }

    @property
    def opt_loss_pct(self) -> float | None:
        """Stage-cost loss against the baseline, in percent."""
        ratio = self.normalized.get('stage')
        return None if ratio is None else (ratio - 1.0) * 100.0


def stage_cost_cumulative(log: TrajectoryLog, prob: MpcProblem) -> float:
    """
    Sum the stage costs of a closed loop.

    >>> import numpy as np
    >>> log = TrajectoryLog(
    ...     Strategy.CMPC, None, states=[np.zeros(1), np.ones(1)], inputs=[np.ones(1)]
    ... )
    >>> stage_cost_cumulative(log, MpcProblem())
    2.0
    """
    total = 0.0
    for k in range(1, log.steps + 1):
        total += prob.stage_cost(log.states[k], log.inputs[k - 1])

    return total


def computation_time(log: TrajectoryLog) -> float:
    """Total solve time of the slowest coalition of every step."""
    return float(sum(log.slowest_seconds()))


def computation_cost(
    log: TrajectoryLog,
    n_cores: int | None = None,
    mode: CompMode = CompMode.EXACT,
) -> float:
    """
    Core-seconds of a closed loop.

    :param n_cores: Cores kept busy while the slowest coalition solves.
      Defaults to the number of coalitions of each step.
    :param mode: Exact sum of solve times, or idle-slowest accounting.
    """
    if mode is CompMode.EXACT:
        return float(sum(sum(seconds) for seconds in log.solve_seconds))

    total = 0.0
    for seconds in log.solve_seconds:
        cores = n_cores if n_cores is not None else len(seconds)
        total += cores * max(seconds, default=0.0)

    return total


def _reference_cost(log: TrajectoryLog, comm: CommModel, net: NetworkModel) -> float:
    if comm.mode is CommMode.ITERATIVE:
        per_step = sum(comm.node_cost(agent) for agent in range(net.n_agents))

    else:
        per_step = sum(
            comm.link_cost((coupling.source, coupling.target))
            for coupling in net.couplings
        )

    return float(log.steps * per_step)


def communication_cost(log: TrajectoryLog, comm: CommModel, net: NetworkModel) -> float:
    """
    Communication cost of a closed loop.

    Centralized logs get the reference cost of :class:`CommModel`.

    :raise RejectedInput: Costs missing for a node or coupling.
    """
    if log.strategy is Strategy.CMPC or log.partition is None:
        return _reference_cost(log, comm, net)

    partition = log.partition
    if comm.mode is CommMode.STATIC:
        per_step = sum(
            comm.link_cost((coupling.source, coupling.target))
            for coupling in net.couplings
            if partition.set_of(coupling.source) != partition.set_of(coupling.target)
        )
        return float(log.steps * per_step)

    neighbours = coalition_links(net, partition)
    per_iteration = sum(
        len(linked) * log.n_seq * comm.node_cost(index)
        for index, linked in enumerate(neighbours)
        if linked
    )
    return float(sum(log.iterations) * per_iteration)


def metrics_report(
    log: TrajectoryLog,
    prob: MpcProblem,
    net: NetworkModel,
    comm: CommModel | None = None,
    *,
    comp_mode: CompMode = CompMode.EXACT,
    label: str | None = None,
) -> MetricsReport:
    """
    Compute the raw metrics of a closed loop.

    :param label: Row label. Defaults to `'CMPC'` or the partition's
      description.
    """
    comm = comm if comm is not None else CommModel()
    n_cores = log.partition.n_sets if log.partition is not None else 1
    if label is None:
        label = 'CMPC' if log.partition is None else log.partition.describe()

    report = MetricsReport(
        j_stage=stage_cost_cumulative(log, prob),
        j_time=computation_time(log),
        j_comp=computation_cost(log, n_cores, comp_mode),
        j_comm=communication_cost(log, comm, net),
        n_cores=n_cores,
        label=label,
    )
    _logger.debug("Metrics of %s: %s", label, report.raw())
    return report


def normalize(report: MetricsReport, baseline: MetricsReport) -> MetricsReport:
    """
    Divide every metric by the baseline's.

    >>> base = MetricsReport(2.0, 1.0, 1.0, 0.0, 1, 'CMPC')
    >>> normalize(base, base).normalized
    {'stage': 1.0, 'time': 1.0, 'comp': 1.0, 'comm': None}
    """
    raw = report.raw()
    reference = baseline.raw()
    normalized: dict[str, float | None] = {}
    for name in METRICS:
        if reference[name] == 0:
            normalized[name] = None

        else:
            normalized[name] = raw[name] / reference[name]

    # endfor

    return dataclasses.replace(report, normalized=normalized)
