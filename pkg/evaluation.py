# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Posterior evaluation of partitions.

Every candidate partition is judged by the closed loop it produces: the
network is simulated once with centralized control (the baseline) and once
per candidate with distributed control over its coalitions, and the metrics
of :mod:`metrics` are normalized by the baseline's.

Failures of a run are recorded in its status instead of dropping the row.
Rows are ranked by stage cost, ties going to fewer core-seconds; reports are
written in declared order, the baseline first.
"""

from __future__ import annotations

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass, field
import logging
import math
import pathlib

from . import settings
from .checks import imperative
from .engines import run_method
from .errors import DimensionMismatch, InvalidPartition
from .handler import Status, failure_capture
from .horizon import MpcProblem
from .metrics import CommModel, CompMode, MetricsReport, metrics_report, normalize
from .models import NetworkModel
from .mpc import SimConfig, Strategy, TrajectoryLog, simulate_closed_loop
from .partition import Method, Partition, enumerate_partitions_oracle
from .representations import build_agent_graph
from .topology import TopologyLayers

_logger = logging.getLogger(__name__)

REPORT_FIELDS = (
    'Partition',
    'Cores',
    'CostFunValue',
    'OptLossPct',
    'CompTimeS',
    'CompTimeRatio',
    'CoreSeconds',
    'CoreSecondsRatio',
    'Status',
)

SWEEP_FIELDS = (
    'label',
    'alpha',
    'n_sets',
    'j_stage',
    'j_stage_norm',
    'j_time',
    'j_comp',
    'j_comm',
    'status',
)


@dataclass
class Evaluation:
    """
    Closed-loop evaluation of one partition, or of centralized control.

    `order` is the declared position; the baseline is 0.
    """

    label: str
    partition: Partition | None
    order: int
    report: MetricsReport | None = None
    log: TrajectoryLog | None = None
    status: Status = field(default_factory=Status)

    @property
    def is_baseline(self) -> bool:
        """Tell whether this is the centralized run."""
        return self.partition is None

    @property
    def n_cores(self) -> int:
        """Number of coalitions, 1 for the baseline."""
        return 1 if self.partition is None else self.partition.n_sets


@dataclass(frozen=True)
class EvaluationSetup:
    """Everything but the partition that a closed-loop evaluation needs."""

    net: NetworkModel
    prob: MpcProblem
    cfg: SimConfig
    comm: CommModel = field(default_factory=CommModel)
    comp_mode: CompMode = CompMode.EXACT
    layers: TopologyLayers | None = None


def _run(
    setup: EvaluationSetup, label: str, partition: Partition | None, order: int
) -> Evaluation:
    evaluation = Evaluation(label, partition, order)
    strategy = Strategy.CMPC if partition is None else Strategy.DMPC
    with failure_capture(evaluation.status, logger=_logger):
        log = simulate_closed_loop(
            strategy, setup.net, setup.prob, setup.cfg, partition, layers=setup.layers
        )
        evaluation.log = log
        evaluation.report = metrics_report(
            log,
            setup.prob,
            setup.net,
            setup.comm,
            comp_mode=setup.comp_mode,
            label=label,
        )
        for each in log.flags:
            evaluation.status.flag(each)

    # endwith

    _logger.info("Evaluated %s: %s", label, evaluation.status.text)
    return evaluation


def _rank_key(evaluation: Evaluation) -> tuple[float, float, int]:
    report = evaluation.report
    if report is None:
        return (math.inf, math.inf, evaluation.order)

    return (report.j_stage, report.j_comp, evaluation.order)


def posterior_evaluate(
    setup: EvaluationSetup,
    candidates: Sequence[Partition],
    labels: Sequence[str] | None = None,
    *,
    parallel: bool = False,
) -> list[Evaluation]:
    """
    Simulate every candidate and rank them.

    The centralized baseline is part of the result. Normalized metrics are
    missing when the baseline failed.

    :param setup: Network, control problem and metric settings.
    :param candidates: Partitions of the agents.
    :param labels: Row labels. Partition descriptions if `None`.
    :param parallel: Run the candidates in a thread pool bounded by
      :func:`settings.thread_cap()`. Solve times then include contention.

    :raise RejectedInput: No candidates, labels of another count, or a
      partition of another size than the network.
    """
    imperative(
        len(candidates) >= 1,
        "Nothing to evaluate",
        reason=DimensionMismatch('candidates', '>= 1', 0),
    )
    if labels is None:
        labels = [candidate.describe() for candidate in candidates]

    imperative(
        len(labels) == len(candidates),
        f"{len(labels)} labels for {len(candidates)} candidates",
        reason=DimensionMismatch('labels', len(candidates), len(labels)),
    )
    for candidate in candidates:
        imperative(
            candidate.n_nodes == setup.net.n_agents,
            f"Partition of {candidate.n_nodes} nodes for {setup.net.n_agents} agents",
            reason=InvalidPartition('partition size differs from the network'),
        )

    # endfor

    baseline = _run(setup, 'CMPC', None, 0)
    pairs = zip(labels, candidates, strict=True)
    jobs = [
        (label, candidate, order)
        for order, (label, candidate) in enumerate(pairs, start=1)
    ]
    workers = min(settings.thread_cap(), len(jobs))
    if parallel and workers > 1:
        snapshot = settings.current()

        def task(job: tuple[str, Partition, int]) -> Evaluation:
            with settings.localcontext(**snapshot):
                return _run(setup, *job)

            # endwith

        with ThreadPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(task, jobs))

        # endwith

    else:
        rows = [_run(setup, *job) for job in jobs]

    # endif

    evaluations = [baseline, *rows]
    if baseline.report is not None:
        reference = baseline.report
        for evaluation in evaluations:
            if evaluation.report is not None:
                evaluation.report = normalize(evaluation.report, reference)

        # endfor
    # endif

    return sorted(evaluations, key=_rank_key)


def _fixed(value: float | None) -> str:
    return '' if value is None else f"{value:.4f}"


def _smallest(values: Sequence[float]) -> float | None:
    positive = [value for value in values if value > 0]
    return min(positive) if positive else None


def _ratio(value: float, smallest: float | None) -> float | None:
    return None if smallest is None else value / smallest


def report_rows(evaluations: Sequence[Evaluation]) -> list[dict[str, str]]:
    """
    Rows of the report table, in declared order.

    Time and core-second ratios are relative to the smallest value of the
    table. Values have four decimals; cells of failed runs are empty.
    """
    ordered = sorted(evaluations, key=lambda evaluation: evaluation.order)
    reports = [each.report for each in ordered if each.report is not None]
    fastest = _smallest([report.j_time for report in reports])
    cheapest = _smallest([report.j_comp for report in reports])

    rows = []
    for evaluation in ordered:
        row = dict.fromkeys(REPORT_FIELDS, '')
        row['Partition'] = evaluation.label
        row['Cores'] = str(evaluation.n_cores)
        row['Status'] = evaluation.status.text
        report = evaluation.report
        if report is not None:
            row['CostFunValue'] = _fixed(report.j_stage)
            row['OptLossPct'] = _fixed(report.opt_loss_pct)
            row['CompTimeS'] = _fixed(report.j_time)
            row['CompTimeRatio'] = _fixed(_ratio(report.j_time, fastest))
            row['CoreSeconds'] = _fixed(report.j_comp)
            row['CoreSecondsRatio'] = _fixed(_ratio(report.j_comp, cheapest))

        rows.append(row)
    # endfor

    return rows


def _write_rows(
    path: str | pathlib.Path, fieldnames: Sequence[str], rows: Sequence[dict[str, str]]
) -> None:
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)

    # endwith
    _logger.info("Wrote %d rows to %s", len(rows), path)


def write_report(evaluations: Sequence[Evaluation], path: str | pathlib.Path) -> None:
    """Write :func:`report_rows` as CSV."""
    _write_rows(path, REPORT_FIELDS, report_rows(evaluations))


@dataclass
class SweepPoint:
    """One partition of a sweep, with the granularity that produced it."""

    alpha: float | None
    evaluation: Evaluation


def sweep(
    setup: EvaluationSetup,
    *,
    method: Method | str = Method.BQP_LOCAL,
    alphas: Sequence[float] | None = None,
    seed: int = 0,
    parallel: bool = False,
) -> list[SweepPoint]:
    """
    Evaluate the partitions of a granularity sweep, or of every partition.

    With `alphas`, the method partitions the agent graph once per value;
    otherwise every partition of the agents is evaluated. Points are in
    declared order; the baseline only normalizes them.

    :raise RejectedInput: As the method, or too many agents to enumerate.
    """
    if alphas is None:
        candidates = list(enumerate_partitions_oracle(setup.net.n_agents))
        points: list[float | None] = [None] * len(candidates)
        labels = [str(list(candidate.assignment)) for candidate in candidates]

    else:
        graph = build_agent_graph(setup.net)
        candidates = [
            run_method(method, graph, alpha, seed=seed).partition for alpha in alphas
        ]
        points = list(alphas)
        labels = [
            f"alpha={alpha!r}: {candidate.describe()}"
            for alpha, candidate in zip(alphas, candidates, strict=True)
        ]

    # endif

    evaluations = posterior_evaluate(setup, candidates, labels, parallel=parallel)
    by_order = {evaluation.order: evaluation for evaluation in evaluations}
    return [
        SweepPoint(alpha, by_order[order])
        for order, alpha in enumerate(points, start=1)
    ]


def sweep_rows(points: Sequence[SweepPoint]) -> list[dict[str, str]]:
    """Plot-ready rows of a sweep."""
    rows = []
    for point in points:
        evaluation = point.evaluation
        row = dict.fromkeys(SWEEP_FIELDS, '')
        row['label'] = evaluation.label
        row['alpha'] = '' if point.alpha is None else repr(point.alpha)
        row['n_sets'] = str(evaluation.n_cores)
        row['status'] = evaluation.status.text
        report = evaluation.report
        if report is not None:
            row['j_stage'] = _fixed(report.j_stage)
            row['j_stage_norm'] = _fixed(report.normalized.get('stage'))
            row['j_time'] = _fixed(report.j_time)
            row['j_comp'] = _fixed(report.j_comp)
            row['j_comm'] = _fixed(report.j_comm)

        rows.append(row)
    # endfor

    return rows


def write_sweep(points: Sequence[SweepPoint], path: str | pathlib.Path) -> None:
    """Write :func:`sweep_rows` as CSV."""
    _write_rows(path, SWEEP_FIELDS, sweep_rows(points))
