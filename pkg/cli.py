# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Command-line front end.

Subcommands:

- `graph build|stats`: the agent graph of a network, as a graph file or as
  node and edge counts with the degree histogram and weight tiers;
- `partition`: run one partitioner and write the partition file;
- `evaluate`: closed-loop evaluation of partitions against centralized
  control, as a report table and per-run trajectory logs;
- `sweep`: evaluation over a granularity sweep or over every partition.

`--network` takes a network file or a generator spec (`modular64`,
`random-benchmark`, `random{n=20, density=0.1, seed=3}`).

The exit code is 0 when every run is ok, 1 when a row is flagged or failed,
and 2 for rejected input.
"""

from __future__ import annotations

import argparse
from collections.abc import Sequence
import csv
from dataclasses import dataclass
import logging
import os
import pathlib
import sys

from .checks import imperative
from .engines import run_method, select_fsu
from .errors import ExceptionParent, MissingValue
from .evaluation import (
    REPORT_FIELDS,
    SWEEP_FIELDS,
    Evaluation,
    EvaluationSetup,
    posterior_evaluate,
    report_rows,
    sweep,
    sweep_rows,
    write_report,
    write_sweep,
)
from .fileformats import (
    dump_graph,
    dump_partition,
    load_graph,
    load_layers,
    load_network,
    load_partition,
    save_graph,
    save_partition,
)
from .graph import WeightedDigraph, degree_histogram, weight_tiers
from .horizon import MpcProblem
from .metrics import CommMode, CommModel, CompMode
from .models import NetworkModel
from .mpc import AdmmParams, SimConfig
from .networks import from_spec
from .partition import Method, Partition
from .representations import build_agent_graph

_logger = logging.getLogger(__name__)

_LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

#: Horizons used when `--horizon` is not given.
HYBRID_HORIZON = 2
LINEAR_HORIZON = 5

#: Weight tiers listed one by one up to this many.
_MAX_LISTED_TIERS = 8

_PARTITIONERS = [method.value for method in Method if method is not Method.GIVEN]


def _alphas(value: float | Sequence[float] | None) -> tuple[float, ...]:
    if value is None:
        return ()

    if isinstance(value, float):
        return (value,)

    return tuple(value)


@dataclass
class ExperimentConfig:
    """
    Options of one command-line run.

    `horizon` is chosen from the network when `None`: 2 for hybrid networks,
    5 for linear ones.
    """

    command: str
    network: str | None = None
    graph: str | None = None
    action: str = 'stats'
    method: str | None = None
    alphas: tuple[float, ...] = ()
    seed: int = 0
    horizon: int | None = None
    q: float = 1.0
    r: float = 1.0
    steps: int = 10
    rho: float = 1.0
    max_iter: int = 500
    tol: float = 1e-6
    partitions: tuple[str, ...] = ()
    all_partitions: bool = False
    layers: str | None = None
    fsu: bool = False
    comm_mode: str = CommMode.ITERATIVE.value
    comp_mode: str = CompMode.EXACT.value
    parallel: bool = False
    out: str | None = None
    verbose: bool = False

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> ExperimentConfig:
        """Build the configuration from parsed arguments."""
        return cls(
            command=args.command,
            network=args.network,
            graph=getattr(args, 'graph', None),
            action=getattr(args, 'action', 'stats'),
            method=getattr(args, 'method', None),
            alphas=_alphas(getattr(args, 'alpha', None)),
            seed=args.seed,
            horizon=getattr(args, 'horizon', None),
            q=getattr(args, 'q', 1.0),
            r=getattr(args, 'r', 1.0),
            steps=getattr(args, 'steps', 10),
            rho=getattr(args, 'rho', 1.0),
            max_iter=getattr(args, 'max_iter', 500),
            tol=getattr(args, 'tol', 1e-6),
            partitions=tuple(getattr(args, 'partition', None) or ()),
            all_partitions=getattr(args, 'all_partitions', False),
            layers=getattr(args, 'layers', None),
            fsu=getattr(args, 'fsu', False),
            comm_mode=getattr(args, 'comm_mode', CommMode.ITERATIVE.value),
            comp_mode=getattr(args, 'comp_mode', CompMode.EXACT.value),
            parallel=getattr(args, 'parallel', False),
            out=args.out,
            verbose=args.verbose,
        )

    def load_network(self) -> NetworkModel:
        """
        Read the network file, or generate the network from its spec.

        :raise RejectedInput: No network, or as the parser or generator.
        """
        imperative(
            self.network is not None,
            "--network is required",
            reason=MissingValue('option', '--network'),
        )
        assert self.network is not None  # for mypy

        if os.path.isfile(self.network):
            _logger.info("Reading network file %s", self.network)
            return load_network(self.network)

        _logger.info("Generating network %s", self.network)
        return from_spec(self.network)

    def load_graph(self) -> WeightedDigraph:
        """The graph file if given, else the agent graph of the network."""
        if self.graph is not None:
            return load_graph(self.graph)

        return build_agent_graph(self.load_network())

    def problem(self, net: NetworkModel) -> MpcProblem:
        """The control problem, with the horizon default of the network."""
        horizon = self.horizon
        if horizon is None:
            horizon = LINEAR_HORIZON if net.is_linear() else HYBRID_HORIZON

        return MpcProblem(horizon=horizon, q=self.q, r=self.r)

    def sim_config(self) -> SimConfig:
        """The closed-loop settings."""
        admm = AdmmParams(rho=self.rho, max_iter=self.max_iter, tol=self.tol)
        return SimConfig(steps=self.steps, seed=self.seed, admm=admm)

    def setup(self, net: NetworkModel) -> EvaluationSetup:
        """Everything an evaluation needs besides the partitions."""
        layers = load_layers(self.layers, net) if self.layers is not None else None
        return EvaluationSetup(
            net,
            self.problem(net),
            self.sim_config(),
            CommModel(mode=CommMode(self.comm_mode)),
            CompMode(self.comp_mode),
            layers,
        )


def _write(text: str) -> None:
    sys.stdout.write(text)


def _stats(g: WeightedDigraph) -> str:
    lines = [f"{g.n_nodes} nodes, {g.n_edges} edges", "degree histogram:"]
    for degree, count in degree_histogram(g).items():
        lines.append(f"  {degree}: {count}")

    tiers = weight_tiers(g)
    if len(tiers) <= _MAX_LISTED_TIERS:
        lines.append("weight tiers: " + ' '.join(repr(tier) for tier in tiers))

    else:
        lines.append(
            f"weight tiers: {len(tiers)} distinct in [{tiers[0]!r}, {tiers[-1]!r}]"
        )

    # endif
    return '\n'.join(lines) + '\n'


def cmd_graph(cfg: ExperimentConfig) -> int:
    """Build the agent graph, or print its statistics."""
    g = cfg.load_graph()
    if cfg.action == 'build':
        if cfg.out is None:
            _write(dump_graph(g))

        else:
            save_graph(g, cfg.out)
            _logger.info("Wrote graph to %s", cfg.out)

        # endif
        return 0

    _write(_stats(g))
    return 0


def cmd_partition(cfg: ExperimentConfig) -> int:
    """Partition a graph and write the partition file."""
    g = cfg.load_graph()
    groups = select_fsu(g) if cfg.fsu else None
    result = run_method(
        cfg.method or Method.BQP_LOCAL.value,
        g,
        cfg.alphas[0] if cfg.alphas else 0.0,
        seed=cfg.seed,
        groups=groups,
    )
    if cfg.out is not None:
        save_partition(result, cfg.out)
        _logger.info("Wrote partition to %s", cfg.out)

    _write(dump_partition(result))
    _write(f"{result.partition.describe()}: {result.status.text}\n")
    return 0 if result.status.is_ok() else 1


def _candidates(
    cfg: ExperimentConfig, net: NetworkModel
) -> tuple[list[Partition], list[str]]:
    candidates = []
    labels = []
    for path in cfg.partitions:
        partition, _ = load_partition(path)
        candidates.append(partition)
        labels.append(pathlib.Path(path).stem)
    # endfor

    if cfg.method is not None:
        graph = build_agent_graph(net)
        for alpha in cfg.alphas or (0.0,):
            result = run_method(cfg.method, graph, alpha, seed=cfg.seed)
            candidates.append(result.partition)
            labels.append(f"{cfg.method} alpha={alpha!r}")
        # endfor
    # endif

    return candidates, labels


def _print_rows(fieldnames: Sequence[str], rows: Sequence[dict[str, str]]) -> None:
    writer = csv.DictWriter(sys.stdout, fieldnames=fieldnames, lineterminator='\n')
    writer.writeheader()
    writer.writerows(rows)


def _write_logs(
    evaluations: Sequence[Evaluation], net: NetworkModel, out: pathlib.Path
) -> None:
    for evaluation in evaluations:
        if evaluation.log is None:
            continue

        name = f"run-{evaluation.order}"
        evaluation.log.write_csv(
            net, out / f"{name}.csv", sidecar=out / f"{name}-times.csv"
        )
    # endfor


def _exit_code(evaluations: Sequence[Evaluation]) -> int:
    return 0 if all(each.status.is_ok() for each in evaluations) else 1


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    """
    Evaluate partition files and partitioner outputs against centralized
    control.
    """
    net = cfg.load_network()
    candidates, labels = _candidates(cfg, net)
    evaluations = posterior_evaluate(
        cfg.setup(net), candidates, labels, parallel=cfg.parallel
    )
    if cfg.out is not None:
        out = pathlib.Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report(evaluations, out / 'report.csv')
        _write_logs(evaluations, net, out)

    # endif
    _print_rows(REPORT_FIELDS, report_rows(evaluations))
    return _exit_code(evaluations)


def cmd_sweep(cfg: ExperimentConfig) -> int:
    """Evaluate the partitions of a granularity sweep, or every partition."""
    net = cfg.load_network()
    imperative(
        cfg.all_partitions or len(cfg.alphas) >= 1,
        "Give --alpha values or --all-partitions",
        reason=MissingValue('option', '--alpha'),
    )
    points = sweep(
        cfg.setup(net),
        method=cfg.method or Method.BQP_LOCAL.value,
        alphas=None if cfg.all_partitions else cfg.alphas,
        seed=cfg.seed,
        parallel=cfg.parallel,
    )
    if cfg.out is not None:
        out = pathlib.Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_sweep(points, out / 'sweep.csv')

    # endif
    _print_rows(SWEEP_FIELDS, sweep_rows(points))
    return _exit_code([point.evaluation for point in points])


def _add_control(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        '--horizon', type=int, default=None, help="2 for hybrid, 5 for linear"
    )
    parser.add_argument('--q', type=float, default=1.0, help="state weight")
    parser.add_argument('--r', type=float, default=1.0, help="input weight")
    parser.add_argument('--steps', type=int, default=10, help="closed-loop steps")
    parser.add_argument('--rho', type=float, default=1.0, help="ADMM penalty")
    parser.add_argument('--max-iter', type=int, default=500, help="ADMM iterations")
    parser.add_argument('--tol', type=float, default=1e-6, help="ADMM tolerance")
    parser.add_argument('--layers', default=None, help="topology layer file")
    parser.add_argument(
        '--comm-mode',
        choices=[mode.value for mode in CommMode],
        default=CommMode.ITERATIVE.value,
    )
    parser.add_argument(
        '--comp-mode',
        choices=[mode.value for mode in CompMode],
        default=CompMode.EXACT.value,
    )
    parser.add_argument(
        '--parallel', action='store_true', help="run rows in a thread pool"
    )


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser of every subcommand."""
    parser = argparse.ArgumentParser(
        prog='pypartition', description="Partition networks for distributed MPC."
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--network', default=None, help="network file or generator")
    common.add_argument('--seed', type=int, default=0)
    common.add_argument('--out', default=None, help="output file or directory")
    common.add_argument('--verbose', action='store_true', help="log DEBUG")

    commands = parser.add_subparsers(dest='command', required=True)

    graph = commands.add_parser('graph', parents=[common], help="agent graph")
    graph.add_argument('action', choices=['build', 'stats'])
    graph.add_argument('--graph', default=None, help="graph file instead")

    partition = commands.add_parser('partition', parents=[common], help="partition")
    partition.add_argument('--graph', default=None, help="graph file instead")
    partition.add_argument('--method', choices=_PARTITIONERS, default=None)
    partition.add_argument('--alpha', type=float, default=0.0)
    partition.add_argument(
        '--fsu', action='store_true', help="partition the FSUs of the graph"
    )

    evaluate = commands.add_parser('evaluate', parents=[common], help="evaluate")
    evaluate.add_argument('--partition', action='append', default=None)
    evaluate.add_argument('--method', choices=_PARTITIONERS, default=None)
    evaluate.add_argument('--alpha', type=float, nargs='+', default=None)
    _add_control(evaluate)

    sweeping = commands.add_parser('sweep', parents=[common], help="sweep")
    sweeping.add_argument('--method', choices=_PARTITIONERS, default=None)
    sweeping.add_argument('--alpha', type=float, nargs='+', default=None)
    sweeping.add_argument('--all-partitions', action='store_true')
    _add_control(sweeping)

    return parser


_COMMANDS = {
    'graph': cmd_graph,
    'partition': cmd_partition,
    'evaluate': cmd_evaluate,
    'sweep': cmd_sweep,
}


def main(argv: Sequence[str] | None = None) -> int:
    """
    Run one subcommand.

    :return: Exit code.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format=_LOG_FORMAT,
    )
    cfg = ExperimentConfig.from_args(args)
    try:
        return _COMMANDS[cfg.command](cfg)

    except ExceptionParent as exception:
        sys.stderr.write(f"error: {exception.get_message()}\n")
        return 2

    except OSError as exception:
        sys.stderr.write(f"error: {exception}\n")
        return 2

    # endtry
