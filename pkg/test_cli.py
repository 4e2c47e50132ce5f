# Copyright (C) 2025, Kan Torii (qoolloop).
"""Tests for the `cli` module."""

import csv
import logging
import pathlib

import pytest

from .cli import ExperimentConfig, main
from .engines import oracle_partition
from .fileformats import (
    load_graph,
    load_partition,
    save_graph,
    save_network,
    save_partition,
)
from .networks import from_spec, linear_chain, random_benchmark_network
from .partition import Partition
from .representations import build_agent_graph

_logger = logging.getLogger(__name__)


def _chain_file(tmp_path: pathlib.Path, n_agents: int) -> str:
    path = str(tmp_path / 'chain.net')
    save_network(linear_chain(n_agents), path)
    return path


def _rows(path: pathlib.Path) -> list[dict[str, str]]:
    with open(path, encoding='utf-8') as handle:
        return list(csv.DictReader(handle))

    # endwith


def test__main__graph_stats_benchmark(capsys: pytest.CaptureFixture[str]) -> None:
    """Test the counts of the 50-agent benchmark."""
    assert main(['graph', 'stats', '--network', 'random-benchmark']) == 0

    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == '50 nodes, 52 edges'
    assert lines[1] == 'degree histogram:'


def test__main__graph_stats_modular(capsys: pytest.CaptureFixture[str]) -> None:
    """Test the three weight tiers of the modular network."""
    assert main(['graph', 'stats', '--network', 'modular64']) == 0

    out = capsys.readouterr().out
    assert out.startswith('64 nodes, ')
    assert 'weight tiers: 0.001 0.01 0.1\n' in out


def test__main__graph_empty_file(
    tmp_path: pathlib.Path, capsys: pytest.CaptureFixture[str]
) -> None:
    """Test that an empty network file fails at line 1."""
    path = tmp_path / 'empty.net'
    path.write_text('', encoding='utf-8')

    assert main(['graph', 'stats', '--network', str(path)]) == 2

    assert f"{path}:1:" in capsys.readouterr().err


def test__main__graph_build(tmp_path: pathlib.Path) -> None:
    """Test that the written graph reads back as the agent graph."""
    path = tmp_path / 'benchmark.graph'

    args = ['graph', 'build', '--network', 'random-benchmark', '--out', str(path)]

    assert main(args) == 0

    assert load_graph(str(path)) == build_agent_graph(random_benchmark_network())


def test__main__partition_oracle(
    tmp_path: pathlib.Path, capsys: pytest.CaptureFixture[str]
) -> None:
    """Test that the oracle's objective is written and echoed."""
    spec = 'random{n=5, density=0.5, seed=1}'
    path = tmp_path / 'oracle.part'

    code = main(
        [
            'partition',
            '--network',
            spec,
            '--method',
            'oracle',
            '--alpha',
            '0.3',
            '--out',
            str(path),
        ]
    )

    assert code == 0
    expected = oracle_partition(build_agent_graph(from_spec(spec)), 0.3)
    partition, metadata = load_partition(str(path))
    assert partition == expected.partition
    assert metadata['method'] == 'oracle'
    assert float(metadata['objective']) == expected.objective
    assert f"objective={expected.objective!r}" in capsys.readouterr().out


def test__main__partition_alpha_zero(
    tmp_path: pathlib.Path, capsys: pytest.CaptureFixture[str]
) -> None:
    """Test that granularity 0 keeps a connected graph together."""
    path = str(tmp_path / 'chain.graph')
    save_graph(build_agent_graph(linear_chain(5)), path)

    assert main(['partition', '--graph', path, '--method', 'bqp-exact']) == 0

    out = capsys.readouterr().out
    assert 'set 1: 1 2 3 4 5\n' in out
    assert 'grand coalition: ok\n' in out


def test__main__evaluate_grand(tmp_path: pathlib.Path) -> None:
    """Test the report and logs of a grand-coalition evaluation."""
    network = _chain_file(tmp_path, 4)
    partition = str(tmp_path / 'grand.part')
    save_partition(Partition.grand(4), partition)
    out = tmp_path / 'out'

    args = ['evaluate', '--network', network, '--partition', partition]
    code = main([*args, '--steps', '2', '--out', str(out)])

    assert code == 0
    rows = _rows(out / 'report.csv')
    assert [row['Partition'] for row in rows] == ['CMPC', 'grand']
    assert abs(float(rows[1]['OptLossPct'])) < 1e-3
    assert all(row['Status'] == 'ok' for row in rows)
    for name in ('run-0.csv', 'run-0-times.csv', 'run-1.csv', 'run-1-times.csv'):
        assert (out / name).is_file()

    # endfor


def test__main__evaluate_nothing(
    tmp_path: pathlib.Path, capsys: pytest.CaptureFixture[str]
) -> None:
    """Test that an evaluation without partitions is rejected."""
    assert main(['evaluate', '--network', _chain_file(tmp_path, 3)]) == 2

    assert 'Nothing to evaluate' in capsys.readouterr().err


def test__main__sweep_single_alpha(tmp_path: pathlib.Path) -> None:
    """Test a one-value sweep."""
    out = tmp_path / 'out'

    args = ['sweep', '--network', _chain_file(tmp_path, 4), '--method', 'bqp-exact']
    code = main([*args, '--alpha', '0.0', '--steps', '1', '--out', str(out)])

    assert code == 0
    rows = _rows(out / 'sweep.csv')
    assert len(rows) == 1
    assert rows[0]['n_sets'] == '1'
    assert rows[0]['alpha'] == '0.0'


def test__main__sweep_all_partitions(capsys: pytest.CaptureFixture[str]) -> None:
    """Test that every partition of three agents is a row."""
    spec = 'random{n=3, density=0.0, seed=0}'
    code = main(['sweep', '--network', spec, '--all-partitions', '--steps', '1'])

    assert code == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert sorted(row['n_sets'] for row in rows) == ['1', '2', '2', '2', '3']


def test__main__rejected(capsys: pytest.CaptureFixture[str]) -> None:
    """Test unknown generators and sweeps without values."""
    assert main(['graph', 'stats', '--network', 'lattice']) == 2
    assert 'Unknown network generator' in capsys.readouterr().err

    assert main(['sweep', '--network', 'modular64']) == 2
    assert '--alpha' in capsys.readouterr().err

    with pytest.raises(SystemExit):
        main(['partition', '--network', 'modular64', '--method', 'given'])

    # endwith


def test__ExperimentConfig__horizon() -> None:
    """Test the horizon defaults of linear and hybrid networks."""
    cfg = ExperimentConfig('evaluate')

    assert cfg.problem(linear_chain(3)).horizon == 5
    assert cfg.problem(random_benchmark_network()).horizon == 2
    fixed = ExperimentConfig('evaluate', horizon=3)
    assert fixed.problem(linear_chain(3)).horizon == 3
