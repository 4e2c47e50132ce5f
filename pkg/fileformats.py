# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Line-oriented text files.

All formats are UTF-8, one directive per line, `#` starts a comment and node
ids are 1-based.

Network file::

    nodes 2
    bounds x -0.9 0.9            # every agent; or `bounds x <id> lo hi`
    bounds u -0.5 0.5
    mode * guard x>=0 a 0.5 b 1  # `*` is every agent
    mode * guard x<0 a -0.5 b 1
    edge 1 2 0.31                # agent 2 influences agent 1

A `mode` line without a guard declares a linear agent.

Layer file (one line per layer, in layer order)::

    layer 2 1 state-dep S 1 T 0  # rows of S, R and T separated by `|`
    layer 2 1 decision 1 1 0     # schedule; no schedule is always on
    layer 2 1 signal 1 0 1

Graph file::

    nodes 3
    node 1 input u1
    arc 1 2 0.5

Partition file: `key=value` header lines, then `set <k>: <id> <id> ...`.
"""

from __future__ import annotations

from collections.abc import Iterator, Mapping
import logging
import math
import re

import numpy as np
from numpy.typing import NDArray

from .checks import imperative
from .errors import (
    Duplicate,
    MissingValue,
    ParseFailure,
    RejectedInput,
    UnsupportedModel,
)
from .graph import NodeKind, WeightedDigraph
from .models import (
    Box,
    Coupling,
    Guard,
    LinearSubsystem,
    Mode,
    NetworkModel,
    PwaSubsystem,
    Subsystem,
)
from .partition import Partition, PartitionResult
from .topology import (
    Decision,
    ExternalSignal,
    Layer,
    LinkKey,
    StateDependent,
    TopologyLayers,
)

_logger = logging.getLogger(__name__)

_GUARD = re.compile(r'^x(?P<relation>>=|<)(?P<offset>[-+0-9.eE]+)$')


class _Reader:
    """Directive lines of a text, with their 1-based numbers."""

    def __init__(self, text: str, path: str | None) -> None:
        self.path = path
        self.lines = text.splitlines()

    def fail(self, number: int, message: str) -> RejectedInput:
        """Build the error for a bad line."""
        text = self.lines[number - 1] if 0 < number <= len(self.lines) else ''
        where = f"{self.path or '<text>'}:{number}"
        _logger.error("%s: %s", where, message)
        return RejectedInput(
            f"{where}: {message}", reason=ParseFailure(self.path, number, text)
        )

    def directives(self) -> Iterator[tuple[int, list[str]]]:
        """
        Yield `(line_number, tokens)` of non-blank lines.

        :raise RejectedInput: No directive at all.
        """
        found = False
        for number, line in enumerate(self.lines, start=1):
            tokens = line.split('#', 1)[0].split()
            if tokens:
                found = True
                yield number, tokens

        # endfor
        if not found:
            raise self.fail(1, "No directives")

    def number(self, line: int, token: str) -> float:
        """Parse a finite real."""
        try:
            value = float(token)

        except ValueError:
            raise self.fail(line, f"{token!r} is not a number") from None

        # endtry
        if not math.isfinite(value) and not token.lstrip('+-').startswith('inf'):
            raise self.fail(line, f"{token!r} is not a number")

        return value

    def node(self, line: int, token: str, n_nodes: int) -> int:
        """Parse a 1-based id into a 0-based one."""
        try:
            value = int(token)

        except ValueError:
            raise self.fail(line, f"{token!r} is not a node id") from None

        # endtry
        if not 1 <= value <= n_nodes:
            raise self.fail(line, f"Node {value} outside 1..{n_nodes}")

        return value - 1


def _read(path: str) -> str:
    with open(path, encoding='utf-8') as stream:
        return stream.read()

    # endwith


def _write(path: str, text: str) -> None:
    with open(path, 'w', encoding='utf-8') as stream:
        stream.write(text)

    # endwith


def _count(reader: _Reader, line: int, tokens: list[str], seen: int | None) -> int:
    if seen is not None:
        raise reader.fail(line, "Repeated `nodes`")

    if len(tokens) != 2:
        raise reader.fail(line, "Expected `nodes N`")

    count = reader.node(line, tokens[1], 10**9) + 1
    return count


def parse_network(text: str, path: str | None = None) -> NetworkModel:
    """
    Read a network of scalar agents.

    :raise RejectedInput: Syntax error (with the line), an agent without mode,
      or an inconsistent model.
    """
    reader = _Reader(text, path)
    n_agents: int | None = None
    bounds: dict[str, list[tuple[float, float]]] = {}
    modes: dict[int, list[Mode]] = {}
    edges: dict[tuple[int, int], float] = {}
    guarded: dict[int, bool] = {}

    for line, tokens in reader.directives():
        keyword = tokens[0]
        if keyword == 'nodes':
            n_agents = _count(reader, line, tokens, n_agents)
            for kind in ('x', 'u'):
                bounds[kind] = [(-math.inf, math.inf)] * n_agents

            continue

        if n_agents is None:
            raise reader.fail(line, "`nodes N` must come first")

        if keyword == 'bounds':
            if len(tokens) not in (4, 5) or tokens[1] not in ('x', 'u'):
                raise reader.fail(line, "Expected `bounds x|u [id] lo hi`")

            low = reader.number(line, tokens[-2])
            high = reader.number(line, tokens[-1])
            if low > high:
                raise reader.fail(line, f"Lower bound {low} above {high}")

            if len(tokens) == 5:
                agent = reader.node(line, tokens[2], n_agents)
                bounds[tokens[1]][agent] = (low, high)

            else:
                bounds[tokens[1]] = [(low, high)] * n_agents

            # endif

        elif keyword == 'mode':
            if len(tokens) < 2:
                raise reader.fail(line, "Expected `mode <id|*> ...`")

            if tokens[1] == '*':
                targets = list(range(n_agents))

            else:
                targets = [reader.node(line, tokens[1], n_agents)]

            # endif
            rest = tokens[2:]
            guard: Guard | None = None
            if rest[:1] == ['guard']:
                match = _GUARD.match(rest[1]) if len(rest) > 1 else None
                if match is None:
                    raise reader.fail(line, "Expected `guard x>=c` or `guard x<c`")

                offset = reader.number(line, match.group('offset'))
                strict = match.group('relation') == '<'
                guard = Guard.below(offset) if strict else Guard.at_least(offset)
                rest = rest[2:]

            # endif
            if len(rest) != 4 or rest[0] != 'a' or rest[2] != 'b':
                raise reader.fail(line, "Expected `a <real> b <real>`")

            mode = Mode(
                np.array([[reader.number(line, rest[1])]]),
                np.array([[reader.number(line, rest[3])]]),
                guard,
            )
            for agent in targets:
                if guarded.setdefault(agent, guard is not None) != (guard is not None):
                    raise reader.fail(line, f"Agent {agent + 1} mixes guarded modes")

                if guard is None and modes.get(agent):
                    raise reader.fail(line, f"Agent {agent + 1} has two linear modes")

                modes.setdefault(agent, []).append(mode)
            # endfor

        elif keyword == 'edge':
            if len(tokens) != 4:
                raise reader.fail(line, "Expected `edge i j w`")

            target = reader.node(line, tokens[1], n_agents)
            source = reader.node(line, tokens[2], n_agents)
            if (source, target) in edges:
                raise reader.fail(line, f"Duplicate edge {tokens[1]} {tokens[2]}")

            edges[(source, target)] = reader.number(line, tokens[3])

        else:
            raise reader.fail(line, f"Unknown directive {keyword!r}")

        # endif
    # endfor

    if n_agents is None:
        raise reader.fail(1, "Missing `nodes N`")

    missing = [agent for agent in range(n_agents) if agent not in modes]
    imperative(
        not missing,
        f"Agents {[agent + 1 for agent in missing]} have no mode",
        reason=MissingValue('mode', missing),
    )

    subsystems: list[Subsystem] = []
    for agent in range(n_agents):
        pieces = modes[agent]
        if guarded[agent]:
            subsystems.append(PwaSubsystem(tuple(pieces)))

        else:
            subsystems.append(LinearSubsystem(pieces[0].A, pieces[0].B))

    # endfor

    return NetworkModel(
        subsystems,
        [
            Coupling(source, target, np.array([[weight]]))
            for (source, target), weight in sorted(edges.items())
        ],
        [Box.uniform(1, *bounds['x'][agent]) for agent in range(n_agents)],
        [Box.uniform(1, *bounds['u'][agent]) for agent in range(n_agents)],
    )


def load_network(path: str) -> NetworkModel:
    """Read a network file."""
    return parse_network(_read(path), path)


def _scalar(net: NetworkModel) -> None:
    for agent, sub in enumerate(net.subsystems):
        n_x, n_u, _ = sub.dims
        imperative(
            (n_x, n_u) == (1, 1),
            f"Agent {agent + 1} is not scalar",
            reason=UnsupportedModel('network file holds scalar agents only'),
        )
    # endfor


def dump_network(net: NetworkModel) -> str:
    """
    Write a network of scalar agents in the network file format.

    :raise RejectedInput: An agent has more than one state or input.
    """
    _scalar(net)
    lines = [f"nodes {net.n_agents}"]
    for kind, boxes in (('x', net.state_boxes), ('u', net.input_boxes)):
        for agent, box in enumerate(boxes):
            low, high = float(box.lower[0]), float(box.upper[0])
            if math.isinf(low) and math.isinf(high):
                continue

            lines.append(f"bounds {kind} {agent + 1} {low!r} {high!r}")
        # endfor
    # endfor

    for agent, sub in enumerate(net.subsystems):
        for mode in sub.modes:
            guard = ''
            if mode.guard is not None:
                imperative(
                    float(mode.guard.normal[0]) == 1.0,
                    f"Guard of agent {agent + 1} is not on x",
                    reason=UnsupportedModel('guard normal'),
                )
                relation = '<' if mode.guard.strict else '>='
                guard = f" guard x{relation}{float(mode.guard.offset)!r}"

            lines.append(
                f"mode {agent + 1}{guard}"
                f" a {float(mode.A[0, 0])!r} b {float(mode.B[0, 0])!r}"
            )
        # endfor
    # endfor

    lines.extend(
        f"edge {c.target + 1} {c.source + 1} {float(c.gain[0, 0])!r}"
        for c in net.couplings
    )
    return '\n'.join(lines) + '\n'


def save_network(net: NetworkModel, path: str) -> None:
    """Write a network file."""
    _write(path, dump_network(net))


def _rows(reader: _Reader, line: int, tokens: list[str]) -> list[list[float]]:
    rows: list[list[float]] = [[]]
    for token in tokens:
        if token == '|':
            rows.append([])

        else:
            rows[-1].append(reader.number(line, token))

    # endfor
    return rows if any(rows) else []


def _state_dependent(reader: _Reader, line: int, tokens: list[str]) -> StateDependent:
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for token in tokens:
        if token in ('S', 'R', 'T'):
            if token in sections:
                raise reader.fail(line, f"Repeated section {token}")

            current = token
            sections[current] = []

        elif current is None:
            raise reader.fail(line, "Expected `S ... [R ...] T ...`")

        else:
            sections[current].append(token)

        # endif
    # endfor

    if 'S' not in sections or 'T' not in sections:
        raise reader.fail(line, "state-dep needs S and T")

    s_rows = _rows(reader, line, sections['S'])
    t_rows = _rows(reader, line, sections['T'])
    r_rows = _rows(reader, line, sections.get('R', []))
    if len({len(row) for row in s_rows}) != 1 or any(len(row) != 1 for row in t_rows):
        raise reader.fail(line, "Ragged S or T")

    r_matrix = np.array(r_rows) if r_rows else np.zeros((len(s_rows), 0))
    return StateDependent(
        np.array(s_rows), r_matrix, np.array([row[0] for row in t_rows])
    )


def parse_layers(
    text: str, net: NetworkModel, path: str | None = None
) -> TopologyLayers:
    """
    Read the layers of a network's couplings.

    :raise RejectedInput: Syntax error (with the line) or a layer that does not
      fit its coupling.
    """
    reader = _Reader(text, path)
    stacks: dict[LinkKey, list[Layer]] = {}
    for line, tokens in reader.directives():
        if tokens[0] != 'layer' or len(tokens) < 4:
            raise reader.fail(line, "Expected `layer <src> <dst> <kind> ...`")

        source = reader.node(line, tokens[1], net.n_agents)
        target = reader.node(line, tokens[2], net.n_agents)
        kind, arguments = tokens[3], tokens[4:]
        layer: Layer
        if kind == 'state-dep':
            layer = _state_dependent(reader, line, arguments)

        elif kind in ('decision', 'signal'):
            bits = []
            for token in arguments:
                if token not in ('0', '1'):
                    raise reader.fail(line, f"{token!r} is not a bit")

                bits.append(int(token))
            # endfor
            if kind == 'decision':
                layer = Decision(tuple(bits))

            elif bits:
                layer = ExternalSignal(tuple(bits))

            else:
                raise reader.fail(line, "A signal needs a schedule")

            # endif

        else:
            raise reader.fail(line, f"Unknown layer kind {kind!r}")

        # endif
        stacks.setdefault((source, target), []).append(layer)
    # endfor

    return TopologyLayers(net, stacks)


def load_layers(path: str, net: NetworkModel) -> TopologyLayers:
    """Read a layer file."""
    return parse_layers(_read(path), net, path)


def _section(name: str, matrix: NDArray[np.float64]) -> str:
    rows = [' '.join(repr(float(value)) for value in row) for row in matrix]
    return f"{name} " + ' | '.join(rows) if rows and matrix.size else name


def dump_layers(layers: TopologyLayers) -> str:
    """Write layers in the layer file format."""
    lines = []
    for key in layers.keys():
        head = f"layer {key[0] + 1} {key[1] + 1}"
        for layer in layers.of(key):
            if isinstance(layer, StateDependent):
                body = ' '.join(
                    (
                        _section('S', layer.S),
                        _section('R', layer.R),
                        _section('T', layer.T.reshape(-1, 1)),
                    )
                )
                lines.append(f"{head} state-dep {body}")

            else:
                kind = 'decision' if isinstance(layer, Decision) else 'signal'
                bits = ''.join(f" {bit}" for bit in layer.schedule)
                lines.append(f"{head} {kind}{bits}")

            # endif
        # endfor
    # endfor
    return '\n'.join(lines) + '\n'


def parse_graph(text: str, path: str | None = None) -> WeightedDigraph:
    """
    Read a weighted digraph.

    Nodes not listed with `node` are agent nodes.

    :raise RejectedInput: Syntax error, with the line.
    """
    reader = _Reader(text, path)
    n_nodes: int | None = None
    kinds: list[NodeKind] = []
    labels: list[str] = []
    arcs: dict[tuple[int, int], float] = {}
    for line, tokens in reader.directives():
        keyword = tokens[0]
        if keyword == 'nodes':
            n_nodes = _count(reader, line, tokens, n_nodes)
            kinds = [NodeKind.AGENT] * n_nodes
            labels = [str(node + 1) for node in range(n_nodes)]
            continue

        if n_nodes is None:
            raise reader.fail(line, "`nodes N` must come first")

        if keyword == 'node' and len(tokens) in (3, 4):
            node = reader.node(line, tokens[1], n_nodes)
            try:
                kinds[node] = NodeKind(tokens[2])

            except ValueError:
                raise reader.fail(line, f"Unknown kind {tokens[2]!r}") from None

            # endtry
            if len(tokens) == 4:
                labels[node] = tokens[3]

        elif keyword == 'arc' and len(tokens) == 4:
            src = reader.node(line, tokens[1], n_nodes)
            dst = reader.node(line, tokens[2], n_nodes)
            if (src, dst) in arcs:
                raise reader.fail(line, f"Duplicate arc {tokens[1]} {tokens[2]}")

            arcs[(src, dst)] = reader.number(line, tokens[3])

        else:
            raise reader.fail(line, f"Cannot read {' '.join(tokens)!r}")

        # endif
    # endfor

    return WeightedDigraph(
        kinds, [(src, dst, w) for (src, dst), w in arcs.items()], labels
    )


def load_graph(path: str) -> WeightedDigraph:
    """Read a graph file."""
    return parse_graph(_read(path), path)


def dump_graph(g: WeightedDigraph) -> str:
    """
    Write a graph; weights are written exactly.

    >>> g = WeightedDigraph([NodeKind.INPUT, NodeKind.STATE], [(0, 1, 0.1)])
    >>> print(dump_graph(g), end='')
    nodes 2
    node 1 input 1
    node 2 state 2
    arc 1 2 0.1
    """
    lines = [f"nodes {g.n_nodes}"]
    lines.extend(
        f"node {node + 1} {g.kind(node).value} {g.label(node)}" for node in g.nodes
    )
    lines.extend(
        f"arc {src + 1} {dst + 1} {weight!r}" for src, dst, weight in g.edges()
    )
    return '\n'.join(lines) + '\n'


def save_graph(g: WeightedDigraph, path: str) -> None:
    """Write a graph file."""
    _write(path, dump_graph(g))


def dump_partition(
    partition: Partition | PartitionResult,
    metadata: Mapping[str, object] | None = None,
) -> str:
    """
    Write a partition with `key=value` metadata.

    The method, alpha, objective, partition index and modularity of a result
    are written first.

    >>> print(dump_partition(Partition([0, 1, 0])), end='')
    set 1: 1 3
    set 2: 2
    """
    header: dict[str, object] = {}
    if isinstance(partition, PartitionResult):
        result = partition
        partition = result.partition
        header['method'] = result.method.value
        if result.alpha is not None:
            header['alpha'] = repr(result.alpha)

        header['objective'] = repr(result.objective)
        if result.p_idx is not None:
            header['p_idx'] = repr(result.p_idx)

        if result.modularity_q is not None:
            header['Q'] = repr(result.modularity_q)

    # endif
    header.update(metadata or {})

    lines = [f"{key}={value}" for key, value in header.items()]
    for index, members in enumerate(partition.sets(), start=1):
        lines.append(f"set {index}: " + ' '.join(str(node + 1) for node in members))

    return '\n'.join(lines) + '\n'


def parse_partition(
    text: str, path: str | None = None
) -> tuple[Partition, dict[str, str]]:
    """
    Read a partition and its metadata.

    :raise RejectedInput: Syntax error, or sets that overlap or leave gaps.
    """
    reader = _Reader(text, path)
    metadata: dict[str, str] = {}
    sets: dict[int, list[int]] = {}
    for line, tokens in reader.directives():
        if tokens[0] == 'set':
            if len(tokens) < 3 or not tokens[1].endswith(':'):
                raise reader.fail(line, "Expected `set <k>: <id> ...`")

            index = reader.node(line, tokens[1][:-1], 10**9)
            if index in sets:
                raise reader.fail(line, f"Repeated set {index + 1}")

            sets[index] = [reader.node(line, token, 10**9) for token in tokens[2:]]

        elif '=' in tokens[0]:
            key, _, value = ' '.join(tokens).partition('=')
            metadata[key] = value

        else:
            raise reader.fail(line, f"Cannot read {' '.join(tokens)!r}")

        # endif
    # endfor

    imperative(
        sorted(sets) == list(range(len(sets))),
        f"Sets {sorted(index + 1 for index in sets)} are not numbered 1..{len(sets)}",
        reason=Duplicate('set numbers'),
    )
    return Partition.from_sets([sets[index] for index in sorted(sets)]), metadata


def load_partition(path: str) -> tuple[Partition, dict[str, str]]:
    """Read a partition file."""
    return parse_partition(_read(path), path)


def save_partition(
    partition: Partition | PartitionResult,
    path: str,
    metadata: Mapping[str, object] | None = None,
) -> None:
    """Write a partition file."""
    _write(path, dump_partition(partition, metadata))
