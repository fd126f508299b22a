"""Bidirectional instruction-level control flow graphs."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

from .errors import ValidationError
from .listing import DisasmFunction, InstrKind
from .normalize import instruction_tokens

_ENDS_BLOCK = (InstrKind.JUMP_UNCOND, InstrKind.JUMP_COND, InstrKind.RETURN, InstrKind.INDIRECT_JUMP)


class EdgeType(str, Enum):
    SEQ = "SEQ"
    FALLTHROUGH = "FALLTHROUGH"
    JUMP = "JUMP"


class Direction(str, Enum):
    FWD = "FWD"
    BWD = "BWD"


EDGE_KINDS = [(t, d) for t in EdgeType for d in Direction]
N_EDGE_KINDS = len(EDGE_KINDS)  # self-loops use id N_EDGE_KINDS in the encoder


def edge_kind_id(etype, direction) -> int:
    return EDGE_KINDS.index((EdgeType(etype), Direction(direction)))


class Node(NamedTuple):
    index: int
    instr_index: int
    tokens: tuple


class Edge(NamedTuple):
    src: int
    dst: int
    etype: EdgeType
    direction: Direction


@dataclass(frozen=True)
class BlockPartition:
    leaders: tuple
    blocks: tuple  # (start, end) half-open index ranges


@dataclass
class BiCfg:
    nodes: list
    edges: list
    name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def q(self):
        return len(self.nodes)

    def forward_edges(self):
        return [e for e in self.edges if e.direction is Direction.FWD]

    def edge_counts(self):
        """(mirrored pairs counted once, every directed edge)."""
        total = len(self.edges)
        return total // 2, total

    def __eq__(self, other):
        if not isinstance(other, BiCfg):
            return NotImplemented
        return (self.nodes == other.nodes and sorted(self.edges) == sorted(other.edges))


def find_leaders(f: DisasmFunction) -> BlockPartition:
    q = len(f.instructions)
    if q == 0:
        return BlockPartition((), ())
    leaders = {0}
    index_of = f.index_of
    for i, ins in enumerate(f.instructions):
        if ins.kind in (InstrKind.JUMP_UNCOND, InstrKind.JUMP_COND) and ins.target in index_of:
            leaders.add(index_of[ins.target])
        if ins.kind in _ENDS_BLOCK and i + 1 < q:
            leaders.add(i + 1)
    ordered = tuple(sorted(leaders))
    blocks = tuple(zip(ordered, ordered[1:] + (q,)))
    return BlockPartition(ordered, blocks)


def _check_partition(f, part):
    q = len(f.instructions)
    if q == 0:
        if part.leaders or part.blocks:
            raise ValidationError(f"{f.name}: non-empty partition for an empty function")
        return
    if not part.leaders or part.leaders[0] != 0:
        raise ValidationError(f"{f.name}: partition must start at instruction 0")
    pos = 0
    for (s, e), lead in zip(part.blocks, part.leaders):
        if s != pos or s != lead or e <= s:
            raise ValidationError(f"{f.name}: partition blocks are not contiguous at index {s}")
        pos = e
    if pos != q or len(part.blocks) != len(part.leaders):
        raise ValidationError(f"{f.name}: partition covers {pos} of {q} instructions")


def build_bicfg(f: DisasmFunction, partition: BlockPartition = None, tokenizer=instruction_tokens) -> BiCfg:
    if partition is None:
        partition = find_leaders(f)
    _check_partition(f, partition)
    q = len(f.instructions)
    token_lists = tokenizer(f) if tokenizer is not None else [[] for _ in range(q)]
    nodes = [Node(i, i, tuple(toks)) for i, toks in enumerate(token_lists)]
    index_of = f.index_of
    fwd = []
    seen = set()
    meta = {"self_jumps": 0, "unresolved_jumps": 0, "indirect_jumps": 0}

    def link(u, v, t):
        if u == v:
            meta["self_jumps"] += 1
            return
        if (u, v, t) not in seen:
            seen.add((u, v, t))
            fwd.append((u, v, t))

    for s, e in partition.blocks:
        for i in range(s, e - 1):
            link(i, i + 1, EdgeType.SEQ)
        last = f.instructions[e - 1]
        kind = last.kind
        if kind in (InstrKind.JUMP_UNCOND, InstrKind.JUMP_COND):
            if last.target in index_of:
                link(e - 1, index_of[last.target], EdgeType.JUMP)
            else:
                meta["unresolved_jumps"] += 1
            if kind is InstrKind.JUMP_COND and e < q:
                link(e - 1, e, EdgeType.FALLTHROUGH)
        elif kind in (InstrKind.FALLTHROUGH, InstrKind.CALL):
            if e < q:
                link(e - 1, e, EdgeType.FALLTHROUGH)
        elif kind is InstrKind.INDIRECT_JUMP:
            meta["indirect_jumps"] += 1

    edges = []
    for u, v, t in fwd:
        edges.append(Edge(u, v, t, Direction.FWD))
        edges.append(Edge(v, u, t, Direction.BWD))

    reach = set()
    if q:
        succ = [[] for _ in range(q)]
        for u, v, _ in fwd:
            succ[u].append(v)
        todo = deque([0])
        reach.add(0)
        while todo:
            u = todo.popleft()
            for v in succ[u]:
                if v not in reach:
                    reach.add(v)
                    todo.append(v)
    meta["unreachable"] = [i for i in range(q) if i not in reach]
    return BiCfg(nodes, edges, f.name, meta)


# ------------------------------------------------------------------- export

def graph_to_record(g: BiCfg) -> dict:
    return {
        "name": g.name,
        "nodes": [{"i": n.index, "tokens": list(n.tokens)} for n in g.nodes],
        "edges": [{"src": e.src, "dst": e.dst, "etype": e.etype.value, "dir": e.direction.value} for e in g.edges],
        "meta": g.meta,
    }


def graph_from_record(rec) -> BiCfg:
    nodes = [Node(n["i"], n["i"], tuple(n["tokens"])) for n in rec["nodes"]]
    edges = [Edge(e["src"], e["dst"], EdgeType(e["etype"]), Direction(e["dir"])) for e in rec["edges"]]
    return BiCfg(nodes, edges, rec.get("name", ""), rec.get("meta", {}))


def export_graph(g: BiCfg, path, append=False):
    try:
        with open(path, "a" if append else "w", encoding="utf-8") as fh:
            fh.write(json.dumps(graph_to_record(g)) + "\n")
    except OSError as e:
        raise OSError(f"cannot write graph to {path}: {e.strerror}") from e


def read_graphs(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [graph_from_record(json.loads(line)) for line in fh if line.strip()]


def to_dot(g: BiCfg) -> str:
    style = {EdgeType.SEQ: "solid", EdgeType.FALLTHROUGH: "dashed", EdgeType.JUMP: "bold"}
    lines = [f'digraph "{g.name or "bicfg"}" {{', "  node [shape=box, fontname=monospace];"]
    for n in g.nodes:
        label = " ".join(n.tokens).replace("\\", "\\\\").replace('"', '\\"')
        lines.append(f'  n{n.index} [label="{n.index}: {label}"];')
    for e in g.edges:
        if e.direction is Direction.FWD:
            lines.append(f"  n{e.src} -> n{e.dst} [style={style[e.etype]}, label={e.etype.value}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
