from collections import Counter

import numpy as np
import pytest

from bcsum.archs import Arch
from bcsum.bicfg import (BlockPartition, Direction, EdgeType, build_bicfg, export_graph, find_leaders, read_graphs,
                         to_dot)
from bcsum.errors import ValidationError
from bcsum.listing import InstrKind
from bcsum.synth import random_function

from conftest import make_function

JZ_PROGRAM = ["mov eax, 1", "jz @3", "add eax, 2", "sub eax, 1", "ret"]


def fwd_set(g):
    return {(e.src, e.dst, e.etype) for e in g.edges if e.direction is Direction.FWD}


def test_straight_line_single_block():
    f = make_function(["nop"] * 5)
    p = find_leaders(f)
    assert p.leaders == (0,)
    assert p.blocks == ((0, 5),)


def test_jz_leaders():
    # 0 always; 3 is the jz target; 2 follows the jz; 4 is ret but nothing follows it
    p = find_leaders(make_function(JZ_PROGRAM))
    assert p.leaders == (0, 2, 3)
    assert p.blocks == ((0, 2), (2, 3), (3, 5))


def test_external_target_not_a_leader():
    f = make_function(["nop", "jmp 0x9000", "nop", "ret"])
    assert find_leaders(f).leaders == (0, 2)


def test_call_does_not_end_block():
    f = make_function(["nop", "call printf", "nop"])
    assert find_leaders(f).leaders == (0,)


def test_three_instruction_chain():
    g = build_bicfg(make_function(["nop", "nop", "nop"]))
    assert g.q == 3
    assert Counter((e.etype, e.direction) for e in g.edges) == {
        (EdgeType.SEQ, Direction.FWD): 2, (EdgeType.SEQ, Direction.BWD): 2}


def test_jz_edges_enumerated():
    g = build_bicfg(make_function(JZ_PROGRAM))
    assert fwd_set(g) == {(0, 1, EdgeType.SEQ), (1, 3, EdgeType.JUMP), (1, 2, EdgeType.FALLTHROUGH),
                          (2, 3, EdgeType.FALLTHROUGH), (3, 4, EdgeType.SEQ)}
    assert len(g.edges) == 10
    assert g.edge_counts() == (5, 10)


def test_node_tokens_follow_normalization():
    g = build_bicfg(make_function(["mov rax, 5", "call sub_2000", "ret"]))
    assert g.nodes[0].tokens == ("mov", "rax", "<Positive>")
    assert g.nodes[1].tokens == ("call", "<ICall>")


def test_partition_mismatch():
    f = make_function(["nop", "nop", "ret"])
    with pytest.raises(ValidationError):
        build_bicfg(f, BlockPartition((0,), ((0, 2),)))
    with pytest.raises(ValidationError):
        build_bicfg(f, BlockPartition((1,), ((1, 3),)))


def test_self_jump_counted_not_linked():
    g = build_bicfg(make_function(["nop", "jmp @1"]))
    assert all(e.src != e.dst for e in g.edges)
    assert g.meta["self_jumps"] == 1


def test_unreachable_flagged():
    g = build_bicfg(make_function(["jmp @2", "nop", "ret"]))
    assert g.meta["unreachable"] == [1]


def check_invariants(f, g):
    q = len(f.instructions)
    assert g.q == q
    part = find_leaders(f)
    leaders = set(part.leaders)
    keys = [(e.src, e.dst, e.etype, e.direction) for e in g.edges]
    assert len(keys) == len(set(keys))
    fwd = Counter((e.src, e.dst, e.etype) for e in g.edges if e.direction is Direction.FWD)
    bwd = Counter((e.dst, e.src, e.etype) for e in g.edges if e.direction is Direction.BWD)
    assert fwd == bwd
    for e in g.edges:
        assert e.src != e.dst
        assert 0 <= e.src < q and 0 <= e.dst < q
        if e.etype is EdgeType.JUMP and e.direction is Direction.FWD:
            assert e.dst in leaders
    for s, end in part.blocks:
        seq = [k for k in fwd if k[2] is EdgeType.SEQ and s <= k[0] < end]
        assert sorted(seq) == [(i, i + 1, EdgeType.SEQ) for i in range(s, end - 1)]
        last = f.instructions[end - 1]
        outs = {k for k in fwd if k[0] == end - 1 and k[2] is not EdgeType.SEQ}
        if last.kind in (InstrKind.RETURN, InstrKind.INDIRECT_JUMP):
            assert not outs
    # degree law
    out_fwd = sum(1 for e in g.edges if e.direction is Direction.FWD)
    in_bwd = sum(1 for e in g.edges if e.direction is Direction.BWD)
    assert out_fwd == in_bwd == g.edge_counts()[0]
    # reachability: anything not reached from node 0 is listed in metadata
    reach = {0} if q else set()
    frontier = list(reach)
    while frontier:
        u = frontier.pop()
        for e in g.edges:
            if e.direction is Direction.FWD and e.src == u and e.dst not in reach:
                reach.add(e.dst)
                frontier.append(e.dst)
    assert sorted(set(range(q)) - reach) == g.meta["unreachable"]


def test_invariants_on_random_functions():
    rng = np.random.default_rng(7)
    for k in range(1000):
        f = random_function(rng, list(Arch)[k % 3], 1, 40, p_branch=0.3)
        check_invariants(f, build_bicfg(f))


def test_export_round_trip(tmp_path):
    f = make_function(JZ_PROGRAM)
    g = build_bicfg(f)
    path = tmp_path / "g.jsonl"
    export_graph(g, path)
    (h,) = read_graphs(path)
    assert h == g
    assert h.meta == g.meta


def test_empty_function_export(tmp_path):
    f = make_function([], end=0x1000)
    g = build_bicfg(f)
    path = tmp_path / "e.jsonl"
    export_graph(g, path)
    import json
    rec = json.loads(path.read_text())
    assert rec["nodes"] == [] and rec["edges"] == []


def test_chain_export_counts(tmp_path):
    import json
    path = tmp_path / "c.jsonl"
    export_graph(build_bicfg(make_function(["nop"] * 3)), path)
    rec = json.loads(path.read_text())
    assert len(rec["nodes"]) == 3
    assert len(rec["edges"]) == 4


def test_export_bad_path(tmp_path):
    g = build_bicfg(make_function(["nop"]))
    with pytest.raises(OSError, match="nodir"):
        export_graph(g, tmp_path / "nodir" / "g.jsonl")


def test_dot_output():
    dot = to_dot(build_bicfg(make_function(JZ_PROGRAM)))
    assert dot.startswith("digraph")
    assert dot.count("->") == 5
    assert "style=bold" in dot
