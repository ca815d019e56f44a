from collections import deque

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmiv.ast_ingest import build_ast_document
from pmiv.sdfg import (STRUCTURAL_KINDS, Sdfg, build_sdfg, enumerate_paths, merge_paths,
                       structural_sdfg)


def call(name, *args):
    return {"type": "Call", "fnName": name, "arguments": list(args)}


def doc(nodes, entry):
    return build_ast_document("f", nodes, entry)


def test_if_else_merges_into_diamond(if_else_ast):
    g = build_sdfg(if_else_ast)
    assert g.node_ids == ("2", "3", "4", "5")
    assert g.id_edges() == {("2", "3"), ("2", "4"), ("3", "5"), ("4", "5")}


def test_if_else_has_two_paths(if_else_ast):
    res = enumerate_paths(if_else_ast)
    assert res.paths == [("2", "3", "5"), ("2", "4", "5")]
    assert not res.truncated


def test_single_statement():
    g = build_sdfg(doc({"1": call("x")}, ["1"]))
    assert len(g) == 1 and not g.edges


def test_empty_document_gives_empty_graph():
    g = build_sdfg(build_ast_document("f", {}))
    assert g.is_empty and not g.edges
    assert enumerate_paths(build_ast_document("f", {})).paths == []


def test_linear_chain_one_path():
    d = doc({"1": call("a"), "2": call("b"), "3": call("c")}, ["1", "2", "3"])
    assert enumerate_paths(d).paths == [("1", "2", "3")]
    assert build_sdfg(d).id_edges() == {("1", "2"), ("2", "3")}


def test_operands_evaluated_first():
    d = doc({"1": {"type": "BinaryOp", "left": "2", "right": "3"},
             "2": {"type": "LocalVar"}, "3": {"type": "CLRLiteral", "value": 1}}, ["1"])
    assert enumerate_paths(d).paths == [("2", "3", "1")]


def test_two_diamonds_four_paths():
    nodes = {
        "a": {"type": "If", "condition": "c1", "then": ["t1"], "else": ["e1"]},
        "b": {"type": "If", "condition": "c2", "then": ["t2"], "else": ["e2"]},
        "c1": call("c1"), "t1": call("t1"), "e1": call("e1"),
        "c2": call("c2"), "t2": call("t2"), "e2": call("e2"),
    }
    res = enumerate_paths(doc(nodes, ["a", "b"]))
    assert len(res.paths) == 4


def test_nested_diamond_three_paths():
    nodes = {
        "a": {"type": "If", "condition": "c1", "then": ["b"], "else": ["e1"]},
        "b": {"type": "If", "condition": "c2", "then": ["t2"], "else": ["e2"]},
        "c1": call("c1"), "e1": call("e1"), "c2": call("c2"), "t2": call("t2"),
        "e2": call("e2"),
    }
    assert len(enumerate_paths(doc(nodes, ["a"])).paths) == 3


def test_if_without_else_skips_to_successor():
    nodes = {"1": {"type": "If", "condition": "2", "then": ["3"]}, "2": call("c"),
             "3": call("t"), "4": call("after")}
    g = build_sdfg(doc(nodes, ["1", "4"]))
    assert g.id_edges() == {("2", "3"), ("3", "4"), ("2", "4")}


def test_while_has_back_edge_and_exit():
    nodes = {"1": {"type": "While", "condition": "2", "body": ["3"]}, "2": call("c"),
             "3": call("body"), "4": call("after")}
    g = build_sdfg(doc(nodes, ["1", "4"]))
    assert g.id_edges() == {("2", "3"), ("3", "2"), ("2", "4")}


def test_do_while_runs_body_first():
    nodes = {"1": {"type": "DoWhile", "body": ["3"], "condition": "2"}, "2": call("c"),
             "3": call("body"), "4": call("after")}
    g = build_sdfg(doc(nodes, ["1", "4"]))
    assert g.id_edges() == {("3", "2"), ("2", "3"), ("2", "4")}


def test_for_loop_update_feeds_condition():
    nodes = {"1": {"type": "For", "init": ["i"], "condition": "c", "update": ["u"],
                   "body": ["b"]},
             "i": call("init"), "c": call("cond"), "u": call("upd"), "b": call("body")}
    g = build_sdfg(doc(nodes, ["1"]))
    assert g.id_edges() == {("i", "c"), ("c", "b"), ("b", "u"), ("u", "c")}


def test_break_leaves_loop_and_continue_returns_to_condition():
    nodes = {
        "1": {"type": "While", "condition": "c", "body": ["i"]},
        "i": {"type": "If", "condition": "t", "then": ["brk"], "else": ["cnt"]},
        "c": call("cond"), "t": call("test"), "brk": {"type": "break"},
        "cnt": {"type": "continue"}, "z": call("after"),
    }
    g = build_sdfg(doc(nodes, ["1", "z"]))
    assert g.id_edges() == {("c", "t"), ("t", "brk"), ("t", "cnt"), ("brk", "z"),
                            ("cnt", "c"), ("c", "z")}


def test_return_ends_path():
    nodes = {"1": {"type": "If", "condition": "c", "then": ["r"]}, "c": call("c"),
             "r": {"type": "Return", "value": "v"}, "v": {"type": "LocalVar"},
             "z": call("after")}
    res = enumerate_paths(doc(nodes, ["1", "z"]))
    assert sorted(res.paths) == [("c", "v", "r"), ("c", "z")]


def test_switch_arms_and_default():
    nodes = {"s": {"type": "Switch", "condition": "c", "cases": [["a"], ["b", "brk"]],
                   "default": ["d"]},
             "c": call("c"), "a": call("a"), "b": call("b"), "brk": {"type": "break"},
             "d": call("d"), "z": call("z")}
    g = build_sdfg(doc(nodes, ["s", "z"]))
    assert g.id_edges() == {("c", "a"), ("c", "b"), ("c", "d"), ("a", "z"), ("b", "brk"),
                            ("brk", "z"), ("d", "z")}


def test_structural_nodes_are_not_vertices(if_else_ast):
    assert all(n.kind not in STRUCTURAL_KINDS for n in build_sdfg(if_else_ast).nodes)


def test_hello_world_gives_two_chains(hello_doc):
    graphs = [build_sdfg(fn) for fn in hello_doc.functions]
    assert len(graphs) == 2
    for g in graphs:
        assert len(g.edges) == len(g) - 1
        indeg = [0] * len(g)
        for _, b in g.edges:
            indeg[b] += 1
        assert max(indeg) <= 1 and max(len(s) for s in g.successors()) <= 1


def test_truncation_falls_back_to_structural():
    nodes, entry = {}, []
    for i in range(14):  # 2**14 paths
        nodes[f"if{i}"] = {"type": "If", "condition": f"c{i}", "then": [f"t{i}"]}
        nodes[f"c{i}"] = call(f"c{i}")
        nodes[f"t{i}"] = call(f"t{i}")
        entry.append(f"if{i}")
    d = doc(nodes, entry)
    res = enumerate_paths(d, max_paths=100)
    assert res.truncated and len(res.paths) == 100
    g = build_sdfg(d, max_paths=100)
    assert g == structural_sdfg(d)
    assert len(g) == 28


def test_max_paths_validated(if_else_ast):
    with pytest.raises(ValueError):
        enumerate_paths(if_else_ast, 0)


def test_dot_dump(if_else_ast):
    dot = build_sdfg(if_else_ast).to_dot()
    assert dot.startswith('digraph "example"') and "n0 -> n1;" in dot


# ---------------------------------------------------------------------------
# random structured programs: both construction routes must agree

@st.composite
def programs(draw, max_nodes=40):
    nodes = {}
    counter = [0]

    def new(kind, **attrs):
        counter[0] += 1
        nid = f"n{counter[0]:03d}"
        nodes[nid] = {"type": kind, **attrs}
        return nid

    def expr(depth):
        if depth > 1 or draw(st.integers(0, 3)) == 0:
            return new(draw(st.sampled_from(["LocalVar", "CLRLiteral"])))
        args = [expr(depth + 1) for _ in range(draw(st.integers(0, 2)))]
        return new("Call", fnName="f", arguments=args)

    def block(depth, in_loop, in_switch):
        out = []
        for _ in range(draw(st.integers(0 if depth else 1, 3))):
            if len(nodes) > max_nodes:
                break
            out.append(stmt(depth, in_loop, in_switch))
        return out

    def stmt(depth, in_loop, in_switch):
        choices = ["expr", "expr"]
        if depth < 3:
            choices += ["If", "While", "DoWhile", "For", "Switch", "Block"]
        if in_loop or in_switch:
            choices.append("break")
        if in_loop:
            choices.append("continue")
        choices.append("Return")
        kind = draw(st.sampled_from(choices))
        d = depth + 1
        if kind == "expr":
            return expr(0)
        if kind == "If":
            attrs = {"condition": expr(0), "then": block(d, in_loop, in_switch)}
            if draw(st.booleans()):
                attrs["else"] = block(d, in_loop, in_switch)
            return new("If", **attrs)
        if kind in ("While", "DoWhile"):
            return new(kind, condition=expr(0), body=block(d, True, False))
        if kind == "For":
            return new("For", init=[expr(0)], condition=expr(0), update=[expr(0)],
                       body=block(d, True, False))
        if kind == "Switch":
            cases = [block(d, in_loop, True) for _ in range(draw(st.integers(1, 3)))]
            attrs = {"condition": expr(0), "cases": cases}
            if draw(st.booleans()):
                attrs["default"] = block(d, in_loop, True)
            return new("Switch", **attrs)
        if kind == "Block":
            return new("Block", statements=block(d, in_loop, in_switch))
        if kind == "Return":
            return new("Return", value=expr(0))
        return new(kind)

    entry = block(0, False, False)
    return build_ast_document("rand", nodes, entry)


@settings(max_examples=300, deadline=None)
@given(programs())
def test_routes_agree(ast):
    res = enumerate_paths(ast, max_paths=20000)
    if res.truncated:
        return
    merged = merge_paths(ast, res.paths)
    assert merged == structural_sdfg(ast)


@settings(max_examples=100, deadline=None)
@given(programs())
def test_merge_invariants(ast):
    res = enumerate_paths(ast, max_paths=20000)
    if res.truncated:
        return
    g = merge_paths(ast, res.paths)
    # node set is exactly the union of path nodes
    assert set(g.node_ids) == {v for p in res.paths for v in p}
    # merging is idempotent
    edge_paths = [(g.nodes[a].id, g.nodes[b].id) for a, b in g.edges]
    singles = [(v,) for v in g.node_ids]
    assert merge_paths(ast, edge_paths + singles) == g
    # every vertex reachable from the common first vertex
    if res.paths:
        start = g.node_ids.index(res.paths[0][0])
        seen, todo, succ = {start}, deque([start]), g.successors()
        while todo:
            for w in succ[todo.popleft()]:
                if w not in seen:
                    seen.add(w)
                    todo.append(w)
        assert len(seen) == len(g)


@st.composite
def branch_free(draw):
    n = draw(st.integers(1, 12))
    nodes = {f"s{i:02d}": call(f"f{i}") for i in range(n)}
    return build_ast_document("chain", nodes, sorted(nodes))


@given(branch_free())
def test_branch_free_is_chain(ast):
    g = build_sdfg(ast)
    assert len(g.edges) == len(g) - 1


def test_from_id_edges_rejects_duplicates(if_else_ast):
    n = if_else_ast["2"]
    with pytest.raises(ValueError):
        Sdfg.from_id_edges("x", [n, n], [])
