"""Shortsighted data-flow graphs: merged execution paths through one function's AST.

Control-flow conventions for the node dictionary:

* ``If``       -- ``condition``, ``then`` (ids), optional ``else`` (ids)
* ``Switch``   -- ``condition``, ``cases`` (list of id lists), optional ``default``
* ``While``    -- ``condition``, ``body``
* ``DoWhile``  -- ``body``, ``condition``
* ``For``      -- optional ``init``, ``condition``, optional ``update``, ``body``
* ``Block``    -- ``statements``
* ``Return``, ``ThrowOp``/``Throw`` end the path after their operands;
  ``break`` leaves the innermost loop or switch, ``continue`` jumps to the
  innermost loop's update/condition.

Structural nodes (If, Switch, loops, Block) steer control but are not
vertices.  Every other node is evaluated operands-first and becomes a vertex
when reached, so the condition's last evaluated node is where branches fork.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, NamedTuple

from .ast_ingest import AstDocument, AstNode

DEFAULT_MAX_PATHS = 4096

BRANCH_KINDS = frozenset({"If", "Switch"})
LOOP_KINDS = frozenset({"While", "DoWhile", "For"})
STRUCTURAL_KINDS = BRANCH_KINDS | LOOP_KINDS | {"Block"}
EXIT_KINDS = frozenset({"Return", "ThrowOp", "Throw"})


class SdfgError(ValueError):
    pass


@dataclass(frozen=True)
class Sdfg:
    function_name: str
    nodes: tuple  # AstNode, sorted by id
    edges: frozenset  # (source index, target index)

    @classmethod
    def from_id_edges(cls, function_name: str, nodes: Iterable[AstNode],
                      id_edges: Iterable[tuple]) -> "Sdfg":
        ordered = tuple(sorted(nodes, key=lambda n: n.id))
        index = {n.id: i for i, n in enumerate(ordered)}
        if len(index) != len(ordered):
            raise SdfgError("duplicate node ids")
        edges = frozenset((index[a], index[b]) for a, b in id_edges)
        return cls(function_name, ordered, edges)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def is_empty(self) -> bool:
        return not self.nodes

    @property
    def node_ids(self) -> tuple:
        return tuple(n.id for n in self.nodes)

    def id_edges(self) -> set:
        return {(self.nodes[a].id, self.nodes[b].id) for a, b in self.edges}

    def successors(self) -> list:
        out = [[] for _ in self.nodes]
        for a, b in sorted(self.edges):
            out[a].append(b)
        return out

    def to_dot(self) -> str:
        lines = [f'digraph "{_dot_escape(self.function_name)}" {{']
        for i, node in enumerate(self.nodes):
            lines.append(f'  n{i} [label="{_dot_escape(node.id)}: {_dot_escape(node.kind)}"];')
        for a, b in sorted(self.edges):
            lines.append(f"  n{a} -> n{b};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


class PathEnumeration(NamedTuple):
    paths: list
    truncated: bool


class _Control:
    """Shared helpers for reading control structure out of an AST document."""

    def __init__(self, doc: AstDocument):
        self.doc = doc
        self.nodes = doc.nodes
        self.expr = lru_cache(maxsize=None)(self._expr)

    def _expr(self, node_id: str) -> tuple:
        # operands first, then the node itself
        node = self.nodes[node_id]
        seq = []
        for child in node.children:
            if child in self.nodes:
                seq.extend(self.expr(child))
        seq.append(node_id)
        return tuple(seq)

    def ids(self, node: AstNode, key: str) -> tuple:
        return tuple(r for r in node.refs(key) if r in self.nodes)

    def cond(self, node: AstNode) -> tuple:
        ids = self.ids(node, "condition")
        if not ids:
            raise SdfgError(f"{node.kind} node {node.id!r} has no condition")
        seq = []
        for cid in ids:
            seq.extend(self.expr(cid))
        return tuple(seq)

    def cases(self, node: AstNode) -> list:
        raw = node.get("cases", ())
        arms = []
        if node.is_reference("cases"):
            for case in raw:
                if isinstance(case, str):
                    case = (case,)
                arms.append(tuple(c for c in case if c in self.nodes))
        return arms


# ---------------------------------------------------------------------------
# Route 1: enumerate execution paths, then merge.

class _PathWalker(_Control):

    def run(self):
        if self.doc.is_empty:
            return
        yield from self._run((("seq", self.doc.entry_ids, 0), None), [])

    def _run(self, stack, path):
        while stack is not None:
            frame, stack = stack
            tag = frame[0]
            if tag == "seq":
                _, ids, i = frame
                if i >= len(ids):
                    continue
                stack = (("seq", ids, i + 1), stack)
                node = self.nodes[ids[i]]
                kind = node.kind
                if kind == "If":
                    path.extend(self.cond(node))
                    yield from self._run((("seq", self.ids(node, "then"), 0), stack), list(path))
                    yield from self._run((("seq", self.ids(node, "else"), 0), stack), list(path))
                    return
                if kind == "Switch":
                    path.extend(self.cond(node))
                    marked = (("mark", False), stack)
                    arms = self.cases(node)
                    arms.append(self.ids(node, "default"))
                    for arm in arms:
                        yield from self._run((("seq", arm, 0), marked), list(path))
                    return
                if kind == "While":
                    stack = (("test", node, 0), (("mark", True), stack))
                elif kind == "For":
                    stack = (("seq", self.ids(node, "init"), 0),
                             (("test", node, 0), (("mark", True), stack)))
                elif kind == "DoWhile":
                    stack = (("seq", self.ids(node, "body"), 0),
                             (("latch", node, 0), (("mark", True), stack)))
                elif kind == "Block":
                    stack = (("seq", self.ids(node, "statements"), 0), stack)
                elif kind in EXIT_KINDS:
                    path.extend(self.expr(node.id))
                    break
                elif kind == "break":
                    path.append(node.id)
                    while stack is not None and stack[0][0] != "mark":
                        stack = stack[1]
                    if stack is not None:
                        stack = stack[1]
                elif kind == "continue":
                    path.append(node.id)
                    while stack is not None and stack[0][0] != "latch":
                        stack = stack[1]
                else:
                    path.extend(self.expr(node.id))
            elif tag == "test":
                _, node, it = frame
                path.extend(self.cond(node))
                yield from self._run(stack, list(path))
                if it == 0:
                    # loops are unrolled once: one pass through the body, then exit
                    body = (("seq", self.ids(node, "body"), 0), (("latch", node, 1), stack))
                    yield from self._run(body, list(path))
                return
            elif tag == "latch":
                _, node, it = frame
                stack = (("seq", self.ids(node, "update"), 0), (("test", node, it), stack))
        yield path


def enumerate_paths(ast: AstDocument, max_paths: int = DEFAULT_MAX_PATHS) -> PathEnumeration:
    """All execution paths through ``ast`` as node-id sequences, capped at ``max_paths``."""
    if max_paths < 1:
        raise ValueError("max_paths must be >= 1")
    paths = []
    for path in _PathWalker(ast).run():
        if len(paths) == max_paths:
            return PathEnumeration(paths, True)
        if path:
            paths.append(tuple(path))
    return PathEnumeration(paths, False)


def merge_paths(ast: AstDocument, paths: Iterable[tuple]) -> Sdfg:
    vertices = set()
    edges = set()
    for path in paths:
        vertices.update(path)
        edges.update(zip(path, path[1:]))
    return Sdfg.from_id_edges(ast.function_name, (ast.nodes[v] for v in vertices), edges)


# ---------------------------------------------------------------------------
# Route 2: emit edges directly from the AST structure.

_START = object()


class _Frame:
    __slots__ = ("is_loop", "breaks", "continues")

    def __init__(self, is_loop: bool):
        self.is_loop = is_loop
        self.breaks: set = set()
        self.continues: set = set()


class _EdgeEmitter(_Control):

    def __init__(self, doc: AstDocument):
        super().__init__(doc)
        self.edges: set = set()
        self.preds: set = {_START}
        self.waiters: list = []
        self.frames: list = []

    def emit(self, vid: str) -> None:
        for p in self.preds:
            self.edges.add((p, vid))
        self.preds = {vid}
        if self.waiters:
            for w in self.waiters:
                w.append(vid)
            self.waiters = []

    def emit_seq(self, ids: Iterable[str]) -> None:
        for vid in ids:
            self.emit(vid)

    def waiter(self) -> list:
        w: list = []
        self.waiters.append(w)
        return w

    def link_back(self, target: str) -> None:
        for p in self.preds:
            self.edges.add((p, target))

    def stmts(self, ids: Iterable[str]) -> None:
        for sid in ids:
            self.stmt(self.nodes[sid])

    def stmt(self, node: AstNode) -> None:
        kind = node.kind
        if kind == "If":
            self.emit_seq(self.cond(node))
            fork = self.preds
            out = set()
            for arm in (self.ids(node, "then"), self.ids(node, "else")):
                self.preds = set(fork)
                self.stmts(arm)
                out |= self.preds
            self.preds = out
        elif kind == "Switch":
            self.emit_seq(self.cond(node))
            fork = self.preds
            frame = _Frame(is_loop=False)
            self.frames.append(frame)
            out = set()
            for arm in self.cases(node) + [self.ids(node, "default")]:
                self.preds = set(fork)
                self.stmts(arm)
                out |= self.preds
            self.frames.pop()
            self.preds = out | frame.breaks
        elif kind in ("While", "For"):
            if kind == "For":
                self.stmts(self.ids(node, "init"))
            head = self.waiter()
            self.emit_seq(self.cond(node))
            after_cond = self.preds
            frame = _Frame(is_loop=True)
            self.frames.append(frame)
            self.stmts(self.ids(node, "body"))
            self.frames.pop()
            self.preds = self.preds | frame.continues
            self.stmts(self.ids(node, "update"))
            self.link_back(head[0])
            self.preds = after_cond | frame.breaks
        elif kind == "DoWhile":
            head = self.waiter()
            frame = _Frame(is_loop=True)
            self.frames.append(frame)
            self.stmts(self.ids(node, "body"))
            self.frames.pop()
            self.preds = self.preds | frame.continues
            self.emit_seq(self.cond(node))
            self.link_back(head[0])
            self.preds = self.preds | frame.breaks
        elif kind == "Block":
            self.stmts(self.ids(node, "statements"))
        elif kind in EXIT_KINDS:
            self.emit_seq(self.expr(node.id))
            self.preds = set()
        elif kind == "break":
            self.emit(node.id)
            if self.frames:
                self.frames[-1].breaks |= self.preds
            self.preds = set()
        elif kind == "continue":
            self.emit(node.id)
            for frame in reversed(self.frames):
                if frame.is_loop:
                    frame.continues |= self.preds
                    break
            self.preds = set()
        else:
            self.emit_seq(self.expr(node.id))

    def build(self) -> Sdfg:
        self.stmts(self.doc.entry_ids)
        succ: dict = {}
        for a, b in self.edges:
            succ.setdefault(a, set()).add(b)
        reached = set()
        todo = [_START]
        while todo:
            for b in succ.get(todo.pop(), ()):
                if b not in reached:
                    reached.add(b)
                    todo.append(b)
        edges = {(a, b) for a, b in self.edges if a in reached and b in reached}
        return Sdfg.from_id_edges(self.doc.function_name,
                                  (self.nodes[v] for v in reached), edges)


def structural_sdfg(ast: AstDocument) -> Sdfg:
    """SDFG built by direct edge emission, without enumerating paths."""
    if ast.is_empty:
        return Sdfg(ast.function_name, (), frozenset())
    return _EdgeEmitter(ast).build()


def build_sdfg(ast: AstDocument, max_paths: int = DEFAULT_MAX_PATHS) -> Sdfg:
    """Merge all execution paths through ``ast`` into one digraph.

    When the number of paths exceeds ``max_paths`` the same edge set is
    produced by direct structural emission instead.
    """
    if ast.is_empty:
        return Sdfg(ast.function_name, (), frozenset())
    enum = enumerate_paths(ast, max_paths)
    if enum.truncated:
        return structural_sdfg(ast)
    return merge_paths(ast, enum.paths)
