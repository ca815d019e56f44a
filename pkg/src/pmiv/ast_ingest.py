"""Parsing and validation of decompiler AST documents.

A sample file is a JSON object::

    {"file_id": "...",
     "functions": [{"name": "Main", "entry": ["3"], "nodes": {"1": {"type": "Call", ...}}}],
     "call_edges": [["Main", "Helper"]]}

Each node carries a mandatory ``type`` (the CLR operation) plus free-form
attributes.  Some attribute keys always hold node-id references
(``arguments``, ``then``, ...); ``target``, ``value`` and ``expr`` hold a
reference only when the string names a node of the same function.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterable, Mapping

# Keys whose string values are always node ids.
REFERENCE_KEYS = frozenset({
    "arguments", "condition", "then", "else", "body", "statements",
    "cases", "default", "init", "update", "left", "right", "operand",
})
# Keys whose string values are node ids only if the id exists.
MAYBE_REFERENCE_KEYS = frozenset({"target", "value", "expr"})

CALL_KINDS = ("Call", "CtorCall")


class AstParseError(ValueError):
    """Input is not well-formed JSON or does not follow the document layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class AstValidationError(ValueError):
    """Document is well-formed but its node graph is inconsistent."""

    def __init__(self, message: str, node_id: str | None = None):
        super().__init__(message)
        self.node_id = node_id


def _freeze(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    if isinstance(value, dict):
        return MappingProxyType({k: _freeze(v) for k, v in value.items()})
    return value


def _thaw(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_thaw(v) for v in value]
    if isinstance(value, Mapping):
        return {k: _thaw(v) for k, v in value.items()}
    return value


def _flatten_ids(value: Any) -> list:
    if isinstance(value, str):
        return [value]
    if isinstance(value, (list, tuple)):
        out = []
        for v in value:
            out.extend(_flatten_ids(v))
        return out
    return []


@dataclass(frozen=True)
class AstNode:
    id: str
    kind: str
    attributes: Mapping[str, Any] = field(default_factory=lambda: MappingProxyType({}))
    # keys of ``attributes`` that hold node references, in declaration order
    ref_keys: tuple = ()
    # all referenced node ids, in attribute declaration order
    children: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        out = []
        for key in self.ref_keys:
            out.extend(_flatten_ids(self.attributes[key]))
        object.__setattr__(self, "children", tuple(out))

    def get(self, key: str, default: Any = None) -> Any:
        return self.attributes.get(key, default)

    def is_reference(self, key: str) -> bool:
        return key in self.ref_keys

    def refs(self, key: str) -> list:
        if key not in self.ref_keys:
            return []
        return _flatten_ids(self.attributes[key])


def node_kind(node: AstNode) -> str:
    return node.kind


@dataclass(frozen=True)
class AstDocument:
    function_name: str
    nodes: Mapping[str, AstNode]
    entry_ids: tuple = ()
    # ids referenced but absent; only populated by non-strict parsing
    dangling: tuple = ()

    @property
    def is_empty(self) -> bool:
        return not self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, node_id: str) -> AstNode:
        return self.nodes[node_id]

    def called_names(self) -> list:
        """fnName of every Call/CtorCall node, in node-id order."""
        names = []
        for node in self.nodes.values():
            if node.kind in CALL_KINDS:
                name = node.get("fnName")
                if isinstance(name, str):
                    names.append(name)
        return names


@dataclass(frozen=True)
class FileDocument:
    file_id: str
    functions: tuple
    call_edges: tuple = ()

    def function(self, name: str) -> AstDocument:
        for fn in self.functions:
            if fn.function_name == name:
                return fn
        raise KeyError(name)


def _build_node(node_id: str, raw: Any, known_ids: set, fn_name: str) -> AstNode:
    if not isinstance(raw, dict):
        raise AstParseError(f"function {fn_name!r}: node {node_id!r} is not an object")
    kind = raw.get("type")
    if not isinstance(kind, str) or not kind:
        raise AstValidationError(
            f"function {fn_name!r}: node {node_id!r} has no 'type'", node_id)
    attrs = {k: (_freeze(v) if isinstance(v, (list, dict)) else v)
             for k, v in raw.items() if k != "type"}
    ref_keys = []
    for key, value in attrs.items():
        if key in REFERENCE_KEYS:
            if isinstance(value, (tuple, str)) or _flatten_ids(value):
                ref_keys.append(key)
        elif key in MAYBE_REFERENCE_KEYS and isinstance(value, str) and value in known_ids:
            ref_keys.append(key)
    return AstNode(node_id, kind, MappingProxyType(attrs), tuple(ref_keys))


def _check_cycles(nodes: Mapping[str, AstNode], fn_name: str) -> None:
    # iterative DFS over the reference graph
    state: dict = {}
    for start in nodes:
        if start in state:
            continue
        stack = [(start, iter(nodes[start].children))]
        state[start] = 1
        while stack:
            nid, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[nid] = 2
                stack.pop()
                continue
            if nxt not in nodes:
                continue
            s = state.get(nxt)
            if s == 1:
                raise AstValidationError(
                    f"function {fn_name!r}: reference cycle through node {nxt!r}", nxt)
            if s is None:
                state[nxt] = 1
                stack.append((nxt, iter(nodes[nxt].children)))


def build_ast_document(name: str, raw_nodes: Mapping, entry: Iterable | None = None,
                       strict: bool = True) -> AstDocument:
    if not isinstance(raw_nodes, Mapping):
        raise AstParseError(f"function {name!r}: 'nodes' must be an object")
    known = set(raw_nodes)
    nodes = {}
    for node_id in sorted(raw_nodes):
        nodes[node_id] = _build_node(node_id, raw_nodes[node_id], known, name)

    dangling = []
    for node in nodes.values():
        for ref in node.children:
            if ref not in nodes:
                if strict:
                    raise AstValidationError(
                        f"function {name!r}: node {node.id!r} references missing id {ref!r}", ref)
                if ref not in dangling:
                    dangling.append(ref)

    if entry is None:
        referenced = {r for node in nodes.values() for r in node.children}
        entry_ids = tuple(nid for nid in nodes if nid not in referenced)
    else:
        entry_ids = tuple(entry)
        for nid in entry_ids:
            if nid not in nodes:
                raise AstValidationError(
                    f"function {name!r}: entry references missing id {nid!r}", nid)
    _check_cycles(nodes, name)
    return AstDocument(name, MappingProxyType(nodes), entry_ids, tuple(sorted(dangling)))


def derive_call_edges(functions: Iterable[AstDocument]) -> tuple:
    """Caller/callee pairs from Call and CtorCall nodes naming a function of the file."""
    functions = list(functions)
    names = {fn.function_name for fn in functions}
    edges = []
    seen = set()
    for fn in functions:
        for callee in fn.called_names():
            pair = (fn.function_name, callee)
            if callee in names and pair not in seen:
                seen.add(pair)
                edges.append(pair)
    return tuple(edges)


def file_document_from_obj(obj: Any, strict: bool = True) -> FileDocument:
    if not isinstance(obj, dict):
        raise AstParseError("top-level value must be an object")
    file_id = obj.get("file_id")
    if not isinstance(file_id, str):
        raise AstParseError("missing string field 'file_id'")
    raw_functions = obj.get("functions", [])
    if not isinstance(raw_functions, list):
        raise AstParseError("'functions' must be an array")

    functions = []
    for i, raw in enumerate(raw_functions):
        if not isinstance(raw, dict):
            raise AstParseError(f"function #{i} is not an object")
        name = raw.get("name", f"function_{i}")
        if not isinstance(name, str):
            raise AstParseError(f"function #{i}: 'name' must be a string")
        entry = raw.get("entry")
        if entry is not None and not (isinstance(entry, list)
                                      and all(isinstance(e, str) for e in entry)):
            raise AstParseError(f"function {name!r}: 'entry' must be an array of ids")
        functions.append(build_ast_document(name, raw.get("nodes", {}), entry, strict))

    if "call_edges" in obj and obj["call_edges"] is not None:
        edges = []
        for pair in obj["call_edges"]:
            if not (isinstance(pair, list) and len(pair) == 2
                    and all(isinstance(p, str) for p in pair)):
                raise AstParseError("'call_edges' entries must be [caller, callee] string pairs")
            if tuple(pair) not in edges:
                edges.append(tuple(pair))
        call_edges = tuple(edges)
    else:
        call_edges = derive_call_edges(functions)
    return FileDocument(file_id, tuple(functions), call_edges)


def parse_file_document(data: bytes | str, strict: bool = True) -> FileDocument:
    """Parse and validate one sample.

    With ``strict=False`` references to absent node ids are tolerated and
    listed in ``AstDocument.dangling`` instead of raising; this is how
    excerpted documents (snippets cut from a larger dump) are read.
    """
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise AstParseError(f"invalid UTF-8: {e.reason}", e.start) from None
    else:
        text = data
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[:e.pos].encode("utf-8"))
        raise AstParseError(f"malformed JSON: {e.msg}", offset) from None
    return file_document_from_obj(obj, strict=strict)


def ast_document_to_obj(doc: AstDocument) -> dict:
    nodes = {}
    for node_id, node in doc.nodes.items():
        nodes[node_id] = {"type": node.kind, **_thaw(node.attributes)}
    return {"name": doc.function_name, "entry": list(doc.entry_ids), "nodes": nodes}


def file_document_to_obj(doc: FileDocument) -> dict:
    return {
        "file_id": doc.file_id,
        "functions": [ast_document_to_obj(fn) for fn in doc.functions],
        "call_edges": [list(e) for e in doc.call_edges],
    }


def serialize_file_document(doc: FileDocument) -> bytes:
    # key order is preserved: it fixes child evaluation order
    return json.dumps(file_document_to_obj(doc), separators=(",", ":")).encode("utf-8")


def load_file_document(path, strict: bool = True) -> FileDocument:
    with open(path, "rb") as fh:
        return parse_file_document(fh.read(), strict=strict)
