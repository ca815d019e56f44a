"""Per-file function call graph and its combinatorial features."""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .ast_ingest import FileDocument

DEFAULT_CRYPTO_SUBSTRINGS = ("crypto", "aes", "rsa", "des", "sha", "md5", "rc4")


@dataclass(frozen=True)
class CallGraph:
    nodes: tuple  # function names; file functions first, then external stubs
    edges: frozenset  # (caller index, callee index)
    crypto_flags: tuple  # per node
    internal_count: int = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def to_dot(self, name: str = "callgraph") -> str:
        lines = [f'digraph "{name}" {{']
        for i, fn in enumerate(self.nodes):
            shape = "box" if i < self.internal_count else "ellipse"
            style = ', color="red"' if self.crypto_flags[i] else ""
            label = fn.replace("\\", "\\\\").replace('"', '\\"')
            lines.append(f'  n{i} [label="{label}", shape={shape}{style}];')
        for a, b in sorted(self.edges):
            lines.append(f"  n{a} -> n{b};")
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class FcgFeatures:
    component_size_ratio: float
    component_count: int
    degree_mean: float
    degree_std: float
    vertex_count: int
    edge_count: int
    crypto_flag: int

    @classmethod
    def names(cls) -> list:
        return [f.name for f in fields(cls)]

    def as_list(self) -> list:
        return [float(v) for v in astuple(self)]


FCG_FEATURE_NAMES = tuple(FcgFeatures.names())


def _has_crypto(text: str, substrings: Sequence[str]) -> bool:
    low = text.lower()
    return any(s in low for s in substrings)


def build_call_graph(doc: FileDocument,
                     crypto_substrings: Iterable[str] = DEFAULT_CRYPTO_SUBSTRINGS) -> CallGraph:
    subs = tuple(s.lower() for s in crypto_substrings)
    names = []
    for fn in doc.functions:
        if fn.function_name not in names:
            names.append(fn.function_name)
    internal = len(names)
    for caller, callee in doc.call_edges:
        for name in (caller, callee):
            if name not in names:
                names.append(name)
    index = {name: i for i, name in enumerate(names)}
    edges = frozenset((index[a], index[b]) for a, b in doc.call_edges)

    flags = [_has_crypto(name, subs) for name in names]
    for fn in doc.functions:
        i = index[fn.function_name]
        if not flags[i]:
            flags[i] = any(_has_crypto(c, subs) for c in fn.called_names())
    return CallGraph(tuple(names), edges, tuple(flags), internal)


def weak_components(n: int, edges: Iterable[tuple]) -> list:
    """Sizes of weakly connected components, by BFS over the undirected graph."""
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = [False] * n
    sizes = []
    for s in range(n):
        if seen[s]:
            continue
        seen[s] = True
        stack, size = [s], 0
        while stack:
            u = stack.pop()
            size += 1
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        sizes.append(size)
    return sizes


def call_graph_features(g: CallGraph) -> FcgFeatures:
    n = len(g.nodes)
    if n == 0:
        return FcgFeatures(0.0, 0, 0.0, 0.0, 0, 0, 0)
    sizes = weak_components(n, g.edges)
    deg = np.zeros(n)
    for a, b in g.edges:
        deg[a] += 1
        deg[b] += 1
    deg.sort()  # statistics independent of node order
    return FcgFeatures(
        component_size_ratio=max(sizes) / min(sizes),
        component_count=len(sizes),
        degree_mean=float(deg.mean()),
        degree_std=float(deg.std()),
        vertex_count=n,
        edge_count=len(g.edges),
        crypto_flag=int(any(g.crypto_flags)),
    )
