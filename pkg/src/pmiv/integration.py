"""Node feature functions and their integrals against a vertex measure.

For a graph ``G`` with vertex measure ``p`` and a node function ``f`` the
antiderivative at threshold ``q`` is ``sum(f(v) * p[v] for v if p[v] <= q)``,
evaluated at every threshold of a partition.  The uniform baseline replaces
the whole curve by the plain vertex average of ``f``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .ast_ingest import AstNode
from .pagerank import PageRankMeasure
from .sdfg import Sdfg

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

DEFAULT_PARTITION = (0.01, 0.02, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0)

# node kinds that get an ExpectedType indicator by default
DEFAULT_EXPECTED_TYPE_KINDS = (
    "AddressOf", "Assignment", "BinaryOp", "break", "Call", "ClassRef", "CLRArray",
    "continue", "CtorCall", "Dereference", "Entrypoint", "FieldReference",
    "FnPtrObj", "LocalVar",
)


class IntegrationError(ValueError):
    pass


def fnv1a64(s: str) -> int:
    h = FNV64_OFFSET
    for b in s.encode("utf-8"):
        h = ((h ^ b) * FNV64_PRIME) & _MASK64
    return h


def signed64(h: int) -> int:
    return h - (1 << 64) if h >= 1 << 63 else h


_hash_cache: dict = {}


def hash_feature(s: str) -> float:
    """log10(max(1, |h|)) with h the signed 64-bit FNV-1a hash of the UTF-8 bytes."""
    v = _hash_cache.get(s)
    if v is None:
        v = math.log10(max(1, abs(signed64(fnv1a64(s)))))
        if len(_hash_cache) < 1 << 16:
            _hash_cache[s] = v
    return v


# ---------------------------------------------------------------------------
# feature functions

@dataclass(frozen=True)
class FeatureFunction:
    name: str
    evaluator: Callable  # (AstNode, warnings Counter | None) -> float
    applicable_kinds: Optional[frozenset] = None  # None: every kind

    def applies_to(self, kind: str) -> bool:
        return self.applicable_kinds is None or kind in self.applicable_kinds


def _warn(warnings: Optional[Counter], name: str) -> float:
    if warnings is not None:
        warnings[name] += 1
    return 0.0


def _hashed(attr: str, name: str) -> Callable:
    def ev(node: AstNode, warnings=None) -> float:
        value = node.get(attr)
        if value is None:
            return 0.0
        if not isinstance(value, str):
            return _warn(warnings, name)
        return hash_feature(value)
    return ev


def _scalar(attr: str, name: str) -> Callable:
    def ev(node: AstNode, warnings=None) -> float:
        value = node.get(attr)
        if value is None or node.is_reference(attr) or isinstance(value, Mapping):
            # absent, or an operand node rather than an inline scalar
            return 0.0
        if isinstance(value, (bool, int, float)):
            x = float(value)
        elif isinstance(value, str):
            try:
                x = float(value)
            except ValueError:
                return _warn(warnings, name)
        else:
            return _warn(warnings, name)
        if not math.isfinite(x):
            return _warn(warnings, name)
        return x
    return ev


def _count(attr: str, name: str) -> Callable:
    def ev(node: AstNode, warnings=None) -> float:
        value = node.get(attr)
        if value is None:
            return 0.0
        if not isinstance(value, (list, tuple)):
            return _warn(warnings, name)
        return float(len(value))
    return ev


def _indicator(node: AstNode, warnings=None) -> float:
    return 1.0


def expected_type(kind: str) -> FeatureFunction:
    return FeatureFunction(f"{kind}_ExpectedType", _indicator, frozenset({kind}))


def _fn(name: str, kinds: Iterable[str], make: Callable, attr: str) -> FeatureFunction:
    return FeatureFunction(name, make(attr, name), frozenset(kinds))


SCALAR_FUNCTIONS = (
    _fn("CLRVariable", ("CLRVariable", "CLRVariableWithInitializer"), _hashed, "varType"),
    _fn("BinaryOp", ("BinaryOp",), _hashed, "whichOpCode"),
    _fn("CtorCallctorType", ("CtorCall",), _hashed, "ctorType"),
    _fn("FieldReference", ("FieldReference",), _hashed, "fieldName"),
    _fn("CLRLiteral", ("CLRLiteral",), _scalar, "value"),
    _fn("CallfnName", ("Call",), _hashed, "fnName"),
    _fn("CLRArrayelemType", ("CLRArray",), _hashed, "elemType"),
    _fn("FnPtrObjname", ("FnPtrObj",), _hashed, "name"),
    _fn("TypeTesttestedType", ("TypeTest",), _hashed, "testedType"),
    _fn("ClassRefname", ("ClassRef",), _hashed, "name"),
    _fn("TypeCast", ("TypeCast",), _hashed, "castedType"),
    # hashes elemType, exactly like CLRArrayelemType
    _fn("CLRArraysize", ("CLRArray",), _hashed, "elemType"),
    _fn("NumPass2Call", ("Call",), _count, "arguments"),
    _fn("AddressOf", ("AddressOf",), _scalar, "expr"),
    _fn("ThrowOpexpr", ("ThrowOp",), _scalar, "expr"),
    _fn("UnaryOpexpr", ("UnaryOp",), _scalar, "expr"),
    _fn("StoreLocallocalIdx", ("StoreLocal",), _scalar, "localIdx"),
    _fn("StoreLocalvalue", ("StoreLocal",), _scalar, "value"),
    _fn("Returnvalue", ("Return",), _scalar, "value"),
)

# functions whose values can be negative (raw attribute values)
RAW_VALUED = frozenset({"CLRLiteral", "AddressOf", "ThrowOpexpr", "UnaryOpexpr",
                        "StoreLocallocalIdx", "StoreLocalvalue", "Returnvalue"})


def default_catalog(expected_type_kinds: Sequence[str] = DEFAULT_EXPECTED_TYPE_KINDS) -> list:
    """ExpectedType indicators for each configured kind, then the scalar functions."""
    return [expected_type(k) for k in expected_type_kinds] + list(SCALAR_FUNCTIONS)


def evaluate_function(f: FeatureFunction, v: AstNode, warnings: Optional[Counter] = None) -> float:
    if not f.applies_to(v.kind):
        return 0.0
    return f.evaluator(v, warnings)


class CompiledCatalog:
    """Catalog indexed by node kind, for evaluating every function on many nodes."""

    def __init__(self, catalog: Sequence[FeatureFunction]):
        self.functions = tuple(catalog)
        self.names = tuple(f.name for f in self.functions)
        self._wild = [(i, f) for i, f in enumerate(self.functions) if f.applicable_kinds is None]
        self._by_kind: dict = {}
        for i, f in enumerate(self.functions):
            for kind in f.applicable_kinds or ():
                self._by_kind.setdefault(kind, []).append((i, f))

    def __len__(self) -> int:
        return len(self.functions)

    def matrix(self, nodes: Sequence[AstNode], warnings: Optional[Counter] = None) -> np.ndarray:
        """Values of every function on every node, shape (len(nodes), len(catalog))."""
        out = np.zeros((len(nodes), len(self.functions)))
        for r, node in enumerate(nodes):
            for c, f in self._by_kind.get(node.kind, ()):
                out[r, c] = f.evaluator(node, warnings)
            for c, f in self._wild:
                out[r, c] = f.evaluator(node, warnings)
        return out


# ---------------------------------------------------------------------------
# integration

@dataclass(frozen=True)
class Partition:
    thresholds: tuple
    require_terminal: bool = True

    def __post_init__(self):
        q = tuple(float(x) for x in self.thresholds)
        object.__setattr__(self, "thresholds", q)
        if not q:
            raise IntegrationError("partition needs at least one threshold")
        if any(not 0.0 < x <= 1.0 for x in q):
            raise IntegrationError("partition thresholds must lie in (0, 1]")
        if any(b <= a for a, b in zip(q, q[1:])):
            raise IntegrationError("partition thresholds must be strictly increasing")
        if self.require_terminal and q[-1] != 1.0:
            raise IntegrationError("final partition threshold must be 1")

    def __len__(self) -> int:
        return len(self.thresholds)

    def labels(self) -> list:
        return [f"{100 * q:g}" for q in self.thresholds]


@dataclass(frozen=True)
class Antiderivative:
    values: np.ndarray
    function_name: str
    graph_id: str


def masked_integrals(fvals: np.ndarray, probs: np.ndarray, thresholds) -> np.ndarray:
    """Filtered sums for a (n, k) block of function values; returns (k, m).

    Terms are accumulated vertex by vertex in index order, excluded vertices
    contributing an exact 0.0.
    """
    q = np.asarray(thresholds, dtype=float)
    n = len(probs)
    if n == 0:
        return np.zeros((fvals.shape[1], len(q)))
    contrib = fvals * probs[:, None]  # (n, k)
    mask = probs[:, None] <= q[None, :]  # (n, m)
    terms = np.where(mask[:, None, :], contrib[:, :, None], 0.0)  # (n, k, m)
    return np.cumsum(terms, axis=0)[-1]


def antiderivative(g: Sdfg, mu: PageRankMeasure, f: FeatureFunction, part: Partition,
                   warnings: Optional[Counter] = None) -> Antiderivative:
    if len(mu) != len(g.nodes):
        raise IntegrationError("measure and graph sizes differ")
    fvals = np.array([[evaluate_function(f, v, warnings)] for v in g.nodes]).reshape(-1, 1)
    values = masked_integrals(fvals, np.asarray(mu.probabilities, dtype=float), part.thresholds)[0]
    return Antiderivative(values, f.name, g.function_name)


def uniform_integral(g: Sdfg, f: FeatureFunction, warnings: Optional[Counter] = None) -> float:
    n = len(g.nodes)
    if n == 0:
        raise IntegrationError("uniform integral over an empty graph")
    return sum(evaluate_function(f, v, warnings) for v in g.nodes) / n
