"""File-level vectors: per-SDFG integrals reduced across a file, plus call-graph features."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ast_ingest import FileDocument
from .callgraph import (DEFAULT_CRYPTO_SUBSTRINGS, FCG_FEATURE_NAMES, build_call_graph,
                        call_graph_features)
from .integration import (DEFAULT_EXPECTED_TYPE_KINDS, DEFAULT_PARTITION, CompiledCatalog,
                          Partition, default_catalog, masked_integrals)
from .pagerank import DEFAULT_TRANSPORT, pagerank_many
from .sdfg import DEFAULT_MAX_PATHS, Sdfg, build_sdfg

PMIV = "pmiv"
UMIV = "umiv"
MODES = (PMIV, UMIV)


class VectorizeError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    partition: tuple = DEFAULT_PARTITION
    expected_type_kinds: tuple = DEFAULT_EXPECTED_TYPE_KINDS
    crypto_substrings: tuple = DEFAULT_CRYPTO_SUBSTRINGS
    transport_p: float = DEFAULT_TRANSPORT
    max_paths: int = DEFAULT_MAX_PATHS

    def __post_init__(self):
        for name in ("partition", "expected_type_kinds", "crypto_substrings"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        Partition(self.partition)
        if not 0.0 < self.transport_p < 1.0:
            raise VectorizeError("transport_p must be in (0, 1)")
        if self.max_paths < 1:
            raise VectorizeError("max_paths must be >= 1")


@dataclass(frozen=True)
class FeatureSchema:
    mode: str
    columns: tuple
    schema_hash: str

    def __len__(self) -> int:
        return len(self.columns)

    def to_json(self) -> dict:
        return {"mode": self.mode, "schema_hash": self.schema_hash,
                "length": len(self.columns), "columns": list(self.columns)}


def make_schema(catalog_names: Sequence[str], partition: Partition, mode: str) -> FeatureSchema:
    if mode not in MODES:
        raise VectorizeError(f"unknown mode {mode!r}")
    cols = []
    for name in catalog_names:
        if mode == PMIV:
            cols += [f"{name}_{lab}_mean" for lab in partition.labels()]
            cols += [f"{name}_{lab}_std" for lab in partition.labels()]
        else:
            cols += [f"{name}_mean", f"{name}_std"]
    cols += [f"fcg_{n}" for n in FCG_FEATURE_NAMES]
    ident = {"mode": mode, "catalog": list(catalog_names),
             "partition": list(partition.thresholds) if mode == PMIV else None}
    digest = hashlib.sha256(json.dumps(ident, sort_keys=True).encode()).hexdigest()
    return FeatureSchema(mode, tuple(cols), digest)


@dataclass
class FileVector:
    file_id: str
    values: np.ndarray
    schema_hash: str
    mode: str
    metadata: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"file_id": self.file_id, "mode": self.mode, "schema_hash": self.schema_hash,
                "values": [float(v) for v in self.values], "metadata": self.metadata}

    @classmethod
    def from_record(cls, rec: dict) -> "FileVector":
        return cls(rec["file_id"], np.asarray(rec["values"], dtype=float),
                   rec["schema_hash"], rec["mode"], rec.get("metadata", {}))


# ---------------------------------------------------------------------------
# dedup digests

_SALIENT = {
    "CLRVariable": "varType", "CLRVariableWithInitializer": "varType",
    "BinaryOp": "whichOpCode", "CtorCall": "ctorType", "FieldReference": "fieldName",
    "CLRLiteral": "value", "Call": "fnName", "CLRArray": "elemType", "FnPtrObj": "name",
    "TypeTest": "testedType", "ClassRef": "name", "TypeCast": "castedType",
    "AddressOf": "expr", "ThrowOp": "expr", "UnaryOp": "expr", "StoreLocal": "localIdx",
    "Return": "value", "LocalVar": "name",
}


def _summary(node) -> str:
    attr = _SALIENT.get(node.kind)
    if attr is None or attr not in node.attributes:
        return node.kind
    if node.is_reference(attr):
        # operand ids are decompiler-order artifacts
        return f"{node.kind}|@"
    return f"{node.kind}|{json.dumps(node.attributes[attr], sort_keys=True, default=str)}"


def graph_digest(g: Sdfg) -> str:
    """Order-independent digest of a labeled SDFG."""
    nodes = sorted(_summary(n) for n in g.nodes)
    edges = sorted([g.nodes[a].kind, g.nodes[b].kind] for a, b in g.edges)
    blob = json.dumps({"nodes": nodes, "edges": edges}, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def combine_digests(digests: Sequence[str]) -> str:
    return hashlib.sha256("".join(sorted(digests)).encode("ascii")).hexdigest()


def dedup_hash(doc: FileDocument, max_paths: int = DEFAULT_MAX_PATHS) -> str:
    return combine_digests([graph_digest(build_sdfg(fn, max_paths)) for fn in doc.functions])


# ---------------------------------------------------------------------------
# vectorization

@dataclass
class FileAnalysis:
    """Everything both modes need from one file, computed once."""

    file_id: str
    graphs: list  # nonempty SDFGs, canonical order
    matrices: list  # per graph: (n, k) feature values
    fcg: list
    metadata: dict


class Vectorizer:
    def __init__(self, cfg: FeatureConfig | None = None):
        self.cfg = cfg or FeatureConfig()
        self.partition = Partition(self.cfg.partition)
        self.catalog = CompiledCatalog(default_catalog(self.cfg.expected_type_kinds))
        self.schemas = {m: make_schema(self.catalog.names, self.partition, m) for m in MODES}

    def schema(self, mode: str) -> FeatureSchema:
        try:
            return self.schemas[mode]
        except KeyError:
            raise VectorizeError(f"unknown mode {mode!r}") from None

    def sdfgs(self, doc: FileDocument) -> list:
        return [build_sdfg(fn, self.cfg.max_paths) for fn in doc.functions]

    def analyze(self, doc: FileDocument) -> FileAnalysis:
        graphs = self.sdfgs(doc)
        # canonical order makes the file vector independent of function order
        nonempty = [g for g in graphs if not g.is_empty]
        names = Counter(g.function_name for g in nonempty)
        if max(names.values(), default=0) > 1:
            nonempty.sort(key=lambda g: (g.function_name, graph_digest(g)))
        else:  # digests only needed to order same-named functions
            nonempty.sort(key=lambda g: g.function_name)
        warnings: Counter = Counter()
        matrices = [self.catalog.matrix(g.nodes, warnings) for g in nonempty]
        cg = build_call_graph(doc, self.cfg.crypto_substrings)
        fcg = call_graph_features(cg).as_list()
        meta = {
            "functions": len(doc.functions),
            "sdfgs": len(nonempty),
            "empty_sdfgs": len(graphs) - len(nonempty),
            "no_sdfgs": not nonempty,
            "eval_warnings": sum(warnings.values()),
        }
        return FileAnalysis(doc.file_id, nonempty, matrices, fcg, meta)

    def pmiv_values(self, a: FileAnalysis) -> np.ndarray:
        k, m = len(self.catalog), len(self.partition)
        if a.graphs:
            measures = pagerank_many(a.graphs, p=self.cfg.transport_p)
            curves = np.stack([masked_integrals(F, mu.probabilities, self.partition.thresholds)
                               for F, mu in zip(a.matrices, measures)])
            block = np.concatenate([curves.mean(axis=0), curves.std(axis=0)], axis=1)
        else:
            block = np.zeros((k, 2 * m))
        return np.concatenate([block.ravel(), a.fcg])

    def umiv_values(self, a: FileAnalysis) -> np.ndarray:
        k = len(self.catalog)
        if a.graphs:
            avgs = np.stack([F.sum(axis=0) / F.shape[0] for F in a.matrices])
            block = np.stack([avgs.mean(axis=0), avgs.std(axis=0)], axis=1)
        else:
            block = np.zeros((k, 2))
        return np.concatenate([block.ravel(), a.fcg])

    def _wrap(self, a: FileAnalysis, mode: str, values: np.ndarray) -> FileVector:
        schema = self.schemas[mode]
        assert len(values) == len(schema)
        return FileVector(a.file_id, values, schema.schema_hash, mode, dict(a.metadata))

    def vectorize(self, doc: FileDocument, mode: str = PMIV) -> FileVector:
        a = self.analyze(doc)
        if mode == PMIV:
            return self._wrap(a, mode, self.pmiv_values(a))
        if mode == UMIV:
            return self._wrap(a, mode, self.umiv_values(a))
        raise VectorizeError(f"unknown mode {mode!r}")

    def vectorize_both(self, doc: FileDocument) -> tuple:
        a = self.analyze(doc)
        return (self._wrap(a, PMIV, self.pmiv_values(a)),
                self._wrap(a, UMIV, self.umiv_values(a)))


def vectorize_file_pmiv(doc: FileDocument, cfg: FeatureConfig | None = None) -> FileVector:
    return Vectorizer(cfg).vectorize(doc, PMIV)


def vectorize_file_umiv(doc: FileDocument, cfg: FeatureConfig | None = None) -> FileVector:
    return Vectorizer(cfg).vectorize(doc, UMIV)


def stack_vectors(vectors: Sequence[FileVector]) -> np.ndarray:
    if not vectors:
        raise VectorizeError("no vectors")
    hashes = {v.schema_hash for v in vectors}
    if len(hashes) != 1:
        raise VectorizeError("vectors come from different feature schemas")
    return np.stack([v.values for v in vectors])
