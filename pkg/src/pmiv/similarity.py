"""Graph similarity: Lp distance between PageRank-integration vectors of two graphs."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .ast_ingest import AstNode
from .integration import CompiledCatalog, FeatureFunction, Partition, default_catalog, masked_integrals
from .pagerank import pagerank
from .sdfg import Sdfg
from .vectorize import FeatureConfig, FileVector

DEFAULT_P = 2.0


class SimilarityError(ValueError):
    pass


@dataclass(frozen=True)
class GraphVector:
    values: np.ndarray  # catalog-major: (function i, threshold j) at i * m + j
    graph_id: str
    schema_hash: str

    def __len__(self) -> int:
        return len(self.values)


def graph_schema_hash(names: Sequence[str], partition: Partition, transport_p: float) -> str:
    ident = {"level": "graph", "catalog": list(names), "partition": list(partition.thresholds),
             "transport_p": transport_p}
    return hashlib.sha256(json.dumps(ident, sort_keys=True).encode()).hexdigest()


def vectorize_graph(g: Sdfg, cfg: Optional[FeatureConfig] = None,
                    catalog: Optional[Sequence[FeatureFunction]] = None,
                    partition: Optional[Partition] = None) -> GraphVector:
    """Antiderivatives of every catalog function, sampled at every threshold.

    ``catalog`` and ``partition`` override the ones derived from ``cfg``.
    """
    cfg = cfg or FeatureConfig()
    if g.is_empty:
        raise SimilarityError(f"cannot vectorize empty graph {g.function_name!r}")
    compiled = CompiledCatalog(catalog if catalog is not None
                               else default_catalog(cfg.expected_type_kinds))
    part = partition or Partition(cfg.partition)
    mu = pagerank(g, p=cfg.transport_p)
    block = masked_integrals(compiled.matrix(g.nodes), mu.probabilities, part.thresholds)
    return GraphVector(block.ravel(), g.function_name,
                       graph_schema_hash(compiled.names, part, cfg.transport_p))


def lp_distance(x: np.ndarray, y: np.ndarray, p: float = DEFAULT_P) -> float:
    if not p >= 1:
        raise SimilarityError("p must be >= 1")
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    if math.isinf(p):
        return float(d.max(initial=0.0))
    if p == 2:
        return float(math.sqrt(d @ d))
    if p == 1:
        return float(d.sum())
    return float(np.sum(d ** p) ** (1.0 / p))


def graph_similarity(g: GraphVector, h: GraphVector, p: float = DEFAULT_P) -> float:
    """Lp distance between two graph vectors; 0 means indistinguishable."""
    if g.schema_hash != h.schema_hash or len(g) != len(h):
        raise SimilarityError("graph vectors come from different schemas")
    return lp_distance(g.values, h.values, p)


def file_similarity(a: FileVector, b: FileVector, p: float = DEFAULT_P) -> float:
    """Same norm applied to file vectors (an extension beyond single graphs)."""
    if a.schema_hash != b.schema_hash or len(a.values) != len(b.values):
        raise SimilarityError("file vectors come from different schemas")
    return lp_distance(a.values, b.values, p)


def distance_matrix(vectors: Sequence, p: float = DEFAULT_P) -> np.ndarray:
    dist = file_similarity if vectors and isinstance(vectors[0], FileVector) else graph_similarity
    n = len(vectors)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = dist(vectors[i], vectors[j], p)
    return out


def labeled_graph(labels: Mapping[str, str], edges: Sequence[tuple], name: str = "g") -> Sdfg:
    """A bare graph whose vertex ``v`` carries node kind ``labels[v]``."""
    nodes = [AstNode(v, kind) for v, kind in labels.items()]
    return Sdfg.from_id_edges(name, nodes, edges)


def kind_indicator(kind: str) -> FeatureFunction:
    return FeatureFunction(f"is_{kind}", lambda node, warnings=None: 1.0, frozenset({kind}))
