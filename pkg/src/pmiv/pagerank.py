"""PageRank measure on SDFG vertex sets.

The chain moves along a uniformly chosen out-edge with probability ``1 - p``
and jumps to a uniformly chosen vertex with probability ``p``.  Vertices
without out-edges jump uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .sdfg import Sdfg

DEFAULT_TRANSPORT = 0.15
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200
# residual above this after max_iter is a hard failure
RESIDUAL_LIMIT = 1e-6


class PageRankError(ValueError):
    pass


@dataclass(frozen=True)
class TransitionMatrix:
    n: int
    rows: tuple  # per row: tuple of (column, probability)

    def dense(self) -> np.ndarray:
        t = np.zeros((self.n, self.n))
        for i, row in enumerate(self.rows):
            for j, prob in row:
                t[i, j] += prob
        return t


@dataclass(frozen=True)
class PageRankMeasure:
    probabilities: np.ndarray
    p: float
    iterations_used: int
    residual: float

    def __len__(self) -> int:
        return len(self.probabilities)


def transition_matrix(g: Sdfg) -> TransitionMatrix:
    n = len(g.nodes)
    if n == 0:
        raise PageRankError("transition matrix of an empty graph")
    succ = g.successors()
    uniform = tuple((j, 1.0 / n) for j in range(n))
    rows = []
    for out in succ:
        if out:
            w = 1.0 / len(out)
            rows.append(tuple((j, w) for j in out))
        else:
            rows.append(uniform)
    return TransitionMatrix(n, tuple(rows))


def pagerank(g: Sdfg, p: float = DEFAULT_TRANSPORT, tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER) -> PageRankMeasure:
    return pagerank_many([g], p=p, tol=tol, max_iter=max_iter)[0]


def pagerank_many(graphs: Sequence[Sdfg], p: float = DEFAULT_TRANSPORT,
                  tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> list:
    """Power iteration on several graphs at once.

    The graphs are stacked block-diagonally; each block stops updating as soon
    as its own L1 change drops below ``tol``, so every result is bit-identical
    to running :func:`pagerank` on that graph alone.
    """
    if not 0.0 < p < 1.0:
        raise PageRankError(f"transport probability must be in (0, 1), got {p}")
    if not graphs:
        return []
    sizes = np.array([len(g.nodes) for g in graphs], dtype=np.int64)
    if (sizes == 0).any():
        raise PageRankError("PageRank of an empty graph")
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    total = int(offsets[-1])
    nblocks = len(graphs)
    block = np.repeat(np.arange(nblocks), sizes)
    inv_n = 1.0 / sizes[block]

    src_parts, dst_parts = [], []
    for g, off in zip(graphs, offsets[:-1]):
        if g.edges:
            e = np.array(sorted(g.edges), dtype=np.int64)
            src_parts.append(e[:, 0] + off)
            dst_parts.append(e[:, 1] + off)
    if src_parts:
        src = np.concatenate(src_parts)
        dst = np.concatenate(dst_parts)
    else:
        src = dst = np.zeros(0, dtype=np.int64)
    outdeg = np.bincount(src, minlength=total).astype(float)
    dangling = outdeg == 0
    w = 1.0 / outdeg[src] if len(src) else np.zeros(0)

    x = inv_n.copy()
    active = np.ones(nblocks, dtype=bool)
    iterations = np.full(nblocks, max_iter, dtype=np.int64)
    residual = np.full(nblocks, np.inf)
    for k in range(1, max_iter + 1):
        flow = np.bincount(dst, weights=x[src] * w, minlength=total)
        dmass = np.bincount(block, weights=np.where(dangling, x, 0.0), minlength=nblocks)
        mass = np.bincount(block, weights=x, minlength=nblocks)
        jump = ((1.0 - p) * dmass + p * mass)[block] * inv_n
        y = (1.0 - p) * flow + jump
        delta = np.bincount(block, weights=np.abs(y - x), minlength=nblocks)
        upd = active[block]
        x = np.where(upd, y, x)
        residual = np.where(active, delta, residual)
        done = active & (delta < tol)
        iterations[done] = k
        active &= ~done
        if not active.any():
            break

    out = []
    for b, g in enumerate(graphs):
        if residual[b] > RESIDUAL_LIMIT:
            raise PageRankError(
                f"PageRank did not converge on {g.function_name!r}: residual {residual[b]:.3g}")
        v = x[offsets[b]:offsets[b + 1]]
        # every entry is at least p/n exactly; rounding can land one ulp below it
        v = np.maximum(v / v.sum(), p / len(v))
        out.append(PageRankMeasure(v, p, int(iterations[b]), float(residual[b])))
    return out
