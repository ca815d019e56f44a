"""Random-forest classifier for file vectors (binary: benign / malicious).

Trees are grown depth-first on bootstrap resamples (represented as per-row
multiplicities).  Each split looks at a fresh random subset of
``ceil(sqrt(k))`` features and takes the threshold with the largest decrease
in Gini impurity.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .vectorize import FileVector

MODEL_FORMAT = "pmiv-forest"
MODEL_VERSION = 1

BENIGN, MALICIOUS = "benign", "malicious"
CLASS_NAMES = (BENIGN, MALICIOUS)


class ForestError(ValueError):
    pass


class SchemaMismatchError(ForestError):
    pass


class ModelLoadError(ForestError):
    pass


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 100
    max_features: object = "sqrt"  # "sqrt", "all", or a feature count
    criterion: str = "gini"
    bootstrap: bool = True
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    min_impurity_split: float = 2.09876756095e-05
    class_weight: Optional[str] = None
    max_leaf_nodes: Optional[int] = None
    warm_start: bool = False
    oob_score: bool = False
    min_weight_fraction_leaf: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ForestError("n_estimators must be >= 1")
        if self.min_samples_split < 2:
            raise ForestError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ForestError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ForestError("max_depth must be >= 1 or None")
        if self.min_impurity_split < 0:
            raise ForestError("min_impurity_split must be >= 0")
        if self.criterion != "gini":
            raise ForestError("only the gini criterion is supported")
        mf = self.max_features
        if not (mf in ("sqrt", "all") or (isinstance(mf, int) and not isinstance(mf, bool)
                                           and mf >= 1)):
            raise ForestError("max_features must be 'sqrt', 'all' or a positive int")
        unsupported = {"class_weight": None, "max_leaf_nodes": None, "warm_start": False,
                       "oob_score": False, "min_weight_fraction_leaf": 0.0}
        for name, default in unsupported.items():
            if getattr(self, name) != default:
                raise ForestError(f"{name} is only supported at its default ({default!r})")

    @classmethod
    def from_dict(cls, d: dict) -> "ForestConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ForestError(f"unknown forest options: {sorted(extra)}")
        return cls(**d)

    def features_per_split(self, k: int) -> int:
        if self.max_features == "sqrt":
            return max(1, math.ceil(math.sqrt(k)))
        if self.max_features == "all":
            return k
        return min(k, int(self.max_features))


@dataclass
class Tree:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (nodes, 2) class fractions
    _lists: Optional[tuple] = field(default=None, init=False, repr=False, compare=False)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return node
            go_left = X[rows, np.where(inner, feat, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X), 1]

    def predict_one(self, x) -> float:
        """Malicious fraction at the leaf reached by one row (plain-Python walk)."""
        if self._lists is None:
            self._lists = (self.feature.tolist(), self.threshold.tolist(), self.left.tolist(),
                           self.right.tolist(), self.value[:, 1].tolist())
        feat, thr, left, right, val = self._lists
        node = 0
        while feat[node] >= 0:
            node = left[node] if x[feat[node]] <= thr[node] else right[node]
        return val[node]

    def to_json(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Tree":
        t = cls(np.asarray(d["feature"], dtype=np.int64),
                np.asarray(d["threshold"], dtype=float),
                np.asarray(d["left"], dtype=np.int64),
                np.asarray(d["right"], dtype=np.int64),
                np.asarray(d["value"], dtype=float).reshape(-1, 2))
        n = t.node_count
        if not (len(t.threshold) == len(t.left) == len(t.right) == len(t.value) == n):
            raise ModelLoadError("inconsistent tree arrays")
        inner = t.feature >= 0
        kids = np.concatenate([t.left[inner], t.right[inner]])
        if kids.size and (kids.min() < 1 or kids.max() >= n):
            raise ModelLoadError("tree child index out of range")
        return t


def gini(w0: float, w1: float) -> float:
    total = w0 + w1
    if total <= 0:
        return 0.0
    p0, p1 = w0 / total, w1 / total
    return 1.0 - p0 * p0 - p1 * p1


def _best_split(X, y, w, idx, feats, min_leaf):
    """Best threshold over ``feats`` for the rows ``idx`` weighted by ``w``.

    Returns (decrease, feature, threshold) or None when no feature admits a
    split leaving ``min_leaf`` weight on each side.
    """
    if len(idx) < 2:
        return None
    Xs = X[np.ix_(idx, feats)]
    order = np.argsort(Xs, axis=0, kind="stable")
    vals = np.take_along_axis(Xs, order, axis=0)
    wi, yi = w[idx], y[idx]
    n_tot = float(wi.sum())  # weights are integer counts, so sums are exact
    n1_tot = float(wi @ yi)
    ws = wi[order]
    left_n = np.cumsum(ws, axis=0)[:-1]
    left_1 = np.cumsum(ws * yi[order], axis=0)[:-1]
    right_n = n_tot - left_n
    right_1 = n1_tot - left_1
    valid = (vals[1:] > vals[:-1]) & (left_n >= min_leaf) & (right_n >= min_leaf)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        gl = 1.0 - (left_1 / left_n) ** 2 - ((left_n - left_1) / left_n) ** 2
        gr = 1.0 - (right_1 / right_n) ** 2 - ((right_n - right_1) / right_n) ** 2
        child = (left_n * gl + right_n * gr) / n_tot
    parent = gini(n_tot - n1_tot, n1_tot)
    dec = np.where(valid, parent - child, -np.inf)
    pos = np.argmax(dec, axis=0)  # first max = lowest threshold
    best_per_feat = dec[pos, np.arange(len(feats))]
    best = best_per_feat.max()
    if best == -np.inf:
        return None
    cands = [(feats[j], j) for j in range(len(feats)) if best_per_feat[j] == best]
    feat, j = min(cands)
    i = pos[j]
    lo, hi = vals[i, j], vals[i + 1, j]
    thr = (lo + hi) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return float(best), int(feat), float(thr)


def grow_tree(X: np.ndarray, y: np.ndarray, cfg: ForestConfig, seed: int) -> Tree:
    rng = np.random.default_rng(seed)
    n, k = X.shape
    if cfg.bootstrap:
        counts = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
    else:
        counts = np.ones(n)
    yf = y.astype(float)
    mf = cfg.features_per_split(k)

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(w0, w1):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        tot = w0 + w1
        value.append((w0 / tot, w1 / tot))
        return len(feature) - 1

    root_idx = np.flatnonzero(counts > 0)
    w1 = float(counts[root_idx] @ yf[root_idx])
    w0 = float(counts[root_idx].sum()) - w1
    stack = [(new_node(w0, w1), root_idx, 0, w0, w1)]
    while stack:
        node, idx, depth, w0, w1 = stack.pop()
        if (w0 == 0 or w1 == 0 or w0 + w1 < cfg.min_samples_split
                or (cfg.max_depth is not None and depth >= cfg.max_depth) or len(idx) < 2):
            continue
        perm = rng.permutation(k)
        found = None
        for start in range(0, k, mf):
            found = _best_split(X, yf, counts, idx, perm[start:start + mf], cfg.min_samples_leaf)
            if found is not None:
                break
        if found is None or found[0] < cfg.min_impurity_split:
            continue
        _, feat, thr = found
        go_left = X[idx, feat] <= thr
        li, ri = idx[go_left], idx[~go_left]
        l1 = float(counts[li] @ yf[li])
        l0 = float(counts[li].sum()) - l1
        r1 = float(counts[ri] @ yf[ri])
        r0 = float(counts[ri].sum()) - r1
        ln, rn = new_node(l0, l1), new_node(r0, r1)
        feature[node], threshold[node], left[node], right[node] = feat, thr, ln, rn
        stack.append((rn, ri, depth + 1, r0, r1))
        stack.append((ln, li, depth + 1, l0, l1))
    return Tree(np.asarray(feature, dtype=np.int64), np.asarray(threshold, dtype=float),
                np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
                np.asarray(value, dtype=float).reshape(-1, 2))


@dataclass
class ForestModel:
    trees: list
    config: ForestConfig
    schema_hash: str
    feature_count: int
    metadata: dict = field(default_factory=dict)  # free-form, e.g. the vector mode

    def check(self, X: np.ndarray, schema_hash: Optional[str] = None) -> None:
        if schema_hash is not None and schema_hash != self.schema_hash:
            raise SchemaMismatchError("vector schema does not match the model's schema")
        if X.ndim != 2 or X.shape[1] != self.feature_count:
            raise SchemaMismatchError(
                f"expected {self.feature_count} features, got {X.shape[-1]}")

    def votes(self, X: np.ndarray) -> np.ndarray:
        """(trees, samples) array of 1 for a malicious vote."""
        if len(X) == 1:
            row = X[0].tolist()
            return np.array([[t.predict_one(row) >= 0.5] for t in self.trees], dtype=np.int64)
        return np.stack([t.predict_proba(X) >= 0.5 for t in self.trees]).astype(np.int64)

    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        return self.votes(X).sum(axis=0) / len(self.trees)


def _labels_to_int(labels: Sequence) -> np.ndarray:
    out = []
    for lab in labels:
        if lab in (MALICIOUS, 1, True):
            out.append(1)
        elif lab in (BENIGN, 0, False):
            out.append(0)
        else:
            raise ForestError(f"unknown label {lab!r}")
    return np.asarray(out, dtype=np.int64)


def _grow_one(args):
    X, y, cfg, seed = args
    return grow_tree(X, y, cfg, seed)


def fit(X: np.ndarray, y: Sequence, cfg: ForestConfig, schema_hash: str = "",
        workers: int = 1) -> ForestModel:
    X = np.ascontiguousarray(X, dtype=float)
    yi = _labels_to_int(y)
    if X.ndim != 2 or len(X) == 0:
        raise ForestError("training matrix must be 2-D and nonempty")
    if len(yi) != len(X):
        raise ForestError("labels and vectors differ in length")
    if len(np.unique(yi)) < 2:
        raise ForestError("training data contains a single class")
    if not np.isfinite(X).all():
        raise ForestError("training matrix contains non-finite values")
    jobs = [(X, yi, cfg, cfg.seed + i) for i in range(cfg.n_estimators)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            trees = list(pool.map(_grow_one, jobs))
    else:
        trees = [_grow_one(j) for j in jobs]
    return ForestModel(trees, cfg, schema_hash, X.shape[1])


def train(vectors: Sequence[FileVector], labels: Sequence, cfg: ForestConfig,
          workers: int = 1) -> ForestModel:
    if not vectors:
        raise ForestError("no training vectors")
    hashes = {v.schema_hash for v in vectors}
    if len(hashes) != 1:
        raise SchemaMismatchError("training vectors come from different schemas")
    X = np.stack([v.values for v in vectors])
    return fit(X, labels, cfg, hashes.pop(), workers)


def predict(model: ForestModel, v: FileVector) -> tuple:
    """(label, score) with score the fraction of trees voting malicious."""
    X = np.asarray(v.values, dtype=float)[None, :]
    model.check(X, v.schema_hash)
    score = float(model.score_matrix(X)[0])
    return (MALICIOUS if score >= 0.5 else BENIGN), score


def predict_many(model: ForestModel, vectors: Sequence[FileVector]) -> list:
    if not vectors:
        return []
    for v in vectors:
        if v.schema_hash != model.schema_hash:
            raise SchemaMismatchError("vector schema does not match the model's schema")
    X = np.stack([v.values for v in vectors])
    model.check(X)
    scores = model.score_matrix(X)
    return [((MALICIOUS if s >= 0.5 else BENIGN), float(s)) for s in scores]


# ---------------------------------------------------------------------------
# metrics

def _div(a: float, b: float) -> float:
    return a / b if b else 0.0


def confusion_metrics(tp: int, fn: int, tn: int, fp: int) -> dict:
    """Per-class precision/recall/F1/support with malicious as the positive class."""
    per_class = {}
    for name, (t, f_pos, f_neg) in {MALICIOUS: (tp, fp, fn), BENIGN: (tn, fn, fp)}.items():
        prec = _div(t, t + f_pos)
        rec = _div(t, t + f_neg)
        per_class[name] = {"precision": prec, "recall": rec,
                           "f1": _div(2 * prec * rec, prec + rec), "support": t + f_neg}
    total = tp + fn + tn + fp
    avg = {key: _div(sum(per_class[c][key] * per_class[c]["support"] for c in per_class), total)
           for key in ("precision", "recall", "f1")}
    avg["support"] = total
    return {
        "classes": {c: per_class[c] for c in CLASS_NAMES},
        "avg_total": avg,
        "accuracy": _div(tp + tn, total),
        "fpr": _div(fp, fp + tn),
        "fnr": _div(fn, fn + tp),
        "confusion": {"tp": tp, "fn": fn, "tn": tn, "fp": fp},
    }


def evaluate(model: ForestModel, vectors: Sequence[FileVector], labels: Sequence) -> dict:
    if not vectors:
        raise ForestError("evaluation set is empty")
    truth = _labels_to_int(labels)
    pred = np.array([1 if lab == MALICIOUS else 0 for lab, _ in predict_many(model, vectors)])
    return metrics_from_predictions(truth, pred)


def metrics_from_predictions(truth: Sequence, pred: Sequence) -> dict:
    t = _labels_to_int(truth)
    p = _labels_to_int(pred)
    tp = int(((t == 1) & (p == 1)).sum())
    fn = int(((t == 1) & (p == 0)).sum())
    tn = int(((t == 0) & (p == 0)).sum())
    fp = int(((t == 0) & (p == 1)).sum())
    return confusion_metrics(tp, fn, tn, fp)


def format_report(metrics: dict, title: str = "") -> str:
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'Class':<12}{'Precision':>11}{'Recall':>10}{'F1-score':>10}{'Support':>10}")
    rows = [("Benign", metrics["classes"][BENIGN]), ("Malware", metrics["classes"][MALICIOUS]),
            ("avg/total", metrics["avg_total"])]
    for name, m in rows:
        lines.append(f"{name:<12}{m['precision']:>10.2%}{m['recall']:>10.2%}"
                     f"{m['f1']:>10.2%}{m['support']:>10d}")
    lines.append(f"{'Accuracy':<22}{metrics['accuracy']:.2%}")
    lines.append(f"{'False Positive Rate':<22}{metrics['fpr']:.2%}")
    lines.append(f"{'False Negative Rate':<22}{metrics['fnr']:.2%}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# serialization

def _payload(model: ForestModel) -> dict:
    return {"config": asdict(model.config), "schema_hash": model.schema_hash,
            "feature_count": model.feature_count, "metadata": model.metadata,
            "trees": [t.to_json() for t in model.trees]}


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save(model: ForestModel) -> bytes:
    payload = _payload(model)
    digest = hashlib.sha256(_canonical(payload)).hexdigest()
    return _canonical({"format": MODEL_FORMAT, "version": MODEL_VERSION,
                       "digest": digest, "payload": payload})


def load(data: bytes) -> ForestModel:
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelLoadError(f"unreadable model container: {e}") from None
    if not isinstance(obj, dict) or obj.get("format") != MODEL_FORMAT:
        raise ModelLoadError("not a forest model container")
    if obj.get("version") != MODEL_VERSION:
        raise ModelLoadError(f"unsupported model version {obj.get('version')!r}")
    payload = obj.get("payload")
    if hashlib.sha256(_canonical(payload)).hexdigest() != obj.get("digest"):
        raise ModelLoadError("model digest mismatch")
    try:
        cfg = ForestConfig.from_dict(payload["config"])
        trees = [Tree.from_json(t) for t in payload["trees"]]
        model = ForestModel(trees, cfg, payload["schema_hash"],
                            int(payload["feature_count"]), dict(payload.get("metadata", {})))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ModelLoadError):
            raise
        raise ModelLoadError(f"malformed model payload: {e}") from None
    for t in model.trees:
        if (t.feature >= model.feature_count).any():
            raise ModelLoadError("split feature index out of range")
    return model
