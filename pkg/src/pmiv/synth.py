"""Synthetic labeled corpora in the AST document format.

Each function body is built in two steps: a pool of expression statements is
drawn from the label distribution, then the pool is arranged into control
structure.  Conditions are drawn from the same pool, so the vertex multiset
of every SDFG depends only on the label parameters; the structure parameters
decide only the edges.  The ``topology`` preset exploits this: both classes
share label parameters and differ in branching and looping alone.
"""

from __future__ import annotations

import hashlib
import json
import os
from collections import deque
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .ast_ingest import file_document_from_obj
from .sdfg import STRUCTURAL_KINDS

BENIGN = "benign"
MALICIOUS = "malicious"
LABELS = (BENIGN, MALICIOUS)

# leaning benign first, leaning malicious second
API_NAMES = (
    "System.Console.WriteLine", "System.String.Format", "System.String.Concat",
    "System.Collections.Generic.List.Add", "System.Text.StringBuilder.Append",
    "System.IO.Path.Combine", "System.Int32.Parse", "System.Math.Max",
    "System.Windows.Forms.Control.Invalidate", "System.Linq.Enumerable.Select",
    "System.Web.UI.Control.AddParsedSubObject", "System.Object.ToString",
    "System.Reflection.Assembly.Load", "System.Reflection.MethodBase.Invoke",
    "System.Diagnostics.Process.Start", "System.Net.WebClient.DownloadData",
    "System.Convert.FromBase64String", "System.Runtime.InteropServices.GCHandle.Alloc",
    "System.IO.File.WriteAllBytes", "Microsoft.Win32.Registry.SetValue",
    "System.Threading.Thread.Sleep", "System.Environment.GetFolderPath",
)
CRYPTO_NAMES = (
    "System.Security.Cryptography.AesManaged.CreateDecryptor",
    "System.Security.Cryptography.RSACryptoServiceProvider.Decrypt",
    "System.Security.Cryptography.SHA256.ComputeHash",
    "System.Security.Cryptography.MD5.Create",
)
TYPE_NAMES = (
    "System.String", "System.Int32", "System.Web.UI", "System.Collections.Generic.List",
    "System.Text.StringBuilder", "System.Windows.Forms.Form", "System.Object",
    "System.Byte", "System.IntPtr", "System.Reflection.Assembly", "System.Net.WebClient",
    "System.IO.MemoryStream",
)
FIELD_NAMES = (
    "Text", "Length", "Count", "Name", "Value", "Items",
    "buffer", "payload", "key", "handle", "stage", "blob",
)
OPCODES = ("add", "sub", "mul", "div", "and", "or", "xor", "shl", "shr", "ceq", "clt", "rem")

ROOT_KINDS = (
    "Call", "Assignment", "StoreLocal", "CLRVariableWithInitializer", "CtorCall",
    "BinaryOp", "FieldReference", "CLRArray", "TypeCast", "TypeTest", "UnaryOp",
    "AddressOf", "Dereference", "FnPtrObj",
)
LEAF_KINDS = ("LocalVar", "CLRLiteral", "ClassRef", "FieldReference")


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class LabelParams:
    """Distribution of node kinds and attribute values."""

    root_weights: tuple = (5, 2, 1.5, 1.5, 1, 1.2, 0.8, 0.4, 0.4, 0.3, 0.3, 0.2, 0.2, 0.2)
    leaf_weights: tuple = (3, 2, 1, 1)
    # probability of drawing names from the second half of each vocabulary
    vocab_bias: float = 0.3
    crypto_prob: float = 0.01
    call_density: float = 0.15
    args_mean: float = 1.2
    literal_scale: float = 50.0


@dataclass(frozen=True)
class StructureParams:
    branch_prob: float = 0.15
    loop_prob: float = 0.08
    switch_prob: float = 0.0
    max_depth: int = 3


@dataclass(frozen=True)
class ClassParams:
    labels: LabelParams = field(default_factory=LabelParams)
    structure: StructureParams = field(default_factory=StructureParams)


@dataclass(frozen=True)
class CorpusSpec:
    n_files: int = 100  # per class
    functions: tuple = (3, 10)  # inclusive range per file
    statements: tuple = (4, 14)  # inclusive range per function
    benign: ClassParams = field(default_factory=ClassParams)
    malicious: ClassParams = field(default_factory=ClassParams)
    seed: int = 0
    name: str = "custom"

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusSpec":
        obj = dict(obj)
        preset = obj.pop("preset", None)
        base = PRESETS[preset](1, 0) if preset else cls()
        kw = {}
        for key in ("n_files", "seed", "name"):
            if key in obj:
                kw[key] = obj[key]
        for key in ("functions", "statements"):
            if key in obj:
                kw[key] = tuple(obj[key])
        for label in LABELS:
            if label in obj:
                raw = obj[label]
                cur = getattr(base, label)
                lab = raw.get("labels", {})
                if "root_weights" in lab:
                    lab = {**lab, "root_weights": tuple(lab["root_weights"])}
                if "leaf_weights" in lab:
                    lab = {**lab, "leaf_weights": tuple(lab["leaf_weights"])}
                kw[label] = ClassParams(replace(cur.labels, **lab),
                                        replace(cur.structure, **raw.get("structure", {})))
        return replace(base, **kw)


def texture_spec(n_files: int = 2000, seed: int = 0) -> CorpusSpec:
    """Classes differ in node labels; structure is shared."""
    benign = ClassParams(LabelParams(vocab_bias=0.15, crypto_prob=0.005, args_mean=1.0))
    malicious = ClassParams(LabelParams(
        root_weights=(5, 1.5, 1.5, 1.5, 1.8, 1.5, 0.5, 0.9, 0.7, 0.4, 0.4, 0.4, 0.3, 0.6),
        vocab_bias=0.85, crypto_prob=0.15, args_mean=2.0))
    return CorpusSpec(n_files, statements=(8, 18), benign=benign, malicious=malicious,
                      seed=seed, name="texture")


def topology_spec(n_files: int = 2000, seed: int = 0) -> CorpusSpec:
    """Classes share every label parameter; benign code is straight-line."""
    labels = LabelParams()
    benign = ClassParams(labels, StructureParams(branch_prob=0.0, loop_prob=0.0))
    malicious = ClassParams(labels, StructureParams(branch_prob=0.45, loop_prob=0.25,
                                                    switch_prob=0.1))
    return CorpusSpec(n_files, statements=(8, 18), benign=benign, malicious=malicious,
                      seed=seed, name="topology")


PRESETS = {"texture": texture_spec, "topology": topology_spec}


class _FunctionBuilder:

    def __init__(self, rng: np.random.Generator, params: ClassParams, fn_names: list,
                 own_name: str):
        self.rng = rng
        self.lp = params.labels
        self.sp = params.structure
        self.nodes: dict = {}
        self.next_id = 1
        self.callees = [n for n in fn_names if n != own_name]
        rw = np.asarray(self.lp.root_weights, dtype=float)
        lw = np.asarray(self.lp.leaf_weights, dtype=float)
        # cumulative weights for inverse-CDF draws (much cheaper than rng.choice)
        self.root_cdf = np.cumsum(rw / rw.sum())
        self.leaf_cdf = np.cumsum(lw / lw.sum())

    def draw(self, cdf: np.ndarray) -> int:
        return min(int(np.searchsorted(cdf, self.rng.random(), side="right")), len(cdf) - 1)

    def add(self, kind: str, **attrs) -> str:
        nid = str(self.next_id)
        self.next_id += 1
        self.nodes[nid] = {"type": kind, **attrs}
        return nid

    def pick(self, vocab: tuple) -> str:
        half = len(vocab) // 2
        if self.rng.random() < self.lp.vocab_bias:
            return vocab[half + int(self.rng.integers(len(vocab) - half))]
        return vocab[int(self.rng.integers(half))]

    def literal(self) -> int:
        return int(self.rng.integers(-1, int(self.lp.literal_scale) + 1))

    def leaf(self) -> str:
        kind = LEAF_KINDS[self.draw(self.leaf_cdf)]
        if kind == "LocalVar":
            return self.add(kind, name=f"variable{int(self.rng.integers(12))}")
        if kind == "CLRLiteral":
            return self.add(kind, value=self.literal())
        if kind == "ClassRef":
            return self.add(kind, name=self.pick(TYPE_NAMES))
        return self.add(kind, fieldName=self.pick(FIELD_NAMES))

    def args(self) -> list:
        return [self.leaf() for _ in range(int(self.rng.poisson(self.lp.args_mean)))]

    def atom(self) -> str:
        kind = ROOT_KINDS[self.draw(self.root_cdf)]
        rng = self.rng
        if kind == "Call":
            if self.callees and rng.random() < self.lp.call_density:
                name = self.callees[int(rng.integers(len(self.callees)))]
            elif rng.random() < self.lp.crypto_prob:
                name = CRYPTO_NAMES[int(rng.integers(len(CRYPTO_NAMES)))]
            else:
                name = self.pick(API_NAMES)
            target = self.add("ClassRef", name=self.pick(TYPE_NAMES))
            return self.add("Call", fnName=name, target=target, arguments=self.args())
        if kind == "Assignment":
            left = self.add("LocalVar", name=f"variable{int(rng.integers(12))}")
            return self.add(kind, left=left, right=self.leaf())
        if kind == "StoreLocal":
            return self.add(kind, localIdx=int(rng.integers(8)), value=self.literal())
        if kind == "CLRVariableWithInitializer":
            init = self.add("LocalVar", name=f"locals[{int(rng.integers(8))}]")
            return self.add(kind, varType=self.pick(TYPE_NAMES),
                            name=f"variable{int(rng.integers(12))}", value=init)
        if kind == "CtorCall":
            return self.add(kind, ctorType=self.pick(TYPE_NAMES), arguments=self.args())
        if kind == "BinaryOp":
            return self.add(kind, whichOpCode=self.pick(OPCODES), left=self.leaf(),
                            right=self.leaf())
        if kind == "FieldReference":
            return self.add(kind, fieldName=self.pick(FIELD_NAMES), target=self.leaf())
        if kind == "CLRArray":
            return self.add(kind, elemType=self.pick(TYPE_NAMES),
                            size=int(rng.integers(1, 256)))
        if kind == "TypeCast":
            return self.add(kind, castedType=self.pick(TYPE_NAMES), operand=self.leaf())
        if kind == "TypeTest":
            return self.add(kind, testedType=self.pick(TYPE_NAMES), operand=self.leaf())
        if kind in ("UnaryOp", "AddressOf"):
            return self.add(kind, expr=float(self.literal()))
        if kind == "Dereference":
            return self.add(kind, operand=self.leaf())
        return self.add("FnPtrObj", name=self.pick(self.callees or ("Invoke",)))

    def arrange(self, atoms: deque, depth: int) -> list:
        rng, sp = self.rng, self.sp
        out = []
        while atoms:
            nested = depth < sp.max_depth and len(atoms) >= 2
            r = rng.random()
            if nested and r < sp.branch_prob:
                cond = atoms.popleft()
                then = self.arrange(self._take(atoms), depth + 1)
                other = self.arrange(self._take(atoms, allow_empty=True), depth + 1)
                attrs = {"condition": cond, "then": then}
                if other:
                    attrs["else"] = other
                out.append(self.add("If", **attrs))
            elif nested and r < sp.branch_prob + sp.loop_prob:
                cond = atoms.popleft()
                body = self.arrange(self._take(atoms), depth + 1)
                out.append(self.add("While", condition=cond, body=body))
            elif nested and r < sp.branch_prob + sp.loop_prob + sp.switch_prob:
                cond = atoms.popleft()
                cases = [self.arrange(self._take(atoms), depth + 1)]
                while atoms and rng.random() < 0.5:
                    cases.append(self.arrange(self._take(atoms), depth + 1))
                out.append(self.add("Switch", condition=cond, cases=cases))
            else:
                out.append(atoms.popleft())
        return out

    def _take(self, atoms: deque, allow_empty: bool = False) -> deque:
        lo = 0 if allow_empty else 1
        hi = min(4, len(atoms))
        k = int(self.rng.integers(lo, hi + 1)) if hi >= lo else 0
        return deque(atoms.popleft() for _ in range(k))

    def build(self, n_statements: int) -> dict:
        atoms = deque(self.atom() for _ in range(n_statements))
        entry = self.arrange(atoms, 0)
        entry.append(self.add("Return", value=float(self.rng.integers(0, 2))))
        return {"entry": entry, "nodes": self.nodes}


def _file_obj(rng: np.random.Generator, spec: CorpusSpec, params: ClassParams,
              tag: str) -> dict:
    n_fn = int(rng.integers(spec.functions[0], spec.functions[1] + 1))
    names = ["Main"] + [f"Method{i}" for i in range(1, n_fn)]
    functions = []
    for name in names:
        n_st = int(rng.integers(spec.statements[0], spec.statements[1] + 1))
        body = _FunctionBuilder(rng, params, names, name).build(n_st)
        functions.append({"name": name, **body})
    obj = {"file_id": "", "functions": functions}
    blob = json.dumps(obj, sort_keys=True).encode()
    obj["file_id"] = hashlib.sha256(tag.encode() + blob).hexdigest()
    return obj


def _validate_spec(spec: CorpusSpec) -> None:
    if spec.n_files < 1:
        raise SynthError("corpus needs at least one file per class")
    lo, hi = spec.functions
    if not 1 <= lo <= hi:
        raise SynthError("functions range must satisfy 1 <= min <= max")
    lo, hi = spec.statements
    if not 1 <= lo <= hi:
        raise SynthError("statements range must satisfy 1 <= min <= max")
    for label in LABELS:
        p = getattr(spec, label)
        if len(p.labels.root_weights) != len(ROOT_KINDS):
            raise SynthError(f"{label}: root_weights needs {len(ROOT_KINDS)} entries")
        if len(p.labels.leaf_weights) != len(LEAF_KINDS):
            raise SynthError(f"{label}: leaf_weights needs {len(LEAF_KINDS)} entries")
        s = p.structure
        if min(s.branch_prob, s.loop_prob, s.switch_prob) < 0 or \
                s.branch_prob + s.loop_prob + s.switch_prob > 1:
            raise SynthError(f"{label}: structure probabilities must be a sub-distribution")


def generate_objs(spec: CorpusSpec) -> list:
    """Raw JSON objects with labels, benign files first."""
    _validate_spec(spec)
    out = []
    for ci, label in enumerate(LABELS):
        params = getattr(spec, label)
        for i in range(spec.n_files):
            rng = np.random.default_rng([spec.seed, ci, i])
            out.append((_file_obj(rng, spec, params, f"{spec.name}:{spec.seed}:{label}:{i}"),
                        label))
    return out


def generate(spec: CorpusSpec) -> list:
    """List of (FileDocument, label); deterministic in ``spec.seed``."""
    return [(file_document_from_obj(obj), label) for obj, label in generate_objs(spec)]


def generate_topology_only(n_files: int = 2000, seed: int = 0) -> list:
    return generate(topology_spec(n_files, seed))


def write_corpus(spec: CorpusSpec, out_dir: str) -> str:
    """Write one JSON file per sample plus ``manifest.json``; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for obj, label in generate_objs(spec):
        file_document_from_obj(obj)  # validate before writing
        fname = f"{obj['file_id'][:16]}.json"
        with open(os.path.join(out_dir, fname), "w") as fh:
            json.dump(obj, fh, separators=(",", ":"))
        entries.append({"file_id": obj["file_id"], "path": fname, "label": label})
    manifest = os.path.join(out_dir, "manifest.json")
    with open(manifest, "w") as fh:
        json.dump({"spec": spec.to_json(), "files": entries}, fh, indent=1)
    return manifest


def kind_histogram(docs, structural: bool = False) -> dict:
    """Node-kind counts over a set of FileDocuments; control-structure kinds are skipped by default."""
    counts: dict = {}
    for doc in docs:
        for fn in doc.functions:
            for node in fn.nodes.values():
                if not structural and node.kind in STRUCTURAL_KINDS:
                    continue
                counts[node.kind] = counts.get(node.kind, 0) + 1
    return counts


def shared_distribution_pvalue(corpus) -> float:
    """Chi-square homogeneity p-value of the node-kind histograms of the two classes."""
    from scipy.stats import chi2_contingency

    a = kind_histogram(d for d, lab in corpus if lab == BENIGN)
    b = kind_histogram(d for d, lab in corpus if lab == MALICIOUS)
    kinds = sorted(set(a) | set(b))
    table = np.array([[a.get(k, 0) for k in kinds], [b.get(k, 0) for k in kinds]])
    return float(chi2_contingency(table)[1])
