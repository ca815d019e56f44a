"""Command-line pipeline: vectorize, train, score, similarity, dedup, synth.

Exit codes: 0 success, 2 usage error, 3 parse error (unreadable input or
model file), 4 data error (empty input set, single-class training data,
schema mismatch, every input failing).
"""

from __future__ import annotations

import argparse
import csv
import glob
import io
import json
import logging
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import forest
from .ast_ingest import AstParseError, AstValidationError, parse_file_document
from .callgraph import build_call_graph
from .config import ConfigError, PipelineConfig, load_config
from .similarity import distance_matrix, vectorize_graph
from .synth import PRESETS, CorpusSpec, SynthError, write_corpus
from .vectorize import MODES, FileVector, Vectorizer, dedup_hash

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_DATA = 0, 2, 3, 4

log = logging.getLogger("pmiv")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# input helpers

_SKIP_NAMES = {"manifest.json"}


def collect_inputs(items: Sequence[str]) -> list:
    """Expand files, directories (their ``*.json``) and glob patterns, sorted."""
    out = []
    for item in items:
        if os.path.isdir(item):
            found = [os.path.join(item, n) for n in os.listdir(item)
                     if n.endswith(".json") and n not in _SKIP_NAMES
                     and not n.endswith(".schema.json")]
        elif any(ch in item for ch in "*?["):
            found = glob.glob(item)
        elif os.path.isfile(item):
            found = [item]
        else:
            raise CliError(f"no such input: {item}", EXIT_USAGE)
        out.extend(found)
    return sorted(set(out))


def _read_doc(path: str):
    with open(path, "rb") as fh:
        return parse_file_document(fh.read())


def _open_out(path: Optional[str]):
    if path is None or path == "-":
        return sys.stdout
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return open(path, "w", newline="")


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _map(fn, items: list, workers: int, initializer=None, initargs=()):
    """Ordered map, in-process for one worker, else over a process pool."""
    if workers <= 1 or len(items) <= 1:
        if initializer is not None:
            initializer(*initargs)
        return [fn(x) for x in items]
    with ProcessPoolExecutor(workers, initializer=initializer, initargs=initargs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


# per-process state for pool workers
_state: dict = {}


def _init_vectorizer(feature_cfg, model_bytes=None):
    _state["vectorizer"] = Vectorizer(feature_cfg)
    _state["model"] = forest.load(model_bytes) if model_bytes is not None else None


def _vectorize_one(job):
    path, mode, dot_dir = job
    try:
        doc = _read_doc(path)
    except (AstParseError, AstValidationError, OSError) as e:
        return path, None, f"{type(e).__name__}: {e}"
    vz = _state["vectorizer"]
    if dot_dir:
        _dump_dot(doc, vz, dot_dir)
    return path, vz.vectorize(doc, mode).to_record(), None


def _score_one(job):
    path, mode = job
    t0 = time.perf_counter()
    try:
        doc = _read_doc(path)
    except (AstParseError, AstValidationError, OSError) as e:
        return path, None, f"{type(e).__name__}: {e}", 0.0
    v = _state["vectorizer"].vectorize(doc, mode)
    try:
        label, score = forest.predict(_state["model"], v)
    except forest.SchemaMismatchError as e:
        return path, None, f"SchemaMismatchError: {e}", 0.0
    elapsed = time.perf_counter() - t0
    return path, {"file_id": v.file_id, "label": label, "score": score}, None, elapsed


def _safe_name(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", s)[:120] or "_"


def _dump_dot(doc, vz: Vectorizer, dot_dir: str) -> None:
    d = os.path.join(dot_dir, _safe_name(doc.file_id))
    os.makedirs(d, exist_ok=True)
    for i, g in enumerate(vz.sdfgs(doc)):
        with open(os.path.join(d, f"{i:03d}_{_safe_name(g.function_name)}.dot"), "w") as fh:
            fh.write(g.to_dot())
    with open(os.path.join(d, "callgraph.dot"), "w") as fh:
        fh.write(build_call_graph(doc, vz.cfg.crypto_substrings).to_dot())


# ---------------------------------------------------------------------------
# commands

def cmd_vectorize(args, cfg: PipelineConfig) -> int:
    paths = collect_inputs(args.inputs)
    if not paths:
        raise CliError("no input files", EXIT_DATA)
    vz = Vectorizer(cfg.feature_config())
    schema = vz.schema(cfg.mode)
    jobs = [(p, cfg.mode, args.dot_dir) for p in paths]
    results = _map(_vectorize_one, jobs, cfg.worker_count, _init_vectorizer,
                   (cfg.feature_config(),))
    records = []
    for path, rec, err in results:
        if err:
            log.warning("skipping %s: %s", path, err)
        else:
            records.append(rec)
    if not records:
        raise CliError("every input failed to parse", EXIT_PARSE)

    out = _open_out(args.out)
    try:
        if args.format == "csv":
            w = csv.writer(out, lineterminator="\n")
            w.writerow(["file_id", *schema.columns])
            for rec in records:
                w.writerow([rec["file_id"], *(repr(v) for v in rec["values"])])
        else:
            for rec in records:
                out.write(_dumps(rec) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if args.out and args.out != "-":
        sidecar = {**schema.to_json(), "config": cfg.to_json()}
        with open(args.out + ".schema.json", "w") as fh:
            json.dump(sidecar, fh, indent=1, sort_keys=True)
            fh.write("\n")
    log.info("vectorized %d of %d files", len(records), len(paths))
    return EXIT_OK


def read_vectors(path: str) -> list:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise CliError(f"cannot read vectors: {e}", EXIT_USAGE) from None
    try:
        if path.endswith(".csv"):
            with open(path + ".schema.json") as fh:
                side = json.load(fh)
            rows = list(csv.reader(io.StringIO(text)))
            return [FileVector(r[0], np.array([float(x) for x in r[1:]]), side["schema_hash"],
                               side["mode"]) for r in rows[1:]]
        return [FileVector.from_record(json.loads(line)) for line in text.splitlines()
                if line.strip()]
    except (OSError, ValueError, KeyError, IndexError) as e:
        raise CliError(f"malformed vector file {path}: {e}", EXIT_PARSE) from None


def read_labels(path: Optional[str]) -> dict:
    """file_id -> label from a corpus manifest, a JSONL file, or a two-column CSV."""
    if path is None:
        raise CliError("--labels is required", EXIT_USAGE)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise CliError(f"cannot read labels: {e}", EXIT_USAGE) from None
    try:
        if path.endswith(".csv"):
            rows = list(csv.reader(io.StringIO(text)))
            if rows and rows[0][:2] == ["file_id", "label"]:
                rows = rows[1:]
            return {r[0]: r[1] for r in rows if r}
        stripped = text.lstrip()
        if stripped.startswith("{") and '"files"' in text:
            obj = json.loads(text)
            if isinstance(obj, dict) and "files" in obj:
                return {e["file_id"]: e["label"] for e in obj["files"]}
        return {o["file_id"]: o["label"] for o in map(json.loads, text.splitlines())
                if o}
    except (ValueError, KeyError, IndexError, TypeError) as e:
        raise CliError(f"malformed labels file {path}: {e}", EXIT_PARSE) from None


def split_indices(n: int, split: Sequence[float], seed: int) -> tuple:
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def cmd_train(args, cfg: PipelineConfig) -> int:
    labels = read_labels(args.labels)
    vectors = read_vectors(args.vectors)
    if not vectors:
        raise CliError("no vectors to train on", EXIT_DATA)
    missing = [v.file_id for v in vectors if v.file_id not in labels]
    if missing:
        raise CliError(f"{len(missing)} vectors have no label (e.g. {missing[0]})", EXIT_DATA)
    y = [labels[v.file_id] for v in vectors]
    tr, va, te = split_indices(len(vectors), cfg.split, cfg.seed)
    fcfg = cfg.forest_config()
    try:
        model = forest.train([vectors[i] for i in tr], [y[i] for i in tr], fcfg,
                             workers=cfg.worker_count)
    except forest.ForestError as e:
        raise CliError(str(e), EXIT_DATA) from None
    model.metadata = {"mode": vectors[0].mode}
    with open(args.out, "wb") as fh:
        fh.write(forest.save(model))

    report, lines = {"n_train": len(tr), "n_validation": len(va), "n_test": len(te)}, []
    for name, idx in (("validation", va), ("test", te)):
        if len(idx) == 0:
            continue
        m = forest.evaluate(model, [vectors[i] for i in idx], [y[i] for i in idx])
        report[name] = m
        lines.append(forest.format_report(m, f"[{name}] {vectors[0].mode.upper()}"))
    text = "\n\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def _load_model(path: str):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise CliError(f"cannot read model: {e}", EXIT_USAGE) from None
    try:
        return data, forest.load(data)
    except forest.ModelLoadError as e:
        raise CliError(f"cannot load model {path}: {e}", EXIT_PARSE) from None


def timing_summary(seconds: Sequence[float]) -> dict:
    ms = np.asarray(seconds, dtype=float) * 1000.0
    if not len(ms):
        return {"files": 0}
    return {"files": int(len(ms)), "median_ms": float(np.median(ms)),
            "p95_ms": float(np.percentile(ms, 95)), "max_ms": float(ms.max())}


def cmd_score(args, cfg: PipelineConfig) -> int:
    data, model = _load_model(args.model)
    mode = args.mode or model.metadata.get("mode", cfg.mode)
    fcfg = cfg.feature_config()
    expected = Vectorizer(fcfg).schema(mode).schema_hash
    if expected != model.schema_hash:
        raise CliError("model schema does not match the configured vectorizer", EXIT_DATA)
    paths = collect_inputs(args.inputs)
    if not paths:
        raise CliError("no input files", EXIT_DATA)
    results = _map(_score_one, [(p, mode) for p in paths], cfg.worker_count,
                   _init_vectorizer, (fcfg, data))
    out = _open_out(args.out)
    times, ok = [], 0
    try:
        for path, rec, err, elapsed in results:
            if err:
                log.warning("skipping %s: %s", path, err)
                continue
            ok += 1
            times.append(elapsed)
            out.write(_dumps(rec) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    summary = timing_summary(times)
    sys.stderr.write("timing " + _dumps(summary) + "\n")
    if args.timing:
        with open(args.timing, "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
            fh.write("\n")
    if not ok:
        raise CliError("every input failed", EXIT_PARSE)
    return EXIT_OK


def _docs(paths: Iterable[str]) -> list:
    docs = []
    for path in paths:
        try:
            docs.append((path, _read_doc(path)))
        except (AstParseError, AstValidationError, OSError) as e:
            log.warning("skipping %s: %s: %s", path, type(e).__name__, e)
    return docs


def cmd_similarity(args, cfg: PipelineConfig) -> int:
    paths = collect_inputs(args.inputs)
    if not paths:
        raise CliError("no input files", EXIT_DATA)
    docs = _docs(paths)
    if not docs:
        raise CliError("every input failed to parse", EXIT_PARSE)
    fcfg = cfg.feature_config()
    vz = Vectorizer(fcfg)
    if args.level == "graph":
        names, vectors = [], []
        for _, doc in docs:
            for g in vz.sdfgs(doc):
                if not g.is_empty:
                    names.append(f"{doc.file_id}:{g.function_name}")
                    vectors.append(vectorize_graph(g, fcfg))
    else:
        names = [doc.file_id for _, doc in docs]
        vectors = [vz.vectorize(doc, cfg.mode) for _, doc in docs]
    if args.p < 1:
        raise CliError("--p must be >= 1", EXIT_USAGE)
    dist = distance_matrix(vectors, args.p)
    out = _open_out(args.out)
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["", *names])
        for name, row in zip(names, dist):
            w.writerow([name, *(repr(float(x)) for x in row)])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_dedup(args, cfg: PipelineConfig) -> int:
    paths = collect_inputs(args.inputs)
    if not paths:
        raise CliError("no input files", EXIT_DATA)
    docs = _docs(paths)
    if not docs:
        raise CliError("every input failed to parse", EXIT_PARSE)
    files, groups = [], {}
    for path, doc in docs:
        digest = dedup_hash(doc, cfg.max_paths)
        files.append({"file_id": doc.file_id, "path": path, "digest": digest})
        groups.setdefault(digest, []).append(doc.file_id)
    dups = [{"digest": d, "file_ids": ids} for d, ids in sorted(groups.items()) if len(ids) > 1]
    manifest = {"files": files, "duplicates": dups, "unique": len(groups)}
    out = _open_out(args.out)
    try:
        out.write(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_synth(args, cfg: PipelineConfig) -> int:
    if bool(args.preset) == bool(args.spec):
        raise CliError("give exactly one of --preset or --spec", EXIT_USAGE)
    if not args.out:
        raise CliError("--out directory is required", EXIT_USAGE)
    if args.spec:
        try:
            with open(args.spec) as fh:
                spec = CorpusSpec.from_json(json.load(fh))
        except OSError as e:
            raise CliError(f"cannot read spec: {e}", EXIT_USAGE) from None
        except (ValueError, TypeError, KeyError) as e:
            raise CliError(f"malformed spec: {e}", EXIT_PARSE) from None
    else:
        spec = PRESETS[args.preset](args.n_files or 2000, cfg.seed)
    if args.n_files is not None:
        spec = replace(spec, n_files=args.n_files)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    try:
        manifest = write_corpus(spec, args.out)
    except SynthError as e:
        raise CliError(str(e), EXIT_DATA) from None
    log.info("wrote %s", manifest)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with pipeline settings")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--workers", type=int, help="worker processes (default: cores)")
    common.add_argument("--mode", choices=MODES, help="vector type (default from config)")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pmiv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("vectorize", parents=[common], help="AST documents to file vectors")
    s.add_argument("inputs", nargs="+", help="files, directories or glob patterns")
    s.add_argument("--dot-dir", help="also dump each SDFG and the call graph as DOT")
    s.set_defaults(func=cmd_vectorize)

    s = sub.add_parser("train", parents=[common], help="train a forest on labeled vectors")
    s.add_argument("vectors", help="vector file from 'vectorize' (.jsonl or .csv)")
    s.add_argument("--labels", help="corpus manifest, JSONL or CSV of file_id,label")
    s.add_argument("--report", help="write the metrics as JSON here")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("score", parents=[common], help="score AST documents with a model")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--model", required=True)
    s.add_argument("--timing", help="write the latency summary as JSON here")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("similarity", parents=[common], help="pairwise distance matrix (CSV)")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--p", type=float, default=2.0, help="norm exponent, >= 1")
    s.add_argument("--level", choices=("file", "graph"), default="file")
    s.set_defaults(func=cmd_similarity)

    s = sub.add_parser("dedup", parents=[common], help="group files by dedup digest")
    s.add_argument("inputs", nargs="+")
    s.set_defaults(func=cmd_dedup)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic labeled corpus")
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--spec", help="CorpusSpec JSON file")
    s.add_argument("--n-files", type=int, help="files per class")
    s.set_defaults(func=cmd_synth)
    return p


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.workers is not None:
        over["workers"] = args.workers
    if args.mode is not None:
        over["mode"] = args.mode
    return replace(cfg, **over) if over else cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        if args.command == "train" and not args.out:
            raise CliError("--out (model path) is required", EXIT_USAGE)
        return args.func(args, cfg)
    except ConfigError as e:
        log.error("config: %s", e)
        return EXIT_USAGE
    except CliError as e:
        log.error("%s", e)
        return e.code
    except BrokenPipeError:
        # downstream reader (e.g. head) closed early; silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
