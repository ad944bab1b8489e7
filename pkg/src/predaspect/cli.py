"""Command-line experiment harness.

Subcommands: run, sweep, subsample, stats, analyze, baseline. Settings come
from an optional JSON config (``--config``); any same-named flag overrides it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from typing import Optional

from predaspect import __version__
from predaspect.analysis import (
    TagClassPartition,
    class_group_accuracy,
    per_verb_report,
    pos_accuracy,
    pos_accuracy_rows,
    pos_distribution,
    window_sweep,
    write_tsv,
)
from predaspect.compose import compose_batch
from predaspect.context import DEFAULT_WINDOW_SIZES, ContextSpec
from predaspect.corpus import (
    check_published,
    dataset_stats,
    filter_labels,
    label_distribution,
    load_dataset,
    load_index_only,
    merge_labels,
    parse_mapping,
    write_index,
)
from predaspect.embeddings import FORMATS, WORD2VEC_BINARY, load_embeddings
from predaspect.errors import AspectError
from predaspect.evaluation import (
    evaluate_majority,
    read_prediction_log,
    report_json,
    run_protocol,
    write_prediction_log,
)
from predaspect.model import TrainConfig, majority_closed_form, majority_label
from predaspect.resample import subsample_ambiguous_with_manifest

log = logging.getLogger("predaspect")

DEFAULTS = {
    "embeddings": {"path": None, "format": WORD2VEC_BINARY},
    "corpus": {"conllu": None, "index": None, "label_set": None, "name": "dataset"},
    "context": "verb",
    "protocol": "loo",
    "k": 10,
    "seed": 0,
    "train": {"c": 1.0, "tol": 1e-4, "max_iter": 100},
    "out_dir": "out",
    "merge": None,
    "keep": None,
    "average": False,
    "stratified": True,
    "jobs": None,
}

# flag dest -> (section, key) inside the config
_NESTED = {
    "embeddings": ("embeddings", "path"),
    "embeddings_format": ("embeddings", "format"),
    "conllu": ("corpus", "conllu"),
    "index": ("corpus", "index"),
    "label_set": ("corpus", "label_set"),
    "name": ("corpus", "name"),
    "c": ("train", "c"),
    "tol": ("train", "tol"),
    "max_iter": ("train", "max_iter"),
}
_TOP = ("context", "protocol", "k", "seed", "out_dir", "merge", "keep", "average", "stratified", "jobs")


class CliError(AspectError):
    pass


def _merge_config(base: dict, override: dict) -> dict:
    out = json.loads(json.dumps(base))
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key].update(value)
        else:
            out[key] = value
    return out


def build_config(args: argparse.Namespace) -> dict:
    cfg = DEFAULTS
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = _merge_config(cfg, json.load(fh))
        except FileNotFoundError:
            raise CliError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {args.config} is not valid JSON: {exc}") from None
    else:
        cfg = _merge_config(cfg, {})
    for dest, (section, key) in _NESTED.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg[section][key] = value
    for dest in _TOP:
        value = getattr(args, dest, None)
        if value is not None:
            cfg[dest] = value
    labels = cfg["corpus"]["label_set"]
    if isinstance(labels, str):
        cfg["corpus"]["label_set"] = [s.strip() for s in labels.split(",") if s.strip()]
    for key in ("merge", "keep"):
        if isinstance(cfg[key], str):
            cfg[key] = parse_mapping(cfg[key]) if key == "merge" else [s.strip() for s in cfg[key].split(",") if s.strip()]
    return cfg


def _require(cfg: dict, *paths: tuple[str, str]) -> None:
    for section, key in paths:
        value = cfg[section][key]
        if not value:
            raise CliError(f"missing required setting {section}.{key} (flag --{key.replace('_', '-')})")
        if key in ("path", "conllu", "index") and not os.path.exists(value):
            raise CliError(f"{section} file not found: {value}")


def _load_corpus(cfg: dict, need_tokens: bool = True):
    corpus = cfg["corpus"]
    _require(cfg, ("corpus", "index"), ("corpus", "label_set"))
    if need_tokens or corpus.get("conllu"):
        _require(cfg, ("corpus", "conllu"))
        dataset = load_dataset(corpus["conllu"], corpus["index"], corpus["name"], corpus["label_set"])
    else:
        dataset = load_index_only(corpus["index"], corpus["name"], corpus["label_set"])
    if cfg.get("merge"):
        dataset = merge_labels(dataset, cfg["merge"])
    if cfg.get("keep"):
        dataset = filter_labels(dataset, cfg["keep"])
    return dataset


def _load_table(cfg: dict):
    _require(cfg, ("embeddings", "path"))
    fmt = cfg["embeddings"]["format"]
    if fmt not in FORMATS:
        raise CliError(f"unknown embedding format {fmt!r}; expected one of {FORMATS}")
    return load_embeddings(cfg["embeddings"]["path"], fmt)


def _file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_hashes(cfg: dict) -> dict:
    files = {
        "embeddings": cfg["embeddings"].get("path"),
        "conllu": cfg["corpus"].get("conllu"),
        "index": cfg["corpus"].get("index"),
    }
    return {role: _file_sha256(p) for role, p in files.items() if p and os.path.exists(p)}


def _config_echo(cfg: dict) -> dict:
    echo = json.loads(json.dumps(cfg))
    echo.pop("jobs", None)  # parallelism never changes results
    echo.pop("out_dir", None)
    return echo


def _input_hash(cfg: dict, hashes: dict) -> str:
    blob = json.dumps({"config": _config_echo(cfg), "files": hashes}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(c=float(t["c"]), tol=float(t["tol"]), max_iter=int(t["max_iter"]), seed=int(cfg["seed"]))


def _jobs(cfg: dict) -> int:
    return int(cfg["jobs"]) if cfg.get("jobs") else (os.cpu_count() or 1)


def _out_dir(cfg: dict) -> str:
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _write_manifest(out: str, cfg: dict, hashes: dict, input_hash: str, command: str, **extra) -> str:
    manifest = {
        "command": command,
        "version": __version__,
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "input_hash": input_hash,
        "input_files": hashes,
        "config": _config_echo(cfg),
        **extra,
    }
    path = os.path.join(out, "manifest.json")
    _write(path, json.dumps(manifest, indent=2) + "\n")
    return path


def cmd_run(cfg: dict) -> dict:
    """load -> compose -> protocol -> report, prediction log and manifest."""
    table = _load_table(cfg)
    dataset = _load_corpus(cfg)
    spec = ContextSpec.parse(cfg["context"])
    composed = compose_batch(dataset, spec, table, average=bool(cfg["average"]))
    oov_targets = sum(not c.target_in_vocabulary for c in composed)
    oov_context = sum(not x.in_vocabulary for c in composed for x in c.contributors)
    if oov_targets:
        log.warning("%d of %d target verbs are out of vocabulary", oov_targets, len(composed))
    report = run_protocol(
        dataset, spec, table, _train_config(cfg), cfg["protocol"], int(cfg["seed"]),
        composed=composed, jobs=_jobs(cfg), average=bool(cfg["average"]),
        stratified=bool(cfg["stratified"]), default_k=int(cfg["k"]),
    )
    hashes = _input_hashes(cfg)
    ih = _input_hash(cfg, hashes)
    out = _out_dir(cfg)
    _write(os.path.join(out, "report.json"), report_json(report, {"input_hash": ih, "config": _config_echo(cfg)}))
    write_prediction_log(report.predictions, dataset.label_set, os.path.join(out, "predictions.tsv"), f"input_hash={ih}")
    _write_manifest(
        out, cfg, hashes, ih, "run",
        instances=len(dataset), oov_targets=oov_targets, oov_context_tokens=oov_context,
        degenerate_folds=report.degenerate_folds,
    )
    summary = {"accuracy": report.accuracy, **{f"f1:{l}": m.f1 for l, m in report.per_class.items()}}
    print(f"{report.protocol} {report.context}: " + "  ".join(f"{k} {100 * v:.1f}" for k, v in summary.items()))
    return summary


def cmd_sweep(cfg: dict, sizes) -> list[dict]:
    table = _load_table(cfg)
    dataset = _load_corpus(cfg)
    rows = window_sweep(dataset, sizes, cfg["protocol"], table, _train_config(cfg), int(cfg["seed"]), jobs=_jobs(cfg))
    hashes = _input_hashes(cfg)
    ih = _input_hash(cfg, hashes)
    out = _out_dir(cfg)
    write_tsv(rows, os.path.join(out, "sweep.tsv"), f"input_hash={ih}")
    _write_manifest(out, cfg, hashes, ih, "sweep", sizes=[str(s) for s in sizes])
    for row in rows:
        print("\t".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in row.values()))
    return rows


def cmd_subsample(cfg: dict, threshold: float) -> dict:
    dataset = _load_corpus(cfg, need_tokens=False)
    result, manifest = subsample_ambiguous_with_manifest(dataset, threshold, int(cfg["seed"]))
    hashes = _input_hashes(cfg)
    ih = _input_hash(cfg, hashes)
    out = _out_dir(cfg)
    write_index(result.instances, os.path.join(out, "subsampled_index.tsv"), f"input_hash={ih}")
    data = json.loads(manifest.to_json())
    data["input_hash"] = ih
    _write(os.path.join(out, "subsample_manifest.json"), json.dumps(data, indent=2) + "\n")
    print(f"kept {len(result)} of {len(dataset)} instances")
    return data


def cmd_stats(cfg: dict, published: Optional[str] = None) -> dict:
    dataset = _load_corpus(cfg)
    stats = dataset_stats(dataset)
    if published:
        stats["published_mismatches"] = check_published(stats, published)
    hashes = _input_hashes(cfg)
    stats["input_hash"] = _input_hash(cfg, hashes)
    out = _out_dir(cfg)
    _write(os.path.join(out, "stats.json"), json.dumps(stats, indent=2) + "\n")
    counts = ", ".join(f"{k}:{v}" for k, v in stats["label_counts"].items())
    print(f"{stats['instances']} instances ({counts})")
    if published:
        for problem in stats["published_mismatches"]:
            print(f"mismatch: {problem}")
    return stats


def cmd_analyze(log_path: str, out_dir: str, partition_path: Optional[str] = None, cfg: Optional[dict] = None, contexts=()) -> dict:
    if not os.path.exists(log_path):
        raise CliError(f"prediction log not found: {log_path}")
    predictions, labels = read_prediction_log(log_path)
    if not predictions:
        raise CliError("empty prediction log")
    partition = TagClassPartition.from_json(partition_path) if partition_path else TagClassPartition.default()
    table = pos_accuracy(predictions)
    closed, open_ = class_group_accuracy(table, partition)
    closed_w, open_w = class_group_accuracy(table, partition, weighted=True)
    with open(log_path, "rb") as fh:
        log_hash = hashlib.sha256(fh.read()).hexdigest()
    os.makedirs(out_dir, exist_ok=True)
    comment = f"input_hash={log_hash}"
    write_tsv(pos_accuracy_rows(table, partition), os.path.join(out_dir, "pos_accuracy.tsv"), comment)
    verbs = per_verb_report(predictions, labels)
    write_tsv(
        [{"verb_lemma": k, "support": v["support"], "accuracy": v["accuracy"],
          **{f"f1:{l}": f for l, f in v["f1"].items()}} for k, v in verbs.items()],
        os.path.join(out_dir, "per_verb.tsv"), comment,
    )
    groups = {
        "input_hash": log_hash,
        "unweighted": {"closed": closed, "open": open_},
        "weighted": {"closed": closed_w, "open": open_w},
    }
    _write(os.path.join(out_dir, "class_groups.json"), json.dumps(groups, indent=2) + "\n")
    if cfg is not None and contexts:
        dataset = _load_corpus(cfg)
        rows = []
        for ctx in contexts:
            spec = ContextSpec.parse(ctx)
            rows += [{"context": str(spec), "pos": t, "count": n} for t, n in pos_distribution(dataset, spec).items()]
        write_tsv(rows, os.path.join(out_dir, "pos_distribution.tsv"), comment)
    fmt = lambda v: "n/a" if v is None else f"{v:.3f}"
    print(f"closed-class accuracy {fmt(closed)}  open-class accuracy {fmt(open_)}")
    return groups


def cmd_baseline(cfg: dict, protocol: Optional[str] = None) -> dict:
    dataset = _load_corpus(cfg, need_tokens=False)
    labels = list(dataset.label_set)
    counts = label_distribution(dataset.labels, labels)
    maj = majority_label(dataset.labels, labels)
    p = counts[maj] / len(dataset)
    closed = majority_closed_form(p)
    result = {
        "majority_label": maj,
        "label_counts": counts,
        "accuracy": closed["accuracy"],
        "f1": {lab: (closed["f1_majority"] if lab == maj else 0.0) for lab in labels},
    }
    if protocol:
        report = evaluate_majority(dataset, protocol, int(cfg["seed"]), int(cfg["k"]), bool(cfg["stratified"]))
        result["protocol"] = json.loads(report_json(report))
    hashes = _input_hashes(cfg)
    result["input_hash"] = _input_hash(cfg, hashes)
    out = _out_dir(cfg)
    _write(os.path.join(out, "baseline.json"), json.dumps(result, indent=2) + "\n")
    f1s = "  ".join(f"F1({lab}) {100 * v:.1f}" for lab, v in result["f1"].items())
    print(f"majority={maj}  accuracy {100 * result['accuracy']:.1f}  {f1s}")
    return result


def _add_common(p: argparse.ArgumentParser, with_embeddings: bool = True) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--conllu", help="CoNLL-U file with the parsed sentences")
    p.add_argument("--index", help="instance index TSV")
    p.add_argument("--label-set", dest="label_set", help="comma-separated label order, e.g. state,event")
    p.add_argument("--name", help="dataset name")
    p.add_argument("--merge", help="label mapping, e.g. telic=event,atelic=event")
    p.add_argument("--keep", help="labels to keep, e.g. telic,atelic")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, help="fold count when the protocol omits it")
    p.add_argument("--out-dir", dest="out_dir")
    if with_embeddings:
        p.add_argument("--embeddings", help="embedding file")
        p.add_argument("--embeddings-format", dest="embeddings_format", choices=FORMATS)
        p.add_argument("--context", help="verb | window:K | dep-head | dep-children | dep-full | sentence")
        p.add_argument("--protocol", help="loo | kfold:K | doc-cv:K | fixed | verb-holdout")
        p.add_argument("--c", type=float, help="inverse L2 regularisation strength")
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", dest="max_iter", type=int)
        p.add_argument("--jobs", type=int, help="parallel folds (default: all cores)")
        p.add_argument("--average", action="store_const", const=True, help="average instead of sum vectors")
        p.add_argument("--no-stratify", dest="stratified", action="store_const", const=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="predaspect", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("run", help="train and evaluate one configuration"))

    p = sub.add_parser("sweep", help="evaluate a list of context sizes")
    _add_common(p)
    p.add_argument("--sizes", default=",".join(map(str, DEFAULT_WINDOW_SIZES)),
                   help="comma-separated sizes; also verb, sentence, dep-head, dep-children, dep-full")

    p = sub.add_parser("subsample", help="build an ambiguity-focused subsample")
    _add_common(p, with_embeddings=False)
    p.add_argument("--max-majority-fraction", dest="threshold", type=float, default=0.6)

    p = sub.add_parser("stats", help="dataset statistics")
    _add_common(p, with_embeddings=False)
    p.add_argument("--published", help="compare against published figures for this dataset name")

    p = sub.add_parser("analyze", help="PoS and per-verb analyses of a prediction log")
    _add_common(p, with_embeddings=False)
    p.add_argument("--log", required=True, help="prediction log TSV written by `run`")
    p.add_argument("--partition", help="JSON file with closed/open tag lists")
    p.add_argument("--contexts", help="comma-separated context specs for a PoS distribution (needs corpus)")

    p = sub.add_parser("baseline", help="majority-class baseline")
    _add_common(p, with_embeddings=False)
    p.add_argument("--protocol", help="also evaluate the baseline under this protocol")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        if args.command == "run":
            cmd_run(cfg)
        elif args.command == "sweep":
            sizes = [s.strip() for s in args.sizes.split(",") if s.strip()]
            cmd_sweep(cfg, sizes)
        elif args.command == "subsample":
            cmd_subsample(cfg, args.threshold)
        elif args.command == "stats":
            cmd_stats(cfg, args.published)
        elif args.command == "analyze":
            contexts = [c.strip() for c in (args.contexts or "").split(",") if c.strip()]
            cmd_analyze(args.log, cfg["out_dir"], args.partition, cfg if contexts else None, contexts)
        elif args.command == "baseline":
            cmd_baseline(cfg, args.protocol)
    except (AspectError, OSError, ValueError) as exc:
        err = {"error": str(exc), "type": type(exc).__name__, "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
