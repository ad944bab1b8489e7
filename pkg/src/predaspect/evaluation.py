"""Evaluation protocols, metrics and prediction logs."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import statistics
from fractions import Fraction
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from predaspect.compose import ComposedInstance, Contributor, compose_batch, feature_matrix
from predaspect.context import ContextSpec
from predaspect.corpus import Dataset
from predaspect.embeddings import EmbeddingTable
from predaspect.errors import ProtocolError
from predaspect.model import TrainConfig, majority_baseline, train

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Prediction:
    instance_ref: str
    gold: str
    predicted: str
    scores: dict
    contributors: tuple = ()
    verb_lemma: str = ""
    degenerate: bool = False

    @property
    def correct(self) -> bool:
        return self.gold == self.predicted


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class Metrics:
    labels: tuple
    accuracy: float
    per_class: dict
    confusion: list

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "accuracy": self.accuracy,
            "per_class": {lab: asdict(m) for lab, m in self.per_class.items()},
            "confusion": self.confusion,
        }


@dataclass
class EvalReport:
    protocol: str
    context: str
    metrics: Metrics
    predictions: list
    fold_scores: list = field(default_factory=list)
    fold_summary: dict = field(default_factory=dict)
    groups: list = field(default_factory=list)
    degenerate_folds: int = 0
    n_folds: int = 0
    warnings: list = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.metrics.accuracy

    @property
    def per_class(self) -> dict:
        return self.metrics.per_class

    @property
    def confusion(self) -> list:
        return self.metrics.confusion

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "context": self.context,
            "n_predictions": len(self.predictions),
            "n_folds": self.n_folds,
            "degenerate_folds": self.degenerate_folds,
            **self.metrics.to_dict(),
            "fold_scores": self.fold_scores,
            "fold_summary": self.fold_summary,
            "groups": self.groups,
            "warnings": self.warnings,
        }


def _safe_div(a: float, b: float) -> float:
    return a / b if b else 0.0


def compute_metrics(predictions: Sequence[Prediction], labels: Optional[Sequence[str]] = None) -> Metrics:
    """Confusion matrix (rows gold, columns predicted), accuracy and per-class P/R/F1.

    Any 0/0 ratio is taken as 0. ``labels`` fixes the row/column order; labels
    seen in the predictions but not listed are appended in sorted order.
    """
    if not predictions:
        raise ProtocolError("cannot compute metrics on an empty prediction list")
    order = list(labels or [])
    seen = {p.gold for p in predictions} | {p.predicted for p in predictions}
    order += sorted(seen - set(order))
    pos = {lab: i for i, lab in enumerate(order)}
    conf = [[0] * len(order) for _ in order]
    for p in predictions:
        conf[pos[p.gold]][pos[p.predicted]] += 1
    total = len(predictions)
    correct = sum(conf[i][i] for i in range(len(order)))
    per_class = {}
    for i, lab in enumerate(order):
        tp = conf[i][i]
        support = sum(conf[i])
        predicted = sum(row[i] for row in conf)
        precision = _safe_div(tp, predicted)
        recall = _safe_div(tp, support)
        # 2PR/(P+R) as one division, so the float is correctly rounded
        f1 = _safe_div(2 * tp, support + predicted)
        per_class[lab] = ClassMetrics(precision, recall, f1, support)
    return Metrics(tuple(order), correct / total, per_class, conf)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation; std is 0 for a single value."""
    values = list(values)
    if not values:
        return math.nan, math.nan
    if len(values) == 1:
        return values[0], 0.0
    return statistics.fmean(values), statistics.stdev(values)


# --- fold construction ---------------------------------------------------------


def loo_folds(n: int) -> list[tuple[list[int], list[int]]]:
    return [([j for j in range(n) if j != i], [i]) for i in range(n)]


def _complement(n: int, assignment: Sequence[int], k: int) -> list[tuple[list[int], list[int]]]:
    folds = []
    for f in range(k):
        test = [i for i in range(n) if assignment[i] == f]
        train_idx = [i for i in range(n) if assignment[i] != f]
        folds.append((train_idx, test))
    return folds


def _round_matrix(target: list[list[Fraction]], row_sums: list[int], col_sums: list[int]) -> list[list[int]]:
    """Round each entry to its floor or ceiling while hitting the given integer
    row and column sums (always possible when the fractional matrix has them).

    The +1 adjustments form a bipartite b-matching, found by augmenting paths.
    """
    base = [[math.floor(v) for v in row] for row in target]
    need_r = [r - sum(row) for r, row in zip(row_sums, base)]
    need_c = [c - sum(base[f][j] for f in range(len(base))) for j, c in enumerate(col_sums)]
    frac = [[v != math.floor(v) for v in row] for row in target]
    extra = [[0] * len(col_sums) for _ in target]

    def augment(f, seen):
        for j in range(len(col_sums)):
            if not frac[f][j] or extra[f][j] or j in seen:
                continue
            seen.add(j)
            if need_c[j] > 0:
                need_c[j] -= 1
                extra[f][j] = 1
                return True
            # steal column j from another row that can move to a different column
            for g in range(len(target)):
                if g != f and extra[g][j] and augment(g, seen):
                    extra[g][j] = 0
                    extra[f][j] = 1
                    return True
        return False

    for f in range(len(target)):
        for _ in range(need_r[f]):
            if not augment(f, set()):
                raise ProtocolError("stratified fold rounding failed")
    return [[b + e for b, e in zip(brow, erow)] for brow, erow in zip(base, extra)]


def stratified_assignment(labels: Sequence[str], k: int, seed: int) -> tuple[list[int], list[str]]:
    """Fold id per instance, stratified by label.

    Fold sizes differ by at most one. Each fold's count of a label is the
    floor or ceiling of (fold size x label fraction), so per-fold label
    proportions stay within 1/fold_size of the global ones. Which instances
    land in which fold is decided by a seeded shuffle within each label.
    """
    rng = np.random.default_rng(seed)
    n = len(labels)
    by_label: dict[str, list[int]] = defaultdict(list)
    for i, lab in enumerate(labels):
        by_label[lab].append(i)
    names = sorted(by_label)
    warnings = [
        f"label {lab!r} has {len(by_label[lab])} instances, fewer than k={k}; stratification is best-effort"
        for lab in names if len(by_label[lab]) < k
    ]
    sizes = [n // k + (1 if f < n % k else 0) for f in range(k)]
    counts = [len(by_label[lab]) for lab in names]
    target = [[Fraction(m * c, n) for c in counts] for m in sizes]
    table = _round_matrix(target, sizes, counts)
    assignment = [0] * n
    for j, lab in enumerate(names):
        idx = np.array(by_label[lab])
        pool = idx[rng.permutation(len(idx))].tolist()
        folds = [f for f in range(k) for _ in range(table[f][j])]
        # interleave fold slots so small classes do not always fill fold 0 first
        folds = [folds[i] for i in rng.permutation(len(folds))]
        for i, f in zip(pool, folds):
            assignment[i] = f
    return assignment, warnings


def plain_assignment(n: int, k: int, seed: int) -> list[int]:
    rng = np.random.default_rng(seed)
    assignment = [0] * n
    for pos, i in enumerate(rng.permutation(n).tolist()):
        assignment[i] = pos % k
    return assignment


def document_assignment(doc_ids: Sequence[str], k: int, seed: int) -> list[int]:
    """Whole documents to folds: seeded shuffle, then largest-first into the smallest fold."""
    sizes = Counter(doc_ids)
    docs = sorted(sizes)
    if len(docs) < k:
        raise ProtocolError(f"document CV needs at least k={k} documents, found {len(docs)}")
    rng = np.random.default_rng(seed)
    docs = [docs[i] for i in rng.permutation(len(docs))]
    docs.sort(key=lambda d: -sizes[d])  # stable: shuffle order breaks size ties
    load = [0] * k
    fold_of = {}
    for doc in docs:
        f = min(range(k), key=lambda j: (load[j], j))
        fold_of[doc] = f
        load[f] += sizes[doc]
    return [fold_of[d] for d in doc_ids]


# --- fold execution ------------------------------------------------------------


def _run_fold(X, y, instances_meta, train_idx, test_idx, config, labels):
    y_train = [y[i] for i in train_idx]
    degenerate = len(set(y_train)) < 2
    if degenerate:
        base = majority_baseline(y_train, labels)
        score_rows = base.scores(len(test_idx))
        predicted = base.predict(test_idx)
    else:
        model = train(X[train_idx], y_train, config, labels=labels)
        score_rows = model.scores(X[test_idx])
        predicted = [labels[j] for j in np.argmax(score_rows, axis=1)]
    out = []
    for row, i, pred in zip(score_rows, test_idx, predicted):
        ref, contributors, lemma = instances_meta[i]
        out.append(
            Prediction(
                instance_ref=ref,
                gold=y[i],
                predicted=pred,
                scores={lab: float(v) for lab, v in zip(labels, row)},
                contributors=contributors,
                verb_lemma=lemma,
                degenerate=degenerate,
            )
        )
    return out, degenerate


def evaluate_folds(
    dataset: Dataset,
    composed: Sequence[ComposedInstance],
    folds: Sequence[tuple[Sequence[int], Sequence[int]]],
    config: TrainConfig = TrainConfig(),
    jobs: int = 1,
) -> tuple[list[Prediction], list[list[Prediction]], int]:
    """Train/predict every fold; returns pooled predictions in instance order,
    per-fold prediction lists and the number of degenerate folds."""
    labels = tuple(dataset.label_set)
    y = dataset.labels
    dim = composed[0].vector.shape[0] if composed else 0
    X = feature_matrix(composed, dim)
    meta = [
        (c.instance_ref, c.contributors, inst.verb_lemma)
        for c, inst in zip(composed, dataset.instances)
    ]
    folds = [(list(tr), list(te)) for tr, te in folds if len(te)]

    def work(fold):
        return _run_fold(X, y, meta, fold[0], fold[1], config, labels)

    if jobs > 1 and len(folds) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, folds))
    else:
        results = [work(f) for f in folds]

    slots: list[Optional[Prediction]] = [None] * len(dataset)
    per_fold = []
    degenerate = 0
    for (_, test), (preds, deg) in zip(folds, results):
        degenerate += deg
        per_fold.append(preds)
        for i, p in zip(test, preds):
            if slots[i] is not None:
                raise ProtocolError(f"instance {p.instance_ref} predicted by more than one fold")
            slots[i] = p
    pooled = [p for p in slots if p is not None]
    return pooled, per_fold, degenerate


def _fold_record(preds: Sequence[Prediction], labels) -> dict:
    m = compute_metrics(preds, labels)
    rec = {"size": len(preds), "accuracy": m.accuracy}
    for lab, cm in m.per_class.items():
        rec[f"precision:{lab}"] = cm.precision
        rec[f"recall:{lab}"] = cm.recall
        rec[f"f1:{lab}"] = cm.f1
    return rec


def _summarise(fold_scores: Sequence[dict]) -> dict:
    keys = [k for k in fold_scores[0] if k != "size"] if fold_scores else []
    summary = {}
    for key in keys:
        mean, std = mean_std([f[key] for f in fold_scores if key in f])
        summary[key] = {"mean": mean, "std": std}
    return summary


def _composed(dataset, spec, table, composed, average):
    if composed is None:
        composed = compose_batch(dataset, spec, table, average=average)
    if len(composed) != len(dataset):
        raise ProtocolError("composed instances are not aligned with the dataset")
    return composed


def _report(protocol, spec, dataset, pooled, per_fold, degenerate, with_folds, warnings=()):
    labels = dataset.label_set
    fold_scores = [_fold_record(f, labels) for f in per_fold] if with_folds else []
    if degenerate:
        logger.warning("%s: %d degenerate fold(s) fell back to the majority baseline", protocol, degenerate)
    return EvalReport(
        protocol=protocol,
        context=str(spec),
        metrics=compute_metrics(pooled, labels),
        predictions=pooled,
        fold_scores=fold_scores,
        fold_summary=_summarise(fold_scores),
        degenerate_folds=degenerate,
        n_folds=len(per_fold),
        warnings=list(warnings),
    )


def loo_cv(dataset, spec, table, config=TrainConfig(), *, composed=None, jobs=1, average=False) -> EvalReport:
    """Leave-one-out: one fold per instance, accuracy pooled over all predictions."""
    if len(dataset) < 2:
        raise ProtocolError("leave-one-out needs at least two instances")
    composed = _composed(dataset, spec, table, composed, average)
    pooled, per_fold, deg = evaluate_folds(dataset, composed, loo_folds(len(dataset)), config, jobs)
    return _report("loo", spec, dataset, pooled, per_fold, deg, with_folds=False)


def kfold_cv(
    dataset, spec, table, config=TrainConfig(), k=10, seed=0, *,
    stratified=True, composed=None, jobs=1, average=False,
) -> EvalReport:
    if k < 2:
        raise ProtocolError(f"k must be >= 2, got {k}")
    if len(dataset) < k:
        raise ProtocolError(f"k-fold CV needs at least k={k} instances, got {len(dataset)}")
    warnings: list[str] = []
    if stratified:
        assignment, warnings = stratified_assignment(dataset.labels, k, seed)
        for w in warnings:
            logger.warning(w)
    else:
        assignment = plain_assignment(len(dataset), k, seed)
    composed = _composed(dataset, spec, table, composed, average)
    folds = _complement(len(dataset), assignment, k)
    pooled, per_fold, deg = evaluate_folds(dataset, composed, folds, config, jobs)
    return _report(f"kfold:{k}", spec, dataset, pooled, per_fold, deg, with_folds=True, warnings=warnings)


def document_cv(dataset, spec, table, config=TrainConfig(), k=10, seed=0, *, composed=None, jobs=1, average=False) -> EvalReport:
    if k < 2:
        raise ProtocolError(f"k must be >= 2, got {k}")
    doc_ids = [inst.doc_id for inst in dataset.instances]
    if any(not d for d in doc_ids):
        raise ProtocolError("document CV needs a doc_id on every instance")
    assignment = document_assignment(doc_ids, k, seed)
    composed = _composed(dataset, spec, table, composed, average)
    folds = _complement(len(dataset), assignment, k)
    pooled, per_fold, deg = evaluate_folds(dataset, composed, folds, config, jobs)
    return _report(f"doc-cv:{k}", spec, dataset, pooled, per_fold, deg, with_folds=True)


def fixed_split(dataset, spec, table, config=TrainConfig(), *, composed=None, jobs=1, average=False) -> EvalReport:
    splits = [inst.split for inst in dataset.instances]
    if any(s is None for s in splits):
        raise ProtocolError("fixed split needs a split tag on every instance")
    train_idx = [i for i, s in enumerate(splits) if s == "train"]
    test_idx = [i for i, s in enumerate(splits) if s == "test"]
    if not train_idx or not test_idx:
        raise ProtocolError(f"fixed split needs both splits; train={len(train_idx)} test={len(test_idx)}")
    composed = _composed(dataset, spec, table, composed, average)
    pooled, per_fold, deg = evaluate_folds(dataset, composed, [(train_idx, test_idx)], config, jobs)
    return _report("fixed", spec, dataset, pooled, per_fold, deg, with_folds=False)


def verb_holdout(dataset, spec, table, config=TrainConfig(), *, composed=None, jobs=1, average=False) -> EvalReport:
    """Zero-shot check: for each lemma, train on every other lemma and test on it."""
    lemmas = [inst.verb_lemma for inst in dataset.instances]
    distinct = sorted(set(lemmas))
    if len(distinct) < 2:
        raise ProtocolError("verb holdout needs at least two verb lemmas")
    folds = [
        ([i for i, l in enumerate(lemmas) if l != lemma], [i for i, l in enumerate(lemmas) if l == lemma])
        for lemma in distinct
    ]
    composed = _composed(dataset, spec, table, composed, average)
    pooled, per_fold, deg = evaluate_folds(dataset, composed, folds, config, jobs)
    report = _report("verb-holdout", spec, dataset, pooled, per_fold, deg, with_folds=False)
    for lemma, preds in zip(distinct, per_fold):
        m = compute_metrics(preds, dataset.label_set)
        report.groups.append({
            "verb_lemma": lemma,
            "support": len(preds),
            "accuracy": m.accuracy,
            "degenerate": preds[0].degenerate,
            **{f"f1:{lab}": cm.f1 for lab, cm in m.per_class.items()},
        })
    return report


PROTOCOLS = ("loo", "kfold:K", "doc-cv:K", "fixed", "verb-holdout")


def parse_protocol(text: str, default_k: int = 10) -> tuple[str, Optional[int]]:
    name, sep, k = text.strip().partition(":")
    if name in ("kfold", "doc-cv"):
        try:
            return name, int(k) if sep else default_k
        except ValueError:
            raise ProtocolError(f"bad fold count in protocol {text!r}") from None
    if name in ("loo", "fixed", "verb-holdout") and not sep:
        return name, None
    raise ProtocolError(f"unknown protocol {text!r}; expected one of {PROTOCOLS}")


def run_protocol(
    dataset: Dataset,
    spec: ContextSpec,
    table: Optional[EmbeddingTable],
    config: TrainConfig = TrainConfig(),
    protocol: str = "loo",
    seed: int = 0,
    *,
    composed=None,
    jobs: int = 1,
    average: bool = False,
    stratified: bool = True,
    default_k: int = 10,
) -> EvalReport:
    name, k = parse_protocol(protocol, default_k)
    kw = dict(composed=composed, jobs=jobs, average=average)
    if name == "loo":
        return loo_cv(dataset, spec, table, config, **kw)
    if name == "kfold":
        return kfold_cv(dataset, spec, table, config, k, seed, stratified=stratified, **kw)
    if name == "doc-cv":
        return document_cv(dataset, spec, table, config, k, seed, **kw)
    if name == "fixed":
        return fixed_split(dataset, spec, table, config, **kw)
    return verb_holdout(dataset, spec, table, config, **kw)


def protocol_folds(
    dataset: Dataset, protocol: str, seed: int = 0, default_k: int = 10, stratified: bool = True
) -> tuple[list[tuple[list[int], list[int]]], list[str]]:
    """Train/test index pairs for a protocol string, plus any warnings."""
    name, k = parse_protocol(protocol, default_k)
    n = len(dataset)
    if name == "loo":
        if n < 2:
            raise ProtocolError("leave-one-out needs at least two instances")
        return loo_folds(n), []
    if name == "kfold":
        if k < 2 or n < k:
            raise ProtocolError(f"k-fold CV needs 2 <= k <= n (k={k}, n={n})")
        if stratified:
            assignment, warnings = stratified_assignment(dataset.labels, k, seed)
            return _complement(n, assignment, k), warnings
        return _complement(n, plain_assignment(n, k, seed), k), []
    if name == "doc-cv":
        if k < 2:
            raise ProtocolError(f"k must be >= 2, got {k}")
        return _complement(n, document_assignment([i.doc_id for i in dataset.instances], k, seed), k), []
    if name == "fixed":
        splits = [inst.split for inst in dataset.instances]
        if any(s is None for s in splits):
            raise ProtocolError("fixed split needs a split tag on every instance")
        tr = [i for i, s in enumerate(splits) if s == "train"]
        te = [i for i, s in enumerate(splits) if s == "test"]
        if not tr or not te:
            raise ProtocolError(f"fixed split needs both splits; train={len(tr)} test={len(te)}")
        return [(tr, te)], []
    lemmas = [inst.verb_lemma for inst in dataset.instances]
    distinct = sorted(set(lemmas))
    if len(distinct) < 2:
        raise ProtocolError("verb holdout needs at least two verb lemmas")
    return [
        ([i for i, l in enumerate(lemmas) if l != lemma], [i for i, l in enumerate(lemmas) if l == lemma])
        for lemma in distinct
    ], []


def evaluate_majority(
    dataset: Dataset, protocol: str = "fixed", seed: int = 0, default_k: int = 10, stratified: bool = True
) -> EvalReport:
    """Run the majority-class baseline through a protocol (labels only, no vectors)."""
    folds, warnings = protocol_folds(dataset, protocol, seed, default_k, stratified)
    labels = tuple(dataset.label_set)
    y = dataset.labels
    slots: list[Optional[Prediction]] = [None] * len(dataset)
    per_fold = []
    for train_idx, test_idx in folds:
        if not test_idx:
            continue
        base = majority_baseline([y[i] for i in train_idx], labels)
        preds = []
        for i in test_idx:
            inst = dataset.instances[i]
            p = Prediction(
                inst.instance_id, y[i], base.label,
                {lab: float(lab == base.label) for lab in labels},
                verb_lemma=inst.verb_lemma,
            )
            slots[i] = p
            preds.append(p)
        per_fold.append(preds)
    pooled = [p for p in slots if p is not None]
    name, _ = parse_protocol(protocol, default_k)
    return _report(
        f"majority/{protocol}", "none", dataset, pooled, per_fold, 0,
        with_folds=name in ("kfold", "doc-cv"), warnings=warnings,
    )


# --- prediction log I/O ----------------------------------------------------------

LOG_FIXED_COLUMNS = ("instance_id", "verb_lemma", "gold", "predicted", "correct", "degenerate")


def write_prediction_log(
    predictions: Sequence[Prediction],
    labels: Sequence[str],
    path: str | os.PathLike,
    header_comment: Optional[str] = None,
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        cols = list(LOG_FIXED_COLUMNS) + [f"score:{lab}" for lab in labels] + ["contributors"]
        fh.write("\t".join(cols) + "\n")
        for p in predictions:
            row = [
                p.instance_ref, p.verb_lemma, p.gold, p.predicted,
                str(int(p.correct)), str(int(p.degenerate)),
                *(repr(p.scores.get(lab, 0.0)) for lab in labels),
                ";".join(c.encode() for c in p.contributors),
            ]
            fh.write("\t".join(row) + "\n")


def read_prediction_log(path: str | os.PathLike) -> tuple[list[Prediction], list[str]]:
    """Inverse of ``write_prediction_log``; returns predictions and the label order."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(lines, delimiter="\t", quoting=csv.QUOTE_NONE)
    fields = reader.fieldnames or []
    missing = [c for c in ("instance_id", "gold", "predicted", "contributors") if c not in fields]
    if missing:
        raise ProtocolError(f"{path}: prediction log is missing columns {missing}")
    labels = [f.split(":", 1)[1] for f in fields if f.startswith("score:")]
    preds = []
    for row in reader:
        contrib = row["contributors"] or ""
        preds.append(
            Prediction(
                instance_ref=row["instance_id"],
                gold=row["gold"],
                predicted=row["predicted"],
                scores={lab: float(row[f"score:{lab}"]) for lab in labels},
                contributors=tuple(Contributor.decode(c) for c in contrib.split(";") if c),
                verb_lemma=row.get("verb_lemma", "") or "",
                degenerate=row.get("degenerate", "0") == "1",
            )
        )
    return preds, labels


def report_json(report: EvalReport, extra: Optional[dict] = None) -> str:
    data = report.to_dict()
    if extra:
        data.update(extra)
    return json.dumps(data, indent=2, sort_keys=False) + "\n"
