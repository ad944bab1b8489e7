"""Post-hoc analyses over prediction logs and extracted contexts."""

from __future__ import annotations

import json
import os
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from predaspect.context import DEFAULT_WINDOW_SIZES, ContextSpec, extract_context
from predaspect.corpus import Dataset
from predaspect.evaluation import Prediction, compute_metrics, run_protocol
from predaspect.model import TrainConfig

PTB_CLOSED = frozenset(
    "DT IN TO CC MD RP EX PDT POS PRP PRP$ WDT WP WP$ WRB UH".split()
)
PTB_OPEN = frozenset(
    "NN NNS NNP NNPS VB VBD VBG VBN VBP VBZ JJ JJR JJS RB RBR RBS CD FW".split()
)
# Universal PoS tags, used when a corpus carries no fine-grained tags
UPOS_CLOSED = frozenset("ADP AUX CCONJ DET PART PRON SCONJ INTJ".split())
UPOS_OPEN = frozenset("NOUN PROPN VERB ADJ ADV NUM".split())


@dataclass(frozen=True)
class TagClassPartition:
    closed: frozenset
    open: frozenset

    def __post_init__(self):
        overlap = set(self.closed) & set(self.open)
        if overlap:
            raise ValueError(f"tags listed as both closed and open: {sorted(overlap)}")

    @classmethod
    def default(cls) -> "TagClassPartition":
        return cls(PTB_CLOSED | UPOS_CLOSED, PTB_OPEN | UPOS_OPEN)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "TagClassPartition":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(frozenset(data["closed"]), frozenset(data["open"]))


@dataclass(frozen=True)
class TagAccuracy:
    correct: int
    incorrect: int

    @property
    def accuracy(self) -> float:
        return self.correct / (self.correct + self.incorrect)


def pos_accuracy(predictions: Iterable[Prediction]) -> dict[str, TagAccuracy]:
    """Per-tag share of context-word occurrences that sat in a correct decision.

    Every contributor occurrence counts (a tag seen twice in one context counts
    twice), whether or not the word had a vector. The target verb is not a
    contributor and so never counts.
    """
    correct: Counter = Counter()
    incorrect: Counter = Counter()
    for p in predictions:
        bucket = correct if p.correct else incorrect
        for c in p.contributors:
            bucket[c.pos] += 1
    tags = sorted(set(correct) | set(incorrect))
    return {t: TagAccuracy(correct[t], incorrect[t]) for t in tags}


def class_group_accuracy(
    table: Mapping[str, TagAccuracy],
    partition: Optional[TagClassPartition] = None,
    weighted: bool = False,
) -> tuple[Optional[float], Optional[float]]:
    """(closed, open) averages of per-tag accuracy; ``None`` for an empty group.

    The default is an unweighted mean over tags; ``weighted=True`` pools the
    occurrence counts instead.
    """
    partition = partition or TagClassPartition.default()

    def group(tags):
        present = [table[t] for t in sorted(tags) if t in table]
        if not present:
            return None
        if weighted:
            right = sum(t.correct for t in present)
            return right / sum(t.correct + t.incorrect for t in present)
        return statistics.fmean(t.accuracy for t in present)

    return group(partition.closed), group(partition.open)


def pos_distribution(dataset: Dataset, spec: ContextSpec) -> dict[str, int]:
    counts: Counter = Counter()
    for inst in dataset.instances:
        for i in extract_context(inst, spec):
            counts[inst.tokens[i].pos] += 1
    return dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))


def per_verb_report(predictions: Sequence[Prediction], labels: Optional[Sequence[str]] = None) -> dict[str, dict]:
    groups: dict[str, list[Prediction]] = defaultdict(list)
    for p in predictions:
        groups[p.verb_lemma].append(p)
    out = {}
    for lemma in sorted(groups):
        m = compute_metrics(groups[lemma], labels)
        out[lemma] = {
            "support": len(groups[lemma]),
            "accuracy": m.accuracy,
            "f1": {lab: cm.f1 for lab, cm in m.per_class.items()},
        }
    return out


def _sweep_spec(size) -> ContextSpec:
    text = str(size).strip()
    if text == "0":
        return ContextSpec("verb")
    if text in ("inf", "∞"):
        return ContextSpec("sentence")
    if text.isdigit():
        return ContextSpec.window(int(text))
    return ContextSpec.parse(text)


def _size_column(spec: ContextSpec) -> str:
    if spec.kind == "window":
        return str(spec.k)
    if spec.kind == "verb":
        return "0"
    if spec.kind == "sentence":
        return "inf"
    return ""


def window_sweep(
    dataset: Dataset,
    sizes: Sequence = DEFAULT_WINDOW_SIZES,
    protocol: str = "loo",
    table=None,
    config: TrainConfig = TrainConfig(),
    seed: int = 0,
    jobs: int = 1,
) -> list[dict]:
    """One metrics row per context size, all under the same protocol and seed.

    ``sizes`` holds window sizes and optionally the pseudo-sizes ``verb`` and
    ``sentence`` (or any other context spec string, e.g. ``dep-full``).
    """
    if not sizes:
        raise ValueError("sweep needs at least one size")
    rows = []
    for size in sizes:
        spec = _sweep_spec(size)
        report = run_protocol(dataset, spec, table, config, protocol, seed, jobs=jobs)
        row = {"context_kind": spec.kind, "size": _size_column(spec), "accuracy": report.accuracy}
        for lab in dataset.label_set:
            row[f"f1:{lab}"] = report.per_class[lab].f1
        rows.append(row)
    return rows


def write_tsv(rows: Sequence[Mapping], path: str | os.PathLike, header_comment: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        if not rows:
            return
        cols = list(rows[0])
        fh.write("\t".join(cols) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(row.get(c, "")) for c in cols) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def pos_accuracy_rows(table: Mapping[str, TagAccuracy], partition: Optional[TagClassPartition] = None) -> list[dict]:
    partition = partition or TagClassPartition.default()
    rows = []
    for tag, t in table.items():
        group = "closed" if tag in partition.closed else "open" if tag in partition.open else "other"
        rows.append({"pos": tag, "group": group, "correct": t.correct, "incorrect": t.incorrect, "accuracy": t.accuracy})
    return rows
