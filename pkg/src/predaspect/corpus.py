"""CoNLL-U ingestion, instance index joining and dataset statistics."""

from __future__ import annotations

import csv
import os
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

from predaspect.errors import CorpusFormatError, DatasetError

INDEX_COLUMNS = ("doc_id", "sent_id", "target_index", "label", "verb_lemma", "split")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class Token:
    index: int
    form: str
    pos: str
    head: Optional[int]
    deprel: str
    columns: tuple = field(default=(), repr=False, compare=False)


@dataclass(frozen=True)
class Sentence:
    sent_id: Optional[str]
    doc_id: Optional[str]
    tokens: tuple

    def __len__(self) -> int:
        return len(self.tokens)

    def children(self, index: int) -> list[int]:
        return [t.index for t in self.tokens if t.head == index]

    def root(self) -> int:
        return next(t.index for t in self.tokens if t.head is None)


@dataclass(frozen=True)
class Instance:
    doc_id: str
    sent_id: str
    tokens: tuple
    target: int
    label: str
    verb_lemma: str
    split: Optional[str] = None

    @property
    def instance_id(self) -> str:
        return f"{self.doc_id}/{self.sent_id}/{self.target}"

    @property
    def target_token(self) -> Token:
        return self.tokens[self.target]


@dataclass(frozen=True)
class Dataset:
    name: str
    label_set: tuple
    instances: tuple

    def __post_init__(self):
        labels = set(self.label_set)
        seen = set()
        for inst in self.instances:
            if inst.label not in labels:
                raise DatasetError(f"{self.name}: label {inst.label!r} not in label set {list(self.label_set)}")
            key = (inst.doc_id, inst.sent_id, inst.target)
            if key in seen:
                raise DatasetError(f"{self.name}: duplicate instance {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    @property
    def labels(self) -> list[str]:
        return [inst.label for inst in self.instances]

    def subset(self, indices: Iterable[int], name: Optional[str] = None) -> "Dataset":
        return Dataset(name or self.name, self.label_set, tuple(self.instances[i] for i in indices))


# --- CoNLL-U -----------------------------------------------------------------


def _check_tree(tokens: Sequence[Token], where: str) -> None:
    roots = [t.index for t in tokens if t.head is None]
    if len(roots) != 1:
        raise CorpusFormatError(f"{where}: expected exactly one root, found {len(roots)}")
    n = len(tokens)
    for t in tokens:
        if t.head is not None and not (0 <= t.head < n):
            raise CorpusFormatError(f"{where}: token {t.index + 1} has head outside the sentence")
        if t.head == t.index:
            raise CorpusFormatError(f"{where}: token {t.index + 1} is its own head")
    for t in tokens:
        seen = set()
        cur = t.index
        while tokens[cur].head is not None:
            if cur in seen:
                raise CorpusFormatError(f"{where}: cycle in head pointers through token {cur + 1}")
            seen.add(cur)
            cur = tokens[cur].head


def parse_conllu_lines(lines: Iterable[str], source: str = "<conllu>", check_trees: bool = True) -> list[Sentence]:
    sentences: list[Sentence] = []
    tokens: list[Token] = []
    meta: dict[str, str] = {}
    doc_id: Optional[str] = None
    start_line = 0

    def flush():
        nonlocal tokens, meta
        if tokens:
            if check_trees:
                _check_tree(tokens, f"{source}:{start_line}")
            sentences.append(Sentence(meta.get("sent_id"), doc_id, tuple(tokens)))
        tokens, meta = [], {}

    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, value = (s.strip() for s in body.split("=", 1))
                if key in ("newdoc id", "newdoc"):
                    flush()
                    doc_id = value
                else:
                    meta[key] = value
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise CorpusFormatError(f"{source}:{lineno}: expected 10 tab-separated columns, got {len(cols)}")
        tok_id = cols[0]
        if "-" in tok_id or "." in tok_id:
            continue
        if not tokens:
            start_line = lineno
        try:
            idx = int(tok_id)
        except ValueError:
            raise CorpusFormatError(f"{source}:{lineno}: non-integer ID {tok_id!r}") from None
        if idx != len(tokens) + 1:
            raise CorpusFormatError(f"{source}:{lineno}: token ID {idx} out of sequence")
        try:
            head = int(cols[6])
        except ValueError:
            raise CorpusFormatError(f"{source}:{lineno}: non-integer HEAD {cols[6]!r}") from None
        xpos, upos = cols[4], cols[3]
        pos = xpos if xpos not in ("", "_") else upos
        tokens.append(
            Token(
                index=idx - 1,
                form=cols[1],
                pos=pos,
                head=None if head == 0 else head - 1,
                deprel=cols[7],
                columns=tuple(cols),
            )
        )
    flush()
    return sentences


def parse_conllu(path: str | os.PathLike, check_trees: bool = True) -> list[Sentence]:
    """Parse a CoNLL-U file into sentences with 0-based token indices.

    Multiword ranges ("3-4") and empty nodes ("5.1") are skipped. A HEAD of 0
    becomes ``None``. The PoS tag is XPOS when present, otherwise UPOS.
    """
    with open(path, encoding="utf-8") as fh:
        return parse_conllu_lines(fh, source=str(path), check_trees=check_trees)


def serialize_conllu(sentences: Iterable[Sentence]) -> str:
    """Write retained word lines back out (comments limited to ids)."""
    out = []
    current_doc = None
    for sent in sentences:
        if sent.doc_id is not None and sent.doc_id != current_doc:
            out.append(f"# newdoc id = {sent.doc_id}")
            current_doc = sent.doc_id
        if sent.sent_id is not None:
            out.append(f"# sent_id = {sent.sent_id}")
        for tok in sent.tokens:
            out.append("\t".join(tok.columns))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


# --- instance index ----------------------------------------------------------


def read_index(path: str | os.PathLike) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        # leading "#" lines are provenance comments
        lines = (line for line in fh if not line.startswith("#"))
        reader = csv.DictReader(lines, delimiter="\t", quoting=csv.QUOTE_NONE)
        missing = [c for c in INDEX_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise CorpusFormatError(f"{path}: index header is missing columns {missing}")
        return list(reader)


def write_index(instances: Iterable[Instance], path: str | os.PathLike, header_comment: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("\t".join(INDEX_COLUMNS) + "\n")
        for inst in instances:
            row = (inst.doc_id, inst.sent_id, str(inst.target), inst.label, inst.verb_lemma, inst.split or "")
            fh.write("\t".join(row) + "\n")


def join_index(
    sentences: Sequence[Sentence],
    rows: Iterable[Mapping[str, str]],
    name: str,
    label_set: Sequence[str],
    source: str = "<index>",
) -> Dataset:
    by_id: dict[str, Sentence] = {}
    for sent in sentences:
        if sent.sent_id is not None and sent.sent_id not in by_id:
            by_id[sent.sent_id] = sent
    instances = []
    for rowno, row in enumerate(rows, 2):
        sent_id = row["sent_id"]
        sent = by_id.get(sent_id)
        if sent is None:
            raise DatasetError(f"{source}:{rowno}: unknown sent_id {sent_id!r}")
        try:
            target = int(row["target_index"])
        except ValueError:
            raise DatasetError(f"{source}:{rowno}: non-integer target_index {row['target_index']!r}") from None
        if not 0 <= target < len(sent):
            raise DatasetError(
                f"{source}:{rowno}: target_index {target} out of range for {len(sent)}-token sentence {sent_id!r}"
            )
        label = row["label"]
        if label not in label_set:
            raise DatasetError(f"{source}:{rowno}: label {label!r} not in {list(label_set)}")
        split = (row.get("split") or "").strip() or None
        if split is not None and split not in SPLITS:
            raise DatasetError(f"{source}:{rowno}: split must be one of {SPLITS}, got {split!r}")
        instances.append(
            Instance(
                doc_id=row["doc_id"],
                sent_id=sent_id,
                tokens=sent.tokens,
                target=target,
                label=label,
                verb_lemma=row["verb_lemma"],
                split=split,
            )
        )
    return Dataset(name, tuple(label_set), tuple(instances))


def load_dataset(
    conllu_path: str | os.PathLike,
    index_path: str | os.PathLike,
    name: str,
    label_set: Sequence[str],
) -> Dataset:
    sentences = parse_conllu(conllu_path)
    return join_index(sentences, read_index(index_path), name, label_set, source=str(index_path))


def load_index_only(index_path: str | os.PathLike, name: str, label_set: Sequence[str]) -> Dataset:
    """Dataset built from the index file alone.

    Instances carry no tokens, so only label-level operations (distribution,
    baseline, subsampling) are meaningful on the result.
    """
    instances = []
    for rowno, row in enumerate(read_index(index_path), 2):
        if row["label"] not in label_set:
            raise DatasetError(f"{index_path}:{rowno}: label {row['label']!r} not in {list(label_set)}")
        split = (row.get("split") or "").strip() or None
        if split is not None and split not in SPLITS:
            raise DatasetError(f"{index_path}:{rowno}: split must be one of {SPLITS}, got {split!r}")
        instances.append(
            Instance(row["doc_id"], row["sent_id"], (), int(row["target_index"]), row["label"], row["verb_lemma"], split)
        )
    return Dataset(name, tuple(label_set), tuple(instances))


# --- label manipulation ------------------------------------------------------


def merge_labels(dataset: Dataset, mapping: Mapping[str, str]) -> Dataset:
    """Relabel instances; labels absent from ``mapping`` pass through.

    The new label set keeps first-appearance order of the mapped labels.
    """
    unknown = set(mapping) - set(dataset.label_set)
    if unknown:
        raise DatasetError(f"mapping keys not in label set: {sorted(unknown)}")
    new_set: list[str] = []
    for lab in dataset.label_set:
        mapped = mapping.get(lab, lab)
        if mapped not in new_set:
            new_set.append(mapped)
    if not new_set:
        raise DatasetError("label mapping produced an empty label set")
    instances = tuple(replace(inst, label=mapping.get(inst.label, inst.label)) for inst in dataset.instances)
    return Dataset(dataset.name, tuple(new_set), instances)


def filter_labels(dataset: Dataset, keep: Iterable[str]) -> Dataset:
    keep = set(keep)
    if not keep:
        raise DatasetError("keep set must be nonempty")
    unknown = keep - set(dataset.label_set)
    if unknown:
        raise DatasetError(f"labels not in label set: {sorted(unknown)}")
    instances = tuple(inst for inst in dataset.instances if inst.label in keep)
    if not instances:
        raise DatasetError("label filter left no instances")
    label_set = tuple(lab for lab in dataset.label_set if lab in keep)
    return Dataset(dataset.name, label_set, instances)


def parse_mapping(text: str) -> dict[str, str]:
    """``"telic=event,atelic=event"`` -> ``{"telic": "event", "atelic": "event"}``."""
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise DatasetError(f"bad label mapping entry {part!r}; expected old=new")
        old, new = (s.strip() for s in part.split("=", 1))
        out[old] = new
    return out


# --- statistics ----------------------------------------------------------------


def label_distribution(labels: Iterable[str], label_order: Sequence[str] = ()) -> dict[str, int]:
    counts = Counter(labels)
    ordered = {lab: counts.get(lab, 0) for lab in label_order}
    for lab in sorted(counts):
        ordered.setdefault(lab, counts[lab])
    return ordered


def lemma_label_counts(instances: Iterable[Instance]) -> dict[str, Counter]:
    table: dict[str, Counter] = defaultdict(Counter)
    for inst in instances:
        table[inst.verb_lemma][inst.label] += 1
    return dict(table)


def dataset_stats(dataset: Dataset, balance_threshold: float = 0.6) -> dict:
    """Counts, sentence-length summaries and verb/label ambiguity figures.

    Sentence length counts every retained word token, punctuation included.
    """
    n = len(dataset)
    counts = label_distribution(dataset.labels, dataset.label_set)
    lengths: dict[str, list[int]] = defaultdict(list)
    for inst in dataset.instances:
        lengths[inst.label].append(len(inst.tokens))
    length_stats = {}
    for lab in counts:
        vals = lengths.get(lab)
        if vals:
            length_stats[lab] = {
                "mean": statistics.fmean(vals),
                "median": statistics.median(vals),
                "min": min(vals),
                "max": max(vals),
            }
    per_lemma = lemma_label_counts(dataset.instances)
    lemma_freq = Counter({lemma: sum(c.values()) for lemma, c in per_lemma.items()})
    multi = [lemma for lemma, c in per_lemma.items() if len(c) >= 2]
    balanced = [
        lemma for lemma, c in per_lemma.items()
        if len(c) >= 2 and max(c.values()) / sum(c.values()) <= balance_threshold
    ]
    splits = Counter(inst.split or "" for inst in dataset.instances)
    return {
        "name": dataset.name,
        "instances": n,
        "label_counts": counts,
        "label_fractions": {lab: (c / n if n else 0.0) for lab, c in counts.items()},
        "sentence_length": length_stats,
        "split_counts": {k or "none": v for k, v in sorted(splits.items())},
        "verb_lemmas": len(per_lemma),
        "verb_forms": len({inst.target_token.form.lower() for inst in dataset.instances}),
        "lemma_frequency": dict(lemma_freq.most_common()),
        "lemma_label_distribution": {
            lemma: label_distribution(per_lemma[lemma].elements(), dataset.label_set)
            for lemma, _ in lemma_freq.most_common()
        },
        "lemmas_with_multiple_labels": len(multi),
        "balance_threshold": balance_threshold,
        "lemmas_balanced": len(balanced),
    }


# Figures reported for the public datasets, used to sanity-check converted corpora.
PUBLISHED_STATS = {
    "diaspora": {
        "instances": 927,
        "label_counts": {"state": 400, "telic": 279, "atelic": 248},
        "sentence_length": {
            "state": {"mean": 16.34, "median": 13, "min": 4, "max": 94},
            "telic": {"mean": 14.65, "median": 11, "min": 3, "max": 80},
            "atelic": {"mean": 15.38, "median": 12, "min": 2, "max": 74},
        },
        "verb_lemmas": 69,
        "verb_forms": 98,
    },
    "captions": {
        "instances": 2687,
        "label_counts": {"telic": 800, "atelic": 1292},
    },
    "asp-ambig": {"instances": 2760, "verb_lemmas": 20},
    "telicity": {"instances": 1863},
    "sitent-ambig": {"split_counts": {"train": 6547, "test": 1402}},
}


def check_published(stats: Mapping, name: str, length_tol: float = 0.005) -> list[str]:
    """Compare computed statistics against ``PUBLISHED_STATS[name]``.

    Returns human-readable mismatch descriptions; an empty list means agreement.
    """
    key = name.lower()
    if key not in PUBLISHED_STATS:
        raise DatasetError(f"no published statistics for {name!r}; known: {sorted(PUBLISHED_STATS)}")
    ref = PUBLISHED_STATS[key]
    problems = []
    for field_name, expected in ref.items():
        got = stats.get(field_name)
        if field_name == "sentence_length":
            for lab, summary in expected.items():
                have = (got or {}).get(lab)
                if have is None:
                    problems.append(f"sentence_length[{lab}]: missing")
                    continue
                for k, v in summary.items():
                    if abs(have[k] - v) > length_tol:
                        problems.append(f"sentence_length[{lab}].{k}: expected {v}, got {have[k]:.2f}")
        elif isinstance(expected, dict):
            for lab, v in expected.items():
                have = (got or {}).get(lab)
                if have != v:
                    problems.append(f"{field_name}[{lab}]: expected {v}, got {have}")
        elif got != expected:
            problems.append(f"{field_name}: expected {expected}, got {got}")
    return problems
