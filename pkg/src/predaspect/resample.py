"""Ambiguity-focused subsampling of two-class datasets.

Lemmas seen with a single label are dropped; for the rest, the majority label
is randomly cut down until the per-lemma split is no worse than the allowed
ratio (60:40 by default).
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from predaspect.corpus import Dataset
from predaspect.errors import DatasetError


@dataclass
class SubsampleManifest:
    seed: int
    max_majority_fraction: float
    per_lemma: dict = field(default_factory=dict)
    before: int = 0
    after: int = 0

    def to_json(self) -> str:
        data = {
            "seed": self.seed,
            "max_majority_fraction": self.max_majority_fraction,
            "instances_before": self.before,
            "instances_after": self.after,
            "per_lemma": self.per_lemma,
        }
        return json.dumps(data, indent=2) + "\n"


def majority_cap(minority_count: int, max_majority_fraction: float) -> int:
    """Largest majority count M with M / (M + m) <= the allowed fraction: floor(f / (1 - f) * m)."""
    f = Fraction(max_majority_fraction).limit_denominator(10**6)
    return math.floor(f / (1 - f) * minority_count)


def subsample_ambiguous_with_manifest(
    dataset: Dataset, max_majority_fraction: float = 0.6, seed: int = 0
) -> tuple[Dataset, SubsampleManifest]:
    if len(dataset.label_set) != 2:
        raise DatasetError(f"subsampling needs a 2-class dataset, got labels {list(dataset.label_set)}")
    if not 0.5 <= max_majority_fraction < 1:
        raise DatasetError(f"max_majority_fraction must be in [0.5, 1), got {max_majority_fraction}")
    limit = Fraction(max_majority_fraction).limit_denominator(10**6)
    rng = np.random.default_rng(seed)

    groups: dict[tuple, list[int]] = defaultdict(list)
    for i, inst in enumerate(dataset.instances):
        groups[(inst.split or "", inst.verb_lemma)].append(i)

    manifest = SubsampleManifest(seed, max_majority_fraction, before=len(dataset))
    keep: set[int] = set()
    for split, lemma in sorted(groups):
        members = groups[(split, lemma)]
        by_label: dict[str, list[int]] = defaultdict(list)
        for i in members:
            by_label[dataset.instances[i].label].append(i)
        before = {lab: len(v) for lab, v in sorted(by_label.items())}
        if len(by_label) < 2:
            after = {}
        else:
            (maj, maj_idx), (_, min_idx) = sorted(
                by_label.items(), key=lambda kv: (-len(kv[1]), dataset.label_set.index(kv[0]))
            )
            chosen = list(min_idx)
            if Fraction(len(maj_idx), len(members)) > limit:
                cap = majority_cap(len(min_idx), max_majority_fraction)
                picked = rng.choice(len(maj_idx), size=cap, replace=False)
                chosen += [maj_idx[j] for j in sorted(picked.tolist())]
            else:
                chosen += maj_idx
            keep.update(chosen)
            after = dict(Counter(dataset.instances[i].label for i in chosen))
            after = {lab: after[lab] for lab in sorted(after)}
        key = f"{split}/{lemma}" if split else lemma
        manifest.per_lemma[key] = {"before": before, "after": after}

    if not keep:
        raise DatasetError("subsampling removed every instance")
    result = dataset.subset(sorted(keep))
    manifest.after = len(result)
    return result, manifest


def subsample_ambiguous(dataset: Dataset, max_majority_fraction: float = 0.6, seed: int = 0) -> Dataset:
    """Keep only lemmas seen with both labels and cap each lemma's majority label.

    Grouping is by verb lemma, separately per split when split tags exist. A
    lemma whose majority fraction exceeds ``max_majority_fraction`` keeps a
    seeded uniform sample of ``floor(f / (1 - f) * minority)`` majority
    instances. Instance order is preserved.
    """
    return subsample_ambiguous_with_manifest(dataset, max_majority_fraction, seed)[0]
