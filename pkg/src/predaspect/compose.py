"""Additive composition of a verb vector with its context vectors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from predaspect.context import ContextSpec, extract_context
from predaspect.corpus import Dataset, Instance
from predaspect.embeddings import EmbeddingTable
from predaspect.errors import AspectError


@dataclass(frozen=True)
class Contributor:
    index: int
    form: str
    pos: str
    in_vocabulary: bool

    def encode(self) -> str:
        return f"{self.index}:{_escape(self.form)}:{_escape(self.pos)}:{int(self.in_vocabulary)}"

    @classmethod
    def decode(cls, text: str) -> "Contributor":
        index, form, pos, flag = text.split(":")
        return cls(int(index), _unescape(form), _unescape(pos), flag == "1")


_ESCAPES = [("%", "%25"), (":", "%3A"), (";", "%3B"), ("\t", "%09"), ("\n", "%0A")]


def _escape(text: str) -> str:
    for raw, esc in _ESCAPES:
        text = text.replace(raw, esc)
    return text


def _unescape(text: str) -> str:
    for raw, esc in reversed(_ESCAPES):
        text = text.replace(esc, raw)
    return text


@dataclass(frozen=True)
class ComposedInstance:
    vector: np.ndarray
    instance_ref: str
    contributors: tuple
    target_in_vocabulary: bool


def compose_indices(
    instance: Instance,
    indices: Sequence[int],
    table: EmbeddingTable,
    average: bool = False,
) -> ComposedInstance:
    d = table.dimension
    vec = np.zeros(d, dtype=np.float64)
    target = table.lookup(instance.target_token.form)
    if target is not None:
        vec += target
    used = 1 if target is not None else 0
    contributors = []
    for i in sorted(indices):
        tok = instance.tokens[i]
        c = table.lookup(tok.form)
        if c is not None:
            vec += c
            used += 1
        contributors.append(Contributor(i, tok.form, tok.pos, c is not None))
    if average and used:
        vec /= used
    if vec.shape != (d,):
        raise AspectError(f"composed vector has shape {vec.shape}, expected ({d},)")
    return ComposedInstance(vec, instance.instance_id, tuple(contributors), target is not None)


def compose(instance: Instance, spec: ContextSpec, table: EmbeddingTable, average: bool = False) -> ComposedInstance:
    """Verb vector plus the sum of its in-vocabulary context vectors.

    Out-of-vocabulary words (target included) contribute zero but are still
    listed as contributors. Context vectors are added in ascending token
    order with float64 accumulation, so results are bit-reproducible.
    ``average=True`` divides by the number of in-vocabulary words instead.
    """
    return compose_indices(instance, extract_context(instance, spec), table, average)


def compose_batch(
    dataset: Dataset | Sequence[Instance],
    spec: ContextSpec,
    table: EmbeddingTable,
    average: bool = False,
) -> list[ComposedInstance]:
    instances = dataset.instances if isinstance(dataset, Dataset) else dataset
    return [compose(inst, spec, table, average) for inst in instances]


def feature_matrix(composed: Sequence[ComposedInstance], dimension: int) -> np.ndarray:
    if not composed:
        return np.zeros((0, dimension))
    return np.vstack([c.vector for c in composed])


def write_composed_tsv(composed: Sequence[ComposedInstance], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in composed:
            fh.write(c.instance_ref + "\t" + "\t".join(repr(float(v)) for v in c.vector) + "\n")
