"""Context-word extraction around a target verb."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from predaspect.corpus import Instance
from predaspect.errors import AspectError

VERB_ONLY = "verb"
WINDOW = "window"
DEP_HEAD = "dep-head"
DEP_CHILDREN = "dep-children"
DEP_FULL = "dep-full"
SENTENCE = "sentence"
KINDS = (VERB_ONLY, WINDOW, DEP_HEAD, DEP_CHILDREN, DEP_FULL, SENTENCE)

DEFAULT_WINDOW_SIZES = (1, 2, 3, 5, 10)


@dataclass(frozen=True)
class ContextSpec:
    kind: str
    k: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AspectError(f"unknown context kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == WINDOW:
            if self.k is None or self.k < 1:
                raise AspectError(f"window size must be >= 1, got {self.k}")
        elif self.k is not None:
            raise AspectError(f"context kind {self.kind!r} takes no size")

    def __str__(self) -> str:
        return f"window:{self.k}" if self.kind == WINDOW else self.kind

    @classmethod
    def parse(cls, text: str) -> "ContextSpec":
        """Accepts ``verb``, ``window:K``, ``dep-head``, ``dep-children``, ``dep-full``, ``sentence``."""
        text = text.strip()
        if text.startswith(WINDOW):
            _, sep, size = text.partition(":")
            if not sep:
                raise AspectError("window context needs a size, e.g. window:3")
            try:
                return cls(WINDOW, int(size))
            except ValueError:
                raise AspectError(f"bad window size in {text!r}") from None
        return cls(text)

    @classmethod
    def window(cls, k: int) -> "ContextSpec":
        return cls(WINDOW, k)


def _head(instance: Instance) -> list[int]:
    head = instance.tokens[instance.target].head
    return [] if head is None else [head]


def _children(instance: Instance) -> list[int]:
    return [t.index for t in instance.tokens if t.head == instance.target]


def extract_context(instance: Instance, spec: ContextSpec) -> list[int]:
    """Indices of the context tokens for ``spec``, ascending, never including the target.

    A root verb has no head, so ``dep-head`` yields nothing for it.
    """
    t = instance.target
    n = len(instance.tokens)
    kind = spec.kind
    if kind == VERB_ONLY:
        return []
    if kind == WINDOW:
        return [i for i in range(max(0, t - spec.k), min(n, t + spec.k + 1)) if i != t]
    if kind == DEP_HEAD:
        return _head(instance)
    if kind == DEP_CHILDREN:
        return _children(instance)
    if kind == DEP_FULL:
        return sorted(_head(instance) + _children(instance))
    return [i for i in range(n) if i != t]
