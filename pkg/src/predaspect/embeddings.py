"""Loading pre-trained word vectors (word2vec binary, GloVe text).

Keys are lowercased once at load time and the first occurrence of a key wins.
Vectors stay float32 on disk and in memory; callers that accumulate promote
to float64 themselves.
"""

from __future__ import annotations

import logging
import os
from types import MappingProxyType
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from predaspect.errors import EmbeddingFormatError

logger = logging.getLogger(__name__)

WORD2VEC_BINARY = "word2vec-binary"
GLOVE_TEXT = "glove-text"
FORMATS = (WORD2VEC_BINARY, GLOVE_TEXT)

_F32 = np.dtype("<f4")


@dataclass(frozen=True)
class EmbeddingTable:
    """Immutable lowercase-token -> vector map of fixed dimension."""

    dimension: int
    vocab: dict = field(repr=False)
    vectors: np.ndarray = field(repr=False)
    source_format: str = WORD2VEC_BINARY

    def __post_init__(self):
        if self.dimension <= 0:
            raise EmbeddingFormatError(f"dimension must be positive, got {self.dimension}")
        if self.vectors.shape != (len(self.vocab), self.dimension):
            raise EmbeddingFormatError(
                f"vector matrix shape {self.vectors.shape} does not match "
                f"{len(self.vocab)} x {self.dimension}"
            )
        if self.vectors.size and not np.isfinite(self.vectors).all():
            raise EmbeddingFormatError("embedding table contains non-finite values")
        self.vectors.flags.writeable = False
        if not isinstance(self.vocab, MappingProxyType):
            object.__setattr__(self, "vocab", MappingProxyType(dict(self.vocab)))

    def __len__(self) -> int:
        return len(self.vocab)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.vocab

    def words(self) -> list[str]:
        """Keys in storage order."""
        return list(self.vocab)

    def lookup(self, token: str) -> Optional[np.ndarray]:
        row = self.vocab.get(token.lower())
        if row is None:
            return None
        return self.vectors[row]


def lookup(table: EmbeddingTable, token: str) -> Optional[np.ndarray]:
    """Vector stored under ``token.lower()``, or ``None`` when out of vocabulary.

    No stemming is applied: "look" and "looked" resolve to different rows.
    """
    return table.lookup(token)


def from_pairs(pairs: Iterable[tuple[str, Iterable[float]]], source_format: str = WORD2VEC_BINARY) -> EmbeddingTable:
    """Build a table from (token, vector) pairs with the same dedup rule as the loaders."""
    tokens, rows = [], []
    for token, vec in pairs:
        tokens.append(token)
        rows.append(np.asarray(vec, dtype=_F32))
    if not rows:
        raise EmbeddingFormatError("cannot build an empty embedding table")
    dim = rows[0].shape[0]
    if any(r.shape != (dim,) for r in rows):
        raise EmbeddingFormatError("inconsistent vector dimensions")
    return _build(tokens, np.vstack(rows), dim, source_format)


def _build(tokens: list[str], matrix: np.ndarray, dim: int, source_format: str) -> EmbeddingTable:
    vocab: dict[str, int] = {}
    keep: list[int] = []
    for i, tok in enumerate(tokens):
        key = tok.lower()
        if key in vocab:
            continue
        vocab[key] = len(keep)
        keep.append(i)
    dropped = len(tokens) - len(keep)
    if dropped:
        logger.info("dropped %d duplicate keys after lowercasing", dropped)
    if len(keep) != len(tokens):
        matrix = matrix[keep]
    matrix = np.ascontiguousarray(matrix, dtype=_F32)
    return EmbeddingTable(dimension=dim, vocab=vocab, vectors=matrix, source_format=source_format)


def load_word2vec_binary(path: str | os.PathLike, unicode_errors: str = "strict") -> EmbeddingTable:
    """Read the binary format written by the original word2vec tool.

    Layout: an ASCII header ``"<vocab_size> <dim>\\n"``, then per entry the token
    bytes, one space, ``dim`` little-endian float32 values and an optional
    newline. ``unicode_errors`` is passed to ``bytes.decode``; the default
    rejects tokens that are not valid UTF-8.
    """
    with open(path, "rb") as fh:
        data = fh.read()

    nl = data.find(b"\n")
    if nl < 0:
        raise EmbeddingFormatError(f"{path}: missing header line")
    try:
        size_s, dim_s = data[:nl].decode("ascii").split()
        vocab_size, dim = int(size_s), int(dim_s)
    except (UnicodeDecodeError, ValueError):
        raise EmbeddingFormatError(f"{path}: malformed header {data[:nl][:80]!r}") from None
    if dim <= 0:
        raise EmbeddingFormatError(f"{path}: dimension must be positive, got {dim}")
    if vocab_size < 0:
        raise EmbeddingFormatError(f"{path}: negative vocabulary size {vocab_size}")

    width = dim * _F32.itemsize
    pos = nl + 1
    end = len(data)
    tokens: list[str] = []
    matrix = np.empty((vocab_size, dim), dtype=_F32)
    for i in range(vocab_size):
        # some writers emit the separating newline before the token instead of after the vector
        while pos < end and data[pos] == 0x0A:
            pos += 1
        sp = data.find(b" ", pos)
        if sp < 0:
            raise EmbeddingFormatError(f"{path}: truncated entry {i} (expected {vocab_size})")
        raw = data[pos:sp]
        try:
            token = raw.decode("utf-8", errors=unicode_errors)
        except UnicodeDecodeError:
            raise EmbeddingFormatError(f"{path}: entry {i} token is not valid UTF-8: {raw[:40]!r}") from None
        start = sp + 1
        if start + width > end:
            raise EmbeddingFormatError(f"{path}: truncated entry {i} ({token!r})")
        matrix[i] = np.frombuffer(data, dtype=_F32, count=dim, offset=start)
        tokens.append(token)
        pos = start + width
        if pos < end and data[pos] == 0x0A:
            pos += 1

    if not np.isfinite(matrix).all():
        raise EmbeddingFormatError(f"{path}: non-finite vector components")
    return _build(tokens, matrix, dim, WORD2VEC_BINARY)


def write_word2vec_binary(table: EmbeddingTable, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(f"{len(table)} {table.dimension}\n".encode("ascii"))
        for word, row in table.vocab.items():
            fh.write(word.encode("utf-8") + b" ")
            fh.write(table.vectors[row].astype(_F32, copy=False).tobytes())
            fh.write(b"\n")


def load_glove_text(path: str | os.PathLike, expected_dim: Optional[int] = None) -> EmbeddingTable:
    """Read whitespace-separated ``token f1 ... fd`` lines."""
    tokens: list[str] = []
    rows: list[np.ndarray] = []
    dim = expected_dim
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim or dim == 0:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: inconsistent dimension {len(values)} (expected {dim})"
                )
            try:
                rows.append(np.array([float(v) for v in values], dtype=_F32))
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: unparsable float") from None
            tokens.append(token)
    if not rows:
        raise EmbeddingFormatError(f"{path}: empty embedding file")
    matrix = np.vstack(rows)
    if not np.isfinite(matrix).all():
        raise EmbeddingFormatError(f"{path}: non-finite vector components")
    return _build(tokens, matrix, dim, GLOVE_TEXT)


def load_embeddings(path: str | os.PathLike, fmt: str = WORD2VEC_BINARY) -> EmbeddingTable:
    if not os.path.exists(path):
        raise EmbeddingFormatError(f"embedding file not found: {path}")
    if fmt == WORD2VEC_BINARY:
        return load_word2vec_binary(path)
    if fmt == GLOVE_TEXT:
        return load_glove_text(path)
    raise EmbeddingFormatError(f"unknown embedding format {fmt!r}; expected one of {FORMATS}")
