"""Word-embedding store: loading, cosine kNN, snapping, neighborhood stats.

The store is the surrogate space all attacks sample replacement tokens
from.  kNN is an exact scan (no approximate index); ties are broken by
lowest token id so that every downstream search is reproducible.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import BinaryIO, Iterable, NamedTuple

import numpy as np

from .errors import EmbeddingFormatError

# Vectors with a norm below this are treated as directionless junk rows:
# they rank as -inf similarity and are never returned as neighbors.
NORM_EPS = 1e-12


class Neighbor(NamedTuple):
    token_id: int
    similarity: float


NeighborList = list[Neighbor]


@dataclass
class NeighborhoodStats:
    """Per-threshold summary of how many same-or-closer tokens each token has."""

    vocab_size: int
    threshold: float
    mean_neighbors: float
    mean_neighbors_nonzero: float
    histogram: dict[int, int]


class EmbeddingStore:
    """Immutable vocabulary plus a row-per-token vector matrix.

    Token ids are dense 0..V-1 in file order.  Safe for unlimited
    concurrent readers once constructed.
    """

    def __init__(self, tokens: Iterable[str], matrix: np.ndarray) -> None:
        self.tokens: tuple[str, ...] = tuple(tokens)
        matrix = np.ascontiguousarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-d, got shape {matrix.shape}")
        if matrix.shape[0] != len(self.tokens):
            raise ValueError(
                f"{len(self.tokens)} tokens but {matrix.shape[0]} matrix rows"
            )
        if matrix.shape[1] < 1:
            raise ValueError("embedding dimension must be >= 1")
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.matrix = matrix
        self.norms = np.linalg.norm(matrix, axis=1)
        self.matrix.setflags(write=False)
        self.norms.setflags(write=False)
        self._unit_cache: dict[np.dtype, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def id_of(self, token: str) -> int | None:
        """Dense id for an exact-byte-match token, or None when OOV."""
        return self.token_to_id.get(token)

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def vector(self, token_id: int) -> np.ndarray:
        return self.matrix[token_id]

    def unit_matrix(self, dtype: np.dtype = np.float64) -> np.ndarray:
        """Row-normalized matrix; junk (near-zero-norm) rows become zero rows."""
        key = np.dtype(dtype)
        cached = self._unit_cache.get(key)
        if cached is None:
            safe = np.where(self.norms < NORM_EPS, 1.0, self.norms)
            cached = (self.matrix / safe[:, None]).astype(key)
            cached[self.norms < NORM_EPS] = 0.0
            cached.setflags(write=False)
            self._unit_cache[key] = cached
        return cached


def _iter_source_lines(source) -> Iterable[bytes]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            yield from fh
        return
    if isinstance(source, bytes):
        yield from source.splitlines(keepends=True)
        return
    # file-like: may yield str or bytes lines
    for line in source:
        yield line.encode("utf-8") if isinstance(line, str) else line


def load_embeddings(
    source: str | os.PathLike | bytes | BinaryIO,
    expected_dim: int | None = None,
) -> EmbeddingStore:
    """Parse a token-per-line vector file into an EmbeddingStore.

    Each line is a token followed by d decimal reals, separated by one or
    more ASCII spaces; LF and CRLF both accepted.  Any malformed line,
    dimension mismatch, or duplicate token is fatal, reported with its
    1-based line number.
    """
    tokens: list[str] = []
    rows: list[list[float]] = []
    seen: dict[str, int] = {}
    dim = expected_dim
    for lineno, raw in enumerate(_iter_source_lines(source), start=1):
        try:
            line = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise EmbeddingFormatError(f"line {lineno}: not valid UTF-8: {exc}") from exc
        fields = [f for f in line.rstrip("\r\n").split(" ") if f]
        if len(fields) < 2:
            raise EmbeddingFormatError(
                f"line {lineno}: expected a token and at least one value, got {len(fields)} field(s)"
            )
        token = fields[0]
        if token in seen:
            raise EmbeddingFormatError(
                f"line {lineno}: duplicate token {token!r} (first seen on line {seen[token]})"
            )
        try:
            values = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise EmbeddingFormatError(f"line {lineno}: non-numeric field: {exc}") from exc
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise EmbeddingFormatError(
                f"line {lineno}: dimension mismatch: expected {dim} values, got {len(values)}"
            )
        seen[token] = lineno
        tokens.append(token)
        rows.append(values)
    if not tokens:
        raise EmbeddingFormatError("empty embedding source")
    return EmbeddingStore(tokens, np.array(rows, dtype=np.float64))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; -inf when either vector is near zero.

    The -inf sentinel stands for "undefined" and sorts below every real
    similarity, so degenerate vectors lose every ranking.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < NORM_EPS or nb < NORM_EPS:
        return float("-inf")
    return float(min(1.0, max(-1.0, float(a @ b) / (na * nb))))


def _similarities(store: EmbeddingStore, query: np.ndarray) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (store.dim,):
        raise ValueError(f"query has shape {query.shape}, store dimension is {store.dim}")
    qnorm = np.linalg.norm(query)
    sims = np.full(len(store), -np.inf)
    valid = store.norms >= NORM_EPS
    if qnorm >= NORM_EPS and valid.any():
        sims[valid] = (store.matrix[valid] @ query) / (store.norms[valid] * qnorm)
        np.clip(sims, -1.0, 1.0, out=sims, where=valid)
    return sims


def knn(
    store: EmbeddingStore,
    query: np.ndarray,
    k: int,
    exclude: Iterable[int] = (),
) -> NeighborList:
    """Exact k-nearest tokens by cosine, descending, ties to the lowest id.

    Excluded ids and junk rows are never returned; fewer than k entries
    come back only when the vocabulary is exhausted.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    sims = _similarities(store, query)
    keep = np.isfinite(sims)
    exclude = set(exclude)
    if exclude:
        keep[list(exclude)] = False
    ids = np.nonzero(keep)[0]
    if ids.size == 0:
        return []
    # lexsort: ascending id is the secondary key, descending similarity primary
    order = np.lexsort((ids, -sims[ids]))[:k]
    chosen = ids[order]
    return [Neighbor(int(i), float(sims[i])) for i in chosen]


def snap(store: EmbeddingStore, vector: np.ndarray) -> int:
    """Token id of the highest-cosine row; ties go to the lowest id."""
    sims = _similarities(store, vector)
    best = int(np.argmax(sims))  # argmax already prefers the lowest index on ties
    if not np.isfinite(sims[best]):
        raise ValueError("unsnappable vector")
    return best


def neighborhood_stats(
    store: EmbeddingStore,
    threshold: float,
    block: int = 512,
) -> NeighborhoodStats:
    """Count, per token, the distinct other tokens with cosine >= threshold.

    Self-similarity is excluded.  The scan is exact but blocked in float32,
    which is plenty for counting against the thresholds of interest and
    keeps a 65k-token vocabulary under a couple of minutes on one core.
    """
    if not (-1.0 < threshold <= 1.0):
        raise ValueError(f"threshold must be in (-1, 1], got {threshold}")
    unit = store.unit_matrix(np.float32)
    valid = store.norms >= NORM_EPS
    n = len(store)
    counts = np.zeros(n, dtype=np.int64)
    thresh = np.float32(threshold)
    for start in range(0, n, block):
        stop = min(start + block, n)
        sims = unit[start:stop] @ unit.T
        sims[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        if not valid.all():
            sims[:, ~valid] = -np.inf
        counts[start:stop] = (sims >= thresh).sum(axis=1)
    counts[~valid] = 0
    nonzero = counts[counts > 0]
    values, freqs = np.unique(counts, return_counts=True)
    return NeighborhoodStats(
        vocab_size=n,
        threshold=float(threshold),
        mean_neighbors=float(counts.mean()) if n else 0.0,
        mean_neighbors_nonzero=float(nonzero.mean()) if nonzero.size else 0.0,
        histogram={int(v): int(f) for v, f in zip(values, freqs)},
    )
