"""Admissibility rules for attack positions and replacement tokens.

Three shipped regimes bundle the tunables: "constrained" (cosine 0.9),
"lax" (cosine 0.7) and "unconstrained" (no similarity filter).  The pool
is always truncated to the top-N nearest neighbors first and filtered by
the similarity threshold second.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable

from .embedding import EmbeddingStore, NeighborList, knn


def load_stopwords(path: str | os.PathLike | None = None) -> frozenset[str]:
    """Read a one-token-per-line stopword file; None loads the packaged list."""
    if path is None:
        text = resources.files("dzoo.data").joinpath("stopwords.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)


DEFAULT_STOPWORDS = load_stopwords()

# regime name -> cosine threshold (None disables the similarity filter)
REGIME_THRESHOLDS: dict[str, float | None] = {
    "constrained": 0.9,
    "lax": 0.7,
    "unconstrained": None,
}


@dataclass(frozen=True)
class ConstraintConfig:
    """One regime's admissibility rules.

    bertscore_threshold and pos_tagging are reserved extension slots for
    constraints that need external neural models; configuring them is an
    explicit error rather than a silent no-op.
    """

    regime_name: str = "unconstrained"
    cosine_threshold: float | None = None
    allow_repeat_modification: bool = False
    stopwords: frozenset[str] = field(default=DEFAULT_STOPWORDS)
    candidate_pool_size: int = 50
    bertscore_threshold: float | None = None
    pos_tagging: bool = False

    def __post_init__(self) -> None:
        if self.candidate_pool_size < 1:
            raise ValueError("candidate_pool_size must be >= 1")
        if self.cosine_threshold is not None and not (0.0 < self.cosine_threshold <= 1.0):
            raise ValueError("cosine_threshold must be in (0, 1]")
        if self.bertscore_threshold is not None:
            raise NotImplementedError(
                "BERTScore constraint is not implemented; it needs an external scoring model"
            )
        if self.pos_tagging:
            raise NotImplementedError(
                "part-of-speech constraint is not implemented; it needs an external tagger"
            )


def regime_config(name: str, **overrides) -> ConstraintConfig:
    """Build the named regime's config, with keyword overrides on top."""
    if name not in REGIME_THRESHOLDS:
        raise ValueError(f"unknown regime {name!r}, expected one of {sorted(REGIME_THRESHOLDS)}")
    params: dict = {"regime_name": name, "cosine_threshold": REGIME_THRESHOLDS[name]}
    params.update(overrides)
    return ConstraintConfig(**params)


TargetIndexList = list[int]


def pretransform_filter(
    sentence,
    config: ConstraintConfig,
    already_modified: Iterable[int] = (),
) -> TargetIndexList:
    """Positions eligible for attack, in sentence order.

    Drops stopword positions always, and already-modified positions unless
    the config allows repeat modification.  An empty result just means the
    attack has nothing to do.
    """
    already = set(already_modified)
    indices = []
    for i, token in enumerate(sentence.tokens):
        if token in config.stopwords:
            continue
        if not config.allow_repeat_modification and i in already:
            continue
        indices.append(i)
    return indices


def candidate_pool(store: EmbeddingStore, token_id: int, config: ConstraintConfig) -> NeighborList:
    """Admissible replacements for one token, descending by cosine.

    Top-N truncation happens before the threshold filter, so tightening the
    threshold only ever shrinks the pool.
    """
    if not (0 <= token_id < len(store)):
        raise ValueError(f"token id {token_id} not in store")
    pool = knn(store, store.vector(token_id), config.candidate_pool_size, exclude={token_id})
    if config.cosine_threshold is not None:
        pool = [n for n in pool if n.similarity >= config.cosine_threshold]
    return pool
