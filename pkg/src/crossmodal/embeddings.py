"""Initial text and image representations.

Class labels and sentences live in a word-vector space; images are embedded
into the same space as a convex combination of the word vectors of their
top-K most probable seen classes (probabilities come from an externally
trained classifier and are ingested, never computed here).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateDistribution,
    DimMismatch,
    EmptySplit,
    OovLabel,
    OovSentence,
)
from .numerics import SeededRng, cosine, pearson, renormalize_probs

# Beyond this many items, pairwise-similarity agreement is sampled.
EXHAUSTIVE_PAIR_LIMIT = 512
DEFAULT_SAMPLED_PAIRS = 100_000


@dataclass
class EmbeddingTable:
    """Token -> vector mapping with a single shared dimensionality."""

    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def __contains__(self, token: str) -> bool:
        return token in self.entries

    def __getitem__(self, token: str) -> np.ndarray:
        return self.entries[token]

    def add(self, token: str, vector) -> None:
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dim,):
            raise DimMismatch(f"vector for {token!r} has shape {v.shape}, want ({self.dim},)")
        self.entries[token] = v

    def tokens(self) -> list[str]:
        return list(self.entries)

    def matrix(self, tokens) -> np.ndarray:
        """Stack the vectors of ``tokens`` (all must be present)."""
        return np.stack([self.entries[t] for t in tokens])


@dataclass(frozen=True)
class ClassLabel:
    """A class with its word tokens and its seen/unseen split."""

    id: int
    tokens: tuple[str, ...]
    split: str  # "seen" | "unseen"
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.tokens:
            raise ValueError(f"class {self.id} has no tokens")
        if self.split not in ("seen", "unseen"):
            raise ValueError(f"class {self.id}: bad split {self.split!r}")


@dataclass
class ClassProbe:
    """Classifier output for one image: a distribution over seen classes."""

    image_id: str
    probs: np.ndarray

    def validate(self, n_seen: int) -> "ClassProbe":
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (n_seen,):
            raise DimMismatch(
                f"probe {self.image_id}: {p.shape[0]} entries, want {n_seen}"
            )
        if np.any(p < 0):
            raise DegenerateDistribution(f"probe {self.image_id}: negative mass")
        if abs(p.sum() - 1.0) > 1e-6:
            raise DegenerateDistribution(
                f"probe {self.image_id}: mass {p.sum():.9f} != 1"
            )
        return self


@dataclass(frozen=True)
class ConseConfig:
    """How many top classes contribute to an image embedding."""

    top_k: int = 10  # unstated upstream; a conventional guess, not asserted

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


def embed_label(table: EmbeddingTable, label: ClassLabel) -> np.ndarray:
    """Mean of the label's in-vocabulary token vectors."""
    vecs = [table[t] for t in label.tokens if t in table]
    if not vecs:
        raise OovLabel(f"class {label.id}: no token of {label.tokens} in vocabulary")
    return np.mean(vecs, axis=0)


def embed_sentence(table: EmbeddingTable, words) -> np.ndarray:
    """Sum of the sentence's in-vocabulary word vectors; OOV words skipped."""
    vecs = [table[w] for w in words if w in table]
    if not vecs:
        raise OovSentence(f"no word of {list(words)} in vocabulary")
    return np.sum(vecs, axis=0)


def label_matrix(table: EmbeddingTable, labels) -> np.ndarray:
    """Stack ``embed_label`` over a label sequence."""
    return np.stack([embed_label(table, lab) for lab in labels])


def conse_embed(
    table: EmbeddingTable,
    labels,
    probe: ClassProbe,
    cfg: ConseConfig,
) -> np.ndarray:
    """Image embedding: probability-weighted mean of top-K seen label vectors.

    ``labels`` must be the seen classes in probe order. Probability ties are
    broken toward the smaller class id so the selected set is deterministic.
    """
    labels = list(labels)
    probe.validate(len(labels))
    if cfg.top_k > len(labels):
        raise DimMismatch(f"top_k {cfg.top_k} exceeds {len(labels)} seen classes")
    order = sorted(range(len(labels)), key=lambda i: (-probe.probs[i], labels[i].id))
    top = sorted(order[: cfg.top_k])
    weights = renormalize_probs(probe.probs, top)
    vecs = np.stack([embed_label(table, labels[i]) for i in top])
    return weights @ vecs


def rho_vis(
    text_vecs,
    vis_vecs,
    n_pairs: int | None = None,
    rng: SeededRng | None = None,
) -> float:
    """Cross-space geometric agreement, in percent.

    Correlates within-space cosine similarities of aligned item pairs; the
    two spaces may have different dimensionalities. Small collections are
    enumerated exhaustively, large ones sampled with ``rng``.
    """
    text = [np.asarray(v, dtype=np.float64) for v in text_vecs]
    vis = [np.asarray(v, dtype=np.float64) for v in vis_vecs]
    if len(text) != len(vis):
        raise DimMismatch(f"unaligned collections: {len(text)} vs {len(vis)}")
    n = len(text)
    if n < 3:
        raise EmptySplit("need at least 3 aligned items")
    total_pairs = n * (n - 1) // 2
    if n_pairs is None:
        n_pairs = total_pairs if n <= EXHAUSTIVE_PAIR_LIMIT else DEFAULT_SAMPLED_PAIRS

    if n_pairs >= total_pairs:
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    else:
        if rng is None:
            raise ValueError("sampled agreement requires an rng")
        pairs = []
        while len(pairs) < n_pairs:
            i, j = rng.integers(0, n, size=2)
            if i != j:
                pairs.append((int(i), int(j)))

    text_sims = np.array([cosine(text[i], text[j]) for i, j in pairs])
    vis_sims = np.array([cosine(vis[i], vis[j]) for i, j in pairs])
    return 100.0 * pearson(text_sims, vis_sims)
