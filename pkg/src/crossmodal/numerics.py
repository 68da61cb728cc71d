"""Deterministic dense vector kernels, statistics, PCA and seeded randomness.

Everything here runs in float64 and is pure given its inputs; ``SeededRng``
instances are the only stateful objects and are single-owner by convention.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConstantSeries,
    DegenerateDistribution,
    DimMismatch,
    NumericError,
    ZeroVector,
)

RNG_ALGORITHM = "pcg64"


class SeededRng:
    """Reproducible random stream: same seed and algorithm, same draws.

    Backed by numpy's PCG64. ``derive`` splits off an independent child
    stream from a string label, so parallel branches of a run can draw
    without coordinating.
    """

    def __init__(self, seed: int, algorithm: str = RNG_ALGORITHM):
        if algorithm != RNG_ALGORITHM:
            raise ValueError(f"unknown rng algorithm: {algorithm!r}")
        self.seed = int(seed)
        self.algorithm = algorithm
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, label: str) -> "SeededRng":
        """Child stream keyed by (seed, label); stable across platforms."""
        digest = hashlib.blake2b(
            f"{self.seed}:{label}".encode("utf-8"), digest_size=8
        ).digest()
        return SeededRng(int.from_bytes(digest, "little"))

    def normal(self, size=None):
        return self._gen.normal(size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, a, size=None, replace=True):
        return self._gen.choice(a, size=size, replace=replace)

    def permutation(self, n: int):
        return self._gen.permutation(n)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, algorithm={self.algorithm!r})"


def as_vector(x) -> np.ndarray:
    """Coerce to a finite float64 1-D array."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimMismatch(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NumericError("vector contains NaN or Inf")
    return v


def cosine(a, b) -> float:
    """Cosine similarity of two non-zero vectors of equal length."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f"cosine: shapes {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine of a zero-norm vector is undefined")
    return float(np.dot(a, b) / (na * nb))


def cosine_matrix(queries: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities, shape (n_queries, n_candidates)."""
    q = np.asarray(queries, dtype=np.float64)
    c = np.asarray(candidates, dtype=np.float64)
    if q.shape[1] != c.shape[1]:
        raise DimMismatch(f"cosine_matrix: dims {q.shape[1]} vs {c.shape[1]}")
    qn = np.linalg.norm(q, axis=1)
    cn = np.linalg.norm(c, axis=1)
    if np.any(qn == 0.0) or np.any(cn == 0.0):
        raise ZeroVector("cosine of a zero-norm vector is undefined")
    return (q @ c.T) / np.outer(qn, cn)


def renormalize_probs(p, indices) -> np.ndarray:
    """Restrict a non-negative weight vector to ``indices`` and rescale to 1."""
    p = np.asarray(p, dtype=np.float64)
    idx = np.asarray(sorted(indices), dtype=np.intp)
    if np.any(p < 0):
        raise DegenerateDistribution("negative probability mass")
    restricted = p[idx]
    total = restricted.sum()
    if total <= 0.0:
        raise DegenerateDistribution("restriction carries zero mass")
    return restricted / total


def pearson(x, y) -> float:
    """Sample Pearson correlation of two equal-length series."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimMismatch(f"pearson: shapes {x.shape} vs {y.shape}")
    if x.size < 2:
        raise DimMismatch("pearson needs at least 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.sum(xc * xc))
    sy = np.sqrt(np.sum(yc * yc))
    if sx == 0.0 or sy == 0.0:
        raise ConstantSeries("correlation of a constant series is undefined")
    return float(np.sum(xc * yc) / (sx * sy))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Rank transform with ties receiving the average of their positions."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Spearman rank correlation: Pearson over average-rank transforms."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimMismatch(f"spearman: shapes {x.shape} vs {y.shape}")
    return pearson(_average_ranks(x), _average_ranks(y))


@dataclass
class PcaBasis:
    """Fitted principal axes: rows of ``components`` are orthonormal."""

    mean: np.ndarray
    components: np.ndarray  # (target_dim, d)
    explained_variance: np.ndarray  # descending

    def transform(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        return (rows - self.mean) @ self.components.T


def pca_project(rows, target_dim: int, center: bool = True):
    """Project rows onto their top principal axes.

    Returns ``(coords, basis)``. With ``center=False`` no mean is removed,
    which keeps the projection a plain linear map (cosines of full-rank
    data are then preserved exactly).
    """
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2:
        raise DimMismatch(f"pca_project expects a matrix, got shape {x.shape}")
    n, d = x.shape
    if target_dim > min(n, d) or target_dim < 1:
        raise DimMismatch(
            f"target_dim {target_dim} out of range for {n} rows of dim {d}"
        )
    mean = x.mean(axis=0) if center else np.zeros(d)
    xc = x - mean
    # Eigendecomposition of the scatter matrix; ascending eigenvalues.
    cov = (xc.T @ xc) / max(n - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:target_dim]
    components = eigvecs[:, order].T
    explained = np.clip(eigvals[order], 0.0, None)
    basis = PcaBasis(mean=mean, components=components, explained_variance=explained)
    return xc @ components.T, basis
