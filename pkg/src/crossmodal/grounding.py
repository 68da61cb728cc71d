"""Visually grounded word vectors and semantic-relatedness evaluation.

A word vector can be kept as-is, replaced by its projection through a
trained text-side stack, or concatenated with such projections. Because
downstream scoring is cosine-based, the dimensionality reduction applied
to concatenations is an uncentered principal-axes projection: for
full-rank inputs it is an orthonormal linear map and preserves every
cosine exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingTable
from .errors import OovBenchmark, ParseError
from .nets import MappingStack, apply_stack
from .numerics import cosine, pca_project, spearman

RECIPE_VARIANTS = ("x", "sup", "x+sup", "trans", "x+trans", "sup+trans")


@dataclass(frozen=True)
class GroundingRecipe:
    """Which projections to combine and the output dimensionality.

    ``variant`` parts: ``x`` is the raw word vector, ``sup`` its projection
    through the supervised-trained stack, ``trans`` through the
    transductively trained one; ``+`` concatenates. ``output_dim`` defaults
    to the raw dimensionality and only applies to concatenations.
    """

    variant: str = "x"
    output_dim: int | None = None
    center: bool = False

    def __post_init__(self):
        if self.variant not in RECIPE_VARIANTS:
            raise ValueError(f"unknown recipe variant {self.variant!r}")

    def parts(self) -> list[str]:
        return self.variant.split("+")


@dataclass
class RelatednessBenchmark:
    """Human similarity judgements over word pairs."""

    name: str
    pairs: list[tuple[str, str, float]]


def load_benchmark(path, name: str | None = None) -> RelatednessBenchmark:
    """Parse a ``token_a<TAB>token_b<TAB>score`` file; ``#`` lines are
    comments."""
    path = Path(path)
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"{path}: expected 3 tab-separated fields", line=lineno)
        try:
            score = float(parts[2])
        except ValueError as exc:
            raise ParseError(f"{path}: bad score {parts[2]!r}", line=lineno) from exc
        if not np.isfinite(score):
            raise ParseError(f"{path}: non-finite score", line=lineno)
        pairs.append((parts[0], parts[1], score))
    return RelatednessBenchmark(name or path.stem, pairs)


def ground_vectors(
    table: EmbeddingTable,
    sup_stack: MappingStack | None,
    trans_stack: MappingStack | None,
    recipe: GroundingRecipe,
) -> EmbeddingTable:
    """Build one grounded vector per token of ``table`` following the
    recipe; concatenated variants are reduced to ``output_dim`` with a
    projection fitted on the table itself."""
    parts = recipe.parts()
    if "sup" in parts and sup_stack is None:
        raise ValueError("recipe needs a supervised stack")
    if "trans" in parts and trans_stack is None:
        raise ValueError("recipe needs a transductive stack")

    tokens = table.tokens()
    raw = table.matrix(tokens)
    blocks = []
    for part in parts:
        if part == "x":
            blocks.append(raw)
        elif part == "sup":
            blocks.append(apply_stack(sup_stack, raw))
        else:
            blocks.append(apply_stack(trans_stack, raw))
    combined = np.concatenate(blocks, axis=1)

    if len(blocks) > 1:
        output_dim = recipe.output_dim or table.dim
        # n points span at most n directions, so clamping is lossless for
        # the cosine scores computed over this vocabulary
        output_dim = min(output_dim, combined.shape[0], combined.shape[1])
        coords, _ = pca_project(combined, output_dim, center=recipe.center)
        combined = coords

    out = EmbeddingTable(dim=combined.shape[1])
    for tok, vec in zip(tokens, combined):
        out.add(tok, vec)
    return out


def relatedness_eval(vectors: EmbeddingTable, bench: RelatednessBenchmark):
    """Spearman correlation (percent) between human scores and cosine
    similarities over the covered pairs, plus the coverage fraction."""
    human, sims = [], []
    for a, b, score in bench.pairs:
        if a in vectors and b in vectors:
            human.append(score)
            sims.append(cosine(vectors[a], vectors[b]))
    if len(human) < 2:
        raise OovBenchmark(
            f"benchmark {bench.name}: {len(human)} scorable pairs, need >= 2"
        )
    coverage = len(human) / len(bench.pairs)
    return 100.0 * spearman(human, sims), coverage
