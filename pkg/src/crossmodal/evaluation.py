"""Nearest-neighbor retrieval metrics and evaluation protocols.

Ranking is by cosine similarity with pessimistic tie handling: candidates
tied with the true one count as ranked ahead, so scores never benefit from
float coincidences. The generalized protocol widens the candidate set with
every seen class.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, conse_matrix
from .embeddings import ConseConfig, embed_label, embed_sentence
from .errors import EmptySplit, InconsistentCandidates, UnknownTruth
from .nets import MappingStack, apply_stack
from .numerics import cosine_matrix, pca_project
from .trainer import train_full, train_transductive_only

FH_KS = (1, 2, 5, 10, 20)
REPORT_VERSION = 1


@dataclass
class RankingResult:
    """Rank of the correct candidate for one query."""

    query_id: str
    first_relevant_rank: int
    candidate_count: int


@dataclass
class EvalReport:
    """Retrieval quality of one model under one protocol."""

    mode: str  # zsl | gzsl
    split: str
    fh: dict[int, float]  # top-k hit percentage, k in FH_KS
    mfr: float
    query_count: int
    candidate_count: int

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_VERSION,
            "mode": self.mode,
            "split": self.split,
            "fh": {str(k): v for k, v in self.fh.items()},
            "mfr": self.mfr,
            "query_count": self.query_count,
            "candidate_count": self.candidate_count,
        }


def ranks_from_similarities(sims: np.ndarray, truth_idx: np.ndarray) -> np.ndarray:
    """Pessimistic first-relevant ranks from a similarity matrix.

    The rank counts every candidate whose similarity is strictly greater
    than the true candidate's, plus all ties, plus one; a unique maximum
    therefore ranks 1 and a fully tied field ranks last. Any strictly
    increasing transform of the scores leaves the result unchanged.
    """
    truth_sim = sims[np.arange(sims.shape[0]), truth_idx]
    return (sims >= truth_sim[:, None]).sum(axis=1)


def rank_queries(query_ids, query_vecs, candidate_ids, candidate_vecs, truth):
    """First-relevant rank of each query's true candidate, by cosine."""
    candidate_pos = {cid: i for i, cid in enumerate(candidate_ids)}
    for qid in query_ids:
        if truth[qid] not in candidate_pos:
            raise UnknownTruth(f"query {qid}: truth {truth[qid]!r} not a candidate")
    sims = cosine_matrix(np.asarray(query_vecs), np.asarray(candidate_vecs))
    truth_idx = np.array([candidate_pos[truth[qid]] for qid in query_ids])
    ranks = ranks_from_similarities(sims, truth_idx)
    k = len(candidate_ids)
    return [
        RankingResult(qid, int(r), k) for qid, r in zip(query_ids, ranks)
    ]


def flat_hit(results, k: int) -> float:
    """Percentage of queries whose true candidate ranks within the top k."""
    if not results:
        raise EmptySplit("no ranking results")
    hits = sum(1 for r in results if r.first_relevant_rank <= k)
    return 100.0 * hits / len(results)


def mfr(results, exact50: bool = False) -> float:
    """Mean first-relevant rank as a percentage of the candidate count.

    The plain form is 100 * mean(rank) / K, which gives a uniform-random
    ranker about 50 * (K+1) / K. ``exact50`` rescales to
    100 * mean(rank - 1) / (K - 1) so random scores exactly 50 for any K.
    """
    if not results:
        raise EmptySplit("no ranking results")
    ks = {r.candidate_count for r in results}
    if len(ks) != 1:
        raise InconsistentCandidates(f"mixed candidate counts: {sorted(ks)}")
    k = ks.pop()
    ranks = np.array([r.first_relevant_rank for r in results], dtype=np.float64)
    if exact50:
        if k < 2:
            raise InconsistentCandidates("exact50 rescaling needs K >= 2")
        return float(100.0 * np.mean(ranks - 1.0) / (k - 1))
    return float(100.0 * np.mean(ranks) / k)


def _report(results, mode, split, exact50=False) -> EvalReport:
    return EvalReport(
        mode=mode,
        split=split,
        fh={k: flat_hit(results, k) for k in FH_KS},
        mfr=mfr(results, exact50=exact50),
        query_count=len(results),
        candidate_count=results[0].candidate_count,
    )


def _split_filter(labels, split: str):
    if split in (None, "all"):
        return list(labels)
    return [lab for lab in labels if split in lab.tags]


def evaluate(
    image_stack: MappingStack,
    label_stack: MappingStack,
    dataset: Dataset,
    conse_cfg: ConseConfig,
    mode: str = "zsl",
    split: str = "all",
    exact50: bool = False,
) -> EvalReport:
    """Rank unseen test images against class labels through the stacks.

    Candidates are the (split-filtered) unseen classes, plus every seen
    class under the generalized protocol. Queries are the unseen images of
    the filtered classes; their true class comes from the evaluation-only
    manifest section.
    """
    mode = mode.lower()
    if mode not in ("zsl", "gzsl"):
        raise ValueError(f"bad mode {mode!r}")
    unseen = _split_filter(dataset.unseen_labels, split)
    if not unseen:
        raise EmptySplit(f"split {split!r} selects no unseen classes")
    keep = {lab.id for lab in unseen}
    truth = {
        iid: cid
        for iid, cid in dataset.eval_keys.unseen_alignment.items()
        if cid in keep
    }
    query_ids = [iid for iid in dataset.unseen_image_ids() if iid in truth]
    if not query_ids:
        raise EmptySplit("no unseen images in the selected split")

    candidates = list(unseen) + (list(dataset.seen_labels) if mode == "gzsl" else [])
    candidate_ids = [lab.id for lab in candidates]
    label_base = np.stack([embed_label(dataset.table, lab) for lab in candidates])
    candidate_vecs = apply_stack(label_stack, label_base)

    query_vecs = apply_stack(
        image_stack, conse_matrix(dataset, query_ids, conse_cfg)
    )
    results = rank_queries(query_ids, query_vecs, candidate_ids, candidate_vecs, truth)
    return _report(results, mode, split or "all", exact50)


def evaluate_sentences(
    image_stack: MappingStack,
    label_stack: MappingStack,
    dataset: Dataset,
    conse_cfg: ConseConfig,
    direction: str = "text_to_image",
    exact50: bool = False,
) -> EvalReport:
    """Cross-modal retrieval between a sentence pool and an image pool.

    ``text_to_image`` queries each sentence against every image,
    ``image_to_text`` the reverse; truth is the evaluation-only pairing.
    """
    if not dataset.sentences:
        raise EmptySplit("dataset has no sentence pool")
    pairing = dataset.eval_keys.sentence_alignment  # image_id -> sentence_id
    if not pairing:
        raise EmptySplit("dataset has no sentence alignment for evaluation")
    image_ids = [iid for iid in dataset.probes if iid in pairing]
    sentence_ids = list(dataset.sentences)
    image_vecs = apply_stack(image_stack, conse_matrix(dataset, image_ids, conse_cfg))
    sentence_base = np.stack(
        [embed_sentence(dataset.table, dataset.sentences[s]) for s in sentence_ids]
    )
    sentence_vecs = apply_stack(label_stack, sentence_base)

    if direction == "text_to_image":
        truth = {sid: iid for iid, sid in pairing.items()}
        results = rank_queries(sentence_ids, sentence_vecs, image_ids, image_vecs, truth)
    elif direction == "image_to_text":
        results = rank_queries(image_ids, image_vecs, sentence_ids, sentence_vecs, pairing)
    else:
        raise ValueError(f"bad direction {direction!r}")
    return _report(results, "zsl", direction, exact50)


ABLATION_SCENARIOS = ("init", "cycle", "gan", "cgan", "sup", "full")


def ablate(
    train_cfg,
    data,
    dataset: Dataset,
    conse_cfg: ConseConfig,
    scenarios=ABLATION_SCENARIOS,
    modes=("zsl", "gzsl"),
    exact50: bool = False,
):
    """Train and evaluate every scenario with a shared seed and shared
    per-step initializations; rows come back in ladder order.

    Single-objective scenarios run one transductive step from the base
    representations; ``sup`` is the full alternation with the transductive
    phase disabled; ``full`` is the complete model.
    """
    out = {}
    for scenario in scenarios:
        if scenario == "init":
            result = None
            stacks = (MappingStack("conse"), MappingStack("text"))
        elif scenario in ("cycle", "gan", "cgan"):
            cfg = replace(train_cfg, transductive_objective=scenario)
            result = train_transductive_only(cfg, data, steps=1)
            stacks = (result.image_stack, result.label_stack)
        elif scenario == "sup":
            cfg = replace(train_cfg, transductive_enabled=False)
            result = train_full(cfg, data)
            stacks = (result.image_stack, result.label_stack)
        elif scenario == "full":
            result = train_full(train_cfg, data)
            stacks = (result.image_stack, result.label_stack)
        else:
            raise ValueError(f"unknown scenario {scenario!r}")
        reports = {
            mode: evaluate(stacks[0], stacks[1], dataset, conse_cfg, mode, exact50=exact50)
            for mode in modes
        }
        out[scenario] = {"result": result, "reports": reports}
    return out


def export_trajectory(
    snapshots,
    dataset: Dataset,
    conse_cfg: ConseConfig,
    class_ids=None,
    n_classes: int = 5,
    rng=None,
) -> list[dict]:
    """Step-by-step 2-D coordinates of unseen class labels and their image
    centroids, in one shared plane.

    A single plane is fitted on the union of all points across steps, so
    coordinates are comparable between steps: after a supervised step only
    centroids move, after a transductive step only labels move.
    """
    if len(snapshots) < 2:
        raise EmptySplit("need at least two step snapshots")
    unseen_by_id = {lab.id: lab for lab in dataset.unseen_labels}
    if class_ids is None:
        ids = sorted(unseen_by_id)
        if rng is not None and len(ids) > n_classes:
            picked = rng.choice(len(ids), size=n_classes, replace=False)
            class_ids = [ids[i] for i in sorted(picked.tolist())]
        else:
            class_ids = ids[:n_classes]
    images_of = {cid: [] for cid in class_ids}
    for iid, cid in dataset.eval_keys.unseen_alignment.items():
        if cid in images_of:
            images_of[cid].append(iid)
    for cid, iids in images_of.items():
        if not iids:
            raise EmptySplit(f"class {cid} has no unseen images")

    label_base = np.stack(
        [embed_label(dataset.table, unseen_by_id[cid]) for cid in class_ids]
    )
    image_base = {
        cid: conse_matrix(dataset, sorted(iids), conse_cfg)
        for cid, iids in images_of.items()
    }

    points, meta = [], []
    for step, (img_stack, lbl_stack) in enumerate(snapshots):
        labels = apply_stack(lbl_stack, label_base)
        for i, cid in enumerate(class_ids):
            points.append(labels[i])
            meta.append((step, "label", cid))
        for cid in class_ids:
            centroid = apply_stack(img_stack, image_base[cid]).mean(axis=0)
            points.append(centroid)
            meta.append((step, "centroid", cid))
    coords, _ = pca_project(np.stack(points), 2)
    return [
        {"step": step, "kind": kind, "class_id": cid, "x": float(x), "y": float(y)}
        for (step, kind, cid), (x, y) in zip(meta, coords)
    ]


def trajectory_tsv(rows) -> str:
    lines = ["step\tkind\tclass_id\tx\ty"]
    for r in rows:
        lines.append(f"{r['step']}\t{r['kind']}\t{r['class_id']}\t{r['x']!r}\t{r['y']!r}")
    return "\n".join(lines) + "\n"
