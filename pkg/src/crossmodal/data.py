"""File formats, dataset manifests, synthetic benchmarks and checkpoints.

All on-disk formats are text: embedding and probe tables are UTF-8 TSV with
a ``#``-prefixed header, manifests / reports / checkpoints are JSON with a
schema version. Floats are written with ``repr`` so every value round-trips
bit-exactly. Writes go through a temp file and an atomic rename.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import (
    ClassLabel,
    ClassProbe,
    ConseConfig,
    EmbeddingTable,
    conse_embed,
    embed_label,
    embed_sentence,
)
from .errors import (
    DataError,
    DimMismatch,
    DuplicateToken,
    ParseError,
    VersionMismatch,
)
from .nets import MappingStack, Mlp2, forward, init_mlp
from .numerics import SeededRng

MANIFEST_VERSION = 1
CHECKPOINT_VERSION = 1
REPORT_VERSION = 1


# ---------------------------------------------------------------------------
# Atomic JSON / text IO
# ---------------------------------------------------------------------------


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def dump_json(obj, path) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno) from exc


def _format_vec(vec) -> str:
    return " ".join(repr(float(x)) for x in vec)


# ---------------------------------------------------------------------------
# Embedding tables
# ---------------------------------------------------------------------------


def save_embeddings(table: EmbeddingTable, path) -> None:
    lines = [f"#dim {table.dim}"]
    for token, vec in table.entries.items():
        lines.append(f"{token}\t{_format_vec(vec)}")
    _atomic_write(path, "\n".join(lines) + "\n")


def load_embeddings(path) -> EmbeddingTable:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#dim "):
        raise ParseError(f"{path}: missing '#dim N' header", line=1)
    try:
        dim = int(lines[0].split()[1])
    except (IndexError, ValueError) as exc:
        raise ParseError(f"{path}: bad dim header", line=1) from exc
    table = EmbeddingTable(dim=dim)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"{path}: expected token<TAB>values", line=lineno)
        token, values = parts
        if token in table:
            raise DuplicateToken(f"{path}: token {token!r} defined twice (line {lineno})")
        try:
            vec = np.array([float(x) for x in values.split()], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric value", line=lineno) from exc
        if vec.shape != (dim,):
            raise ParseError(
                f"{path}: {vec.shape[0]} values, header says {dim}", line=lineno
            )
        table.add(token, vec)
    return table


# ---------------------------------------------------------------------------
# Class probes (sparse class_id:prob rows)
# ---------------------------------------------------------------------------


def save_probes(probes, class_ids, path, drop_below: float = 1e-12) -> None:
    """``probes``: mapping image_id -> dense vector over ``class_ids`` order."""
    lines = [f"#classes {len(class_ids)}"]
    for image_id, dense in probes.items():
        pairs = [
            f"{class_ids[i]}:{repr(float(p))}"
            for i, p in enumerate(dense)
            if p >= drop_below
        ]
        lines.append(f"{image_id}\t{' '.join(pairs)}")
    _atomic_write(path, "\n".join(lines) + "\n")


def load_probes(path):
    """Returns ``(n_classes, {image_id: [(class_id, prob), ...]})``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#classes "):
        raise ParseError(f"{path}: missing '#classes N' header", line=1)
    try:
        n_classes = int(lines[0].split()[1])
    except (IndexError, ValueError) as exc:
        raise ParseError(f"{path}: bad header", line=1) from exc
    rows = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"{path}: expected image_id<TAB>pairs", line=lineno)
        image_id, pairs = parts
        if image_id in rows:
            raise DuplicateToken(f"{path}: image {image_id!r} repeated (line {lineno})")
        entries = []
        for pair in pairs.split():
            try:
                cid, prob = pair.split(":")
                entries.append((int(cid), float(prob)))
            except ValueError as exc:
                raise ParseError(f"{path}: bad pair {pair!r}", line=lineno) from exc
        rows[image_id] = entries
    return n_classes, rows


# ---------------------------------------------------------------------------
# Sentences (token sequences)
# ---------------------------------------------------------------------------


def save_sentences(sentences, path) -> None:
    lines = [f"{sid}\t{' '.join(tokens)}" for sid, tokens in sentences.items()]
    _atomic_write(path, "\n".join(lines) + "\n")


def load_sentences(path):
    rows = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[1].strip():
            raise ParseError(f"{path}: expected id<TAB>tokens", line=lineno)
        if parts[0] in rows:
            raise DuplicateToken(f"{path}: sentence {parts[0]!r} repeated (line {lineno})")
        rows[parts[0]] = parts[1].split()
    return rows


# ---------------------------------------------------------------------------
# Dataset manifest
# ---------------------------------------------------------------------------


@dataclass
class EvalOnlyKeys:
    """Ground-truth pairings reserved for evaluation code.

    Training interfaces receive views built without this object, so the
    unseen correspondence can never leak into a training step.
    """

    unseen_alignment: dict[str, int] = field(default_factory=dict)
    sentence_alignment: dict[str, str] = field(default_factory=dict)


@dataclass
class Dataset:
    """A loaded benchmark: vocabulary, labels, probes and alignments."""

    root: Path
    table: EmbeddingTable
    seen_labels: list[ClassLabel]
    unseen_labels: list[ClassLabel]
    probes: dict[str, ClassProbe]  # image_id -> distribution over seen labels
    seen_alignment: dict[str, int]  # image_id -> seen label id
    eval_keys: EvalOnlyKeys
    sentences: dict[str, list[str]] | None = None
    prototypes: EmbeddingTable | None = None

    def seen_index(self) -> dict[int, int]:
        return {lab.id: i for i, lab in enumerate(self.seen_labels)}

    def unseen_index(self) -> dict[int, int]:
        return {lab.id: i for i, lab in enumerate(self.unseen_labels)}

    def seen_image_ids(self) -> list[str]:
        return [i for i in self.probes if i in self.seen_alignment]

    def unseen_image_ids(self) -> list[str]:
        return [i for i in self.probes if i not in self.seen_alignment]


def _labels_to_json(labels):
    return [
        {"id": lab.id, "tokens": list(lab.tokens), "tags": list(lab.tags)}
        for lab in labels
    ]


def _labels_from_json(rows, split):
    return [
        ClassLabel(int(r["id"]), tuple(r["tokens"]), split, tuple(r.get("tags", ())))
        for r in rows
    ]


def save_manifest(dataset: Dataset, path) -> None:
    doc = {
        "schema_version": MANIFEST_VERSION,
        "embedding_file": "embeddings.tsv",
        "probe_file": "probes.tsv",
        "prototypes_file": "visual_prototypes.tsv" if dataset.prototypes else None,
        "sentences_file": "sentences.tsv" if dataset.sentences else None,
        "seen_labels": _labels_to_json(dataset.seen_labels),
        "unseen_labels": _labels_to_json(dataset.unseen_labels),
        "seen_alignment": dataset.seen_alignment,
        "eval_only": {
            "unseen_alignment": dataset.eval_keys.unseen_alignment,
            "sentence_alignment": dataset.eval_keys.sentence_alignment,
        },
    }
    dump_json(doc, path)


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    doc = load_json(manifest_path)
    version = doc.get("schema_version")
    if version != MANIFEST_VERSION:
        raise VersionMismatch(f"manifest version {version}, expected {MANIFEST_VERSION}")
    root = manifest_path.parent
    table = load_embeddings(root / doc["embedding_file"])
    seen = _labels_from_json(doc["seen_labels"], "seen")
    unseen = _labels_from_json(doc["unseen_labels"], "unseen")
    overlap = {l.id for l in seen} & {l.id for l in unseen}
    if overlap:
        raise ParseError(f"class ids in both splits: {sorted(overlap)}")
    n_classes, rows = load_probes(root / doc["probe_file"])
    if n_classes != len(seen):
        raise ParseError(
            f"probe header says {n_classes} classes, manifest has {len(seen)}"
        )
    index = {lab.id: i for i, lab in enumerate(seen)}
    probes = {}
    for image_id, entries in rows.items():
        dense = np.zeros(len(seen))
        for cid, prob in entries:
            if cid not in index:
                raise ParseError(f"probe {image_id}: unknown class id {cid}")
            dense[index[cid]] = prob
        probes[image_id] = ClassProbe(image_id, dense).validate(len(seen))
    sentences = None
    if doc.get("sentences_file"):
        sentences = load_sentences(root / doc["sentences_file"])
    prototypes = None
    if doc.get("prototypes_file"):
        prototypes = load_embeddings(root / doc["prototypes_file"])
    eval_only = doc.get("eval_only", {})
    return Dataset(
        root=root,
        table=table,
        seen_labels=seen,
        unseen_labels=unseen,
        probes=probes,
        seen_alignment={k: int(v) for k, v in doc["seen_alignment"].items()},
        eval_keys=EvalOnlyKeys(
            unseen_alignment={
                k: int(v) for k, v in eval_only.get("unseen_alignment", {}).items()
            },
            sentence_alignment=dict(eval_only.get("sentence_alignment", {})),
        ),
        sentences=sentences,
        prototypes=prototypes,
    )


# ---------------------------------------------------------------------------
# Trainer-facing view (no unseen correspondence, by construction)
# ---------------------------------------------------------------------------


@dataclass
class TrainerData:
    """What a training run is allowed to see.

    Unseen image and text pools are bare matrices: there is no field that
    relates a row of one to a row of the other.
    """

    seen_image_reps: np.ndarray  # (n_seen_images, d) base image embeddings
    seen_image_class: np.ndarray  # (n_seen_images,) index into seen_label_reps
    seen_label_reps: np.ndarray  # (n_seen_classes, d)
    unseen_image_reps: np.ndarray  # (n_unseen_images, d)
    unseen_text_reps: np.ndarray  # (n_unseen_texts, d) labels or sentences


def conse_matrix(dataset: Dataset, image_ids, cfg: ConseConfig) -> np.ndarray:
    """Stack the convex-combination embedding of each image."""
    return np.stack(
        [conse_embed(dataset.table, dataset.seen_labels, dataset.probes[i], cfg) for i in image_ids]
    )


def build_trainer_data(dataset: Dataset, cfg: ConseConfig) -> TrainerData:
    """Assemble training pools from a dataset.

    The unseen text pool holds class-label embeddings when the dataset has
    unseen classes, sentence embeddings when it has a sentence pool.
    """
    d = dataset.table.dim
    seen_ids = dataset.seen_image_ids()
    index = dataset.seen_index()
    if seen_ids:
        seen_reps = conse_matrix(dataset, seen_ids, cfg)
        seen_class = np.array(
            [index[dataset.seen_alignment[i]] for i in seen_ids], dtype=np.intp
        )
    else:
        seen_reps = np.zeros((0, d))
        seen_class = np.zeros(0, dtype=np.intp)
    seen_label_reps = (
        np.stack([embed_label(dataset.table, lab) for lab in dataset.seen_labels])
        if dataset.seen_labels
        else np.zeros((0, d))
    )
    unseen_ids = dataset.unseen_image_ids()
    unseen_reps = (
        conse_matrix(dataset, unseen_ids, cfg) if unseen_ids else np.zeros((0, d))
    )
    if dataset.sentences:
        text_reps = np.stack(
            [embed_sentence(dataset.table, toks) for toks in dataset.sentences.values()]
        )
    elif dataset.unseen_labels:
        text_reps = np.stack(
            [embed_label(dataset.table, lab) for lab in dataset.unseen_labels]
        )
    else:
        text_reps = np.zeros((0, d))
    return TrainerData(
        seen_image_reps=seen_reps,
        seen_image_class=seen_class,
        seen_label_reps=seen_label_reps,
        unseen_image_reps=unseen_reps,
        unseen_text_reps=text_reps,
    )


# ---------------------------------------------------------------------------
# Synthetic benchmarks
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    """Desk-scale class benchmark with a hidden text-to-visual transform.

    ``split_separation`` pushes seen and unseen class vectors toward
    opposite sides of a random direction, giving the two populations
    partially disjoint regions like hop-distance splits of a real class
    hierarchy; probes of unseen images then smear toward the seen region,
    which is the domain shift the transductive phase must counteract.
    ``domain_shift_angle`` additionally rotates the unseen class vectors
    (only on the visual-generation side) before the hidden transform, so
    unseen images manifest a systematically displaced version of their
    label vector. Supervised training on seen classes observes neither
    effect; only distribution-level alignment of the unseen pools can
    undo them.
    """

    n_seen: int = 30
    n_unseen: int = 30
    d_text: int = 16
    d_vis: int = 16
    images_per_class: int = 50
    transform: str = "mlp"  # orthogonal | affine | mlp
    noise_sigma: float = 0.1
    probe_temperature: float = 1.0
    split_separation: float = 0.0
    domain_shift_angle: float = 0.0
    seed: int = 0


def _hidden_transform(cfg, rng: SeededRng):
    if cfg.transform == "orthogonal":
        if cfg.d_vis < cfg.d_text:
            raise DimMismatch("orthogonal transform needs d_vis >= d_text")
        gauss = rng.normal(size=(cfg.d_vis, cfg.d_text))
        q, _ = np.linalg.qr(gauss)
        return lambda t: t @ q.T
    if cfg.transform == "affine":
        a = rng.normal(size=(cfg.d_vis, cfg.d_text)) / np.sqrt(cfg.d_text)
        b = 0.1 * rng.normal(size=cfg.d_vis)
        return lambda t: t @ a.T + b
    if cfg.transform == "mlp":
        net = init_mlp(cfg.d_text, 2 * cfg.d_text, cfg.d_vis, rng)
        return lambda t: forward(net, t)
    raise ValueError(f"unknown transform {cfg.transform!r}")


def _random_rotation(dim: int, angle: float, rng: SeededRng) -> np.ndarray:
    """Orthogonal matrix displacing generic unit vectors by about ``angle``
    radians, via the Cayley transform of a scaled random skew matrix."""
    if angle == 0.0:
        return np.eye(dim)
    gauss = rng.normal(size=(dim, dim))
    skew = gauss - gauss.T
    skew *= angle / np.linalg.norm(skew, 2)
    eye = np.eye(dim)
    rot = np.linalg.solve(eye + 0.5 * skew, eye - 0.5 * skew)
    # Calibrate so the mean displacement of unit vectors matches the angle.
    probe = rng.normal(size=(256, dim))
    probe /= np.linalg.norm(probe, axis=1, keepdims=True)
    mean_disp = float(np.mean(np.arccos(np.clip(np.sum(probe * (probe @ rot.T), axis=1), -1, 1))))
    if mean_disp > 1e-9:
        skew *= angle / mean_disp
        rot = np.linalg.solve(eye + 0.5 * skew, eye - 0.5 * skew)
    return rot


def _probe_rows(visuals, prototypes, temperature):
    """Softmax over seen classes of the negative scaled squared distance."""
    d2 = (
        np.sum(visuals**2, axis=1, keepdims=True)
        - 2.0 * visuals @ prototypes.T
        + np.sum(prototypes**2, axis=1)
    )
    logits = -d2 / temperature
    logits -= logits.max(axis=1, keepdims=True)
    expd = np.exp(logits)
    return expd / expd.sum(axis=1, keepdims=True)


def gen_synthetic(cfg: SynthConfig, out_dir) -> Dataset:
    """Generate a class benchmark and write its files under ``out_dir``.

    Class vectors are unit-normal directions; each image is the hidden
    transform of its class vector plus isotropic noise; probes are softmax
    scores against the seen-class visual prototypes, so convex-combination
    image embeddings carry real signal. The unseen pairing goes only into
    the evaluation-only manifest section.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = SeededRng(cfg.seed).derive("synth")
    n_total = cfg.n_seen + cfg.n_unseen

    text = rng.normal(size=(n_total, cfg.d_text))
    if cfg.split_separation != 0.0:
        axis = rng.normal(size=cfg.d_text)
        axis /= np.linalg.norm(axis)
        text[: cfg.n_seen] += cfg.split_separation * axis
        text[cfg.n_seen :] -= cfg.split_separation * axis
    text /= np.linalg.norm(text, axis=1, keepdims=True)
    phi = _hidden_transform(cfg, rng)
    shift = _random_rotation(cfg.d_text, cfg.domain_shift_angle, rng.derive("shift"))
    visual_source = text.copy()
    visual_source[cfg.n_seen :] = text[cfg.n_seen :] @ shift.T
    prototypes = phi(visual_source)

    table = EmbeddingTable(dim=cfg.d_text)
    tokens = [f"cls_{c:03d}" for c in range(n_total)]
    for tok, vec in zip(tokens, text):
        table.add(tok, vec)
    seen = [ClassLabel(c, (tokens[c],), "seen") for c in range(cfg.n_seen)]
    unseen = [
        ClassLabel(c, (tokens[c],), "unseen") for c in range(cfg.n_seen, n_total)
    ]

    image_ids, visuals, owners = [], [], []
    for c in range(n_total):
        noise = rng.normal(size=(cfg.images_per_class, cfg.d_vis))
        cluster = prototypes[c] + cfg.noise_sigma * noise
        for j in range(cfg.images_per_class):
            image_ids.append(f"img{c:03d}_{j:03d}")
            owners.append(c)
        visuals.append(cluster)
    visuals = np.concatenate(visuals)

    probs = _probe_rows(visuals, prototypes[: cfg.n_seen], cfg.probe_temperature)
    probes = {image_ids[i]: probs[i] for i in range(len(image_ids))}

    proto_table = EmbeddingTable(dim=cfg.d_vis)
    for tok, vec in zip(tokens, prototypes):
        proto_table.add(tok, vec)

    dataset = Dataset(
        root=out_dir,
        table=table,
        seen_labels=seen,
        unseen_labels=unseen,
        probes={
            iid: ClassProbe(iid, dense).validate(cfg.n_seen)
            for iid, dense in probes.items()
        },
        seen_alignment={
            image_ids[i]: owners[i] for i in range(len(image_ids)) if owners[i] < cfg.n_seen
        },
        eval_keys=EvalOnlyKeys(
            unseen_alignment={
                image_ids[i]: owners[i]
                for i in range(len(image_ids))
                if owners[i] >= cfg.n_seen
            }
        ),
        prototypes=proto_table,
    )
    save_embeddings(table, out_dir / "embeddings.tsv")
    save_probes(probes, [lab.id for lab in seen], out_dir / "probes.tsv")
    save_embeddings(proto_table, out_dir / "visual_prototypes.tsv")
    save_manifest(dataset, out_dir / "manifest.json")
    return dataset


@dataclass
class SentenceSynthConfig:
    """Desk-scale sentence-to-image benchmark with no usable alignment.

    ``domain_shift_offset`` tilts every scene direction toward a common
    random axis before the hidden transform, and ``domain_shift_angle``
    additionally rotates it, so the visual side systematically diverges
    from the raw sentence embeddings; the transductive step has to recover
    that global displacement from the two unaligned pools.
    """

    vocab_size: int = 80
    n_basis: int = 30  # seen classes feeding the probe softmax
    n_images: int = 300
    words_min: int = 3
    words_max: int = 8
    d_text: int = 16
    d_vis: int = 16
    transform: str = "mlp"
    noise_sigma: float = 0.1
    probe_temperature: float = 1.0
    domain_shift_offset: float = 0.0
    domain_shift_angle: float = 0.0
    seed: int = 0


def gen_synthetic_sentences(cfg: SentenceSynthConfig, out_dir) -> Dataset:
    """Generate the sentence analog: each image depicts a small bag of
    words, its caption is that bag, and captions are summed at embedding
    time. The caption-image pairing is written only to the evaluation-only
    section; the basis classes provide probes but no image alignment.
    """
    if cfg.n_basis > cfg.vocab_size:
        raise DataError("n_basis cannot exceed vocab_size")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = SeededRng(cfg.seed).derive("synth-sentences")

    words = rng.normal(size=(cfg.vocab_size, cfg.d_text))
    words /= np.linalg.norm(words, axis=1, keepdims=True)
    table = EmbeddingTable(dim=cfg.d_text)
    tokens = [f"w{i:03d}" for i in range(cfg.vocab_size)]
    for tok, vec in zip(tokens, words):
        table.add(tok, vec)
    seen = [ClassLabel(i, (tokens[i],), "seen") for i in range(cfg.n_basis)]

    phi = _hidden_transform(
        SynthConfig(d_text=cfg.d_text, d_vis=cfg.d_vis, transform=cfg.transform), rng
    )
    shift = _random_rotation(cfg.d_text, cfg.domain_shift_angle, rng.derive("shift"))
    basis_protos = phi(words[: cfg.n_basis])

    sentences, image_ids, scenes = {}, [], []
    for i in range(cfg.n_images):
        count = int(rng.integers(cfg.words_min, cfg.words_max + 1))
        chosen = sorted(rng.choice(cfg.vocab_size, size=count, replace=False).tolist())
        sid = f"sent_{i:04d}"
        iid = f"img_{i:04d}"
        sentences[sid] = [tokens[w] for w in chosen]
        image_ids.append(iid)
        scene = words[chosen].sum(axis=0)
        scenes.append(scene / np.linalg.norm(scene))
    scenes = np.stack(scenes)
    if cfg.domain_shift_offset != 0.0:
        axis = rng.derive("offset-axis").normal(size=cfg.d_text)
        axis /= np.linalg.norm(axis)
        scenes = scenes + cfg.domain_shift_offset * axis
        scenes /= np.linalg.norm(scenes, axis=1, keepdims=True)
    scenes = scenes @ shift.T
    visuals = phi(scenes) + cfg.noise_sigma * rng.normal(size=(cfg.n_images, cfg.d_vis))

    probs = _probe_rows(visuals, basis_protos, cfg.probe_temperature)
    probes = {image_ids[i]: probs[i] for i in range(cfg.n_images)}

    dataset = Dataset(
        root=out_dir,
        table=table,
        seen_labels=seen,
        unseen_labels=[],
        probes={
            iid: ClassProbe(iid, dense).validate(cfg.n_basis)
            for iid, dense in probes.items()
        },
        seen_alignment={},
        eval_keys=EvalOnlyKeys(
            sentence_alignment={iid: f"sent_{i:04d}" for i, iid in enumerate(image_ids)}
        ),
        sentences=sentences,
    )
    save_embeddings(table, out_dir / "embeddings.tsv")
    save_probes(probes, [lab.id for lab in seen], out_dir / "probes.tsv")
    save_sentences(sentences, out_dir / "sentences.tsv")
    save_manifest(dataset, out_dir / "manifest.json")
    return dataset


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def mlp_to_dict(net: Mlp2) -> dict:
    return {
        "w1": net.w1.tolist(),
        "b1": net.b1.tolist(),
        "w2": net.w2.tolist(),
        "b2": net.b2.tolist(),
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
    }


def mlp_from_dict(doc: dict) -> Mlp2:
    try:
        return Mlp2(
            w1=np.array(doc["w1"], dtype=np.float64),
            b1=np.array(doc["b1"], dtype=np.float64),
            w2=np.array(doc["w2"], dtype=np.float64),
            b2=np.array(doc["b2"], dtype=np.float64),
            hidden_activation=doc["hidden_activation"],
            output_activation=doc["output_activation"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad network record: {exc}") from exc


def stack_to_dict(stack: MappingStack) -> dict:
    return {"base": stack.base, "maps": [mlp_to_dict(m) for m in stack.maps]}


def stack_from_dict(doc: dict) -> MappingStack:
    try:
        return MappingStack(doc["base"], [mlp_from_dict(m) for m in doc["maps"]])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"bad stack record: {exc}") from exc


@dataclass
class Checkpoint:
    """Everything needed to resume or re-evaluate a run."""

    config: dict
    seed: int
    rng_algorithm: str
    step_index: int
    history: list[dict]
    image_stack: MappingStack
    label_stack: MappingStack
    format_version: int = CHECKPOINT_VERSION


def checkpoint_save(path, ckpt: Checkpoint) -> None:
    doc = {
        "format_version": ckpt.format_version,
        "config": ckpt.config,
        "seed": ckpt.seed,
        "rng_algorithm": ckpt.rng_algorithm,
        "step_index": ckpt.step_index,
        "history": ckpt.history,
        "image_stack": stack_to_dict(ckpt.image_stack),
        "label_stack": stack_to_dict(ckpt.label_stack),
    }
    dump_json(doc, path)


def checkpoint_load(path) -> Checkpoint:
    doc = load_json(path)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    try:
        return Checkpoint(
            config=doc["config"],
            seed=int(doc["seed"]),
            rng_algorithm=doc["rng_algorithm"],
            step_index=int(doc["step_index"]),
            history=list(doc["history"]),
            image_stack=stack_from_dict(doc["image_stack"]),
            label_stack=stack_from_dict(doc["label_stack"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: incomplete checkpoint: {exc}") from exc
