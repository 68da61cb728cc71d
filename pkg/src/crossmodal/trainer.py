"""Alternating training of the two cross-modal mapping stacks.

A run interleaves two kinds of steps. A *supervised* step fits fresh
mappers on seen image/label pairs with the triplet objective and retains
the image-side map. A *transductive* step fits fresh mappers and
discriminators on the unseen pools with the adversarial + cycle objective
and retains the text-side map, choosing the cycle weight whose candidate
stack scores best on the supervised validation criterion. Representations
entering a step are computed once through the current stacks and stay
frozen for the whole step.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import TrainerData
from .errors import EmptySplit
from .losses import cycle_loss, gan_loss, triplet_loss
from .nets import (
    MappingStack,
    Mlp2,
    OptimState,
    apply_stack,
    backward,
    forward,
    init_mlp,
    near_identity_mlp,
    optim_step,
)
from .numerics import SeededRng, cosine_matrix


@dataclass
class TrainConfig:
    """Every knob of a training run; serialized into checkpoints."""

    seed: int = 0
    margin: float = 0.5
    lambda_grid: tuple[float, ...] = (1.0, 5.0, 10.0)
    epochs_supervised: int = 20
    epochs_transductive: int = 50
    batch_size: int = 128
    lr_mapper: float = 1e-4
    lr_disc: float = 1e-4
    lr_mapper_transductive: float | None = None  # defaults to lr_mapper
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    hidden_multiplier: int = 2
    max_steps: int = 6
    improvement_threshold: float = 1e-4
    cycle_norm: str = "l2"  # l2 | l2_squared
    val_fraction: float = 0.1
    supervised_retain: str = "image"  # which stack keeps its fresh map
    transductive_retain: str = "label"
    transductive_objective: str = "cgan"  # cgan | gan | cycle
    transductive_enabled: bool = True
    disc_updates: int = 1
    # Fresh mappers refine an existing alignment; starting them at the
    # identity keeps a step from re-deriving the correspondence from
    # scratch, which an adversarial objective cannot pin down on small
    # pools. Discriminators always start from the uniform scheme.
    mapper_init: str = "near_identity"  # near_identity | glorot
    # Retrieval is cosine-based, so vector scale carries no meaning;
    # feeding discriminators unit-normalized vectors makes the adversarial
    # game purely directional instead of spending capacity on norms.
    disc_unit_inputs: bool = True

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["lambda_grid"] = list(self.lambda_grid)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "lambda_grid" in doc:
            doc["lambda_grid"] = tuple(doc["lambda_grid"])
        return cls(**doc)


@dataclass
class StepPlan:
    """What one step should do."""

    kind: str  # supervised | transductive
    epochs: int
    batch_size: int
    lambda_grid: tuple[float, ...] = ()
    objective: str = "cgan"

    def __post_init__(self):
        if self.kind not in ("supervised", "transductive"):
            raise ValueError(f"bad step kind {self.kind!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class StepRecord:
    """Outcome of one executed step."""

    index: int
    kind: str  # sup | trans
    lambda_c: float | None
    val: float
    candidates: list = field(default_factory=list)  # (lambda, val) per branch
    frozen_digest_before: str = ""
    frozen_digest_after: str = ""

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "kind": self.kind,
            "lambda_c": self.lambda_c,
            "val": self.val,
            "candidates": [[lam, val] for lam, val in self.candidates],
            "frozen_digest_before": self.frozen_digest_before,
            "frozen_digest_after": self.frozen_digest_after,
        }

    def log_line(self) -> str:
        lam = "-" if self.lambda_c is None else f"{self.lambda_c:g}"
        return f"step={self.index} kind={self.kind} lambda_c={lam} val={self.val}"


@dataclass
class TrainState:
    """Mutable state of a run: stacks, split indices, step history."""

    config: TrainConfig
    data: TrainerData
    image_stack: MappingStack
    label_stack: MappingStack
    rng: SeededRng
    train_idx: np.ndarray
    val_idx: np.ndarray
    step_index: int = 0
    validation_history: list[float] = field(default_factory=list)
    history: list[StepRecord] = field(default_factory=list)


@dataclass
class TrainResult:
    image_stack: MappingStack
    label_stack: MappingStack
    history: list[StepRecord]
    validation_history: list[float]
    stop_reason: str
    baseline_val: float
    # Stack pair after every step, index 0 being the untrained baseline;
    # kept even when stopping reverts the final stacks.
    step_snapshots: list[tuple[MappingStack, MappingStack]] = field(default_factory=list)


def init_state(config: TrainConfig, data: TrainerData) -> TrainState:
    """Empty stacks over the base representations plus a seeded holdout of
    seen images for validation."""
    rng = SeededRng(config.seed)
    n = data.seen_image_reps.shape[0]
    if n > 0:
        perm = rng.derive("val-split").permutation(n)
        n_val = max(1, int(round(config.val_fraction * n)))
        val_idx = np.sort(perm[:n_val])
        train_idx = np.sort(perm[n_val:])
        if train_idx.size == 0:  # degenerate tiny sets: train on everything
            train_idx = val_idx
    else:
        train_idx = np.zeros(0, dtype=np.intp)
        val_idx = np.zeros(0, dtype=np.intp)
    return TrainState(
        config=config,
        data=data,
        image_stack=MappingStack("conse"),
        label_stack=MappingStack("text"),
        rng=rng,
        train_idx=train_idx,
        val_idx=val_idx,
    )


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def _negative_positions(rng: SeededRng, classes: np.ndarray) -> np.ndarray:
    """For each element, a uniformly chosen other position of a different
    class within the same batch."""
    out = np.empty(classes.size, dtype=np.intp)
    for i, c in enumerate(classes):
        valid = np.flatnonzero(classes != c)
        if valid.size == 0:
            raise EmptySplit("negative sampling needs at least two classes in a batch")
        out[i] = valid[rng.integers(0, valid.size)]
    return out


def validate(
    state: TrainState,
    image_stack: MappingStack | None = None,
    label_stack: MappingStack | None = None,
) -> float:
    """Mean triplet loss on the held-out seen slice, with negatives from a
    fixed seeded stream; identical across calls at identical stacks."""
    if state.val_idx.size == 0:
        raise EmptySplit("no seen data to validate on")
    image_stack = state.image_stack if image_stack is None else image_stack
    label_stack = state.label_stack if label_stack is None else label_stack
    rng = state.rng.derive("validation")
    v_hat = apply_stack(image_stack, state.data.seen_image_reps[state.val_idx])
    t_hat = apply_stack(label_stack, state.data.seen_label_reps)
    classes = state.data.seen_image_class[state.val_idx]
    neg_lbl = _negative_positions(rng, classes)
    neg_img = _negative_positions(rng, classes)
    res = triplet_loss(
        mapped_images=v_hat,
        pos_labels=t_hat[classes],
        neg_labels=t_hat[classes[neg_lbl]],
        images=v_hat,
        mapped_labels=t_hat[classes],
        neg_images=v_hat[neg_img],
        margin=state.config.margin,
    )
    return res.value


def _mapper_pair(cfg: TrainConfig, d_img: int, d_txt: int, rng: SeededRng):
    """Fresh image-to-text and text-to-image mappers."""
    if cfg.mapper_init == "near_identity" and d_img == d_txt:
        to_text = near_identity_mlp(
            d_img, cfg.hidden_multiplier * d_img, rng.derive("mapper-to-text")
        )
        to_image = near_identity_mlp(
            d_txt, cfg.hidden_multiplier * d_txt, rng.derive("mapper-to-image")
        )
        return to_text, to_image
    if cfg.mapper_init not in ("near_identity", "glorot"):
        raise ValueError(f"bad mapper_init {cfg.mapper_init!r}")
    to_text = init_mlp(
        d_img, cfg.hidden_multiplier * d_img, d_txt, rng.derive("mapper-to-text")
    )
    to_image = init_mlp(
        d_txt, cfg.hidden_multiplier * d_txt, d_img, rng.derive("mapper-to-image")
    )
    return to_text, to_image


def supervised_step(state: TrainState, plan: StepPlan) -> StepRecord:
    """Fit fresh mappers on frozen seen representations with the triplet
    objective; retain one side (the image side by default)."""
    cfg = state.config
    if state.train_idx.size == 0:
        raise EmptySplit("supervised step needs seen images")
    step_no = state.step_index + 1
    rng = state.rng.derive(f"step{step_no}.sup")

    v_hat = apply_stack(state.image_stack, state.data.seen_image_reps[state.train_idx])
    t_hat = apply_stack(state.label_stack, state.data.seen_label_reps)
    classes = state.data.seen_image_class[state.train_idx]
    digest_before = _digest(v_hat, t_hat)

    to_text, to_image = _mapper_pair(cfg, v_hat.shape[1], t_hat.shape[1], rng)
    opt_t = OptimState.for_net(to_text, cfg.lr_mapper, cfg.beta1, cfg.beta2, cfg.epsilon)
    opt_v = OptimState.for_net(to_image, cfg.lr_mapper, cfg.beta1, cfg.beta2, cfg.epsilon)

    n = state.train_idx.size
    for _ in range(plan.epochs):
        order = rng.permutation(n)
        for start in range(0, n, plan.batch_size):
            idx = order[start : start + plan.batch_size]
            batch_classes = classes[idx]
            if np.all(batch_classes == batch_classes[0]):
                continue  # no negatives available in a single-class batch
            v_b = v_hat[idx]
            t_pos = t_hat[batch_classes]
            neg_lbl = _negative_positions(rng, batch_classes)
            neg_img = _negative_positions(rng, batch_classes)
            mapped_img = forward(to_text, v_b)
            mapped_lbl = forward(to_image, t_pos)
            res = triplet_loss(
                mapped_img,
                t_pos,
                t_hat[batch_classes[neg_lbl]],
                v_b,
                mapped_lbl,
                v_b[neg_img],
                margin=cfg.margin,
            )
            tape_t, _ = backward(to_text, v_b, res.grad_mapped_images)
            tape_v, _ = backward(to_image, t_pos, res.grad_mapped_labels)
            optim_step(to_text, tape_t, opt_t)
            optim_step(to_image, tape_v, opt_v)

    if cfg.supervised_retain == "image":
        state.image_stack.append(to_text)
    elif cfg.supervised_retain == "label":
        state.label_stack.append(to_image)
    else:
        raise ValueError(f"bad supervised_retain {cfg.supervised_retain!r}")

    state.step_index = step_no
    val = validate(state)
    record = StepRecord(
        index=step_no,
        kind="sup",
        lambda_c=None,
        val=val,
        frozen_digest_before=digest_before,
        frozen_digest_after=_digest(v_hat, t_hat),
    )
    state.history.append(record)
    state.validation_history.append(val)
    return record


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _unit_rows_grad(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Chain an upstream gradient at x/|x| back to x."""
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    unit = x / norms
    return (upstream - np.sum(upstream * unit, axis=1, keepdims=True) * unit) / norms


def _train_cyclegan_branch(
    cfg: TrainConfig,
    plan: StepPlan,
    v_hat: np.ndarray,
    t_hat: np.ndarray,
    lam: float,
    rng: SeededRng,
):
    """Adversarial/cycle training of one (cycle weight) branch on frozen
    pools; returns the fresh mapper pair."""
    use_gan = plan.objective in ("cgan", "gan")
    use_cycle = plan.objective in ("cgan", "cycle")
    cycle_weight = lam if plan.objective == "cgan" else 1.0
    prep = _unit_rows if cfg.disc_unit_inputs else (lambda x: x)

    d_img, d_txt = v_hat.shape[1], t_hat.shape[1]
    lr = cfg.lr_mapper if cfg.lr_mapper_transductive is None else cfg.lr_mapper_transductive
    to_text, to_image = _mapper_pair(cfg, d_img, d_txt, rng)
    opt = {
        "to_text": OptimState.for_net(to_text, lr, cfg.beta1, cfg.beta2, cfg.epsilon),
        "to_image": OptimState.for_net(to_image, lr, cfg.beta1, cfg.beta2, cfg.epsilon),
    }
    if use_gan:
        disc_text = init_mlp(
            d_txt, cfg.hidden_multiplier * d_txt, 1, rng.derive("disc-text"),
            hidden_activation="leaky_relu", output_activation="sigmoid",
        )
        disc_image = init_mlp(
            d_img, cfg.hidden_multiplier * d_img, 1, rng.derive("disc-image"),
            hidden_activation="leaky_relu", output_activation="sigmoid",
        )
        opt["disc_text"] = OptimState.for_net(disc_text, cfg.lr_disc, cfg.beta1, cfg.beta2, cfg.epsilon)
        opt["disc_image"] = OptimState.for_net(disc_image, cfg.lr_disc, cfg.beta1, cfg.beta2, cfg.epsilon)

    n_img, n_txt = v_hat.shape[0], t_hat.shape[0]
    batches = max(1, math.ceil(max(n_img, n_txt) / plan.batch_size))
    for _ in range(plan.epochs):
        for _ in range(batches):
            v_b = v_hat[rng.integers(0, n_img, size=plan.batch_size)]
            t_b = t_hat[rng.integers(0, n_txt, size=plan.batch_size)]

            if use_gan:
                for _ in range(cfg.disc_updates):
                    fake_text = forward(to_text, v_b)
                    fake_image = forward(to_image, t_b)
                    res_t = gan_loss(prep(t_b), prep(fake_text), disc_text)
                    res_v = gan_loss(prep(v_b), prep(fake_image), disc_image)
                    optim_step(disc_text, res_t.disc_tape, opt["disc_text"])
                    optim_step(disc_image, res_v.disc_tape, opt["disc_image"])

            tape_t = None
            tape_v = None
            if use_gan:
                fake_text = forward(to_text, v_b)
                fake_image = forward(to_image, t_b)
                res_t = gan_loss(prep(t_b), prep(fake_text), disc_text)
                res_v = gan_loss(prep(v_b), prep(fake_image), disc_image)
                up_text = (
                    _unit_rows_grad(fake_text, res_t.fake_grad)
                    if cfg.disc_unit_inputs
                    else res_t.fake_grad
                )
                up_image = (
                    _unit_rows_grad(fake_image, res_v.fake_grad)
                    if cfg.disc_unit_inputs
                    else res_v.fake_grad
                )
                tape_t, _ = backward(to_text, v_b, up_text)
                tape_v, _ = backward(to_image, t_b, up_image)
            if use_cycle:
                mid_image = forward(to_image, t_b)  # V(t)
                text_cycled = forward(to_text, mid_image)  # T(V(t))
                mid_text = forward(to_text, v_b)  # T(v)
                image_cycled = forward(to_image, mid_text)  # V(T(v))
                cyc = cycle_loss(t_b, text_cycled, v_b, image_cycled, norm=cfg.cycle_norm)
                g_text = cycle_weight * cyc.grad_text_cycled
                g_image = cycle_weight * cyc.grad_image_cycled
                ct_tape, d_mid_image = backward(to_text, mid_image, g_text)
                cv_tape, _ = backward(to_image, t_b, d_mid_image)
                cv_tape2, d_mid_text = backward(to_image, mid_text, g_image)
                ct_tape2, _ = backward(to_text, v_b, d_mid_text)
                ct_tape.add_(ct_tape2)
                cv_tape.add_(cv_tape2)
                tape_t = ct_tape if tape_t is None else tape_t.add_(ct_tape)
                tape_v = cv_tape if tape_v is None else tape_v.add_(cv_tape)
            optim_step(to_text, tape_t, opt["to_text"])
            optim_step(to_image, tape_v, opt["to_image"])
    return to_text, to_image


def transductive_step(state: TrainState, plan: StepPlan) -> StepRecord:
    """Fit fresh mappers/discriminators per cycle weight on the frozen
    unseen pools; retain the text-side map of the best-validating branch."""
    cfg = state.config
    if state.data.unseen_image_reps.shape[0] == 0 or state.data.unseen_text_reps.shape[0] == 0:
        raise EmptySplit("transductive step needs unseen image and text pools")
    step_no = state.step_index + 1

    v_hat = apply_stack(state.image_stack, state.data.unseen_image_reps)
    t_hat = apply_stack(state.label_stack, state.data.unseen_text_reps)
    digest_before = _digest(v_hat, t_hat)

    grid = tuple(plan.lambda_grid) if plan.objective == "cgan" else (0.0,)
    if not grid:
        grid = (1.0,)
    candidates = []
    for lam in grid:
        rng = state.rng.derive(f"step{step_no}.trans.lam{lam:g}")
        to_text, to_image = _train_cyclegan_branch(cfg, plan, v_hat, t_hat, lam, rng)
        if cfg.transductive_retain == "label":
            cand = state.label_stack.copy()
            cand.append(to_image)
            val = validate(state, label_stack=cand)
            retained = to_image
        elif cfg.transductive_retain == "image":
            cand = state.image_stack.copy()
            cand.append(to_text)
            val = validate(state, image_stack=cand)
            retained = to_text
        else:
            raise ValueError(f"bad transductive_retain {cfg.transductive_retain!r}")
        candidates.append((lam, val, retained))

    best_lam, best_val, best_map = min(candidates, key=lambda c: (c[1], c[0]))
    if plan.epochs > 0:
        if cfg.transductive_retain == "label":
            state.label_stack.append(best_map)
        else:
            state.image_stack.append(best_map)

    state.step_index = step_no
    record = StepRecord(
        index=step_no,
        kind="trans",
        lambda_c=best_lam if plan.objective == "cgan" else None,
        val=best_val,
        candidates=[(lam, val) for lam, val, _ in candidates],
        frozen_digest_before=digest_before,
        frozen_digest_after=_digest(v_hat, t_hat),
    )
    state.history.append(record)
    state.validation_history.append(best_val)
    return record


def train_full(config: TrainConfig, data: TrainerData) -> TrainResult:
    """Alternate supervised and transductive steps, starting supervised.

    After each completed (supervised, transductive) pair the supervised
    validation value must improve by at least the configured threshold;
    otherwise the stacks revert to the last improving pair and training
    stops. The step budget caps the total number of steps either way.
    """
    state = init_state(config, data)
    baseline = validate(state)
    best_val = baseline
    best_stacks = (state.image_stack.copy(), state.label_stack.copy())
    snapshots = [(state.image_stack.copy(), state.label_stack.copy())]
    stop_reason = "max_steps"

    while state.step_index < config.max_steps:
        supervised_step(
            state,
            StepPlan("supervised", config.epochs_supervised, config.batch_size),
        )
        snapshots.append((state.image_stack.copy(), state.label_stack.copy()))
        if config.transductive_enabled and state.step_index < config.max_steps:
            transductive_step(
                state,
                StepPlan(
                    "transductive",
                    config.epochs_transductive,
                    config.batch_size,
                    tuple(config.lambda_grid),
                    config.transductive_objective,
                ),
            )
            snapshots.append((state.image_stack.copy(), state.label_stack.copy()))
        pair_val = state.validation_history[-1]
        if pair_val < best_val - config.improvement_threshold:
            best_val = pair_val
            best_stacks = (state.image_stack.copy(), state.label_stack.copy())
        else:
            state.image_stack, state.label_stack = best_stacks
            stop_reason = "no_improvement"
            break

    return TrainResult(
        image_stack=state.image_stack,
        label_stack=state.label_stack,
        history=state.history,
        validation_history=state.validation_history,
        stop_reason=stop_reason,
        baseline_val=baseline,
        step_snapshots=snapshots,
    )


def train_transductive_only(
    config: TrainConfig, data: TrainerData, steps: int = 1
) -> TrainResult:
    """Transductive steps from the base representations, no supervised
    phase; used by the single-objective ablation scenarios."""
    state = init_state(config, data)
    baseline = validate(state) if state.val_idx.size else float("nan")
    snapshots = [(state.image_stack.copy(), state.label_stack.copy())]
    for _ in range(steps):
        transductive_step(
            state,
            StepPlan(
                "transductive",
                config.epochs_transductive,
                config.batch_size,
                tuple(config.lambda_grid),
                config.transductive_objective,
            ),
        )
        snapshots.append((state.image_stack.copy(), state.label_stack.copy()))
    return TrainResult(
        image_stack=state.image_stack,
        label_stack=state.label_stack,
        history=state.history,
        validation_history=state.validation_history,
        stop_reason="steps_exhausted",
        baseline_val=baseline,
        step_snapshots=snapshots,
    )


def unsupervised_criterion(
    image_reps: np.ndarray, text_reps: np.ndarray
) -> float:
    """Mean cosine similarity between each image and its best-matching
    text; the selection criterion when no seen pairs exist (higher is
    better)."""
    sims = cosine_matrix(image_reps, text_reps)
    return float(np.mean(sims.max(axis=1)))


def train_unsupervised(config: TrainConfig, data: TrainerData) -> TrainResult:
    """One transductive step on unaligned image and sentence pools.

    The retained map is the text-side one of the branch maximizing the
    mean image-to-predicted-sentence cosine on a held-out image slice;
    the image side stays at its base representation. With zero epochs the
    run is a no-op and retrieval equals the base representations.
    """
    state = init_state(config, data)
    if data.unseen_image_reps.shape[0] == 0 or data.unseen_text_reps.shape[0] == 0:
        raise EmptySplit("unsupervised training needs image and sentence pools")
    n = data.unseen_image_reps.shape[0]
    perm = state.rng.derive("unsup-val-split").permutation(n)
    held = np.sort(perm[: max(1, int(round(config.val_fraction * n)))])

    plan = StepPlan(
        "transductive",
        config.epochs_transductive,
        config.batch_size,
        tuple(config.lambda_grid),
        config.transductive_objective,
    )
    v_hat = apply_stack(state.image_stack, data.unseen_image_reps)
    t_hat = apply_stack(state.label_stack, data.unseen_text_reps)
    digest_before = _digest(v_hat, t_hat)
    baseline = unsupervised_criterion(v_hat[held], t_hat)

    grid = tuple(plan.lambda_grid) if plan.objective == "cgan" else (0.0,)
    if not grid:
        grid = (1.0,)
    candidates = []
    for lam in grid:
        rng = state.rng.derive(f"step1.trans.lam{lam:g}")
        _, to_image = _train_cyclegan_branch(config, plan, v_hat, t_hat, lam, rng)
        cand = state.label_stack.copy()
        cand.append(to_image)
        crit = unsupervised_criterion(v_hat[held], apply_stack(cand, data.unseen_text_reps))
        candidates.append((lam, crit, to_image))

    snapshots = [(state.image_stack.copy(), state.label_stack.copy())]
    best_lam, best_crit, best_map = max(candidates, key=lambda c: (c[1], -c[0]))
    if plan.epochs > 0:
        state.label_stack.append(best_map)
    snapshots.append((state.image_stack.copy(), state.label_stack.copy()))
    state.step_index = 1
    record = StepRecord(
        index=1,
        kind="trans",
        lambda_c=best_lam if plan.objective == "cgan" else None,
        val=best_crit,
        candidates=[(lam, crit) for lam, crit, _ in candidates],
        frozen_digest_before=digest_before,
        frozen_digest_after=_digest(v_hat, t_hat),
    )
    state.history.append(record)
    state.validation_history.append(best_crit)
    return TrainResult(
        image_stack=state.image_stack,
        label_stack=state.label_stack,
        history=state.history,
        validation_history=state.validation_history,
        stop_reason="single_step",
        baseline_val=baseline,
        step_snapshots=snapshots,
    )
