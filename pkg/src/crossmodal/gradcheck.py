"""Finite-difference verification of every training objective.

Each sweep point builds fresh random nets and batches, evaluates one
objective together with the exact gradients the trainer would use, and
compares them against central finite differences over every parameter.
Triplet points that land within 1e-3 of a hinge kink are redrawn, since
the subgradient there is not comparable to a symmetric difference.
"""
from __future__ import annotations

import numpy as np

from .losses import cycle_loss, gan_loss, triplet_loss
from .nets import backward, forward, grad_check, init_mlp
from .numerics import SeededRng

KINK_MARGIN = 1e-3
HIDDEN = 4  # sweeps stay cheap; layer widths do not affect gradient exactness
CLAMP = 1e-7


def _unit(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _disc_value(disc, real, fake) -> float:
    """disc_loss without building tapes; keeps finite differences cheap."""
    pr = np.clip(forward(disc, real)[:, 0], CLAMP, 1.0 - CLAMP)
    pf = np.clip(forward(disc, fake)[:, 0], CLAMP, 1.0 - CLAMP)
    return float(-np.mean(np.log(pr)) - np.mean(np.log(1.0 - pf)))


def _gen_value(disc, fake) -> float:
    pf = np.clip(forward(disc, fake)[:, 0], CLAMP, 1.0 - CLAMP)
    return float(-np.mean(np.log(pf)))


def _cycle_value(texts, text_cycled, images, image_cycled, norm="l2") -> float:
    nt = np.linalg.norm(text_cycled - texts, axis=1)
    nv = np.linalg.norm(image_cycled - images, axis=1)
    if norm == "l2_squared":
        nt, nv = nt**2, nv**2
    return float(np.mean(nt) + np.mean(nv))


def _triplet_error(rng: SeededRng, dim: int, batch: int, margin: float) -> float | None:
    to_text = init_mlp(dim, HIDDEN, dim, rng.derive("T"))
    to_image = init_mlp(dim, HIDDEN, dim, rng.derive("V"))
    images = _unit(rng.normal(size=(batch, dim)))
    labels = _unit(rng.normal(size=(batch, dim)))
    neg_labels = _unit(rng.normal(size=(batch, dim)))
    neg_images = _unit(rng.normal(size=(batch, dim)))

    def evaluate(nets):
        return triplet_loss(
            forward(nets["T"], images), labels, neg_labels,
            images, forward(nets["V"], labels), neg_images, margin,
        )

    probe = evaluate({"T": to_text, "V": to_image})
    if (np.abs(probe.hinge_image_side) < KINK_MARGIN).any() or (
        np.abs(probe.hinge_label_side) < KINK_MARGIN
    ).any():
        return None  # too close to a hinge kink; caller redraws

    def loss(nets):
        res = evaluate(nets)
        tape_t, _ = backward(nets["T"], images, res.grad_mapped_images)
        tape_v, _ = backward(nets["V"], labels, res.grad_mapped_labels)
        return res.value, {"T": tape_t, "V": tape_v}

    return grad_check(
        {"T": to_text, "V": to_image}, loss, value_fn=lambda n: evaluate(n).value
    )


def _gan_disc_error(rng: SeededRng, dim: int, batch: int) -> float:
    disc = init_mlp(dim, HIDDEN, 1, rng.derive("D"), "leaky_relu", "sigmoid")
    real = rng.normal(size=(batch, dim))
    fake = rng.normal(size=(batch, dim))

    def loss(net):
        res = gan_loss(real, fake, net)
        return res.disc_loss, res.disc_tape

    return grad_check(disc, loss, value_fn=lambda n: _disc_value(n, real, fake))


def _gan_gen_error(rng: SeededRng, dim: int, batch: int) -> float:
    gen = init_mlp(dim, HIDDEN, dim, rng.derive("G"))
    disc = init_mlp(dim, HIDDEN, 1, rng.derive("D"), "leaky_relu", "sigmoid")
    real = rng.normal(size=(batch, dim))
    source = rng.normal(size=(batch, dim))

    def loss(net):
        fake = forward(net, source)
        res = gan_loss(real, fake, disc)
        tape, _ = backward(net, source, res.fake_grad)
        return res.gen_loss, tape

    return grad_check(
        gen, loss, value_fn=lambda n: _gen_value(disc, forward(n, source))
    )


def _cycle_paths(nets, texts, images):
    mid_image = forward(nets["V"], texts)
    text_cycled = forward(nets["T"], mid_image)
    mid_text = forward(nets["T"], images)
    image_cycled = forward(nets["V"], mid_text)
    return mid_image, text_cycled, mid_text, image_cycled


def _cycle_error(rng: SeededRng, dim: int, batch: int, norm: str) -> float:
    to_text = init_mlp(dim, HIDDEN, dim, rng.derive("T"))
    to_image = init_mlp(dim, HIDDEN, dim, rng.derive("V"))
    texts = rng.normal(size=(batch, dim))
    images = rng.normal(size=(batch, dim))

    def value(nets):
        _, text_cycled, _, image_cycled = _cycle_paths(nets, texts, images)
        return _cycle_value(texts, text_cycled, images, image_cycled, norm)

    def loss(nets):
        mid_image, text_cycled, mid_text, image_cycled = _cycle_paths(nets, texts, images)
        res = cycle_loss(texts, text_cycled, images, image_cycled, norm=norm)
        tape_t, d_mid_image = backward(nets["T"], mid_image, res.grad_text_cycled)
        tape_v, _ = backward(nets["V"], texts, d_mid_image)
        tape_v2, d_mid_text = backward(nets["V"], mid_text, res.grad_image_cycled)
        tape_t2, _ = backward(nets["T"], images, d_mid_text)
        return res.value, {"T": tape_t.add_(tape_t2), "V": tape_v.add_(tape_v2)}

    return grad_check({"T": to_text, "V": to_image}, loss, value_fn=value)


def _combined_error(rng: SeededRng, dim: int, batch: int, lam: float) -> float:
    """Full generator-side objective: both non-saturating adversarial terms
    plus the weighted cycle penalty, discriminators frozen."""
    to_text = init_mlp(dim, HIDDEN, dim, rng.derive("T"))
    to_image = init_mlp(dim, HIDDEN, dim, rng.derive("V"))
    disc_text = init_mlp(dim, HIDDEN, 1, rng.derive("DT"), "leaky_relu", "sigmoid")
    disc_image = init_mlp(dim, HIDDEN, 1, rng.derive("DV"), "leaky_relu", "sigmoid")
    texts = rng.normal(size=(batch, dim))
    images = rng.normal(size=(batch, dim))

    def value(nets):
        mid_image, text_cycled, mid_text, image_cycled = _cycle_paths(nets, texts, images)
        gen_t = _gen_value(disc_text, mid_text)  # T(images) is the text-side fake
        gen_v = _gen_value(disc_image, mid_image)
        return gen_t + gen_v + lam * _cycle_value(texts, text_cycled, images, image_cycled)

    def loss(nets):
        fake_text = forward(nets["T"], images)
        fake_image = forward(nets["V"], texts)
        res_t = gan_loss(texts, fake_text, disc_text)
        res_v = gan_loss(images, fake_image, disc_image)
        tape_t, _ = backward(nets["T"], images, res_t.fake_grad)
        tape_v, _ = backward(nets["V"], texts, res_v.fake_grad)
        mid_image, text_cycled, mid_text, image_cycled = _cycle_paths(nets, texts, images)
        cyc = cycle_loss(texts, text_cycled, images, image_cycled)
        a, d_mid_image = backward(nets["T"], mid_image, lam * cyc.grad_text_cycled)
        b, _ = backward(nets["V"], texts, d_mid_image)
        c, d_mid_text = backward(nets["V"], mid_text, lam * cyc.grad_image_cycled)
        d, _ = backward(nets["T"], images, d_mid_text)
        value = res_t.gen_loss + res_v.gen_loss + lam * cyc.value
        return value, {"T": tape_t.add_(a).add_(d), "V": tape_v.add_(b).add_(c)}

    return grad_check({"T": to_text, "V": to_image}, loss, value_fn=value)


def gradient_sweep(
    seed: int = 0,
    points: int = 20,
    dim: int = 8,
    batch: int = 3,
    margin: float = 0.5,
    cycle_weight: float = 5.0,
) -> dict[str, float]:
    """Worst relative gradient error per objective over seeded points."""
    root = SeededRng(seed).derive("grad-sweep")
    worst = {
        "triplet": 0.0,
        "gan_text_disc": 0.0,
        "gan_text_gen": 0.0,
        "gan_image_disc": 0.0,
        "gan_image_gen": 0.0,
        "cycle": 0.0,
        "cycle_squared": 0.0,
        "combined": 0.0,
    }
    for point in range(points):
        err = None
        attempt = 0
        while err is None:
            rng = root.derive(f"triplet.{point}.{attempt}")
            err = _triplet_error(rng, dim, batch, margin)
            attempt += 1
        worst["triplet"] = max(worst["triplet"], err)
        rng = root.derive(f"point.{point}")
        worst["gan_text_disc"] = max(
            worst["gan_text_disc"], _gan_disc_error(rng.derive("gtd"), dim, batch)
        )
        worst["gan_text_gen"] = max(
            worst["gan_text_gen"], _gan_gen_error(rng.derive("gtg"), dim, batch)
        )
        worst["gan_image_disc"] = max(
            worst["gan_image_disc"], _gan_disc_error(rng.derive("gid"), dim, batch)
        )
        worst["gan_image_gen"] = max(
            worst["gan_image_gen"], _gan_gen_error(rng.derive("gig"), dim, batch)
        )
        worst["cycle"] = max(worst["cycle"], _cycle_error(rng.derive("cyc"), dim, batch, "l2"))
        worst["cycle_squared"] = max(
            worst["cycle_squared"], _cycle_error(rng.derive("cyc2"), dim, batch, "l2_squared")
        )
        worst["combined"] = max(
            worst["combined"], _combined_error(rng.derive("comb"), dim, batch, cycle_weight)
        )
    return worst
