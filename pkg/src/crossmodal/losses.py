"""Training objectives: max-margin triplet, adversarial, cycle, combined.

Each function returns the batch value together with exact gradients at the
points the trainer needs them (mapper outputs, discriminator parameters,
generator outputs). Gradients are plain numpy arrays scaled so that they
are derivatives of the returned value.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, ZeroVector
from .nets import GradTape, Mlp2, backward, forward

DEFAULT_MARGIN = 0.5
LOG_CLAMP = 1e-7


def _row_norms(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1)
    if np.any(n == 0.0):
        raise ZeroVector("zero-norm vector in a cosine-based loss")
    return n


def _row_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=1) / (_row_norms(a) * _row_norms(b))


def _d_cosine_wrt_a(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise gradient of cos(a_i, b_i) with respect to a_i."""
    na = _row_norms(a)[:, None]
    nb = _row_norms(b)[:, None]
    cos = np.sum(a * b, axis=1, keepdims=True) / (na * nb)
    return b / (na * nb) - cos * a / (na * na)


@dataclass
class TripletResult:
    value: float
    grad_mapped_images: np.ndarray  # d value / d T(image)
    grad_mapped_labels: np.ndarray  # d value / d V(label)
    hinge_image_side: np.ndarray  # pre-clamp hinge arguments, per sample
    hinge_label_side: np.ndarray


def triplet_loss(
    mapped_images,
    pos_labels,
    neg_labels,
    images,
    mapped_labels,
    neg_images,
    margin: float = DEFAULT_MARGIN,
) -> TripletResult:
    """Two-sided max-margin ranking loss on cosine similarities.

    Side one scores mapped images against their label and a negative label;
    side two scores mapped labels against their image and a negative image.
    The batch value is the mean over samples of both hinges.
    """
    ti = np.atleast_2d(np.asarray(mapped_images, dtype=np.float64))
    tp = np.atleast_2d(np.asarray(pos_labels, dtype=np.float64))
    tn = np.atleast_2d(np.asarray(neg_labels, dtype=np.float64))
    vi = np.atleast_2d(np.asarray(images, dtype=np.float64))
    vm = np.atleast_2d(np.asarray(mapped_labels, dtype=np.float64))
    vn = np.atleast_2d(np.asarray(neg_images, dtype=np.float64))
    n = ti.shape[0]
    if not (tp.shape[0] == tn.shape[0] == vi.shape[0] == vm.shape[0] == vn.shape[0] == n):
        raise DimMismatch("triplet batch sizes disagree")

    h_img = margin - _row_cosine(ti, tp) + _row_cosine(ti, tn)
    h_lbl = margin - _row_cosine(vi, vm) + _row_cosine(vn, vm)
    value = float(np.mean(np.maximum(h_img, 0.0) + np.maximum(h_lbl, 0.0)))

    active_img = (h_img > 0.0)[:, None]
    active_lbl = (h_lbl > 0.0)[:, None]
    grad_ti = active_img * (-_d_cosine_wrt_a(ti, tp) + _d_cosine_wrt_a(ti, tn)) / n
    grad_vm = active_lbl * (-_d_cosine_wrt_a(vm, vi) + _d_cosine_wrt_a(vm, vn)) / n
    return TripletResult(value, grad_ti, grad_vm, h_img, h_lbl)


@dataclass
class GanResult:
    value: float  # E[log D(real)] + E[log(1 - D(fake))]
    disc_loss: float  # -value; what the discriminator descends
    gen_loss: float  # -E[log D(fake)]; non-saturating generator objective
    disc_tape: GradTape  # d disc_loss / d discriminator parameters
    fake_grad: np.ndarray  # d gen_loss / d fake batch (through the frozen D)


def gan_loss(real_batch, fake_batch, disc: Mlp2) -> GanResult:
    """Adversarial objective for one space.

    The discriminator descends ``disc_loss``; the generator that produced
    ``fake_batch`` descends ``gen_loss`` using ``fake_grad`` as upstream.
    Scores are clamped away from 0 and 1 before the logs, with zero
    gradient in the clamped region.
    """
    real = np.atleast_2d(np.asarray(real_batch, dtype=np.float64))
    fake = np.atleast_2d(np.asarray(fake_batch, dtype=np.float64))
    p_real = forward(disc, real)
    p_fake = forward(disc, fake)
    if p_real.shape[1] != 1:
        raise DimMismatch("discriminator must output a single score")
    pr = p_real[:, 0]
    pf = p_fake[:, 0]
    ok_r = (pr > LOG_CLAMP) & (pr < 1.0 - LOG_CLAMP)
    ok_f = (pf > LOG_CLAMP) & (pf < 1.0 - LOG_CLAMP)
    pr_c = np.clip(pr, LOG_CLAMP, 1.0 - LOG_CLAMP)
    pf_c = np.clip(pf, LOG_CLAMP, 1.0 - LOG_CLAMP)
    n_r, n_f = pr.size, pf.size

    value = float(np.mean(np.log(pr_c)) + np.mean(np.log(1.0 - pf_c)))
    gen_loss = float(-np.mean(np.log(pf_c)))

    # disc_loss = -mean log D(real) - mean log(1 - D(fake))
    up_real = np.where(ok_r, -1.0 / (n_r * pr_c), 0.0)[:, None]
    up_fake = np.where(ok_f, 1.0 / (n_f * (1.0 - pf_c)), 0.0)[:, None]
    tape_real, _ = backward(disc, real, up_real)
    tape_fake, _ = backward(disc, fake, up_fake)
    disc_tape = tape_real.add_(tape_fake)

    up_gen = np.where(ok_f, -1.0 / (n_f * pf_c), 0.0)[:, None]
    _, fake_grad = backward(disc, fake, up_gen)
    return GanResult(value, -value, gen_loss, disc_tape, fake_grad)


@dataclass
class CycleResult:
    value: float
    grad_text_cycled: np.ndarray | None
    grad_image_cycled: np.ndarray | None


def cycle_loss(
    text_batch=None,
    text_cycled=None,
    image_batch=None,
    image_cycled=None,
    norm: str = "l2",
) -> CycleResult:
    """Round-trip reconstruction penalty, averaged per side then summed.

    ``norm="l2"`` is the Euclidean norm of each residual; ``"l2_squared"``
    its square. Either side may be omitted.
    """
    if norm not in ("l2", "l2_squared"):
        raise ValueError(f"unknown cycle norm {norm!r}")

    def side(target, cycled):
        if target is None and cycled is None:
            return 0.0, None
        t = np.atleast_2d(np.asarray(target, dtype=np.float64))
        c = np.atleast_2d(np.asarray(cycled, dtype=np.float64))
        if t.shape != c.shape:
            raise DimMismatch(f"cycle shapes {t.shape} vs {c.shape}")
        n = t.shape[0]
        r = c - t
        norms = np.linalg.norm(r, axis=1)
        if norm == "l2":
            val = float(np.mean(norms))
            safe = np.where(norms > 0.0, norms, 1.0)[:, None]
            grad = np.where(norms[:, None] > 0.0, r / safe, 0.0) / n
        else:
            val = float(np.mean(norms**2))
            grad = 2.0 * r / n
        return val, grad

    v_t, g_t = side(text_batch, text_cycled)
    v_v, g_v = side(image_batch, image_cycled)
    return CycleResult(v_t + v_v, g_t, g_v)


def cgan_loss(
    gan_value_text_side: float,
    gan_value_image_side: float,
    cycle_value: float,
    cycle_weight: float,
) -> float:
    """Combined transductive objective: both adversarial values plus the
    weighted cycle penalty."""
    return gan_value_text_side + gan_value_image_side + cycle_weight * cycle_value
