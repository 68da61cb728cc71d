"""Small trainable two-layer perceptrons with hand-written gradients.

Mappers use a tanh hidden layer and a linear output; discriminators use a
leaky-rectifier hidden layer and a sigmoid output. Everything is float64
numpy, deterministic, and cheap enough to verify against central finite
differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, NonFiniteGradient
from .numerics import SeededRng

LEAKY_SLOPE = 0.2
FD_EPSILON = 1e-5


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return z
    if name == "tanh":
        return np.tanh(z)
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    raise ValueError(f"unknown activation {name!r}")


def _activate_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return np.ones_like(z)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    if name == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 - s)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Mlp2:
    """Two affine layers with configurable nonlinearities."""

    w1: np.ndarray  # (hidden, in)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (out, hidden)
    b2: np.ndarray  # (out,)
    hidden_activation: str = "tanh"
    output_activation: str = "linear"

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self) -> "Mlp2":
        return Mlp2(
            self.w1.copy(),
            self.b1.copy(),
            self.w2.copy(),
            self.b2.copy(),
            self.hidden_activation,
            self.output_activation,
        )


@dataclass
class GradTape:
    """Per-parameter gradient buffers shaped like the owning network."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros_like(cls, net: Mlp2) -> "GradTape":
        return cls(
            np.zeros_like(net.w1),
            np.zeros_like(net.b1),
            np.zeros_like(net.w2),
            np.zeros_like(net.b2),
        )

    def add_(self, other: "GradTape") -> "GradTape":
        self.w1 += other.w1
        self.b1 += other.b1
        self.w2 += other.w2
        self.b2 += other.b2
        return self

    def buffers(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def init_mlp(
    in_dim: int,
    hidden_dim: int,
    out_dim: int,
    rng: SeededRng,
    hidden_activation: str = "tanh",
    output_activation: str = "linear",
) -> Mlp2:
    """Weights uniform in +-sqrt(6/(fan_in+fan_out)), biases zero."""
    lim1 = np.sqrt(6.0 / (in_dim + hidden_dim))
    lim2 = np.sqrt(6.0 / (hidden_dim + out_dim))
    return Mlp2(
        w1=rng.uniform(-lim1, lim1, size=(hidden_dim, in_dim)),
        b1=np.zeros(hidden_dim),
        w2=rng.uniform(-lim2, lim2, size=(out_dim, hidden_dim)),
        b2=np.zeros(out_dim),
        hidden_activation=hidden_activation,
        output_activation=output_activation,
    )


def identity_mlp(dim: int) -> Mlp2:
    """Linear network computing the identity; handy in tests."""
    return Mlp2(
        w1=np.eye(dim),
        b1=np.zeros(dim),
        w2=np.eye(dim),
        b2=np.zeros(dim),
        hidden_activation="linear",
        output_activation="linear",
    )


def near_identity_mlp(
    dim: int, hidden_dim: int, rng: SeededRng, alpha: float = 0.1
) -> Mlp2:
    """Trainable tanh network starting within O(alpha^2) of the identity.

    The first layer is a small random full-rank map, the second its left
    inverse scaled back up, so the composition is the identity up to the
    cubic tanh term. Mappers refine an existing alignment, so starting at
    the identity keeps early training in the aligned basin instead of
    re-deriving the correspondence from scratch.
    """
    if hidden_dim < dim:
        raise DimMismatch("near-identity init needs hidden_dim >= dim")
    w1 = alpha * rng.normal(size=(hidden_dim, dim)) / np.sqrt(dim)
    w2 = np.linalg.pinv(w1)
    return Mlp2(
        w1=w1,
        b1=np.zeros(hidden_dim),
        w2=w2,
        b2=np.zeros(dim),
        hidden_activation="tanh",
        output_activation="linear",
    )


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise DimMismatch(f"expected vector or batch, got shape {x.shape}")


def forward(net: Mlp2, x) -> np.ndarray:
    """Apply the network to a vector or a batch of row vectors."""
    xb, squeeze = _as_batch(x)
    if xb.shape[1] != net.in_dim:
        raise DimMismatch(f"input dim {xb.shape[1]}, net expects {net.in_dim}")
    h = _activate(net.hidden_activation, xb @ net.w1.T + net.b1)
    out = _activate(net.output_activation, h @ net.w2.T + net.b2)
    return out[0] if squeeze else out


def backward(net: Mlp2, x, upstream) -> tuple[GradTape, np.ndarray]:
    """Gradients of sum_i <upstream_i, net(x_i)> w.r.t. parameters and x."""
    xb, squeeze = _as_batch(x)
    ub, _ = _as_batch(upstream)
    if xb.shape[0] != ub.shape[0]:
        raise DimMismatch(f"batch sizes {xb.shape[0]} vs {ub.shape[0]}")
    if xb.shape[1] != net.in_dim or ub.shape[1] != net.out_dim:
        raise DimMismatch(
            f"shapes ({xb.shape[1]}, {ub.shape[1]}) vs net ({net.in_dim}, {net.out_dim})"
        )
    z1 = xb @ net.w1.T + net.b1
    h = _activate(net.hidden_activation, z1)
    z2 = h @ net.w2.T + net.b2

    d_z2 = ub * _activate_grad(net.output_activation, z2)
    tape = GradTape(
        w1=np.zeros_like(net.w1),
        b1=np.zeros_like(net.b1),
        w2=d_z2.T @ h,
        b2=d_z2.sum(axis=0),
    )
    d_h = d_z2 @ net.w2
    d_z1 = d_h * _activate_grad(net.hidden_activation, z1)
    tape.w1 = d_z1.T @ xb
    tape.b1 = d_z1.sum(axis=0)
    d_x = d_z1 @ net.w1
    return tape, (d_x[0] if squeeze else d_x)


@dataclass
class OptimState:
    """Adaptive-moment optimizer state for one network."""

    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] | None = None
    v: dict[str, np.ndarray] | None = None

    @classmethod
    def for_net(cls, net: Mlp2, lr=1e-4, beta1=0.5, beta2=0.999, epsilon=1e-8):
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
            m={k: np.zeros_like(p) for k, p in net.params().items()},
            v={k: np.zeros_like(p) for k, p in net.params().items()},
        )


def optim_step(net: Mlp2, tape: GradTape, state: OptimState):
    """One bias-corrected adaptive-moment update, in place."""
    grads = tape.buffers()
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or Inf")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in net.params().items():
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return net, state


@dataclass
class MappingStack:
    """Ordered maps composed on top of a base representation.

    ``base`` names the space the stack consumes: image stacks start from
    the convex-combination image embedding, text stacks from raw word
    vectors. An empty stack is the identity.
    """

    base: str
    maps: list[Mlp2] | None = None

    def __post_init__(self):
        if self.maps is None:
            self.maps = []

    def append(self, net: Mlp2) -> None:
        if self.maps and self.maps[-1].out_dim != net.in_dim:
            raise DimMismatch(
                f"stack output dim {self.maps[-1].out_dim} != map input dim {net.in_dim}"
            )
        self.maps.append(net)

    def copy(self) -> "MappingStack":
        return MappingStack(self.base, [m.copy() for m in self.maps])

    def __len__(self) -> int:
        return len(self.maps)


def apply_stack(stack: MappingStack, x) -> np.ndarray:
    """Run a vector or batch through every map of the stack, in order."""
    out = np.asarray(x, dtype=np.float64)
    for net in stack.maps:
        out = forward(net, out)
    return out


def grad_check(nets, loss_fn, epsilon: float = FD_EPSILON, value_fn=None) -> float:
    """Max relative error of analytic gradients vs central finite differences.

    ``nets`` is an Mlp2 or a dict of named Mlp2s; ``loss_fn(nets)`` must
    return ``(value, tapes)`` with one GradTape per net, computed at the
    nets' current parameters. ``value_fn(nets)``, when given, evaluates the
    loss value alone and is used for the perturbed evaluations.
    """
    single = isinstance(nets, Mlp2)
    net_map = {"net": nets} if single else dict(nets)
    arg = nets if single else net_map

    _, tapes = loss_fn(arg)
    if single:
        tapes = {"net": tapes}
    if value_fn is None:
        value_fn = lambda n: loss_fn(n)[0]

    worst = 0.0
    for name, net in net_map.items():
        tape_buffers = tapes[name].buffers()
        for pname, param in net.params().items():
            analytic = tape_buffers[pname].reshape(-1)
            flat = param.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                up = value_fn(arg)
                flat[i] = orig - epsilon
                down = value_fn(arg)
                flat[i] = orig
                numeric = (up - down) / (2.0 * epsilon)
                denom = max(1e-8, abs(analytic[i]) + abs(numeric))
                worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
