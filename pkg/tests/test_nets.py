import numpy as np
import pytest

from crossmodal.errors import DimMismatch, NonFiniteGradient
from crossmodal.nets import (
    GradTape,
    Mlp2,
    backward,
    forward,
    grad_check,
    identity_mlp,
    init_mlp,
    optim_step,
    OptimState,
)
from crossmodal.numerics import SeededRng


class TestForward:
    def test_zero_net_outputs_zero(self):
        net = Mlp2(np.zeros((3, 2)), np.zeros(3), np.zeros((2, 3)), np.zeros(2))
        np.testing.assert_array_equal(forward(net, [1.0, -2.0]), [0.0, 0.0])

    def test_identity_net(self):
        net = identity_mlp(4)
        x = np.array([0.5, -1.0, 2.0, 0.0])
        np.testing.assert_array_equal(forward(net, x), x)

    def test_hand_computed_2_2_1(self):
        net = Mlp2(
            w1=np.array([[0.1, -0.2], [0.3, 0.4]]),
            b1=np.array([0.05, -0.05]),
            w2=np.array([[0.7, -0.6]]),
            b2=np.array([0.2]),
            hidden_activation="linear",
            output_activation="linear",
        )
        x = np.array([1.0, 2.0])
        h = np.array([0.1 * 1 - 0.2 * 2 + 0.05, 0.3 * 1 + 0.4 * 2 - 0.05])
        expected = 0.7 * h[0] - 0.6 * h[1] + 0.2
        assert forward(net, x)[0] == pytest.approx(expected, abs=1e-12)

    def test_batch_matches_rows(self):
        rng = SeededRng(0)
        net = init_mlp(3, 5, 2, rng)
        xs = SeededRng(1).normal(size=(6, 3))
        batch = forward(net, xs)
        for i in range(6):
            np.testing.assert_allclose(batch[i], forward(net, xs[i]), atol=1e-14)

    def test_dim_mismatch(self):
        net = identity_mlp(3)
        with pytest.raises(DimMismatch):
            forward(net, [1.0, 2.0])


class TestBackward:
    def test_zero_upstream(self):
        net = init_mlp(3, 4, 2, SeededRng(2))
        tape, dx = backward(net, SeededRng(3).normal(size=3), np.zeros(2))
        for buf in tape.buffers().values():
            assert not buf.any()
        assert not dx.any()

    def test_linear_w2_closed_form(self):
        net = init_mlp(3, 4, 2, SeededRng(4), hidden_activation="linear")
        x = SeededRng(5).normal(size=3)
        u = np.array([1.5, -0.5])
        tape, _ = backward(net, x, u)
        h = net.w1 @ x + net.b1
        np.testing.assert_allclose(tape.w2, np.outer(u, h), atol=1e-12)

    @pytest.mark.parametrize("hidden", ["tanh", "leaky_relu", "linear"])
    @pytest.mark.parametrize("output", ["linear", "sigmoid"])
    def test_matches_finite_differences(self, hidden, output):
        rng = SeededRng(6)
        net = init_mlp(4, 3, 2, rng, hidden_activation=hidden, output_activation=output)
        x = SeededRng(7).normal(size=(5, 4))
        u = SeededRng(8).normal(size=(5, 2))

        def loss(n):
            value = float(np.sum(forward(n, x) * u))
            tape, _ = backward(n, x, u)
            return value, tape

        assert grad_check(net, loss) < 1e-4

    def test_input_gradient_matches_finite_differences(self):
        net = init_mlp(3, 4, 2, SeededRng(9))
        x = SeededRng(10).normal(size=3)
        u = SeededRng(11).normal(size=2)
        _, dx = backward(net, x, u)
        eps = 1e-6
        for i in range(3):
            xp, xm = x.copy(), x.copy()
            xp[i] += eps
            xm[i] -= eps
            num = (np.dot(forward(net, xp), u) - np.dot(forward(net, xm), u)) / (2 * eps)
            assert dx[i] == pytest.approx(num, rel=1e-5, abs=1e-8)

    def test_deterministic(self):
        net = init_mlp(3, 4, 2, SeededRng(12))
        x = SeededRng(13).normal(size=(4, 3))
        u = SeededRng(14).normal(size=(4, 2))
        t1, d1 = backward(net, x, u)
        t2, d2 = backward(net, x, u)
        np.testing.assert_array_equal(t1.w1, t2.w1)
        np.testing.assert_array_equal(d1, d2)


class TestOptimStep:
    def test_zero_gradient_is_noop(self):
        net = init_mlp(2, 3, 2, SeededRng(15))
        before = {k: p.copy() for k, p in net.params().items()}
        optim_step(net, GradTape.zeros_like(net), OptimState.for_net(net, lr=0.1))
        for k, p in net.params().items():
            np.testing.assert_array_equal(p, before[k])

    def test_first_step_moves_by_lr(self):
        # With constant g=1 and bias correction, the first update is
        # exactly lr/(1+eps), within 1e-9 of lr for small lr.
        net = Mlp2(np.array([[1.0]]), np.array([0.0]), np.array([[1.0]]), np.array([0.0]))
        tape = GradTape(np.array([[1.0]]), np.array([0.0]), np.array([[0.0]]), np.array([0.0]))
        lr = 1e-4
        optim_step(net, tape, OptimState.for_net(net, lr=lr))
        assert net.w1[0, 0] == pytest.approx(1.0 - lr, abs=1e-9)

    def test_lr_zero_identity(self):
        net = init_mlp(2, 3, 1, SeededRng(16))
        tape, _ = backward(net, SeededRng(17).normal(size=2), np.ones(1))
        before = {k: p.copy() for k, p in net.params().items()}
        optim_step(net, tape, OptimState.for_net(net, lr=0.0))
        for k, p in net.params().items():
            np.testing.assert_array_equal(p, before[k])

    def test_replay_determinism(self):
        def run():
            net = init_mlp(2, 3, 1, SeededRng(18))
            state = OptimState.for_net(net, lr=0.01)
            x = SeededRng(19).normal(size=(4, 2))
            for _ in range(5):
                tape, _ = backward(net, x, np.ones((4, 1)))
                optim_step(net, tape, state)
            return net

        a, b = run(), run()
        for k in a.params():
            np.testing.assert_array_equal(a.params()[k], b.params()[k])

    def test_non_finite_gradient_rejected(self):
        net = init_mlp(2, 2, 1, SeededRng(20))
        tape = GradTape.zeros_like(net)
        tape.w1[0, 0] = np.nan
        with pytest.raises(NonFiniteGradient):
            optim_step(net, tape, OptimState.for_net(net))


class TestGradCheck:
    def test_quadratic_on_linear_net(self):
        net = init_mlp(3, 3, 2, SeededRng(21), hidden_activation="linear")
        x = SeededRng(22).normal(size=(4, 3))
        target = SeededRng(23).normal(size=(4, 2))

        def loss(n):
            out = forward(n, x)
            diff = out - target
            value = float(np.mean(np.sum(diff * diff, axis=1)))
            tape, _ = backward(n, x, 2.0 * diff / x.shape[0])
            return value, tape

        assert grad_check(net, loss) < 1e-7

    def test_multi_net_composition(self):
        a = init_mlp(3, 4, 3, SeededRng(24))
        b = init_mlp(3, 4, 2, SeededRng(25))
        x = SeededRng(26).normal(size=(3, 3))

        def loss(nets):
            mid = forward(nets["a"], x)
            out = forward(nets["b"], mid)
            value = float(np.sum(out * out))
            tape_b, d_mid = backward(nets["b"], mid, 2.0 * out)
            tape_a, _ = backward(nets["a"], x, d_mid)
            return value, {"a": tape_a, "b": tape_b}

        assert grad_check({"a": a, "b": b}, loss) < 1e-4
