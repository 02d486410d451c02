import numpy as np
import pytest

from carbonopt.nn import (
    AdamState,
    ArchitectureMismatchError,
    MlpNetwork,
    ShapeMismatchError,
    adam_step,
    backward,
    clone_network,
    forward,
    init_adam,
    init_mlp,
    soft_update,
)


def finite_difference_param_grads(net, x, output_grad, h=1e-5):
    """Central finite differences of output_grad . f(x) over every parameter."""
    grads = []
    for p in net.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            fp = forward(net, x)
            p[idx] = old - h
            fm = forward(net, x)
            p[idx] = old
            g[idx] = float(np.dot(output_grad, fp - fm)) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(a, b, floor=1e-6):
    a = np.asarray(a)
    b = np.asarray(b)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))


class TestForward:
    def test_zero_weights_returns_bias(self):
        rng = np.random.default_rng(0)
        net = init_mlp([3, 4], rng)
        net.weights[0][:] = 0.0
        net.biases[0][:] = [1.0, -2.0, 0.5, 3.0]
        out = forward(net, np.array([10.0, -5.0, 2.0]))
        np.testing.assert_array_equal(out, [1.0, -2.0, 0.5, 3.0])

    def test_single_layer_affine(self):
        net = MlpNetwork([1, 1], [np.array([[2.0]])], [np.array([1.0])])
        assert forward(net, np.array([3.0])) == pytest.approx([7.0], abs=0)

    def test_matches_straight_line_reimplementation(self):
        # independent oracle: explicit matrix algebra, no shared code path
        rng = np.random.default_rng(7)
        net = init_mlp([4, 8, 6, 3], rng, hidden_activation="mish", output_activation="tanh")
        x = rng.standard_normal(4)
        h = x
        for i in range(2):
            z = net.weights[i] @ h + net.biases[i]
            sp = np.log1p(np.exp(z))
            h = z * np.tanh(sp)
        expected = np.tanh(net.weights[2] @ h + net.biases[2])
        assert np.allclose(forward(net, x), expected, atol=1e-12, rtol=0)

    def test_batched_rows_match_single(self):
        rng = np.random.default_rng(3)
        net = init_mlp([5, 7, 2], rng, hidden_activation="relu")
        xs = rng.standard_normal((6, 5))
        batch = forward(net, xs)
        # gemm vs gemv round differently; agreement is to rounding, not bits
        for i in range(6):
            np.testing.assert_allclose(batch[i], forward(net, xs[i]), atol=1e-12, rtol=0)

    def test_shape_mismatch_names_dimensions(self):
        net = init_mlp([3, 2], np.random.default_rng(0))
        with pytest.raises(ShapeMismatchError, match=r"expected \(\.\.\., 3\)"):
            forward(net, np.zeros(4))


class TestBackward:
    def test_zero_output_grad_gives_zero_grads(self):
        rng = np.random.default_rng(1)
        net = init_mlp([3, 5, 2], rng, hidden_activation="tanh")
        grads, gin = backward(net, rng.standard_normal(3), np.zeros(2))
        assert all(np.all(p == 0.0) for p in grads.parameters())
        assert np.all(gin == 0.0)

    def test_scalar_tanh_net(self):
        # f(x) = tanh(w x) at w=1, x=0: df/dw = 0, df/dx = tanh'(0) = 1
        net = MlpNetwork([1, 1], [np.array([[1.0]])], [np.array([0.0])],
                         output_activation="tanh")
        grads, gin = backward(net, np.array([0.0]), np.array([1.0]))
        assert grads.weights[0][0, 0] == 0.0
        assert grads.biases[0][0] == pytest.approx(1.0)
        assert gin[0] == pytest.approx(1.0)

    @pytest.mark.parametrize("hidden,output", [
        ("relu", "identity"), ("tanh", "tanh"), ("mish", "identity"),
    ])
    def test_param_grads_match_finite_differences(self, hidden, output):
        rng = np.random.default_rng(11)
        net = init_mlp([4, 6, 5, 2], rng, hidden_activation=hidden, output_activation=output)
        x = rng.standard_normal(4)
        gout = rng.standard_normal(2)
        grads, _ = backward(net, x, gout)
        fd = finite_difference_param_grads(net, x, gout)
        for analytic, numeric in zip(grads.parameters(), fd):
            assert max_rel_err(analytic, numeric) < 1e-4

    def test_batched_param_grads_sum_over_rows(self):
        rng = np.random.default_rng(5)
        net = init_mlp([3, 4, 2], rng, hidden_activation="mish")
        xs = rng.standard_normal((4, 3))
        gouts = rng.standard_normal((4, 2))
        batch_grads, batch_gin = backward(net, xs, gouts)
        acc = [np.zeros_like(p) for p in net.parameters()]
        for i in range(4):
            g, gin = backward(net, xs[i], gouts[i])
            for a, p in zip(acc, g.parameters()):
                a += p
            assert np.allclose(batch_gin[i], gin, atol=1e-14)
        for a, b in zip(acc, batch_grads.parameters()):
            assert np.allclose(a, b, atol=1e-12)

    def test_directional_derivative_consistency(self):
        rng = np.random.default_rng(9)
        net = init_mlp([5, 8, 3], rng, hidden_activation="tanh")
        x = rng.standard_normal(5)
        gout = rng.standard_normal(3)
        _, gin = backward(net, x, gout)
        v = rng.standard_normal(5)
        v /= np.linalg.norm(v)
        h = 1e-5
        central = float(np.dot(gout, forward(net, x + h * v) - forward(net, x - h * v))) / (2 * h)
        assert central == pytest.approx(float(gin @ v), abs=1e-6)


class TestAdam:
    def test_first_step_is_signed_learning_rate(self):
        p = np.array([1.0, -2.0, 3.0])
        g = np.array([10.0, -4.0, 0.5])  # |g| >> epsilon
        state = init_adam([p], learning_rate=1e-2)
        adam_step([p], [g], state)
        assert np.allclose(p, [1.0 - 1e-2, -2.0 + 1e-2, 3.0 - 1e-2], atol=1e-9)

    def test_zero_grad_zero_moments_leaves_params(self):
        p = np.array([1.5, -0.5])
        state = init_adam([p], learning_rate=0.1)
        adam_step([p], [np.zeros(2)], state)
        np.testing.assert_array_equal(p, [1.5, -0.5])

    def test_two_steps_match_scalar_recurrence(self):
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
        p = np.array([0.7])
        g = np.array([0.3])
        state = init_adam([p], learning_rate=lr, beta1=b1, beta2=b2, epsilon=eps)
        adam_step([p], [g.copy()], state)
        adam_step([p], [g.copy()], state)

        # hand-rolled recurrence
        ref, m, v = 0.7, 0.0, 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * 0.3
            v = b2 * v + (1 - b2) * 0.3**2
            ref -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        assert p[0] == pytest.approx(ref, abs=1e-12)

    def test_gradient_shape_mismatch_raises(self):
        p = np.zeros(3)
        state = init_adam([p])
        with pytest.raises(ShapeMismatchError):
            adam_step([p], [np.zeros(4)], state)


class TestSoftUpdate:
    def make_pair(self):
        rng = np.random.default_rng(2)
        src = init_mlp([2, 3, 1], rng)
        tgt = init_mlp([2, 3, 1], rng)
        return tgt, src

    def test_tau_one_copies_source(self):
        tgt, src = self.make_pair()
        soft_update(tgt, src, 1.0)
        for t, s in zip(tgt.parameters(), src.parameters()):
            np.testing.assert_array_equal(t, s)

    def test_tau_half_midpoint(self):
        tgt, src = self.make_pair()
        for t in tgt.parameters():
            t[:] = 0.0
        for s in src.parameters():
            s[:] = 2.0
        soft_update(tgt, src, 0.5)
        for t in tgt.parameters():
            np.testing.assert_array_equal(t, np.ones_like(t))

    def test_repeated_updates_converge_geometrically(self):
        tgt, src = self.make_pair()
        start = [t.copy() for t in tgt.parameters()]
        for _ in range(50):
            soft_update(tgt, src, 0.1)
        # closed form: t_k = s + (1 - tau)^k (t_0 - s)
        for t, s, t0 in zip(tgt.parameters(), src.parameters(), start):
            expected = s + 0.9**50 * (t0 - s)
            assert np.allclose(t, expected, atol=1e-12)

    def test_architecture_mismatch_raises(self):
        rng = np.random.default_rng(4)
        a = init_mlp([2, 3, 1], rng)
        b = init_mlp([2, 4, 1], rng)
        with pytest.raises(ArchitectureMismatchError):
            soft_update(a, b, 0.5)

    def test_tau_out_of_range_raises(self):
        tgt, src = self.make_pair()
        with pytest.raises(ValueError):
            soft_update(tgt, src, 0.0)


class TestDeterminism:
    def test_identical_seed_identical_weights(self):
        a = init_mlp([4, 16, 2], np.random.default_rng(123), hidden_activation="mish")
        b = init_mlp([4, 16, 2], np.random.default_rng(123), hidden_activation="mish")
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)

    def test_clone_is_deep(self):
        net = init_mlp([2, 2], np.random.default_rng(0))
        dup = clone_network(net)
        dup.weights[0][0, 0] += 1.0
        assert net.weights[0][0, 0] != dup.weights[0][0, 0]
