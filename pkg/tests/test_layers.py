import numpy as np
import pytest

from tfcse.errors import ShapeError, StateError
from tfcse.gradcheck import check_layer
from tfcse.layers import BatchNorm, BiGru, Conv2d, Fc, MaxPoolFreq, Relu

LAYER_TOL = 1e-5


def rng64(seed=0):
    return np.random.default_rng(seed)


class TestConv2dForward:
    def test_single_tap(self):
        conv = Conv2d(1, 1, dtype=np.float64, rng=rng64())
        conv.weights.value[...] = 0.0
        conv.weights.value[1, 1, 0, 0] = 2.5
        conv.bias.value[...] = 0.75
        x = np.full((1, 1, 1, 1), 3.0)
        out = conv.forward(x)
        assert out[0, 0, 0, 0] == pytest.approx(3.0 * 2.5 + 0.75)

    def test_all_zero_weights(self):
        conv = Conv2d(2, 3, dtype=np.float64, rng=rng64())
        conv.weights.value[...] = 0.0
        conv.bias.value[...] = 0.0
        out = conv.forward(np.random.default_rng(1).uniform(-1, 1, (2, 4, 4, 2)))
        np.testing.assert_array_equal(out, np.zeros((2, 4, 4, 3)))

    def test_zero_padding_edge_counts(self):
        conv = Conv2d(1, 1, dtype=np.float64, rng=rng64())
        conv.weights.value[...] = 1.0
        conv.bias.value[...] = 0.0
        out = conv.forward(np.ones((1, 3, 3, 1)))
        assert out[0, 1, 1, 0] == pytest.approx(9.0)
        assert out[0, 0, 0, 0] == pytest.approx(4.0)

    def test_preserves_time_and_freq(self):
        conv = Conv2d(4, 8, dtype=np.float64, rng=rng64())
        out = conv.forward(np.zeros((2, 7, 5, 4)))
        assert out.shape == (2, 7, 5, 8)

    def test_channel_mismatch(self):
        conv = Conv2d(4, 8)
        with pytest.raises(ShapeError):
            conv.forward(np.zeros((1, 4, 4, 3)))


class TestMaxPoolFreq:
    def test_window_of_eight(self):
        pool = MaxPoolFreq(8)
        x = np.arange(1.0, 9.0).reshape(1, 1, 8, 1)
        out = pool.forward(x)
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == pytest.approx(8.0)

    def test_shape_reduction(self):
        pool = MaxPoolFreq(8)
        out = pool.forward(np.zeros((1, 4, 256, 3)))
        assert out.shape == (1, 4, 32, 3)

    def test_constant_input(self):
        pool = MaxPoolFreq(4)
        out = pool.forward(np.full((2, 3, 8, 2), 1.5))
        np.testing.assert_array_equal(out, np.full((2, 3, 2, 2), 1.5))

    def test_non_divisible_rejected(self):
        with pytest.raises(ValueError):
            MaxPoolFreq(8).forward(np.zeros((1, 2, 12, 1)))

    def test_tie_gradient_goes_to_first(self):
        pool = MaxPoolFreq(4)
        x = np.array([[[[1.0], [3.0], [3.0], [0.0]]]])
        pool.forward(x, cache=True)
        grad = pool.backward(np.ones((1, 1, 1, 1)))
        np.testing.assert_array_equal(grad[0, 0, :, 0], [0.0, 1.0, 0.0, 0.0])


class TestBatchNorm:
    def test_eval_identity_with_unit_stats(self):
        bn = BatchNorm(3, dtype=np.float64)
        bn.initialized = True
        x = np.random.default_rng(2).uniform(-1, 1, (2, 4, 5, 3))
        np.testing.assert_allclose(bn.forward(x, train=False), x, atol=1e-4)

    def test_train_normalises_to_beta_and_gamma(self):
        bn = BatchNorm(2, dtype=np.float64)
        bn.beta.value[:] = [1.0, -2.0]
        x = np.random.default_rng(3).normal(3.0, 2.0, (4, 6, 5, 2))
        out = bn.forward(x, train=True)
        np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), [1.0, -2.0], atol=1e-6)
        np.testing.assert_allclose(out.var(axis=(0, 1, 2)), 1.0, atol=1e-3)

    def test_gamma_zero_gives_beta(self):
        bn = BatchNorm(2, dtype=np.float64)
        bn.gamma.value[:] = 0.0
        bn.beta.value[:] = [0.5, 0.25]
        out = bn.forward(np.random.default_rng(4).uniform(-1, 1, (2, 3, 3, 2)), train=True)
        np.testing.assert_allclose(out[..., 0], 0.5)
        np.testing.assert_allclose(out[..., 1], 0.25)

    def test_eval_before_stats_raises(self):
        with pytest.raises(StateError):
            BatchNorm(2).forward(np.zeros((1, 2, 2, 2)), train=False)

    def test_running_stats_move_toward_batch(self):
        bn = BatchNorm(1, dtype=np.float64)
        x = np.full((2, 2, 2, 1), 10.0)
        bn.forward(x, train=True)
        assert bn.running_mean[0] == pytest.approx(0.9 * 0.0 + 0.1 * 10.0)


class TestBiGru:
    def test_all_zero_parameters_give_zero_output(self):
        gru = BiGru(3, 4, dtype=np.float64, rng=rng64())
        for _, p in gru.parameters():
            p.value[...] = 0.0
        out = gru.forward(np.random.default_rng(5).uniform(-1, 1, (2, 6, 3)))
        np.testing.assert_array_equal(out, np.zeros((2, 6, 4)))

    def test_zero_weights_halve_initial_state(self):
        # single direction: z = sigmoid(0) = 0.5, candidate = 0, so h1 = 0.5*h0
        from tfcse.layers import _GruDirection
        d = _GruDirection(2, 3, np.float64, rng64())
        for gate in d.GATES:
            d.w[gate].value[...] = 0.0
            d.u[gate].value[...] = 0.0
            d.b[gate].value[...] = 0.0
        x = np.zeros((1, 1, 2))
        # run one step by hand with nonzero initial state
        import tfcse.tensor as tensor
        h0 = np.array([[2.0, -4.0, 6.0]])
        z = tensor.sigmoid(x[:, 0, :] @ d.w["z"].value + h0 @ d.u["z"].value + d.b["z"].value)
        hc = np.tanh(x[:, 0, :] @ d.w["h"].value + (tensor.sigmoid(h0 @ d.u["r"].value) * h0) @ d.u["h"].value)
        h1 = (1 - z) * h0 + z * hc
        np.testing.assert_allclose(h1, 0.5 * h0)

    def test_single_step_matches_scalar_recurrence(self):
        # independent oracle: per-unit scalar loop over the gate equations
        rng = np.random.default_rng(11)
        gru = BiGru(3, 2, dtype=np.float64, rng=rng64(8))
        x = rng.uniform(-1, 1, (1, 1, 3))
        out = gru.forward(x)

        def sigmoid_s(v):
            return 1.0 / (1.0 + np.exp(-v))

        def direction_step(d, xt):
            h = np.zeros(d.hidden_size)
            z = np.empty_like(h)
            r = np.empty_like(h)
            hc = np.empty_like(h)
            for j in range(d.hidden_size):
                az = sum(xt[i] * d.w["z"].value[i, j] for i in range(d.input_size)) + d.b["z"].value[j]
                ar = sum(xt[i] * d.w["r"].value[i, j] for i in range(d.input_size)) + d.b["r"].value[j]
                z[j] = sigmoid_s(az + sum(h[i] * d.u["z"].value[i, j] for i in range(d.hidden_size)))
                r[j] = sigmoid_s(ar + sum(h[i] * d.u["r"].value[i, j] for i in range(d.hidden_size)))
            for j in range(d.hidden_size):
                ah = sum(xt[i] * d.w["h"].value[i, j] for i in range(d.input_size)) + d.b["h"].value[j]
                ah += sum(r[i] * h[i] * d.u["h"].value[i, j] for i in range(d.hidden_size))
                hc[j] = np.tanh(ah)
            return (1 - z) * h + z * hc

        expected = direction_step(gru.fwd, x[0, 0]) + direction_step(gru.bwd, x[0, 0])
        np.testing.assert_allclose(out[0, 0], expected, atol=1e-12)

    def test_time_reversal_equivariance(self):
        # swapping the direction parameter sets and reversing time commute
        rng = np.random.default_rng(12)
        a = BiGru(3, 4, dtype=np.float64, rng=rng64(21))
        b = BiGru(3, 4, dtype=np.float64, rng=rng64(22))
        for gate in a.fwd.GATES:
            for attr in ("w", "u", "b"):
                getattr(b.fwd, attr)[gate].value[...] = getattr(a.bwd, attr)[gate].value
                getattr(b.bwd, attr)[gate].value[...] = getattr(a.fwd, attr)[gate].value
        x = rng.uniform(-1, 1, (2, 7, 3))
        np.testing.assert_allclose(a.forward(x), b.forward(x[:, ::-1, :])[:, ::-1, :],
                                   atol=1e-12)

    def test_input_width_checked(self):
        with pytest.raises(ShapeError):
            BiGru(3, 4).forward(np.zeros((1, 5, 2)))


class TestFc:
    def test_identity(self):
        fc = Fc(3, 3, dtype=np.float64, rng=rng64())
        fc.w.value[...] = np.eye(3)
        fc.b.value[...] = 0.0
        x = np.random.default_rng(6).uniform(-1, 1, (2, 4, 3))
        np.testing.assert_allclose(fc.forward(x), x)

    def test_zero_weights_sigmoid_is_half(self):
        fc = Fc(3, 2, activation="sigmoid", dtype=np.float64, rng=rng64())
        fc.w.value[...] = 0.0
        out = fc.forward(np.ones((1, 5, 3)))
        np.testing.assert_allclose(out, 0.5)

    def test_sigmoid_output_range(self):
        fc = Fc(4, 11, activation="sigmoid", dtype=np.float64, rng=rng64(3))
        out = fc.forward(np.random.default_rng(7).uniform(-5, 5, (2, 6, 4)))
        assert np.all(out > 0) and np.all(out < 1)


class TestGradients:
    """Finite-difference checks of inputs and all parameters, float64."""

    def setup_method(self):
        self.rng = np.random.default_rng(99)

    def assert_ok(self, errors):
        worst = max(errors.values())
        assert worst <= LAYER_TOL, f"worst error {worst:.3e} in {errors}"

    def test_relu(self):
        self.assert_ok(check_layer(Relu(), self.rng.uniform(-1, 1, (2, 3, 4, 2)), self.rng))

    def test_conv2d(self):
        layer = Conv2d(2, 3, dtype=np.float64, rng=rng64(31))
        self.assert_ok(check_layer(layer, self.rng.uniform(-1, 1, (2, 4, 5, 2)), self.rng))

    def test_maxpool(self):
        layer = MaxPoolFreq(2)
        self.assert_ok(check_layer(layer, self.rng.uniform(-1, 1, (2, 3, 6, 2)), self.rng))

    def test_batchnorm_train(self):
        layer = BatchNorm(3, dtype=np.float64)
        layer.gamma.value[:] = self.rng.uniform(0.5, 1.5, 3)
        layer.beta.value[:] = self.rng.uniform(-0.5, 0.5, 3)
        self.assert_ok(check_layer(layer, self.rng.uniform(-1, 1, (2, 3, 4, 3)), self.rng,
                                   train=True))

    def test_batchnorm_eval(self):
        layer = BatchNorm(3, dtype=np.float64)
        layer.forward(self.rng.uniform(-1, 1, (2, 3, 4, 3)), train=True)
        self.assert_ok(check_layer(layer, self.rng.uniform(-1, 1, (2, 3, 4, 3)), self.rng,
                                   train=False))

    def test_bigru(self):
        layer = BiGru(3, 4, dtype=np.float64, rng=rng64(32))
        x = self.rng.uniform(-1, 1, (2, 5, 3))
        out = layer.forward(x, cache=True)
        proj = self.rng.standard_normal(out.shape)
        layer.zero_grad()
        grad_in = layer.backward(proj)

        from tfcse.gradcheck import numeric_grad, rel_error
        def loss(v):
            return float(np.sum(proj * layer.forward(v, cache=False)))
        assert rel_error(grad_in, numeric_grad(loss, x)) <= LAYER_TOL
        for name, p in layer.parameters():
            def f(v, p=p):
                p.value[...] = v
                return float(np.sum(proj * layer.forward(x, cache=False)))
            original = p.value.copy()
            num = numeric_grad(f, p.value.copy())
            p.value[...] = original
            assert rel_error(p.grad, num) <= LAYER_TOL, name

    @pytest.mark.parametrize("activation", ["linear", "sigmoid"])
    def test_fc(self, activation):
        layer = Fc(3, 4, activation=activation, dtype=np.float64, rng=rng64(33))
        self.assert_ok(check_layer(layer, self.rng.uniform(-1, 1, (2, 5, 3)), self.rng))
