import numpy as np
import pytest

from cnnadapt import (
    ConfigError,
    ConvLayerSpec,
    HistoryBuffer,
    NetworkSpec,
    build_input_matrix,
    cnn_operator,
    forward,
    init_weights,
    pack_weights,
    unpack_weights,
)
from cnnadapt.presets import conv_network, dense_network, minimal_network


class TestCnnOperator:
    def test_all_ones_window_sum(self):
        # 2x2 all-ones filter over 3x2 all-ones input: each window sums 4
        out = cnn_operator(np.ones((3, 2)), [np.ones((2, 2))], np.zeros(1))
        np.testing.assert_array_equal(out, [[4.0], [4.0]])

    def test_bias_only(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(5, 3))
        filters = [np.zeros((2, 3)), np.zeros((2, 3))]
        out = cnn_operator(X, filters, np.array([1.5, -2.0]))
        np.testing.assert_array_equal(out, np.tile([1.5, -2.0], (4, 1)))

    def test_pattern_match(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        w = np.array([[1.0, 0.0], [0.0, 1.0]])
        out = cnn_operator(X, [w], np.zeros(1))
        np.testing.assert_array_equal(out, [[2.0], [0.0]])

    def test_output_shape(self):
        out = cnn_operator(np.ones((10, 6)),
                           [np.ones((5, 6))] * 2, np.zeros(2))
        assert out.shape == (6, 2)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            cnn_operator(np.ones((4, 3)), [np.ones((2, 2))], np.zeros(1))

    def test_filter_too_tall(self):
        with pytest.raises(ValueError):
            cnn_operator(np.ones((2, 3)), [np.ones((4, 3))], np.zeros(1))


class TestNetworkSpec:
    def test_cnn1_dimension_chain(self):
        spec = conv_network()
        shapes = spec.conv_shapes()
        assert shapes[0] == ((10, 6), (6, 2))
        assert shapes[1] == ((6, 2), (4, 2))
        assert spec.flat_shape() == (4, 2)
        assert spec.fc_dims() == [8, 8, 8, 2]

    def test_weight_counts(self):
        # by the segment formula: sum (l_j + 1) l_{j+1} + sum (p m + 1) q
        assert conv_network().weight_count() == 238
        assert dense_network().weight_count() == 246
        assert minimal_network().weight_count() == 8

    def test_broken_chain_reports_layer(self):
        with pytest.raises(ConfigError, match="conv layer 1"):
            NetworkSpec(10, 6, (ConvLayerSpec(5, 6, 2), ConvLayerSpec(3, 3, 2)),
                        (8, 2), 100.0, 0.01)

    def test_filter_taller_than_input(self):
        with pytest.raises(ConfigError, match="conv layer 0"):
            NetworkSpec(4, 6, (ConvLayerSpec(5, 6, 2),), (8, 2), 100.0, 0.01)


class TestPackUnpack:
    @pytest.mark.parametrize("spec_fn", [conv_network, dense_network,
                                         minimal_network])
    def test_round_trip(self, spec_fn):
        spec = spec_fn()
        rng = np.random.default_rng(3)
        theta = rng.normal(size=spec.weight_count())
        Vs, Ws, Bs = unpack_weights(theta, spec)
        np.testing.assert_array_equal(pack_weights(Vs, Ws, Bs, spec), theta)

    def test_segment_order(self):
        # FC matrices first (row by row), then filters, then conv biases
        spec = minimal_network()
        theta = np.arange(8.0)
        Vs, Ws, Bs = unpack_weights(theta, spec)
        np.testing.assert_array_equal(Vs[0], [[0.0], [1.0], [2.0]])
        np.testing.assert_array_equal(Ws[0][0], [[3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_array_equal(Bs[0], [7.0])

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            unpack_weights(np.zeros(10), minimal_network())


class TestForward:
    def test_zero_weights_zero_output(self):
        spec = conv_network()
        X = np.random.default_rng(4).normal(size=(10, 6))
        trace = forward(spec, np.zeros(spec.weight_count()), X)
        np.testing.assert_array_equal(trace.output, np.zeros(2))

    def test_dense_bias_propagation(self):
        # all-zero weights except the final matrix's constant-1 row: the
        # output equals that bias row
        spec = dense_network()
        theta = np.zeros(spec.weight_count())
        Vs, Ws, Bs = unpack_weights(theta, spec)
        Vs[-1][-1, :] = 2.5
        theta = pack_weights(Vs, Ws, Bs, spec)
        trace = forward(spec, theta, np.zeros((1, 6)))
        np.testing.assert_allclose(trace.output, [2.5, 2.5])

    def test_output_bound_from_last_layer(self):
        # tanh activations and the constant 1 are all <= 1 in magnitude,
        # so |output_i| <= l1 norm of the final matrix column
        spec = conv_network()
        rng = np.random.default_rng(5)
        for _ in range(10):
            theta = rng.uniform(-0.1, 0.1, spec.weight_count())
            X = rng.uniform(-1.0, 1.0, (10, 6))
            trace = forward(spec, theta, X)
            V_last = unpack_weights(theta, spec)[0][-1]
            bound = np.abs(V_last).sum(axis=0)
            assert np.all(np.abs(trace.output) <= bound + 1e-12)

    def test_deterministic(self):
        spec = conv_network()
        rng = np.random.default_rng(6)
        theta = rng.normal(size=spec.weight_count())
        X = rng.normal(size=(10, 6))
        t1 = forward(spec, theta, X)
        t2 = forward(spec, theta, X)
        np.testing.assert_array_equal(t1.output, t2.output)
        np.testing.assert_array_equal(t1.concat, t2.concat)

    def test_concat_is_colmajor_flatten_plus_one(self):
        spec = minimal_network()
        rng = np.random.default_rng(7)
        theta = rng.normal(size=spec.weight_count())
        X = rng.normal(size=(3, 2))
        trace = forward(spec, theta, X)
        flat = trace.conv_preacts[-1]
        np.testing.assert_array_equal(
            trace.concat, np.append(flat.T.reshape(-1), 1.0)
        )

    def test_dense_mode_squashes_rescaled_input(self):
        spec = dense_network()
        rng = np.random.default_rng(8)
        theta = rng.normal(size=spec.weight_count())
        xi = rng.normal(size=6) * 0.01
        trace = forward(spec, theta, xi.reshape(1, 6))
        expected = 100.0 * np.tanh(xi / 0.01)
        np.testing.assert_allclose(trace.concat[:-1], expected)

    def test_first_conv_activation_bound(self):
        # first stage is alpha1*tanh, so the first conv output is bounded
        # by p*m*alpha1*max|W| + max|B| whatever the input magnitude
        spec = conv_network()
        rng = np.random.default_rng(9)
        theta = rng.uniform(-0.1, 0.1, spec.weight_count())
        X = rng.normal(size=(10, 6)) * 1e6
        trace = forward(spec, theta, X)
        _, Ws, Bs = unpack_weights(theta, spec)
        bound = (5 * 6 * spec.alpha1 * max(np.abs(W).max() for W in Ws[0])
                 + np.abs(Bs[0]).max())
        assert np.abs(trace.conv_preacts[0]).max() <= bound + 1e-9

    def test_wrong_input_shape(self):
        spec = conv_network()
        with pytest.raises(ConfigError):
            forward(spec, np.zeros(spec.weight_count()), np.zeros((6, 10)))


class TestInitWeights:
    def test_range_and_determinism(self):
        spec = conv_network()
        a = init_weights(spec, np.random.default_rng(42))
        b = init_weights(spec, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)
        assert a.size == 238
        assert np.all(np.abs(a) < 0.1)


class TestInputMatrix:
    def _buffer(self, dt=0.001, depth=2000):
        return HistoryBuffer(6, dt, depth)

    def test_cold_start_zero_padded(self):
        spec = conv_network()
        buf = self._buffer()
        xi0 = 0.01 * np.arange(1.0, 7.0)
        buf.append(0.0, xi0)
        X = build_input_matrix(buf, 0.0, spec, 0.1)
        np.testing.assert_array_equal(X[0], xi0)
        np.testing.assert_array_equal(X[1:], np.zeros((9, 6)))

    def test_constant_signals_identical_rows(self):
        spec = conv_network()
        buf = self._buffer()
        xi = np.full(6, 0.3)
        steps = int(round(9 * 0.1 / 0.001))
        for n in range(steps + 1):
            buf.append(n * 0.001, xi)
        X = build_input_matrix(buf, steps * 0.001, spec, 0.1)
        np.testing.assert_allclose(X, np.tile(xi, (10, 1)))

    def test_lagged_rows_pick_right_samples(self):
        # sample recorded at t - k*stack_dt is the constant k: row k+1
        # of the stacked matrix must equal k
        spec = conv_network()
        dt = 0.001
        buf = self._buffer(dt=dt)
        t_now = 2.0
        steps = 1500
        for n in range(steps + 1):
            t = t_now - (steps - n) * dt
            lag = (t_now - t) / 0.1
            k = round(lag)
            value = float(k) if abs(lag - k) < 1e-9 else -1.0
            buf.append(t, np.full(6, value))
        X = build_input_matrix(buf, t_now, spec, 0.1)
        for k in range(10):
            np.testing.assert_allclose(X[k], np.full(6, float(k)))

    def test_dense_single_row(self):
        spec = dense_network()
        buf = self._buffer()
        xi = np.arange(6.0)
        buf.append(0.0, xi)
        X = build_input_matrix(buf, 0.0, spec, 0.1)
        assert X.shape == (1, 6)
        np.testing.assert_array_equal(X[0], xi)

    def test_dim_mismatch(self):
        with pytest.raises(ConfigError):
            build_input_matrix(HistoryBuffer(4, 0.001, 10), 0.0,
                               conv_network(), 0.1)
