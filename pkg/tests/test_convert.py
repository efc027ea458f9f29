"""Conversion-pipeline tests: quantization, batchnorm folding, thresholds."""

import logging

import numpy as np
import pytest

from siasim.convert import (
    AnnLayerParams,
    BatchNormStats,
    ConversionError,
    ThresholdUnderflowError,
    assign_threshold,
    convert_network,
    fold_batchnorm,
    quantize_weights,
    to_fixed_point,
    weight_saturation_fraction,
)
from siasim.neurons import QuantActParams


def batchnorm_reference(y, mean, var, eps, gamma, beta):
    """Direct normalization formula, the oracle the fold must reproduce."""
    return (y - mean) / np.sqrt(var + eps) * gamma + beta


class TestQuantizeWeights:
    def test_zero_maps_to_zero(self):
        assert quantize_weights(np.array([0.0]), 0.05)[0] == 0

    def test_exact_multiple(self):
        assert quantize_weights(np.array([0.1]), 0.05)[0] == 2

    def test_saturation_clamp(self):
        assert quantize_weights(np.array([100.0]), 0.05)[0] == 127
        assert quantize_weights(np.array([-100.0]), 0.05)[0] == -128

    def test_round_half_away_from_zero(self):
        w = np.array([0.125, -0.125])  # 2.5 quanta
        np.testing.assert_array_equal(quantize_weights(w, 0.05), [3, -3])

    def test_round_trip_within_half_scale(self):
        rng = np.random.default_rng(13)
        w = rng.normal(0, 0.5, size=1000)
        q_w = float(np.max(np.abs(w)) / 127)
        back = quantize_weights(w, q_w).astype(np.float64) * q_w
        assert np.max(np.abs(back - w)) <= q_w / 2 + 1e-12

    def test_heavy_clipping_warns(self, caplog):
        w = np.full(100, 50.0)
        with caplog.at_level(logging.WARNING):
            quantize_weights(w, 0.01)
        assert any("clipped" in r.message for r in caplog.records)
        assert weight_saturation_fraction(w, 0.01) == 1.0


class TestFoldBatchnorm:
    def _conv(self, out_ch, bn):
        w = np.zeros((out_ch, 1, 3, 3))
        return AnnLayerParams(
            kind="conv", weights=w, bn=bn, act=QuantActParams(4, 1.0), kernel=3
        )

    def test_identity_stats_give_weight_scale(self):
        bn = BatchNormStats(
            gamma=np.ones(1), beta=np.zeros(1), mean=np.zeros(1), var=np.full(1, 1.0 - 1e-5)
        )
        g, h = fold_batchnorm(self._conv(1, bn), 0.5)
        assert g[0] == pytest.approx(0.5)
        assert h[0] == pytest.approx(0.0)

    def test_hand_worked_fold(self):
        # gamma=2, beta=1, mean=4, var+eps=4, q_w=1 -> G=1, H=-3
        bn = BatchNormStats(
            gamma=np.full(1, 2.0), beta=np.ones(1), mean=np.full(1, 4.0),
            var=np.full(1, 4.0 - 1e-5),
        )
        g, h = fold_batchnorm(self._conv(1, bn), 1.0)
        assert g[0] == pytest.approx(1.0)
        assert h[0] == pytest.approx(-3.0)
        # y_int * G + H reproduces the normalization of y = y_int * q_w
        for y_int in (-7, 0, 3, 25):
            want = batchnorm_reference(y_int * 1.0, 4.0, 4.0 - 1e-5, 1e-5, 2.0, 1.0)
            assert y_int * g[0] + h[0] == pytest.approx(want)

    def test_zero_gamma_collapses_to_beta(self):
        bn = BatchNormStats(
            gamma=np.zeros(1), beta=np.full(1, 7.0), mean=np.full(1, 123.0),
            var=np.full(1, 1.0 - 1e-5),
        )
        g, h = fold_batchnorm(self._conv(1, bn), 1.0)
        assert g[0] == 0.0
        assert h[0] == pytest.approx(7.0)

    def test_missing_bn_folds_to_identity(self):
        layer = AnnLayerParams(
            kind="conv", weights=np.zeros((3, 1, 3, 3)), act=QuantActParams(4, 1.0), kernel=3
        )
        g, h = fold_batchnorm(layer, 0.25)
        np.testing.assert_allclose(g, 0.25)
        np.testing.assert_allclose(h, 0.0)

    def test_random_folds_match_reference(self):
        """y_int * G + H equals the direct formula to FP64 rounding."""
        rng = np.random.default_rng(17)
        for _ in range(500):
            gamma = rng.uniform(-2, 2)
            beta = rng.uniform(-2, 2)
            mean = rng.uniform(-5, 5)
            var = rng.uniform(1e-3, 4)
            q_w = rng.uniform(1e-3, 1)
            bn = BatchNormStats(
                gamma=np.full(1, gamma), beta=np.full(1, beta),
                mean=np.full(1, mean), var=np.full(1, var),
            )
            g, h = fold_batchnorm(self._conv(1, bn), q_w)
            y_int = float(rng.integers(-200, 200))
            want = batchnorm_reference(y_int * q_w, mean, var, 1e-5, gamma, beta)
            got = y_int * g[0] + h[0]
            assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


class TestToFixedPoint:
    def test_exact_power_of_two(self):
        assert to_fixed_point(np.array([1.0]), 8)[0] == 256

    def test_rounding(self):
        assert to_fixed_point(np.array([0.1]), 8)[0] == 26  # round(25.6)

    def test_clips_at_rail(self):
        assert to_fixed_point(np.array([200.0]), 8)[0] == 32767
        assert to_fixed_point(np.array([-200.0]), 8)[0] == -32768

    def test_round_half_even(self):
        vals = np.array([2.5, 3.5]) / 256.0
        np.testing.assert_array_equal(to_fixed_point(vals, 8), [2, 4])

    def test_clipping_is_reported(self, caplog):
        with caplog.at_level(logging.WARNING):
            to_fixed_point(np.array([500.0, 0.5]), 8)
        assert any("clipped" in r.message for r in caplog.records)

    def test_representation_error_bound(self):
        """Absent clipping, error is at most half an LSB per element."""
        rng = np.random.default_rng(19)
        for frac in (0, 4, 8, 15):
            x = rng.uniform(-10, 10, size=200) / (1 << max(0, frac - 4))
            fx = to_fixed_point(x, frac).astype(np.float64) / (1 << frac)
            mask = np.abs(x * (1 << frac)) < 32767  # exclude clipped entries
            assert np.max(np.abs((fx - x)[mask])) <= 2.0 ** -(frac + 1) + 1e-15

    def test_fixed_point_fold_error_bound(self):
        """Reconstructed y*G + H stays within the combined LSB bound."""
        rng = np.random.default_rng(23)
        fg = fh = 8
        for _ in range(300):
            g = rng.uniform(-2, 2)
            h = rng.uniform(-20, 20)
            y = float(rng.integers(-300, 300))
            gfx = int(to_fixed_point(np.array([g]), fg)[0])
            hfx = int(to_fixed_point(np.array([h]), fh)[0])
            approx = gfx * y / (1 << fg) + hfx / (1 << fh)
            bound = abs(y) * 2.0 ** -(fg + 1) + 2.0 ** -(fh + 1)
            assert abs(approx - (y * g + h)) <= bound + 1e-12


class TestAssignThreshold:
    def test_unit_threshold(self):
        assert assign_threshold(QuantActParams(4, 1.0), 0.25, 1.0) == 1

    def test_single_level_staircase(self):
        assert assign_threshold(QuantActParams(1, 2.0), 1.0, 1.0) == 2

    def test_underflow_rejected(self):
        with pytest.raises(ThresholdUnderflowError):
            assign_threshold(QuantActParams(64, 0.001), 1.0, 1.0)


class TestConvertNetwork:
    def _identity_conv(self, q_w=1.0, step=4.0, levels=4):
        w = np.array([[[[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]]])
        return AnnLayerParams(
            kind="conv", weights=w, act=QuantActParams(levels, step), kernel=3, name="c"
        )

    def test_identity_batchnorm_unit_scale(self):
        """Without batchnorm at q_w=1, the datapath multiplier encodes q_w."""
        net = convert_network([self._identity_conv()], [1.0])
        layer = net[0]
        assert layer.g_fx[0] == to_fixed_point(np.array([1.0]), 8)[0] == 256
        assert layer.h_fx[0] == 0
        assert layer.bias_fx[0] == 0
        assert layer.theta == 1  # 4.0 / (4 * 1 * 1)

    def test_datapath_multiplier_is_scale_free(self):
        """The weight scale cancels out of the on-array multiplier."""
        net = convert_network([self._identity_conv()], [0.25])
        assert net[0].g_fx[0] == 256
        assert net[0].theta == 4  # 4.0 / (4 * 0.25 * 1)

    def test_empty_network(self):
        assert convert_network([], []) == []

    def test_error_names_layer(self):
        bad = AnnLayerParams(
            kind="conv",
            weights=np.ones((1, 1, 3, 3)),
            act=QuantActParams(64, 1e-4),
            kernel=3,
            name="tiny",
        )
        with pytest.raises(ConversionError, match="layer 0 .*tiny"):
            convert_network([bad], [1.0])

    def test_channel_chain_checked(self):
        a = AnnLayerParams(
            kind="conv", weights=np.ones((2, 1, 3, 3)), act=QuantActParams(4, 4.0),
            kernel=3, name="a",
        )
        b = AnnLayerParams(
            kind="conv", weights=np.ones((2, 3, 3, 3)), act=QuantActParams(4, 4.0),
            kernel=3, name="b",
        )
        with pytest.raises(ConversionError, match="layer 1"):
            convert_network([a, b], [1.0, 1.0])

    def test_pool_layers_pass_through(self):
        pool = AnnLayerParams(kind="maxpool", pool=2, name="p")
        net = convert_network([self._identity_conv(), pool], [1.0, 1.0])
        assert net[1].kind == "maxpool"
        assert net[1].pool == 2
        # scale chaining continues past the pool marker
        assert net[1].input_scale == pytest.approx(1.0)  # step/levels of conv

    def test_scale_mismatch_rejected(self):
        with pytest.raises(ValueError):
            convert_network([self._identity_conv()], [])


class TestSingleLayerEquivalence:
    def test_constant_input_counts_match_staircase_levels(self):
        """Constant drive for `levels` steps reproduces the activation level.

        Small version of the acceptance property: one fully connected layer,
        exact-grid threshold, counts compared against the real-arithmetic
        staircase.
        """
        from siasim.config import SiaConfig
        from siasim.engine import run_network
        from siasim.frames import SpikeFrame
        from siasim.neurons import quantized_relu

        rng = np.random.default_rng(31)
        for levels in (1, 2, 4, 8):
            n_in, n_out = 12, 40
            w = rng.normal(0, 1, size=(n_out, n_in))
            q_w = float(np.max(np.abs(w)) / 127)
            theta = int(rng.integers(1, 150))
            q_in = 1.0
            step = theta * levels * q_w * q_in
            layer = AnnLayerParams(
                kind="fc", weights=w, act=QuantActParams(levels, step), name="f"
            )
            net = convert_network([layer], [q_w], input_scale=q_in)
            assert net[0].theta == theta

            bits = (rng.random(n_in) < 0.5).astype(np.uint8)
            frames = [SpikeFrame(bits.reshape(n_in, 1, 1))] * levels
            report = run_network(net, frames, SiaConfig(transfer_model=False))

            w_deq = net[0].weights_i8.astype(np.float64) * q_w
            v = w_deq @ (bits * levels * q_in)
            for i in range(n_out):
                want = round(
                    quantized_relu(float(v[i]), layer.act) * levels / step
                )
                got = report.output_spike_counts[i]
                # negative drive never spikes; the staircase clips to zero
                assert got == want, f"levels={levels} neuron {i}: {got} != {want}"
