"""Neuron-semantics tests: update rules, oracle, and conservation identities."""

import numpy as np
import pytest

from siasim.neurons import (
    I16_MAX,
    I16_MIN,
    NeuronMode,
    OracleSaturationError,
    QuantActParams,
    heaviside_spike,
    if_step,
    lif_step,
    quantized_relu,
    sat16,
    spike_count_oracle,
)


def brute_force_spikes(u0, current, theta, steps):
    """Independent per-step recursion: integrate, compare, subtract."""
    u = u0
    count = 0
    for _ in range(steps):
        u = max(I16_MIN, min(I16_MAX, u + current))
        if u >= theta:
            count += 1
            u -= theta
    return count


class TestHeaviside:
    def test_boundary_fires(self):
        assert heaviside_spike(10, 10) == 1

    def test_below_threshold(self):
        assert heaviside_spike(9, 10) == 0

    def test_negative_potential(self):
        assert heaviside_spike(-5, 10) == 0

    def test_rejects_nonpositive_threshold(self):
        with pytest.raises(ValueError):
            heaviside_spike(0, 0)

    def test_matches_if_step_decision_for_any_split(self):
        """The firing decision depends only on the post-accumulation value."""
        rng = np.random.default_rng(7)
        for _ in range(500):
            u = int(rng.integers(-1000, 1000))
            split = int(rng.integers(-500, 500))
            theta = int(rng.integers(1, 200))
            spike, _ = if_step(u - split, split, theta)
            assert spike == heaviside_spike(u, theta), f"split {split} changed the decision at u={u}"


class TestIfStep:
    def test_exact_threshold_resets_to_zero(self):
        assert if_step(0, 10, 10) == (1, 0)

    def test_subthreshold_accumulates(self):
        # hand evaluation: 5 + 3 = 8 < 10
        assert if_step(5, 3, 10) == (0, 8)

    def test_single_subtraction_keeps_residual(self):
        # 5 + 30 = 35 >= 10; one spike, residual 25 carries to later steps
        assert if_step(5, 30, 10) == (1, 25)

    def test_saturates_high(self):
        spike, u = if_step(32760, 1000, 40000)
        assert (spike, u) == (0, I16_MAX)

    def test_saturates_low(self):
        spike, u = if_step(-32000, -2000, 10)
        assert (spike, u) == (0, I16_MIN)

    def test_never_leaves_16bit_range(self):
        rng = np.random.default_rng(3)
        u = 0
        for _ in range(2000):
            _, u = if_step(u, int(rng.integers(-40000, 40000)), int(rng.integers(1, 30000)))
            assert I16_MIN <= u <= I16_MAX, f"membrane {u} out of range"

    def test_conservation_identity(self):
        """u_final + theta * spikes == u0 + sum(inputs), absent saturation."""
        rng = np.random.default_rng(11)
        for _ in range(200):
            theta = int(rng.integers(1, 100))
            u0 = int(rng.integers(0, theta))
            inputs = rng.integers(-50, 80, size=64)
            u, spikes = u0, 0
            for cur in inputs:
                s, u = if_step(u, int(cur), theta)
                spikes += s
            assert u + theta * spikes == u0 + int(inputs.sum()), (
                f"conservation broken: u={u}, spikes={spikes}, theta={theta}"
            )


class TestLifStep:
    def test_zero_state_leaks_to_zero(self):
        assert lif_step(0, 10, 10, 4) == (1, 0)

    def test_leak_shift_4(self):
        # 16 - (16 >> 4) = 15
        assert lif_step(16, 0, 100, 4) == (0, 15)

    def test_shift_zero_is_full_leak(self):
        assert lif_step(16, 0, 100, 0) == (0, 0)

    def test_negative_state_decays_toward_zero(self):
        spike, u = lif_step(-16, 0, 100, 4)
        # arithmetic shift: -16 >> 4 == -1, so -16 - (-1) = -15
        assert (spike, u) == (0, -15)

    def test_leak_shift_range_enforced(self):
        with pytest.raises(ValueError):
            lif_step(0, 0, 10, 16)


class TestSpikeCountOracle:
    def test_cumulative_crossings(self):
        # brute force: u walks 3,6,9,12->2, 5,8,11->1, 4; two spikes
        assert brute_force_spikes(0, 3, 10, 8) == 2
        assert spike_count_oracle(0, 3, 10, 8) == 2

    def test_no_input_no_spikes(self):
        assert spike_count_oracle(0, 0, 10, 100) == 0

    def test_fires_every_step_at_threshold_drive(self):
        assert spike_count_oracle(0, 10, 10, 5) == 5

    def test_exhaustive_grid_matches_brute_force(self):
        mismatches = []
        for u0 in range(21):
            for current in range(21):
                for theta in range(1, 21):
                    for steps in range(17):
                        got = spike_count_oracle(u0, current, theta, steps)
                        want = brute_force_spikes(u0, current, theta, steps)
                        if got != want:
                            mismatches.append((u0, current, theta, steps, got, want))
        assert not mismatches, f"{len(mismatches)} mismatches, first: {mismatches[0]}"

    def test_saturation_reported_distinctly(self):
        with pytest.raises(OracleSaturationError):
            spike_count_oracle(0, 1000, 3, 40)

    def test_negative_current_rejected(self):
        with pytest.raises(ValueError):
            spike_count_oracle(0, -1, 3, 4)


class TestQuantizedRelu:
    def test_mid_staircase(self):
        assert quantized_relu(0.5, QuantActParams(4, 1.0)) == pytest.approx(0.5)

    def test_negative_clips_to_zero(self):
        assert quantized_relu(-0.3, QuantActParams(4, 1.0)) == 0.0

    def test_saturates_at_step(self):
        assert quantized_relu(2.0, QuantActParams(4, 1.0)) == pytest.approx(1.0)

    def test_monotone_nondecreasing(self):
        act = QuantActParams(8, 0.7)
        xs = np.sort(np.random.default_rng(5).uniform(-1, 2, size=500))
        ys = [quantized_relu(float(x), act) for x in xs]
        assert all(a <= b for a, b in zip(ys, ys[1:])), "staircase output decreased"

    def test_idempotent_on_own_outputs(self):
        rng = np.random.default_rng(9)
        for _ in range(500):
            act = QuantActParams(int(rng.integers(1, 17)), float(rng.uniform(0.05, 3.0)))
            y = quantized_relu(float(rng.uniform(-1, 4)), act)
            assert quantized_relu(y, act) == pytest.approx(y, abs=0), (
                f"not idempotent at y={y} with levels={act.levels} step={act.step}"
            )

    def test_param_validation(self):
        with pytest.raises(ValueError):
            QuantActParams(0, 1.0)
        with pytest.raises(ValueError):
            QuantActParams(4, 0.0)


class TestTypes:
    def test_sat16_bounds(self):
        assert sat16(40000) == I16_MAX
        assert sat16(-40000) == I16_MIN
        assert sat16(123) == 123

    def test_neuron_mode_validation(self):
        with pytest.raises(ValueError):
            NeuronMode("XYZ")
        with pytest.raises(ValueError):
            NeuronMode("LIF", leak_shift=99)
