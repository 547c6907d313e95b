"""Unit tests for measurement containers, synthesis, and ML amplitudes."""

from __future__ import annotations

import numpy as np
import pytest

from glrfusion import (
    MeasurementSet,
    RankDeficiencyError,
    channel_ml_amplitudes,
    compose_f_whitened,
    load_measurements,
    ml_amplitudes,
    sample_covariance,
    save_measurements,
    simulate,
)
from glrfusion.measurement import amplitude_covariance
from conftest import complex_normal, random_channel


class TestSampleCovariance:
    def test_single_snapshot_outer_product(self, rng):
        z = complex_normal(rng, (5, 1))
        s = sample_covariance(MeasurementSet((z,)))
        np.testing.assert_allclose(s.matrix, z @ z.conj().T, atol=1e-14)

    def test_orthogonal_equal_norm_columns(self, rng):
        # Z with orthogonal equal-norm columns: S is (norm^2 / M) times the
        # sum of rank-one projectors onto the column directions.
        q, _ = np.linalg.qr(complex_normal(rng, (6, 3)))
        norm = 2.3
        z = norm * q
        s = sample_covariance(MeasurementSet((z,)))
        expected = (norm**2 / 3) * sum(
            np.outer(q[:, k], q[:, k].conj()) for k in range(3)
        )
        np.testing.assert_allclose(s.matrix, expected, atol=1e-12)

    def test_trace_is_frobenius_energy(self, rng):
        z = complex_normal(rng, (7, 5))
        s = sample_covariance(MeasurementSet((z,)))
        assert abs(s.trace() - np.linalg.norm(z) ** 2 / 5) <= 1e-10

    def test_blocks_hermitian_pairs(self, rng):
        ms = MeasurementSet((complex_normal(rng, (4, 6)), complex_normal(rng, (5, 6))))
        s = sample_covariance(ms)
        np.testing.assert_allclose(s.block(1, 0), s.block(0, 1).conj().T, atol=1e-10)
        assert s.trace() == pytest.approx(s.trace_block(0) + s.trace_block(1))

    def test_whitened_blocks_match_manual_path(self, rng):
        ms = MeasurementSet((complex_normal(rng, (4, 8)), complex_normal(rng, (3, 8))))
        sigmas = [1.4, 0.6]
        s_w = sample_covariance(ms).whitened(sigmas)
        for i in range(2):
            for j in range(2):
                manual = (ms.block(i) / sigmas[i]) @ (ms.block(j) / sigmas[j]).conj().T / 8
                np.testing.assert_allclose(s_w.block(i, j), manual, atol=1e-10)


class TestSimulate:
    def test_noise_free_limit(self, rng):
        chans = [random_channel(rng, 6, 2, noise_variance=1e-30, gain=1.2 - 0.3j)]
        a = complex_normal(rng, (2, 5))
        ms = simulate(chans, 5, seed=1, amplitudes=a)
        np.testing.assert_allclose(
            ms.block(0), chans[0].gain * chans[0].matrix @ a, atol=1e-12
        )

    def test_determinism(self, rng):
        chans = [random_channel(rng, 5, 1), random_channel(rng, 4, 1)]
        a = simulate(chans, 7, seed=99)
        b = simulate(chans, 7, seed=99)
        for i in range(2):
            np.testing.assert_array_equal(a.block(i), b.block(i))

    def test_distinct_trials_differ(self, rng):
        chans = [random_channel(rng, 5, 1)]
        a = simulate(chans, 7, seed=99, trial=0)
        b = simulate(chans, 7, seed=99, trial=1)
        assert not np.allclose(a.block(0), b.block(0))

    def test_null_energy_law_of_large_numbers(self, rng):
        variances = [0.5, 2.0]
        chans = [random_channel(rng, 6, 1, noise_variance=v) for v in variances]
        ms = simulate(chans, 10_000, seed=3)
        s = sample_covariance(ms)
        expected = sum(6 * v for v in variances) / 12
        assert s.trace() / 12 == pytest.approx(expected, rel=0.05)


class TestMlAmplitudes:
    def test_noise_free_recovery(self, rng):
        chans = [random_channel(rng, 7, 2), random_channel(rng, 5, 2)]
        a = complex_normal(rng, (2, 6))
        f = compose_f_whitened(chans)
        z = f @ a
        np.testing.assert_allclose(ml_amplitudes(f, z), a, atol=1e-10)

    def test_orthonormal_unit_gain_is_matched_filter(self, rng):
        ch = random_channel(rng, 6, 2, orthonormal=True, gain=1.0, noise_variance=1.0)
        x = complex_normal(rng, (6, 4))
        np.testing.assert_allclose(
            channel_ml_amplitudes(ch, x), ch.matrix.conj().T @ x, atol=1e-10
        )

    def test_equal_channels_average(self, rng):
        ch = random_channel(rng, 6, 2, gain=0.8 + 0.1j, noise_variance=1.1)
        x1 = complex_normal(rng, (6, 4))
        x2 = complex_normal(rng, (6, 4))
        f = compose_f_whitened([ch, ch])
        z = np.vstack([x1 / ch.noise_sigma, x2 / ch.noise_sigma])
        pooled = ml_amplitudes(f, z)
        mean = 0.5 * (channel_ml_amplitudes(ch, x1) + channel_ml_amplitudes(ch, x2))
        np.testing.assert_allclose(pooled, mean, atol=1e-10)

    def test_residual_orthogonality(self, rng):
        chans = [random_channel(rng, 8, 3)]
        f = compose_f_whitened(chans)
        z = complex_normal(rng, (8, 5))
        a_hat = ml_amplitudes(f, z)
        residual = f.conj().T @ (z - f @ a_hat)
        assert np.linalg.norm(residual) <= 1e-9

    def test_rank_deficient_rejected(self, rng):
        col = complex_normal(rng, (6, 1))
        f = np.hstack([col, col])
        with pytest.raises(RankDeficiencyError):
            ml_amplitudes(f, complex_normal(rng, (6, 3)))

    def test_unbiased_over_trials(self, rng):
        # Monte-Carlo mean of the per-channel estimate stays within three
        # standard errors of the true amplitudes.
        ch = random_channel(rng, 5, 2, noise_variance=0.9, gain=1.1 + 0.2j)
        a = complex_normal(rng, (2, 3))
        trials = 10_000
        acc = np.zeros_like(a)
        for t in range(trials):
            ms = simulate([ch], 3, seed=17, amplitudes=a, trial=t)
            acc += channel_ml_amplitudes(ch, ms.block(0))
        mean = acc / trials
        cov = amplitude_covariance(ch)
        se = np.sqrt(np.real(np.diag(cov))[:, None] / (2 * trials))
        bound = np.broadcast_to(3.0 * se + 1e-12, a.shape)
        np.testing.assert_array_less(np.abs(mean.real - a.real), bound)
        np.testing.assert_array_less(np.abs(mean.imag - a.imag), bound)


class TestRoundTrip:
    def test_bit_exact(self, rng, tmp_path):
        ms = MeasurementSet((complex_normal(rng, (5, 3)), complex_normal(rng, (2, 3))))
        save_measurements(ms, tmp_path / "data")
        back = load_measurements(tmp_path / "data")
        assert back.channel_dims == ms.channel_dims
        for i in range(2):
            np.testing.assert_array_equal(back.block(i), ms.block(i))

    def test_header_contents(self, rng, tmp_path):
        import json

        ms = MeasurementSet((complex_normal(rng, (4, 2)),))
        root = save_measurements(ms, tmp_path / "d")
        header = json.loads((root / "header.json").read_text())
        assert header["n_snapshots"] == 2
        assert header["channel_dims"] == [4]
        assert header["blocks"] == ["block_00.csv"]

    def test_scaled_and_subset(self, rng):
        ms = MeasurementSet((complex_normal(rng, (3, 4)), complex_normal(rng, (2, 4))))
        scaled = ms.scaled([2.0, -1.0j])
        np.testing.assert_allclose(scaled.block(0), 2.0 * ms.block(0))
        np.testing.assert_allclose(scaled.block(1), -1.0j * ms.block(1))
        sub = ms.subset([1])
        np.testing.assert_array_equal(sub.block(0), ms.block(1))
