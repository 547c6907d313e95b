"""Shared fixtures and random-instance builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from glrfusion import ChannelModel, normalize_channel, simulate


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_channel(
    rng: np.random.Generator,
    n_samples: int,
    n_modes: int,
    *,
    orthonormal: bool = False,
    noise_variance: float | None = None,
    gain: complex | None = None,
) -> ChannelModel:
    h = complex_normal(rng, (n_samples, n_modes))
    if orthonormal:
        q, _ = np.linalg.qr(h)
        h = q[:, :n_modes]
    else:
        h = normalize_channel(h)
    if noise_variance is None:
        noise_variance = float(rng.uniform(0.4, 2.5))
    if gain is None:
        gain = complex(rng.normal(), rng.normal())
        if abs(gain) < 0.3:
            gain += 0.5
    return ChannelModel(matrix=h, gain=gain, noise_variance=noise_variance)


def random_instance(
    rng: np.random.Generator,
    *,
    n_channels: int | None = None,
    n_modes: int | None = None,
    n_snapshots: int | None = None,
    orthonormal: bool = False,
    min_samples: int = 4,
    max_samples: int = 16,
    with_signal: bool = True,
    subspace_safe: bool = False,
):
    """Random channels plus data, drawn in the acceptance-criteria ranges."""
    if n_channels is None:
        n_channels = int(rng.choice([1, 2, 3, 5]))
    if n_modes is None:
        n_modes = int(rng.integers(1, 4))
    if n_snapshots is None:
        # Subspace panels need rank beyond the mode count for a residual.
        low = n_modes + 1 if subspace_safe else n_modes
        n_snapshots = int(rng.integers(low, 13))
    lo = max(min_samples, n_modes + 1 if subspace_safe else n_modes)
    channels = [
        random_channel(rng, int(rng.integers(lo, max_samples + 1)), n_modes,
                       orthonormal=orthonormal)
        for _ in range(n_channels)
    ]
    amplitudes = None
    if with_signal:
        amplitudes = complex_normal(rng, (n_modes, n_snapshots))
    ms = simulate(channels, n_snapshots, seed=int(rng.integers(2**31)),
                  amplitudes=amplitudes)
    return channels, ms


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240811)
