"""Snapshot containers, blocked sample covariances, synthesis, and ML amplitudes.

Data for L channels over M snapshots is held as per-channel blocks X_l of
shape (N_l, M).  Sample covariances are blocked the same way.  Synthesis is
deterministic given (seed, trial): every (trial, channel) pair gets its own
named substream so concurrent trials never share random state.

The on-disk interchange format is binary-free: one directory with a JSON
header (dims, snapshot count, channel order) plus one CSV per block holding
interleaved real,imag entries at 17 significant digits, which round-trips
float64 bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import ChannelModel, require_same_dims
from .errors import ConfigError, DimensionError
from .linalg import as_complex_matrix, orthonormal_basis

_HEADER_NAME = "header.json"
_FORMAT_NAME = "glrfusion-measurements"
_FLOAT_FMT = "{:.17g}"

# Purpose tags for named random substreams.
_NOISE_STREAM = 0
_AMPLITUDE_STREAM = 1


def rng_stream(seed: int, purpose: int, trial: int, channel: int) -> np.random.Generator:
    """Deterministic generator for one (purpose, trial, channel) substream."""
    return np.random.default_rng(
        np.random.SeedSequence((int(seed), int(purpose), int(trial), int(channel)))
    )


@dataclass(frozen=True)
class MeasurementSet:
    """Block-stacked measurements: one (N_l x M) complex block per channel."""

    blocks: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.blocks:
            raise DimensionError("a MeasurementSet needs at least one block")
        blocks = tuple(as_complex_matrix(b, f"block {i}") for i, b in enumerate(self.blocks))
        m = blocks[0].shape[1]
        for i, b in enumerate(blocks):
            if b.shape[1] != m:
                raise DimensionError(
                    f"block {i} has {b.shape[1]} snapshots, expected {m}"
                )
        if m < 1:
            raise DimensionError("at least one snapshot is required")
        object.__setattr__(self, "blocks", blocks)

    @property
    def n_channels(self) -> int:
        return len(self.blocks)

    @property
    def n_snapshots(self) -> int:
        return self.blocks[0].shape[1]

    @property
    def channel_dims(self) -> tuple[int, ...]:
        return tuple(b.shape[0] for b in self.blocks)

    @property
    def n_total(self) -> int:
        return sum(self.channel_dims)

    def stacked(self) -> np.ndarray:
        return np.vstack(self.blocks)

    def block(self, i: int) -> np.ndarray:
        return self.blocks[i]

    def scaled(self, factors: Sequence[complex]) -> "MeasurementSet":
        """New set with each block multiplied by its own scalar."""
        if len(factors) != self.n_channels:
            raise DimensionError(
                f"{len(factors)} factors for {self.n_channels} channels"
            )
        return MeasurementSet(tuple(c * b for c, b in zip(factors, self.blocks)))

    def subset(self, indices: Sequence[int]) -> "MeasurementSet":
        """New set containing only the selected channels, in the given order."""
        return MeasurementSet(tuple(self.blocks[i] for i in indices))


@dataclass(frozen=True)
class SampleCovariance:
    """Blocked sample covariance S = (1/M) Z Z^H with per-channel accessors."""

    matrix: np.ndarray
    channel_dims: tuple[int, ...]
    n_snapshots: int

    def __post_init__(self):
        mat = as_complex_matrix(self.matrix, "covariance")
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "channel_dims", tuple(int(d) for d in self.channel_dims))
        if mat.shape[0] != mat.shape[1] or mat.shape[0] != sum(self.channel_dims):
            raise DimensionError(
                f"covariance shape {mat.shape} inconsistent with dims {self.channel_dims}"
            )

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(np.concatenate([[0], np.cumsum(self.channel_dims)]).astype(int))

    def block(self, i: int, j: int | None = None) -> np.ndarray:
        if j is None:
            j = i
        off = self.offsets
        return self.matrix[off[i]:off[i + 1], off[j]:off[j + 1]]

    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def trace_block(self, i: int) -> float:
        return float(np.real(np.trace(self.block(i))))

    def whitened(self, sigmas: Sequence[float]) -> "SampleCovariance":
        """Whitened covariance with blocks S_ij / (sigma_i sigma_j)."""
        if len(sigmas) != len(self.channel_dims):
            raise DimensionError(
                f"{len(sigmas)} sigmas for {len(self.channel_dims)} channels"
            )
        for s in sigmas:
            if not (s > 0):
                raise ValueError(f"sigmas must be positive, got {s}")
        weights = np.concatenate(
            [np.full(d, 1.0 / s) for d, s in zip(self.channel_dims, sigmas)]
        )
        return SampleCovariance(
            matrix=self.matrix * np.outer(weights, weights),
            channel_dims=self.channel_dims,
            n_snapshots=self.n_snapshots,
        )


def sample_covariance(measurements: MeasurementSet) -> SampleCovariance:
    """Blocked S = (1/M) Z Z^H, symmetrized against rounding asymmetry."""
    z = measurements.stacked()
    s = z @ z.conj().T / measurements.n_snapshots
    s = 0.5 * (s + s.conj().T)
    return SampleCovariance(
        matrix=s,
        channel_dims=measurements.channel_dims,
        n_snapshots=measurements.n_snapshots,
    )


def simulate(
    channels: Sequence[ChannelModel],
    n_snapshots: int,
    seed: int,
    amplitudes: np.ndarray | None = None,
    trial: int = 0,
) -> MeasurementSet:
    """Synthesize X_l = g_l H_l A + U_l for each channel.

    ``amplitudes`` is the (J x M) mode-amplitude matrix; ``None`` synthesizes
    noise only.  Noise is circular complex Gaussian with per-entry variance
    sigma_l^2 (real and imaginary parts each sigma_l^2 / 2), independent
    across channels and snapshots, and deterministic given (seed, trial).
    """
    if n_snapshots < 1:
        raise ConfigError("n_snapshots must be >= 1")
    if not channels:
        raise ConfigError("at least one channel is required")
    if amplitudes is not None:
        amplitudes = as_complex_matrix(amplitudes, "amplitudes")
        j = channels[0].n_modes
        if amplitudes.shape != (j, n_snapshots):
            raise ConfigError(
                f"amplitudes shape {amplitudes.shape} does not match "
                f"(J={j}, M={n_snapshots})"
            )
    blocks = []
    for idx, ch in enumerate(channels):
        rng = rng_stream(seed, _NOISE_STREAM, trial, idx)
        scale = np.sqrt(ch.noise_variance / 2.0)
        noise = scale * (
            rng.standard_normal((ch.n_samples, n_snapshots))
            + 1j * rng.standard_normal((ch.n_samples, n_snapshots))
        )
        if amplitudes is None:
            blocks.append(noise)
        else:
            blocks.append(ch.gain * (ch.matrix @ amplitudes) + noise)
    return MeasurementSet(tuple(blocks))


def draw_amplitudes(
    n_modes: int, n_snapshots: int, scale: float, seed: int, trial: int = 0
) -> np.ndarray:
    """Draw a (J x M) amplitude matrix with iid CN(0, scale^2) entries."""
    rng = rng_stream(seed, _AMPLITUDE_STREAM, trial, 0)
    return (scale / np.sqrt(2.0)) * (
        rng.standard_normal((n_modes, n_snapshots))
        + 1j * rng.standard_normal((n_modes, n_snapshots))
    )


def ml_amplitudes(f_whitened, z_whitened) -> np.ndarray:
    """ML amplitude estimate (F^H F)^-1 F^H Z for whitened channel and data."""
    f = as_complex_matrix(f_whitened, "whitened channel")
    z = as_complex_matrix(z_whitened, "whitened data")
    if z.shape[0] != f.shape[0]:
        raise DimensionError(
            f"data height {z.shape[0]} does not match channel height {f.shape[0]}"
        )
    orthonormal_basis(f, "whitened channel")  # full-column-rank gate
    gram = f.conj().T @ f
    return np.linalg.solve(gram, f.conj().T @ z)


def channel_ml_amplitudes(channel: ChannelModel, x_block) -> np.ndarray:
    """Per-channel ML amplitude estimate using only that channel's data."""
    f = (channel.gain / channel.noise_sigma) * channel.matrix
    return ml_amplitudes(f, np.asarray(x_block) / channel.noise_sigma)


def amplitude_covariance(channel: ChannelModel) -> np.ndarray:
    """Error covariance (F_l^H F_l)^-1 of the per-channel amplitude estimate."""
    f = (channel.gain / channel.noise_sigma) * channel.matrix
    gram = f.conj().T @ f
    return np.linalg.inv(gram)


def validate_against_channels(channels: Sequence[ChannelModel], measurements: MeasurementSet) -> None:
    require_same_dims(channels, measurements.channel_dims)


def _format_block(block: np.ndarray) -> str:
    lines = []
    for row in block:
        parts = []
        for v in row:
            parts.append(_FLOAT_FMT.format(v.real))
            parts.append(_FLOAT_FMT.format(v.imag))
        lines.append(",".join(parts))
    return "\n".join(lines) + "\n"


def _parse_block(text: str, n_rows: int, n_snapshots: int) -> np.ndarray:
    rows = [line for line in text.splitlines() if line.strip()]
    if len(rows) != n_rows:
        raise DimensionError(f"block file has {len(rows)} rows, expected {n_rows}")
    out = np.empty((n_rows, n_snapshots), dtype=np.complex128)
    for i, line in enumerate(rows):
        vals = [float(tok) for tok in line.split(",")]
        if len(vals) != 2 * n_snapshots:
            raise DimensionError(
                f"row {i} has {len(vals)} fields, expected {2 * n_snapshots}"
            )
        arr = np.asarray(vals).reshape(n_snapshots, 2)
        out[i] = arr[:, 0] + 1j * arr[:, 1]
    return out


def save_measurements(measurements: MeasurementSet, directory) -> Path:
    """Write a measurement set as header.json + one CSV per channel block."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    block_names = [f"block_{i:02d}.csv" for i in range(measurements.n_channels)]
    header = {
        "format": _FORMAT_NAME,
        "version": 1,
        "n_snapshots": measurements.n_snapshots,
        "channel_dims": list(measurements.channel_dims),
        "blocks": block_names,
    }
    (root / _HEADER_NAME).write_text(json.dumps(header, indent=2) + "\n")
    for name, block in zip(block_names, measurements.blocks):
        (root / name).write_text(_format_block(block))
    return root


def load_measurements(directory) -> MeasurementSet:
    """Read a measurement set written by :func:`save_measurements`."""
    root = Path(directory)
    header_path = root / _HEADER_NAME
    if not header_path.exists():
        raise ConfigError(f"no {_HEADER_NAME} in {root}")
    header = json.loads(header_path.read_text())
    if header.get("format") != _FORMAT_NAME:
        raise ConfigError(f"unrecognized measurement format {header.get('format')!r}")
    m = int(header["n_snapshots"])
    dims = [int(d) for d in header["channel_dims"]]
    blocks = []
    for dim, name in zip(dims, header["blocks"]):
        blocks.append(_parse_block((root / name).read_text(), dim, m))
    return MeasurementSet(tuple(blocks))
