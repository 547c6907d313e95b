"""The nine multi-channel GLR detectors and their canonical decomposition.

Every detector returns a :class:`DetectorReport` exposing the composite
statistic together with its decomposition into a weighted sum of per-channel
statistics minus a cross-validation (fusion) term:

    composite = sum_l alpha_l * per_channel_l - cross_validation

with weights summing to one.  The cross-validation term is the only quantity
mixing data across channels; it measures how much the channels disagree
(amplitude distance, coherence deficit, or subspace-energy mismatch,
depending on what is known).

Panels are indexed by what is known about the channel (fully known coupling
and gains / known orthonormal coupling with unknown gains / only the mode
count known) crossed with what is known about the noise (known variances /
common unknown variance / per-channel unknown variances).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .channel import ChannelModel, compose_f, compose_f_whitened
from .errors import ConfigError, DegenerateDataError
from .linalg import (
    eigvalsh_descending,
    hermitian_eig,
    orthonormal_basis,
    rayleigh_extremes,
)
from .measurement import (
    MeasurementSet,
    SampleCovariance,
    sample_covariance,
    validate_against_channels,
)

ORTHONORMAL_TOL = 1e-9
# Residual energy below this fraction of the channel energy is treated as
# exactly zero: the data sits in the signal subspace to machine precision
# and the statistic saturates.
DEGENERACY_RTOL = 1e-12


class ChannelKnowledge(str, Enum):
    KNOWN_F = "known_f"
    UNKNOWN_GAINS = "unknown_gains"
    UNKNOWN_SUBSPACE = "unknown_subspace"


class NoiseKnowledge(str, Enum):
    KNOWN = "known"
    COMMON_UNKNOWN = "common_unknown"
    DIFFERENT_UNKNOWN = "different_unknown"


_PANEL_ROWS = {
    ChannelKnowledge.KNOWN_F: 1,
    ChannelKnowledge.UNKNOWN_GAINS: 2,
    ChannelKnowledge.UNKNOWN_SUBSPACE: 3,
}
_PANEL_COLS = {
    NoiseKnowledge.KNOWN: 1,
    NoiseKnowledge.COMMON_UNKNOWN: 2,
    NoiseKnowledge.DIFFERENT_UNKNOWN: 3,
}


@dataclass(frozen=True)
class KnowledgeSpec:
    """Which model quantities are known; selects one of the nine panels."""

    channel_knowledge: ChannelKnowledge
    noise_knowledge: NoiseKnowledge

    @property
    def panel(self) -> str:
        return f"P{_PANEL_ROWS[self.channel_knowledge]}{_PANEL_COLS[self.noise_knowledge]}"

    @classmethod
    def from_panel(cls, name: str) -> "KnowledgeSpec":
        label = name.strip().upper()
        if len(label) != 3 or label[0] != "P" or label[1] not in "123" or label[2] not in "123":
            raise ConfigError(f"unknown panel {name!r}; expected P11..P33")
        rows = {v: k for k, v in _PANEL_ROWS.items()}
        cols = {v: k for k, v in _PANEL_COLS.items()}
        return cls(rows[int(label[1])], cols[int(label[2])])


@dataclass
class DetectorReport:
    """Composite statistic and its canonical decomposition.

    Invariants (checked on construction unless the report is degenerate):
    weights sum to one, and composite = sum(alphas * per_channel) -
    cross_validation to 1e-9 relative.
    """

    composite: float
    alphas: np.ndarray
    per_channel: np.ndarray
    cross_validation: float
    panel: KnowledgeSpec
    degenerate: bool = False
    gain_direction: np.ndarray | None = None
    noise_null: np.ndarray | None = None
    noise_alt: np.ndarray | None = None
    coherences: np.ndarray | None = None
    channel_bases: tuple[np.ndarray, ...] | None = None
    composite_basis: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        self.per_channel = np.asarray(self.per_channel, dtype=float)
        if self.alphas.shape != self.per_channel.shape:
            raise ConfigError("alphas and per_channel must have matching lengths")
        if abs(self.alphas.sum() - 1.0) > 1e-10:
            raise ConfigError(f"weights sum to {self.alphas.sum()}, expected 1")
        if not self.degenerate and np.isfinite(self.composite):
            recombined = float(self.alphas @ self.per_channel - self.cross_validation)
            tol = 1e-9 * max(1.0, abs(self.composite))
            if abs(recombined - self.composite) > tol:
                raise ConfigError(
                    f"decomposition mismatch: composite={self.composite!r} but "
                    f"sum(alpha*stat)-V={recombined!r}"
                )

    @property
    def n_channels(self) -> int:
        return len(self.alphas)


def _phase_normalized(v: np.ndarray) -> np.ndarray:
    mags = np.abs(v)
    peak = mags.max(initial=0.0)
    if peak == 0.0:
        return v
    idx = int(np.argmax(mags > 1e-12 * peak))
    pivot = v[idx]
    return v * (np.conj(pivot) / abs(pivot)) if pivot != 0 else v


def coherence(h_i, x_i, h_j, x_j) -> complex:
    """Normalized inner product of two channels' matched-filter outputs.

    c_ij = tr(H_i^H X_i X_j^H H_j) / sqrt(tr(H_i^H X_i X_i^H H_i) *
    tr(H_j^H X_j X_j^H H_j)); |c_ij| <= 1 and c is invariant to separate
    rescalings of X_i and X_j.
    """
    a_i = np.asarray(h_i).conj().T @ np.asarray(x_i)
    a_j = np.asarray(h_j).conj().T @ np.asarray(x_j)
    e_i = float(np.real(np.vdot(a_i, a_i)))
    e_j = float(np.real(np.vdot(a_j, a_j)))
    if e_i <= 0.0 or e_j <= 0.0:
        raise DegenerateDataError("coherence undefined: a matched-filter output has zero energy")
    return complex(np.vdot(a_j, a_i) / math.sqrt(e_i * e_j))


def _matched_outputs(channels: Sequence[ChannelModel], ms: MeasurementSet) -> list[np.ndarray]:
    return [ch.matrix.conj().T @ ms.block(i) for i, ch in enumerate(channels)]


def _coherence_matrix(outputs: list[np.ndarray]) -> tuple[np.ndarray, bool]:
    """Pairwise coherences; zero-energy channels get zeroed entries and a flag."""
    n = len(outputs)
    energies = np.array([float(np.real(np.vdot(a, a))) for a in outputs])
    degenerate = bool(np.any(energies <= 0.0))
    c = np.eye(n, dtype=np.complex128)
    for i in range(n):
        for j in range(i + 1, n):
            if energies[i] <= 0.0 or energies[j] <= 0.0:
                c[i, j] = c[j, i] = 0.0
                continue
            val = np.vdot(outputs[j], outputs[i]) / math.sqrt(energies[i] * energies[j])
            c[i, j] = val
            c[j, i] = np.conj(val)
    return c, degenerate


def build_fusion_t(alphas, stats, coherences) -> np.ndarray:
    """Fusion matrix whose smallest eigenvalue is the cross-validation term.

    T_ii = sum_{l != i} alpha_l stats_l and
    T_ij = -sqrt(alpha_i alpha_j stats_i stats_j) c_ij for i != j.
    """
    a = np.asarray(alphas, dtype=float)
    s = np.asarray(stats, dtype=float)
    c = np.asarray(coherences, dtype=np.complex128)
    n = len(a)
    if s.shape != (n,) or c.shape != (n, n):
        raise ConfigError("alphas, stats, coherences have inconsistent shapes")
    if np.any(s < 0):
        raise ValueError("per-channel statistics must be non-negative")
    if np.linalg.norm(c - c.conj().T) > 1e-9 * max(1.0, np.linalg.norm(c)):
        raise ValueError("coherence matrix must be Hermitian")
    if np.any(np.abs(np.diag(c) - 1.0) > 1e-9):
        raise ValueError("coherence matrix must have unit diagonal")
    weighted = a * s
    root = np.sqrt(weighted)
    t = -np.outer(root, root) * c
    np.fill_diagonal(t, weighted.sum() - weighted)
    return 0.5 * (t + t.conj().T)


def fusion_m_matrix(alphas, stats, coherences) -> np.ndarray:
    """Companion quadratic-form matrix: M = sum(alpha*stat) I - T."""
    a = np.asarray(alphas, dtype=float)
    s = np.asarray(stats, dtype=float)
    t = build_fusion_t(a, s, coherences)
    return float(a @ s) * np.eye(len(a)) - t


def two_channel_cross_validation(stat_1: float, stat_2: float, coherence_12: complex
                                 ) -> tuple[float, float]:
    """Closed-form two-channel cross-validation term (weights dropped).

    Returns (V, nu2) where V = A - A sqrt(1 + (G^2/A^2)(|c|^2 - 1)) with A
    and G the arithmetic and geometric means of the two statistics, and nu2
    is the squared coefficient of variation (Delta/A)^2 = 1 - (G/A)^2.

    This equals the smallest eigenvalue of the 2x2 fusion matrix built with
    unit weights; with the equal weights 1/2 folded back in, the panel
    cross-validation term is V/2.
    """
    if stat_1 < 0 or stat_2 < 0:
        raise ValueError("per-channel statistics must be non-negative")
    mag = abs(coherence_12)
    if mag > 1.0 + 1e-12:
        raise ValueError(f"|coherence| must be <= 1, got {mag}")
    arith = 0.5 * (stat_1 + stat_2)
    if arith == 0.0:
        return 0.0, 0.0
    geom_sq = stat_1 * stat_2
    value = arith - arith * math.sqrt(max(0.0, 1.0 + (geom_sq / arith**2) * (mag**2 - 1.0)))
    nu2 = 1.0 - geom_sq / arith**2
    return value, nu2


def rank_one_pair_composite(z_1, z_2, n_channels: int = 1) -> float:
    """Rank-one, two-snapshot composite statistic in closed form.

    For whitened snapshot vectors z_1, z_2 this is (1/L) times the largest
    eigenvalue of the two-snapshot sample covariance (the 1/M = 1/2 factor is
    kept), computed from the 2x2 Gram discriminant:

        lambda_1 = (1/2) [ (a + d)/2 + sqrt(D)/2 ],
        D = (a + d)^2 + 4 a d (|c|^2 - 1),  |c|^2 = |z_1^H z_2|^2 / (a d),

    with a = z_1^H z_1 and d = z_2^H z_2.
    """
    v1 = np.asarray(z_1, dtype=np.complex128).reshape(-1)
    v2 = np.asarray(z_2, dtype=np.complex128).reshape(-1)
    a = float(np.real(np.vdot(v1, v1)))
    d = float(np.real(np.vdot(v2, v2)))
    cross = complex(np.vdot(v1, v2))
    disc = (a + d) ** 2 + 4.0 * (abs(cross) ** 2 - a * d)
    top = 0.5 * ((a + d) / 2.0 + 0.5 * math.sqrt(max(0.0, disc)))
    return top / n_channels


def _prepare(channels: Sequence[ChannelModel], ms: MeasurementSet) -> SampleCovariance:
    if not channels:
        raise ConfigError("at least one channel is required")
    validate_against_channels(channels, ms)
    j = channels[0].n_modes
    for idx, ch in enumerate(channels):
        if ch.n_modes != j:
            raise ConfigError(f"channel {idx} has {ch.n_modes} modes, expected {j}")
    return sample_covariance(ms)


def _channel_bases(channels: Sequence[ChannelModel]) -> list[np.ndarray]:
    return [orthonormal_basis(ch.matrix, f"channel {i} matrix") for i, ch in enumerate(channels)]


def _projected_trace(basis: np.ndarray, s_block: np.ndarray) -> float:
    return float(np.real(np.einsum("ij,jk,ki->", basis.conj().T, s_block, basis)))


def _require_orthonormal(channels: Sequence[ChannelModel]) -> None:
    for idx, ch in enumerate(channels):
        if not ch.is_orthonormal(ORTHONORMAL_TOL):
            raise ConfigError(
                f"channel {idx} must have orthonormal columns for unknown-gain panels"
            )


def _sigmas(channels: Sequence[ChannelModel]) -> list[float]:
    return [ch.noise_sigma for ch in channels]


def detect_p11(channels: Sequence[ChannelModel], ms: MeasurementSet) -> DetectorReport:
    """Known coupling and gains, known noise variances.

    Composite statistic: (1/L) tr(P_F S) over whitened data; per-channel
    statistics tr(P_H S_ll) over whitened blocks; equal weights.
    """
    s = _prepare(channels, ms)
    n_ch = len(channels)
    s_w = s.whitened(_sigmas(channels))
    bases = _channel_bases(channels)
    lam = np.array([
        _projected_trace(bases[i], s_w.block(i)) for i in range(n_ch)
    ])
    f_w = compose_f_whitened(channels)
    comp_basis = orthonormal_basis(f_w, "whitened composite channel")
    cross_trace = _projected_trace(comp_basis, s_w.matrix)
    composite = cross_trace / n_ch
    cv = (float(lam.sum()) - cross_trace) / n_ch
    return DetectorReport(
        composite=composite,
        alphas=np.full(n_ch, 1.0 / n_ch),
        per_channel=lam,
        cross_validation=cv,
        panel=KnowledgeSpec(ChannelKnowledge.KNOWN_F, NoiseKnowledge.KNOWN),
    )


def detect_p12(channels: Sequence[ChannelModel], ms: MeasurementSet) -> DetectorReport:
    """Known coupling and gains, one common unknown noise variance.

    Composite statistic tr(P_F S)/tr(S) is invariant to rescaling the whole
    composite data set; weights are data-determined energy fractions.
    """
    s = _prepare(channels, ms)
    n_ch = len(channels)
    total = s.trace()
    if total <= 0.0:
        raise DegenerateDataError("composite data has zero energy")
    bases = _channel_bases(channels)
    block_traces = np.array([s.trace_block(i) for i in range(n_ch)])
    matched = np.array([_projected_trace(bases[i], s.block(i)) for i in range(n_ch)])
    degenerate = bool(np.any(block_traces <= 0.0))
    lam = np.divide(matched, block_traces,
                    out=np.zeros(n_ch), where=block_traces > 0.0)
    f = compose_f(channels)
    comp_basis = orthonormal_basis(f, "composite channel")
    cross_trace = _projected_trace(comp_basis, s.matrix)
    composite = cross_trace / total
    cv = (float(matched.sum()) - cross_trace) / total
    n_z = ms.n_total
    return DetectorReport(
        composite=composite,
        alphas=block_traces / total,
        per_channel=lam,
        cross_validation=cv,
        panel=KnowledgeSpec(ChannelKnowledge.KNOWN_F, NoiseKnowledge.COMMON_UNKNOWN),
        degenerate=degenerate,
        noise_null=np.array([total / n_z]),
        noise_alt=np.array([(total - cross_trace) / n_z]),
    )


def detect_p13(channels: Sequence[ChannelModel], ms: MeasurementSet) -> DetectorReport:
    """Known coupling and gains, per-channel unknown noise variances.

    Per-channel statistics are log energy ratios; the cross-validation term
    evaluates the known-noise fusion penalty at the local alternative-
    hypothesis noise estimates.  The composite projector uses the span of
    the unwhitened composite channel applied to the locally-whitened
    covariance, which keeps the report invariant to independent per-channel
    rescalings of the data.
    """
    s = _prepare(channels, ms)
    n_ch = len(channels)
    n_z = ms.n_total
    dims = np.array(ms.channel_dims, dtype=float)
    alphas = dims / n_z
    bases = _channel_bases(channels)
    block_traces = np.array([s.trace_block(i) for i in range(n_ch)])
    matched = np.array([_projected_trace(bases[i], s.block(i)) for i in range(n_ch)])
    residual = block_traces - matched
    spec = KnowledgeSpec(ChannelKnowledge.KNOWN_F, NoiseKnowledge.DIFFERENT_UNKNOWN)
    if np.any(residual <= 0.0):
        lam = np.where(residual > 0.0, np.log(
            np.divide(block_traces, residual, out=np.ones(n_ch), where=residual > 0.0)
        ), np.inf)
        return DetectorReport(
            composite=math.inf,
            alphas=alphas,
            per_channel=lam,
            cross_validation=0.0,
            panel=spec,
            degenerate=True,
            noise_null=block_traces / dims,
            noise_alt=residual / dims,
        )
    lam = np.log(block_traces / residual)
    sigma2_alt = residual / dims
    s_w = s.whitened(np.sqrt(sigma2_alt))
    f = compose_f(channels)
    comp_basis = orthonormal_basis(f, "composite channel")
    cross_trace = _projected_trace(comp_basis, s_w.matrix)
    cv = (float((matched / sigma2_alt).sum()) - cross_trace) / n_z
    composite = float(alphas @ lam) - cv
    return DetectorReport(
        composite=composite,
        alphas=alphas,
        per_channel=lam,
        cross_validation=cv,
        panel=spec,
        noise_null=block_traces / dims,
        noise_alt=sigma2_alt,
    )


def _gain_panel_common(channels, ms):
    _require_orthonormal(channels)
    s = _prepare(channels, ms)
    outputs = _matched_outputs(channels, ms)
    coherences, degenerate = _coherence_matrix(outputs)
    energies = np.array([float(np.real(np.vdot(a, a))) for a in outputs])
    return s, outputs, coherences, degenerate, energies


def detect_p21(channels: Sequence[ChannelModel], ms: MeasurementSet) -> DetectorReport:
    """Known orthonormal coupling, unknown gains, known noise variances.

    The composite statistic is the largest eigenvalue of the whitened
    matched-filter quadratic form (the maximized Rayleigh quotient over gain
    directions); its canonical decomposition subtracts the smallest
    eigenvalue of the fusion matrix from the equally-weighted per-channel
    statistics.
    """
    s, outputs, coherences, degenerate, energies = _gain_panel_common(channels, ms)
    n_ch = len(channels)
    m = ms.n_snapshots
    sigma2 = np.array([ch.noise_variance for ch in channels])
    lam = energies / (m * sigma2)
    quad = np.empty((n_ch, n_ch), dtype=np.complex128)
    for i in range(n_ch):
        for j in range(n_ch):
            quad[i, j] = np.vdot(outputs[j], outputs[i]) / (
                m * n_ch * math.sqrt(sigma2[i] * sigma2[j])
            )
    quad = 0.5 * (quad + quad.conj().T)
    ext = rayleigh_extremes(quad)
    alphas = np.full(n_ch, 1.0 / n_ch)
    t = build_fusion_t(alphas, lam, coherences)
    cv = rayleigh_extremes(t).min_value
    return DetectorReport(
        composite=ext.max_value,
        alphas=alphas,
        per_channel=lam,
        cross_validation=cv,
        panel=KnowledgeSpec(ChannelKnowledge.UNKNOWN_GAINS, NoiseKnowledge.KNOWN),
        degenerate=degenerate,
        gain_direction=_phase_normalized(ext.max_vector),
        coherences=coherences,
    )


def detect_p22(channels: Sequence[ChannelModel], ms: MeasurementSet) -> DetectorReport:
    """Known orthonormal coupling, unknown gains, common unknown noise."""
    s, outputs, coherences, degenerate, energies = _gain_panel_common(channels, ms)
    n_ch = len(channels)
    m = ms.n_snapshots
    total = s.trace()
    if total <= 0.0:
        raise DegenerateDataError("composite data has zero energy")
    block_traces = np.array([s.trace_block(i) for i in range(n_ch)])
    alphas = block_traces / total
    lam = np.divide(energies / m, block_traces,
                    out=np.zeros(n_ch), where=block_traces > 0.0)
    degenerate = degenerate or bool(np.any(block_traces <= 0.0))
    quad = np.empty((n_ch, n_ch), dtype=np.complex128)
    for i in range(n_ch):
        for j in range(n_ch):
            quad[i, j] = np.vdot(outputs[j], outputs[i]) / (m * total)
    quad = 0.5 * (quad + quad.conj().T)
    ext = rayleigh_extremes(quad)
    t = build_fusion_t(alphas, lam, coherences)
    cv = rayleigh_extremes(t).min_value
    return DetectorReport(
        composite=ext.max_value,
        alphas=alphas,
        per_channel=lam,
        cross_validation=cv,
        panel=KnowledgeSpec(ChannelKnowledge.UNKNOWN_GAINS, NoiseKnowledge.COMMON_UNKNOWN),
        degenerate=degenerate,
        gain_direction=_phase_normalized(ext.max_vector),
        coherences=coherences,
        noise_null=np.array([total / ms.n_total]),
    )


def detect_p23(channels: Sequence[ChannelModel], ms: MeasurementSet) -> DetectorReport:
    """Known orthonormal coupling, unknown gains, per-channel unknown noise.

    The fusion matrix is built from matched-to-residual energy ratios (the
    same statistic on and off the diagonal) while the weighted sum uses the
    per-channel log energy ratios; the whole report is invariant to
    independent per-channel rescalings.
    """
    s, outputs, coherences, degenerate, energies = _gain_panel_common(channels, ms)
    n_ch = len(channels)
    m = ms.n_snapshots
    n_z = ms.n_total
    dims = np.array(ms.channel_dims, dtype=float)
    alphas = dims / n_z
    block_traces = np.array([s.trace_block(i) for i in range(n_ch)])
    matched = energies / m
    residual = block_traces - matched
    spec = KnowledgeSpec(ChannelKnowledge.UNKNOWN_GAINS, NoiseKnowledge.DIFFERENT_UNKNOWN)
    if np.any(residual <= 0.0):
        lam = np.where(residual > 0.0, np.log(
            np.divide(block_traces, residual, out=np.ones(n_ch), where=residual > 0.0)
        ), np.inf)
        return DetectorReport(
            composite=math.inf,
            alphas=alphas,
            per_channel=lam,
            cross_validation=0.0,
            panel=spec,
            degenerate=True,
            coherences=coherences,
            noise_null=block_traces / dims,
            noise_alt=residual / dims,
        )
    lam = np.log(block_traces / residual)
    ratios = matched / residual
    t = build_fusion_t(alphas, ratios, coherences)
    ext = rayleigh_extremes(t)
    cv = ext.min_value
    composite = float(alphas @ lam) - cv
    return DetectorReport(
        composite=composite,
        alphas=alphas,
        per_channel=lam,
        cross_validation=cv,
        panel=spec,
        degenerate=degenerate,
        gain_direction=_phase_normalized(ext.min_vector),
        coherences=coherences,
        noise_null=block_traces / dims,
        noise_alt=residual / dims,
        extras={"fusion_stats": ratios},
    )


def _check_subspace_dims(channels, ms, *, need_residual: bool) -> int:
    j = channels[0].n_modes
    m = ms.n_snapshots
    if m < j:
        raise ValueError(f"need at least J={j} snapshots, got M={m}")
    for idx, dim in enumerate(ms.channel_dims):
        if j > dim:
            raise ValueError(f"J={j} exceeds channel {idx} dimension {dim}")
        if need_residual and dim <= j:
            raise ValueError(
                f"channel {idx} needs more than J={j} samples for a residual, got {dim}"
            )
    return j


def detect_p31(channels: Sequence[ChannelModel], ms: MeasurementSet) -> DetectorReport:
    """Unknown rank-J coupling, known noise variances.

    Composite statistic: (1/L) times the dominant-J eigen-energy of the
    whitened composite covariance; the cross-validation term compares
    subdominant (noise-subspace) energies of the composite against the
    channels.
    """
    s = _prepare(channels, ms)
    j = _check_subspace_dims(channels, ms, need_residual=False)
    n_ch = len(channels)
    s_w = s.whitened(_sigmas(channels))
    lam = np.empty(n_ch)
    sub = np.empty(n_ch)
    bases = []
    for i in range(n_ch):
        eig = hermitian_eig(s_w.block(i))
        lam[i] = float(eig.values[:j].sum())
        sub[i] = float(eig.values[j:].sum())
        bases.append(eig.vectors[:, :j])
    eig_z = hermitian_eig(s_w.matrix)
    top_z = float(eig_z.values[:j].sum())
    sub_z = float(eig_z.values[j:].sum())
    alphas = np.full(n_ch, 1.0 / n_ch)
    cv = sub_z / n_ch - float(alphas @ sub)
    return DetectorReport(
        composite=top_z / n_ch,
        alphas=alphas,
        per_channel=lam,
        cross_validation=cv,
        panel=KnowledgeSpec(ChannelKnowledge.UNKNOWN_SUBSPACE, NoiseKnowledge.KNOWN),
        channel_bases=tuple(bases),
        composite_basis=eig_z.vectors[:, :j],
    )


def detect_p32(channels: Sequence[ChannelModel], ms: MeasurementSet) -> DetectorReport:
    """Unknown rank-J coupling, common unknown noise variance."""
    s = _prepare(channels, ms)
    j = _check_subspace_dims(channels, ms, need_residual=False)
    n_ch = len(channels)
    total = s.trace()
    if total <= 0.0:
        raise DegenerateDataError("composite data has zero energy")
    block_traces = np.array([s.trace_block(i) for i in range(n_ch)])
    lam = np.empty(n_ch)
    sub_frac = np.empty(n_ch)
    bases = []
    for i in range(n_ch):
        eig = hermitian_eig(s.block(i))
        top = float(eig.values[:j].sum())
        rest = float(eig.values[j:].sum())
        with np.errstate(invalid="ignore"):
            lam[i] = top / block_traces[i] if block_traces[i] > 0 else 0.0
            sub_frac[i] = rest / block_traces[i] if block_traces[i] > 0 else 0.0
        bases.append(eig.vectors[:, :j])
    eig_z = hermitian_eig(s.matrix)
    top_z = float(eig_z.values[:j].sum())
    sub_z = float(eig_z.values[j:].sum())
    alphas = block_traces / total
    cv = sub_z / total - float(alphas @ sub_frac)
    return DetectorReport(
        composite=top_z / total,
        alphas=alphas,
        per_channel=lam,
        cross_validation=cv,
        panel=KnowledgeSpec(ChannelKnowledge.UNKNOWN_SUBSPACE, NoiseKnowledge.COMMON_UNKNOWN),
        degenerate=bool(np.any(block_traces <= 0.0)),
        channel_bases=tuple(bases),
        composite_basis=eig_z.vectors[:, :j],
    )


def detect_p33(
    channels: Sequence[ChannelModel],
    ms: MeasurementSet,
    *,
    dominant_numerator: bool = False,
) -> DetectorReport:
    """Unknown rank-J coupling, per-channel unknown noise variances.

    The per-channel statistic defaults to ln(1 + total/subdominant) energy
    ratio; ``dominant_numerator=True`` uses ln(1 + dominant/subdominant)
    instead (equivalently ln(total/subdominant)), which is the exact analog
    of the known-coupling log-ratio statistic evaluated at the estimated
    subspace.  The cross-validation term is invariant to the choice.
    """
    s = _prepare(channels, ms)
    j = _check_subspace_dims(channels, ms, need_residual=True)
    n_ch = len(channels)
    n_z = ms.n_total
    dims = np.array(ms.channel_dims, dtype=float)
    alphas = dims / n_z
    top = np.empty(n_ch)
    sub = np.empty(n_ch)
    traces = np.empty(n_ch)
    bases = []
    for i in range(n_ch):
        eig = hermitian_eig(s.block(i))
        top[i] = float(eig.values[:j].sum())
        sub[i] = float(eig.values[j:].sum())
        traces[i] = float(eig.values.sum())
        bases.append(eig.vectors[:, :j])
    spec = KnowledgeSpec(ChannelKnowledge.UNKNOWN_SUBSPACE, NoiseKnowledge.DIFFERENT_UNKNOWN)
    if np.any(sub <= 0.0):
        lam = np.where(sub > 0.0, np.log1p(
            np.divide(top if dominant_numerator else traces, sub,
                      out=np.ones(n_ch), where=sub > 0.0)
        ), np.inf)
        return DetectorReport(
            composite=math.inf,
            alphas=alphas,
            per_channel=lam,
            cross_validation=0.0,
            panel=spec,
            degenerate=True,
            noise_alt=np.where(sub > 0.0, sub / dims, 0.0),
            channel_bases=tuple(bases),
        )
    numerator = top if dominant_numerator else traces
    lam = np.log1p(numerator / sub)
    phi = top / sub
    sigma2_alt = sub / dims
    s_w = s.whitened(np.sqrt(sigma2_alt))
    eig_z = hermitian_eig(s_w.matrix)
    top_z = float(eig_z.values[:j].sum())
    cv = float(alphas @ phi) - top_z / n_z
    composite = float(alphas @ lam) - cv
    return DetectorReport(
        composite=composite,
        alphas=alphas,
        per_channel=lam,
        cross_validation=cv,
        panel=spec,
        noise_alt=sigma2_alt,
        channel_bases=tuple(bases),
        composite_basis=eig_z.vectors[:, :j],
        extras={"fusion_stats": phi},
    )


_DISPATCH = {
    ("known_f", "known"): detect_p11,
    ("known_f", "common_unknown"): detect_p12,
    ("known_f", "different_unknown"): detect_p13,
    ("unknown_gains", "known"): detect_p21,
    ("unknown_gains", "common_unknown"): detect_p22,
    ("unknown_gains", "different_unknown"): detect_p23,
    ("unknown_subspace", "known"): detect_p31,
    ("unknown_subspace", "common_unknown"): detect_p32,
    ("unknown_subspace", "different_unknown"): detect_p33,
}


def detect(
    spec: KnowledgeSpec,
    channels: Sequence[ChannelModel],
    measurements: MeasurementSet,
    **options,
) -> DetectorReport:
    """Dispatch to the panel selected by ``spec``.

    ``options`` are forwarded to the panel implementation (currently only
    the unknown-subspace, per-channel-noise panel takes
    ``dominant_numerator``).
    """
    key = (spec.channel_knowledge.value, spec.noise_knowledge.value)
    fn = _DISPATCH[key]
    return fn(channels, measurements, **options)
