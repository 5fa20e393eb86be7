"""Deterministic synthetic feature datasets and RR series.

Random numbers come from SplitMix64 (Steele, Lea & Flood 2014), a 64-bit
state generator chosen because it is trivial to reimplement bit-exactly:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)                       (all arithmetic mod 2**64)

Uniforms are ``((out >> 11) + 1) * 2**-53`` in (0, 1]. Normals use the
Box-Muller pair ``sqrt(-2 ln u1) * (cos, sin)(2 pi u2)`` on consecutive
uniforms. Per-patient streams are seeded with consecutive outputs of a
SplitMix64 stream started at the master seed. Test vector: seed 0 yields
0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from hrvaf.errors import ConfigError
from hrvaf.features import INDEX_NAMES, PatientFeatures
from hrvaf.gaussian import sorted_eigh
from hrvaf.ingest import NnSeries, Rhythm

GENERATOR = {"algorithm": "splitmix64", "normal": "box-muller", "version": 1}

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = steps * np.uint64(GAMMA) + np.uint64(self.state)
        self.state = (self.state + n * GAMMA) & MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def uniform(self, n: int) -> np.ndarray:
        return ((self.next_u64(n) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log(u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        return np.column_stack([radius * np.cos(angle), radius * np.sin(angle)]).ravel()[:n]

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        return self.normal(rows * cols).reshape(rows, cols)


def child_seeds(seed: int, count: int) -> list[int]:
    return [int(s) for s in SplitMix64(seed).next_u64(count)]


# --------------------------------------------------------------------------
# feature datasets

NSR_MEANS = dict(
    rmssd=35.0, meannn=850.0, sdnn=50.0, iqrnn=60.0, pnn50=15.0, pnn20=40.0,
    tinn=250.0, hti=12.0, lf=800.0, hf=500.0, vhf=60.0, sd1=25.0, sd2=65.0,
    pip=45.0, pas=10.0, ai=50.0, pi=50.0, apen=1.0,
)  # fmt: skip
AF_MEANS = dict(
    rmssd=120.0, meannn=650.0, sdnn=110.0, iqrnn=150.0, pnn50=70.0, pnn20=88.0,
    tinn=500.0, hti=9.0, lf=1500.0, hf=2500.0, vhf=900.0, sd1=85.0, sd2=130.0,
    pip=60.0, pas=40.0, ai=50.0, pi=50.0, apen=0.9,
)  # fmt: skip
_STRUCTURE_SEED = 20240601


def _rotation(seed: int, d: int, size: float) -> np.ndarray:
    """expm of a random skew-symmetric matrix scaled by ``size``: a fixed mild rotation."""
    a = SplitMix64(seed).normal_matrix(d, d)
    skew = size * (a - a.T) / np.sqrt(2 * d)
    vals, vecs = np.linalg.eigh(1j * skew)  # 1j * skew is Hermitian
    return (vecs @ np.diag(np.exp(-1j * vals)) @ vecs.conj().T).real


def separated_covariance(mean: np.ndarray, seed: int, rel_sd: float = 0.15, rotation: float = 0.3) -> np.ndarray:
    """Correlated covariance at roughly ``rel_sd * mean`` scale with no two eigenvalues close.

    Features are ranked by ``(rel_sd * mean)**2`` and receive variances spaced
    geometrically between the largest and smallest of those; a mild fixed
    rotation then adds correlations without touching the spectrum.
    """
    natural = (rel_sd * np.abs(mean)) ** 2
    d = len(mean)
    rank = np.argsort(np.argsort(-natural, kind="stable"), kind="stable")
    ladder = np.geomspace(natural.max(), natural.min(), d)
    rot = _rotation(seed, d, rotation)
    cov = rot @ np.diag(ladder[rank]) @ rot.T
    return (cov + cov.T) / 2.0


def default_moments(rel_sd: float = 0.15) -> tuple[np.ndarray, np.ndarray]:
    """NSR-like mean and covariance."""
    mean = np.array([NSR_MEANS[n] for n in INDEX_NAMES])
    return mean, separated_covariance(mean, _STRUCTURE_SEED, rel_sd)


def eigenbasis_map(nsr_cov: np.ndarray, af_cov: np.ndarray) -> np.ndarray:
    """Linear part of the rotate-scale-rotate map between two covariances.

    Principal axes are paired by rank and each AF axis is oriented to agree
    with its NSR partner, the same conventions the fitted transforms use.
    """
    lx, rx = sorted_eigh(nsr_cov)
    ly, ry = sorted_eigh(af_cov)
    if lx[-1] <= 0 or ly[-1] <= 0:
        raise ConfigError("covariances must be positive definite")
    flip = np.einsum("ij,ij->i", rx, ry) < 0
    ry[flip] *= -1.0
    return ry.T @ np.diag(np.sqrt(ly / lx)) @ rx


def generic_map(nsr_cov: np.ndarray, af_cov: np.ndarray, seed: int = _STRUCTURE_SEED + 2, rotation: float = 0.5) -> np.ndarray:
    """``S_af Q S_nsr^-1`` with symmetric roots and a fixed rotation Q: moment-consistent but
    not aligned with either eigenbasis."""
    lx, rx = sorted_eigh(nsr_cov)
    inv_root = rx.T @ np.diag(lx**-0.5) @ rx
    return psd_sqrt(af_cov) @ _rotation(seed, len(lx), rotation) @ inv_root


def default_af_map(
    nsr_mean: np.ndarray, nsr_cov: np.ndarray, rel_sd: float = 0.15, kind: str = "eigenbasis"
) -> tuple[np.ndarray, np.ndarray]:
    """Affine map (matrix, offset) with ``y = matrix @ x + offset`` onto AF-like moments.

    ``kind="eigenbasis"`` gives a map of the form the per-patient transforms
    can represent; ``kind="generic"`` one they cannot.
    """
    af_mean = np.array([AF_MEANS[n] for n in INDEX_NAMES])
    af_cov = separated_covariance(af_mean, _STRUCTURE_SEED + 1, rel_sd)
    if kind == "eigenbasis":
        matrix = eigenbasis_map(nsr_cov, af_cov)
    elif kind == "generic":
        matrix = generic_map(nsr_cov, af_cov)
    else:
        raise ConfigError(f"unknown map kind {kind!r}")
    return matrix, af_mean - matrix @ nsr_mean


@dataclass
class SynthSpec:
    seed: int = 0
    patients: int = 30
    samples_per_rhythm: int = 60
    nsr_mean: Optional[np.ndarray] = None
    nsr_cov: Optional[np.ndarray] = None
    af_matrix: Optional[np.ndarray] = None
    af_offset: Optional[np.ndarray] = None
    noise_scale: float = 0.1  # AF noise as a fraction of the shared AF covariance root
    patient_spread: float = 1.0  # spread of patient means, in units of the shared covariance
    cov_jitter: float = 0.2  # log-sd of per-feature covariance scaling per patient
    map_kind: str = "eigenbasis"  # default ground-truth map when af_matrix is not given

    def __post_init__(self):
        if self.samples_per_rhythm < 15:
            raise ConfigError("samples_per_rhythm must be >= 15")
        if self.patients < 1:
            raise ConfigError("need at least one patient")
        if self.noise_scale < 0 or self.patient_spread < 0 or self.cov_jitter < 0:
            raise ConfigError("noise_scale, patient_spread and cov_jitter must be non-negative")
        if self.nsr_mean is None or self.nsr_cov is None:
            mean, cov = default_moments()
            self.nsr_mean = mean if self.nsr_mean is None else self.nsr_mean
            self.nsr_cov = cov if self.nsr_cov is None else self.nsr_cov
        self.nsr_mean = np.asarray(self.nsr_mean, dtype=float)
        self.nsr_cov = np.atleast_2d(np.asarray(self.nsr_cov, dtype=float))
        if self.af_matrix is None or self.af_offset is None:
            matrix, offset = default_af_map(self.nsr_mean, self.nsr_cov, kind=self.map_kind)
            self.af_matrix = matrix if self.af_matrix is None else self.af_matrix
            self.af_offset = offset if self.af_offset is None else self.af_offset
        self.af_matrix = np.atleast_2d(np.asarray(self.af_matrix, dtype=float))
        self.af_offset = np.asarray(self.af_offset, dtype=float)
        d = len(self.nsr_mean)
        if self.nsr_cov.shape != (d, d) or self.af_matrix.shape != (d, d) or self.af_offset.shape != (d,):
            raise ConfigError("inconsistent dimensions in synthetic spec")
        if not np.allclose(self.nsr_cov, self.nsr_cov.T):
            raise ConfigError("nsr_cov is not symmetric")
        vals = np.linalg.eigvalsh(self.nsr_cov)
        if vals.min() < -1e-10 * max(vals.max(), 1.0):
            raise ConfigError("nsr_cov is not positive semi-definite")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "patients": self.patients,
            "samples_per_rhythm": self.samples_per_rhythm,
            "noise_scale": self.noise_scale,
            "patient_spread": self.patient_spread,
            "cov_jitter": self.cov_jitter,
            "map_kind": self.map_kind,
            "generator": GENERATOR,
        }


@dataclass
class SynthDataset:
    patients: list
    af_matrix: np.ndarray
    af_offset: np.ndarray
    spec: SynthSpec = field(repr=False)

    def truth(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.af_matrix.T + self.af_offset


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix (negative round-off clipped)."""
    vals, rows = sorted_eigh(cov)
    return rows.T @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ rows


def gen_feature_dataset(spec: SynthSpec) -> SynthDataset:
    """Per-patient (X_p, Y_p) with Y_p = affine(X_p) + noise, deterministic per seed."""
    d = len(spec.nsr_mean)
    shared_root = psd_sqrt(spec.nsr_cov)
    # noise follows the shape of the shared AF covariance, so it is a fixed fraction
    # of the spread along every principal axis
    noise_root = psd_sqrt(spec.af_matrix @ spec.nsr_cov @ spec.af_matrix.T)
    patients = []
    width = len(str(spec.patients))
    for p, pseed in enumerate(child_seeds(spec.seed, spec.patients)):
        rng = SplitMix64(pseed)
        mean_p = spec.nsr_mean + spec.patient_spread * shared_root @ rng.normal(d)
        jitter = np.exp(spec.cov_jitter * rng.normal(d))
        root_p = psd_sqrt(np.diag(jitter) @ spec.nsr_cov @ np.diag(jitter))
        x = mean_p + rng.normal_matrix(spec.samples_per_rhythm, d) @ root_p
        y = x @ spec.af_matrix.T + spec.af_offset
        if spec.noise_scale > 0:
            y = y + spec.noise_scale * rng.normal_matrix(spec.samples_per_rhythm, d) @ noise_root
        starts = 300.0 * np.arange(spec.samples_per_rhythm)
        patients.append(PatientFeatures(f"synth{p:0{width}d}", x, y, starts, starts))
    return SynthDataset(patients, spec.af_matrix, spec.af_offset, spec)


# --------------------------------------------------------------------------
# RR series


def gen_rr_series(seed: int, regime: Rhythm | str, duration_s: float = 600.0, start_time: float = 0.0) -> NnSeries:
    """Synthetic NN series filling ``duration_s`` seconds.

    NSR: 800 ms baseline, AR(1) deviations (coefficient 0.9, innovation sd
    15 ms) plus 25 ms at 0.1 Hz and 20 ms at 0.25 Hz sinusoidal modulation.
    AF: i.i.d. N(700, 120^2) ms clipped to [300, 1800] ms.
    """
    regime = Rhythm(regime)
    if duration_s < 600.0:
        raise ConfigError("duration_s must be at least 600 s")
    if regime is Rhythm.OTHER:
        raise ConfigError("regime must be NSR or AF")
    rng = SplitMix64(seed)
    expected = int(duration_s / (0.8 if regime is Rhythm.NSR else 0.7) * 1.5) + 16
    z = rng.normal(expected)
    times, nn = [], []
    t, dev, i = 0.0, 0.0, 0
    while True:
        if i >= len(z):
            z = np.concatenate([z, rng.normal(expected)])
        if regime is Rhythm.NSR:
            dev = 0.9 * dev + 15.0 * z[i]
            v = 800.0 + dev + 25.0 * np.sin(2 * np.pi * 0.1 * t) + 20.0 * np.sin(2 * np.pi * 0.25 * t)
        else:
            v = float(np.clip(700.0 + 120.0 * z[i], 300.0, 1800.0))
        if t + v / 1000.0 > duration_s:
            break
        times.append(t)
        nn.append(v)
        t += v / 1000.0
        i += 1
    return NnSeries(np.array(times) + start_time, np.array(nn), regime)


def gen_record(seed: int, layout: Sequence[tuple]) -> list[NnSeries]:
    """Consecutive rhythm episodes ``[(rhythm, duration_s), ...]`` on one timeline."""
    out = []
    t = 0.0
    for s, (rhythm, duration) in zip(child_seeds(seed, len(layout)), layout):
        series = gen_rr_series(s, rhythm, duration, start_time=t)
        out.append(series)
        t += duration
    return out
