"""The 18 HRV indices of one NN segment, and feature-matrix CSV I/O."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import astuple, dataclass, fields
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import welch

from hrvaf.config import RunConfig, SpectralConfig
from hrvaf.errors import InsufficientDataError, SchemaError, UndefinedIndexError
from hrvaf.ingest import Rhythm
from hrvaf.segmenter import Segment

log = logging.getLogger(__name__)

INDEX_NAMES = (
    "rmssd", "meannn", "sdnn", "iqrnn", "pnn50", "pnn20",
    "tinn", "hti",
    "lf", "hf", "vhf",
    "sd1", "sd2",
    "pip", "pas",
    "ai", "pi",
    "apen",
)  # fmt: skip
N_INDICES = len(INDEX_NAMES)
FEATURE_CSV_PREFIX = ("patient_id", "rhythm", "segment_start_s")


@dataclass(frozen=True)
class HrvVector:
    rmssd: float
    meannn: float
    sdnn: float
    iqrnn: float
    pnn50: float
    pnn20: float
    tinn: float
    hti: float
    lf: float
    hf: float
    vhf: float
    sd1: float
    sd2: float
    pip: float
    pas: float
    ai: float
    pi: float
    apen: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


assert tuple(f.name for f in fields(HrvVector)) == INDEX_NAMES


def _as_nn(nn, minimum: int, what: str) -> np.ndarray:
    x = np.asarray(nn, dtype=float)
    if x.ndim != 1 or len(x) < minimum:
        raise InsufficientDataError(f"{what} needs at least {minimum} NN intervals, got {len(x)}")
    return x


def time_domain(nn) -> tuple[float, float, float, float, float, float]:
    """(meannn, sdnn, rmssd, iqrnn, pnn50, pnn20) in ms / percent."""
    x = _as_nn(nn, 2, "time-domain indices")
    d = np.diff(x)
    q1, q3 = np.percentile(x, [25, 75])
    return (
        float(x.mean()),
        float(x.std(ddof=1)),
        float(np.sqrt(np.mean(d**2))),
        float(q3 - q1),
        float(100.0 * np.count_nonzero(np.abs(d) > 50.0) / len(d)),
        float(100.0 * np.count_nonzero(np.abs(d) > 20.0) / len(d)),
    )


def geometric(nn, bin_ms: float = 7.8125) -> tuple[float, float]:
    """Triangular interpolation width (TINN) and triangular index (HTI).

    Bins of width ``bin_ms`` start at 0. The triangle peaks at the centre of the
    (first) modal bin with the modal count and falls to zero at bin edges N
    (left) and M (right); both are searched over the histogram's edge range and
    the pair with the least squared error against the bin counts wins. Ties go
    to the narrowest triangle.
    """
    x = _as_nn(nn, 30, "geometric indices")
    idx = np.floor(x / bin_ms).astype(np.int64)
    lo = idx.min()
    counts = np.bincount(idx - lo).astype(float)
    peak = int(np.argmax(counts))
    height = counts[peak]
    hti = len(x) / height
    if len(counts) == 1:
        return 0.0, float(hti)

    # positions in bin units relative to the first occupied bin
    centres = np.arange(len(counts)) + 0.5
    apex = peak + 0.5
    # The error splits into a left part (bins up to the peak, depends on N only)
    # and a right part (bins past the peak, depends on M only).
    left_c, left_y = centres[: peak + 1], counts[: peak + 1]
    n_cand = np.arange(0, peak + 1, dtype=float)
    q = height * (left_c[None, :] - n_cand[:, None]) / (apex - n_cand[:, None])
    q = np.where(left_c[None, :] > n_cand[:, None], q, 0.0)
    err_left = ((left_y[None, :] - q) ** 2).sum(axis=1)

    right_c, right_y = centres[peak + 1 :], counts[peak + 1 :]
    m_cand = np.arange(peak + 1, len(counts) + 1, dtype=float)
    q = height * (m_cand[:, None] - right_c[None, :]) / (m_cand[:, None] - apex)
    q = np.where(right_c[None, :] < m_cand[:, None], q, 0.0)
    err_right = ((right_y[None, :] - q) ** 2).sum(axis=1)

    def best(err, prefer):
        tol = 1e-9 * max(1.0, err.min())
        ok = np.nonzero(err <= err.min() + tol)[0]
        return ok[-1] if prefer == "last" else ok[0]

    n_edge = n_cand[best(err_left, "last")]
    m_edge = m_cand[best(err_right, "first")]
    return float((m_edge - n_edge) * bin_ms), float(hti)


def resample_nn(nn, beat_times, interp_hz: float) -> np.ndarray:
    """Natural cubic spline through (beat_time, nn) sampled from the first beat on."""
    x = np.asarray(nn, dtype=float)
    t = np.asarray(beat_times, dtype=float)
    t = t - t[0]
    grid = np.arange(int(math.floor(t[-1] * interp_hz + 1e-9)) + 1) / interp_hz
    return CubicSpline(t, x, bc_type="natural")(grid)


def band_power(freqs: np.ndarray, psd: np.ndarray, lo: float, hi: float) -> float:
    mask = (freqs >= lo) & (freqs < hi)
    if mask.sum() < 2:
        return 0.0
    return float(np.trapezoid(psd[mask], freqs[mask]))


def frequency_domain(nn, beat_times, cfg: SpectralConfig | None = None) -> tuple[float, float, float]:
    """(lf, hf, vhf) band powers in ms^2 from a Welch PSD of the resampled tachogram."""
    cfg = cfg or SpectralConfig()
    x = _as_nn(nn, 30, "frequency-domain indices")
    t = np.asarray(beat_times, dtype=float)
    if len(t) != len(x):
        raise ValueError("nn and beat_times differ in length")
    if np.any(np.diff(t) <= 0):
        raise ValueError("beat_times must be strictly increasing")
    signal = resample_nn(x, t, cfg.interp_hz)
    if len(signal) < cfg.nperseg:
        raise InsufficientDataError(
            f"{(t[-1] - t[0]):.1f} s of NN data is shorter than one {cfg.window_s:g} s Welch window"
        )
    signal = signal - signal.mean()
    freqs, psd = welch(
        signal,
        fs=cfg.interp_hz,
        window="hann",
        nperseg=cfg.nperseg,
        noverlap=cfg.noverlap,
        detrend=False,
        scaling="density",
    )
    return tuple(band_power(freqs, psd, *cfg.bands[b]) for b in ("lf", "hf", "vhf"))


def poincare(nn) -> tuple[float, float]:
    """SD1/SD2 from the successive-difference and NN variances (divisor n - 1).

    The successive-difference term is the mean square of the differences, so
    SD1 equals RMSSD / sqrt(2) exactly.
    """
    x = _as_nn(nn, 3, "Poincare indices")
    d = np.diff(x)
    var_d = np.mean(d**2)
    var_x = x.var(ddof=1)
    sd1 = math.sqrt(var_d / 2.0)
    sd2 = math.sqrt(max(2.0 * var_x - var_d / 2.0, 0.0))
    return sd1, sd2


def _inflections(d: np.ndarray) -> np.ndarray:
    """Boolean per adjacent difference pair (d[j-1], d[j]), j >= 1."""
    a, b = d[:-1], d[1:]
    return (a * b < 0) | ((a == 0) ^ (b == 0))


def fragmentation(nn) -> tuple[float, float]:
    """(pip, pas): percentage of inflection points and of NN intervals in alternation segments."""
    x = _as_nn(nn, 4, "fragmentation indices")
    d = np.diff(x)
    infl = _inflections(d)
    pip = 100.0 * infl.sum() / len(d)

    covered = np.zeros(len(x), dtype=bool)
    # runs of consecutive inflections j=a..b span differences a-1..b and NN a-1..b+1
    padded = np.concatenate([[False], infl, [False]]).astype(np.int8)
    edges = np.diff(padded)
    starts = np.nonzero(edges == 1)[0]
    stops = np.nonzero(edges == -1)[0]
    for s, e in zip(starts, stops):
        # inflection flags s..e-1 refer to difference pairs (s, s+1) .. (e-1, e)
        n_diffs = e - s + 1
        if n_diffs >= 3:
            covered[s : e + 2] = True
    pas = 100.0 * covered.sum() / len(x)
    return float(pip), float(pas)


def asymmetry(nn) -> tuple[float, float]:
    """(ai, pi): sector-area and point-count share of Poincare points below the identity line."""
    x = _as_nn(nn, 3, "asymmetry indices")
    px, py = x[:-1], x[1:]
    below = py < px
    above = py > px
    n_off = below.sum() + above.sum()
    if n_off == 0:
        raise UndefinedIndexError("all Poincare points lie on the identity line")
    pi = 100.0 * below.sum() / n_off
    weight = (px**2 + py**2) * np.abs(np.arctan2(py, px) - math.pi / 4)
    off = below | above
    ai = 100.0 * weight[below].sum() / weight[off].sum()
    return float(ai), float(pi)


def _apen_phi(close: np.ndarray, m: int) -> float:
    # templates i, j match when every lagged pair (i+k, j+k), k < m, is close
    count = len(close) - m + 1
    match = close[:count, :count].copy()
    for k in range(1, m):
        match &= close[k : k + count, k : k + count]
    c = match.sum(axis=1) / count
    return float(np.log(c).mean())


def approximate_entropy(nn, m: int = 2, r_factor: float = 0.2) -> float:
    """ApEn with tolerance ``r_factor * SDNN``, Chebyshev distance, self-matches counted."""
    x = _as_nn(nn, m + 2, "approximate entropy")
    sd = x.std(ddof=1)
    if sd == 0:
        return 0.0
    close = np.abs(x[:, None] - x[None, :]) <= r_factor * sd
    return _apen_phi(close, m) - _apen_phi(close, m + 1)


def compute_feature_vector(segment: Segment, config: RunConfig | None = None) -> HrvVector:
    """All 18 indices of one segment. Constant series are rejected."""
    config = config or RunConfig()
    nn = np.asarray(segment.nn, dtype=float)
    meannn, sdnn, rmssd, iqrnn, pnn50, pnn20 = time_domain(nn)
    if sdnn == 0:
        raise InsufficientDataError("constant NN series")
    tinn, hti = geometric(nn, config.hist_bin_ms)
    lf, hf, vhf = frequency_domain(nn, segment.beat_times, config.spectral)
    sd1, sd2 = poincare(nn)
    pip, pas = fragmentation(nn)
    ai, pi = asymmetry(nn)
    apen = approximate_entropy(nn, config.apen_m, config.apen_r)
    vec = HrvVector(
        rmssd=rmssd, meannn=meannn, sdnn=sdnn, iqrnn=iqrnn, pnn50=pnn50, pnn20=pnn20,
        tinn=tinn, hti=hti, lf=lf, hf=hf, vhf=vhf, sd1=sd1, sd2=sd2,
        pip=pip, pas=pas, ai=ai, pi=pi, apen=apen,
    )  # fmt: skip
    if not np.all(np.isfinite(vec.as_array())):
        raise UndefinedIndexError("non-finite HRV index")
    return vec


# --------------------------------------------------------------------------
# feature matrices


@dataclass(frozen=True)
class FeatureRow:
    patient_id: str
    rhythm: Rhythm
    segment_start_s: float
    values: np.ndarray


@dataclass(frozen=True)
class PatientFeatures:
    """NSR and AF feature matrices of one patient (rows are segments)."""

    patient_id: str
    nsr: np.ndarray
    af: np.ndarray
    nsr_starts: np.ndarray = None
    af_starts: np.ndarray = None


def compute_feature_rows(segments: Sequence[Segment], config: RunConfig | None = None) -> list[FeatureRow]:
    """Feature rows for many segments; failing segments are logged and skipped."""
    rows = []
    for seg in segments:
        try:
            vec = compute_feature_vector(seg, config)
        except (InsufficientDataError, UndefinedIndexError) as exc:
            log.warning("dropping segment %s@%.0fs (%s): %s", seg.patient_id, seg.start_time, seg.rhythm.value, exc)
            continue
        rows.append(FeatureRow(seg.patient_id, seg.rhythm, seg.start_time, vec.as_array()))
    return rows


def group_rows(rows: Sequence[FeatureRow], min_per_rhythm: int = 2) -> list[PatientFeatures]:
    """Collect rows into per-patient matrices, dropping patients short of either rhythm."""
    by: dict[str, dict[Rhythm, list[FeatureRow]]] = {}
    for r in rows:
        by.setdefault(r.patient_id, {Rhythm.NSR: [], Rhythm.AF: []})[r.rhythm].append(r)
    out = []
    for pid in sorted(by):
        nsr, af = by[pid][Rhythm.NSR], by[pid][Rhythm.AF]
        if len(nsr) < min_per_rhythm or len(af) < min_per_rhythm:
            log.info("dropping patient %s: %d NSR / %d AF feature rows", pid, len(nsr), len(af))
            continue
        out.append(
            PatientFeatures(
                pid,
                np.array([r.values for r in nsr]),
                np.array([r.values for r in af]),
                np.array([r.segment_start_s for r in nsr]),
                np.array([r.segment_start_s for r in af]),
            )
        )
    return out


def patient_rows(patients: Sequence[PatientFeatures]) -> list[FeatureRow]:
    rows = []
    for p in patients:
        for rhythm, mat, starts in ((Rhythm.NSR, p.nsr, p.nsr_starts), (Rhythm.AF, p.af, p.af_starts)):
            if starts is None:
                starts = np.arange(len(mat), dtype=float)
            rows += [FeatureRow(p.patient_id, rhythm, float(s), np.asarray(v)) for s, v in zip(starts, mat)]
    return rows


def write_features_csv(rows: Sequence[FeatureRow], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(FEATURE_CSV_PREFIX + INDEX_NAMES)
    for r in rows:
        w.writerow((r.patient_id, r.rhythm.value, repr(float(r.segment_start_s)), *(repr(float(v)) for v in r.values)))


def read_features_csv(fh) -> list[FeatureRow]:
    reader = csv.reader(fh)
    header = next(reader, None)
    expected = FEATURE_CSV_PREFIX + INDEX_NAMES
    if header is None or tuple(header) != expected:
        raise SchemaError(f"expected feature CSV header {','.join(expected)}, got {header}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(expected):
            raise SchemaError(f"line {lineno}: expected {len(expected)} columns, got {len(row)}")
        try:
            rows.append(FeatureRow(row[0], Rhythm(row[1]), float(row[2]), np.array([float(v) for v in row[3:]])))
        except ValueError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
    return rows
