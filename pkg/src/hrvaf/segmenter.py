"""Fixed-length overlapping windows over NN streams, and the per-patient segment filter."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from hrvaf.errors import SchemaError
from hrvaf.ingest import NnSeries, Rhythm

log = logging.getLogger(__name__)

SEGMENT_CSV_COLUMNS = ("patient_id", "rhythm", "start_s", "nn_ms_semicolon_list")
BEAT_TIMES_COLUMN = "beat_times_s_semicolon_list"


@dataclass(frozen=True)
class Segment:
    patient_id: str
    start_time: float
    duration: float
    rhythm: Rhythm
    nn: np.ndarray = field(repr=False)
    beat_times: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.nn)


@dataclass(frozen=True)
class PatientSegments:
    patient_id: str
    nsr_segments: list
    af_segments: list

    def by_patient(self) -> dict:
        return {self.patient_id: self.nsr_segments + self.af_segments}


def make_segments(
    nn_series_list: Sequence[NnSeries],
    window: float = 600.0,
    step: float = 300.0,
    *,
    patient_id: str = "",
    anchor: float = 0.0,
    record_end: Optional[float] = None,
    foreign_beat_times: Optional[Iterable[float]] = None,
    min_nn: int = 30,
) -> list[Segment]:
    """Cut the NN series of one record into rhythm-pure windows.

    Windows start at ``anchor + k * step`` and must end by ``record_end``
    (default: the end of the last NN interval). An interval belongs to a window
    when it lies wholly inside it. A window is dropped if it holds intervals of
    both rhythms, any beat from ``foreign_beat_times`` (beats in OTHER or
    unannotated time), or fewer than ``min_nn`` intervals.
    """
    if window <= 0 or not 0 < step <= window:
        raise ValueError("need window > 0 and 0 < step <= window")
    series = [s for s in nn_series_list if len(s)]
    if not series:
        return []
    t = np.concatenate([s.beat_times for s in series])
    nn = np.concatenate([s.intervals for s in series])
    is_af = np.concatenate([np.full(len(s), s.rhythm is Rhythm.AF) for s in series])
    order = np.argsort(t, kind="stable")
    t, nn, is_af = t[order], nn[order], is_af[order]
    t_end = t + nn / 1000.0
    if record_end is None:
        record_end = float(t_end.max())
    foreign = np.sort(np.asarray([] if foreign_beat_times is None else list(foreign_beat_times), dtype=float))

    # small slack absorbs float noise in beat times read back from text
    eps = 1e-9
    out = []
    n_windows = math.floor((record_end - anchor - window) / step + eps) + 1
    for k in range(max(n_windows, 0)):
        start = anchor + k * step
        stop = start + window
        lo = np.searchsorted(t, start - eps, side="left")
        hi = np.searchsorted(t, stop, side="left")
        inside = np.arange(lo, hi)
        inside = inside[t_end[inside] <= stop + eps]
        if len(inside) < min_nn:
            continue
        if len(foreign):
            f_lo = np.searchsorted(foreign, start - eps, side="left")
            f_hi = np.searchsorted(foreign, stop, side="left")
            if f_hi > f_lo:
                continue
        # purity over every interval touching the window, not only the wholly-inside ones;
        # intervals never overlap, so t_end is sorted too
        touch_lo = np.searchsorted(t_end, start + eps, side="right")
        flags = is_af[touch_lo:hi]
        if flags.any() and not flags.all():
            continue
        rhythm = Rhythm.AF if is_af[inside[0]] else Rhythm.NSR
        out.append(Segment(patient_id, float(start), float(window), rhythm, nn[inside], t[inside]))
    return out


def filter_patients(
    segments_by_patient: Mapping[str, Sequence[Segment]], min_per_rhythm: int = 15
) -> list[PatientSegments]:
    """Keep patients with at least ``min_per_rhythm`` NSR and AF segments each."""
    kept = []
    for pid in sorted(segments_by_patient):
        segs = segments_by_patient[pid]
        nsr = [s for s in segs if s.rhythm is Rhythm.NSR]
        af = [s for s in segs if s.rhythm is Rhythm.AF]
        if len(nsr) >= min_per_rhythm and len(af) >= min_per_rhythm:
            kept.append(PatientSegments(pid, nsr, af))
        else:
            log.info("dropping patient %s: %d NSR / %d AF segments", pid, len(nsr), len(af))
    return kept


def _join(values) -> str:
    return ";".join(repr(float(v)) for v in values)


def write_segments_csv(patients: Sequence[PatientSegments], fh) -> None:
    """Segments CSV; a trailing beat-times column keeps the spectral timeline exact."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SEGMENT_CSV_COLUMNS + (BEAT_TIMES_COLUMN,))
    for p in patients:
        for s in p.nsr_segments + p.af_segments:
            w.writerow((s.patient_id, s.rhythm.value, repr(s.start_time), _join(s.nn), _join(s.beat_times)))


def read_segments_csv(fh, duration: float = 600.0) -> dict[str, list[Segment]]:
    """Read segments; without the beat-times column they are rebuilt as start + cumulative NN."""
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(header[:4]) != SEGMENT_CSV_COLUMNS:
        raise SchemaError(f"expected segment CSV header {','.join(SEGMENT_CSV_COLUMNS)}, got {header}")
    with_times = len(header) > 4 and header[4] == BEAT_TIMES_COLUMN
    out: dict[str, list[Segment]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            pid, rhythm, start = row[0], Rhythm(row[1]), float(row[2])
            nn = np.array([float(v) for v in row[3].split(";") if v])
            if with_times:
                times = np.array([float(v) for v in row[4].split(";") if v])
            else:
                times = start + np.concatenate([[0.0], np.cumsum(nn[:-1]) / 1000.0])
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
        if len(times) != len(nn):
            raise SchemaError(f"line {lineno}: {len(nn)} intervals but {len(times)} beat times")
        out.setdefault(pid, []).append(Segment(pid, start, duration, rhythm, nn, times))
    return out
