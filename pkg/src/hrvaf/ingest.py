"""WFDB header/annotation reading and rhythm-pure NN interval extraction.

Only the pieces needed to turn a rhythm-annotated beat stream into NN
intervals are handled here: the text header (for the sampling frequency and
record length) and the MIT binary annotation format.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from hrvaf.errors import AnnotationParseError, DataError, HeaderParseError, SchemaError

log = logging.getLogger(__name__)

DEFAULT_FS = 250.0

# pseudo-annotation codes of the MIT format
SKIP, NUM, SUB, CHN, AUX = 59, 60, 61, 62, 63
NOTE = 22
NORMAL = 1

# codes that mark a QRS complex (the WFDB ``isqrs`` table)
BEAT_CODES = frozenset([*range(1, 14), 25, 30, 34, 35, 38, 41])

NN_CSV_COLUMNS = ("record", "span_rhythm", "beat_time_s", "nn_ms")
EVENT_CSV_COLUMNS = ("sample_index", "type_code", "subtype", "channel", "num", "aux")


class Rhythm(str, Enum):
    NSR = "NSR"
    AF = "AF"
    OTHER = "OTHER"


@dataclass(frozen=True)
class RecordHeader:
    record_name: str
    sampling_frequency: float
    signal_count: int
    sample_count: Optional[int] = None

    @property
    def duration_s(self) -> Optional[float]:
        if self.sample_count is None:
            return None
        return self.sample_count / self.sampling_frequency


@dataclass(frozen=True)
class AnnotationEvent:
    sample_index: int
    type_code: int
    subtype: int = 0
    channel: int = 0
    num: int = 0
    aux: Optional[str] = None

    @property
    def is_beat(self) -> bool:
        return self.type_code in BEAT_CODES


@dataclass(frozen=True)
class RhythmSpan:
    start_time: float
    end_time: float
    rhythm: Rhythm

    def contains(self, t: float) -> bool:
        return self.start_time <= t < self.end_time


@dataclass(frozen=True)
class NnSeries:
    beat_times: np.ndarray  # seconds, time of the first beat of each interval
    intervals: np.ndarray  # milliseconds
    rhythm: Rhythm

    def __len__(self):
        return len(self.intervals)


# --------------------------------------------------------------------------
# header


_FS_RE = re.compile(r"^([0-9.eE+-]+)")


def parse_header(raw: bytes | str) -> RecordHeader:
    """Parse the record line of a WFDB ``.hea`` file.

    The record line is ``name[/nseg] nsig [fs[/counter][(base)] [nsamp ...]]``.
    A missing frequency field means 250 Hz.
    """
    text = raw.decode("latin-1") if isinstance(raw, (bytes, bytearray)) else raw
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        name = parts[0].split("/")[0]
        if len(parts) < 2:
            raise HeaderParseError("record line lacks a signal count", lineno, "signal_count")
        try:
            nsig = int(parts[1].split(".")[0])
        except ValueError:
            raise HeaderParseError(
                f"bad signal count {parts[1]!r}", lineno, "signal_count"
            ) from None
        if nsig < 0:
            raise HeaderParseError("negative signal count", lineno, "signal_count")
        fs = DEFAULT_FS
        if len(parts) > 2:
            m = _FS_RE.match(parts[2])
            try:
                fs = float(m.group(1)) if m else float("nan")
            except ValueError:
                fs = float("nan")
            if not fs > 0:
                raise HeaderParseError(
                    f"bad sampling frequency {parts[2]!r}", lineno, "sampling_frequency"
                )
        nsamp = None
        if len(parts) > 3:
            try:
                nsamp = int(parts[3])
            except ValueError:
                raise HeaderParseError(
                    f"bad sample count {parts[3]!r}", lineno, "sample_count"
                ) from None
        return RecordHeader(name, fs, nsig, nsamp)
    raise HeaderParseError("no record line found", 1, "record_name")


# --------------------------------------------------------------------------
# annotations


def _signed_byte(b: int) -> int:
    return b - 256 if b > 127 else b


def decode_annotations(raw: bytes) -> tuple[list[AnnotationEvent], Optional[float]]:
    """Decode MIT-format annotation bytes.

    Returns the events and the sampling frequency declared in the file by a
    ``## time resolution`` note, if any. Definition notes at sample 0 and
    code-0 placeholders are consumed, matching the reference reader.
    """
    raw = bytes(raw)
    if len(raw) % 2:
        raise AnnotationParseError("odd number of bytes", len(raw) - 1)
    nwords = len(raw) // 2
    words = np.frombuffer(raw, dtype="<u2").astype(np.int64) if nwords else np.zeros(0, np.int64)

    events: list[dict] = []
    declared_fs = None
    total = 0
    chan = 0
    num = 0
    i = 0
    pending: Optional[dict] = None
    terminated = False

    def close(ev):
        nonlocal chan, num
        if ev is None:
            return
        if ev["chan_set"]:
            chan = ev["channel"]
        else:
            ev["channel"] = chan
        if ev["num_set"]:
            num = ev["num"]
        else:
            ev["num"] = num
        events.append(ev)

    while i < nwords:
        w = int(words[i])
        if w == 0:
            terminated = True
            break
        code, low = w >> 10, w & 0x3FF
        offset = 2 * i
        if code == SKIP:
            if i + 2 >= nwords:
                raise AnnotationParseError("truncated SKIP interval", offset)
            hi, lo = int(words[i + 1]), int(words[i + 2])
            skip = (hi << 16) | lo
            if skip > 0x7FFFFFFF:
                skip -= 1 << 32
            total += skip
            i += 3
            continue
        if code in (NUM, SUB, CHN, AUX):
            if pending is None:
                raise AnnotationParseError(f"modifier code {code} before any annotation", offset)
            b = low & 0xFF
            if code == SUB:
                pending["subtype"] = _signed_byte(b)
            elif code == CHN:
                pending["channel"] = b
                pending["chan_set"] = True
            elif code == NUM:
                pending["num"] = _signed_byte(b)
                pending["num_set"] = True
            else:
                n = low
                nbytes = n + (n & 1)
                start = 2 * (i + 1)
                if start + nbytes > len(raw):
                    raise AnnotationParseError("truncated aux payload", offset)
                pending["aux"] = raw[start : start + n].decode("latin-1")
                i += nbytes // 2
            i += 1
            continue
        # ordinary annotation word: finish the previous event first
        close(pending)
        total += low
        pending = {
            "sample_index": total,
            "type_code": code,
            "subtype": 0,
            "channel": 0,
            "num": 0,
            "aux": None,
            "chan_set": False,
            "num_set": False,
            "offset": offset,
        }
        i += 1
    close(pending)
    if not terminated:
        raise AnnotationParseError("missing 0x0000 terminator", len(raw))

    out = []
    for ev in events:
        if ev["type_code"] == 0:
            continue
        if ev["sample_index"] == 0 and ev["type_code"] == NOTE:
            m = re.match(r"## time resolution: (\d+\.?\d*)", ev["aux"] or "")
            if m:
                declared_fs = float(m.group(1))
            continue
        if ev["sample_index"] < 0:
            raise AnnotationParseError("negative sample index", ev["offset"])
        out.append(
            AnnotationEvent(
                ev["sample_index"], ev["type_code"], ev["subtype"], ev["channel"], ev["num"], ev["aux"]
            )
        )
    return out, declared_fs


def parse_annotations(raw: bytes, sampling_frequency: Optional[float] = None) -> list[AnnotationEvent]:
    """Parse MIT-format annotation bytes into events with absolute sample indices."""
    events, declared = decode_annotations(raw)
    if declared is not None and sampling_frequency is not None and declared != sampling_frequency:
        log.warning(
            "annotation file declares %g Hz but %g Hz was given; using the latter",
            declared,
            sampling_frequency,
        )
    return events


def merge_events(*streams: Sequence[AnnotationEvent]) -> list[AnnotationEvent]:
    """Merge several annotation streams (e.g. rhythm file plus beat file) by sample index."""
    merged = [ev for s in streams for ev in s]
    # stable: ties keep stream order
    return sorted(merged, key=lambda ev: ev.sample_index)


# --------------------------------------------------------------------------
# rhythm spans and NN series


def rhythm_of(aux: str) -> Rhythm:
    label = aux.rstrip("\x00").strip()
    if label == "(N":
        return Rhythm.NSR
    if label == "(AFIB":
        return Rhythm.AF
    return Rhythm.OTHER


def extract_rhythm_spans(
    events: Iterable[AnnotationEvent], sampling_frequency: float, record_end_time: float
) -> list[RhythmSpan]:
    markers = [
        (ev.sample_index / sampling_frequency, rhythm_of(ev.aux))
        for ev in events
        if ev.aux and ev.aux.startswith("(")
    ]
    spans = []
    for j, (start, rhythm) in enumerate(markers):
        end = markers[j + 1][0] if j + 1 < len(markers) else record_end_time
        if end > start:
            spans.append(RhythmSpan(start, end, rhythm))
    return spans


def _span_index(times: np.ndarray, spans: Sequence[RhythmSpan]) -> np.ndarray:
    """Index of the span containing each time, -1 where none does."""
    if not spans:
        return np.full(len(times), -1)
    starts = np.array([s.start_time for s in spans])
    ends = np.array([s.end_time for s in spans])
    idx = np.searchsorted(starts, times, side="right") - 1
    ok = (idx >= 0) & (times < ends[np.clip(idx, 0, None)])
    return np.where(ok, idx, -1)


def _beat_arrays(events, sampling_frequency):
    beats = [ev for ev in events if ev.is_beat]
    samples = np.array([ev.sample_index for ev in beats], dtype=np.int64)
    if len(samples) > 1:
        bad = np.nonzero(np.diff(samples) <= 0)[0]
        if len(bad):
            raise DataError(
                f"non-increasing beat times at sample_index {samples[bad[0] + 1]}"
            )
    codes = np.array([ev.type_code for ev in beats], dtype=np.int64)
    return samples / sampling_frequency, codes


def label_beats(
    events: Sequence[AnnotationEvent], spans: Sequence[RhythmSpan], sampling_frequency: float
) -> tuple[np.ndarray, list[Rhythm]]:
    """Time and rhythm of every beat; beats outside any span are labelled OTHER."""
    times, _ = _beat_arrays(events, sampling_frequency)
    idx = _span_index(times, spans)
    labels = [spans[j].rhythm if j >= 0 else Rhythm.OTHER for j in idx]
    return times, labels


def extract_nn_series(
    events: Sequence[AnnotationEvent],
    spans: Sequence[RhythmSpan],
    sampling_frequency: float,
    nn_min_ms: float = 200.0,
    nn_max_ms: float = 3000.0,
) -> list[NnSeries]:
    """NN intervals inside each NSR/AF span.

    An interval is kept when both of its beats are normal (code 1), both lie in
    the same span, and its length is inside ``[nn_min_ms, nn_max_ms]``.
    Intervals adjacent to an ectopic beat are dropped.
    """
    times, codes = _beat_arrays(events, sampling_frequency)
    if len(times) < 2:
        return []
    idx = _span_index(times, spans)
    nn = np.diff(times) * 1000.0
    keep = (
        (codes[:-1] == NORMAL)
        & (codes[1:] == NORMAL)
        & (idx[:-1] == idx[1:])
        & (idx[:-1] >= 0)
        & (nn >= nn_min_ms)
        & (nn <= nn_max_ms)
    )
    out = []
    for j, span in enumerate(spans):
        if span.rhythm is Rhythm.OTHER:
            continue
        sel = keep & (idx[:-1] == j)
        if sel.any():
            out.append(NnSeries(times[:-1][sel], nn[sel], span.rhythm))
    return out


# --------------------------------------------------------------------------
# records on disk


@dataclass(frozen=True)
class IngestedRecord:
    header: RecordHeader
    series: list[NnSeries]
    foreign_beat_times: np.ndarray  # beats outside NSR/AF spans
    end_time: float


def ingest_record(
    path: Path | str,
    annotator: str = "atr",
    beat_annotator: Optional[str] = None,
    nn_min_ms: float = 200.0,
    nn_max_ms: float = 3000.0,
) -> IngestedRecord:
    """Read ``<path>.hea`` and annotation file(s) and extract NN series.

    ``beat_annotator`` names a second annotation file holding the beats when the
    main annotator carries only rhythm markers (AFDB ships beats in ``.qrs``).
    """
    path = Path(path)
    header = parse_header(path.with_suffix(".hea").read_bytes())
    fs = header.sampling_frequency
    events = parse_annotations(path.with_suffix("." + annotator).read_bytes(), fs)
    if beat_annotator:
        beats = parse_annotations(path.with_suffix("." + beat_annotator).read_bytes(), fs)
        events = merge_events(events, [ev for ev in beats if ev.is_beat])
    end = header.duration_s
    if end is None:
        end = events[-1].sample_index / fs if events else 0.0
    spans = extract_rhythm_spans(events, fs, end)
    series = extract_nn_series(events, spans, fs, nn_min_ms, nn_max_ms)
    times, labels = label_beats(events, spans, fs)
    foreign = times[np.array([lab is Rhythm.OTHER for lab in labels], dtype=bool)]
    return IngestedRecord(header, series, foreign, end)


def write_nn_csv(records: dict[str, IngestedRecord], fh) -> None:
    """NN rows per record; beats outside NSR/AF spans become OTHER rows with empty nn_ms."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(NN_CSV_COLUMNS)
    for name in sorted(records):
        rec = records[name]
        rows = []
        for s in rec.series:
            rows += [(t, s.rhythm.value, repr(float(v))) for t, v in zip(s.beat_times, s.intervals)]
        rows += [(t, Rhythm.OTHER.value, "") for t in rec.foreign_beat_times]
        rows.sort(key=lambda r: r[0])
        for t, rhythm, v in rows:
            w.writerow((name, rhythm, repr(float(t)), v))


def read_nn_csv(fh) -> dict[str, tuple[list[NnSeries], np.ndarray]]:
    """Inverse of :func:`write_nn_csv`: per record, its NN series and foreign beat times."""
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(header) != NN_CSV_COLUMNS:
        raise SchemaError(f"expected NN CSV header {','.join(NN_CSV_COLUMNS)}, got {header}")
    per_record: dict[str, list] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise SchemaError(f"line {lineno}: expected 4 columns, got {len(row)}")
        per_record.setdefault(row[0], []).append((lineno, row))
    out = {}
    for name, rows in per_record.items():
        series, foreign = [], []
        cur_rhythm, cur_t, cur_nn = None, [], []
        for lineno, (_, rhythm, t, v) in rows:
            try:
                rhythm = Rhythm(rhythm)
                t = float(t)
                v = float(v) if v else None
            except ValueError as exc:
                raise SchemaError(f"line {lineno}: {exc}") from None
            if rhythm is Rhythm.OTHER:
                foreign.append(t)
                continue
            if v is None:
                raise SchemaError(f"line {lineno}: {rhythm.value} row without nn_ms")
            # a new series starts at a rhythm change or when the previous interval
            # does not end where this one begins
            contiguous = cur_t and abs(cur_t[-1] + cur_nn[-1] / 1000.0 - t) < 1e-6
            if rhythm is not cur_rhythm or not contiguous:
                if cur_t:
                    series.append(NnSeries(np.array(cur_t), np.array(cur_nn), cur_rhythm))
                cur_rhythm, cur_t, cur_nn = rhythm, [], []
            cur_t.append(t)
            cur_nn.append(v)
        if cur_t:
            series.append(NnSeries(np.array(cur_t), np.array(cur_nn), cur_rhythm))
        out[name] = (series, np.array(foreign))
    return out


def events_to_csv(events: Sequence[AnnotationEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVENT_CSV_COLUMNS)
    for ev in events:
        w.writerow(
            (ev.sample_index, ev.type_code, ev.subtype, ev.channel, ev.num, "" if ev.aux is None else "=" + ev.aux)
        )
    return buf.getvalue()


def events_from_csv(text: str) -> list[AnnotationEvent]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != EVENT_CSV_COLUMNS:
        raise SchemaError("bad event CSV header")
    out = []
    for row in reader:
        aux = row[5][1:] if row[5].startswith("=") else None
        out.append(AnnotationEvent(*(int(x) for x in row[:5]), aux))
    return out
