import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES, aux_words, reference_events, skip_words, word
from hrvaf.errors import AnnotationParseError, DataError, HeaderParseError
from hrvaf.ingest import (
    AnnotationEvent,
    Rhythm,
    RhythmSpan,
    decode_annotations,
    events_from_csv,
    events_to_csv,
    extract_nn_series,
    extract_rhythm_spans,
    ingest_record,
    parse_annotations,
    parse_header,
    read_nn_csv,
    write_nn_csv,
)

END = b"\0\0"


def triples(events):
    return [(e.sample_index, e.type_code, e.aux or "") for e in events]


# ---------------------------------------------------------------- header


def test_header_basic():
    h = parse_header(b"100 2 128")
    assert (h.record_name, h.signal_count, h.sampling_frequency) == ("100", 2, 128.0)
    assert h.sample_count is None


def test_header_default_frequency():
    assert parse_header(b"x 1").sampling_frequency == 250.0


def test_header_empty_is_error():
    with pytest.raises(HeaderParseError) as err:
        parse_header(b"")
    assert err.value.line == 1


def test_header_bad_field_names_line_and_field():
    with pytest.raises(HeaderParseError) as err:
        parse_header("# comment\nrec two 250\n")
    assert err.value.line == 2 and err.value.field == "signal_count"
    with pytest.raises(HeaderParseError) as err:
        parse_header("rec 2 fast")
    assert err.value.field == "sampling_frequency"


def test_header_extended_forms():
    h = parse_header("rec/3 2 360/200(0) 650000 12:00:00\n")
    assert (h.record_name, h.sampling_frequency, h.sample_count) == ("rec", 360.0, 650000)
    assert h.duration_s == pytest.approx(650000 / 360)


def test_header_matches_reference_reader():
    wfdb = pytest.importorskip("wfdb")
    for name in ("hdr100", "rhythm", "split"):
        ref = wfdb.rdheader(str(FIXTURES / name))
        ours = parse_header((FIXTURES / f"{name}.hea").read_bytes())
        assert ours.sampling_frequency == ref.fs
        assert ours.signal_count == ref.n_sig
        assert ours.sample_count == ref.sig_len


# ----------------------------------------------------------- annotations


def test_single_normal_beat():
    events = parse_annotations(word(1, 100) + END, 250)
    assert triples(events) == [(100, 1, "")]


def test_immediate_terminator():
    assert parse_annotations(END) == []


@pytest.mark.parametrize(
    "record,ext", [("rhythm", "atr"), ("split", "atr"), ("split", "qrs"), ("quirks", "atr")]
)
def test_fixture_matches_reference_reader(record, ext):
    ref = reference_events(FIXTURES / record, ext)
    ours = parse_annotations((FIXTURES / f"{record}.{ext}").read_bytes())
    assert triples(ours) == ref


def test_first_twenty_events_of_rhythm_fixture():
    ref = reference_events(FIXTURES / "rhythm", "atr")[:20]
    ours = parse_annotations((FIXTURES / "rhythm.atr").read_bytes())[:20]
    assert triples(ours) == ref


def test_modifier_fields_match_reference_reader():
    wfdb = pytest.importorskip("wfdb")
    ann = wfdb.rdann(str(FIXTURES / "quirks"), "atr")
    ours = parse_annotations((FIXTURES / "quirks.atr").read_bytes())
    assert [e.subtype for e in ours] == ann.subtype.tolist()
    assert [e.channel for e in ours] == ann.chan.tolist()
    assert [e.num for e in ours] == ann.num.tolist()


def test_declared_time_resolution_is_consumed():
    events, fs = decode_annotations((FIXTURES / "rhythm.atr").read_bytes())
    assert fs == 250.0
    assert all(e.type_code != 22 or e.sample_index > 0 for e in events)


def test_skip_including_negative():
    raw = word(1, 10) + skip_words(100000) + word(1, 5) + skip_words(-50) + word(5, 0) + END
    assert [e.sample_index for e in parse_annotations(raw)] == [10, 100015, 99965]


def test_sub_applies_to_its_own_event_chn_and_num_carry():
    raw = (
        word(1, 1) + word(61, 0xFE) + word(62, 3) + word(60, 9)
        + word(1, 1)
        + word(5, 1) + word(61, 4)
        + END
    )  # fmt: skip
    ev = parse_annotations(raw)
    assert [(e.subtype, e.channel, e.num) for e in ev] == [(-2, 3, 9), (0, 3, 9), (4, 3, 9)]


def test_odd_aux_is_padded():
    raw = word(28, 7) + aux_words("(AFIB") + word(1, 3) + END
    ev = parse_annotations(raw)
    assert triples(ev) == [(7, 28, "(AFIB"), (10, 1, "")]


@pytest.mark.parametrize(
    "raw,offset",
    [
        (word(1, 5), 2),  # no terminator
        (word(28, 5) + word(63, 6) + b"(A", 2),  # aux runs off the end
        (word(1, 5) + word(59, 0) + b"\0\0", 2),  # skip missing a word
        (word(61, 1) + END, 0),  # modifier before any event
    ],
)
def test_truncation_errors_carry_offset(raw, offset):
    with pytest.raises(AnnotationParseError) as err:
        parse_annotations(raw)
    assert err.value.offset == offset
    assert isinstance(err.value, DataError)


def test_odd_byte_count():
    with pytest.raises(AnnotationParseError):
        parse_annotations(word(1, 5) + END + b"\x01")


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.integers(0, 3000),
            st.sampled_from([1, 5, 8, 28, 14]),
            st.sampled_from(["", "(N", "(AFIB", "(SVTA", "x"]),
        ),
        min_size=1,
        max_size=40,
    )
)
def test_roundtrip_through_reference_writer(tmp_path_factory, spec):
    wfdb = pytest.importorskip("wfdb")
    d = tmp_path_factory.mktemp("ann")
    samples = np.cumsum([1 + gap for gap, _, _ in spec])
    codes = [c for _, c, _ in spec]
    aux = [a for _, _, a in spec]
    wfdb.wrann("r", "atr", samples, symbol=[wfdb.io.annotation.ann_label_table.symbol[c] for c in codes],
               aux_note=aux, write_dir=str(d))  # fmt: skip
    ours = parse_annotations((d / "r.atr").read_bytes())
    assert triples(ours) == reference_events(d / "r", "atr")
    assert triples(ours) == list(zip(samples.tolist(), codes, aux))


# ------------------------------------------------------------------ spans


def marker(t, label, fs=1.0):
    return AnnotationEvent(int(t * fs), 28, aux=label)


def test_spans_two_rhythms():
    spans = extract_rhythm_spans([marker(0, "(N"), marker(600, "(AFIB")], 1.0, 1200)
    assert spans == [RhythmSpan(0, 600, Rhythm.NSR), RhythmSpan(600, 1200, Rhythm.AF)]


def test_spans_single():
    assert extract_rhythm_spans([marker(0, "(AFIB")], 1.0, 100) == [RhythmSpan(0, 100, Rhythm.AF)]


def test_spans_other_vocabulary():
    spans = extract_rhythm_spans([marker(0, "(SVTA"), marker(50, "(N")], 1.0, 100)
    assert spans == [RhythmSpan(0, 50, Rhythm.OTHER), RhythmSpan(50, 100, Rhythm.NSR)]


def test_non_rhythm_aux_is_ignored():
    events = [marker(0, "(N"), AnnotationEvent(10, 22, aux="noise"), marker(20, "(AFIB")]
    assert [s.rhythm for s in extract_rhythm_spans(events, 1.0, 40)] == [Rhythm.NSR, Rhythm.AF]


# -------------------------------------------------------------- NN series

FS = 250.0


def beats(times, codes):
    return [AnnotationEvent(int(round(t * FS)), c) for t, c in zip(times, codes)]


def test_nn_all_normal():
    spans = [RhythmSpan(0, 10, Rhythm.NSR)]
    (s,) = extract_nn_series(beats([0, 0.8, 1.6], [1, 1, 1]), spans, FS)
    assert s.intervals.tolist() == [800.0, 800.0]
    assert s.beat_times.tolist() == [0.0, 0.8]
    assert s.rhythm is Rhythm.NSR


def test_nn_ectopic_removes_both_neighbours():
    spans = [RhythmSpan(0, 10, Rhythm.NSR)]
    assert extract_nn_series(beats([0, 0.8, 1.6], [1, 5, 1]), spans, FS) == []


def test_nn_not_across_boundary():
    spans = [RhythmSpan(0, 2, Rhythm.NSR), RhythmSpan(2, 4, Rhythm.AF)]
    out = extract_nn_series(beats([0.5, 1.3, 2.4, 3.1], [1, 1, 1, 1]), spans, FS)
    assert [(s.rhythm, len(s)) for s in out] == [(Rhythm.NSR, 1), (Rhythm.AF, 1)]


def test_nn_bounds_and_other_spans():
    spans = [RhythmSpan(0, 10, Rhythm.NSR), RhythmSpan(10, 20, Rhythm.OTHER)]
    ev = beats([0, 0.1, 0.9, 4.0, 10.5, 11.3], [1] * 6)
    (s,) = extract_nn_series(ev, spans, FS)
    assert s.intervals.tolist() == [800.0]  # 100 ms and 3100 ms dropped, OTHER skipped


def test_nn_non_increasing_beats_is_error():
    ev = [AnnotationEvent(10, 1), AnnotationEvent(10, 1)]
    with pytest.raises(DataError, match="sample_index 10"):
        extract_nn_series(ev, [RhythmSpan(0, 1, Rhythm.NSR)], FS)


def test_non_beat_events_are_ignored():
    spans = [RhythmSpan(0, 10, Rhythm.NSR)]
    ev = beats([0, 0.8, 1.6], [1, 1, 1])
    ev.insert(1, AnnotationEvent(int(0.5 * FS), 28, aux="(N"))
    (s,) = extract_nn_series(ev, spans, FS)
    assert len(s) == 2


# ------------------------------------------------------------ whole record


def test_ingest_record_split_layout():
    rec = ingest_record(FIXTURES / "split", beat_annotator="qrs")
    assert rec.end_time == 2400.0
    assert [s.rhythm for s in rec.series] == [Rhythm.AF, Rhythm.NSR]
    for s in rec.series:
        assert np.all((s.intervals >= 200) & (s.intervals <= 3000))
    assert len(rec.foreign_beat_times) == 0


def test_ingest_record_with_ectopy_and_other_rhythm():
    rec = ingest_record(FIXTURES / "rhythm")
    rhythms = [s.rhythm for s in rec.series]
    assert rhythms.count(Rhythm.NSR) == 2 and rhythms.count(Rhythm.AF) == 1
    # beats of the SVTA run are foreign
    assert len(rec.foreign_beat_times) > 0
    assert np.all((rec.foreign_beat_times >= 1500) & (rec.foreign_beat_times < 1530))


def test_nn_csv_roundtrip():
    rec = ingest_record(FIXTURES / "rhythm")
    buf = io.StringIO()
    write_nn_csv({"rhythm": rec}, buf)
    buf.seek(0)
    series, foreign = read_nn_csv(buf)["rhythm"]
    assert np.array_equal(foreign, rec.foreign_beat_times)
    total = sum(len(s) for s in series)
    assert total == sum(len(s) for s in rec.series)
    assert np.array_equal(np.concatenate([s.intervals for s in series]), np.concatenate([s.intervals for s in rec.series]))


def test_event_csv_roundtrip_keeps_empty_and_missing_aux():
    ev = [AnnotationEvent(1, 1), AnnotationEvent(2, 28, -1, 3, 4, ""), AnnotationEvent(3, 22, aux="a,b")]
    assert events_from_csv(events_to_csv(ev)) == ev
