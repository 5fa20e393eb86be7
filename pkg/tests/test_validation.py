import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstwobign

from hrvaf import oracles
from hrvaf.errors import ConditioningError, ConfigError, InsufficientDataError
from hrvaf.features import INDEX_NAMES, PatientFeatures
from hrvaf.gaussian import estimate_distribution
from hrvaf.synth import SynthSpec, gen_feature_dataset
from hrvaf.validation import (
    PatientScore,
    SplitResult,
    ValidationReport,
    bhattacharyya,
    bhattacharyya_moments,
    kfold_validate,
    kolmogorov_sf,
    ks_critical_value,
    ks_statistic,
    ks_two_sample,
    make_folds,
    render_report,
)

# ------------------------------------------------------------ bhattacharyya


def test_bhattacharyya_closed_forms():
    assert bhattacharyya_moments([0.0], [[1.0]], [0.0], [[1.0]]) == 0.0
    assert bhattacharyya_moments([0.0], [[1.0]], [1.0], [[1.0]]) == pytest.approx(0.125, abs=1e-12)
    assert bhattacharyya_moments([0.0], [[1.0]], [0.0], [[4.0]]) == pytest.approx(0.5 * math.log(1.25), abs=1e-12)


def test_bhattacharyya_symmetric_and_nonnegative(rng):
    for _ in range(20):
        a, b = rng.normal(size=(2, 40, 3))
        d1, d2 = estimate_distribution(a), estimate_distribution(b * 2 + 1)
        x, y = bhattacharyya(d1, d2), bhattacharyya(d2, d1)
        assert x >= 0 and x == pytest.approx(y, rel=1e-12)


def test_bhattacharyya_affine_invariance(rng):
    for _ in range(50):
        d = 5
        m1, m2 = rng.normal(size=(2, d))
        a1, a2 = rng.normal(size=(2, d, d))
        c1, c2 = a1 @ a1.T + 0.5 * np.eye(d), a2 @ a2.T + 0.5 * np.eye(d)
        t = rng.normal(size=(d, d)) + 3 * np.eye(d)
        s = rng.normal(size=d)
        before = bhattacharyya_moments(m1, c1, m2, c2)
        after = bhattacharyya_moments(t @ m1 + s, t @ c1 @ t.T, t @ m2 + s, t @ c2 @ t.T)
        assert after == pytest.approx(before, rel=1e-8)


def test_bhattacharyya_names_bad_input():
    with pytest.raises(ConditioningError, match="p7 observed"):
        bhattacharyya_moments([0, 0], [[1, 2], [2, 1]], [0, 0], np.eye(2), ("p7 observed", "x"))


# ----------------------------------------------------------------------- KS


def test_ks_identical_and_disjoint():
    r = ks_two_sample([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert r.statistic == 0 and not r.reject and r.p_value == 1.0
    assert ks_statistic([0, 0, 0, 0], [1, 1, 1, 1]) == 1.0


def test_ks_empty_sample():
    with pytest.raises(InsufficientDataError):
        ks_two_sample([], [1.0])


def test_ks_critical_value():
    assert ks_critical_value(0.05) == pytest.approx(1.35810, abs=1e-5)


def test_ks_threshold_and_reject_rule():
    r = ks_two_sample(np.arange(10.0), np.arange(10.0) + 5.5)
    assert r.threshold == pytest.approx(1.3581015 * math.sqrt(20 / 100), rel=1e-6)
    assert r.statistic == 0.6 and not r.reject  # 0.6 < 0.607
    r = ks_two_sample(np.arange(10.0), np.arange(10.0) + 6.5)
    assert r.statistic == 0.7 and r.reject


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.integers(-20, 20), min_size=1, max_size=100),
    st.lists(st.integers(-20, 20), min_size=1, max_size=100),
)
def test_ks_statistic_equals_brute_force(a, b):
    assert ks_statistic(a, b) == oracles.ecdf_sup_scan(a, b)


@pytest.mark.parametrize("lam", [0.05, 0.2, 0.5, 0.8, 0.99, 1.0, 1.01, 1.358, 2.0, 3.5, 6.0])
def test_kolmogorov_sf_against_scipy(lam):
    assert kolmogorov_sf(lam) == pytest.approx(kstwobign.sf(lam), rel=1e-9, abs=1e-15)


def test_kolmogorov_sf_at_critical_value():
    assert kolmogorov_sf(ks_critical_value(0.05)) == pytest.approx(0.05, rel=1e-4)


# -------------------------------------------------------------------- folds


def test_folds_thirty_into_five():
    ids = [f"p{i:02d}" for i in range(30)]
    folds = make_folds(ids, 5, seed=1)
    assert [len(f) for f in folds] == [6] * 5
    assert sorted(sum(folds, [])) == ids
    assert make_folds(list(reversed(ids)), 5, seed=1) == folds
    assert make_folds(ids, 5, seed=2) != folds


def test_folds_uneven_and_too_few():
    assert [len(f) for f in make_folds([str(i) for i in range(7)], 3, 0)] == [3, 2, 2]
    with pytest.raises(ConfigError):
        make_folds(["a", "b"], 3, 0)


# ------------------------------------------------------------ kfold driver


@pytest.fixture(scope="module")
def small_report():
    data = gen_feature_dataset(SynthSpec(seed=4, patients=10, samples_per_rhythm=30))
    return data, kfold_validate(data.patients, folds=5, seed=0)


def test_report_structure(small_report):
    data, report = small_report
    assert len(report.per_split) == 5
    assert report.metadata["split_sizes"] == [[8, 2]] * 5
    tested = sorted(pid for s in report.per_split for pid in s.test_patients)
    assert tested == sorted(p.patient_id for p in data.patients)
    for s in report.per_split:
        assert set(s.train_patients).isdisjoint(s.test_patients)
        assert set(s.pooled_p_values) == set(INDEX_NAMES)
        assert s.best_bhatt <= s.mean_bhatt <= s.worst_bhatt
        for p in s.per_patient:
            assert p.bhattacharyya >= 0
            assert all(0 <= v <= 1 for v in p.p_values.values())
        assert all(s.max_p_values[n] >= max(p.p_values[n] for p in s.per_patient) for n in INDEX_NAMES)


def test_report_json_roundtrip_and_determinism(small_report):
    data, report = small_report
    text = report.to_json()
    assert ValidationReport.from_dict(__import__("json").loads(text)).to_json() == text
    again = kfold_validate(data.patients, folds=5, seed=0)
    assert again.to_json() == text


def orthogonal(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def test_identical_patients_give_small_distance():
    # every patient draws from one shared pair of Gaussians with distinct spectra
    rng = np.random.default_rng(0)
    d = 18
    spectrum = 100.0 * np.exp(-0.5 * np.arange(d))
    u, v = orthogonal(rng, d), orthogonal(rng, d)
    cov_x, cov_y = u @ np.diag(spectrum) @ u.T, v @ np.diag(3 * spectrum) @ v.T
    patients = []
    for p in range(10):
        x = rng.multivariate_normal(np.zeros(d), cov_x, 200)
        y = rng.multivariate_normal(np.full(d, 3.0), cov_y, 200)
        patients.append(PatientFeatures(f"p{p}", x, y))
    report = kfold_validate(patients, folds=5, seed=3)
    scores = [s.bhattacharyya for split in report.per_split for s in split.per_patient]
    assert max(scores) < 1.0


def test_duplicate_ids_rejected():
    x = np.random.default_rng(0).normal(size=(20, 18))
    p = PatientFeatures("a", x, x + 1)
    with pytest.raises(ConfigError):
        kfold_validate([p, p], folds=2)


# ------------------------------------------------------------------ render


def test_render_empty_report_has_headers_only():
    text = render_report(ValidationReport({"alpha": 0.05}))
    assert "Split" in text and "Index" in text
    assert "All" not in text
    assert "rmssd" in text  # index rows, no split columns


def fabricated_split(i):
    pv = {n: 0.01 * (j + 1) * i for j, n in enumerate(INDEX_NAMES)}
    score = PatientScore("x", 1.0 * i, 2.0 * i, pv)
    return SplitResult(i, ["a"], ["x"], 1.0 * i, 0.5 * i, 2.0 * i, 3.0, [score], pv, pv)


def test_render_two_splits():
    report = ValidationReport(
        {"alpha": 0.05}, [fabricated_split(1), fabricated_split(2)],
        {"mean_bhatt": 1.5, "best_bhatt": 0.5, "worst_bhatt": 4.0, "baseline_mean_bhatt": 3.0},
    )  # fmt: skip
    text = render_report(report)
    table = text.split("\n\n")[1]
    rows = [ln for ln in table.splitlines()[1:] if ln.strip()]
    assert [r.split()[0] for r in rows] == ["1", "2", "All"]
    # rmssd: p = 0.01 and 0.02 are both below alpha
    rmssd = next(ln for ln in text.splitlines() if ln.startswith("rmssd"))
    assert rmssd.split()[-2:] == ["0", "2"]
    assert "Ref." in render_report(report, show_reference=True)
    with pytest.raises(ConfigError):
        render_report(report, p_source="median")
