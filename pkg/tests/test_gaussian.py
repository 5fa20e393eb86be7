import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrvaf import oracles
from hrvaf.errors import ConditioningError, DataError, InsufficientDataError
from hrvaf.gaussian import (
    PatientTransform,
    TransferModel,
    blend_weights,
    estimate_distribution,
    fit,
    fit_pair,
    mahalanobis,
    predict,
    predict_many,
    sorted_eigh,
)


def random_cov(rng, d, scale=1.0):
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T / d + 0.1 * np.eye(d))


def cloud(rng, n, mean, cov):
    return rng.multivariate_normal(mean, cov, size=n)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# ----------------------------------------------------------- distributions


def test_two_d_fixture():
    d = estimate_distribution([[0, 0], [2, 0], [0, 2], [2, 2]], ridge=0.0)
    assert d.mean.tolist() == [1.0, 1.0]
    np.testing.assert_allclose(d.covariance, 4 / 3 * np.eye(2), atol=1e-15)


def test_constant_rows_hit_the_absolute_floor():
    d = estimate_distribution(np.tile([3.0, 4.0, 5.0], (10, 1)), ridge=1e-3)
    assert d.mean.tolist() == [3.0, 4.0, 5.0]
    np.testing.assert_array_equal(d.covariance, 1e-3 * np.eye(3))


def test_relative_ridge(rng):
    x = rng.normal(size=(50, 4)) * [1, 10, 100, 1000]
    raw = np.cov(x, rowvar=False)
    d = estimate_distribution(x, ridge=1e-3)
    np.testing.assert_allclose(d.covariance - raw, 1e-3 * np.trace(raw) / 4 * np.eye(4), rtol=1e-9, atol=1e-9)


def test_eigen_reconstruction(rng):
    x = cloud(rng, 200, np.zeros(18), random_cov(rng, 18))
    d = estimate_distribution(x, 1e-3)
    v = d.eigenvectors
    np.testing.assert_allclose(v.T @ np.diag(d.eigenvalues) @ v, d.covariance, atol=1e-10)
    np.testing.assert_allclose(v @ v.T, np.eye(18), atol=1e-12)
    assert np.all(np.diff(d.eigenvalues) <= 0)
    assert np.all(v[np.arange(18), np.argmax(np.abs(v), axis=1)] > 0)


def test_matches_explicit_moments(rng):
    x = cloud(rng, 30, np.arange(5.0), random_cov(rng, 5))
    mean, cov = oracles.moments_of(x)
    d = estimate_distribution(x, ridge=0.0)
    np.testing.assert_allclose(d.mean, mean, rtol=1e-12)
    np.testing.assert_allclose(d.covariance, cov, rtol=1e-10, atol=1e-12)


def test_errors():
    with pytest.raises(InsufficientDataError):
        estimate_distribution([[1.0, 2.0]])
    with pytest.raises(ConditioningError):
        estimate_distribution([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], ridge=0.0)
    with pytest.raises(DataError):
        estimate_distribution([[0.0, np.nan], [1.0, 1.0]])


def test_sorted_eigh_sign_convention():
    vals, rows = sorted_eigh(np.diag([1.0, 3.0, 2.0]))
    assert vals.tolist() == [3.0, 2.0, 1.0]
    np.testing.assert_array_equal(rows, np.eye(3)[[1, 2, 0]])


# ------------------------------------------------------------- mahalanobis


def test_mahalanobis_examples():
    one = estimate_distribution([[-2.0], [2.0], [-2.0], [2.0]], ridge=0.0)  # mean 0, var 16/3
    assert mahalanobis(one, one.mean) == 0.0
    d1 = one.__class__(np.zeros(1), np.array([[4.0]]), np.array([4.0]), np.eye(1), 2)
    assert mahalanobis(d1, [2.0]) == pytest.approx(1.0, rel=1e-15)
    d2 = one.__class__(np.zeros(2), np.eye(2), np.ones(2), np.eye(2), 2)
    assert mahalanobis(d2, [3.0, 4.0]) == pytest.approx(5.0, rel=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mahalanobis_matches_direct_solve(seed):
    rng = np.random.default_rng(seed)
    d = estimate_distribution(cloud(rng, 40, np.zeros(6), random_cov(rng, 6)), 1e-3)
    z = rng.normal(size=6) * 3
    direct = np.sqrt((z - d.mean) @ np.linalg.solve(d.covariance, z - d.mean))
    assert mahalanobis(d, z) == pytest.approx(direct, rel=1e-9)
    assert mahalanobis(d, z) >= 0


# --------------------------------------------------------------- transforms


def test_self_pair_is_identity_on_moments(rng):
    x = cloud(rng, 100, np.ones(4), random_cov(rng, 4))
    t = fit_pair(x, x, 1e-3)
    np.testing.assert_allclose(t.apply(x), x, atol=1e-8 * np.abs(x).max())


def test_one_d_closed_form(rng):
    x = rng.normal(size=(400, 1))
    y = 10 + 2 * rng.normal(size=(400, 1))
    t = fit_pair(x, y, 1e-3)
    m, c = t.as_affine()
    sx, sy = x.std(ddof=1), y.std(ddof=1)
    assert m[0, 0] == pytest.approx(sy / sx, rel=1e-12)
    assert c[0] == pytest.approx(y.mean() - sy / sx * x.mean(), rel=1e-12)
    # and close to the population map x -> 2x + 10
    assert m[0, 0] == pytest.approx(2.0, rel=0.15) and c[0] == pytest.approx(10.0, abs=0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 1e-3, 1e-1]))
def test_moment_matching(seed, ridge):
    rng = np.random.default_rng(seed)
    d = 18
    x = cloud(rng, 200, rng.normal(size=d) * 50, random_cov(rng, d, 30.0))
    y = cloud(rng, 200, rng.normal(size=d) * 50, random_cov(rng, d, 80.0))
    out = fit_pair(x, y, ridge).apply(x)
    mx, cx = oracles.moments_of(out)
    my, cy = oracles.moments_of(y)
    assert np.linalg.norm(mx - my) <= 1e-8 * np.linalg.norm(my)
    assert rel(cx, cy) <= 1e-6


def test_moment_matching_with_rank_deficient_source(rng):
    x = cloud(rng, 100, np.zeros(4), random_cov(rng, 4))
    x = np.column_stack([x, x[:, 0] / np.sqrt(2)])  # a column copied up to scale, as sd1/rmssd
    y = cloud(rng, 100, np.ones(5), random_cov(rng, 5))
    out = fit_pair(x, y, 1e-3).apply(x)
    np.testing.assert_allclose(out.mean(axis=0), y.mean(axis=0), rtol=1e-8)
    assert np.all(np.isfinite(out))


def test_stages_compose(rng):
    x = cloud(rng, 50, np.zeros(3), random_cov(rng, 3))
    y = cloud(rng, 50, np.ones(3), random_cov(rng, 3))
    t = fit_pair(x, y)
    st_ = t.stages(x)
    np.testing.assert_allclose(st_["centred"].mean(axis=0), 0, atol=1e-12)
    cov_rot = np.cov(st_["rotated"], rowvar=False)
    np.testing.assert_allclose(cov_rot, np.diag(np.diag(cov_rot)), atol=1e-10)
    m, c = t.as_affine()
    np.testing.assert_allclose(x @ m + c, st_["final"], atol=1e-10)


def test_identity_and_shift_transforms(rng):
    x = rng.normal(size=5)
    assert np.array_equal(PatientTransform.identity(5).apply(x), x)
    shift = PatientTransform("s", np.ones(5), 3 * np.ones(5), np.eye(5), np.eye(5), np.ones(5))
    np.testing.assert_allclose(shift.apply(x), x + 2)


def test_strict_mode_uses_product_scale(rng):
    x = cloud(rng, 80, np.zeros(2), np.diag([4.0, 1.0]))
    y = cloud(rng, 80, np.zeros(2), np.diag([9.0, 1.0]))
    t = fit_pair(x, y, 0.0, strict=True)
    dx, dy = estimate_distribution(x, 0.0), estimate_distribution(y, 0.0)
    np.testing.assert_allclose(t.scale, np.sqrt(dx.eigenvalues * dy.eigenvalues))


# -------------------------------------------------------------- prediction


def make_pairs(rng, count, d=4, spread=20.0):
    out = []
    for p in range(count):
        mu = rng.normal(size=d) * spread
        x = cloud(rng, 40, mu, random_cov(rng, d))
        y = cloud(rng, 40, mu + 5, random_cov(rng, d, 2.0))
        out.append((f"p{p:02d}", x, y))
    return out


def test_fit_entry_counts(rng):
    pairs = make_pairs(rng, 24)
    assert len(fit(pairs[:1]).entries) == 1
    assert len(fit(pairs).entries) == 24
    dup = fit([pairs[0], pairs[0]])
    assert len(dup.entries) == 2
    np.testing.assert_array_equal(dup.entries[0].transform.scale, dup.entries[1].transform.scale)


def test_single_entry_prediction_is_its_transform(rng):
    (pair,) = make_pairs(rng, 1)
    model = fit([pair])
    z = rng.normal(size=4)
    np.testing.assert_array_equal(predict(model, z), model.entries[0].transform.apply(z))


def test_equal_distances_average(rng):
    (pid, x, y) = make_pairs(rng, 1)[0]
    model = fit([(pid, x, y), ("q", x, 2 * y)])
    z = x[0]
    expected = (model.entries[0].transform.apply(z) + model.entries[1].transform.apply(z)) / 2
    np.testing.assert_allclose(predict(model, z), expected, rtol=1e-12)


def test_softmax_saturates_on_nearest(rng):
    pairs = make_pairs(rng, 6, spread=500.0)
    model = fit(pairs)
    q = model.entries[2]
    z = q.nsr.mean
    dists = [mahalanobis(e.nsr, z) for e in model.entries]
    assert dists[2] == 0 and min(dists[:2] + dists[3:]) >= 20
    np.testing.assert_allclose(predict(model, z), q.transform.apply(z), rtol=1e-6)


def test_blend_weights_k_and_ties():
    w = blend_weights(np.array([1.0, 0.5, 0.5, 3.0]), ["d", "c", "b", "a"], k=2)
    assert w[0] == 0 and w[3] == 0
    assert w[1] == pytest.approx(0.5) and w[2] == pytest.approx(0.5)
    w = blend_weights(np.array([2.0, 2.0, 2.0]), ["z", "a", "m"], k=1)
    assert w.tolist() == [0.0, 1.0, 0.0]
    w = blend_weights(np.array([0.0, 1.0]), ["a", "b"])
    assert w == pytest.approx([1 / (1 + np.exp(-1)), np.exp(-1) / (1 + np.exp(-1))])
    assert blend_weights(np.array([1e6, 1e6 + 1]), ["a", "b"]).sum() == pytest.approx(1.0)


def test_model_json_roundtrip(rng):
    model = fit(make_pairs(rng, 5), ridge=1e-3, k=3, fingerprint="abc")
    back = TransferModel.from_json(model.to_json())
    z = rng.normal(size=(7, 4)) * 20
    np.testing.assert_allclose(predict_many(back, z), predict_many(model, z), rtol=1e-12, atol=1e-12)
    assert back.k == 3 and back.fingerprint == "abc"


def test_model_rejects_bad_k(rng):
    pairs = make_pairs(rng, 2)
    with pytest.raises(DataError):
        TransferModel(fit(pairs).entries, k=5)
    assert fit(pairs, k=5).k is None


def test_single_patient_model_matches_unreferenced_pair(rng):
    (pid, x, y) = make_pairs(rng, 1)[0]
    alone = fit_pair(x, y, 1e-3, pid)
    entry = fit([(pid, x, y)]).entries[0].transform
    z = rng.normal(size=(5, 4)) * 20
    np.testing.assert_allclose(entry.apply(z), alone.apply(z), rtol=1e-12, atol=1e-9)


def test_shared_axes_make_patient_maps_agree(rng):
    # every patient samples the same pair of Gaussians, so their maps should nearly coincide
    d = 6
    u = np.linalg.qr(rng.normal(size=(d, d)))[0]
    v = np.linalg.qr(rng.normal(size=(d, d)))[0]
    spec = 50.0 * 0.5 ** np.arange(d)
    pairs = [
        (f"p{i}", cloud(rng, 400, np.zeros(d), u @ np.diag(spec) @ u.T), cloud(rng, 400, np.ones(d), v @ np.diag(2 * spec) @ v.T))
        for i in range(6)
    ]
    mats = [e.transform.as_affine()[0] for e in fit(pairs).entries]
    spread = max(rel(m, mats[0]) for m in mats)
    assert spread < 0.5
