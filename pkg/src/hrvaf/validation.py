"""Distribution comparisons and the patient-level k-fold driver."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from hrvaf.errors import ConditioningError, ConfigError, InsufficientDataError
from hrvaf.features import INDEX_NAMES, PatientFeatures
from hrvaf.gaussian import PatientDistribution, estimate_distribution, fit, predict_many

log = logging.getLogger(__name__)

# published 5-fold aggregate (mean, best, worst), for side-by-side display only
REFERENCE_ALL_ROW = (11.46, 3.97, 39.27)

P_VALUE_METHOD = "asymptotic Kolmogorov distribution"


# --------------------------------------------------------------------------
# Bhattacharyya


def _logdet(cov: np.ndarray, label: str) -> float:
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ConditioningError(f"covariance of {label} is not positive definite") from None
    return 2.0 * float(np.log(np.diag(chol)).sum())


def bhattacharyya_moments(mu1, cov1, mu2, cov2, labels: tuple = ("first", "second")) -> float:
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, float)), np.atleast_1d(np.asarray(mu2, float))
    cov1, cov2 = np.atleast_2d(np.asarray(cov1, float)), np.atleast_2d(np.asarray(cov2, float))
    avg = (cov1 + cov2) / 2.0
    diff = mu1 - mu2
    ld1 = _logdet(cov1, labels[0])
    ld2 = _logdet(cov2, labels[1])
    ld_avg = _logdet(avg, "the averaged pair")
    chol = np.linalg.cholesky(avg)
    sol = np.linalg.solve(chol, diff)
    maha = float(sol @ sol)
    return maha / 8.0 + 0.5 * (ld_avg - 0.5 * (ld1 + ld2))


def bhattacharyya(d1: PatientDistribution, d2: PatientDistribution, labels: tuple = ("first", "second")) -> float:
    """Bhattacharyya distance between two Gaussian fits, via Cholesky log-determinants."""
    return bhattacharyya_moments(d1.mean, d1.covariance, d2.mean, d2.covariance, labels)


# --------------------------------------------------------------------------
# two-sample Kolmogorov-Smirnov


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    threshold: float
    reject: bool
    n: int
    m: int


def ks_critical_value(alpha: float) -> float:
    """c(alpha) = sqrt(-ln(alpha / 2) / 2)."""
    return math.sqrt(-math.log(alpha / 2.0) / 2.0)


def kolmogorov_sf(lam: float, tol: float = 1e-12) -> float:
    """Q(lam) = 2 * sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lam^2), clamped to [0, 1].

    Below lam = 1 the alternating series converges slowly, so the equivalent
    theta-function form 1 - sqrt(2 pi)/lam * sum exp(-(2j-1)^2 pi^2 / (8 lam^2))
    is summed instead.
    """
    if lam <= 0:
        return 1.0
    total = 0.0
    if lam < 1.0:
        j = 1
        while True:
            term = math.exp(-((2 * j - 1) ** 2) * math.pi**2 / (8.0 * lam * lam))
            total += term
            if term < tol:
                break
            j += 1
        q = 1.0 - math.sqrt(2.0 * math.pi) / lam * total
    else:
        j = 1
        while True:
            term = math.exp(-2.0 * j * j * lam * lam)
            total += term if j % 2 else -term
            if term < tol:
                break
            j += 1
        q = 2.0 * total
    return min(max(q, 0.0), 1.0)


def ks_statistic(a, b) -> float:
    """Exact sup |F1 - F2| over the pooled sample points."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    pts = np.concatenate([a, b])
    n, m = len(a), len(b)
    # integer numerators, so the one division below is the correctly rounded exact value
    ca = np.searchsorted(a, pts, side="right").astype(np.int64)
    cb = np.searchsorted(b, pts, side="right").astype(np.int64)
    return int(np.max(np.abs(ca * m - cb * n))) / (n * m)


def ks_two_sample(a, b, alpha: float = 0.05) -> KsResult:
    n, m = len(a), len(b)
    if n < 1 or m < 1:
        raise InsufficientDataError("KS test needs two non-empty samples")
    d = ks_statistic(a, b)
    threshold = ks_critical_value(alpha) * math.sqrt((n + m) / (n * m))
    p = kolmogorov_sf(d * math.sqrt(n * m / (n + m)))
    return KsResult(d, p, threshold, d > threshold, n, m)


# --------------------------------------------------------------------------
# k-fold driver


@dataclass
class PatientScore:
    patient_id: str
    bhattacharyya: float
    baseline_bhattacharyya: float
    p_values: dict


@dataclass
class SplitResult:
    split_id: int
    train_patients: list
    test_patients: list
    mean_bhatt: float
    best_bhatt: float
    worst_bhatt: float
    baseline_mean_bhatt: float
    per_patient: list
    pooled_p_values: dict
    max_p_values: dict


@dataclass
class ValidationReport:
    metadata: dict
    per_split: list = field(default_factory=list)
    overall: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"metadata": self.metadata, "per_split": [asdict(s) for s in self.per_split], "overall": self.overall}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ValidationReport":
        splits = []
        for s in d.get("per_split", []):
            s = dict(s)
            s["per_patient"] = [PatientScore(**p) for p in s["per_patient"]]
            splits.append(SplitResult(**s))
        return cls(d.get("metadata", {}), splits, d.get("overall", {}))


def make_folds(patient_ids: Sequence[str], k: int, seed: int) -> list[list[str]]:
    """Seeded shuffle of the sorted ids, cut into k near-equal folds."""
    ids = sorted(patient_ids)
    if len(ids) < k:
        raise ConfigError(f"{len(ids)} patients cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(len(ids))
    return [[ids[i] for i in chunk] for chunk in np.array_split(perm, k)]


def _summary(values: Sequence[float]) -> tuple[float, float, float]:
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.min()), float(v.max())


def kfold_validate(
    dataset: Sequence[PatientFeatures],
    *,
    folds: int = 5,
    seed: int = 0,
    ridge: float = 1e-3,
    k: Optional[int] = None,
    strict: bool = False,
    alpha: float = 0.05,
    metadata: Optional[dict] = None,
) -> ValidationReport:
    """Patient-level k-fold: fit on k-1 folds, predict AF rows of the held-out patients.

    Each held-out patient is scored by the Bhattacharyya distance between the
    Gaussian fits of its predicted and observed AF rows, alongside a baseline
    that predicts the pooled training AF distribution for everyone. Per-index
    KS p-values are kept per patient, pooled over the split, and as the split
    maximum.
    """
    by_id = {p.patient_id: p for p in dataset}
    if len(by_id) != len(dataset):
        raise ConfigError("duplicate patient ids in dataset")
    fold_ids = make_folds(list(by_id), folds, seed)
    meta = {
        "folds": folds,
        "seed": seed,
        "ridge": ridge,
        "k": k,
        "strict_paper_mode": strict,
        "alpha": alpha,
        "p_value_method": P_VALUE_METHOD,
        "patients": len(by_id),
        "split_sizes": [[len(by_id) - len(f), len(f)] for f in fold_ids],
        "index_names": list(INDEX_NAMES),
    }
    meta.update(metadata or {})
    report = ValidationReport(meta)

    all_scores, all_base = [], []
    for split_id, test_ids in enumerate(fold_ids, start=1):
        train_ids = sorted(set(by_id) - set(test_ids))
        if not train_ids:
            raise ConfigError(f"split {split_id} has no training patients")
        model = fit([(pid, by_id[pid].nsr, by_id[pid].af) for pid in train_ids], ridge=ridge, k=k, strict=strict)
        pooled_train_af = estimate_distribution(np.vstack([by_id[pid].af for pid in train_ids]), ridge)

        scores, preds, obs = [], [], []
        for pid in sorted(test_ids):
            p = by_id[pid]
            predicted = predict_many(model, p.nsr)
            pred_dist = estimate_distribution(predicted, ridge)
            obs_dist = estimate_distribution(p.af, ridge)
            b = bhattacharyya(obs_dist, pred_dist, (f"{pid} observed", f"{pid} predicted"))
            base = bhattacharyya(obs_dist, pooled_train_af, (f"{pid} observed", "pooled training AF"))
            pv = {name: ks_two_sample(predicted[:, i], p.af[:, i], alpha).p_value for i, name in enumerate(INDEX_NAMES)}
            scores.append(PatientScore(pid, b, base, pv))
            preds.append(predicted)
            obs.append(p.af)

        pred_all, obs_all = np.vstack(preds), np.vstack(obs)
        pooled = {
            name: ks_two_sample(pred_all[:, i], obs_all[:, i], alpha).p_value for i, name in enumerate(INDEX_NAMES)
        }
        maxed = {name: max(s.p_values[name] for s in scores) for name in INDEX_NAMES}
        mean_b, best_b, worst_b = _summary([s.bhattacharyya for s in scores])
        report.per_split.append(
            SplitResult(
                split_id,
                train_ids,
                sorted(test_ids),
                mean_b,
                best_b,
                worst_b,
                float(np.mean([s.baseline_bhattacharyya for s in scores])),
                scores,
                pooled,
                maxed,
            )
        )
        all_scores += [s.bhattacharyya for s in scores]
        all_base += [s.baseline_bhattacharyya for s in scores]

    mean_b, best_b, worst_b = _summary(all_scores)
    report.overall = {
        "mean_bhatt": mean_b,
        "best_bhatt": best_b,
        "worst_bhatt": worst_b,
        "baseline_mean_bhatt": float(np.mean(all_base)),
    }
    return report


# --------------------------------------------------------------------------
# text tables


def _fmt(v: float) -> str:
    return f"{v:.3f}" if abs(v) < 1000 else f"{v:.3g}"


def render_report(
    report: ValidationReport,
    alpha: Optional[float] = None,
    low_p_threshold: Optional[float] = None,
    p_source: str = "pooled",
    show_reference: bool = False,
) -> str:
    """Bhattacharyya summary per split and the per-index KS p-value grid.

    Two pass counts are printed for each index and split: ``p>a`` (samples are
    not distinguishable at level ``alpha``) and ``p<t`` (the low-p reading,
    threshold ``low_p_threshold``, default ``alpha``).
    """
    alpha = alpha if alpha is not None else report.metadata.get("alpha", 0.05)
    low_t = low_p_threshold if low_p_threshold is not None else alpha
    if p_source not in ("pooled", "max"):
        raise ConfigError("p_source must be 'pooled' or 'max'")
    splits = report.per_split
    lines = ["Bhattacharyya distance between predicted and observed AF distributions", ""]
    lines.append(f"{'Split':<8}{'Mean':>10}{'Best':>10}{'Worst':>10}{'Baseline':>10}")
    for s in splits:
        lines.append(
            f"{s.split_id:<8}{_fmt(s.mean_bhatt):>10}{_fmt(s.best_bhatt):>10}{_fmt(s.worst_bhatt):>10}"
            f"{_fmt(s.baseline_mean_bhatt):>10}"
        )
    if splits:
        o = report.overall
        lines.append(
            f"{'All':<8}{_fmt(o['mean_bhatt']):>10}{_fmt(o['best_bhatt']):>10}{_fmt(o['worst_bhatt']):>10}"
            f"{_fmt(o['baseline_mean_bhatt']):>10}"
        )
    if show_reference:
        m, b, w = REFERENCE_ALL_ROW
        lines.append(f"{'Ref.':<8}{_fmt(m):>10}{_fmt(b):>10}{_fmt(w):>10}")

    lines += ["", f"Two-sample KS p-values per index ({p_source}); pass counts p>{alpha:g} and p<{low_t:g}", ""]
    head = f"{'Index':<8}" + "".join(f"{'S' + str(s.split_id):>8}" for s in splits) + f"{'p>a':>6}{'p<t':>6}"
    lines.append(head)
    high_per_split = [0] * len(splits)
    low_per_split = [0] * len(splits)
    for name in INDEX_NAMES:
        row = f"{name:<8}"
        high = low = 0
        for j, s in enumerate(splits):
            p = (s.pooled_p_values if p_source == "pooled" else s.max_p_values)[name]
            row += f"{p:>8.3f}"
            if p > alpha:
                high += 1
                high_per_split[j] += 1
            if p < low_t:
                low += 1
                low_per_split[j] += 1
        lines.append(row + f"{high:>6}{low:>6}")
    lines.append(f"{'p>a':<8}" + "".join(f"{c:>8}" for c in high_per_split))
    lines.append(f"{'p<t':<8}" + "".join(f"{c:>8}" for c in low_per_split))
    return "\n".join(lines) + "\n"
