"""Per-patient Gaussian fits, the NSR->AF affine transfer map and the blended predictor.

Each training patient contributes a map that moves its NSR sample cloud onto
its AF cloud: centre, rotate into the NSR eigenbasis, rescale each principal
axis, rotate out through the AF eigenbasis, shift to the AF mean. A new NSR
vector is pushed through every patient's map and the results are averaged
with softmax weights on the Mahalanobis distance to each patient's NSR fit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from hrvaf.errors import ConditioningError, DataError, InsufficientDataError

log = logging.getLogger(__name__)

# relative floor below which a source eigenvalue is treated as zero variance
EIG_FLOOR = 1e-10


@dataclass(frozen=True)
class PatientDistribution:
    mean: np.ndarray
    covariance: np.ndarray
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # rows are eigenvectors
    sample_count: int
    ridge_amount: float = 0.0  # absolute value added to the covariance diagonal

    @property
    def dim(self) -> int:
        return len(self.mean)

    @property
    def raw_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the unregularized sample covariance (same eigenvectors)."""
        return np.clip(self.eigenvalues - self.ridge_amount, 0.0, None)

    def precision(self) -> np.ndarray:
        v = self.eigenvectors
        return v.T @ np.diag(1.0 / self.eigenvalues) @ v

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvectors": self.eigenvectors.tolist(),
            "sample_count": self.sample_count,
            "ridge_amount": self.ridge_amount,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatientDistribution":
        return cls(
            np.array(d["mean"], dtype=float),
            np.array(d["covariance"], dtype=float),
            np.array(d["eigenvalues"], dtype=float),
            np.array(d["eigenvectors"], dtype=float),
            int(d["sample_count"]),
            float(d["ridge_amount"]),
        )


def sorted_eigh(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues descending; eigenvectors as rows, each with its largest-magnitude entry positive."""
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1]
    vals = vals[order]
    rows = vecs[:, order].T.copy()
    lead = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(len(rows)), lead])
    signs[signs == 0] = 1.0
    rows *= signs[:, None]
    return vals, rows


def estimate_distribution(matrix, ridge: float = 1e-3) -> PatientDistribution:
    """Mean and ridge-regularized covariance of a feature matrix (rows are samples).

    The ridge adds ``ridge * trace / dim`` to the diagonal, or ``ridge`` itself
    when the trace is zero.
    """
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 samples, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("feature matrix contains non-finite values")
    d = x.shape[1]
    mean = x.mean(axis=0)
    centred = x - mean
    raw = centred.T @ centred / (x.shape[0] - 1)
    raw = (raw + raw.T) / 2.0
    tr = float(np.trace(raw))
    amount = ridge * tr / d if tr > 0 else ridge
    cov = raw + amount * np.eye(d)
    vals, vecs = sorted_eigh(cov)
    if not vals[-1] > 0:
        raise ConditioningError(
            f"covariance is not positive definite (smallest eigenvalue {vals[-1]:.3g}); use a ridge > 0"
        )
    return PatientDistribution(mean, cov, vals, vecs, x.shape[0], amount)


def mahalanobis(dist: PatientDistribution, z, strict: bool = False) -> float:
    """sqrt((z - mu)^T Sigma^-1 (z - mu)).

    ``strict=True`` evaluates the variant with Sigma in place of its inverse.
    """
    return float(mahalanobis_many(dist, np.atleast_2d(z), strict)[0])


def mahalanobis_many(dist: PatientDistribution, z: np.ndarray, strict: bool = False) -> np.ndarray:
    proj = (np.asarray(z, dtype=float) - dist.mean) @ dist.eigenvectors.T
    w = dist.eigenvalues if strict else 1.0 / dist.eigenvalues
    return np.sqrt((proj**2 * w).sum(axis=1))


@dataclass(frozen=True)
class PatientTransform:
    patient_id: str
    source_mean: np.ndarray
    target_mean: np.ndarray
    source_rotation: np.ndarray  # rows: source eigenvectors
    target_rotation: np.ndarray  # rows: target eigenvectors
    scale: np.ndarray

    @classmethod
    def identity(cls, dim: int, patient_id: str = "") -> "PatientTransform":
        return cls(patient_id, np.zeros(dim), np.zeros(dim), np.eye(dim), np.eye(dim), np.ones(dim))

    def stages(self, x) -> dict[str, np.ndarray]:
        """Intermediate point clouds: centred, rotated, scaled, final."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        centred = x - self.source_mean
        rotated = centred @ self.source_rotation.T
        scaled = rotated * self.scale
        final = scaled @ self.target_rotation + self.target_mean
        return {"centred": centred, "rotated": rotated, "scaled": scaled, "final": final}

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self.stages(x)["final"]
        return out[0] if x.ndim == 1 else out

    def as_affine(self) -> tuple[np.ndarray, np.ndarray]:
        """(matrix, offset) with ``apply(x) == x @ matrix + offset``."""
        m = self.source_rotation.T @ np.diag(self.scale) @ self.target_rotation
        return m, self.target_mean - self.source_mean @ m

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "source_mean": self.source_mean.tolist(),
            "target_mean": self.target_mean.tolist(),
            "source_rotation": self.source_rotation.tolist(),
            "target_rotation": self.target_rotation.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatientTransform":
        return cls(
            d["patient_id"],
            *(np.array(d[k], dtype=float) for k in ("source_mean", "target_mean", "source_rotation", "target_rotation", "scale")),
        )


def fit_pair(
    x_nsr,
    y_af,
    ridge: float = 1e-3,
    patient_id: str = "",
    strict: bool = False,
    reference: Optional[tuple] = None,
) -> PatientTransform:
    """Affine map taking the NSR sample set onto the AF sample set's first two moments.

    Axis ``i`` is scaled by ``sqrt(lam_i(Y) / lam_i(X))`` with eigenvalues of the
    raw sample covariances, so the mapped NSR samples reproduce the AF sample
    mean and covariance exactly. Source axes with (numerically) zero variance
    fall back to the ratio of regularized eigenvalues. ``strict=True`` uses the
    product form ``sqrt(lam_i(X) * lam_i(Y))`` instead.

    Eigenvector signs decide which of the many moment-matching maps is returned.
    Without ``reference`` each AF axis is oriented to agree with its NSR axis.
    ``reference=(nsr_rows, af_rows)`` orients both sides against shared axes
    instead, so that patients fitted together pick the same member of the family.
    """
    dx = estimate_distribution(x_nsr, ridge)
    dy = estimate_distribution(y_af, ridge)
    if reference is None:
        source = dx.eigenvectors
        target = _orient(dy.eigenvectors, source)
    else:
        source = _orient(dx.eigenvectors, reference[0])
        target = _orient(dy.eigenvectors, reference[1])
    if dx.dim != dy.dim:
        raise DataError(f"NSR has {dx.dim} columns but AF has {dy.dim}")
    if strict:
        scale = np.sqrt(dx.eigenvalues * dy.eigenvalues)
    else:
        lx, ly = dx.raw_eigenvalues, dy.raw_eigenvalues
        usable = lx > EIG_FLOOR * max(lx.max(), np.finfo(float).tiny)
        if not usable.all():
            log.info(
                "patient %s: %d of %d NSR axes have no variance; using regularized scale there",
                patient_id or "?",
                int((~usable).sum()),
                len(lx),
            )
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(usable, np.sqrt(ly / np.where(usable, lx, 1.0)), np.sqrt(dy.eigenvalues / dx.eigenvalues))
    return PatientTransform(patient_id, dx.mean, dy.mean, source, target, scale)


def _orient(rows: np.ndarray, guide: np.ndarray) -> np.ndarray:
    # a lone sign flip reflects the map along that axis
    out = rows.copy()
    out[np.einsum("ij,ij->i", out, guide) < 0] *= -1.0
    return out


def shared_axes(pairs: Sequence[tuple], ridge: float = 1e-3) -> tuple:
    """Eigenvector rows of the average within-patient NSR and AF covariances.

    The AF rows are oriented to agree with the NSR rows, so a single patient
    gets the same transform with or without the reference.
    """
    cx = np.mean([estimate_distribution(x, ridge).covariance for _, x, _ in pairs], axis=0)
    cy = np.mean([estimate_distribution(y, ridge).covariance for _, _, y in pairs], axis=0)
    rx = sorted_eigh(cx)[1]
    return rx, _orient(sorted_eigh(cy)[1], rx)


@dataclass(frozen=True)
class ModelEntry:
    patient_id: str
    nsr: PatientDistribution
    transform: PatientTransform


@dataclass(frozen=True)
class TransferModel:
    entries: tuple
    k: Optional[int] = None  # None means all patients
    ridge: float = 1e-3
    strict: bool = False
    fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.entries:
            raise DataError("a transfer model needs at least one patient")
        if self.k is not None and not 1 <= self.k <= len(self.entries):
            raise DataError(f"k={self.k} outside 1..{len(self.entries)}")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "ridge": self.ridge,
            "strict_paper_mode": self.strict,
            "fingerprint": self.fingerprint,
            "extra": self.extra,
            "entries": [
                {"patient_id": e.patient_id, "nsr": e.nsr.to_dict(), "transform": e.transform.to_dict()}
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransferModel":
        entries = tuple(
            ModelEntry(e["patient_id"], PatientDistribution.from_dict(e["nsr"]), PatientTransform.from_dict(e["transform"]))
            for e in d["entries"]
        )
        return cls(entries, d["k"], d["ridge"], d["strict_paper_mode"], d["fingerprint"], d.get("extra", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TransferModel":
        return cls.from_dict(json.loads(text))


def fit(
    pairs: Sequence[tuple],
    ridge: float = 1e-3,
    k: Optional[int] = None,
    strict: bool = False,
    fingerprint: str = "",
) -> TransferModel:
    """Fit one entry per ``(patient_id, X_nsr, Y_af)`` triple; failing patients are skipped.

    Eigenvector signs of every patient are oriented against :func:`shared_axes`
    of the usable patients, which keeps the blended maps consistent.
    """
    usable = []
    for pid, x, y in pairs:
        try:
            estimate_distribution(x, ridge), estimate_distribution(y, ridge)
        except (DataError, ConditioningError, np.linalg.LinAlgError) as exc:
            log.warning("excluding patient %s from the model: %s", pid, exc)
            continue
        usable.append((pid, x, y))
    if not usable:
        raise DataError("no patient could be fitted")
    reference = shared_axes(usable, ridge)
    entries = []
    for pid, x, y in usable:
        try:
            nsr = estimate_distribution(x, ridge)
            transform = fit_pair(x, y, ridge, pid, strict, reference)
        except (DataError, ConditioningError, np.linalg.LinAlgError) as exc:
            log.warning("excluding patient %s from the model: %s", pid, exc)
            continue
        entries.append(ModelEntry(pid, nsr, transform))
    if not entries:
        raise DataError("no patient could be fitted")
    if k is not None and k > len(entries):
        log.warning("k=%d exceeds the %d fitted patients; using all", k, len(entries))
        k = None
    return TransferModel(tuple(entries), k, ridge, strict, fingerprint)


def blend_weights(distances: np.ndarray, patient_ids: Sequence[str], k: Optional[int] = None, strict: bool = False) -> np.ndarray:
    """Softmax weights over (negated) distances, restricted to the k nearest.

    Ties at the k-th distance go to the smaller patient id.
    """
    d = np.asarray(distances, dtype=float)
    w = np.zeros_like(d)
    if k is None or k >= len(d):
        chosen = np.arange(len(d))
    else:
        order = sorted(range(len(d)), key=lambda i: (d[i], patient_ids[i]))
        chosen = np.array(order[:k])
    logits = d[chosen] if strict else -d[chosen]
    logits = logits - logits.max()
    e = np.exp(logits)
    w[chosen] = e / e.sum()
    return w


def predict_many(model: TransferModel, x_tilde) -> np.ndarray:
    """Predicted AF vectors for each NSR row of ``x_tilde``."""
    x = np.atleast_2d(np.asarray(x_tilde, dtype=float))
    ids = [e.patient_id for e in model.entries]
    dist = np.stack([mahalanobis_many(e.nsr, x, model.strict) for e in model.entries], axis=1)
    mapped = np.stack([e.transform.apply(x) for e in model.entries], axis=1)  # rows, patients, dim
    out = np.empty_like(x)
    for i in range(len(x)):
        w = blend_weights(dist[i], ids, model.k, model.strict)
        out[i] = w @ mapped[i]
    return out


def predict(model: TransferModel, x_tilde) -> np.ndarray:
    return predict_many(model, np.asarray(x_tilde, dtype=float)[None, :])[0]
