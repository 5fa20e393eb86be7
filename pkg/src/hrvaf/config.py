"""Run configuration and stage fingerprints."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from hrvaf.errors import ConfigError

DEFAULT_BANDS = {
    "lf": (0.04, 0.15),
    "hf": (0.15, 0.40),
    "vhf": (0.40, 0.50),
}


@dataclass(frozen=True)
class SpectralConfig:
    interp_hz: float = 4.0
    window_s: float = 64.0
    overlap: float = 0.5
    bands: dict = field(default_factory=lambda: dict(DEFAULT_BANDS))

    def __post_init__(self):
        if self.interp_hz <= 0 or self.window_s <= 0:
            raise ConfigError("interp_hz and window_s must be positive")
        if not 0 <= self.overlap < 1:
            raise ConfigError("overlap must lie in [0, 1)")
        for name in ("lf", "hf", "vhf"):
            if name not in self.bands:
                raise ConfigError(f"missing band {name!r}")
            lo, hi = self.bands[name]
            if not 0 <= lo < hi:
                raise ConfigError(f"band {name!r} needs 0 <= lo < hi")
        # normalise to tuples so equality and hashing are stable
        object.__setattr__(
            self, "bands", {k: (float(v[0]), float(v[1])) for k, v in self.bands.items()}
        )

    @property
    def nperseg(self) -> int:
        return int(round(self.window_s * self.interp_hz))

    @property
    def noverlap(self) -> int:
        return int(self.nperseg * self.overlap)


@dataclass(frozen=True)
class RunConfig:
    # ingest
    nn_min_ms: float = 200.0
    nn_max_ms: float = 3000.0
    # segmenter
    window_s: float = 600.0
    step_s: float = 300.0
    anchor_s: float = 0.0
    min_segments: int = 15
    min_nn: int = 30
    # features
    hist_bin_ms: float = 7.8125
    apen_m: int = 2
    apen_r: float = 0.2
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    # model
    ridge: float = 1e-3
    k: Optional[int] = None
    strict_paper_mode: bool = False
    # validation
    alpha: float = 0.05
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.spectral, dict):
            object.__setattr__(self, "spectral", SpectralConfig(**self.spectral))
        if self.window_s <= 0 or not 0 < self.step_s <= self.window_s:
            raise ConfigError("need window_s > 0 and 0 < step_s <= window_s")
        if self.nn_min_ms >= self.nn_max_ms:
            raise ConfigError("nn_min_ms must be below nn_max_ms")
        if self.ridge < 0:
            raise ConfigError("ridge must be non-negative")
        if self.k is not None and self.k < 1:
            raise ConfigError("k must be >= 1 (or omitted for all patients)")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spectral"]["bands"] = {k: list(v) for k, v in self.spectral.bands.items()}
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: Path | str) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def override(self, **changes: Any) -> "RunConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes)

    def fingerprint(self, stage: str = "validate") -> str:
        """Digest of the config fields that influence ``stage`` and all upstream stages."""
        d = self.to_dict()
        subset = {name: d[name] for name in stage_fields(stage)}
        blob = json.dumps(subset, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_STAGE_ORDER = ("ingest", "segment", "features", "fit", "validate")
_STAGE_NEW_FIELDS = {
    "ingest": ("nn_min_ms", "nn_max_ms"),
    "segment": ("window_s", "step_s", "anchor_s", "min_segments", "min_nn"),
    "features": ("hist_bin_ms", "apen_m", "apen_r", "spectral"),
    "fit": ("ridge", "k", "strict_paper_mode"),
    "validate": ("alpha", "folds", "seed"),
}


_STAGE_ALIASES = {"predict": "fit", "demo-transform": "fit", "report": "validate"}


def stage_fields(stage: str) -> tuple:
    stage = _STAGE_ALIASES.get(stage, stage)
    if stage not in _STAGE_NEW_FIELDS:
        raise ConfigError(f"unknown stage {stage!r}")
    out = ()
    for s in _STAGE_ORDER:
        out += _STAGE_NEW_FIELDS[s]
        if s == stage:
            return out
    raise AssertionError("unreachable")
