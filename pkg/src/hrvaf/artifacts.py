"""Metadata sidecars that tie each pipeline artifact to its inputs and config."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

from hrvaf import __version__
from hrvaf.config import RunConfig, stage_fields
from hrvaf.errors import FingerprintMismatchError, SchemaError


def sidecar_path(path: Path | str) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def file_digest(path: Path | str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_sidecar(
    artifact: Path | str,
    stage: str,
    config: RunConfig,
    inputs: tuple = (),
    extra: Optional[dict] = None,
) -> Path:
    artifact = Path(artifact)
    meta = {
        "stage": stage,
        "tool": "hrvaf",
        "tool_version": __version__,
        "fingerprint": config.fingerprint(stage),
        "config": config.to_dict(),
        "inputs": {Path(p).name: file_digest(p) for p in inputs},
        "artifact_sha256": file_digest(artifact),
    }
    if extra:
        meta["extra"] = extra
    out = sidecar_path(artifact)
    out.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return out


def read_sidecar(artifact: Path | str) -> dict:
    path = sidecar_path(artifact)
    if not path.exists():
        raise SchemaError(f"{artifact} has no metadata sidecar ({path.name}); rerun the producing stage")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"unreadable sidecar {path}: {exc}") from None


def check_upstream(artifact: Path | str, expected_stages: tuple, config: RunConfig) -> dict:
    """Verify an input artifact came from ``expected_stages`` under compatible settings.

    The upstream fingerprint covers only the config fields that influence the
    upstream stage, so downstream-only settings can change freely.
    """
    meta = read_sidecar(artifact)
    stage = meta.get("stage")
    if stage not in expected_stages:
        raise SchemaError(f"{artifact} was produced by stage {stage!r}, expected one of {expected_stages}")
    if meta.get("artifact_sha256") != file_digest(artifact):
        raise FingerprintMismatchError(f"{artifact} changed after it was written (digest differs from its sidecar)")
    mine = config.fingerprint(stage)
    if meta.get("fingerprint") != mine:
        theirs = meta.get("config", {})
        ours = config.to_dict()
        diff = [f for f in stage_fields(stage) if theirs.get(f) != ours.get(f)]
        raise FingerprintMismatchError(
            f"{artifact} was produced with different {stage}-stage settings ({', '.join(diff) or 'unknown'}); "
            "pass the same --config/flags or regenerate it"
        )
    return meta
