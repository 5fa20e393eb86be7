from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"


def word(code: int, low: int) -> bytes:
    return struct.pack("<H", (code << 10) | (low & 0x3FF))


def skip_words(interval: int) -> bytes:
    v = interval & 0xFFFFFFFF
    return word(59, 0) + struct.pack("<HH", v >> 16, v & 0xFFFF)


def aux_words(text: str) -> bytes:
    raw = text.encode("latin-1")
    return word(63, len(raw)) + raw + (b"\0" if len(raw) % 2 else b"")


def reference_events(record: Path, extension: str) -> list[tuple]:
    """(sample, code, aux) triples from the wfdb package reader."""
    wfdb = pytest.importorskip("wfdb")
    ann = wfdb.rdann(str(record), extension, return_label_elements=["label_store"])
    aux = ann.aux_note or [""] * len(ann.sample)
    return [(int(s), int(c), a) for s, c, a in zip(ann.sample, ann.label_store, aux)]


def random_nn(rng: np.random.Generator, n: int, integer: bool = False) -> np.ndarray:
    x = rng.uniform(600.0, 1100.0, n)
    return np.round(x) if integer else x


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
