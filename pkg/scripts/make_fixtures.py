#!/usr/bin/env python3
"""Regenerate the WFDB fixtures in tests/fixtures with the reference writer.

Needs the ``wfdb`` package (installed by the ``test`` extra). The files are
checked in, so this only has to be run when the fixtures change.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
import wfdb

FS = 250


def write_header(path: Path, name: str, nsig: int, fs: float, nsamp: int) -> None:
    path.write_text(f"{name} {nsig} {fs:g} {nsamp}\n")


def beat_train(rng, start_s, end_s, mean_s, sd_s):
    t, out = start_s, []
    while True:
        t += max(0.3, rng.normal(mean_s, sd_s))
        if t >= end_s:
            return out
        out.append(int(round(t * FS)))


def rhythm_record(out: Path, rng) -> None:
    """30 min: NSR, AF, a short SVTA run, NSR again. Beats and rhythm in one .atr."""
    plan = [(0, 900, "(N", 0.8, 0.04), (900, 1500, "(AFIB", 0.7, 0.12), (1500, 1530, "(SVTA", 0.45, 0.02),
            (1530, 1800, "(N", 0.85, 0.04)]
    samples, symbols, aux = [], [], []
    for start, end, label, mean, sd in plan:
        samples.append(int(start * FS) + 1)
        symbols.append("+")
        aux.append(label)
        beats = beat_train(rng, start, end, mean, sd)
        samples += beats
        symbols += ["N"] * len(beats)
        aux += [""] * len(beats)
    # sprinkle a few ectopic beats over the NSR part
    for k in (40, 41, 400, 1200):
        symbols[k] = "V"
    samples = np.array(samples)
    order = np.argsort(samples, kind="stable")
    n = len(samples)
    wfdb.wrann(
        "rhythm",
        "atr",
        samples[order],
        symbol=[symbols[i] for i in order],
        aux_note=[aux[i] for i in order],
        subtype=np.zeros(n, int),
        chan=np.zeros(n, int),
        num=np.zeros(n, int),
        fs=FS,
        write_dir=str(out),
    )
    write_header(out / "rhythm.hea", "rhythm", 2, FS, 1800 * FS)


def split_record(out: Path, rng) -> None:
    """AFDB layout: rhythm markers in .atr, beats in .qrs."""
    plan = [(0, 1200, "(AFIB"), (1200, 2400, "(N")]
    wfdb.wrann(
        "split",
        "atr",
        np.array([int(s * FS) + 1 for s, _, _ in plan]),
        symbol=["+"] * len(plan),
        aux_note=[a for _, _, a in plan],
        fs=FS,
        write_dir=str(out),
    )
    beats = beat_train(rng, 0, 1200, 0.65, 0.13) + beat_train(rng, 1200, 2400, 0.9, 0.05)
    wfdb.wrann("split", "qrs", np.array(beats), symbol=["N"] * len(beats), fs=FS, write_dir=str(out))
    write_header(out / "split.hea", "split", 2, FS, 2400 * FS)


def quirks_record(out: Path) -> None:
    """Exercises SKIP, NUM/SUB/CHN and odd-length aux through the reference writer."""
    samples = np.array([5, 100, 2000, 70000, 70001, 200000, 5_000_000])
    wfdb.wrann(
        "quirks",
        "atr",
        samples,
        symbol=["N", "V", "+", "N", "~", "\"", "N"],
        subtype=np.array([0, 3, 0, -2, 1, 0, 0]),
        chan=np.array([0, 1, 1, 0, 2, 2, 0]),
        num=np.array([0, 0, 5, 5, 1, 0, 7]),
        aux_note=["", "", "(AB", "", "", "odd", "(N"],
        fs=FS,
        write_dir=str(out),
    )


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "tests" / "fixtures")
    p.add_argument("--seed", type=int, default=7)
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    rhythm_record(args.out, rng)
    split_record(args.out, rng)
    quirks_record(args.out)
    (args.out / "hdr100.hea").write_text("100 2 128 650000\n100.dat 212 200 11 1024 995 -22131 0 MLII\n")
    for f in sorted(args.out.iterdir()):
        print(f"{f.name:16s} {f.stat().st_size:8d} bytes")


if __name__ == "__main__":
    main()
