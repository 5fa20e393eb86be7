#!/usr/bin/env python3
"""Full pipeline on locally downloaded LTAFDB and/or AFDB records.

Fetch the databases yourself, e.g.::

    wget -r -np -nH --cut-dirs=3 https://physionet.org/files/ltafdb/1.0.0/
    wget -r -np -nH --cut-dirs=3 https://physionet.org/files/afdb/1.0.0/

LTAFDB keeps beats and rhythm markers in ``.atr``; AFDB keeps rhythm in
``.atr`` and beats in ``.qrs``. AFDB records without a ``.qrs`` file are
skipped. The feature CSV this writes can be fed to the acceptance suite
through ``HRVAF_FEATURES_CSV``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from hrvaf.cli import main as hrvaf


def records(directory: Path, need: tuple) -> list[str]:
    found = []
    for hea in sorted(directory.glob("*.hea")):
        base = hea.with_suffix("")
        if all(base.with_suffix("." + ext).exists() for ext in need):
            found.append(str(base))
    return found


def run(argv: list[str]) -> None:
    print("hrvaf", " ".join(argv[:2]), "...", flush=True)
    code = hrvaf(argv)
    if code:
        sys.exit(code)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ltafdb", type=Path)
    ap.add_argument("--afdb", type=Path)
    ap.add_argument("--work", type=Path, default=Path("physionet_run"))
    ap.add_argument("--seed", default="0")
    args, passthrough = ap.parse_known_args()  # extra flags go to every stage
    if not (args.ltafdb or args.afdb):
        ap.error("give --ltafdb and/or --afdb")
    args.work.mkdir(parents=True, exist_ok=True)
    cfg = ["--seed", args.seed, *passthrough]

    nn_files = []
    if args.ltafdb:
        out = args.work / "ltafdb_nn.csv"
        run(["ingest", *records(args.ltafdb, ("atr",)), "--name-prefix", "ltafdb_", "--out", str(out), *cfg])
        nn_files.append(out)
    if args.afdb:
        out = args.work / "afdb_nn.csv"
        recs = records(args.afdb, ("atr", "qrs"))
        run(["ingest", *recs, "--beat-annotator", "qrs", "--name-prefix", "afdb_", "--out", str(out), *cfg])
        nn_files.append(out)

    feature_files = []
    for nn in nn_files:
        seg = nn.with_name(nn.stem.replace("_nn", "_segments") + ".csv")
        feat = nn.with_name(nn.stem.replace("_nn", "_features") + ".csv")
        run(["segment", "--nn", str(nn), "--out", str(seg), *cfg])
        run(["features", "--segments", str(seg), "--out", str(feat), *cfg])
        feature_files.append(feat)

    # one cohort: concatenate the feature CSVs (same header) under a fresh sidecar
    features = args.work / "features.csv"
    if len(feature_files) == 1:
        features = feature_files[0]
    else:
        lines = feature_files[0].read_text().splitlines()
        for f in feature_files[1:]:
            lines += f.read_text().splitlines()[1:]
        features.write_text("\n".join(lines) + "\n")
    verify = [] if features in feature_files else ["--no-verify"]
    run(["validate", "--features", str(features), "--out", str(args.work / "report.json"),
         "--text", str(args.work / "report.txt"), *verify, *cfg])  # fmt: skip
    print((args.work / "report.txt").read_text())
    print(f"features: {features}")


if __name__ == "__main__":
    main()
