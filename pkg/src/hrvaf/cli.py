"""Command-line pipeline: ingest -> segment -> features -> fit/predict -> validate -> report.

Every command writes its artifact plus ``<artifact>.meta.json``. Exit codes:
0 success, 1 usage error, 2 data error, 3 numerical-conditioning error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from hrvaf import __version__
from hrvaf.artifacts import check_upstream, file_digest, write_sidecar
from hrvaf.config import RunConfig, SpectralConfig
from hrvaf.errors import DataError, HrvafError, UsageError
from hrvaf.features import (
    FeatureRow,
    compute_feature_rows,
    group_rows,
    patient_rows,
    read_features_csv,
    write_features_csv,
)
from hrvaf.gaussian import TransferModel, fit, fit_pair, predict_many
from hrvaf.ingest import IngestedRecord, Rhythm, ingest_record, read_nn_csv, write_nn_csv
from hrvaf.segmenter import filter_patients, make_segments, read_segments_csv, write_segments_csv
from hrvaf.synth import GENERATOR, SplitMix64, SynthSpec, gen_feature_dataset, gen_record
from hrvaf.validation import ValidationReport, kfold_validate, render_report

log = logging.getLogger("hrvaf")

DEMO_STAGES = ("input", "centred", "rotated", "scaled", "final")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# config fields settable from the command line: flag -> (field, type)
_CONFIG_FLAGS = {
    "nn_min_ms": float,
    "nn_max_ms": float,
    "window_s": float,
    "step_s": float,
    "anchor_s": float,
    "min_segments": int,
    "min_nn": int,
    "hist_bin_ms": float,
    "apen_m": int,
    "apen_r": float,
    "ridge": float,
    "k": int,
    "alpha": float,
    "folds": int,
    "seed": int,
}
_SPECTRAL_FLAGS = {"interp_hz": float, "welch_window_s": float, "welch_overlap": float}


def _add_config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (flags override --config)")
    g.add_argument("--config", type=Path, help="JSON run configuration")
    for name, typ in {**_CONFIG_FLAGS, **_SPECTRAL_FLAGS}.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    g.add_argument("--strict-paper-mode", dest="strict_paper_mode", action="store_true", default=None)
    g.add_argument("--bands", help="band edges as lf=0.04:0.15,hf=0.15:0.4,vhf=0.4:0.5")


def _parse_bands(text: str) -> dict:
    bands = dict(SpectralConfig().bands)
    try:
        for item in text.split(","):
            name, edges = item.split("=")
            lo, hi = edges.split(":")
            bands[name.strip()] = (float(lo), float(hi))
    except ValueError:
        raise UsageError(f"cannot parse --bands {text!r}") from None
    return bands


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    cfg = cfg.override(**{name: getattr(args, name, None) for name in _CONFIG_FLAGS})
    if getattr(args, "strict_paper_mode", None):
        cfg = cfg.override(strict_paper_mode=True)
    spec = cfg.spectral
    changes = {}
    if getattr(args, "interp_hz", None) is not None:
        changes["interp_hz"] = args.interp_hz
    if getattr(args, "welch_window_s", None) is not None:
        changes["window_s"] = args.welch_window_s
    if getattr(args, "welch_overlap", None) is not None:
        changes["overlap"] = args.welch_overlap
    if getattr(args, "bands", None):
        changes["bands"] = _parse_bands(args.bands)
    if changes:
        cfg = cfg.override(spectral=SpectralConfig(**{**spec.__dict__, **changes}))
    return cfg


def _require(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"input not found: {path}")
    return path


def _load_patients(path: Path, cfg: RunConfig, verify: bool):
    if verify:
        check_upstream(path, ("features", "synth"), cfg)
    with open(_require(path), newline="") as fh:
        rows = read_features_csv(fh)
    patients = group_rows(rows, min_per_rhythm=2)
    if not patients:
        raise DataError(f"{path} holds no patient with both NSR and AF rows")
    return patients


# --------------------------------------------------------------------------
# commands


def cmd_ingest(args, cfg):
    records = {}
    for rec in args.records:
        r = ingest_record(rec, args.annotator, args.beat_annotator, cfg.nn_min_ms, cfg.nn_max_ms)
        records[args.name_prefix + r.header.record_name] = r
        log.info("%s: %d NN series, %d intervals", rec, len(r.series), sum(len(s) for s in r.series))
    with open(args.out, "w", newline="") as fh:
        write_nn_csv(records, fh)
    inputs = []
    for rec in args.records:
        rec = Path(rec)
        inputs += [rec.with_suffix(".hea"), rec.with_suffix("." + args.annotator)]
        if args.beat_annotator:
            inputs.append(rec.with_suffix("." + args.beat_annotator))
    extra = {"records": {n: {"end_time_s": r.end_time, "fs": r.header.sampling_frequency} for n, r in records.items()}}
    write_sidecar(args.out, "ingest", cfg, inputs, extra)


def cmd_segment(args, cfg):
    meta = check_upstream(_require(args.nn), ("ingest",), cfg) if not args.no_verify else {}
    ends = {n: v["end_time_s"] for n, v in meta.get("extra", {}).get("records", {}).items()}
    with open(args.nn, newline="") as fh:
        per_record = read_nn_csv(fh)
    by_patient = {}
    for name in sorted(per_record):
        series, foreign = per_record[name]
        by_patient[name] = make_segments(
            series,
            cfg.window_s,
            cfg.step_s,
            patient_id=name,
            anchor=cfg.anchor_s,
            record_end=ends.get(name),
            foreign_beat_times=foreign,
            min_nn=cfg.min_nn,
        )
    kept = filter_patients(by_patient, cfg.min_segments)
    log.info("kept %d of %d records", len(kept), len(by_patient))
    with open(args.out, "w", newline="") as fh:
        write_segments_csv(kept, fh)
    write_sidecar(args.out, "segment", cfg, [args.nn], {"patients": [p.patient_id for p in kept]})


def cmd_features(args, cfg):
    if not args.no_verify:
        check_upstream(_require(args.segments), ("segment",), cfg)
    with open(_require(args.segments), newline="") as fh:
        segs = read_segments_csv(fh, cfg.window_s)
    rows = compute_feature_rows([s for pid in sorted(segs) for s in segs[pid]], cfg)
    patients = group_rows(rows, min_per_rhythm=cfg.min_segments)
    with open(args.out, "w", newline="") as fh:
        write_features_csv(patient_rows(patients), fh)
    write_sidecar(args.out, "features", cfg, [args.segments], {"patients": [p.patient_id for p in patients]})


def cmd_fit(args, cfg):
    patients = _load_patients(args.features, cfg, not args.no_verify)
    model = fit(
        [(p.patient_id, p.nsr, p.af) for p in patients],
        ridge=cfg.ridge,
        k=cfg.k,
        strict=cfg.strict_paper_mode,
        fingerprint=cfg.fingerprint("fit"),
    )
    Path(args.out).write_text(model.to_json())
    write_sidecar(args.out, "fit", cfg, [args.features], {"patients": [e.patient_id for e in model.entries]})


def cmd_predict(args, cfg):
    if not args.no_verify:
        check_upstream(_require(args.model), ("fit",), cfg)
    model = TransferModel.from_json(_require(args.model).read_text())
    with open(_require(args.features), newline="") as fh:
        rows = [r for r in read_features_csv(fh) if r.rhythm is Rhythm.NSR]
    if not rows:
        raise DataError(f"{args.features} has no NSR rows")
    pred = predict_many(model, np.array([r.values for r in rows]))
    out = [FeatureRow(r.patient_id, Rhythm.AF, r.segment_start_s, v) for r, v in zip(rows, pred)]
    with open(args.out, "w", newline="") as fh:
        write_features_csv(out, fh)
    write_sidecar(args.out, "predict", cfg, [args.model, args.features])


def cmd_validate(args, cfg):
    patients = _load_patients(args.features, cfg, not args.no_verify)
    report = kfold_validate(
        patients,
        folds=cfg.folds,
        seed=cfg.seed,
        ridge=cfg.ridge,
        k=cfg.k,
        strict=cfg.strict_paper_mode,
        alpha=cfg.alpha,
        metadata={
            "config_fingerprint": cfg.fingerprint("validate"),
            "config": cfg.to_dict(),
            "features_sha256": file_digest(args.features),
            "tool_version": __version__,
        },
    )
    Path(args.out).write_text(report.to_json())
    write_sidecar(args.out, "validate", cfg, [args.features])
    if args.dump_predictions:
        _dump_predictions(args.dump_predictions, patients, report, cfg)
    text = render_report(report)
    if args.text:
        Path(args.text).write_text(text)
    else:
        sys.stdout.write(text)


def _dump_predictions(out_dir: Path, patients, report: ValidationReport, cfg: RunConfig):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_id = {p.patient_id: p for p in patients}
    for split in report.per_split:
        model = fit([(pid, by_id[pid].nsr, by_id[pid].af) for pid in split.train_patients], cfg.ridge, cfg.k, cfg.strict_paper_mode)
        rows = []
        for pid in split.test_patients:
            p = by_id[pid]
            starts = p.nsr_starts if p.nsr_starts is not None else np.arange(len(p.nsr), dtype=float)
            rows += [FeatureRow(pid, Rhythm.AF, float(s), v) for s, v in zip(starts, predict_many(model, p.nsr))]
        with open(out_dir / f"split{split.split_id}_predicted.csv", "w", newline="") as fh:
            write_features_csv(rows, fh)


def cmd_report(args, cfg):
    report = ValidationReport.from_dict(json.loads(_require(args.report).read_text()))
    text = render_report(
        report,
        alpha=args.alpha,
        low_p_threshold=args.low_p_threshold,
        p_source=args.p_source,
        show_reference=args.show_reference,
    )
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_synth(args, cfg):
    if args.kind == "features":
        spec = SynthSpec(
            seed=cfg.seed,
            patients=args.patients,
            samples_per_rhythm=args.samples,
            noise_scale=args.noise_scale,
            patient_spread=args.patient_spread,
        )
        data = gen_feature_dataset(spec)
        with open(args.out, "w", newline="") as fh:
            write_features_csv(patient_rows(data.patients), fh)
        write_sidecar(args.out, "features", cfg, (), {"synthetic": spec.to_dict()})
        return
    # rr: alternating NSR/AF episodes per patient, in the ingest CSV schema
    records = {}
    layout = []
    for _ in range(args.episodes):
        layout += [(Rhythm.NSR, args.episode_s), (Rhythm.AF, args.episode_s)]
    seeds = [int(s) for s in SplitMix64(cfg.seed).next_u64(args.patients)]
    width = len(str(args.patients))
    for p, s in enumerate(seeds):
        series = gen_record(s, layout)
        end = len(layout) * args.episode_s
        records[f"synth{p:0{width}d}"] = IngestedRecord(None, series, np.zeros(0), end)
    with open(args.out, "w", newline="") as fh:
        write_nn_csv(records, fh)
    extra = {
        "records": {n: {"end_time_s": r.end_time, "fs": None} for n, r in records.items()},
        "synthetic": {"seed": cfg.seed, "patients": args.patients, "episode_s": args.episode_s, "generator": GENERATOR},
    }
    write_sidecar(args.out, "ingest", cfg, (), extra)


def cmd_demo_transform(args, cfg):
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = SplitMix64(cfg.seed)
    src_root = np.array([[2.0, 0.0], [1.2, 0.6]])
    tgt_root = np.array([[0.5, 1.5], [-0.8, 0.4]])
    x = rng.normal_matrix(args.samples, 2) @ src_root + np.array([1.0, -2.0])
    y = rng.normal_matrix(args.samples, 2) @ tgt_root + np.array([6.0, 3.0])
    t = fit_pair(x, y, cfg.ridge, "demo", cfg.strict_paper_mode)
    stages = {"input": x, **t.stages(x)}
    for name in DEMO_STAGES:
        path = out_dir / f"{name}.csv"
        np.savetxt(path, stages[name], delimiter=",", header="x,y", comments="", fmt="%.17g")
        write_sidecar(path, "demo-transform", cfg)
    summary = {
        "target_mean": y.mean(axis=0).tolist(),
        "target_cov": np.cov(y, rowvar=False).tolist(),
        "final_mean": stages["final"].mean(axis=0).tolist(),
        "final_cov": np.cov(stages["final"], rowvar=False).tolist(),
        "transform": t.to_dict(),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hrvaf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hrvaf {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="WFDB records -> NN interval CSV")
    p.add_argument("records", nargs="+", help="record paths without extension")
    p.add_argument("--annotator", default="atr")
    p.add_argument("--beat-annotator", help="separate beat annotation file (e.g. qrs for AFDB)")
    p.add_argument("--name-prefix", default="", help="prefix for record names (e.g. ltafdb_)")
    p.add_argument("--out", type=Path, required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("segment", help="NN CSV -> rhythm-pure segment CSV")
    p.add_argument("--nn", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-verify", action="store_true", help="skip sidecar checks on the input")
    _add_config_args(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("features", help="segment CSV -> HRV feature CSV")
    p.add_argument("--segments", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-verify", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("fit", help="feature CSV -> transfer model JSON")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-verify", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="model + NSR feature rows -> predicted AF rows")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-verify", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("validate", help="k-fold cross-validation report")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="report JSON")
    p.add_argument("--text", type=Path, help="write the text tables here instead of stdout")
    p.add_argument("--dump-predictions", type=Path, metavar="DIR")
    p.add_argument("--no-verify", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="render a report JSON as text tables")
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("--alpha", type=float)
    p.add_argument("--low-p-threshold", type=float)
    p.add_argument("--p-source", choices=("pooled", "max"), default="pooled")
    p.add_argument("--show-reference", action="store_true", help="add the published aggregate row")
    p.set_defaults(func=cmd_report, config=None)

    p = sub.add_parser("synth", help="synthetic feature or NN data")
    p.add_argument("kind", choices=("features", "rr"))
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--patients", type=int, default=30)
    p.add_argument("--samples", type=int, default=60, help="segments per rhythm (features)")
    p.add_argument("--noise-scale", type=float, default=0.1)
    p.add_argument("--patient-spread", type=float, default=1.0)
    p.add_argument("--episodes", type=int, default=3, help="NSR/AF episode pairs per record (rr)")
    p.add_argument("--episode-s", type=float, default=3 * 3600.0)
    _add_config_args(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("demo-transform", help="stage-by-stage point clouds of a 2-D transfer map")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--samples", type=int, default=500)
    _add_config_args(p)
    p.set_defaults(func=cmd_demo_transform)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = build_config(args)
        args.func(args, cfg)
    except HrvafError as exc:
        print(f"hrvaf {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"hrvaf {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
