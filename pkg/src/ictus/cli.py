"""Command-line entry point.

Commands: ``synth``, ``ingest``, ``train``, ``evaluate``, ``score``. A JSON
run configuration provides defaults; flags override it. Exit codes: 0
success, 1 usage error, 2 data error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint
from .config import RunConfig, file_digest
from .ingest import DataError
from .optim import DivergenceError
from .synthetic import SynthConfig, generate
from . import ingest, pipeline

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(p: _Parser):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out", help="output directory")


def _add_model_flags(p: _Parser):
    p.add_argument("--blocks", type=int, help="number of attention blocks")
    p.add_argument("--heads", type=int, help="attention heads per module")
    p.add_argument("--no-adversarial", action="store_true", help="generator trains on MSE only")
    p.add_argument("--no-gp", action="store_true", help="disable the gradient penalty")
    p.add_argument("--spatial-only", action="store_true", help="drop temporal attention modules")
    p.add_argument("--temporal-only", action="store_true", help="drop spatial attention modules")
    p.add_argument("--tau", type=float, help="alarm threshold")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--folds", type=int, help="cross-validation fold count")
    p.add_argument("--max-windows", type=int, help="cap training windows per class")


def _add_data_flags(p: _Parser):
    p.add_argument("--data", nargs="+", help="recording files (.edf or .csv)")
    p.add_argument("--csv-rate", type=float, help="sample rate for CSV recordings (Hz)")
    p.add_argument("--working-rate", type=float, help="decimation target rate (Hz)")


def build_parser() -> _Parser:
    parser = _Parser(prog="ictus", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic recordings")
    _add_common(p)
    p.add_argument("--patients", type=int, default=1, help="patients when no synth config given")

    p = sub.add_parser("ingest", help="window + label recordings into a cache")
    _add_common(p)
    _add_data_flags(p)

    p = sub.add_parser("train", help="train per-fold models")
    _add_common(p)
    _add_data_flags(p)
    _add_model_flags(p)

    p = sub.add_parser("evaluate", help="score checkpoints and report metrics")
    _add_common(p)
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--checkpoints", help="training output directory (defaults to --out)")

    p = sub.add_parser("score", help="emit a score trace for one recording")
    _add_common(p)
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--checkpoint", required=True, help="fold directory with generator/discriminator")
    return parser


def _load_config(args) -> RunConfig:
    base = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        base = {k: v for k, v in raw.items() if k != "synth"}
    cfg = RunConfig.from_dict(base)
    if getattr(args, "data", None):
        cfg.data_paths = list(args.data)
    if getattr(args, "csv_rate", None) is not None:
        cfg.csv_sample_rate = args.csv_rate
    if getattr(args, "working_rate", None) is not None:
        cfg.working_rate = args.working_rate
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out_dir = args.out
    if getattr(args, "blocks", None) is not None:
        cfg.blocks = args.blocks
    if getattr(args, "heads", None) is not None:
        cfg.heads = args.heads
    if getattr(args, "no_adversarial", False):
        cfg.adv_weight = 0.0
    if getattr(args, "no_gp", False):
        cfg.gp_weight = 0.0
    if getattr(args, "spatial_only", False):
        cfg.spatial_only = True
    if getattr(args, "temporal_only", False):
        cfg.temporal_only = True
    if getattr(args, "tau", None) is not None:
        cfg.tau = args.tau
    if getattr(args, "epochs", None) is not None:
        cfg.epochs = args.epochs
    if getattr(args, "folds", None) is not None:
        cfg.folds = args.folds
    if getattr(args, "max_windows", None) is not None:
        cfg.max_windows_per_class = args.max_windows
    return cfg


def _synth_specs(args) -> list[SynthConfig]:
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        specs = raw.get("synth") if isinstance(raw, dict) else raw
        if not isinstance(specs, list) or not specs:
            raise DataError(f"{args.config}: synth config must hold a non-empty list of patient specs")
        out = []
        for i, spec in enumerate(specs):
            spec = dict(spec)
            spec["onsets_s"] = tuple(spec.get("onsets_s", ()))
            if args.seed is not None:
                spec["seed"] = args.seed + i
            out.append(SynthConfig(**spec))
        return out
    seed = args.seed if args.seed is not None else 0
    return [
        SynthConfig(
            patient_id=f"synth{i + 1:02d}",
            duration_s=2400.0,
            onsets_s=(900.0, 1800.0),
            ramp_s=300.0,
            seed=seed + i,
        )
        for i in range(args.patients)
    ]


def cmd_synth(args) -> int:
    out_dir = Path(args.out or "synth_out")
    out_dir.mkdir(parents=True, exist_ok=True)
    specs = _synth_specs(args)
    digests = {}
    for spec in specs:
        rec = generate(spec)
        path = out_dir / f"{spec.patient_id}.csv"
        ingest.write_csv(rec, path)
        digests[path.name] = file_digest(path)
        digests[path.with_suffix(".ann").name] = file_digest(path.with_suffix(".ann"))
        log.info("wrote %s (%.0f s, %d channels, %d seizures)", path, spec.duration_s, spec.channels, len(spec.onsets_s))
    manifest = {
        "synth": [dataclasses.asdict(s) for s in specs],
        "outputs_sha256": digests,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    if not cfg.data_paths:
        raise _UsageError("ingest requires --data")
    out_dir = Path(cfg.out_dir)
    for p in cfg.data_paths:
        rec = pipeline.load_recording(p, cfg)
        prep = pipeline.prepare_patient(rec, cfg, build_folds=False)
        pipeline.write_window_cache(prep, out_dir / rec.patient_id)
        log.info("cached %d windows for %s", len(prep.windows), rec.patient_id)
    cfg.write_manifest(out_dir, inputs={str(p): file_digest(p) for p in cfg.data_paths})
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if not cfg.data_paths:
        raise _UsageError("train requires --data")
    summary = pipeline.run_training(cfg)
    trained = sum(1 for pat in summary["patients"] for f in pat["folds"] if not f["skipped"])
    log.info("trained %d folds across %d patients", trained, len(summary["patients"]))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    if not cfg.data_paths:
        raise _UsageError("evaluate requires --data")
    out = pipeline.run_evaluation(cfg, checkpoints_dir=args.checkpoints or cfg.out_dir)
    pooled = out["pooled"]
    sens = pooled["sensitivity"]
    fdr = pooled["fdr_per_hour"]
    log.info(
        "pooled sensitivity %s, FDR/h %s over %.2f interictal hours",
        "n/a" if sens is None else f"{sens:.3f}",
        "n/a" if fdr is None else f"{fdr:.3f}",
        pooled["interictal_hours"],
    )
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = _load_config(args)
    if not cfg.data_paths or len(cfg.data_paths) != 1:
        raise _UsageError("score requires exactly one --data recording")
    from .evaluation import moving_average, score_stream, write_trace_csv

    rec = pipeline.load_recording(cfg.data_paths[0], cfg)
    prep = pipeline.prepare_patient(rec, cfg, build_folds=False)
    fold_dir = Path(args.checkpoint)
    gen = pipeline.store_from_arrays(load_checkpoint(fold_dir / "generator.ckpt"))
    disc = pipeline.store_from_arrays(load_checkpoint(fold_dir / "discriminator.ckpt"))
    raw = score_stream(gen, disc, prep.windows, cfg.model_config(), cfg.pool)
    smoothed = moving_average(raw, cfg.ma_horizon_s)
    out_path = Path(cfg.out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    trace = out_path / f"{rec.patient_id}_trace.csv"
    write_trace_csv(trace, raw, smoothed)
    log.info("wrote %s (%d windows)", trace, len(raw))
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "score": cmd_score,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
