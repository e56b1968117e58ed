"""End-to-end plumbing: load, prepare, train per fold, evaluate, report.

The same entry points back both the CLI and the test suite so that runs are
reproducible from a RunConfig alone. Checkpoints land under
``out_dir/<patient>/fold<j>/`` together with per-fold training logs; reports
and score traces are written next to them by the evaluation pass.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ingest
from .adversarial import FoldResult, train
from .checkpoint import ParameterStore, load_checkpoint, save_checkpoint
from .config import RunConfig, file_digest
from .evaluation import (
    AlarmReport,
    ScoreStream,
    SeizureOutcome,
    detect_alarms,
    false_detection_rate,
    moving_average,
    score_stream,
    sensitivity,
    write_trace_csv,
)
from .ingest import FoldPlan, LabeledWindow, Recording

__all__ = [
    "PreparedPatient",
    "FoldEvaluation",
    "load_recording",
    "prepare_patient",
    "train_patient",
    "evaluate_fold",
    "pool_reports",
    "run_training",
    "run_evaluation",
    "write_window_cache",
    "read_window_cache",
    "store_from_arrays",
]

log = logging.getLogger(__name__)


@dataclass
class PreparedPatient:
    recording: Recording  # at working rate
    windows: list[LabeledWindow]
    samples: np.ndarray  # (W, n, T)
    labels: np.ndarray  # (W,) label strings
    plan: FoldPlan


@dataclass
class FoldEvaluation:
    fold_index: int
    report: AlarmReport
    raw: ScoreStream
    smoothed: ScoreStream
    skipped: bool = False


def load_recording(path, cfg: RunConfig) -> Recording:
    path = Path(path)
    if path.suffix.lower() == ".edf":
        rec = ingest.read_edf(path)
    elif path.suffix.lower() == ".csv":
        if cfg.csv_sample_rate is None:
            raise ingest.DataError(f"{path}: csv_sample_rate must be set to read CSV recordings")
        rec = ingest.read_csv(path, cfg.csv_sample_rate)
    else:
        raise ingest.DataError(f"{path}: unsupported recording format {path.suffix!r}")
    return ingest.decimate(rec, cfg.working_rate)


def prepare_patient(recording: Recording, cfg: RunConfig, build_folds: bool = True) -> PreparedPatient:
    """Decimated recording -> labeled windows -> fold plan."""
    if abs(recording.sample_rate - cfg.working_rate) > 1e-9:
        recording = ingest.decimate(recording, cfg.working_rate)
    wins = ingest.window(recording, cfg.window_seconds, cfg.overlap)
    labeled = ingest.label_windows(
        wins, recording.annotations, cfg.preictal_horizon_s, cfg.interictal_margin_s
    )
    samples = (
        np.stack([w.samples for w in labeled])
        if labeled
        else np.empty((0, recording.n_channels, 0))
    )
    labels = np.array([w.label for w in labeled])
    plan = None
    if build_folds:
        plan = ingest.split_folds(
            labeled, recording.annotations, cfg.folds, cfg.seed, cfg.exclusion_margin_s
        )
    return PreparedPatient(recording, labeled, samples, labels, plan)


def train_patient(prep: PreparedPatient, cfg: RunConfig, seed) -> list[FoldResult]:
    return train(
        prep.samples, prep.labels, prep.plan, cfg.model_config(), cfg.adversarial_config(), seed
    )


def evaluate_fold(prep: PreparedPatient, fold, gen, disc, cfg: RunConfig) -> FoldEvaluation:
    """Score the whole recording with one fold's model and derive metrics.

    Sensitivity covers only the fold's test seizures; the false-detection
    audit runs over every interictal span of the recording.
    """
    raw = score_stream(gen, disc, prep.windows, cfg.model_config(), cfg.pool)
    smoothed = moving_average(raw, cfg.ma_horizon_s)
    alarms = detect_alarms(smoothed, cfg.tau, cfg.refractory_s)
    onsets = [prep.recording.annotations[s][0] for s in fold.test_seizures]
    sens, outcomes = sensitivity(alarms, onsets, cfg.success_window)
    spans = ingest.interictal_spans(
        prep.recording.duration_s, prep.recording.annotations, cfg.interictal_margin_s
    )
    rate, count, hours = false_detection_rate(alarms, spans)
    report = AlarmReport(
        alarms=alarms,
        outcomes=outcomes,
        sensitivity=sens,
        fdr_per_hour=rate,
        interictal_hours=hours,
        false_alarms=count,
    )
    return FoldEvaluation(fold.index, report, raw, smoothed)


def pool_reports(evaluations: list[FoldEvaluation]) -> AlarmReport:
    """Pooled sensitivity (hits/seizures) and FDR (alarms/hours) over folds."""
    outcomes = [o for ev in evaluations for o in ev.report.outcomes]
    alarms = sorted(a for ev in evaluations for a in ev.report.alarms)
    hits = sum(o.hit for o in outcomes)
    hours = sum(ev.report.interictal_hours for ev in evaluations)
    false_alarms = sum(ev.report.false_alarms for ev in evaluations)
    return AlarmReport(
        alarms=alarms,
        outcomes=outcomes,
        sensitivity=(hits / len(outcomes)) if outcomes else None,
        fdr_per_hour=(false_alarms / hours) if hours > 0 else None,
        interictal_hours=hours,
        false_alarms=false_alarms,
    )


def store_from_arrays(arrays: dict[str, np.ndarray]) -> ParameterStore:
    store = ParameterStore()
    for name, arr in arrays.items():
        store.add(name, arr)
    return store


def _write_log_csv(path, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "L_D", "L_G", "MSE", "GP", "wall_seconds"])
        for r in rows:
            writer.writerow(
                [r.epoch, f"{r.l_d:.12g}", f"{r.l_g:.12g}", f"{r.mse:.12g}", f"{r.gp:.12g}", f"{r.wall_seconds:.3f}"]
            )


def run_training(cfg: RunConfig, recordings: list[Recording] | None = None) -> dict:
    """Train every patient and fold; returns a summary dict.

    ``recordings`` bypasses file loading (used by synthetic end-to-end
    runs); otherwise ``cfg.data_paths`` are read from disk.
    """
    out_root = Path(cfg.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    digests = {}
    if recordings is None:
        recordings = []
        for p in cfg.data_paths:
            recordings.append(load_recording(p, cfg))
            digests[str(p)] = file_digest(p)
    summary = {"patients": []}
    patient_seeds = np.random.SeedSequence(cfg.seed).spawn(len(recordings))
    for rec, seq in zip(recordings, patient_seeds):
        prep = prepare_patient(rec, cfg)
        results = train_patient(prep, cfg, seq)
        pdir = out_root / rec.patient_id
        fold_infos = []
        for res in results:
            fdir = pdir / f"fold{res.fold_index}"
            fdir.mkdir(parents=True, exist_ok=True)
            info = {"fold": res.fold_index, "skipped": res.skipped, "reason": res.reason}
            if not res.skipped:
                save_checkpoint(res.generator, fdir / "generator.ckpt")
                save_checkpoint(res.discriminator, fdir / "discriminator.ckpt")
                _write_log_csv(fdir / "training_log.csv", res.log)
            fold_infos.append(info)
        summary["patients"].append(
            {
                "patient_id": rec.patient_id,
                "folds": fold_infos,
                "window_counts": {
                    lab: int((prep.labels == lab).sum())
                    for lab in (ingest.PREICTAL, ingest.INTERICTAL, ingest.EXCLUDED)
                },
            }
        )
    cfg.write_manifest(out_root, inputs=digests, extra={"summary": summary})
    return summary


def run_evaluation(
    cfg: RunConfig,
    checkpoints_dir=None,
    recordings: list[Recording] | None = None,
    write_traces: bool = True,
) -> dict:
    """Evaluate per-fold checkpoints; returns per-patient and pooled reports."""
    root = Path(checkpoints_dir if checkpoints_dir is not None else cfg.out_dir)
    if recordings is None:
        recordings = [load_recording(p, cfg) for p in cfg.data_paths]
    all_evals: list[FoldEvaluation] = []
    out = {"patients": [], "pooled": None}
    for rec in recordings:
        prep = prepare_patient(rec, cfg)
        pdir = root / rec.patient_id
        patient_entry = {"patient_id": rec.patient_id, "folds": []}
        for fold in prep.plan.folds:
            fdir = pdir / f"fold{fold.index}"
            gen_path, disc_path = fdir / "generator.ckpt", fdir / "discriminator.ckpt"
            onsets = [rec.annotations[s][0] for s in fold.test_seizures]
            if not gen_path.exists() or not disc_path.exists():
                # skipped fold: its test seizures count as unpredicted
                report = AlarmReport(
                    alarms=[],
                    outcomes=[
                        SeizureOutcome(onset_s=float(o), hit=False, lead_time_s=None) for o in onsets
                    ],
                    sensitivity=0.0 if onsets else None,
                    fdr_per_hour=None,
                    interictal_hours=0.0,
                )
                empty = ScoreStream(np.empty(0), np.empty(0))
                ev = FoldEvaluation(fold.index, report, empty, empty, skipped=True)
                log.warning(
                    "%s fold %d: missing checkpoints, counting %d seizures as missed",
                    rec.patient_id,
                    fold.index,
                    len(onsets),
                )
            else:
                gen = store_from_arrays(load_checkpoint(gen_path))
                disc = store_from_arrays(load_checkpoint(disc_path))
                ev = evaluate_fold(prep, fold, gen, disc, cfg)
                if write_traces:
                    write_trace_csv(fdir / "trace.csv", ev.raw, ev.smoothed)
                ev.report.to_json(fdir / "report.json")
            all_evals.append(ev)
            patient_entry["folds"].append({"fold": fold.index, "report": ev.report.to_dict(), "skipped": ev.skipped})
        out["patients"].append(patient_entry)
    pooled = pool_reports(all_evals)
    out["pooled"] = pooled.to_dict()
    pooled.to_json(root / "pooled_report.json")
    (root / "evaluation.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return out


def write_window_cache(prep: PreparedPatient, out_dir) -> None:
    """Windows as one checkpoint-format array plus a JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint({"windows": prep.samples}, out_dir / "windows.bin")
    meta = {
        "patient_id": prep.recording.patient_id,
        "sample_rate": prep.recording.sample_rate,
        "starts_s": [w.start_s for w in prep.windows],
        "duration_s": prep.windows[0].duration_s if prep.windows else None,
        "labels": [w.label for w in prep.windows],
        "annotations": prep.recording.annotations,
    }
    (out_dir / "windows.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_window_cache(cache_dir) -> tuple[np.ndarray, dict]:
    cache_dir = Path(cache_dir)
    arrays = load_checkpoint(cache_dir / "windows.bin")
    meta = json.loads((cache_dir / "windows.json").read_text())
    return arrays["windows"], meta
