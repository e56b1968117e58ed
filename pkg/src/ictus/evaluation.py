"""Score streams, alarm detection, and event-based clinical metrics.

Scores follow the convention that values near 0 indicate a preictal state,
so an alarm fires on a downward crossing of the smoothed stream through the
threshold. A seizure counts as predicted when at least one alarm lands
inside the 5-50 minute pre-onset success window; the false detection rate
audits alarms falling inside interictal spans only.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .adversarial import aggregate, discriminate
from .attention import AttentionConfig, generator_forward

__all__ = [
    "ScoreStream",
    "SeizureOutcome",
    "AlarmReport",
    "moving_average",
    "detect_alarms",
    "sensitivity",
    "false_detection_rate",
    "score_windows",
    "score_stream",
    "auc",
    "write_trace_csv",
]


@dataclass
class ScoreStream:
    """Anomaly scores at window-end timestamps with constant spacing."""

    times_s: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.times_s = np.asarray(self.times_s, dtype=np.float64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.times_s.shape != self.scores.shape or self.times_s.ndim != 1:
            raise ValueError("times and scores must be matching 1-d arrays")
        if len(self.times_s) > 1:
            gaps = np.diff(self.times_s)
            if gaps.min() <= 0 or not np.allclose(gaps, gaps[0], rtol=0, atol=1e-9):
                raise ValueError("timestamps must increase with constant spacing")
        if len(self.scores) and (self.scores.min() < 0 or self.scores.max() > 1):
            raise ValueError("scores must lie in [0, 1]")

    @property
    def spacing(self) -> float:
        if len(self.times_s) < 2:
            return 0.0
        return float(self.times_s[1] - self.times_s[0])

    def __len__(self):
        return len(self.times_s)


@dataclass
class SeizureOutcome:
    onset_s: float
    hit: bool
    lead_time_s: float | None


@dataclass
class AlarmReport:
    alarms: list[float]
    outcomes: list[SeizureOutcome]
    sensitivity: float | None
    fdr_per_hour: float | None
    interictal_hours: float
    false_alarms: int = 0

    def to_dict(self) -> dict:
        return {
            "alarms_s": list(map(float, self.alarms)),
            "seizures": [
                {"onset_s": o.onset_s, "hit": o.hit, "lead_time_s": o.lead_time_s}
                for o in self.outcomes
            ],
            "sensitivity": self.sensitivity,
            "fdr_per_hour": self.fdr_per_hour,
            "interictal_hours": self.interictal_hours,
            "false_alarms": self.false_alarms,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def moving_average(stream: ScoreStream, horizon_s: float = 300.0) -> ScoreStream:
    """Trailing mean over ceil(horizon / spacing) samples.

    The warm-up region averages over whatever prefix exists, so short
    streams stay scorable.
    """
    if len(stream) == 0:
        return ScoreStream(stream.times_s.copy(), stream.scores.copy())
    if len(stream) == 1:
        return ScoreStream(stream.times_s.copy(), stream.scores.copy())
    k = max(1, math.ceil(horizon_s / stream.spacing))
    c = np.concatenate([[0.0], np.cumsum(stream.scores)])
    idx = np.arange(1, len(stream) + 1)
    lo = np.maximum(0, idx - k)
    out = (c[idx] - c[lo]) / (idx - lo)
    return ScoreStream(stream.times_s.copy(), out)


def detect_alarms(stream: ScoreStream, tau: float = 0.5, refractory_s: float = 1800.0) -> list[float]:
    """Alarm times at downward threshold crossings, deduplicated.

    A crossing fires where the previous sample is >= tau and the current
    one is < tau; crossings within the refractory period of the last kept
    alarm collapse into it.
    """
    alarms: list[float] = []
    s, t = stream.scores, stream.times_s
    for i in range(1, len(s)):
        if s[i - 1] >= tau and s[i] < tau:
            if alarms and t[i] - alarms[-1] <= refractory_s:
                continue
            alarms.append(float(t[i]))
    return alarms


def sensitivity(
    alarms: list[float],
    onsets: list[float],
    success_window: tuple[float, float] = (300.0, 3000.0),
) -> tuple[float | None, list[SeizureOutcome]]:
    """Fraction of seizures with an alarm inside the success window.

    A hit requires onset - alarm in [lo, hi]; the reported lead time is the
    largest one among qualifying alarms. Returns (None, []) with no
    seizures.
    """
    lo, hi = success_window
    outcomes = []
    for onset in onsets:
        leads = [onset - a for a in alarms if lo <= onset - a <= hi]
        if leads:
            outcomes.append(SeizureOutcome(onset_s=float(onset), hit=True, lead_time_s=max(leads)))
        else:
            outcomes.append(SeizureOutcome(onset_s=float(onset), hit=False, lead_time_s=None))
    if not outcomes:
        return None, []
    return sum(o.hit for o in outcomes) / len(outcomes), outcomes


def false_detection_rate(
    alarms: list[float], spans: list[tuple[float, float]]
) -> tuple[float | None, int, float]:
    """False alarms per interictal hour: (rate, count, audited hours).

    Only alarms inside the given interictal spans count; rate is None when
    no interictal time exists.
    """
    hours = sum(hi - lo for lo, hi in spans) / 3600.0
    count = sum(1 for a in alarms if any(lo <= a <= hi for lo, hi in spans))
    if hours <= 0:
        return None, count, 0.0
    return count / hours, count, hours


def score_windows(gen, disc, samples: np.ndarray, model_cfg: AttentionConfig, pool: int = 16, batch: int = 64) -> np.ndarray:
    """Discriminator scores for a stack of windows (W, n, T) -> (W,)."""
    out = np.empty(len(samples))
    with ad.no_grad():
        for lo in range(0, len(samples), batch):
            chunk = samples[lo : lo + batch]
            bundle = generator_forward(gen, chunk, model_cfg)
            patterns = aggregate(bundle, pool)
            out[lo : lo + len(chunk)] = discriminate(disc, patterns).data
    return out


def score_stream(gen, disc, windows, model_cfg: AttentionConfig, pool: int = 16, batch: int = 64) -> ScoreStream:
    """Score time-ordered windows into a stream stamped at window ends."""
    if not windows:
        return ScoreStream(np.empty(0), np.empty(0))
    samples = np.stack([w.samples for w in windows])
    times = np.array([w.start_s + w.duration_s for w in windows])
    return ScoreStream(times, score_windows(gen, disc, samples, model_cfg, pool, batch))


def auc(scores_low: np.ndarray, scores_high: np.ndarray) -> float:
    """P(score_high > score_low) by rank statistic (ties count half)."""
    a = np.asarray(scores_low, dtype=np.float64)
    b = np.asarray(scores_high, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("auc needs both score sets non-empty")
    combined = np.concatenate([a, b])
    order = combined.argsort(kind="mergesort")
    ranks = np.empty(len(combined))
    ranks[order] = np.arange(1, len(combined) + 1)
    # average ranks over ties
    sorted_vals = combined[order]
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = (i + 1 + j + 1) / 2.0
        i = j + 1
    rank_sum_b = ranks[len(a) :].sum()
    u = rank_sum_b - len(b) * (len(b) + 1) / 2.0
    return float(u / (len(a) * len(b)))


def write_trace_csv(path, raw: ScoreStream, smoothed: ScoreStream) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "raw", "smoothed"])
        for t, r, s in zip(raw.times_s, raw.scores, smoothed.scores):
            writer.writerow([f"{t:.6f}", f"{r:.10f}", f"{s:.10f}"])
