"""EEG recording ingestion: EDF/CSV readers, windowing, labeling, CV folds.

The EDF support targets continuous 16-bit recordings with one uniform
sample rate across signals (the CHB-MIT profile). Labels follow the
protocol: a window is preictal when it lies entirely inside the hour before
an onset, interictal when its whole extent keeps the configured margin from
every seizure interval, excluded otherwise.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "EdfParseError",
    "Recording",
    "LabeledWindow",
    "Window",
    "Fold",
    "FoldPlan",
    "PREICTAL",
    "INTERICTAL",
    "EXCLUDED",
    "read_edf",
    "write_edf",
    "read_csv",
    "write_csv",
    "read_annotations",
    "write_annotations",
    "decimate",
    "window",
    "label_windows",
    "split_folds",
    "interictal_spans",
]

log = logging.getLogger(__name__)

PREICTAL = "preictal"
INTERICTAL = "interictal"
EXCLUDED = "excluded"


class DataError(ValueError):
    """Unreadable or inconsistent input data."""


class EdfParseError(DataError):
    """EDF structure violation; the message names the failing byte offset."""


@dataclass
class Recording:
    """Multichannel EEG in physical units with seizure annotations."""

    patient_id: str
    sample_rate: float
    samples: np.ndarray  # (n_channels, total_samples)
    annotations: list[tuple[float, float]] = field(default_factory=list)
    channel_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise DataError(f"samples must be (channels, samples), got {self.samples.shape}")
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        if not self.channel_names:
            self.channel_names = [f"ch{i + 1:02d}" for i in range(self.samples.shape[0])]
        if len(self.channel_names) != self.samples.shape[0]:
            raise DataError("channel name count does not match channel count")
        self.annotations = [(float(a), float(b)) for a, b in self.annotations]
        prev_onset = -np.inf
        for onset, offset in self.annotations:
            if offset <= onset:
                raise DataError(f"annotation offset {offset} <= onset {onset}")
            if onset <= prev_onset:
                raise DataError(f"annotation onsets must be strictly increasing (got {onset})")
            prev_onset = onset

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return self.samples.shape[1] / self.sample_rate


@dataclass
class Window:
    start_s: float
    duration_s: float
    samples: np.ndarray  # (n_channels, window_len) view into the recording


@dataclass
class LabeledWindow:
    start_s: float
    duration_s: float
    samples: np.ndarray
    label: str


@dataclass
class Fold:
    index: int
    test_seizures: list[int]
    train_ids: np.ndarray
    excluded_ids: np.ndarray


@dataclass
class FoldPlan:
    k: int
    folds: list[Fold]


# ---------------------------------------------------------------------------
# annotation sidecars (CSV text: one "onset_s,offset_s" per line)
# ---------------------------------------------------------------------------


def sidecar_path(recording_path) -> Path:
    return Path(recording_path).with_suffix(".ann")


def read_annotations(path) -> list[tuple[float, float]]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'onset_s,offset_s', got {line!r}")
        try:
            onset, offset = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-numeric annotation {line!r}") from exc
        if offset <= onset:
            raise DataError(f"{path}:{lineno}: offset {offset} <= onset {onset}")
        out.append((onset, offset))
    if any(b[0] <= a[0] for a, b in zip(out, out[1:])):
        raise DataError(f"{path}: annotation onsets must be strictly increasing")
    return out


def write_annotations(annotations, path) -> None:
    lines = [f"{onset:.6f},{offset:.6f}" for onset, offset in annotations]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# EDF subset
# ---------------------------------------------------------------------------

_EDF_HEADER = 256


class _Cursor:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise EdfParseError(
                f"{self.path}: truncated while reading {what} at offset {self.pos} "
                f"(need {n} bytes, file has {len(self.raw) - self.pos} left)"
            )
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def ascii(self, n: int, what: str) -> str:
        return self.take(n, what).decode("latin-1").strip()

    def number(self, n: int, what: str, kind=float):
        pos = self.pos
        text = self.ascii(n, what)
        try:
            return kind(text)
        except ValueError as exc:
            raise EdfParseError(f"{self.path}: bad {what} field {text!r} at offset {pos}") from exc


def read_edf(path) -> Recording:
    """Parse a continuous, uniform-rate, 16-bit EDF file."""
    path = Path(path)
    cur = _Cursor(path.read_bytes(), path)
    cur.ascii(8, "version")
    patient = cur.ascii(80, "patient id")
    cur.ascii(80, "recording id")
    cur.ascii(8, "start date")
    cur.ascii(8, "start time")
    header_bytes = cur.number(8, "header bytes", int)
    cur.ascii(44, "reserved")
    n_records = cur.number(8, "record count", int)
    record_duration = cur.number(8, "record duration", float)
    ns = cur.number(4, "signal count", int)
    if ns <= 0:
        raise EdfParseError(f"{path}: signal count must be positive, got {ns} (offset 252)")
    if header_bytes != _EDF_HEADER + 256 * ns:
        raise EdfParseError(
            f"{path}: header size field {header_bytes} != {_EDF_HEADER + 256 * ns} "
            f"for {ns} signals (offset 184)"
        )
    if n_records < 0 or record_duration <= 0:
        raise EdfParseError(
            f"{path}: need non-negative record count and positive record duration "
            f"(got {n_records}, {record_duration}) at offset 236"
        )

    labels = [cur.ascii(16, f"label[{i}]") for i in range(ns)]
    for i in range(ns):
        cur.ascii(80, f"transducer[{i}]")
    for i in range(ns):
        cur.ascii(8, f"physical dimension[{i}]")
    phys_min = [cur.number(8, f"physical min[{i}]") for i in range(ns)]
    phys_max = [cur.number(8, f"physical max[{i}]") for i in range(ns)]
    dig_min = [cur.number(8, f"digital min[{i}]", int) for i in range(ns)]
    dig_max = [cur.number(8, f"digital max[{i}]", int) for i in range(ns)]
    for i in range(ns):
        cur.ascii(80, f"prefilter[{i}]")
    samples_per_record = [cur.number(8, f"samples per record[{i}]", int) for i in range(ns)]
    for i in range(ns):
        cur.ascii(32, f"signal reserved[{i}]")

    if len(set(samples_per_record)) != 1:
        raise EdfParseError(
            f"{path}: non-uniform sample rates {samples_per_record} are unsupported (offset {cur.pos})"
        )
    spr = samples_per_record[0]
    if spr <= 0:
        raise EdfParseError(f"{path}: samples per record must be positive, got {spr}")
    for i in range(ns):
        if dig_max[i] <= dig_min[i]:
            raise EdfParseError(f"{path}: digital range empty for signal {i}")

    record_bytes = 2 * spr * ns
    expected = cur.pos + n_records * record_bytes
    if expected != len(cur.raw):
        raise EdfParseError(
            f"{path}: record count {n_records} implies file size {expected} bytes "
            f"but file has {len(cur.raw)} (data starts at offset {cur.pos})"
        )
    payload = np.frombuffer(cur.take(n_records * record_bytes, "data records"), dtype="<i2")
    digital = (
        payload.reshape(n_records, ns, spr)
        .transpose(1, 0, 2)
        .reshape(ns, n_records * spr)
        .astype(np.float64)  # widen before scaling: int16 overflows at -dig_min
    )

    samples = np.empty(digital.shape, dtype=np.float64)
    for i in range(ns):
        gain = (phys_max[i] - phys_min[i]) / (dig_max[i] - dig_min[i])
        samples[i] = gain * (digital[i] - dig_min[i]) + phys_min[i]

    annotations = read_annotations(sidecar_path(path))
    return Recording(
        patient_id=patient or path.stem,
        sample_rate=spr / record_duration,
        samples=samples,
        annotations=annotations,
        channel_names=labels,
    )


def _ascii_field(value, width: int) -> bytes:
    text = f"{value}"
    if len(text) > width:
        raise DataError(f"EDF field {text!r} exceeds {width} ascii characters")
    return text.ljust(width).encode("latin-1")


def write_edf(recording: Recording, path, phys_range=None, dig_range=(-32768, 32767)) -> None:
    """Write the EDF subset (1-second records, shared 16-bit scaling).

    ``phys_range``: (min, max) applied to every channel; defaults to a
    symmetric integer range covering the data. Values are rounded onto the
    digital grid, so read-after-write is bit-exact only for on-grid data.
    """
    path = Path(path)
    rate = recording.sample_rate
    if abs(rate - round(rate)) > 1e-9:
        raise DataError(f"EDF writer needs an integer sample rate, got {rate}")
    spr = int(round(rate))
    n, total = recording.samples.shape
    if total % spr != 0:
        raise DataError(f"total samples {total} not divisible by rate {spr}; trim the recording")
    n_records = total // spr
    dmin, dmax = dig_range
    if phys_range is None:
        top = max(1.0, float(np.ceil(np.abs(recording.samples).max() if recording.samples.size else 1.0)))
        phys_range = (-top, top)
    pmin, pmax = phys_range
    gain = (pmax - pmin) / (dmax - dmin)

    digital = np.rint((recording.samples - pmin) / gain) + dmin
    digital = np.clip(digital, dmin, dmax).astype("<i2")

    head = [
        _ascii_field(0, 8),
        _ascii_field(recording.patient_id, 80),
        _ascii_field("ictus export", 80),
        _ascii_field("01.01.00", 8),
        _ascii_field("00.00.00", 8),
        _ascii_field(_EDF_HEADER + 256 * n, 8),
        _ascii_field("", 44),
        _ascii_field(n_records, 8),
        _ascii_field(1, 8),
        _ascii_field(n, 4),
    ]
    head += [_ascii_field(name, 16) for name in recording.channel_names]
    head += [_ascii_field("", 80)] * n
    head += [_ascii_field("uV", 8)] * n
    head += [_ascii_field(f"{pmin:g}", 8)] * n
    head += [_ascii_field(f"{pmax:g}", 8)] * n
    head += [_ascii_field(dmin, 8)] * n
    head += [_ascii_field(dmax, 8)] * n
    head += [_ascii_field("", 80)] * n
    head += [_ascii_field(spr, 8)] * n
    head += [_ascii_field("", 32)] * n

    records = digital.reshape(n, n_records, spr).transpose(1, 0, 2)
    path.write_bytes(b"".join(head) + records.tobytes())
    write_annotations(recording.annotations, sidecar_path(path))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def read_csv(path, sample_rate: float, annotations_path=None) -> Recording:
    """One column per channel, header row of channel names."""
    path = Path(path)
    if sample_rate <= 0:
        raise DataError(f"{path}: declared sample rate must be positive, got {sample_rate}")
    rows: list[list[float]] = []
    names: list[str] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                names = [c.strip() for c in row]
                if not names:
                    raise DataError(f"{path}:1: empty header row")
                continue
            if not row:
                continue
            if len(row) != len(names):
                raise DataError(
                    f"{path}:{lineno}: ragged row has {len(row)} cells, expected {len(names)}"
                )
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric cell in {row!r}") from exc
    samples = np.asarray(rows, dtype=np.float64).T if rows else np.empty((len(names), 0))
    ann = read_annotations(annotations_path if annotations_path is not None else sidecar_path(path))
    return Recording(
        patient_id=path.stem,
        sample_rate=float(sample_rate),
        samples=samples,
        annotations=ann,
        channel_names=names,
    )


def write_csv(recording: Recording, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(recording.channel_names)
        for row in recording.samples.T:
            writer.writerow([repr(float(v)) for v in row])
    write_annotations(recording.annotations, sidecar_path(path))


# ---------------------------------------------------------------------------
# windowing and labeling
# ---------------------------------------------------------------------------


def decimate(recording: Recording, target_rate: float) -> Recording:
    """Mean-pool down to ``target_rate`` (must divide the native rate)."""
    factor = recording.sample_rate / target_rate
    if abs(factor - round(factor)) > 1e-9 or factor < 1:
        raise DataError(
            f"target rate {target_rate} must divide the native rate {recording.sample_rate}"
        )
    factor = int(round(factor))
    if factor == 1:
        return recording
    n, total = recording.samples.shape
    keep = (total // factor) * factor
    pooled = recording.samples[:, :keep].reshape(n, -1, factor).mean(axis=2)
    return Recording(
        patient_id=recording.patient_id,
        sample_rate=float(target_rate),
        samples=pooled,
        annotations=list(recording.annotations),
        channel_names=list(recording.channel_names),
    )


def window(recording: Recording, window_seconds: float = 5.0, overlap: float = 0.5) -> list[Window]:
    """Overlapping windows; the unfillable tail is dropped."""
    if not 0 <= overlap < 1:
        raise DataError(f"overlap must be in [0, 1), got {overlap}")
    wlen_f = window_seconds * recording.sample_rate
    if abs(wlen_f - round(wlen_f)) > 1e-9 or round(wlen_f) < 1:
        raise DataError(
            f"window_seconds * sample_rate must be a positive integer, got {wlen_f}"
        )
    wlen = int(round(wlen_f))
    hop_f = wlen * (1.0 - overlap)
    hop = int(round(hop_f))
    if hop < 1 or abs(hop - hop_f) > 1e-9:
        raise DataError(f"overlap {overlap} yields non-integer hop {hop_f}")
    total = recording.samples.shape[1]
    if total < wlen:
        return []
    count = (total - wlen) // hop + 1
    rate = recording.sample_rate
    return [
        Window(
            start_s=i * hop / rate,
            duration_s=wlen / rate,
            samples=recording.samples[:, i * hop : i * hop + wlen],
        )
        for i in range(count)
    ]


def label_windows(
    windows: list[Window],
    annotations: list[tuple[float, float]],
    preictal_horizon_s: float = 3600.0,
    interictal_margin_s: float = 14400.0,
) -> list[LabeledWindow]:
    """Assign exactly one of preictal/interictal/excluded to every window.

    Preictal: the window's full extent lies in [onset - horizon, onset) of
    some seizure. Interictal: the extent keeps at least the margin from
    every seizure interval, on both sides. Everything else (ictal,
    postictal, straddles, margin violations) is excluded; preictal wins
    when both rules match.
    """
    if not windows:
        return []
    starts = np.array([w.start_s for w in windows])
    ends = starts + np.array([w.duration_s for w in windows])
    pre = np.zeros(len(windows), dtype=bool)
    inter = np.ones(len(windows), dtype=bool)
    for onset, offset in annotations:
        pre |= (starts >= onset - preictal_horizon_s) & (ends <= onset)
        inter &= (ends <= onset - interictal_margin_s) | (starts >= offset + interictal_margin_s)
    if not annotations:
        pre[:] = False  # nothing to anticipate; whole recording is baseline
    labels = np.where(pre, PREICTAL, np.where(inter, INTERICTAL, EXCLUDED))
    return [
        LabeledWindow(start_s=w.start_s, duration_s=w.duration_s, samples=w.samples, label=str(lab))
        for w, lab in zip(windows, labels)
    ]


def interictal_spans(
    duration_s: float,
    annotations: list[tuple[float, float]],
    interictal_margin_s: float = 14400.0,
) -> list[tuple[float, float]]:
    """Sub-intervals of the recording at least the margin from every seizure."""
    spans = [(0.0, float(duration_s))]
    for onset, offset in annotations:
        blocked = (onset - interictal_margin_s, offset + interictal_margin_s)
        next_spans = []
        for lo, hi in spans:
            if blocked[0] > lo:
                next_spans.append((lo, min(hi, blocked[0])))
            if blocked[1] < hi:
                next_spans.append((max(lo, blocked[1]), hi))
        spans = [(lo, hi) for lo, hi in next_spans if hi > lo]
    return spans


def split_folds(
    labeled: list[LabeledWindow],
    annotations: list[tuple[float, float]],
    k: int = 5,
    seed: int = 0,
    exclusion_s: float = 14400.0,
) -> FoldPlan:
    """Round-robin partition of seizures into test folds after a seeded shuffle.

    Training keeps every non-excluded window whose extent stays clear of
    [onset - exclusion, offset + exclusion] around each of the fold's test
    seizures; interictal windows outside those zones are shared across folds.
    """
    n_seiz = len(annotations)
    if n_seiz == 0:
        raise DataError("cannot build folds without seizures (evaluation-only mode remains possible)")
    if k < 1:
        raise DataError(f"fold count must be >= 1, got {k}")
    k_eff = min(k, n_seiz)
    if k_eff < k:
        log.warning("only %d seizures: reducing folds from %d to %d", n_seiz, k, k_eff)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_seiz)
    starts = np.array([w.start_s for w in labeled])
    ends = starts + np.array([w.duration_s for w in labeled])
    eligible = np.array([w.label != EXCLUDED for w in labeled])

    folds = []
    for j in range(k_eff):
        test = sorted(int(s) for s in order[j::k_eff])
        in_zone = np.zeros(len(labeled), dtype=bool)
        for s in test:
            onset, offset = annotations[s]
            zone_lo, zone_hi = onset - exclusion_s, offset + exclusion_s
            in_zone |= (starts < zone_hi) & (ends > zone_lo)
        train_ids = np.flatnonzero(eligible & ~in_zone)
        excluded_ids = np.flatnonzero(eligible & in_zone)
        folds.append(Fold(index=j, test_seizures=test, train_ids=train_ids, excluded_ids=excluded_ids))
    return FoldPlan(k=k_eff, folds=folds)
