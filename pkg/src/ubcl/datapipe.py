"""Signal conditioning and dataset assembly.

Canonical pipeline order, enforced by the assembly helpers here:
split by subject -> low-pass filter -> fit z-score on the training side ->
apply those stats everywhere -> cut sliding windows. Normalization stats
therefore depend only on training subjects.

A seed-deterministic synthetic generator provides a desk-scale task with
periodic classes (per-class sinusoid signatures) and episodic classes
(flat baseline plus a class-specific burst late in the window).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sp_signal

from .numerics import FLOAT, Rng


class DataError(ValueError):
    """Raised for malformed input data or impossible pipeline requests."""


@dataclass
class RawRecording:
    samples: np.ndarray  # [N, C]
    sample_rate_hz: float
    subject_id: str
    labels: np.ndarray  # [N]

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise DataError(f"recording samples must be [N, C], got {self.samples.shape}")
        if len(self.labels) != self.samples.shape[0]:
            raise DataError("labels length must match sample count")


@dataclass
class WindowedDataset:
    windows: np.ndarray  # [N, T, C]
    labels: np.ndarray  # [N]
    subjects: list[str]
    norm_stats: tuple[np.ndarray, np.ndarray] | None = None  # per-channel (mean, std)

    def __post_init__(self):
        if not (len(self.windows) == len(self.labels) == len(self.subjects)):
            raise DataError("windows, labels and subjects must have equal length")

    def __len__(self) -> int:
        return len(self.windows)

    def subject_set(self) -> set[str]:
        return set(self.subjects)

    def select(self, indices) -> "WindowedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return WindowedDataset(self.windows[idx], self.labels[idx],
                               [self.subjects[i] for i in idx], self.norm_stats)


@dataclass
class DataBundle:
    """Train/test pair sharing training-side normalization statistics."""
    train: WindowedDataset
    test: WindowedDataset


def butterworth_lowpass(x: np.ndarray, cutoff_hz: float, sample_rate_hz: float,
                        order: int = 4) -> np.ndarray:
    """Causal single-pass low-pass filter (Butterworth, second-order sections).

    Designed via the bilinear transform with frequency pre-warping, so the
    magnitude at `cutoff_hz` is exactly -3.01 dB.
    """
    nyquist = sample_rate_hz / 2.0
    if not 0.0 < cutoff_hz < nyquist:
        raise DataError(f"cutoff {cutoff_hz} Hz must lie in (0, Nyquist={nyquist} Hz)")
    sos = sp_signal.butter(order, cutoff_hz, btype="low", fs=sample_rate_hz, output="sos")
    return sp_signal.sosfilt(sos, x, axis=0).astype(x.dtype)


def zscore_fit(arrays: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std pooled over every sample of the given arrays.

    Zero-variance channels get std 1 so they normalize to constant zero.
    """
    if not arrays:
        raise DataError("zscore_fit needs at least one array")
    stacked = np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1, a.shape[-1])
                              for a in arrays], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    flat = std <= 0.0
    if flat.any():
        import warnings
        warnings.warn(f"constant channels {np.flatnonzero(flat).tolist()}: std floored to 1")
        std = np.where(flat, 1.0, std)
    return mean.astype(FLOAT), std.astype(FLOAT)


def zscore_apply(x: np.ndarray, stats: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    mean, std = stats
    return ((x - mean) / std).astype(FLOAT)


def sliding_windows(recording: RawRecording, window_len: int, overlap: float = 0.5):
    """50%-overlap (by default) windows with majority labels.

    stride = window_len * (1 - overlap); the window label is the majority
    per-sample label, ties resolved by the label at the window center.
    Yields (window [T, C], label, subject_id) tuples;
    count = floor((N - T) / stride) + 1.
    """
    n = recording.samples.shape[0]
    t = window_len
    if t > n:
        raise DataError(f"window length {t} exceeds recording length {n}")
    stride = int(round(t * (1.0 - overlap)))
    if stride < 1:
        raise DataError(f"overlap {overlap} yields non-positive stride")
    out = []
    for start in range(0, n - t + 1, stride):
        win = recording.samples[start : start + t]
        lab = recording.labels[start : start + t]
        counts = np.bincount(lab)
        top = counts.max()
        if (counts == top).sum() > 1:
            label = int(lab[t // 2])
        else:
            label = int(np.argmax(counts))
        out.append((win, label, recording.subject_id))
    return out


def window_count(n: int, t: int, overlap: float = 0.5) -> int:
    stride = int(round(t * (1.0 - overlap)))
    return (n - t) // stride + 1


def subject_split(dataset: WindowedDataset, test_subjects: set[str]):
    """Partition windows by subject id; the splits share no subject."""
    all_subjects = dataset.subject_set()
    test_subjects = set(test_subjects)
    unknown = test_subjects - all_subjects
    if unknown:
        raise DataError(f"unknown subject ids: {sorted(unknown)}")
    if not test_subjects or test_subjects == all_subjects:
        raise DataError("test subjects must be a non-empty proper subset of all subjects")
    in_test = np.array([s in test_subjects for s in dataset.subjects])
    return dataset.select(np.flatnonzero(~in_test)), dataset.select(np.flatnonzero(in_test))


@dataclass(frozen=True)
class CsvSchema:
    channel_cols: list[str]
    label_col: str
    subject_col: str
    rate_hz: float


def load_csv(path: str, schema: CsvSchema) -> list[RawRecording]:
    """Parse a header-rowed CSV into one recording per subject, in file order.

    Labels may be integers or strings; strings are mapped to ids by sorted
    order. Numeric parse failures raise DataError with the 1-based line
    number.
    """
    rows_by_subject: dict[str, list[tuple[list[float], str]]] = {}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        missing = [c for c in [*schema.channel_cols, schema.label_col, schema.subject_col]
                   if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        for line_no, row in enumerate(reader, start=2):
            try:
                values = [float(row[c]) for c in schema.channel_cols]
            except (TypeError, ValueError):
                raise DataError(f"{path}:{line_no}: non-numeric channel value") from None
            rows_by_subject.setdefault(row[schema.subject_col], []).append(
                (values, row[schema.label_col]))
    if not rows_by_subject:
        raise DataError(f"{path}: no data rows")

    raw_labels = {lab for rows in rows_by_subject.values() for _, lab in rows}
    try:
        label_map = {lab: int(lab) for lab in raw_labels}
    except ValueError:
        label_map = {lab: i for i, lab in enumerate(sorted(raw_labels))}

    recordings = []
    for subject, rows in rows_by_subject.items():
        samples = np.array([v for v, _ in rows], dtype=FLOAT)
        labels = np.array([label_map[lab] for _, lab in rows], dtype=np.int64)
        recordings.append(RawRecording(samples, schema.rate_hz, subject, labels))
    return recordings


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 4
    channels: int = 6
    window_len: int = 128
    samples_per_class: int = 200
    subject_count: int = 4
    episodic_classes: frozenset[int] = frozenset({2, 3})
    noise_std: float = 0.1

    def __post_init__(self):
        if self.num_classes < 2:
            raise DataError("synthetic task needs at least 2 classes")
        bad = [k for k in self.episodic_classes if not 0 <= k < self.num_classes]
        if bad:
            raise DataError(f"episodic class ids out of range: {bad}")

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes, "channels": self.channels,
            "window_len": self.window_len, "samples_per_class": self.samples_per_class,
            "subject_count": self.subject_count,
            "episodic_classes": sorted(self.episodic_classes),
            "noise_std": self.noise_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if "episodic_classes" in d:
            d["episodic_classes"] = frozenset(d["episodic_classes"])
        return cls(**d)


BURST_AMPLITUDE = 2.5
BURST_WIDTH_FRACTION = 8  # burst width = window_len // 8


def synth_generate(spec: SynthSpec, seed: int) -> WindowedDataset:
    """Seed-deterministic synthetic activity windows.

    Periodic classes get a class-specific sinusoid frequency with per-channel
    phase and amplitude signatures. Episodic classes are a flat baseline plus
    a class-specific enveloped burst starting at a random position in the
    final quarter of the window. Subjects modulate everything with their own
    amplitude factor and per-channel offsets. Exactly samples_per_class
    windows per class, dealt round-robin over subjects.
    """
    rng = Rng(seed)
    t_len, c = spec.window_len, spec.channels
    t = np.arange(t_len, dtype=np.float64)

    subj_amp = rng.uniform(0.8, 1.2, size=spec.subject_count, dtype=np.float64)
    subj_offset = rng.uniform(-0.3, 0.3, size=(spec.subject_count, c), dtype=np.float64)

    periodic = [k for k in range(spec.num_classes) if k not in spec.episodic_classes]
    episodic = sorted(spec.episodic_classes)
    freq = {k: 3.0 + 3.0 * rank for rank, k in enumerate(periodic)}
    burst_freq = {k: 1.0 + 3.0 * rank for rank, k in enumerate(episodic)}
    chan_amp = rng.uniform(0.5, 1.5, size=(spec.num_classes, c), dtype=np.float64)
    chan_phase = rng.uniform(0.0, 2.0 * np.pi, size=(spec.num_classes, c), dtype=np.float64)

    burst_w = max(4, t_len // BURST_WIDTH_FRACTION)
    windows = np.empty((spec.num_classes * spec.samples_per_class, t_len, c), dtype=FLOAT)
    labels = np.empty(len(windows), dtype=np.int64)
    subjects: list[str] = []

    row = 0
    for k in range(spec.num_classes):
        for j in range(spec.samples_per_class):
            s = j % spec.subject_count
            x = subj_offset[s] + rng.normal(size=(t_len, c), dtype=np.float64) * spec.noise_std
            if k in spec.episodic_classes:
                lo = (3 * t_len) // 4
                hi = max(lo + 1, t_len - burst_w)
                start = int(rng.integers(lo, hi))
                u = np.arange(burst_w, dtype=np.float64) / burst_w
                envelope = np.sin(np.pi * u)
                carrier = np.cos(2.0 * np.pi * burst_freq[k] * u[:, None] + chan_phase[k])
                x[start : start + burst_w] += (
                    BURST_AMPLITUDE * subj_amp[s] * chan_amp[k] * envelope[:, None] * carrier)
            else:
                phase = 2.0 * np.pi * freq[k] * t[:, None] / t_len + chan_phase[k]
                x += subj_amp[s] * chan_amp[k] * np.sin(phase)
            windows[row] = x.astype(FLOAT)
            labels[row] = k
            subjects.append(f"s{s}")
            row += 1
    return WindowedDataset(windows, labels, subjects)


def default_synth_spec() -> SynthSpec:
    return SynthSpec()


def split_and_normalize(dataset: WindowedDataset, test_subjects: set[str]) -> DataBundle:
    """Subject split, then z-score fit on the training side only."""
    train, test = subject_split(dataset, test_subjects)
    stats = zscore_fit([train.windows])
    train = WindowedDataset(zscore_apply(train.windows, stats), train.labels,
                            train.subjects, stats)
    test = WindowedDataset(zscore_apply(test.windows, stats), test.labels,
                           test.subjects, stats)
    return DataBundle(train, test)


def default_test_subjects(dataset: WindowedDataset) -> set[str]:
    """Hold out the lexicographically last quarter of subjects (at least one)."""
    subjects = sorted(dataset.subject_set())
    if len(subjects) < 2:
        raise DataError("need at least two subjects for a subject-wise split")
    n_test = max(1, len(subjects) // 4)
    return set(subjects[-n_test:])


def csv_pipeline(recordings: list[RawRecording], window_len: int,
                 test_subjects: set[str], cutoff_hz: float | None = None,
                 overlap: float = 0.5) -> DataBundle:
    """Canonical split -> filter -> normalize -> window pipeline for CSVs."""
    by_split: dict[bool, list[RawRecording]] = {False: [], True: []}
    all_subjects = {r.subject_id for r in recordings}
    unknown = set(test_subjects) - all_subjects
    if unknown:
        raise DataError(f"unknown subject ids: {sorted(unknown)}")
    if not test_subjects or set(test_subjects) == all_subjects:
        raise DataError("test subjects must be a non-empty proper subset of all subjects")
    for rec in recordings:
        samples = rec.samples
        if cutoff_hz is not None:
            samples = butterworth_lowpass(samples, cutoff_hz, rec.sample_rate_hz)
        by_split[rec.subject_id in test_subjects].append(
            RawRecording(samples, rec.sample_rate_hz, rec.subject_id, rec.labels))

    stats = zscore_fit([r.samples for r in by_split[False]])
    sets = {}
    for is_test, recs in by_split.items():
        wins, labs, subs = [], [], []
        for rec in recs:
            normed = RawRecording(zscore_apply(rec.samples, stats), rec.sample_rate_hz,
                                  rec.subject_id, rec.labels)
            for win, lab, sub in sliding_windows(normed, window_len, overlap):
                wins.append(win)
                labs.append(lab)
                subs.append(sub)
        if not wins:
            raise DataError("a split produced no windows; check window length and subjects")
        sets[is_test] = WindowedDataset(np.stack(wins), np.array(labs, dtype=np.int64),
                                        subs, stats)
    return DataBundle(sets[False], sets[True])
