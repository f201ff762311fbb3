"""Recordings, preprocessing, windowing, balanced sampling and synthetic EEG."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .events import EventList, events_to_mask

NO_ACTIVITY, FULL_ACTIVITY, PARTIAL_ACTIVITY = "no_activity", "full_activity", "partial_activity"


class DataWarning(UserWarning):
    pass


@dataclass
class Recording:
    channels: list[str]
    fs: float
    samples: np.ndarray  # (K, L), float32

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 2:
            raise ValueError("samples must be (channels, length)")
        if len(self.channels) != self.samples.shape[0]:
            raise ValueError(f"{len(self.channels)} channel names for {self.samples.shape[0]} rows")
        if not self.fs > 0:
            raise ValueError("fs must be positive")
        if self.samples.shape[1] < 1:
            raise ValueError("recording is empty")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs


def save_recording(rec: Recording, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"channels": list(rec.channels), "fs": rec.fs, "n_samples": rec.n_samples, "dtype": "f32le"}
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (d / "data.bin").write_bytes(np.ascontiguousarray(rec.samples, dtype="<f4").tobytes())


def load_recording(directory: str | Path) -> Recording:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    if meta.get("dtype") != "f32le":
        raise ValueError(f"{d}: unsupported dtype {meta.get('dtype')!r}")
    raw = np.fromfile(d / "data.bin", dtype="<f4")
    k, n = len(meta["channels"]), meta["n_samples"]
    if raw.size != k * n:
        raise ValueError(f"{d}: data.bin holds {raw.size} values, expected {k}x{n}")
    return Recording(meta["channels"], meta["fs"], raw.reshape(k, n))


def _require_finite(rec: Recording) -> None:
    if not np.isfinite(rec.samples).all():
        raise ValueError("recording contains non-finite samples")


# -------------------------------------------------------------- preprocessing

def resample(rec: Recording, target_fs: float) -> Recording:
    """Fourier-method resampling (spectrum zero-pad/truncate)."""
    if not target_fs > 0:
        raise ValueError("target_fs must be positive")
    _require_finite(rec)
    if target_fs == rec.fs:
        return Recording(list(rec.channels), rec.fs, rec.samples.copy())
    n = int(round(rec.n_samples * target_fs / rec.fs))
    out = signal.resample(rec.samples.astype(np.float64), n, axis=1)
    return Recording(list(rec.channels), target_fs, out)


def filter_bank(rec: Recording, band: tuple[float, float] | None = (0.5, 100.0),
                notches: tuple[float, ...] = (1.0, 60.0), order: int = 4, q: float = 30.0) -> Recording:
    """Zero-phase Butterworth band-pass followed by notch filters."""
    nyq = rec.fs / 2
    sections = []
    if band is not None:
        lo, hi = band
        if not 0 < lo < hi < nyq:
            raise ValueError(f"band {band} must satisfy 0 < lo < hi < {nyq}")
        sections.append(signal.butter(order, [lo, hi], btype="bandpass", fs=rec.fs, output="sos"))
    for f0 in notches:
        if not 0 < f0 < nyq:
            raise ValueError(f"notch at {f0} Hz outside (0, {nyq})")
        b, a = signal.iirnotch(f0, q, fs=rec.fs)
        sections.append(signal.tf2sos(b, a))
    if not sections:
        return Recording(list(rec.channels), rec.fs, rec.samples.copy())
    sos = np.vstack(sections)
    out = signal.sosfiltfilt(sos, rec.samples.astype(np.float64), axis=1)
    return Recording(list(rec.channels), rec.fs, out)


def normalize_channels(rec: Recording, eps: float = 1e-8) -> Recording:
    """Per-channel z-score using the sample standard deviation."""
    if rec.n_samples < 2:
        raise ValueError("normalization needs at least 2 samples")
    x = rec.samples.astype(np.float64)
    mean = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, ddof=1, keepdims=True)
    flat = sd[:, 0] < eps
    if flat.any():
        names = [c for c, f in zip(rec.channels, flat) if f]
        warnings.warn(f"zero-variance channels left at zero: {names}", DataWarning, stacklevel=2)
    return Recording(list(rec.channels), rec.fs, (x - mean) / np.maximum(sd, eps))


@dataclass
class PreprocessSpec:
    target_fs: float | None = None
    band: list | None = None
    notches: list = field(default_factory=list)
    normalize: bool = True


SEIZURE_PREPROCESS = PreprocessSpec(target_fs=256.0, band=[0.5, 100.0], notches=[1.0, 60.0])


def preprocess(rec: Recording, spec: PreprocessSpec) -> Recording:
    if spec.target_fs is not None:
        rec = resample(rec, spec.target_fs)
    if spec.normalize:
        rec = normalize_channels(rec)
    if spec.band is not None or spec.notches:
        rec = filter_bank(rec, tuple(spec.band) if spec.band else None, tuple(spec.notches))
    return rec


# ------------------------------------------------------------------ windowing

@dataclass
class DatasetSpec:
    window_s: float = 60.0
    r_overlap: float = 0.75
    alpha: float = 0.54
    beta: float = 1.0
    seed: int = 0

    def window_samples(self, fs: float) -> int:
        return int(round(self.window_s * fs))

    def stride_samples(self, fs: float) -> int:
        if not 0 <= self.r_overlap < 1:
            raise ValueError("r_overlap must be in [0, 1)")
        s = int(round((1 - self.r_overlap) * self.window_s * fs))
        if s < 1:
            raise ValueError("window stride rounds to zero samples")
        return s


@dataclass
class LabeledWindow:
    x: np.ndarray  # (K, T)
    y: np.ndarray  # (T,) time-step labels
    category: str
    source: tuple = ()  # (recording id, start sample)


def categorize(labels: np.ndarray) -> str:
    pos = np.count_nonzero(labels)
    if pos == 0:
        return NO_ACTIVITY
    if pos == labels.size:
        return FULL_ACTIVITY
    return PARTIAL_ACTIVITY


def segment(rec: Recording, mask: np.ndarray, spec: DatasetSpec, rec_id: str = "") -> list[LabeledWindow]:
    """Cut a recording into labeled windows; a trailing partial window is dropped."""
    mask = np.asarray(mask)
    if mask.shape != (rec.n_samples,):
        raise ValueError(f"mask length {mask.shape} != recording length {rec.n_samples}")
    T = spec.window_samples(rec.fs)
    stride = spec.stride_samples(rec.fs)
    if T > rec.n_samples:
        warnings.warn(f"recording shorter ({rec.n_samples}) than one window ({T})", DataWarning, stacklevel=2)
        return []
    out = []
    for start in range(0, rec.n_samples - T + 1, stride):
        y = mask[start:start + T].astype(np.int8)
        out.append(LabeledWindow(rec.samples[:, start:start + T], y, categorize(y), (rec_id, start)))
    return out


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_balanced_dataset(windows: list[LabeledWindow], spec: DatasetSpec) -> list[LabeledWindow]:
    """All partial windows plus sampled full/background subsets, shuffled by seed."""
    rng = np.random.default_rng(spec.seed)
    groups = {c: [w for w in windows if w.category == c]
              for c in (PARTIAL_ACTIVITY, FULL_ACTIVITY, NO_ACTIVITY)}
    partial, full, bckg = groups[PARTIAL_ACTIVITY], groups[FULL_ACTIVITY], groups[NO_ACTIVITY]

    def pick(pool, n, what):
        if n > len(pool):
            warnings.warn(f"requested {n} {what} windows, only {len(pool)} available", DataWarning,
                          stacklevel=3)
            n = len(pool)
        idx = np.sort(rng.choice(len(pool), size=n, replace=False)) if n else []
        return [pool[i] for i in idx]

    if partial:
        chosen = partial + pick(full, _round_half_up(spec.alpha * len(partial)), "full-activity") \
            + pick(bckg, _round_half_up(spec.beta * len(partial)), "no-activity")
    else:
        warnings.warn("no partial-activity windows; falling back to balanced full/background sampling",
                      DataWarning, stacklevel=2)
        n = min(len(full), len(bckg))
        chosen = pick(full, n, "full-activity") + pick(bckg, n, "no-activity")
    order = rng.permutation(len(chosen))
    return [chosen[i] for i in order]


# ------------------------------------------------------------------ synthetic

@dataclass
class SynthSpec:
    channels: int = 2
    fs: float = 64.0
    duration_s: float = 600.0
    event_rate_per_hour: float = 30.0
    event_duration_s: list = field(default_factory=lambda: [10.0, 40.0])
    event_freq_hz: float = 4.0
    amplitude_ratio: float = 3.0
    noise_slope: float = 1.0
    min_gap_s: float = 20.0
    seed: int = 0


def pink_noise(rng: np.random.Generator, channels: int, n: int, slope: float) -> np.ndarray:
    """Unit-variance noise with power spectrum proportional to 1/f**slope."""
    spec = np.fft.rfft(rng.standard_normal((channels, n)), axis=1)
    f = np.fft.rfftfreq(n)
    scale = np.zeros_like(f)
    scale[1:] = f[1:] ** (-slope / 2)
    x = np.fft.irfft(spec * scale, n=n, axis=1)
    return x / x.std(axis=1, keepdims=True)


def _place_events(rng, spec: SynthSpec) -> list[tuple[float, float]]:
    n = rng.poisson(spec.event_rate_per_hour * spec.duration_s / 3600.0)
    lo, hi = spec.event_duration_s
    durs = np.round(rng.uniform(lo, hi, size=n), 2)
    while n and durs.sum() + (n + 1) * spec.min_gap_s > spec.duration_s:
        n -= 1
        durs = durs[:n]
    if n == 0:
        return []
    free = spec.duration_s - durs.sum() - (n + 1) * spec.min_gap_s
    slack = np.sort(rng.uniform(0, free, size=n))
    events, t = [], spec.min_gap_s
    for u, d in zip(slack, durs):
        onset = math.floor((t + u) * 100) / 100
        events.append((onset, float(d)))
        t += d + spec.min_gap_s
    return events


def generate_synthetic(spec: SynthSpec) -> tuple[Recording, EventList]:
    """1/f background with amplitude-modulated oscillatory events on every channel."""
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration_s * spec.fs))
    x = pink_noise(rng, spec.channels, n, spec.noise_slope)
    events = EventList.from_pairs(_place_events(rng, spec))
    t = np.arange(n) / spec.fs
    gains = rng.uniform(0.8, 1.2, size=spec.channels)
    phases = rng.uniform(0, 2 * np.pi, size=spec.channels)
    for s, e in events:
        a, b = int(round(s * spec.fs)), int(round(e * spec.fs))
        tt = t[a:b] - t[a]
        env = signal.windows.tukey(b - a, alpha=min(1.0, 2.0 * spec.fs / max(b - a, 1)))
        env = env * (1 + 0.25 * np.sin(2 * np.pi * 0.2 * tt))
        osc = np.sin(2 * np.pi * spec.event_freq_hz * tt[None, :] + phases[:, None])
        x[:, a:b] += spec.amplitude_ratio * gains[:, None] * env[None, :] * osc
    rec = Recording([f"ch{i}" for i in range(spec.channels)], spec.fs, x)
    return rec, events


def recording_mask(rec: Recording, events: EventList) -> np.ndarray:
    return events_to_mask(events, rec.fs, rec.n_samples)
