"""Recording-level inference, window-score expansion and mask post-processing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Recording
from .events import EventList, events_to_mask, mask_to_events  # noqa: F401  (re-exported)
from .model import Model


@dataclass
class PostConfig:
    threshold: float = 0.8
    opening_len_s: float = 0.5
    closing_len_s: float = 0.5
    min_duration_s: float = 2.0
    morphology: bool = True
    remove_short: bool = True

    def validate(self) -> None:
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must be in (0, 1)")
        if self.opening_len_s <= 0 or self.closing_len_s <= 0:
            raise ValueError("structuring element lengths must be positive")
        if self.min_duration_s < 0:
            raise ValueError("min_duration_s must be >= 0")


@dataclass
class InferencePlan:
    window_samples: int
    stride_samples: int

    @classmethod
    def from_seconds(cls, window_s: float, fs: float, r_overlap: float = 0.0) -> "InferencePlan":
        if not 0 <= r_overlap < 1:
            raise ValueError("r_overlap must be in [0, 1)")
        w = int(round(window_s * fs))
        s = int(round((1 - r_overlap) * w))
        if s < 1:
            raise ValueError("stride rounds to zero samples")
        return cls(w, s)

    @classmethod
    def for_model(cls, model: Model, r_overlap: float = 0.0) -> "InferencePlan":
        w = model.cfg.window_samples
        s = int(round((1 - r_overlap) * w))
        if not 0 <= r_overlap < 1 or s < 1:
            raise ValueError("r_overlap must be in [0, 1)")
        return cls(w, s)

    def streaming_windows(self, n_samples: int) -> int:
        """Non-overlapping windows covering the recording, last one zero-padded."""
        return math.ceil(n_samples / self.window_samples)

    def sliding_windows(self, n_samples: int) -> int:
        """Full windows at the plan's stride (no padding)."""
        if n_samples < self.window_samples:
            return 0
        return (n_samples - self.window_samples) // self.stride_samples + 1


@dataclass
class ProbSequence:
    values: np.ndarray
    fs: float
    invocations: int = 0


def _run_windows(model: Model, windows: np.ndarray, batch_size: int) -> np.ndarray:
    outs = []
    for i in range(0, len(windows), batch_size):
        outs.append(model.forward_seq(windows[i:i + batch_size]).data)
    return np.concatenate(outs) if outs else np.zeros((0, model.cfg.window_samples), np.float32)


def predict_mask(model: Model, rec: Recording, plan: InferencePlan | None = None,
                 batch_size: int = 8) -> ProbSequence:
    """Time-step probabilities for a whole recording from back-to-back windows.

    The recording is zero-padded up to a whole number of windows; the
    flattened output is truncated back to the recording length.
    """
    plan = plan or InferencePlan.for_model(model)
    cfg = model.cfg
    if rec.samples.shape[0] != cfg.in_channels:
        raise ValueError(f"recording has {rec.samples.shape[0]} channels, model expects {cfg.in_channels}")
    if plan.window_samples != cfg.window_samples:
        raise ValueError("plan window length differs from the model's input length")
    w, L = plan.window_samples, rec.n_samples
    B = plan.streaming_windows(L)
    padded = np.zeros((cfg.in_channels, B * w), dtype=np.float32)
    padded[:, :L] = rec.samples
    windows = padded.reshape(cfg.in_channels, B, w).transpose(1, 0, 2)
    probs = _run_windows(model, np.ascontiguousarray(windows), batch_size)
    return ProbSequence(probs.reshape(-1)[:L].copy(), rec.fs, B)


def predict_window_scores(model: Model, rec: Recording, plan: InferencePlan,
                          batch_size: int = 8) -> tuple[np.ndarray, int]:
    """One score per sliding window (mean time-step probability for a timestep head)."""
    cfg = model.cfg
    n = plan.sliding_windows(rec.n_samples)
    starts = np.arange(n) * plan.stride_samples
    scores = np.empty(n, dtype=np.float32)
    for i in range(0, n, batch_size):
        batch = np.stack([rec.samples[:, s:s + plan.window_samples] for s in starts[i:i + batch_size]])
        if cfg.head == "timestep":
            scores[i:i + len(batch)] = model.forward_seq(batch).data.mean(axis=-1)
        else:
            scores[i:i + len(batch)] = model.forward_window(batch).data.reshape(len(batch), -1)[:, -1]
    return scores, n


def expand_window_preds(scores: np.ndarray, plan: InferencePlan, threshold: float,
                        n_samples: int) -> np.ndarray:
    """Turn sliding-window scores into a sample mask.

    Window ``j`` covers samples ``[j*s, j*s + w)``, so stride span
    ``[i*s, (i+1)*s)`` lies under windows ``i - w//s + 1 .. i``. Spans with a
    full complement of covering windows (``w//s - 1 <= i < n``) are set when
    the mean of those scores exceeds the threshold; the ramp-in and ramp-out
    spans at the recording edges stay 0.
    """
    w, s = plan.window_samples, plan.stride_samples
    if s < 1:
        raise ValueError("zero stride")
    mask = np.zeros(n_samples, dtype=np.int8)
    scores = np.asarray(scores, dtype=np.float64)
    k = max(1, w // s)
    n = len(scores)
    if n < k:
        return mask
    csum = np.concatenate(([0.0], np.cumsum(scores)))
    means = (csum[k:] - csum[:-k]) / k  # means[m] averages windows m .. m+k-1 -> span m+k-1
    for m in np.flatnonzero(means > threshold):
        i = m + k - 1
        mask[i * s:min(n_samples, (i + 1) * s)] = 1
    return mask


# ----------------------------------------------------------- post-processing

def threshold_mask(probs: np.ndarray, threshold) -> np.ndarray:
    """Binary: p >= threshold. Multi-class (C, T): class of highest probability among
    those at or above their own threshold, else 0."""
    p = np.asarray(probs)
    if p.ndim == 1:
        return (p >= threshold).astype(np.int8)
    tau = np.broadcast_to(np.asarray(threshold, dtype=float), (p.shape[0],))[:, None]
    hits = np.where(p >= tau, p, -np.inf)
    hits[0] = -np.inf  # class 0 is background
    best = hits.argmax(axis=0)
    return np.where(np.isfinite(hits.max(axis=0)), best, 0).astype(np.int8)


def _element(n: int) -> tuple[int, int]:
    """Offsets ``[-a, n-1-a]`` of a flat element of ``n`` samples."""
    a = (n - 1) // 2
    return a, n - 1 - a


def erode(mask: np.ndarray, n: int) -> np.ndarray:
    """1 where every in-range sample under the element is 1."""
    m = np.asarray(mask).astype(bool)
    a, b = _element(n)
    L = m.size
    c = np.concatenate(([0], np.cumsum(m)))
    idx = np.arange(L)
    lo, hi = np.maximum(idx - a, 0), np.minimum(idx + b, L - 1)
    return (c[hi + 1] - c[lo]) == (hi - lo + 1)


def dilate(mask: np.ndarray, n: int) -> np.ndarray:
    """1 where some sample ``q - offset`` of the element is 1."""
    m = np.asarray(mask).astype(bool)
    a, b = _element(n)
    L = m.size
    c = np.concatenate(([0], np.cumsum(m)))
    idx = np.arange(L)
    lo, hi = np.maximum(idx - b, 0), np.minimum(idx + a, L - 1)
    return (c[hi + 1] - c[lo]) > 0


def opening(mask: np.ndarray, n: int) -> np.ndarray:
    return dilate(erode(mask, n), n).astype(np.int8)


def closing(mask: np.ndarray, n: int) -> np.ndarray:
    return erode(dilate(mask, n), n).astype(np.int8)


def morph_clean(mask: np.ndarray, cfg: PostConfig, fs: float) -> np.ndarray:
    n_open = max(1, int(round(cfg.opening_len_s * fs)))
    n_close = max(1, int(round(cfg.closing_len_s * fs)))
    return closing(opening(mask, n_open), n_close)


def remove_short_events(mask: np.ndarray, cfg: PostConfig, fs: float) -> np.ndarray:
    """Zero every run of ones shorter than round(min_duration_s * fs) samples."""
    m = np.asarray(mask).astype(np.int8).copy()
    min_len = int(round(cfg.min_duration_s * fs))
    if min_len <= 1:
        return m
    edges = np.diff(np.concatenate(([0], (m > 0).astype(np.int8), [0])))
    for on, off in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
        if off - on < min_len:
            m[on:off] = 0
    return m


def postprocess(probs: np.ndarray, cfg: PostConfig, fs: float) -> np.ndarray:
    cfg.validate()
    mask = threshold_mask(probs, cfg.threshold)
    if cfg.morphology:
        mask = morph_clean(mask, cfg, fs)
    if cfg.remove_short:
        mask = remove_short_events(mask, cfg, fs)
    return mask


def annotate(model: Model, rec: Recording, cfg: PostConfig, batch_size: int = 8
             ) -> tuple[EventList, ProbSequence]:
    """Full time-step pipeline: probabilities -> cleaned mask -> events."""
    probs = predict_mask(model, rec, batch_size=batch_size)
    return mask_to_events(postprocess(probs.values, cfg, rec.fs), rec.fs), probs
