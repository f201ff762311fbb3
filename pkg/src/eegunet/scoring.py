"""Sample-scale (1 Hz) and event-scale scoring, AUROC and window-task metrics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .events import EventList


@dataclass
class ToleranceConfig:
    pre_ictal_s: float = 30.0
    post_ictal_s: float = 60.0
    merge_gap_s: float = 90.0
    max_event_s: float = 300.0


@dataclass
class ScoreReport:
    scale: str
    tp: int = 0
    fp: int = 0
    fn: int = 0
    total_seconds: float = 0.0

    @property
    def sensitivity(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def sensitivity_undefined(self) -> bool:
        return self.tp + self.fn == 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def f1(self) -> float:
        p, s = self.precision, self.sensitivity
        return 2 * p * s / (p + s) if p + s > 0 else 0.0

    @property
    def fp_per_day(self) -> float:
        return self.fp * 86400.0 / self.total_seconds if self.total_seconds else 0.0

    def __add__(self, other: "ScoreReport") -> "ScoreReport":
        if other.scale != self.scale:
            raise ValueError("cannot add reports of different scales")
        return ScoreReport(self.scale, self.tp + other.tp, self.fp + other.fp, self.fn + other.fn,
                           self.total_seconds + other.total_seconds)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(f1=self.f1, sensitivity=self.sensitivity, precision=self.precision,
                 fp_per_day=self.fp_per_day, sensitivity_undefined=self.sensitivity_undefined)
        return d


# ------------------------------------------------------------------ 1 Hz scale

def mask_to_1hz(mask: np.ndarray, fs: float) -> np.ndarray:
    """Second s is an event when strictly more than half of its samples are."""
    m = np.asarray(mask).astype(bool)
    n = m.size
    bounds = np.round(np.arange(0, math.ceil(n / fs) + 1) * fs).astype(int)
    bounds[-1] = n
    c = np.concatenate(([0], np.cumsum(m)))
    hits = c[bounds[1:]] - c[bounds[:-1]]
    sizes = bounds[1:] - bounds[:-1]
    return (2 * hits > sizes).astype(np.int8)


def events_to_1hz(events: EventList, duration_s: float) -> np.ndarray:
    """1 Hz labels from event intervals using the same >50% rule."""
    n = math.ceil(duration_s - 1e-9)
    secs = np.arange(n, dtype=float)
    width = np.minimum(secs + 1, duration_s) - secs
    cover = np.zeros(n)
    for s, e in events:
        cover += np.clip(np.minimum(secs + 1, e) - np.maximum(secs, s), 0, None)
    return (2 * cover > width + 1e-12).astype(np.int8)


def sample_score(ref: np.ndarray, hyp: np.ndarray) -> ScoreReport:
    ref, hyp = np.asarray(ref).astype(bool), np.asarray(hyp).astype(bool)
    if ref.shape != hyp.shape:
        raise ValueError(f"reference length {ref.shape} != hypothesis length {hyp.shape}")
    return ScoreReport("sample", int(np.sum(ref & hyp)), int(np.sum(~ref & hyp)), int(np.sum(ref & ~hyp)),
                       float(ref.size))


# ---------------------------------------------------------------- event scale

def canonicalize_events(events: EventList, tol: ToleranceConfig = ToleranceConfig()) -> EventList:
    """Merge events closer than ``merge_gap_s``, then split those longer than ``max_event_s``."""
    merged: list[list[float]] = []
    for s, e in events:
        if merged and s - merged[-1][1] < tol.merge_gap_s:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    starts, ends = [], []
    for s, e in merged:
        n_chunks = math.ceil((e - s) / tol.max_event_s - 1e-12) if e - s > tol.max_event_s else 1
        for k in range(n_chunks):
            starts.append(s + k * tol.max_event_s)
            ends.append(e if k == n_chunks - 1 else s + (k + 1) * tol.max_event_s)
    return EventList(tuple(starts), tuple(ends))


def event_score(ref: EventList, hyp: EventList, tol: ToleranceConfig = ToleranceConfig(),
                total_seconds: float = 0.0) -> ScoreReport:
    """Any-overlap matching against tolerance-extended references.

    A reference with at least one overlapping hypothesis is one TP; other
    references are FN; hypotheses touching no extended reference are FP.
    Both lists are expected to be canonicalized already.
    """
    r_lo = np.asarray(ref.starts, dtype=float) - tol.pre_ictal_s
    r_hi = np.asarray(ref.ends, dtype=float) + tol.post_ictal_s
    h_lo = np.asarray(hyp.starts, dtype=float)
    h_hi = np.asarray(hyp.ends, dtype=float)
    # extended references may overlap each other, so their ends are not sorted;
    # hypotheses are sorted and disjoint, so both of their bounds are
    tp = 0
    for lo, hi in zip(r_lo, r_hi):
        # hypotheses with start < hi, among them any with end > lo
        k = np.searchsorted(h_lo, hi, side="left")
        if k and h_hi[:k].max() > lo:
            tp += 1
    hit = np.zeros(len(h_lo), dtype=bool)
    order = np.argsort(r_lo, kind="stable")
    rl, rh = r_lo[order], np.maximum.accumulate(r_hi[order]) if len(order) else r_hi
    for j, (lo, hi) in enumerate(zip(h_lo, h_hi)):
        k = np.searchsorted(rl, hi, side="left")
        hit[j] = bool(k) and rh[k - 1] > lo
    fp = int((~hit).sum())
    return ScoreReport("event", tp, fp, len(r_lo) - tp, float(total_seconds))


# ---------------------------------------------------------------------- AUROC

def probs_to_1hz(probs: np.ndarray, fs: float) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    n = p.size
    bounds = np.round(np.arange(0, math.ceil(n / fs) + 1) * fs).astype(int)
    bounds[-1] = n
    c = np.concatenate(([0.0], np.cumsum(p)))
    return (c[bounds[1:]] - c[bounds[:-1]]) / (bounds[1:] - bounds[:-1])


def auroc(ref: np.ndarray, scores: np.ndarray) -> float | None:
    """Mann-Whitney AUROC with midranks; None when only one class is present."""
    ref = np.asarray(ref).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    if ref.shape != scores.shape:
        raise ValueError("reference and scores differ in length")
    n_pos, n_neg = int(ref.sum()), int((~ref).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    u = ranks[ref].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


# -------------------------------------------------------------- window tasks

def window_metrics(y_true, y_pred, num_classes: int) -> dict[str, float]:
    y_true, y_pred = np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)
    if y_true.size == 0:
        raise ValueError("window_metrics: empty input")
    if y_true.shape != y_pred.shape:
        raise ValueError("window_metrics: length mismatch")
    if min(y_true.min(), y_pred.min()) < 0 or max(y_true.max(), y_pred.max()) >= num_classes:
        raise ValueError("window_metrics: labels out of range")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    tp = np.diag(cm)
    present = support > 0
    recall = np.divide(tp, support, out=np.zeros(num_classes), where=present)
    prec = np.divide(tp, predicted, out=np.zeros(num_classes), where=predicted > 0)
    f1 = np.divide(2 * prec * recall, prec + recall, out=np.zeros(num_classes), where=prec + recall > 0)
    n = cm.sum()
    p_o = tp.sum() / n
    p_e = float((support * predicted).sum()) / n ** 2
    kappa = (p_o - p_e) / (1 - p_e) if p_e < 1 else 1.0 if p_o == 1 else 0.0
    return {
        "balanced_accuracy": float(recall[present].mean()),
        "cohen_kappa": float(kappa),
        "weighted_f1": float((f1 * support).sum() / support.sum()),
    }
