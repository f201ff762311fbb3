"""Event intervals, mask conversion and the annotation TSV format."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

TSV_HEADER = ("onset", "duration", "eventType")


@dataclass(frozen=True)
class EventList:
    """Sorted, disjoint ``[start, end)`` intervals in seconds.

    Intervals are stored by their endpoints so that merging and splitting are
    exact; ``onsets``/``durations`` are derived views.
    """

    starts: tuple[float, ...] = ()
    ends: tuple[float, ...] = ()
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if len(self.starts) != len(self.ends):
            raise ValueError("starts and ends differ in length")
        if not self.labels:
            object.__setattr__(self, "labels", ("sz",) * len(self.starts))
        for i, (s, e) in enumerate(zip(self.starts, self.ends)):
            if not e > s:
                raise ValueError(f"event {i} has non-positive duration ({s}, {e})")
            if i and s < self.ends[i - 1]:
                raise ValueError(f"event {i} overlaps or is out of order")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]], label: str = "sz") -> "EventList":
        """Build from (onset, duration) pairs, sorting by onset."""
        pairs = sorted((float(o), float(d)) for o, d in pairs)
        return cls(tuple(o for o, _ in pairs), tuple(o + d for o, d in pairs), (label,) * len(pairs))

    @property
    def onsets(self) -> np.ndarray:
        return np.asarray(self.starts, dtype=float)

    @property
    def durations(self) -> np.ndarray:
        return np.asarray(self.ends, dtype=float) - np.asarray(self.starts, dtype=float)

    def pairs(self) -> list[tuple[float, float]]:
        return [(s, e - s) for s, e in zip(self.starts, self.ends)]

    def __len__(self) -> int:
        return len(self.starts)

    def __iter__(self):
        return iter(zip(self.starts, self.ends))


def mask_to_events(mask: np.ndarray, fs: float, label: str = "sz") -> EventList:
    """Maximal runs of nonzero samples become events."""
    m = np.asarray(mask).astype(bool).astype(np.int8)
    edges = np.diff(np.concatenate(([0], m, [0])))
    on = np.flatnonzero(edges == 1)
    off = np.flatnonzero(edges == -1)
    return EventList(tuple(on / fs), tuple(off / fs), (label,) * len(on))


def events_to_mask(events: EventList, fs: float, n_samples: int) -> np.ndarray:
    mask = np.zeros(n_samples, dtype=np.int8)
    clipped = False
    for s, e in events:
        a, b = int(round(s * fs)), int(round(e * fs))
        if b > n_samples or a < 0:
            clipped = True
        mask[max(a, 0):min(b, n_samples)] = 1
    if clipped:
        warnings.warn("events extend beyond the recording and were clipped", stacklevel=2)
    return mask


def write_tsv(events: EventList, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(TSV_HEADER)
        for (o, d), lab in zip(events.pairs(), events.labels):
            w.writerow((f"{o:.2f}", f"{d:.2f}", lab))


def read_tsv(path: str | Path, event_type: str | None = "sz") -> EventList:
    """Read an annotation TSV; rows of other types (e.g. ``bckg``) are skipped."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or tuple(rows[0]) != TSV_HEADER:
        raise ValueError(f"{path}: expected header {TSV_HEADER}")
    pairs = [(float(o), float(d)) for o, d, t in rows[1:] if event_type is None or t == event_type]
    return EventList.from_pairs(pairs, label=event_type or "sz")
