"""Losses, the RAdam optimizer and the early-stopped training loop."""
from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import LabeledWindow
from .model import Model
from .nn.functional import check_finite
from .nn.tensor import NdArray, NonFiniteError, Tape, record

log = logging.getLogger(__name__)

CLAMP = 1e-7


# --------------------------------------------------------------------- losses

def _as_array(x, like: NdArray) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, NdArray) else x, dtype=like.dtype)


def cross_entropy(y, probs: NdArray, class_axis: int = -1) -> NdArray:
    """Mean over time steps of -sum_c y_c log p_c, with p clamped to [1e-7, 1-1e-7].

    The gradient is taken at the clamped probabilities and passed straight
    through the clamp.
    """
    y = _as_array(y, probs)
    if y.shape != probs.shape:
        raise ValueError(f"cross_entropy: target shape {y.shape} != prediction shape {probs.shape}")
    if not np.allclose(probs.data.sum(axis=class_axis), 1.0, atol=1e-4):
        raise ValueError("cross_entropy: probability rows must sum to 1")
    p = np.clip(probs.data, CLAMP, 1 - CLAMP)
    n = probs.size // probs.shape[class_axis]
    loss = -(y * np.log(p)).sum() / n
    check_finite(np.asarray(loss), "cross_entropy")
    return record(np.asarray(loss, dtype=probs.dtype), (probs,), lambda g: (-g * y / (p * n),))


def bce(y, probs: NdArray) -> NdArray:
    """Mean binary cross-entropy over all elements, clamped like :func:`cross_entropy`."""
    y = _as_array(y, probs)
    if y.shape != probs.shape:
        raise ValueError(f"bce: target shape {y.shape} != prediction shape {probs.shape}")
    if probs.data.min() < -1e-6 or probs.data.max() > 1 + 1e-6:
        raise ValueError("bce: probabilities outside [0, 1]")
    p = np.clip(probs.data, CLAMP, 1 - CLAMP)
    n = probs.size
    loss = -(y * np.log(p) + (1 - y) * np.log1p(-p)).sum() / n
    check_finite(np.asarray(loss), "bce")
    return record(np.asarray(loss, dtype=probs.dtype), (probs,),
                  lambda g: (g * (p - y) / (p * (1 - p) * n),))


# ------------------------------------------------------------------ optimizer

@dataclass
class RAdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class RAdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    skipped: int = 0


def radam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: RAdamState,
               t: int, cfg: RAdamConfig) -> Sequence[np.ndarray]:
    """One rectified-Adam update of ``params`` in place; ``t`` counts from 1."""
    if t < 1:
        raise ValueError("step counter t starts at 1")
    if not all(np.isfinite(g).all() for g in grads):
        state.skipped += 1
        warnings.warn(f"non-finite gradient at step {t}; update skipped", RuntimeWarning, stacklevel=2)
        return params
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    b1, b2 = cfg.beta1, cfg.beta2
    rho_inf = 2.0 / (1.0 - b2) - 1.0
    b2t = b2 ** t
    rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t)
    bias1 = 1.0 - b1 ** t
    if rho_t > 4.0:
        rect = math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
        step = cfg.lr * rect * math.sqrt(1.0 - b2t) / bias1
    else:
        rect, step = None, cfg.lr / bias1
    decay = 1.0 - cfg.lr * cfg.weight_decay
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if cfg.weight_decay:
            p *= decay
        if rect is not None:
            p -= (step * m / (np.sqrt(v) + cfg.eps)).astype(p.dtype)
        else:
            p -= (step * m).astype(p.dtype)
    return params


class RAdam:
    def __init__(self, params, cfg: RAdamConfig):
        self.params = list(params)
        self.cfg = cfg
        self.state = RAdamState()
        self.t = 0

    def step(self) -> None:
        self.t += 1
        radam_step([p.data for p in self.params], [p.grad for p in self.params], self.state, self.t, self.cfg)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------- train loop

@dataclass
class TrainConfig:
    batch_size: int = 256
    lr: float = 1e-4
    weight_decay: float = 2e-5
    dropout: float = 0.1
    max_epochs: int = 100
    early_stop_patience: int = 12
    seed: int = 0
    loss: str = "bce"
    val_fraction: float = 0.2
    eval_batch_size: int = 64

    def validate(self) -> None:
        if self.batch_size < 1 or self.early_stop_patience < 1:
            raise ValueError("batch_size and early_stop_patience must be >= 1")
        if self.loss not in ("bce", "ce"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = -1
    diverged: bool = False

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epoch", "train_loss", "val_loss", "seconds"))
            for i, (tr, va, s) in enumerate(zip(self.train_loss, self.val_loss, self.seconds)):
                w.writerow((i + 1, repr(tr), repr(va), f"{s:.3f}"))


class EarlyStopping:
    """Tracks the best validation loss; "no improvement" means loss >= best - tol."""

    def __init__(self, patience: int, tol: float = 1e-6):
        self.patience = patience
        self.tol = tol
        self.best = math.inf
        self.best_epoch = -1
        self.bad = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record one epoch; returns True when it is the new best."""
        if loss < self.best - self.tol:
            self.best, self.best_epoch, self.bad = loss, epoch, 0
            return True
        self.bad += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad >= self.patience


class DivergenceError(NonFiniteError):
    def __init__(self, msg, model, history):
        super().__init__(msg)
        self.model = model
        self.history = history


def stack_windows(windows: Sequence[LabeledWindow]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([w.x for w in windows]).astype(np.float32)
    y = np.stack([np.asarray(w.y) for w in windows])
    return x, y


def _loss(model: Model, x, y, cfg: TrainConfig, train: bool, rng) -> NdArray:
    p = model(x, train=train, rng=rng)
    if cfg.loss == "bce":
        return bce(y.astype(np.float32), p)
    c = model.cfg.num_classes
    if model.cfg.head == "timestep":
        onehot = np.moveaxis(np.eye(c, dtype=np.float32)[y], -1, 1)  # (B, C, T)
        return cross_entropy(onehot, p, class_axis=1)
    return cross_entropy(np.eye(c, dtype=np.float32)[y], p, class_axis=-1)


def evaluate_loss(model: Model, x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> float:
    total, n = 0.0, len(x)
    for i in range(0, n, cfg.eval_batch_size):
        xb, yb = x[i:i + cfg.eval_batch_size], y[i:i + cfg.eval_batch_size]
        total += float(_loss(model, xb, yb, cfg, False, None).item()) * len(xb)
    return total / n


def train(model: Model, train_set: Sequence[LabeledWindow], val_set: Sequence[LabeledWindow],
          cfg: TrainConfig) -> tuple[Model, TrainHistory]:
    """Mini-batch RAdam with per-epoch validation; restores the best epoch's weights."""
    cfg.validate()
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be non-empty")
    xs, ys = stack_windows(train_set)
    xv, yv = stack_windows(val_set)
    rng = np.random.default_rng(cfg.seed)
    model.dropout_rate = cfg.dropout
    opt = RAdam(model.parameters(), RAdamConfig(lr=cfg.lr, weight_decay=cfg.weight_decay))
    stopper = EarlyStopping(cfg.early_stop_patience)
    hist = TrainHistory()
    best = model.snapshot()

    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(xs))
        run, seen = 0.0, 0
        try:
            for i in range(0, len(order), cfg.batch_size):
                idx = order[i:i + cfg.batch_size]
                with Tape() as tape:
                    loss = _loss(model, xs[idx], ys[idx], cfg, True, rng)
                tape.backward(loss)
                opt.step()
                opt.zero_grad()
                run += loss.item() * len(idx)
                seen += len(idx)
            val = evaluate_loss(model, xv, yv, cfg)
            if not math.isfinite(val):
                raise NonFiniteError("validation loss is not finite")
        except NonFiniteError as exc:
            model.restore(best)
            hist.diverged = True
            raise DivergenceError(f"training diverged in epoch {epoch + 1}: {exc}", model, hist) from exc
        hist.train_loss.append(run / seen)
        hist.val_loss.append(val)
        hist.seconds.append(time.perf_counter() - t0)
        if stopper.update(epoch, val):
            best = model.snapshot()
        hist.best_epoch = stopper.best_epoch
        log.info("epoch %d train %.4f val %.4f (%.1fs)", epoch + 1, run / seen, val, hist.seconds[-1])
        if stopper.should_stop:
            break
    model.restore(best)
    return model, hist
