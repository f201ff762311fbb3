import math
import warnings

import numpy as np
import pytest

import eegunet.train as train_mod
from eegunet.data import DatasetSpec, LabeledWindow, SynthSpec, build_balanced_dataset, generate_synthetic
from eegunet.data import normalize_channels, recording_mask, segment
from eegunet.model import build_model, desk_config
from eegunet.nn import NdArray, Param, Tape
from eegunet.train import (
    DivergenceError, EarlyStopping, RAdam, RAdamConfig, RAdamState, TrainConfig, bce, cross_entropy,
    radam_step, train,
)


def arr(x):
    return NdArray(np.asarray(x, dtype=np.float64))


# -- losses -----------------------------------------------------------------

def test_cross_entropy_examples():
    y = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert cross_entropy(y, arr(y)).item() == pytest.approx(-math.log(1 - 1e-7), rel=1e-3)
    assert cross_entropy(np.eye(4), arr(np.full((4, 4), 0.25))).item() == pytest.approx(math.log(4))
    got = cross_entropy(y, arr([[0.9, 0.1], [0.2, 0.8]])).item()
    assert got == pytest.approx(-(math.log(0.9) + math.log(0.8)) / 2)
    assert got == pytest.approx(0.1643, abs=1e-4)


def test_cross_entropy_class_axis():
    y = np.moveaxis(np.eye(3)[[0, 1, 2, 2]], -1, 0)[None]  # (1, C, T)
    p = np.full((1, 3, 4), 1 / 3)
    assert cross_entropy(y, arr(p), class_axis=1).item() == pytest.approx(math.log(3))


def test_cross_entropy_rejects_bad_input():
    with pytest.raises(ValueError):
        cross_entropy(np.eye(2), arr(np.full((2, 3), 1 / 3)))
    with pytest.raises(ValueError):
        cross_entropy(np.eye(2), arr([[0.7, 0.7], [0.5, 0.5]]))


def test_bce_examples():
    assert bce([0.0, 1.0], arr([0.0, 1.0])).item() == pytest.approx(0, abs=1e-6)
    assert bce([0, 1, 1], arr([0.5, 0.5, 0.5])).item() == pytest.approx(math.log(2))
    p = Param(np.array([0.5]))
    with Tape() as tape:
        loss = bce([1.0], p)
    tape.backward(loss)
    assert p.grad[0] == pytest.approx(-2.0)


def test_losses_nonnegative_at_extremes():
    y = np.array([0.0, 1.0, 1.0, 0.0])
    assert bce(y, arr([1.0, 0.0, 1.0, 0.0])).item() >= 0
    assert math.isfinite(bce(y, arr([1.0, 0.0, 1.0, 0.0])).item())


def test_clamped_gradient_is_finite():
    p = Param(np.array([0.0, 1.0]))
    with Tape() as tape:
        loss = bce([1.0, 0.0], p)
    tape.backward(loss)
    assert np.isfinite(p.grad).all() and p.grad[0] < 0 < p.grad[1]


def test_bce_rejects_out_of_range():
    with pytest.raises(ValueError):
        bce([1.0], arr([1.5]))


# -- RAdam ------------------------------------------------------------------

def run_radam(grad_fn, w0, steps, cfg):
    w = np.array([w0], dtype=np.float64)
    state = RAdamState()
    path = [w[0]]
    for t in range(1, steps + 1):
        radam_step([w], [grad_fn(w)], state, t, cfg)
        path.append(w[0])
    return np.array(path)


def test_radam_quadratic_bowl():
    path = run_radam(lambda w: 2 * w, 1.0, 200, RAdamConfig(lr=0.1))
    assert abs(path[-1]) < 1e-2


def test_radam_constant_gradient_descends():
    path = run_radam(lambda w: np.ones_like(w), 0.0, 50, RAdamConfig(lr=0.01))
    assert np.all(np.diff(path) < 0)


def test_radam_zero_gradient_leaves_params():
    w = np.array([0.3, -1.7])
    before = w.tobytes()
    state = RAdamState()
    for t in range(1, 11):
        radam_step([w], [np.zeros(2)], state, t, RAdamConfig(lr=0.1))
    assert w.tobytes() == before


def test_radam_weight_decay_shrinks_exactly():
    w = np.array([2.0, -4.0])
    cfg = RAdamConfig(lr=0.01, weight_decay=0.5)
    state = RAdamState()
    for t in range(1, 8):
        prev = w.copy()
        radam_step([w], [np.zeros(2)], state, t, cfg)
        np.testing.assert_array_equal(w, prev * (1 - cfg.lr * cfg.weight_decay))


def test_radam_early_steps_are_unadapted():
    # rho_t <= 4 for the first steps: step = lr * m_hat = lr * g
    w = np.array([0.0])
    radam_step([w], [np.array([3.0])], RAdamState(), 1, RAdamConfig(lr=0.1))
    assert w[0] == pytest.approx(-0.3)


def test_radam_skips_nonfinite():
    w = np.array([1.0])
    state = RAdamState()
    with pytest.warns(RuntimeWarning):
        radam_step([w], [np.array([np.nan])], state, 1, RAdamConfig())
    assert w[0] == 1.0 and state.skipped == 1


def test_radam_rejects_t0():
    with pytest.raises(ValueError):
        radam_step([np.zeros(1)], [np.zeros(1)], RAdamState(), 0, RAdamConfig())


def test_radam_class_wraps_params():
    p = Param(np.array([1.0]))
    opt = RAdam([p], RAdamConfig(lr=0.1))
    for _ in range(5):
        with Tape() as tape:
            loss = p * p
            loss = loss.sum()
        tape.backward(loss)
        opt.step()
        opt.zero_grad()
    assert abs(p.data[0]) < 1.0 and opt.t == 5


# -- early stopping / loop --------------------------------------------------

def test_early_stopping_semantics():
    es = EarlyStopping(patience=2)
    assert es.update(0, 1.0)
    assert not es.update(1, 1.0 - 1e-7)  # inside tolerance
    assert not es.should_stop
    assert not es.update(2, 2.0)
    assert es.should_stop and es.best_epoch == 0


def tiny_windows(n=12, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        x = rng.standard_normal((2, 32)).astype(np.float32)
        y = np.zeros(32, dtype=np.int8)
        if i % 2:
            a = rng.integers(0, 24)
            y[a:a + 8] = 1
            x[:, a:a + 8] += 3.0
        out.append(LabeledWindow(x, y, "partial_activity"))
    return out


def tiny_model(seed=0):
    cfg = desk_config(window_samples=32, encoder_blocks=[[4, 5], [8, 3]], rescnn_kernels=[3], d_model=8,
                      num_heads=2, dim_ff=16, num_tx_layers=1, decoder_blocks=[[8, 3], [4, 3]],
                      classifier_kernel=5)
    return build_model(cfg, seed)


def test_patience_one_with_rising_val_loss(monkeypatch):
    losses = iter([0.5, 0.6, 0.7, 0.8])
    monkeypatch.setattr(train_mod, "evaluate_loss", lambda *a, **k: next(losses))
    _, hist = train(tiny_model(), tiny_windows(), tiny_windows(4, 1),
                    TrainConfig(batch_size=4, max_epochs=10, early_stop_patience=1, lr=1e-3))
    assert len(hist.val_loss) == 2 and hist.best_epoch == 0


def test_restores_best_epoch(monkeypatch):
    losses = iter([0.9, 0.4, 0.6, 0.7])
    monkeypatch.setattr(train_mod, "evaluate_loss", lambda *a, **k: next(losses))
    model = tiny_model()
    snaps = []
    orig = model.snapshot
    model.snapshot = lambda: snaps.append(orig()) or snaps[-1]
    model, hist = train(model, tiny_windows(), tiny_windows(4, 1),
                        TrainConfig(batch_size=4, max_epochs=4, early_stop_patience=2, lr=1e-2))
    assert hist.best_epoch == 1
    best = snaps[-1]  # snapshot taken at the best epoch
    for name, a, _ in model.state():
        np.testing.assert_array_equal(a, best[name])


def test_divergence_keeps_last_good(monkeypatch):
    losses = iter([0.5, float("nan")])
    monkeypatch.setattr(train_mod, "evaluate_loss", lambda *a, **k: next(losses))
    model = tiny_model()
    with pytest.raises(DivergenceError) as info:
        train(model, tiny_windows(), tiny_windows(4, 1), TrainConfig(batch_size=4, max_epochs=5, lr=1e-3))
    assert info.value.history.diverged
    assert info.value.history.val_loss == [0.5]
    assert info.value.model is model


def test_train_deterministic():
    runs = []
    for _ in range(2):
        model, hist = train(tiny_model(3), tiny_windows(), tiny_windows(4, 1),
                            TrainConfig(batch_size=4, max_epochs=3, lr=1e-2, seed=5))
        runs.append((hist.train_loss, hist.val_loss, model.snapshot()))
    assert runs[0][0] == runs[1][0] and runs[0][1] == runs[1][1]
    for k in runs[0][2]:
        assert runs[0][2][k].tobytes() == runs[1][2][k].tobytes()


def test_train_rejects_empty():
    with pytest.raises(ValueError):
        train(tiny_model(), [], tiny_windows(2), TrainConfig())


def test_history_csv(tmp_path):
    _, hist = train(tiny_model(), tiny_windows(), tiny_windows(4, 1), TrainConfig(batch_size=6, max_epochs=2))
    hist.write_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,seconds" and len(lines) == 3


def test_desk_model_learns_synthetic_events():
    """Reduced seizure-style model on one synthetic recording: validation BCE < 0.3."""
    rec, ev = generate_synthetic(SynthSpec(seed=0, duration_s=900, event_rate_per_hour=40))
    rec = normalize_channels(rec)
    mask = recording_mask(rec, ev)
    cut = 720 * 64
    spec = DatasetSpec(window_s=16, r_overlap=0.75, seed=0)
    head = type(rec)(rec.channels, rec.fs, rec.samples[:, :cut])
    tail = type(rec)(rec.channels, rec.fs, rec.samples[:, cut:])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        train_set = build_balanced_dataset(segment(head, mask[:cut], spec), spec)
    val_set = segment(tail, mask[cut:], DatasetSpec(window_s=16, r_overlap=0.0))
    model, hist = train(build_model(desk_config(), 0), train_set, val_set,
                        TrainConfig(batch_size=16, lr=1e-3, max_epochs=6, early_stop_patience=3))
    assert min(hist.val_loss) < 0.3
