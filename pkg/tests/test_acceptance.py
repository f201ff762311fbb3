"""The nine acceptance criteria, each at its stated tolerance and time budget.

Every test appends one ``PASS``/``FAIL`` line that is printed in the terminal
summary (see conftest.py) and also asserts, so the suite fails when a
criterion does.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from eegunet.cli import main
from eegunet.events import read_tsv
from eegunet.inference import closing, opening, threshold_mask
from eegunet.model import PRESETS, analytic_param_count, build_model, desk_config, save_checkpoint, seizure_config
from eegunet.nn import precision
from eegunet.scoring import (
    ToleranceConfig, canonicalize_events, event_score, events_to_1hz, mask_to_1hz, sample_score,
)

from arch_tables import PARAM_GRID, TABLES
from grad_cases import CASES
from helpers import gradcheck
from oracles import closing_def, event_score_def, opening_def, random_events, random_mask

REPO = Path(__file__).resolve().parents[1]
DESK_CONFIG = REPO / "configs" / "desk.json"


def verdict(n, title, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})")
    assert ok, f"criterion {n} failed: {detail}"


# 1 --------------------------------------------------------------------------

def test_c1_parameter_accounting():
    t0 = time.perf_counter()

    def total(ff, layers):
        return sum(analytic_param_count(seizure_config(dim_ff=ff, num_tx_layers=layers)).values())

    got = (total(1024, 8) - total(1024, 4), total(2048, 8) - total(2048, 4), total(4096, 12) - total(4096, 4))
    want = (8_411_136, 12_609_536, 42_012_672)
    grid = (PARAM_GRID[1024, 8] - PARAM_GRID[1024, 4], PARAM_GRID[2048, 8] - PARAM_GRID[2048, 4],
            PARAM_GRID[4096, 12] - PARAM_GRID[4096, 4])
    dt = time.perf_counter() - t0
    verdict(1, "parameter-accounting fidelity", got == want == grid and dt < 1.0, f"deltas {got}, {dt:.3f}s")


# 2 --------------------------------------------------------------------------

def test_c2_shape_fidelity():
    t0 = time.perf_counter()
    bad = [name for name in ("seizure", "sleep", "pathological")
           if build_model(PRESETS[name](), seed=0).trace_shapes() != TABLES[name]]
    dt = time.perf_counter() - t0
    rows = sum(len(t) for t in TABLES.values())
    verdict(2, "shape fidelity", not bad and dt < 10.0, f"{rows} rows checked, mismatched {bad or 'none'}, {dt:.1f}s")


# 3 --------------------------------------------------------------------------

def test_c3_gradient_suite():
    t0 = time.perf_counter()
    errors = {}
    with precision("float64"):
        for name, case in CASES.items():
            f, params = case()
            errors[name] = gradcheck(f, params)
    dt = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = errors[worst] < 1e-3 and dt < 120
    verdict(3, "gradient suite", ok, f"{len(errors)} cases, worst {worst} {errors[worst]:.1e}, {dt:.1f}s")


# 4 --------------------------------------------------------------------------

def test_c4_scoring_oracle():
    t0 = time.perf_counter()
    tol = ToleranceConfig()
    rng = np.random.default_rng(2024)
    mismatches = canon_bad = 0
    for _ in range(1000):
        ref = canonicalize_events(random_events(rng, n_max=12), tol)
        hyp = canonicalize_events(random_events(rng, n_max=12), tol)
        r = event_score(ref, hyp, tol)
        mismatches += (r.tp, r.fp, r.fn) != event_score_def(ref, hyp, tol.pre_ictal_s, tol.post_ictal_s)
        for c in (ref, hyp):
            durs = c.durations
            gaps_ok = all(
                c.starts[i] - c.ends[i - 1] >= tol.merge_gap_s
                or (c.starts[i] == c.ends[i - 1] and durs[i - 1] == tol.max_event_s)
                for i in range(1, len(c)))
            canon_bad += not (gaps_ok and np.all(durs <= tol.max_event_s)
                              and canonicalize_events(c, tol) == c)
    dt = time.perf_counter() - t0
    verdict(4, "scoring oracle equivalence", mismatches == 0 and canon_bad == 0 and dt < 30,
            f"1000 pairs, {mismatches} count mismatches, {canon_bad} canonical violations, {dt:.1f}s")


# 5 --------------------------------------------------------------------------

def test_c5_morphology_algebra():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    failures = 0
    for _ in range(1000):
        m = random_mask(rng)
        n = int(rng.integers(1, 16))
        o, c = opening(m, n), closing(m, n)
        failures += not (
            np.array_equal(o, opening_def(m, n)) and np.array_equal(c, closing_def(m, n))
            and np.all(o <= m) and np.array_equal(opening(o, n), o)
            and np.all(c >= m) and np.array_equal(closing(c, n), c))
    dt = time.perf_counter() - t0
    verdict(5, "morphology algebra", failures == 0 and dt < 30, f"1000 masks, {failures} failures, {dt:.1f}s")


# 6 --------------------------------------------------------------------------

def test_c6_complexity(tmp_path):
    t0 = time.perf_counter()
    cfg = ["--config", str(DESK_CONFIG)]
    assert main(["gen", *cfg, "--out", str(tmp_path / "rec"), "--n", "1"]) == 0
    save_checkpoint(build_model(desk_config(), seed=0), tmp_path / "m.ckpt")
    assert main(["bench", *cfg, "--checkpoint", str(tmp_path / "m.ckpt"), "--input", str(tmp_path / "rec"),
                 "--r-overlap", "0.75", "--out", str(tmp_path / "bench")]) == 0
    rows = json.loads((tmp_path / "bench" / "bench.json").read_text())
    dt = time.perf_counter() - t0
    n_win, ratio = rows["window"]["invocations"], rows["invocation_ratio"]
    verdict(6, "complexity claim", n_win >= 100 and ratio >= 3.8 and dt < 120,
            f"{n_win} vs {rows['timestep']['invocations']} invocations, ratio {ratio:.2f}, {dt:.1f}s")


# 7-9 ----------------------------------------------------------------------

def synthetic_loop(root: Path, seed: int = 0) -> dict:
    """gen -> train -> predict -> score with the desk configuration; returns paths and timings."""
    cfg = ["--config", str(DESK_CONFIG), "--seed", str(seed)]
    t = {}
    assert main(["gen", *cfg, "--out", str(root / "train")]) == 0  # 3 x 10 min
    assert main(["gen", "--config", str(DESK_CONFIG), "--seed", str(seed + 1), "--n", "1",
                 "--out", str(root / "test")]) == 0  # 10 min
    t0 = time.perf_counter()
    assert main(["train", *cfg, "--corpus", str(root / "train"), "--out", str(root / "run")]) == 0
    t["train"] = time.perf_counter() - t0
    assert main(["predict", *cfg, "--checkpoint", str(root / "run" / "model.ckpt"), "--input", str(root / "test"),
                 "--out", str(root / "pred"), "--probs"]) == 0
    assert main(["score", *cfg, "--ref", str(root / "test"), "--hyp", str(root / "pred"),
                 "--out", str(root / "score")]) == 0
    return {"root": root, "times": t, "report": json.loads((root / "score" / "score.json").read_text())}


@pytest.fixture(scope="module")
def loop_a(tmp_path_factory):
    return synthetic_loop(tmp_path_factory.mktemp("loop_a"))


def test_c7_end_to_end(loop_a):
    rep = loop_a["report"]
    f1, auc, t_train = rep["event"]["f1"], rep["auroc_mean"], loop_a["times"]["train"]
    ok = f1 >= 0.8 and auc is not None and auc >= 0.95 and t_train <= 600
    verdict(7, "end-to-end synthetic loop", ok,
            f"event F1 {f1:.3f}, sample AUROC {auc:.4f}, training {t_train:.0f}s")


def test_c8_threshold_tradeoff(loop_a):
    t0 = time.perf_counter()
    root = loop_a["root"]
    meta = json.loads((root / "test" / "rec000" / "meta.json").read_text())
    fs, n = meta["fs"], meta["n_samples"]
    probs = np.fromfile(root / "pred" / "rec000.probs.f32", dtype="<f4")
    ref = events_to_1hz(read_tsv(root / "test" / "rec000" / "events.tsv"), n / fs)
    sens, prec = [], []
    for tau in (0.2, 0.4, 0.6, 0.8, 0.9):
        r = sample_score(ref, mask_to_1hz(threshold_mask(probs, tau), fs))
        sens.append(r.sensitivity)
        prec.append(r.precision)
    ok = all(np.diff(sens) <= 0) and all(np.diff(prec) >= 0) and time.perf_counter() - t0 < 300
    verdict(8, "threshold trade-off direction", ok,
            "sens " + "/".join(f"{s:.3f}" for s in sens) + ", prec " + "/".join(f"{p:.3f}" for p in prec))


def test_c9_determinism(loop_a, tmp_path_factory):
    b = synthetic_loop(tmp_path_factory.mktemp("loop_b"))
    same_ckpt = (loop_a["root"] / "run" / "model.ckpt").read_bytes() == (b["root"] / "run" / "model.ckpt").read_bytes()
    same_score = (loop_a["root"] / "score" / "score.json").read_bytes() == \
        (b["root"] / "score" / "score.json").read_bytes()
    verdict(9, "determinism", same_ckpt and same_score,
            f"checkpoint identical: {same_ckpt}, score report identical: {same_score}")
