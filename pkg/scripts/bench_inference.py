"""Sliding-window vs time-step inference cost on a synthetic corpus.

    python3 scripts/bench_inference.py [--minutes 30] [--r-overlap 0.75]
"""
import argparse
import json

from eegunet.cli import run_bench, run_scaling
from eegunet.data import SynthSpec, generate_synthetic, normalize_channels
from eegunet.model import build_model, desk_config

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--minutes", type=float, default=30.0)
    ap.add_argument("--r-overlap", type=float, nargs="+", default=[0.0, 0.5, 0.75, 0.875])
    a = ap.parse_args()

    rec, _ = generate_synthetic(SynthSpec(duration_s=a.minutes * 60))
    rec = normalize_channels(rec)
    model = build_model(desk_config(), seed=0)
    print(f"{'r_overlap':>9} {'window calls':>13} {'step calls':>11} {'ratio':>7} {'1/(1-r)':>8} {'speedup':>8}")
    for r in a.r_overlap:
        rows = run_bench(model, [rec], r)
        w, t = rows["window"], rows["timestep"]
        print(f"{r:>9} {w['invocations']:>13} {t['invocations']:>11} {rows['invocation_ratio']:>7.2f} "
              f"{1 / (1 - r):>8.2f} {w['seconds'] / t['seconds']:>8.2f}")
    fit = run_scaling(model, [rec])
    print(json.dumps(fit, indent=2))
