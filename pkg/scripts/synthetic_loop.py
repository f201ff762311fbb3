"""gen -> train -> predict -> score on the desk-scale synthetic corpus, then a threshold sweep.

    python3 scripts/synthetic_loop.py --out runs/desk [--seed 0]
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from eegunet.cli import main
from eegunet.events import read_tsv
from eegunet.inference import threshold_mask
from eegunet.scoring import events_to_1hz, mask_to_1hz, sample_score

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.json"


def step(argv):
    t0 = time.perf_counter()
    code = main(argv)
    if code:
        raise SystemExit(f"{argv[0]} failed with exit code {code}")
    print(f"  [{argv[0]} took {time.perf_counter() - t0:.1f}s]")


def sweep(root: Path, taus=(0.2, 0.4, 0.6, 0.8, 0.9)):
    rows = []
    for rec_dir in sorted(p for p in (root / "test").iterdir() if p.is_dir()):
        meta = json.loads((rec_dir / "meta.json").read_text())
        probs = np.fromfile(root / "pred" / f"{rec_dir.name}.probs.f32", dtype="<f4")
        ref = events_to_1hz(read_tsv(rec_dir / "events.tsv"), meta["n_samples"] / meta["fs"])
        rows.append([sample_score(ref, mask_to_1hz(threshold_mask(probs, t), meta["fs"])) for t in taus])
    print(f"{'tau':>5} {'sens':>7} {'prec':>7} {'f1':>7}")
    for i, tau in enumerate(taus):
        total = sum((r[i] for r in rows[1:]), rows[0][i])
        print(f"{tau:>5} {total.sensitivity:>7.3f} {total.precision:>7.3f} {total.f1:>7.3f}")


def run(out: Path, seed: int, config: Path = CONFIG):
    cfg = ["--config", str(config), "--seed", str(seed), "--force"]
    step(["gen", *cfg, "--out", str(out / "train")])
    step(["gen", "--config", str(config), "--seed", str(seed + 1), "--n", "1", "--force", "--out", str(out / "test")])
    step(["train", *cfg, "-v", "--corpus", str(out / "train"), "--out", str(out / "run")])
    step(["predict", *cfg, "--checkpoint", str(out / "run" / "model.ckpt"), "--input", str(out / "test"),
          "--out", str(out / "pred"), "--probs"])
    step(["score", *cfg, "--ref", str(out / "test"), "--hyp", str(out / "pred"), "--out", str(out / "score")])
    sweep(out)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", type=Path, default=CONFIG)
    a = ap.parse_args()
    run(Path(a.out), a.seed, a.config)
