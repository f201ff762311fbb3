"""Command line entry point: gen | train | predict | score | params | bench."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import (
    Recording, generate_synthetic, load_recording, preprocess, recording_mask, save_recording, segment,
    build_balanced_dataset,
)
from .events import read_tsv, write_tsv, mask_to_events
from .inference import (
    InferencePlan, expand_window_preds, postprocess, predict_mask, predict_window_scores,
)
from .model import ConfigError, analytic_param_count, build_model, load_checkpoint, save_checkpoint
from .nn.tensor import NonFiniteError
from .scoring import (
    ScoreReport, auroc, canonicalize_events, event_score, events_to_1hz, probs_to_1hz, sample_score,
)
from .train import DivergenceError, train

log = logging.getLogger("eegunet")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(Exception):
    pass


def _recording_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _prepare_out(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()) and not force:
        raise DataError(f"{out} exists and is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config, args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.data.synth.seed = cfg.data.dataset.seed = cfg.train.seed = cfg.seed
    return cfg


def _corpus_ids(corpus: Path) -> list[str]:
    manifest = corpus / "manifest.json"
    if manifest.exists():
        return [r["id"] for r in json.loads(manifest.read_text())["recordings"]]
    if (corpus / "meta.json").exists():
        return [""]
    ids = sorted(p.name for p in corpus.iterdir() if (p / "meta.json").exists())
    if not ids:
        raise DataError(f"{corpus}: no recordings found")
    return ids


def _rec_dir(corpus: Path, rid: str) -> Path:
    return corpus / rid if rid else corpus


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(jobs) as pool:
        return list(pool.map(fn, items))


# ------------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    _prepare_out(out, args.force)
    n = cfg.data.n_recordings if args.n is None else args.n
    entries = []
    for i in range(n):
        rid = f"rec{i:03d}"
        spec = replace(cfg.data.synth, seed=_recording_seed(cfg.seed, i))
        rec, events = generate_synthetic(spec)
        save_recording(rec, out / rid)
        write_tsv(events, out / rid / "events.tsv")
        entries.append({"id": rid, "duration_s": rec.duration, "fs": rec.fs, "n_samples": rec.n_samples,
                        "channels": rec.samples.shape[0], "n_events": len(events)})
    manifest = {"seed": cfg.seed, "synth": cfg.to_dict()["data"]["synth"], "recordings": entries}
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    (out / "manifest.json").write_text(text)
    print(f"wrote {n} recordings to {out} (manifest sha256 {hashlib.sha256(text.encode()).hexdigest()[:16]})")
    return EXIT_OK


def _split_windows(cfg: RunConfig, corpus: Path):
    train_w, val_w = [], []
    val_spec = replace(cfg.data.dataset, r_overlap=0.0)
    for rid in _corpus_ids(corpus):
        d = _rec_dir(corpus, rid)
        rec = preprocess(load_recording(d), cfg.data.preprocess)
        mask = recording_mask(rec, read_tsv(d / "events.tsv"))
        cut = int(round(rec.n_samples * (1 - cfg.train.val_fraction)))
        head = Recording(rec.channels, rec.fs, rec.samples[:, :cut])
        tail = Recording(rec.channels, rec.fs, rec.samples[:, cut:]) if cut < rec.n_samples else None
        train_w += segment(head, mask[:cut], cfg.data.dataset, rid)
        if tail is not None:
            val_w += segment(tail, mask[cut:], val_spec, rid)
    return build_balanced_dataset(train_w, cfg.data.dataset), val_w


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    _prepare_out(out, args.force)
    train_set, val_set = _split_windows(cfg, Path(args.corpus))
    if cfg.model.window_samples != (train_set[0].x.shape[1] if train_set else cfg.model.window_samples):
        raise ConfigError("data.dataset.window_s * fs does not match model.window_samples")
    model = build_model(cfg.model, seed=cfg.seed)
    log.info("training on %d windows, validating on %d", len(train_set), len(val_set))
    status = EXIT_OK
    try:
        model, hist = train(model, train_set, val_set, cfg.train)
    except DivergenceError as exc:
        model, hist, status = exc.model, exc.history, EXIT_NUMERIC
        log.error("%s", exc)
    save_checkpoint(model, out / "model.ckpt")
    hist.write_csv(out / "history.csv")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    if hist.val_loss:
        print(f"best epoch {hist.best_epoch + 1}: val loss {hist.val_loss[hist.best_epoch]:.4f}")
    return status


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    model = load_checkpoint(args.checkpoint)
    src, out = Path(args.input), Path(args.out)
    _prepare_out(out, args.force)

    def one(rid):
        rec = preprocess(load_recording(_rec_dir(src, rid)), cfg.data.preprocess)
        probs = predict_mask(model, rec)
        events = mask_to_events(postprocess(probs.values, cfg.post, rec.fs), rec.fs)
        name = rid or src.name
        write_tsv(events, out / f"{name}.tsv")
        if args.probs:
            (out / f"{name}.probs.f32").write_bytes(probs.values.astype("<f4").tobytes())
        return {"id": name, "fs": rec.fs, "n_samples": rec.n_samples, "duration_s": rec.duration,
                "n_events": len(events), "invocations": probs.invocations}

    entries = _map(one, _corpus_ids(src), args.jobs)
    (out / "predictions.json").write_text(json.dumps({"recordings": entries}, indent=2, sort_keys=True) + "\n")
    print(f"annotated {len(entries)} recordings into {out}")
    return EXIT_OK


def score_directories(ref: Path, hyp: Path, cfg: RunConfig) -> tuple[dict, list[tuple[str, float | None]]]:
    """Corpus-level sample/event reports (counts summed over recordings) and per-recording AUROC."""
    preds = {e["id"]: e for e in json.loads((hyp / "predictions.json").read_text())["recordings"]}
    sample, event, per_rec = ScoreReport("sample"), ScoreReport("event"), []
    for rid in _corpus_ids(ref):
        name = rid or ref.name
        meta = json.loads((_rec_dir(ref, rid) / "meta.json").read_text())
        duration = meta["n_samples"] / meta["fs"]
        ref_ev = read_tsv(_rec_dir(ref, rid) / "events.tsv")
        hyp_ev = read_tsv(hyp / f"{name}.tsv")
        ref_1hz = events_to_1hz(ref_ev, duration)
        sample = sample + sample_score(ref_1hz, events_to_1hz(hyp_ev, duration))
        event = event + event_score(canonicalize_events(ref_ev, cfg.score),
                                    canonicalize_events(hyp_ev, cfg.score), cfg.score, duration)
        probs_path = hyp / f"{name}.probs.f32"
        value = None
        if probs_path.exists():
            probs = np.fromfile(probs_path, dtype="<f4")
            value = auroc(ref_1hz, probs_to_1hz(probs, preds[name]["fs"])[:len(ref_1hz)])
        per_rec.append((name, value))
    vals = [v for _, v in per_rec if v is not None]
    report = {"sample": sample.to_dict(), "event": event.to_dict(),
              "auroc_mean": float(np.mean(vals)) if vals else None,
              "auroc_recordings": len(vals)}
    return report, per_rec


def cmd_score(args) -> int:
    cfg = _load_config(args)
    report, per_rec = score_directories(Path(args.ref), Path(args.hyp), cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "score.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(out / "auroc_per_recording.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("recording", "auroc"))
        for name, v in per_rec:
            w.writerow((name, "" if v is None else repr(v)))
    for scale in ("sample", "event"):
        r = report[scale]
        print(f"{scale:>6}: f1 {r['f1']:.4f}  sens {r['sensitivity']:.4f}  prec {r['precision']:.4f}"
              f"  (tp {r['tp']} fp {r['fp']} fn {r['fn']})")
    if report["auroc_mean"] is not None:
        print(f"auroc: {report['auroc_mean']:.4f} over {report['auroc_recordings']} recordings")
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = _load_config(args)
    cfg.model.validate()
    sections = analytic_param_count(cfg.model)
    if args.build:
        from .model import count_params
        _, sections = count_params(build_model(cfg.model, cfg.seed), by_section=True)
    total = sum(sections.values())
    for name, n in sections.items():
        print(f"{name:<12}{n:>14,}")
    print(f"{'total':<12}{total:>14,}")
    if args.json:
        print(json.dumps({"total": total, "sections": sections}, sort_keys=True))
    return EXIT_OK


def run_bench(model, recordings: list[Recording], r_overlap: float, threshold: float = 0.5) -> dict:
    """Invocation counts and wall time of sliding-window vs streaming time-step inference."""
    if not 0 <= r_overlap < 1:
        raise ValueError("r_overlap must be in [0, 1)")
    plan = InferencePlan.for_model(model, r_overlap)
    hours = sum(r.duration for r in recordings) / 3600.0
    rows = {}
    t0 = time.perf_counter()
    calls = 0
    for rec in recordings:
        scores, n = predict_window_scores(model, rec, plan)
        expand_window_preds(scores, plan, threshold, rec.n_samples)
        calls += n
    rows["window"] = {"invocations": calls, "seconds": time.perf_counter() - t0}
    t0 = time.perf_counter()
    calls = 0
    for rec in recordings:
        probs = predict_mask(model, rec)
        (probs.values > threshold).astype(np.int8)
        calls += probs.invocations
    rows["timestep"] = {"invocations": calls, "seconds": time.perf_counter() - t0}
    for r in rows.values():
        r["seconds_per_hour"] = r["seconds"] / hours if hours else float("nan")
    rows["invocation_ratio"] = rows["window"]["invocations"] / max(rows["timestep"]["invocations"], 1)
    rows["r_overlap"] = r_overlap
    return rows


def run_scaling(model, recordings: list[Recording], fractions=(0.25, 0.5, 0.75, 1.0),
                repeats: int = 3) -> dict:
    """Time-step mode wall time on growing prefixes of the corpus, with a least-squares line fit."""
    corpora = [[Recording(r.channels, r.fs, r.samples[:, :max(1, int(r.n_samples * f))]) for r in recordings]
               for f in fractions]
    hours = [sum(c.duration for c in crops) / 3600.0 for crops in corpora]
    secs = [math.inf] * len(corpora)
    # sizes are interleaved within each repeat so slow drift in machine load hits all of them alike
    for _ in range(repeats):
        for i, crops in enumerate(corpora):
            t0 = time.perf_counter()
            for rec in crops:
                predict_mask(model, rec)
            secs[i] = min(secs[i], time.perf_counter() - t0)
    slope, intercept = np.polyfit(hours, secs, 1)
    resid = np.asarray(secs) - (slope * np.asarray(hours) + intercept)
    ss_tot = float(np.sum((np.asarray(secs) - np.mean(secs)) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return {"hours": hours, "seconds": secs, "slope_s_per_hour": float(slope), "r2": r2}


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    model = load_checkpoint(args.checkpoint)
    src = Path(args.input)
    recs = [preprocess(load_recording(_rec_dir(src, rid)), cfg.data.preprocess) for rid in _corpus_ids(src)]
    rows = run_bench(model, recs, args.r_overlap)
    print(f"{'mode':<10}{'invocations':>12}{'seconds':>10}{'s/hour':>10}")
    for mode in ("window", "timestep"):
        r = rows[mode]
        print(f"{mode:<10}{r['invocations']:>12}{r['seconds']:>10.2f}{r['seconds_per_hour']:>10.2f}")
    print(f"invocation ratio {rows['invocation_ratio']:.3f} at r_overlap={args.r_overlap}")
    if args.scaling:
        rows["scaling"] = run_scaling(model, recs)
        sc = rows["scaling"]
        print(f"time-step mode: {sc['slope_s_per_hour']:.2f} s per recorded hour, linear fit R^2 {sc['r2']:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. post.threshold=0.9 (repeatable)")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--jobs", type=int, default=1, help="per-recording worker threads")
    common.add_argument("--force", action="store_true", help="allow writing into a non-empty --out")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="eegunet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="write a synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, help="number of recordings (overrides data.n_recordings)")
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="train on a corpus")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    pr = sub.add_parser("predict", parents=[common], help="annotate a recording or corpus")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--input", required=True, help="recording directory or corpus directory")
    pr.add_argument("--out", required=True)
    pr.add_argument("--probs", action="store_true", help="also dump float32 probabilities")
    pr.set_defaults(fn=cmd_predict)

    s = sub.add_parser("score", parents=[common], help="score predictions against a reference corpus")
    s.add_argument("--ref", required=True)
    s.add_argument("--hyp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_score)

    pa = sub.add_parser("params", parents=[common], help="learnable-parameter count per section")
    pa.add_argument("--build", action="store_true", help="instantiate the model and count its arrays")
    pa.add_argument("--json", action="store_true")
    pa.set_defaults(fn=cmd_params)

    b = sub.add_parser("bench", parents=[common], help="sliding-window vs time-step inference cost")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--input", required=True)
    b.add_argument("--r-overlap", type=float, default=0.75)
    b.add_argument("--scaling", action="store_true", help="also fit time-step wall time against duration")
    b.add_argument("--out")
    b.set_defaults(fn=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
