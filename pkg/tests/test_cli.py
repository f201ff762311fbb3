import hashlib
import json

import numpy as np
import pytest

from eegunet.cli import main, run_bench
from eegunet.config import RunConfig, apply_override
from eegunet.data import Recording
from eegunet.model import ConfigError, build_model

TINY = {
    "seed": 0,
    "model": {"preset": "desk", "window_samples": 64, "encoder_blocks": [[4, 5], [8, 3]], "rescnn_kernels": [3],
              "d_model": 8, "num_heads": 2, "dim_ff": 16, "num_tx_layers": 1,
              "decoder_blocks": [[8, 3], [4, 3]], "classifier_kernel": 5},
    "data": {"n_recordings": 2,
             "synth": {"fs": 8.0, "duration_s": 240.0, "event_rate_per_hour": 60.0, "event_duration_s": [10.0, 30.0]},
             "dataset": {"window_s": 8.0, "r_overlap": 0.5},
             "preprocess": {"normalize": True}},
    "train": {"batch_size": 8, "lr": 0.003, "max_epochs": 2, "early_stop_patience": 2},
    "post": {"threshold": 0.5},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_gen_is_deterministic(tmp_path, config):
    assert main(["gen", "--config", config, "--out", str(tmp_path / "a")]) == 0
    assert main(["gen", "--config", config, "--out", str(tmp_path / "b")]) == 0
    assert digest(tmp_path / "a" / "manifest.json") == digest(tmp_path / "b" / "manifest.json")
    assert digest(tmp_path / "a" / "rec001" / "data.bin") == digest(tmp_path / "b" / "rec001" / "data.bin")


def test_gen_seed_changes_corpus(tmp_path, config):
    main(["gen", "--config", config, "--out", str(tmp_path / "a")])
    main(["gen", "--config", config, "--out", str(tmp_path / "b"), "--seed", "9"])
    assert digest(tmp_path / "a" / "rec000" / "data.bin") != digest(tmp_path / "b" / "rec000" / "data.bin")


def test_gen_empty_corpus(tmp_path, config):
    assert main(["gen", "--config", config, "--out", str(tmp_path / "c"), "--n", "0"]) == 0
    assert json.loads((tmp_path / "c" / "manifest.json").read_text())["recordings"] == []


def test_gen_ten_recordings(tmp_path, config):
    out = tmp_path / "c"
    assert main(["gen", "--config", config, "--out", str(out), "--n", "10",
                 "--set", "data.synth.duration_s=600"]) == 0
    recs = json.loads((out / "manifest.json").read_text())["recordings"]
    assert len(recs) == 10 and all(r["duration_s"] == 600.0 for r in recs)


def test_refuses_nonempty_out_without_force(tmp_path, config):
    out = tmp_path / "c"
    assert main(["gen", "--config", config, "--out", str(out)]) == 0
    assert main(["gen", "--config", config, "--out", str(out)]) == 3
    assert main(["gen", "--config", config, "--out", str(out), "--force"]) == 0


def test_config_errors_exit_2(tmp_path, config, capsys):
    assert main(["params", "--config", config, "--set", "model.d_model=12"]) == 2
    assert "d_model" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text('{"modle": {}}')
    assert main(["params", "--config", str(bad)]) == 2
    bad.write_text("{not json")
    assert main(["params", "--config", str(bad)]) == 2
    assert main(["frobnicate"]) == 2


def test_missing_input_exit_3(tmp_path, config):
    assert main(["train", "--config", config, "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 3


def test_params_breakdown(capsys):
    assert main(["params", "--json"]) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["total"] == sum(out["sections"].values())
    counts = []
    for layers in (4, 8):
        main(["params", "--json", "--set", "model.dim_ff=1024", "--set", f"model.num_tx_layers={layers}"])
        counts.append(json.loads(capsys.readouterr().out.strip().splitlines()[-1])["sections"]["transformer"])
    assert counts[1] - counts[0] == 8_411_136


def test_params_without_transformer(config, capsys):
    assert main(["params", "--config", config, "--json", "--build", "--set", "model.num_tx_layers=0"]) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["sections"]["transformer"] == 0


def test_full_loop(tmp_path, config):
    train_dir, test_dir = tmp_path / "train", tmp_path / "test"
    assert main(["gen", "--config", config, "--out", str(train_dir)]) == 0
    assert main(["gen", "--config", config, "--out", str(test_dir), "--n", "1", "--seed", "1"]) == 0
    assert main(["train", "--config", config, "--corpus", str(train_dir), "--out", str(tmp_path / "run")]) == 0
    ckpt = tmp_path / "run" / "model.ckpt"
    assert ckpt.exists() and (tmp_path / "run" / "history.csv").exists()
    for jobs in ("1", "2"):
        pred = tmp_path / f"pred{jobs}"
        assert main(["predict", "--config", config, "--checkpoint", str(ckpt), "--input", str(test_dir),
                     "--out", str(pred), "--probs", "--jobs", jobs]) == 0
    assert digest(tmp_path / "pred1" / "rec000.probs.f32") == digest(tmp_path / "pred2" / "rec000.probs.f32")
    probs = np.fromfile(tmp_path / "pred1" / "rec000.probs.f32", dtype="<f4")
    assert probs.size == 240 * 8
    assert main(["score", "--config", config, "--ref", str(test_dir), "--hyp", str(tmp_path / "pred1"),
                 "--out", str(tmp_path / "score")]) == 0
    report = json.loads((tmp_path / "score" / "score.json").read_text())
    assert set(report) >= {"sample", "event", "auroc_mean"}
    assert (tmp_path / "score" / "auroc_per_recording.csv").read_text().startswith("recording,auroc\n")
    assert main(["bench", "--config", config, "--checkpoint", str(ckpt), "--input", str(test_dir),
                 "--r-overlap", "0.5", "--out", str(tmp_path / "bench")]) == 0
    bench = json.loads((tmp_path / "bench" / "bench.json").read_text())
    assert bench["timestep"]["invocations"] == 240 * 8 // 64
    assert bench["window"]["invocations"] == (240 * 8 - 64) // 32 + 1


def test_predict_single_recording_dir(tmp_path, config):
    main(["gen", "--config", config, "--out", str(tmp_path / "c"), "--n", "1"])
    model = build_model(RunConfig.load(config).model)
    from eegunet.model import save_checkpoint
    save_checkpoint(model, tmp_path / "m.ckpt")
    assert main(["predict", "--config", config, "--checkpoint", str(tmp_path / "m.ckpt"),
                 "--input", str(tmp_path / "c" / "rec000"), "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "rec000.tsv").exists()


def test_bench_zero_overlap_counts_match():
    model = build_model(RunConfig.from_dict(TINY).model)
    rec = Recording(["a", "b"], 8.0, np.random.default_rng(0).standard_normal((2, 64 * 10)))
    rows = run_bench(model, [rec], 0.0)
    assert rows["window"]["invocations"] == rows["timestep"]["invocations"] == 10
    with pytest.raises(ValueError):
        run_bench(model, [rec], 1.0)


# -- config -----------------------------------------------------------------

def test_override_parsing():
    raw = {}
    apply_override(raw, "post.threshold=0.9")
    apply_override(raw, "model.preset=desk")
    apply_override(raw, "data.dataset.window_s=16")
    assert raw == {"post": {"threshold": 0.9}, "model": {"preset": "desk"}, "data": {"dataset": {"window_s": 16}}}
    with pytest.raises(ConfigError):
        apply_override(raw, "no_equals_sign")


def test_run_config_round_trip():
    cfg = RunConfig.from_dict(TINY)
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()


def test_run_config_rejects_unknown_nested_keys():
    with pytest.raises(ConfigError, match="data.synth"):
        RunConfig.from_dict({"data": {"synth": {"colour": "pink"}}})
    with pytest.raises(ConfigError, match="train"):
        RunConfig.from_dict({"train": {"epochs": 3}})


def test_timestep_wall_time_is_linear():
    """Time-step mode cost grows linearly with recorded duration (R^2 > 0.99 over 4 sizes)."""
    from eegunet.cli import run_scaling
    from eegunet.model import desk_config
    model = build_model(desk_config())
    rec = Recording(["a", "b"], 64.0, np.random.default_rng(0).standard_normal((2, 20 * 60 * 64)))
    fit = run_scaling(model, [rec], repeats=5)
    assert fit["r2"] > 0.99
    assert fit["slope_s_per_hour"] > 0
