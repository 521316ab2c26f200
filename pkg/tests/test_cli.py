import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timemkg.cli import main
from timemkg.config import RunConfig, parse_overrides
from timemkg.errors import ConfigError

SPEC = {
    "variables": [
        {"name": "HULL", "tags": ["load"], "description": "high useful load", "period": 24, "amplitude": 1.0},
        {"name": "AMB", "tags": ["weather"], "period": 48, "amplitude": 0.7},
        {"name": "OT", "tags": ["temperature"], "description": "oil temperature"},
    ],
    "edges": [
        {"head": "HULL", "tail": "OT", "lag": 3, "coef": 0.8, "relation": "heats"},
        {"head": "OT", "tail": "OT", "lag": 1, "coef": 0.3, "relation": "persists"},
    ],
    "length": 400,
    "noise": 0.2,
    "seed": 3,
}

CONFIG = """\
[data]
path = data.csv
history = 16
horizon = 4

[graph]
path = graph.jsonl

[model]
d = 8
depth = 1
n_heads = 2
l_max = 40
token_dim = 8

[train]
lr = 0.003
steps = 30
eval_every = 10
"""


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    if code == 0:
        return code, json.loads(out)
    assert out == ""
    return code, json.loads(err)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def workdir(tmp_path, capsys):
    (tmp_path / "spec.json").write_text(json.dumps(SPEC))
    (tmp_path / "run.ini").write_text(CONFIG)
    code, _ = run(capsys, "synth", "--spec", tmp_path / "spec.json", "--out-csv", tmp_path / "data.csv",
                  "--out-triplets", tmp_path / "graph.jsonl")
    assert code == 0
    return tmp_path


@pytest.fixture
def trained(workdir, capsys):
    code, summary = run(capsys, "train", "--config", workdir / "run.ini", "--out", workdir / "ck.bin",
                        "--loss-curve", workdir / "loss.csv", "--metrics", workdir / "metrics.json",
                        "--store", workdir / "trained.store")
    assert code == 0
    return workdir, summary


# ---------------------------------------------------------------------------
# config


def test_config_round_trip_defaults():
    cfg = RunConfig()
    assert RunConfig.from_ini(cfg.to_ini()) == cfg


@settings(max_examples=40, deadline=None)
@given(d=st.integers(1, 512), lr=st.floats(0, 1, allow_nan=False), bias=st.booleans(),
       template=st.text(st.characters(blacklist_categories=("Cs", "Cc", "Zl", "Zp")), max_size=20),
       splits=st.lists(st.floats(0.01, 1.0), min_size=1, max_size=3))
def test_config_round_trip_property(d, lr, bias, template, splits):
    cfg = RunConfig()
    cfg.model.d, cfg.train.lr, cfg.model.attn_bias = d, lr, bias
    cfg.graph.template = (template + " {variable}").strip()  # values carry no surrounding whitespace
    cfg.data.splits = tuple(splits)
    assert RunConfig.from_ini(cfg.to_ini()) == cfg


def test_overrides_win_over_file():
    cfg = RunConfig.from_ini("[model]\nd = 32\n", parse_overrides(["model.d=48", "train.seed=9"]))
    assert cfg.model.d == 48 and cfg.train.seed == 9


@pytest.mark.parametrize("bad", [["model.nope=1"], ["modeld=1"], ["model.d=abc"], ["model.attn_bias=maybe"]])
def test_bad_overrides(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_ini("", parse_overrides(bad))


def test_validation_reports_missing_files_and_ranges(tmp_path):
    cfg = RunConfig()
    cfg.model.n_heads = 3
    cfg.data.path = str(tmp_path / "missing.csv")
    with pytest.raises(ConfigError) as info:
        cfg.validate()
    msg = str(info.value)
    assert "data.path" in msg and "n_heads" in msg and info.value.module == "config"


def test_relative_paths_resolve_against_config(workdir):
    cfg = RunConfig.load(workdir / "run.ini")
    assert cfg.data.path == str(workdir / "data.csv")
    cfg.validate()


# ---------------------------------------------------------------------------
# commands


def test_synth_is_deterministic(workdir, capsys):
    for tag in ("a", "b"):
        run(capsys, "synth", "--spec", workdir / "spec.json", "--out-csv", workdir / f"{tag}.csv",
            "--out-triplets", workdir / f"{tag}.jsonl")
    assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()
    assert (workdir / "a.jsonl").read_bytes() == (workdir / "b.jsonl").read_bytes()
    assert read_csv(workdir / "a.csv")[0] == ["HULL", "AMB", "OT"]


def test_synth_classification_spec(tmp_path, capsys):
    spec = {"variables": SPEC["variables"], "length": 20, "noise": 0.1, "per_class": 3,
            "classes": [{"edges": SPEC["edges"]}, {"edges": []}]}
    (tmp_path / "c.json").write_text(json.dumps(spec))
    code, summary = run(capsys, "synth", "--spec", tmp_path / "c.json", "--out-csv", tmp_path / "c.csv",
                        "--out-triplets", tmp_path / "c.jsonl")
    assert code == 0 and summary["samples"] == 6 and summary["classes"] == 2
    assert read_csv(tmp_path / "c.csv")[0][:2] == ["sample_id", "label"]


def test_build_kg_normalizes(workdir, capsys):
    code, summary = run(capsys, "build-kg", "--triplets", workdir / "graph.jsonl", "--out", workdir / "g2.jsonl",
                        "--variables", "EXTRA")
    assert code == 0 and summary["nodes"] == 4 and summary["edges"] == 2
    assert '"node": "EXTRA"' in (workdir / "g2.jsonl").read_text()


def test_build_kg_parse_error_is_json(tmp_path, capsys):
    (tmp_path / "bad.jsonl").write_text('{"head": "A", "relation": "r", "tail": "B"}\nnot json\n')
    code, err = run(capsys, "build-kg", "--triplets", tmp_path / "bad.jsonl", "--out", tmp_path / "o.jsonl")
    assert code != 0 and err["error"] == "ParseError" and "line 2" in err["message"]


def test_embed_untrained(workdir, capsys):
    code, summary = run(capsys, "embed", "--graph", workdir / "graph.jsonl", "--out", workdir / "u.store")
    assert code == 0 and summary["variables"] == 3 and summary["dim"] == 64


def test_train_outputs(trained):
    workdir, summary = trained
    rows = read_csv(workdir / "loss.csv")
    assert rows[0] == ["step", "train_loss", "val_loss"] and len(rows) == 1 + summary["steps_run"]
    metrics = json.loads((workdir / "metrics.json").read_text())
    assert metrics["val"] == summary["val_metrics"]


def test_eval_reproduces_training_val_metric(trained, capsys):
    workdir, summary = trained
    code, ev = run(capsys, "eval", "--config", workdir / "run.ini", "--checkpoint", workdir / "ck.bin",
                   "--split", "val")
    assert code == 0 and ev["metrics"] == summary["val_metrics"]


def test_store_from_training_matches_reembedding(trained, capsys):
    workdir, _ = trained
    run(capsys, "embed", "--checkpoint", workdir / "ck.bin", "--out", workdir / "again.store")
    assert (workdir / "again.store").read_bytes() == (workdir / "trained.store").read_bytes()
    _, a = run(capsys, "eval", "--checkpoint", workdir / "ck.bin", "--store", workdir / "trained.store")
    _, b = run(capsys, "eval", "--checkpoint", workdir / "ck.bin")
    assert a["metrics"] == b["metrics"]


def test_forecast_shape_contract(trained, capsys):
    workdir, _ = trained
    rows = read_csv(workdir / "data.csv")
    with open(workdir / "hist.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(rows[:21])
    code, summary = run(capsys, "forecast", "--checkpoint", workdir / "ck.bin", "--history", workdir / "hist.csv",
                        "--out", workdir / "fc.csv")
    assert code == 0
    out = read_csv(workdir / "fc.csv")
    assert out[0] == ["HULL", "AMB", "OT"] and len(out) == 1 + 4
    assert np.all(np.isfinite(np.array(out[1:], dtype=float)))


def test_stale_store_is_reported(trained, capsys):
    workdir, _ = trained
    graph = workdir / "graph.jsonl"
    graph.write_text(graph.read_text().replace('"heats"', '"warms"'))
    code, err = run(capsys, "eval", "--checkpoint", workdir / "ck.bin", "--store", workdir / "trained.store")
    assert code != 0 and err["error"] == "StaleCache" and "HULL" in err["message"]


def test_incompatible_checkpoint(trained, capsys):
    workdir, _ = trained
    code, err = run(capsys, "eval", "--config", workdir / "run.ini", "--checkpoint", workdir / "ck.bin",
                    "--set", "model.d=16")
    assert code != 0 and err["error"] == "ShapeMismatch" and err["module"] == "cli" and "d:" in err["message"]


def test_missing_config_file(tmp_path, capsys):
    code, err = run(capsys, "train", "--config", tmp_path / "nope.ini", "--out", tmp_path / "ck.bin")
    assert code != 0 and err["error"] == "ConfigError"


def test_export_attention_rows_sum_to_one(trained, capsys):
    workdir, _ = trained
    code, summary = run(capsys, "export-attention", "--checkpoint", workdir / "ck.bin", "--sample", 2,
                        "--out-dir", workdir / "att")
    assert code == 0
    assert {"cma.csv", "cpe_layer0.csv", "tse_layer0.csv"} <= set(summary["files"])
    for name in summary["files"]:
        rows = read_csv(workdir / "att" / name)
        assert rows[0] == ["query", "HULL", "AMB", "OT"]
        m = np.array([r[1:] for r in rows[1:]], dtype=float)
        assert m.shape == (3, 3) and np.max(np.abs(m.sum(axis=1) - 1.0)) <= 1e-9


def test_train_is_idempotent(trained, capsys):
    workdir, _ = trained
    run(capsys, "train", "--config", workdir / "run.ini", "--out", workdir / "ck2.bin")
    assert (workdir / "ck2.bin").read_bytes() == (workdir / "ck.bin").read_bytes()


def test_classify_end_to_end(tmp_path, capsys):
    spec = {"variables": SPEC["variables"], "length": 12, "noise": 0.1, "per_class": 10, "seed": 1,
            "classes": [{"edges": SPEC["edges"][:1]}, {"edges": [dict(SPEC["edges"][0], coef=-0.8)]}]}
    (tmp_path / "c.json").write_text(json.dumps(spec))
    run(capsys, "synth", "--spec", tmp_path / "c.json", "--out-csv", tmp_path / "c.csv",
        "--out-triplets", tmp_path / "graph.jsonl")
    (tmp_path / "run.ini").write_text(CONFIG.replace("data.csv", "c.csv").replace("horizon = 4", "task = classify")
                                      .replace("history = 16", "history = 12"))
    code, _ = run(capsys, "train", "--config", tmp_path / "run.ini", "--out", tmp_path / "ck.bin")
    assert code == 0
    code, summary = run(capsys, "classify", "--checkpoint", tmp_path / "ck.bin", "--samples", tmp_path / "c.csv",
                        "--out", tmp_path / "pred.csv")
    assert code == 0 and summary["samples"] == 20
    rows = read_csv(tmp_path / "pred.csv")
    assert rows[0] == ["sample", "predicted", "logit_0", "logit_1"] and len(rows) == 21
    code, err = run(capsys, "forecast", "--checkpoint", tmp_path / "ck.bin", "--history", tmp_path / "c.csv",
                    "--out", tmp_path / "f.csv")
    assert code != 0 and err["error"] == "ConfigError"
