"""End-to-end CLI: synth -> ingest -> train -> predict -> eval, plus tools."""

import json

import numpy as np
import pytest

from seqbelief.cli import main
from seqbelief.data import parse_dataset
from seqbelief.predict import read_trajectories
from seqbelief.training import Checkpoint


@pytest.fixture
def workspace(tmp_path):
    """Small synthetic dataset, embedded and split, ready for training."""
    raw = tmp_path / "raw.jsonl"
    assert (
        main(
            [
                "synth", "--n", "24", "--seed", "3", "--out", str(raw),
                "--sidecar", str(tmp_path / "side.jsonl"),
                "--d-s", "4", "--d-emb", "8", "--hidden", "16",
                "--params-out", str(tmp_path / "oracle.ckpt"),
            ]
        )
        == 0
    )
    emb = tmp_path / "emb.jsonl"
    assert (
        main(
            [
                "ingest", "--in", str(raw), "--out", str(emb),
                "--embedder", "mock", "--d-emb", "8",
                "--manifest", str(tmp_path / "scaler.json"),
                "--split", "0.7,0.15,0.15", "--seed", "1",
            ]
        )
        == 0
    )
    return tmp_path


def _train(ws, out="model.ckpt", extra=()):
    cfg = ws / "cfg.json"
    cfg.write_text(
        json.dumps(
            {
                "learning_rate": 1e-3,
                "d_s": 4,
                "d_emb": 8,
                "hidden_dims": [16],
                "max_rounds": 1,
                "dropout": 0.0,
            }
        )
    )
    rc = main(
        [
            "train", "--train", str(ws / "emb.train.jsonl"),
            "--valid", str(ws / "emb.valid.jsonl"),
            "--config", str(cfg), "--out", str(ws / out),
            "--history", str(ws / "hist.csv"), *extra,
        ]
    )
    assert rc == 0
    return ws / out


def test_synth_and_ingest_artifacts(workspace):
    recs = parse_dataset(workspace / "raw.jsonl")
    assert len(recs) == 24
    manifest = json.loads((workspace / "scaler.json").read_text())
    assert manifest["d_emb"] == 8
    splits = [
        parse_dataset(workspace / f"emb.{name}.jsonl") for name in ("train", "valid", "test")
    ]
    assert sum(len(s) for s in splits) == 24
    oracle = Checkpoint.load(workspace / "oracle.ckpt")
    assert oracle.gen.d_s == 4


def test_train_predict_eval_pipeline(workspace):
    model = _train(workspace)
    assert (workspace / "hist.csv").read_text().startswith("round,split,elbo")
    preds = workspace / "preds.jsonl"
    rc = main(
        ["predict", "--data", str(workspace / "emb.test.jsonl"),
         "--checkpoint", str(model), "--out", str(preds)]
    )
    assert rc == 0
    trajs = read_trajectories(preds)
    assert len(trajs) == len(parse_dataset(workspace / "emb.test.jsonl"))
    report_path = workspace / "report.json"
    rc = main(
        ["eval", "--pred", str(preds), "--truth", str(workspace / "emb.test.jsonl"),
         "--threshold", "0.5", "--out", str(report_path)]
    )
    assert rc == 0
    report = json.loads(report_path.read_text())
    assert report["threshold"] == 0.5
    econ = report["economics"]
    if econ["roi"] is None:
        # no positive calls at this threshold: both ratios are undefined
        assert econ["moic"] is None
    else:
        assert econ["roi"] / 100.0 == pytest.approx(econ["moic"] - 1.0, abs=1e-9)


def test_eval_tuned_threshold(workspace):
    model = _train(workspace)
    for split in ("valid", "test"):
        main(
            ["predict", "--data", str(workspace / f"emb.{split}.jsonl"),
             "--checkpoint", str(model), "--out", str(workspace / f"{split}.preds.jsonl")]
        )
    out = workspace / "tuned.json"
    rc = main(
        ["eval", "--pred", str(workspace / "test.preds.jsonl"),
         "--truth", str(workspace / "emb.test.jsonl"),
         "--tune-on", str(workspace / "valid.preds.jsonl"),
         "--tune-truth", str(workspace / "emb.valid.jsonl"),
         "--out", str(out)]
    )
    assert rc == 0
    report = json.loads(out.read_text())
    assert 0.0 < report["threshold"] < 1.0


def test_train_reruns_byte_identical(workspace):
    a = _train(workspace, out="a.ckpt")
    b = _train(workspace, out="b.ckpt")
    assert a.read_bytes() == b.read_bytes()
    c = _train(workspace, out="c.ckpt", extra=("--seed", "5"))
    assert a.read_bytes() != c.read_bytes()


def test_attention_report(workspace, tmp_path):
    model = _train(workspace)
    preds = workspace / "p.jsonl"
    main(["predict", "--data", str(workspace / "emb.test.jsonl"),
          "--checkpoint", str(model), "--out", str(preds)])
    out = tmp_path / "attn.csv"
    rc = main(["attention-report", "--trajectories", str(preds), "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "group,key,mean_attention,n"
    assert any(l.startswith("call_index,1,") for l in lines)


def test_sweep_writes_sorted_csv(workspace):
    grid = workspace / "grid.json"
    grid.write_text(json.dumps({"learning_rate": [1e-3, 1e-2]}))
    out = workspace / "sweep.csv"
    rc = main(
        ["sweep", "--grid", str(grid),
         "--train", str(workspace / "emb.train.jsonl"),
         "--valid", str(workspace / "emb.valid.jsonl"),
         "--config", str(_write_small_cfg(workspace)),
         "--out", str(out)]
    )
    assert rc == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 3  # header + one row per grid point


def _write_small_cfg(ws):
    cfg = ws / "sweep_cfg.json"
    cfg.write_text(
        json.dumps({"learning_rate": 1e-3, "d_s": 4, "d_emb": 8,
                    "hidden_dims": [16], "max_rounds": 1, "dropout": 0.0})
    )
    return cfg


def test_missing_file_is_io_error(tmp_path):
    rc = main(["predict", "--data", str(tmp_path / "nope.jsonl"),
               "--checkpoint", str(tmp_path / "nope.ckpt"),
               "--out", str(tmp_path / "o.jsonl")])
    assert rc == 2


def test_bad_dataset_is_usage_error(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("not json\n")
    rc = main(["ingest", "--in", str(bad), "--out", str(tmp_path / "o.jsonl")])
    assert rc == 1


def test_unknown_command_fails_cleanly():
    assert main(["frobnicate"]) == 1
