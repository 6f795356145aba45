import json

import pytest

from actraj import cli
from actraj.ingest import read_archive
from actraj.nn import checkpoint


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--n", 8, "--seed", 1, "--out", root) == 0
    assert run("convert", root / "synth.csv", "--out", root) == 0
    assert run("train", root / "tracklets.jsonl", "--k", 2, "--max-epochs", 2,
               "--variant", "both", "--task", "MTL", "--deterministic", "--seed", 7,
               "--out", root / "run") == 0
    return root


def test_synth_convert_counts(pipeline, capsys):
    tracklets = read_archive(pipeline / "tracklets.jsonl")
    # 8 trajectories of 48 s at 0.4 s -> 121 states -> 6 tracklets each
    assert len(tracklets) == 48
    assert len({t.tracklet_id for t in tracklets}) == 48


def test_train_outputs(pipeline):
    run_dir = pipeline / "run"
    assert sorted(p.name for p in run_dir.iterdir()) == [
        "fold0.ckpt", "fold1.ckpt", "folds.json", "metrics.jsonl"]
    recs = [json.loads(l) for l in (run_dir / "metrics.jsonl").read_text().splitlines()]
    assert [r["record"] for r in recs] == ["header", "run", "fold", "fold", "aggregate"]
    _, meta = checkpoint.load(run_dir / "fold0.ckpt")
    assert meta["fold"] == 0 and meta["k"] == 2 and meta["val_trajectory_ids"]


def test_eval_reproduces_fold_metrics(pipeline, tmp_path):
    run_dir = pipeline / "run"
    assert run("eval", pipeline / "tracklets.jsonl", run_dir / "fold0.ckpt",
               run_dir / "fold1.ckpt", "--out", tmp_path) == 0
    train_folds = [r for r in map(json.loads, (run_dir / "metrics.jsonl").read_text().splitlines())
                   if r["record"] == "fold"]
    eval_folds = [r for r in map(json.loads, (tmp_path / "eval_metrics.jsonl").read_text()
                                 .splitlines()) if r["record"] == "fold"]
    for t, e in zip(train_folds, eval_folds):
        for key in ("ade", "fde", "acc", "f1"):
            assert e[key] == t[key]


def test_deterministic_runs_identical(pipeline, tmp_path):
    args = ["train", pipeline / "tracklets.jsonl", "--k", 2, "--max-epochs", 2,
            "--deterministic", "--seed", 7]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    a = (tmp_path / "a" / "metrics.jsonl").read_text().splitlines()[1:]
    b = (tmp_path / "b" / "metrics.jsonl").read_text().splitlines()[1:]
    assert a == b
    assert (tmp_path / "a" / "fold0.ckpt").read_bytes() == (tmp_path / "b" / "fold0.ckpt").read_bytes()


def test_jobs_matches_serial(pipeline, tmp_path):
    args = ["train", pipeline / "tracklets.jsonl", "--k", 2, "--max-epochs", 1, "--seed", 3]
    assert run(*args, "--deterministic", "--out", tmp_path / "s") == 0
    assert run(*args, "--jobs", 2, "--out", tmp_path / "p") == 0
    s = (tmp_path / "s" / "metrics.jsonl").read_text().splitlines()[1:]
    p = (tmp_path / "p" / "metrics.jsonl").read_text().splitlines()[1:]
    assert s == p


def test_predict_json(pipeline, capsys):
    tid = read_archive(pipeline / "tracklets.jsonl")[0].tracklet_id
    capsys.readouterr()
    assert run("predict", pipeline / "tracklets.jsonl", pipeline / "run" / "fold0.ckpt",
               "--tracklet-id", tid) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["tracklet_id"] == tid
    assert len(rec["predicted_positions"]) == 12 and len(rec["predicted_actions"]) == 12
    assert len(rec["observed"]) == 8
    assert run("predict", pipeline / "tracklets.jsonl", pipeline / "run" / "fold0.ckpt",
               "--tracklet-id", "nope") == 2


def test_stats_outputs(pipeline, tmp_path):
    assert run("stats", pipeline / "tracklets.jsonl", "--out", tmp_path) == 0
    rows = (tmp_path / "kinematics.csv").read_text().splitlines()
    assert rows[0].startswith("action,n,speed_mean") and rows[-1].startswith("ALL,")
    dist = json.loads((tmp_path / "distribution.json").read_text())
    assert dist["total"] == 48 * 20


def test_malformed_header_exit_2(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,agent,x\n0,1,2\n")
    assert run("convert", bad, "--out", tmp_path) == 2
    assert run("convert", tmp_path / "missing.csv", "--out", tmp_path) == 2


def test_empty_input_exit_0(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert run("convert", empty, "--out", tmp_path) == 0
    assert read_archive(tmp_path / "tracklets.jsonl") == []
    assert run("stats", tmp_path / "tracklets.jsonl", "--out", tmp_path / "s") == 0
    dist = json.loads((tmp_path / "s" / "distribution.json").read_text())
    assert dist["total"] == 0


def test_bad_config_exit_3(pipeline, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("model:\n  heads: 3\n")
    assert run("train", pipeline / "tracklets.jsonl", "--config", cfg, "--out", tmp_path) == 3
    cfg.write_text("bogus: 1\n")
    assert run("train", pipeline / "tracklets.jsonl", "--config", cfg, "--out", tmp_path) == 3
    assert run("train", pipeline / "tracklets.jsonl", "--config", tmp_path / "nope.yaml") == 3


def test_checkpoint_mismatch_exit_3(pipeline, tmp_path):
    state, meta = checkpoint.load(pipeline / "run" / "fold0.ckpt")
    meta["model_spec"]["d_model"] = 16
    checkpoint.save(tmp_path / "bad.ckpt", state, meta)
    assert run("eval", pipeline / "tracklets.jsonl", tmp_path / "bad.ckpt") == 3
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
    assert run("eval", pipeline / "tracklets.jsonl", tmp_path / "junk.ckpt") == 3


def test_config_file_and_flag_precedence(pipeline, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("k: 3\ntrain:\n  max_epochs: 1\n  seed: 1\n")
    assert run("train", pipeline / "tracklets.jsonl", "--config", cfg, "--k", 2,
               "--out", tmp_path / "r") == 0
    recs = [json.loads(l) for l in (tmp_path / "r" / "metrics.jsonl").read_text().splitlines()]
    assert recs[1]["k"] == 2 and recs[1]["train_spec"]["max_epochs"] == 1
