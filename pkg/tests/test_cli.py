"""End-to-end CLI runs through `python -m lrforge`."""

import json
import os
import subprocess
import sys

import pytest

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ESCAPE_MANIFEST = os.path.join(REPO, "manifests", "surface_escape.json")


def run_cli(*argv, cwd):
    env = {k: v for k, v in os.environ.items() if k != "LRFORGE_DB"}
    return subprocess.run([sys.executable, "-m", "lrforge", *argv],
                          capture_output=True, text=True, cwd=cwd, env=env)


def write_manifest(tmp_path, name="m.json", **overrides):
    doc = {
        "task": "toy",
        "dataset": {"kind": "blobs", "seed": 1, "n_per_class": 20,
                    "n_classes": 2, "d": 2, "separation": 10.0},
        "model": {"kind": "linear"},
        "optimizer": {"kind": "sgd"},
        "train": {"batch_size": 16, "budget": 60, "eval_every": 20, "seed": 0},
        "policy": {"family": "TRI2", "params": {"k0": 0.01, "k1": 0.2, "l": 10}},
    }
    doc.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def read_tree(root):
    out = {}
    for dirpath, _, names in os.walk(root):
        for n in names:
            p = os.path.join(dirpath, n)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


# --- eval ---


def test_eval_prints_csv(tmp_path):
    proc = run_cli("eval", "--policy", '{"family": "FIX", "params": {"k": 0.5}}',
                   "--t-max", "4", "--stride", "2", cwd=tmp_path)
    assert proc.returncode == 0
    assert proc.stdout == "iteration,lr\n0,0.5\n2,0.5\n4,0.5\n"


def test_eval_reads_policy_file_and_writes_out(tmp_path):
    policy_path = tmp_path / "p.json"
    policy_path.write_text('{"family": "STEP", "params": {"k": 1.0, "gamma": 0.5, "l": 2}}')
    out = tmp_path / "curve.csv"
    proc = run_cli("eval", "--policy", f"@{policy_path}", "--t-max", "4",
                   "--out", str(out), cwd=tmp_path)
    assert proc.returncode == 0
    assert "wrote 5 points" in proc.stdout
    assert out.read_text() == ("iteration,lr\n0,1.0\n1,1.0\n2,0.5\n3,0.5\n4,0.25\n")


def test_eval_rejects_bad_policy(tmp_path):
    proc = run_cli("eval", "--policy", '{"family": "NOPE", "params": {}}',
                   "--t-max", "4", cwd=tmp_path)
    assert proc.returncode == 2
    assert "error:" in proc.stderr


# --- train ---


def test_train_artifacts_and_byte_determinism(tmp_path):
    manifest = write_manifest(tmp_path)
    first = run_cli("train", "--manifest", manifest, "--out-dir", "out_a",
                    "--db", "db.jsonl", cwd=tmp_path)
    assert first.returncode == 0, first.stderr
    assert "final accuracy" in first.stdout
    out_a = read_tree(tmp_path / "out_a")
    assert set(out_a) == {"trace_train.csv", "trace_eval.csv", "outcome.json"}
    outcome = json.loads(out_a["outcome.json"])
    assert outcome["diverged"] is False
    assert "wall_time_sec" not in outcome  # timing never lands in artifacts

    db_before = (tmp_path / "db.jsonl").read_bytes()
    second = run_cli("train", "--manifest", manifest, "--out-dir", "out_b",
                     "--db", "db.jsonl", cwd=tmp_path)
    assert second.returncode == 0
    assert read_tree(tmp_path / "out_b") == out_a
    assert (tmp_path / "db.jsonl").read_bytes() == db_before


def test_train_records_land_in_the_db(tmp_path):
    manifest = write_manifest(tmp_path)
    run_cli("train", "--manifest", manifest, "--out-dir", "out",
            "--db", "db.jsonl", cwd=tmp_path)
    lines = (tmp_path / "db.jsonl").read_text().splitlines()
    assert len(lines) == 1
    rec = json.loads(lines[0])
    assert rec["task"] == "toy"
    assert rec["policy"]["family"] == "TRI2"
    assert rec["outcome"]["diverged"] is False


def test_train_divergence_exit_code(tmp_path):
    manifest = write_manifest(
        tmp_path, model={"kind": "mlp", "hidden": 8},
        train={"batch_size": 16, "budget": 100, "eval_every": 20, "seed": 0},
        policy={"family": "FIX", "params": {"k": 1e12}})
    proc = run_cli("train", "--manifest", manifest, "--out-dir", "out",
                   "--db", "db.jsonl", cwd=tmp_path)
    assert proc.returncode == 4
    assert "diverged        yes" in proc.stdout
    outcome = json.loads((tmp_path / "out" / "outcome.json").read_text())
    assert outcome["diverged"] is True


def test_missing_manifest_is_an_io_error(tmp_path):
    proc = run_cli("train", "--manifest", "nope.json", "--out-dir", "out",
                   cwd=tmp_path)
    assert proc.returncode == 3
    assert "cannot read manifest" in proc.stderr


def test_manifest_validation_exit_code(tmp_path):
    manifest = write_manifest(tmp_path, policy={"family": "NOPE", "params": {}})
    proc = run_cli("train", "--manifest", manifest, "--out-dir", "out",
                   cwd=tmp_path)
    assert proc.returncode == 2
    bad_section = write_manifest(tmp_path, name="m2.json", train={"budget": -5})
    proc = run_cli("train", "--manifest", bad_section, "--out-dir", "out",
                   cwd=tmp_path)
    assert proc.returncode == 2
    assert "budget" in proc.stderr


# --- tune ---


def tune_manifest(tmp_path, **extra):
    search = {"templates": [{"family": "FIX", "params": {"k": 1.0}},
                            {"family": "EXP", "params": {"k": 1.0, "gamma": 0.97}}],
              "lambda_grid": [0.01, 0.1], "trials_per_point": 2}
    search.update(extra)
    return write_manifest(tmp_path, name="tune.json", search=search)


def test_tune_outputs_and_worker_invariance(tmp_path):
    manifest = tune_manifest(tmp_path)
    first = run_cli("tune", "--manifest", manifest, "--workers", "1",
                    "--out-dir", "out_a", "--db", "db.jsonl", cwd=tmp_path)
    assert first.returncode == 0, first.stderr
    out_a = read_tree(tmp_path / "out_a")
    assert set(out_a) == {"leaderboard.csv", "tune_result.json"}
    db_before = (tmp_path / "db.jsonl").read_bytes()
    assert len(db_before.splitlines()) == 8  # 4 cells x 2 trials

    second = run_cli("tune", "--manifest", manifest, "--workers", "4",
                     "--out-dir", "out_b", "--db", "db.jsonl", cwd=tmp_path)
    assert second.returncode == 0
    assert read_tree(tmp_path / "out_b") == out_a
    assert (tmp_path / "db.jsonl").read_bytes() == db_before

    board = json.loads(out_a["tune_result.json"])
    assert board["objective"] == "max_accuracy"
    assert len(board["entries"]) == 4
    assert board["entries"][0]["rank"] == 1


def test_tune_all_diverged_exit_code(tmp_path):
    manifest = write_manifest(
        tmp_path, name="tune.json", model={"kind": "mlp", "hidden": 8},
        train={"batch_size": 16, "budget": 100, "eval_every": 50, "seed": 0},
        search={"templates": [{"family": "FIX", "params": {"k": 1e12}}],
                "lambda_grid": [1.0, 10.0]})
    proc = run_cli("tune", "--manifest", manifest, "--workers", "1",
                   "--out-dir", "out", "--db", "db.jsonl", cwd=tmp_path)
    assert proc.returncode == 4
    assert "error:" in proc.stderr


def test_tune_with_boundaries_writes_a_composite(tmp_path):
    manifest = write_manifest(
        tmp_path, name="compose.json",
        search={"templates": [{"family": "FIX", "params": {"k": 1.0}}],
                "lambda_grid": [0.05, 0.2], "boundaries": [0, 40, 80]})
    proc = run_cli("tune", "--manifest", manifest, "--workers", "1",
                   "--out-dir", "out", "--db", "db.jsonl", cwd=tmp_path)
    assert proc.returncode == 0, proc.stderr
    files = read_tree(tmp_path / "out")
    assert set(files) == {"composite.json", "leaderboard_phase0.csv",
                          "leaderboard_phase1.csv", "trace_train.csv",
                          "trace_eval.csv", "outcome.json"}
    composite = json.loads(files["composite.json"])
    assert composite["family"] == "MULTI"
    segs = composite["params"]["segments"]
    assert [(s["start"], s["end"]) for s in segs] == [(0, 40), (40, 80)]
    assert "phase 0 [0:40) winner:" in proc.stdout
    # phase records are namespaced so they never collide with plain runs
    tasks = {json.loads(l)["task"] for l in
             (tmp_path / "db.jsonl").read_text().splitlines()}
    assert tasks == {"toy#phase0", "toy#phase1", "toy"}


# --- range-test ---


def test_range_test_writes_summary(tmp_path):
    manifest = write_manifest(
        tmp_path, name="rt.json",
        train={"batch_size": 16, "budget": 400, "eval_every": 100, "seed": 0},
        range_test={"k_grid": [1e-6, 0.01, 0.1], "tolerance": 0.05})
    proc = run_cli("range-test", "--manifest", manifest, "--workers", "1",
                   "--out-dir", "out", "--db", "db.jsonl", cwd=tmp_path)
    assert proc.returncode == 0, proc.stderr
    assert "best k" in proc.stdout and "bracket [" in proc.stdout
    summary = json.loads((tmp_path / "out" / "range_test.json").read_text())
    assert summary["ks"] == [1e-6, 0.01, 0.1]
    assert summary["trial_budget"] == 40
    assert len(summary["bracket"]) == 2
    assert summary["k_best"] in summary["ks"]
    assert len((tmp_path / "db.jsonl").read_text().splitlines()) == 3


# --- top-k ---


def test_top_k_lists_stored_records(tmp_path):
    manifest = write_manifest(tmp_path)
    run_cli("train", "--manifest", manifest, "--out-dir", "out",
            "--db", "db.jsonl", cwd=tmp_path)
    proc = run_cli("top-k", "--task", "toy", "--k", "5", "--db", "db.jsonl",
                   cwd=tmp_path)
    assert proc.returncode == 0
    assert "top 1 of 1 records for toy" in proc.stdout
    assert "TRI2" in proc.stdout
    empty = run_cli("top-k", "--task", "missing", "--db", "db.jsonl", cwd=tmp_path)
    assert empty.returncode == 0
    assert "no records" in empty.stdout


# --- surface ---


def test_surface_traces_the_shipped_manifest(tmp_path):
    proc = run_cli("surface", "--manifest", ESCAPE_MANIFEST,
                   "--out-dir", str(tmp_path / "out"),
                   cwd=tmp_path)
    assert proc.returncode == 0, proc.stderr
    assert {"path_fix.csv", "path_nstep.csv", "path_triexp.csv"} <= set(
        os.listdir(tmp_path / "out"))
    header = (tmp_path / "out" / "path_fix.csv").read_text().splitlines()[0]
    assert header == "iteration,x,y,value"
    assert "fix" in proc.stdout and "nstep" in proc.stdout


def test_surface_duplicate_names_rejected(tmp_path):
    doc = {"surface": {"kind": "quadratic", "a": [[1.0, 0.0], [0.0, 1.0]]},
           "start": [1.0, 1.0], "iterations": 5,
           "policies": [{"name": "p", "policy": {"family": "FIX", "params": {"k": 0.1}}},
                        {"name": "p", "policy": {"family": "FIX", "params": {"k": 0.2}}}]}
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    proc = run_cli("surface", "--manifest", str(path),
                   "--out-dir", str(tmp_path / "out"), cwd=tmp_path)
    assert proc.returncode == 2
    assert "duplicate policy name" in proc.stderr
