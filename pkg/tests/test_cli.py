import hashlib
import json

import pytest
from click.testing import CliRunner

from idsxai.cli import cli


def invoke(*args, env=None):
    return CliRunner().invoke(cli, [str(a) for a in args], env=env, catch_exceptions=False)


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, synth_files):
    out = tmp_path_factory.mktemp("cli") / "out"
    train, test = synth_files
    r = invoke("prepare", "--out", out, "--train", train, "--test", test, "--seed", 3)
    assert r.exit_code == 0, r.output
    r = invoke("train", "--out", out, "--model", "cart", "--model", "linear", "--depth-grid", "2,4", "--folds", 3,
               "--epochs", 50)
    assert r.exit_code == 0, r.output
    return out


def test_prepare_outputs(workdir):
    assert (workdir / "manifest.json").exists()
    for name in ("train.npz", "test.npz", "fit_train.npz", "preprocessor.json"):
        assert (workdir / "prepared" / name).exists()
    dist = (workdir / "reports" / "class_distribution.csv").read_text().splitlines()
    assert dist[0] == "category,train_size,train_pct,test_size,test_pct"
    assert (workdir / "reports" / "class_distribution.png").exists()
    assert (workdir / "reports" / "correlation.csv").exists()


def test_train_and_evaluate(workdir):
    assert (workdir / "models" / "cart.json").exists() and (workdir / "models" / "cart.txt").exists()
    assert (workdir / "reports" / "depth_scores_cart.png").exists()
    r = invoke("evaluate", "--out", workdir, "--format", "json")
    assert r.exit_code == 0
    doc = json.loads(r.output)
    assert doc["linear"]["accuracy"] > 0.8
    for kind in ("cart", "linear"):
        assert (workdir / "reports" / f"metrics_{kind}.json").exists()
        assert (workdir / "reports" / f"metrics_{kind}.png").exists()


def test_explain_writes_figures_next_to_json(workdir):
    r = invoke("explain", "--out", workdir, "--row", 0, "--row", 3, "--m", 5, "--n-samples", 300, "--n-iter", 2)
    assert r.exit_code == 0, r.output
    assert "± " in r.output and "MALICIOUS" in r.output
    rep, exp = workdir / "reports", workdir / "explanations"
    for kind in ("cart", "linear"):
        for ext in ("json", "csv", "txt", "png"):
            assert (rep / f"global_{kind}.{ext}").exists()
        for row in (0, 3):
            for ext in ("json", "txt", "png"):
                assert (exp / f"{kind}_row{row}.{ext}").exists()
        assert (exp / f"{kind}_row0.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    local = json.loads((exp / "cart_row0.json").read_text())
    assert len(local["entries"]) == 5 and local["instance_id"] == 0


def test_detect_gating(workdir):
    r = invoke("detect", "--out", workdir, "--rows", "0:30", "--threshold", 100, "--m", 3, "--n-samples", 200)
    assert r.exit_code == 0, r.output
    lines = (workdir / "reports" / "detections_linear.jsonl").read_text().splitlines()
    reports = [json.loads(x) for x in lines]
    assert len(reports) == 30 and all(d["warning"] for d in reports)
    assert all(d["local"] is not None for d in reports)
    r = invoke("detect", "--out", workdir, "--rows", "0,1,2", "--threshold", 0)
    reports = [json.loads(x) for x in (workdir / "reports" / "detections_cart.jsonl").read_text().splitlines()]
    assert [d["instance_id"] for d in reports] == [0, 1, 2]
    assert all(d["warning"] == (d["confidence_percent"] <= 0) for d in reports)


def test_rerun_prepare_is_byte_identical(tmp_path, synth_files):
    train, test = synth_files
    hashes = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert invoke("prepare", "--out", out, "--train", train, "--test", test).exit_code == 0
        hashes.append({p.name: digest(p) for p in sorted((out / "prepared").iterdir())})
    assert hashes[0] == hashes[1]


def test_missing_file_exits_2(tmp_path):
    missing = tmp_path / "nope.csv"
    r = invoke("prepare", "--out", tmp_path / "o", "--train", missing)
    assert r.exit_code == 2 and str(missing) in r.output


def test_evaluate_without_prepare_exits_2(tmp_path):
    r = invoke("evaluate", "--out", tmp_path)
    assert r.exit_code == 2 and "prepare" in r.output


def test_model_format_mismatch_exits_3(tmp_path, synth_files):
    train, test = synth_files
    out = tmp_path / "o"
    assert invoke("prepare", "--out", out, "--train", train, "--test", test, "--balancing", "none").exit_code == 0
    assert invoke("train", "--out", out, "--model", "linear", "--epochs", 5).exit_code == 0
    path = out / "models" / "linear.json"
    doc = json.loads(path.read_text())
    doc["format"] = 99
    path.write_text(json.dumps(doc))
    r = invoke("evaluate", "--out", out)
    assert r.exit_code == 3 and "artifact mismatch" in r.output


def test_options_from_environment(tmp_path, synth_files):
    train, _ = synth_files
    out = tmp_path / "o"
    r = invoke("prepare", "--out", out, "--train", train, env={"IDSXAI_PREPARE_SEED": "17",
                                                                 "IDSXAI_PREPARE_BALANCING": "none"})
    assert r.exit_code == 0
    config = json.loads((out / "manifest.json").read_text())["config"]
    assert config["seed"] == 17 and config["balancing"] == "none"


def test_synth_and_run(tmp_path):
    data = tmp_path / "d.csv"
    assert invoke("synth", data, "--rows", 300, "--seed", 2).exit_code == 0
    r = invoke("run", "--out", tmp_path / "o", "--train", data, "--max-depth", 3, "--row", 1, "--n-samples", 200,
               "--n-iter", 1, "--format", "json")
    assert r.exit_code == 0, r.output
    assert "cart" in json.loads(r.output)
    assert (tmp_path / "o" / "explanations" / "cart_row1.png").exists()


def test_explain_json_is_one_document(workdir):
    r = invoke("explain", "--out", workdir, "--row", 1, "--m", 3, "--n-samples", 200, "--n-iter", 1,
               "--format", "json")
    doc = json.loads(r.output)
    assert set(doc) == {"cart", "linear"} and len(doc["cart"]["local"]) == 1
