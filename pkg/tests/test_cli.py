import io
import json

import numpy as np
import pytest

from ticd.cli import derive_seed, main

SMALL = {
    "seed": 3,
    "gen": {"d": 3, "p": 1, "Q": 3, "T": 300, "targets": [[], [0], [2]]},
    "discovery": {"subproblem_steps": 30, "max_outer": 2, "batch_size": 16},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


@pytest.fixture
def generated(tmp_path, config):
    out = tmp_path / "gen"
    assert main(["--config", config, "--out", str(out), "gen"]) == 0
    return out


def test_derive_seed_is_stable_and_stage_specific():
    assert derive_seed(0, "gen") == derive_seed(0, "gen")
    assert derive_seed(0, "gen") != derive_seed(0, "discover")
    assert derive_seed(0, "gen") != derive_seed(1, "gen")


def test_gen_writes_manifest_and_provenance(generated):
    names = {p.name for p in generated.iterdir()}
    assert {"dataset.json", "ground_truth.json", "config.json", "inputs.json"} <= names
    truth = json.loads((generated / "ground_truth.json").read_text())
    assert truth["targets"] == [[], [0], [2]]
    cfg = json.loads((generated / "config.json").read_text())
    assert cfg["gen"]["T"] == 300 and cfg["seed"] == 3


def test_gen_refuses_to_overwrite(tmp_path, config, generated, capsys):
    assert main(["--config", config, "--out", str(generated), "gen"]) == 2
    assert "--force" in capsys.readouterr().err
    assert main(["--config", config, "--out", str(generated), "--force", "gen"]) == 0


def test_discover_eval_round_trip(tmp_path, config, generated, capsys):
    out = tmp_path / "fit"
    assert main(["--config", config, "--out", str(out), "discover", "--data", str(generated), "--perfect"]) == 0
    res = json.loads((out / "result.json").read_text())
    assert res["variables"] == ["x1", "x2", "x3"] and len(res["family"]) == 3
    inputs = json.loads((out / "inputs.json").read_text())
    assert any(k.startswith("dataset") for k in inputs)
    capsys.readouterr()
    ev = tmp_path / "ev"
    rc = main(["--out", str(ev), "eval", str(out / "result.json"), "--truth", str(generated / "ground_truth.json")])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert {"shd", "sid", "target_f1", "n_edges"} <= set(summary)
    assert "±" in summary["shd"]["formatted"]
    report = json.loads((ev / "metrics.json").read_text())
    assert report["rows"][0]["shd"] == summary["shd"]["mean"]


def test_eval_notices_missing_rules(tmp_path, config, generated, caplog):
    out = tmp_path / "fit"
    main(["--config", config, "--out", str(out), "discover", "--data", str(generated)])
    with caplog.at_level("INFO", logger="ticd"):
        main(["--out", str(tmp_path / "ev"), "eval", str(out / "result.json"),
              "--truth", str(generated / "ground_truth.json")])
    assert any("no layout rules" in r.message for r in caplog.records)
    assert main(["--out", str(tmp_path / "ev2"), "eval", str(out / "result.json")]) == 2


def test_known_mode_needs_targets(tmp_path, config, generated):
    args = ["--config", config, "--out", str(tmp_path / "k"), "discover", "--data", str(generated), "--mode", "known"]
    assert main(args) == 2


def test_known_mode_with_targets(tmp_path, config, generated):
    out = tmp_path / "k"
    rc = main(["--config", config, "--out", str(out), "discover", "--data", str(generated), "--mode", "known",
               "--targets", str(generated / "ground_truth.json")])
    assert rc == 0
    assert json.loads((out / "result.json").read_text())["family"] == [[], [0], [2]]


def test_data_errors_exit_3(tmp_path, config, capsys):
    assert main(["--config", config, "--out", str(tmp_path / "x"), "discover", "--data", str(tmp_path / "none")]) == 3
    assert capsys.readouterr().err.startswith("error:")
    assert main(["--out", str(tmp_path / "e"), "eval", str(tmp_path / "nothing*.json"), "--truth", "t"]) == 3


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"unknown_section": {}}))
    assert main(["--config", str(bad), "--out", str(tmp_path / "o"), "gen"]) == 2
    assert main(["--seed", "-1", "--out", str(tmp_path / "o"), "gen"]) == 2
    assert main(["gen"]) == 2  # no --out
    assert main(["--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o"), "gen"]) == 2


def test_missing_api_key_exit_4(tmp_path, generated, monkeypatch, capsys):
    monkeypatch.delenv("TICD_TEST_NO_KEY", raising=False)
    cfg = dict(SMALL, client={"kind": "http", "endpoint": "http://127.0.0.1:9", "model": "m",
                              "api_key_env": "TICD_TEST_NO_KEY"}, init={"source": "client"})
    path = tmp_path / "http.json"
    path.write_text(json.dumps(cfg))
    rc = main(["--config", str(path), "--out", str(tmp_path / "p"), "pipeline", "--data", str(generated)])
    assert rc == 4
    err = capsys.readouterr().err
    assert "stage meta-init" in err and "TICD_TEST_NO_KEY" in err


def test_pipeline_with_stub_is_reproducible(tmp_path, config):
    stub = tmp_path / "answer.txt"
    stub.write_text("Reasoning...\nAnswer: [(x1, x2, 0), (x3, x3, 1)]")
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["--config", config, "--out", str(out), "pipeline", "--init", f"stub:{stub}"]) == 0
        runs.append(out)
    for name in ("result.json", "metrics.json", "init_matrix.json", "llm/relations.json", "data/dataset.json"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes(), name
    M = np.array(json.loads((runs[0] / "init_matrix.json").read_text())["matrix"])
    assert M[0, 1] == 1 and M[3 + 2, 2] == 1 and M.sum() == 2
    assert (runs[0] / "llm" / "prompt.txt").read_text().count("Answer:") >= 1


def test_init_matrix_file(tmp_path, config, generated):
    M = np.zeros((6, 6), int)
    M[0, 1] = 1
    f = tmp_path / "m.json"
    f.write_text(json.dumps({"matrix": M.tolist()}))
    out = tmp_path / "fit"
    assert main(["--config", config, "--out", str(out), "discover", "--data", str(generated),
                 "--init-matrix", str(f)]) == 0
    assert json.loads((out / "init_matrix.json").read_text())["matrix"] == M.tolist()
    f.write_text(json.dumps({"matrix": np.zeros((3, 3)).tolist()}))
    assert main(["--config", config, "--out", str(tmp_path / "fit2"), "discover", "--data", str(generated),
                 "--init-matrix", str(f)]) == 3
    assert main(["--config", config, "--out", str(tmp_path / "fit3"), "discover", "--data", str(generated),
                 "--init", "client", "--init-matrix", str(f)]) == 2


def test_parse_from_stdin(monkeypatch, capsys):
    monkeypatch.setattr("sys.stdin", io.StringIO("Answer: [(a, b, 0), (b, a, 1)]"))
    assert main(["parse", "-", "--names", "a,b", "--p", "1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["variables"] == ["a", "b"] and doc["p"] == 1
    assert sorted(map(tuple, doc["tuples"])) == [(0, 1, 0), (1, 0, 1)]


def test_parse_writes_files_and_strict_fails(tmp_path):
    resp = tmp_path / "r.txt"
    resp.write_text("Answer: [(a, b, 0), (zz, b, 0)]")
    out = tmp_path / "parsed"
    assert main(["--out", str(out), "parse", str(resp), "--names", "a,b"]) == 0
    assert (out / "relations.json").exists() and (out / "init_matrix.json").exists()
    assert main(["parse", str(resp), "--names", "a,b", "--strict"]) == 3


def test_prompt_command(tmp_path, capsys):
    assert main(["prompt", "--names", "a,b,c", "--p", "2", "--cot", "zero_shot"]) == 0
    text = capsys.readouterr().out
    assert "3 variables (a, b, c)" in text and "Answer:" in text
    out = tmp_path / "pr"
    assert main(["--out", str(out), "prompt", "--preset", "datacenter"]) == 0
    text = (out / "prompt.txt").read_text()
    assert "## Prompt H (Hint)" in text and "38 variables" in text
    assert main(["prompt"]) == 2


def test_discover_on_segmented_series(tmp_path, config):
    rng = np.random.default_rng(4)
    Y = rng.normal(size=(1500, 3))
    for t, j in ((500, 0), (1000, 2)):
        Y[t, j] += 10.0
    csv = tmp_path / "telemetry.csv"
    np.savetxt(csv, Y, delimiter=",", header="a,b,c", comments="")
    cfg = dict(SMALL, segmentation={"n_sigma": 5.0, "window_len": 120})
    path = tmp_path / "seg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "fit"
    assert main(["--config", str(path), "--out", str(out), "discover", "--series", str(csv)]) == 0
    res = json.loads((out / "result.json").read_text())
    assert res["variables"] == ["a", "b", "c"] and len(res["family"]) == 3
    manifest = json.loads((out / "segmented" / "dataset.json").read_text())
    assert [r["observational"] for r in manifest["regimes"]] == [True, False, False]
    assert main(["--out", str(tmp_path / "x"), "discover", "--series", str(csv), "--data", "d"]) == 2
