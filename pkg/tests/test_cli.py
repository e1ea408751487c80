import json

import numpy as np
from click.testing import CliRunner

from iltab import solvers
from iltab.cli import main
from iltab.mdp import save_mdp

from conftest import make_mdp


def write_mdp(tmp_path, name="m.json", seed=12345):
    m = make_mdp(2, (2, 2), (2, 2), 0.9, seed)
    path = tmp_path / name
    save_mdp(m, str(path))
    return m, str(path)


def test_validate_ok(tmp_path):
    _, path = write_mdp(tmp_path)
    res = CliRunner().invoke(main, ["validate", path])
    assert res.exit_code == 0
    assert res.output.strip() == "ok"


def test_validate_bad_rows_exit_2(tmp_path):
    _, path = write_mdp(tmp_path)
    with open(path) as f:
        obj = json.load(f)
    obj["transition"][0][0][0] += 0.5
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(obj))
    res = CliRunner().invoke(main, ["validate", str(bad)])
    assert res.exit_code == 2
    assert "row" in res.output.lower() or "sum" in res.output.lower()


def test_validate_unparseable_exit_2(tmp_path):
    p = tmp_path / "junk.json"
    p.write_text("{not json")
    res = CliRunner().invoke(main, ["validate", str(p)])
    assert res.exit_code == 2


def test_solve_matches_library(tmp_path):
    m, path = write_mdp(tmp_path)
    res = CliRunner().invoke(main, ["solve", "--mdp", path])
    assert res.exit_code == 0
    payload = json.loads(res.output)
    q = solvers.value_iteration(m)
    assert np.allclose(payload["q"], q, atol=1e-8)
    assert payload["greedy"] == list(q.argmax(axis=1))


def test_env_roundtrip_and_iql(tmp_path):
    out = tmp_path / "env.json"
    res = CliRunner().invoke(main, ["env", "synthetic3", "--grouping", "12",
                                    "--out", str(out)])
    assert res.exit_code == 0
    csv = tmp_path / "run.csv"
    res2 = CliRunner().invoke(main, ["--seed", "1", "iql", "--synthetic", "12",
                                     "--k", "200", "--alpha", "0.05", "--k0", "0.2",
                                     "--out", str(csv)])
    assert res2.exit_code == 0
    lines = csv.read_text().splitlines()
    assert lines[0] == "step,seed,agent,metric,value"


def test_inac_run_csv(tmp_path):
    csv = tmp_path / "inac.csv"
    res = CliRunner().invoke(main, ["inac", "--synthetic", "23", "--t", "2", "--k", "20",
                                    "--eta-mode", "policy-space-schedule",
                                    "--eta0", "0.2", "--eta-growth", "plain",
                                    "--epsilon", "0.1", "--epsilon-decay",
                                    "--out", str(csv)])
    assert res.exit_code == 0
    assert csv.read_text().startswith("step,seed,agent,metric,value\n")


def test_deplevel_small_mdp(tmp_path):
    _, path = write_mdp(tmp_path)
    res = CliRunner().invoke(main, ["deplevel", "--mdp", path])
    assert res.exit_code == 0
    payload = json.loads(res.output)
    assert 0.0 <= payload["value"] <= 1.0
    assert payload["certified_lower"] is None


def test_deplevel_grouping_argument(tmp_path):
    m = make_mdp(3, (2, 2, 2), (2, 2, 2), 0.9, 5)
    path = tmp_path / "m3.json"
    save_mdp(m, str(path))
    res = CliRunner().invoke(main, ["deplevel", "--mdp", str(path), "--grouping", "01,2"])
    assert res.exit_code == 0
    assert 0.0 <= json.loads(res.output)["value"] <= 1.0


def test_deplevel_brute_too_large_exit_3(tmp_path):
    _, path = write_mdp(tmp_path)
    res = CliRunner().invoke(main, ["deplevel", "--mdp", path,
                                    "--brute-resolution", "64"])
    assert res.exit_code == 3


def test_deplevel_needs_exactly_one_source():
    res = CliRunner().invoke(main, ["deplevel"])
    assert res.exit_code == 2


def test_mixing_outputs(tmp_path):
    out = tmp_path / "mix.csv"
    res = CliRunner().invoke(main, ["mixing", "--synthetic", "none", "--horizon", "32",
                                    "--out", str(out)])
    assert res.exit_code == 0
    payload = json.loads(res.output)
    assert payload["sigma_prime"] > 0
    lines = out.read_text().splitlines()
    assert lines[0] == "k,gap"
    assert len(lines) == 34  # header + k = 0..horizon


def test_verify_bounds_synthetic_grouping():
    res = CliRunner().invoke(main, ["verify-bounds", "--synthetic", "12"])
    assert res.exit_code == 0
    assert "FAIL" not in res.output
    assert "pass optimal_q_gap" in res.output


def test_experiment_config_and_rerun_identical(tmp_path):
    _, path = write_mdp(tmp_path)
    conf = {"algorithm": "iql", "env": {"file": path, "gamma": 0.9},
            "runs": 2, "train_steps": 300, "label": "exp",
            "iql": {"alpha": 0.1, "k0": 1.0, "eval_stride": 150},
            "test_episode_len": 100, "make_plot": False}
    cpath = tmp_path / "conf.json"
    cpath.write_text(json.dumps(conf))
    outs = []
    for sub in ("o1", "o2"):
        d = tmp_path / sub
        res = CliRunner().invoke(main, ["--out-dir", str(d), "experiment",
                                        "--config", str(cpath)])
        assert res.exit_code == 0, res.output
        outs.append(json.loads(res.output.strip().splitlines()[-1]))
    for key in ("run_csv", "aggregate_csv"):
        with open(outs[0][key], "rb") as f:
            a = f.read()
        with open(outs[1][key], "rb") as f:
            b = f.read()
        assert a == b


def test_experiment_renders_plot(tmp_path):
    res = CliRunner().invoke(main, ["--out-dir", str(tmp_path), "experiment",
                                    "--algorithm", "iql", "--synthetic", "12",
                                    "--runs", "2", "--train-steps", "200",
                                    "--label", "p"])
    assert res.exit_code == 0, res.output
    payload = json.loads(res.output.strip().splitlines()[-1])
    with open(payload["plot"], "rb") as f:
        assert f.read(8) == b"\x89PNG\r\n\x1a\n"
