import json

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from binar.cli import main
from binar.distributions import RngStream
from binar.estimators import estimate
from binar.io import (
    TREE_HEADER,
    ConfigError,
    TreeFormatError,
    dumps_json,
    experiment_config,
    load_config,
    merge_config,
    params_from_config,
    read_tree_csv,
    tree_from_csv,
    tree_to_csv,
    write_trajectory_csv,
    write_tree_csv,
)
from binar.model import preset
from binar.tree import BinarTree, simulate_tree, tree_size

HAND_CSV = "label,generation,value\n1,0,1\n2,1,2\n3,1,0\n"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# --- tree CSV ----------------------------------------------------------------

def test_tree_csv_format():
    text = tree_to_csv(BinarTree.from_labels([1, 2, 0]))
    assert text == HAND_CSV
    assert "\r" not in text


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 6).flatmap(lambda d: st.lists(st.integers(0, 10**6), min_size=tree_size(d), max_size=tree_size(d))))
def test_tree_csv_round_trip(values):
    tree = BinarTree.from_labels(values)
    assert tree_from_csv(tree_to_csv(tree)) == tree


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("", 1, "empty"),
        ("label,value\n1,1\n", 1, "header"),
        (TREE_HEADER + "\n", 2, "no data"),
        (TREE_HEADER + "\n1,0,1\n3,1,0\n2,1,2\n", 3, "gap"),
        (TREE_HEADER + "\n1,0,1\n1,0,1\n2,1,2\n", 3, "duplicate"),
        (TREE_HEADER + "\n1,0,1\n2,1,2\n3,1,x\n", 4, "not a decimal"),
        (TREE_HEADER + "\n1,0,1\n2,1,-2\n3,1,0\n", 3, "negative"),
        (TREE_HEADER + "\n1,0,1\n2,2,2\n3,1,0\n", 3, "generation"),
        (TREE_HEADER + "\n1,0,1\n2,1,2\n", 3, "complete tree"),
        (TREE_HEADER + "\n1,0,1\n2,1\n3,1,0\n", 3, "3 fields"),
        (TREE_HEADER + "\r\n1,0,1\r\n2,1,2\r\n3,1,0\r\n", 2, "CR"),
        (TREE_HEADER + "\n1,0, 1\n", 2, "not a decimal"),
    ],
)
def test_tree_csv_rejections(text, line, fragment):
    with pytest.raises(TreeFormatError) as info:
        tree_from_csv(text)
    assert info.value.line == line
    assert fragment in str(info.value)


def test_tree_csv_file_round_trip(tmp_path, p1):
    tree = simulate_tree(p1, 8, RngStream(1))
    write_tree_csv(tree, tmp_path / "t.csv")
    assert read_tree_csv(tmp_path / "t.csv") == tree
    (tmp_path / "bad.csv").write_bytes(b"label,generation,value\n1,0,\xff\n")
    with pytest.raises(TreeFormatError):
        read_tree_csv(tmp_path / "bad.csv")


# --- JSON and trajectory CSV -----------------------------------------------

def test_json_is_sorted_and_handles_numpy():
    text = dumps_json({"b": np.array([1.0, 2.0]), "a": np.int64(3)})
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": 3, "b": [1.0, 2.0]}


def test_trajectory_csv(tmp_path, p1):
    from binar.experiments import ExperimentConfig, Truth, run_replicates
    from binar.model import derive_moments

    traj = run_replicates(ExperimentConfig(p1, n_min=1, n_max=3, replicates=2, seed=1))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path, Truth.from_moments(derive_moments(p1)), np.eye(2))
    lines = path.read_text().splitlines()
    assert lines[0] == "replicate,n,stat,value"
    rows = [line.split(",") for line in lines[1:]]
    assert {r[2] for r in rows} >= {"a_hat", "rho_hat", "theta_error_sq", "qsl_running_average"}
    first = [r for r in rows if r[0] == "0" and r[1] == "1" and r[2] == "a_hat"][0]
    assert float(first[3]) == traj[0].theta[0, 0]


# --- configuration -----------------------------------------------------------

def test_defaults_build_p1():
    cfg = load_config()
    assert params_from_config(cfg) == preset("P1")
    exp = experiment_config(cfg)
    assert (exp.n_min, exp.n_max, exp.replicates, exp.clt_generation, exp.clt_replicates) == (6, 14, 200, 12, 1000)
    assert exp.tolerances.qsl_rel_tol == 0.25 and exp.tolerances.clt_frobenius == 0.15


@pytest.mark.parametrize(
    "override, path",
    [
        ({"bogus": 1}, "bogus"),
        ({"model": {"offspring_a": {"shape": 2}}}, "model.offspring_a.shape"),
        ({"experiment": {"replicates": "many"}}, "experiment.replicates"),
        ({"experiment": {"replicates": True}}, "experiment.replicates"),
        ({"tolerances": {"ks_alpha": "small"}}, "tolerances.ks_alpha"),
        ({"model": 3}, "model"),
    ],
)
def test_schema_violations_report_key_path(override, path):
    with pytest.raises(ConfigError) as info:
        merge_config(override)
    assert info.value.path == path


@settings(max_examples=50)
@given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz_", min_size=1, max_size=12))
def test_unknown_top_level_keys_rejected(key):
    if key in load_config():
        return
    with pytest.raises(ConfigError):
        merge_config({key: 1})


def test_invalid_model_values_report_path():
    cfg = merge_config({"model": {"offspring_b": {"family": "poisson", "mean": 1.2}}})
    with pytest.raises(ConfigError) as info:
        params_from_config(cfg)
    assert info.value.path == "model.offspring_b"


def test_truth_override_validation():
    cfg = merge_config({"experiment": {"truth": {"theta": [1, 2]}}})
    with pytest.raises(ConfigError) as info:
        experiment_config(cfg)
    assert info.value.path == "experiment.truth.theta"
    cfg = merge_config({"experiment": {"truth": {"rho": 0.5}}})
    assert experiment_config(cfg).truth.rho == 0.5


# --- CLI -------------------------------------------------------------------------

def test_cli_estimate_hand_tree(tmp_path, capsys):
    (tmp_path / "t.csv").write_text(HAND_CSV)
    code, out, _ = run(["estimate", tmp_path / "t.csv", "-n", "1"], capsys)
    assert code == 0
    doc = json.loads(out)
    th = doc["theta"]
    assert [th["a"], th["c"], th["b"], th["d"]] == pytest.approx([0.5, 0.5, 0.0, 0.0], abs=1e-12)
    assert th["regularized"] is True


def test_cli_estimate_csv_format(tmp_path, capsys):
    (tmp_path / "t.csv").write_text(HAND_CSV)
    code, out, _ = run(["estimate", tmp_path / "t.csv", "--format", "csv"], capsys)
    assert code == 0
    assert out.splitlines()[0] == "key,value"
    assert "theta.a,0.5" in out.splitlines()


def test_cli_simulate_depth_zero(capsys):
    code, out, _ = run(["simulate", "--depth", "0"], capsys)
    assert code == 0
    assert out == "label,generation,value\n1,0,1\n"


def test_cli_round_trip_and_byte_stability(tmp_path, capsys, p1):
    for d in ("a", "b"):
        assert run(["simulate", "--depth", "9", "--seed", "42", "--out", tmp_path / d], capsys)[0] == 0
    first = (tmp_path / "a" / "tree.csv").read_bytes()
    assert first == (tmp_path / "b" / "tree.csv").read_bytes()
    code, out, _ = run(["estimate", tmp_path / "a" / "tree.csv"], capsys)
    assert code == 0
    from binar.cli import _SIMULATE_TAG

    in_memory = estimate(simulate_tree(p1, 9, RngStream(42).child(_SIMULATE_TAG)))
    assert out == dumps_json(in_memory.to_dict())
    assert run(["estimate", tmp_path / "a" / "tree.csv"], capsys)[1] == out


def test_cli_validation_exit_codes(tmp_path, capsys):
    (tmp_path / "gap.csv").write_text("label,generation,value\n1,0,1\n3,1,2\n")
    code, _, err = run(["estimate", tmp_path / "gap.csv"], capsys)
    assert code == 2 and "line 3" in err
    (tmp_path / "bad.yaml").write_text(yaml.safe_dump({"model": {"bogus": 1}}))
    code, _, err = run(["moments", "--config", tmp_path / "bad.yaml"], capsys)
    assert code == 2 and "model.bogus" in err
    (tmp_path / "single.csv").write_text("label,generation,value\n1,0,4\n")
    assert run(["estimate", tmp_path / "single.csv"], capsys)[0] == 2
    (tmp_path / "t.csv").write_text(HAND_CSV)
    assert run(["estimate", tmp_path / "t.csv", "-n", "2"], capsys)[0] == 2
    assert run(["estimate", tmp_path / "missing.csv"], capsys)[0] == 2
    assert run(["simulate", "--depth", "30"], capsys)[0] == 2
    assert run(["verify", "speed"], capsys)[0] == 2
    with pytest.raises(SystemExit) as info:
        main(["moments", "--seed", "-1"])
    assert info.value.code == 2


def test_cli_moments(capsys):
    code, out, _ = run(["moments"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["all_passed"] is True
    assert doc["moments"]["upsilon"] == pytest.approx(1.0)
    code, out, _ = run(["moments", "--format", "csv"], capsys)
    assert "moments.nu2,1.48" in out.splitlines()


def test_cli_limits_both_routes(tmp_path, capsys):
    (tmp_path / "c.yaml").write_text(yaml.safe_dump({"limits": {"draws": 20000, "tree_depth": 10}}))
    code, _, _ = run(["limits", "--config", tmp_path / "c.yaml", "--route", "both", "--out", tmp_path], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "limits.json").read_text())
    assert doc["mc"]["samples"] == 20000 and doc["tree"]["route"] == "tree"
    assert doc["mc"]["qsl_target"] > 0


SMALL = {
    "limits": {"draws": 10000},
    "experiment": {"n_min": 6, "n_max": 12, "replicates": 60, "checks": ["rate"]},
}


def test_cli_verify_negative_control(tmp_path, capsys):
    good = tmp_path / "good.yaml"
    good.write_text(yaml.safe_dump(SMALL))
    code, out, _ = run(["verify", "--config", good, "--out", tmp_path / "g"], capsys)
    assert code == 0 and "PASS  rate" in out
    for name in ("report.json", "trajectories.csv", "rate.png"):
        assert (tmp_path / "g" / name).stat().st_size > 0
    wrong = dict(SMALL, experiment=dict(SMALL["experiment"], truth={"theta": [0.7, 1.0, 0.5, 1.0]}))
    bad = tmp_path / "wrong.yaml"
    bad.write_text(yaml.safe_dump(wrong))
    code, out, _ = run(["verify", "--config", bad, "--out", tmp_path / "w"], capsys)
    assert code == 3 and "FAIL  rate" in out


def test_cli_verify_is_byte_stable(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"limits": {"draws": 10000},
                                   "experiment": {"n_min": 1, "n_max": 6, "replicates": 50,
                                                  "clt_generation": 6, "clt_replicates": 50}}))
    for d in ("x", "y"):
        run(["verify", "--config", cfg, "--out", tmp_path / d], capsys)
    for name in ("report.json", "trajectories.csv"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()
    assert (tmp_path / "x" / "clt_theta.png").exists() and (tmp_path / "x" / "variance.png").exists()


def test_cli_verify_empty_checks(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"experiment": {"checks": []}}))
    code, _, _ = run(["verify", "--config", cfg, "--out", tmp_path / "e"], capsys)
    assert code == 0
    assert json.loads((tmp_path / "e" / "report.json").read_text())["checks"] == []
