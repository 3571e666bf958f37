"""Experiment harness: config plumbing, artifacts, verification, CLI."""

import json
import os
from types import SimpleNamespace

import numpy as np
import pytest

from hubersos import harness, online
from hubersos.environments import BanditEnv, BanditEnvConfig, NoiseSpec
from hubersos.harness import (ConfigError, ReportError, apply_param_overrides,
                              build_experiment_config, default_config,
                              main, parse_seed_list, read_transcript,
                              run_experiment, verify_report)


def _config(mode, **tweaks):
    merged = default_config(mode)
    for key, value in tweaks.items():
        node = merged
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return build_experiment_config(merged)


def _gd_config(out, **extra):
    tweaks = {"out": str(out), "environment.T": 30, "environment.d": 2,
              "environment.w_star": [1.0, 0.5],
              "params.N0": 999, "params.C0": 1.0}
    tweaks.update(extra)
    return _config("regress-online-gd", **tweaks)


# ------------------------------------------------------------------ config

def test_default_config_builds_for_every_mode():
    for mode in harness.MODES:
        cfg = build_experiment_config(default_config(mode))
        assert cfg.mode == mode
        assert cfg.seeds == [1]
        assert cfg.out_dir.endswith(mode)


def test_out_dir_resolution_order(monkeypatch):
    monkeypatch.setenv(harness.OUT_DIR_VAR, "/tmp/envdir")
    cfg = build_experiment_config(default_config("jl-check"))
    assert cfg.out_dir == "/tmp/envdir"
    cfg = _config("jl-check", out="explicit")
    assert cfg.out_dir == "explicit"


def test_param_overrides_are_toml_typed():
    merged = default_config("bandit")
    apply_param_overrides(merged, ["environment.noise.sigma=0.25",
                                   "environment.K=4",
                                   "output.svg=true",
                                   "seeds=[2, 3]",
                                   "environment.covariates.kind=uniform_sphere"])
    assert merged["environment"]["noise"]["sigma"] == 0.25
    assert merged["environment"]["K"] == 4
    assert merged["output"]["svg"] is True
    assert merged["seeds"] == [2, 3]
    assert merged["environment"]["covariates"]["kind"] == "uniform_sphere"
    with pytest.raises(ConfigError):
        apply_param_overrides(merged, ["no_equals_sign"])


def test_parse_seed_list():
    assert parse_seed_list("3..6") == [3, 4, 5, 6]
    assert parse_seed_list("1,4,9") == [1, 4, 9]
    with pytest.raises(ConfigError):
        parse_seed_list("5..2")
    with pytest.raises(ConfigError):
        parse_seed_list("a..b")


def test_bad_config_fields_are_named():
    with pytest.raises(ConfigError, match="unknown config section"):
        build_experiment_config({"mode": "bandit", "bogus": 1})
    with pytest.raises(ConfigError, match="seeds"):
        _config("bandit", seeds=[1, 1])
    with pytest.raises(ConfigError, match="mode"):
        build_experiment_config({"mode": "nope"})
    cfg = _config("regress-online-gd", **{"environment.noise.bogus": 1})
    with pytest.raises(ConfigError, match="environment.noise"):
        run_experiment(cfg)


def test_validation_happens_before_any_run(tmp_path):
    out = tmp_path / "never"
    cfg = _gd_config(out, seeds=[1, 2],
                     **{"environment.contamination.eta": 0.7})
    with pytest.raises(ConfigError, match="eta"):
        run_experiment(cfg)
    assert not out.exists()


# ------------------------------------------------------------- mode: gd run

def test_gd_run_artifacts_and_verify(tmp_path):
    out = tmp_path / "gd"
    report = run_experiment(_gd_config(out, seeds=[1, 2]))
    assert os.path.exists(report.report_path)
    stored = json.loads(open(report.report_path).read())
    assert stored["mode"] == "regress-online-gd"
    assert stored["seeds"] == [1, 2]
    for seed in (1, 2):
        entry = stored["per_seed"][str(seed)]
        assert entry["metrics"]["clean_sq_regret"] >= 0.0
        assert entry["resolved"]["C0"] == 1.0          # resolved, no sentinel
        for name in entry["files"].values():
            assert (out / name).exists()
    assert "clean_sq_regret" in stored["aggregates"]
    result = verify_report(str(out))
    assert result.ok, result.failures
    assert result.checked > 0


def test_identical_seeds_give_byte_identical_transcripts(tmp_path):
    first = run_experiment(_gd_config(tmp_path / "a", seeds=[7]))
    second = run_experiment(_gd_config(tmp_path / "b", seeds=[7]))
    for role in ("transcript", "curve", "transcript_ols"):
        name_a = first.per_seed["7"]["files"][role]
        name_b = second.per_seed["7"]["files"][role]
        bytes_a = open(tmp_path / "a" / name_a, "rb").read()
        bytes_b = open(tmp_path / "b" / name_b, "rb").read()
        assert bytes_a == bytes_b


def test_baseline_shares_environment_randomness(tmp_path):
    report = run_experiment(_gd_config(
        tmp_path / "gd", **{"environment.contamination.eta": 0.3,
                            "environment.contamination.value": 7.0}))
    files = report.per_seed["1"]["files"]
    main_t = read_transcript(str(tmp_path / "gd" / files["transcript"]))
    ols_t = read_transcript(str(tmp_path / "gd" / files["transcript_ols"]))
    for row_a, row_b in zip(main_t.rows, ols_t.rows):
        assert row_a[5] == row_b[5]        # clean value
        assert row_a[6] == row_b[6]        # noise draw
        assert row_a[1] == row_b[1]        # corruption coin


def test_tampered_observed_fails_only_observed_metrics(tmp_path):
    out = tmp_path / "gd"
    report = run_experiment(_gd_config(out))
    path = out / report.per_seed["1"]["files"]["transcript"]
    lines = open(path).read().splitlines()
    cells = lines[3].split(",")
    cells[5] = "999.0"
    lines[3] = ",".join(cells)
    open(path, "w").write("\n".join(lines) + "\n")

    result = verify_report(str(out))
    assert not result.ok
    assert any("observed_sq_error" in f for f in result.failures)
    assert not any(f.startswith("per_seed.1.clean_sq_regret:")
                   for f in result.failures)


def test_missing_transcript_is_structural_error(tmp_path):
    out = tmp_path / "gd"
    report = run_experiment(_gd_config(out))
    os.remove(out / report.per_seed["1"]["files"]["transcript"])
    with pytest.raises(ReportError, match="missing transcript"):
        verify_report(str(out))
    with pytest.raises(ReportError, match="missing report"):
        verify_report(str(tmp_path / "nowhere"))


# ----------------------------------------------------------- mode: cut run

def test_cut_mode_moves_the_ellipsoid(tmp_path, monkeypatch):
    truth = np.array([1.0, 0.5])

    def pin(state, params):
        state.v = truth.copy()
        state.refits += 1
        return True

    monkeypatch.setattr(online, "_refit", pin)
    cfg = _config("regress-online-cut",
                  **{"out": str(tmp_path / "cut"), "environment.T": 40,
                     "environment.d": 2, "environment.w_star": [1.0, 0.5],
                     "params.N0": 5, "params.B": 5, "params.C0": 0.05})
    report = run_experiment(cfg)
    metrics = report.per_seed["1"]["metrics"]
    assert metrics["cuts"] >= 1
    assert metrics["refits"] >= 1
    assert metrics["cut_budget"] > 0
    assert verify_report(str(tmp_path / "cut")).ok


# ------------------------------------------------------------ mode: bandit

def test_bandit_run_and_verify(tmp_path):
    out = tmp_path / "bandit"
    cfg = _config("bandit",
                  **{"out": str(out), "environment.T": 50,
                     "environment.K": 2, "environment.d": 2,
                     "environment.contamination.eta": 0.2,
                     "environment.contamination.value": 3.0,
                     "params.N0": 999, "params.C0": 1.0})
    report = run_experiment(cfg)
    metrics = report.per_seed["1"]["metrics"]
    assert "clean_pseudo_regret" in metrics
    assert "ols_clean_pseudo_regret" in metrics
    resolved = report.per_seed["1"]["resolved"]
    assert resolved["gamma"] > 0 and resolved["mu"] == 2.0
    from hubersos.bandits import oracle_ball_radius
    assert resolved["oracle"]["R"] == pytest.approx(oracle_ball_radius(2, 5.0))
    result = verify_report(str(out))
    assert result.ok, result.failures


def test_transcript_roundtrip_preserves_metrics(tmp_path):
    cfg = BanditEnvConfig(K=3, d=2, T=8, R=4.0,
                          w_stars=np.eye(3, 2) * 2.0,
                          noise=NoiseSpec(sigma=0.2))
    env = BanditEnv(cfg, seed=11)
    rng = np.random.default_rng(0)
    for _ in range(8):
        env.next_context()
        env.step(int(rng.integers(3)), predicted_loss=1.0)
    path = tmp_path / "t.csv"
    env.transcript.to_csv(str(path))
    back = read_transcript(str(path), R=4.0)
    from hubersos.environments import clean_pseudo_regret
    assert clean_pseudo_regret(back) == clean_pseudo_regret(env.transcript)
    assert back.kind == "bandit" and len(back) == 8


# ----------------------------------------------------------- mode: offline

def _stub_sos(w):
    def fake(dataset, params, *, settings=None, n_max=60, subsample_seed=0,
             **kwargs):
        return SimpleNamespace(w=np.asarray(w, dtype=float),
                               diagnostics={"status": "Optimal",
                                            "iterations": 12,
                                            "n_used": min(dataset.n, n_max),
                                            "selection_mass": 0.9})
    return fake


def test_offline_run_with_stubbed_solver(tmp_path, monkeypatch):
    monkeypatch.setattr(harness, "sos_regression", _stub_sos([0.9, 0.4]))
    out = tmp_path / "off"
    cfg = _config("regress-offline",
                  **{"out": str(out), "environment.T": 25,
                     "environment.d": 2, "environment.w_star": [1.0, 0.5],
                     "environment.contamination.eta": 0.2,
                     "environment.contamination.value": 9.0})
    report = run_experiment(cfg)
    metrics = report.per_seed["1"]["metrics"]
    assert metrics["w_estimate"] == [0.9, 0.4]
    assert metrics["param_error_sos"] > 0
    assert "param_error_ols" in metrics and "error_ratio" in metrics
    for role in ("transcript", "dataset", "curve"):
        assert (out / report.per_seed["1"]["files"][role]).exists()
    assert verify_report(str(out)).ok


def test_offline_dataset_tamper_detected(tmp_path, monkeypatch):
    monkeypatch.setattr(harness, "sos_regression", _stub_sos([0.9, 0.4]))
    out = tmp_path / "off"
    cfg = _config("regress-offline",
                  **{"out": str(out), "environment.T": 25,
                     "environment.d": 2, "environment.w_star": [1.0, 0.5]})
    report = run_experiment(cfg)
    path = out / report.per_seed["1"]["files"]["dataset"]
    lines = open(path).read().splitlines()
    cells = lines[2].split(",")
    cells[3] = "55.5"                       # observed column at d = 2
    lines[2] = ",".join(cells)
    open(path, "w").write("\n".join(lines) + "\n")
    result = verify_report(str(out))
    assert not result.ok


# ------------------------------------------------- modes without transcripts

def test_lower_bound_report_contents(tmp_path):
    out = tmp_path / "lb"
    report = run_experiment(_config("lower-bound", out=str(out), seeds=[0]))
    metrics = report.per_seed["0"]["metrics"]
    assert metrics["threshold"] == pytest.approx(0.002, abs=1e-12)
    assert metrics["huber_w"] == pytest.approx(0.333977, abs=2e-5)
    assert metrics["l1_w"] == pytest.approx(0.285914, abs=2e-5)
    assert metrics["squared_w"] == pytest.approx(1.0, abs=1e-6)
    assert metrics["all_exceed_threshold"] == 1.0
    assert metrics["min_abs_w"] >= 0.1
    assert verify_report(str(out)).ok


def test_jl_check_mode(tmp_path):
    out = tmp_path / "jl"
    report = run_experiment(_config("jl-check", out=str(out),
                                    seeds=[0, 1, 2]))
    for seed in ("0", "1", "2"):
        metrics = report.per_seed[seed]["metrics"]
        assert metrics["m"] == 443
        assert metrics["passed"] == 1.0
        assert metrics["max_distance_distortion"] <= 0.5
    assert report.aggregates["passed"]["mean"] == 1.0
    assert verify_report(str(out)).ok


def test_svg_output(tmp_path):
    out = tmp_path / "gd"
    run_experiment(_gd_config(out, **{"output.svg": True}))
    svg = (out / "curves.svg").read_text()
    assert svg.startswith("<svg")
    assert svg.count("<polyline") >= 2      # main curve plus ols baseline


# --------------------------------------------------------------------- CLI

def test_cli_run_and_verify_roundtrip(tmp_path, capsys):
    out = tmp_path / "cli"
    code = main(["regress-online-gd", "--seeds", "2..3", "--out", str(out),
                 "--param", "environment.T=25",
                 "--param", "environment.d=2",
                 "--param", "environment.w_star=[1.0, 0.5]",
                 "--param", "params.N0=999", "--param", "params.C0=1.0"])
    assert code == 0
    stored = json.loads(open(out / "report.json").read())
    assert stored["seeds"] == [2, 3]
    assert main(["verify", str(out)]) == 0
    assert "verify: pass" in capsys.readouterr().out

    curve = out / stored["per_seed"]["2"]["files"]["curve"]
    lines = open(curve).read().splitlines()
    lines[5] = lines[5].split(",")[0] + ",123.0"
    open(curve, "w").write("\n".join(lines) + "\n")
    assert main(["verify", str(out)]) == 2

    os.remove(out / "report.json")
    assert main(["verify", str(out)]) == 1


def test_cli_exit_codes_for_bad_config(tmp_path):
    assert main(["regress-online-gd", "--out", str(tmp_path / "x"),
                 "--param", "environment.contamination.eta=0.9"]) == 1
    assert main(["bandit", "--mode", "jl-check"]) == 1
    assert main(["run"]) == 1               # no mode anywhere


def test_cli_flags_override_config_file(tmp_path):
    cfg_file = tmp_path / "exp.toml"
    cfg_file.write_text(
        'mode = "regress-online-gd"\n'
        'seeds = [5]\n'
        f'out = "{tmp_path / "from_file"}"\n'
        '[environment]\n'
        'T = 25\n'
        'd = 2\n'
        'w_star = [1.0, 0.5]\n'
        '[params]\n'
        'N0 = 999\n'
        'C0 = 1.0\n')
    out = tmp_path / "from_flag"
    assert main(["run", "--config", str(cfg_file), "--seed", "9",
                 "--out", str(out)]) == 0
    stored = json.loads(open(out / "report.json").read())
    assert stored["seeds"] == [9]
    assert not (tmp_path / "from_file").exists()
