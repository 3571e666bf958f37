"""Experiment runner: TOML configs, a CLI, artifact files, and report checks.

One experiment = one mode, one environment description, and a list of
seeds.  Each seed runs a fully deterministic pipeline and leaves CSV
artifacts (transcripts, regret curves, offline datasets) next to a JSON
report; verify_report re-derives every verified metric from those files
and compares within a strict tolerance, so tampering with any artifact is
detectable.  Flags mirror config keys and win over them.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                      # Python 3.10
    import tomli as tomllib

from . import __version__
from .bandits import (BanditParams, OlsOracle, RobustOracle,
                      auto_regret_estimate, choose_gamma_mu, embedding_dim,
                      oracle_ball_radius, squarecb_run)
from .baselines import (SurrogateSpec, clean_excess_square_loss,
                        excess_loss_threshold, fit_surrogate,
                        hard_population_instance, population_minimizer_1d)
from .dimred import choose_m_distortion, make_projection
from .environments import (CSV_COLUMNS, BanditEnv, BanditEnvConfig,
                           ContaminationConfig, CovariateSpec, NoiseSpec,
                           RegressionEnv, RegressionEnvConfig, Transcript,
                           clean_pseudo_regret, clean_pseudo_regret_curve,
                           clean_sq_regret, clean_sq_regret_curve)
from .moment_program import (RegressionDataset, default_params,
                             sos_regression, truncation_threshold)
from .online import OnlineParams, schedule_params, sos_and_cut_run, sos_gd_run
from .sdp import SolverSettings

logger = logging.getLogger(__name__)

MODES = ("regress-offline", "regress-online-cut", "regress-online-gd",
         "bandit", "lower-bound", "jl-check")

OUT_DIR_VAR = "HUBERSOS_OUT"
VERIFY_TOL = 1e-9
LOSS_NAMES = ("squared", "l1", "huber")

# sub-stream tags hanging off the master seed, so swapping one component
# never perturbs the randomness of another
_TAG_W_STAR = 101
_TAG_W_STARS = 103
_TAG_LEARNER = 107
_TAG_JL_POINTS = 211
_TAG_JL_PROJ = 223


class ConfigError(ValueError):
    """Bad experiment configuration; reported before anything runs."""


class ReportError(ValueError):
    """Structurally broken artifacts: missing or unreadable files."""


class NumericError(RuntimeError):
    """A run produced a non-finite metric."""


def _sub_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


# ---------------------------------------------------------------- config

def default_config(mode: str) -> dict:
    """Documented defaults; every key has a flag/--param equivalent."""
    environment = {
        "d": 3, "T": 200, "R": 5.0, "w_star": "auto",
        "covariates": {"kind": "uniform_sphere"},
        "noise": {"family": "gaussian", "sigma": 0.1, "k": 4},
        "contamination": {"eta": 0.0, "adversary": "constant_offset",
                          "value": 0.0, "corruption_sign": 1.0},
        "epsilon_schedule": "zero", "epsilon": 0.0,
    }
    params: dict = {}
    if mode == "bandit":
        environment.pop("w_star")
        environment.pop("epsilon_schedule")
        environment.pop("epsilon")
        environment["K"] = 3
        environment["w_stars"] = "auto"
    elif mode == "lower-bound":
        environment = {"R": 10.0, "eta": 0.2, "corruption_sign": 1.0}
        params = {"tol": 1e-8, "huber_delta": 1.0}
    elif mode == "jl-check":
        environment = {}
        params = {"n_points": 100, "d_in": 64, "delta": 0.01, "eps": 0.5,
                  "c_jl": 8.0}
    return {
        "mode": mode,
        "seeds": [1],
        "out": "",
        "environment": environment,
        "params": params,
        "solver": {"tolerance": 1e-3, "max_iterations": 1500, "rho": 0.1},
        "baselines": {"ols": True},
        "output": {"svg": False},
    }


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config_file(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"config file {path}: {err}")


def _parse_override_value(text: str):
    """TOML-typed when possible (1, 0.5, true, [1,2]); bare strings pass."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_param_overrides(config: dict, pairs) -> dict:
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"--param needs KEY=VALUE, got {pair!r}")
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[parts[-1]] = _parse_override_value(value)
    return config


def parse_seed_list(text: str) -> list:
    """Either an inclusive range "A..B" or a comma list "1,4,9"."""
    text = text.strip()
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            a, b = int(lo), int(hi)
        except ValueError:
            raise ConfigError(f"bad --seeds range {text!r}")
        if b < a:
            raise ConfigError(f"--seeds range {text!r} is empty")
        return list(range(a, b + 1))
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"bad --seeds list {text!r}")


@dataclass
class ExperimentConfig:
    mode: str
    seeds: list
    out_dir: str
    environment: dict
    params: dict
    solver: dict
    baselines: dict
    output: dict
    echo: dict = field(default_factory=dict)


_TOP_KEYS = ("mode", "seeds", "out", "environment", "params", "solver",
             "baselines", "output")


def build_experiment_config(merged: dict) -> ExperimentConfig:
    unknown = set(merged) - set(_TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    mode = merged.get("mode")
    if mode not in MODES:
        raise ConfigError(f"mode: expected one of {MODES}, got {mode!r}")
    seeds = merged.get("seeds", [1])
    if isinstance(seeds, int):
        seeds = [seeds]
    if (not isinstance(seeds, list) or not seeds
            or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds)):
        raise ConfigError(f"seeds: need a nonempty list of integers, got {seeds!r}")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds: duplicate entries would overwrite artifacts")
    out_dir = merged.get("out") or os.environ.get(OUT_DIR_VAR) or os.path.join("runs", mode)
    echo = dict(merged)
    echo["mode"] = mode
    echo["seeds"] = list(seeds)
    echo["out"] = out_dir
    return ExperimentConfig(
        mode=mode, seeds=list(seeds), out_dir=out_dir,
        environment=dict(merged.get("environment", {})),
        params=dict(merged.get("params", {})),
        solver=dict(merged.get("solver", {})),
        baselines=dict(merged.get("baselines", {})),
        output=dict(merged.get("output", {})),
        echo=echo)


# ----------------------------------------------- per-seed object builders

def _take(section: dict, allowed: tuple, where: str) -> dict:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    return {k: section[k] for k in allowed if k in section}


def _noise_spec(section: dict) -> NoiseSpec:
    try:
        return NoiseSpec(**_take(section, ("family", "sigma", "k", "c",
                                           "nu", "tail"), "environment.noise"))
    except ValueError as err:
        raise ConfigError(f"environment.noise: {err}")


def _covariate_spec(section: dict) -> CovariateSpec:
    try:
        return CovariateSpec(**_take(section, ("kind", "sequence", "p_common",
                                               "common", "rare"),
                                     "environment.covariates"))
    except ValueError as err:
        raise ConfigError(f"environment.covariates: {err}")


def _contamination(section: dict) -> ContaminationConfig:
    try:
        return ContaminationConfig(**_take(section, ("eta", "adversary", "value",
                                                     "corruption_sign",
                                                     "response_cap"),
                                           "environment.contamination"))
    except ValueError as err:
        raise ConfigError(f"environment.contamination: {err}")


def _resolve_w_star(value, d: int, R: float, seed: int) -> np.ndarray:
    if isinstance(value, str):
        if value != "auto":
            raise ConfigError(f"environment.w_star: unknown sentinel {value!r}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, _TAG_W_STAR]))
        v = rng.standard_normal(d)
        return 0.5 * R * v / np.linalg.norm(v)
    return np.asarray(value, dtype=float)


def _resolve_w_stars(value, K: int, d: int, R: float, seed: int) -> np.ndarray:
    if isinstance(value, str):
        if value != "auto":
            raise ConfigError(f"environment.w_stars: unknown sentinel {value!r}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, _TAG_W_STARS]))
        rows = rng.standard_normal((K, d))
        return R * rows / np.linalg.norm(rows, axis=1, keepdims=True)
    return np.asarray(value, dtype=float)


_REG_ENV_KEYS = ("d", "T", "R", "w_star", "covariates", "noise",
                 "contamination", "epsilon_schedule", "epsilon")


def _regression_env_config(config: ExperimentConfig, seed: int) -> RegressionEnvConfig:
    section = _take(config.environment, _REG_ENV_KEYS, "environment")
    d = int(section.get("d", 3))
    R = float(section.get("R", 5.0))
    try:
        return RegressionEnvConfig(
            d=d, T=int(section.get("T", 200)), R=R,
            w_star=_resolve_w_star(section.get("w_star", "auto"), d, R, seed),
            covariates=_covariate_spec(section.get("covariates", {})),
            noise=_noise_spec(section.get("noise", {})),
            contamination=_contamination(section.get("contamination", {})),
            epsilon_schedule=section.get("epsilon_schedule", "zero"),
            epsilon=float(section.get("epsilon", 0.0)))
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(f"environment: {err}")


_BANDIT_ENV_KEYS = ("K", "d", "T", "R", "w_stars", "covariates", "noise",
                    "contamination")


def _bandit_env_config(config: ExperimentConfig, seed: int) -> BanditEnvConfig:
    section = _take(config.environment, _BANDIT_ENV_KEYS, "environment")
    K = int(section.get("K", 3))
    d = int(section.get("d", 3))
    R = float(section.get("R", 5.0))
    try:
        return BanditEnvConfig(
            K=K, d=d, T=int(section.get("T", 200)), R=R,
            w_stars=_resolve_w_stars(section.get("w_stars", "auto"), K, d, R, seed),
            contexts=_covariate_spec(section.get("covariates", {})),
            noise=_noise_spec(section.get("noise", {})),
            contamination=_contamination(section.get("contamination", {})))
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(f"environment: {err}")


_SOLVER_KEYS = ("tolerance", "max_iterations", "rho", "over_relaxation",
                "adapt_rho", "adapt_every", "residual_balance",
                "infeasibility_window", "infeasibility_scale", "seed",
                "verbose", "log_every")


def _solver_settings(config: ExperimentConfig) -> SolverSettings:
    return SolverSettings(**_take(config.solver, _SOLVER_KEYS, "solver"))


_ONLINE_PARAM_KEYS = ("k", "delta", "c3", "B", "gamma_step", "n_max", "N0",
                      "C0", "C1", "r", "sigma", "eta", "epsilon", "c1", "c2",
                      "subsample_seed")


def _scheduled_online_params(config: ExperimentConfig, T: int, d: int,
                             R: float, noise: NoiseSpec, eta_env: float,
                             mode_key: str, epsilon_default: float = 0.0,
                             extra_keys: tuple = ()) -> OnlineParams:
    p = _take(config.params, _ONLINE_PARAM_KEYS + extra_keys, "params")
    try:
        base = schedule_params(
            T=T, d=d,
            k=float(p.get("k", noise.k)),
            sigma=float(p.get("sigma", noise.sigma)),
            R=R,
            eta=float(p.get("eta", eta_env)),
            delta=float(p.get("delta", 0.05)),
            mode=mode_key,
            c3=float(p.get("c3", 1.0)),
            epsilon=float(p.get("epsilon", epsilon_default)),
            B=int(p.get("B", 10)),
            gamma_step=float(p.get("gamma_step", 1.0)),
            n_max=int(p.get("n_max", 20)),
            solver=_solver_settings(config))
    except ValueError as err:
        raise ConfigError(f"params: {err}")
    override = {}
    for key in ("N0", "C0", "C1", "r", "c1", "c2"):
        value = p.get(key)
        if value is None or value == "auto":
            continue
        override[key] = int(value) if key == "N0" else float(value)
    if "C0" in override and "C1" not in override:
        override["C1"] = 2.0 * override["C0"]
    try:
        return dataclasses.replace(base, **override) if override else base
    except ValueError as err:
        raise ConfigError(f"params: {err}")


_BANDIT_PARAM_KEYS = ("gamma", "mu", "regret_estimate", "ridge")


def _bandit_setup(config: ExperimentConfig, env_cfg: BanditEnvConfig):
    p = _take(config.params, _ONLINE_PARAM_KEYS + _BANDIT_PARAM_KEYS, "params")
    k = float(p.get("k", env_cfg.noise.k))
    sigma = float(p.get("sigma", env_cfg.noise.sigma))
    eta = float(p.get("eta", env_cfg.contamination.eta))
    epsilon = float(p.get("epsilon", 0.0))
    regret_estimate = p.get("regret_estimate", "auto")
    if regret_estimate == "auto":
        regret_estimate = auto_regret_estimate(k, sigma, eta, env_cfg.T)
    regret_estimate = float(regret_estimate)
    gamma = p.get("gamma", "auto")
    mu = p.get("mu", "auto")
    if gamma == "auto" or mu == "auto":
        try:
            if env_cfg.K >= 2:
                gamma_auto, mu_auto = choose_gamma_mu(env_cfg.K, env_cfg.T,
                                                      regret_estimate, epsilon)
            else:
                gamma_auto, mu_auto = 1.0, 1.0   # degenerate single action
        except ValueError as err:
            raise ConfigError(f"params: {err}")
        gamma = gamma_auto if gamma == "auto" else gamma
        mu = mu_auto if mu == "auto" else mu
    try:
        bandit_params = BanditParams(K=env_cfg.K, gamma=float(gamma),
                                     mu=float(mu), T=env_cfg.T, R=env_cfg.R,
                                     epsilon=epsilon)
    except ValueError as err:
        raise ConfigError(f"params: {err}")
    oracle_params = _scheduled_online_params(
        config, T=env_cfg.T, d=embedding_dim(env_cfg.K, env_cfg.d),
        R=oracle_ball_radius(env_cfg.K, env_cfg.R), noise=env_cfg.noise,
        eta_env=env_cfg.contamination.eta, mode_key="gd",
        extra_keys=_BANDIT_PARAM_KEYS)
    return bandit_params, oracle_params, regret_estimate, float(p.get("ridge", 1e-6))


# ------------------------------------------------------------ file helpers

def _fmt(v) -> str:
    return repr(float(v))


def write_curve_csv(path: str, values) -> None:
    with open(path, "w") as fh:
        fh.write("t,cumulative\n")
        for t, v in enumerate(values):
            fh.write(f"{t},{_fmt(v)}\n")


def read_curve_csv(path: str) -> np.ndarray:
    try:
        with open(path) as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["t", "cumulative"]:
                raise ReportError(f"unrecognized curve header in {path}")
            return np.array([float(row[1]) for row in reader])
    except FileNotFoundError:
        raise ReportError(f"missing curve file: {path}")


def write_dataset_csv(path: str, x: np.ndarray, y, clean, gamma) -> None:
    d = x.shape[1]
    with open(path, "w") as fh:
        cols = ["t"] + [f"x_{j}" for j in range(d)] + ["observed", "clean", "gamma"]
        fh.write(",".join(cols) + "\n")
        for t in range(x.shape[0]):
            cells = [str(t)] + [_fmt(v) for v in x[t]]
            cells += [_fmt(y[t]), _fmt(clean[t]), str(int(gamma[t]))]
            fh.write(",".join(cells) + "\n")


def read_dataset_csv(path: str):
    try:
        fh = open(path)
    except FileNotFoundError:
        raise ReportError(f"missing dataset file: {path}")
    with fh:
        reader = csv.reader(fh)
        header = next(reader, [])
        d = sum(1 for c in header if c.startswith("x_"))
        if d == 0 or header[:1] != ["t"] or header[1 + d:] != ["observed", "clean", "gamma"]:
            raise ReportError(f"unrecognized dataset header in {path}")
        x_rows, y, clean, gamma = [], [], [], []
        for row in reader:
            x_rows.append([float(v) for v in row[1:1 + d]])
            y.append(float(row[1 + d]))
            clean.append(float(row[2 + d]))
            gamma.append(int(row[3 + d]))
    return np.asarray(x_rows), y, clean, gamma


def read_transcript(path: str, R: float = 0.0) -> Transcript:
    """Rebuild a Transcript from its CSV; covariates come back as None
    placeholders (only their hashes are stored) which the metric
    functions never dereference."""
    try:
        fh = open(path)
    except FileNotFoundError:
        raise ReportError(f"missing transcript file: {path}")
    with fh:
        reader = csv.reader(fh)
        header = next(reader, [])
        if tuple(header[:9]) != CSV_COLUMNS:
            raise ReportError(f"unrecognized transcript header in {path}")
        K = (len(header) - 9) // 2
        kind = "bandit" if K > 0 else "regression"
        rows, cleans, means = [], [], []
        for parts in reader:
            if kind == "regression":
                rows.append((int(parts[0]), int(parts[1]), parts[2],
                             float(parts[4]), float(parts[5]), float(parts[6]),
                             float(parts[7]), float(parts[8])))
            else:
                rows.append((int(parts[0]), int(parts[1]), parts[2],
                             int(parts[3]), float(parts[4]), float(parts[5])))
                cleans.append(np.array([float(v) for v in parts[9:9 + K]]))
                means.append(np.array([float(v) for v in parts[9 + K:9 + 2 * K]]))
    return Transcript(kind=kind, R=R, rows=rows,
                      covariates=[None] * len(rows),
                      clean_tables=cleans, mean_tables=means)


def write_svg(path: str, curves: dict, title: str = "") -> None:
    """A minimal line chart: one polyline per named curve, names ending in
    _ols drawn dashed.  No dependencies, fixed viewport."""
    W, H, ml, mr, mt, mb = 720, 440, 64, 16, 34, 42
    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd",
               "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
    finite = [np.asarray(v, dtype=float) for v in curves.values() if len(v)]
    if not finite:
        return
    y_max = max(float(v.max()) for v in finite)
    y_min = min(0.0, min(float(v.min()) for v in finite))
    x_max = max(len(v) for v in finite) - 1
    span_y = (y_max - y_min) or 1.0
    span_x = x_max or 1

    def px(t):
        return ml + (W - ml - mr) * t / span_x

    def py(v):
        return H - mb - (H - mt - mb) * (v - y_min) / span_y

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" '
             f'font-family="sans-serif" font-size="12">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{W / 2:.0f}" y="18" text-anchor="middle">{title}</text>',
             f'<line x1="{ml}" y1="{py(y_min):.1f}" x2="{W - mr}" '
             f'y2="{py(y_min):.1f}" stroke="#333"/>',
             f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{H - mb}" stroke="#333"/>',
             f'<text x="{ml}" y="{H - mb + 16}" text-anchor="middle">0</text>',
             f'<text x="{W - mr}" y="{H - mb + 16}" text-anchor="middle">{x_max}</text>',
             f'<text x="{ml - 6}" y="{py(y_min):.1f}" text-anchor="end">{y_min:.3g}</text>',
             f'<text x="{ml - 6}" y="{py(y_max) + 4:.1f}" text-anchor="end">{y_max:.3g}</text>']
    for i, (name, values) in enumerate(sorted(curves.items())):
        pts = " ".join(f"{px(t):.1f},{py(float(v)):.1f}"
                       for t, v in enumerate(values))
        dash = ' stroke-dasharray="6 3"' if name.endswith("_ols") else ""
        color = palette[i % len(palette)]
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"{dash}/>')
        parts.append(f'<text x="{W - mr - 4}" y="{mt + 14 * (i + 1)}" '
                     f'text-anchor="end" fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


# --------------------------------------------------------- metric helpers

def _sq_total(a, b) -> float:
    total = 0.0
    for u, v in zip(a, b):
        total += (u - v) ** 2
    return float(total)


def _plain_sum(values) -> float:
    total = 0.0
    for v in values:
        total += v
    return float(total)


def _maybe_ratio(numer: float, denom: float):
    return numer / denom if denom > 0 else None


def _regression_transcript_metrics(transcript: Transcript) -> dict:
    preds = [row[3] for row in transcript.rows]
    observed = [row[4] for row in transcript.rows]
    return {"clean_sq_regret": clean_sq_regret(transcript),
            "observed_sq_error": _sq_total(preds, observed)}


def _bandit_transcript_metrics(transcript: Transcript) -> dict:
    return {"clean_pseudo_regret": clean_pseudo_regret(transcript),
            "observed_loss_total": _plain_sum(row[5] for row in transcript.rows)}


def _offline_metrics(x: np.ndarray, y, clean, w_est, w_star,
                     with_ols: bool) -> dict:
    n = x.shape[0]
    sigma_n = x.T @ x / n
    w_est = np.asarray(w_est, dtype=float)
    diff = w_est - np.asarray(w_star, dtype=float)
    clean_arr = np.asarray(clean, dtype=float)
    out = {
        "param_error_sos": float(diff @ sigma_n @ diff),
        "in_sample_clean_mse": float(np.mean((x @ w_est - clean_arr) ** 2)),
        "observed_sq_total": _sq_total(y, [0.0] * len(y)),
        "clean_sq_total": _sq_total(clean, [0.0] * len(clean)),
    }
    if with_ols:
        w_ols = fit_surrogate(x, np.asarray(y, dtype=float),
                              SurrogateSpec(loss="squared"))
        diff_ols = w_ols - np.asarray(w_star, dtype=float)
        out["param_error_ols"] = float(diff_ols @ sigma_n @ diff_ols)
        ratio = _maybe_ratio(out["param_error_sos"], out["param_error_ols"])
        if ratio is not None:
            out["error_ratio"] = ratio
    return out


def _lower_bound_metrics(env_section: dict, param_section: dict) -> dict:
    instance = hard_population_instance(
        R=float(env_section.get("R", 10.0)),
        eta=float(env_section.get("eta", 0.2)),
        corruption_sign=float(env_section.get("corruption_sign", 1.0)))
    tol = float(param_section.get("tol", 1e-8))
    threshold = excess_loss_threshold(instance)
    metrics = {"threshold": threshold}
    abs_ws = []
    all_exceed = True
    for name in LOSS_NAMES:
        spec = SurrogateSpec(loss=name,
                             huber_delta=float(param_section.get("huber_delta", 1.0)))
        w = population_minimizer_1d(instance, spec, tol=tol)
        excess = clean_excess_square_loss(w, instance)
        metrics[f"{name}_w"] = float(w)
        metrics[f"{name}_excess"] = float(excess)
        abs_ws.append(abs(float(w)))
        all_exceed = all_exceed and excess >= threshold
    metrics["min_abs_w"] = min(abs_ws)
    metrics["all_exceed_threshold"] = 1.0 if all_exceed else 0.0
    return metrics


def _jl_metrics(param_section: dict, seed: int) -> dict:
    n_points = int(param_section.get("n_points", 100))
    d_in = int(param_section.get("d_in", 64))
    delta = float(param_section.get("delta", 0.01))
    eps = float(param_section.get("eps", 0.5))
    m = choose_m_distortion(n_points, delta, eps,
                            c_jl=float(param_section.get("c_jl", 8.0)))
    rng = np.random.default_rng(np.random.SeedSequence([seed, _TAG_JL_POINTS]))
    points = rng.standard_normal((n_points, d_in))
    points /= np.linalg.norm(points, axis=1, keepdims=True)
    projection = make_projection(d_in, m, seed=_sub_seed(seed, _TAG_JL_PROJ))
    images = points @ projection.matrix.T
    gram = points @ points.T
    gram_img = images @ images.T
    sq = np.diag(gram)
    sq_img = np.diag(gram_img)
    dist = sq[:, None] + sq[None, :] - 2.0 * gram
    dist_img = sq_img[:, None] + sq_img[None, :] - 2.0 * gram_img
    iu = np.triu_indices(n_points, 1)
    rel = np.abs(dist_img[iu] - dist[iu]) / dist[iu]
    max_dist = float(rel.max())
    max_ip = float(np.abs(gram_img[iu] - gram[iu]).max())
    passed = 1.0 if (max_dist <= eps and max_ip <= 2.0 * eps) else 0.0
    return {"m": m, "max_distance_distortion": max_dist,
            "max_inner_product_error": max_ip, "passed": passed}


# ------------------------------------------------------------ seed runners

_OFFLINE_PARAM_KEYS = ("k", "delta", "c1", "c2", "eta_bar", "alpha", "n_max",
                       "subsample_seed", "sigma", "eta")


def _prepare_offline(config: ExperimentConfig, seed: int):
    env_cfg = _regression_env_config(config, seed)
    p = _take(config.params, _OFFLINE_PARAM_KEYS, "params")
    n_max = int(p.get("n_max", 60))
    n_eff = min(env_cfg.T, n_max)
    try:
        sos_params = default_params(
            n=n_eff, d=env_cfg.d,
            k=int(p.get("k", env_cfg.noise.k)),
            delta=float(p.get("delta", 0.05)),
            eta=float(p.get("eta", env_cfg.contamination.eta)),
            R=env_cfg.R,
            sigma=float(p.get("sigma", env_cfg.noise.sigma)),
            c1=float(p.get("c1", 1.0)), c2=float(p.get("c2", 1.0)))
        for key in ("eta_bar", "alpha"):
            if key in p:
                sos_params = dataclasses.replace(sos_params,
                                                 **{key: float(p[key])})
    except ValueError as err:
        raise ConfigError(f"params: {err}")
    return {"env_cfg": env_cfg, "sos_params": sos_params,
            "settings": _solver_settings(config), "n_max": n_max,
            "subsample_seed": int(p.get("subsample_seed", 0))}


def _execute_offline(config: ExperimentConfig, seed: int, build: dict,
                     out_dir: str):
    env_cfg = build["env_cfg"]
    env = RegressionEnv(env_cfg, seed)
    for _ in range(env_cfg.T):
        env.next_covariate()
        env.step(0.0)
    x, y = env.as_dataset()
    clean = [row[5] for row in env.transcript.rows]
    gamma = [row[1] for row in env.transcript.rows]
    dataset = RegressionDataset(x, y, y_clean=np.asarray(clean),
                                corrupted=np.asarray(gamma, dtype=bool))
    started = time.monotonic()
    result = sos_regression(dataset, build["sos_params"],
                            settings=build["settings"], n_max=build["n_max"],
                            subsample_seed=build["subsample_seed"])
    solve_seconds = time.monotonic() - started
    with_ols = bool(config.baselines.get("ols", True))
    metrics = _offline_metrics(x, list(y), clean, result.w, env_cfg.w_star,
                               with_ols)
    metrics["w_estimate"] = [float(v) for v in result.w]
    metrics["solver_status"] = result.diagnostics["status"]
    metrics["solver_iterations"] = int(result.diagnostics["iterations"])
    metrics["n_used"] = int(result.diagnostics["n_used"])
    metrics["selection_mass"] = float(result.diagnostics["selection_mass"])
    metrics["wall_clock_seconds"] = solve_seconds

    files = {"transcript": f"transcript_seed{seed}.csv",
             "dataset": f"dataset_seed{seed}.csv",
             "curve": f"curve_seed{seed}.csv"}
    env.transcript.to_csv(os.path.join(out_dir, files["transcript"]))
    write_dataset_csv(os.path.join(out_dir, files["dataset"]), x, list(y),
                      clean, gamma)
    residuals = x @ np.asarray(result.w) - np.asarray(clean)
    write_curve_csv(os.path.join(out_dir, files["curve"]),
                    np.cumsum(residuals ** 2))

    sp = build["sos_params"]
    resolved = {"w_star": [float(v) for v in env_cfg.w_star],
                "eta_bar": sp.eta_bar, "alpha": sp.alpha, "rho": sp.rho,
                "k": sp.k, "delta": sp.delta, "sigma": sp.sigma,
                "eta": sp.eta, "n": min(env_cfg.T, build["n_max"]),
                "n_max": build["n_max"],
                "truncation_threshold": truncation_threshold(sp)}
    return metrics, resolved, files


def _online_ols_run(env: RegressionEnv, ridge: float = 1e-6) -> np.ndarray:
    """Follow-the-leader least squares on the observed stream."""
    d = env.config.d
    gram = ridge * np.eye(d)
    moment = np.zeros(d)
    w = np.zeros(d)
    for _ in range(env.config.T):
        x = env.next_covariate()
        y, _ = env.step(float(w @ x))
        gram += np.outer(x, x)
        moment += y * x
        w = np.linalg.solve(gram, moment)
    return w


def _prepare_online(config: ExperimentConfig, seed: int, mode_key: str):
    env_cfg = _regression_env_config(config, seed)
    epsilon_default = env_cfg.epsilon if env_cfg.epsilon_schedule != "zero" else 0.0
    params = _scheduled_online_params(
        config, T=env_cfg.T, d=env_cfg.d, R=env_cfg.R, noise=env_cfg.noise,
        eta_env=env_cfg.contamination.eta, mode_key=mode_key,
        epsilon_default=epsilon_default, extra_keys=("ridge",))
    return {"env_cfg": env_cfg, "params": params, "mode_key": mode_key,
            "ridge": float(config.params.get("ridge", 1e-6))}


def _execute_online(config: ExperimentConfig, seed: int, build: dict,
                    out_dir: str):
    env_cfg = build["env_cfg"]
    params = build["params"]
    driver = sos_and_cut_run if build["mode_key"] == "cutting_plane" else sos_gd_run
    started = time.monotonic()
    env = RegressionEnv(env_cfg, seed)
    result = driver(env, params)
    elapsed = time.monotonic() - started

    metrics = _regression_transcript_metrics(env.transcript)
    metrics.update({
        "cuts": int(result.cuts), "refits": int(result.refits),
        "solver_failures": int(result.solver_failures),
        "final_w": [float(v) for v in result.final_w],
        "wall_clock_seconds": elapsed,
    })
    if "budget" in result.diagnostics:
        metrics["cut_budget"] = int(result.diagnostics["budget"])
    files = {"transcript": f"transcript_seed{seed}.csv",
             "curve": f"curve_seed{seed}.csv"}
    env.transcript.to_csv(os.path.join(out_dir, files["transcript"]))
    write_curve_csv(os.path.join(out_dir, files["curve"]),
                    clean_sq_regret_curve(env.transcript))

    if config.baselines.get("ols", True):
        env_ols = RegressionEnv(env_cfg, seed)
        _online_ols_run(env_ols, ridge=build["ridge"])
        ols = _regression_transcript_metrics(env_ols.transcript)
        metrics["ols_clean_sq_regret"] = ols["clean_sq_regret"]
        metrics["ols_observed_sq_error"] = ols["observed_sq_error"]
        ratio = _maybe_ratio(metrics["clean_sq_regret"],
                             metrics["ols_clean_sq_regret"])
        if ratio is not None:
            metrics["regret_ratio"] = ratio
        files["transcript_ols"] = f"transcript_seed{seed}_ols.csv"
        files["curve_ols"] = f"curve_seed{seed}_ols.csv"
        env_ols.transcript.to_csv(os.path.join(out_dir, files["transcript_ols"]))
        write_curve_csv(os.path.join(out_dir, files["curve_ols"]),
                        clean_sq_regret_curve(env_ols.transcript))

    resolved = _jsonable(dataclasses.asdict(params))
    resolved["w_star"] = [float(v) for v in env_cfg.w_star]
    return metrics, resolved, files


def _prepare_bandit(config: ExperimentConfig, seed: int):
    env_cfg = _bandit_env_config(config, seed)
    bandit_params, oracle_params, regret_estimate, ridge = _bandit_setup(config, env_cfg)
    return {"env_cfg": env_cfg, "bandit_params": bandit_params,
            "oracle_params": oracle_params,
            "regret_estimate": regret_estimate, "ridge": ridge}


def _execute_bandit(config: ExperimentConfig, seed: int, build: dict,
                    out_dir: str):
    env_cfg = build["env_cfg"]
    learner_seed = _sub_seed(seed, _TAG_LEARNER)
    started = time.monotonic()
    env = BanditEnv(env_cfg, seed)
    oracle = RobustOracle(env_cfg.K, env_cfg.d, build["oracle_params"])
    transcript = squarecb_run(env, oracle, build["bandit_params"],
                              seed=learner_seed)
    elapsed = time.monotonic() - started

    metrics = _bandit_transcript_metrics(transcript)
    metrics.update({"refits": int(oracle.diagnostics["refits"]),
                    "solver_failures": int(oracle.diagnostics["solver_failures"]),
                    "wall_clock_seconds": elapsed})
    files = {"transcript": f"transcript_seed{seed}.csv",
             "curve": f"curve_seed{seed}.csv"}
    transcript.to_csv(os.path.join(out_dir, files["transcript"]))
    write_curve_csv(os.path.join(out_dir, files["curve"]),
                    clean_pseudo_regret_curve(transcript))

    if config.baselines.get("ols", True):
        env_ols = BanditEnv(env_cfg, seed)
        transcript_ols = squarecb_run(env_ols,
                                      OlsOracle(env_cfg.K, env_cfg.d,
                                                ridge=build["ridge"]),
                                      build["bandit_params"], seed=learner_seed)
        ols = _bandit_transcript_metrics(transcript_ols)
        metrics["ols_clean_pseudo_regret"] = ols["clean_pseudo_regret"]
        metrics["ols_observed_loss_total"] = ols["observed_loss_total"]
        ratio = _maybe_ratio(metrics["clean_pseudo_regret"],
                             metrics["ols_clean_pseudo_regret"])
        if ratio is not None:
            metrics["pseudo_regret_ratio"] = ratio
        files["transcript_ols"] = f"transcript_seed{seed}_ols.csv"
        files["curve_ols"] = f"curve_seed{seed}_ols.csv"
        transcript_ols.to_csv(os.path.join(out_dir, files["transcript_ols"]))
        write_curve_csv(os.path.join(out_dir, files["curve_ols"]),
                        clean_pseudo_regret_curve(transcript_ols))

    resolved = {"gamma": build["bandit_params"].gamma,
                "mu": build["bandit_params"].mu,
                "regret_estimate": build["regret_estimate"],
                "learner_seed": learner_seed,
                "oracle": _jsonable(dataclasses.asdict(build["oracle_params"])),
                "w_stars": [[float(v) for v in row] for row in env_cfg.w_stars]}
    return metrics, resolved, files


_LOWER_PARAM_KEYS = ("tol", "huber_delta")


def _prepare_lower_bound(config: ExperimentConfig, seed: int):
    env_section = _take(config.environment, ("R", "eta", "corruption_sign", "T"),
                        "environment")
    param_section = _take(config.params, _LOWER_PARAM_KEYS, "params")
    try:
        instance = hard_population_instance(
            R=float(env_section.get("R", 10.0)),
            eta=float(env_section.get("eta", 0.2)),
            corruption_sign=float(env_section.get("corruption_sign", 1.0)))
    except ValueError as err:
        raise ConfigError(f"environment: {err}")
    return {"instance": instance, "env_section": env_section,
            "param_section": param_section}


def _execute_lower_bound(config: ExperimentConfig, seed: int, build: dict,
                         out_dir: str):
    started = time.monotonic()
    metrics = _lower_bound_metrics(build["env_section"], build["param_section"])
    metrics["wall_clock_seconds"] = time.monotonic() - started
    instance = build["instance"]
    resolved = {"m1": instance.m1, "corruption_value": instance.corruption_value,
                "second_moment": instance.second_moment(), "R": instance.R,
                "eta": instance.eta}
    return metrics, resolved, {}


def _prepare_jl_check(config: ExperimentConfig, seed: int):
    section = _take(config.params, ("n_points", "d_in", "delta", "eps", "c_jl"),
                    "params")
    try:
        m = choose_m_distortion(int(section.get("n_points", 100)),
                                float(section.get("delta", 0.01)),
                                float(section.get("eps", 0.5)),
                                c_jl=float(section.get("c_jl", 8.0)))
    except ValueError as err:
        raise ConfigError(f"params: {err}")
    return {"section": section, "m": m}


def _execute_jl_check(config: ExperimentConfig, seed: int, build: dict,
                      out_dir: str):
    started = time.monotonic()
    metrics = _jl_metrics(build["section"], seed)
    metrics["wall_clock_seconds"] = time.monotonic() - started
    return metrics, {"m": build["m"]}, {}


_RUNNERS = {
    "regress-offline": (_prepare_offline, _execute_offline),
    "regress-online-cut": (lambda c, s: _prepare_online(c, s, "cutting_plane"),
                           _execute_online),
    "regress-online-gd": (lambda c, s: _prepare_online(c, s, "gd"),
                          _execute_online),
    "bandit": (_prepare_bandit, _execute_bandit),
    "lower-bound": (_prepare_lower_bound, _execute_lower_bound),
    "jl-check": (_prepare_jl_check, _execute_jl_check),
}

# metric names verify_report recomputes from the stored artifacts
VERIFIED_METRICS = {
    "regress-offline": ("observed_sq_total", "clean_sq_total",
                        "param_error_sos", "param_error_ols", "error_ratio",
                        "in_sample_clean_mse"),
    "regress-online-cut": ("clean_sq_regret", "observed_sq_error",
                           "ols_clean_sq_regret", "ols_observed_sq_error",
                           "regret_ratio"),
    "regress-online-gd": ("clean_sq_regret", "observed_sq_error",
                          "ols_clean_sq_regret", "ols_observed_sq_error",
                          "regret_ratio"),
    "bandit": ("clean_pseudo_regret", "observed_loss_total",
               "ols_clean_pseudo_regret", "ols_observed_loss_total",
               "pseudo_regret_ratio"),
    "lower-bound": ("threshold", "squared_w", "squared_excess", "l1_w",
                    "l1_excess", "huber_w", "huber_excess", "min_abs_w",
                    "all_exceed_threshold"),
    "jl-check": ("m", "max_distance_distortion", "max_inner_product_error",
                 "passed"),
}

_HEADLINE = {
    "regress-offline": "error_ratio",
    "regress-online-cut": "clean_sq_regret",
    "regress-online-gd": "clean_sq_regret",
    "bandit": "clean_pseudo_regret",
    "lower-bound": "all_exceed_threshold",
    "jl-check": "passed",
}


# ------------------------------------------------------------- experiment

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    return obj


def _check_finite(seed: int, metrics: dict):
    for key, value in metrics.items():
        values = value if isinstance(value, list) else [value]
        for v in values:
            if isinstance(v, float) and not math.isfinite(v):
                raise NumericError(f"seed {seed}: metric {key} is not finite")


def _aggregate(per_seed: dict) -> dict:
    keys = set()
    for entry in per_seed.values():
        keys.update(entry["metrics"])
    agg = {}
    for key in sorted(keys):
        values = []
        for entry in per_seed.values():
            v = entry["metrics"].get(key)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                break
            values.append(float(v))
        else:
            if values:
                agg[key] = {"mean": float(np.mean(values)),
                            "stddev": float(np.std(values, ddof=1)) if len(values) > 1 else 0.0}
    return agg


@dataclass
class RunReport:
    mode: str
    seeds: list
    config: dict
    per_seed: dict
    aggregates: dict
    verified_metrics: list
    tool_version: str
    wall_clock_seconds: float
    report_path: str = ""

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("report_path")
        return _jsonable(out)


def run_experiment(config: ExperimentConfig) -> RunReport:
    """Validate everything, then run each seed and write all artifacts."""
    started = time.monotonic()
    prepare, execute = _RUNNERS[config.mode]
    builds = [prepare(config, seed) for seed in config.seeds]

    os.makedirs(config.out_dir, exist_ok=True)
    per_seed = {}
    for seed, build in zip(config.seeds, builds):
        logger.info("running %s seed %d", config.mode, seed)
        metrics, resolved, files = execute(config, seed, build, config.out_dir)
        metrics = _jsonable(metrics)
        _check_finite(seed, metrics)
        per_seed[str(seed)] = {"metrics": metrics,
                               "resolved": _jsonable(resolved),
                               "files": files}

    report = RunReport(
        mode=config.mode, seeds=list(config.seeds), config=_jsonable(config.echo),
        per_seed=per_seed, aggregates=_aggregate(per_seed),
        verified_metrics=list(VERIFIED_METRICS[config.mode]),
        tool_version=__version__,
        wall_clock_seconds=time.monotonic() - started)
    report.report_path = os.path.join(config.out_dir, "report.json")
    with open(report.report_path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    if config.output.get("svg"):
        curves = {}
        for seed_key, entry in per_seed.items():
            for role in ("curve", "curve_ols"):
                name = entry["files"].get(role)
                if name:
                    label = f"seed{seed_key}" + ("_ols" if role.endswith("ols") else "")
                    curves[label] = read_curve_csv(os.path.join(config.out_dir, name))
        if curves:
            write_svg(os.path.join(config.out_dir, "curves.svg"), curves,
                      title=f"{config.mode}: cumulative clean regret")
        else:
            logger.info("svg requested but mode %s has no curves", config.mode)
    return report


# ----------------------------------------------------------- verification

@dataclass
class VerifyResult:
    ok: bool
    failures: list
    checked: int


def _close(a, b, tol: float = VERIFY_TOL) -> bool:
    if isinstance(a, (list, tuple)) or isinstance(b, (list, tuple)):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return a.shape == b.shape and bool(np.all(np.abs(a - b) <= tol))
    return abs(float(a) - float(b)) <= tol


def _artifact(base: str, entry: dict, role: str):
    name = entry.get("files", {}).get(role)
    return os.path.join(base, name) if name else None


def _check_curve(base, entry, role, expected, failures):
    path = _artifact(base, entry, role)
    if path is None:
        return
    stored = read_curve_csv(path)
    if len(stored) != len(expected):
        failures.append(f"files.{os.path.basename(path)}: "
                        f"{len(stored)} rows, expected {len(expected)}")
        return
    if len(stored) and float(np.abs(stored - expected).max()) > VERIFY_TOL:
        idx = int(np.abs(stored - expected).argmax())
        failures.append(f"files.{os.path.basename(path)}: row {idx} diverges")


def _reverify_online(report, seed, entry, base):
    failures = []
    R = float(report["config"].get("environment", {}).get("R", 0.0))
    transcript = read_transcript(_artifact(base, entry, "transcript"), R=R)
    out = _regression_transcript_metrics(transcript)
    _check_curve(base, entry, "curve", clean_sq_regret_curve(transcript), failures)
    path_ols = _artifact(base, entry, "transcript_ols")
    if path_ols:
        ols = _regression_transcript_metrics(read_transcript(path_ols, R=R))
        out["ols_clean_sq_regret"] = ols["clean_sq_regret"]
        out["ols_observed_sq_error"] = ols["observed_sq_error"]
        ratio = _maybe_ratio(out["clean_sq_regret"], out["ols_clean_sq_regret"])
        if ratio is not None:
            out["regret_ratio"] = ratio
        _check_curve(base, entry, "curve_ols",
                     clean_sq_regret_curve(read_transcript(path_ols, R=R)),
                     failures)
    return out, failures


def _reverify_bandit(report, seed, entry, base):
    failures = []
    R = float(report["config"].get("environment", {}).get("R", 0.0))
    transcript = read_transcript(_artifact(base, entry, "transcript"), R=R)
    out = _bandit_transcript_metrics(transcript)
    _check_curve(base, entry, "curve", clean_pseudo_regret_curve(transcript),
                 failures)
    path_ols = _artifact(base, entry, "transcript_ols")
    if path_ols:
        transcript_ols = read_transcript(path_ols, R=R)
        ols = _bandit_transcript_metrics(transcript_ols)
        out["ols_clean_pseudo_regret"] = ols["clean_pseudo_regret"]
        out["ols_observed_loss_total"] = ols["observed_loss_total"]
        ratio = _maybe_ratio(out["clean_pseudo_regret"],
                             out["ols_clean_pseudo_regret"])
        if ratio is not None:
            out["pseudo_regret_ratio"] = ratio
        _check_curve(base, entry, "curve_ols",
                     clean_pseudo_regret_curve(transcript_ols), failures)
    return out, failures


def _reverify_offline(report, seed, entry, base):
    failures = []
    x, y, clean, _gamma = read_dataset_csv(_artifact(base, entry, "dataset"))
    stored = entry["metrics"]
    w_est = stored.get("w_estimate")
    w_star = entry.get("resolved", {}).get("w_star")
    if w_est is None or w_star is None:
        failures.append(f"per_seed.{seed}: missing w_estimate or resolved w_star")
        return {}, failures
    out = _offline_metrics(x, y, clean, w_est, w_star,
                           with_ols="param_error_ols" in stored)
    transcript = read_transcript(_artifact(base, entry, "transcript"))
    t_obs = _sq_total([r[4] for r in transcript.rows],
                      [0.0] * len(transcript.rows))
    t_clean = _sq_total([r[5] for r in transcript.rows],
                        [0.0] * len(transcript.rows))
    if not _close(t_obs, out["observed_sq_total"]) or not _close(t_clean, out["clean_sq_total"]):
        name = os.path.basename(_artifact(base, entry, "transcript"))
        failures.append(f"files.{name}: totals diverge from the dataset file")
    residuals = x @ np.asarray(w_est, dtype=float) - np.asarray(clean)
    _check_curve(base, entry, "curve", np.cumsum(residuals ** 2), failures)
    return out, failures


def _reverify_lower_bound(report, seed, entry, base):
    return _lower_bound_metrics(report["config"].get("environment", {}),
                                report["config"].get("params", {})), []


def _reverify_jl(report, seed, entry, base):
    return _jl_metrics(report["config"].get("params", {}), seed), []


_REVERIFY = {
    "regress-offline": _reverify_offline,
    "regress-online-cut": _reverify_online,
    "regress-online-gd": _reverify_online,
    "bandit": _reverify_bandit,
    "lower-bound": _reverify_lower_bound,
    "jl-check": _reverify_jl,
}


def verify_report(path: str) -> VerifyResult:
    """Recompute every verified metric from the artifacts and compare.

    Raises ReportError for structural problems (missing or unreadable
    files); numeric mismatches come back as failures, first divergent
    field first.
    """
    report_path = os.path.join(path, "report.json") if os.path.isdir(path) else path
    try:
        with open(report_path) as fh:
            report = json.load(fh)
    except FileNotFoundError:
        raise ReportError(f"missing report file: {report_path}")
    except json.JSONDecodeError as err:
        raise ReportError(f"unreadable report {report_path}: {err}")
    mode = report.get("mode")
    if mode not in MODES:
        raise ReportError(f"report has unknown mode {mode!r}")
    base = os.path.dirname(os.path.abspath(report_path))

    failures = []
    checked = 0
    for seed in report.get("seeds", []):
        entry = report.get("per_seed", {}).get(str(seed))
        if entry is None:
            raise ReportError(f"report lacks a per_seed entry for seed {seed}")
        recomputed, curve_failures = _REVERIFY[mode](report, seed, entry, base)
        stored = entry.get("metrics", {})
        for key in report.get("verified_metrics", []):
            have_old, have_new = key in stored, key in recomputed
            if not have_old and not have_new:
                continue
            checked += 1
            if have_old != have_new:
                failures.append(f"per_seed.{seed}.{key}: present on one side only")
            elif not _close(stored[key], recomputed[key]):
                failures.append(f"per_seed.{seed}.{key}: stored "
                                f"{stored[key]!r} != recomputed {recomputed[key]!r}")
        checked += len(curve_failures)
        failures.extend(curve_failures)

    fresh = _aggregate(report.get("per_seed", {}))
    for key, stat in report.get("aggregates", {}).items():
        ref = fresh.get(key)
        if ref is None:
            failures.append(f"aggregates.{key}: not derivable from per-seed metrics")
            continue
        for stat_name in ("mean", "stddev"):
            checked += 1
            if not _close(stat.get(stat_name), ref[stat_name]):
                failures.append(f"aggregates.{key}.{stat_name}: stored "
                                f"{stat.get(stat_name)!r} != recomputed {ref[stat_name]!r}")
    return VerifyResult(ok=not failures, failures=failures, checked=checked)


# -------------------------------------------------------------------- CLI

class _Parser(argparse.ArgumentParser):
    def error(self, message):                     # exit code discipline
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML experiment file")
    common.add_argument("--seed", type=int, help="run a single seed")
    common.add_argument("--seeds", help='seed range "A..B" or list "1,4,9"')
    common.add_argument("--out", help=f"output directory (default ${OUT_DIR_VAR} or runs/<mode>)")
    common.add_argument("--mode", help="experiment mode (for the run subcommand)")
    common.add_argument("--param", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="dotted config override, e.g. environment.noise.sigma=0.2")
    parser = _Parser(prog="hubersos",
                     description="Robust regression and bandit experiments.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)
    for name in MODES + ("run",):
        sub.add_parser(name, parents=[common],
                       help=f"run a {name} experiment" if name != "run"
                       else "run with the mode taken from --mode/config")
    verify = sub.add_parser("verify", help="recompute a report's metrics from its artifacts")
    verify.add_argument("path", help="report.json or its directory")
    return parser


def config_from_cli(ns: argparse.Namespace) -> ExperimentConfig:
    file_cfg = load_config_file(ns.config) if ns.config else {}
    mode = ns.command if ns.command in MODES else None
    if ns.mode:
        if mode and ns.mode != mode:
            raise ConfigError(f"--mode {ns.mode!r} conflicts with subcommand {mode!r}")
        mode = mode or ns.mode
    mode = mode or file_cfg.get("mode")
    if mode is None:
        raise ConfigError("mode: give a mode subcommand, --mode, or a config with one")
    merged = _deep_merge(default_config(mode), file_cfg)
    merged["mode"] = mode
    if ns.seed is not None:
        merged["seeds"] = [ns.seed]
    if ns.seeds:
        merged["seeds"] = parse_seed_list(ns.seeds)
    if ns.out:
        merged["out"] = ns.out
    apply_param_overrides(merged, ns.param)
    return build_experiment_config(merged)


def _print_summary(report: RunReport):
    print(f"mode={report.mode} seeds={report.seeds} -> {report.report_path}")
    headline = _HEADLINE[report.mode]
    for seed in report.seeds:
        metrics = report.per_seed[str(seed)]["metrics"]
        value = metrics.get(headline)
        shown = f"{value:.6g}" if isinstance(value, (int, float)) else "n/a"
        print(f"  seed {seed}: {headline}={shown}")
    stat = report.aggregates.get(headline)
    if stat:
        print(f"  {headline}: mean={stat['mean']:.6g} stddev={stat['stddev']:.6g}")
    print(f"  wall clock: {report.wall_clock_seconds:.1f}s")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    if ns.command == "verify":
        try:
            result = verify_report(ns.path)
        except ReportError as err:
            print(f"error: {err}", file=sys.stderr)
            return 1
        if result.ok:
            print(f"verify: pass ({result.checked} values match within {VERIFY_TOL:g})")
            return 0
        print(f"verify: FAIL ({len(result.failures)} mismatch(es))")
        for failure in result.failures[:20]:
            print(f"  {failure}")
        return 2

    try:
        config = config_from_cli(ns)
        report = run_experiment(config)
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    _print_summary(report)
    return 0


if __name__ == "__main__":
    sys.exit(main())
