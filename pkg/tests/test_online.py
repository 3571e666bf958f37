"""Tests for the separation oracle, cut engines, drivers, and schedules."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

import hubersos.online as online
from hubersos.online import (
    EllipsoidEngine,
    OnlineParams,
    OracleState,
    calibrate_c0,
    ogd_step,
    phi_gradient,
    phi_value,
    project_to_ball,
    schedule_params,
    separation_oracle_step,
    sos_and_cut_run,
    sos_gd_run,
)


# ------------------------------------------------------------ witness maths

def test_phi_gradient_examples():
    assert np.allclose(phi_gradient(np.array([1.0, 0.0]), np.zeros(2), np.eye(2)),
                       [2.0, 0.0])
    v = np.array([0.3, -0.7])
    assert np.allclose(phi_gradient(v, v, np.eye(2)), 0.0)
    assert np.allclose(
        phi_gradient(np.array([1.0, 1.0]), np.zeros(2), np.diag([1.0, 0.0])),
        [2.0, 0.0])


def test_project_to_ball():
    assert np.allclose(project_to_ball(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])
    w = np.array([0.1, 0.2])
    assert project_to_ball(w, 1.0) is w


# --------------------------------------------------------- separation oracle

def _params(**kw):
    base = dict(R=5.0, T=100, N0=2, C0=4.0, B=1, mode="cutting_plane")
    base.update(kw)
    return OnlineParams(**base)


def _pin_refit(monkeypatch, v):
    def fake(state, params):
        state.v = np.asarray(v, dtype=float)
        state.refits += 1
        return True
    monkeypatch.setattr(online, "_refit", fake)


def test_oracle_hand_example(monkeypatch):
    _pin_refit(monkeypatch, [0.0])
    state = OracleState(w=np.array([3.0]), d=1)
    params = _params()
    r1 = separation_oracle_step(state, (np.array([1.0]), 0.0), params)
    assert r1.prediction == 3.0 and r1.cut is None       # |D| = 1 < N0
    r2 = separation_oracle_step(state, (np.array([1.0]), 0.0), params)
    assert r2.phi == pytest.approx(9.0)
    assert r2.cut is not None and r2.cut[0] == pytest.approx(6.0)
    assert state.batch_size == 0                         # reset after the cut


def test_oracle_no_cut_below_batch_threshold(monkeypatch):
    _pin_refit(monkeypatch, [0.0])
    state = OracleState(w=np.array([100.0]), d=1)
    params = _params(N0=5)
    for _ in range(4):
        res = separation_oracle_step(state, (np.array([1.0]), 0.0), params)
        assert res.cut is None and res.phi is None


def test_oracle_no_cut_at_witness_zero(monkeypatch):
    _pin_refit(monkeypatch, [2.0])
    state = OracleState(w=np.array([2.0]), d=1)
    params = _params()
    separation_oracle_step(state, (np.array([1.0]), 0.0), params)
    res = separation_oracle_step(state, (np.array([1.0]), 0.0), params)
    assert res.phi == 0.0 and res.cut is None


def test_oracle_gd_mode_uses_c1(monkeypatch):
    _pin_refit(monkeypatch, [0.0])
    params = _params(C0=4.0, C1=16.0, mode="gd")
    state = OracleState(w=np.array([3.0]), d=1)          # phi = 9 < C1
    separation_oracle_step(state, (np.array([1.0]), 0.0), params)
    res = separation_oracle_step(state, (np.array([1.0]), 0.0), params)
    assert res.phi == pytest.approx(9.0) and res.cut is None


def test_refit_cadence(monkeypatch):
    calls = []
    def fake(state, params):
        calls.append(state.batch_size)
        state.v = np.zeros(1)
        return True
    monkeypatch.setattr(online, "_refit", fake)
    state = OracleState(w=np.zeros(1), d=1)
    params = _params(N0=3, B=2, C0=1e9)                  # cuts suppressed
    for _ in range(10):
        separation_oracle_step(state, (np.array([1.0]), 0.0), params)
    assert calls == [3, 5, 7, 9]


def test_refit_failure_keeps_previous_estimate(monkeypatch):
    def boom(*a, **kw):
        raise RuntimeError("solver exploded")
    monkeypatch.setattr(online, "sos_regression", boom)
    state = OracleState(w=np.zeros(1), d=1)
    state.batch_x = [np.array([1.0])] * 3
    state.batch_y = [0.0] * 3
    state.v = np.array([0.5])
    ok = online._refit(state, _params(N0=3))
    assert not ok and state.solver_failures == 1
    assert state.v[0] == 0.5                             # untouched


# --------------------------------------------------------- ellipsoid engine

def test_ellipsoid_one_dimensional_halving():
    engine = EllipsoidEngine(d=1, R=2.0, r=0.01)
    engine.cut(np.array([1.0]))                          # keep the negatives
    assert engine.center[0] == pytest.approx(-1.0)
    engine.cut(np.array([-1.0]))                         # keep the positives
    assert engine.center[0] == pytest.approx(-0.5)


def test_ellipsoid_budget_formula():
    engine = EllipsoidEngine(d=4, R=10.0, r=0.05)
    assert engine.budget == math.ceil(2 * 4 * 5 * math.log(200.0)) + 4


def test_ellipsoid_localizes_hidden_point():
    rng = np.random.default_rng(5)
    d, R, r = 4, 10.0, 0.05
    w_star = project_to_ball(rng.normal(size=d), R * 0.8)
    engine = EllipsoidEngine(d=d, R=R, r=r)
    found = False
    while not engine.exhausted:
        center = engine.proposal()
        if np.linalg.norm(center - w_star) <= r:
            found = True
            break
        g = center - w_star                              # valid central cut
        assert g @ (w_star - center) < 0                 # never removes w*
        engine.cut(g)
    assert found
    assert engine.cuts <= engine.budget


def test_ellipsoid_volume_shrinks_and_stays_pd():
    rng = np.random.default_rng(0)
    engine = EllipsoidEngine(d=3, R=1.0, r=0.01)
    for _ in range(30):
        det_before = np.linalg.det(engine.shape)
        engine.cut(rng.normal(size=3))
        det_after = np.linalg.det(engine.shape)
        assert det_after / det_before <= math.exp(-1.0 / (engine.d + 1)) + 1e-9
        assert np.linalg.eigvalsh(engine.shape)[0] > 0


# --------------------------------------------------------------------- ogd

def test_ogd_clamping_arithmetic():
    w = np.zeros(1)
    seen = []
    for _ in range(5):
        w = project_to_ball(w - 0.1 * np.array([-1.0]), 0.25)
        seen.append(w[0])
    assert seen == pytest.approx([0.1, 0.2, 0.25, 0.25, 0.25])


def test_ogd_regret_inequality_on_random_quadratics():
    R, T, d = 1.0, 40, 3
    G = 4.0 * R
    for seed in range(100):
        rng = np.random.default_rng(seed)
        sigmas, vs = [], []
        for _ in range(T):
            m = rng.normal(size=(d, d))
            s = m @ m.T
            s /= max(1.0, np.linalg.eigvalsh(s)[-1])     # operator norm <= 1
            sigmas.append(s)
            vs.append(project_to_ball(rng.normal(size=d), R))
        w = np.zeros(d)
        iterates, grads = [], []
        for s, v in zip(sigmas, vs):
            g = phi_gradient(w, v, s)
            iterates.append(w)
            grads.append(g)
            w = ogd_step(w, g, R, G, T)
        for _ in range(8):
            w_ref = project_to_ball(rng.normal(size=d), R)
            total = sum(float(g @ (wt - w_ref))
                        for g, wt in zip(grads, iterates))
            assert total <= 3 * R * G * math.sqrt(T) + 1e-9


# ------------------------------------------------------------------ drivers

class StubEnv:
    """Minimal regression stream: fixed covariates, clean responses."""

    def __init__(self, w_star, T, d, seed=0, noise=0.0):
        rng = np.random.default_rng(seed)
        self.xs = rng.normal(size=(T, d))
        self.xs /= np.linalg.norm(self.xs, axis=1, keepdims=True)
        self.ys = self.xs @ w_star + noise * rng.normal(size=T)
        self.config = SimpleNamespace(d=d)
        self.t = 0
        self.predictions = []

    def next_covariate(self):
        if self.t >= len(self.xs):
            raise ValueError("exhausted")
        return self.xs[self.t]

    def step(self, prediction):
        self.predictions.append(prediction)
        y = self.ys[self.t]
        self.t += 1
        return y, None


def _pin_refit_to_truth(monkeypatch, w_star):
    def fake(state, params):
        state.v = np.asarray(w_star, dtype=float)
        state.refits += 1
        return True
    monkeypatch.setattr(online, "_refit", fake)


def test_cutting_plane_run_converges_with_exact_oracle(monkeypatch):
    d, R = 3, 2.0
    w_star = np.array([1.0, -0.5, 0.8])
    _pin_refit_to_truth(monkeypatch, w_star)
    env = StubEnv(w_star, T=600, d=d, seed=3)
    params = OnlineParams(R=R, T=600, N0=5, C0=0.02, B=1, r=0.05,
                          mode="cutting_plane")
    result = sos_and_cut_run(env, params)
    assert result.cuts > 0
    assert result.cuts <= EllipsoidEngine(d, R, 0.05).budget
    assert np.linalg.norm(result.final_w) <= R + 1e-9
    # the pinned oracle makes every cut valid, so the truth is never removed
    assert phi_value(result.final_w, w_star, np.eye(d) / d) <= params.C0 * d


def test_cutting_plane_zero_cuts_below_n0(monkeypatch):
    w_star = np.array([0.5, 0.5])
    _pin_refit_to_truth(monkeypatch, w_star)
    env = StubEnv(w_star, T=4, d=2)
    params = OnlineParams(R=1.0, T=4, N0=10, C0=0.1, r=0.01)
    result = sos_and_cut_run(env, params)
    assert result.cuts == 0
    assert np.all(result.predictions == 0.0)             # initial center


def test_gd_run_moves_toward_truth(monkeypatch):
    d, R = 2, 1.0
    w_star = np.array([0.6, -0.6])
    _pin_refit_to_truth(monkeypatch, w_star)
    env = StubEnv(w_star, T=800, d=d, seed=9)
    params = OnlineParams(R=R, T=800, N0=4, C0=0.05, B=1, mode="gd")
    result = sos_gd_run(env, params)
    assert result.cuts > 0
    assert np.linalg.norm(result.final_w - w_star) < np.linalg.norm(w_star)
    assert np.linalg.norm(result.final_w) <= R + 1e-9
    assert result.diagnostics["step"] > 0


def test_gd_run_zero_cuts_stays_at_zero(monkeypatch):
    w_star = np.array([0.2])
    _pin_refit_to_truth(monkeypatch, w_star)
    env = StubEnv(w_star, T=30, d=1)
    params = OnlineParams(R=1.0, T=30, N0=5, C0=1e9, mode="gd")
    result = sos_gd_run(env, params)
    assert result.cuts == 0
    assert np.all(result.predictions == 0.0)
    assert np.all(result.final_w == 0.0)


def test_stream_shorter_than_horizon(monkeypatch):
    w_star = np.array([0.1, 0.1])
    _pin_refit_to_truth(monkeypatch, w_star)
    env = StubEnv(w_star, T=7, d=2)
    params = OnlineParams(R=1.0, T=50, N0=3, C0=1e9, r=0.01)
    result = sos_and_cut_run(env, params)
    assert len(result.predictions) == 7                  # complete, not fatal


# ---------------------------------------------------------------- schedules

def test_schedule_cutting_plane_example():
    p = schedule_params(T=1000, d=3, k=4, sigma=1.0, R=1.0, eta=0.1,
                        delta=0.05)
    assert p.N0 == 198
    assert p.r == pytest.approx(0.001)
    assert p.C1 == pytest.approx(2 * p.C0)
    assert p.mode == "cutting_plane"


def test_schedule_gd_example():
    p = schedule_params(T=1000, d=3, k=4, sigma=1.0, R=1.0, eta=0.1,
                        delta=0.05, mode="gd")
    assert p.N0 == 501
    assert p.r == 0.0


def test_schedule_high_dim_carries_projection():
    p = schedule_params(T=2 ** 18, d=500, k=4, sigma=1.0, R=1.0, eta=0.0,
                        delta=0.05, mode="high_dim")
    assert p.m == 4
    assert p.N0 == int(round((2 ** 18) ** 0.9))


def test_schedule_breakdown_and_validation():
    with pytest.raises(ValueError):
        schedule_params(T=10, d=1, k=4, sigma=1.0, R=1.0, eta=0.5, delta=0.1)
    with pytest.raises(ValueError):
        schedule_params(T=10, d=1, k=2, sigma=1.0, R=1.0, eta=0.1, delta=0.1)
    with pytest.raises(ValueError):
        OnlineParams(R=1.0, T=10, N0=0, C0=1.0)
    with pytest.raises(ValueError):
        OnlineParams(R=1.0, T=10, N0=1, C0=1.0, r=2.0)


def test_calibrate_c0():
    samples = np.arange(1.0, 101.0)
    assert calibrate_c0(samples, quantile=0.95, margin=2.0) == pytest.approx(
        2.0 * np.quantile(samples, 0.95))
    with pytest.raises(ValueError):
        calibrate_c0([])


# ------------------------------------------------------- solver integration

def test_online_run_with_real_solver():
    """End-to-end: contaminated stream, real offline refits, cutting plane."""
    from hubersos.environments import (ContaminationConfig, NoiseSpec,
                                       RegressionEnv, RegressionEnvConfig)
    from hubersos.sdp import SolverSettings

    w_star = np.array([0.8])
    config = RegressionEnvConfig(
        d=1, T=60, R=1.0, w_star=w_star,
        noise=NoiseSpec(sigma=0.1),
        contamination=ContaminationConfig(eta=0.1, adversary="constant_offset",
                                          value=2.0))
    env = RegressionEnv(config, seed=12)
    params = OnlineParams(
        R=1.0, T=60, N0=12, C0=0.05, B=10, r=1.0 / 60, n_max=12,
        solver=SolverSettings(tolerance=1e-3, max_iterations=1500, rho=0.1),
        mode="cutting_plane")
    result = sos_and_cut_run(env, params)
    assert result.solver_failures == 0
    assert result.refits >= 1
    assert result.cuts >= 1
    assert len(result.predictions) == 60
    # the run must genuinely learn: clean regret well below the zero
    # predictor's, and the final iterate in the truth's half of the ball
    from hubersos.environments import clean_sq_regret
    zero_regret = sum(r[5] ** 2 for r in env.transcript.rows)
    assert clean_sq_regret(env.transcript) < 0.5 * zero_regret
    assert abs(result.final_w[0] - w_star[0]) < 0.6
