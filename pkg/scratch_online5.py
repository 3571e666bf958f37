import sys
import time

import numpy as np

from hubersos.environments import (RegressionEnvConfig, NoiseSpec,
                                   ContaminationConfig, RegressionEnv,
                                   clean_sq_regret)
from hubersos.harness import _online_ols_run, _sub_seed, _TAG_W_STAR
from hubersos.online import OnlineParams, sos_gd_run
from hubersos.sdp import SolverSettings

T, d, R, sigma, eta = 2000, 3, 5.0, 0.1, 0.15


def env_config(seed):
    rng = np.random.default_rng(_sub_seed(seed, _TAG_W_STAR))
    w = rng.standard_normal(d)
    w *= 0.5 * R / np.linalg.norm(w)
    return RegressionEnvConfig(
        d=d, T=T, R=R, w_star=w,
        noise=NoiseSpec(family="gaussian", sigma=sigma),
        contamination=ContaminationConfig(eta=eta, adversary="adaptive_repel"))


seeds = [int(s) for s in sys.argv[1].split(",")] if len(sys.argv) > 1 else [1, 2, 3]
do_robust = len(sys.argv) > 2 and sys.argv[2] == "robust"

for seed in seeds:
    cfg = env_config(seed)
    env = RegressionEnv(cfg, seed)
    _online_ols_run(env)
    ols = clean_sq_regret(env.transcript)
    print(f"seed {seed}: ols_clean_regret={ols:.1f}", flush=True)
    if not do_robust:
        continue
    params = OnlineParams(
        R=R, T=T, N0=60, C0=0.05, C1=0.1, r=0.0, gamma_step=2000.0, B=10,
        delta=0.05, k=4.0, sigma=sigma, eta=eta, n_max=20, mode="gd",
        solver=SolverSettings(tolerance=1e-3, max_iterations=1500, rho=0.1))
    env2 = RegressionEnv(cfg, seed)
    t0 = time.time()
    res = sos_gd_run(env2, params)
    dt = time.time() - t0
    rob = clean_sq_regret(env2.transcript)
    print(f"seed {seed}: robust={rob:.1f} ratio={rob / ols:.3f} "
          f"cuts={res.cuts} refits={res.refits} fails={res.solver_failures} "
          f"{dt:.0f}s", flush=True)
