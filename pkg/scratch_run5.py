import math
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

seeds = [int(s) for s in sys.argv[1].split(",")]

for seed in seeds:
    rng = np.random.default_rng(_sub_seed(seed, _TAG_W_STAR))
    w_star = rng.standard_normal(d)
    w_star *= 0.5 * R / np.linalg.norm(w_star)
    cfg = RegressionEnvConfig(
        d=d, T=T, R=R, w_star=w_star,
        noise=NoiseSpec(family="gaussian", sigma=sigma),
        contamination=ContaminationConfig(eta=eta, adversary="adaptive_repel"))
    env = RegressionEnv(cfg, seed)
    _online_ols_run(env)
    ols = clean_sq_regret(env.transcript)
    params = OnlineParams(
        R=R, T=T, N0=60, C0=0.05, C1=0.1, r=0.0, gamma_step=2000.0, B=10,
        delta=0.5, k=4.0, sigma=sigma, eta=eta, c1=0.55, c2=0.5, n_max=25,
        mode="gd",
        solver=SolverSettings(tolerance=1e-3, max_iterations=2500, rho=0.1))
    env2 = RegressionEnv(cfg, seed)
    t0 = time.time()
    res = sos_gd_run(env2, params)
    dt = time.time() - t0
    rob = clean_sq_regret(env2.transcript)
    print(f"seed {seed}: robust={rob:.1f} ols={ols:.1f} ratio={rob/ols:.3f} "
          f"cuts={res.cuts} refits={res.refits} fails={res.solver_failures} "
          f"|w-w*|={np.linalg.norm(res.final_w - w_star):.3f} {dt:.0f}s",
          flush=True)
