import sys
import time

import numpy as np

from hubersos.bandits import (BanditParams, OlsOracle, RobustOracle,
                              auto_regret_estimate, choose_gamma_mu,
                              embedding_dim, oracle_ball_radius, squarecb_run)
from hubersos.environments import (BanditEnv, BanditEnvConfig,
                                   ContaminationConfig, NoiseSpec,
                                   clean_pseudo_regret)
from hubersos.harness import _sub_seed, _TAG_LEARNER, _TAG_W_STARS
from hubersos.online import OnlineParams
from hubersos.sdp import SolverSettings

K, d, T, R, sigma, eta = 3, 3, 2000, 5.0, 0.25, 0.15

seeds = [int(s) for s in sys.argv[1].split(",")]
n_max = int(sys.argv[2]) if len(sys.argv) > 2 else 22
B = int(sys.argv[3]) if len(sys.argv) > 3 else 50
gamma_scale = float(sys.argv[4]) if len(sys.argv) > 4 else 1.0

emb_d = embedding_dim(K, d)
R_o = oracle_ball_radius(K, R)

for seed in seeds:
    rng = np.random.default_rng(_sub_seed(seed, _TAG_W_STARS))
    w_stars = rng.standard_normal((K, d))
    w_stars *= R / np.linalg.norm(w_stars, axis=1, keepdims=True)
    cfg = BanditEnvConfig(
        K=K, d=d, T=T, R=R, w_stars=w_stars,
        noise=NoiseSpec(family="gaussian", sigma=sigma),
        contamination=ContaminationConfig(eta=eta, adversary="adaptive_repel"))
    gamma, mu = choose_gamma_mu(K, T, auto_regret_estimate(4.0, sigma, eta, T))
    gamma *= gamma_scale
    bparams = BanditParams(K=K, gamma=gamma, mu=mu, T=T, R=R)
    learner_seed = _sub_seed(seed, _TAG_LEARNER)

    oparams = OnlineParams(
        R=R_o, T=T, N0=60, C0=0.05, C1=0.1, r=0.0, gamma_step=1580.0, B=B,
        delta=0.5, k=4.0, sigma=sigma, eta=eta, c1=0.35, c2=0.5, n_max=n_max,
        mode="gd",
        solver=SolverSettings(tolerance=1e-3, max_iterations=2500, rho=0.1))
    env = BanditEnv(cfg, seed)
    t0 = time.time()
    oracle = RobustOracle(K, d, oparams)
    tr = squarecb_run(env, oracle, bparams, seed=learner_seed)
    dt = time.time() - t0
    rob = clean_pseudo_regret(tr)

    env2 = BanditEnv(cfg, seed)
    tr2 = squarecb_run(env2, OlsOracle(K, d), bparams, seed=learner_seed)
    ols = clean_pseudo_regret(tr2)
    diag = oracle.diagnostics
    print(f"seed {seed}: robust={rob:.1f} ols={ols:.1f} ratio={rob/ols:.3f} "
          f"gamma={gamma:.1f} refits={diag['refits']} "
          f"fails={diag['solver_failures']} {dt:.0f}s", flush=True)
