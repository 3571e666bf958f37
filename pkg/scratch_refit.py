import time

import numpy as np

from hubersos.environments import (RegressionEnvConfig, NoiseSpec,
                                   ContaminationConfig, RegressionEnv)
from hubersos.moment_program import RegressionDataset, default_params, sos_regression
from hubersos.sdp import SolverSettings

d, R, sigma, eta = 3, 5.0, 0.1, 0.15

for n_use in (20, 25, 30):
    for delta in (0.05, 0.5):
        errs = []
        dt = 0.0
        for seed in (1, 2, 3, 4):
            rng = np.random.default_rng(seed + 100)
            w_star = rng.standard_normal(d)
            w_star *= 0.5 * R / np.linalg.norm(w_star)
            cfg = RegressionEnvConfig(
                d=d, T=n_use, R=R, w_star=w_star,
                noise=NoiseSpec(family="gaussian", sigma=sigma),
                contamination=ContaminationConfig(eta=eta,
                                                  adversary="adaptive_repel"))
            env = RegressionEnv(cfg, seed)
            for _ in range(n_use):
                env.next_covariate()
                env.step(0.0)
            x, y = env.as_dataset()
            params = default_params(n=n_use, d=d, k=4, delta=delta, eta=eta,
                                    R=R, sigma=sigma)
            t0 = time.time()
            res = sos_regression(
                RegressionDataset(x=x, y=y), params,
                settings=SolverSettings(tolerance=1e-3, max_iterations=1500,
                                        rho=0.1),
                n_max=n_use)
            dt += time.time() - t0
            errs.append(float(np.linalg.norm(res.w - w_star)))
        tau = 1.0 - params.eta_bar - params.alpha
        print(f"n={n_use} delta={delta}: tau*n={tau * n_use:.1f} "
              f"errs={[f'{e:.2f}' for e in errs]} avg_time={dt / 4:.1f}s",
              flush=True)
