import sys
import time

import numpy as np

from hubersos.baselines import clean_excess_square_loss
from hubersos.environments import RegressionEnv, lower_bound_instance
from hubersos.moment_program import RegressionDataset, default_params, sos_regression
from hubersos.sdp import SolverSettings

seeds = [int(s) for s in sys.argv[1].split(",")] if len(sys.argv) > 1 else [1]
tol = float(sys.argv[2]) if len(sys.argv) > 2 else 1e-3
iters = int(sys.argv[3]) if len(sys.argv) > 3 else 1500

instance = lower_bound_instance(R=10.0, eta=0.2, T=2000)
params = default_params(n=60, d=1, k=4, delta=0.05, eta=0.2, R=10.0, sigma=1.0)
print(f"eta_bar={params.eta_bar} alpha={params.alpha:.4f}", flush=True)

for seed in seeds:
    env = RegressionEnv(instance.env_config, seed)
    for _ in range(instance.env_config.T):
        env.next_covariate()
        env.step(0.0)
    x, y = env.as_dataset()
    t0 = time.time()
    res = sos_regression(
        RegressionDataset(x=x, y=y), params,
        settings=SolverSettings(tolerance=tol, max_iterations=iters, rho=0.1),
        n_max=60, subsample_seed=seed)
    dt = time.time() - t0
    w_hat = float(res.w[0])              # rescaled coordinates (x in {0.1, -1})
    excess = clean_excess_square_loss(w_hat / instance.R, instance.population)
    d = res.diagnostics
    print(f"seed {seed}: w_hat={w_hat:+.4f} excess={excess:.5f} "
          f"thr={instance.threshold} pass={excess < instance.threshold} "
          f"status={d['status']} iters={d['iterations']} "
          f"sel={d['selection_mass']:.3f} {dt:.0f}s", flush=True)
