import sys
import time

import numpy as np

from hubersos.moment_program import (RegressionDataset, default_params,
                                     sos_regression, build_program)
from hubersos.sdp import SolverSettings

tol = float(sys.argv[1]) if len(sys.argv) > 1 else 1e-4
iters = int(sys.argv[2]) if len(sys.argv) > 2 else 3000
seeds = [int(s) for s in sys.argv[3].split(",")] if len(sys.argv) > 3 else [1, 2, 3, 4, 5]

n, d, R, sigma, eta = 40, 3, 5.0, 0.1, 0.1
params = default_params(n=n, d=d, k=4, delta=0.1, eta=eta, R=R, sigma=sigma)
print(f"eta_bar={params.eta_bar:.4f} alpha={params.alpha:.4f} "
      f"tau={1-params.eta_bar-params.alpha:.4f} n_theory={params.n_theory:.0f}",
      flush=True)

for seed in seeds:
    rng = np.random.default_rng(seed)
    wstar = rng.normal(size=d)
    wstar *= 0.8 * R / np.linalg.norm(wstar)
    xs = rng.normal(size=(n, d))
    xs /= np.maximum(1.0, np.linalg.norm(xs, axis=1))[:, None]
    clean = xs @ wstar + sigma * rng.normal(size=n)
    corrupt = rng.random(n) < eta
    ys = np.where(corrupt, R, clean)

    Sn = xs.T @ xs / n
    t0 = time.time()
    settings = SolverSettings(tolerance=tol, max_iterations=iters, rho=0.1,
                              verbose=True, log_every=250)
    res = sos_regression(RegressionDataset(xs, ys), params,
                         settings=settings, n_max=60)
    pe, diag = res.pe, res.diagnostics
    dt = time.time() - t0
    w = res.w
    wols = np.linalg.solve(xs.T @ xs, xs.T @ ys)
    def err(v):
        return float((v - wstar) @ Sn @ (v - wstar))
    sel = pe.selection_means()
    print(f"seed {seed}: sos={err(w):.5f} ols={err(wols):.5f} "
          f"ratio={err(w)/err(wols):.3f} status={diag['status']} "
          f"iters={diag['iterations']} {dt:.0f}s "
          f"sel_corrupt={sel[corrupt].mean():.3f} sel_clean={sel[~corrupt].mean():.3f}",
      flush=True)
