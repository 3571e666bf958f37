"""Prototype: solve the noiseless d=1 instance and the planted n=40 d=3 instance."""
import time
import numpy as np
import warnings

from hubersos.moment_program import (
    RegressionDataset, RegressionParams, build_program, sos_regression,
    default_params, check_feasible_point,
)
from hubersos.sdp import SolverSettings, solve_sdp

# ---------------- noiseless y = 2x ----------------
x = np.linspace(-1, 1, 10).reshape(-1, 1)
y = 2.0 * x.ravel()
ds = RegressionDataset(x=x, y=y)
params = RegressionParams(R=5.0, eta=0.0, eta_bar=0.1, alpha=0.01, sigma=0.1)

for tol, iters in [(1e-6, 20000)]:
    t0 = time.time()
    res = sos_regression(ds, params, settings=SolverSettings(
        tolerance=tol, max_iterations=iters, verbose=True, log_every=1000))
    dt = time.time() - t0
    print(f"noiseless: tol={tol} -> w={res.w}, status={res.diagnostics['status']}, "
          f"iters={res.diagnostics['iterations']}, obj={res.diagnostics['objective']:.3e}, "
          f"normerr={res.diagnostics['normalization_error']:.2e}, {dt:.2f}s", flush=True)
    print("  |w-2| =", abs(res.w[0] - 2.0), flush=True)

# ---------------- planted instance seed 1 ----------------
rng = np.random.default_rng(1)
n, d, R, sigma, eta = 40, 3, 5.0, 0.1, 0.1
wstar = rng.normal(size=d)
wstar = wstar / np.linalg.norm(wstar) * (0.8 * R)
xs = rng.normal(size=(n, d))
xs /= np.maximum(1.0, np.linalg.norm(xs, axis=1))[:, None]
noise = rng.normal(scale=sigma, size=n)
clean = xs @ wstar + noise
corrupt = rng.random(n) < eta
ys = np.where(corrupt, R, clean)
ds2 = RegressionDataset(x=xs, y=ys)
p2 = default_params(n=n, d=d, k=4, delta=0.1, eta=eta, R=R, sigma=sigma)
print(f"planted: eta_bar={p2.eta_bar:.4f} alpha={p2.alpha:.4f} n_theory={p2.n_theory:.1f} "
      f"n_corrupt={corrupt.sum()}", flush=True)

t0 = time.time()
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    res2 = sos_regression(ds2, p2, settings=SolverSettings(
        tolerance=1e-5, max_iterations=6000, verbose=True, log_every=200))
dt = time.time() - t0
print(f"planted: status={res2.diagnostics['status']} iters={res2.diagnostics['iterations']} "
      f"obj={res2.diagnostics['objective']:.4f} {dt:.1f}s")
sig_n = ds2.second_moment()
err_sos = float((res2.w - wstar) @ sig_n @ (res2.w - wstar))
w_ols = np.linalg.lstsq(xs, ys, rcond=None)[0]
err_ols = float((w_ols - wstar) @ sig_n @ (w_ols - wstar))
print(f"planted: ||w_sos-w*||^2_Sn = {err_sos:.4f}  vs OLS {err_ols:.4f}  ratio={err_sos/err_ols:.3f}")
print("selection mass:", res2.diagnostics["selection_mass"])
sel = res2.pe.selection_means()
print("mean sel on corrupted:", sel[corrupt].mean() if corrupt.any() else None,
      " on clean:", sel[~corrupt].mean())
