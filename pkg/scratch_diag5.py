import sys
import time

import numpy as np

from hubersos.environments import (RegressionEnvConfig, NoiseSpec,
                                   ContaminationConfig, RegressionEnv)
from hubersos.harness import _sub_seed, _TAG_W_STAR
from hubersos.online import (OnlineParams, OracleState, separation_oracle_step,
                             project_to_ball)
from hubersos.sdp import SolverSettings

T, d, R, sigma, eta = 2000, 3, 5.0, 0.1, 0.15
seed = int(sys.argv[1]) if len(sys.argv) > 1 else 1
n_max = int(sys.argv[2]) if len(sys.argv) > 2 else 20
gamma_step = float(sys.argv[3]) if len(sys.argv) > 3 else 2000.0
C0 = float(sys.argv[4]) if len(sys.argv) > 4 else 0.05

rng = np.random.default_rng(_sub_seed(seed, _TAG_W_STAR))
w_star = rng.standard_normal(d)
w_star *= 0.5 * R / np.linalg.norm(w_star)
cfg = RegressionEnvConfig(
    d=d, T=T, R=R, w_star=w_star,
    noise=NoiseSpec(family="gaussian", sigma=sigma),
    contamination=ContaminationConfig(eta=eta, adversary="adaptive_repel"))

params = OnlineParams(
    R=R, T=T, N0=60, C0=C0, C1=2 * C0, r=0.0, gamma_step=gamma_step, B=10,
    delta=0.05, k=4.0, sigma=sigma, eta=eta, n_max=n_max, mode="gd",
    solver=SolverSettings(tolerance=1e-3, max_iterations=1500, rho=0.1))

G = 4.0 * params.R
import math
v_max = math.ceil(4.0 * params.R ** 4 / params.C0 ** 2 + 1.0)
step = params.gamma_step * 2.0 * params.R / (G * math.sqrt(v_max))
print(f"step={step:.3f} v_max={v_max}", flush=True)

env = RegressionEnv(cfg, seed)
state = OracleState(w=np.zeros(d), d=d)
w = np.zeros(d)
regret = 0.0
block = 0.0
t0 = time.time()
for t in range(T):
    x = env.next_covariate()
    state.w = w
    pred = float(w @ x)
    y, _ = env.step(pred)
    result = separation_oracle_step(state, (x, y), params)
    inst = (pred - float(w_star @ x)) ** 2
    regret += inst
    block += inst
    if result.refitted and state.refits <= 8:
        verr = np.linalg.norm(state.v - w_star)
        print(f"  t={t} refit#{state.refits} |v-w*|={verr:.3f}", flush=True)
    if result.cut is not None:
        w = project_to_ball(w - step * result.cut, params.R)
        print(f"  t={t} CUT phi={result.phi:.3f} |w-w*|={np.linalg.norm(w - w_star):.3f} "
              f"|v-w*|={np.linalg.norm(state.v - w_star):.3f}", flush=True)
    if (t + 1) % 250 == 0:
        print(f"t={t+1} block_regret={block:.1f} total={regret:.1f} "
              f"|w-w*|={np.linalg.norm(w - w_star):.3f}", flush=True)
        block = 0.0
print(f"total={regret:.1f} cuts? refits={state.refits} fails={state.solver_failures} "
      f"{time.time()-t0:.0f}s", flush=True)
