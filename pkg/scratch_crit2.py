import json
import time

from hubersos.harness import build_experiment_config, run_experiment

raw = {
    "mode": "regress-offline",
    "seeds": [1, 2, 3, 4, 5],
    "out": "/tmp/accept_c2",
    "environment": {
        "T": 40,
        "contamination": {"eta": 0.1, "adversary": "constant_offset",
                          "value": 5.0},
    },
    "params": {"delta": 0.1},
    "solver": {"tolerance": 1e-4, "max_iterations": 3000, "rho": 0.1},
}
t0 = time.time()
report = run_experiment(build_experiment_config(raw))
for seed, entry in sorted(report.per_seed.items()):
    metrics = entry["metrics"]
    print(f"seed {seed}: ratio={metrics.get('error_ratio'):.3f} "
          f"sos={metrics['param_error_sos']:.5f} "
          f"ols={metrics['param_error_ols']:.5f} "
          f"{metrics['wall_clock_seconds']:.0f}s", flush=True)
print(f"total {time.time() - t0:.0f}s")
