"""Check a known integer-feasible moment matrix against every compiled row."""
import numpy as np
from hubersos.moment_program import RegressionDataset, RegressionParams, build_program, _reduce

ds = RegressionDataset(x=np.array([[0.5], [-0.5]]), y=np.array([1.0, -1.0]))
params = RegressionParams(R=2.0, eta=0.0, eta_bar=0.3, alpha=0.1)
compiled = build_program(ds, params)
prob = compiled.problem

n, d = 2, 1
w0 = 2.0  # y = 2x exactly fits: residual 0 at both points
a = np.array([1.0, 1.0])

basis = compiled.basis.monomials
def ev(mono):
    val = 1.0
    for v in mono:
        val *= a[v] if v < n else w0
    return val

vecs = np.array([ev(m) for m in basis])
M = np.outer(vecs, vecs)

B1 = 1 + n + d
R2 = params.R ** 2
tau = 1 - params.eta_bar - params.alpha
sig = ds.second_moment()

L_norm = np.empty((B1, B1)); L_frac = np.empty((B1, B1)); L_cov = np.empty((d*B1, d*B1))
for u in range(B1):
    for v in range(B1):
        buv = ev(basis[u]) * ev(basis[v])
        L_norm[u, v] = (R2 - w0**2) * buv
        L_frac[u, v] = (np.mean(a) - tau) * buv
        for p in range(d):
            for q in range(d):
                G = (params.eta_bar - 1) * sig[p, q] + params.alpha * (p == q) \
                    + np.mean(a * ds.x[:, p] * ds.x[:, q])
                L_cov[u*d+p, v*d+q] = G * buv

X = {"M": M, "L_norm": L_norm, "L_frac": L_frac, "L_cov": L_cov}
names = [b[0] for b in prob.blocks]

rows, blks, ii, jj, vv, rhs, rel = prob.constraints.compiled()
nrows = len(rhs)
resid = np.zeros(nrows)
np.add.at(resid, rows, vv * np.array([X[names[b]][i, j] for b, i, j in zip(blks, ii, jj)]))
viol = np.abs(resid - rhs)
print("rows:", nrows, " max violation:", viol.max())
bad = np.argsort(viol)[::-1][:10]
for r in bad:
    if viol[r] < 1e-9:
        break
    terms = [(names[b], int(i), int(j), float(v))
             for b, i, j, v, rr in zip(blks, ii, jj, vv, rows) if rr == r]
    print(f"row {r}: viol {viol[r]:.4g} rhs {rhs[r]} terms {terms[:8]}")

# objective check
obj = 0.0
for (b, i_arr, j_arr, v_arr) in prob.objective:
    obj += float(np.sum(np.asarray(v_arr) * M[np.asarray(i_arr), np.asarray(j_arr)]))
true_obj = np.mean(a * (ds.y - ds.x @ [w0]) ** 2)
print("objective via triplets:", obj, " truth:", true_obj)
