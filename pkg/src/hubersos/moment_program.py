"""Degree-4 moment relaxation for robust least-squares regression.

The underlying selection program, over Boolean per-sample selection
variables ``a_1..a_n`` and a regressor ``w`` in the radius-R ball:

    minimize (1/n) sum_t a_t * (y_t - <w, x_t>)^2
    subject to
        sum_i w_i^2 <= R^2
        a_t^2 = a_t
        (1/n) sum_t a_t >= 1 - eta_bar - alpha
        (1/n) sum_t (1 - a_t) x_t x_t^T  <=  eta_bar * Sigma_n + alpha * I

The relaxation optimizes over degree-4 pseudoexpectations.  Booleanity is
folded into the monomial basis (selection variables are idempotent), the
norm, inlier-fraction, and covariance-domination constraints become
localizing PSD blocks over the degree-1 basis, and entries of all blocks
that denote the same monomial are tied by equality rows.  The rounded
regressor is the vector of degree-1 moments.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .sdp import (
    ConstraintSet,
    SdpInputError,
    SdpProblem,
    SdpSolution,
    SolverSettings,
    solve_sdp,
)

__all__ = [
    "MonomialBasis",
    "RegressionParams",
    "RegressionDataset",
    "CompiledMomentProgram",
    "PseudoExpectation",
    "FeasibilityReport",
    "SosRegressionResult",
    "build_basis",
    "build_program",
    "check_feasible_point",
    "default_params",
    "extract_regressor",
    "sos_regression",
    "compute_vstar",
    "truncation_threshold",
]

BREAKDOWN_ETA = 0.5
ETA_BAR_CAP = 0.499
DEFAULT_BASIS_CAP = 4000
DEFAULT_N_MAX = 60


# ---------------------------------------------------------------- parameters

@dataclass
class RegressionParams:
    """Tuning parameters of the selection program.

    eta is the contamination rate, eta_bar the relaxed outlier budget,
    alpha the covariance slack, rho the derived conditioning parameter
    with eta_bar = 1 / (2 + 2 rho^2).  n_theory, when set, is the sample
    size below which the finite-sample analysis does not apply; callers
    warn but proceed.
    """

    R: float
    eta: float
    eta_bar: float
    alpha: float
    k: int = 4
    sigma: float = 1.0
    delta: float = 0.1
    rho: float = field(default=None)  # type: ignore[assignment]
    n_theory: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.eta < BREAKDOWN_ETA):
            raise ValueError(f"contamination rate {self.eta} is at or past breakdown (1/2)")
        if not (0.0 < self.eta_bar < 0.5):
            raise ValueError(f"outlier budget eta_bar={self.eta_bar} must lie in (0, 1/2)")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.rho is None:
            self.rho = math.sqrt(1.0 / (2.0 * self.eta_bar) - 1.0)


def default_params(n: int, d: int, k: int, delta: float, eta: float,
                   R: float, sigma: float, c1: float = 1.0, c2: float = 1.0) -> RegressionParams:
    """Schedule eta_bar and alpha from the sample size.

    eta_bar = min(eta + c1 * (d ln(1/delta) / n)^(1/k), 0.499)
    alpha   = c2 * sqrt(ln(d/delta) / n)
    """
    if eta >= BREAKDOWN_ETA:
        raise ValueError(f"contamination rate {eta} >= 1/2: no estimator can succeed")
    if n < 1 or d < 1 or k < 2 or not (0 < delta < 1):
        raise ValueError("need n >= 1, d >= 1, k >= 2, delta in (0, 1)")
    eta_bar = min(eta + c1 * (d * math.log(1.0 / delta) / n) ** (1.0 / k), ETA_BAR_CAP)
    alpha = c2 * math.sqrt(math.log(d / delta) / n)
    n_theory = max(d * math.log(1.0 / delta) / eta_bar ** k,
                   math.log(d / delta) / alpha ** 2 if alpha > 0 else 0.0)
    return RegressionParams(R=R, eta=eta, eta_bar=eta_bar, alpha=alpha, k=k,
                            sigma=sigma, delta=delta, n_theory=n_theory)


def truncation_threshold(params: RegressionParams) -> float:
    """Residual-truncation level used by the diagnostic comparator fit."""
    gap = params.eta_bar - params.eta
    if gap > 0:
        return 2.0 * params.sigma ** 2 / gap
    return 2.0 * params.sigma ** 2 / params.eta_bar


# ------------------------------------------------------------------- dataset

@dataclass
class RegressionDataset:
    """Covariates in the unit ball and observed responses.

    y_clean and corrupted are optional hidden fields carried by synthetic
    environments for diagnostics; estimators never read them.
    """

    x: np.ndarray
    y: np.ndarray
    y_clean: np.ndarray | None = None
    corrupted: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]}")
        norms = np.linalg.norm(self.x, axis=1)
        if norms.size and norms.max() > 1.0 + 1e-9:
            raise ValueError(f"covariate norm {norms.max():.6g} exceeds the unit ball")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def second_moment(self) -> np.ndarray:
        return self.x.T @ self.x / self.n

    def subsample(self, n_max: int, seed: int = 0) -> "RegressionDataset":
        if self.n <= n_max:
            return self
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(self.n, size=n_max, replace=False))
        return RegressionDataset(
            x=self.x[idx], y=self.y[idx],
            y_clean=None if self.y_clean is None else self.y_clean[idx],
            corrupted=None if self.corrupted is None else self.corrupted[idx],
        )


# ----------------------------------------------------------- monomial basis

def _reduce(mono: tuple, n: int) -> tuple:
    """Sort variable ids and drop repeated selection ids (idempotence)."""
    merged = tuple(sorted(mono))
    out = []
    prev = -1
    for v in merged:
        if v < n and v == prev:
            continue
        out.append(v)
        prev = v
    return tuple(out)


@dataclass
class MonomialBasis:
    """Degree <= 2 monomials over n selection and d regressor variables.

    Variable ids 0..n-1 are selection variables, n..n+d-1 regressor
    coordinates.  Ordering: constant, degree-1 in declaration order, then
    degree-2 products lexicographically (squares of selection variables
    are omitted, they reduce to degree 1).
    """

    n: int
    d: int
    monomials: list[tuple]

    @property
    def size(self) -> int:
        return len(self.monomials)

    @property
    def degree1_size(self) -> int:
        return 1 + self.n + self.d


def build_basis(n: int, d: int) -> MonomialBasis:
    nv = n + d
    monos: list[tuple] = [()]
    monos.extend((v,) for v in range(nv))
    for p in range(nv):
        for q in range(p, nv):
            if p == q and p < n:
                continue
            monos.append((p, q))
    expected = 1 + nv + nv * (nv - 1) // 2 + d
    assert len(monos) == expected
    return MonomialBasis(n=n, d=d, monomials=monos)


# --------------------------------------------------- compile-time structure
#
# For a fixed (n, d) the sparsity pattern of the relaxation is data
# independent: which moment-matrix entries denote the same monomial, and
# which monomials appear in each localizing entry.  That skeleton is
# cached so repeated fits at one shape (online refits) only fill values.

class _Structure:
    def __init__(self, n: int, d: int):
        self.n = n
        self.d = d
        basis = build_basis(n, d)
        self.basis = basis
        B = basis.size
        monos = basis.monomials

        mono_index: dict[tuple, int] = {}
        rep_i: list[int] = []
        rep_j: list[int] = []
        dup = []  # (i, j, rep_i, rep_j)
        for i in range(B):
            bi = monos[i]
            for j in range(i, B):
                m = _reduce(bi + monos[j], n)
                mid = mono_index.get(m)
                if mid is None:
                    mono_index[m] = len(rep_i)
                    rep_i.append(i)
                    rep_j.append(j)
                else:
                    dup.append((i, j, rep_i[mid], rep_j[mid]))
        self.mono_index = mono_index
        self.rep_i = np.array(rep_i, dtype=np.int64)
        self.rep_j = np.array(rep_j, dtype=np.int64)
        self.dup = np.array(dup, dtype=np.int64).reshape(-1, 4)
        self.n_monomials = len(rep_i)

        # degree-1 pair structure shared by the localizing blocks
        B1 = basis.degree1_size
        self.B1 = B1
        pairs = [(u, v) for u in range(B1) for v in range(u, B1)]
        self.pairs1 = np.array(pairs, dtype=np.int64)
        P = len(pairs)
        uv_id = np.empty(P, dtype=np.int64)
        sel_ids = np.empty((P, n), dtype=np.int64)     # a_t * b_u * b_v
        sq_ids = np.empty((P, d), dtype=np.int64)      # w_i^2 * b_u * b_v
        for p, (u, v) in enumerate(pairs):
            muv = _reduce(monos[u] + monos[v], n)
            uv_id[p] = mono_index[muv]
            for t in range(n):
                sel_ids[p, t] = mono_index[_reduce((t,) + muv, n)]
            for i in range(d):
                wi = n + i
                sq_ids[p, i] = mono_index[_reduce((wi, wi) + muv, n)]
        self.uv_id = uv_id
        self.sel_ids = sel_ids
        self.sq_ids = sq_ids
        self.pair_pos = {tuple(p): k for k, p in enumerate(pairs)}

        # objective monomial ids
        self.id_a = np.array([mono_index[(t,)] for t in range(n)], dtype=np.int64)
        self.id_aw = np.array(
            [[mono_index[_reduce((t, n + i), n)] for i in range(d)] for t in range(n)],
            dtype=np.int64,
        )
        wpairs = [(i, j) for i in range(d) for j in range(i, d)]
        self.wpairs = wpairs
        self.id_aww = np.array(
            [[mono_index[_reduce((t, n + i, n + j), n)] for (i, j) in wpairs] for t in range(n)],
            dtype=np.int64,
        )


_STRUCTURE_CACHE: dict[tuple[int, int], _Structure] = {}


def _structure(n: int, d: int) -> _Structure:
    key = (n, d)
    st = _STRUCTURE_CACHE.get(key)
    if st is None:
        if len(_STRUCTURE_CACHE) > 32:
            _STRUCTURE_CACHE.clear()
        st = _Structure(n, d)
        _STRUCTURE_CACHE[key] = st
    return st


# ------------------------------------------------------------------- compile

@dataclass
class CompiledMomentProgram:
    problem: SdpProblem
    basis: MonomialBasis
    degree: int
    params: RegressionParams
    n: int
    d: int
    mono_index: dict
    rep_i: np.ndarray
    rep_j: np.ndarray
    # degree-2 mode keeps per-point second-moment blocks instead
    aux: dict = field(default_factory=dict)


def build_program(dataset: RegressionDataset, params: RegressionParams,
                  degree: int = 4, basis_cap: int = DEFAULT_BASIS_CAP) -> CompiledMomentProgram:
    """Compile the moment relaxation of the selection program to a block SDP.

    degree=4 is the supported relaxation.  degree=2 is an experimental
    cheap mode (moment matrix over degree-1 monomials plus per-point
    localizing blocks); it carries no recovery guarantee and exists for
    speed comparisons only.
    """
    if degree == 4:
        return _build_degree4(dataset, params, basis_cap)
    if degree == 2:
        return _build_degree2(dataset, params)
    raise ValueError(f"unsupported relaxation degree {degree}")


def _tau(params: RegressionParams) -> float:
    return 1.0 - params.eta_bar - params.alpha


def _build_degree4(dataset: RegressionDataset, params: RegressionParams,
                   basis_cap: int) -> CompiledMomentProgram:
    n, d = dataset.n, dataset.d
    st = _structure(n, d)
    B = st.basis.size
    if B > basis_cap:
        raise SdpInputError(
            f"moment basis size {B} exceeds cap {basis_cap}; "
            f"subsample the dataset or raise basis_cap"
        )
    B1 = st.B1
    D4 = d * B1
    # Solve in rescaled variables w_hat = w / R, y_hat = y / R so every
    # moment is O(1); operator-splitting solvers are sensitive to scale.
    # Moments are mapped back by R^(number of regressor ids) on extraction
    # and the objective by R^2.
    x = dataset.x
    y = dataset.y / params.R
    R2 = 1.0
    tau = _tau(params)
    sigma_n = dataset.second_moment()

    prob = SdpProblem(blocks=[("M", B), ("L_norm", B1), ("L_frac", B1), ("L_cov", D4)])
    cs = prob.constraints
    M, L_NORM, L_FRAC, L_COV = 0, 1, 2, 3

    # normalization: first moment-matrix entry is E[1] = 1
    cs.add([(M, 0, 0, 1.0)], 1.0, "==")

    # moment-matrix entries denoting one monomial are equal
    dup = st.dup
    if len(dup):
        nd = len(dup)
        rows = np.repeat(np.arange(nd), 2)
        blks = np.zeros(2 * nd, dtype=np.int64)
        ii = np.empty(2 * nd, dtype=np.int64)
        jj = np.empty(2 * nd, dtype=np.int64)
        vv = np.empty(2 * nd)
        ii[0::2], jj[0::2], vv[0::2] = dup[:, 0], dup[:, 1], 1.0
        ii[1::2], jj[1::2], vv[1::2] = dup[:, 2], dup[:, 3], -1.0
        cs.add_batch(rows, blks, ii, jj, vv,
                     np.zeros(nd), np.zeros(nd, dtype=np.int8))

    pairs = st.pairs1
    P = len(pairs)
    rep_i, rep_j = st.rep_i, st.rep_j

    def tie_rows(block, own_ij, coeff_ids, coeff_vals, base_id, base_val):
        """Rows  X_block[r,s] + base_val*M[rep(base_id)]
        + sum_k coeff_vals[:,k]*M[rep(coeff_ids[:,k])] = 0, one per row of own_ij."""
        nrows, nk = coeff_ids.shape
        rows_per = 2 + nk
        rows = np.repeat(np.arange(nrows), rows_per)
        blks = np.full(nrows * rows_per, M, dtype=np.int64)
        ii = np.empty(nrows * rows_per, dtype=np.int64)
        jj = np.empty(nrows * rows_per, dtype=np.int64)
        vv = np.empty(nrows * rows_per)
        sel = slice(0, None, rows_per)
        blks[sel] = block
        ii[sel], jj[sel], vv[sel] = own_ij[:, 0], own_ij[:, 1], 1.0
        sel = slice(1, None, rows_per)
        ii[sel], jj[sel], vv[sel] = rep_i[base_id], rep_j[base_id], base_val
        for k in range(nk):
            sel = slice(2 + k, None, rows_per)
            ids = coeff_ids[:, k]
            ii[sel], jj[sel], vv[sel] = rep_i[ids], rep_j[ids], coeff_vals[:, k]
        cs.add_batch(rows, blks, ii, jj, vv,
                     np.zeros(nrows), np.zeros(nrows, dtype=np.int8))

    # L_norm[u,v] = E[(R^2 - sum w_i^2) b_u b_v]
    tie_rows(L_NORM, pairs, st.sq_ids, np.ones((P, d)), st.uv_id,
             np.full(P, -R2))

    # L_frac[u,v] = E[((1/n) sum_t a_t - tau) b_u b_v]
    tie_rows(L_FRAC, pairs, st.sel_ids, np.full((P, n), -1.0 / n), st.uv_id,
             np.full(P, tau))

    # L_cov[(u,p),(v,q)] = E[G_pq b_u b_v] with
    # G_pq = (eta_bar - 1) Sigma_n[p,q] + alpha delta_pq + (1/n) sum_t x_tp x_tq a_t
    kappa = (params.eta_bar - 1.0) * sigma_n + params.alpha * np.eye(d)
    ent_r, ent_s, ent_pair, ent_p, ent_q = [], [], [], [], []
    for pu in range(P):
        u, v = pairs[pu]
        if u == v:
            pq = [(p, q) for p in range(d) for q in range(p, d)]
        else:
            pq = [(p, q) for p in range(d) for q in range(d)]
        for p, q in pq:
            ent_r.append(u * d + p)
            ent_s.append(v * d + q)
            ent_pair.append(pu)
            ent_p.append(p)
            ent_q.append(q)
    ent_pair = np.array(ent_pair, dtype=np.int64)
    ent_p = np.array(ent_p, dtype=np.int64)
    ent_q = np.array(ent_q, dtype=np.int64)
    lcov_ij = np.stack([np.array(ent_r, dtype=np.int64),
                        np.array(ent_s, dtype=np.int64)], axis=1)
    xc = (x[:, ent_p] * x[:, ent_q]).T / n          # (entries, n)
    cov_ids = st.sel_ids[ent_pair]                  # (entries, n)
    tie_rows(L_COV, lcov_ij, cov_ids, -xc, st.uv_id[ent_pair],
             -kappa[ent_p, ent_q])

    # objective: (1/n) sum_t E[a_t (y_t - <w, x_t>)^2]
    coeff = np.zeros(st.n_monomials)
    np.add.at(coeff, st.id_a, y ** 2 / n)
    np.add.at(coeff, st.id_aw.ravel(), (-2.0 / n) * (y[:, None] * x).ravel())
    wp = np.array(st.wpairs, dtype=np.int64)
    mult = np.where(wp[:, 0] == wp[:, 1], 1.0, 2.0)
    ww = x[:, wp[:, 0]] * x[:, wp[:, 1]] * mult / n
    np.add.at(coeff, st.id_aww.ravel(), ww.ravel())
    nz = np.nonzero(coeff)[0]
    prob.objective.append((M, rep_i[nz], rep_j[nz], coeff[nz]))

    return CompiledMomentProgram(
        problem=prob, basis=st.basis, degree=4, params=params, n=n, d=d,
        mono_index=st.mono_index, rep_i=rep_i, rep_j=rep_j,
        aux={"w_scale": params.R, "objective_scale": params.R ** 2},
    )


def _build_degree2(dataset: RegressionDataset, params: RegressionParams) -> CompiledMomentProgram:
    """Cheap mode: degree-1 moment matrix plus per-point localizing blocks.

    Blocks: M1 over (1, a, w); for each sample t a block
    S_t = E[a_t (1, w)(1, w)^T] and U_t = E[(1 - a_t)(1, w)(1, w)^T];
    scalar norm and fraction slacks; the covariance-domination block.
    The objective reads its a_t w w moments from the S_t blocks.
    """
    n, d = dataset.n, dataset.d
    x = dataset.x
    y = dataset.y / params.R          # same rescaling as the degree-4 path
    B1 = 1 + n + d
    tau = _tau(params)
    sigma_n = dataset.second_moment()

    blocks = [("M", B1)]
    blocks += [(f"S{t}", 1 + d) for t in range(n)]
    blocks += [(f"U{t}", 1 + d) for t in range(n)]
    blocks += [("L_norm", 1), ("L_frac", 1), ("L_cov", d)]
    prob = SdpProblem(blocks=blocks)
    cs = prob.constraints
    M = 0
    S0 = 1
    U0 = 1 + n
    L_NORM, L_FRAC, L_COV = 1 + 2 * n, 2 + 2 * n, 3 + 2 * n

    a_col = lambda t: 1 + t
    w_col = lambda i: 1 + n + i

    cs.add([(M, 0, 0, 1.0)], 1.0, "==")
    for t in range(n):
        # Booleanity on the diagonal: E[a_t^2] = E[a_t]
        cs.add([(M, a_col(t), a_col(t), 1.0), (M, 0, a_col(t), -1.0)], 0.0, "==")
        # S_t ties: S_t[0,0] = E[a_t]; S_t[0,i] = E[a_t w_i]
        cs.add([(S0 + t, 0, 0, 1.0), (M, 0, a_col(t), -1.0)], 0.0, "==")
        for i in range(d):
            cs.add([(S0 + t, 0, 1 + i, 1.0), (M, a_col(t), w_col(i), -1.0)], 0.0, "==")
        # U_t = (second moments of (1,w)) - S_t
        cs.add([(U0 + t, 0, 0, 1.0), (S0 + t, 0, 0, 1.0)], 1.0, "==")
        for i in range(d):
            cs.add([(U0 + t, 0, 1 + i, 1.0), (S0 + t, 0, 1 + i, 1.0),
                    (M, 0, w_col(i), -1.0)], 0.0, "==")
            for j in range(i, d):
                cs.add([(U0 + t, 1 + i, 1 + j, 1.0), (S0 + t, 1 + i, 1 + j, 1.0),
                        (M, w_col(i), w_col(j), -1.0)], 0.0, "==")

    # norm slack: 1 - sum E[w_hat_i^2] >= 0
    terms = [(L_NORM, 0, 0, 1.0)] + [(M, w_col(i), w_col(i), 1.0) for i in range(d)]
    cs.add(terms, 1.0, "==")
    # fraction slack: (1/n) sum E[a_t] - tau >= 0
    terms = [(L_FRAC, 0, 0, 1.0)] + [(M, 0, a_col(t), -1.0 / n) for t in range(n)]
    cs.add(terms, -tau, "==")
    # covariance domination block
    kappa = (params.eta_bar - 1.0) * sigma_n + params.alpha * np.eye(d)
    for p in range(d):
        for q in range(p, d):
            terms = [(L_COV, p, q, 1.0)]
            terms += [(M, 0, a_col(t), -x[t, p] * x[t, q] / n) for t in range(n)]
            cs.add(terms, kappa[p, q], "==")

    # objective via the S_t blocks: E[a_t (y_t - <w,x_t>)^2] = v^T S_t v,
    # v = (y_t, -x_t)
    for t in range(n):
        v = np.concatenate([[y[t]], -x[t]])
        prob.set_objective_dense(f"S{t}", np.outer(v, v) / n)

    return CompiledMomentProgram(
        problem=prob, basis=build_basis(n, d), degree=2, params=params, n=n, d=d,
        mono_index={}, rep_i=np.empty(0, np.int64), rep_j=np.empty(0, np.int64),
        aux={"B1": B1, "w_scale": params.R, "objective_scale": params.R ** 2},
    )


# --------------------------------------------------------- pseudoexpectation

class PseudoExpectation:
    """Moment functional extracted from a solved relaxation.

    Monomials are tuples of variable ids as in MonomialBasis.  Values are
    normalized so the constant monomial has moment exactly 1 (the raw
    normalization slack is reported in ``normalization_error``).
    """

    def __init__(self, n: int, d: int, moments: dict[tuple, float],
                 normalization_error: float):
        self.n = n
        self.d = d
        self._moments = moments
        self.normalization_error = normalization_error

    def moment(self, mono: tuple) -> float:
        return self._moments[_reduce(tuple(mono), self.n)]

    def mean_regressor(self) -> np.ndarray:
        return np.array([self.moment((self.n + i,)) for i in range(self.d)])

    def second_moment_regressor(self) -> np.ndarray:
        d = self.d
        out = np.empty((d, d))
        for i in range(d):
            for j in range(i, d):
                out[i, j] = out[j, i] = self.moment((self.n + i, self.n + j))
        return out

    def selection_means(self) -> np.ndarray:
        return np.array([self.moment((t,)) for t in range(self.n)])

    def objective_value(self, dataset: RegressionDataset) -> float:
        x, y = dataset.x, dataset.y
        total = 0.0
        for t in range(dataset.n):
            total += y[t] ** 2 * self.moment((t,))
            for i in range(dataset.d):
                total -= 2.0 * y[t] * x[t, i] * self.moment((t, self.n + i))
                for j in range(dataset.d):
                    total += x[t, i] * x[t, j] * self.moment((t, self.n + i, self.n + j))
        return total / dataset.n


def _pe_from_solution(compiled: CompiledMomentProgram, sol: SdpSolution) -> PseudoExpectation:
    n, d = compiled.n, compiled.d
    R = compiled.aux.get("w_scale", 1.0)

    def unscale(mono):
        deg_w = sum(1 for v in mono if v >= n)
        return R ** deg_w

    if compiled.degree == 4:
        Mb = sol.blocks["M"]
        st = _structure(n, d)
        vals = Mb[st.rep_i, st.rep_j]
        one = vals[st.mono_index[()]]
        err = abs(one - 1.0)
        scale = 1.0 / one if one > 1e-6 else 1.0
        moments = {m: float(vals[idx] * scale * unscale(m))
                   for m, idx in st.mono_index.items()}
        return PseudoExpectation(n, d, moments, err)
    # degree 2: collect what this relaxation defines
    Mb = sol.blocks["M"]
    one = Mb[0, 0]
    err = abs(one - 1.0)
    scale = 1.0 / one if one > 1e-6 else 1.0
    moments: dict[tuple, float] = {(): 1.0}
    for t in range(n):
        moments[(t,)] = float(Mb[0, 1 + t] * scale)
    for i in range(d):
        moments[(n + i,)] = float(Mb[0, 1 + n + i] * scale) * R
        for j in range(i, d):
            moments[(n + i, n + j)] = float(Mb[1 + n + i, 1 + n + j] * scale) * R * R
    for t in range(n):
        St = sol.blocks[f"S{t}"]
        for i in range(d):
            moments[_reduce((t, n + i), n)] = float(St[0, 1 + i] * scale) * R
            for j in range(i, d):
                moments[_reduce((t, n + i, n + j), n)] = float(St[1 + i, 1 + j] * scale) * R * R
    return PseudoExpectation(n, d, moments, err)


def extract_regressor(pe: PseudoExpectation) -> np.ndarray:
    """Round a pseudoexpectation to a single regressor: its degree-1 moments."""
    return pe.mean_regressor()


# ------------------------------------------------------ feasibility checking

@dataclass
class FeasibilityReport:
    feasible: bool
    norm_slack: float
    fraction_slack: float
    covariance_min_eig: float
    boolean_ok: bool
    objective: float


def check_feasible_point(dataset: RegressionDataset, params: RegressionParams,
                         a: np.ndarray, w: np.ndarray,
                         tol: float = 1e-9) -> FeasibilityReport:
    """Evaluate an integer selection and regressor against the program.

    Slacks are signed (nonnegative means satisfied).
    """
    a = np.asarray(a, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if a.shape[0] != dataset.n or w.shape[0] != dataset.d:
        raise ValueError("assignment shape mismatch")
    boolean_ok = bool(np.all((np.abs(a) < tol) | (np.abs(a - 1.0) < tol)))
    norm_slack = params.R ** 2 - float(w @ w)
    fraction_slack = float(np.mean(a) - _tau(params))
    sigma_n = dataset.second_moment()
    dropped = dataset.x.T @ (dataset.x * (1.0 - a)[:, None]) / dataset.n
    dom = params.eta_bar * sigma_n + params.alpha * np.eye(dataset.d) - dropped
    cov_min = float(np.linalg.eigvalsh(0.5 * (dom + dom.T)).min())
    resid = dataset.y - dataset.x @ w
    objective = float(np.mean(a * resid ** 2))
    feasible = boolean_ok and norm_slack >= -tol and fraction_slack >= -tol and cov_min >= -tol
    return FeasibilityReport(feasible, norm_slack, fraction_slack, cov_min,
                             boolean_ok, objective)


# --------------------------------------------------------------- estimation

@dataclass
class SosRegressionResult:
    w: np.ndarray
    pe: PseudoExpectation
    solution: SdpSolution
    diagnostics: dict


def sos_regression(dataset: RegressionDataset, params: RegressionParams, *,
                   settings: SolverSettings | None = None, degree: int = 4,
                   n_max: int = DEFAULT_N_MAX, subsample_seed: int = 0,
                   basis_cap: int = DEFAULT_BASIS_CAP,
                   warm_start=None) -> SosRegressionResult:
    """Fit a regressor by solving the moment relaxation and rounding.

    Datasets larger than n_max are uniformly subsampled (seeded).  A
    solve that stops at the iteration cap is still rounded and used; the
    status is surfaced in the diagnostics.  Warns when the (sub)sample is
    below the finite-sample theory bound attached to params.
    """
    used = dataset.subsample(n_max, seed=subsample_seed)
    if params.n_theory is not None and used.n < params.n_theory * (1.0 - 1e-9):
        warnings.warn(
            f"sample size {used.n} is below the finite-sample theory bound "
            f"{params.n_theory:.3g}; proceeding on a best-effort basis",
            UserWarning,
        )
    compiled = build_program(used, params, degree=degree, basis_cap=basis_cap)
    # The compiled program is always feasible (select everything, w = 0),
    # so the solver's stagnation-infeasibility heuristic is disabled here.
    settings = settings or SolverSettings(tolerance=1e-5, max_iterations=6000, rho=0.1)
    if settings.infeasibility_window < 10 ** 9:
        settings = replace(settings, infeasibility_window=10 ** 9)
    sol = solve_sdp(compiled.problem, settings, warm_start=warm_start)
    pe = _pe_from_solution(compiled, sol)
    w = extract_regressor(pe)
    obj_scale = compiled.aux.get("objective_scale", 1.0)
    diagnostics = {
        "status": sol.status,
        "objective": sol.objective * obj_scale,
        "iterations": sol.iterations,
        "primal_residual": sol.primal_residual,
        "dual_residual": sol.dual_residual,
        "n_used": used.n,
        "n_total": dataset.n,
        "degree": degree,
        "normalization_error": pe.normalization_error,
        "selection_mass": float(np.mean(pe.selection_means())),
    }
    return SosRegressionResult(w=w, pe=pe, solution=sol, diagnostics=diagnostics)


def compute_vstar(x: np.ndarray, y: np.ndarray, a: np.ndarray, R: float,
                  tol: float = 1e-8, max_iter: int = 200000) -> np.ndarray:
    """Constrained least squares over the selected samples.

    Minimizes (1/n) sum_t a_t (y_t - <v, x_t>)^2 over ||v|| <= R by
    projected gradient descent, run to first-order residual tol (norm of
    the unit-step projected-gradient mapping).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    n, d = x.shape
    H = x.T @ (x * a[:, None]) / n          # (1/2) Hessian
    g0 = x.T @ (a * y) / n
    lip = 2.0 * max(float(np.linalg.eigvalsh(H).max()), 1e-12)

    def project(v):
        nv = np.linalg.norm(v)
        return v if nv <= R else v * (R / nv)

    v = np.zeros(d)
    for _ in range(max_iter):
        grad = 2.0 * (H @ v - g0)
        v_new = project(v - grad / lip)
        if np.linalg.norm(v - project(v - grad)) <= tol:
            v = v_new
            break
        v = v_new
    return v
