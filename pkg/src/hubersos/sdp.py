"""Block-diagonal semidefinite programming by operator splitting.

The problem form is

    minimize    sum_b <C_b, X_b>
    subject to  sum_b <A_ib, X_b>  (== | <= | >=)  c_i      for each i
                X_b >= 0 (PSD)                               for each block b

Coefficient matrices are given in sparse entry form: a term ``(i, j, v)``
contributes ``v * X[i, j]`` to the constraint row (matrices are symmetric,
so listing one of ``(i, j)`` / ``(j, i)`` is enough).

The solver is a two-block ADMM: one operator projects onto the affine
constraint set (simple coordinate ties are eliminated by substitution up
front, the remaining rows handled through a reusable factorization or
warm-started CG), the other projects onto the product of PSD cones.
Inequalities are rewritten with nonnegative slack variables (1x1 PSD
blocks).  The penalty parameter is adapted by residual balancing, which
in this splitting never requires refactorization.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SdpError",
    "SdpInputError",
    "SdpNumericalError",
    "SolverSettings",
    "ConstraintSet",
    "SdpProblem",
    "SdpSolution",
    "project_psd",
    "solve_sdp",
    "dump_problem",
]

STATUS_OPTIMAL = "Optimal"
STATUS_MAX_ITERATIONS = "MaxIterations"
STATUS_INFEASIBLE_SUSPECTED = "InfeasibleSuspected"

_REL_CODES = {"==": 0, "<=": 1, ">=": 2}
_REL_NAMES = {v: k for k, v in _REL_CODES.items()}

_SQRT2 = np.sqrt(2.0)


class SdpError(Exception):
    """Base error for this module."""


class SdpInputError(SdpError):
    """Malformed problem data (asymmetric matrices, NaNs, bad shapes)."""


class SdpNumericalError(SdpError):
    """A linear-algebra kernel failed; carries basic diagnostics."""


@dataclass
class SolverSettings:
    """Knobs for :func:`solve_sdp`.

    tolerance is the relative residual target for both primal and dual
    residuals.  rho is the initial ADMM penalty; it is adapted online
    unless adapt_rho is False.  seed is accepted for interface stability;
    the solver is deterministic and never draws random numbers.
    """

    tolerance: float = 1e-6
    max_iterations: int = 20000
    rho: float = 1.0
    over_relaxation: float = 1.6
    adapt_rho: bool = True
    adapt_every: int = 100
    residual_balance: float = 2.0
    infeasibility_window: int = 1000
    infeasibility_scale: float = 1e3
    seed: int | None = None
    verbose: bool = False
    log_every: int = 500


class ConstraintSet:
    """Columnar container for affine constraint rows.

    Stores every (row, block, i, j, value) term in flat arrays so that
    compilers can emit hundreds of thousands of rows without per-row
    Python object overhead.  ``add`` appends a single row.
    """

    def __init__(self):
        self._term_row: list[np.ndarray] = []
        self._term_blk: list[np.ndarray] = []
        self._term_i: list[np.ndarray] = []
        self._term_j: list[np.ndarray] = []
        self._term_v: list[np.ndarray] = []
        self.rhs: list[float] = []
        self.rel: list[int] = []

    def __len__(self):
        return len(self.rhs)

    def add(self, terms, rhs: float, rel: str = "==") -> int:
        """Append one constraint row.

        terms: iterable of (block_index, i, j, value) scalars, or a tuple
        (block_index, i_array, j_array, v_array) for a batch on one block.
        """
        row = len(self.rhs)
        if isinstance(terms, tuple) and len(terms) == 4 and np.ndim(terms[1]) > 0:
            blk, ii, jj, vv = terms
            ii = np.asarray(ii, dtype=np.int64)
            self._push(np.full(ii.shape, row), np.full(ii.shape, blk), ii, jj, vv)
        else:
            for blk, i, j, v in terms:
                self._push(
                    np.array([row]), np.array([blk]),
                    np.array([i]), np.array([j]), np.array([float(v)]),
                )
        self.rhs.append(float(rhs))
        self.rel.append(_REL_CODES[rel])
        return row

    def add_batch(self, row_ids, blk_ids, ii, jj, vv, rhs, rel_codes):
        """Bulk append: row_ids are offsets relative to the current size."""
        base = len(self.rhs)
        self._push(np.asarray(row_ids, dtype=np.int64) + base, blk_ids, ii, jj, vv)
        self.rhs.extend(np.asarray(rhs, dtype=float).tolist())
        self.rel.extend(int(r) for r in np.asarray(rel_codes).tolist())

    def _push(self, rows, blks, ii, jj, vv):
        self._term_row.append(np.asarray(rows, dtype=np.int64))
        self._term_blk.append(np.asarray(blks, dtype=np.int64))
        self._term_i.append(np.asarray(ii, dtype=np.int64))
        self._term_j.append(np.asarray(jj, dtype=np.int64))
        self._term_v.append(np.asarray(vv, dtype=np.float64))

    def compiled(self):
        if self._term_row:
            row = np.concatenate(self._term_row)
            blk = np.concatenate(self._term_blk)
            ii = np.concatenate(self._term_i)
            jj = np.concatenate(self._term_j)
            vv = np.concatenate(self._term_v)
        else:
            row = blk = ii = jj = np.empty(0, dtype=np.int64)
            vv = np.empty(0, dtype=np.float64)
        return row, blk, ii, jj, vv, np.asarray(self.rhs, float), np.asarray(self.rel, np.int8)


@dataclass
class SdpProblem:
    """A block SDP in sparse entry form.

    blocks: list of (name, size) pairs; the block index used in objective
    and constraint terms is the position in this list.
    objective: list of (block_index, i, j, value) terms, or batched
    (block_index, i_array, j_array, v_array) tuples.
    """

    blocks: list[tuple[str, int]]
    objective: list = field(default_factory=list)
    constraints: ConstraintSet = field(default_factory=ConstraintSet)

    def block_index(self, name: str) -> int:
        for k, (nm, _) in enumerate(self.blocks):
            if nm == name:
                return k
        raise KeyError(name)

    def set_objective_dense(self, name: str, C: np.ndarray):
        """Convenience: add a dense symmetric objective matrix for one block."""
        C = np.asarray(C, dtype=float)
        _check_symmetric(C, what=f"objective[{name}]")
        k = self.block_index(name)
        ii, jj = np.triu_indices(C.shape[0])
        vv = C[ii, jj].copy()
        vv[ii != jj] *= 2.0  # <C, X> counts both symmetric entries
        self.objective.append((k, ii, jj, vv))


@dataclass
class SdpSolution:
    status: str
    objective: float
    blocks: dict[str, np.ndarray]
    iterations: int
    primal_residual: float
    dual_residual: float
    solve_seconds: float
    warm_state: tuple | None = None


def _check_symmetric(M: np.ndarray, tol: float = 1e-10, what: str = "matrix"):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise SdpInputError(f"{what} is not square: shape {M.shape}")
    if np.isnan(M).any():
        raise SdpInputError(f"{what} contains NaN")
    gap = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 0.0)
    if gap > tol * scale:
        raise SdpInputError(f"{what} asymmetric: max |M - M.T| = {gap:.3e}")


def project_psd(M: np.ndarray, sym_tol: float = 1e-10) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone by eigenvalue clipping.

    Raises SdpInputError if M has NaNs or is asymmetric beyond sym_tol
    (relative to max |entry|), and SdpNumericalError if the
    eigendecomposition fails.
    """
    M = np.asarray(M, dtype=float)
    _check_symmetric(M, tol=sym_tol, what="project_psd input")
    S = 0.5 * (M + M.T)
    try:
        w, V = np.linalg.eigh(S)
    except np.linalg.LinAlgError as e:
        raise SdpNumericalError(
            f"eigendecomposition failed on {S.shape[0]}x{S.shape[0]} matrix "
            f"(fro norm {np.linalg.norm(S):.3e}): {e}"
        ) from e
    if w.size and w[0] >= 0.0:
        return S
    wc = np.maximum(w, 0.0)
    out = (V * wc) @ V.T
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# svec layout helpers.  A symmetric k x k block is stored as the row-major
# upper triangle with off-diagonal entries scaled by sqrt(2), so that
# <A, B> = svec(A) . svec(B) and ||X||_F = ||svec(X)||_2.

def _tri_pos(i, j, k):
    return (i * (2 * k - i - 1)) // 2 + j


class _Layout:
    def __init__(self, blocks):
        self.sizes = np.array([s for _, s in blocks], dtype=np.int64)
        self.names = [n for n, _ in blocks]
        lens = self.sizes * (self.sizes + 1) // 2
        self.offsets = np.concatenate([[0], np.cumsum(lens)])
        self.dim = int(self.offsets[-1])
        # per-block upper-tri index arrays and svec scaling
        self.iu = [np.triu_indices(int(s)) for s in self.sizes]
        self.scale = []
        for iu, ju in self.iu:
            sc = np.where(iu == ju, 1.0, _SQRT2)
            self.scale.append(sc)

    def positions(self, blk, ii, jj):
        """svec coordinates for entry lists; folds lower-triangle refs."""
        k = self.sizes[blk]
        lo = np.minimum(ii, jj)
        hi = np.maximum(ii, jj)
        if np.any(hi >= k):
            raise SdpInputError("constraint entry index out of block range")
        return self.offsets[blk] + _tri_pos(lo, hi, k), lo, hi

    def coeffs(self, blk, ii, jj, vv):
        """(positions, svec coefficients) so that sum v*X_ij = coeff . svec."""
        pos, lo, hi = self.positions(blk, ii, jj)
        coef = np.where(lo == hi, vv, vv / _SQRT2)
        return pos, coef

    def block_to_mat(self, x, b):
        k = int(self.sizes[b])
        seg = x[self.offsets[b]:self.offsets[b + 1]]
        iu, ju = self.iu[b]
        vals = seg / self.scale[b]
        M = np.zeros((k, k))
        M[iu, ju] = vals
        M[ju, iu] = vals
        return M

    def mat_to_seg(self, M, b, out, xoff=0):
        iu, ju = self.iu[b]
        out[xoff + self.offsets[b]:xoff + self.offsets[b + 1]] = M[iu, ju] * self.scale[b]


def _gather_objective(problem: SdpProblem, layout: _Layout) -> np.ndarray:
    c = np.zeros(layout.dim)
    for term in problem.objective:
        blk, ii, jj, vv = term
        ii = np.atleast_1d(np.asarray(ii, dtype=np.int64))
        jj = np.atleast_1d(np.asarray(jj, dtype=np.int64))
        vv = np.atleast_1d(np.asarray(vv, dtype=np.float64))
        pos, coef = layout.coeffs(int(blk), ii, jj, vv)
        np.add.at(c, pos, coef)
    return c


def _assemble(problem: SdpProblem, settings: SolverSettings):
    """Compile to svec form: min c.x  s.t. A x = b,  x in PSD-cone product.

    Returns (layout, A, b, c, slack_info) where slack variables for
    inequality rows have been appended as 1x1 blocks.
    """
    for name, size in problem.blocks:
        if size < 1:
            raise SdpInputError(f"block {name} has nonpositive size {size}")
    row, blk, ii, jj, vv, rhs, rel = problem.constraints.compiled()
    if np.isnan(vv).any() or np.isnan(rhs).any():
        raise SdpInputError("constraint data contains NaN")
    m = len(rhs)
    n_ineq = int(np.sum(rel != 0))

    blocks = list(problem.blocks)
    slack_rows = np.nonzero(rel != 0)[0]
    slack_sign = np.where(rel[slack_rows] == 1, 1.0, -1.0)  # <=: +s, >=: -s
    for t, r in enumerate(slack_rows):
        blocks.append((f"_slack{t}", 1))

    layout = _Layout(blocks)
    # entries may span blocks; compute per-entry svec positions vectorized
    if len(row):
        k_arr = layout.sizes[blk]
        lo = np.minimum(ii, jj)
        hi = np.maximum(ii, jj)
        if np.any(hi >= k_arr):
            raise SdpInputError("constraint entry index out of block range")
        pos = layout.offsets[blk] + (lo * (2 * k_arr - lo - 1)) // 2 + hi
        coef = np.where(lo == hi, vv, vv / _SQRT2)
    else:
        pos = np.empty(0, dtype=np.int64)
        coef = np.empty(0)

    rows_all = [row]
    pos_all = [pos]
    coef_all = [coef]
    if n_ineq:
        srow = slack_rows
        spos = layout.offsets[len(problem.blocks) + np.arange(n_ineq)]
        rows_all.append(srow)
        pos_all.append(spos)
        coef_all.append(slack_sign)
    A = sp.coo_matrix(
        (np.concatenate(coef_all), (np.concatenate(rows_all), np.concatenate(pos_all))),
        shape=(m, layout.dim),
    ).tocsr()
    A.sum_duplicates()

    c = _gather_objective(problem, layout)
    return layout, A, rhs.copy(), c


_DENSE_NORMAL_LIMIT = 3000


class _AffineReduction:
    """Projection onto {x : A x = b} that eliminates simple rows first.

    Rows with one or two nonzeros are affine identifications between
    coordinates (x_j = s * x_i + o); moment-style problems consist almost
    entirely of such ties, and factorizing A A^T directly on them fills
    in catastrophically.  We fold them into a substitution x = E mu + o
    (built with a union-find over coordinates), leaving only the few
    structured rows B mu = beta.  Their normal matrix is factorized
    densely when small; past _DENSE_NORMAL_LIMIT rows it is applied
    implicitly inside warm-started preconditioned CG, since forming it
    is itself prohibitively dense for moment programs.
    """

    def __init__(self, E, off, dinv, B, beta, eliminated, inconsistent):
        self.E = E
        self.Et = E.T.tocsr()
        self.off = off
        self.dinv = dinv
        self.B = B
        self.Bt = B.T.tocsr() if B is not None else None
        self.beta = beta
        self.eliminated = eliminated
        self.inconsistent = inconsistent
        self.cg_iterations = 0
        self._chol = None
        self._lam = None
        if B is None or inconsistent:
            return
        mB = B.shape[0]
        diagK = np.asarray(B.multiply(B) @ dinv).ravel()
        self._reg = 1e-12 * max(1.0, float(diagK.max()))
        if mB <= _DENSE_NORMAL_LIMIT:
            K = (B @ sp.diags(dinv) @ B.T).toarray()
            K[np.diag_indices_from(K)] += self._reg
            try:
                self._chol = scipy.linalg.cho_factor(K)
            except scipy.linalg.LinAlgError as e:
                raise SdpNumericalError(
                    f"factorization of the reduced normal matrix failed "
                    f"(rows={mB}): {e}") from e
        else:
            self._precond = 1.0 / np.maximum(diagK + self._reg, 1e-30)
            self._lam = np.zeros(mB)

    def _normal_matvec(self, lam):
        return self.B @ (self.dinv * (self.Bt @ lam)) + self._reg * lam

    def _solve_normal(self, rhs):
        if self._chol is not None:
            return scipy.linalg.cho_solve(self._chol, rhs)
        lam = self._lam
        r = rhs - self._normal_matvec(lam)
        z = self._precond * r
        p = z.copy()
        rz = float(r @ z)
        target = 1e-10 * (float(np.linalg.norm(rhs)) + 1e-30)
        lam = lam.copy()
        for _ in range(2000):
            if np.linalg.norm(r) <= target:
                break
            Ap = self._normal_matvec(p)
            alpha = rz / float(p @ Ap)
            lam += alpha * p
            r -= alpha * Ap
            z = self._precond * r
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
            self.cg_iterations += 1
        self._lam = lam
        return lam

    def project(self, v):
        t = self.Et @ (v - self.off)
        mu = self.dinv * t
        if self.B is not None:
            lam = self._solve_normal(self.beta - self.B @ mu)
            mu = mu + self.dinv * (self.Bt @ lam)
        return self.E @ mu + self.off


def _reduce_affine(A, b, drop_tol: float = 1e-12, feas_tol: float = 1e-7):
    """Build an _AffineReduction for A x = b, or None if nothing reduces."""
    A = A.tocsr()
    m, N = A.shape
    indptr, indices, data = A.indptr, A.indices, A.data

    parent = np.arange(N, dtype=np.int64)
    scl = np.ones(N)
    off = np.zeros(N)
    pin = np.zeros(N, dtype=bool)
    pinval = np.zeros(N)

    def find(i):
        chain = []
        while parent[i] != i:
            chain.append(i)
            i = parent[i]
        root = i
        for node in reversed(chain):
            p = parent[node]
            if p != root:
                off[node] = scl[node] * off[p] + off[node]
                scl[node] = scl[node] * scl[p]
                parent[node] = root
        return root

    inconsistent = False
    eliminated = 0

    # Batch phase: two-entry rows whose eliminated column occurs in no
    # other candidate row can all be merged at once (no conflicts; chains
    # are resolved lazily by find).  Moment-style tie systems are almost
    # entirely of this kind, which keeps the python loop below small.
    nnz_row = np.diff(indptr)
    two = np.nonzero(nnz_row == 2)[0]
    batched = np.zeros(m, dtype=bool)
    if len(two):
        p0 = indptr[two]
        c0, c1 = indices[p0], indices[p0 + 1]
        v0, v1 = data[p0], data[p0 + 1]
        mult = np.bincount(np.concatenate([c0, c1]), minlength=N)
        use0 = (mult[c0] == 1) & (np.abs(v0) > 1e-6)
        use1 = ~use0 & (mult[c1] == 1) & (np.abs(v1) > 1e-6)
        leaf = np.where(use0, c0, c1)
        keep = np.where(use0, c1, c0)
        cl = np.where(use0, v0, v1)
        ck = np.where(use0, v1, v0)
        ok = use0 | use1
        parent[leaf[ok]] = keep[ok]
        scl[leaf[ok]] = -ck[ok] / cl[ok]
        off[leaf[ok]] = b[two[ok]] / cl[ok]
        batched[two[ok]] = True
        eliminated += int(ok.sum())

    def fold(cols, vals, rhs):
        acc: dict = {}
        for j, a in zip(cols, vals):
            r = find(j)
            contrib = a * off[j] if j != r else 0.0
            s = a * scl[j] if j != r else a
            if pin[r]:
                rhs -= contrib + s * pinval[r]
            else:
                rhs -= contrib
                acc[r] = acc.get(r, 0.0) + s
        ent = [(r, c) for r, c in acc.items() if abs(c) > drop_tol]
        return ent, rhs

    def handle(ent, rhs):
        """Apply a folded row with <= 2 effective entries; True if absorbed."""
        nonlocal inconsistent, eliminated
        if len(ent) == 0:
            if abs(rhs) > feas_tol:
                inconsistent = True
            return True
        if len(ent) == 1:
            r, cval = ent[0]
            pin[r] = True
            pinval[r] = rhs / cval
            eliminated += 1
            return True
        if len(ent) == 2:
            (r1, c1), (r2, c2) = ent
            if abs(c1) < abs(c2):
                r1, c1, r2, c2 = r2, c2, r1, c1
            # eliminate r2: x_r2 = (rhs - c1 x_r1) / c2
            parent[r2] = r1
            scl[r2] = -c1 / c2
            off[r2] = rhs / c2
            eliminated += 1
            return True
        return False

    deferred = []
    for r in np.nonzero(~batched)[0]:
        sl = slice(indptr[r], indptr[r + 1])
        ent, rhs = fold(indices[sl], data[sl], b[r])
        if not handle(ent, rhs):
            deferred.append(r)

    # re-fold structured rows until no more of them collapse to ties
    for _ in range(30):
        keep, changed = [], False
        for r in deferred:
            sl = slice(indptr[r], indptr[r + 1])
            ent, rhs = fold(indices[sl], data[sl], b[r])
            if handle(ent, rhs):
                changed = True
            else:
                keep.append(r)
        deferred = keep
        if not changed:
            break

    if eliminated == 0:
        return None

    # final substitution map x_i = scl_i * mu_class(i) + off_i, flattening
    # parent chains vectorized (chain depth is small)
    roots = parent.copy()
    sub_s = scl.copy()
    sub_o = off.copy()
    while True:
        nxt = parent[roots]
        moving = nxt != roots
        if not moving.any():
            break
        sub_o = sub_o + sub_s * np.where(moving, off[roots], 0.0)
        sub_s = sub_s * np.where(moving, scl[roots], 1.0)
        roots = np.where(moving, nxt, roots)
    scl, off = sub_s, sub_o
    parent = roots.copy()
    var_mask = ~pin[roots]
    mu_of_root = np.full(N, -1, dtype=np.int64)
    free_roots = np.unique(roots[var_mask])
    mu_of_root[free_roots] = np.arange(len(free_roots))
    nmu = len(free_roots)

    full_off = np.where(pin[roots], scl * pinval[roots] + off, off)
    rows_e = np.nonzero(var_mask)[0]
    E = sp.csr_matrix(
        (scl[rows_e], (rows_e, mu_of_root[roots[rows_e]])), shape=(N, nmu))
    d = np.bincount(mu_of_root[roots[rows_e]], weights=scl[rows_e] ** 2,
                    minlength=nmu)
    dinv = 1.0 / d

    B = beta = None
    if deferred:
        bi, bj, bv, beta_list = [], [], [], []
        for out_r, r in enumerate(deferred):
            sl = slice(indptr[r], indptr[r + 1])
            ent, rhs = fold(indices[sl], data[sl], b[r])
            for root, cval in ent:
                bi.append(out_r)
                bj.append(mu_of_root[root])
                bv.append(cval)
            beta_list.append(rhs)
        B = sp.csr_matrix((bv, (bi, bj)), shape=(len(deferred), nmu))
        beta = np.asarray(beta_list)

    return _AffineReduction(E, full_off, dinv, B, beta,
                            eliminated, inconsistent)


def solve_sdp(problem: SdpProblem, settings: SolverSettings | None = None,
              warm_start: SdpSolution | tuple | None = None) -> SdpSolution:
    """Solve a block SDP with ADMM.

    Status is Optimal when both relative residuals fall below
    settings.tolerance, MaxIterations at the iteration cap, and
    InfeasibleSuspected when residuals stagnate above
    infeasibility_scale * tolerance for infeasibility_window consecutive
    iterations.  The returned blocks are exactly PSD (they come from the
    cone projection); constraint violation is reported in
    primal_residual.  Deterministic: same problem and settings give the
    same iterates.
    """
    t0 = time.perf_counter()
    settings = settings or SolverSettings()
    layout, A, b, c = _assemble(problem, settings)
    N = layout.dim
    m = A.shape[0]

    # Row equilibration and unit objective scale; both are cone-safe and
    # make the penalty parameter roughly problem-independent.  Residuals
    # are measured on the scaled data.
    if m:
        rn = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
        rn = np.where(rn > 1e-12, rn, 1.0)
        A = (sp.diags(1.0 / rn) @ A).tocsr()
        b = b / rn
    c_scale = float(np.linalg.norm(c))
    if c_scale < 1e-12:
        c_scale = 1.0
    c = c / c_scale

    lu = None
    reduction = _reduce_affine(A, b) if m else None
    if reduction is not None and reduction.inconsistent:
        out_blocks = {name: np.zeros((int(size), int(size)))
                      for name, size in problem.blocks}
        return SdpSolution(
            status=STATUS_INFEASIBLE_SUSPECTED,
            objective=0.0,
            blocks=out_blocks,
            iterations=0,
            primal_residual=float("inf"),
            dual_residual=float("inf"),
            solve_seconds=time.perf_counter() - t0,
            warm_state=None,
        )
    if m and reduction is None:
        G = (A @ A.T).tocsc()
        reg = 1e-12 * max(1.0, float(G.diagonal().max()) if m else 1.0)
        G = G + reg * sp.eye(m, format="csc")
        try:
            lu = spla.splu(G)
        except RuntimeError as e:
            raise SdpNumericalError(f"factorization of AA^T failed (m={m}): {e}") from e

    rho = float(settings.rho)
    z = np.zeros(N)
    u = np.zeros(N)
    if warm_start is not None:
        st = warm_start.warm_state if isinstance(warm_start, SdpSolution) else warm_start
        if st is not None and st[0] == N:
            _, zw, uw, rhow = st
            z = zw.copy()
            u = uw.copy()
            rho = float(rhow)

    alpha = float(settings.over_relaxation)
    tol = float(settings.tolerance)
    bnorm = 1.0 + np.linalg.norm(b)
    n_user_blocks = len(problem.blocks)

    def affine_project(v):
        if reduction is not None:
            return reduction.project(v)
        if lu is None:
            return v
        resid = A @ v - b
        return v - A.T @ lu.solve(resid)

    status = STATUS_MAX_ITERATIONS
    prim = dual = np.inf
    best = np.inf
    stall = 0
    it = 0
    for it in range(1, settings.max_iterations + 1):
        x = affine_project(z - u - c / rho)
        xh = alpha * x + (1.0 - alpha) * z
        z_prev = z
        w_in = xh + u
        z = np.empty(N)
        for bidx in range(len(layout.sizes)):
            k = int(layout.sizes[bidx])
            if k == 1:
                off = layout.offsets[bidx]
                z[off] = max(0.0, w_in[off])
                continue
            Mb = layout.block_to_mat(w_in, bidx)
            try:
                wv, V = np.linalg.eigh(Mb)
            except np.linalg.LinAlgError as e:
                raise SdpNumericalError(
                    f"eigh failed on block {layout.names[bidx]} "
                    f"(size {k}, fro {np.linalg.norm(Mb):.3e}) at iteration {it}: {e}"
                ) from e
            neg = wv < 0.0
            if not neg.any():
                Mp = Mb
            elif np.count_nonzero(neg) <= k // 2:
                Vn = V[:, neg]
                Mp = Mb - (Vn * wv[neg]) @ Vn.T
            else:
                posm = ~neg
                Vp = V[:, posm]
                Mp = (Vp * wv[posm]) @ Vp.T
            layout.mat_to_seg(0.5 * (Mp + Mp.T), bidx, z)
        u = u + xh - z

        split = np.linalg.norm(x - z) / (1.0 + max(np.linalg.norm(x), np.linalg.norm(z)))
        feas = (np.linalg.norm(A @ z - b) / bnorm) if m else 0.0
        prim = max(split, feas)
        dual = rho * np.linalg.norm(z - z_prev) / (1.0 + rho * np.linalg.norm(u))
        em = max(prim, dual)
        if settings.verbose and it % settings.log_every == 0:
            print(f"    it {it:6d}  prim {prim:.3e}  dual {dual:.3e}  "
                  f"obj {float(c @ z) * c_scale:.6f}  rho {rho:.3g}", flush=True)
        if em <= tol:
            status = STATUS_OPTIMAL
            break

        if em < best * (1.0 - 1e-3):
            best = em
            stall = 0
        else:
            stall += 1
        if stall >= settings.infeasibility_window and em > settings.infeasibility_scale * tol:
            status = STATUS_INFEASIBLE_SUSPECTED
            break

        if settings.adapt_rho and it % settings.adapt_every == 0 and dual > 0 and prim > 0:
            # proportional residual balancing: scale rho toward the residual
            # ratio, damped and infrequent so the iteration stays stable
            factor = math.sqrt(prim / dual)
            if (factor > settings.residual_balance
                    or factor < 1.0 / settings.residual_balance):
                new_rho = float(np.clip(rho * np.clip(factor, 1.0 / 3.0, 3.0),
                                        1e-6, 1e6))
                if new_rho != rho:
                    u *= rho / new_rho
                    rho = new_rho

    out_blocks = {}
    for bidx in range(n_user_blocks):
        k = int(layout.sizes[bidx])
        out_blocks[layout.names[bidx]] = layout.block_to_mat(z, bidx)
    objective = float(c @ z) * c_scale
    return SdpSolution(
        status=status,
        objective=objective,
        blocks=out_blocks,
        iterations=it,
        primal_residual=float(prim) if np.isfinite(prim) else float("inf"),
        dual_residual=float(dual) if np.isfinite(dual) else float("inf"),
        solve_seconds=time.perf_counter() - t0,
        warm_state=(N, z.copy(), u.copy(), rho),
    )


def dump_problem(problem: SdpProblem, path: str):
    """Write a plain-text debug dump: header, objective, one line per constraint.

    Constraint lines are sparse triplet form:
        C <row> <rel> <rhs> | <block>,<i>,<j>,<value> ...
    """
    row, blk, ii, jj, vv, rhs, rel = problem.constraints.compiled()
    order = np.argsort(row, kind="stable")
    with open(path, "w") as fh:
        fh.write("# sdp problem dump\n")
        for name, size in problem.blocks:
            fh.write(f"B {name} {size}\n")
        for term in problem.objective:
            tb, ti, tj, tv = term
            ti = np.atleast_1d(np.asarray(ti))
            tj = np.atleast_1d(np.asarray(tj))
            tv = np.atleast_1d(np.asarray(tv))
            for i, j, v in zip(ti, tj, tv):
                fh.write(f"O {int(tb)},{int(i)},{int(j)},{v!r}\n")
        k = 0
        nrow = len(rhs)
        idx = order
        ptr = 0
        for r in range(nrow):
            parts = []
            while ptr < len(idx) and row[idx[ptr]] == r:
                t = idx[ptr]
                parts.append(f"{blk[t]},{ii[t]},{jj[t]},{vv[t]!r}")
                ptr += 1
            fh.write(f"C {r} {_REL_NAMES[int(rel[r])]} {rhs[r]!r} | " + " ".join(parts) + "\n")
            k += 1
