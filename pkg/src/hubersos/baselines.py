"""Convex-surrogate regression baselines and the hard two-point instance.

The surrogates (squared, Huber, absolute) are the natural M-estimation
approaches to contaminated regression.  On the two-point covariate law
built by :func:`hard_population_instance`, every convex loss provably
lands at a population minimizer whose clean excess square loss is at
least eta^3 R / 40, no matter how much data it sees.  The robust
estimator in :mod:`hubersos.moment_program` is not subject to this
barrier, which is the separation the package's comparative experiments
measure.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

__all__ = [
    "SurrogateSpec",
    "PopulationInstance",
    "fit_surrogate",
    "hard_population_instance",
    "population_objective",
    "population_minimizer_1d",
    "clean_excess_square_loss",
    "excess_loss_threshold",
    "sample_population_instance",
]

_LOSSES = ("squared", "huber", "l1")

_RIDGE = 1e-10
_QUAD_SPAN = 10.0      # integrate Gaussian expectations over [-span, span]


@dataclass
class SurrogateSpec:
    """A convex loss plus optimizer knobs.

    huber_delta is the transition scale of the Huber loss.  iterations
    and tolerance drive the first-order methods in fit_surrogate;
    tolerance is also the golden-section target in the population
    minimizer.
    """

    loss: str = "huber"
    huber_delta: float = 1.0
    iterations: int = 100000
    step_scale: float = 1.0
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.loss not in _LOSSES:
            raise ValueError(f"loss must be one of {_LOSSES}, got {self.loss!r}")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")

    def value(self, u):
        u = np.asarray(u, dtype=float)
        if self.loss == "squared":
            return u ** 2
        if self.loss == "l1":
            return np.abs(u)
        d = self.huber_delta
        au = np.abs(u)
        return np.where(au <= d, 0.5 * u ** 2, d * (au - 0.5 * d))

    def right_derivative(self, u):
        u = np.asarray(u, dtype=float)
        if self.loss == "squared":
            return 2.0 * u
        if self.loss == "l1":
            # right derivative is sign(u) with +1 at 0; the numeric
            # minimizers use the symmetric subgradient (0 at 0) instead
            return np.where(u >= 0, 1.0, -1.0)
        d = self.huber_delta
        return np.clip(u, -d, d)

    def subgradient(self, u):
        u = np.asarray(u, dtype=float)
        if self.loss == "squared":
            return 2.0 * u
        if self.loss == "l1":
            return np.sign(u)
        return np.clip(u, -self.huber_delta, self.huber_delta)


def _project_ball(w: np.ndarray, R: float | None) -> np.ndarray:
    if R is None:
        return w
    nrm = np.linalg.norm(w)
    if nrm <= R:
        return w
    return w * (R / nrm)


def fit_surrogate(x: np.ndarray, y: np.ndarray, spec: SurrogateSpec,
                  R: float | None = None) -> np.ndarray:
    """Minimize (1/n) sum_t h(y_t - <w, x_t>), optionally over ||w|| <= R.

    The squared loss is solved in closed form (normal equations with a
    small ridge); a singular system degrades to a least-squares
    pseudo-solution with a warning.  Huber uses projected gradient
    descent with a fixed 1/L step.  L1 runs averaged projected
    subgradient descent in stages whose constant step halves between
    stages, restarting each stage from the best average seen; on the
    piecewise-linear objectives this decays linearly, which is what lets
    it certify tight tolerances despite the kinks.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n, d = x.shape

    if spec.loss == "squared":
        H = x.T @ x / n + _RIDGE * np.eye(d)
        g = x.T @ y / n
        try:
            w = np.linalg.solve(H, g)
            if not np.all(np.isfinite(w)) or np.linalg.cond(H) > 1e14:
                raise np.linalg.LinAlgError("ill conditioned")
        except np.linalg.LinAlgError:
            warnings.warn("singular normal equations; returning a "
                          "least-squares pseudo-solution", UserWarning)
            w = np.linalg.lstsq(x, y, rcond=None)[0]
        return _project_ball(w, R)

    grad_bound = float(np.linalg.norm(x, axis=1).mean()) if n else 0.0
    if grad_bound == 0.0:
        return np.zeros(d)

    def objective(w):
        return float(np.mean(spec.value(y - x @ w)))

    def grad(w):
        return -x.T @ spec.subgradient(y - x @ w) / n

    def residual(w):
        return float(np.linalg.norm(w - _project_ball(w - grad(w), R)))

    w = np.zeros(d)
    if spec.loss == "huber":
        # smooth, curvature of h at most 1
        L = max(float(np.linalg.eigvalsh(x.T @ x / n).max()), 1e-12)
        step = spec.step_scale / L
        for _ in range(spec.iterations):
            g = grad(w)
            if np.linalg.norm(w - _project_ball(w - g, R)) <= spec.tolerance:
                break
            w = _project_ball(w - step * g, R)
        return w

    radius = R if R is not None else max(1.0, np.abs(y).max(initial=1.0) / grad_bound)
    step = spec.step_scale * radius / grad_bound
    stage = 400
    best, best_val = w.copy(), objective(w)
    spent = 0
    while spent < spec.iterations and step * grad_bound > 1e-15:
        count = min(stage, spec.iterations - spent)
        avg = np.zeros(d)
        for i in range(count):
            w = _project_ball(w - step * grad(w), R)
            avg += (w - avg) / (i + 1)
        spent += count
        val = objective(avg)
        if val < best_val:
            best, best_val = avg, val
        if residual(best) <= spec.tolerance:
            break
        step *= 0.5
        w = best.copy()
    return best


# ------------------------------------------------------- population instance

@dataclass
class PopulationInstance:
    """Two-point covariate law with one-sided point-mass contamination.

    Covariate is 1 with probability m1 and -R otherwise; the true
    regressor is 0 and clean responses are N(0, 1) everywhere.  At x = 1
    the observed response is replaced, with probability eta, by the
    constant corruption_sign * (R + 1).  No corruption at x = -R.
    """

    R: float
    eta: float
    corruption_sign: float = 1.0
    m1: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if not (0.0 <= self.eta < 0.5):
            raise ValueError("eta must lie in [0, 1/2)")
        if self.eta > 0 and self.R < 1.0 / self.eta:
            raise ValueError(f"need R >= 1/eta (got R={self.R}, 1/eta={1/self.eta:.3g})")
        if abs(self.corruption_sign) != 1.0:
            raise ValueError("corruption_sign must be +1 or -1")
        if self.m1 is None:
            self.m1 = 1.0 - self.eta / (10.0 * self.R) if self.eta > 0 else 1.0

    @property
    def corruption_value(self) -> float:
        return self.corruption_sign * (self.R + 1.0)

    def second_moment(self) -> float:
        return self.m1 + (1.0 - self.m1) * self.R ** 2


def hard_population_instance(R: float = 10.0, eta: float = 0.2,
                             corruption_sign: float = 1.0) -> PopulationInstance:
    return PopulationInstance(R=R, eta=eta, corruption_sign=corruption_sign)


def excess_loss_threshold(instance: PopulationInstance) -> float:
    """The barrier every convex surrogate hits: eta^3 R / 40."""
    return instance.eta ** 3 * instance.R / 40.0


def _gaussian_expect(f, tol: float = 1e-10, kinks=None):
    """E[f(Z)] for Z ~ N(0,1) by adaptive quadrature.

    Nonsmooth points of f must be listed in kinks: the initial
    Gauss-Kronrod panel cannot sense a kink whose contribution is below
    its own error estimate, so small shifts of an absolute value would
    otherwise integrate as if the kink were not there.
    """
    pts = None
    if kinks:
        pts = [p for p in kinks if -_QUAD_SPAN < p < _QUAD_SPAN]
        pts = sorted(set(pts)) or None
    val, err = integrate.quad(
        lambda t: f(t) * math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi),
        -_QUAD_SPAN, _QUAD_SPAN, epsabs=tol, epsrel=1e-12, limit=200,
        points=pts,
    )
    if err > 100 * tol:
        raise ArithmeticError(f"quadrature did not converge (error {err:.2e})")
    return val


def _loss_kinks(spec: SurrogateSpec, shift: float):
    """z-values where h(z + shift) loses smoothness."""
    if spec.loss == "l1":
        return [-shift]
    if spec.loss == "huber":
        return [-shift - spec.huber_delta, -shift + spec.huber_delta]
    return []


def population_objective(ell: float, instance: PopulationInstance,
                         spec: SurrogateSpec) -> float:
    """E over the contaminated joint law of h(observed - ell * x)."""
    m1, eta = instance.m1, instance.eta
    h = spec.value
    at_one = _gaussian_expect(lambda z: float(h(z - ell)),
                              kinks=_loss_kinks(spec, -ell))
    at_minus_r = _gaussian_expect(lambda z: float(h(z + instance.R * ell)),
                                  kinks=_loss_kinks(spec, instance.R * ell))
    corrupted = float(h(instance.corruption_value - ell))
    return m1 * ((1.0 - eta) * at_one + eta * corrupted) + (1.0 - m1) * at_minus_r


_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def population_minimizer_1d(instance: PopulationInstance, spec: SurrogateSpec,
                            tol: float = 1e-8) -> float:
    """Golden-section minimization of the population loss over [-1, 1]."""
    lo, hi = -1.0, 1.0
    f = lambda v: population_objective(v, instance, spec)
    a = hi - _INV_GOLDEN * (hi - lo)
    b = lo + _INV_GOLDEN * (hi - lo)
    fa, fb = f(a), f(b)
    while hi - lo > tol:
        if fa <= fb:
            hi, b, fb = b, a, fa
            a = hi - _INV_GOLDEN * (hi - lo)
            fa = f(a)
        else:
            lo, a, fa = a, b, fb
            b = lo + _INV_GOLDEN * (hi - lo)
            fb = f(b)
    return 0.5 * (lo + hi)


def clean_excess_square_loss(w: float, instance: PopulationInstance) -> float:
    """Excess clean square loss of the regressor w over the truth (0).

    The total clean loss is this plus the unit noise variance; the
    excess form is what the eta^3 R / 40 barrier bounds.
    """
    return float(w) ** 2 * instance.second_moment()


def sample_population_instance(instance: PopulationInstance, n: int,
                               rng: np.random.Generator):
    """Draw n contaminated observations; returns (x, y_observed, y_clean)."""
    take_one = rng.random(n) < instance.m1
    x = np.where(take_one, 1.0, -instance.R)
    y_clean = rng.normal(size=n)
    corrupted = take_one & (rng.random(n) < instance.eta)
    y = np.where(corrupted, instance.corruption_value, y_clean)
    return x.reshape(-1, 1), y, y_clean
