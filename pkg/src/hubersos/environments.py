"""Simulated Huber-contaminated regression and bandit environments.

Each round the environment reveals a covariate (or context), accepts the
learner's prediction or action, flips an eta-coin, and returns either the
clean response plus noise or an adversarial value.  Hidden clean values,
noise draws, and the coin are recorded in the transcript so clean-regret
metrics can be computed afterwards; learner code never reads them.

Randomness is split into independent child streams (covariates, noise,
coins, adversary) spawned from one seed, so swapping the adversary or the
learner leaves every clean draw unchanged.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .baselines import PopulationInstance

__all__ = [
    "EnvironmentError_",
    "NoiseSpec",
    "ContaminationConfig",
    "CovariateSpec",
    "RegressionEnvConfig",
    "BanditEnvConfig",
    "RegressionEnv",
    "BanditEnv",
    "Transcript",
    "sample_noise",
    "step_regression_env",
    "step_bandit_env",
    "lower_bound_instance",
    "LowerBoundInstance",
    "clean_sq_regret",
    "clean_pseudo_regret",
    "regularity_report",
]

NOISE_FAMILIES = ("gaussian", "student_t", "rademacher_pareto")
ADVERSARIES = ("constant_offset", "sign_flip", "adaptive_repel",
               "lower_bound_point_mass")
COVARIATE_KINDS = ("uniform_sphere", "fixed_sequence", "rare_direction",
                   "constant_one")
EPSILON_SCHEDULES = ("zero", "constant", "alternating")

_NORM_TOL = 1e-9


class EnvironmentError_(ValueError):
    """Invalid environment configuration or protocol misuse."""


# ------------------------------------------------------------------- noise

@dataclass
class NoiseSpec:
    """A mean-zero noise law normalized to second moment sigma^2.

    k is the moment order the law must support and c the target
    hypercontractivity constant (E|xi|^l)^(1/l) <= c*sqrt(l)*sigma; c is
    diagnostic only, checked empirically in tests rather than enforced.
    """

    family: str = "gaussian"
    sigma: float = 1.0
    k: int = 4
    c: float = 2.0
    nu: float = 6.0
    tail: float = 5.0

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise EnvironmentError_(f"unknown noise family {self.family!r}")
        if self.sigma < 0:
            raise EnvironmentError_("sigma must be nonnegative")
        if self.k < 2:
            raise EnvironmentError_("moment order k must be at least 2")
        if self.family == "student_t" and self.nu <= self.k:
            raise EnvironmentError_(
                f"student_t needs nu > k for a finite k-th moment "
                f"(nu={self.nu}, k={self.k})")
        if self.family == "rademacher_pareto" and self.tail <= self.k:
            raise EnvironmentError_(
                f"rademacher_pareto needs tail index > k "
                f"(tail={self.tail}, k={self.k})")

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.sigma == 0.0:
            return np.zeros(count)
        if self.family == "gaussian":
            return self.sigma * rng.standard_normal(count)
        if self.family == "student_t":
            scale = self.sigma / np.sqrt(self.nu / (self.nu - 2.0))
            return scale * rng.standard_t(self.nu, size=count)
        # symmetrized Pareto with unit minimum, normalized second moment
        body = 1.0 + rng.pareto(self.tail, size=count)
        signs = rng.integers(0, 2, size=count) * 2.0 - 1.0
        scale = self.sigma / np.sqrt(self.tail / (self.tail - 2.0))
        return scale * signs * body


def sample_noise(spec: NoiseSpec, seed, count: int) -> np.ndarray:
    """Draw i.i.d. noise; seed may be an int or a Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return spec.draw(rng, count)


# ---------------------------------------------------------- contamination

@dataclass
class ContaminationConfig:
    """Corruption rate and the adversary used on corrupted rounds.

    constant_offset replaces the response with `value`; sign_flip negates
    the clean response; adaptive_repel answers exactly R away from the
    learner's current prediction, on the side opposite the clean response
    (the far loss endpoint in bandit mode); lower_bound_point_mass emits
    sign*(R+1) but only on rounds whose covariate is the designated
    common point.
    """

    eta: float = 0.0
    adversary: str = "constant_offset"
    value: float = 0.0
    corruption_sign: float = 1.0
    response_cap: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.eta < 0.5):
            raise EnvironmentError_(f"eta must be in [0, 1/2), got {self.eta}")
        if self.adversary not in ADVERSARIES:
            raise EnvironmentError_(f"unknown adversary {self.adversary!r}")


# ------------------------------------------------------------- covariates

@dataclass
class CovariateSpec:
    """How x_t (or the bandit context z_t) is generated; norms stay <= 1."""

    kind: str = "uniform_sphere"
    sequence: np.ndarray | None = None       # fixed_sequence (cycled)
    p_common: float = 0.5                    # rare_direction
    common: np.ndarray | None = None
    rare: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in COVARIATE_KINDS:
            raise EnvironmentError_(f"unknown covariate kind {self.kind!r}")
        if self.kind == "fixed_sequence":
            if self.sequence is None or len(self.sequence) == 0:
                raise EnvironmentError_("fixed_sequence needs a nonempty sequence")
            self.sequence = np.atleast_2d(np.asarray(self.sequence, dtype=float))
            _check_norms(self.sequence)
        if self.kind == "rare_direction":
            if self.common is None or self.rare is None:
                raise EnvironmentError_("rare_direction needs common and rare vectors")
            if not (0.0 < self.p_common <= 1.0):
                raise EnvironmentError_("p_common must be in (0, 1]")
            self.common = np.asarray(self.common, dtype=float)
            self.rare = np.asarray(self.rare, dtype=float)
            _check_norms(np.vstack([self.common, self.rare]))

    def generate(self, rng: np.random.Generator, t: int, d: int) -> np.ndarray:
        if self.kind == "uniform_sphere":
            v = rng.standard_normal(d)
            nrm = np.linalg.norm(v)
            return v / nrm if nrm > 0 else np.eye(d)[0]
        if self.kind == "fixed_sequence":
            return self.sequence[t % len(self.sequence)]
        if self.kind == "rare_direction":
            return self.common if rng.random() < self.p_common else self.rare
        return np.ones(1)  # constant_one


def _check_norms(rows: np.ndarray):
    nrm = np.linalg.norm(np.atleast_2d(rows), axis=1)
    if np.any(nrm > 1.0 + _NORM_TOL):
        raise EnvironmentError_(
            f"covariate norm {nrm.max():.6f} exceeds 1")


# ---------------------------------------------------------------- configs

@dataclass
class RegressionEnvConfig:
    d: int
    T: int
    R: float
    w_star: np.ndarray
    covariates: CovariateSpec = field(default_factory=CovariateSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    contamination: ContaminationConfig = field(default_factory=ContaminationConfig)
    epsilon_schedule: str = "zero"
    epsilon: float = 0.0

    def __post_init__(self):
        self.w_star = np.asarray(self.w_star, dtype=float)
        if self.w_star.shape != (self.d,):
            raise EnvironmentError_(
                f"w_star shape {self.w_star.shape} does not match d={self.d}")
        if np.linalg.norm(self.w_star) > self.R + _NORM_TOL:
            raise EnvironmentError_("the hidden regressor must satisfy ||w*|| <= R")
        if self.epsilon < 0:
            raise EnvironmentError_("epsilon must be nonnegative")
        if self.epsilon_schedule not in EPSILON_SCHEDULES:
            raise EnvironmentError_(
                f"unknown epsilon schedule {self.epsilon_schedule!r}")
        if self.covariates.kind == "constant_one" and self.d != 1:
            raise EnvironmentError_("constant_one covariates require d = 1")

    def epsilon_at(self, t: int) -> float:
        if self.epsilon_schedule == "zero" or self.epsilon == 0.0:
            return 0.0
        if self.epsilon_schedule == "constant":
            return self.epsilon
        return self.epsilon if t % 2 == 0 else -self.epsilon


@dataclass
class BanditEnvConfig:
    K: int
    d: int
    T: int
    R: float
    w_stars: np.ndarray
    contexts: CovariateSpec = field(default_factory=CovariateSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    contamination: ContaminationConfig = field(default_factory=ContaminationConfig)

    def __post_init__(self):
        self.w_stars = np.asarray(self.w_stars, dtype=float)
        if self.w_stars.shape != (self.K, self.d):
            raise EnvironmentError_(
                f"w_stars shape {self.w_stars.shape} must be (K={self.K}, d={self.d})")
        if np.any(np.linalg.norm(self.w_stars, axis=1) > self.R + _NORM_TOL):
            raise EnvironmentError_("every per-action regressor needs norm <= R")

    def mean_loss(self, z: np.ndarray) -> np.ndarray:
        """f(z, .) mapped affinely from [-R, R] into [R/4, 3R/4]."""
        return self.R / 2.0 + (self.w_stars @ z) / 4.0


# ------------------------------------------------------------- transcript

CSV_COLUMNS = ("t", "gamma", "hash", "action", "prediction", "observed",
               "clean", "noise", "epsilon")


def _vec_hash(v: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(v, dtype=float).tobytes()).hexdigest()[:12]


@dataclass
class Transcript:
    """Round-by-round record of one environment run.

    kind is "regression" or "bandit".  Hidden fields (clean values, noise,
    coins, full loss tables) exist because this is a simulation; metric
    functions consume them, learners must not.
    """

    kind: str
    R: float
    rows: list = field(default_factory=list)
    covariates: list = field(default_factory=list)
    clean_tables: list = field(default_factory=list)   # bandit only
    mean_tables: list = field(default_factory=list)    # bandit only

    def __len__(self):
        return len(self.rows)

    def column_names(self):
        """The documented column set; bandit transcripts append the full
        hidden loss tables (clean_a realized, mean_a noiseless)."""
        if self.kind == "regression":
            return CSV_COLUMNS
        K = len(self.clean_tables[0]) if self.clean_tables else 0
        return (CSV_COLUMNS
                + tuple(f"clean_{a}" for a in range(K))
                + tuple(f"mean_{a}" for a in range(K)))

    def csv_rows(self):
        if self.kind == "regression":
            for t, gamma, h, pred, obs, clean, noise, eps in self.rows:
                yield (t, gamma, h, "", pred, obs, clean, noise, eps)
            return
        for row, table, means in zip(self.rows, self.clean_tables,
                                     self.mean_tables):
            t, gamma, h, action, pred, obs = row
            yield ((t, gamma, h, action, pred, obs, float(table[action]), "", "")
                   + tuple(float(v) for v in table)
                   + tuple(float(v) for v in means))

    def to_csv(self, path: str):
        """Write one row per round; floats use repr so identical runs
        serialize byte-identically."""
        with open(path, "w") as fh:
            fh.write(",".join(self.column_names()) + "\n")
            for row in self.csv_rows():
                fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ------------------------------------------------------------ environments

class RegressionEnv:
    """Sequential contaminated regression per the two-phase protocol:
    next_covariate() reveals x_t, then step(prediction) returns y_t."""

    def __init__(self, config: RegressionEnvConfig, seed: int):
        self.config = config
        ss = np.random.SeedSequence(seed)
        cov_s, noise_s, coin_s, adv_s = ss.spawn(4)
        self._cov_rng = np.random.default_rng(cov_s)
        self._noise_rng = np.random.default_rng(noise_s)
        self._coin_rng = np.random.default_rng(coin_s)
        self._adv_rng = np.random.default_rng(adv_s)
        self.t = 0
        self._pending_x = None
        self.transcript = Transcript(kind="regression", R=config.R)

    def next_covariate(self) -> np.ndarray:
        if self._pending_x is not None:
            raise EnvironmentError_("step() must be called before the next covariate")
        if self.t >= self.config.T:
            raise EnvironmentError_("environment horizon exhausted")
        self._pending_x = self.config.covariates.generate(
            self._cov_rng, self.t, self.config.d)
        return self._pending_x

    def step(self, prediction: float):
        if self._pending_x is None:
            raise EnvironmentError_("next_covariate() must be called first")
        cfg = self.config
        x = self._pending_x
        self._pending_x = None
        eps = cfg.epsilon_at(self.t)
        clean = float(cfg.w_star @ x) + eps
        noise = float(cfg.noise.draw(self._noise_rng, 1)[0])
        gamma = int(self._coin_rng.random() < cfg.contamination.eta)
        if gamma:
            observed = self._adversary_value(x, float(prediction), clean, noise)
        else:
            observed = clean + noise
        row = (self.t, gamma, _vec_hash(x), float(prediction), observed,
               clean, noise, eps)
        self.transcript.rows.append(row)
        self.transcript.covariates.append(x)
        self.t += 1
        return observed, row

    def _adversary_value(self, x, prediction, clean, noise) -> float:
        cfg = self.config
        con = cfg.contamination
        cap = con.response_cap if con.response_cap is not None else 2.0 * cfg.R
        if con.adversary == "constant_offset":
            out = con.value
        elif con.adversary == "sign_flip":
            out = -(clean + noise)
        elif con.adversary == "adaptive_repel":
            # land R away from the prediction, on the far side from the
            # clean response, so a non-robust fit is dragged off the truth
            direction = 1.0 if clean >= prediction else -1.0
            out = prediction - direction * cfg.R
        else:  # lower_bound_point_mass: only the common covariate is hit
            spec = cfg.covariates
            if spec.kind == "rare_direction" and np.array_equal(x, spec.common):
                out = con.corruption_sign * con.value
            else:
                out = clean + noise
        return float(np.clip(out, -cap, cap))

    def as_dataset(self):
        """(x array, observed y array) of all completed rounds."""
        x = np.asarray(self.transcript.covariates, dtype=float)
        y = np.array([r[4] for r in self.transcript.rows])
        return x, y


class BanditEnv:
    """Contaminated K-action bandit: next_context(), then step(action)."""

    def __init__(self, config: BanditEnvConfig, seed: int):
        self.config = config
        ss = np.random.SeedSequence(seed)
        ctx_s, noise_s, coin_s, adv_s = ss.spawn(4)
        self._ctx_rng = np.random.default_rng(ctx_s)
        self._noise_rng = np.random.default_rng(noise_s)
        self._coin_rng = np.random.default_rng(coin_s)
        self._adv_rng = np.random.default_rng(adv_s)
        self.t = 0
        self._pending = None
        self.transcript = Transcript(kind="bandit", R=config.R)

    def next_context(self) -> np.ndarray:
        if self._pending is not None:
            raise EnvironmentError_("step() must be called before the next context")
        if self.t >= self.config.T:
            raise EnvironmentError_("environment horizon exhausted")
        cfg = self.config
        z = cfg.contexts.generate(self._ctx_rng, self.t, cfg.d)
        means = cfg.mean_loss(z)
        raw = cfg.noise.draw(self._noise_rng, cfg.K)
        table = means + np.clip(raw, -cfg.R / 4.0, cfg.R / 4.0)
        self._pending = (z, means, table)
        return z

    def step(self, action: int, predicted_loss: float | None = None):
        if self._pending is None:
            raise EnvironmentError_("next_context() must be called first")
        cfg = self.config
        z, means, table = self._pending
        self._pending = None
        if not (0 <= action < cfg.K):
            raise EnvironmentError_(f"action {action} outside [0, {cfg.K})")
        gamma = int(self._coin_rng.random() < cfg.contamination.eta)
        clean = float(table[action])
        if gamma:
            observed = self._adversary_value(clean, predicted_loss)
        else:
            observed = clean
        row = (self.t, gamma, _vec_hash(z), int(action),
               float(predicted_loss) if predicted_loss is not None else float("nan"),
               observed)
        self.transcript.rows.append(row)
        self.transcript.covariates.append(z)
        self.transcript.clean_tables.append(np.asarray(table, dtype=float))
        self.transcript.mean_tables.append(np.asarray(means, dtype=float))
        self.t += 1
        return observed, row

    def _adversary_value(self, clean: float, predicted_loss) -> float:
        cfg = self.config
        con = cfg.contamination
        if con.adversary == "constant_offset":
            out = con.value
        elif con.adversary == "sign_flip":
            out = cfg.R - clean     # reflect within the loss range
        elif con.adversary == "adaptive_repel":
            anchor = predicted_loss if predicted_loss is not None else cfg.R / 2.0
            out = 0.0 if anchor >= cfg.R / 2.0 else cfg.R
        else:
            out = con.corruption_sign * con.value
        return float(np.clip(out, 0.0, cfg.R))


def step_regression_env(env: RegressionEnv, prediction: float):
    return env.step(prediction)


def step_bandit_env(env: BanditEnv, action: int, predicted_loss: float | None = None):
    return env.step(action, predicted_loss)


# ----------------------------------------------------- lower-bound preset

@dataclass
class LowerBoundInstance:
    """The two-point hard instance in environment form plus its closed-form
    population description (consumed by the baselines module)."""

    env_config: RegressionEnvConfig
    population: PopulationInstance
    threshold: float

    @property
    def R(self):
        return self.population.R


def lower_bound_instance(R: float, eta: float, T: int = 2000,
                         corruption_sign: float = 1.0) -> LowerBoundInstance:
    """Hard instance: x in {1, -R} rescaled into the unit ball, truth 0,
    unit noise, point-mass corruption at sign*(R+1) on x = 1 rounds only."""
    if eta <= 0 or eta >= 0.5:
        raise EnvironmentError_("eta must lie in (0, 1/2)")
    if R < 1.0 / eta:
        raise EnvironmentError_(f"need R >= 1/eta (got R={R}, 1/eta={1/eta:.3g})")
    population = PopulationInstance(R=R, eta=eta, corruption_sign=corruption_sign)
    covs = CovariateSpec(kind="rare_direction", p_common=population.m1,
                         common=np.array([1.0 / R]), rare=np.array([-1.0]))
    contamination = ContaminationConfig(
        eta=eta, adversary="lower_bound_point_mass", value=R + 1.0,
        corruption_sign=corruption_sign, response_cap=2.0 * (R + 1.0))
    env_config = RegressionEnvConfig(
        d=1, T=T, R=R, w_star=np.zeros(1), covariates=covs,
        noise=NoiseSpec(family="gaussian", sigma=1.0),
        contamination=contamination)
    threshold = eta ** 3 * R / 40.0
    return LowerBoundInstance(env_config, population, threshold)


# ----------------------------------------------------------------- metrics

def clean_sq_regret(transcript: Transcript) -> float:
    """Sum over rounds of (prediction - clean noiseless value)^2."""
    if transcript.kind != "regression":
        raise EnvironmentError_("clean_sq_regret needs a regression transcript")
    total = 0.0
    for row in transcript.rows:
        total += (row[3] - row[5]) ** 2
    return total


def clean_sq_regret_curve(transcript: Transcript) -> np.ndarray:
    if transcript.kind != "regression":
        raise EnvironmentError_("clean_sq_regret_curve needs a regression transcript")
    per_round = np.array([(r[3] - r[5]) ** 2 for r in transcript.rows])
    return np.cumsum(per_round)


def clean_pseudo_regret(transcript: Transcript, policy=None) -> float:
    """Sum of clean-loss gaps between played actions and a comparator.

    The default comparator plays argmin of the hidden mean loss f(z, .);
    the protocol's own definition maximizes over all policies, which is
    not computable, so callers may also pass explicit policies and take
    the max themselves.
    """
    if transcript.kind != "bandit":
        raise EnvironmentError_("clean_pseudo_regret needs a bandit transcript")
    if len(transcript.clean_tables) != len(transcript.rows):
        raise EnvironmentError_("transcript lacks hidden clean loss tables")
    total = 0.0
    for row, z, table, means in zip(transcript.rows, transcript.covariates,
                                    transcript.clean_tables,
                                    transcript.mean_tables):
        action = row[3]
        if policy is None:
            comparator = int(np.argmin(means))
        else:
            comparator = int(policy(z))
        total += float(table[action] - table[comparator])
    return total


def clean_pseudo_regret_curve(transcript: Transcript) -> np.ndarray:
    gaps = []
    for row, table, means in zip(transcript.rows, transcript.clean_tables,
                                 transcript.mean_tables):
        comparator = int(np.argmin(means))
        gaps.append(float(table[row[3]] - table[comparator]))
    return np.cumsum(np.asarray(gaps))


def regularity_report(transcript: Transcript, params) -> dict:
    """Empirical check of the truncation-inlier regularity events.

    Inliers are uncorrupted rounds whose squared noise is within the
    truncation threshold.  Reports (never asserts) the inlier fraction
    against 1 - eta_bar - alpha and the minimum eigenvalue of
    eta_bar*Sigma_n - (1/n) sum_outlier x x^T, whose target is >= -alpha.
    """
    from .moment_program import truncation_threshold

    if transcript.kind != "regression":
        raise EnvironmentError_("regularity_report needs a regression transcript")
    x = np.asarray(transcript.covariates, dtype=float)
    gamma = np.array([r[1] for r in transcript.rows])
    noise = np.array([r[6] for r in transcript.rows])
    n = len(gamma)
    s = truncation_threshold(params)
    inlier = (gamma == 0) & (noise ** 2 <= s)
    sigma_n = x.T @ x / n
    dropped = x[~inlier]
    drop_mat = dropped.T @ dropped / n if len(dropped) else np.zeros_like(sigma_n)
    min_eig = float(np.linalg.eigvalsh(params.eta_bar * sigma_n - drop_mat).min())
    return {
        "truncation_threshold": float(s),
        "inlier_fraction": float(inlier.mean()),
        "required_fraction": float(1.0 - params.eta_bar - params.alpha),
        "inlier_fraction_ok": bool(inlier.mean() >= 1.0 - params.eta_bar - params.alpha),
        "spectral_min_eig": min_eig,
        "spectral_ok": bool(min_eig >= -params.alpha - 1e-9),
    }
