"""Contextual bandits by reduction to online regression.

Each round the learner asks a regression oracle for a loss estimate of
every action, turns the estimates into an inverse-gap distribution
anchored at the greedy action, samples, and feeds the observed loss of
the played action back to the oracle.  Any oracle matching
predict(context, action) and update((context, action), loss) plugs in;
this module ships a robust one built on the moment-relaxation machinery
and a ridge least-squares one as the fragile baseline.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .online import (
    OnlineParams,
    OracleState,
    project_to_ball,
    separation_oracle_step,
)

__all__ = [
    "ActionDistribution",
    "BanditParams",
    "squarecb_distribution",
    "choose_gamma_mu",
    "auto_regret_estimate",
    "squarecb_run",
    "embed_context_action",
    "embedding_dim",
    "oracle_ball_radius",
    "RobustOracle",
    "OlsOracle",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ActionDistribution:
    probabilities: np.ndarray
    base_action: int


@dataclass
class BanditParams:
    """K, learning rate gamma, exploration parameter mu, horizon, range.

    mu >= K - 1 keeps every probability nonnegative; the canonical
    choice is mu = K.  K = 1 is allowed as the degenerate no-choice
    case even though the interesting regime starts at K = 2.
    """

    K: int
    gamma: float
    mu: float
    T: int
    R: float
    epsilon: float = 0.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("need at least one action")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.mu < self.K - 1:
            raise ValueError(
                f"mu={self.mu} below K-1={self.K - 1}: probabilities could go negative")


def squarecb_distribution(predictions, gamma: float, mu: float) -> ActionDistribution:
    """Inverse-gap weighting around the lowest-index greedy action."""
    yhat = np.asarray(predictions, dtype=float)
    if yhat.ndim != 1 or yhat.size < 1:
        raise ValueError("predictions must be a nonempty vector")
    if not np.all(np.isfinite(yhat)):
        raise ValueError("predictions must be finite")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    K = yhat.size
    if mu < K - 1:
        raise ValueError(f"mu={mu} below K-1={K - 1}")
    b = int(np.argmin(yhat))              # first minimum: lowest index wins
    p = 1.0 / (mu + gamma * (yhat - yhat[b]))
    p[b] = 0.0
    p[b] = 1.0 - p.sum()
    return ActionDistribution(probabilities=p, base_action=b)


def choose_gamma_mu(K: int, T: int, regret_estimate: float,
                    epsilon: float = 0.0):
    """gamma = 2 sqrt(KT / (regret_estimate + 2 eps^2 T)), mu = K."""
    if K < 2:
        raise ValueError("need at least two actions")
    if T < 1:
        raise ValueError("horizon must be positive")
    denom = regret_estimate + 2.0 * epsilon ** 2 * T
    if denom <= 0:
        raise ValueError("regret_estimate and epsilon cannot both be zero")
    return 2.0 * math.sqrt(K * T / denom), float(K)


def auto_regret_estimate(k: float, sigma: float, eta: float, T: int) -> float:
    """Stand-in for the oracle's expected square-loss regret: the leading
    contamination term k sigma^2 eta^(1-2/k) T, floored at sigma^2 sqrt(T)
    so the estimate stays positive when eta = 0."""
    leading = k * sigma ** 2 * eta ** (1.0 - 2.0 / k) * T if eta > 0 else 0.0
    return max(leading, sigma ** 2 * math.sqrt(T))


# -------------------------------------------------------------- embeddings

def embedding_dim(K: int, d: int) -> int:
    return K * d + 1


def embed_context_action(z: np.ndarray, action: int, K: int) -> np.ndarray:
    """Block one-hot embedding [0.. z ..0, 1] / sqrt(2), unit-ball safe."""
    z = np.asarray(z, dtype=float)
    d = z.size
    out = np.zeros(K * d + 1)
    out[action * d:(action + 1) * d] = z
    out[-1] = 1.0
    return out / math.sqrt(2.0)


def oracle_ball_radius(K: int, R: float) -> float:
    """Norm bound for the embedded regressor representing the clean loss
    surface R/2 + <w_a, z>/4 with every ||w_a|| <= R."""
    return math.sqrt(2.0) * R * math.sqrt(K / 16.0 + 0.25)


# ----------------------------------------------------------------- oracles

class RobustOracle:
    """Online regression oracle over the embedding, driven by the
    separation oracle with projected-gradient updates on each cut."""

    def __init__(self, K: int, d: int, params: OnlineParams):
        self.K = K
        self.d = d
        self.emb_dim = embedding_dim(K, d)
        self.params = params
        self.state = OracleState(w=np.zeros(self.emb_dim), d=self.emb_dim)
        G = 4.0 * params.R
        v_max = math.ceil(4.0 * params.R ** 4 / params.C0 ** 2 + 1.0)
        self.step = params.gamma_step * 2.0 * params.R / (G * math.sqrt(v_max))
        self.w = np.zeros(self.emb_dim)

    def predict(self, context, action: int) -> float:
        return float(self.w @ embed_context_action(context, action, self.K))

    def update(self, pair, loss: float):
        context, action = pair
        self.state.w = self.w
        result = separation_oracle_step(
            self.state, (embed_context_action(context, action, self.K), loss),
            self.params)
        if result.cut is not None:
            self.w = project_to_ball(self.w - self.step * result.cut,
                                     self.params.R)

    @property
    def diagnostics(self) -> dict:
        return {"refits": self.state.refits,
                "solver_failures": self.state.solver_failures,
                "step": self.step}


class OlsOracle:
    """Follow-the-leader ridge least squares over the same embedding; the
    deliberately non-robust baseline."""

    def __init__(self, K: int, d: int, ridge: float = 1e-6):
        self.K = K
        self.emb_dim = embedding_dim(K, d)
        self.gram = ridge * np.eye(self.emb_dim)
        self.moment = np.zeros(self.emb_dim)
        self.w = np.zeros(self.emb_dim)

    def predict(self, context, action: int) -> float:
        return float(self.w @ embed_context_action(context, action, self.K))

    def update(self, pair, loss: float):
        context, action = pair
        psi = embed_context_action(context, action, self.K)
        self.gram += np.outer(psi, psi)
        self.moment += float(loss) * psi
        self.w = np.linalg.solve(self.gram, self.moment)


# --------------------------------------------------------------------- run

def squarecb_run(env, oracle, params: BanditParams, seed: int = 0):
    """Play the inverse-gap strategy against a bandit environment.

    Per round: exactly K oracle predictions, one distribution, one
    sampled action, one environment step, one oracle update with the
    observed (possibly corrupted) loss.  Predictions are clamped to
    [0, R] for forming the distribution only; raw values feed the
    oracle untouched, and far-out values (beyond [-R, 2R]) are logged.
    Returns the environment transcript.
    """
    K = params.K
    env_K = getattr(getattr(env, "config", None), "K", K)
    if env_K != K:
        raise ValueError(f"params.K={K} does not match environment K={env_K}")
    rng = np.random.default_rng(seed)
    wild = 0
    for _ in range(params.T):
        try:
            z = env.next_context()
        except (StopIteration, ValueError):
            break
        raw = np.array([oracle.predict(z, a) for a in range(K)])
        if np.any(raw < -params.R) or np.any(raw > 2.0 * params.R):
            wild += 1
        clamped = np.clip(raw, 0.0, params.R)
        dist = squarecb_distribution(clamped, params.gamma, params.mu)
        action = int(rng.choice(K, p=dist.probabilities))
        observed, _ = env.step(action, predicted_loss=float(raw[action]))
        oracle.update((z, action), observed)
    if wild:
        logger.info("clamped %d rounds with predictions outside [-R, 2R]", wild)
    return env.transcript
