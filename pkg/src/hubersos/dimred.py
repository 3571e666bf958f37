"""Gaussian random projections and dimension schedules.

A projection P has i.i.d. N(0, 1/m) entries, which preserves pairwise
geometry of n points at m on the order of log(n)/eps^2.  The regret
schedule instead balances projection dimension against distortion for
heavy-tailed moment order k.  Projected covariates are clipped back into
the unit ball (with a log line) so downstream norm assumptions survive.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "JlProjection",
    "make_projection",
    "choose_m_distortion",
    "choose_m_regret",
    "project_dataset",
]

logger = logging.getLogger(__name__)

DEFAULT_JL_CONSTANT = 8.0


@dataclass(frozen=True)
class JlProjection:
    matrix: np.ndarray
    m: int
    d_in: int
    seed: int | None = None
    identity: bool = False


def make_projection(d_in: int, m: int, seed: int | None = None,
                    identity: bool = False) -> JlProjection:
    """Draw an m x d_in Gaussian projection, deterministic in the seed.

    identity=True is a test mode requiring m == d_in; it swaps in the
    exact (distortion-free) map.
    """
    if d_in < 1 or m < 1:
        raise ValueError("projection dimensions must be positive")
    if identity:
        if m != d_in:
            raise ValueError("identity mode needs m == d_in")
        return JlProjection(np.eye(d_in), m=m, d_in=d_in, seed=seed, identity=True)
    rng = np.random.default_rng(seed)
    matrix = rng.standard_normal((m, d_in)) / math.sqrt(m)
    return JlProjection(matrix, m=m, d_in=d_in, seed=seed)


def choose_m_distortion(n_points: int, delta: float, eps: float,
                        c_jl: float = DEFAULT_JL_CONSTANT) -> int:
    """Projection dimension preserving all pairwise geometry of n_points
    vectors to distortion eps with failure probability delta."""
    if not (0.0 < eps <= 1.0):
        raise ValueError("eps must lie in (0, 1]")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    if n_points < 2:
        raise ValueError("need at least two points")
    return math.ceil(c_jl * math.log(n_points ** 2 / delta) / eps ** 2)


def choose_m_regret(n: int, k: float) -> int:
    """Dimension schedule n^((k-2)/(k^2+k-2)) trading distortion against
    the heavy-tailed regret exponent."""
    if k <= 2:
        raise ValueError("moment order k must exceed 2")
    if n < 1:
        raise ValueError("n must be positive")
    gamma = (k - 2.0) / (k * k + k - 2.0)
    return max(1, int(round(n ** gamma)))


def project_dataset(projection: JlProjection, xs: np.ndarray) -> np.ndarray:
    """Apply P to each row; any image with norm above 1 is pulled back to
    the unit sphere and the event logged."""
    xs = np.asarray(xs, dtype=float)
    single = xs.ndim == 1
    rows = xs[None, :] if single else xs
    if rows.shape[1] != projection.d_in:
        raise ValueError(
            f"input dimension {rows.shape[1]} does not match d_in={projection.d_in}")
    out = rows @ projection.matrix.T
    norms = np.linalg.norm(out, axis=1)
    over = norms > 1.0
    if np.any(over):
        logger.info("renormalized %d of %d projected vectors back to the unit ball",
                    int(over.sum()), len(out))
        out = out.copy()
        out[over] /= norms[over, None]
    return out[0] if single else out
