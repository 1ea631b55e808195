"""Risk machinery: CVaR-distorted action selection, right-truncated
variance of the learned return distribution, and the two-logit
exponentially-weighted forecaster that adapts the CVaR level online.

The CVaR level alpha lives in (1/(b+1), 1) by construction:

    alpha = ((b+1) e^{w1} + e^{w2}) / ((b+1)(e^{w1} + e^{w2}))

Positive uncertainty feedback (rising RTV) pushes w1 down and w2 up,
shrinking alpha, i.e. the policy turns risk-averse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericError
from . import quantile_net as qn
from .quantile_net import NetParams

LOGIT_CLAMP = 20.0


@dataclass
class PolicyConfig:
    K: int = 64   # tau samples per action selection
    N: int = 16   # quantile grid size for RTV (must be even)


@dataclass(frozen=True)
class RiskState:
    w1: float
    w2: float
    b: float
    eta: float
    prev_rtv: float | None
    alpha: float


def alpha_of_logits(w1: float, w2: float, b: float) -> float:
    """Closed-form CVaR level; strictly increasing in w1 - w2, with limits
    1/(b+1) and 1."""
    e1 = math.exp(w1)
    e2 = math.exp(w2)
    return ((b + 1.0) * e1 + e2) / ((b + 1.0) * (e1 + e2))


def initial_risk_state(w1: float = 3.0, w2: float = -3.0, b: float = 9.0,
                       eta: float = 0.5) -> RiskState:
    """Start nearly risk-neutral (alpha ~ 0.998 for the default logits)."""
    return RiskState(w1=w1, w2=w2, b=b, eta=eta, prev_rtv=None,
                     alpha=alpha_of_logits(w1, w2, b))


def ewaf_update(state: RiskState, rtv_t: float) -> RiskState:
    """One forecaster step: feedback is the RTV increment, logits move
    against it, alpha is recomputed. The first call (no previous RTV) is a
    fixed point."""
    if not math.isfinite(rtv_t):
        raise NumericError(f"non-finite RTV feedback: {rtv_t}")
    f_t = 0.0 if state.prev_rtv is None else rtv_t - state.prev_rtv
    w1 = min(max(state.w1 - state.eta * f_t, -LOGIT_CLAMP), LOGIT_CLAMP)
    w2 = min(max(state.w2 + state.eta * f_t, -LOGIT_CLAMP), LOGIT_CLAMP)
    return replace(state, w1=w1, w2=w2, prev_rtv=rtv_t,
                   alpha=alpha_of_logits(w1, w2, state.b))


def distorted_taus(alpha: float, k: int, rng: np.random.Generator) -> np.ndarray:
    """k quantile fractions from U[0, alpha]. alpha = 1 reproduces the
    undistorted U[0, 1) draw bit-for-bit."""
    return alpha * rng.random(k)


def greedy_from_quantiles(z: np.ndarray) -> int:
    """Argmax of per-action sample means; ties go to the lowest index."""
    return int(np.argmax(z.mean(axis=1)))


def select_action(params: NetParams, obs_vec: np.ndarray, alpha: float, k: int,
                  rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """CVaR-distorted greedy action.

    Draws k fractions from U[0, alpha], evaluates the quantile network once
    for all actions, and picks the best distorted mean. Returns the action
    index and the (n_actions, k) sampled quantile values.
    """
    taus = distorted_taus(alpha, k, rng)
    z, _ = qn.forward(params, obs_vec, taus)
    return greedy_from_quantiles(z), z


def rtv_from_quantiles(lower_half: np.ndarray) -> float:
    """Right-truncated variance from quantile values at the grid
    tau_i = i/N for i = 1..N/2 (median value last)."""
    q = np.asarray(lower_half, dtype=float)
    n = 2 * len(q)
    dev = q - q[-1]
    return float(2.0 / n * np.sum(dev * dev))


def rtv(params: NetParams, obs_vec: np.ndarray, action: int, n: int) -> float:
    """Intrinsic uncertainty at (obs, action): spread of the lower half of
    the return distribution around its median, per the fixed grid i/N."""
    if n % 2 != 0:
        raise ValueError("RTV quantile grid size must be even")
    taus = np.arange(1, n // 2 + 1) / n
    z, _ = qn.forward(params, obs_vec, taus)
    return rtv_from_quantiles(z[action])
