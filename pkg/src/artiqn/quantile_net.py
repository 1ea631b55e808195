"""Implicit quantile function approximator with hand-rolled gradients.

Architecture, per (observation, tau) pair:

    h1     = relu(W_in  @ obs + b_in)          # obs trunk, width `hidden`
    phi    = relu(W_tau @ cos_embed(tau) + b_tau)
    merged = h1 * phi                          # Hadamard merge
    h2     = relu(W_h1 @ merged + b_h1)
    h3     = relu(W_h2 @ h2 + b_h2)
    out    = W_out @ h3 + b_out                # one value per action

The scalar-Q variant used by the DQN baseline replaces phi with an
all-ones vector, turning the same weights into a plain MLP.

Everything is float64 and functional: forward never mutates parameters,
and adam_step returns fresh parameter/state objects.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericError
from .sim_env import Observation


@dataclass
class NetConfig:
    obs_dim: int = 7
    n_actions: int = 12
    n_cos: int = 64
    hidden: int = 512
    # Observation scaling: positions and goal distance by the arena side,
    # lasers by their max range.
    pos_scale: float = 10.0
    dist_scale: float = 10.0
    laser_scale: float = 4.0


PARAM_FIELDS = ("w_in", "b_in", "w_tau", "b_tau", "w_h1", "b_h1", "w_h2", "b_h2", "w_out", "b_out")


@dataclass
class NetParams:
    """All weights. Matrices are (fan_in, fan_out); also reused as the
    gradient container since gradients share the shapes."""

    w_in: np.ndarray
    b_in: np.ndarray
    w_tau: np.ndarray
    b_tau: np.ndarray
    w_h1: np.ndarray
    b_h1: np.ndarray
    w_h2: np.ndarray
    b_h2: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def as_list(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in PARAM_FIELDS]

    @classmethod
    def from_list(cls, arrays: list[np.ndarray]) -> "NetParams":
        return cls(**dict(zip(PARAM_FIELDS, arrays)))

    def copy(self) -> "NetParams":
        return NetParams.from_list([a.copy() for a in self.as_list()])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.as_list())

    @staticmethod
    def shapes(cfg: NetConfig) -> list[tuple[int, ...]]:
        h, a = cfg.hidden, cfg.n_actions
        return [(cfg.obs_dim, h), (h,), (cfg.n_cos, h), (h,),
                (h, h), (h,), (h, h), (h,), (h, a), (a,)]

    @classmethod
    def zeros(cls, cfg: NetConfig) -> "NetParams":
        return cls.from_list([np.zeros(s) for s in cls.shapes(cfg)])


def init_params(rng: np.random.Generator, cfg: NetConfig) -> NetParams:
    """Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases."""
    arrays = []
    for shape in NetParams.shapes(cfg):
        if len(shape) == 2:
            bound = np.sqrt(6.0 / shape[0])
            arrays.append(rng.uniform(-bound, bound, size=shape))
        else:
            arrays.append(np.zeros(shape))
    return NetParams.from_list(arrays)


def normalize_obs(obs: Observation, cfg: NetConfig) -> np.ndarray:
    """Scale an observation into the unit-ish box the network expects."""
    return np.concatenate([
        obs.p / cfg.pos_scale,
        [obs.d_g / cfg.dist_scale],
        obs.d_l / cfg.laser_scale,
    ])


def denormalize_obs(vec: np.ndarray, cfg: NetConfig) -> Observation:
    return Observation(
        p=vec[:2] * cfg.pos_scale,
        d_g=float(vec[2] * cfg.dist_scale),
        d_l=vec[3:7] * cfg.laser_scale,
    )


def embed_tau(tau: float, n_cos: int) -> np.ndarray:
    """Cosine basis embedding: component i is cos(pi * i * tau)."""
    return np.cos(np.pi * np.arange(n_cos) * tau)


def _embed_batch(taus: np.ndarray, n_cos: int) -> np.ndarray:
    # taus (B, n_t) -> (B, n_t, n_cos)
    return np.cos(np.pi * taus[..., None] * np.arange(n_cos))


@dataclass
class ForwardTrace:
    """Cached activations from one forward pass, consumed by backward()."""

    obs: np.ndarray           # (B, obs_dim)
    embed: np.ndarray | None  # (B, n_t, n_cos); None in scalar-Q mode
    h1: np.ndarray            # (B, hidden)
    phi: np.ndarray | None    # (B, n_t, hidden); None in scalar-Q mode
    merged: np.ndarray        # (B, n_t, hidden)
    h2: np.ndarray
    h3: np.ndarray
    q_mode: bool


def forward_batch(params: NetParams, obs: np.ndarray, taus: np.ndarray | None,
                  q_mode: bool = False) -> tuple[np.ndarray, ForwardTrace]:
    """Evaluate quantile values for a batch.

    obs is (B, obs_dim); taus is (B, n_t) (ignored when q_mode). Returns
    values shaped (B, n_actions, n_t) plus the trace for backprop. In
    q_mode n_t == 1 and the tau path is bypassed with an all-ones merge.
    """
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 2 or obs.shape[1] != params.w_in.shape[0]:
        raise ValueError(f"obs batch shape {obs.shape} does not match input width "
                         f"{params.w_in.shape[0]}")
    h1 = np.maximum(obs @ params.w_in + params.b_in, 0.0)

    if q_mode:
        embed = None
        phi = None
        merged = h1[:, None, :]
    else:
        taus = np.asarray(taus, dtype=float)
        if taus.ndim != 2 or taus.shape[0] != obs.shape[0]:
            raise ValueError(f"taus shape {taus.shape} does not pair with obs batch "
                             f"{obs.shape[0]}")
        embed = _embed_batch(taus, params.w_tau.shape[0])
        phi = np.maximum(embed @ params.w_tau + params.b_tau, 0.0)
        merged = h1[:, None, :] * phi

    h2 = np.maximum(merged @ params.w_h1 + params.b_h1, 0.0)
    h3 = np.maximum(h2 @ params.w_h2 + params.b_h2, 0.0)
    out = h3 @ params.w_out + params.b_out            # (B, n_t, A)
    trace = ForwardTrace(obs=obs, embed=embed, h1=h1, phi=phi, merged=merged,
                         h2=h2, h3=h3, q_mode=q_mode)
    return np.swapaxes(out, 1, 2), trace


def forward(params: NetParams, obs_vec: np.ndarray, taus: np.ndarray
            ) -> tuple[np.ndarray, ForwardTrace]:
    """Single-observation forward: returns (n_actions, n_taus) quantile values."""
    taus = np.asarray(taus, dtype=float)
    out, trace = forward_batch(params, np.asarray(obs_vec, dtype=float)[None, :],
                               taus[None, :])
    return out[0], trace


def forward_q(params: NetParams, obs: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    """Scalar Q-values (B, n_actions) with the tau embedding bypassed."""
    out, trace = forward_batch(params, obs, None, q_mode=True)
    return out[:, :, 0], trace


def backward(params: NetParams, trace: ForwardTrace, grad_output: np.ndarray) -> NetParams:
    """Exact reverse-mode gradients of sum(grad_output * output) w.r.t. params.

    grad_output is (B, n_actions, n_t), matching the forward output (for the
    single-observation forward, pass the (n_actions, n_t) array with a
    leading batch axis of 1).
    """
    if grad_output.ndim == 2:
        grad_output = grad_output[None, ...]
    b, n_t, hidden = trace.h2.shape
    if grad_output.shape[0] != b or grad_output.shape[2] != n_t:
        raise ValueError(f"grad_output shape {grad_output.shape} does not match trace "
                         f"batch {b} x taus {n_t}")
    g = np.swapaxes(grad_output, 1, 2)                # (B, n_t, A)
    rows = b * n_t

    h3f = trace.h3.reshape(rows, hidden)
    gf = g.reshape(rows, -1)
    d_w_out = h3f.T @ gf
    d_b_out = gf.sum(axis=0)

    g3 = (g @ params.w_out.T) * (trace.h3 > 0)
    g3f = g3.reshape(rows, hidden)
    d_w_h2 = trace.h2.reshape(rows, hidden).T @ g3f
    d_b_h2 = g3f.sum(axis=0)

    g2 = (g3 @ params.w_h2.T) * (trace.h2 > 0)
    g2f = g2.reshape(rows, hidden)
    d_w_h1 = trace.merged.reshape(rows, hidden).T @ g2f
    d_b_h1 = g2f.sum(axis=0)

    d_merged = g2 @ params.w_h1.T                     # (B, n_t, hidden)
    if trace.q_mode:
        d_w_tau = np.zeros_like(params.w_tau)
        d_b_tau = np.zeros_like(params.b_tau)
        d_h1 = d_merged.sum(axis=1)
    else:
        d_phi = d_merged * trace.h1[:, None, :]
        g_phi = d_phi * (trace.phi > 0)
        g_phif = g_phi.reshape(rows, hidden)
        d_w_tau = trace.embed.reshape(rows, -1).T @ g_phif
        d_b_tau = g_phif.sum(axis=0)
        d_h1 = (d_merged * trace.phi).sum(axis=1)

    g1 = d_h1 * (trace.h1 > 0)
    d_w_in = trace.obs.T @ g1
    d_b_in = g1.sum(axis=0)

    return NetParams(w_in=d_w_in, b_in=d_b_in, w_tau=d_w_tau, b_tau=d_b_tau,
                     w_h1=d_w_h1, b_h1=d_b_h1, w_h2=d_w_h2, b_h2=d_b_h2,
                     w_out=d_w_out, b_out=d_b_out)


@dataclass
class AdamState:
    m: NetParams
    v: NetParams
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, cfg: NetConfig, beta1: float = 0.9, beta2: float = 0.999,
             eps: float = 1e-8) -> "AdamState":
        return cls(m=NetParams.zeros(cfg), v=NetParams.zeros(cfg), t=0,
                   beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: NetParams, grads: NetParams, state: AdamState,
              lr: float) -> tuple[NetParams, AdamState]:
    """One bias-corrected Adam update. Raises on non-finite gradients,
    leaving params untouched."""
    if not grads.all_finite():
        raise NumericError("non-finite gradient passed to adam_step")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.as_list(), grads.as_list(),
                          state.m.as_list(), state.v.as_list()):
        m2 = b1 * m + (1.0 - b1) * g
        v2 = b2 * v + (1.0 - b2) * g * g
        update = lr * (m2 / corr1) / (np.sqrt(v2 / corr2) + state.eps)
        new_p.append(p - update)
        new_m.append(m2)
        new_v.append(v2)
    return (NetParams.from_list(new_p),
            replace(state, m=NetParams.from_list(new_m), v=NetParams.from_list(new_v), t=t))
