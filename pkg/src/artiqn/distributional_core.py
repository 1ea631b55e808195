"""Quantile-regression TD learning: replay buffer, losses, target sync.

The IQN loss follows the sampled double-sum form: fresh tau ~ U[0,1) draws
on both the online and target sides, an asymmetric Huber penalty per
(tau_i, tau_j') pair, averaged over the grid and the batch. The DQN
baseline shares the network trunk through the scalar-Q forward mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from . import quantile_net as qn
from .quantile_net import NetParams


@dataclass
class LearnerConfig:
    gamma: float = 0.99
    N: int = 16          # online tau samples per transition
    N_prime: int = 16    # target tau samples per transition
    K: int = 64          # tau samples for action selection
    B: int = 32          # batch size
    kappa: float = 1.0   # Huber threshold
    lr: float = 2e-4
    D: int = 5           # episodes per update round
    target_sync_rounds: int = 8


@dataclass(frozen=True)
class Transition:
    o: np.ndarray        # normalized observation vector
    a: int
    r: float
    o2: np.ndarray       # normalized next observation vector
    done: bool           # true only for goal/collision, never timeout


@dataclass
class Batch:
    obs: np.ndarray      # (B, obs_dim)
    actions: np.ndarray  # (B,) int
    rewards: np.ndarray  # (B,)
    next_obs: np.ndarray
    dones: np.ndarray    # (B,) bool

    @classmethod
    def from_transitions(cls, transitions: list[Transition]) -> "Batch":
        return cls(
            obs=np.stack([t.o for t in transitions]),
            actions=np.array([t.a for t in transitions], dtype=int),
            rewards=np.array([t.r for t in transitions], dtype=float),
            next_obs=np.stack([t.o2 for t in transitions]),
            dones=np.array([t.done for t in transitions], dtype=bool),
        )

    def __len__(self) -> int:
        return len(self.actions)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self._obs = np.zeros((capacity, obs_dim))
        self._actions = np.zeros(capacity, dtype=int)
        self._rewards = np.zeros(capacity)
        self._next_obs = np.zeros((capacity, obs_dim))
        self._dones = np.zeros(capacity, dtype=bool)
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, t: Transition) -> None:
        i = self._cursor
        self._obs[i] = t.o
        self._actions[i] = t.a
        self._rewards[i] = t.r
        self._next_obs[i] = t.o2
        self._dones[i] = t.done
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample_uniform(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform without-replacement draw of batch_size transitions."""
        if batch_size > self._size:
            raise ValueError(f"cannot sample {batch_size} from buffer of size {self._size}")
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return Batch(obs=self._obs[idx].copy(), actions=self._actions[idx].copy(),
                     rewards=self._rewards[idx].copy(), next_obs=self._next_obs[idx].copy(),
                     dones=self._dones[idx].copy())


@dataclass
class LossReport:
    loss: float
    grad_norm: float
    td_abs_mean: float
    td_abs_max: float


def quantile_huber(delta, tau, kappa):
    """Asymmetric Huber penalty rho_kappa(delta; tau). Works elementwise."""
    delta = np.asarray(delta, dtype=float)
    abs_d = np.abs(delta)
    huber = np.where(abs_d <= kappa, 0.5 * delta * delta, kappa * (abs_d - 0.5 * kappa))
    weight = np.abs(tau - (delta < 0.0))
    return weight * huber / kappa


def _huber_slope(delta: np.ndarray, kappa: float) -> np.ndarray:
    return np.clip(delta, -kappa, kappa)


def _quantile_huber_slope(delta: np.ndarray, tau: np.ndarray, kappa: float) -> np.ndarray:
    # d rho / d delta
    return np.abs(tau - (delta < 0.0)) * _huber_slope(delta, kappa) / kappa


def _batched_td_deltas(online: NetParams, target: NetParams, batch: Batch,
                       taus: np.ndarray, taus_p: np.ndarray, gamma: float
                       ) -> tuple[np.ndarray, np.ndarray, qn.ForwardTrace]:
    """TD error grid per transition.

    Returns deltas (B, N, N'), the online quantile values at the taken
    actions (B, N), and the online forward trace. The bootstrap action is
    the risk-neutral greedy choice under the target network.
    """
    b = len(batch)
    z_target, _ = qn.forward_batch(target, batch.next_obs, taus_p)   # (B, A, N')
    a_next = np.argmax(z_target.mean(axis=2), axis=1)
    z_next = z_target[np.arange(b), a_next]                          # (B, N')
    not_done = ~batch.dones
    y = batch.rewards[:, None] + gamma * not_done[:, None] * z_next  # (B, N')

    z_online, trace = qn.forward_batch(online, batch.obs, taus)      # (B, A, N)
    z_a = z_online[np.arange(b), batch.actions]                      # (B, N)
    deltas = y[:, None, :] - z_a[:, :, None]                         # (B, N, N')
    return deltas, z_a, trace


def td_deltas(online: NetParams, target: NetParams, t: Transition,
              taus: np.ndarray, taus_p: np.ndarray, gamma: float) -> np.ndarray:
    """TD error matrix (N, N') for a single transition."""
    batch = Batch.from_transitions([t])
    deltas, _, _ = _batched_td_deltas(online, target, batch,
                                      np.asarray(taus, dtype=float)[None, :],
                                      np.asarray(taus_p, dtype=float)[None, :], gamma)
    return deltas[0]


def iqn_loss_and_grad(online: NetParams, target: NetParams, batch: Batch,
                      cfg: LearnerConfig, rng: np.random.Generator
                      ) -> tuple[LossReport, NetParams]:
    """Sampled quantile-regression loss and its exact parameter gradients."""
    b = len(batch)
    if b == 0:
        raise ValueError("empty batch")
    taus = rng.random((b, cfg.N))
    taus_p = rng.random((b, cfg.N_prime))
    deltas, _, trace = _batched_td_deltas(online, target, batch, taus, taus_p, cfg.gamma)

    rho = quantile_huber(deltas, taus[:, :, None], cfg.kappa)
    loss = float(rho.sum() / (b * cfg.N * cfg.N_prime))
    if not np.isfinite(loss):
        raise NumericError(f"non-finite quantile loss: {loss} "
                           f"(max |delta| = {np.max(np.abs(deltas))})")

    # dL/dZ(o, a; tau_i) = -(1/(B N N')) sum_j drho/ddelta
    slope = _quantile_huber_slope(deltas, taus[:, :, None], cfg.kappa)
    d_z_a = -slope.sum(axis=2) / (b * cfg.N * cfg.N_prime)           # (B, N)
    grad_out = np.zeros((b, online.b_out.shape[0], cfg.N))
    grad_out[np.arange(b), batch.actions] = d_z_a
    grads = qn.backward(online, trace, grad_out)

    abs_d = np.abs(deltas)
    report = LossReport(loss=loss, grad_norm=_global_norm(grads),
                        td_abs_mean=float(abs_d.mean()), td_abs_max=float(abs_d.max()))
    return report, grads


def dqn_loss_and_grad(online: NetParams, target: NetParams, batch: Batch,
                      cfg: LearnerConfig, rng: np.random.Generator
                      ) -> tuple[LossReport, NetParams]:
    """Scalar Huber TD loss through the tau-bypassed Q head."""
    b = len(batch)
    if b == 0:
        raise ValueError("empty batch")
    q_target, _ = qn.forward_q(target, batch.next_obs)               # (B, A)
    y = batch.rewards + cfg.gamma * (~batch.dones) * q_target.max(axis=1)
    q_online, trace = qn.forward_q(online, batch.obs)
    q_a = q_online[np.arange(b), batch.actions]
    deltas = y - q_a

    abs_d = np.abs(deltas)
    huber = np.where(abs_d <= cfg.kappa, 0.5 * deltas * deltas,
                     cfg.kappa * (abs_d - 0.5 * cfg.kappa))
    loss = float(huber.mean())
    if not np.isfinite(loss):
        raise NumericError(f"non-finite DQN loss: {loss}")

    d_q_a = -_huber_slope(deltas, cfg.kappa) / b
    grad_out = np.zeros((b, online.b_out.shape[0], 1))
    grad_out[np.arange(b), batch.actions, 0] = d_q_a
    grads = qn.backward(online, trace, grad_out)
    report = LossReport(loss=loss, grad_norm=_global_norm(grads),
                        td_abs_mean=float(abs_d.mean()), td_abs_max=float(abs_d.max()))
    return report, grads


def sync_target(online: NetParams) -> NetParams:
    """Hard copy of the online parameters; later updates leave it untouched."""
    return online.copy()


def _global_norm(grads: NetParams) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.as_list())))
