"""Rollout driver, curriculum training loop, and the paired evaluation
protocol.

Training samples a fresh CVaR level per episode (U(0, 1]), runs stage 1
(few obstacles) until the rolling success rate clears the threshold, then
moves to stage 2. Every D episodes one update round runs a number of
gradient steps proportional to the environment steps collected since the
previous round. Evaluation rolls every policy over the identical
seed-indexed environment set so differences are attributable to the
policy alone.
"""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import distributional_core as dc
from . import quantile_net as qn
from . import risk as risk_mod
from . import sim_env
from .checkpoint import Checkpoint, TrainSummary, save_checkpoint
from .config import RunConfig, dump_config
from .errors import NumericError, ShapeMismatchError
from .quantile_net import NetParams
from .seeding import SeedTree
from .sim_env import Termination, WorldState

log = logging.getLogger("artiqn.harness")


# ---------------------------------------------------------------------------
# Policy modes

@dataclass(frozen=True)
class FixedCVaR:
    alpha: float


@dataclass(frozen=True)
class Adaptive:
    w1: float = 3.0
    w2: float = -3.0
    b: float = 9.0
    eta: float = 0.5


@dataclass(frozen=True)
class DQNBaseline:
    pass


PolicyMode = FixedCVaR | Adaptive | DQNBaseline


def mode_label(mode: PolicyMode) -> tuple[str, float | None]:
    if isinstance(mode, FixedCVaR):
        return "iqn", mode.alpha
    if isinstance(mode, Adaptive):
        return "art", None
    return "dqn", None


def adaptive_mode_from_config(rcfg: RunConfig) -> Adaptive:
    return Adaptive(w1=rcfg.w1_init, w2=rcfg.w2_init, b=rcfg.b, eta=rcfg.eta)


# ---------------------------------------------------------------------------
# Episodes

@dataclass
class EpisodeResult:
    episode_return: float
    outcome: Termination
    steps: int
    nav_time: float
    trajectory: list[dict] = field(default_factory=list)


@dataclass
class Runtime:
    """Precomputed per-run pieces shared by every episode."""

    rcfg: RunConfig
    ecfg: sim_env.EnvConfig
    ncfg: qn.NetConfig
    actions: list[sim_env.Action]

    @classmethod
    def from_config(cls, rcfg: RunConfig) -> "Runtime":
        ecfg = rcfg.env_config()
        return cls(rcfg=rcfg, ecfg=ecfg, ncfg=rcfg.net_config(),
                   actions=sim_env.action_set(ecfg))


def run_episode(env: WorldState, params: NetParams, mode: PolicyMode, rt: Runtime,
                noise_rng: np.random.Generator, tau_rng: np.random.Generator,
                explore_rng: np.random.Generator | None = None, epsilon: float = 0.0,
                record_transitions: bool = False, collect_trajectory: bool = False
                ) -> tuple[EpisodeResult, list[dc.Transition]]:
    """Roll one episode to termination.

    The adaptive mode runs the forecaster inline: select with the current
    CVaR, measure RTV at the executed action, update the logits, and carry
    the new CVaR into the next step. Observations are drawn once per
    visited state so the stored next-observation is exactly what the
    policy sees on the following step.
    """
    rcfg, ecfg, ncfg = rt.rcfg, rt.ecfg, rt.ncfg
    risk_state = (risk_mod.initial_risk_state(mode.w1, mode.w2, mode.b, mode.eta)
                  if isinstance(mode, Adaptive) else None)
    state = env
    obs = sim_env.observe(state, noise_rng, ecfg)
    total = 0.0
    transitions: list[dc.Transition] = []
    trajectory: list[dict] = []

    while state.terminated is Termination.NONE:
        ovec = qn.normalize_obs(obs, ncfg)
        if isinstance(mode, DQNBaseline):
            qvals, _ = qn.forward_q(params, ovec[None, :])
            a = int(np.argmax(qvals[0]))
            alpha_logged = None
        else:
            alpha = risk_state.alpha if risk_state is not None else mode.alpha
            a, _ = risk_mod.select_action(params, ovec, alpha, rcfg.K, tau_rng)
            alpha_logged = alpha
        if explore_rng is not None and explore_rng.random() < epsilon:
            a = int(explore_rng.integers(len(rt.actions)))

        rtv_val = f_val = None
        if risk_state is not None:
            rtv_val = risk_mod.rtv(params, ovec, a, rcfg.N)
            f_val = 0.0 if risk_state.prev_rtv is None else rtv_val - risk_state.prev_rtv
            risk_state = risk_mod.ewaf_update(risk_state, rtv_val)
            alpha_logged = risk_state.alpha

        action = rt.actions[a]
        new_state, reward, term = sim_env.step(state, action, ecfg)
        new_obs = sim_env.observe(new_state, noise_rng, ecfg)
        total += reward

        if record_transitions:
            done = term in (Termination.GOAL, Termination.COLLISION)
            transitions.append(dc.Transition(o=ovec, a=a, r=reward,
                                             o2=qn.normalize_obs(new_obs, ncfg), done=done))
        if collect_trajectory:
            trajectory.append({
                "t": state.step_count,
                "p": [float(state.drone_pos[0]), float(state.drone_pos[1])],
                "action_index": a,
                "velocity": [float(action.velocity[0]), float(action.velocity[1])],
                "reward": reward,
                "d_g": obs.d_g,
                "d_l": [float(x) for x in obs.d_l],
                "alpha": alpha_logged,
                "rtv": rtv_val,
                "f": f_val,
            })
        state, obs = new_state, new_obs

    result = EpisodeResult(episode_return=total, outcome=state.terminated,
                           steps=state.step_count, nav_time=state.step_count * ecfg.T,
                           trajectory=trajectory)
    return result, transitions


# ---------------------------------------------------------------------------
# Training

@dataclass
class TrainState:
    master_seed: int
    episode: int = 0
    stage: int = 1
    env_steps: int = 0
    update_rounds: int = 0
    grad_steps: int = 0
    epsilon: float = 1.0

    def summary(self) -> TrainSummary:
        return TrainSummary(master_seed=self.master_seed, episode=self.episode,
                            stage=self.stage, env_steps=self.env_steps,
                            update_rounds=self.update_rounds, grad_steps=self.grad_steps,
                            epsilon=self.epsilon)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    records: list[dict]
    checkpoint_path: Path | None
    log_path: Path | None


def _epsilon_at(rcfg: RunConfig, env_steps: int) -> float:
    frac = min(1.0, env_steps / rcfg.eps_decay_steps)
    return rcfg.eps_start - (rcfg.eps_start - rcfg.eps_end) * frac


def train(rcfg: RunConfig, master_seed: int, out_dir: str | Path | None = None,
          resume: Checkpoint | None = None) -> TrainResult:
    """Run the curriculum training loop to convergence or the episode cap.

    Writes periodic and final checkpoints plus a per-episode JSON-lines log
    when out_dir is given. Deterministic: the entire run is a function of
    (rcfg, master_seed).
    """
    rcfg.validate()
    rt = Runtime.from_config(rcfg)
    tree = SeedTree(master_seed)
    loss_fn = dc.dqn_loss_and_grad if rcfg.algo == "dqn" else dc.iqn_loss_and_grad
    lcfg = rcfg.learner_config()

    if resume is not None:
        expected = NetParams.shapes(rcfg.net_config())
        if [a.shape for a in resume.online.as_list()] != expected:
            raise ShapeMismatchError("resume checkpoint does not match the network "
                                     "shape of this configuration")
        online = resume.online.copy()
        target = resume.target.copy()
        adam = resume.adam
        ts = TrainState(master_seed=master_seed, episode=resume.train.episode,
                        stage=resume.train.stage, env_steps=resume.train.env_steps,
                        update_rounds=resume.train.update_rounds,
                        grad_steps=resume.train.grad_steps, epsilon=resume.train.epsilon)
    else:
        online = qn.init_params(tree.stream("init"), rt.ncfg)
        target = dc.sync_target(online)
        adam = qn.AdamState.init(rt.ncfg)
        ts = TrainState(master_seed=master_seed)

    out_path = Path(out_dir) if out_dir is not None else None
    log_fh = None
    log_path = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_path = out_path / "train_log.jsonl"
        log_fh = open(log_path, "a", encoding="utf-8", newline="\n")
        log_fh.write(json.dumps({
            "type": "header", "format": "artiqn-train-log", "version": 1,
            "master_seed": master_seed, "algo": rcfg.algo,
            "resumed_from_episode": ts.episode if resume is not None else None,
            "config": dump_config(rcfg),
        }) + "\n")
        log_fh.flush()

    buffer = dc.ReplayBuffer(rcfg.E, obs_dim=rt.ncfg.obs_dim)
    success_window: deque[int] = deque(maxlen=rcfg.success_window)
    returns: list[float] = []
    records: list[dict] = []
    steps_since_round = 0
    prev_window_mean: float | None = None
    last_checkpoint_path: Path | None = None
    stage_ecfgs = {
        1: rcfg.env_config((rcfg.stage1_n_obs_min, rcfg.stage1_n_obs_max)),
        2: rcfg.env_config((rcfg.stage2_n_obs_min, rcfg.stage2_n_obs_max)),
    }

    def write_checkpoint(name: str) -> Path:
        ckpt = Checkpoint(config=rcfg, online=online, target=target, adam=adam,
                          train=ts.summary())
        path = out_path / name
        save_checkpoint(str(path), ckpt)
        return path

    def emit(record: dict) -> None:
        records.append(record)
        if log_fh is not None:
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()

    try:
        while ts.episode < rcfg.episode_cap:
            ts.episode += 1
            ep = ts.episode
            ts.epsilon = _epsilon_at(rcfg, ts.env_steps)

            env = sim_env.generate_environment(tree.stream("env-gen", ep), stage_ecfgs[ts.stage])
            if rcfg.algo == "dqn":
                mode: PolicyMode = DQNBaseline()
                alpha_ep = None
            else:
                alpha_ep = 1.0 - float(tree.stream("alpha", ep).random())  # U(0, 1]
                mode = FixedCVaR(alpha_ep)

            result, transitions = run_episode(
                env, online, mode, rt,
                noise_rng=tree.stream("laser-noise", ep),
                tau_rng=tree.stream("tau-policy", ep),
                explore_rng=tree.stream("exploration", ep),
                epsilon=ts.epsilon, record_transitions=True)
            for t in transitions:
                buffer.push(t)
            ts.env_steps += result.steps
            steps_since_round += result.steps
            success_window.append(1 if result.outcome is Termination.GOAL else 0)
            returns.append(result.episode_return)

            record = {
                "episode": ep, "stage": ts.stage,
                "alpha": alpha_ep, "return": result.episode_return,
                "outcome": result.outcome.value, "steps": result.steps,
                "epsilon": ts.epsilon, "env_steps": ts.env_steps,
            }

            # Curriculum stage transition, at most once.
            if (ts.stage == 1 and rcfg.stage2_enabled
                    and len(success_window) == rcfg.success_window
                    and sum(success_window) / len(success_window) >= rcfg.success_threshold):
                ts.stage = 2
                record["stage_transition"] = True
                log.info("episode %d: curriculum stage 2 (rolling success %.2f)",
                         ep, sum(success_window) / len(success_window))

            # Update round every D episodes.
            if ep % rcfg.D == 0 and len(buffer) >= rcfg.B:
                n_grad = max(1, int(round(rcfg.grad_steps_per_env_step * steps_since_round)))
                batch_rng = tree.stream("replay", ep)
                tau_rng = tree.stream("tau-loss", ep)
                losses = []
                grad_norm = 0.0
                for _ in range(n_grad):
                    batch = buffer.sample_uniform(rcfg.B, batch_rng)
                    report, grads = loss_fn(online, target, batch, lcfg, tau_rng)
                    online, adam = qn.adam_step(online, grads, adam, rcfg.lr)
                    losses.append(report.loss)
                    grad_norm = report.grad_norm
                ts.grad_steps += n_grad
                ts.update_rounds += 1
                steps_since_round = 0
                if ts.update_rounds % rcfg.target_sync_rounds == 0:
                    target = dc.sync_target(online)
                record["loss_mean"] = float(np.mean(losses))
                record["loss_last"] = losses[-1]
                record["grad_norm"] = grad_norm
                record["grad_steps"] = ts.grad_steps

            emit(record)

            if out_path is not None and ep % rcfg.checkpoint_every == 0:
                last_checkpoint_path = write_checkpoint(f"checkpoint_ep{ep:06d}.bin")

            # Convergence: stop when the rolling window mean stops improving.
            w = rcfg.convergence_window
            if (ep >= rcfg.convergence_min_episodes and ep % w == 0 and len(returns) >= 2 * w):
                window_mean = float(np.mean(returns[-w:]))
                if prev_window_mean is not None:
                    gain = window_mean - prev_window_mean
                    if gain < rcfg.convergence_threshold * max(abs(prev_window_mean), 1.0):
                        log.info("episode %d: return converged (%.3f -> %.3f), stopping",
                                 ep, prev_window_mean, window_mean)
                        break
                prev_window_mean = window_mean
    except NumericError as exc:
        if log_fh is not None:
            log_fh.close()
        where = f"; last good checkpoint: {last_checkpoint_path}" if last_checkpoint_path else ""
        raise NumericError(f"training diverged at episode {ts.episode}: {exc}{where}") from exc

    final = Checkpoint(config=rcfg, online=online, target=target, adam=adam,
                       train=ts.summary())
    final_path = None
    if out_path is not None:
        final_path = write_checkpoint("checkpoint_final.bin")
    if log_fh is not None:
        log_fh.close()
    return TrainResult(checkpoint=final, records=records,
                       checkpoint_path=final_path, log_path=log_path)


# ---------------------------------------------------------------------------
# Evaluation

@dataclass
class MetricsRow:
    agent: str
    cvar: float | None
    n_obs: int
    return_mean: float
    return_std: float
    success_rate: float
    collision_rate: float
    timeout_rate: float
    nav_time_mean: float


@dataclass
class MetricsTable:
    rows: list[MetricsRow]

    def to_csv(self) -> str:
        header = ("agent,cvar,n_obs,return_mean,return_std,success_rate,"
                  "collision_rate,timeout_rate,nav_time_mean")
        lines = [header]
        for r in self.rows:
            cvar = "-" if r.cvar is None else repr(r.cvar)
            lines.append(",".join([
                r.agent, cvar, str(r.n_obs), repr(r.return_mean), repr(r.return_std),
                repr(r.success_rate), repr(r.collision_rate), repr(r.timeout_rate),
                repr(r.nav_time_mean),
            ]))
        return "\n".join(lines) + "\n"


def evaluate(params: NetParams, modes: list[PolicyMode], rcfg: RunConfig,
             eval_seed: int) -> MetricsTable:
    """Table of outcome statistics per (mode, obstacle count).

    Every mode sees the identical seed-indexed environments and noise
    streams; exploration is off, laser noise stays on. Navigation time
    averages over successful episodes only.
    """
    rt = Runtime.from_config(rcfg)
    tree = SeedTree(eval_seed)
    rows = []
    for n_obs in rcfg.eval_n_obs:
        ecfg = rcfg.env_config((n_obs, n_obs))
        envs = [sim_env.generate_environment(tree.stream("eval-env", n_obs, i), ecfg)
                for i in range(rcfg.eval_episodes)]
        for mode in modes:
            outcomes = {Termination.GOAL: 0, Termination.COLLISION: 0, Termination.TIMEOUT: 0}
            ep_returns = []
            nav_times = []
            for i, env in enumerate(envs):
                result, _ = run_episode(
                    env, params, mode, rt,
                    noise_rng=tree.stream("eval-noise", n_obs, i),
                    tau_rng=tree.stream("eval-tau", n_obs, i))
                outcomes[result.outcome] += 1
                ep_returns.append(result.episode_return)
                if result.outcome is Termination.GOAL:
                    nav_times.append(result.nav_time)
            n = len(envs)
            agent, cvar = mode_label(mode)
            rows.append(MetricsRow(
                agent=agent, cvar=cvar, n_obs=n_obs,
                return_mean=float(np.mean(ep_returns)),
                return_std=float(np.std(ep_returns)),
                success_rate=outcomes[Termination.GOAL] / n,
                collision_rate=outcomes[Termination.COLLISION] / n,
                timeout_rate=outcomes[Termination.TIMEOUT] / n,
                nav_time_mean=float(np.mean(nav_times)) if nav_times else math.nan,
            ))
    return MetricsTable(rows=rows)
