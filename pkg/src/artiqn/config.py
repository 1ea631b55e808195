"""Run configuration: one flat namespace covering the published
hyperparameter symbols plus artifact-level settings.

The on-disk format is plain `key = value` text, one key per line, `#`
comments allowed. Precedence is CLI override > config file > built-in
default, and the effective config is embedded verbatim in checkpoints and
output headers.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

from .errors import ConfigError
from .distributional_core import LearnerConfig
from .quantile_net import NetConfig
from .sim_env import EnvConfig

log = logging.getLogger("artiqn.config")


@dataclass
class RunConfig:
    # Published hyperparameters, by symbol.
    lr: float = 2e-4
    E: int = 50_000
    gamma: float = 0.99
    T: float = 0.1
    v_m: float = 1.0
    r_d: float = 0.05
    d_f: float = 0.1
    d_s: float = 0.2
    D: int = 5
    K: int = 64
    B: int = 32
    H: int = 200
    N: int = 16
    N_prime: int = 16
    m: int = 3
    b: float = 9.0
    eta: float = 0.5

    # Network / loss.
    algo: str = "iqn"            # "iqn" or "dqn"
    hidden: int = 512
    n_cos: int = 64
    kappa: float = 1.0

    # World.
    laser_max_range: float = 4.0
    noise_mu: float = 0.0
    noise_sigma: float = 0.01
    d_g_min: float = 5.0
    d_g_max: float = 7.0
    arena_side: float = 10.0
    start_x: float = 1.5
    start_y: float = 5.0
    include_walls: bool = True
    clearance: float = 0.5
    obs_size_min: float = 0.2
    obs_size_max: float = 1.0

    # Curriculum.
    stage1_n_obs_min: int = 0
    stage1_n_obs_max: int = 5
    stage2_n_obs_min: int = 6
    stage2_n_obs_max: int = 12
    stage2_enabled: bool = True
    success_window: int = 100
    success_threshold: float = 0.8

    # Exploration and optimization cadence.
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 30_000
    grad_steps_per_env_step: float = 1.0
    target_sync_rounds: int = 8

    # Stopping and persistence.
    episode_cap: int = 30_000
    convergence_window: int = 500
    convergence_threshold: float = 0.01
    convergence_min_episodes: int = 2_000
    checkpoint_every: int = 1_000

    # Risk adaptation initial logits.
    w1_init: float = 3.0
    w2_init: float = -3.0

    # Evaluation protocol.
    eval_episodes: int = 100
    eval_n_obs: tuple[int, ...] = (2, 6, 12)

    @property
    def n_actions(self) -> int:
        return 4 * self.m

    def env_config(self, n_obs_range: tuple[int, int] | None = None) -> EnvConfig:
        if n_obs_range is None:
            n_obs_range = (self.stage1_n_obs_min, self.stage1_n_obs_max)
        return EnvConfig(
            T=self.T, v_m=self.v_m, m=self.m, r_d=self.r_d, d_f=self.d_f,
            d_s=self.d_s, H=self.H, laser_max_range=self.laser_max_range,
            noise_mu=self.noise_mu, noise_sigma=self.noise_sigma,
            d_g_range=(self.d_g_min, self.d_g_max), n_obs_range=n_obs_range,
            arena_side=self.arena_side, start=(self.start_x, self.start_y),
            include_walls=self.include_walls, clearance=self.clearance,
            obs_size_range=(self.obs_size_min, self.obs_size_max),
        )

    def net_config(self) -> NetConfig:
        return NetConfig(obs_dim=7, n_actions=self.n_actions, n_cos=self.n_cos,
                         hidden=self.hidden, pos_scale=self.arena_side,
                         dist_scale=self.arena_side, laser_scale=self.laser_max_range)

    def learner_config(self) -> LearnerConfig:
        return LearnerConfig(gamma=self.gamma, N=self.N, N_prime=self.N_prime,
                             K=self.K, B=self.B, kappa=self.kappa, lr=self.lr,
                             D=self.D, target_sync_rounds=self.target_sync_rounds)

    def validate(self) -> None:
        problems = []
        if self.algo not in ("iqn", "dqn"):
            problems.append(f"algo must be 'iqn' or 'dqn', got {self.algo!r}")
        for key in ("lr", "T", "v_m", "kappa", "eta"):
            if getattr(self, key) <= 0:
                problems.append(f"{key} must be positive")
        for key in ("E", "D", "K", "B", "H", "N", "N_prime", "m", "hidden", "n_cos",
                    "success_window", "convergence_window", "episode_cap",
                    "eval_episodes"):
            if getattr(self, key) < 1:
                problems.append(f"{key} must be >= 1")
        if not 0 < self.gamma < 1:
            problems.append("gamma must lie in (0, 1)")
        if self.N % 2 != 0:
            problems.append("N must be even (RTV uses the median grid point)")
        if not (self.r_d < self.d_s < self.laser_max_range):
            problems.append("need r_d < d_s < laser_max_range")
        if self.b <= 0:
            problems.append("b must be positive")
        if self.d_g_min > self.d_g_max:
            problems.append("d_g_min must not exceed d_g_max")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            problems.append("need 0 <= eps_end <= eps_start <= 1")
        if problems:
            raise ConfigError("invalid configuration: " + "; ".join(problems))


def _parse_value(key: str, raw: str, default) -> object:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(part) for part in raw.split(",") if part.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a RunConfig from key=value text plus optional string overrides.

    Unknown keys are an error (all offenders listed); missing keys fall
    back to the defaults and are logged.
    """
    defaults = RunConfig()
    valid = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(RunConfig)}
    values: dict[str, object] = {}
    unknown: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in valid:
            unknown.append(key)
            continue
        values[key] = _parse_value(key, raw, valid[key])
    if overrides:
        for key, raw in overrides.items():
            if key not in valid:
                unknown.append(key)
                continue
            values[key] = _parse_value(key, raw, valid[key])
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(sorted(set(unknown))))
    for key in valid:
        if key not in values:
            log.info("config: %s not set, using default %r", key, valid[key])
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def load_config(path: str | None, overrides: dict[str, str] | None = None) -> RunConfig:
    if path is None:
        return parse_config_text("", overrides)
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), overrides)


def dump_config(cfg: RunConfig) -> str:
    """Render the full effective config as key = value lines."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            rendered = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        else:
            rendered = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"
