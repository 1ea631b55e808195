"""Command-line entry points: train, eval, rollout, dump-config."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import harness, sim_env
from .checkpoint import load_checkpoint
from .config import RunConfig, dump_config, load_config, parse_config_text
from .errors import CheckpointError, ConfigError, GenerationError, NumericError, ScenarioError
from .seeding import SeedTree


def _overrides(pairs: list[str] | None) -> dict[str, str]:
    out: dict[str, str] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _parse_agents(spec: str, rcfg: RunConfig) -> list[harness.PolicyMode]:
    modes: list[harness.PolicyMode] = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        if token == "art":
            modes.append(harness.adaptive_mode_from_config(rcfg))
        elif token == "dqn":
            modes.append(harness.DQNBaseline())
        elif token == "iqn":
            modes.append(harness.FixedCVaR(1.0))
        elif token.startswith("iqn:"):
            alpha = float(token.split(":", 1)[1])
            if not 0.0 < alpha <= 1.0:
                raise ConfigError(f"iqn CVaR level must be in (0, 1], got {alpha}")
            modes.append(harness.FixedCVaR(alpha))
        else:
            raise ConfigError(f"unknown agent {token!r} (expected dqn, art, iqn, or iqn:<alpha>)")
    if not modes:
        raise ConfigError("empty agent list")
    return modes


def _reconfigure(rcfg: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """Apply overrides to an existing config by round-tripping its dump."""
    if not overrides:
        return rcfg
    new_cfg = parse_config_text(dump_config(rcfg), overrides)
    for key in ("hidden", "n_cos", "m"):
        if getattr(new_cfg, key) != getattr(rcfg, key):
            raise ConfigError(f"cannot override {key}: it changes the network shape "
                              "baked into the checkpoint")
    return new_cfg


def cmd_train(args: argparse.Namespace) -> int:
    rcfg = load_config(args.config, _overrides(args.set))
    resume = load_checkpoint(args.resume) if args.resume else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train_config.txt").write_text(dump_config(rcfg), encoding="utf-8")
    result = harness.train(rcfg, args.seed, out_dir=out, resume=resume)
    print(f"trained {result.checkpoint.train.episode} episodes "
          f"({result.checkpoint.train.env_steps} env steps, "
          f"{result.checkpoint.train.grad_steps} gradient steps)")
    print(f"final checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    rcfg = _reconfigure(ckpt.config, _overrides(args.set))
    modes = _parse_agents(args.agents, rcfg)
    eval_seed = args.eval_seed if args.eval_seed is not None else ckpt.train.master_seed
    table = harness.evaluate(ckpt.online, modes, rcfg, eval_seed)
    config_sha = hashlib.sha256(dump_config(rcfg).encode()).hexdigest()[:16]
    header = f"# artiqn metrics v1; eval_seed={eval_seed}; config_sha256={config_sha}\n"
    text = header + table.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_rollout(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    rcfg = _reconfigure(ckpt.config, _overrides(args.set))
    mode = _parse_agents(args.mode, rcfg)[0]
    rt = harness.Runtime.from_config(rcfg)

    if args.scenario:
        scenario = sim_env.load_scenario(args.scenario)
        env = sim_env.world_from_scenario(scenario, rt.ecfg)
        source = {"scenario": args.scenario}
        tree = SeedTree(args.seed if args.seed is not None else ckpt.train.master_seed)
    elif args.seed is not None:
        tree = SeedTree(args.seed)
        ecfg = rcfg.env_config((args.n_obs, args.n_obs))
        env = sim_env.generate_environment(tree.stream("rollout-env"), ecfg)
        source = {"seed": args.seed, "n_obs": args.n_obs}
    else:
        raise ConfigError("rollout needs --scenario or --seed")

    result, _ = harness.run_episode(
        env, ckpt.online, mode, rt,
        noise_rng=tree.stream("rollout-noise"),
        tau_rng=tree.stream("rollout-tau"),
        collect_trajectory=True)

    lines = [json.dumps({
        "type": "header", "format": "artiqn-trace", "version": 1,
        "mode": args.mode, **source, "config": dump_config(rcfg),
    })]
    for rec in result.trajectory:
        lines.append(json.dumps({"type": "step", **rec}))
    lines.append(json.dumps({
        "type": "end", "outcome": result.outcome.value,
        "return": result.episode_return, "steps": result.steps,
        "nav_time": result.nav_time,
    }))
    text = "\n".join(lines) + "\n"
    if args.trace:
        Path(args.trace).write_text(text, encoding="utf-8", newline="\n")
        print(f"wrote {args.trace} ({result.outcome.value} in {result.steps} steps)")
    else:
        sys.stdout.write(text)
    return 0


def cmd_dump_config(args: argparse.Namespace) -> int:
    rcfg = load_config(args.config, _overrides(args.set))
    text = dump_config(rcfg)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artiqn",
                                     description="Risk-adaptive distributional RL for 2D lidar navigation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an agent")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="paired evaluation over the fixed seed suites")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--agents", required=True,
                   help="comma list: dqn, art, iqn, iqn:<alpha>")
    p.add_argument("--out", default=None, help="metrics CSV path (stdout if omitted)")
    p.add_argument("--eval-seed", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="single-episode trajectory trace")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", required=True, help="dqn, art, iqn, or iqn:<alpha>")
    p.add_argument("--seed", type=int, default=None, help="environment seed")
    p.add_argument("--n-obs", type=int, default=6, dest="n_obs")
    p.add_argument("--scenario", default=None, help="fixed scenario JSON file")
    p.add_argument("--trace", default=None, help="trace JSON-lines path (stdout if omitted)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("dump-config", help="print the effective configuration")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_dump_config)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError, CheckpointError, GenerationError,
            NumericError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        out = getattr(args, "out", None)
        hint = f"; partial state may remain under {out}" if out else ""
        print(f"error: {exc}{hint}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
