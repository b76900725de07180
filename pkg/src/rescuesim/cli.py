"""Command-line harness: train, eval, serve, replay.

Exit codes: 0 success, 1 validation error, 2 runtime or divergence error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import socket
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .config import ConfigError, ScenarioConfig, TrainConfig, load_scenario, load_train_config
from .env import RescueEnv
from .marl import TrainingError, evaluate, train
from .marl.models import Hyper, make_model
from .marl.training import run_episode
from .nnet import NetError, load_checkpoint, save_checkpoint
from .trace import TraceError, TraceWriter, write_summary

log = logging.getLogger("rescuesim")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
REWARDS_HEADER = ["episode", "strategy", "return", "mean_loss", "epsilon"]


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_INVALID):
        super().__init__(msg)
        self.code = code


def _scenario(path: str, seed: int | None) -> ScenarioConfig:
    try:
        sc = load_scenario(path)
    except (ConfigError, ValidationError) as exc:
        raise CliError(f"invalid scenario {path}: {exc}") from None
    if seed is not None:
        sc = ScenarioConfig.model_validate({**sc.dump(), "seeds": [seed]})
    return sc


def _manifest(env: RescueEnv, strategy: str, cfg: TrainConfig) -> dict:
    return {
        "strategy": strategy,
        "state_dim": env.state_dim,
        "agents": [{"agent_id": a.agent_id, "kind": a.kind, "obs_dim": a.obs_dim,
                    "action_count": a.action_count} for a in env.agents],
        "hyper": {"hidden": cfg.hidden, "mixer_embed": cfg.mixer_embed},
    }


def write_rewards(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REWARDS_HEADER)
        for r in rows:
            w.writerow([r["episode"], r["strategy"], repr(float(r["return"])),
                        repr(float(r["mean_loss"])), repr(float(r["epsilon"]))])


def cmd_train(args) -> int:
    sc = _scenario(args.scenario, args.seed)
    try:
        cfg = load_train_config(args.train_config)
    except (ConfigError, ValidationError) as exc:
        raise CliError(f"invalid train config {args.train_config}: {exc}") from None
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    out = Path(args.out or cfg.out_dir or "runs")
    out.mkdir(parents=True, exist_ok=True)

    def progress(row):
        if (row["episode"] + 1) % 100 == 0:
            log.info("episode %d return %.2f eps %.3f", row["episode"] + 1, row["return"],
                     row["epsilon"])

    try:
        model, tlog = train(sc, cfg, on_episode=progress)
    except TrainingError as exc:
        raise CliError(str(exc), EXIT_RUNTIME) from None
    rewards = out / f"rewards_{cfg.strategy}.csv"
    write_rewards(rewards, tlog.rows)
    env = RescueEnv(sc)
    save_checkpoint(out / f"checkpoint_{cfg.strategy}.npz", model.nets(),
                    _manifest(env, cfg.strategy, cfg))
    print(f"wrote {rewards} ({len(tlog.rows)} episodes)")
    return EXIT_OK


def load_model(env: RescueEnv, path: str):
    try:
        nets, manifest = load_checkpoint(path)
    except (OSError, NetError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read checkpoint {path}: {exc}") from None
    expected = [{"agent_id": a.agent_id, "kind": a.kind, "obs_dim": a.obs_dim,
                 "action_count": a.action_count} for a in env.agents]
    if manifest.get("agents") != expected or manifest.get("state_dim") != env.state_dim:
        raise CliError("checkpoint agent specs do not match the scenario")
    hyper = manifest.get("hyper", {})
    hp = Hyper(hidden=hyper.get("hidden", 64), mixer_embed=hyper.get("mixer_embed", 32))
    model = make_model(manifest["strategy"], env.agents, env.state_dim, hp,
                       np.random.default_rng(0))
    try:
        model.load_nets(nets)
    except (NetError, ValueError) as exc:
        raise CliError(f"checkpoint does not fit the model: {exc}") from None
    return model


def cmd_eval(args) -> int:
    sc = _scenario(args.scenario, args.seed)
    env = RescueEnv(sc)
    model = load_model(env, args.checkpoint)
    if args.trace:
        with open(args.trace, "w") as fh:
            sink = TraceWriter(fh)
            rng = np.random.default_rng(0)
            for k in range(args.episodes):
                run_episode(env, model, 0.0, rng, seed=sc.seeds[k % len(sc.seeds)],
                            trace_sink=sink, record=False)
    summary = evaluate(env, model, args.episodes).as_dict()
    text = json.dumps(summary, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _port_free(host: str, port: int) -> bool:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            s.bind((host, port))
        except OSError:
            return False
    return True


def cmd_serve(args) -> int:
    sc = _scenario(args.scenario, args.seed)
    if not _port_free(args.host, args.port):
        raise CliError(f"port {args.port} on {args.host} is already in use", EXIT_RUNTIME)
    import uvicorn

    from .service import create_app

    app = create_app(sc, max_sessions=args.max_sessions)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def cmd_replay(args) -> int:
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        write_summary(args.trace, out)
    except TraceError as exc:
        raise CliError(f"{args.trace}: {exc}") from None
    except OSError as exc:
        raise CliError(str(exc)) from None
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rescuesim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train qmix or iql and write a rewards table")
    t.add_argument("--scenario", required=True)
    t.add_argument("--train-config", required=True)
    t.add_argument("--out")
    t.add_argument("--seed", type=int, help="overrides the scenario seed list and learner seed")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy rollouts of a checkpoint")
    e.add_argument("--scenario", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--out")
    e.add_argument("--trace", help="write per-tick JSONL traces of the rollouts")
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("serve", help="run the HTTP environment server")
    s.add_argument("--scenario", required=True)
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--max-sessions", type=int, default=16)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_serve)

    r = sub.add_parser("replay", help="per-tick CSV summary of a trace")
    r.add_argument("--trace", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "episodes", 0) is not None and getattr(args, "episodes", 0) < 0:
        print("error: --episodes must be >= 0", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
