"""Command-line entry point."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import PRESETS, ConfigError, parse_config
from .games import (
    POTENTIAL_TOL,
    CongestionConfig,
    MCGModel,
    congestion_stage_game,
    game_from_dict,
    verify_potential,
)
from .harness import CellError, run_experiment
from .oracle import exact_mcg_gap, exact_pg_gap
from .policy import uniform_policy

DEFAULT_PRESET = {"run-pg": "fig-pg", "run-congestion": "fig-congestion", "run-mcg": "mcg-small"}
KIND = {"run-pg": "pg", "run-congestion": "congestion", "run-mcg": "mcg"}


def parse_seeds(text: str) -> list[int]:
    """``"3"`` or an inclusive range ``"0..4"``."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(text)]


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment JSON file")
    p.add_argument("--seed", type=int, help="single seed")
    p.add_argument("--seeds", type=parse_seeds, help="inclusive seed range N..M")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="parallel cells")
    p.add_argument("--mode", choices=["theory", "practical"])
    p.add_argument("--strategy", choices=["full-comm", "no-is", "naive-is", "bpp"])
    p.add_argument("--interval", type=int, help="iterations between rounds")
    p.add_argument("--bases", type=int, help="predicted base policies per round")
    p.add_argument("--episodes", type=int, help="iterations or episodes")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bppmarl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [("run-pg", "learn a stage potential game"),
                       ("run-congestion", "learn the two-state congestion game"),
                       ("run-mcg", "learn a Markov cooperative game")]:
        _run_flags(sub.add_parser(name, help=text))
    v = sub.add_parser("verify-potential", help="exhaustively check a potential table")
    v.add_argument("--config", help="game JSON file (default: 8-agent congestion game)")
    v.add_argument("--tol", type=float, default=POTENTIAL_TOL)
    g = sub.add_parser("gap", help="exact equilibrium gap of a policy")
    g.add_argument("--config", required=True, help="game JSON file")
    g.add_argument("--policy", help="policy JSON (default: uniform)")
    r = sub.add_parser("reproduce", help="run a named preset")
    r.add_argument("preset", choices=sorted(PRESETS))
    r.add_argument("--seed", type=int)
    r.add_argument("--seeds", type=parse_seeds)
    r.add_argument("--out")
    r.add_argument("--workers", type=int)
    return parser


def _experiment_doc(args) -> dict:
    if args.config:
        doc = json.loads(Path(args.config).read_text()) if Path(args.config).is_file() else None
        if doc is None:
            raise ConfigError(f"config file {args.config!r} does not exist")
    else:
        doc = json.loads(json.dumps(PRESETS[DEFAULT_PRESET[args.command]]))
    doc.setdefault("kind", KIND[args.command])
    if doc["kind"] != KIND[args.command]:
        raise ConfigError(f"{args.command} expects kind {KIND[args.command]!r}, got {doc['kind']!r}")
    alg = dict(doc.get("algorithm", {}))
    for flag, key in [("mode", "mode"), ("interval", "interval"), ("bases", "num_base_policies"),
                      ("episodes", "T"), ("epsilon", "epsilon"), ("delta", "delta")]:
        value = getattr(args, flag, None)
        if value is not None:
            alg[key] = value
    doc["algorithm"] = alg
    if getattr(args, "strategy", None):
        doc["strategies"] = [args.strategy]
    return doc


def _apply_common(doc: dict, args) -> dict:
    if args.seeds is not None:
        doc["seeds"] = args.seeds
    if args.seed is not None:
        doc["seeds"] = [args.seed]
    if args.out:
        doc["out"] = args.out
    if args.workers is not None:
        doc["workers"] = args.workers
    return doc


def _print_summary(summary: dict, elapsed: float) -> None:
    print(f"{summary['name']}: {len(summary['seeds'])} seed(s) in {elapsed:.1f} s")
    for s, st in summary["strategies"].items():
        fr, cr = st["final_reward"], st["comm_rounds"]
        ok = all(c["ledger_ok"] for c in st["cells"])
        print(f"  {s:10s} final reward {fr['mean']:.6g} +- {fr['std']:.3g}  "
              f"rounds {cr['mean']:.6g}  ledger {'ok' if ok else 'MISMATCH'}")


def _run(doc: dict) -> int:
    cfg = parse_config(doc)
    t0 = time.perf_counter()
    summary = run_experiment(cfg)
    _print_summary(summary, time.perf_counter() - t0)
    print(f"  outputs in {cfg.out}")
    ok = all(c["ledger_ok"] for st in summary["strategies"].values() for c in st["cells"])
    return 0 if ok else 3


def _load_game(path: str | None):
    if path is None:
        return congestion_stage_game("safe", CongestionConfig())
    return game_from_dict(json.loads(Path(path).read_text()))


def _cmd_verify(args) -> int:
    game = _load_game(args.config)
    if isinstance(game, MCGModel):
        raise ConfigError("verify-potential needs a stage game")
    t0 = time.perf_counter()
    worst = verify_potential(game)
    ok = worst <= args.tol
    print(f"{game.name or 'game'}: {game.num_profiles} profiles, max violation {worst:.3e} "
          f"({'ok' if ok else 'FAILED'}, {time.perf_counter() - t0:.2f} s)")
    return 0 if ok else 1


def _cmd_gap(args) -> int:
    game = _load_game(args.config)
    if args.policy:
        policy = tuple(np.asarray(p, float) for p in json.loads(Path(args.policy).read_text()))
    elif isinstance(game, MCGModel):
        policy = tuple(np.full((game.H, game.S, m), 1.0 / m) for m in game.action_sizes)
    else:
        policy = uniform_policy(game.action_sizes)
    rep = exact_mcg_gap(game, policy) if isinstance(game, MCGModel) else exact_pg_gap(game, policy)
    print(json.dumps({"value": rep.value, "gap": rep.gap, "gap_sum": rep.gap_sum,
                      "agent_values": np.asarray(rep.agent_values).tolist(),
                      "best_response_values": np.asarray(rep.best_response_values).tolist()},
                     indent=2))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in KIND:
            return _run(_apply_common(_experiment_doc(args), args))
        if args.command == "reproduce":
            return _run(_apply_common(json.loads(json.dumps(PRESETS[args.preset])), args))
        if args.command == "verify-potential":
            return _cmd_verify(args)
        return _cmd_gap(args)
    except (ConfigError, CellError, ValueError, KeyError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
