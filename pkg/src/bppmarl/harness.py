"""Seeded multi-run orchestration and metrics persistence.

Every (strategy, seed) pair is a cell. A cell draws its game from the seed,
so all strategies of one seed face the same game, and draws its learning
randomness from a stream keyed by (seed, strategy), so adding a strategy
leaves the other cells untouched.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import ExperimentConfig
from .congestion import CongestionRunConfig, closed_form_rounds, run_congestion
from .games import CongestionConfig, MCGModel, PotentialGame, game_from_dict
from .mcg import MCGConfig, run_mcg
from .pg import PGRunConfig, run_pg

HEADER = ("episode", "reward", "potential", "gap_estimate", "comm_rounds", "samples")
STRATEGY_CODES = {"full-comm": 0, "no-is": 1, "naive-is": 2, "bpp": 3}


class CellError(RuntimeError):
    """A run failure tagged with the cell that raised it."""


@dataclass(frozen=True)
class MetricsRow:
    episode: int
    reward: float
    potential: float
    gap_estimate: float
    comm_rounds: int
    samples: int


@dataclass
class CellResult:
    strategy: str
    seed: int
    rows: list[MetricsRow]
    expected_rounds: int
    extra: dict

    @property
    def final_reward(self) -> float:
        return self.rows[-1].reward if self.rows else math.nan

    @property
    def rounds(self) -> int:
        return self.rows[-1].comm_rounds if self.rows else 0

    @property
    def samples(self) -> int:
        return self.rows[-1].samples if self.rows else 0


def cell_rng(seed: int, strategy: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STRATEGY_CODES[strategy],)))


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def write_metrics_csv(rows: Iterable[MetricsRow], path: str | Path) -> None:
    """Write rows with the fixed header; floats use 12 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in rows:
            w.writerow([r.episode, _fmt(r.reward), _fmt(r.potential), _fmt(r.gap_estimate),
                        r.comm_rounds, r.samples])


def read_metrics_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        body = [row for row in rd]
    cols = list(zip(*body)) if body else [()] * len(HEADER)
    out = {}
    for name, col in zip(HEADER, cols):
        kind = int if name in ("episode", "comm_rounds", "samples") else float
        out[name] = np.array([kind(v) for v in col], dtype=kind)
    return out


def check_metrics(cols: dict[str, np.ndarray]) -> None:
    """Schema check: strictly increasing episodes, non-decreasing cumulative columns."""
    if len(cols) != len(HEADER):
        raise ValueError("wrong column count")
    if np.any(np.diff(cols["episode"]) <= 0):
        raise ValueError("episodes are not strictly increasing")
    for name in ("comm_rounds", "samples"):
        if np.any(np.diff(cols[name]) < 0):
            raise ValueError(f"{name} decreases")


def _pg_game(cfg: ExperimentConfig, seed: int) -> PotentialGame:
    spec = cfg.game_spec()
    if spec.get("kind", "table") == "random-coop" and "seed" not in spec:
        spec["seed"] = seed
    game = game_from_dict(spec)
    if not isinstance(game, PotentialGame):
        raise ValueError("pg experiments need a stage game")
    return game


def _congestion_config(spec: dict) -> CongestionConfig:
    return CongestionConfig(
        n=int(spec.get("n", 8)),
        weights_safe=tuple(spec.get("weights_safe", (0.1, 0.2, 0.3, 0.4))),
        distancing_multiplier=float(spec.get("distancing_multiplier", 0.5)),
        initial_state=spec.get("initial_state", "safe"),
    )


def _rows_from_run(res) -> list[MetricsRow]:
    return [MetricsRow(int(k) + 1, float(r), float(p), float(g), int(c), int(s))
            for k, r, p, g, c, s in zip(res.iterations, res.reward, res.potential,
                                        res.gap_estimate, res.rounds, res.samples)]


def run_cell(cfg: ExperimentConfig, strategy: str, seed: int) -> CellResult:
    """Run one (strategy, seed) cell and return its metrics rows."""
    rng = cell_rng(seed, strategy)
    alg = cfg.algorithm_model().model_dump()
    if cfg.kind == "pg":
        game = _pg_game(cfg, seed)
        pcfg = PGRunConfig(strategy=strategy, seed=seed, **alg)
        res = run_pg(game, pcfg, rng)
        expected = closed_form_rounds(pcfg.T, strategy, pcfg.interval) \
            if pcfg.mode == "practical" else res.ledger.rounds
        return CellResult(strategy, seed, _rows_from_run(res), expected,
                          {"max_ratio": res.max_ratio, "k_star": res.k_star})
    if cfg.kind == "congestion":
        T = alg.pop("T")
        horizon = alg.pop("eval_horizon")
        ccfg = CongestionRunConfig(_congestion_config(cfg.game_spec()), T, horizon,
                                   PGRunConfig(strategy=strategy, seed=seed, **alg))
        res = run_congestion(ccfg, rng)
        return CellResult(strategy, seed, _rows_from_run(res),
                          closed_form_rounds(T, strategy, ccfg.learner.interval),
                          {"max_ratio": res.max_ratio})
    mcg = game_from_dict(cfg.game_spec())
    if not isinstance(mcg, MCGModel):
        raise ValueError("mcg experiments need a Markov game")
    res = run_mcg(mcg, MCGConfig(seed=seed, **alg), rng)
    # the team value is the potential of a cooperative game
    rows = [MetricsRow(int(e), float(v), float(v), math.nan, int(c), int(s))
            for e, v, c, s in zip(res.episodes, res.values, res.rounds, res.samples)]
    return CellResult(strategy, seed, rows, res.audit["total"],
                      {"audit": res.audit, "triggers": res.triggers})


def _safe_cell(args) -> CellResult:
    cfg, strategy, seed = args
    try:
        return run_cell(cfg, strategy, seed)
    except Exception as err:
        raise CellError(f"cell strategy={strategy} seed={seed}: {type(err).__name__}: {err}") from err


def _stats(values: Sequence[float]) -> dict[str, float]:
    a = np.asarray(values, float)
    return {"mean": float(a.mean()), "std": float(a.std())}


def emit_plot_data(cells: Sequence[CellResult], path: str | Path) -> None:
    """Per-strategy mean and std (population) of reward against episode."""
    strategies = list(dict.fromkeys(c.strategy for c in cells))
    curves = {}
    episodes = None
    for s in strategies:
        mat = np.array([[r.reward for r in c.rows] for c in cells if c.strategy == s])
        curves[s] = (mat.mean(axis=0), mat.std(axis=0))
        eps = [r.episode for r in next(c for c in cells if c.strategy == s).rows]
        episodes = eps if episodes is None else episodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode"] + [f"{s}_{k}" for s in strategies for k in ("mean", "std")])
        for j, e in enumerate(episodes or []):
            w.writerow([e] + [_fmt(curves[s][k][j]) for s in strategies for k in (0, 1)])


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None,
                   workers: int | None = None) -> dict:
    """Run every cell, write the requested files and return the summary."""
    out_dir = Path(out if out is not None else cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, s, seed) for s in cfg.strategies for seed in cfg.seeds]
    workers = workers if workers is not None else cfg.workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_safe_cell, jobs))
    else:
        cells = [_safe_cell(j) for j in jobs]

    files = {}
    if "csv" in cfg.emit:
        for c in cells:
            name = f"{cfg.name}_{c.strategy}_seed{c.seed}.csv"
            write_metrics_csv(c.rows, out_dir / name)
            files[f"{c.strategy}/{c.seed}"] = name
    if "plot-data" in cfg.emit:
        emit_plot_data(cells, out_dir / f"{cfg.name}_plot.csv")

    summary = {"name": cfg.name, "kind": cfg.kind, "seeds": list(cfg.seeds), "strategies": {}}
    for s in cfg.strategies:
        mine = [c for c in cells if c.strategy == s]
        summary["strategies"][s] = {
            "final_reward": _stats([c.final_reward for c in mine]),
            "comm_rounds": _stats([c.rounds for c in mine]),
            "samples": _stats([c.samples for c in mine]),
            "cells": [{"seed": c.seed, "file": files.get(f"{s}/{c.seed}"),
                       "final_reward": c.final_reward, "comm_rounds": c.rounds,
                       "samples": c.samples, "expected_rounds": c.expected_rounds,
                       "ledger_ok": c.rounds == c.expected_rounds,
                       **{k: v for k, v in c.extra.items() if k != "audit"}}
                      for c in mine],
        }
    if "summary-json" in cfg.emit:
        (out_dir / f"{cfg.name}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
