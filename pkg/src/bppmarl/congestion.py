"""Two-state congestion dynamics with one potential-game learner per state.

Each episode advances the safe-state and the distancing-state learners by
one NPG iterate. Both learners share the communication schedule, so a round
that refreshes the data of both states is counted once. Rewards are drawn
from a generative model of each stage game. Progress is scored by the mean
per-agent reward averaged over a short rollout of the state chain from the
initial state, where both the rewards and the state transitions follow the
current per-state policies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .games import CONGESTION_STATES, CongestionConfig, congestion_stage_game, congestion_transition
from .oracle import joint_probabilities
from .pg import CommLedger, ConfigError, PGLearner, PGRunConfig, RunResult, _game_rewards
from .policy import ProductPolicy


@dataclass(frozen=True)
class CongestionRunConfig:
    """Settings for one congestion run; ``learner.T`` is replaced by ``episodes``."""

    congestion: CongestionConfig = field(default_factory=CongestionConfig)
    episodes: int = 500
    eval_horizon: int = 10
    learner: PGRunConfig = field(default_factory=lambda: PGRunConfig(
        interval=30, num_base_policies=6, N=2, eta=0.03, epsilon=0.05))

    def __post_init__(self):
        if self.episodes < 1 or self.eval_horizon < 1:
            raise ConfigError("episodes and eval_horizon must be positive")
        if self.learner.mode != "practical":
            raise ConfigError("the congestion runner uses the practical schedule")


def congestion_marginals(state: str, cfg: CongestionConfig, policy: ProductPolicy) -> list[np.ndarray]:
    """Closed-form ``l_i(a) = w_a * sum_{j != i} pi_j(a)``."""
    w = cfg.weights(state)
    P = np.stack(policy)
    total = P.sum(axis=0)
    return [w * (total - P[i]) for i in range(cfg.n)]


class CongestionEvaluator:
    """Exact expected reward and potential of a pair of per-state policies."""

    def __init__(self, cfg: CongestionConfig, horizon: int):
        self.cfg = cfg
        self.horizon = horizon
        self.games = [congestion_stage_game(s, cfg) for s in CONGESTION_STATES]
        sizes = (cfg.num_actions,) * cfg.n
        profiles = np.indices(sizes).reshape(cfg.n, -1).T
        self.mean_reward = [g.rewards.reshape(cfg.n, -1).mean(axis=0) for g in self.games]
        self.potential = [g.potential.reshape(-1) for g in self.games]
        # to_dist[s, profile] is 1 when the profile played in state s leads to distancing
        self.to_dist = np.array([
            [congestion_transition(p, s, cfg.num_actions) == "distancing" for p in profiles]
            for s in CONGESTION_STATES], dtype=float)
        self.start = np.eye(2)[CONGESTION_STATES.index(cfg.initial_state)]

    def __call__(self, policies: tuple[ProductPolicy, ProductPolicy]) -> tuple[float, float]:
        probs = [joint_probabilities([q[None] for q in p]).reshape(-1) for p in policies]
        r = np.array([probs[s] @ self.mean_reward[s] for s in range(2)])
        phi = np.array([probs[s] @ self.potential[s] for s in range(2)])
        q = np.array([probs[s] @ self.to_dist[s] for s in range(2)])
        P = np.column_stack([1 - q, q])
        d = self.start
        reward = potential = 0.0
        for _ in range(self.horizon):
            reward += d @ r
            potential += d @ phi
            d = d @ P
        return reward / self.horizon, potential / self.horizon


def run_congestion(config: CongestionRunConfig, rng: np.random.Generator | None = None) -> RunResult:
    """Learn per-state policies over ``config.episodes`` synchronized episodes."""
    cfg = config
    lcfg = replace(cfg.learner, T=cfg.episodes)
    rng = rng if rng is not None else np.random.default_rng(lcfg.seed)
    evaluator = CongestionEvaluator(cfg.congestion, cfg.eval_horizon)
    games = evaluator.games
    learners = [PGLearner(g.action_sizes, lcfg, g.M, g.phi_max, rng, horizon=cfg.episodes)
                for g in games]
    ledger = CommLedger(max_rounds=lcfg.max_rounds)

    T = cfg.episodes
    reward = np.zeros(T)
    potential = np.zeros(T)
    gaps = np.zeros(T)
    rounds = np.zeros(T, dtype=np.int64)
    samples = np.zeros(T, dtype=np.int64)
    for k in range(T):
        reward[k], potential[k] = evaluator(tuple(L.policy for L in learners))
        due = [L.needs_round() for L in learners]
        if any(due):
            for L, g, d in zip(learners, games, due):
                if d:
                    L.start_round()
                    ledger.add_samples(L.fulfil(lambda p, a, g=g: _game_rewards(g, p, a, rng)))
            ledger.round(k, f"{lcfg.strategy}:{sum(due)} states")
        gaps[k] = sum(L.step()[1] for L in learners)
        rounds[k], samples[k] = ledger.rounds, ledger.samples

    final = tuple(L.policy for L in learners)
    best = tuple(L.best_policy for L in learners)
    return RunResult(np.arange(T), reward[:, None], potential, gaps, rounds, samples,
                     max(L.best_k for L in learners), best, final, ledger,
                     max(L.max_ratio for L in learners),
                     [c for L in learners for c in L.distinct_counts],
                     {"states": list(CONGESTION_STATES)})


def closed_form_rounds(episodes: int, strategy: str, interval: int) -> int:
    return episodes if strategy == "full-comm" else math.ceil(episodes / interval)
