"""Game environments: tabular potential games, the congestion game and
finite-horizon Markov cooperative games.

All tables are dense numpy arrays indexed by the joint action, so the
joint action space must be small enough to enumerate.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

NoiseKind = Literal["exact", "bernoulli-scaled", "custom-bounded"]
CongestionState = Literal["safe", "distancing"]
CONGESTION_STATES: tuple[str, str] = ("safe", "distancing")

POTENTIAL_TOL = 1e-9
ROW_SUM_TOL = 1e-9


class GameError(ValueError):
    """Raised for malformed game definitions."""


@dataclass(frozen=True)
class NoiseSpec:
    """Reward observation channel.

    ``exact`` returns the table entry, ``bernoulli-scaled`` returns ``r_max``
    with probability ``r / r_max`` (else 0), and ``custom-bounded`` defers to
    ``sampler(means, rng) -> samples`` which must be unbiased and stay in
    ``[0, r_max]``.
    """

    kind: NoiseKind = "bernoulli-scaled"
    sampler: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in ("exact", "bernoulli-scaled", "custom-bounded"):
            raise GameError(f"unknown noise kind {self.kind!r}")
        if self.kind == "custom-bounded" and self.sampler is None:
            raise GameError("custom-bounded noise needs a sampler")

    def draw(self, means: np.ndarray, r_max: float, rng: np.random.Generator) -> np.ndarray:
        means = np.asarray(means, dtype=float)
        if self.kind == "exact":
            return means.copy()
        if self.kind == "bernoulli-scaled":
            if r_max <= 0:
                return np.zeros_like(means)
            hits = rng.random(means.shape) < means / r_max
            return np.where(hits, r_max, 0.0)
        out = np.asarray(self.sampler(means, rng), dtype=float)
        if out.shape != means.shape or np.any(out < 0) or np.any(out > r_max):
            raise GameError("custom noise sampler left [0, r_max]")
        return out


EXACT = NoiseSpec("exact")


def _check_profile(profile: Sequence[int], sizes: Sequence[int]) -> tuple[int, ...]:
    profile = tuple(int(a) for a in profile)
    if len(profile) != len(sizes):
        raise GameError(f"profile has {len(profile)} entries, game has {len(sizes)} agents")
    for i, (a, m) in enumerate(zip(profile, sizes)):
        if not 0 <= a < m:
            raise GameError(f"action {a} of agent {i} outside [0, {m})")
    return profile


@dataclass(frozen=True)
class PotentialGame:
    """Normal-form game with per-agent reward tables and an optional potential.

    ``rewards`` has shape ``(n, *action_sizes)``; ``potential`` has shape
    ``action_sizes``.
    """

    action_sizes: tuple[int, ...]
    rewards: np.ndarray
    potential: np.ndarray | None = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    r_max: float | None = None
    phi_max: float | None = None
    name: str = "game"

    def __post_init__(self):
        sizes = tuple(int(m) for m in self.action_sizes)
        object.__setattr__(self, "action_sizes", sizes)
        if len(sizes) < 1 or any(m < 1 for m in sizes):
            raise GameError(f"bad action sizes {sizes}")
        rewards = np.array(self.rewards, dtype=float)
        if rewards.shape != (len(sizes),) + sizes:
            raise GameError(f"rewards shape {rewards.shape} != {(len(sizes),) + sizes}")
        if np.any(rewards < 0) or not np.all(np.isfinite(rewards)):
            raise GameError("rewards must be finite and non-negative")
        rewards.setflags(write=False)
        object.__setattr__(self, "rewards", rewards)
        r_max = float(rewards.max()) if self.r_max is None else float(self.r_max)
        if rewards.max() > r_max + 1e-12:
            raise GameError(f"reward entry {rewards.max()} exceeds r_max={r_max}")
        object.__setattr__(self, "r_max", r_max)
        if self.potential is not None:
            pot = np.array(self.potential, dtype=float)
            if pot.shape != sizes:
                raise GameError(f"potential shape {pot.shape} != {sizes}")
            if np.any(pot < -1e-12):
                raise GameError("potential must be non-negative")
            pot.setflags(write=False)
            object.__setattr__(self, "potential", pot)
            phi_max = float(pot.max()) if self.phi_max is None else float(self.phi_max)
            object.__setattr__(self, "phi_max", phi_max)

    @property
    def n(self) -> int:
        return len(self.action_sizes)

    @property
    def M(self) -> float:
        """max(R_max, phi_max), floored at 1 so that step-size formulas apply."""
        return max(self.r_max, self.phi_max or 0.0, 1.0)

    @property
    def num_profiles(self) -> int:
        return int(np.prod(self.action_sizes))

    def reward(self, agent: int, profile: Sequence[int]) -> float:
        profile = _check_profile(profile, self.action_sizes)
        return float(self.rewards[(agent,) + profile])

    def with_noise(self, noise: NoiseSpec) -> "PotentialGame":
        return PotentialGame(self.action_sizes, self.rewards, self.potential, noise,
                             self.r_max, self.phi_max, self.name)


def sample_reward(game: PotentialGame, agent: int, profile: Sequence[int],
                  rng: np.random.Generator) -> float:
    """One noisy observation of ``r_agent(profile)``."""
    mean = game.reward(agent, profile)
    return float(game.noise.draw(np.array(mean), game.r_max, rng))


def sample_rewards(game: PotentialGame, agent: int, profiles: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    """Vectorised ``sample_reward`` over a ``(m, n)`` array of profiles."""
    profiles = np.asarray(profiles, dtype=np.intp)
    means = game.rewards[agent][tuple(profiles.T)]
    return game.noise.draw(means, game.r_max, rng)


def new_random_cooperative_pg(n: int, action_sizes: Sequence[int], reward_lo: float,
                              reward_hi: float, seed: int,
                              noise: NoiseSpec | None = None) -> PotentialGame:
    """Identical-interest game with one shared table drawn from U[lo, hi]."""
    sizes = tuple(int(m) for m in action_sizes)
    if n < 2 or len(sizes) != n or any(m < 2 for m in sizes):
        raise GameError(f"need n >= 2 agents with >= 2 actions each, got n={n}, sizes={sizes}")
    if not 0 <= reward_lo < reward_hi:
        raise GameError(f"need 0 <= lo < hi, got [{reward_lo}, {reward_hi}]")
    rng = np.random.default_rng(seed)
    table = rng.uniform(reward_lo, reward_hi, size=sizes)
    rewards = np.broadcast_to(table, (n,) + sizes)
    return PotentialGame(sizes, rewards, potential=table, noise=noise or NoiseSpec(),
                         r_max=reward_hi, phi_max=reward_hi, name="random-coop")


@dataclass(frozen=True)
class CongestionConfig:
    n: int = 8
    weights_safe: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4)
    distancing_multiplier: float = 0.5
    initial_state: CongestionState = "safe"

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights_safe)
        object.__setattr__(self, "weights_safe", w)
        if self.n < 2:
            raise GameError("congestion game needs n >= 2")
        if len(w) < 2 or any(b <= a for a, b in zip(w, w[1:])) or w[0] <= 0:
            raise GameError(f"weights must be positive and strictly increasing, got {w}")
        if not 0 < self.distancing_multiplier < 1:
            raise GameError("distancing_multiplier must lie in (0, 1)")
        if self.initial_state not in CONGESTION_STATES:
            raise GameError(f"unknown state {self.initial_state!r}")

    @property
    def num_actions(self) -> int:
        return len(self.weights_safe)

    def weights(self, state: str) -> np.ndarray:
        w = np.array(self.weights_safe)
        if state == "distancing":
            return w * self.distancing_multiplier
        if state != "safe":
            raise GameError(f"unknown state {state!r}")
        return w


def _action_counts(sizes: tuple[int, ...], num_actions: int) -> np.ndarray:
    """counts[a][profile] = number of agents playing a, over the full joint grid."""
    grids = np.indices(sizes, sparse=False)
    return np.stack([(grids == a).sum(axis=0) for a in range(num_actions)])


def congestion_stage_game(state: str, cfg: CongestionConfig,
                          noise: NoiseSpec | None = None) -> PotentialGame:
    """Stage game where an agent earns ``w_a`` times the number of *other* agents on ``a``.

    The potential is Rosenthal's ``sum_a w_a n_a (n_a - 1) / 2``.
    """
    w = cfg.weights(state)
    k = cfg.num_actions
    sizes = (k,) * cfg.n
    grids = np.indices(sizes)
    counts = _action_counts(sizes, k)
    rewards = np.empty((cfg.n,) + sizes)
    for i in range(cfg.n):
        own = grids[i]
        others_same = np.take_along_axis(counts, own[None], axis=0)[0] - 1
        rewards[i] = w[own] * others_same
    potential = np.tensordot(w, counts * (counts - 1) / 2.0, axes=1)
    r_max = float(w[-1] * (cfg.n - 1))
    phi_max = float(w[-1] * cfg.n * (cfg.n - 1) / 2)
    return PotentialGame(sizes, rewards, potential, noise or NoiseSpec(), r_max, phi_max,
                         name=f"congestion-{state}")


def congestion_transition(profile: Sequence[int], current: str, n_actions: int = 4) -> str:
    """Next congestion state: majority on one action -> distancing, even split -> safe."""
    counts = np.bincount(np.asarray(profile, dtype=np.intp), minlength=n_actions)
    n = int(counts.sum())
    if counts.max() * 2 > n:
        return "distancing"
    if counts.max() - counts.min() <= 1:
        return "safe"
    return current


def verify_potential(game: PotentialGame, tol: float | None = None) -> float:
    """Largest violation of the unilateral-deviation potential identity.

    Returns ``max |(r_i(a, a_-i) - r_i(b, a_-i)) - (phi(a, a_-i) - phi(b, a_-i))|``
    over agents, profiles and deviations. ``tol`` is accepted for callers that
    want a boolean; compare the return value against it.
    """
    if game.potential is None:
        raise GameError("game has no potential table")
    worst = 0.0
    for i in range(game.n):
        r = np.moveaxis(game.rewards[i], i, -1)
        p = np.moveaxis(game.potential, i, -1)
        diff = r - p  # identity holds iff diff is constant along the last axis
        spread = diff.max(axis=-1) - diff.min(axis=-1)
        worst = max(worst, float(spread.max()))
    return worst


@dataclass(frozen=True)
class MCGModel:
    """Finite-horizon Markov cooperative game with a shared reward.

    ``rewards`` has shape ``(H, S, *action_sizes)`` with entries in [0, 1];
    ``transitions`` has shape ``(H, S, *action_sizes, S)``.
    """

    action_sizes: tuple[int, ...]
    num_states: int
    horizon: int
    transitions: np.ndarray
    rewards: np.ndarray
    s1: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    state_names: tuple[str, ...] | None = None

    @property
    def n(self) -> int:
        return len(self.action_sizes)

    @property
    def S(self) -> int:
        return self.num_states

    @property
    def H(self) -> int:
        return self.horizon

    @property
    def num_profiles(self) -> int:
        return int(np.prod(self.action_sizes))

    def stage_game(self, h: int, s: int, continuation: np.ndarray | None = None) -> PotentialGame:
        """Identical-interest game at (h, s); ``continuation`` adds E[V(s')] (0-based h)."""
        table = self.rewards[h, s].copy()
        if continuation is not None:
            table = table + self.transitions[h, s] @ np.asarray(continuation, dtype=float)
        r_max = 1.0 + (float(np.max(continuation)) if continuation is not None else 0.0)
        rewards = np.broadcast_to(table, (self.n,) + self.action_sizes)
        return PotentialGame(self.action_sizes, rewards, table, self.noise, r_max, r_max,
                             name=f"stage-h{h}-s{s}")


def mcg_from_tables(n: int, action_sizes: Sequence[int], S: int, H: int, transitions, rewards,
                    s1: int = 0, noise: NoiseSpec | None = None,
                    state_names: Sequence[str] | None = None) -> MCGModel:
    """Validate dense tables and wrap them as an ``MCGModel``."""
    sizes = tuple(int(m) for m in action_sizes)
    if len(sizes) != n:
        raise GameError(f"n={n} but {len(sizes)} action sizes given")
    if not sizes or any(m < 1 for m in sizes) or S < 1 or H < 1:
        raise GameError(f"bad dimensions sizes={sizes}, S={S}, H={H}")
    P = np.array(transitions, dtype=float)
    R = np.array(rewards, dtype=float)
    if P.shape != (H, S) + sizes + (S,):
        raise GameError(f"transitions shape {P.shape} != {(H, S) + sizes + (S,)}")
    if R.shape != (H, S) + sizes:
        raise GameError(f"rewards shape {R.shape} != {(H, S) + sizes}")
    if np.any(P < 0) or np.max(np.abs(P.sum(axis=-1) - 1.0)) > ROW_SUM_TOL:
        raise GameError("transition rows must be non-negative and sum to 1")
    if np.any(R < 0) or np.any(R > 1):
        raise GameError("MCG rewards must lie in [0, 1]")
    if not 0 <= s1 < S:
        raise GameError(f"initial state {s1} outside [0, {S})")
    P.setflags(write=False)
    R.setflags(write=False)
    names = tuple(state_names) if state_names is not None else None
    return MCGModel(sizes, S, H, P, R, int(s1), noise or NoiseSpec(), names)


def congestion_mcg(cfg: CongestionConfig, H: int, noise: NoiseSpec | None = None) -> MCGModel:
    """Two-state Markov game assembled from the congestion stage games.

    The shared reward is the mean per-agent congestion reward divided by its
    largest value over both states, so it lies in [0, 1].
    """
    k = cfg.num_actions
    sizes = (k,) * cfg.n
    stage = {s: congestion_stage_game(s, cfg, EXACT) for s in CONGESTION_STATES}
    team = np.stack([stage[s].rewards.mean(axis=0) for s in CONGESTION_STATES])
    team = team / team.max()
    P1 = np.zeros((2,) + sizes + (2,))
    for prof in itertools.product(range(k), repeat=cfg.n):
        for si, s in enumerate(CONGESTION_STATES):
            nxt = congestion_transition(prof, s, k)
            P1[(si,) + prof + (CONGESTION_STATES.index(nxt),)] = 1.0
    P = np.broadcast_to(P1, (H,) + P1.shape)
    R = np.broadcast_to(team, (H,) + team.shape)
    return mcg_from_tables(cfg.n, sizes, 2, H, P, R, CONGESTION_STATES.index(cfg.initial_state),
                           noise, CONGESTION_STATES)


def _nested(x) -> list:
    return np.asarray(x).tolist()


def game_from_dict(doc: dict) -> PotentialGame | MCGModel:
    """Build a game from its JSON description (inline tables or a generator spec)."""
    kind = doc.get("kind", "table")
    noise = NoiseSpec(doc.get("noise", "bernoulli-scaled")) if "noise" in doc else None
    if kind == "random-coop":
        n = int(doc["n"])
        sizes = doc.get("action_sizes", [10] * n)
        return new_random_cooperative_pg(n, sizes, float(doc.get("lo", 0.0)),
                                         float(doc.get("hi", 0.2)), int(doc.get("seed", 0)), noise)
    if kind in ("congestion", "congestion-mcg"):
        cfg = CongestionConfig(
            n=int(doc.get("n", 8)),
            weights_safe=tuple(doc.get("weights_safe", (0.1, 0.2, 0.3, 0.4))),
            distancing_multiplier=float(doc.get("distancing_multiplier", 0.5)),
            initial_state=doc.get("initial_state", "safe"),
        )
        if kind == "congestion":
            return congestion_stage_game(doc.get("state", "safe"), cfg, noise)
        return congestion_mcg(cfg, int(doc.get("H", 2)), noise)
    if kind == "mcg":
        return mcg_from_tables(len(doc["action_sizes"]), doc["action_sizes"], int(doc["S"]), int(doc["H"]),
                               doc["transitions"], doc["rewards"], int(doc.get("s1", 0)), noise)
    if kind == "table":
        sizes = tuple(doc["action_sizes"])
        if "n" in doc and int(doc["n"]) != len(sizes):
            raise GameError("n does not match action_sizes")
        return PotentialGame(sizes, doc["rewards"], doc.get("potential"),
                             noise or NoiseSpec(), doc.get("r_max"), doc.get("phi_max"))
    raise GameError(f"unknown game kind {kind!r}")


def game_to_dict(game: PotentialGame) -> dict:
    doc = {"kind": "table", "n": game.n, "action_sizes": list(game.action_sizes),
           "rewards": _nested(game.rewards), "noise": game.noise.kind, "r_max": game.r_max}
    if game.potential is not None:
        doc["potential"] = _nested(game.potential)
        doc["phi_max"] = game.phi_max
    return doc


def all_profiles(sizes: Sequence[int]):
    return itertools.product(*(range(m) for m in sizes))


def joint_count(sizes: Sequence[int]) -> int:
    return math.prod(int(m) for m in sizes)
