"""Communication-budgeted learning in finite-horizon Markov cooperative games.

Episodes are played with the current tabular policy. Visit counts are read
from the shared buffer only when the number of episodes since the last
update is a power of two, and the policy is rebuilt only when some state's
visit count has doubled. A rebuild sweeps the horizon backwards: at each
step every state runs its own potential-game learner on the stage reward
plus the optimistic continuation value, then the value of the new step
policy is estimated with an exploration bonus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .games import MCGModel
from .oracle import DEFAULT_MAX_EVALUATIONS, exact_mcg_gap, exact_mcg_value
from .pg import CommLedger, ConfigError, PGLearner, PGRunConfig, theory_epsilon, unknown_schedule

TabularPolicy = tuple[np.ndarray, ...]


@dataclass(frozen=True)
class MCGConfig:
    """Settings for one run.

    ``bonus_scale`` multiplies the optimism bonus; ``1`` keeps the constant
    from the analysis, which dwarfs the horizon at small sizes.
    ``pg_share_scale`` multiplies the number of interactions each backward
    step hands to the per-state learners. ``learner`` configures those
    learners; its ``T`` is ignored.
    """

    T: int = 256
    mode: Literal["theory", "practical"] = "practical"
    seed: int = 0
    bonus_scale: float | None = None
    bonus_form: Literal["tau-weighted", "plain"] = "tau-weighted"
    c: float = 1.0
    Delta: float = 1.0
    delta: float = 0.1
    epsilon: float = 0.05
    clip: bool | None = None
    pg_share_scale: float = 1.0
    learner: PGRunConfig | None = None
    deviation: Literal["first-step", "all-steps", "state-step"] | None = None
    final_episodes: int | None = None

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.mode not in ("theory", "practical"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0 < self.c <= 1 or self.Delta <= 0:
            raise ConfigError("need c in (0, 1] and Delta > 0")
        if not 0 < self.delta < 1 or self.epsilon <= 0:
            raise ConfigError("need delta in (0, 1) and epsilon > 0")
        if self.pg_share_scale <= 0:
            raise ConfigError("pg_share_scale must be positive")
        if self.bonus_scale is not None and self.bonus_scale < 0:
            raise ConfigError("bonus_scale must be non-negative")

    @property
    def scale(self) -> float:
        if self.bonus_scale is not None:
            return self.bonus_scale
        return 1.0 if self.mode == "theory" else 1e-3

    @property
    def deviation_kind(self) -> str:
        if self.deviation is not None:
            return self.deviation
        return "first-step" if self.mode == "theory" else "state-step"

    @property
    def clipped(self) -> bool:
        return self.clip if self.clip is not None else self.mode == "practical"

    def learner_config(self) -> PGRunConfig:
        if self.learner is not None:
            return self.learner
        if self.mode == "theory":
            return PGRunConfig(mode="theory", strategy="bpp", delta=self.delta)
        return PGRunConfig(mode="practical", strategy="bpp", interval=10, num_base_policies=2,
                           N=2, eta=1.0, epsilon=0.05)


@dataclass(frozen=True)
class BonusParams:
    n: int
    H: int
    S: int
    maxA: int
    c: float = 1.0
    Delta: float = 1.0
    delta: float = 0.1
    bonus_scale: float = 1.0
    form: Literal["tau-weighted", "plain"] = "tau-weighted"


def bonus_log(t: int, p: BonusParams) -> float:
    return max(2.0, math.log(p.S * p.maxA * t / p.delta))


def bonus_g(N: int, t: int, params: BonusParams) -> float:
    """Optimism bonus for a state visited ``N`` times in ``t`` episodes."""
    if t < 1:
        raise ConfigError("t must be at least 1")
    p = params
    if p.bonus_scale == 0:
        return 0.0
    tau = bonus_log(t, p)
    const = 280.0 * p.n * p.H ** 3 * (1 + 1 / (p.c * p.Delta)) ** 2
    if p.form == "tau-weighted":
        return p.bonus_scale * const * tau / (N / math.sqrt(t) + tau / 2)
    K = math.isqrt(t) + 1
    return p.bonus_scale * const / (N / math.sqrt(K) + tau / 2)


def is_power_of_two_gap(t: int, I_t: int) -> bool:
    d = t - I_t
    if d < 0:
        raise ConfigError("t must not precede I_t")
    return d >= 1 and d & (d - 1) == 0


def trigger_check(counts_now: np.ndarray, counts_at_I: np.ndarray) -> bool:
    """True when some (step, state) count has at least doubled; a first visit counts."""
    now = np.asarray(counts_now)
    then = np.asarray(counts_at_I)
    if now.shape != then.shape:
        raise ConfigError("count tables differ in shape")
    return bool(np.any((now >= 2 * then) & (now > 0)))


@dataclass
class MixturePolicy:
    """Uniform mixture over past policies, stored once per distinct snapshot."""

    snapshots: list[TabularPolicy]
    weights: np.ndarray

    @classmethod
    def from_history(cls, history: Sequence[TabularPolicy], counts: Sequence[int]) -> "MixturePolicy":
        w = np.asarray(counts, float)
        return cls(list(history), w / w.sum())

    @classmethod
    def single(cls, policy: TabularPolicy) -> "MixturePolicy":
        return cls([policy], np.ones(1))


def uniform_tabular(mcg: MCGModel) -> TabularPolicy:
    return tuple(np.full((mcg.H, mcg.S, m), 1.0 / m) for m in mcg.action_sizes)


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw from each row of a ``(m, A)`` matrix of distributions."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    return np.minimum((cdf <= u[:, None]).sum(axis=1), probs.shape[1] - 1)


def _stacked(mix: MixturePolicy) -> list[np.ndarray]:
    return [np.stack([snap[i] for snap in mix.snapshots]) for i in range(len(mix.snapshots[0]))]


def _env_step(mcg: MCGModel, h: int, s: np.ndarray, acts: np.ndarray,
              rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    idx = (s,) + tuple(acts.T)
    rewards = mcg.noise.draw(mcg.rewards[h][idx], 1.0, rng)
    nxt = _sample_rows(mcg.transitions[h][idx], rng)
    return rewards, nxt


def rollout_prefix(mcg: MCGModel, explore: MixturePolicy, h: int, m: int,
                   rng: np.random.Generator) -> np.ndarray:
    """States reached at step ``h`` by ``m`` episodes that follow the mixture before it."""
    which = rng.choice(len(explore.snapshots), size=m, p=explore.weights)
    stacked = _stacked(explore)
    s = np.full(m, mcg.s1, dtype=np.intp)
    for k in range(h):
        acts = np.column_stack([_sample_rows(P[which, k, s], rng) for P in stacked])
        _, s = _env_step(mcg, k, s, acts, rng)
    return s


def play_episodes(mcg: MCGModel, policy: TabularPolicy, m: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Returns and visited states ``(m, H)`` of ``m`` episodes under ``policy``."""
    s = np.full(m, mcg.s1, dtype=np.intp)
    states = np.empty((m, mcg.H), dtype=np.intp)
    total = np.zeros(m)
    for h in range(mcg.H):
        states[:, h] = s
        acts = np.column_stack([_sample_rows(p[h, s], rng) for p in policy])
        r, s = _env_step(mcg, h, s, acts, rng)
        total += r
    return total, states


class _StateLearner:
    """A per-state potential-game learner fed one interaction at a time."""

    def __init__(self, mcg: MCGModel, cfg: MCGConfig, M: float, rng: np.random.Generator):
        self.mcg = mcg
        self.cfg = cfg
        self.M = M
        self.rng = rng
        self.base_cfg = cfg.learner_config()
        self.stage = 0
        self.output: TabularPolicy | None = None
        self.rounds = 0
        self._new_stage()

    def _new_stage(self) -> None:
        self.stage += 1
        n = self.mcg.n
        if self.cfg.mode == "theory":
            eps, T = unknown_schedule(n, self.stage)
            lcfg = replace(self.base_cfg, T=T, epsilon=theory_epsilon(eps, n))
            self.limit = T
        else:
            lcfg = self.base_cfg
            self.limit = math.inf
        self.learner = PGLearner(self.mcg.action_sizes, lcfg, self.M, self.M, self.rng,
                                 horizon=None if self.limit == math.inf else self.limit)

    def policy(self) -> tuple[np.ndarray, ...]:
        if self.cfg.mode == "theory":
            return self.output if self.output is not None else self.learner.best_policy
        return self.learner.policy

    def _advance(self, open_round: bool = True) -> None:
        """Run offline iterations until new data is needed, then optionally ask for it."""
        L = self.learner
        while True:
            if L.pending() is not None:
                return
            if L.ready and not L.needs_round():
                L.step()
                if L.k >= self.limit:
                    self.output = L.best_policy
                    self._new_stage()
                    L = self.learner
                continue
            if not open_round:
                return
            L.start_round()
            self.rounds += 1

    def consume(self, count: int, h: int, s: int, v_next: np.ndarray) -> None:
        """Spend ``count`` visits to this state on pending probes."""
        hi = 1.0 + float(v_next.max(initial=0.0))
        while count > 0:
            self._advance()
            req = self.learner.pending()
            take = min(count, req.size - req.filled)
            prof = req.profiles[req.filled:req.filled + take]
            idx = (np.full(take, s),) + tuple(prof.T)
            r = self.mcg.noise.draw(self.mcg.rewards[h][idx], 1.0, self.rng)
            nxt = _sample_rows(self.mcg.transitions[h][idx], self.rng)
            fed = r + v_next[nxt]
            if np.any(fed < -1e-12) or np.any(fed > hi + 1e-12):
                raise AssertionError("learner reward left [0, 1 + max V]")
            self.learner.feed(fed)
            count -= take
        self._advance(open_round=False)


@dataclass
class StepBank:
    learners: dict[int, _StateLearner] = field(default_factory=dict)

    def rounds(self) -> int:
        return sum(b.rounds for b in self.learners.values())


def pg_share(mcg: MCGModel, h: int, explore: MixturePolicy, v_next: np.ndarray, K: int,
             rng: np.random.Generator, ledger: CommLedger, cfg: MCGConfig) -> tuple[list[np.ndarray], int]:
    """Per-state policies for step ``h`` learned from ``K`` exploration visits.

    Returns the policies (one ``(S, A_i)`` array per agent) and the number of
    learner communication rounds, which are also logged in ``ledger``.
    """
    if K < 1:
        raise ConfigError("K must be at least 1")
    states = rollout_prefix(mcg, explore, h, K, rng)
    ledger.add_samples(K)
    M = 1.0 + float(np.max(v_next, initial=0.0))
    bank = StepBank()
    counts = np.bincount(states, minlength=mcg.S)
    for s in range(mcg.S):
        if counts[s] == 0:
            continue
        bank.learners[s] = _StateLearner(mcg, cfg, M, rng)
        bank.learners[s].consume(int(counts[s]), h, s, v_next)
    out = [np.full((mcg.S, m), 1.0 / m) for m in mcg.action_sizes]
    for s, b in bank.learners.items():
        for i, p in enumerate(b.policy()):
            out[i][s] = p
    rounds = bank.rounds()
    for _ in range(rounds):
        ledger.round(-1, f"pg-share h={h}")
    return out, rounds


def v_approx(mcg: MCGModel, h: int, explore: MixturePolicy, pi_h: Sequence[np.ndarray],
             v_next: np.ndarray, t: int, rng: np.random.Generator, ledger: CommLedger,
             params: BonusParams, clip: bool) -> tuple[np.ndarray, np.ndarray]:
    """Optimistic value estimate of step ``h`` and the per-state visit counts."""
    if t < 1:
        raise ConfigError("t must be at least 1")
    s = rollout_prefix(mcg, explore, h, t, rng)
    acts = np.column_stack([_sample_rows(p[s], rng) for p in pi_h])
    r, nxt = _env_step(mcg, h, s, acts, rng)
    target = r + v_next[nxt]
    N = np.bincount(s, minlength=mcg.S)
    sums = np.bincount(s, weights=target, minlength=mcg.S)
    mean = np.where(N > 0, sums / np.maximum(N, 1), 0.0)
    bonus = np.array([bonus_g(int(c), t, params) for c in N])
    V = mean + 3.0 * bonus
    if clip:
        V = np.clip(V, 0.0, mcg.H - h)
    ledger.round(-1, f"v-approx h={h}")
    ledger.add_samples(t)
    return V, N


def final_episode_budget(H: int, epsilon: float, delta: float) -> int:
    return math.ceil(H * H * math.log(2 / delta) / epsilon ** 2)


def deviation_policies(mcg: MCGModel, policy: TabularPolicy, agent: int,
                       deviation: str = "first-step") -> list[TabularPolicy]:
    """Unilateral deviations of ``agent`` used to score a candidate.

    ``first-step`` plays a fixed action at the first step and then follows the
    agent's own policy, ``all-steps`` plays it throughout, and ``state-step``
    switches a single (step, state) entry to a fixed action.
    """
    size = mcg.action_sizes[agent]
    if deviation == "first-step":
        cells = [[(0, s) for s in range(mcg.S)]]
    elif deviation == "all-steps":
        cells = [[(h, s) for h in range(mcg.H) for s in range(mcg.S)]]
    elif deviation == "state-step":
        cells = [[(h, s)] for h in range(mcg.H) for s in range(mcg.S)]
    else:
        raise ConfigError(f"unknown deviation {deviation!r}")
    out = []
    for group in cells:
        for a in range(size):
            table = np.array(policy[agent])
            for h, s in group:
                table[h, s] = 0.0
                table[h, s, a] = 1.0
            out.append(tuple(table if j == agent else p for j, p in enumerate(policy)))
    return out


def final_gap_selection(mcg: MCGModel, distinct_policies: Sequence[TabularPolicy], epsilon: float,
                        delta: float, rng: np.random.Generator, ledger: CommLedger,
                        episodes: int | None = None,
                        deviation: str = "first-step") -> tuple[TabularPolicy, np.ndarray]:
    """Pick the candidate with the smallest Monte-Carlo deviation gain.

    Each candidate is scored by ``sum_i max_dev V(dev x pi_-i) - V(pi)`` over the
    deviations from :func:`deviation_policies`, every value estimated from
    ``ceil(H^2 ln(2/delta) / epsilon^2)`` episodes.
    """
    if not distinct_policies:
        raise ConfigError("no candidate policies")
    if len(distinct_policies) == 1:
        return distinct_policies[0], np.zeros(1)
    m = episodes if episodes is not None else final_episode_budget(mcg.H, epsilon, delta)
    gaps = np.empty(len(distinct_policies))
    for k, pol in enumerate(distinct_policies):
        base = play_episodes(mcg, pol, m, rng)[0].mean()
        g = 0.0
        played = 1
        for i in range(mcg.n):
            devs = deviation_policies(mcg, pol, i, deviation)
            played += len(devs)
            g += max(play_episodes(mcg, d, m, rng)[0].mean() for d in devs) - base
        gaps[k] = g
        ledger.add_samples(m * played)
    ledger.round(-1, "final selection")
    return distinct_policies[int(np.argmin(gaps))], gaps


@dataclass
class MCGResult:
    """Per-episode records and the selected policy of a run."""

    episodes: np.ndarray
    values: np.ndarray
    rounds: np.ndarray
    samples: np.ndarray
    policy: TabularPolicy
    candidates: list[TabularPolicy]
    candidate_gaps: np.ndarray
    triggers: int
    checks: int
    trigger_episodes: list[int]
    audit: dict
    ledger: CommLedger
    value_tables: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return self.episodes.size


def trigger_bound(S: int, H: int, T: int) -> int:
    return S * H * math.ceil(math.log2(T)) + S * H if T > 1 else S * H


def run_mcg(mcg: MCGModel, config: MCGConfig, rng: np.random.Generator | None = None) -> MCGResult:
    """Play ``config.T`` episodes, rebuilding the policy on doubling visit counts."""
    cfg = config
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    ledger = CommLedger()
    params = BonusParams(mcg.n, mcg.H, mcg.S, max(mcg.action_sizes), cfg.c, cfg.Delta, cfg.delta,
                         cfg.scale, cfg.bonus_form)
    oracle_ok = mcg.H * mcg.S * mcg.num_profiles * mcg.S <= DEFAULT_MAX_EVALUATIONS

    policy = uniform_tabular(mcg)
    history: list[TabularPolicy] = [policy]
    multiplicity = [0]
    counts = np.zeros((mcg.H, mcg.S), dtype=np.int64)
    counts_at_I = np.zeros_like(counts)
    I_t = 0
    checks = triggers = 0
    pg_rounds = v_rounds = 0
    trigger_episodes: list[int] = []
    value_tables = []
    values = np.full(cfg.T, math.nan)
    rounds = np.zeros(cfg.T, dtype=np.int64)
    samples = np.zeros(cfg.T, dtype=np.int64)
    current_value = exact_mcg_value(mcg, policy) if oracle_ok else math.nan

    for t in range(1, cfg.T + 1):
        _, visited = play_episodes(mcg, policy, 1, rng)
        counts[np.arange(mcg.H), visited[0]] += 1
        multiplicity[-1] += 1
        ledger.add_samples(1)
        values[t - 1] = current_value
        if is_power_of_two_gap(t, I_t):
            checks += 1
            ledger.round(t, "count check")
            if trigger_check(counts, counts_at_I):
                triggers += 1
                trigger_episodes.append(t)
                explore = MixturePolicy.from_history(history, multiplicity)
                K = max(1, int(round((math.isqrt(t) + 1) * cfg.pg_share_scale)))
                V = np.zeros((mcg.H + 1, mcg.S))
                new = [np.empty((mcg.H, mcg.S, m)) for m in mcg.action_sizes]
                for h in reversed(range(mcg.H)):
                    pi_h, r = pg_share(mcg, h, explore, V[h + 1], K, rng, ledger, cfg)
                    pg_rounds += r
                    for i in range(mcg.n):
                        new[i][h] = pi_h[i]
                    V[h], _ = v_approx(mcg, h, explore, pi_h, V[h + 1], t, rng, ledger, params,
                                       cfg.clipped)
                    v_rounds += 1
                value_tables.append(V)
                I_t = t
                counts_at_I = counts.copy()
                if t < cfg.T:
                    policy = tuple(new)
                    history.append(policy)
                    multiplicity.append(0)
                    current_value = exact_mcg_value(mcg, policy) if oracle_ok else math.nan
        rounds[t - 1], samples[t - 1] = ledger.rounds, ledger.samples

    if triggers > trigger_bound(mcg.S, mcg.H, cfg.T):
        raise AssertionError(f"{triggers} triggers exceed the doubling bound")
    played = [p for p, c in zip(history, multiplicity) if c > 0]
    before = ledger.rounds
    chosen, gaps = final_gap_selection(mcg, played, cfg.epsilon, cfg.delta, rng, ledger,
                                       cfg.final_episodes, cfg.deviation_kind)
    final_rounds = ledger.rounds - before
    audit = {"checks": checks, "triggers": triggers, "pg_share_rounds": pg_rounds,
             "v_approx_rounds": v_rounds, "final_rounds": final_rounds,
             "distinct_policies": len(played)}
    audit["total"] = checks + pg_rounds + v_rounds + final_rounds
    if audit["total"] != ledger.rounds:
        raise AssertionError("ledger rounds do not decompose")
    if rounds.size:
        rounds[-1] = ledger.rounds
        samples[-1] = ledger.samples
    return MCGResult(np.arange(1, cfg.T + 1), values, rounds, samples, chosen, played, gaps,
                     triggers, checks, trigger_episodes, audit, ledger, value_tables)


def mcg_gap_report(mcg: MCGModel, policy: TabularPolicy):
    return exact_mcg_gap(mcg, policy)
