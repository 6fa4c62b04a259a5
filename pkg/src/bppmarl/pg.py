"""Natural policy gradient on potential games with a communication budget.

Agents learn from a shared buffer of reward samples. Each access to the
buffer is a communication round. Between rounds the marginal rewards of the
current policy are estimated by importance sampling against the base
policies the buffered samples were drawn from. Four strategies decide what
those base policies are:

``full-comm``   fresh samples from the current policy every iteration
``no-is``       samples from the round-start policy, reused without reweighting
``naive-is``    samples from the round-start policy, reweighted to the current one
``bpp``         samples from several predicted future policies, each floored
                so that importance ratios stay bounded
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Sequence

import numpy as np

from .games import PotentialGame
from .oracle import DEFAULT_MAX_EVALUATIONS, contract, exact_marginals, exact_potential_value
from .policy import (
    PredictedBaseSet,
    ProductPolicy,
    dedup_policies,
    floor_joint,
    npg_step_joint,
    predict_joint,
    sample_profiles,
    uniform_policy,
)

Strategy = Literal["full-comm", "no-is", "naive-is", "bpp"]
Mode = Literal["theory", "practical"]
STRATEGIES: tuple[str, ...] = ("full-comm", "no-is", "naive-is", "bpp")
RATIO_BOUND = 2.0 * math.exp(17)
MAX_THEORY_N = 10**7


class ConfigError(ValueError):
    """Raised for inconsistent run configurations."""


class RatioBoundError(RuntimeError):
    """An importance ratio exceeded the bound guaranteed by flooring."""


@dataclass(frozen=True)
class PGRunConfig:
    """Settings for one learning run.

    ``N`` is the number of samples per (agent, probed action, base policy).
    When omitted it is ``samples_per_round // num_base_policies`` in
    practical mode and ``ceil(M^2 ln(2/delta) / epsilon^2)`` in theory mode.
    ``epsilon`` doubles as the flooring level.
    """

    T: int = 1000
    eta: float | None = None
    epsilon: float = 0.01
    delta: float = 0.01
    N: int | None = None
    samples_per_round: int = 100
    mode: Mode = "practical"
    strategy: Strategy = "bpp"
    interval: int = 100
    num_base_policies: int = 5
    seed: int = 0
    dedup_tol: float = 1e-9
    renormalize: Literal["proportional", "post"] = "proportional"
    max_rounds: int | None = None
    ratio_clip: float | None = None
    record_oracle: bool = True

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.eta is not None and self.eta <= 0:
            raise ConfigError("eta must be positive")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if not 0 < self.epsilon <= 1:
            raise ConfigError("epsilon must lie in (0, 1]")
        if self.mode not in ("theory", "practical"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.mode == "theory" and self.strategy != "bpp":
            raise ConfigError("theory mode is defined for the bpp strategy only")
        if self.interval < 1 or self.num_base_policies < 1:
            raise ConfigError("interval and num_base_policies must be positive")
        if self.mode == "practical" and self.strategy == "bpp" \
                and self.num_base_policies > self.interval:
            raise ConfigError("cannot use more base policies than steps per interval")
        if self.N is not None and self.N < 1:
            raise ConfigError("N must be at least 1")

    def step_size(self, n: int, M: float) -> float:
        return self.eta if self.eta is not None else 1.0 / (2 * n * M)

    def samples_per_probe(self, M: float) -> int:
        if self.N is not None:
            return self.N
        if self.mode == "theory":
            N = math.ceil(M * M * math.log(2 / self.delta) / self.epsilon ** 2)
            if N > MAX_THEORY_N:
                raise ConfigError(f"theory-mode sample size {N} is impractical; pass N explicitly")
            return N
        B = self.num_base_policies if self.strategy == "bpp" else 1
        return max(1, self.samples_per_round // B)


@dataclass
class CommLedger:
    """Communication rounds and reward samples spent by a run."""

    rounds: int = 0
    samples: int = 0
    log: list[tuple[int, str]] = field(default_factory=list)
    max_rounds: int | None = None

    def round(self, iteration: int, payload: str = "") -> None:
        if self.max_rounds is not None and self.rounds >= self.max_rounds:
            raise RuntimeError(f"communication budget of {self.max_rounds} rounds exhausted")
        self.rounds += 1
        self.log.append((iteration, payload))

    def add_samples(self, count: int) -> None:
        self.samples += int(count)


@dataclass(frozen=True)
class BaseData:
    """Samples drawn under one base policy.

    Row ``j`` probes ``agents[j]`` playing ``profiles[j, agents[j]]`` while the
    others follow the base policy; ``logbase[j]`` is the log-probability of the
    others' actions under the base.
    """

    policy: ProductPolicy
    profiles: np.ndarray
    agents: np.ndarray
    rewards: np.ndarray
    logbase: np.ndarray
    N: int

    def samples_for(self, agent: int, action: int) -> tuple[np.ndarray, np.ndarray]:
        """Opponent profiles and rewards recorded for one probe."""
        mask = (self.agents == agent) & (self.profiles[:, agent] == action)
        others = np.delete(self.profiles[mask], agent, axis=1)
        return others, self.rewards[mask]


@dataclass(frozen=True)
class BaseDataset:
    bases: tuple[BaseData, ...]

    @property
    def size(self) -> int:
        return sum(b.rewards.size for b in self.bases)


def _log_policy_columns(policy: ProductPolicy, profiles: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.column_stack([np.log(p)[profiles[:, j]] for j, p in enumerate(policy)])


def _opponent_logprob(policy: ProductPolicy, profiles: np.ndarray, agents: np.ndarray) -> np.ndarray:
    cols = _log_policy_columns(policy, profiles)
    own = cols[np.arange(len(agents)), agents]
    # own column may be -inf for a forced action; drop it without producing nan
    finite = np.where(np.isfinite(cols), cols, 0.0)
    total = finite.sum(axis=1) - np.where(np.isfinite(own), own, 0.0)
    bad = ~np.isfinite(cols)
    bad[np.arange(len(agents)), agents] = False
    return np.where(bad.any(axis=1), -np.inf, total)


def probe_request(policy: ProductPolicy, N: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Profiles for ``N`` probes of every (agent, action), opponents drawn from ``policy``."""
    sizes = [p.size for p in policy]
    agents = np.repeat(np.arange(len(sizes)), [N * m for m in sizes])
    actions = np.concatenate([np.repeat(np.arange(m), N) for m in sizes])
    profiles = sample_profiles(policy, agents.size, rng)
    profiles[np.arange(agents.size), agents] = actions
    return profiles, agents


def make_base_data(policy: ProductPolicy, profiles: np.ndarray, agents: np.ndarray,
                   rewards: np.ndarray, N: int) -> BaseData:
    logbase = _opponent_logprob(policy, profiles, agents)
    if not np.all(np.isfinite(logbase)):
        raise RatioBoundError("a stored sample has zero probability under its base policy")
    return BaseData(policy, profiles, agents, np.asarray(rewards, float), logbase, N)


def collect_base_dataset(game: PotentialGame, base_set: PredictedBaseSet | Sequence[ProductPolicy],
                         N: int, rng: np.random.Generator,
                         ledger: CommLedger | None = None) -> BaseDataset:
    """Draw ``N`` samples for every (base, agent, action) and record them in the ledger."""
    if N < 1:
        raise ConfigError("N must be at least 1")
    policies = [e.policy for e in base_set.entries] if isinstance(base_set, PredictedBaseSet) \
        else list(base_set)
    out = []
    for pol in policies:
        profiles, agents = probe_request(pol, N, rng)
        rewards = _game_rewards(game, profiles, agents, rng)
        out.append(make_base_data(pol, profiles, agents, rewards, N))
        if ledger is not None:
            ledger.add_samples(agents.size)
    return BaseDataset(tuple(out))


def _game_rewards(game: PotentialGame, profiles: np.ndarray, agents: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    means = game.rewards[(agents,) + tuple(profiles.T)]
    return game.noise.draw(means, game.r_max, rng)


def importance_estimates(data: BaseData, target: ProductPolicy, unit_weights: bool = False,
                         ratio_clip: float | None = None) -> tuple[list[np.ndarray], float]:
    """IS estimates of every agent's marginal reward vector and the largest ratio used."""
    sizes = [p.size for p in target]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    flat = offsets[data.agents] + data.profiles[np.arange(data.agents.size), data.agents]
    if unit_weights:
        weights = data.rewards
        max_ratio = 1.0
    else:
        ratio = np.exp(_opponent_logprob(target, data.profiles, data.agents) - data.logbase)
        if ratio_clip is not None:
            ratio = np.minimum(ratio, ratio_clip)
        max_ratio = float(ratio.max()) if ratio.size else 1.0
        weights = data.rewards * ratio
    sums = np.bincount(flat, weights=weights, minlength=offsets[-1])
    counts = np.bincount(flat, minlength=offsets[-1])
    est = sums / np.maximum(counts, 1)
    return [est[offsets[i]:offsets[i + 1]] for i in range(len(sizes))], max_ratio


def estimate_marginals_is(dataset: BaseDataset, base_id: int, agent: int, target: ProductPolicy,
                          base: ProductPolicy | None = None) -> tuple[np.ndarray, float]:
    """Importance-sampled marginal reward vector of ``agent`` and the largest ratio observed.

    ``base`` defaults to the policy recorded with the data; passing it checks
    that every stored sample has positive probability under it.
    """
    data = dataset.bases[base_id]
    if base is not None and base is not data.policy:
        data = make_base_data(base, data.profiles, data.agents, data.rewards, data.N)
    mask = data.agents == agent
    sub = BaseData(data.policy, data.profiles[mask], data.agents[mask], data.rewards[mask],
                   data.logbase[mask], data.N)
    ells, max_ratio = importance_estimates(sub, target)
    return ells[agent], max_ratio


def condition_log(n: int, epsilon: float) -> float:
    if n * epsilon >= 1:
        raise ConfigError(f"n*epsilon = {n * epsilon} >= 1 leaves ln(1/(n epsilon)) undefined")
    return math.log(1.0 / (n * epsilon))


def drift_threshold(t_prime: int, n: int, epsilon: float, phi_max: float) -> float:
    return 16.0 / ((n - 1) * t_prime * phi_max * condition_log(n, epsilon))


def elapsed_threshold(n: int, epsilon: float, phi_max: float) -> float:
    return 1.0 / (n ** 0.25 * epsilon ** 0.25 * phi_max * condition_log(n, epsilon))


def changing_condition(marginal_history: Sequence[Sequence[np.ndarray]], t_prime: int, n: int,
                       epsilon: float, phi_max: float) -> str:
    """Whether a new communication round is due.

    ``marginal_history[0]`` holds the round-start estimates and
    ``marginal_history[-1]`` the latest ones. Returns ``"trigger-A"`` when any
    estimate has drifted past the threshold, ``"trigger-B"`` when too many
    steps have elapsed, else ``"none"``.
    """
    if t_prime < 1:
        raise ConfigError("t_prime must be at least 1")
    thr = drift_threshold(t_prime, n, epsilon, phi_max)
    start, latest = marginal_history[0], marginal_history[-1]
    drift = max(float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) for a, b in zip(latest, start))
    if drift >= thr:
        return "trigger-A"
    if t_prime >= elapsed_threshold(n, epsilon, phi_max):
        return "trigger-B"
    return "none"


def estimate_nash_gap(ell_hat_prev: Sequence[np.ndarray], policy_new: ProductPolicy,
                      policy_prev: ProductPolicy) -> float:
    """Sum over agents of the estimated improvement ``<pi_new_i - pi_prev_i, ell_i>``."""
    return float(sum(np.dot(pn - pp, l) for pn, pp, l in zip(policy_new, policy_prev, ell_hat_prev)))


@dataclass
class Request:
    """Profiles the learner needs rewards for, grouped by base policy."""

    profiles: np.ndarray
    agents: np.ndarray
    base_ids: np.ndarray
    rewards: np.ndarray
    filled: int = 0

    @property
    def size(self) -> int:
        return self.agents.size

    @property
    def complete(self) -> bool:
        return self.filled >= self.size


class PGLearner:
    """Iterate-by-iterate state machine shared by every driver.

    A driver repeatedly asks :meth:`needs_round`; if so it calls
    :meth:`start_round`, fulfils every :meth:`pending` request (in one go or
    one probe at a time) and then calls :meth:`step`. Rounds and samples are
    logged by the driver, not here.
    """

    def __init__(self, action_sizes: Sequence[int], cfg: PGRunConfig, M: float,
                 phi_max: float | None, rng: np.random.Generator,
                 initial: ProductPolicy | None = None, horizon: int | None = None):
        self.sizes = tuple(int(m) for m in action_sizes)
        self.n = len(self.sizes)
        self.cfg = cfg
        self.M = M
        self.phi_max = phi_max if phi_max is not None else M
        self.eta = cfg.step_size(self.n, M)
        self.N = cfg.samples_per_probe(M)
        self.rng = rng
        self.horizon = horizon
        self.policy: ProductPolicy = initial if initial is not None else uniform_policy(self.sizes)
        self.k = 0
        self.round_start = 0
        self.bases: list[ProductPolicy] = []
        self.base_starts: list[int] = []
        self.data: list[BaseData] = []
        self.ell_start: list[np.ndarray] | None = None
        self.ell_last: list[np.ndarray] | None = None
        self.request: Request | None = None
        self._phase = 0
        self.max_ratio = 1.0
        self.distinct_counts: list[int] = []
        self.best_g = math.inf
        self.best_k = -1
        self.best_policy: ProductPolicy = self.policy
        self.last_trigger = "none"
        if cfg.mode == "theory":
            condition_log(self.n, cfg.epsilon)

    @property
    def interval(self) -> int:
        return 1 if self.cfg.strategy == "full-comm" else self.cfg.interval

    def needs_round(self) -> bool:
        if not self.data:
            return True
        t_prime = self.k - self.round_start
        if self.cfg.mode == "practical":
            return t_prime >= self.interval
        if t_prime >= self.base_starts[-1] + self._last_span:
            self.last_trigger = "coverage"
            return True
        self.last_trigger = changing_condition([self.ell_start, self.ell_last], t_prime, self.n,
                                               self.cfg.epsilon, self.phi_max)
        return self.last_trigger != "none"

    def start_round(self) -> None:
        """Open a round at the current iterate: request data under the first base."""
        self.round_start = self.k
        self.data = []
        self._phase = 1
        raw = self.cfg.strategy != "bpp"
        first = self.policy if raw else floor_joint(self.policy, self.cfg.epsilon,
                                                     self.cfg.renormalize)
        self.bases = [first]
        self.base_starts = [0]
        self._last_span = self.interval
        self._make_request([first])

    def _make_request(self, policies: Sequence[ProductPolicy]) -> None:
        parts = [probe_request(p, self.N, self.rng) for p in policies]
        first_id = len(self.data)
        self.request = Request(
            profiles=np.concatenate([p for p, _ in parts]),
            agents=np.concatenate([a for _, a in parts]),
            base_ids=np.concatenate([np.full(a.size, first_id + b) for b, (_, a) in enumerate(parts)]),
            rewards=np.zeros(sum(a.size for _, a in parts)),
        )

    def pending(self) -> Request | None:
        return self.request if self.request is not None and not self.request.complete else None

    def next_probe(self) -> tuple[int, ...]:
        req = self.pending()
        if req is None:
            raise RuntimeError("no probe pending")
        return tuple(int(a) for a in req.profiles[req.filled])

    def feed(self, rewards) -> None:
        """Record rewards for the next ``len(rewards)`` pending probes."""
        req = self.pending()
        rewards = np.atleast_1d(np.asarray(rewards, float))
        if req is None or req.filled + rewards.size > req.size:
            raise RuntimeError("more rewards than pending probes")
        req.rewards[req.filled:req.filled + rewards.size] = rewards
        req.filled += rewards.size
        if req.complete:
            self._absorb()

    def fulfil(self, sampler: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> int:
        """Answer every pending request with ``sampler(profiles, agents)``; returns samples used."""
        used = 0
        while (req := self.pending()) is not None:
            rest = slice(req.filled, req.size)
            used += req.size - req.filled
            self.feed(sampler(req.profiles[rest], req.agents[rest]))
        return used

    def _absorb(self) -> None:
        req = self.request
        self.request = None
        for b in np.unique(req.base_ids):
            m = req.base_ids == b
            self.data.append(make_base_data(self.bases[b], req.profiles[m], req.agents[m],
                                            req.rewards[m], self.N))
        if self._phase == 1:
            self._phase = 2
            if self.cfg.strategy == "no-is":
                self.ell_start, _ = importance_estimates(self.data[0], self.policy, unit_weights=True)
            else:
                self.ell_start, ratio = importance_estimates(self.data[0], self.policy,
                                                             ratio_clip=self.cfg.ratio_clip)
                self._check_ratio(ratio)
            self.ell_last = self.ell_start
            if self.cfg.strategy == "bpp":
                self._predict_bases()

    def _predict_bases(self) -> None:
        cfg = self.cfg
        if cfg.mode == "practical":
            step = cfg.interval // cfg.num_base_policies
            starts = [b * step for b in range(cfg.num_base_policies)]
            preds = [floor_joint(predict_joint(self.policy, self.ell_start, self.eta, s),
                                 cfg.epsilon, cfg.renormalize) for s in starts[1:]]
            self.base_starts = starts
            self._last_span = cfg.interval - starts[-1]
            self.bases += preds
        else:
            remaining = (self.horizon - self.k) if self.horizon is not None else math.inf
            reach = math.ceil(elapsed_threshold(self.n, cfg.epsilon, self.phi_max))
            last = int(max(0, min(remaining - 1, reach)))
            preds = [self.bases[0]] + [
                floor_joint(predict_joint(self.policy, self.ell_start, self.eta, s),
                            cfg.epsilon, cfg.renormalize) for s in range(1, last + 1)]
            base_set = dedup_policies(preds, cfg.dedup_tol)
            self.base_starts = [e.start for e in base_set.entries]
            self._last_span = base_set.entries[-1].stop - base_set.entries[-1].start
            self.bases = [e.policy for e in base_set.entries]
        self.distinct_counts.append(len(self.bases))
        if len(self.bases) > 1:
            self._make_request(self.bases[1:])

    @property
    def ready(self) -> bool:
        return bool(self.data) and self.request is None and self._phase == 2

    def _check_ratio(self, ratio: float) -> None:
        self.max_ratio = max(self.max_ratio, ratio)
        if self.cfg.mode == "theory" and ratio > RATIO_BOUND:
            raise RatioBoundError(f"importance ratio {ratio:.3g} exceeds {RATIO_BOUND:.3g}")

    def current_estimate(self) -> list[np.ndarray]:
        offset = self.k - self.round_start
        if self.cfg.strategy == "no-is":
            return self.ell_start
        if offset == 0:
            return self.ell_start
        b = int(np.searchsorted(self.base_starts, offset, side="right")) - 1
        ells, ratio = importance_estimates(self.data[b], self.policy, ratio_clip=self.cfg.ratio_clip)
        self._check_ratio(ratio)
        return ells

    def step(self) -> tuple[list[np.ndarray], float]:
        """Advance one iterate; returns the marginal estimates used and the gap estimate."""
        if not self.ready:
            raise RuntimeError("learner has no complete data for this iterate")
        ells = self.current_estimate()
        new = npg_step_joint(self.policy, ells, self.eta)
        g = estimate_nash_gap(ells, new, self.policy)
        if g < self.best_g:
            self.best_g, self.best_k, self.best_policy = g, self.k, self.policy
        self.ell_last = ells
        self.policy = new
        self.k += 1
        return ells, g


@dataclass
class RunResult:
    """Per-iterate records of a run.

    Row ``k`` describes iterate ``k``: the exact expected rewards and potential
    of the policy at that iterate, the gap estimate computed from it, and the
    cumulative rounds and samples spent up to and including its update.
    """

    iterations: np.ndarray
    agent_rewards: np.ndarray
    potential: np.ndarray
    gap_estimate: np.ndarray
    rounds: np.ndarray
    samples: np.ndarray
    k_star: int
    policy: ProductPolicy
    final_policy: ProductPolicy
    ledger: CommLedger
    max_ratio: float = 1.0
    distinct_counts: list[int] = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    @property
    def reward(self) -> np.ndarray:
        return self.agent_rewards.mean(axis=1)

    def __len__(self) -> int:
        return self.iterations.size


def _exact_metrics(game: PotentialGame, policy: ProductPolicy) -> tuple[np.ndarray, float]:
    ells = exact_marginals(game, policy)
    rewards = np.array([p @ l for p, l in zip(policy, ells)])
    if game.potential is None:
        return rewards, math.nan
    return rewards, float(contract(game.potential, policy))


def run_pg(game: PotentialGame, config: PGRunConfig, rng: np.random.Generator | None = None,
           ledger: CommLedger | None = None, initial: ProductPolicy | None = None) -> RunResult:
    """Run ``config.T`` NPG iterations under the configured communication strategy."""
    cfg = config
    if cfg.mode == "theory" and game.potential is None:
        raise ConfigError("theory mode needs a potential table for phi_max")
    if cfg.mode == "theory" and cfg.epsilon > min(1 / game.n, 0.25):
        raise ConfigError("theory mode needs epsilon <= min(1/n, 1/4)")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    ledger = ledger if ledger is not None else CommLedger(max_rounds=cfg.max_rounds)
    learner = PGLearner(game.action_sizes, cfg, game.M, game.phi_max, rng, initial, horizon=cfg.T)
    oracle_ok = cfg.record_oracle and game.num_profiles <= DEFAULT_MAX_EVALUATIONS

    T, n = cfg.T, game.n
    agent_rewards = np.full((T, n), math.nan)
    potential = np.full(T, math.nan)
    gaps = np.zeros(T)
    rounds = np.zeros(T, dtype=np.int64)
    samples = np.zeros(T, dtype=np.int64)

    def sampler(profiles, agents):
        return _game_rewards(game, profiles, agents, rng)

    for k in range(T):
        if oracle_ok:
            agent_rewards[k], potential[k] = _exact_metrics(game, learner.policy)
        if learner.needs_round():
            learner.start_round()
            ledger.add_samples(learner.fulfil(sampler))
            ledger.round(k, f"{cfg.strategy}:{len(learner.bases)} bases")
        _, gaps[k] = learner.step()
        rounds[k], samples[k] = ledger.rounds, ledger.samples

    return RunResult(np.arange(T), agent_rewards, potential, gaps, rounds, samples,
                     learner.best_k, learner.best_policy, learner.policy, ledger,
                     learner.max_ratio, learner.distinct_counts)


def unknown_schedule(n: int, stage: int) -> tuple[float, int]:
    """Target accuracy and iteration count of a stage of the doubling protocol."""
    return 1.0 / (2 ** (stage - 1) * n), n * 2 ** stage


def theory_epsilon(eps: float, n: int) -> float:
    """Clamp a schedule accuracy into the range where the changing condition is defined."""
    return min(eps, 0.25, 1.0 / (2 * n))


def pg_unknown(game: PotentialGame, total_rounds: int, config: PGRunConfig | None = None,
               rng: np.random.Generator | None = None) -> RunResult:
    """Doubling protocol for an unknown horizon.

    Stage ``i`` runs ``n 2^i`` iterations at accuracy ``1 / (2^(i-1) n)``; the
    result is the output of stage ``floor(log2(total_rounds / 2n))`` (stage 1 when
    ``total_rounds < 2n``, flagged as degenerate).
    """
    if total_rounds < 1:
        raise ConfigError("total_rounds must be at least 1")
    cfg = config or PGRunConfig(mode="theory", strategy="bpp")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    n = game.n
    degenerate = total_rounds < 2 * n
    s = 1 if degenerate else max(1, int(math.floor(math.log2(total_rounds / (2 * n)))))
    ledger = CommLedger(max_rounds=cfg.max_rounds)
    parts: list[RunResult] = []
    stage_rounds = []
    for i in range(1, s + 1):
        eps, T = unknown_schedule(n, i)
        if cfg.mode == "theory":
            eps = theory_epsilon(eps, n)
        before = ledger.rounds
        parts.append(run_pg(game, replace(cfg, T=T, epsilon=eps), rng, ledger))
        stage_rounds.append(ledger.rounds - before)
    out = parts[-1]
    offset = sum(len(p) for p in parts[:-1])
    return RunResult(
        np.arange(offset + len(out)),
        np.concatenate([p.agent_rewards for p in parts]),
        np.concatenate([p.potential for p in parts]),
        np.concatenate([p.gap_estimate for p in parts]),
        np.concatenate([p.rounds for p in parts]),
        np.concatenate([p.samples for p in parts]),
        offset + out.k_star, out.policy, out.final_policy, ledger,
        max(p.max_ratio for p in parts), sum((p.distinct_counts for p in parts), []),
        {"stage": s, "degenerate": degenerate, "stage_rounds": stage_rounds},
    )


@dataclass(frozen=True)
class ExactTrajectory:
    policies: list[ProductPolicy]
    potential: np.ndarray
    gap_estimate: np.ndarray


def exact_npg_trajectory(game: PotentialGame, T: int, eta: float | None = None,
                         initial: ProductPolicy | None = None) -> ExactTrajectory:
    """NPG driven by oracle marginals; the noiseless reference dynamics.

    ``policies`` has ``T + 1`` entries; ``gap_estimate[k]`` is computed from the
    step out of iterate ``k``.
    """
    eta = eta if eta is not None else 1.0 / (2 * game.n * game.M)
    pol = initial if initial is not None else uniform_policy(game.action_sizes)
    policies = [pol]
    pots = [exact_potential_value(game, pol)] if game.potential is not None else [math.nan]
    gaps = []
    for _ in range(T):
        ells = exact_marginals(game, pol)
        new = npg_step_joint(pol, ells, eta)
        gaps.append(estimate_nash_gap(ells, new, pol))
        pol = new
        policies.append(pol)
        pots.append(exact_potential_value(game, pol) if game.potential is not None else math.nan)
    return ExactTrajectory(policies, np.array(pots), np.array(gaps))
