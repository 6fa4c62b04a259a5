"""Brute-force ground truth for small instances.

Everything here enumerates the joint action space, so cost is exponential
in the number of agents. Calls refuse instances above ``max_evaluations``.
"""

from __future__ import annotations

import itertools
import string
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .games import MCGModel, PotentialGame
from .policy import ProductPolicy, best_action_stats

DEFAULT_MAX_EVALUATIONS = 10**7

_LETTERS = string.ascii_lowercase


class OracleError(ValueError):
    """Raised when an instance is malformed or too large to enumerate."""


@dataclass(frozen=True)
class ValueReport:
    """Exact values of a product policy.

    ``gap`` is the largest single-agent improvement; ``gap_sum`` adds the
    improvements over agents.
    """

    value: float
    agent_values: tuple[float, ...]
    best_response_values: tuple[float, ...]
    gap: float
    gap_sum: float


def _guard(count: int, cap: int | None) -> None:
    cap = DEFAULT_MAX_EVALUATIONS if cap is None else cap
    if count > cap:
        raise OracleError(f"instance needs {count} evaluations, above the cap of {cap}; "
                          "raise max_evaluations to force it")


def _check_dims(policy: Sequence[np.ndarray], sizes: Sequence[int], per_state: tuple = ()) -> None:
    if len(policy) != len(sizes):
        raise OracleError(f"policy has {len(policy)} agents, game has {len(sizes)}")
    for i, (p, m) in enumerate(zip(policy, sizes)):
        if np.shape(p) != per_state + (m,):
            raise OracleError(f"agent {i}: policy shape {np.shape(p)} != {per_state + (m,)}")


def contract(table: np.ndarray, vectors: Sequence[np.ndarray], keep: int | None = None,
             lead: str = "") -> np.ndarray:
    """Contract the trailing agent axes of ``table`` with per-agent vectors.

    ``lead`` names leading batch axes shared by the table and every vector;
    agent ``keep`` (if given) is left uncontracted and becomes the last axis.
    """
    n = len(vectors)
    agent = _LETTERS[len(lead):len(lead) + n]
    operands = [table]
    subs = [lead + agent]
    for j, v in enumerate(vectors):
        if j == keep:
            continue
        operands.append(v)
        subs.append(lead + agent[j])
    out = lead + (agent[keep] if keep is not None else "")
    return np.einsum(",".join(subs) + "->" + out, *operands, optimize=True)


def joint_probabilities(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Outer product of per-agent vectors sharing one leading batch axis."""
    n = len(vectors)
    agent = _LETTERS[1:n + 1]
    subs = ",".join("z" + c for c in agent)
    return np.einsum(subs + "->z" + agent, *vectors)


def exact_marginal_reward(game: PotentialGame, agent: int, policy: ProductPolicy,
                          max_evaluations: int | None = None) -> np.ndarray:
    """``ell_i(a_i) = E_{a_-i ~ pi_-i} r_i(a_i, a_-i)`` for every action of ``agent``."""
    _check_dims(policy, game.action_sizes)
    _guard(game.num_profiles, max_evaluations)
    return contract(game.rewards[agent], policy, keep=agent)


def exact_marginals(game: PotentialGame, policy: ProductPolicy,
                    max_evaluations: int | None = None) -> list[np.ndarray]:
    return [exact_marginal_reward(game, i, policy, max_evaluations) for i in range(game.n)]


def exact_potential_value(game: PotentialGame, policy: ProductPolicy,
                          max_evaluations: int | None = None) -> float:
    if game.potential is None:
        raise OracleError("game has no potential table")
    _check_dims(policy, game.action_sizes)
    _guard(game.num_profiles, max_evaluations)
    return float(contract(game.potential, policy))


def exact_pg_gap(game: PotentialGame, policy: ProductPolicy,
                 max_evaluations: int | None = None) -> ValueReport:
    ells = exact_marginals(game, policy, max_evaluations)
    own = [float(p @ l) for p, l in zip(policy, ells)]
    best = [float(l.max()) for l in ells]
    gains = [b - o for b, o in zip(best, own)]
    value = float(np.mean(own))
    return ValueReport(value, tuple(own), tuple(best), max(gains), float(sum(gains)))


def assumption_constants(game: PotentialGame, policy: ProductPolicy,
                         max_evaluations: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-agent mass on best actions ``c_i`` and best-vs-second marginal gap ``Delta_i``."""
    ells = exact_marginals(game, policy, max_evaluations)
    stats = [best_action_stats(l, p) for l, p in zip(ells, policy)]
    return np.array([s[0] for s in stats]), np.array([s[1] for s in stats])


def _mcg_guard(mcg: MCGModel, policy, cap: int | None) -> None:
    _check_dims(policy, mcg.action_sizes, (mcg.H, mcg.S))
    _guard(mcg.H * mcg.S * mcg.num_profiles * mcg.S, cap)


def q_values(mcg: MCGModel, h: int, v_next: np.ndarray) -> np.ndarray:
    """``Q_h(s, a) = r_h(s, a) + sum_s' P_h(s'|s, a) v_next(s')``, shape ``(S, *sizes)``."""
    return mcg.rewards[h] + mcg.transitions[h] @ v_next


def value_table(mcg: MCGModel, policy: ProductPolicy,
                max_evaluations: int | None = None) -> np.ndarray:
    """``V[h, s]`` for ``h = 0..H`` (row ``H`` is zero)."""
    _mcg_guard(mcg, policy, max_evaluations)
    V = np.zeros((mcg.H + 1, mcg.S))
    for h in reversed(range(mcg.H)):
        V[h] = contract(q_values(mcg, h, V[h + 1]), [p[h] for p in policy], lead="z")
    return V


def exact_mcg_value(mcg: MCGModel, policy: ProductPolicy,
                    max_evaluations: int | None = None) -> float:
    return float(value_table(mcg, policy, max_evaluations)[0, mcg.s1])


def best_response_table(mcg: MCGModel, policy: ProductPolicy, agent: int,
                        max_evaluations: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Best-response values ``V[h, s]`` and the greedy deterministic response ``(H, S)``.

    A Markov best response exists against Markov opponents, so maximising per
    ``(h, s)`` covers every history-dependent deviation as well.
    """
    _mcg_guard(mcg, policy, max_evaluations)
    V = np.zeros((mcg.H + 1, mcg.S))
    act = np.zeros((mcg.H, mcg.S), dtype=np.intp)
    for h in reversed(range(mcg.H)):
        q = contract(q_values(mcg, h, V[h + 1]), [p[h] for p in policy], keep=agent, lead="z")
        V[h] = q.max(axis=-1)
        act[h] = q.argmax(axis=-1)
    return V, act


def exact_best_response_value(mcg: MCGModel, policy: ProductPolicy, agent: int,
                              max_evaluations: int | None = None) -> float:
    return float(best_response_table(mcg, policy, agent, max_evaluations)[0][0, mcg.s1])


def exact_mcg_gap(mcg: MCGModel, policy: ProductPolicy,
                  max_evaluations: int | None = None) -> ValueReport:
    v = exact_mcg_value(mcg, policy, max_evaluations)
    best = [exact_best_response_value(mcg, policy, i, max_evaluations) for i in range(mcg.n)]
    gains = [b - v for b in best]
    return ValueReport(v, (v,) * mcg.n, tuple(best), max(gains), float(sum(gains)))


def deterministic_deviation_values(mcg: MCGModel, policy: ProductPolicy, agent: int) -> np.ndarray:
    """Values of every deterministic Markov deviation of ``agent`` (exhaustive, tests only)."""
    m = mcg.action_sizes[agent]
    cells = mcg.H * mcg.S
    _guard(m ** cells * cells * mcg.num_profiles, None)
    out = []
    for choice in itertools.product(range(m), repeat=cells):
        dev = np.zeros((mcg.H, mcg.S, m))
        dev.reshape(cells, m)[np.arange(cells), choice] = 1.0
        pol = tuple(dev if j == agent else p for j, p in enumerate(policy))
        out.append(exact_mcg_value(mcg, pol))
    return np.array(out)


def state_distribution(mcg: MCGModel, policy: ProductPolicy,
                       max_evaluations: int | None = None) -> np.ndarray:
    """Exact state occupancy ``d[h, s]`` of each step under ``policy``."""
    _mcg_guard(mcg, policy, max_evaluations)
    d = np.zeros((mcg.H, mcg.S))
    d[0, mcg.s1] = 1.0
    for h in range(mcg.H - 1):
        jp = joint_probabilities([p[h] for p in policy])
        axes = tuple(range(1, mcg.n + 1))
        step = (jp[..., None] * mcg.transitions[h]).sum(axis=axes)
        d[h + 1] = d[h] @ step
    return d


def mixture_state_distribution(mcg: MCGModel, snapshots: Sequence[ProductPolicy],
                               weights: Sequence[float]) -> np.ndarray:
    return sum(w * state_distribution(mcg, p) for p, w in zip(snapshots, weights))
