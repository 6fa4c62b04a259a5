"""Product-policy arithmetic: exponential-weights steps, base-policy
prediction, flooring, deduplication and distribution distances.

A product policy is a tuple of per-agent probability vectors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

log = logging.getLogger(__name__)

ProductPolicy = tuple[np.ndarray, ...]
SIMPLEX_TOL = 1e-9
UNDERFLOW = 1e-300


class PolicyError(ValueError):
    """Raised for invalid probability vectors or parameters."""


def as_policy(vectors: Sequence[Sequence[float]]) -> ProductPolicy:
    """Validate and freeze a sequence of per-agent probability vectors."""
    out = []
    for i, v in enumerate(vectors):
        p = np.array(v, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise PolicyError(f"agent {i}: expected a non-empty vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
            raise PolicyError(f"agent {i}: not a probability vector (sum={p.sum()})")
        p.setflags(write=False)
        out.append(p)
    return tuple(out)


def uniform_policy(action_sizes: Sequence[int]) -> ProductPolicy:
    return tuple(np.full(int(m), 1.0 / int(m)) for m in action_sizes)


def point_mass(action_sizes: Sequence[int], profile: Sequence[int]) -> ProductPolicy:
    out = []
    for m, a in zip(action_sizes, profile):
        p = np.zeros(int(m))
        p[int(a)] = 1.0
        out.append(p)
    return tuple(out)


def _clean(p: np.ndarray) -> np.ndarray:
    """Zero out denormal-scale entries and renormalise."""
    tiny = (p > 0) & (p < UNDERFLOW)
    if tiny.any():
        log.debug("clamping %d probabilities below %g", int(tiny.sum()), UNDERFLOW)
        p = np.where(tiny, 0.0, p)
    return p / p.sum()


def _exp_weights(policy_i: np.ndarray, scores: np.ndarray) -> np.ndarray:
    p = np.asarray(policy_i, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if p.shape != scores.shape:
        raise PolicyError(f"shape mismatch {p.shape} vs {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise PolicyError("non-finite marginal estimate")
    with np.errstate(divide="ignore"):
        logits = np.log(p) + scores
    support = p > 0
    logits = np.where(support, logits, -np.inf)
    logits -= logits[support].max()
    return _clean(np.exp(logits))


def npg_step(policy_i: np.ndarray, ell: np.ndarray, eta: float) -> np.ndarray:
    """One natural-policy-gradient step: ``p'(a) ∝ p(a) exp(eta * ell(a))``."""
    if eta <= 0:
        raise PolicyError("eta must be positive")
    return _exp_weights(policy_i, eta * np.asarray(ell, dtype=float))


def npg_step_joint(policy: ProductPolicy, ells: Sequence[np.ndarray], eta: float) -> ProductPolicy:
    return tuple(npg_step(p, l, eta) for p, l in zip(policy, ells))


def predict_base_policy(policy_at_t: np.ndarray, ell_hat_at_t: np.ndarray, eta: float,
                        t_prime: int) -> np.ndarray:
    """Extrapolate ``t_prime`` steps ahead holding the marginal estimate fixed."""
    if t_prime < 0:
        raise PolicyError("t_prime must be non-negative")
    if eta <= 0:
        raise PolicyError("eta must be positive")
    return _exp_weights(policy_at_t, eta * t_prime * np.asarray(ell_hat_at_t, dtype=float))


def predict_joint(policy: ProductPolicy, ells: Sequence[np.ndarray], eta: float,
                  t_prime: int) -> ProductPolicy:
    return tuple(predict_base_policy(p, l, eta, t_prime) for p, l in zip(policy, ells))


def floor_and_mix(tilde_policy: np.ndarray, epsilon: float,
                  renormalize: Literal["proportional", "post"] = "proportional") -> np.ndarray:
    """Raise every action at or below ``epsilon/|A|`` to exactly that floor.

    With ``proportional`` the remaining actions share ``1 - epsilon*|F|/|A|``
    in proportion to their mass, which sums to one exactly and keeps the
    floored entries at the floor. ``post`` scales the remaining actions by
    ``1 - epsilon*|F|/|A|`` and renormalises the whole vector afterwards.
    """
    p = np.asarray(tilde_policy, dtype=float)
    if not 0 < epsilon <= 1:
        raise PolicyError(f"epsilon {epsilon} outside (0, 1]")
    m = p.size
    floor = epsilon / m
    low = p <= floor
    if not low.any():
        return p / p.sum()
    scale = 1.0 - epsilon * low.sum() / m
    if renormalize == "post":
        out = np.where(low, floor, scale * p)
        return out / out.sum()
    if renormalize != "proportional":
        raise PolicyError(f"unknown renormalize mode {renormalize!r}")
    rest = p[~low].sum()
    if rest <= 0:
        return np.full(m, 1.0 / m)
    return np.where(low, floor, scale * p / rest)


def floor_joint(policy: ProductPolicy, epsilon: float,
                renormalize: Literal["proportional", "post"] = "proportional") -> ProductPolicy:
    return tuple(floor_and_mix(p, epsilon, renormalize) for p in policy)


@dataclass(frozen=True)
class BaseEntry:
    """A base policy together with the half-open offset range ``[start, stop)`` it covers."""

    start: int
    stop: int
    policy: ProductPolicy


@dataclass(frozen=True)
class PredictedBaseSet:
    entries: tuple[BaseEntry, ...]

    @property
    def distinct(self) -> int:
        return len(self.entries)

    def index_for(self, offset: int) -> int:
        for b, e in enumerate(self.entries):
            if e.start <= offset < e.stop:
                return b
        raise IndexError(f"offset {offset} not covered")

    @property
    def horizon(self) -> int:
        return self.entries[-1].stop if self.entries else 0


def policies_close(p: ProductPolicy, q: ProductPolicy, tol: float) -> bool:
    return all(np.max(np.abs(a - b)) <= tol for a, b in zip(p, q))


def dedup_policies(predicted: Sequence[ProductPolicy], tol: float = 1e-9,
                   offsets: Sequence[int] | None = None) -> PredictedBaseSet:
    """Merge consecutive predictions within ``tol`` (L-inf per agent) of the run's first member.

    ``offsets`` gives the starting offset of each prediction (default 0, 1, ...);
    each entry covers offsets up to the next prediction's start.
    """
    if tol < 0:
        raise PolicyError("tol must be non-negative")
    if offsets is None:
        offsets = list(range(len(predicted)))
    bounds = list(offsets) + [offsets[-1] + 1 if len(offsets) else 0]
    entries: list[BaseEntry] = []
    for k, pol in enumerate(predicted):
        if entries and policies_close(entries[-1].policy, pol, tol):
            last = entries[-1]
            entries[-1] = BaseEntry(last.start, bounds[k + 1], last.policy)
        else:
            entries.append(BaseEntry(bounds[k], bounds[k + 1], pol))
    return PredictedBaseSet(tuple(entries))


def tv_distance(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


def kl_divergence(p, q) -> float:
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    support = p > 0
    if np.any(q[support] <= 0):
        raise PolicyError("KL undefined: q has zero mass where p is positive")
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def product_kl(pi: ProductPolicy, pi_prime: ProductPolicy) -> float:
    return sum(kl_divergence(p, q) for p, q in zip(pi, pi_prime))


def product_policy_sample(policy: ProductPolicy, rng: np.random.Generator) -> tuple[int, ...]:
    return tuple(int(rng.choice(p.size, p=p)) for p in policy)


def sample_actions(p: np.ndarray, size: int | tuple, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws from a single probability vector."""
    cdf = np.cumsum(p)
    idx = np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right")
    return np.minimum(idx, p.size - 1)


def sample_profiles(policy: ProductPolicy, m: int, rng: np.random.Generator) -> np.ndarray:
    """``(m, n)`` array of independent joint-action draws."""
    out = np.empty((m, len(policy)), dtype=np.intp)
    for i, p in enumerate(policy):
        out[:, i] = sample_actions(p, m, rng)
    return out


def best_action_stats(ell: np.ndarray, p: np.ndarray, tol: float = 1e-12) -> tuple[float, float]:
    """Mass on the argmax actions of ``ell`` and the best-minus-second-best gap.

    The gap is ``inf`` when every action is optimal.
    """
    ell = np.asarray(ell, float)
    top = ell.max()
    best = ell >= top - tol
    c = float(np.asarray(p)[best].sum())
    rest = ell[~best]
    delta = float(top - rest.max()) if rest.size else float("inf")
    return c, delta
