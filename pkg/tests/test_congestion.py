import numpy as np
import pytest

from bppmarl.congestion import (
    CongestionEvaluator,
    CongestionRunConfig,
    closed_form_rounds,
    congestion_marginals,
    run_congestion,
)
from bppmarl.games import CongestionConfig, congestion_stage_game
from bppmarl.oracle import exact_marginals
from bppmarl.pg import ConfigError, PGRunConfig
from bppmarl.policy import point_mass, uniform_policy

from conftest import random_simplex


def test_closed_form_marginals_match_oracle():
    cfg = CongestionConfig(n=4)
    rng = np.random.default_rng(0)
    for state in ("safe", "distancing"):
        g = congestion_stage_game(state, cfg)
        for _ in range(5):
            pol = tuple(random_simplex(rng, 4) for _ in range(4))
            for a, b in zip(congestion_marginals(state, cfg, pol), exact_marginals(g, pol)):
                np.testing.assert_allclose(a, b, atol=1e-12)


def test_evaluator_all_on_top_action():
    cfg = CongestionConfig(n=4)
    ev = CongestionEvaluator(cfg, horizon=4)
    top = point_mass([4] * 4, [3] * 4)
    reward, potential = ev((top, top))
    # first step safe (0.4 * 3), then distancing forever (0.2 * 3)
    assert reward == pytest.approx((1.2 + 3 * 0.6) / 4)
    assert potential == pytest.approx((0.4 * 6 + 3 * 0.2 * 6) / 4)


def test_evaluator_even_spread_stays_safe():
    cfg = CongestionConfig(n=4)
    ev = CongestionEvaluator(cfg, horizon=3)
    spread = point_mass([4] * 4, [0, 1, 2, 3])
    reward, _ = ev((spread, uniform_policy([4] * 4)))
    assert reward == 0.0


def small_run(strategy, episodes=40, seed=0):
    learner = PGRunConfig(strategy=strategy, interval=10, num_base_policies=2, N=2, eta=0.05,
                          epsilon=0.05)
    cfg = CongestionRunConfig(CongestionConfig(n=3), episodes, 5, learner)
    return run_congestion(cfg, np.random.default_rng(seed))


@pytest.mark.parametrize("strategy", ["full-comm", "no-is", "naive-is", "bpp"])
def test_ledger_closed_form(strategy):
    res = small_run(strategy)
    assert res.rounds[-1] == closed_form_rounds(40, strategy, 10)
    B = 2 if strategy == "bpp" else 1
    # both states refresh every round: N * bases * sum_i |A_i| per state
    assert res.samples[-1] == res.rounds[-1] * 2 * 2 * B * 3 * 4
    assert np.all(np.diff(res.rounds) >= 0)


def test_run_deterministic_and_learns():
    a, b = small_run("bpp", 120, seed=3), small_run("bpp", 120, seed=3)
    np.testing.assert_array_equal(a.reward, b.reward)
    assert a.reward[-1] > a.reward[0]


def test_rejects_theory_mode():
    with pytest.raises(ConfigError):
        CongestionRunConfig(learner=PGRunConfig(mode="theory", epsilon=0.01))
