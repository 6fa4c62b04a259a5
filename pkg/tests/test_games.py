import itertools
import json
import math

import numpy as np
import pytest

from bppmarl.games import (
    EXACT,
    CongestionConfig,
    GameError,
    NoiseSpec,
    PotentialGame,
    congestion_mcg,
    congestion_stage_game,
    congestion_transition,
    game_from_dict,
    game_to_dict,
    mcg_from_tables,
    new_random_cooperative_pg,
    sample_reward,
    sample_rewards,
    verify_potential,
)


def test_random_coop_shapes_and_range():
    g = new_random_cooperative_pg(3, [10, 10, 10], 0.0, 0.2, seed=7)
    assert g.rewards[0].size == 1000
    assert g.rewards.min() >= 0 and g.rewards.max() <= 0.2
    assert g.phi_max == 0.2
    np.testing.assert_array_equal(g.rewards[0], g.rewards[2])
    np.testing.assert_array_equal(g.potential, g.rewards[0])
    assert g.M == 1.0


def test_random_coop_near_constant():
    g = new_random_cooperative_pg(2, [2, 2], 0.5, 0.5 + 1e-9, seed=3)
    np.testing.assert_allclose(g.rewards, 0.5, atol=1e-9)


def test_random_coop_is_exact_potential():
    g = new_random_cooperative_pg(2, [2, 2], 0.0, 1.0, seed=1)
    assert verify_potential(g) == 0.0


@pytest.mark.parametrize("args", [
    (1, [2], 0.0, 1.0), (2, [2, 1], 0.0, 1.0), (2, [2, 2], 0.5, 0.5), (2, [2, 2], -0.1, 1.0),
    (2, [2, 2, 2], 0.0, 1.0),
])
def test_random_coop_rejects_bad_args(args):
    with pytest.raises(GameError):
        new_random_cooperative_pg(*args, seed=0)


def test_random_coop_seeded():
    a = new_random_cooperative_pg(3, [4, 4, 4], 0, 1, seed=5)
    b = new_random_cooperative_pg(3, [4, 4, 4], 0, 1, seed=5)
    np.testing.assert_array_equal(a.rewards, b.rewards)


def test_congestion_rewards_count_other_agents():
    cfg = CongestionConfig()
    g = congestion_stage_game("safe", cfg)
    profile = (0, 0, 0, 0, 0, 1, 2, 3)
    for i in range(5):
        assert g.reward(i, profile) == pytest.approx(4 * 0.1)
    for i in range(5, 8):
        assert g.reward(i, profile) == 0.0


def test_congestion_two_agents_apart():
    g = congestion_stage_game("safe", CongestionConfig(n=2))
    assert g.reward(0, (0, 1)) == 0.0 and g.reward(1, (0, 1)) == 0.0
    assert g.reward(0, (3, 3)) == pytest.approx(0.4)


def test_congestion_distancing_halves_rewards():
    cfg = CongestionConfig(n=3)
    safe = congestion_stage_game("safe", cfg)
    dist = congestion_stage_game("distancing", cfg)
    np.testing.assert_allclose(dist.rewards, 0.5 * safe.rewards)


def test_rosenthal_potential_matches_hand_formula():
    cfg = CongestionConfig(n=4)
    g = congestion_stage_game("safe", cfg)
    w = np.array(cfg.weights_safe)
    for prof in itertools.product(range(4), repeat=4):
        counts = np.bincount(prof, minlength=4)
        assert g.potential[prof] == pytest.approx(float(w @ (counts * (counts - 1) / 2)))


def test_rosenthal_deviation_identity_by_hand():
    # moving one agent from a to b changes phi by w_b n_b - w_a (n_a - 1)
    cfg = CongestionConfig(n=5)
    g = congestion_stage_game("safe", cfg)
    w = cfg.weights_safe
    prof = (0, 0, 1, 1, 1)
    moved = (3, 0, 1, 1, 1)
    n_a, n_b = 2, 0
    assert g.potential[moved] - g.potential[prof] == pytest.approx(w[3] * n_b - w[0] * (n_a - 1))


def test_congestion_potential_verified_small():
    assert verify_potential(congestion_stage_game("distancing", CongestionConfig(n=4))) <= 1e-9


@pytest.mark.parametrize("kwargs", [
    dict(weights_safe=(0.2, 0.1, 0.3, 0.4)), dict(weights_safe=(0.1, 0.1, 0.3, 0.4)),
    dict(distancing_multiplier=1.0), dict(distancing_multiplier=0.0), dict(n=1),
    dict(initial_state="crowded"),
])
def test_congestion_config_validation(kwargs):
    with pytest.raises(GameError):
        CongestionConfig(**kwargs)


@pytest.mark.parametrize("profile,current,expected", [
    ((0, 0, 0, 0, 0, 1, 2, 3), "safe", "distancing"),
    ((0, 0, 1, 1, 2, 2, 3, 3), "distancing", "safe"),
    ((0, 0, 0, 0, 1, 1, 1, 1), "safe", "safe"),
    ((0, 0, 0, 0, 1, 1, 1, 1), "distancing", "distancing"),
    ((0, 0, 0, 1, 1, 2, 2, 3), "distancing", "distancing"),
    ((0, 0, 1, 1, 2, 2, 3), "distancing", "safe"),
    ((0, 0, 0, 1, 1, 1, 2, 3), "safe", "safe"),
])
def test_congestion_transition(profile, current, expected):
    assert congestion_transition(profile, current) == expected
    assert congestion_transition(profile, current) == expected


def test_verify_potential_detects_perturbation():
    g = new_random_cooperative_pg(2, [3, 3], 0.0, 0.5, seed=2)
    r = np.array(g.rewards)
    r[0, 1, 2] += 0.1
    bad = PotentialGame(g.action_sizes, r, g.potential)
    assert verify_potential(bad) >= 0.1 - 1e-9


def test_verify_potential_needs_table():
    g = PotentialGame((2, 2), np.zeros((2, 2, 2)))
    with pytest.raises(GameError):
        verify_potential(g)


def test_sample_reward_exact_channel():
    r = np.full((2, 2, 2), 0.13)
    g = PotentialGame((2, 2), r, noise=EXACT, r_max=0.2)
    assert sample_reward(g, 0, (1, 0), np.random.default_rng(0)) == 0.13


def test_sample_reward_bernoulli_mean():
    r = np.full((2, 2, 2), 0.1)
    g = PotentialGame((2, 2), r, r_max=0.2)
    rng = np.random.default_rng(0)
    draws = sample_rewards(g, 0, np.zeros((10**6, 2), dtype=int), rng)
    assert set(np.unique(draws)) <= {0.0, 0.2}
    assert abs(draws.mean() - 0.1) <= 0.001


def test_sample_reward_zero_mean_always_zero():
    g = PotentialGame((2, 2), np.zeros((2, 2, 2)), r_max=1.0)
    rng = np.random.default_rng(1)
    assert not sample_rewards(g, 1, np.ones((1000, 2), dtype=int), rng).any()


def test_sample_reward_hoeffding_band():
    g = new_random_cooperative_pg(2, [3, 3], 0.0, 0.2, seed=4)
    rng = np.random.default_rng(2)
    draws = 10**5
    est = sample_rewards(g, 0, np.tile([1, 2], (draws, 1)), rng).mean()
    bound = 3 * g.r_max / math.sqrt(2 * draws) * math.sqrt(math.log(2 / 0.001))
    assert abs(est - g.rewards[0, 1, 2]) <= bound


def test_custom_noise_is_checked():
    noise = NoiseSpec("custom-bounded", sampler=lambda m, rng: m + rng.uniform(-0.01, 0.01, m.shape))
    g = PotentialGame((2,), np.array([[0.5, 0.5]]), noise=noise, r_max=1.0)
    assert 0.49 <= sample_reward(g, 0, (0,), np.random.default_rng(0)) <= 0.51
    out_of_range = NoiseSpec("custom-bounded", sampler=lambda m, rng: m + 2.0)
    with pytest.raises(GameError):
        sample_reward(g.with_noise(out_of_range), 0, (0,), np.random.default_rng(0))


def test_mcg_from_tables_valid_and_invalid():
    m = mcg_from_tables(1, [1], 1, 1, np.ones((1, 1, 1, 1)), np.full((1, 1, 1), 0.7))
    assert m.S == 1 and m.H == 1
    P = np.ones((1, 2, 2, 2)) * 0.5
    P[0, 0, 0, 1] = 0.4
    with pytest.raises(GameError):
        mcg_from_tables(1, [2], 2, 1, P, np.zeros((1, 2, 2)))
    with pytest.raises(GameError):
        mcg_from_tables(1, [2], 2, 1, np.full((1, 2, 2, 2), 0.5), np.full((1, 2, 2), 1.5))
    with pytest.raises(GameError):
        mcg_from_tables(1, [2], 2, 1, np.full((1, 2, 3, 2), 0.5), np.zeros((1, 2, 2)))


def test_congestion_mcg_assembles():
    cfg = CongestionConfig(n=3)
    m = congestion_mcg(cfg, H=3)
    assert m.transitions.shape == (3, 2, 4, 4, 4, 2)
    np.testing.assert_allclose(m.transitions.sum(-1), 1.0)
    assert m.rewards.max() == pytest.approx(1.0) and m.rewards.min() >= 0
    # majority on one action sends both states to distancing
    assert m.transitions[0, 0, 1, 1, 2, 1] == 1.0


def test_json_round_trip(tmp_path):
    g = new_random_cooperative_pg(2, [3, 2], 0.0, 0.4, seed=9)
    doc = json.loads(json.dumps(game_to_dict(g)))
    h = game_from_dict(doc)
    np.testing.assert_array_equal(h.rewards, g.rewards)
    np.testing.assert_array_equal(h.potential, g.potential)
    assert h.r_max == g.r_max


def test_json_generator_specs():
    g = game_from_dict({"kind": "random-coop", "n": 2, "action_sizes": [3, 3], "lo": 0, "hi": 0.2,
                        "seed": 1})
    assert g.rewards.shape == (2, 3, 3)
    c = game_from_dict({"kind": "congestion", "n": 3, "state": "distancing"})
    assert c.rewards.shape == (3, 4, 4, 4)
    with pytest.raises(GameError):
        game_from_dict({"kind": "nope"})
