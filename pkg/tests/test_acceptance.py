"""Exit criteria. Each test records one PASS/FAIL line shown in the terminal summary."""

import json
import math
import time

import numpy as np
import pytest

from bppmarl.config import PRESETS, preset
from bppmarl.games import (
    CongestionConfig,
    PotentialGame,
    congestion_mcg,
    congestion_stage_game,
    new_random_cooperative_pg,
    verify_potential,
)
from bppmarl.harness import read_metrics_csv, run_cell, run_experiment, write_metrics_csv
from bppmarl.mcg import MCGConfig, run_mcg, trigger_bound, uniform_tabular
from bppmarl.oracle import assumption_constants, exact_marginals, exact_mcg_gap, exact_pg_gap
from bppmarl.pg import (
    RATIO_BOUND,
    PGRunConfig,
    collect_base_dataset,
    estimate_marginals_is,
    exact_npg_trajectory,
    run_pg,
)
from bppmarl.policy import (
    best_action_stats,
    dedup_policies,
    floor_and_mix,
    floor_joint,
    predict_joint,
    tv_distance,
    uniform_policy,
)

from conftest import ACCEPTANCE_LINES, random_simplex

pytestmark = pytest.mark.acceptance


def report(k: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"CRITERION {k}: {'PASS' if ok else 'FAIL'} - {detail}")
    print(ACCEPTANCE_LINES[-1])


@pytest.fixture(scope="module")
def fig_pg(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig-pg")
    t0 = time.perf_counter()
    summary = run_experiment(preset("fig-pg"), out)
    return summary, time.perf_counter() - t0, out


@pytest.fixture(scope="module")
def fig_congestion(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig-congestion")
    t0 = time.perf_counter()
    summary = run_experiment(preset("fig-congestion"), out)
    return summary, time.perf_counter() - t0, out


def final_means(summary):
    return {s: v["final_reward"]["mean"] for s, v in summary["strategies"].items()}


def test_criterion_1_potential_verification():
    g = congestion_stage_game("safe", CongestionConfig())
    t0 = time.perf_counter()
    worst = verify_potential(g)
    elapsed = time.perf_counter() - t0
    ok = g.num_profiles == 65536 and worst <= 1e-9 and elapsed < 10
    report(1, ok, f"max violation {worst:.2e} over {g.num_profiles} profiles in {elapsed:.2f} s")
    assert ok


def test_criterion_2_exact_gradient_monotone():
    worst = math.inf
    for seed in range(20):
        g = new_random_cooperative_pg(3, [10, 10, 10], 0.0, 0.2, seed=seed)
        eta = 1 / (2 * g.n * g.M)
        traj = exact_npg_trajectory(g, 2000, eta)
        worst = min(worst, float(np.diff(traj.potential).min()))
    ok = worst >= -1e-12
    report(2, ok, f"smallest potential increment {worst:.3e} over 20 games x 2000 steps")
    assert ok


def test_criterion_3_is_estimator():
    rng = np.random.default_rng(2024)
    N = 10**5
    sizes = [3, 3, 3]
    passed = 0
    for trial in range(100):
        g = new_random_cooperative_pg(3, sizes, 0.0, 1.0, seed=1000 + trial)
        target = tuple(random_simplex(rng, m) for m in sizes)
        # mixing each opponent with weight 5^(-1/2) on the target caps the joint ratio at 5
        w = 5 ** -0.5
        base = tuple(w * t + (1 - w) * random_simplex(rng, m) for t, m in zip(target, sizes))
        agent = trial % 3
        opp = [j for j in range(3) if j != agent]
        ratio_max = float(np.max(np.multiply.outer(target[opp[0]] / base[opp[0]],
                                                   target[opp[1]] / base[opp[1]])))
        assert ratio_max <= 5
        data = collect_base_dataset(g, [base], N, rng)
        est, _ = estimate_marginals_is(data, 0, agent, target)
        truth = exact_marginals(g, target)[agent]
        bound = ratio_max * g.r_max * math.sqrt(math.log(2 / 0.001) / (2 * N))
        passed += bool(np.all(np.abs(est - truth) <= bound))
    ok = passed >= 99
    report(3, ok, f"{passed}/100 trials within the Hoeffding radius")
    assert ok


def test_criterion_4_theory_ratio_bound():
    g = new_random_cooperative_pg(3, [4, 4, 4], 0.0, 0.2, seed=7)
    res = run_pg(g, PGRunConfig(T=300, mode="theory", epsilon=1e-6, N=50, seed=3))
    ok = res.max_ratio <= RATIO_BOUND
    report(4, ok, f"largest ratio {res.max_ratio:.3g} vs bound {RATIO_BOUND:.3g} over 300 iterates, "
                  f"{res.rounds[-1]} rounds")
    assert ok


def test_criterion_5_fig_pg_ordering(fig_pg):
    summary, elapsed, _ = fig_pg
    m = final_means(summary)
    rounds = {s: [c["comm_rounds"] for c in v["cells"]] for s, v in summary["strategies"].items()}
    rel = abs(m["bpp"] - m["full-comm"]) / m["full-comm"]
    checks = {
        "bpp>=naive-is": m["bpp"] >= m["naive-is"],
        "bpp>=no-is": m["bpp"] >= m["no-is"],
        "within 5% of full-comm": rel <= 0.05,
        "bpp rounds 10": all(r == 10 for r in rounds["bpp"]),
        "full-comm rounds 5000": all(r == 5000 for r in rounds["full-comm"]),
        "runtime < 120 s": elapsed < 120,
    }
    failed = [k for k, v in checks.items() if not v]
    detail = ", ".join(f"{s} {v:.5f}" for s, v in m.items()) + \
        f"; rel gap {rel:.3%}; {elapsed:.0f} s" + (f"; failed: {failed}" if failed else "")
    report(5, not failed, detail)
    assert not failed


def test_criterion_6_fig_congestion_ordering(fig_congestion):
    summary, elapsed, _ = fig_congestion
    m = final_means(summary)
    checks = {
        "bpp>naive-is": m["bpp"] > m["naive-is"],
        "no-is<bpp": m["no-is"] < m["bpp"],
        "runtime < 120 s": elapsed < 120,
    }
    failed = [k for k, v in checks.items() if not v]
    detail = ", ".join(f"{s} {v:.4f}" for s, v in m.items()) + f"; {elapsed:.0f} s" + \
        (f"; failed: {failed}" if failed else "")
    report(6, not failed, detail)
    assert not failed


def test_criterion_7_gap_sandwich():
    rng = np.random.default_rng(77)
    eta = 0.5
    violations = iterates = 0
    for seed in range(10):
        sizes = tuple(int(m) for m in rng.integers(2, 6, size=2))
        g = new_random_cooperative_pg(2, sizes, 0.0, 1.0, seed=500 + seed)
        init = tuple(random_simplex(rng, m) for m in sizes)
        traj = exact_npg_trajectory(g, 100, eta, init)
        for k in range(100):
            pol = traj.policies[k]
            gap = exact_pg_gap(g, pol).gap_sum
            c, d = assumption_constants(g, pol)
            factor = 1 + 1 / (c.min() * d.min() * eta)
            gk = traj.gap_estimate[k]
            iterates += 1
            violations += not (gk <= gap + 1e-9 and gap <= factor * gk + 1e-9)
    ok = violations == 0
    report(7, ok, f"{violations} violations over {iterates} iterates of 10 games")
    assert ok


def test_criterion_8_flooring_and_dedup():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(1000):
        p = random_simplex(rng, int(rng.integers(2, 20)), concentration=0.3)
        for eps in (0.1, 0.01, 0.001):
            worst = max(worst, tv_distance(floor_and_mix(p, eps), p) / (2 * eps))
    tv_ok = worst <= 1.0

    # every agent is paid its own action value, so exact marginals do not depend on others
    v = np.array([0.5] + [0.4] * 9)
    rewards = np.stack([np.broadcast_to(v[:, None], (10, 10)), np.broadcast_to(v[None, :], (10, 10))])
    g = PotentialGame((10, 10), rewards, v[:, None] + v[None, :])
    eta, eps = 0.25, 0.1
    p0 = uniform_policy(g.action_sizes)
    ells = exact_marginals(g, p0)
    delta = min(best_action_stats(e, p)[1] for e, p in zip(ells, p0))
    preds = [floor_joint(predict_joint(p0, ells, eta, t), eps) for t in range(400)]
    count = dedup_policies(preds, 1e-9).distinct
    bound = 2 * g.n * g.M * math.log(10 / eps) / delta
    ok = tv_ok and g.M == 1 and eta == 1 / (2 * g.n * g.M) and count <= bound
    report(8, ok, f"max TV/(2 eps) {worst:.3f}; |Pi_t| = {count} <= {bound:.1f} (Delta {delta:.2f})")
    assert ok


def test_criterion_9_mcg_soundness():
    doc = PRESETS["mcg-small"]
    mcg = congestion_mcg(CongestionConfig(n=2, weights_safe=tuple(doc["game"]["weights_safe"])),
                         doc["game"]["H"])
    assert (mcg.S, mcg.H, mcg.n, mcg.action_sizes) == (2, 2, 2, (2, 2))
    cfg = MCGConfig(seed=0, **doc["algorithm"])
    t0 = time.perf_counter()
    res = run_mcg(mcg, cfg, np.random.default_rng(0))
    elapsed = time.perf_counter() - t0
    gap = exact_mcg_gap(mcg, res.policy).gap
    uniform = exact_mcg_gap(mcg, uniform_tabular(mcg)).gap
    bound = trigger_bound(mcg.S, mcg.H, cfg.T)
    ok = gap <= uniform and gap <= 0.1 and res.triggers <= bound and elapsed < 60
    report(9, ok, f"gap {gap:.4f} (uniform {uniform:.4f}); triggers {res.triggers} <= {bound}; "
                  f"{elapsed:.1f} s")
    assert ok


def test_criterion_10_determinism_and_ledger(fig_pg, fig_congestion, tmp_path):
    problems = []
    # byte-identical reruns: the whole mcg-small preset, and one fig-pg cell
    run_experiment(preset("mcg-small"), tmp_path / "a")
    run_experiment(preset("mcg-small"), tmp_path / "b")
    for p in sorted((tmp_path / "a").iterdir()):
        if p.read_bytes() != (tmp_path / "b" / p.name).read_bytes():
            problems.append(f"{p.name} differs")
    summary_pg, _, out_pg = fig_pg
    cell = run_cell(preset("fig-pg"), "bpp", 0)
    write_metrics_csv(cell.rows, tmp_path / "rerun.csv")
    if (tmp_path / "rerun.csv").read_bytes() != (out_pg / "fig-pg_bpp_seed0.csv").read_bytes():
        problems.append("fig-pg bpp seed 0 differs on rerun")

    for summary, T, K in [(summary_pg, 5000, 500), (fig_congestion[0], 500, 30)]:
        for s, v in summary["strategies"].items():
            expected = T if s == "full-comm" else math.ceil(T / K)
            for c in v["cells"]:
                if c["comm_rounds"] != expected:
                    problems.append(f"{summary['name']} {s} seed {c['seed']}: {c['comm_rounds']} != {expected}")
    mcg_summary = json.loads((tmp_path / "a" / "mcg-small_summary.json").read_text())
    for c in mcg_summary["strategies"]["bpp"]["cells"]:
        if not c["ledger_ok"]:
            problems.append("mcg audit mismatch")
    cols = read_metrics_csv(tmp_path / "a" / "mcg-small_bpp_seed0.csv")
    if cols["comm_rounds"][-1] != mcg_summary["strategies"]["bpp"]["cells"][0]["expected_rounds"]:
        problems.append("mcg csv rounds differ from audit total")
    report(10, not problems, "reruns byte-identical, ledgers match closed forms" if not problems
           else "; ".join(problems[:5]))
    assert not problems
