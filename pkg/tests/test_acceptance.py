"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines inline.
"""

import itertools
import time

import numpy as np
import pytest

from conftest import diamond_net, grid_and_ttm, participant
from hopmatch.bip import MatchSolution, build_model, validate_solution
from hopmatch.decomp import run_decomposition
from hopmatch.harness import (
    METHODS,
    RollingConfig,
    rolling_horizon,
    run_method,
    solve_monolithic,
)
from hopmatch.net import build_grid_network, link_universe, static_travel_time
from hopmatch.prep import forward_links, link_reduction, preprocess
from hopmatch.solver import SearchLimits, solve_bip, solve_set_packing
from hopmatch.trips import GenConfig, generate_instance
from oracles import brute_force_links, build_unreduced_model, enumerate_bip
from test_solver import brute_force_packing, random_program

GRID5 = build_grid_network(5, 5, 5.0)
GRID7 = build_grid_network(7, 7, 5.0)


def report(criterion: str, ok: bool, detail: str):
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, f"{criterion}: {detail}"


def exactness_configs(n):
    """Mixed-density generator settings for the small-instance suites."""
    rng = np.random.default_rng(20170501)
    for seed in range(n):
        yield seed, GenConfig(
            n_riders=int(rng.integers(1, 11)),
            n_drivers=int(rng.integers(1, 11)),
            release_period=float(rng.choice([15.0, 20.0, 30.0])),
            budget_factor_rider=float(rng.choice([1.1, 1.2, 1.3])),
            budget_factor_driver=float(rng.choice([1.1, 1.2, 1.3])),
            directional=bool(seed % 2),
        )


@pytest.fixture(scope="module")
def exactness_runs():
    """Criterion-1 runs, shared with the bounds criterion."""
    runs = []
    for seed, cfg in exactness_configs(200):
        inst = generate_instance(GRID5, cfg, seed=seed)
        prep = preprocess(inst)
        mono = solve_monolithic(prep)
        full, state = run_decomposition(prep, collect_state=True)
        simp = run_decomposition(prep, variant="simplified")
        runs.append((inst, prep, mono, full, simp, state))
    return runs


def test_criterion_1_exactness(exactness_runs):
    t0 = time.perf_counter()
    bad = []
    nontrivial = 0
    for inst, prep, mono, full, simp, state in exactness_runs:
        if prep.kept:
            nontrivial += 1
        if not (len(full.served) == len(mono.served) == len(simp.served)):
            bad.append((inst.seed, len(mono.served), len(full.served), len(simp.served)))
    detail = (
        f"{len(exactness_runs)} instances ({nontrivial} with kept riders), "
        f"{len(bad)} mismatches {bad[:3]}"
    )
    report("1 exactness", not bad and len(exactness_runs) >= 200, detail)


def test_criterion_2_preprocessing_soundness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    net = build_grid_network(3, 3, 5.0)
    bad = []
    n = 100
    nontrivial = 0
    for seed in range(n):
        cfg = GenConfig(
            n_riders=int(rng.integers(1, 6)),
            n_drivers=int(rng.integers(1, 6)),
            release_period=float(rng.choice([10.0, 15.0])),
            budget_factor_rider=float(rng.choice([1.2, 1.3, 1.4])),
            budget_factor_driver=float(rng.choice([1.2, 1.3, 1.4])),
        )
        inst = generate_instance(net, cfg, seed=seed)
        prep = preprocess(inst)
        refined = solve_monolithic(prep)
        universe = frozenset(link_universe(inst.network, inst.grid, inst.ttm))
        raw = build_unreduced_model(inst, universe)
        x, status, bound = solve_bip(raw)
        assert status == "optimal"
        raw_served = sum(int(x[i]) for i, k in enumerate(raw.kinds) if k[0] == "z")
        if raw_served != len(refined.served):
            bad.append((seed, raw_served, len(refined.served)))
        if raw_served:
            nontrivial += 1
    elapsed = time.perf_counter() - t0
    detail = f"{n} instances ({nontrivial} serving >0), {len(bad)} optimum gaps {bad[:3]}, {elapsed:.0f}s"
    report("2 preprocessing-soundness", not bad and elapsed < 300, detail)


def test_criterion_3_link_reduction_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    grid, ttm = grid_and_ttm(GRID5, horizon=70)
    bad = 0
    n = 100
    for i in range(n):
        a, b = (int(s) for s in rng.choice(GRID5.stations, size=2, replace=False))
        tt = static_travel_time(GRID5, a, b)
        budget = int(np.ceil(rng.uniform(tt, float(rng.choice([1.1, 1.25, 1.4])) * tt)))
        p = participant(
            pid=f"p{i}",
            kind="rider" if i % 2 else "driver",
            origin=a,
            destination=b,
            ed=int(rng.integers(0, 15)),
            budget=budget,
        )
        ls = link_reduction(p, GRID5, grid, ttm)
        if ls.links != brute_force_links(p, GRID5, grid, ttm):
            bad += 1

    # structural check from the worked example: late destination arrivals
    # (intervals 41 and 42) exist after the forward stage and are removed
    net = diamond_net()
    dgrid, dttm = grid_and_ttm(net, horizon=50)
    fig = participant(pid="fig", kind="driver", origin=0, destination=3, ed=1, la=40, budget=40)
    fwd, _ = forward_links(fig, net, dgrid, dttm)
    late = {l.t_j for l in fwd if l.s_j == 3 and l.t_j > 40}
    final = link_reduction(fig, net, dgrid, dttm).links
    structural = {41, 42} <= late and not any(l.s_j == 3 and l.t_j > 40 for l in final)

    elapsed = time.perf_counter() - t0
    detail = f"{n} participants, {bad} set mismatches; structural 41/42 removal: {structural}; {elapsed:.0f}s"
    report("3 link-reduction-oracle", bad == 0 and structural and elapsed < 120, detail)


def test_criterion_4_bounds(exactness_runs):
    checked = 0
    bad = []
    for inst, prep, mono, full, simp, state in exactness_runs:
        if full.status != "optimal":
            continue
        opt = float(len(full.served))
        ubs = [ub for _, _, ub in state.bound_trace]
        lbs = [lb for _, lb, _ in state.bound_trace]
        if any(ubs[i] < ubs[i + 1] - 1e-9 for i in range(len(ubs) - 1)):
            bad.append((inst.seed, "UB increased"))
        if any(not (lb - 1e-9 <= opt <= ub + 1e-9) for lb, ub in zip(lbs, ubs)):
            bad.append((inst.seed, "optimum escaped bounds"))
        if abs(lbs[-1] - ubs[-1]) > 1e-9:
            bad.append((inst.seed, "LB != UB at termination"))
        driver_ids = {d.id for d in prep.drivers}
        for payload in state.lb_payloads:
            lb_sol = MatchSolution(
                served=payload["served"],
                itineraries=dict(payload["itineraries"]),
                routes=dict(payload["routes"]),
                transfers={
                    rid: len({d for _, d in itin if d in driver_ids}) - 1
                    for rid, itin in payload["itineraries"].items()
                },
                objective=float(len(payload["served"])),
            )
            if not validate_solution(lb_sol, inst).ok:
                bad.append((inst.seed, "LB solution invalid"))
                break
        checked += 1
    report(
        "4 bounds",
        checked >= 200 and not bad,
        f"{checked} traced runs, {len(bad)} violations {bad[:3]}",
    )


def test_criterion_5_solver_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    bad = 0
    n_prog = 500
    for _ in range(n_prog):
        p = random_program(rng, n_max=12)
        val, _ = enumerate_bip(p)
        x, status, bound = solve_bip(p)
        if val is None:
            bad += status != "infeasible"
        else:
            bad += not (status == "optimal" and abs(bound - val) < 1e-6)

    pack_bad = 0
    n_pack = 40
    for _ in range(n_pack):
        n = int(rng.integers(4, 16))
        riders = [f"r{i}" for i in range(n)]
        conflict = {
            frozenset(pair)
            for pair in itertools.combinations(riders, 2)
            if rng.random() < 0.3
        }
        compat = lambda a, b: frozenset((a, b)) not in conflict
        got = solve_set_packing(riders, None, compat)
        want = brute_force_packing(riders, compat)
        pack_bad += len(got) != len(want)
    elapsed = time.perf_counter() - t0
    detail = (
        f"{n_prog} programs ({bad} mismatches), {n_pack} packing graphs "
        f"({pack_bad} mismatches), {elapsed:.0f}s"
    )
    report("5 solver-oracle", bad == 0 and pack_bad == 0 and elapsed < 180, detail)


@pytest.fixture(scope="module")
def method_suite():
    runs = []
    for seed in range(50):
        cfg = GenConfig(
            n_riders=20, n_drivers=20, release_period=30.0,
            budget_factor_rider=1.2, budget_factor_driver=1.2, directional=True,
        )
        inst = generate_instance(GRID7, cfg, seed=seed)
        prep = preprocess(inst)
        served = {}
        sols = {}
        for m in METHODS:
            sol, metrics = run_method(prep, m)
            served[m] = metrics.num_served
            sols[m] = sol
        runs.append((inst, prep, served, sols))
    return runs


def test_criterion_6_method_ordering(method_suite):
    bad = []
    for inst, prep, served, _ in method_suite:
        ok = (
            served["od-based"] <= served["single-hop-fixed"] <= served["multi-hop-fixed"]
            and served["single-hop-fixed"] <= served["single-hop-flex"] <= served["multi-hop-flex"]
            and served["multi-hop-fixed"] <= served["multi-hop-flex"]
        )
        if not ok:
            bad.append((inst.seed, served))
    report(
        "6 method-ordering",
        len(method_suite) >= 50 and not bad,
        f"{len(method_suite)} instances, chain violated on {len(bad)} {bad[:2]}",
    )


def test_criterion_7_transfer_distribution(method_suite):
    counts = {0: 0, 1: 0, 2: 0, 3: 0}
    total = 0
    for inst, prep, served, sols in method_suite:
        sol = sols["multi-hop-flex"]
        for rid in sol.served:
            counts[sol.transfers[rid]] = counts.get(sol.transfers[rid], 0) + 1
            total += 1
    at_most_two = sum(v for k, v in counts.items() if k <= 2)
    share = at_most_two / total if total else 1.0
    report(
        "7 transfers-trend",
        share >= 0.80 and total > 0,
        f"{total} served riders, distribution {dict(sorted(counts.items()))}, <=2 transfers: {share:.1%}",
    )


def test_criterion_8_rolling_horizon_trend():
    ordered = 0
    n = 20
    all_valid = True
    for seed in range(n):
        cfg = GenConfig(
            n_riders=20, n_drivers=20, release_period=30.0,
            budget_factor_rider=1.2, budget_factor_driver=1.2, directional=True,
        )
        inst = generate_instance(GRID7, cfg, seed=1000 + seed)
        counts = {}
        for k in (None, 10.0, 5.0):
            agg, metrics, per = rolling_horizon(inst, RollingConfig(k))
            counts[k] = metrics.num_served
            if not validate_solution(agg, inst).ok:
                all_valid = False
        if counts[None] >= counts[10.0] >= counts[5.0]:
            ordered += 1
    share = ordered / n
    report(
        "8 rolling-horizon-trend",
        share >= 0.80 and all_valid,
        f"{n} paired seeds, static>=k10>=k5 in {share:.0%}, aggregates all validate: {all_valid}",
    )


def test_criterion_9_heuristic_cutoff():
    cfg = GenConfig(
        n_riders=30, n_drivers=30, release_period=30.0,
        budget_factor_rider=1.2, budget_factor_driver=1.2, directional=True,
    )
    inst = generate_instance(GRID7, cfg, seed=0)
    prep = preprocess(inst)
    sol, state = run_decomposition(prep, limits=SearchLimits(time_limit=6.0), collect_state=True)
    stopped_early = sol.status == "heuristic"
    valid = validate_solution(sol, inst).ok
    first_lb = state.bound_trace[0][1]
    last_ub = state.bound_trace[-1][2]
    gap = last_ub - len(sol.served)
    report(
        "9 heuristic-cutoff",
        stopped_early and valid and len(sol.served) >= first_lb,
        f"status {sol.status}, served {len(sol.served)} >= first-iteration LB {first_lb}, "
        f"validator ok {valid}, gap UB-LB = {gap}",
    )


def test_criterion_10_performance():
    cfg = GenConfig(
        n_riders=50, n_drivers=50, release_period=30.0,
        budget_factor_rider=1.1, budget_factor_driver=1.1,
    )
    inst = generate_instance(GRID7, cfg, seed=7)
    t0 = time.perf_counter()
    prep = preprocess(inst)
    sol, state = run_decomposition(prep, collect_state=True)
    elapsed = time.perf_counter() - t0
    ok = sol.status == "optimal" and elapsed < 60.0
    report(
        "10 performance",
        ok,
        f"50r/50d on 49 stations: {len(sol.served)}/{len(prep.kept)} kept riders served, "
        f"{sol.iterations} iterations, {elapsed:.1f}s (< 60s), paper trend <= 7 iterations: "
        f"{sol.iterations <= 7}",
    )
