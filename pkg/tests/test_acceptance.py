"""Acceptance criteria, each at its stated tolerance.

Criteria 2 and 3 do not hold for this controller as specified; they are kept
at full strength and marked as expected failures (strict, so an unexpected
pass is reported).  The analysis is in the decisions ledger and the README.
"""
import time

import numpy as np
import pytest

from safe_consensus.graph import laplacian, numerical_rank, path_graph
from safe_consensus.report import write_csv
from safe_consensus.scenario import load_scenario, platoon_scenario
from safe_consensus.sim import W_ACTIVE, count_intervals, run, summarize
from safe_consensus.verify import (
    alpha_sweep, barrier_suite, jacobian_suite, predictor_suite, qp_suite, two_chains,
)

SAFETY_TOL = 0.1  # m, Euler discretization allowance


@pytest.fixture(scope="module")
def run_200s(tmp_path_factory):
    sc = platoon_scenario(t_end=200.0)
    t0 = time.perf_counter()
    log = run(sc)
    elapsed = time.perf_counter() - t0
    path = tmp_path_factory.mktemp("c1") / "trajectory.csv"
    write_csv(log, path)
    return sc, log, elapsed, path


def test_1_safety_reproduction(run_200s, report_criterion):
    sc, log, elapsed, _ = run_200s
    dist = log.array("distances")[:, 1:]  # follower pairs (i, i+1)
    V = log.array("states")[:, :, 2]
    # each follower of the pair must keep k_v times its own speed
    need = sc.safety.k_v * np.maximum(V[:, :-1], V[:, 1:])
    margin = float(np.min(dist - need))
    ok = log.completed and margin >= -SAFETY_TOL and elapsed <= 300
    report_criterion(1, "safety reproduction (200 s)", ok,
                     f"status {log.status}, min(dist - k_v V) = {margin:.4f} m, {elapsed:.0f} s")
    assert log.completed
    assert margin >= -SAFETY_TOL
    assert elapsed <= 300


@pytest.mark.xfail(strict=True, reason="follower 1 activates only at start-up and follower 5 stays active; "
                                       "see ledger")
def test_2_activation_count(report_criterion):
    log = run(platoon_scenario())
    w = log.array("w")
    counts = count_intervals(np.hypot(w[..., 0], w[..., 1]) > W_ACTIVE)
    ok = log.completed and bool(np.all(np.abs(counts - 5) <= 1))
    report_criterion(2, "activation count 5 +- 1 per follower (680 s)", ok,
                     f"status {log.status}, counts {counts.tolist()}")
    assert log.completed
    assert np.all(np.abs(counts - 5) <= 1), counts


@pytest.mark.xfail(strict=True, reason="spacing error of the last follower dominates and alpha=20 loses "
                                       "the first follower; see ledger")
def test_3_consensus_trend(report_criterion):
    res = alpha_sweep((5.0, 10.0, 20.0), t_end=120.0)
    errs = [res[a][0] for a in (5.0, 10.0, 20.0)]
    ok = all(res[a][1] == "completed" for a in res) and errs[0] > errs[1] > errs[2]
    report_criterion(3, "steady local error strictly decreasing over alpha 5, 10, 20 (120 s)", ok,
                     ", ".join(f"alpha={a:g}: {res[a][0]:.5g} ({res[a][1]})" for a in res))
    assert all(res[a][1] == "completed" for a in res)
    assert errs[0] > errs[1] > errs[2], errs


def test_4_qp_oracle(report_criterion):
    t0 = time.perf_counter()
    checks = qp_suite(1000)
    elapsed = time.perf_counter() - t0
    ok = all(c.passed for c in checks) and elapsed <= 30
    report_criterion(4, "QP matches grid oracle on 1000 instances", ok,
                     "; ".join(c.detail for c in checks) + f"; {elapsed:.1f} s")
    assert all(c.passed for c in checks), [c.line() for c in checks]
    assert elapsed <= 30


def test_5_predictor_accuracy(report_criterion):
    checks = predictor_suite(100) + [c for c in jacobian_suite() if "Richardson" in c.name]
    ok = all(c.passed for c in checks)
    report_criterion(5, "predictor closed form within 1e-6 m and second-order Jacobian", ok,
                     "; ".join(c.detail for c in checks))
    assert ok, [c.line() for c in checks]


def test_6_barrier_gradients(report_criterion):
    (check,) = barrier_suite(1000)
    report_criterion(6, "barrier gradients match finite differences (1000 points)", check.passed, check.detail)
    assert check.passed


def test_7_graph_structure(report_criterion):
    worst = 0.0
    ranks_ok = True
    for K in range(1, 11):
        L = laplacian(path_graph(K))
        ranks_ok &= numerical_rank(L) == K
        worst = max(worst, float(np.linalg.norm(L @ np.ones(K + 1))))
    g = two_chains()
    split = numerical_rank(laplacian(g)) < g.agent_count - 1
    ok = ranks_ok and worst <= 1e-12 and split
    report_criterion(7, "path graphs K=1..10 rank K, L.1 = 0; disconnected chains lose rank", ok,
                     f"max |L.1| = {worst:.1e}")
    assert ok


def test_8_counterfactual_necessity(report_criterion):
    sc = load_scenario("collision_course").with_overrides(safety=False)
    log = run(sc)
    margin = summarize(log).min_safety_margin
    filtered = summarize(run(load_scenario("collision_course"))).min_safety_margin
    ok = margin < 0
    report_criterion(8, "collision course without filter violates headway", ok,
                     f"min margin {margin:.3f} m unfiltered, {filtered:.3f} m filtered")
    assert margin < 0


def test_9_determinism(run_200s, report_criterion, tmp_path):
    sc, _, _, first = run_200s
    second = tmp_path / "trajectory.csv"
    write_csv(run(sc), second)
    same = first.read_bytes() == second.read_bytes()
    report_criterion(9, "two 200 s runs give byte-identical CSVs", same,
                     f"{first.stat().st_size} bytes")
    assert same
