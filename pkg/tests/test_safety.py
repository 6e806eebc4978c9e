import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safe_consensus.model import bicycle_derivative
from safe_consensus.safety import (
    HalfspaceConstraint, InfeasibleQP, SafetyConfig, UnfilterableConstraint, assemble_constraint, barrier_eval,
    filtered_input_rate, solve_weighted_qp,
)
from safe_consensus.verify import barrier_gradient_error, barrier_suite, grid_qp_oracle, qp_suite, random_qp_instance

CFG = SafetyConfig()


def test_h1_by_substitution():
    assert barrier_eval((0, 0, 3, 0), (0, 0), (10, 0), CFG).h1 == 64


def test_stopped_ego():
    ev = barrier_eval((1, 2, 0, 0.4), (1.5, 0.2), (4, 6), CFG)
    assert ev.h1 == 25 and ev.h1_dot == 0
    np.testing.assert_array_equal(ev.grad_u_h2, (0, 0))


@pytest.mark.parametrize("d", [0.5, 3.0, 12.0])
def test_h1_dot_moving_away(d):
    assert barrier_eval((d, 0, 1, 0), (0, 0), (0, 0), CFG).h1_dot == pytest.approx(2 * d)


def test_h1_dot_is_time_derivative():
    # neighbor frozen: d/dt h1 along the bicycle flow
    state, u, nb, Lr = np.array([3.0, -4.0, 5.0, 0.3]), np.array([0.7, -0.2]), np.array([-2.0, 1.0]), 1.5
    f = bicycle_derivative(state, u, Lr)
    h = 1e-6
    fd = (barrier_eval(state + h * f, u, nb, CFG).h1 - barrier_eval(state - h * f, u, nb, CFG).h1) / (2 * h)
    assert barrier_eval(state, u, nb, CFG).h1_dot == pytest.approx(fd, rel=1e-8)


def test_grad_u_first_entry():
    # -2 k_v^2 V = -2 * 4 * 5
    assert barrier_eval((0, 0, 5, 0), (0, 0), (10, 3), CFG).grad_u_h2[0] == -40


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-10, 10), st.floats(-7, 7), st.floats(-2, 2),
       st.floats(-0.5, 0.5), st.floats(0.1, 5))
def test_h2_identity(z1, z2, V, psi, a, g, c):
    cfg = SafetyConfig(cbf_gain=c)
    ev = barrier_eval((z1, z2, V, psi), (a, g), (1.0, -2.0), cfg)
    assert ev.h2 == ev.h1_dot + c * ev.h1


def test_gradients_match_finite_differences():
    (check,) = barrier_suite(1000)
    assert check.passed, check.line()


def test_velocity_partial_keeps_heading_term():
    # dropping 2 d.(cos, sin) from dh2/dV is an easy slip; the finite difference sees it
    state, u, nb = np.array([4.0, 3.0, 2.0, 0.0]), np.array([0.5, 0.0]), np.array([0.0, 0.0])
    ev = barrier_eval(state, u, nb, CFG)
    k2, c = CFG.k_v ** 2, CFG.cbf_gain
    without = -2 * k2 * u[0] - 2 * c * k2 * state[2]
    assert ev.grad_x_h2[2] == pytest.approx(without + 2 * 4.0)
    assert barrier_gradient_error(state, u, nb, CFG) < 1e-8


def test_constraint_structure():
    state, u, rate, nb, Lr = np.array([0.0, 0.0, 4.0, 0.2]), np.array([0.3, 0.1]), np.array([0.5, -0.2]), \
        np.array([-9.0, 0.0]), 1.7
    ev = barrier_eval(state, u, nb, CFG)
    con = assemble_constraint(state, u, rate, nb, Lr, CFG)
    np.testing.assert_array_equal(con.normal, ev.grad_u_h2)
    f = bicycle_derivative(state, u, Lr)
    assert con.offset == pytest.approx(-ev.grad_x_h2 @ f - ev.grad_u_h2 @ rate - CFG.cbf_gain * ev.h2)


def test_stationary_ego_normal_vanishes():
    con = assemble_constraint((0, 0, 0, 0), (0, 0), (0, 0), (30, 0), 1.5, CFG)
    np.testing.assert_array_equal(con.normal, (0, 0))
    assert con.offset <= 0


def test_unfilterable_when_stopped_and_needed():
    with pytest.raises(UnfilterableConstraint):
        assemble_constraint((0, 0, 0, 0), (2, 0), (0, 0), (3, 0), 1.5, CFG)


def test_satisfied_constraint_gives_zero_bias():
    con = assemble_constraint((0, 0, 3, 0), (0, 0), (0, 0), (-100, 0), 1.5, CFG)
    assert con.offset <= 0
    w = solve_weighted_qp(1, 999, [con])
    assert w.tobytes() == np.zeros(2).tobytes()


def test_qp_no_constraints():
    np.testing.assert_array_equal(solve_weighted_qp(1, 999, []), (0, 0))


def test_qp_unit_weights_single():
    np.testing.assert_allclose(solve_weighted_qp(1, 1, [HalfspaceConstraint(np.array([1.0, 0.0]), 2.0)]), (2, 0))


def test_qp_weighted_single():
    w = solve_weighted_qp(1, 999, [HalfspaceConstraint(np.array([1.0, 1.0]), 1.0)])
    np.testing.assert_allclose(w, (999 / 1000, 1 / 1000), rtol=1e-12)


def test_qp_two_active():
    cons = [HalfspaceConstraint(np.array([1.0, 0.0]), 1.0), HalfspaceConstraint(np.array([0.0, 1.0]), 2.0)]
    np.testing.assert_allclose(solve_weighted_qp(3, 5, cons), (1, 2))


def test_qp_infeasible():
    cons = [HalfspaceConstraint(np.array([1.0, 0.0]), 1.0), HalfspaceConstraint(np.array([-1.0, 0.0]), 1.0)]
    with pytest.raises(InfeasibleQP):
        solve_weighted_qp(1, 1, cons)


def test_qp_grid_oracle_sample():
    checks = qp_suite(200, seed=11)
    assert all(c.passed for c in checks), [c.line() for c in checks]


def test_grid_oracle_sanity():
    w, cost = grid_qp_oracle(1, 1, [HalfspaceConstraint(np.array([1.0, 0.0]), 2.0)])
    np.testing.assert_allclose(w, (2, 0), atol=1e-12)
    assert grid_qp_oracle(1, 1, [HalfspaceConstraint(np.array([1.0, 0.0]), 60.0)])[0] is None


def test_qp_matches_general_solver():
    optimize = pytest.importorskip("scipy.optimize")
    rng = np.random.default_rng(5)
    for _ in range(100):
        q1, q2, cons = random_qp_instance(rng)
        if not cons:
            continue
        w = solve_weighted_qp(q1, q2, cons)
        res = optimize.minimize(
            lambda x: q1 * x[0] ** 2 + q2 * x[1] ** 2, w + 0.5, jac=lambda x: [2 * q1 * x[0], 2 * q2 * x[1]],
            constraints=[{"type": "ineq", "fun": (lambda x, c=c: c.normal @ x - c.offset),
                          "jac": (lambda x, c=c: c.normal)} for c in cons],
            method="SLSQP", options={"ftol": 1e-14, "maxiter": 500},
        )
        ours = q1 * w[0] ** 2 + q2 * w[1] ** 2
        assert ours <= res.fun + 1e-6 * max(1.0, res.fun)


@settings(max_examples=200)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.01, 20), st.floats(0.1, 1000), st.floats(0.1, 1000),
       st.floats(1.0, 100.0))
def test_raising_q2_never_grows_steering_bias(a1, a2, b, q1, q2, factor):
    if math.hypot(a1, a2) < 1e-3:
        return
    con = [HalfspaceConstraint(np.array([a1, a2]), b)]
    w = solve_weighted_qp(q1, q2, con)
    w_hi = solve_weighted_qp(q1, q2 * factor, con)
    assert abs(w_hi[1]) <= abs(w[1]) * (1 + 1e-12) + 1e-15


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-20, 0), st.floats(-10, 10), st.floats(-10, 10),
       st.floats(-20, 0))
def test_least_invasive(a1, a2, b1, c1, c2, b2):
    cons = [HalfspaceConstraint(np.array([a1, a2]), b1), HalfspaceConstraint(np.array([c1, c2]), b2)]
    assert solve_weighted_qp(1, 999, cons).tobytes() == np.zeros(2).tobytes()


def test_filtered_rate():
    np.testing.assert_array_equal(filtered_input_rate((-1, 0), (0, 0)), (-1, 0))
    np.testing.assert_array_equal(filtered_input_rate((-1, 0), (0.5, 0)), (-0.5, 0))


@pytest.mark.parametrize("kw", [dict(k_v=1.5), dict(q1=0), dict(q2=-1), dict(cbf_gain=0)])
def test_invalid_safety_config(kw):
    with pytest.raises(ValueError):
        SafetyConfig(**kw)
