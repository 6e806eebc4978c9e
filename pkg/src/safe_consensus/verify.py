"""Seeded property suites behind ``verify``; each check is independent of the code it audits."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import Topology, laplacian, numerical_rank, path_graph
from .model import BicycleParams
from .predictor import PredictorConfig, predict_jacobian_u, predict_output
from .safety import HalfspaceConstraint, InfeasibleQP, SafetyConfig, barrier_eval, solve_weighted_qp
from .scenario import load_scenario, platoon_scenario
from .sim import run, steady_state_error

QP_SEED = 20240611
JACOBIAN_SEED = 31337
BARRIER_SEED = 4242
PREDICTOR_SEED = 977


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}" + (f": {self.detail}" if self.detail else "")


# -- QP -------------------------------------------------------------------------

def grid_qp_oracle(q1, q2, constraints, lo=-50.0, hi=50.0, res=0.01, slack=1e-9):
    """Best grid point of ``q1 w1^2 + q2 w2^2`` subject to the halfspaces.

    For every grid column w1 the feasible w2 set is an interval, so the
    column optimum is the feasible grid value nearest zero; this equals a
    full scan of the grid.  Returns ``(w, cost)`` or ``(None, inf)``.
    """
    n = int(round((hi - lo) / res)) + 1
    g = lo + res * np.arange(n)
    L = np.full(n, -np.inf)
    U = np.full(n, np.inf)
    ok = np.ones(n, dtype=bool)
    for c in constraints:
        a1, a2 = float(c.normal[0]), float(c.normal[1])
        rhs = c.offset - a1 * g
        if a2 > 0:
            L = np.maximum(L, rhs / a2)
        elif a2 < 0:
            U = np.minimum(U, rhs / a2)
        else:
            ok &= rhs <= slack * max(1.0, abs(c.offset))

    # grid indices bracketing zero inside [L, U], then re-checked exactly
    k0 = int(round(-lo / res))
    kL = np.clip(np.ceil((L - lo) / res - 1e-9), 0, n - 1).astype(int)
    kU = np.clip(np.floor((U - lo) / res + 1e-9), 0, n - 1).astype(int)
    k = np.where(kL > k0, kL, np.where(kU < k0, kU, k0))
    best, best_cost = None, np.inf
    for shift in (-1, 0, 1):
        kk = np.clip(k + shift, 0, n - 1)
        w2 = g[kk]
        feas = ok.copy()
        for c in constraints:
            feas &= c.normal[0] * g + c.normal[1] * w2 >= c.offset - slack * max(1.0, abs(c.offset))
        if not feas.any():
            continue
        cost = np.where(feas, q1 * g * g + q2 * w2 * w2, np.inf)
        m = int(np.argmin(cost))
        if cost[m] < best_cost:
            best, best_cost = np.array([g[m], w2[m]]), float(cost[m])
    return best, best_cost


def random_qp_instance(rng, box=49.0):
    """Weights log-uniform on [0.1, 1000], up to two random halfspaces.

    Instances whose exact optimum leaves ``[-box, box]^2`` are redrawn so the
    grid oracle can see them.
    """
    while True:
        q1, q2 = 10.0 ** rng.uniform(-1, 3, size=2)
        m = int(rng.integers(0, 3))
        cons = []
        for _ in range(m):
            normal = rng.normal(size=2) * 10.0 ** rng.uniform(-1, 1)
            cons.append(HalfspaceConstraint(normal, float(rng.uniform(-20, 20))))
        try:
            w = solve_weighted_qp(q1, q2, cons)
        except InfeasibleQP:
            continue
        if np.all(np.abs(w) <= box):
            return q1, q2, cons


def qp_suite(n=1000, seed=QP_SEED):
    rng = np.random.default_rng(seed)
    worst_slack, worst_gap, lead, bad = np.inf, -np.inf, 0.0, 0
    for _ in range(n):
        q1, q2, cons = random_qp_instance(rng)
        w = solve_weighted_qp(q1, q2, cons)
        slack = min((float(c.normal @ w) - c.offset for c in cons), default=np.inf)
        cost = q1 * w[0] ** 2 + q2 * w[1] ** 2
        _, grid_cost = grid_qp_oracle(q1, q2, cons)
        gap = cost - grid_cost
        worst_slack = min(worst_slack, slack)
        worst_gap = max(worst_gap, gap)
        lead = max(lead, -gap / max(1.0, cost))
        bad += slack < -1e-9 or gap > 1e-4
    return [
        Check(f"qp: {n} instances satisfy every constraint", worst_slack >= -1e-9, f"min slack {worst_slack:.3g}"),
        Check(f"qp: {n} instances no worse than the grid oracle", worst_gap <= 1e-4,
              f"max objective excess {worst_gap:.3g}, grid above exact by <= {lead:.2g} relative, {bad} bad"),
    ]


# -- predictor / Jacobian -------------------------------------------------------

def straight_line_prediction(state, a, T):
    z1, z2, V, psi = state
    s = V * T + 0.5 * a * T * T
    return np.array([z1 + s * math.cos(psi), z2 + s * math.sin(psi)])


def _random_operating_point(rng):
    state = np.array([*rng.uniform(-100, 100, 2), rng.uniform(0.5, 10), rng.uniform(-math.pi, math.pi)])
    u = np.array([rng.uniform(-2, 2), rng.uniform(-0.5, 0.5)])
    params = BicycleParams(*rng.uniform(0.8, 2.0, 2))
    return state, u, params


def richardson_ratio(state, u, params, cfg, h=4e-2):
    """``|J(h) - J(h/2)| / |J(h/2) - J(h/4)|``; four for a second-order difference."""
    J = [predict_jacobian_u(state, u, params, cfg, h / 2 ** k) for k in range(3)]
    return float(np.linalg.norm(J[0] - J[1]) / np.linalg.norm(J[1] - J[2]))


def predictor_suite(n=100, seed=PREDICTOR_SEED):
    rng = np.random.default_rng(seed)
    cfg = PredictorConfig()
    worst = 0.0
    for _ in range(n):
        state, u, params = _random_operating_point(rng)
        y = predict_output(state, (u[0], 0.0), params, cfg)
        worst = max(worst, float(np.max(np.abs(y - straight_line_prediction(state, u[0], cfg.horizon)))))
    return [Check(f"predictor: {n} straight-line predictions match the closed form", worst <= 1e-6,
                  f"max error {worst:.3g} m")]


def jacobian_suite(n=20, seed=JACOBIAN_SEED):
    rng = np.random.default_rng(seed)
    cfg = PredictorConfig()
    ratios, halving = [], 0.0
    for _ in range(n):
        state, u, params = _random_operating_point(rng)
        ratios.append(richardson_ratio(state, u, params, cfg))
        J = predict_jacobian_u(state, u, params, cfg)
        J2 = predict_jacobian_u(state, u, params, cfg, cfg.fd_step / 2)
        halving = max(halving, float(np.max(np.abs(J - J2))))
    J0 = predict_jacobian_u((0, 0, 10, 0), (0, 0), BicycleParams(1.2, 1.7), cfg)
    lo, hi = min(ratios), max(ratios)
    return predictor_suite() + [
        Check("jacobian: Richardson ratio within [3.5, 4.5]", 3.5 <= lo and hi <= 4.5, f"range {lo:.4f}..{hi:.4f}"),
        Check("jacobian: halving fd_step moves entries < 1e-6", halving < 1e-6, f"max change {halving:.3g}"),
        Check("jacobian: dz1/da equals T^2/2 on a straight line", abs(J0[0, 0] - 0.045) <= 1e-4,
              f"{J0[0, 0]:.8f}"),
    ]


# -- barrier gradients -------------------------------------------------------

def _h2(state, u, nb, cfg):
    return barrier_eval(state, u, nb, cfg).h2


def barrier_gradient_error(state, u, nb, cfg, h=1e-6):
    """Largest relative mismatch between analytic and central-difference gradients of ``h2``."""
    ev = barrier_eval(state, u, nb, cfg)
    fd_x = np.empty(4)
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        fd_x[k] = (_h2(state + e, u, nb, cfg) - _h2(state - e, u, nb, cfg)) / (2 * h)
    fd_u = np.empty(2)
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd_u[k] = (_h2(state, u + e, nb, cfg) - _h2(state, u - e, nb, cfg)) / (2 * h)
    analytic = np.concatenate([ev.grad_x_h2, ev.grad_u_h2])
    fd = np.concatenate([fd_x, fd_u])
    # relative to the gradient's overall size so that vanishing entries do not blow up
    return float(np.max(np.abs(analytic - fd)) / max(1.0, np.max(np.abs(analytic))))


def barrier_suite(n=1000, seed=BARRIER_SEED):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        cfg = SafetyConfig(k_v=rng.uniform(2, 4), cbf_gain=rng.uniform(0.1, 5))
        state = np.array([*rng.uniform(-50, 50, 2), rng.uniform(-10, 10), rng.uniform(-math.pi, math.pi)])
        u = np.array([rng.uniform(-2, 2), rng.uniform(-0.5, 0.5)])
        worst = max(worst, barrier_gradient_error(state, u, rng.uniform(-50, 50, 2), cfg))
    return [Check(f"barrier: analytic gradients match finite differences at {n} points", worst <= 1e-5,
                  f"max relative error {worst:.3g}")]


# -- graph --------------------------------------------------------------------

def two_chains(sizes=(3, 2)) -> Topology:
    # each chain starts from its own root
    nbrs, base = [], 0
    for size in sizes:
        nbrs.append([])
        nbrs += [[base + k] for k in range(size)]
        base += size + 1
    return Topology.from_lists(nbrs)


def graph_suite(k_max=10):
    checks = []
    for K in range(1, k_max + 1):
        L = laplacian(path_graph(K))
        rank = numerical_rank(L)
        resid = float(np.linalg.norm(L @ np.ones(K + 1)))
        checks.append(Check(f"graph: path K={K} rank(L)=K and L.1=0", rank == K and resid <= 1e-12,
                            f"rank {rank}, residual {resid:.1e}"))
    g = two_chains()
    rank = numerical_rank(laplacian(g))
    checks.append(Check("graph: two disconnected chains lose rank", rank < g.agent_count - 1,
                        f"rank {rank} < {g.agent_count - 1}"))
    return checks


# -- simulation ---------------------------------------------------------------

def euler_error_ratio(scenario, dt=0.02, t_end=10.0):
    """Terminal position error ratio of steps ``dt`` and ``dt/2`` against ``dt/8``."""
    final = {}
    for div in (1, 2, 8):
        log = run(scenario.with_overrides(t_end=t_end, dt=dt / div))
        if not log.completed:
            raise RuntimeError(f"run at dt={dt / div} ended with {log.status}")
        final[div] = log.final_states[:, :2]
    e1 = float(np.max(np.abs(final[1] - final[8])))
    e2 = float(np.max(np.abs(final[2] - final[8])))
    return e1 / e2


def euler_suite():
    ratio = euler_error_ratio(load_scenario("collision_course"))
    return [Check("euler: halving dt halves the terminal error (ratio in [1.5, 2.5])", 1.5 <= ratio <= 2.5,
                  f"ratio {ratio:.3f}")]


def alpha_sweep(alphas=(5.0, 10.0, 20.0), t_end=120.0, window=20.0, workers=None):
    """Steady local consensus error (mean over followers and the last ``window`` s) per alpha."""
    out = {}
    for alpha in alphas:
        sc = platoon_scenario(alpha=alpha, t_end=t_end)
        log = run(sc, workers=workers)
        frac = window / t_end
        out[alpha] = (float(np.mean(steady_state_error(log, frac))), log.status)
    return out


def alpha_sweep_suite():
    res = alpha_sweep()
    errs = [res[a][0] for a in sorted(res)]
    ok = all(res[a][1] == "completed" for a in res) and all(x > y for x, y in zip(errs, errs[1:]))
    detail = ", ".join(f"alpha={a:g}: {res[a][0]:.4g} ({res[a][1]})" for a in sorted(res))
    return [Check("alpha-sweep: steady local error strictly decreasing in alpha", ok, detail)]


SUITES = {
    "qp": qp_suite,
    "jacobian": jacobian_suite,
    "graph": graph_suite,
    "euler": euler_suite,
    "alpha-sweep": alpha_sweep_suite,
    "barrier": barrier_suite,
}
