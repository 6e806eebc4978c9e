"""Second-order integral barrier filter for inter-vehicle headway.

For ego ``i`` and a neighbor frozen at ``p_j``, with d = z_i - p_j and
theta = psi_i + gamma_i:

    h1 = |d|^2 - k_v^2 V^2
    h1_dot = 2 V d.(cos theta, sin theta) - 2 k_v^2 V a
    h2 = h1_dot + c h1

The bias ``w`` enters the input rate, so the filter constrains
``dh2/dt + c h2 >= 0``, which is affine in ``w``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import bicycle_derivative


class UnfilterableConstraint(ArithmeticError):
    """A violated constraint whose normal vanishes (stationary ego)."""


class InfeasibleQP(ArithmeticError):
    """No bias satisfies every constraint at once."""


@dataclass(frozen=True)
class SafetyConfig:
    k_v: float = 2.0
    q1: float = 1.0
    q2: float = 999.0
    cbf_gain: float = 1.0

    def __post_init__(self):
        if self.k_v < 2:
            raise ValueError(f"headway factor k_v must be at least 2 s, got {self.k_v}")
        if self.q1 <= 0 or self.q2 <= 0:
            raise ValueError(f"QP weights must be positive, got ({self.q1}, {self.q2})")
        if self.cbf_gain <= 0:
            raise ValueError(f"cbf_gain must be positive, got {self.cbf_gain}")


@dataclass(frozen=True)
class BarrierEvaluation:
    h1: float
    h1_dot: float
    h2: float
    grad_x_h2: np.ndarray
    grad_u_h2: np.ndarray


@dataclass(frozen=True)
class HalfspaceConstraint:
    """``normal . w >= offset``."""

    normal: np.ndarray
    offset: float

    @property
    def degenerate(self) -> bool:
        return float(np.hypot(*self.normal)) < 1e-12


def barrier_eval(state_i, input_i, neighbor_pos, cfg: SafetyConfig, neighbor_vel=None) -> BarrierEvaluation:
    """Barrier chain and its partials; the neighbor is treated as static.

    ``neighbor_vel`` is accepted for logging symmetry and ignored.
    """
    z1, z2, V, psi = (float(v) for v in state_i)
    a, gamma = (float(v) for v in input_i)
    k2 = cfg.k_v * cfg.k_v
    c = cfg.cbf_gain
    d1 = z1 - float(neighbor_pos[0])
    d2 = z2 - float(neighbor_pos[1])
    ct = np.cos(psi + gamma)
    st = np.sin(psi + gamma)
    along = d1 * ct + d2 * st  # d . heading
    across = -d1 * st + d2 * ct  # d . left normal

    h1 = d1 * d1 + d2 * d2 - k2 * V * V
    h1_dot = 2.0 * V * along - 2.0 * k2 * V * a
    h2 = h1_dot + c * h1
    grad_x = np.array([
        2.0 * V * ct + 2.0 * c * d1,
        2.0 * V * st + 2.0 * c * d2,
        2.0 * along - 2.0 * k2 * a - 2.0 * c * k2 * V,
        2.0 * V * across,
    ])
    grad_u = np.array([-2.0 * k2 * V, 2.0 * V * across])
    return BarrierEvaluation(h1, h1_dot, h2, grad_x, grad_u)


def assemble_constraint(state_i, input_i, nominal_rate, neighbor_pos, Lr, cfg: SafetyConfig) -> HalfspaceConstraint:
    """Halfspace on the bias ``w`` that keeps ``h2`` decaying no faster than ``-c h2``."""
    ev = barrier_eval(state_i, input_i, neighbor_pos, cfg)
    f = bicycle_derivative(state_i, input_i, Lr)
    offset = -float(ev.grad_x_h2 @ f) - float(ev.grad_u_h2 @ np.asarray(nominal_rate, dtype=float)) - cfg.cbf_gain * ev.h2
    con = HalfspaceConstraint(ev.grad_u_h2, offset)
    if con.degenerate and offset > 0:
        raise UnfilterableConstraint(
            f"barrier normal vanishes (V={float(state_i[2]):.3e}) while the constraint needs offset {offset:.3e}"
        )
    return con


def _feasible(w, constraints, tol=1e-9):
    return all(float(c.normal @ w) >= c.offset - tol * max(1.0, abs(c.offset)) for c in constraints)


def solve_weighted_qp(q1: float, q2: float, constraints) -> np.ndarray:
    """Exact minimizer of ``q1 w1^2 + q2 w2^2`` over the given halfspaces.

    Enumerates active sets: none, each single constraint, and every pair.
    """
    constraints = list(constraints)
    qinv = np.array([1.0 / q1, 1.0 / q2])
    zero = np.zeros(2)
    if _feasible(zero, constraints):
        return zero

    candidates = []
    for c in constraints:
        if c.degenerate or c.offset <= 0:
            continue
        Qa = qinv * c.normal
        w = Qa * (c.offset / float(c.normal @ Qa))
        candidates.append(w)
    for m in range(len(constraints)):
        for n in range(m + 1, len(constraints)):
            cm, cn = constraints[m], constraints[n]
            # w = Q^-1 [a_m a_n] lam with both constraints tight
            N = np.column_stack([cm.normal, cn.normal])
            G = N.T @ (qinv[:, None] * N)
            det = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
            if abs(det) <= 1e-14 * max(1.0, float(np.abs(G).max()) ** 2):
                continue
            b = np.array([cm.offset, cn.offset])
            lam = np.array([G[1, 1] * b[0] - G[0, 1] * b[1], -G[1, 0] * b[0] + G[0, 0] * b[1]]) / det
            if np.any(lam < 0):
                continue
            candidates.append(qinv * (N @ lam))

    best, best_cost = None, np.inf
    for w in candidates:
        if not _feasible(w, constraints):
            continue
        cost = q1 * w[0] ** 2 + q2 * w[1] ** 2
        if cost < best_cost:
            best, best_cost = w, cost
    if best is None:
        raise InfeasibleQP(
            "no bias satisfies all constraints: "
            + "; ".join(f"{c.normal.tolist()} . w >= {c.offset:.6g}" for c in constraints)
        )
    return best


def filtered_input_rate(nominal_rate, w) -> np.ndarray:
    return np.asarray(nominal_rate, dtype=float) + np.asarray(w, dtype=float)
