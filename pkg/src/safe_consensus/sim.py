"""Closed-loop forward-Euler simulation of the filtered consensus platoon."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .consensus import SingularJacobian, lyapunov_value, nominal_input_rate
from .graph import local_consensus_errors
from .integrate import IntegratorError
from .model import bicycle_derivative, clamp_input
from .predictor import leader_prediction, predict
from .safety import InfeasibleQP, UnfilterableConstraint, assemble_constraint, barrier_eval, solve_weighted_qp
from .scenario import Scenario

log = logging.getLogger(__name__)

COMPLETED = "completed"
SINGULAR = "singular-jacobian"
INFEASIBLE = "qp-infeasible"
INTEGRATOR = "integrator-failure"
UNFILTERABLE = "unfilterable-constraint"

W_ACTIVE = 1e-6  # |w| above this counts as a filter intervention


class SimulationAborted(RuntimeError):
    def __init__(self, status, message):
        self.status = status
        super().__init__(message)


@dataclass
class StepRecord:
    t: float
    states: np.ndarray  # (K, 4)
    inputs: np.ndarray  # (K, 2)
    nominal: np.ndarray  # (K, 2) consensus input rate
    w: np.ndarray  # (K, 2) safety bias
    leader: np.ndarray  # reference position at t
    predictions: np.ndarray  # (K, 2) predicted positions at t + T
    distances: np.ndarray  # (K,) |y_{i-1} - y_i|, pair 0 is leader-follower 1
    min_safe: np.ndarray  # (K,) k_v times the largest speed the pair is constrained by
    h1: dict  # (i, j) -> first-order barrier of follower i against neighbor j
    local_errors: np.ndarray  # (K,)
    lyapunov: float
    clamped: np.ndarray  # (K,) bool, saturation changed the integrated input
    gap: np.ndarray = field(default=None)  # (K,) prediction gap, NaN near the end

    @property
    def clamp_while_constrained(self) -> np.ndarray:
        return self.clamped & (np.hypot(self.w[:, 0], self.w[:, 1]) > W_ACTIVE)


@dataclass
class TrajectoryLog:
    fingerprint: str
    records: list
    status: str = COMPLETED
    message: str = ""
    failed_step: int | None = None
    final_states: np.ndarray | None = None
    final_inputs: np.ndarray | None = None

    @property
    def completed(self) -> bool:
        return self.status == COMPLETED

    def array(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def safety_neighbors(scenario: Scenario, i: int) -> tuple[int, ...]:
    # the leader is virtual and cannot be hit
    return tuple(j for j in scenario.topology.neighbors[i] if j != 0)


def initial_condition(scenario: Scenario):
    states = np.array([f.state for f in scenario.followers], dtype=float)
    inputs = np.array([clamp_input(f.input, f.params) for f in scenario.followers])
    return states, inputs


def _pair_min_safe(scenario, states):
    K = scenario.K
    kv = scenario.safety.k_v
    V = states[:, 2]
    out = np.empty(K)
    for p in range(K):
        # pair (p, p+1) in agent indices; follower p+1 is row p
        ego = [p + 1] if p == 0 else [p, p + 1]
        out[p] = kv * max(V[i - 1] for i in ego)
    return out


def step(states, inputs, t, scenario: Scenario, pool=None):
    """Advance one Euler step from the synchronized snapshot at time ``t``.

    Returns ``(next_states, next_inputs, record)``.
    """
    K = scenario.K
    followers = scenario.followers
    T = scenario.predictor.horizon

    def _predict(k):
        return predict(states[k], inputs[k], followers[k].params, scenario.predictor)

    preds = list(pool.map(_predict, range(K))) if pool is not None else [_predict(k) for k in range(K)]
    values = np.empty((K + 1, 2))
    values[0] = leader_prediction(scenario.reference, t, T)
    for k, p in enumerate(preds):
        values[k + 1] = p.value

    nominal = np.empty((K, 2))
    for k in range(K):
        nominal[k] = nominal_input_rate(k + 1, values, preds[k].jacobian_u, scenario.speedups.alpha[k],
                                        scenario.topology)

    w = np.zeros((K, 2))
    h1 = {}
    positions = states[:, :2]
    for k in range(K):
        i = k + 1
        cons = []
        for j in safety_neighbors(scenario, i):
            nb = positions[j - 1]
            h1[(i, j)] = barrier_eval(states[k], inputs[k], nb, scenario.safety).h1
            if scenario.safety_enabled and i not in scenario.unfiltered:
                cons.append(assemble_constraint(states[k], inputs[k], nominal[k], nb,
                                                followers[k].params.Lr, scenario.safety))
        if cons:
            w[k] = solve_weighted_qp(scenario.safety.q1, scenario.safety.q2, cons)

    next_inputs = np.empty_like(inputs)
    clamped = np.zeros(K, dtype=bool)
    for k in range(K):
        raw = inputs[k] + scenario.dt * (nominal[k] + w[k])
        next_inputs[k] = clamp_input(raw, followers[k].params)
        clamped[k] = bool(np.any(next_inputs[k] != raw))

    Lr = np.array([f.params.Lr for f in followers])
    next_states = states + scenario.dt * bicycle_derivative(states, inputs, Lr)

    leader = scenario.reference(t)
    chain = np.vstack([leader, positions])
    distances = np.hypot(*np.diff(chain, axis=0).T)
    record = StepRecord(
        t=t,
        states=states.copy(),
        inputs=inputs.copy(),
        nominal=nominal,
        w=w,
        leader=leader,
        predictions=values[1:].copy(),
        distances=distances,
        min_safe=_pair_min_safe(scenario, states),
        h1=h1,
        local_errors=local_consensus_errors(values, scenario.topology),
        lyapunov=lyapunov_value(values),
        clamped=clamped,
    )
    return next_states, next_inputs, record


def _fill_prediction_gap(records, scenario):
    lag = int(round(scenario.predictor.horizon / scenario.dt))
    n = len(records)
    for m, rec in enumerate(records):
        if m + lag < n:
            realized = records[m + lag].states[:, :2]
            rec.gap = np.hypot(*(rec.predictions - realized).T)
        else:
            rec.gap = np.full(scenario.K, np.nan)


def run(scenario: Scenario, workers: int | None = None, progress=None) -> TrajectoryLog:
    """Iterate :func:`step` over the horizon or until a controller error.

    ``workers`` > 1 evaluates follower predictions on a thread pool; the
    result is identical either way.
    """
    states, inputs = initial_condition(scenario)
    records = []
    out = TrajectoryLog(scenario.fingerprint(), records)
    pool = ThreadPoolExecutor(workers) if workers and workers > 1 else None
    try:
        for n in range(scenario.n_steps):
            t = n * scenario.dt
            try:
                states, inputs, rec = step(states, inputs, t, scenario, pool)
            except SingularJacobian as exc:
                out.status, out.message = SINGULAR, str(exc)
            except InfeasibleQP as exc:
                out.status, out.message = INFEASIBLE, str(exc)
            except UnfilterableConstraint as exc:
                out.status, out.message = UNFILTERABLE, str(exc)
            except IntegratorError as exc:
                out.status, out.message = INTEGRATOR, str(exc)
            if out.status != COMPLETED:
                out.failed_step = n
                log.warning("run aborted at step %d (t=%.2f): %s", n, t, out.message)
                break
            records.append(rec)
            if progress is not None:
                progress(n)
    finally:
        if pool is not None:
            pool.shutdown()
    out.final_states, out.final_inputs = states, inputs
    _fill_prediction_gap(records, scenario)
    return out


# -- metrics ------------------------------------------------------------------

@dataclass
class Summary:
    status: str
    steps: int
    min_margin: np.ndarray  # per follower pair (i, i+1), min over time of dist - min_safe
    leader_margin: float  # same for the unconstrained leader / follower 1 pair
    steady_local_error: np.ndarray  # per follower, mean over the final 10% of steps
    activations: np.ndarray  # per follower, maximal intervals with |w| > W_ACTIVE
    clamp_while_constrained: np.ndarray  # per follower, step count
    max_prediction_gap: np.ndarray  # per follower
    reference_speed_bound: float

    @property
    def min_safety_margin(self) -> float:
        # a single follower has no constrained pair
        return float(np.min(self.min_margin)) if self.min_margin.size else float("inf")

    def to_text(self) -> str:
        def row(v):
            return " ".join(f"{x:.6g}" for x in v)
        lines = [
            f"status: {self.status}",
            f"steps: {self.steps}",
            f"min_safety_margin: {self.min_safety_margin:.6g}",
            f"min_margin_per_pair: {row(self.min_margin)}",
            f"leader_pair_margin: {self.leader_margin:.6g}",
            f"steady_state_local_error: {row(self.steady_local_error)}",
            f"mean_steady_state_local_error: {float(np.mean(self.steady_local_error)):.6g}",
            f"cbf_activations: {row(self.activations)}",
            f"clamp_while_constrained_steps: {row(self.clamp_while_constrained)}",
            f"max_prediction_gap: {row(self.max_prediction_gap)}",
            f"reference_speed_bound: {self.reference_speed_bound:.6g}",
        ]
        return "\n".join(lines) + "\n"


def count_intervals(active) -> np.ndarray:
    """Number of maximal runs of True along axis 0, per column."""
    a = np.asarray(active, dtype=bool)
    if a.ndim == 1:
        a = a[:, None]
    if len(a) == 0:
        return np.zeros(a.shape[1], dtype=int)
    starts = a[1:] & ~a[:-1]
    return starts.sum(axis=0) + a[0]


def steady_state_error(log: TrajectoryLog, fraction: float = 0.1) -> np.ndarray:
    errs = log.array("local_errors")
    n = max(1, int(round(len(errs) * fraction)))
    return errs[-n:].mean(axis=0)


def summarize(log: TrajectoryLog, scenario: Scenario | None = None) -> Summary:
    if not log.records:
        raise ValueError("cannot summarize an empty log")
    margin = log.array("distances") - log.array("min_safe")
    w = log.array("w")
    gaps = log.array("gap")
    clamp = np.array([r.clamp_while_constrained for r in log.records])
    finite_gaps = np.where(np.isnan(gaps), -np.inf, gaps).max(axis=0)
    sigma = float("nan")
    if scenario is not None:
        sigma = scenario.reference.speed_bound(scenario.t_end)
    return Summary(
        status=log.status,
        steps=len(log.records),
        min_margin=margin[:, 1:].min(axis=0),
        leader_margin=float(margin[:, 0].min()),
        steady_local_error=steady_state_error(log),
        activations=count_intervals(np.hypot(w[..., 0], w[..., 1]) > W_ACTIVE),
        clamp_while_constrained=clamp.sum(axis=0),
        max_prediction_gap=np.where(np.isinf(finite_gaps), np.nan, finite_gaps),
        reference_speed_bound=sigma,
    )
