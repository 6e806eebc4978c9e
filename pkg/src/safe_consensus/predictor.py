"""Output prediction under a frozen input and its input-Jacobian."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .integrate import IntegratorError, dopri45_compiled
from .model import BicycleParams, bicycle_rhs_batch, output


@dataclass(frozen=True)
class PredictorConfig:
    horizon: float = 0.3
    rk_rel_tol: float = 1e-8
    rk_abs_tol: float = 1e-8
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError(f"horizon must be non-negative, got {self.horizon}")
        if self.rk_rel_tol <= 0 or self.rk_abs_tol <= 0:
            raise ValueError("integrator tolerances must be positive")
        if self.fd_step <= 0:
            raise ValueError(f"fd_step must be positive, got {self.fd_step}")


@dataclass(frozen=True)
class Prediction:
    value: np.ndarray  # predicted position at t + T
    jacobian_u: np.ndarray  # d value / d (a, gamma)


class PredictionError(IntegratorError):
    pass


def _integrate(states, inputs, params, cfg):
    """Propagate a batch of (state, frozen input) rows over the horizon.

    Positions are integrated relative to each row's start so tolerances act
    on displacement rather than on absolute coordinates.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    origin = states[:, :2].copy()
    y0 = states.copy()
    y0[:, :2] = 0.0

    p = np.empty((len(y0), 3))
    p[:, :2] = inputs
    p[:, 2] = params.Lr
    try:
        yT = dopri45_compiled(bicycle_rhs_batch, p, y0, (0.0, cfg.horizon),
                              rtol=cfg.rk_rel_tol, atol=cfg.rk_abs_tol)
    except IntegratorError as exc:
        raise PredictionError(f"{exc}; initial state {states[0].tolist()}, input {inputs[0].tolist()}",
                              y=exc.y, t=exc.t) from exc
    return yT[:, :2] + origin


def predict_output(state, u, params: BicycleParams, cfg: PredictorConfig) -> np.ndarray:
    """Position reached after ``cfg.horizon`` seconds holding ``u`` fixed."""
    if cfg.horizon == 0:
        return output(state)
    return _integrate(state, u, params, cfg)[0]


def _perturbed_inputs(u, h):
    u = np.asarray(u, dtype=float)
    rows = np.tile(u, (5, 1))
    rows[1, 0] += h
    rows[2, 0] -= h
    rows[3, 1] += h
    rows[4, 1] -= h
    return rows


def predict(state, u, params: BicycleParams, cfg: PredictorConfig, fd_step=None) -> Prediction:
    """Prediction and central-difference input-Jacobian from one shared integration."""
    h = cfg.fd_step if fd_step is None else fd_step
    if cfg.horizon == 0:
        return Prediction(output(state), np.zeros((2, 2)))
    rows = _perturbed_inputs(u, h)
    states = np.tile(np.asarray(state, dtype=float), (5, 1))
    Y = _integrate(states, rows, params, cfg)
    J = np.column_stack([(Y[1] - Y[2]) / (2 * h), (Y[3] - Y[4]) / (2 * h)])
    return Prediction(Y[0], J)


def predict_jacobian_u(state, u, params: BicycleParams, cfg: PredictorConfig, fd_step=None) -> np.ndarray:
    return predict(state, u, params, cfg, fd_step).jacobian_u


def leader_prediction(reference, t: float, T: float) -> np.ndarray:
    """Leader output at ``t + T``; the reference is known ahead of time."""
    return reference(t + T)
