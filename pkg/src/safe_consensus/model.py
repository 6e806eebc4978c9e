"""Kinematic bicycle dynamics, output map and input handling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np


class BicycleState(NamedTuple):
    z1: float  # east position (m)
    z2: float  # north position (m)
    V: float  # speed (m/s)
    psi: float  # heading (rad), not wrapped


class BicycleInput(NamedTuple):
    a: float  # acceleration (m/s^2)
    gamma: float  # velocity direction relative to the frame heading (rad)


@dataclass(frozen=True)
class BicycleParams:
    Lf: float
    Lr: float
    a_min: float = -2.0
    a_max: float = 2.0
    gamma_min: float = -math.pi / 6
    gamma_max: float = math.pi / 6

    def __post_init__(self):
        if not (self.Lf > 0 and self.Lr > 0):
            raise ValueError(f"axle distances must be positive, got Lf={self.Lf}, Lr={self.Lr}")
        if not self.a_min < self.a_max:
            raise ValueError(f"a_min={self.a_min} must be below a_max={self.a_max}")
        if not -math.pi / 2 < self.gamma_min < self.gamma_max < math.pi / 2:
            raise ValueError(
                f"gamma bounds ({self.gamma_min}, {self.gamma_max}) must be ordered inside (-pi/2, pi/2)"
            )

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.a_min, self.gamma_min])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.a_max, self.gamma_max])


def bicycle_derivative(state, u, Lr):
    """Time derivative of the bicycle state.

    Broadcasts over leading axes: ``state`` is ``(..., 4)``, ``u`` is
    ``(..., 2)`` and ``Lr`` a scalar or array matching the leading shape.
    Accepts a :class:`BicycleParams` in place of ``Lr``.
    """
    if isinstance(Lr, BicycleParams):
        Lr = Lr.Lr
    state = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    V = state[..., 2]
    theta = state[..., 3] + u[..., 1]
    gamma = u[..., 1]
    out = np.empty(np.broadcast_shapes(state.shape, u.shape[:-1] + (4,)))
    out[..., 0] = V * np.cos(theta)
    out[..., 1] = V * np.sin(theta)
    out[..., 2] = u[..., 0]
    out[..., 3] = V / Lr * np.sin(gamma)
    return out


@numba.njit(cache=True)
def bicycle_rhs_batch(t, y, p, out):
    """Compiled right-hand side over a batch; ``p`` rows are ``(a, gamma, Lr)``."""
    for b in range(y.shape[0]):
        V = y[b, 2]
        theta = y[b, 3] + p[b, 1]
        out[b, 0] = V * np.cos(theta)
        out[b, 1] = V * np.sin(theta)
        out[b, 2] = p[b, 0]
        out[b, 3] = V / p[b, 2] * np.sin(p[b, 1])


def output(state) -> np.ndarray:
    """Position (z1, z2) of one or many states."""
    return np.asarray(state, dtype=float)[..., :2].copy()


def gamma_to_steering(gamma: float, params: BicycleParams) -> float:
    """Front-wheel steering angle that produces velocity direction ``gamma``."""
    if not abs(gamma) < math.pi / 2:
        raise ValueError(f"|gamma| must be below pi/2, got {gamma}")
    ratio = (params.Lf + params.Lr) / params.Lr
    # atan maps any finite tangent into (-pi/2, pi/2); reject the saturated edge
    delta = math.atan(ratio * math.tan(gamma))
    if not abs(delta) < math.pi / 2:
        raise ValueError(f"gamma={gamma} needs a steering angle at +-pi/2")
    return delta


def steering_to_gamma(delta_f: float, params: BicycleParams) -> float:
    if not abs(delta_f) < math.pi / 2:
        raise ValueError(f"|delta_f| must be below pi/2, got {delta_f}")
    return math.atan(params.Lr / (params.Lf + params.Lr) * math.tan(delta_f))


def clamp_input(u, params: BicycleParams) -> np.ndarray:
    """Project ``(a, gamma)`` onto the actuator box."""
    return np.clip(np.asarray(u, dtype=float), params.lower, params.upper)
