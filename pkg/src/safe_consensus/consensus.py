"""Newton-Raphson consensus law and leader reference signals."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graph import Topology


class SingularJacobian(ArithmeticError):
    """The prediction's input-Jacobian cannot be inverted."""

    def __init__(self, agent, jacobian):
        self.agent = agent
        self.jacobian = J = np.array(jacobian, dtype=float)
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        super().__init__(
            f"input-Jacobian of agent {agent} is singular: det={det:.3e}, "
            f"J={self.jacobian.tolist()}"
        )


@dataclass(frozen=True)
class SpeedupConfig:
    alpha: tuple[float, ...]

    def __post_init__(self):
        if any(not a >= 1 for a in self.alpha):
            raise ValueError(f"speedup factors must be >= 1, got {self.alpha}")

    @classmethod
    def uniform(cls, alpha: float, followers: int) -> SpeedupConfig:
        return cls((float(alpha),) * followers)

    @property
    def alpha_min(self) -> float:
        return min(self.alpha)


# -- reference signals ------------------------------------------------------

class ReferenceSignal:
    """Leader output r(t) for t >= 0."""

    kind = "abstract"

    def __call__(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise TypeError(f"{type(self).__name__} cannot be serialized")

    def speed_bound(self, t_max: float, samples: int = 20001) -> float:
        """Largest |dr/dt| on a uniform grid over [0, t_max], by central differences.

        Reported only; the controller never uses it.
        """
        ts = np.linspace(0.0, t_max, samples)
        h = 1e-5
        best = 0.0
        for t in ts:
            lo = max(t - h, 0.0)
            d = (self(t + h) - self(lo)) / (t + h - lo)
            best = max(best, float(np.hypot(*d)))
        return best


@dataclass(frozen=True)
class PlatoonReference(ReferenceSignal):
    """Straight approach to the origin, then a Lissajous loop.

    r(t) = start + velocity*t until ``t_switch``, afterwards
    (A1 sin(w1 (t - t_switch)), A2 sin(w2 (t - t_switch))).
    """

    start: tuple[float, float] = (-50.0, -60.0)
    velocity: tuple[float, float] = (3.75, 4.5)
    t_switch: float = 40.0 / 3.0
    amplitude: tuple[float, float] = (350.0, 210.0)
    frequency: tuple[float, float] = (0.01, 0.02)
    kind = "platoon"

    def __call__(self, t: float) -> np.ndarray:
        if t <= self.t_switch:
            return np.array([self.start[0] + self.velocity[0] * t, self.start[1] + self.velocity[1] * t])
        s = t - self.t_switch
        return np.array([self.amplitude[0] * math.sin(self.frequency[0] * s),
                         self.amplitude[1] * math.sin(self.frequency[1] * s)])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "start": list(self.start), "velocity": list(self.velocity),
                "t_switch": self.t_switch, "amplitude": list(self.amplitude),
                "frequency": list(self.frequency)}


@dataclass(frozen=True)
class ConstantReference(ReferenceSignal):
    point: tuple[float, float]
    kind = "constant"

    def __call__(self, t: float) -> np.ndarray:
        return np.array(self.point, dtype=float)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "point": list(self.point)}


@dataclass(frozen=True)
class LinearReference(ReferenceSignal):
    """Constant-velocity straight line."""

    start: tuple[float, float]
    velocity: tuple[float, float]
    kind = "linear"

    def __call__(self, t: float) -> np.ndarray:
        return np.array([self.start[0] + self.velocity[0] * t, self.start[1] + self.velocity[1] * t])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "start": list(self.start), "velocity": list(self.velocity)}


@dataclass(frozen=True)
class PiecewiseReference(ReferenceSignal):
    """Caller-supplied pieces ``(t_start, fn)``; ``fn`` receives time since its own start.

    Continuity across breakpoints is the caller's responsibility.
    """

    pieces: Sequence[tuple[float, Callable[[float], Sequence[float]]]] = field(default_factory=tuple)
    kind = "piecewise"

    def __post_init__(self):
        starts = [p[0] for p in self.pieces]
        if not starts or starts[0] != 0.0 or any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("pieces must start at t=0 with strictly increasing start times")

    def __call__(self, t: float) -> np.ndarray:
        start, fn = self.pieces[0]
        for s, f in self.pieces:
            if t >= s:
                start, fn = s, f
        return np.asarray(fn(t - start), dtype=float)


def reference_eval(ref: ReferenceSignal, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError(f"reference is defined for t >= 0, got {t}")
    return ref(t)


def reference_from_dict(d: dict) -> ReferenceSignal:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "platoon":
        return PlatoonReference(**{k: tuple(v) if isinstance(v, list) else float(v) for k, v in d.items()})
    if kind == "constant":
        return ConstantReference(tuple(map(float, d.pop("point"))), **d)
    if kind == "linear":
        return LinearReference(tuple(map(float, d.pop("start"))), tuple(map(float, d.pop("velocity"))), **d)
    raise ValueError(f"unknown reference kind {kind!r}")


# -- control law --------------------------------------------------------------

def disagreement(i: int, values: np.ndarray, topology: Topology) -> np.ndarray:
    total = np.zeros(values.shape[1])
    for j in topology.neighbors[i]:
        total += values[i] - values[j]
    return total


def nominal_input_rate(i: int, values, jacobian, alpha: float, topology: Topology) -> np.ndarray:
    """Input rate ``-alpha * J^{-1} * sum_j (g_i - g_j)`` for follower ``i``.

    ``values`` stacks the predicted outputs of all agents, leader first.
    """
    values = np.asarray(values, dtype=float)
    J = np.asarray(jacobian, dtype=float)
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if not np.isfinite(det) or abs(det) <= 1e-12 * float(np.sum(J * J)):
        raise SingularJacobian(i, J)
    e = disagreement(i, values, topology)
    # explicit 2x2 inverse keeps the result bitwise reproducible
    sol = np.array([J[1, 1] * e[0] - J[0, 1] * e[1], -J[1, 0] * e[0] + J[0, 0] * e[1]]) / det
    return -alpha * sol


def lyapunov_value(values) -> float:
    """Half the summed squared gaps between chain-adjacent predictions."""
    Y = np.asarray(values, dtype=float)
    d = np.diff(Y, axis=0)
    return 0.5 * float(np.sum(d * d))
