"""Batched Dormand-Prince 5(4) integrator.

All rows of a batch advance on one shared step sequence, so finite
differences taken across rows see the same discretization and stay smooth
in the perturbation.
"""
from __future__ import annotations

import numba
import numpy as np

# Dormand & Prince (1980) tableau, FSAL form
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# fifth-order minus embedded fourth-order weights, 7 stages incl. FSAL
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_ORDER = 4


class IntegratorError(RuntimeError):
    """Adaptive step collapsed or the step budget ran out."""

    def __init__(self, message, y=None, t=None):
        super().__init__(message)
        self.y = y
        self.t = t


def _rms_error(err, y_old, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y_old), np.abs(y_new))
    # worst row decides, so the whole batch shares the step
    return float(np.max(np.sqrt(np.mean((err / scale) ** 2, axis=-1))))


def _initial_step(fun, t0, y0, f0, direction, rtol, atol):
    scale = atol + np.abs(y0) * rtol
    d0 = np.max(np.sqrt(np.mean((y0 / scale) ** 2, axis=-1)))
    d1 = np.max(np.sqrt(np.mean((f0 / scale) ** 2, axis=-1)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    f1 = fun(t0 + h0 * direction, y1)
    d2 = np.max(np.sqrt(np.mean(((f1 - f0) / scale) ** 2, axis=-1))) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / (_ORDER + 1))
    return min(100 * h0, h1)


def dopri45(fun, t_span, y0, rtol=1e-8, atol=1e-8, max_steps=10_000):
    """Integrate ``y' = fun(t, y)`` over ``t_span`` and return ``y(t_end)``.

    ``y0`` may be ``(n,)`` or a batch ``(B, n)``; ``fun`` must accept and
    return arrays of the same shape.
    """
    t0, t_end = map(float, t_span)
    y = np.array(y0, dtype=float)
    if t_end == t0:
        return y
    direction = 1.0 if t_end > t0 else -1.0
    t = t0
    f = fun(t, y)
    h = _initial_step(fun, t, y, f, direction, rtol, atol)
    K = np.empty((7,) + y.shape)
    for _ in range(max_steps):
        min_step = 10 * abs(np.nextafter(t, direction * np.inf) - t)
        if abs(t_end - t) <= min_step:
            return y
        h = min(h, abs(t_end - t))
        if h < min_step:
            raise IntegratorError(f"step size underflow at t={t}", y=y.copy(), t=t)
        while True:
            K[0] = f
            for s in range(1, 6):
                dy = np.tensordot(_A[s], K[:s], axes=1)
                K[s] = fun(t + _C[s] * h * direction, y + h * direction * dy)
            y_new = y + h * direction * np.tensordot(_B, K[:6], axes=1)
            t_new = t + h * direction
            if direction * (t_new - t_end) > 0 or abs(t_end - t_new) < min_step:
                t_new = t_end
            f_new = fun(t_new, y_new)
            K[6] = f_new
            err = h * np.tensordot(_E, K, axes=1)
            err_norm = _rms_error(err, y, y_new, rtol, atol)
            if err_norm <= 1.0:
                factor = _MAX_FACTOR if err_norm == 0 else min(_MAX_FACTOR, _SAFETY * err_norm ** (-1 / (_ORDER + 1)))
                break
            h *= max(_MIN_FACTOR, _SAFETY * err_norm ** (-1 / (_ORDER + 1)))
            if h < min_step:
                raise IntegratorError(f"step size underflow at t={t}", y=y.copy(), t=t)
        t, y, f = t_new, y_new, f_new
        if t == t_end:
            return y
        h *= factor
    raise IntegratorError(f"exceeded {max_steps} steps before t={t_end}", y=y.copy(), t=t)


# -- compiled path ------------------------------------------------------------
# Same scheme as ``dopri45`` for right-hand sides written as numba functions
# ``rhs(t, y, p, out)`` over a (B, n) batch with per-row parameters ``p``.


_OK, _UNDERFLOW, _BUDGET = 0, 1, 2
_A_FLAT = np.zeros((6, 5))
for _s in range(1, 6):
    _A_FLAT[_s, :_s] = _A[_s]


@numba.njit(cache=True)
def _err_norm(err, y_old, y_new, rtol, atol):
    B, n = err.shape
    worst = 0.0
    for b in range(B):
        acc = 0.0
        for k in range(n):
            sc = atol + rtol * max(abs(y_old[b, k]), abs(y_new[b, k]))
            acc += (err[b, k] / sc) ** 2
        worst = max(worst, np.sqrt(acc / n))
    return worst


@numba.njit(cache=True)
def _dopri45_jit(rhs, p, y0, t0, t_end, rtol, atol, max_steps, A, B5, C, E):
    Bn, n = y0.shape
    y = y0.copy()
    K = np.empty((7, Bn, n))
    tmp = np.empty((Bn, n))
    y_new = np.empty((Bn, n))
    t = t0
    rhs(t, y, p, K[0])

    # initial step, as in dopri45
    scale = np.empty((Bn, n))
    for b in range(Bn):
        for k in range(n):
            scale[b, k] = atol + abs(y[b, k]) * rtol
    d0 = 0.0
    d1 = 0.0
    for b in range(Bn):
        a0 = 0.0
        a1 = 0.0
        for k in range(n):
            a0 += (y[b, k] / scale[b, k]) ** 2
            a1 += (K[0, b, k] / scale[b, k]) ** 2
        d0 = max(d0, np.sqrt(a0 / n))
        d1 = max(d1, np.sqrt(a1 / n))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    for b in range(Bn):
        for k in range(n):
            tmp[b, k] = y[b, k] + h0 * K[0, b, k]
    rhs(t + h0, tmp, p, K[1])
    d2 = 0.0
    for b in range(Bn):
        a2 = 0.0
        for k in range(n):
            a2 += ((K[1, b, k] - K[0, b, k]) / scale[b, k]) ** 2
        d2 = max(d2, np.sqrt(a2 / n))
    d2 /= h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 5.0)
    h = min(100 * h0, h1)

    for _ in range(max_steps):
        min_step = 10 * abs(np.nextafter(t, np.inf) - t)
        if abs(t_end - t) <= min_step:
            return y, t, _OK
        h = min(h, abs(t_end - t))
        if h < min_step:
            return y, t, _UNDERFLOW
        while True:
            for s in range(1, 6):
                for b in range(Bn):
                    for k in range(n):
                        acc = 0.0
                        for r in range(s):
                            acc += A[s, r] * K[r, b, k]
                        tmp[b, k] = y[b, k] + h * acc
                rhs(t + C[s] * h, tmp, p, K[s])
            for b in range(Bn):
                for k in range(n):
                    acc = 0.0
                    for r in range(6):
                        acc += B5[r] * K[r, b, k]
                    y_new[b, k] = y[b, k] + h * acc
            t_new = t + h
            if t_new > t_end or abs(t_end - t_new) < min_step:
                t_new = t_end
            rhs(t_new, y_new, p, K[6])
            for b in range(Bn):
                for k in range(n):
                    acc = 0.0
                    for r in range(7):
                        acc += E[r] * K[r, b, k]
                    tmp[b, k] = h * acc
            err_norm = _err_norm(tmp, y, y_new, rtol, atol)
            if err_norm <= 1.0:
                if err_norm == 0.0:
                    factor = 10.0
                else:
                    factor = min(10.0, 0.9 * err_norm ** (-0.2))
                break
            h *= max(0.2, 0.9 * err_norm ** (-0.2))
            if h < min_step:
                return y, t, _UNDERFLOW
        t = t_new
        y[:, :] = y_new
        K[0, :, :] = K[6]
        if t == t_end:
            return y, t, _OK
        h *= factor
    return y, t, _BUDGET


def dopri45_compiled(rhs, p, y0, t_span, rtol=1e-8, atol=1e-8, max_steps=10_000):
    """Compiled twin of :func:`dopri45` for a numba ``rhs(t, y, p, out)``; forward time only."""
    t0, t_end = map(float, t_span)
    y0 = np.ascontiguousarray(np.atleast_2d(y0), dtype=float)
    if t_end == t0:
        return y0.copy()
    if t_end < t0:
        raise ValueError("compiled integrator only runs forward in time")
    y, t, status = _dopri45_jit(rhs, p, y0, t0, t_end, rtol, atol, max_steps, _A_FLAT, _B, _C, _E)
    if status == _UNDERFLOW:
        raise IntegratorError(f"step size underflow at t={t}", y=y, t=t)
    if status == _BUDGET:
        raise IntegratorError(f"exceeded {max_steps} steps before t={t_end}", y=y, t=t)
    return y
