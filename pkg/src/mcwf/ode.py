"""Embedded Runge-Kutta Cash-Karp 5(4) stepping with try/did/next control.

A call is handed ``dt_try`` and returns the step actually taken
(``dt_did <= dt_try``) together with a suggestion ``dt_next`` for the following
call.  The stepper keeps no state between calls, so rolling back a step only
requires the caller's cached ``(y, t, dt_try)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import NumericError, StiffnessError

# Cash & Karp (1990), Table 4
C = np.array([0.0, 1 / 5, 3 / 10, 3 / 5, 1.0, 7 / 8])
A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
    [3 / 10, -9 / 10, 6 / 5, 0.0, 0.0],
    [-11 / 54, 5 / 2, -70 / 27, 35 / 27, 0.0],
    [1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096],
])
B5 = np.array([37 / 378, 0.0, 250 / 621, 125 / 594, 0.0, 512 / 1771])
B4 = np.array([2825 / 27648, 0.0, 18575 / 48384, 13525 / 55296, 277 / 14336, 1 / 4])
E = B5 - B4

SAFETY = 0.9
MAX_GROWTH = 5.0
MIN_SHRINK = 0.2


@dataclass(frozen=True)
class StepControl:
    """ODE precision and timestep bounds."""

    eps_abs: float = 1e-12
    eps_rel: float = 1e-6
    dt_min: float = 1e-14
    dt_max: float = np.inf

    def __post_init__(self):
        if self.eps_abs < 0 or self.eps_rel < 0:
            raise ValueError("tolerances must be non-negative")
        if self.eps_abs == 0 and self.eps_rel == 0:
            raise ValueError("eps_abs and eps_rel cannot both be zero")
        if not 0 < self.dt_min <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_max")


@dataclass(frozen=True)
class StepResult:
    state_out: np.ndarray
    dt_did: float
    dt_next: float
    err_norm: float


@njit(cache=True)
def error_norm(y, y_new, err, eps_abs, eps_rel):
    """``max_i |err_i| / (eps_abs + eps_rel * max(|y_i|, |y_new_i|))``."""
    worst = 0.0
    for i in range(y.size):
        a = y[i].real * y[i].real + y[i].imag * y[i].imag
        b = y_new[i].real * y_new[i].real + y_new[i].imag * y_new[i].imag
        scale = eps_abs + eps_rel * np.sqrt(max(a, b))
        e = (err[i].real * err[i].real + err[i].imag * err[i].imag) / (scale * scale)
        if e > worst or e != e:
            worst = e
    return np.sqrt(worst)


@njit(cache=True)
def grow_factor(err):
    if err == 0.0:
        return MAX_GROWTH
    return min(MAX_GROWTH, SAFETY * err ** -0.2)


@njit(cache=True)
def shrink_factor(err):
    return max(MIN_SHRINK, SAFETY * err ** -0.25)


def cash_karp_step(rhs, y, t, dt):
    """Single fixed step; returns the 5th-order solution and the error vector."""
    y = np.asarray(y)
    k0 = np.asarray(rhs(t, y))
    k = np.empty((6,) + y.shape, dtype=np.result_type(y, k0))
    k[0] = k0
    flat = k.reshape(6, -1)
    for s in range(1, 6):
        ys = y + dt * (A[s, :s] @ flat[:s]).reshape(y.shape)
        k[s] = rhs(t + C[s] * dt, ys)
    y5 = y + dt * (B5 @ flat).reshape(y.shape)
    err = dt * (E @ flat).reshape(y.shape)
    return y5, err


def ck_step(rhs, y, t, dt_try, ctl: StepControl = StepControl()) -> StepResult:
    """Adaptive Cash-Karp step for ``dy/dt = rhs(t, y)``.

    Retries with a shrunken step until the mixed error norm is at most one.

    Raises:
        StiffnessError: if the step would fall below ``ctl.dt_min``.
        NumericError: if ``rhs`` produces non-finite values.
    """
    if not dt_try > 0:
        raise ValueError(f"dt_try must be positive, got {dt_try}")
    y = np.asarray(y)
    dt = min(dt_try, ctl.dt_max)
    while True:
        if dt < ctl.dt_min:
            raise StiffnessError(f"step {dt:.3e} below dt_min at t={t:.6g}")
        y_new, err_vec = cash_karp_step(rhs, y, t, dt)
        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(err_vec))):
            raise NumericError(f"non-finite derivative at t={t:.6g}")
        err = error_norm(y.ravel(), y_new.ravel(), err_vec.ravel(), ctl.eps_abs, ctl.eps_rel)
        if err <= 1.0:
            dt_next = min(dt * grow_factor(err), ctl.dt_max)
            return StepResult(y_new, dt, dt_next, err)
        dt *= shrink_factor(err)


def integrate(rhs, y0, t0, t1, dt0, ctl: StepControl = StepControl()):
    """Carry ``y0`` from ``t0`` to exactly ``t1`` with repeated ``ck_step`` calls.

    Returns ``(y1, dt_next, n_steps)``.
    """
    y, t, dt, steps = np.asarray(y0), t0, dt0, 0
    while t < t1:
        remaining = t1 - t
        last = dt >= remaining
        res = ck_step(rhs, y, t, min(dt, remaining), ctl)
        y = res.state_out
        steps += 1
        if last and res.dt_did == remaining:
            t = t1
            dt = max(res.dt_next, dt)
        else:
            t += res.dt_did
            dt = res.dt_next
    return y, dt, steps
