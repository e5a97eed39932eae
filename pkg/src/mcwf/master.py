"""Direct Lindblad master-equation solver used as the ensemble reference.

The density matrix is flattened to a real vector and advanced with the same
Cash-Karp stepper as the trajectories.  Pictures are anchored per step exactly
like the wave-function engines: operators are dressed with
``exp(i (D_j - D_k) tau)`` during a step and ``rho <- U rho U^dag`` with
``U = exp(-i D dt)`` brings the result back to the lab frame.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .errors import DimensionMismatchError, NumericError
from .models import QuantumSystem
from .ode import StepControl, ck_step
from .stepwise import check_grid
from .timeseries import TimeSeries

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-8
EIGEN_TOL = 1e-8


def check_density_matrix(rho, where=""):
    """Raise :class:`NumericError` naming the worst violated invariant."""
    rho = np.asarray(rho)
    herm = float(np.max(np.abs(rho - rho.conj().T))) if rho.size else 0.0
    tr = abs(np.trace(rho) - 1.0)
    eig = float(np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))))
    problems = []
    if herm > HERMITIAN_TOL:
        problems.append(f"hermiticity violated by {herm:.3e}")
    if tr > TRACE_TOL:
        problems.append(f"trace off by {tr:.3e}")
    if eig < -EIGEN_TOL:
        problems.append(f"eigenvalue {eig:.3e}")
    if problems:
        raise NumericError("density matrix invalid" + (f" {where}" if where else "")
                           + ": " + "; ".join(problems))


def _check_dims(rho, system):
    if rho.shape != (system.dim, system.dim):
        raise DimensionMismatchError(
            f"density matrix shape {rho.shape} does not match system dim {system.dim}")


def lindblad_rhs(rho, system: QuantumSystem) -> np.ndarray:
    """``-i (H_nH rho - rho H_nH^dag) + sum_m J_m rho J_m^dag`` in the lab frame."""
    rho = np.asarray(rho, dtype=np.complex128)
    _check_dims(rho, system)
    h = system.h_nh.dense()
    out = -1j * (h @ rho - rho @ h.conj().T)
    for j in system.jumps:
        jd = j.dense()
        out += jd @ rho @ jd.conj().T
    return out


class _PictureRHS:
    """Right-hand side for the step-anchored picture density matrix."""

    def __init__(self, system: QuantumSystem):
        pk = system.packed()
        self.dim = system.dim
        self.d = pk["exact"]
        self.trivial = not np.any(self.d)
        h = system.h_nh
        data = np.array(h.data)
        data[h.offsets == 0] -= self.d
        self.h_off = np.ascontiguousarray(h.offsets)
        self.h_data = np.ascontiguousarray(data)
        self.jumps = (pk["jump_off"], pk["jump_cnt"], pk["jump_data"])
        self.linear = bool(pk["linear"])
        self.slope = complex(pk["slope"])

    def __call__(self, tau, y):
        n = self.dim
        rho = y.view(np.complex128).reshape(n, n)
        out = np.empty((n, n), dtype=np.complex128)
        K.master_rhs(tau, rho, out, self.h_off, self.h_data, *self.jumps, self.d,
                     self.linear, self.slope)
        return out.reshape(-1).view(np.float64)

    def to_lab(self, rho, dt):
        if self.trivial:
            return rho
        u = np.exp(-1j * self.d * dt)
        return u[:, None] * rho * u.conj()[None, :]


def evolve_master(rho0, system: QuantumSystem, Dt: float, T: float,
                  ode_ctl: StepControl = StepControl(), check: bool = True) -> TimeSeries:
    """Integrate the master equation and sample observables at ``u * Dt``.

    Raises:
        NumericError: if a sampled density matrix breaks an invariant.
    """
    check_grid(Dt, T)
    rho = np.array(rho0, dtype=np.complex128)
    _check_dims(rho, system)
    if check:
        check_density_matrix(rho, "at t=0")
    rhs = _PictureRHS(system)
    ns = int(round(T / Dt))
    obs = {k: np.zeros(ns + 1, dtype=np.complex128) for k in system.observables}
    dense_obs = {k: op.dense() for k, op in system.observables.items()}

    def sample(u, rho):
        for k, m in dense_obs.items():
            obs[k][u] = np.trace(m @ rho)

    sample(0, rho)
    t = 0.0
    dt_try = Dt
    for u in range(1, ns + 1):
        target = u * Dt
        while t < target:
            remaining = target - t
            if remaining <= 4e-16 * target:
                break
            clipped = dt_try > remaining
            h = remaining if clipped else dt_try
            y = np.ascontiguousarray(rho).reshape(-1).view(np.float64)
            res = ck_step(rhs, y, 0.0, h, ode_ctl)
            rho = rhs.to_lab(res.state_out.view(np.complex128).reshape(rho.shape), res.dt_did)
            if clipped and res.dt_did == h:
                t = target
                dt_try = max(res.dt_next, dt_try)
            else:
                t += res.dt_did
                dt_try = res.dt_next
        t = target
        if check:
            check_density_matrix(rho, f"at t={target:.6g}")
        rho = 0.5 * (rho + rho.conj().T)
        sample(u, rho)
    grid = np.arange(ns + 1) * Dt
    return TimeSeries.from_expectations(grid, obs)
