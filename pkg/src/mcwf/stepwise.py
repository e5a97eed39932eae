"""Stepwise adaptive MCWF trajectories with two-layer jump-probability control.

Each step integrates the no-jump evolution with the adaptive stepper,
renormalizes the state exactly, evaluates the jump rates on the evolved state
and lets a single uniform draw decide whether (and through which channel) an
instantaneous jump happens.  The next trial step is capped so that the total
jump probability per step stays below ``dp_limit`` (layer 1); a step whose
probability exceeds ``dp_overshoot`` is rolled back (layer 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import (ContractError, DegenerateStateError, NumericError,
                     PictureOverflowError, StiffnessError, TruncationError)
from .models import QuantumSystem
from .ode import StepControl
from .rng import PhiloxStream

DISABLED_OVERSHOOT = 1e6


@dataclass(frozen=True)
class DpControls:
    """Jump-probability control and sampling grid.

    ``dp_overshoot`` defaults to ``10 * dp_limit``; pass a huge value (e.g.
    :data:`DISABLED_OVERSHOOT`) to switch the rejection layer off.
    """

    dp_limit: float
    Dt: float
    T: float
    dp_overshoot: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.dp_limit < 1:
            raise ContractError(f"dp_limit must lie in (0, 1), got {self.dp_limit}")
        if self.dp_overshoot is None:
            object.__setattr__(self, "dp_overshoot", 10 * self.dp_limit)
        if not self.dp_overshoot > self.dp_limit:
            raise ContractError("dp_overshoot must exceed dp_limit")
        check_grid(self.Dt, self.T)

    @property
    def n_samples(self) -> int:
        return int(round(self.T / self.Dt))


def check_grid(Dt, T):
    if not (Dt > 0 and T > 0 and Dt <= T):
        raise ContractError(f"need 0 < Dt <= T, got Dt={Dt}, T={T}")
    n = round(T / Dt)
    if abs(n * Dt - T) > 1e-9 * T:
        raise ContractError(f"Dt={Dt} does not divide T={T}")


@dataclass(frozen=True)
class JumpDecision:
    draw: float
    selected: Optional[int]
    probabilities: np.ndarray


@dataclass(frozen=True)
class StepRecord:
    t_before: float
    dt_did: float
    jump_index: Optional[int]
    rates: np.ndarray
    dp_step: float
    rejected_layer2: bool
    norm_correction: float


@dataclass
class TrajectoryRecord:
    """Output of one trajectory.

    Attributes:
        grid: sampling instants ``u * Dt``.
        observables: name -> complex expectation values on the grid.
        stats: per-trajectory accumulators (see :func:`trajectory_stats`).
        jump_counts: jumps per channel.
        steps: optional per-step log with keys ``t``, ``dt``, ``n``, ``jump``,
            ``r_tot``.
    """

    grid: np.ndarray
    observables: dict
    stats: dict
    jump_counts: np.ndarray
    seed: int
    index: int
    status: str = "ok"
    steps: Optional[dict] = field(default=None, repr=False)


def jump_rates(psi, jumps) -> np.ndarray:
    """``r_m = <psi|J_m^dag J_m|psi>`` for a normalized state."""
    rates = np.array([float(np.sum(np.abs(j.apply(psi)) ** 2)) for j in jumps])
    if not np.all(np.isfinite(rates)):
        raise NumericError("non-finite jump rate")
    return rates


def cap_dt_next(dt_next_ode: float, r_tot: float, dp_limit: float) -> float:
    if r_tot < 0:
        raise ContractError("total rate must be non-negative")
    if r_tot == 0:
        return dt_next_ode
    return min(dt_next_ode, dp_limit / r_tot)


def select_jump(draw: float, rates, dt: float) -> JumpDecision:
    """Jump decision for one step of length ``dt`` given the uniform ``draw``.

    A jump fires iff ``draw < r_tot * dt``; the channel is the first ``m`` with
    ``draw < sum_{i<=m} r_i dt``, so the same draw also picks the channel with
    probabilities ``r_m / r_tot``.
    """
    rates = np.asarray(rates, dtype=float)
    total = rates.sum()
    probs = rates / total if total > 0 else np.zeros_like(rates)
    if total > 0 and draw < total * dt:
        m = int(K.select_channel(draw, rates, dt))
        return JumpDecision(draw, m, probs)
    return JumpDecision(draw, None, probs)


def raise_status(code, where=""):
    """Translate a kernel status code into the matching exception."""
    suffix = f" {where}" if where else ""
    if code == K.OK:
        return
    if code == K.STIFF:
        raise StiffnessError("adaptive step fell below dt_min" + suffix)
    if code == K.NONFINITE:
        raise NumericError("non-finite state during integration" + suffix)
    if code == K.OVERFLOW:
        raise PictureOverflowError("picture factors would exceed 1e100" + suffix)
    if code == K.TRUNCATION:
        raise TruncationError("edge-bin population exceeded 1e-6" + suffix)
    if code == K.DEGENERATE:
        raise DegenerateStateError("state norm vanished" + suffix)
    raise NumericError(f"kernel status {code}" + suffix)


def advance(psi, t, dt_try, system: QuantumSystem, ctl: DpControls,
            ode_ctl: StepControl = StepControl(), rng: PhiloxStream = None,
            renormalize: bool = True, dt_floor: float = 0.0):
    """One step of the stepwise algorithm.

    Args:
        psi: normalized state at ``t``.
        dt_try: trial step; the caller clips it at the next sampling instant.
        rng: stream supplying the jump draw (advanced in place).
        renormalize: exact renormalization after the ODE step.
        dt_floor: unclipped trial step to keep as suggestion when ``dt_try``
            was clipped and accepted in full.

    Returns:
        ``(psi_new, t_new, dt_try_next, StepRecord)``.  On a layer-2 rejection
        ``psi_new`` and ``t_new`` equal the inputs.
    """
    if rng is None:
        raise ContractError("advance needs a random stream")
    sysa, syss, _ = K.system_tuples(system.packed())
    work = np.array(psi, dtype=np.complex128)
    ws = K.make_workspace(work.size)
    rates = np.zeros(max(len(system.jumps), 1))
    code, dt_did, dt_next, jump, r_tot, nrm2, rejected = K.advance(
        work, float(dt_try), float(dt_floor), ctl.dp_limit, ctl.dp_overshoot,
        ode_ctl.eps_abs, ode_ctl.eps_rel, ode_ctl.dt_min, rng.state, renormalize,
        ws, sysa, syss, rates)
    raise_status(code, f"at t={t:.6g}")
    rates = rates[:len(system.jumps)].copy()
    rec = StepRecord(t_before=t, dt_did=dt_did, jump_index=None if jump < 0 else int(jump),
                     rates=rates, dp_step=r_tot * dt_did, rejected_layer2=bool(rejected),
                     norm_correction=nrm2)
    if rejected:
        return np.array(psi, dtype=np.complex128), t, dt_next, rec
    return work, t + dt_did, dt_next, rec


def trajectory_stats(raw: np.ndarray) -> dict:
    return {
        "n_steps": int(raw[K.S_STEPS]),
        "sum_dt": raw[K.S_SUM_DT],
        "sum_dt2": raw[K.S_SUM_DT2],
        "n_full": int(raw[K.S_FULL]),
        "sum_inv_r": raw[K.S_SUM_INV_R],
        "n_inv_r": int(raw[K.S_N_INV_R]),
        "n_rejected": int(raw[K.S_REJECTED]),
        "max_norm_drift": raw[K.S_MAX_DRIFT],
        "t_reached": raw[K.S_T_REACHED],
        "retrieval_failures": int(raw[K.S_FAILURES]),
        "root_iterations": int(raw[K.S_ITERS]),
    }


def _grid(ctl):
    return np.arange(ctl.n_samples + 1) * ctl.Dt


def _as_state(psi0, dim):
    psi = np.ascontiguousarray(psi0, dtype=np.complex128)
    if psi.shape != (dim,):
        raise ContractError(f"initial state must have shape ({dim},)")
    if not np.all(np.isfinite(psi)) or not np.any(psi):
        raise DegenerateStateError("initial state is zero or non-finite")
    return psi


def run_trajectory(psi0, system: QuantumSystem, ctl: DpControls,
                   ode_ctl: StepControl = StepControl(), seed: int = 0, index: int = 0,
                   record_steps: bool = False, renormalize: bool = True,
                   raise_on_error: bool = True) -> TrajectoryRecord:
    """Run one stepwise trajectory on the grid ``u * Dt`` up to ``T``.

    The random stream is ``(seed, index)``; the result is a deterministic
    function of the inputs.

    Raises:
        StiffnessError, NumericError, TruncationError: if the trajectory aborts
            and ``raise_on_error``; otherwise the record carries the status and
            the samples after the abort are NaN.
    """
    pk = system.packed()
    sysa, syss, obsa = K.system_tuples(pk)
    psi = _as_state(psi0, system.dim)
    ns = ctl.n_samples
    obs = np.full((ns + 1, len(pk["obs_names"])), np.nan + 0j)
    raw = np.zeros(K.N_STATS)
    counts = np.zeros(len(system.jumps), dtype=np.int64)
    code, lt, ldt, lx, lj, lr = K.run_stepwise(
        psi, ns, ctl.Dt, ctl.dp_limit, ctl.dp_overshoot, ode_ctl.eps_abs, ode_ctl.eps_rel,
        ode_ctl.dt_min, seed, index, renormalize, sysa, syss, obsa, pk["corr_obs"],
        record_steps, obs, raw, counts)
    if code != K.OK and raise_on_error:
        raise_status(code, f"in trajectory {index} (seed {seed})")
    steps = None
    if record_steps:
        steps = {"t": lt, "dt": ldt, "n": lx, "jump": lj, "r_tot": lr}
    return TrajectoryRecord(
        grid=_grid(ctl), observables=dict(zip(pk["obs_names"], obs.T.copy())),
        stats=trajectory_stats(raw), jump_counts=counts, seed=seed, index=index,
        status=K.STATUS_NAMES[code], steps=steps)


def diad_average(psi, system: QuantumSystem, dt: float, n_samples: int, seed: int = 0,
                 ode_ctl: StepControl = StepControl()):
    """Average of ``|psi'><psi'|`` over independent single steps of length ``dt``.

    Layer 2 is off and nothing caps the step, so every sample takes exactly one
    step of ``dt`` (the ODE tolerance must admit it).
    """
    sysa, syss, _ = K.system_tuples(system.packed())
    psi, _ = _normalized(psi)
    rho, short = K.diad_average(psi, float(dt), int(n_samples), seed,
                                ode_ctl.eps_abs, ode_ctl.eps_rel, sysa, syss)
    if short:
        raise ContractError(f"{short} samples could not take the full step dt={dt}")
    return rho


def _normalized(psi):
    psi = np.asarray(psi, dtype=np.complex128)
    n = np.linalg.norm(psi)
    if n == 0 or not np.isfinite(n):
        raise DegenerateStateError("cannot normalize")
    return psi / n, n


__all__ = ["DpControls", "JumpDecision", "StepRecord", "TrajectoryRecord", "jump_rates",
           "cap_dt_next", "select_jump", "advance", "run_trajectory", "diad_average",
           "DISABLED_OVERSHOOT"]
