"""Norm-threshold ("integrating") MCWF trajectories.

The state evolves without renormalization.  A uniform threshold is drawn and a
jump fires once the squared norm decays to it; the crossing time is recovered by
re-integrating from the start of the current segment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels as K
from .errors import ContractError
from .models import QuantumSystem
from .ode import StepControl
from .stepwise import (TrajectoryRecord, _as_state, _grid, check_grid, raise_status,
                       trajectory_stats)


@dataclass(frozen=True)
class IntegratingControls:
    Dt: float
    T: float
    norm_tol: float = 0.001
    max_iters: int = 5

    def __post_init__(self):
        if not 0 < self.norm_tol < 0.1:
            raise ContractError(f"norm_tol must lie in (0, 0.1), got {self.norm_tol}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ContractError("max_iters must be a positive integer")
        check_grid(self.Dt, self.T)

    @property
    def n_samples(self) -> int:
        return int(round(self.T / self.Dt))


@dataclass(frozen=True)
class JumpTime:
    t: float
    state: object
    norm2: float
    converged: bool
    iterations: int


def find_jump_time(lo, hi, threshold: float, reintegrate: Callable, norm_tol: float = 0.001,
                   max_iters: int = 5) -> JumpTime:
    """Locate where the squared norm falls to ``threshold`` inside ``[t_lo, t_hi]``.

    Args:
        lo, hi: ``(t, norm2)`` pairs bracketing the crossing.
        reintegrate: ``t -> (norm2, state)``.
        norm_tol: absolute tolerance on the squared norm.

    Guesses interpolate the logarithm of the norm linearly (plain linear
    interpolation if a norm is zero); an end of the bracket that is kept twice
    in a row forces a bisection.  If ``max_iters`` runs out, the best iterate is
    returned with ``converged=False``.

    Raises:
        ContractError: if the pair does not bracket the threshold.
    """
    (t_lo, n_lo), (t_hi, n_hi) = lo, hi
    if not (t_lo < t_hi and n_lo > threshold >= n_hi):
        raise ContractError("find_jump_time needs norm2(t_lo) > threshold >= norm2(t_hi)")
    best = None
    last_side, same = 0, 0
    for it in range(1, max_iters + 1):
        if same >= 2:
            guess = 0.5 * (t_lo + t_hi)
            same = 0
        elif n_lo > 0 and n_hi > 0 and threshold > 0:
            guess = t_lo + np.log(n_lo / threshold) / np.log(n_lo / n_hi) * (t_hi - t_lo)
        else:
            guess = t_lo + (n_lo - threshold) / (n_lo - n_hi) * (t_hi - t_lo)
        if not t_lo < guess < t_hi:
            guess = 0.5 * (t_lo + t_hi)
        n_g, state = reintegrate(guess)
        gap = abs(n_g - threshold)
        if best is None or gap < best[0]:
            best = (gap, guess, state, n_g)
        if gap <= norm_tol:
            return JumpTime(guess, state, n_g, True, it)
        if n_g < threshold:
            t_hi, n_hi, side = guess, n_g, 1
        else:
            t_lo, n_lo, side = guess, n_g, -1
        same = same + 1 if side == last_side else 1
        last_side = side
    gap, t, state, n_g = best
    return JumpTime(t, state, n_g, False, max_iters)


def run_trajectory_integrating(psi0, system: QuantumSystem, ctl: IntegratingControls,
                               ode_ctl: StepControl = StepControl(), seed: int = 0,
                               index: int = 0, raise_on_error: bool = True) -> TrajectoryRecord:
    """One trajectory of the norm-threshold method on the grid ``u * Dt``.

    ``stats["retrieval_failures"]`` counts jumps whose crossing time could not
    be pinned within ``norm_tol`` in ``max_iters`` iterations.
    """
    pk = system.packed()
    sysa, syss, obsa = K.system_tuples(pk)
    psi = _as_state(psi0, system.dim)
    ns = ctl.n_samples
    obs = np.full((ns + 1, len(pk["obs_names"])), np.nan + 0j)
    raw = np.zeros(K.N_STATS)
    counts = np.zeros(len(system.jumps), dtype=np.int64)
    code = K.run_integrating(psi, ns, ctl.Dt, ctl.norm_tol, ctl.max_iters, ode_ctl.eps_abs,
                             ode_ctl.eps_rel, ode_ctl.dt_min, seed, index, sysa, syss, obsa,
                             obs, raw, counts)
    if code != K.OK and raise_on_error:
        raise_status(code, f"in trajectory {index} (seed {seed})")
    return TrajectoryRecord(
        grid=_grid(ctl), observables=dict(zip(pk["obs_names"], obs.T.copy())),
        stats=trajectory_stats(raw), jump_counts=counts, seed=seed, index=index,
        status=K.STATUS_NAMES[code])
