"""Ensemble runs, reductions and the statistics used to study convergence.

Trajectory ``i`` of an ensemble always uses the random stream
``(base_seed, i)``, so results do not depend on chunking or thread count.
Reductions are plain sums over the trajectory axis.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import ContractError, EnsembleFailure, UndefinedMetricError
from .integrating import IntegratingControls
from .models import QuantumSystem
from .ode import StepControl
from .stepwise import DpControls, _as_state, _grid
from .timeseries import TimeSeries

FAILURE_THRESHOLD = 1e-3
ENGINES = ("stepwise", "integrating")


def deviation(f, g, column: str = "n") -> float:
    """``2 ||f - g|| / || |f| + |g| ||`` with ``||h|| = int |h| dt`` (trapezoid).

    ``f`` and ``g`` are :class:`TimeSeries` on identical grids (``column``
    selects the observable) or plain arrays sampled on a common uniform grid.

    Raises:
        UndefinedMetricError: if both series vanish identically.
    """
    if isinstance(f, TimeSeries) or isinstance(g, TimeSeries):
        if not (isinstance(f, TimeSeries) and isinstance(g, TimeSeries)):
            raise ContractError("deviation needs two TimeSeries or two arrays")
        if f.grid.shape != g.grid.shape or np.max(np.abs(f.grid - g.grid)) > 1e-9 * f.grid[-1]:
            raise ContractError("deviation needs identical grids")
        grid, a, b = f.grid, f[column], g[column]
    else:
        a, b = np.asarray(f, dtype=float), np.asarray(g, dtype=float)
        if a.shape != b.shape:
            raise ContractError("series lengths differ")
        grid = np.arange(a.size, dtype=float)
    den = np.trapezoid(np.abs(a) + np.abs(b), grid)
    if den == 0:
        raise UndefinedMetricError("deviation undefined for two vanishing series")
    return float(2 * np.trapezoid(np.abs(a - b), grid) / den)


def critical_dp(n: int, kappa: float, nTh: float, Dt: float) -> float:
    """Largest jump probability of a full ``Dt`` step taken from Fock state ``n``."""
    if n < 0:
        raise ContractError("n must be non-negative")
    return 2 * kappa * Dt * ((2 * nTh + 1) * n + nTh)


def total_rate(n, kappa: float, nTh: float):
    return 2 * kappa * ((2 * nTh + 1) * np.asarray(n, dtype=float) + nTh)


def predicted_mean_dt(dp: float, inv_rates=None, n_history=None, kappa: float = 1.0,
                      nTh: float = 0.0) -> float:
    """Mean timestep expected under pure jump-probability control.

    Either pass ``inv_rates``, per-trajectory averages of ``1/r_tot`` (as
    collected step by step by the engines), or ``n_history``, an array
    ``(n_traj, n_samples)`` of photon numbers sampled in time, from which
    ``1/r_tot`` is formed and averaged along each trajectory.  The result is
    ``dp`` times the mean over trajectories.
    """
    if (inv_rates is None) == (n_history is None):
        raise ContractError("pass exactly one of inv_rates and n_history")
    if inv_rates is not None:
        vals = np.asarray(inv_rates, dtype=float).reshape(-1)
    else:
        hist = np.atleast_2d(np.asarray(n_history, dtype=float))
        vals = np.mean(1.0 / total_rate(hist, kappa, nTh), axis=1)
    if vals.size == 0:
        raise ContractError("empty history")
    return float(dp * np.mean(vals))


def time_average(samples, method: str = "equal-time") -> float:
    """Average of ``(value, dt)`` samples.

    ``equal-time``: plain mean (samples equally spaced in time, ``dt`` ignored).
    ``equal-steps``: ``sum dt v / sum dt`` (one sample per step).

    Raises:
        ContractError: if a ``dt`` is missing under ``equal-steps``.
    """
    values = np.array([s[0] for s in samples], dtype=float)
    if values.size == 0:
        raise ContractError("no samples")
    if method == "equal-time":
        return float(values.mean())
    if method == "equal-steps":
        dts = [s[1] for s in samples]
        if any(d is None for d in dts):
            raise ContractError("equal-steps averaging needs dt on every sample")
        dts = np.asarray(dts, dtype=float)
        return float(np.sum(dts * values) / np.sum(dts))
    raise ContractError(f"unknown method {method!r}")


def pearson_from_sums(n, sx, sy, sxx, syy, sxy) -> float:
    cov = n * sxy - sx * sy
    var = (n * sxx - sx * sx) * (n * syy - sy * sy)
    if not var > 0:
        return float("nan")
    return float(np.clip(cov / np.sqrt(var), -1.0, 1.0))


def ratio_se(num, den) -> float:
    """Standard error of ``sum(num) / sum(den)`` over independent trajectories."""
    num, den = np.asarray(num, float), np.asarray(den, float)
    n = num.size
    if n < 2:
        return float("nan")
    r = num.sum() / den.sum()
    resid = num - r * den
    return float(np.sqrt(np.sum(resid ** 2) / (n * (n - 1))) / den.mean())


@dataclass
class EnsembleStatistics:
    """Reduced results of an ensemble run.

    Per-trajectory arrays keep the order of trajectory indices; failed
    trajectories are excluded from every reduction.
    """

    n_traj: int
    mean: TimeSeries
    obs_names: tuple
    steps: np.ndarray
    sum_dt: np.ndarray
    sum_dt2: np.ndarray
    full_steps: np.ndarray
    inv_rate_sum: np.ndarray
    inv_rate_n: np.ndarray
    jump_counts: np.ndarray
    rejected: np.ndarray
    retrieval_failures: np.ndarray
    corr_sums: np.ndarray
    failed_indices: list = field(default_factory=list)
    failure_codes: list = field(default_factory=list)
    samples: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def mean_dt_per_traj(self) -> np.ndarray:
        return self.sum_dt / self.steps

    @property
    def mean_dt(self) -> float:
        return float(np.mean(self.mean_dt_per_traj))

    @property
    def mean_dt_se(self) -> float:
        if self.n_traj < 2:
            return float("nan")
        return float(np.std(self.mean_dt_per_traj, ddof=1) / np.sqrt(self.n_traj))

    @property
    def pooled_mean_dt(self) -> float:
        return float(self.sum_dt.sum() / self.steps.sum())

    @property
    def pooled_mean_dt_se(self) -> float:
        return ratio_se(self.sum_dt, self.steps)

    @property
    def full_step_fraction(self) -> float:
        return float(self.full_steps.sum() / self.steps.sum())

    @property
    def mean_jumps(self) -> np.ndarray:
        return self.jump_counts.mean(axis=0)

    def jump_difference(self):
        """Mean and standard error of ``jumps[0] - jumps[1]`` per trajectory."""
        if self.jump_counts.shape[1] == 0:
            return 0.0, 0.0
        if self.jump_counts.shape[1] < 2:
            d = self.jump_counts[:, 0].astype(float)
        else:
            d = (self.jump_counts[:, 0] - self.jump_counts[:, 1]).astype(float)
        se = float(d.std(ddof=1) / np.sqrt(d.size)) if d.size > 1 else float("nan")
        return float(d.mean()), se

    @property
    def correlation(self) -> float:
        """Pearson correlation of step size and ``<n>`` at step start, pooled."""
        s = self.corr_sums
        return pearson_from_sums(*s)

    @property
    def inv_rate(self) -> np.ndarray:
        """Per-trajectory step average of ``1/r_tot`` at step start."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.inv_rate_sum / self.inv_rate_n

    def predicted_mean_dt(self, dp: float, pooled: bool = True) -> float:
        """``dp`` times the average of ``1/r_tot`` along and over trajectories.

        ``pooled=True`` averages over all steps of the ensemble and is the
        counterpart of :attr:`pooled_mean_dt`; ``pooled=False`` averages per
        trajectory first and is the counterpart of :attr:`mean_dt`.
        """
        if pooled:
            return float(dp * self.inv_rate_sum.sum() / self.inv_rate_n.sum())
        return predicted_mean_dt(dp, inv_rates=self.inv_rate)

    def subset_mean(self, indices) -> TimeSeries:
        """Ensemble mean over a subset of trajectories (needs kept samples)."""
        if self.samples is None:
            raise ContractError("samples were not kept")
        sub = self.samples[np.asarray(indices)]
        return _mean_series(self.mean.grid, sub, self.obs_names)

    def as_dict(self) -> dict:
        diff, diff_se = self.jump_difference()
        out = {
            "n_traj": self.n_traj,
            "n_failed": len(self.failed_indices),
            "mean_dt": self.mean_dt,
            "mean_dt_se": self.mean_dt_se,
            "pooled_mean_dt": self.pooled_mean_dt,
            "pooled_mean_dt_se": self.pooled_mean_dt_se,
            "full_step_fraction": self.full_step_fraction,
            "total_steps": int(self.steps.sum()),
            "correlation_dt_n": self.correlation,
            "layer2_rejections": int(self.rejected.sum()),
            "retrieval_failures": int(self.retrieval_failures.sum()),
            "jump_difference": diff,
            "jump_difference_se": diff_se,
        }
        if self.inv_rate_n.sum() > 0:
            out["mean_inv_rate"] = float(self.inv_rate_sum.sum() / self.inv_rate_n.sum())
        for m, v in enumerate(self.mean_jumps):
            out[f"mean_jumps_{m}"] = float(v)
        if self.jump_counts.shape[1]:
            out["mean_jumps_avg"] = float(np.mean(self.mean_jumps))
        return out


def _mean_series(grid, samples, names) -> TimeSeries:
    mean = samples.sum(axis=0) / samples.shape[0]
    return TimeSeries.from_expectations(grid, {nm: mean[:, i] for i, nm in enumerate(names)})


def _chunks(n, jobs):
    size = max(1, min(2048, -(-n // max(1, jobs * 4))))
    return [(s, min(n, s + size)) for s in range(0, n, size)]


def run_ensemble(engine: str, system: QuantumSystem, psi0, controls, n_traj: int,
                 base_seed: int = 0, ode_ctl: StepControl = StepControl(), jobs: int = 1,
                 renormalize: bool = True, keep_samples: bool = True,
                 first_index: int = 0,
                 failure_threshold: float = FAILURE_THRESHOLD) -> EnsembleStatistics:
    """Run ``n_traj`` trajectories and reduce them.

    Args:
        engine: ``"stepwise"`` (``controls`` is a :class:`DpControls`) or
            ``"integrating"`` (:class:`IntegratingControls`).
        jobs: worker threads; the compiled kernels release the GIL.
        first_index: stream index of the first trajectory.

    Raises:
        EnsembleFailure: if more than ``failure_threshold`` of the trajectories
            abort; the exception lists their indices and status codes.
    """
    if n_traj < 1:
        raise ContractError("n_traj must be at least 1")
    if engine == "stepwise" and not isinstance(controls, DpControls):
        raise ContractError("stepwise engine needs DpControls")
    if engine == "integrating" and not isinstance(controls, IntegratingControls):
        raise ContractError("integrating engine needs IntegratingControls")
    if engine not in ENGINES:
        raise ContractError(f"unknown engine {engine!r}")
    if not (0 <= base_seed < 2 ** 63 and 0 <= first_index and first_index + n_traj <= 2 ** 63):
        raise ContractError("seed and stream indices must lie in [0, 2**63)")
    pk = system.packed()
    sysa, syss, obsa = K.system_tuples(pk)
    psi = _as_state(psi0, system.dim)
    psi = psi / np.linalg.norm(psi)
    ns = controls.n_samples
    n_obs = len(pk["obs_names"])
    n_j = len(system.jumps)
    obs = np.full((n_traj, ns + 1, n_obs), np.nan + 0j)
    raw = np.zeros((n_traj, K.N_STATS))
    counts = np.zeros((n_traj, n_j), dtype=np.int64)
    status = np.zeros(n_traj, dtype=np.int64)

    def work(bounds):
        lo, hi = bounds
        if engine == "stepwise":
            K.run_stepwise_batch(psi, ns, controls.Dt, controls.dp_limit, controls.dp_overshoot,
                                 ode_ctl.eps_abs, ode_ctl.eps_rel, ode_ctl.dt_min, base_seed,
                                 first_index + lo, renormalize, sysa, syss, obsa,
                                 pk["corr_obs"], obs[lo:hi], raw[lo:hi], counts[lo:hi],
                                 status[lo:hi])
        else:
            K.run_integrating_batch(psi, ns, controls.Dt, controls.norm_tol, controls.max_iters,
                                    ode_ctl.eps_abs, ode_ctl.eps_rel, ode_ctl.dt_min,
                                    base_seed, first_index + lo, sysa, syss, obsa,
                                    obs[lo:hi], raw[lo:hi], counts[lo:hi], status[lo:hi])

    chunks = _chunks(n_traj, jobs)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(work, chunks))
    else:
        for c in chunks:
            work(c)

    failed = np.nonzero(status != K.OK)[0]
    if failed.size > failure_threshold * n_traj:
        codes = [int(status[i]) for i in failed]
        raise EnsembleFailure(
            f"{failed.size} of {n_traj} trajectories aborted "
            f"({', '.join(sorted({K.STATUS_NAMES[c] for c in codes}))})",
            failed_indices=(first_index + failed).tolist(), codes=codes)
    ok = status == K.OK
    obs, raw, counts = obs[ok], raw[ok], counts[ok]
    grid = _grid(controls)
    corr = np.array([raw[:, K.S_STEPS].sum(), raw[:, K.S_SUM_X].sum(),
                     raw[:, K.S_SUM_DT].sum(), raw[:, K.S_SUM_X2].sum(),
                     raw[:, K.S_SUM_DT2].sum(), raw[:, K.S_SUM_XDT].sum()])
    return EnsembleStatistics(
        n_traj=int(ok.sum()),
        mean=_mean_series(grid, obs, pk["obs_names"]),
        obs_names=pk["obs_names"],
        steps=raw[:, K.S_STEPS].copy(),
        sum_dt=raw[:, K.S_SUM_DT].copy(),
        sum_dt2=raw[:, K.S_SUM_DT2].copy(),
        full_steps=raw[:, K.S_FULL].copy(),
        inv_rate_sum=raw[:, K.S_SUM_INV_R].copy(),
        inv_rate_n=raw[:, K.S_N_INV_R].copy(),
        jump_counts=counts,
        rejected=raw[:, K.S_REJECTED].copy(),
        retrieval_failures=raw[:, K.S_FAILURES].copy(),
        corr_sums=corr,
        failed_indices=(first_index + failed).tolist(),
        failure_codes=[int(status[i]) for i in failed],
        samples=obs if keep_samples else None,
    )


def step_fit(xs, values, errors, gap: int, window: int = 5):
    """Weighted least-squares fit of a smooth trend plus a step between ``gap`` and ``gap+1``.

    The trend is quadratic when at least five points are available, else linear.

    Uses up to ``window`` scan points on each side (at least two).  Returns
    ``(jump, se)``; ``(nan, nan)`` when a side has fewer than two points.
    """
    xs = np.asarray(xs, dtype=float)
    lo, hi = max(0, gap + 1 - window), min(xs.size, gap + 1 + window)
    if gap + 1 - lo < 2 or hi - gap - 1 < 2:
        return float("nan"), float("nan")
    x = xs[lo:hi] - 0.5 * (xs[gap] + xs[gap + 1])
    y = np.asarray(values, dtype=float)[lo:hi]
    w = 1.0 / np.asarray(errors, dtype=float)[lo:hi] ** 2
    cols = [np.ones_like(x), x]
    if x.size >= 5:
        # curvature of the trend; orthogonal to the step on symmetric windows
        cols.append(x * x)
    cols.append((np.arange(lo, hi) > gap).astype(float))
    X = np.column_stack(cols)
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    beta = cov @ (X.T @ (w * y))
    return float(beta[-1]), float(np.sqrt(cov[-1, -1]))


def scan_jumps(xs, values, errors, window: int = 5):
    """Step estimates and standard errors for every gap of a scan (entry ``i``: gap ``i|i+1``)."""
    n = len(xs) - 1
    out = np.array([step_fit(xs, values, errors, g, window) for g in range(n)])
    return out[:, 0], out[:, 1]


def find_discontinuities(xs, values, errors, n_se: float = 3.0, window: int = 5):
    """Scan gaps where the fitted upward step exceeds ``n_se`` standard errors.

    Each gap is tested against a smooth local trend (see :func:`step_fit`) so
    that the gradual growth of the scanned quantity does not count.  Returns ``(midpoint, jump / se)``
    pairs sorted by decreasing significance.
    """
    xs = np.asarray(xs, dtype=float)
    jump, se = scan_jumps(xs, values, errors, window)
    with np.errstate(invalid="ignore"):
        z = jump / se
    hits = [(0.5 * (xs[i] + xs[i + 1]), float(z[i])) for i in np.nonzero(z > n_se)[0]]
    return sorted(hits, key=lambda h: -h[1])


def bootstrap_se(statistic, n_items: int, n_boot: int = 200, seed: int = 0) -> float:
    """Bootstrap standard error of ``statistic(indices)`` over resampled trajectories."""
    rng = np.random.default_rng(seed)
    vals = [statistic(rng.integers(0, n_items, n_items)) for _ in range(n_boot)]
    return float(np.std(vals, ddof=1))
