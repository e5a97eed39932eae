"""Birth-death photon-number chain of the undriven thermal mode.

``X(t)`` is the continuous-time chain with up-rate ``lambda_n = 2 kappa (n+1) nTh``
and down-rate ``mu_n = 2 kappa (nTh+1) n``; ``Y(t)`` is its time-discretized
version with one-step transition probabilities ``lambda_n dt`` / ``mu_n dt``.
This is exactly what the trajectory engines reduce to for a Fock input and no
drive, so it serves as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
from scipy.linalg import expm

from .errors import ContractError, InvalidTransitionError

SERIES_GAP = 1e-2
SERIES_TERMS = 6


@dataclass(frozen=True)
class ChainSpec:
    kappa: float = 1.0
    nTh: float = 0.0

    def __post_init__(self):
        if not self.kappa > 0 or not self.nTh >= 0:
            raise ContractError("need kappa > 0 and nTh >= 0")

    def lam(self, n):
        n = np.asarray(n, dtype=float)
        return np.where(n >= 0, 2 * self.kappa * (n + 1) * self.nTh, 0.0)

    def mu(self, n):
        n = np.asarray(n, dtype=float)
        return np.where(n >= 0, 2 * self.kappa * (self.nTh + 1) * n, 0.0)

    def q(self, n):
        return self.lam(n) + self.mu(n)

    def mean(self, n0, t):
        """Exact ``E[X(t) | X(0) = n0]`` (the mean obeys a linear ODE)."""
        return self.nTh + (n0 - self.nTh) * np.exp(-2 * self.kappa * np.asarray(t))


def gillespie_trajectory(n0: int, spec: ChainSpec, T: float, seed=None):
    """Exact sample of ``X`` on ``[0, T]`` as a list of ``(jump_time, new_state)``."""
    if n0 < 0:
        raise ContractError("n0 must be non-negative")
    rng = np.random.default_rng(seed)
    t, n, out = 0.0, int(n0), []
    while True:
        lam, mu = float(spec.lam(n)), float(spec.mu(n))
        q = lam + mu
        if q == 0:
            return out
        t += rng.exponential(1.0 / q)
        if t >= T:
            return out
        n = n + 1 if rng.random() * q < lam else n - 1
        out.append((t, n))


def state_at(jumps, n0: int, t: float) -> int:
    """State of a Gillespie path at time ``t``."""
    n = n0
    for tj, nj in jumps:
        if tj > t:
            break
        n = nj
    return n


def discrete_chain_step(n: int, dt: float, dp, spec: ChainSpec, rng):
    """One step of ``Y`` with a single uniform draw.

    Emission (``n-1``) is tested first, then absorption (``n+1``).

    Returns:
        ``(n_new, jump)`` with ``jump`` in ``{0: emission, 1: absorption, None}``;
        if ``dp`` is given, a third entry ``dt_next = dp / q(n)`` (``inf`` when
        ``q(n) = 0``).

    Raises:
        InvalidTransitionError: if ``q(n) dt > 1``.
    """
    mu, lam = float(spec.mu(n)), float(spec.lam(n))
    q = mu + lam
    if q * dt > 1.0 + 1e-12:
        raise InvalidTransitionError(f"q({n}) * dt = {q * dt:.4g} exceeds 1")
    if dt == 0 or q == 0:
        n_new, jump = n, None
    else:
        u = rng.random() if hasattr(rng, "random") else rng.uniform()
        if u < mu * dt:
            n_new, jump = n - 1, 0
        elif u < q * dt:
            n_new, jump = n + 1, 1
        else:
            n_new, jump = n, None
    if dp is None:
        return n_new, jump
    return n_new, jump, (dp / q if q > 0 else np.inf)


def discrete_chain_ensemble(n0: int, spec: ChainSpec, dp: float, Dt: float, T: float,
                            n_runs: int, seed=None, growth_cap: float = 5.0,
                            return_path: bool = False):
    """Final states of ``n_runs`` discrete chains stepped like the stepwise engine.

    With ``return_path`` the states at every ``u * Dt`` (``u = 0..T/Dt``) are
    returned as an array ``(n_runs, T/Dt + 1)``.

    The step schedule mirrors the engine for a Fock input without drive: the
    first trial step is ``min(Dt, dp/q(n0))``; afterwards ``min(growth_cap *
    dt_did, dp/q(n_before))``; steps are clipped at multiples of ``Dt`` and a
    clipped step keeps its unclipped suggestion.
    """
    rng = np.random.default_rng(seed)
    n = np.full(n_runs, int(n0), dtype=np.int64)
    q0 = float(spec.q(n0))
    dt_try = np.full(n_runs, min(Dt, dp / q0) if q0 > 0 else Dt)
    t = np.zeros(n_runs)
    ns = int(round(T / Dt))
    path = np.empty((n_runs, ns + 1), dtype=np.int64) if return_path else None
    if return_path:
        path[:, 0] = n
    for u in range(1, ns + 1):
        target = u * Dt
        active = t < target
        while np.any(active):
            idx = np.nonzero(active)[0]
            remaining = target - t[idx]
            tiny = remaining <= 4e-16 * target
            t[idx[tiny]] = target
            idx, remaining = idx[~tiny], remaining[~tiny]
            if idx.size == 0:
                break
            clipped = dt_try[idx] > remaining
            dt = np.where(clipped, remaining, dt_try[idx])
            nn = n[idx]
            mu = spec.mu(nn)
            q = mu + spec.lam(nn)
            draw = rng.random(idx.size)
            live = q > 0
            down = live & (draw < mu * dt)
            up = live & ~down & (draw < q * dt)
            n[idx] = nn - down + up
            nxt = growth_cap * dt
            nxt = np.where(clipped, np.maximum(nxt, dt_try[idx]), nxt)
            with np.errstate(divide="ignore"):
                nxt = np.where(live, np.minimum(nxt, dp / np.where(live, q, 1.0)), nxt)
            dt_try[idx] = nxt
            t[idx] = np.where(clipped, target, t[idx] + dt)
            active = t < target
        if return_path:
            path[:, u] = n
    return path if return_path else n


def _h(y, j):
    """Complete homogeneous symmetric polynomial ``h_j(y_0..y_k)``."""
    cur = np.zeros(j + 1)
    cur[0] = 1.0
    for yi in y:
        for d in range(1, j + 1):
            cur[d] = cur[d] + yi * cur[d - 1]
    return cur[j]


def _dd_exp(nodes, dt):
    """Divided difference of ``x -> exp(-x dt)`` over ``nodes`` (any multiplicity)."""
    x = np.sort(np.asarray(nodes, dtype=float))
    k = x.size - 1
    if k == 0:
        return np.exp(-x[0] * dt)
    if (x[-1] - x[0]) * dt < SERIES_GAP:
        centre = x.mean()
        y = x - centre
        total = sum((-dt) ** m / factorial(m) * _h(y, m - k)
                    for m in range(k, k + SERIES_TERMS))
        return np.exp(-centre * dt) * total
    if k == 1:
        a, b = x
        return np.exp(-a * dt) * np.expm1(-(b - a) * dt) / (b - a)
    return (_dd_exp(x[1:], dt) - _dd_exp(x[:-1], dt)) / (x[-1] - x[0])


def le2_jump_probabilities(n: int, dt: float, spec: ChainSpec) -> dict:
    """``P[X(t+dt) = n+d, at most two jumps | X(t) = n]`` for ``d = -2..2``.

    Each entry is a rate product times a divided difference of
    ``exp(-q dt)`` over the holding rates visited along the path.
    """
    if dt < 0:
        raise ContractError("dt must be non-negative")
    lam, mu, q = spec.lam, spec.mu, spec.q
    qs = {d: float(q(n + d)) for d in range(-2, 3)}
    l0, m0 = float(lam(n)), float(mu(n))
    p = {d: 0.0 for d in range(-2, 3)}
    p[0] = np.exp(-qs[0] * dt)
    if l0 > 0:
        p[1] = -l0 * _dd_exp([qs[0], qs[1]], dt)
        p[2] = l0 * float(lam(n + 1)) * _dd_exp([qs[0], qs[1], qs[2]], dt)
        p[0] += l0 * float(mu(n + 1)) * _dd_exp([qs[0], qs[1], qs[0]], dt)
    if m0 > 0:
        p[-1] = -m0 * _dd_exp([qs[0], qs[-1]], dt)
        if n >= 2:
            p[-2] = m0 * float(mu(n - 1)) * _dd_exp([qs[0], qs[-1], qs[-2]], dt)
        p[0] += m0 * float(lam(n - 1)) * _dd_exp([qs[0], qs[-1], qs[0]], dt)
    return {d: float(min(max(v, 0.0), 1.0)) for d, v in p.items()}


def one_step_mean_gap(n: int, dt: float, spec: ChainSpec, paths: str = "exact") -> float:
    """``E[X(t+dt) - Y(t+dt) | X(t) = Y(t) = n]``.

    ``paths="exact"`` uses the closed-form mean of ``X``; ``paths="le2"`` sums
    over at most two jumps only, which drops an ``O(q^3 dt^3)`` contribution.
    For small ``dt`` both approach ``dt^2 / 2 * mean_gap_coefficient``.
    """
    drift = float(spec.lam(n) - spec.mu(n)) * dt
    if paths == "exact":
        # (n - nTh)(e^{-2 kappa dt} - 1) - drift, without cancellation
        a = 2 * spec.kappa * dt
        return float((n - spec.nTh) * (np.expm1(-a) + a))
    if paths == "le2":
        p = le2_jump_probabilities(n, dt, spec)
        return float(sum(d * v for d, v in p.items()) - drift)
    raise ContractError(f"unknown paths={paths!r}")


def mean_gap_coefficient(n: int, spec: ChainSpec) -> float:
    """``lim gap / dt^2`` from the second-order expansion of the jump probabilities."""
    lam, mu, q = (lambda m: float(spec.lam(m))), (lambda m: float(spec.mu(m))), \
        (lambda m: float(spec.q(m)))
    return 0.5 * (-lam(n) * (q(n) + q(n + 1)) + mu(n) * (q(n) + q(n - 1))
                  + 2 * lam(n) * lam(n + 1) - 2 * mu(n) * mu(n - 1))


def three_jump_prob(g1: float, g2: float, g3: float, dt: float) -> float:
    """``P(T1 + T2 + T3 < dt)`` for independent exponentials with rates ``g_i``.

    Closed form for distinct rates.  When ``max(g) dt < 1e-3`` (where the
    closed form cancels badly) or rates coincide, a power series in ``dt`` or
    the matrix exponential of the hypoexponential generator is used instead.
    """
    g = np.array([g1, g2, g3], dtype=float)
    if np.any(g <= 0):
        raise ContractError("rates must be positive")
    if dt <= 0:
        return 0.0
    F = lambda x: -np.expm1(-x * dt) / x  # noqa: E731
    gs = np.sort(g)
    gaps = np.diff(gs)
    small = gs[-1] * dt < 1e-3
    if np.min(gaps) >= 1e-9 * gs[-1] and not small:
        a, b, c = g
        val = a * b * c / (a - b) * ((F(b) - F(c)) / (c - b) - (F(a) - F(c)) / (c - a))
    elif gs[-1] * dt <= 1.0:
        # F[x0, x1, x2] = sum_{m>=2} (-1)^m dt^(m+1) / (m+1)! h_{m-2}(x)
        val = np.prod(g) * sum((-1) ** m * dt ** (m + 1) / factorial(m + 1) * _h(g, m - 2)
                               for m in range(2, 30))
    else:
        S = np.array([[-g[0], g[0], 0.0], [0.0, -g[1], g[1]], [0.0, 0.0, -g[2]]])
        val = 1.0 - float(expm(S * dt)[0].sum())
    return float(min(max(val, 0.0), 1.0))
