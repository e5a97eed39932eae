"""Concrete open systems: the thermal driven mode and the lattice particle.

A :class:`QuantumSystem` stores the non-Hermitian Hamiltonian ``H_nH`` in the
Schroedinger picture plus the part of its diagonal that is propagated exactly.
Pictures are anchored at the start of every step: over a step of length ``tau``
the ODE sees the coupling bands dressed with ``exp(i (D_j - D_{j+o}) tau)``,
and afterwards ``exp(-i D tau)`` brings the state back to the lab frame.
Observables and jumps therefore always act on Schroedinger-picture states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import hilbert
from .errors import InvalidDimensionError
from .hilbert import Operator

PICTURES = ("schroedinger", "interaction", "non-unitary-interaction")

# largest growth exponent a single step may apply (exp(230) ~ 1e100)
MAX_PICTURE_EXPONENT = 230.0


@dataclass(frozen=True)
class ModeParams:
    cutoff: int
    kappa: float = 1.0
    nTh: float = 0.0
    eta: complex = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if int(self.cutoff) != self.cutoff or self.cutoff < 2:
            raise InvalidDimensionError("mode cutoff must be an integer >= 2")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.nTh >= 0:
            raise ValueError("nTh must be non-negative")


@dataclass(frozen=True)
class ParticleParams:
    k_cutoff: int
    omega_rec: float = 1.0
    V: float = 1.0
    K_ratio: int = 1

    def __post_init__(self):
        if int(self.K_ratio) != self.K_ratio or self.K_ratio < 1:
            raise InvalidDimensionError("K_ratio must be a positive integer")
        if int(self.k_cutoff) != self.k_cutoff or self.k_cutoff < self.K_ratio:
            raise InvalidDimensionError(
                f"k_cutoff={self.k_cutoff} cannot host the +-{2 * self.K_ratio} lattice coupling")


@dataclass(frozen=True, eq=False)
class QuantumSystem:
    """Open system ready for the trajectory engines (hbar = 1).

    Attributes:
        h_nh: full non-Hermitian Hamiltonian in the Schroedinger picture.
        jumps: jump operators ``J_m``.
        picture: one of :data:`PICTURES`.
        exact_diagonal: part of ``diag(h_nh)`` propagated in closed form.
        observables: named operators sampled by the engines; ``"a"``,
            ``"n"`` and ``"n2"`` feed the standard CSV columns.
        edge_bins: basis labels whose population signals a truncation breach.
    """

    h_nh: Operator
    jumps: tuple
    picture: str
    exact_diagonal: np.ndarray
    observables: dict
    edge_bins: tuple
    name: str = "custom"
    params: object = None
    _packed: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self.picture not in PICTURES:
            raise ValueError(f"unknown picture {self.picture!r}")
        dim = self.h_nh.dim
        for j in self.jumps:
            if j.dim != dim:
                raise InvalidDimensionError("jump operator dimension mismatch")
        for name, op in self.observables.items():
            if op.dim != dim:
                raise InvalidDimensionError(f"observable {name} dimension mismatch")
        if np.shape(self.exact_diagonal) != (dim,):
            raise InvalidDimensionError("exact diagonal must have one entry per basis label")

    @property
    def dim(self) -> int:
        return self.h_nh.dim

    @property
    def hamiltonian(self) -> Operator:
        """Hermitian part ``H = H_nH + (i/2) sum J^dag J``."""
        return Operator.from_dense(self.h_nh.dense() + 0.5j * self.jump_sum().dense())

    def jump_sum(self) -> Operator:
        total = np.zeros((self.dim, self.dim), dtype=np.complex128)
        for j in self.jumps:
            m = j.dense()
            total += m.conj().T @ m
        return Operator.from_dense(total)

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.dim, dtype=np.complex128)
        for o, row in zip(self.h_nh.offsets, self.h_nh.data):
            if o == 0:
                d += row
        return d

    def couplings(self) -> Operator:
        """Off-diagonal bands of ``H_nH``."""
        keep = self.h_nh.offsets != 0
        return Operator(self.h_nh.offsets[keep], self.h_nh.data[keep])

    def linear_slope(self):
        """``c`` if ``exact_diagonal[j] = d0 + c*j`` for all ``j``, else ``None``."""
        d = self.exact_diagonal
        if d.size < 2:
            return 0j
        c = d[1] - d[0]
        ref = d[0] + c * np.arange(d.size)
        if np.allclose(d, ref, rtol=1e-13, atol=1e-13 * max(1.0, np.max(np.abs(d)))):
            return complex(c)
        return None

    def max_growth_rate(self) -> float:
        """Largest ``Re[i (D_j - D_k)]`` over coupled pairs ``(j, k)``."""
        d = self.exact_diagonal
        worst = 0.0
        ops = [self.couplings()]
        for op in ops:
            for o in op.offsets:
                if o == 0:
                    continue
                j = np.arange(max(0, -o), min(self.dim, self.dim - o))
                worst = max(worst, float(np.max((1j * (d[j] - d[j + o])).real)))
        return worst

    def packed(self) -> dict:
        """Flat arrays consumed by the compiled kernels (cached)."""
        if self._packed is not None:
            return self._packed
        cpl = self.couplings()
        n_j = len(self.jumps)
        kmax = max([j.offsets.size for j in self.jumps] + [1])
        jump_off = np.zeros((n_j, kmax), dtype=np.int64)
        jump_cnt = np.zeros(n_j, dtype=np.int64)
        jump_data = np.zeros((n_j, kmax, self.dim), dtype=np.complex128)
        for m, j in enumerate(self.jumps):
            jump_cnt[m] = j.offsets.size
            jump_off[m, :j.offsets.size] = j.offsets
            jump_data[m, :j.offsets.size] = j.data
        slope = self.linear_slope()
        names = ["a", "n", "n2"] + sorted(set(self.observables) - {"a", "n", "n2"})
        names = [nm for nm in names if nm in self.observables]
        obs = [self.observables[nm] for nm in names]
        omax = max([o.offsets.size for o in obs] + [1])
        obs_off = np.zeros((len(obs), omax), dtype=np.int64)
        obs_cnt = np.zeros(len(obs), dtype=np.int64)
        obs_data = np.zeros((len(obs), omax, self.dim), dtype=np.complex128)
        for m, o in enumerate(obs):
            obs_cnt[m] = o.offsets.size
            obs_off[m, :o.offsets.size] = o.offsets
            obs_data[m, :o.offsets.size] = o.data
        packed = dict(
            ode_diag=np.ascontiguousarray(self.diagonal() - self.exact_diagonal),
            exact=np.ascontiguousarray(self.exact_diagonal, dtype=np.complex128),
            linear=slope is not None,
            # slope of the first two labels; deviations are handled per element
            slope=(complex(self.exact_diagonal[1] - self.exact_diagonal[0])
                   if slope is None and self.dim > 1 else (slope or 0j)),
            cpl_off=np.ascontiguousarray(cpl.offsets),
            cpl_data=np.ascontiguousarray(cpl.data),
            jump_off=jump_off, jump_cnt=jump_cnt, jump_data=jump_data,
            obs_names=tuple(names), obs_off=obs_off, obs_cnt=obs_cnt, obs_data=obs_data,
            edges=np.array(self.edge_bins, dtype=np.int64),
            growth=self.max_growth_rate(),
            corr_obs=names.index("n") if "n" in names else -1,
        )
        object.__setattr__(self, "_packed", packed)
        return packed


def _exact_part(diag, picture):
    if picture == "schroedinger":
        return np.zeros_like(diag)
    if picture == "interaction":
        return diag.real.astype(np.complex128)
    return diag.copy()


def make_mode_system(p: ModeParams, picture: str = "non-unitary-interaction") -> QuantumSystem:
    """Thermal, coherently driven mode.

    ``J0 = sqrt(2 kappa (nTh+1)) a`` (emission), ``J1 = sqrt(2 kappa nTh) a^dag``
    (absorption; the zero operator when ``nTh = 0``), and
    ``H = -delta a^dag a + i (eta a^dag - eta* a)``.
    """
    if picture not in PICTURES:
        raise ValueError(f"unknown picture {picture!r}")
    n = p.cutoff
    a = hilbert.annihilation(n)
    ad = hilbert.creation(n)
    num = np.arange(n, dtype=float)
    eta = complex(p.eta)
    j0 = np.sqrt(2 * p.kappa * (p.nTh + 1)) * a
    j1 = np.sqrt(2 * p.kappa * p.nTh) * ad if p.nTh > 0 else Operator.zeros(n)
    # -(i/2) sum J^dag J is diagonal: -i kappa [(2 nTh + 1) n + nTh] below the
    # cutoff; the top label loses the a a^dag term so the truncated dynamics
    # stays trace preserving
    loss = 2 * p.kappa * (p.nTh + 1) * num + 2 * p.kappa * p.nTh * (num + 1)
    if p.nTh > 0:
        loss[-1] -= 2 * p.kappa * p.nTh * n
    diag = -p.delta * num - 0.5j * loss
    bands = [Operator.diagonal(diag)]
    if eta != 0:
        bands.append(1j * eta * ad)
        bands.append(-1j * eta.conjugate() * a)
    h_nh = bands[0]
    for b in bands[1:]:
        h_nh = h_nh + b
    observables = {
        "a": a,
        "n": hilbert.number(n),
        "n2": Operator.diagonal(num ** 2),
    }
    return QuantumSystem(h_nh=h_nh, jumps=(j0, j1), picture=picture,
                         exact_diagonal=_exact_part(diag.astype(np.complex128), picture),
                         observables=observables, edge_bins=(n - 1,),
                         name="mode", params=p)


def wave_numbers(k_cutoff: int) -> np.ndarray:
    return np.arange(-k_cutoff, k_cutoff + 1)


def make_particle_system(p: ParticleParams, picture: str = "interaction") -> QuantumSystem:
    """Particle in a ``cos^2(Kx)`` lattice on the wave-number basis ``-k..k``.

    ``H = omega_rec K^2 + V/2 + (V/4)(e^{2iKx} + e^{-2iKx})``; no jump channels.
    In the interaction pictures the kinetic diagonal is propagated exactly.

    Raises:
        InvalidDimensionError: if the basis cannot host the lattice coupling.
    """
    if picture not in PICTURES:
        raise ValueError(f"unknown picture {picture!r}")
    k = wave_numbers(p.k_cutoff)
    dim = k.size
    shift = 2 * p.K_ratio
    if shift >= dim:
        raise InvalidDimensionError(f"basis of size {dim} cannot host a shift of {shift}")
    kinetic = p.omega_rec * k.astype(float) ** 2
    diag = (kinetic + p.V / 2).astype(np.complex128)
    off = np.full(dim, p.V / 4, dtype=np.complex128)
    h_nh = Operator([-shift, 0, shift], np.array([off, diag, off]))
    # e^{2iKx} moves population from k to k + 2K
    ladder = Operator([-shift], np.ones((1, dim)))
    observables = {
        "a": ladder,
        "n": Operator.diagonal(k.astype(float)),
        "n2": Operator.diagonal(k.astype(float) ** 2),
    }
    exact = np.zeros(dim, dtype=np.complex128) if picture == "schroedinger" \
        else kinetic.astype(np.complex128)
    return QuantumSystem(h_nh=h_nh, jumps=(), picture=picture, exact_diagonal=exact,
                         observables=observables, edge_bins=(0, dim - 1),
                         name="particle", params=p)
