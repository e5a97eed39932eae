import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcwf import (DimensionMismatchError, ModeParams, NumericError, StepControl,
                  check_density_matrix, density_matrix, evolve_master, fock, lindblad_rhs,
                  make_mode_system, number)


def mode(**kw):
    p = dict(cutoff=12, kappa=1.0, nTh=0.0)
    p.update(kw)
    return make_mode_system(ModeParams(**p), "schroedinger")


def test_vacuum_is_steady():
    assert np.max(np.abs(lindblad_rhs(density_matrix(fock(0, 12)), mode()))) == 0


def test_single_photon_decay_rate():
    d = lindblad_rhs(density_matrix(fock(1, 12)), mode())
    assert np.trace(number(12).dense() @ d).real == pytest.approx(-2.0)


@given(st.integers(0, 2 ** 31))
def test_rhs_traceless(seed):
    g = np.random.default_rng(seed)
    m = g.normal(size=(12, 12)) + 1j * g.normal(size=(12, 12))
    rho = m @ m.conj().T
    rho /= np.trace(rho)
    s = mode(nTh=2.0, eta=0.5, delta=0.3)
    assert abs(np.trace(lindblad_rhs(rho, s))) < 1e-12 * max(1.0, np.abs(rho).sum() * 20)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        lindblad_rhs(np.eye(3), mode())


def test_thermal_relaxation():
    s = make_mode_system(ModeParams(cutoff=110, kappa=1.0, nTh=5.0), "schroedinger")
    m = evolve_master(density_matrix(fock(10, 110)), s, 0.25, 10.0)
    n = m["n"]
    assert np.all(np.diff(n) < 0)
    assert n[-1] == pytest.approx(5.0, abs=1e-6)


def test_driven_steady_state():
    s = mode(cutoff=25, eta=1.0)
    m = evolve_master(density_matrix(fock(0, 25)), s, 0.5, 25.0,
                      StepControl(eps_abs=1e-12, eps_rel=1e-9))
    assert m["re_a"][-1] == pytest.approx(1.0, abs=1e-6)
    assert m["n"][-1] == pytest.approx(1.0, abs=1e-6)


def test_steady_input_stays_constant():
    rho = density_matrix(fock(0, 12))
    m = evolve_master(rho, mode(), 0.1, 1.0)
    assert np.all(m["n"] == 0)


def test_trace_preserved_over_t5():
    s = mode(cutoff=40, nTh=1.0, eta=0.8)
    m = evolve_master(density_matrix(fock(4, 40)), s, 0.05, 5.0)
    assert "trace" not in m.values or np.max(np.abs(m["trace"] - 1)) < 1e-8


def test_invalid_density_matrix():
    with pytest.raises(NumericError, match="trace"):
        check_density_matrix(2 * density_matrix(fock(0, 3)))
    with pytest.raises(NumericError, match="hermiticity"):
        check_density_matrix(np.array([[1, 1], [0, 0]], dtype=complex))
