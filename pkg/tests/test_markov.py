import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcwf import ContractError, InvalidTransitionError
from mcwf.markov import (ChainSpec, discrete_chain_ensemble, discrete_chain_step,
                         gillespie_trajectory, le2_jump_probabilities, mean_gap_coefficient,
                         one_step_mean_gap, state_at, three_jump_prob)

SPEC = ChainSpec(1.0, 5.0)
# lim gap/dt^2 from nested quadrature over all <=2-jump paths (40 digits, Richardson)
BRUTE_GAP = {10: 9.99998191418479, 3: -4.00000010839079, 0: -10.000000000454}
# P(T1+T2+T3 < 1e-3), rates (230, 252, 274): 1e7 Monte Carlo samples
MC_THREE = (0.0022018, 1.4822118865938161e-05)


def test_rates():
    assert float(SPEC.lam(10)) == 110 and float(SPEC.mu(10)) == 120
    assert float(SPEC.mu(0)) == 0


def test_frozen_vacuum():
    assert gillespie_trajectory(0, ChainSpec(1.0, 0.0), 100.0, seed=1) == []


def test_stationary_geometric():
    path = gillespie_trajectory(5, SPEC, 4000.0, seed=2)
    times = np.array([0.0] + [t for t, _ in path] + [4000.0])
    states = np.array([5] + [n for _, n in path])
    occ = np.bincount(states, weights=np.diff(times)) / 4000.0
    assert np.sum(np.arange(occ.size) * occ) == pytest.approx(5.0, rel=0.01)
    ratio = occ[1:8] / occ[:7]
    assert np.allclose(ratio, 5 / 6, atol=0.05)


def test_holding_time_mean():
    g = [gillespie_trajectory(10, SPEC, 1.0, seed=(3, i))[0][0] for i in range(4000)]
    assert np.mean(g) == pytest.approx(1 / 230, rel=0.05)


def test_gillespie_mean():
    t = 0.4
    vals = [state_at(gillespie_trajectory(10, SPEC, t, seed=(4, i)), 10, t) for i in range(3000)]
    se = np.std(vals) / np.sqrt(len(vals))
    assert abs(np.mean(vals) - SPEC.mean(10, t)) < 3 * se


def test_discrete_step_examples():
    n, jump, dt_next = discrete_chain_step(10, 1e-4, 0.1, SPEC, np.random.default_rng(0))
    assert dt_next == pytest.approx(0.1 / 230)
    assert discrete_chain_step(7, 0.0, None, SPEC, np.random.default_rng(0)) == (7, None)
    with pytest.raises(InvalidTransitionError):
        discrete_chain_step(10, 0.01, None, SPEC, np.random.default_rng(0))


def test_discrete_step_mean():
    g = np.random.default_rng(5)
    vals = np.array([discrete_chain_step(10, 1e-3, None, SPEC, g)[0] for _ in range(200000)])
    assert abs(vals.mean() - 9.99) < 3 * vals.std() / np.sqrt(vals.size)


def test_le2_limits():
    p = le2_jump_probabilities(10, 1e-12, SPEC)
    assert p[0] == pytest.approx(1.0) and p[1] < 1e-9 and p[-1] < 1e-9
    p0 = le2_jump_probabilities(0, 1e-2, SPEC)
    assert p0[-1] == 0 and p0[-2] == 0


def test_le2_taylor():
    dt = 1e-4
    q = lambda n: float(SPEC.q(n))  # noqa: E731
    lam, mu = (lambda n: float(SPEC.lam(n))), (lambda n: float(SPEC.mu(n)))
    ref = 1 - q(10) * dt + (q(10) * dt) ** 2 / 2 + (lam(10) * mu(11) + lam(9) * mu(10)) / 2 * dt ** 2
    stay = le2_jump_probabilities(10, dt, SPEC)[0]
    assert abs(stay - ref) < 10 * q(10) ** 3 * dt ** 3


@given(st.integers(0, 40), st.floats(1e-6, 5e-3), st.floats(0.1, 3), st.floats(0, 8))
def test_le2_bounds(n, dt, kappa, nth):
    spec = ChainSpec(kappa, nth)
    p = le2_jump_probabilities(n, dt, spec)
    assert all(0 <= v <= 1 for v in p.values())
    assert sum(p.values()) <= 1 + 1e-12


def test_gap_against_brute_force():
    for n, ref in BRUTE_GAP.items():
        assert mean_gap_coefficient(n, SPEC) == pytest.approx(ref, rel=1e-5)
        assert one_step_mean_gap(n, 1e-5, SPEC) / 1e-10 == pytest.approx(ref, rel=0.01)
    # the <=2-jump sum converges more slowly: its O(dt^3) remainder is large at q ~ 230
    assert one_step_mean_gap(10, 1e-7, SPEC, paths="le2") / 1e-14 == pytest.approx(
        BRUTE_GAP[10], rel=0.01)


def test_gap_scaling_and_frozen_chain():
    for dt in (1e-4, 3e-5, 1e-5):
        r = one_step_mean_gap(10, 2 * dt, SPEC) / one_step_mean_gap(10, dt, SPEC)
        assert 3.5 <= r <= 4.5
    assert one_step_mean_gap(0, 1e-3, ChainSpec(1.0, 0.0)) == 0


def test_three_jump_leading_term():
    g = (10.0, 32.0, 54.0)
    assert three_jump_prob(*g, 1e-6) / 1e-18 == pytest.approx(np.prod(g) / 6, rel=1e-4)


def test_three_jump_monte_carlo():
    p, se = MC_THREE
    assert abs(three_jump_prob(230, 252, 274, 1e-3) - p) < 3 * se


@given(st.floats(0.1, 300), st.floats(0.1, 300), st.floats(0.1, 300))
def test_three_jump_monotone(a, b, c):
    dts = np.logspace(-6, 0, 25)
    vals = [three_jump_prob(a, b, c, d) for d in dts]
    assert all(0 <= v <= 1 for v in vals)
    assert all(y >= x - 1e-15 for x, y in zip(vals, vals[1:]))


def test_three_jump_degenerate_rates():
    assert three_jump_prob(5, 5, 5, 0.1) == pytest.approx(
        1 - np.exp(-0.5) * (1 + 0.5 + 0.125), rel=1e-9)
    with pytest.raises(ContractError):
        three_jump_prob(0, 1, 2, 0.1)


def test_discrete_ensemble_shapes():
    out = discrete_chain_ensemble(10, SPEC, 0.1, 0.05, 0.5, 50, seed=1)
    assert out.shape == (50,)
    path = discrete_chain_ensemble(10, SPEC, 0.1, 0.05, 0.5, 50, seed=1, return_path=True)
    assert path.shape == (50, 11) and np.array_equal(path[:, -1], out)
