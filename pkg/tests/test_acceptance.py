"""Acceptance suite: one test per criterion, each records a PASS/FAIL line.

The lines are printed in the ``acceptance criteria`` section of the pytest
terminal summary.  Ensemble sizes follow the criteria except where a reduced
size is noted in the test docstring.  Expect about 45 minutes on one core.
"""

import time

import numpy as np
import pytest
from scipy import stats as st

from mcwf import (DpControls, IntegratingControls, ModeParams, StepControl, coherent_state,
                  density_matrix, deviation, evolve_master, fock, lindblad_rhs,
                  make_mode_system, run_ensemble)
from mcwf.ensemble import bootstrap_se, find_discontinuities, time_average
from mcwf.errors import MCWFError
from mcwf.markov import ChainSpec, discrete_chain_ensemble, one_step_mean_gap, three_jump_prob
from mcwf.stepwise import diad_average, run_trajectory

pytestmark = pytest.mark.slow

NTH, N0, DT_SAMPLE, T_END = 5.0, 10, 0.05, 5.0
# 40-digit brute-force limit of gap/dt^2 at n=10, nTh=5 (all paths with <= 2 jumps)
BRUTE_GAP_COEFF = 9.99998191418479
TIGHT = StepControl(eps_abs=1e-14, eps_rel=1e-12)


def mode(cutoff, picture="non-unitary-interaction", eta=0.0, delta=0.0, nTh=NTH):
    return make_mode_system(ModeParams(cutoff=cutoff, kappa=1.0, nTh=nTh, eta=eta,
                                       delta=delta), picture)


def n_samples(ens):
    return ens.samples[:, :, ens.obs_names.index("n")].real


def stepwise(dp, n_traj, cutoff=80, seed=0, eta=0.0, T=T_END, Dt=DT_SAMPLE, n0=N0,
             keep=True, picture="non-unitary-interaction"):
    return run_ensemble("stepwise", mode(cutoff, picture, eta), fock(n0, cutoff),
                        DpControls(dp, Dt, T), n_traj, seed, keep_samples=keep)


@pytest.fixture(scope="module")
def master_ref():
    sys_ = mode(110, "schroedinger")
    return evolve_master(density_matrix(fock(N0, 110)), sys_, DT_SAMPLE, T_END)


@pytest.fixture(scope="module")
def driven_master_ref():
    sys_ = mode(100, "schroedinger", eta=1.0)
    return evolve_master(density_matrix(fock(N0, 100)), sys_, DT_SAMPLE, T_END)


@pytest.fixture(scope="module")
def fig3_ensemble():
    return stepwise(0.1, 20000, seed=1)


def test_c01_master_reference(report, master_ref):
    """Runtime at cutoff 40; accuracy at cutoff 110 (cutoff 40 truncates the thermal tail)."""
    sys40 = mode(40, "schroedinger")
    rho0 = density_matrix(fock(N0, 40))
    evolve_master(rho0, sys40, DT_SAMPLE, DT_SAMPLE)  # compile outside the timing
    t0 = time.perf_counter()
    evolve_master(rho0, sys40, DT_SAMPLE, T_END)
    elapsed = time.perf_counter() - t0
    exact = NTH + (N0 - NTH) * np.exp(-2 * master_ref.grid)
    err = float(np.max(np.abs(master_ref["n"] - exact)))
    ok = err < 1e-6 and elapsed < 10.0
    report(1, ok, f"max|<n>-closed form|={err:.2e} (<1e-6, cutoff 110); "
                  f"runtime {elapsed:.2f}s at cutoff 40 (<10s)")
    assert ok


def test_c02_fig3_convergence(report, fig3_ensemble, master_ref):
    ens = fig3_ensemble
    d4 = deviation(ens.subset_mean(np.arange(10000)), master_ref)
    d3 = deviation(ens.subset_mean(np.arange(1000)), master_ref)
    ok = d4 < 0.03 and d3 > d4
    report(2, ok, f"deviation N=1e4: {d4:.4f} (<0.03); N=1e3: {d3:.4f} (> N=1e4)")
    assert ok


def test_c03_inverse_sqrt_law(report, master_ref):
    """One 10^4 ensemble; N=100 and N=1000 deviations are averaged over disjoint subsets."""
    ens = stepwise(0.02, 10000, seed=3)
    sizes = np.array([100, 1000, 10000])
    devs = []
    for n in sizes:
        parts = np.arange(10000).reshape(-1, n)
        devs.append(np.mean([deviation(ens.subset_mean(p), master_ref) for p in parts]))
    slope = float(np.polyfit(np.log(sizes), np.log(devs), 1)[0])
    ok = abs(slope + 0.5) <= 0.1
    report(3, ok, f"log-log slope {slope:.3f} (-0.5 +- 0.1); deviations "
                  + ", ".join(f"{d:.4f}" for d in devs))
    assert ok


def test_c04_criticality(report):
    lo, hi = (stepwise(dp, 1000, seed=7, keep=False) for dp in (0.49, 0.51))
    jump = hi.pooled_mean_dt - lo.pooled_mean_dt
    se = float(np.hypot(lo.pooled_mean_dt_se, hi.pooled_mean_dt_se))
    dps = np.round(np.arange(0.05, 0.951, 0.05), 2)
    means, errs = [], []
    for dp in dps:
        e = stepwise(dp, 500, seed=11, Dt=0.25, keep=False)
        means.append(e.pooled_mean_dt)
        errs.append(e.pooled_mean_dt_se)
    hits = find_discontinuities(dps, means, errs, n_se=3.0)
    ok = (lo.full_step_fraction == 0 and hi.full_step_fraction > 0 and jump > 3 * se
          and not hits)
    report(4, ok, f"full-step fraction {lo.full_step_fraction:g} @0.49, "
                  f"{hi.full_step_fraction:.4f} @0.51; mean-dt jump {jump / se:.1f} SE (>3); "
                  f"Dt=0.25 scan hits: {len(hits)} (0)")
    assert ok


def test_c05_double_criticality(report):
    """Vacuum start with T=0.25 so that the low-n critical states dominate the mean dt."""
    dps = np.round(np.arange(0.10, 0.6001, 0.01), 2)
    means, errs = [], []
    for dp in dps:
        e = stepwise(dp, 5000, seed=11, Dt=0.015625, T=0.25, n0=0, keep=False)
        means.append(e.pooled_mean_dt)
        errs.append(e.pooled_mean_dt_se)
    hits = find_discontinuities(dps, means, errs, n_se=3.0)
    top = sorted(h[0] for h in hits[:2])
    ok = (len(top) == 2 and abs(top[0] - 0.15625) <= 0.01 and abs(top[1] - 0.5) <= 0.01)
    found = ", ".join(f"{x:.3f} ({z:.1f} SE)" for x, z in hits[:4])
    report(5, ok, f"strongest discontinuities at {found} (expect 0.15625 and 0.5)")
    assert ok


def test_c06_jump_bookkeeping(report, fig3_ensemble):
    m1, se1 = fig3_ensemble.jump_difference()
    m9, se9 = stepwise(0.9, 20000, cutoff=120, seed=6, keep=False).jump_difference()
    ok = abs(m1 - 5) <= 0.1 and abs(m9 - 5) > 3 * se9
    report(6, ok, f"emissions-absorptions: {m1:.4f} +- {se1:.4f} @dp=0.1 (5 +- 0.1); "
                  f"{m9:.4f} +- {se9:.4f} @dp=0.9 ({abs(m9 - 5) / se9:.1f} SE from 5, >3)")
    assert ok


def test_c07_contention(report):
    """Small ensembles: the pooled mean dt carries sub-percent statistical error here."""
    small = {}
    for eta, cutoff in ((1.0, 80), (3.0, 100)):
        e = stepwise(0.05, 8, cutoff=cutoff, seed=70, eta=eta, keep=False)
        small[eta] = e.pooled_mean_dt / e.predicted_mean_dt(0.05) - 1
    large = {}
    for eta, cutoff in ((1.0, 100), (3.0, 120), (5.0, 140)):
        e = stepwise(0.8, 16, cutoff=cutoff, seed=71, eta=eta, keep=False)
        large[eta] = (e.pooled_mean_dt, e.pooled_mean_dt / e.predicted_mean_dt(0.8) - 1)
    dts = [large[k][0] for k in sorted(large)]
    monotone = bool(np.all(np.diff(dts) < 0))
    ok_small = all(abs(v) <= 0.10 for v in small.values())
    takeover = abs(large[5.0][1]) > 0.30
    ok = ok_small and takeover and monotone
    report(7, ok, "dp=0.05 rel. gap " + ", ".join(f"eta={k:g}: {v:+.3f}" for k, v in small.items())
           + f" (<=0.10); dp=0.8 eta=5 rel. gap {large[5.0][1]:+.3f} (>0.30 needed); "
           + "mean dt vs eta=1,3,5: " + ", ".join(f"{d:.3e}" for d in dts)
           + f" monotone={monotone}")
    assert ok


def test_c08_oracle_dp_squared_law(report):
    spec = ChainSpec(kappa=1.0, nTh=NTH)
    coeff = one_step_mean_gap(10, 1e-5, spec) / 1e-10
    rel = abs(coeff / BRUTE_GAP_COEFF - 1)
    ratio = one_step_mean_gap(10, 2e-5, spec) / one_step_mean_gap(10, 1e-5, spec)
    dts = np.logspace(-4, -2, 9)
    # rates q_0, q_1, q_2 of the chain at nTh=5
    probs = [three_jump_prob(10.0, 32.0, 54.0, d) for d in dts]
    slope = float(np.polyfit(np.log(dts), np.log(probs), 1)[0])
    ok = rel < 0.01 and 3.5 <= ratio <= 4.5 and abs(slope - 3) <= 0.1
    report(8, ok, f"gap/dt^2 at dt=1e-5: {coeff:.5f} vs {BRUTE_GAP_COEFF:.5f} "
                  f"(rel {rel:.1e} <1%); gap(2dt)/gap(dt)={ratio:.3f} ([3.5,4.5]); "
                  f"three-jump slope {slope:.3f} (3 +- 0.1)")
    assert ok


def test_c09_engine_oracle_equivalence(report):
    dp, runs, cutoff = 0.25, 100000, 80
    ens = stepwise(dp, runs, cutoff=cutoff, seed=9, T=1.0)
    engine = np.rint(n_samples(ens)[:, -1]).astype(int)
    chain = discrete_chain_ensemble(N0, ChainSpec(1.0, NTH), dp, DT_SAMPLE, 1.0, runs, seed=9)
    top = max(engine.max(), chain.max()) + 1
    table = np.array([np.bincount(engine, minlength=top), np.bincount(chain, minlength=top)])
    # merge sparse tails so every expected count is at least 5
    keep = table.sum(axis=0) >= 10
    merged = np.column_stack([table[:, keep], table[:, ~keep].sum(axis=1)])
    merged = merged[:, merged.sum(axis=0) > 0]
    chi2, p, dof, _ = st.chi2_contingency(merged)
    ok = p > 0.01
    report(9, ok, f"chi-square {chi2:.1f} on {dof} dof, p={p:.3f} (>0.01), "
                  f"mean n engine {engine.mean():.4f} chain {chain.mean():.4f}")
    assert ok


def test_c10_one_step_diad(report):
    cutoff = 30
    sys_ = mode(cutoff)
    psi = (fock(9, cutoff) + fock(10, cutoff)) / np.sqrt(2)
    rho = density_matrix(psi)
    lab = mode(cutoff, "schroedinger")

    def residual(dt):
        avg = diad_average(psi, sys_, dt, 10 ** 6, seed=10)
        return float(np.linalg.norm(avg - (rho + dt * lindblad_rhs(rho, lab))))

    r1, r2 = residual(2e-3), residual(1e-3)
    ok = 3 <= r1 / r2 <= 5
    report(10, ok, f"residual {r1:.3e} -> {r2:.3e} on halving dt, factor {r1 / r2:.2f} ([3,5])")
    assert ok


def test_c11_coherent_decay(report):
    sys_ = mode(40, nTh=0.0)
    psi, _ = coherent_state(2.0, 40)
    rec = run_trajectory(psi, sys_, DpControls(0.1, DT_SAMPLE, T_END), seed=12)
    n = rec.observables["n"].real
    err = float(np.max(np.abs(n - 4 * np.exp(-2 * rec.grid))))
    ok = err < 1e-6
    report(11, ok, f"max|<n>-4exp(-2t)|={err:.2e} (<1e-6) with {int(rec.jump_counts.sum())} jumps")
    assert ok


def test_c12_method_parity(report, driven_master_ref):
    """Reduced to 1000 trajectories per method; standard errors by bootstrap."""
    n_traj, cutoff = 1000, 100
    sys_ = mode(cutoff, eta=1.0)
    psi = fock(N0, cutoff)
    results = {}
    for name, engine, ctl in (
            ("integrating", "integrating", IntegratingControls(DT_SAMPLE, T_END, 0.001, 5)),
            ("stepwise", "stepwise", DpControls(0.02, DT_SAMPLE, T_END))):
        ens = run_ensemble(engine, sys_, psi, ctl, n_traj, 12)
        dev = deviation(ens.mean, driven_master_ref)
        se = bootstrap_se(lambda idx: deviation(ens.subset_mean(idx), driven_master_ref),
                          ens.n_traj, n_boot=200, seed=12)
        results[name] = (dev, se)
    (di, si), (ds, ss) = results["integrating"], results["stepwise"]
    pooled = float(np.hypot(si, ss))
    ok = abs(di - ds) <= 2 * pooled
    report(12, ok, f"deviation integrating {di:.4f}+-{si:.4f}, stepwise {ds:.4f}+-{ss:.4f}; "
                   f"difference {abs(di - ds) / pooled:.2f} pooled SE (<=2)")
    assert ok


def test_c13_pictures_and_renormalization(report):
    cutoff, eta, delta = 60, 1.0, 0.3
    rho0 = density_matrix(fock(N0, cutoff))
    master = {p: evolve_master(rho0, mode(cutoff, p, eta, delta), DT_SAMPLE, 2.0, TIGHT)
              for p in ("schroedinger", "interaction", "non-unitary-interaction")}
    ref = master["schroedinger"]
    mdiff = max(float(np.max(np.abs(s[c] - ref[c])))
                for s in master.values() for c in ("n", "re_a", "im_a"))
    # MCWF: time-averaged <n> per trajectory, compared with the master value
    target = float(np.mean(ref["n"]))
    zs = {}
    for p in ("schroedinger", "interaction", "non-unitary-interaction"):
        ens = run_ensemble("stepwise", mode(80, p, eta, delta), fock(N0, 80),
                           DpControls(0.05, DT_SAMPLE, 2.0), 300, 13)
        avg = n_samples(ens).mean(axis=1)
        zs[p] = (avg.mean() - target) / (avg.std(ddof=1) / np.sqrt(avg.size))
    stat_ok = all(abs(z) < 3 for z in zs.values())
    # renormalization off in the non-unitary picture
    sys_nu = mode(80, "non-unitary-interaction", 1.0, 2.0)
    ctl = DpControls(0.1, DT_SAMPLE, T_END)
    on = run_trajectory(fock(N0, 80), sys_nu, ctl, seed=3, raise_on_error=False)
    try:
        off = run_trajectory(fock(N0, 80), sys_nu, ctl, seed=3, renormalize=False,
                             raise_on_error=False)
        drift, off_status = off.stats["max_norm_drift"], off.status
    except MCWFError as exc:
        drift, off_status = np.inf, type(exc).__name__
    broken = drift > 3 or off_status != "ok"
    ok = mdiff < 1e-6 and stat_ok and broken and on.status == "ok"
    report(13, ok, f"master picture spread {mdiff:.1e} (<1e-6); MCWF z vs master "
                   + ", ".join(f"{z:+.2f}" for z in zs.values())
                   + f" (|z|<3); no-renorm norm drift 1e{drift:.1f} ({off_status}), "
                   f"renormalized run {on.status}")
    assert ok


def test_c14_time_averaging(report):
    T = 500.0
    rec = run_trajectory(fock(N0, 80), mode(80), DpControls(0.1, DT_SAMPLE, T), seed=14,
                         record_steps=True)
    n_grid = rec.observables["n"].real
    eq_time = time_average([(v, None) for v in n_grid], "equal-time")
    steps = rec.steps
    weighted = time_average(list(zip(steps["n"], steps["dt"])), "equal-steps")
    unweighted = float(np.mean(steps["n"]))
    corr = float(np.corrcoef(steps["dt"], steps["n"])[0, 1])
    expected_sign = -np.sign(corr)
    ok = (abs(eq_time / 5 - 1) < 0.03 and abs(weighted / 5 - 1) < 0.03
          and np.sign(unweighted - 5) == expected_sign)
    report(14, ok, f"equal-time {eq_time:.3f}, weighted equal-steps {weighted:.3f} "
                   f"(within 3% of 5); unweighted {unweighted:.3f}, corr(dt,n)={corr:+.3f}, "
                   f"bias sign {np.sign(unweighted - 5):+.0f} (expected {expected_sign:+.0f})")
    assert ok
