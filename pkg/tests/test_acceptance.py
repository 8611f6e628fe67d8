"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected into a terminal summary section at the end of the
pytest run.
"""

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import sine_cubic_profile, record_criterion
from rtadapt.backstepping import (BacksteppingDesign, DesignParams, GainSchedule, modal_gains,
                                  volterra_roundtrip)
from rtadapt.cli import table1_rows
from rtadapt.identifier import (Estimates, FullPlane, Singleton, ThetaLine, Window, _direct,
                                _reduced, _time_weights, identify, mode_series)
from rtadapt.passive import settle_time
from rtadapt.plant import (ModalTrace, PlantParams, SolverConfig, exact_sine_coefficients,
                           fredholm_roundtrip, l2_norm, modal_gain_function,
                           series_identity_residual, spectral_oracle, spectral_trace)
from rtadapt.reduced_model import (ReducedModel, ReducedModelDesign, controllability_check,
                                   default_poles, pole_place)
from rtadapt.supervisor import run_nominal, schedule_weights, simulate_linear_feedback

TABLE1 = [(0.1, 1), (3, 1), (5, 2), (6, 3), (7, 5), (8, 7), (9, 10), (math.pi**2, 13),
          (10, 14), (11, 19), (12, 25)]


def _post_switch(times):
    """Mask dropping the pre-switch sample of every duplicated time."""
    keep = np.ones(times.size, dtype=bool)
    keep[:-1] = times[1:] != times[:-1]
    return keep


def test_c01_table1():
    start = time.perf_counter()
    rows = table1_rows(DesignParams(beta=0.0, sigma=1.0, B=0.1))
    elapsed = time.perf_counter() - start
    got = [(theta, N) for theta, N, _ in rows]
    mismatches = [(t, n, N) for (t, n), (_, N) in zip(TABLE1, got) if n != N]
    ok = not mismatches and elapsed < 10.0
    record_criterion(1, "mode-count table", ok,
                     f"{len(TABLE1) - len(mismatches)}/11 rows exact, {elapsed:.2f} s")
    assert not mismatches
    assert elapsed < 10.0


def test_c02_headline_experiment(regulation_run):
    result, elapsed = regulation_run
    ev = result.log.events
    tau1, theta1 = ev[1].tau, ev[1].theta_after
    # applied vs nominal control on every inter-event interval after tau_1
    tr = result.trace
    keep = _post_switch(tr.times)
    worst = 0.0
    for e0, e1 in zip(ev[1:], ev[2:] + [None]):
        sel = keep & (tr.times >= e0.tau) & ((tr.times < e1.tau) if e1 else True)
        U, Un = tr.U[sel], result.nominal_U[sel]
        if np.max(np.abs(Un)) > 0:
            worst = max(worst, float(np.max(np.abs(U - Un)) / np.max(np.abs(Un))))
    ok = (abs(tau1 - 0.05) < 1e-12 and abs(theta1 - 11.0) < 0.11 and worst < 1e-3
          and elapsed < 60.0)
    record_criterion(2, "headline experiment", ok,
                     f"tau_1={tau1:.6g}, theta_hat(tau_1)={theta1:.6f}, "
                     f"control mismatch {worst:.2e}, {elapsed:.1f} s")
    assert tau1 == pytest.approx(0.05, abs=1e-12)
    assert abs(theta1 - 11.0) <= 0.01 * 11.0
    assert worst < 1e-3
    assert elapsed < 60.0


def test_c03_dwell_pattern(regulation_run):
    result, _ = regulation_run
    taus = result.log.taus
    gaps = np.diff(taus)[2:]
    reasons = {e.reason for e in result.log.events[1:]}
    ok = bool(np.all(np.abs(gaps - 0.05) < 1e-9))
    record_criterion(3, "dwell pattern / no Zeno", ok,
                     f"{gaps.size} gaps after tau_2, max |gap - T| = "
                     f"{np.max(np.abs(gaps - 0.05)):.1e}, reasons {sorted(reasons)}")
    assert ok


def test_c04_exponential_regulation(regulation_run):
    result, _ = regulation_run
    t, n = result.times, result.norms
    sel = (t >= 1.0) & (t <= 3.0)
    rate = -np.polyfit(t[sel], np.log(n[sel]), 1)[0]
    ok = rate >= 0.9
    record_criterion(4, "exponential regulation", ok, f"fitted decay rate {rate:.4f} on [1, 3]")
    assert ok


def test_c05_full_vs_truncated():
    truth = PlantParams(1.0, 11.0, 1.0)
    full = run_nominal(truth, sine_cubic_profile, horizon=3.0, feedback="full_kernel")
    trunc = run_nominal(truth, sine_cubic_profile, horizon=3.0, feedback="truncated", N=20)
    decays = full.norms[-1] < 1e-6 * full.norms[0] and trunc.norms[-1] < 1e-6 * trunc.norms[0]
    late = full.times >= 0.5
    rel = np.abs(full.norms - trunc.norms)[late] / full.norms[late]
    ok = decays and float(rel.max()) < 0.05
    record_criterion(5, "full vs truncated nominal feedback", ok,
                     f"both decay={decays}, max relative norm gap for t>=0.5 is "
                     f"{rel.max():.3f} (at t=0.5: {rel[0]:.3f})")
    assert decays
    assert rel.max() < 0.05


def test_c06_identifier_on_oracle_traces():
    coeffs = exact_sine_coefficients(lambda x: float(sine_cubic_profile(x)), 40)
    times = np.arange(501) * 1e-4
    design = BacksteppingDesign()
    worst = 0.0
    kinds = []
    for theta, c in ((11.0, 1.0), (7.0, 2.0)):
        truth = PlantParams(1.0, theta, c)
        trace = spectral_trace(truth, design(theta).k, coeffs, times, c_hat=c)
        est, kind, _ = identify(Window.from_trace(trace, 0.0, 0.05), Estimates(0.1, 2.0), 1.0)
        kinds.append(kind)
        worst = max(worst, abs(est.theta_hat - theta), abs(est.c_hat - c))
    ok = kinds == ["Singleton", "Singleton"] and worst < 1e-4
    record_criterion(6, "identifier on oracle traces", ok, f"kinds {kinds}, max error {worst:.2e}")
    assert kinds == ["Singleton", "Singleton"]
    assert worst < 1e-4


_C07_FAILURES: list = []


def _free_trace(theta, coeffs, c=1.0):
    truth = PlantParams(1.0, theta, c)
    return spectral_trace(truth, np.zeros(1), coeffs, np.arange(501) * 1e-4)


@settings(max_examples=25, deadline=None, derandomize=True)
@given(theta=st.floats(0.0, 15.0), c=st.floats(0.5, 3.0),
       a1=st.floats(0.05, 1.0), sign=st.sampled_from([-1.0, 1.0]),
       rest=st.lists(st.floats(-1.0, 1.0), min_size=4, max_size=4))
def _c07_property(theta, c, a1, sign, rest):
    # Generic data: the first mode is excited, otherwise the truncated law sees
    # no input.  The theta range keeps the trapezoid bias of the free-evolution
    # estimate, about |mu|^3 h^2 / 12 with mu = theta - pi^2, below 1e-6 at
    # h = 1e-4 (the bias itself is checked in test_identifier.py).
    prev = Estimates(0.3, 1.7)
    a0 = np.zeros(40)
    a0[:5] = [sign * a1, *rest]
    # (i) zero state
    zero = ModalTrace(np.arange(501) * 1e-4, np.zeros((501, 40)), np.zeros(501),
                      np.zeros(501))
    est, kind, _ = identify(Window.from_trace(zero, 0.0, 0.05), prev, 1.0)
    if kind != "FullPlane" or est != prev:
        _C07_FAILURES.append(("zero", theta, kind))
    # (iii) free evolution
    est, kind, _ = identify(Window.from_trace(_free_trace(theta, a0, c), 0.0, 0.05), prev, 1.0)
    if kind != "ThetaLine" or abs(est.theta_hat - theta) > 1e-6 or est.c_hat != prev.c_hat:
        _C07_FAILURES.append(("free", theta, kind, est.theta_hat - theta))
    # active input
    truth = PlantParams(1.0, theta, c)
    gains = BacksteppingDesign()(1.0).k  # low-order law, as on the first adaptive interval
    tr = spectral_trace(truth, gains, a0, np.arange(501) * 1e-4, c_hat=c)
    _, kind, _ = identify(Window.from_trace(tr, 0.0, 0.05), prev, 1.0)
    if kind != "Singleton":
        _C07_FAILURES.append(("active", theta, kind))


def test_c07_lemma_case_coverage():
    _C07_FAILURES.clear()
    _c07_property()
    ok = not _C07_FAILURES
    record_criterion(7, "identifier case coverage", ok,
                     "FullPlane / ThetaLine / Singleton on 25 generated cases"
                     + ("" if ok else f"; failures {_C07_FAILURES[:3]}"))
    assert ok


def test_c08_dual_path_quadrature():
    rng = np.random.default_rng(20260101)
    worst = 0.0
    for _ in range(100):
        K = int(rng.integers(20, 150))
        times = np.cumsum(np.r_[0.0, rng.uniform(1e-4, 1e-3, K - 1)])
        n_max = 3
        a = np.cumsum(rng.normal(size=(K, n_max)), axis=0) * 0.1
        U = np.sin(rng.uniform(1, 20) * times) * rng.normal()
        trace = ModalTrace(times, a, U, np.linalg.norm(a, axis=1))
        w = _time_weights(times)
        for n in range(1, n_max + 1):
            series = mode_series(trace, n, float(rng.uniform(0.5, 2.0)))
            for i, X in enumerate(series):
                for Y in series[i:]:
                    r, d = _reduced(w, X, Y), _direct(w, X, Y)
                    scale = math.sqrt(_direct(w, X, X) * _direct(w, Y, Y))
                    if scale > 0:
                        worst = max(worst, abs(r - d) / scale)
    ok = worst < 1e-8
    record_criterion(8, "dual-path quadrature", ok,
                     f"max scaled difference {worst:.1e} on 100 traces")
    assert ok


def test_c09_transform_roundtrips():
    dp = DesignParams()
    gains = modal_gains(11.0, 20, dp, 1.0)

    def h(x):
        return modal_gain_function(gains, x)

    fred, volt = [], []
    for n in (500, 1000, 2000):
        u = sine_cubic_profile(np.linspace(0.0, 1.0, n))
        fred.append(fredholm_roundtrip(u, h, 0.0) / l2_norm(u))
        volt.append(volterra_roundtrip(u, 11.0, dp, 1.0) / l2_norm(u))
    fr = [fred[0] / fred[1], fred[1] / fred[2]]
    vr = [volt[0] / volt[1], volt[1] / volt[2]]
    ok = (fred[1] < 1e-3 and volt[1] < 1e-3
          and all(3.5 <= r <= 4.5 for r in fr + vr))
    record_criterion(9, "transform round trips", ok,
                     f"at 1000 points Fredholm {fred[1]:.1e}, Volterra {volt[1]:.1e}; "
                     f"doubling ratios {fr[0]:.2f},{fr[1]:.2f} / {vr[0]:.2f},{vr[1]:.2f}")
    assert fred[1] < 1e-3 and volt[1] < 1e-3
    assert all(3.5 <= r <= 4.5 for r in fr + vr)


def test_c10_fd_vs_spectral_convergence():
    truth = PlantParams(1.0, 11.0, 1.0)
    k = modal_gains(11.0, 20, DesignParams(), 1.0)
    schedule = GainSchedule(11.0, 20, tuple(k), 2.0, 1.0)
    coeffs = exact_sine_coefficients(lambda x: float(sine_cubic_profile(x)), 40)
    t_end, n_cmp = 0.5, 10
    ref = spectral_oracle(truth, k, coeffs, t_end)[:n_cmp]
    errs = []
    for n_points, dt in ((51, 4e-4), (101, 2e-4), (201, 1e-4)):
        res = run_nominal(truth, sine_cubic_profile, SolverConfig(dt=dt, n_points=n_points, n_max=40),
                          horizon=t_end, feedback="truncated", schedule=schedule)
        a = res.trace.a[-1][:n_cmp]
        errs.append(math.sqrt(2.0 * np.sum((a - ref) ** 2)))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = all(3.5 <= r <= 4.5 for r in ratios)
    record_criterion(10, "FD vs spectral convergence", ok,
                     f"errors {errs[0]:.2e}, {errs[1]:.2e}, {errs[2]:.2e}; "
                     f"ratios {ratios[0]:.3f}, {ratios[1]:.3f}")
    assert ok


def test_c11_passive_baseline(regulation_run, passive_run):
    reg, _ = regulation_run
    pas, elapsed = passive_run
    final_theta = float(pas.theta_hat[-1])
    t_reg, t_pas = settle_time(reg), settle_time(pas)
    slower = t_reg is not None and (t_pas is None or t_pas > t_reg)
    peak_reg, peak_pas = float(reg.norms.max()), float(pas.norms.max())
    ok = final_theta > 11.0 and slower and peak_pas < peak_reg and elapsed < 120.0
    record_criterion(11, "passive baseline", ok,
                     f"final theta_hat {final_theta:.4f}, settle {t_pas} vs {t_reg}, "
                     f"peak {peak_pas:.3f} vs {peak_reg:.3f}, {elapsed:.1f} s")
    assert final_theta > 11.0
    assert slower
    assert peak_pas < peak_reg
    assert elapsed < 120.0


def test_c12_reduced_model_backend():
    rng = np.random.default_rng(12)
    design = ReducedModelDesign()
    solver = SolverConfig()
    problems = []
    worst_place, worst_cert = 0.0, 0.0
    for theta in (-5.0, 0.0, 1.0, math.pi**2, 11.0, 50.0, 100.0):
        model = ReducedModel.build(theta, 1.0)
        if not controllability_check(model).controllable:
            problems.append(("uncontrollable", theta))
        poles = default_poles(theta, 1.0, model.N)
        k = pole_place(model, poles)
        got = np.sort(np.linalg.eigvals(model.A_open + np.outer(model.g, k)).real)
        worst_place = max(worst_place, float(np.max(np.abs(got - np.sort(poles)) / np.abs(poles))))
        sched = design(theta)
        q = schedule_weights(sched, solver.n_points, 1.0)
        truth = PlantParams(1.0, theta, 1.0)
        for _ in range(20):
            amp = rng.normal(size=8) / np.arange(1, 9)
            poly = rng.normal(size=2)

            def u0(x, amp=amp, poly=poly):
                modes = sum(amp[i] * math.sqrt(2) * np.sin((i + 1) * math.pi * x)
                            for i in range(8))
                return modes + poly[0] * x * (1 - x) + poly[1] * x**2 * (1 - x)

            res = simulate_linear_feedback(truth, u0, q, solver, horizon=0.5)
            bound = sched.R * np.exp(-sched.omega * res.times) * res.norms[0]
            worst_cert = max(worst_cert, float(np.max(res.norms / bound)))
    ok = not problems and worst_place <= 1e-8 and worst_cert <= 1.0 + 1e-9
    record_criterion(12, "reduced-model backend", ok,
                     f"placement error {worst_place:.1e}, max ||u||/(R e^(-wt) ||u0||) = "
                     f"{worst_cert:.4f} over 140 runs")
    assert not problems
    assert worst_place <= 1e-8
    assert worst_cert <= 1.0 + 1e-9


def test_c13_series_identity():
    r1000 = series_identity_residual(0.5, 1000)
    # envelope: largest residual over each doubling block [N, 2N)
    env = [max(series_identity_residual(0.5, n) for n in range(N, 2 * N, max(1, N // 16)))
           for N in (16, 32, 64, 128, 256, 512)]
    monotone = all(b < a for a, b in zip(env, env[1:]))
    ok = r1000 < 1e-4 and monotone
    record_criterion(13, "series identity", ok,
                     f"residual at x=0.5 with 1000 terms {r1000:.2e}, envelope monotone={monotone}")
    assert r1000 < 1e-4
    assert monotone
