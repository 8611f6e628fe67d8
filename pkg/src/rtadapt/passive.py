"""Continuous-time baseline: observer PDE plus gradient update for theta.

The observer copies the plant with the estimate in place of theta and an
injection term that pulls it towards the measured state,

    uh_t = p uh_xx + theta_hat u + gamma^2 ||u||^2 (u - uh),

and theta_hat follows ``theta_hat' = gamma int (u - uh) u dx``.  The control is
the full backstepping boundary feedback evaluated at the current estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .backstepping import DesignParams, ktilde
from .plant import (BlowUpError, PlantParams, SolverConfig, StateProfile, TraceRecorder,
                    feedback_weights, trapezoid_weights)
from .supervisor import RunResult, _guard, _initial_values, _Integrator


@dataclass
class PassiveState:
    u_hat: StateProfile
    theta_hat: float
    gain_gamma: float

    def __post_init__(self):
        if not self.gain_gamma > 0:
            raise ValueError("adaptation gain must be positive")


class _Observer:
    """Crank-Nicolson stepper for the observer with a time-varying damping."""

    def __init__(self, p: float, n_points: int, dt: float):
        self.dt = dt
        self.m = n_points - 2
        self.r = p * (n_points - 1) ** 2

    def step(self, uh, u_old, u_new, theta_old, theta_new, s_old, s_new):
        h, r, m = self.dt, self.r, self.m
        # explicit half at the old level
        lap = np.empty(m)
        lap[:] = -2.0 * uh[1:-1]
        lap += uh[:-2]
        lap += uh[2:]
        rhs = uh[1:-1] + 0.5 * h * (r * lap - s_old * uh[1:-1])
        rhs += 0.5 * h * ((theta_old + s_old) * u_old[1:-1] + (theta_new + s_new) * u_new[1:-1])
        rhs[-1] += 0.5 * h * r * u_new[-1]
        ab = np.empty((3, m))
        ab[0, :] = -0.5 * h * r
        ab[1, :] = 1.0 + 0.5 * h * (2.0 * r + s_new)
        ab[2, :] = -0.5 * h * r
        out = np.empty_like(uh)
        out[0] = 0.0
        out[1:-1] = linalg.solve_banded((1, 1), ab, rhs)
        out[-1] = u_new[-1]
        return out


def _update_rate(gamma: float, weights, u, uh) -> float:
    return gamma * float(weights @ ((u - uh) * u))


def step_passive(values: np.ndarray, state: PassiveState, truth: PlantParams,
                 solver: SolverConfig, design_params: DesignParams | None = None,
                 _cache: dict | None = None, adapt: bool = True):
    """Advance plant, observer and estimate by one step of ``solver.dt``.

    The observer boundary tracks the plant boundary ``c U`` (c is known to this
    scheme).  ``adapt=False`` freezes the estimate.  Returns
    ``(new plant values, new PassiveState)``.
    """
    design_params = design_params or DesignParams()
    cache = _cache if _cache is not None else {}
    n = solver.n_points
    integ = cache.get("integ") or cache.setdefault("integ", _Integrator(truth, solver))
    obs = cache.get("obs") or cache.setdefault("obs", _Observer(truth.p, n, solver.dt))
    w = cache.get("w")
    if w is None:
        w = cache["w"] = trapezoid_weights(n)
    x = np.linspace(0.0, 1.0, n)
    gamma = state.gain_gamma
    th0 = state.theta_hat
    uh = np.asarray(state.u_hat.values, dtype=float)

    q = feedback_weights(ktilde(th0, x, design_params, truth.p), truth.c)
    new = integ.step(values, q, solver.dt)
    s_old = gamma**2 * float(w @ (values * values))
    s_new = gamma**2 * float(w @ (new * new))
    rate_old = _update_rate(gamma, w, values, uh) if adapt else 0.0
    th_pred = th0 + solver.dt * rate_old
    uh_new = obs.step(uh, values, new, th0, th_pred, s_old, s_new)
    rate_new = _update_rate(gamma, w, new, uh_new) if adapt else 0.0
    th_new = th0 + 0.5 * solver.dt * (rate_old + rate_new)
    t_new = state.u_hat.t + solver.dt
    return new, PassiveState(StateProfile(t_new, uh_new), th_new, gamma)


def run_passive(truth: PlantParams, u0, gain_gamma: float = 100.0, theta0: float = 0.1,
                u_hat0=None, solver: SolverConfig | None = None, horizon: float = 3.0,
                design_params: DesignParams | None = None, profile_stride: int = 0,
                adapt: bool = True) -> RunResult:
    """Simulate the passive-identifier loop; ``u_hat0`` defaults to ``u0``."""
    solver = solver or SolverConfig()
    design_params = design_params or DesignParams()
    n = solver.n_points
    x = np.linspace(0.0, 1.0, n)
    values = _initial_values(u0, n)
    cache: dict = {}
    integ = cache["integ"] = _Integrator(truth, solver)
    q = feedback_weights(ktilde(theta0, x, design_params, truth.p), truth.c)
    values = integ.set_boundary(values, q)
    uh = _initial_values(u0 if u_hat0 is None else u_hat0, n)
    uh[-1] = values[-1]
    state = PassiveState(StateProfile(0.0, uh), float(theta0), float(gain_gamma))

    rec = TraceRecorder(n, solver.n_max)
    theta_hist = [state.theta_hat]
    profiles = [StateProfile(0.0, values.copy())] if profile_stride else []
    rec.record(0.0, values, values[-1] / truth.c)
    n_steps = int(round(horizon / solver.dt))
    try:
        for k in range(1, n_steps + 1):
            values, state = step_passive(values, state, truth, solver, design_params, cache, adapt)
            t = k * solver.dt
            norm = rec.record(t, values, values[-1] / truth.c)
            _guard(norm, values, t, solver.blowup)
            if not math.isfinite(state.theta_hat):
                raise BlowUpError(f"estimate diverged at t={t:.6g}", t=t)
            theta_hist.append(state.theta_hat)
            if profile_stride and k % profile_stride == 0:
                profiles.append(StateProfile(t, values.copy()))
    except BlowUpError as exc:
        tr = rec.trace()
        exc.partial = RunResult(tr, None, np.array(theta_hist[: len(tr)]),
                                np.full(len(tr), truth.c), profiles)
        raise
    tr = rec.trace()
    return RunResult(tr, None, np.array(theta_hist), np.full(len(tr), truth.c), profiles)


# Comparison ------------------------------------------------------------------

class ScenarioMismatch(ValueError):
    pass


@dataclass
class RunSummary:
    peak_norm: float
    initial_norm: float
    settle_time: float | None
    final_theta: float
    final_norm: float


@dataclass
class ComparisonReport:
    a: RunSummary
    b: RunSummary
    threshold: float
    labels: tuple = ("a", "b")
    deltas: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"threshold_fraction={self.threshold!r}"]
        for label, s in zip(self.labels, (self.a, self.b)):
            for key, val in vars(s).items():
                lines.append(f"{label}.{key}={val!r}")
        for key, val in self.deltas.items():
            lines.append(f"delta.{key}={val!r}")
        return "\n".join(lines) + "\n"


def settle_time(result: RunResult, fraction: float = 0.1) -> float | None:
    """First time after which ``||u|| <= fraction ||u0||`` holds for good."""
    norms = result.norms
    target = fraction * norms[0]
    above = np.flatnonzero(norms > target)
    if above.size == 0:
        return float(result.times[0])
    last = above[-1]
    if last == len(norms) - 1:
        return None
    return float(result.times[last + 1])


def summarize(result: RunResult, fraction: float = 0.1) -> RunSummary:
    return RunSummary(float(np.max(result.norms)), float(result.norms[0]),
                      settle_time(result, fraction), float(result.theta_hat[-1]),
                      float(result.norms[-1]))


def compare_runs(a: RunResult, b: RunResult, fraction: float = 0.1,
                 labels=("a", "b"), rtol: float = 1e-6) -> ComparisonReport:
    """Peak norm, settle time to ``fraction ||u0||`` and final estimate of two runs.

    Raises ScenarioMismatch when the runs do not start from the same state.
    """
    u_a, u_b = a.trace.a[0], b.trace.a[0]
    if u_a.shape != u_b.shape or not np.allclose(u_a, u_b, rtol=rtol, atol=1e-9):
        raise ScenarioMismatch("runs start from different initial conditions")
    sa, sb = summarize(a, fraction), summarize(b, fraction)
    deltas = {"peak_norm": sb.peak_norm - sa.peak_norm,
              "final_theta": sb.final_theta - sa.final_theta,
              "final_norm": sb.final_norm - sa.final_norm}
    if sa.settle_time is not None and sb.settle_time is not None:
        deltas["settle_time"] = sb.settle_time - sa.settle_time
    return ComparisonReport(sa, sb, fraction, tuple(labels), deltas)
