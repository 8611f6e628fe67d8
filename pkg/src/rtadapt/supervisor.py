"""Regulation-triggered certainty-equivalence adaptive loop.

Between events the plant runs under the nominal modal feedback designed for
the current estimate.  An event fires when the dwell time T has elapsed or
when ``||u[t]||`` reaches ``R (1 + a) ||u[tau_i]||``; at each event the
identifier is run on the window ``[mu_{i+1}, tau_{i+1}]`` and the gains are
redesigned for the new estimate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .backstepping import BacksteppingDesign, DesignError, GainSchedule, ktilde, DesignParams
from .identifier import EPS_Q, RANK_TOL, Estimates, Window, identify
from .plant import (BlowUpError, CrankNicolson, ModalTrace, PlantParams, SolverConfig,
                    StateProfile, TraceRecorder, feedback_weights, modal_gain_function)

log = logging.getLogger(__name__)

_TIME_EPS = 1e-12


@dataclass(frozen=True)
class TriggerConfig:
    T: float = 0.05
    a: float = 1.0
    N_tilde: int = 1

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("dwell bound T must be positive")
        if not self.a > 0:
            raise ValueError("overshoot slack a must be positive")
        if int(self.N_tilde) != self.N_tilde or self.N_tilde < 1:
            raise ValueError("window depth N_tilde must be an integer >= 1")


@dataclass
class EventRecord:
    index: int
    tau: float
    mu: float
    norm: float
    theta_before: float
    c_before: float
    theta_after: float
    c_after: float
    set_kind: str
    reason: str
    N: int
    R: float
    diagnostics: dict = field(default_factory=dict)

    def to_line(self) -> str:
        fields = {
            "event": self.index, "tau": self.tau, "mu": self.mu, "norm": self.norm,
            "theta_before": self.theta_before, "c_before": self.c_before,
            "theta_after": self.theta_after, "c_after": self.c_after,
            "set": self.set_kind, "reason": self.reason, "N": self.N, "R": self.R,
        }
        fields.update(self.diagnostics)
        return " ".join(f"{k}={_token(v)}" for k, v in fields.items())


def _token(val) -> str:
    if isinstance(val, (list, tuple, np.ndarray)):
        return ";".join(repr(float(v)) for v in val)
    if isinstance(val, (bool, int, str)) or val is None:
        return str(val).replace(" ", "_")
    return repr(float(val))


@dataclass
class EventLog:
    """Event records; record 0 is the start of the run (tau_0 = 0)."""

    events: list = field(default_factory=list)

    @property
    def taus(self) -> np.ndarray:
        return np.array([e.tau for e in self.events])

    def to_text(self) -> str:
        return "".join(e.to_line() + "\n" for e in self.events)

    def write(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_text())

    @staticmethod
    def parse(text: str) -> list:
        """Key-value records back as dictionaries of strings."""
        out = []
        for line in text.splitlines():
            if line.strip():
                out.append(dict(item.split("=", 1) for item in line.split()))
        return out


@dataclass
class RunResult:
    trace: ModalTrace
    log: EventLog | None
    theta_hat: np.ndarray
    c_hat: np.ndarray
    profiles: list = field(default_factory=list)
    nominal_U: np.ndarray | None = None

    @property
    def norms(self) -> np.ndarray:
        return self.trace.norms

    @property
    def times(self) -> np.ndarray:
        return self.trace.times


def mu_lookup(event_times, i: int, config: TriggerConfig) -> float:
    """Window anchor ``min{tau_j : j <= i, tau_j >= tau_{i+1} - N_tilde T}``."""
    taus = np.asarray(event_times, dtype=float)
    if taus.size < i + 2:
        raise ValueError("event_times must contain tau_0..tau_{i+1}")
    bound = taus[i + 1] - config.N_tilde * config.T
    candidates = taus[: i + 1][taus[: i + 1] >= bound - _TIME_EPS]
    return float(candidates.min())


def check_trigger(norm_now: float, norm_at_event: float, R: float, a: float) -> bool:
    """Norm-crossing condition; a zero state at the event never norm-triggers."""
    if norm_at_event <= 0:
        return False
    return norm_now >= R * (1.0 + a) * norm_at_event


def _initial_values(u0, n_points: int) -> np.ndarray:
    if isinstance(u0, StateProfile):
        values = np.asarray(u0.values, dtype=float)
    elif callable(u0):
        values = np.asarray(u0(np.linspace(0.0, 1.0, n_points)), dtype=float)
        if values.shape != (n_points,):
            values = np.array([u0(x) for x in np.linspace(0.0, 1.0, n_points)], dtype=float)
    else:
        values = np.asarray(u0, dtype=float)
    if values.size != n_points:
        raise ValueError(f"initial profile has {values.size} nodes, solver expects {n_points}")
    values = values.copy()
    values[0] = 0.0
    return values


class _Integrator:
    """Steps the plant under a linear feedback, handling partial steps."""

    def __init__(self, params: PlantParams, solver: SolverConfig):
        self.params = params
        self.solver = solver
        self._cache: dict = {}

    def stepper(self, dt: float) -> CrankNicolson:
        key = round(dt, 15)
        st = self._cache.get(key)
        if st is None:
            st = self._cache[key] = CrankNicolson(self.params, self.solver.n_points, dt)
        return st

    def set_boundary(self, values: np.ndarray, q: np.ndarray) -> np.ndarray:
        out = values.copy()
        out[-1] = self.stepper(self.solver.dt).boundary_from_feedback(values[1:-1], q)
        return out

    def step(self, values, q, dt):
        return self.stepper(dt).step_feedback(values, q)


def _guard(norm: float, values: np.ndarray, t: float, limit: float):
    if not math.isfinite(norm) or not np.all(np.isfinite(values)):
        raise BlowUpError(f"non-finite state at t={t:.6g}", t=t)
    if norm > limit:
        raise BlowUpError(f"state norm {norm:.3e} exceeds blow-up guard at t={t:.6g}", t=t)


def schedule_weights(schedule: GainSchedule, n_points: int, c_hat: float) -> np.ndarray:
    x = np.linspace(0.0, 1.0, n_points)
    return feedback_weights(modal_gain_function(schedule.gains, x), c_hat)


def run_adaptive(truth: PlantParams, u0, init: Estimates, config: TriggerConfig | None = None,
                 design: Callable[[float], GainSchedule] | None = None,
                 solver: SolverConfig | None = None, horizon: float = 3.0,
                 known_c: bool = False, n_ident: int = 5, eps_q: float = EPS_Q,
                 rank_tol: float = RANK_TOL, profile_stride: int = 0,
                 nominal: GainSchedule | None = None) -> RunResult:
    """Simulate the regulation-triggered adaptive closed loop.

    ``known_c`` switches to the reaction-only identifier with c taken from
    ``truth``.  ``nominal`` optionally records, alongside the applied input,
    the input the given schedule would produce on the same state (with the
    true c), which is how the post-identification control is compared to the
    nominal feedback.
    """
    config = config or TriggerConfig()
    solver = solver or SolverConfig()
    design = design or BacksteppingDesign(p=truth.p)
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    est = Estimates(init.theta_hat, truth.c if known_c else init.c_hat)

    n_points, dt = solver.n_points, solver.dt
    integ = _Integrator(truth, solver)
    rec = TraceRecorder(n_points, solver.n_max)
    elog = EventLog()
    theta_hist, c_hist, nominal_U = [], [], []
    profiles = []
    q_nom = schedule_weights(nominal, n_points, truth.c) if nominal is not None else None

    values = _initial_values(u0, n_points)
    t = 0.0
    schedule = design(est.theta_hat)
    event_index = 0
    reason = "start"
    set_kind = "-"
    diag: dict = {}
    prev_est = est
    mu = 0.0
    step_count = 0

    def record(t, values, U):
        norm = rec.record(t, values, U)
        theta_hist.append(est.theta_hat)
        c_hist.append(est.c_hat)
        if q_nom is not None:
            nominal_U.append(float(q_nom @ values))
        return norm

    try:
        while True:
            # --- event at time t: apply the (possibly new) control law
            q = schedule_weights(schedule, n_points, est.c_hat)
            values = integ.set_boundary(values, q)
            U = values[-1] / truth.c
            norm_event = record(t, values, U)
            _guard(norm_event, values, t, solver.blowup)
            elog.events.append(EventRecord(
                event_index, t, mu, norm_event, prev_est.theta_hat, prev_est.c_hat,
                est.theta_hat, est.c_hat, set_kind, reason, schedule.N, schedule.R, diag))
            if profile_stride:
                profiles.append(StateProfile(t, values.copy()))
            if t >= horizon - _TIME_EPS:
                break

            tau_i = t
            t_next = min(tau_i + config.T, horizon)
            threshold = schedule.R * (1.0 + config.a) * norm_event
            reason = "timer"
            k = 0
            while True:
                t_end = tau_i + (k + 1) * dt
                if t_end > t_next - _TIME_EPS:
                    t_end = t_next
                h = t_end - t
                new = integ.step(values, q, h)
                norm_new = float(np.sqrt(rec.weights @ (new * new)))
                _guard(norm_new, new, t_end, solver.blowup)
                if check_trigger(norm_new, norm_event, schedule.R, config.a):
                    # locate the crossing by linear interpolation of the norm,
                    # then take the partial step that lands on it
                    norm_old = rec.norms[-1]
                    frac = min(max((threshold - norm_old) / (norm_new - norm_old), 0.0), 1.0)
                    if frac * h > _TIME_EPS:
                        values = integ.step(values, q, frac * h)
                        t = t + frac * h
                        record(t, values, values[-1] / truth.c)
                    reason = "norm-crossing"
                    break
                values = new
                t = t_end
                k += 1
                step_count += 1
                record(t, values, values[-1] / truth.c)
                if profile_stride and step_count % profile_stride == 0:
                    profiles.append(StateProfile(t, values.copy()))
                if t >= t_next - _TIME_EPS:
                    break

            if reason == "timer" and t_next < tau_i + config.T - _TIME_EPS:
                # horizon reached inside a dwell interval: no event
                break

            # --- event: identification on [mu_{i+1}, tau_{i+1}]
            event_index += 1
            taus = list(elog.taus) + [t]
            mu = mu_lookup(taus, event_index - 1, config)
            prev_est = est
            window = Window.from_trace(rec.trace(), mu, t)
            est, set_kind, diag = identify(window, est, truth.p,
                                           known_c=truth.c if known_c else None,
                                           n_ident=n_ident, eps_q=eps_q, rank_tol=rank_tol)
            try:
                schedule = design(est.theta_hat)
            except DesignError as exc:
                log.warning("design failed for theta_hat=%g (%s); keeping previous gains",
                            est.theta_hat, exc)
                diag = dict(diag, design_error=str(exc))
    except BlowUpError as exc:
        exc.partial = RunResult(rec.trace(), elog, np.array(theta_hist), np.array(c_hist),
                                profiles, np.array(nominal_U) if q_nom is not None else None)
        raise

    return RunResult(rec.trace(), elog, np.array(theta_hist), np.array(c_hist), profiles,
                     np.array(nominal_U) if q_nom is not None else None)


def run_nominal(truth: PlantParams, u0, solver: SolverConfig | None = None, horizon: float = 3.0,
                feedback: str = "truncated", schedule: GainSchedule | None = None,
                design_params: DesignParams | None = None, N: int | None = None,
                profile_stride: int = 0) -> RunResult:
    """Closed loop with known (theta, c).

    ``feedback='truncated'`` uses the modal law with ``schedule`` (default:
    the backstepping design for the true theta, optionally forced to ``N``
    modes); ``'full_kernel'`` applies ``U = (1/c) int ktilde(s) u(s) ds``;
    ``'open_loop'`` keeps U = 0.
    """
    solver = solver or SolverConfig()
    design_params = design_params or DesignParams()
    n_points = solver.n_points
    x = np.linspace(0.0, 1.0, n_points)
    if feedback == "truncated":
        if schedule is None:
            schedule = BacksteppingDesign(design_params, truth.p)(truth.theta)
            if N is not None and N != schedule.N:
                from .backstepping import modal_gains
                k = modal_gains(truth.theta, N, design_params, truth.p)
                schedule = GainSchedule(truth.theta, N, tuple(k), schedule.R, schedule.omega)
        q = schedule_weights(schedule, n_points, truth.c)
    elif feedback == "full_kernel":
        q = feedback_weights(ktilde(truth.theta, x, design_params, truth.p), truth.c)
    elif feedback == "open_loop":
        q = np.zeros(n_points)
    else:
        raise ValueError(f"unknown feedback {feedback!r}")
    return simulate_linear_feedback(truth, u0, q, solver, horizon, profile_stride)


def simulate_linear_feedback(truth: PlantParams, u0, q: np.ndarray, solver: SolverConfig,
                             horizon: float, profile_stride: int = 0) -> RunResult:
    integ = _Integrator(truth, solver)
    rec = TraceRecorder(solver.n_points, solver.n_max)
    values = integ.set_boundary(_initial_values(u0, solver.n_points), q)
    n_steps = int(round(horizon / solver.dt))
    profiles = []
    rec.record(0.0, values, values[-1] / truth.c)
    if profile_stride:
        profiles.append(StateProfile(0.0, values.copy()))
    try:
        for k in range(1, n_steps + 1):
            values = integ.step(values, q, solver.dt)
            t = k * solver.dt
            norm = rec.record(t, values, values[-1] / truth.c)
            _guard(norm, values, t, solver.blowup)
            if profile_stride and k % profile_stride == 0:
                profiles.append(StateProfile(t, values.copy()))
    except BlowUpError as exc:
        tr = rec.trace()
        exc.partial = RunResult(tr, None, np.full(len(tr), truth.theta),
                                np.full(len(tr), truth.c), profiles)
        raise
    tr = rec.trace()
    return RunResult(tr, None, np.full(len(tr), truth.theta), np.full(len(tr), truth.c), profiles)
