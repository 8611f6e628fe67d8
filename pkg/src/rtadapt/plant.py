"""Finite-difference simulation of the boundary-actuated reaction-diffusion plant.

The plant is

    u_t = p u_xx + theta u,   u(t, 0) = 0,   u(t, 1) = c U(t)

on the unit interval.  Time stepping is Crank-Nicolson.  When the input is a
linear state feedback ``U = sum_j q_j u_j`` the boundary coupling is solved
implicitly, which keeps the scheme second order in time.

Besides the stepper this module holds the modal bookkeeping used by the
identifier (``ModalTrace``) and a few independent oracles: the exact modal
solution of the closed loop, the series identity for ``(x - x^3)/6`` and the
Fredholm transform round trip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, linalg

PI = math.pi


class BlowUpError(RuntimeError):
    """Raised when the simulated state stops being finite or exceeds the guard."""

    def __init__(self, message, t=None, partial=None):
        super().__init__(message)
        self.t = t
        self.partial = partial


@dataclass(frozen=True)
class PlantParams:
    p: float = 1.0
    theta: float = 11.0
    c: float = 1.0

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError(f"diffusion coefficient must be positive, got p={self.p}")
        if not self.c > 0:
            raise ValueError(f"high-frequency gain must be positive, got c={self.c}")
        if not math.isfinite(self.theta):
            raise ValueError("theta must be finite")


@dataclass(frozen=True)
class SpatialGrid:
    n_points: int = 100

    def __post_init__(self):
        if self.n_points < 3:
            raise ValueError("grid needs at least 3 nodes")

    @property
    def dx(self) -> float:
        return 1.0 / (self.n_points - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_points)

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.n_points)


@dataclass
class StateProfile:
    t: float
    values: np.ndarray

    @property
    def grid(self) -> SpatialGrid:
        return SpatialGrid(len(self.values))

    def norm(self) -> float:
        return l2_norm(self.values)


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-4
    n_max: int = 40
    n_points: int = 100
    blowup: float = 1e12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.n_points < 3:
            raise ValueError("n_points must be >= 3")

    @property
    def grid(self) -> SpatialGrid:
        return SpatialGrid(self.n_points)


def trapezoid_weights(n_points: int) -> np.ndarray:
    w = np.full(n_points, 1.0 / (n_points - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def l2_norm(values) -> float:
    values = np.asarray(values, dtype=float)
    return math.sqrt(float(trapezoid_weights(len(values)) @ (values * values)))


def sine_projector(n_points: int, n_max: int) -> np.ndarray:
    """Matrix P with ``(P @ u)[n-1] ~= int_0^1 sin(n pi x) u(x) dx`` (trapezoid)."""
    x = np.linspace(0.0, 1.0, n_points)
    n = np.arange(1, n_max + 1)[:, None]
    return np.sin(n * PI * x) * trapezoid_weights(n_points)


def modal_project(state, n: int) -> float:
    values = state.values if isinstance(state, StateProfile) else np.asarray(state, float)
    if n < 1:
        raise ValueError("mode index starts at 1")
    x = np.linspace(0.0, 1.0, len(values))
    return float(trapezoid_weights(len(values)) @ (np.sin(n * PI * x) * values))


def feedback_weights(gain_fn_values, c_hat: float = 1.0) -> np.ndarray:
    """Node weights q such that ``U = q @ u`` equals ``(1/c_hat) int k u dx``."""
    k = np.asarray(gain_fn_values, dtype=float)
    return trapezoid_weights(len(k)) * k / c_hat


def modal_gain_function(gains: Sequence[float], x) -> np.ndarray:
    """``k(x) = sum_n k_n sqrt(2) sin(n pi x)``."""
    gains = np.asarray(gains, dtype=float)
    x = np.asarray(x, dtype=float)
    if gains.size == 0:
        return np.zeros_like(x)
    n = np.arange(1, gains.size + 1)
    return math.sqrt(2.0) * (gains @ np.sin(np.outer(n, x) * PI))


class CrankNicolson:
    """Crank-Nicolson stepper for a fixed (params, grid, dt).

    The interior operator is constant over a run, so its implicit factor is
    inverted once and each step is a dense mat-vec plus O(n) work.
    """

    def __init__(self, params: PlantParams, n_points: int, dt: float):
        self.params = params
        self.n_points = n_points
        self.dt = dt
        dx = 1.0 / (n_points - 1)
        m = n_points - 2
        r = params.p / dx**2
        main = -2.0 * r + params.theta
        lap = (np.diag(np.full(m, main)) + np.diag(np.full(m - 1, r), 1)
               + np.diag(np.full(m - 1, r), -1))
        eye = np.eye(m)
        self._rhs = eye + 0.5 * dt * lap
        self._inv = linalg.inv(eye - 0.5 * dt * lap)
        self._alpha = 0.5 * dt * r
        # response of the interior to a unit boundary value at the new level
        self._z = self._inv[:, -1].copy()

    def _explicit_part(self, values: np.ndarray) -> np.ndarray:
        rhs = self._rhs @ values[1:-1]
        rhs[-1] += self._alpha * values[-1]
        return self._inv @ rhs

    def step_input(self, values: np.ndarray, boundary_value: float) -> np.ndarray:
        """Advance with a prescribed boundary value ``c U`` at the new level."""
        y = self._explicit_part(values)
        out = np.empty_like(values)
        out[0] = 0.0
        out[1:-1] = y + self._alpha * boundary_value * self._z
        out[-1] = boundary_value
        return out

    def boundary_from_feedback(self, interior: np.ndarray, q: np.ndarray) -> float:
        """Boundary value b solving ``b = c (q_int . u_int + q_end b)``."""
        c = self.params.c
        denom = 1.0 - c * q[-1]
        return c * float(q[1:-1] @ interior) / denom

    def step_feedback(self, values: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Advance under ``U = q @ u`` imposed implicitly at the new time level."""
        c = self.params.c
        beta = c / (1.0 - c * q[-1])
        qi = q[1:-1]
        y = self._explicit_part(values)
        b = beta * float(qi @ y) / (1.0 - self._alpha * beta * float(qi @ self._z))
        out = np.empty_like(values)
        out[0] = 0.0
        out[1:-1] = y + self._alpha * b * self._z
        out[-1] = b
        return out


def check_finite(values: np.ndarray, t: float, limit: float = 1e12) -> float:
    norm = l2_norm(values)
    if not np.all(np.isfinite(values)) or not math.isfinite(norm):
        raise BlowUpError(f"non-finite state at t={t:.6g}", t=t)
    if norm > limit:
        raise BlowUpError(f"state norm {norm:.3e} exceeds blow-up guard at t={t:.6g}", t=t)
    return norm


_STEPPERS: dict = {}


def _stepper(params: PlantParams, n_points: int, dt: float) -> CrankNicolson:
    key = (params, n_points, float(dt))
    st = _STEPPERS.get(key)
    if st is None:
        if len(_STEPPERS) > 64:
            _STEPPERS.clear()
        st = _STEPPERS[key] = CrankNicolson(params, n_points, dt)
    return st


def step_fd(state: StateProfile, params: PlantParams, boundary_input: float,
            config: SolverConfig) -> StateProfile:
    """One Crank-Nicolson step with the input ``U`` held as known data.

    The old boundary level is read from ``state.values[-1]``; the new level is
    pinned to ``c * boundary_input``.
    """
    values = np.asarray(state.values, dtype=float)
    if values.size != config.n_points:
        raise ValueError(f"profile has {values.size} nodes, solver grid has {config.n_points}")
    if not np.all(np.isfinite(values)):
        raise BlowUpError(f"non-finite state at t={state.t:.6g}", t=state.t)
    st = _stepper(params, len(values), config.dt)
    new = st.step_input(values, params.c * boundary_input)
    t = state.t + config.dt
    check_finite(new, t, config.blowup)
    return StateProfile(t, new)


# --------------------------------------------------------------------------
# Modal traces


@dataclass
class ModalTrace:
    """Sampled modal coefficients with their running trapezoid integrals.

    ``a[k, n-1] = int sin(n pi x) u(t_k, x) dx``.  Times are non-decreasing; a
    repeated time marks a switch of the control law (the input jumps, the
    modal coefficients do not).
    """

    times: np.ndarray
    a: np.ndarray
    U: np.ndarray
    norms: np.ndarray
    F: np.ndarray = field(default=None)
    V: np.ndarray = field(default=None)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        if self.a.shape[0] != self.times.size:
            self.a = self.a.reshape(self.times.size, -1)
        self.U = np.asarray(self.U, dtype=float)
        self.norms = np.asarray(self.norms, dtype=float)
        if np.any(np.diff(self.times) < 0):
            raise ValueError("trace times must be non-decreasing")
        if self.F is None:
            self.F = integrate.cumulative_trapezoid(self.a, self.times, axis=0, initial=0.0)
        if self.V is None:
            self.V = integrate.cumulative_trapezoid(self.U, self.times, initial=0.0)

    @property
    def n_max(self) -> int:
        return self.a.shape[1]

    def __len__(self):
        return self.times.size

    def restrict(self, start: float, stop: float, atol: float = 1e-12) -> "ModalTrace":
        """Samples with ``start <= t <= stop``, integrals re-based at ``start``."""
        lo = int(np.searchsorted(self.times, start - atol, side="left"))
        hi = int(np.searchsorted(self.times, stop + atol, side="right"))
        if hi - lo < 2:
            raise ValueError(f"trace has fewer than two samples in [{start}, {stop}]")
        return ModalTrace(self.times[lo:hi], self.a[lo:hi], self.U[lo:hi], self.norms[lo:hi],
                          F=self.F[lo:hi] - self.F[lo], V=self.V[lo:hi] - self.V[lo])


class TraceRecorder:
    """Accumulates samples of a running simulation into a ``ModalTrace``."""

    def __init__(self, n_points: int, n_max: int):
        self.projector = sine_projector(n_points, n_max)
        self.weights = trapezoid_weights(n_points)
        self.times: list = []
        self.a: list = []
        self.U: list = []
        self.norms: list = []

    def record(self, t: float, values: np.ndarray, U: float) -> float:
        norm = math.sqrt(float(self.weights @ (values * values)))
        self.times.append(t)
        self.a.append(self.projector @ values)
        self.U.append(U)
        self.norms.append(norm)
        return norm

    def trace(self) -> ModalTrace:
        return ModalTrace(np.array(self.times), np.array(self.a), np.array(self.U),
                          np.array(self.norms))


def write_trajectory_csv(path, trace: ModalTrace, stride: int = 1, extra=None):
    """CSV with columns t, norm, U, a_1..a_nmax (plus optional extra columns)."""
    extra = extra or {}
    idx = np.arange(0, len(trace), max(1, int(stride)))
    if idx[-1] != len(trace) - 1:
        idx = np.append(idx, len(trace) - 1)
    header = ["t", "norm", "U"] + [f"a_{n}" for n in range(1, trace.n_max + 1)] + list(extra)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for k in idx:
            row = [trace.times[k], trace.norms[k], trace.U[k], *trace.a[k]]
            row += [extra[name][k] for name in extra]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_profiles_csv(path, profiles: Sequence[StateProfile]):
    with open(path, "w", newline="\n") as fh:
        n = len(profiles[0].values)
        fh.write(",".join(["t"] + [f"x{j}" for j in range(n)]) + "\n")
        for prof in profiles:
            fh.write(",".join(repr(float(v)) for v in [prof.t, *prof.values]) + "\n")


# --------------------------------------------------------------------------
# Oracles


def closed_modal_matrix(params: PlantParams, gains, n_max: int, c_hat: float | None = None):
    """Generator of ``a' = M a`` for modes 1..n_max under the modal feedback.

    With ``U = (1/c_hat) sum_{m<=N} sqrt(2) k_m a_m`` every mode obeys
    ``a_n' = (theta - n^2 pi^2 p) a_n - (-1)^n p n pi c U``.  Modes above N do
    not feed back, so M is block lower triangular.
    """
    gains = np.asarray(gains, dtype=float)
    N = gains.size
    if N > n_max:
        raise ValueError(f"gain schedule uses N={N} modes but n_max={n_max}")
    c_hat = params.c if c_hat is None else c_hat
    n = np.arange(1, n_max + 1)
    M = np.diag(params.theta - params.p * (n * PI) ** 2)
    col = -((-1.0) ** n) * params.p * n * PI * params.c
    row = np.zeros(n_max)
    row[:N] = math.sqrt(2.0) * gains / c_hat
    return M + np.outer(col, row), row


def spectral_oracle(params: PlantParams, gains, coeffs, t, c_hat: float | None = None):
    """Exact modal coefficients ``a_n(t)`` of the closed loop.

    ``gains`` is a ``GainSchedule`` or a plain gain vector; ``coeffs`` are the
    initial ``a_n(0)`` for n = 1..n_max.  The first N modes evolve by the
    exponential of their closed block; the tail modes pick up the Duhamel
    convolution with the boundary forcing through the off-diagonal block of
    the same exponential.  Modes beyond n_max are not represented; their
    neglected energy is bounded by ``sum_{n>n_max} a_n(0)^2`` times
    ``exp(2 (theta - (n_max+1)^2 pi^2 p) t)`` plus the forced part.
    """
    k = getattr(gains, "k", gains)
    coeffs = np.asarray(coeffs, dtype=float)
    M, _ = closed_modal_matrix(params, k, coeffs.size, c_hat)
    if t == 0:
        return coeffs.copy()
    return linalg.expm(M * t) @ coeffs


def spectral_trace(params: PlantParams, gains, coeffs, times, c_hat: float | None = None):
    """Oracle samples on a uniform time grid, returned as a ``ModalTrace``.

    ``U`` is the applied input and norms are the modal (Parseval) norms
    ``sqrt(2 sum a_n^2)`` of the represented modes.
    """
    k = np.asarray(getattr(gains, "k", gains), dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    times = np.asarray(times, dtype=float)
    M, row = closed_modal_matrix(params, k, coeffs.size, c_hat)
    steps = np.diff(times)
    if steps.size and not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ValueError("spectral_trace expects a uniform time grid")
    a = np.empty((times.size, coeffs.size))
    a[0] = linalg.expm(M * times[0]) @ coeffs if times[0] else coeffs
    if steps.size:
        E = linalg.expm(M * steps[0])
        for i in range(1, times.size):
            a[i] = E @ a[i - 1]
    U = a @ row
    norms = np.sqrt(2.0 * np.sum(a * a, axis=1))
    return ModalTrace(times, a, U, norms)


def exact_sine_coefficients(fn: Callable[[float], float], n_max: int) -> np.ndarray:
    """``int_0^1 sin(n pi x) fn(x) dx`` by adaptive quadrature (weight='sin')."""
    out = np.empty(n_max)
    for n in range(1, n_max + 1):
        out[n - 1] = integrate.quad(fn, 0.0, 1.0, weight="sin", wvar=n * PI,
                                    limit=200, epsabs=1e-14, epsrel=1e-13)[0]
    return out


def series_identity_residual(x: float, n_terms: int) -> float:
    """``|sum_{n<=n_terms} L_n phi_n(x) / (n pi)^2 - (x - x^3)/6|``.

    ``L_n = -(-1)^n sqrt(2) / (n pi)`` and ``phi_n = sqrt(2) sin(n pi x)``.
    """
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1")
    terms = []
    for n in range(1, n_terms + 1):
        L = -((-1) ** n) * math.sqrt(2.0) / (n * PI)
        terms.append(L * math.sqrt(2.0) * math.sin(n * PI * x) / (n * PI) ** 2)
    return abs(math.fsum(terms) - (x - x**3) / 6.0)


def fredholm_transform(values, k, gamma: float) -> np.ndarray:
    """``w = u - (x + gamma k(x)) int k u``, integral by the trapezoid rule."""
    u = np.asarray(values, dtype=float)
    x = np.linspace(0.0, 1.0, u.size)
    kv = _samples(k, x)
    return u - (x + gamma * kv) * float(trapezoid_weights(u.size) @ (kv * u))


def fredholm_inverse(values, k, gamma: float, beta: float) -> np.ndarray:
    w = np.asarray(values, dtype=float)
    x = np.linspace(0.0, 1.0, w.size)
    kv = _samples(k, x)
    return w + beta * (x + gamma * kv) * float(trapezoid_weights(w.size) @ (kv * w))


def fredholm_beta(k, gamma: float, n_points: int = 1001, tol: float = 1e-10) -> float:
    """``beta = 1 / (1 - int s k(s) ds - gamma ||k||^2)``.

    A callable ``k`` is integrated by adaptive quadrature, independently of the
    grid the transforms use; sampled ``k`` falls back to the trapezoid rule on
    its own grid (then the discrete round trip is exact up to rounding).
    """
    if callable(k):
        def ks(s):
            return float(np.asarray(k(s), dtype=float).reshape(-1)[0])
        sk = integrate.quad(lambda s: s * ks(s), 0.0, 1.0, limit=400, epsabs=1e-14)[0]
        kk = integrate.quad(lambda s: ks(s) ** 2, 0.0, 1.0, limit=400, epsabs=1e-14)[0]
    else:
        kv = np.asarray(k, dtype=float)
        x = np.linspace(0.0, 1.0, kv.size)
        w = trapezoid_weights(kv.size)
        sk = float(w @ (x * kv))
        kk = float(w @ (kv * kv))
    denom = 1.0 - sk - gamma * kk
    if abs(denom) < tol:
        raise ValueError(f"gamma={gamma} makes the Fredholm denominator vanish ({denom:.3e})")
    return 1.0 / denom


def fredholm_roundtrip(profile, k, gamma: float) -> float:
    """L2 distance between ``profile`` and ``inverse(transform(profile))``."""
    values = profile.values if isinstance(profile, StateProfile) else np.asarray(profile, float)
    beta = fredholm_beta(k, gamma)
    back = fredholm_inverse(fredholm_transform(values, k, gamma), k, gamma, beta)
    return l2_norm(back - values)


def _samples(k, x):
    if callable(k):
        try:
            out = np.asarray(k(x), dtype=float)
        except (TypeError, ValueError):
            out = None
        if out is None or out.shape != x.shape:
            out = np.array([k(float(xi)) for xi in x], dtype=float)
        return out
    kv = np.asarray(k, dtype=float)
    if kv.size != x.size:
        raise ValueError("gain samples must match the profile grid")
    return kv
