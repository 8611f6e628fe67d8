"""Windowed least-squares identification of (theta, c) from modal traces.

Every mode obeys ``a_n' = (theta - n^2 pi^2 p) a_n - (-1)^n p n pi c U``.
Integrating between two instants t, s of the window gives the exact linear
relation ``f_n(t, s) = theta g_n(t, s) + c j_n(t, s)`` with

    f_n = (a_n(t) - a_n(s)) + n^2 pi^2 p (F_n(t) - F_n(s))
    g_n = F_n(t) - F_n(s)
    j_n = -(-1)^n p n pi (V(t) - V(s))

where F_n and V are running integrals of a_n and U.  The least-squares fit of
that relation over the square window leads to 2x2 normal equations per mode.
All three ``f, g, j`` are differences ``X(t) - X(s)`` of sampled series, so the
double integrals reduce to single ones.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .plant import PI, ModalTrace

log = logging.getLogger(__name__)

EPS_Q = 1e-10
RANK_TOL = 1e-8


class DegenerateWindowError(RuntimeError):
    """Stacked normal equations are rank deficient although the input is active."""


@dataclass(frozen=True)
class Window:
    mu: float
    tau: float
    trace: ModalTrace

    def __post_init__(self):
        if not self.tau > self.mu >= 0:
            raise ValueError(f"invalid window [{self.mu}, {self.tau}]")

    @classmethod
    def from_trace(cls, trace: ModalTrace, mu: float, tau: float) -> "Window":
        return cls(mu, tau, trace.restrict(mu, tau))

    @property
    def length(self) -> float:
        return self.tau - self.mu


@dataclass(frozen=True)
class ModeEqs:
    H1: float
    H2: float
    Q1: float
    Q2: float
    Q3: float


@dataclass(frozen=True)
class NormalEqs:
    """Per-mode normal equations (index 0 is mode 1) and the vanishing scale."""

    H1: np.ndarray
    H2: np.ndarray
    Q1: np.ndarray
    Q2: np.ndarray
    Q3: np.ndarray
    scale: float = 1.0

    @classmethod
    def stack(cls, modes, scale: float = 1.0) -> "NormalEqs":
        arr = {k: np.array([getattr(m, k) for m in modes]) for k in ("H1", "H2", "Q1", "Q2", "Q3")}
        return cls(scale=scale, **arr)

    @property
    def n_modes(self) -> int:
        return self.Q1.size


# Parameter sets ---------------------------------------------------------------

@dataclass(frozen=True)
class FullPlane:
    kind = "FullPlane"


@dataclass(frozen=True)
class ThetaLine:
    theta: float
    kind = "ThetaLine"


@dataclass(frozen=True)
class Singleton:
    theta: float
    c: float
    kind = "Singleton"


@dataclass(frozen=True)
class Estimates:
    theta_hat: float
    c_hat: float

    def __post_init__(self):
        if not self.c_hat > 0:
            raise ValueError(f"c_hat must stay positive, got {self.c_hat}")


# Series -----------------------------------------------------------------------

def _sign(n: int) -> float:
    return -1.0 if n % 2 else 1.0


def mode_series(trace: ModalTrace, n: int, p: float, known_c: float | None = None):
    """Sampled X-series whose differences give f_n, g_n and j_n.

    With ``known_c`` the input term is folded into f (so that f = theta g).
    """
    if not 1 <= n <= trace.n_max:
        raise ValueError(f"mode {n} not recorded (n_max={trace.n_max})")
    a = trace.a[:, n - 1]
    F = trace.F[:, n - 1]
    lam = n * n * PI * PI * p
    Xj = -_sign(n) * p * n * PI * trace.V
    Xf = a + lam * F
    if known_c is not None:
        Xf = Xf - known_c * Xj
    return Xf, F, Xj


def fgj_eval(window: Window, n: int, t: float, s: float, p: float,
             known_c: float | None = None):
    """``(f_n(t, s), g_n(t, s), j_n(t, s))`` with linear interpolation in time."""
    lo, hi = window.mu - 1e-12, window.tau + 1e-12
    if not (lo <= t <= hi and lo <= s <= hi):
        raise ValueError(f"({t}, {s}) outside window [{window.mu}, {window.tau}]")
    tr = window.trace
    out = []
    for X in mode_series(tr, n, p, known_c):
        out.append(float(np.interp(t, tr.times, X) - np.interp(s, tr.times, X)))
    return tuple(out)


def _time_weights(times: np.ndarray) -> np.ndarray:
    dt = np.diff(times)
    w = np.zeros_like(times)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def _reduced(w, X, Y) -> float:
    """``int int (X(t)-X(s)) (Y(t)-Y(s)) ds dt = 2 L int (X-Xbar)(Y-Ybar)``."""
    L = w.sum()
    Xc = X - (w @ X) / L
    Yc = Y - (w @ Y) / L
    return float(2.0 * L * (w @ (Xc * Yc)))


def _direct(w, X, Y) -> float:
    dX = X[:, None] - X[None, :]
    dY = Y[:, None] - Y[None, :]
    return float(w @ (dX * dY) @ w)


def normal_equations(window: Window, n: int, p: float, method: str = "reduction",
                     known_c: float | None = None) -> ModeEqs:
    """The five double integrals of mode n over the window (trapezoid in s and t).

    ``method='direct'`` evaluates the double trapezoid sum literally (O(K^2));
    ``'reduction'`` uses the separable identity and agrees with it exactly in
    exact arithmetic.
    """
    Xf, Xg, Xj = mode_series(window.trace, n, p, known_c)
    w = _time_weights(window.trace.times)
    op = {"reduction": _reduced, "direct": _direct}[method]
    return ModeEqs(H1=op(w, Xf, Xg), H2=op(w, Xf, Xj), Q1=op(w, Xg, Xg),
                   Q2=op(w, Xg, Xj), Q3=op(w, Xj, Xj))


def window_scale(window: Window) -> float:
    sup = float(np.max(window.trace.norms)) if len(window.trace) else 0.0
    return window.length**2 * max(1.0, sup**4)


def normal_equations_all(window: Window, p: float, n_ident: int = 5, method: str = "reduction",
                         known_c: float | None = None) -> NormalEqs:
    n_ident = min(n_ident, window.trace.n_max)
    modes = [normal_equations(window, n, p, method, known_c) for n in range(1, n_ident + 1)]
    return NormalEqs.stack(modes, scale=window_scale(window))


def classify_set(eqs: NormalEqs, eps_q: float = EPS_Q, rank_tol: float = RANK_TOL):
    """Shape of the solution set of the stacked normal equations.

    FullPlane when every g-energy vanishes, ThetaLine when the input energy
    vanishes (theta from the first mode carrying g-energy), Singleton
    otherwise (least squares over the modes carrying g-energy).
    """
    tol = eps_q * eqs.scale
    active = np.flatnonzero(eqs.Q1 > tol)
    if active.size == 0:
        return FullPlane()
    if np.max(eqs.Q3) <= tol:
        m = active[0]
        return ThetaLine(float(eqs.H1[m] / eqs.Q1[m]))
    rows, rhs = [], []
    for i in active:
        rows += [[eqs.Q1[i], eqs.Q2[i]], [eqs.Q2[i], eqs.Q3[i]]]
        rhs += [eqs.H1[i], eqs.H2[i]]
    A = np.array(rows)
    b = np.array(rhs)
    # Column scaling so the rank test is insensitive to units of theta vs c.
    colscale = np.linalg.norm(A, axis=0)
    colscale[colscale == 0] = 1.0
    As = A / colscale
    sv = np.linalg.svd(As, compute_uv=False)
    if sv[-1] <= rank_tol * sv[0]:
        raise DegenerateWindowError(
            f"stacked normal equations rank deficient (sv ratio {sv[-1] / sv[0]:.2e})")
    sol = np.linalg.lstsq(As, b, rcond=None)[0] / colscale
    return Singleton(float(sol[0]), float(sol[1]))


def update_estimates(prev: Estimates, pset) -> Estimates:
    """Projection of the previous estimate onto the parameter set."""
    if isinstance(pset, FullPlane):
        return prev
    if isinstance(pset, ThetaLine):
        return Estimates(pset.theta, prev.c_hat)
    if isinstance(pset, Singleton):
        if not pset.c > 0:
            # Only possible through numerical error; the true c is positive.
            log.warning("identified c=%.4g is not positive; keeping c_hat=%.4g", pset.c, prev.c_hat)
            return Estimates(pset.theta, prev.c_hat)
        return Estimates(pset.theta, pset.c)
    raise TypeError(f"unknown parameter set {pset!r}")


def update_theta_known_c(window: Window, prev_theta: float, p: float, c: float,
                         n_ident: int = 5, eps_q: float = EPS_Q):
    """Known-c update: ``H_m / Q_m`` for the first mode with g-energy.

    Returns ``(theta, m)``; ``m`` is None when every Q_n vanishes and the
    previous value is kept.
    """
    if not c > 0:
        raise ValueError("known c must be positive")
    tol = eps_q * window_scale(window)
    for n in range(1, min(n_ident, window.trace.n_max) + 1):
        eq = normal_equations(window, n, p, known_c=c)
        if eq.Q1 > tol:
            return float(eq.H1 / eq.Q1), n
    return prev_theta, None


def identify(window: Window, prev: Estimates, p: float, known_c: float | None = None,
             n_ident: int = 5, eps_q: float = EPS_Q, rank_tol: float = RANK_TOL):
    """One event update.  Returns ``(estimates, set_kind, diagnostics)``."""
    if known_c is not None:
        theta, m = update_theta_known_c(window, prev.theta_hat, p, known_c, n_ident, eps_q)
        kind = "FullPlane" if m is None else "ThetaLine"
        return Estimates(theta, prev.c_hat), kind, {"mode": m}
    eqs = normal_equations_all(window, p, n_ident)
    diag = {"Q1": eqs.Q1.tolist(), "Q3": eqs.Q3.tolist(), "H1": eqs.H1.tolist(),
            "H2": eqs.H2.tolist(), "Q2": eqs.Q2.tolist()}
    try:
        pset = classify_set(eqs, eps_q, rank_tol)
    except DegenerateWindowError as exc:
        log.warning("degenerate window [%g, %g]: %s", window.mu, window.tau, exc)
        diag["degenerate"] = str(exc)
        return prev, "Degenerate", diag
    return update_estimates(prev, pset), pset.kind, diag
