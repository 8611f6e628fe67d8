"""Backstepping nominal feedback for the reaction-diffusion plant.

The full backstepping controller uses the kernel

    K(z, s) = -lam s I1(sqrt(lam (z^2 - s^2))) / sqrt(lam (z^2 - s^2)),
    lam = (theta + beta) / p,

and its inverse kernel L with J1 in place of I1.  The adaptive scheme needs a
finite modal feedback, so the boundary gain ``ktilde(x) = K(1, x)`` is
projected on the first N sine modes, with N chosen large enough that the
truncation error is covered by the small-gain margin of the target system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from .plant import PI, l2_norm, trapezoid_weights

# Past x = 5 the alternating J1 series starts shedding digits to cancellation.
_J1_SERIES_LIMIT = 25.0
_BESSEL_XMAX = 50.0


def bessel_ratio(q):
    """``I1(sqrt(q)) / sqrt(q)`` for real q, continued to q < 0 as ``J1(sqrt(-q)) / sqrt(-q)``.

    The ascending series ``(1/2) sum_m (q/4)^m / (m! (m+1)!)`` is entire in q,
    so the removable singularity at q = 0 needs no special case.  For strongly
    negative q the alternating series cancels badly and ``scipy.special.j1``
    is used instead.
    """
    q = np.asarray(q, dtype=float)
    out = np.empty_like(q)
    far = q < -_J1_SERIES_LIMIT
    near = ~far
    if np.any(near):
        out[near] = _ratio_series(q[near])
    if np.any(far):
        r = np.sqrt(-q[far])
        out[far] = special.j1(r) / r
    return out if out.ndim else float(out)


def _ratio_series(q):
    term = np.full_like(q, 0.5)
    total = term.copy()
    quarter = q / 4.0
    m = 0
    while True:
        m += 1
        term = term * quarter / (m * (m + 1))
        total += term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)) or m > 400:
            return total


def _check_range(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > _BESSEL_XMAX):
        raise ValueError(f"Bessel argument outside supported range [0, {_BESSEL_XMAX}]")
    return x


def bessel_I1(x):
    x = _check_range(x)
    out = x * bessel_ratio(x * x)
    return out if np.ndim(out) else float(out)


def bessel_J1(x):
    x = _check_range(x)
    out = x * bessel_ratio(-x * x)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class DesignParams:
    """Target-system and certificate parameters.

    beta shifts the target system, sigma is the decay target (the certificate
    rate is ``sigma p``), B weighs the Young inequality behind the overshoot
    constant, M is the margin factor of the alternative selection rule.
    """

    beta: float = 0.0
    sigma: float = 1.0
    B: float = 0.1
    M: float = 10.0
    panels: int = 10_000
    n_cap: int = 200

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.B > 0:
            raise ValueError("B must be positive")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.panels < 10:
            raise ValueError("panels too small")

    def mu(self, p: float) -> float:
        return math.sqrt(self.beta / p)

    @property
    def G(self) -> float:
        return math.sqrt(1.0 + 1.0 / self.B)


@dataclass(frozen=True)
class GainSchedule:
    """A designed modal feedback ``k(x) = sum_{n<=N} k_n phi_n(x)`` with its
    decay certificate ``||u[t]|| <= R exp(-omega t) ||u0||``."""

    theta_hat: float
    N: int
    k: tuple
    R: float
    omega: float
    backend: str = "backstepping"
    info: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.N < 1 or len(self.k) != self.N:
            raise ValueError("gain vector length must equal N >= 1")
        if not self.R >= 1:
            raise ValueError(f"overshoot constant must be >= 1, got {self.R}")
        if not self.omega > 0:
            raise ValueError("decay rate must be positive")

    @property
    def gains(self) -> np.ndarray:
        return np.asarray(self.k, dtype=float)


class DesignError(RuntimeError):
    pass


def kernel_K(theta, params: DesignParams, p, z, s):
    lam = (theta + params.beta) / p
    z = np.asarray(z, dtype=float)
    s = np.asarray(s, dtype=float)
    out = -lam * s * bessel_ratio(lam * (z * z - s * s))
    return out if np.ndim(out) else float(out)


def kernel_L(theta, params: DesignParams, p, z, s):
    lam = (theta + params.beta) / p
    z = np.asarray(z, dtype=float)
    s = np.asarray(s, dtype=float)
    out = -lam * s * bessel_ratio(-lam * (z * z - s * s))
    return out if np.ndim(out) else float(out)


def ktilde(theta, x, params: DesignParams, p):
    """Boundary gain ``K(1, x)``; identically zero for theta <= 0."""
    x = np.asarray(x, dtype=float)
    if theta <= 0:
        out = np.zeros_like(x)
        return out if out.ndim else 0.0
    return kernel_K(theta, params, p, 1.0, x)


def _gain_grid(params: DesignParams):
    x = np.linspace(0.0, 1.0, params.panels + 1)
    return x, trapezoid_weights(x.size)


def modal_gains(theta, N: int, params: DesignParams, p) -> np.ndarray:
    """``k_n = int_0^1 ktilde(x) phi_n(x) dx`` for n = 1..N (composite trapezoid)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if theta <= 0:
        return np.zeros(N)
    x, w = _gain_grid(params)
    kw = ktilde(theta, x, params, p) * w
    n = np.arange(1, N + 1)
    return math.sqrt(2.0) * (np.sin(np.outer(n, x) * PI) @ kw)


def ktilde_energy(theta, params: DesignParams, p) -> float:
    """``int_0^1 ktilde(x)^2 dx``."""
    if theta <= 0:
        return 0.0
    x, w = _gain_grid(params)
    k = ktilde(theta, x, params, p)
    return float(w @ (k * k))


def _sinh_minus_x(y: float) -> float:
    if y > 0.5:
        return math.sinh(y) - y
    term, total, k = y, 0.0, 1
    while True:
        term *= y * y / ((2 * k) * (2 * k + 1))
        total += term
        if term < 1e-18 * total:
            return total
        k += 1


def gamma_coeff(params: DesignParams, p: float) -> float:
    """Input-to-state gain of the target system (boundary disturbance to state)."""
    mu = params.mu(p)
    pole = PI**2 + mu**2
    if params.sigma >= pole:
        raise ValueError(f"sigma={params.sigma} must be below pi^2 + beta/p = {pole}")
    pref = math.sqrt(1.0 + params.B)
    if mu == 0:
        return pref * PI**2 / (math.sqrt(3.0) * (PI**2 - params.sigma))
    return pref * pole * math.sqrt(_sinh_minus_x(2 * mu)) / (
        2.0 * math.sqrt(mu) * (pole - params.sigma) * math.sinh(mu))


def l_tilde_bound(theta, params: DesignParams, p) -> float:
    return 1.0 + (theta + params.beta) / (4.0 * p * math.sqrt(3.0))


def k_tilde_bound(theta, params: DesignParams, p) -> float:
    lam = (theta + params.beta) / p
    return 1.0 + 0.5 * math.sqrt(lam / 3.0) * bessel_I1(math.sqrt(lam))


def kernel_norm_exact(theta, params: DesignParams, p, which: str = "L", n: int = 801) -> float:
    """``1 + ||kernel||_{L2(triangle)}`` by tensor trapezoid on the triangle."""
    z = np.linspace(0.0, 1.0, n)
    Z, S = np.meshgrid(z, z, indexing="ij")
    fn = kernel_L if which == "L" else kernel_K
    vals = np.where(S <= Z, fn(theta, params, p, Z, np.minimum(S, Z)), 0.0) ** 2
    inner = np.array([np.trapezoid(vals[i, : i + 1], z[: i + 1]) if i else 0.0
                      for i in range(n)])
    return 1.0 + math.sqrt(np.trapezoid(inner, z))


def select_N_and_R(theta, params: DesignParams, p) -> GainSchedule:
    """Smallest N with ``gamma * Lbound * ||ktilde - h_N|| < 1`` and its certificate.

    ``||ktilde - h_N||^2 = int ktilde^2 - sum_{n<=N} k_n^2`` (Parseval).  For
    theta <= 0 the open loop is already stable: N = 1, zero gain, R = 1,
    omega = pi^2 p.
    """
    if theta <= 0:
        return GainSchedule(float(theta), 1, (0.0,), 1.0, PI**2 * p,
                            info={"gap": 0.0, "small_gain": 0.0})
    gam = gamma_coeff(params, p)
    Lb = l_tilde_bound(theta, params, p)
    energy = ktilde_energy(theta, params, p)
    x, w = _gain_grid(params)
    kw = ktilde(theta, x, params, p) * w
    partial = 0.0
    gains = []
    for n in range(1, params.n_cap + 1):
        kn = math.sqrt(2.0) * float(np.sin(n * PI * x) @ kw)
        gains.append(kn)
        partial += kn * kn
        gap = math.sqrt(max(energy - partial, 0.0))
        small_gain = gam * Lb * gap
        if small_gain < 1.0:
            Kb = k_tilde_bound(theta, params, p)
            R = params.G * Lb * Kb / (1.0 - small_gain)
            return GainSchedule(float(theta), n, tuple(gains), R, params.sigma * p,
                                info={"gap": gap, "small_gain": small_gain,
                                      "gamma": gam, "L_bound": Lb, "K_bound": Kb})
    raise DesignError(f"no N <= {params.n_cap} satisfies the small-gain condition "
                      f"for theta={theta}")


class BacksteppingDesign:
    """Callable ``theta_hat -> GainSchedule`` with memoisation."""

    name = "backstepping"

    def __init__(self, params: DesignParams | None = None, p: float = 1.0):
        self.params = params or DesignParams()
        self.p = p
        self._cached = lru_cache(maxsize=256)(self._design)

    def _design(self, theta):
        return select_N_and_R(theta, self.params, self.p)

    def __call__(self, theta) -> GainSchedule:
        return self._cached(float(theta))


def _volterra_matrix(kernel, n: int) -> np.ndarray:
    """Lower-triangular quadrature matrix of ``int_0^{z_i} kernel(z_i, s) f(s) ds``."""
    x = np.linspace(0.0, 1.0, n)
    dx = 1.0 / (n - 1)
    Z, S = np.meshgrid(x, x, indexing="ij")
    mask = S <= Z + 1e-15
    vals = np.where(mask, kernel(Z, np.where(mask, S, Z)), 0.0)
    W = np.tril(np.full((n, n), dx))
    W[:, 0] *= 0.5
    W[np.diag_indices(n)] *= 0.5
    W[0, 0] = 0.0
    return vals * W


def volterra_transform(values, theta, params: DesignParams, p) -> np.ndarray:
    u = np.asarray(values, dtype=float)
    Kq = _volterra_matrix(lambda z, s: kernel_K(theta, params, p, z, s), u.size)
    return u - Kq @ u


def volterra_inverse(values, theta, params: DesignParams, p) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    Lq = _volterra_matrix(lambda z, s: kernel_L(theta, params, p, z, s), v.size)
    return v + Lq @ v


def volterra_roundtrip(profile, theta, params: DesignParams, p) -> float:
    """L2 distance between ``profile`` and ``inverse(transform(profile))``."""
    if theta + params.beta < 0:
        raise ValueError("round trip defined for theta + beta >= 0")
    u = getattr(profile, "values", profile)
    u = np.asarray(u, dtype=float)
    back = volterra_inverse(volterra_transform(u, theta, params, p), theta, params, p)
    return l2_norm(back - u)
