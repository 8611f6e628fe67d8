"""Reduced-model nominal feedback: pole placement on the unstable sine modes.

In the coordinates ``x_n = int phi_n u`` the plant reads

    x_n' = (theta - p n^2 pi^2) x_n + g_n c U,   g_n = -p sqrt(2) (-1)^n n pi,

and a feedback ``c U = sum_{n<=N} k_n x_n`` is exactly the modal law used by
the adaptive scheme.  N is the smallest integer leaving every neglected mode
open-loop stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg

from .backstepping import GainSchedule
from .plant import PI


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReducedModel:
    N: int
    A_open: np.ndarray
    g: np.ndarray

    @classmethod
    def build(cls, theta: float, p: float, N: int | None = None) -> "ReducedModel":
        if N is None:
            N = select_N_rm(theta, p)
        n = np.arange(1, N + 1)
        A = np.diag(theta - p * PI**2 * n**2).astype(float)
        g = -p * math.sqrt(2.0) * (-1.0) ** n * n * PI
        return cls(N, A, g)


@dataclass(frozen=True)
class ControllabilityReport:
    controllable: bool
    rank: int
    sv_ratio: float


def select_N_rm(theta: float, p: float) -> int:
    N = 1
    while p * (N + 1) ** 2 * PI**2 <= theta:
        N += 1
    return N


def controllability_matrix(A, g) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    cols = [np.asarray(g, dtype=float)]
    for _ in range(A.shape[0] - 1):
        cols.append(A @ cols[-1])
    return np.column_stack(cols)


def controllability_check(model: ReducedModel, tol: float = 1e-10) -> ControllabilityReport:
    # Column scaling keeps the power sequence A^j g comparable in size.
    C = controllability_matrix(model.A_open, model.g)
    C = C / np.maximum(np.linalg.norm(C, axis=0), np.finfo(float).tiny)
    sv = linalg.svdvals(C)
    ratio = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
    rank = int(np.sum(sv > tol * sv[0])) if sv[0] > 0 else 0
    return ControllabilityReport(rank == model.N, rank, ratio)


def pole_place(model: ReducedModel, poles, rtol: float = 1e-8, cond_max: float = 1e12) -> np.ndarray:
    """Row k with ``eig(A_open + g k) = poles`` (Ackermann's formula).

    Poles must be real, negative and distinct.
    """
    poles = np.asarray(poles, dtype=float)
    if poles.size != model.N:
        raise ValueError(f"need {model.N} poles, got {poles.size}")
    if np.any(poles >= 0):
        raise ValueError("requested poles must be in the open left half-plane")
    if np.unique(poles).size != poles.size:
        raise ValueError("requested poles must be distinct")
    report = controllability_check(model)
    if not report.controllable:
        raise PlacementError(f"pair (A, g) is not controllable (rank {report.rank} < {model.N})")
    A, g = model.A_open, model.g
    C = controllability_matrix(A, g)
    cond = np.linalg.cond(C)
    if cond > cond_max:
        raise PlacementError(f"ill-conditioned placement, cond(C) = {cond:.3e}")
    coeffs = np.poly(poles)
    phi = np.zeros_like(A)
    for c in coeffs:
        phi = phi @ A + c * np.eye(model.N)
    e_last = np.zeros(model.N)
    e_last[-1] = 1.0
    k = -(e_last @ linalg.solve(C, phi))
    achieved = np.sort(np.linalg.eigvals(A + np.outer(g, k)).real)
    err = np.max(np.abs(achieved - np.sort(poles)) / np.abs(np.sort(poles)))
    if err > rtol:
        raise PlacementError(f"placed spectrum off by {err:.2e} relative (cond(C) = {cond:.2e})")
    return k


def default_poles(theta: float, p: float, N: int) -> np.ndarray:
    """Targets mirroring the heat spectrum: mode n goes to ``-p n^2 pi^2``."""
    n = np.arange(1, N + 1)
    return -p * PI**2 * n**2


def estimate_decay(A_closed, margin: float = 0.05, n_sweep: int = 4001):
    """Empirical ``(R, omega)`` with ``|exp(A t)| <= R exp(-omega t)``.

    omega is the spectral abscissa shrunk by ``margin``; R is the supremum of
    ``|exp(A t)| exp(omega t)`` over a dense sweep of ``t in [0, 20/omega]``.
    """
    A = np.atleast_2d(np.asarray(A_closed, dtype=float))
    abscissa = float(np.max(np.linalg.eigvals(A).real))
    if abscissa >= 0:
        raise ValueError(f"matrix is not Hurwitz (spectral abscissa {abscissa:.4g})")
    omega = -abscissa * (1.0 - margin)
    if A.shape == (1, 1):
        return 1.0, omega
    ts = np.linspace(0.0, 20.0 / omega, n_sweep)
    E = linalg.expm(A * ts[1])
    P = np.eye(A.shape[0])
    R = 1.0
    for t in ts[1:]:
        P = E @ P
        R = max(R, linalg.norm(P, 2) * math.exp(omega * t))
    return R, omega


def closed_loop_matrix(theta: float, p: float, gains, n_total: int) -> np.ndarray:
    """Closed-loop generator on modes 1..n_total in orthonormal coordinates."""
    gains = np.asarray(gains, dtype=float)
    n = np.arange(1, n_total + 1)
    A = np.diag(theta - p * PI**2 * n**2).astype(float)
    g = -p * math.sqrt(2.0) * (-1.0) ** n * n * PI
    row = np.zeros(n_total)
    row[: gains.size] = gains
    return A + np.outer(g, row)


class ReducedModelDesign:
    """Callable ``theta_hat -> GainSchedule`` for the reduced-model backend.

    The certificate is computed on the closed loop extended with the stable
    tail modes up to ``n_total``.
    """

    name = "reduced_model"

    def __init__(self, p: float = 1.0, n_total: int = 40, margin: float = 0.05):
        self.p = p
        self.n_total = n_total
        self.margin = margin
        self._cached = lru_cache(maxsize=256)(self._design)

    def _design(self, theta):
        p = self.p
        model = ReducedModel.build(theta, p)
        if theta <= 0:
            k = np.zeros(model.N)
        else:
            k = pole_place(model, default_poles(theta, p, model.N))
        n_total = max(self.n_total, model.N + 1)
        A_cl = closed_loop_matrix(theta, p, k, n_total)
        R, omega = estimate_decay(A_cl, self.margin)
        return GainSchedule(float(theta), model.N, tuple(float(v) for v in k), R, omega,
                            backend="reduced_model")

    def __call__(self, theta) -> GainSchedule:
        return self._cached(float(theta))
