"""Wigner-boost kinematics on the rest-frame foliation.

Conventions: metric signature (+, -, -, -), four-vectors are arrays of
shape (..., 4) ordered ``(time, x, y, z)``; positions carry the time
component in length units (``x^0 = c t``).  ``h`` is the spatial part of
the unit time-like vector ``P^mu / Mc`` and ``h0 = sqrt(1 + h.h)`` is
always derived from it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from ._base import (
    NumericError,
    ValidationError,
    as_particles,
    as_vector3,
    check_positive,
    frozen,
)

METRIC = np.diag([1.0, -1.0, -1.0, -1.0])
METRIC.setflags(write=False)


class UnsupportedInversionError(ValidationError):
    """The momentum inversion is only available for free particles."""


class OutOfRangeError(NumericError):
    """A root is not bracketed by the supplied trajectory."""


def minkowski_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minkowski product over the last axis."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., 0] * b[..., 0] - np.sum(a[..., 1:] * b[..., 1:], axis=-1)


def h0_of(h: np.ndarray) -> float:
    return float(np.sqrt(1.0 + np.dot(h, h)))


# ---------------------------------------------------------------------------
# Boost tetrad
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoostTetrad:
    """Columns ``eps^mu_A`` of the standard boost taking ``(1;0)`` to ``(h0; h)``.

    ``matrix[mu, A]`` holds the tetrad; column 0 is the time-like vector,
    columns 1..3 the spatial legs.  The array is C-ordered, so
    ``matrix.ravel()`` is the row-major 16-element layout used on disk.
    """

    matrix: np.ndarray

    @property
    def h(self) -> np.ndarray:
        return self.matrix[1:, 0].copy()

    @property
    def timelike(self) -> np.ndarray:
        return self.matrix[:, 0].copy()

    def spatial(self) -> np.ndarray:
        """The three space-like legs as a (4, 3) array."""
        return self.matrix[:, 1:].copy()

    def inverse(self) -> np.ndarray:
        """Inverse Lorentz matrix ``eta L^T eta``."""
        return METRIC @ self.matrix.T @ METRIC

    def orthonormality_error(self) -> float:
        gram = self.matrix.T @ METRIC @ self.matrix
        return float(np.max(np.abs(gram - METRIC)))


def boost_matrix(h: np.ndarray) -> np.ndarray:
    """Raw 4x4 standard boost for rapidity vector ``h`` (no validation)."""
    h = np.asarray(h, dtype=float)
    h0 = np.sqrt(1.0 + h @ h)
    L = np.empty((4, 4))
    L[0, 0] = h0
    L[0, 1:] = h
    L[1:, 0] = h
    L[1:, 1:] = np.eye(3) + np.outer(h, h) / (1.0 + h0)
    return L


def build_boost_tetrad(h: Sequence[float]) -> BoostTetrad:
    """Standard Wigner boost tetrad for ``h``."""
    h = as_vector3(h, "h")
    return BoostTetrad(frozen(boost_matrix(h)))


# ---------------------------------------------------------------------------
# Collective variables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JacobiData:
    """Frozen external center-of-mass data: ``z`` (mass x length) and ``h``."""

    z: np.ndarray
    h: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "z", frozen(as_vector3(self.z, "z")))
        object.__setattr__(self, "h", frozen(as_vector3(self.h, "h")))

    @property
    def h0(self) -> float:
        return h0_of(self.h)

    def four_velocity(self) -> np.ndarray:
        return np.concatenate([[self.h0], self.h])


@dataclass(frozen=True)
class Centers:
    """The three collective world-lines evaluated at one value of ``tau``."""

    tau: float
    tilde_x: np.ndarray
    Y: np.ndarray
    R: np.ndarray
    moller_radius: float


def _spin(S: Sequence[float] | None) -> np.ndarray:
    return np.zeros(3) if S is None else as_vector3(S, "S")


def fokker_pryce(j: JacobiData, Mc: float, S: Sequence[float] | None, tau: float) -> np.ndarray:
    """Covariant Fokker-Pryce center of inertia ``Y^mu(tau)``."""
    Mc = check_positive(Mc, "Mc")
    S = _spin(S)
    h, h0 = j.h, j.h0
    a = tau + h @ j.z / Mc
    spatial = j.z / Mc + a * h + np.cross(S, h) / (Mc * (1.0 + h0))
    return np.concatenate([[h0 * a], spatial])


def collective_centers(j: JacobiData, Mc: float, S: Sequence[float] | None, tau: float) -> Centers:
    """Newton-Wigner, Fokker-Pryce and Moller centers at time ``tau``."""
    Mc = check_positive(Mc, "Mc")
    S = _spin(S)
    h0 = j.h0
    Y = fokker_pryce(j, Mc, S, tau)
    sxh = np.cross(S, j.h)
    tilde_x = Y - np.concatenate([[0.0], sxh / (Mc * (1.0 + h0))])
    R = Y - np.concatenate([[0.0], sxh / (Mc * h0)])
    return Centers(
        tau=float(tau),
        tilde_x=frozen(tilde_x),
        Y=frozen(Y),
        R=frozen(R),
        moller_radius=float(np.linalg.norm(S) / Mc),
    )


def embed(
    j: JacobiData,
    tau: float,
    sigma: Sequence[float],
    *,
    Mc: float,
    S: Sequence[float] | None = None,
) -> np.ndarray:
    """Point of the Wigner 3-space ``Sigma_tau`` with radar coordinates ``sigma``."""
    sigma = as_vector3(sigma, "sigma")
    L = boost_matrix(j.h)
    return fokker_pryce(j, Mc, S, tau) + L[:, 1:] @ sigma


@dataclass(frozen=True)
class ExternalGenerators:
    P: np.ndarray
    J: np.ndarray
    K: np.ndarray


def external_generators(j: JacobiData, Mc: float, S: Sequence[float] | None) -> ExternalGenerators:
    """Poincare generators of the decoupled external center of mass."""
    Mc = check_positive(Mc, "Mc")
    S = _spin(S)
    z, h, h0 = j.z, j.h, j.h0
    P = Mc * np.concatenate([[h0], h])
    eps = _levi_civita()
    J = np.outer(z, h) - np.outer(h, z) + np.einsum("ijk,k->ij", eps, S)
    K = -h0 * z + np.cross(S, h) / (1.0 + h0)
    return ExternalGenerators(frozen(P), frozen(J), frozen(K))


def _levi_civita() -> np.ndarray:
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
    return eps


LEVI_CIVITA = _levi_civita()
LEVI_CIVITA.setflags(write=False)


# ---------------------------------------------------------------------------
# World-lines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorldlineSample:
    """Positions ``x[i]`` and momenta ``p[i]`` of every particle at ``tau``."""

    tau: float
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if x.ndim != 2 or x.shape[1] != 4 or p.shape != x.shape:
            raise ValidationError("x and p must both have shape (N, 4)")
        object.__setattr__(self, "x", frozen(x))
        object.__setattr__(self, "p", frozen(p))
        object.__setattr__(self, "tau", float(self.tau))


def worldlines_from_wigner(state, energies: Sequence[float], j: JacobiData) -> WorldlineSample:
    """Map Wigner 3-vectors and particle energies to Minkowski world-line points.

    ``Mc`` is the sum of the energies and the spin is ``sum eta x kappa``,
    both read off the state itself.
    """
    eta = as_particles(state.eta, "eta")
    kappa = as_particles(state.kappa, "kappa", eta.shape[0])
    E = np.asarray(energies, dtype=float)
    if E.shape != (eta.shape[0],) or np.any(E <= 0):
        raise ValidationError("energies must be positive, one per particle")
    Mc = float(np.sum(E))
    S = np.sum(np.cross(eta, kappa), axis=0)
    L = boost_matrix(j.h)
    Y = fokker_pryce(j, Mc, S, state.tau)
    x = Y[None, :] + eta @ L[:, 1:].T
    p = E[:, None] * L[:, 0][None, :] + kappa @ L[:, 1:].T
    return WorldlineSample(state.tau, x, p)


@dataclass(frozen=True)
class WignerCoordinates:
    """Result of inverting world-line data back to the Wigner 3-space."""

    tau: np.ndarray
    eta: np.ndarray
    kappa: np.ndarray
    energies: np.ndarray


def wigner_from_worldlines(w: WorldlineSample, j: JacobiData, model_kind: str = "free") -> WignerCoordinates:
    """Invert :func:`worldlines_from_wigner` for free particles.

    Each particle gets its own ``tau_i`` (equal to ``w.tau`` when the
    sample came from a single Wigner 3-space).  The spin entering the
    origin offset is recovered by a 3x3 linear solve, since the offset
    shifts every ``eta_i`` by the same vector.
    """
    if model_kind != "free":
        raise UnsupportedInversionError("momentum inversion is only defined for free particles")
    L = boost_matrix(j.h)
    u = L[:, 0]
    legs = L[:, 1:]
    h, h0 = j.h, j.h0
    E = minkowski_dot(w.p, u[None, :])
    kappa = -(w.p * np.array([1.0, -1.0, -1.0, -1.0])) @ legs
    Mc = float(np.sum(E))
    if Mc <= 0:
        raise NumericError("non-positive invariant mass in world-line data")
    Y0_spinless = fokker_pryce(j, Mc, None, 0.0)
    dx = w.x - Y0_spinless[None, :]
    tau = minkowski_dot(dx, u[None, :])
    # eta with the spin offset removed, then the offset from S = sum eta x kappa
    rel = dx - tau[:, None] * u[None, :]
    eta0 = -(rel * np.array([1.0, -1.0, -1.0, -1.0])) @ legs
    S0 = np.sum(np.cross(eta0, kappa), axis=0)
    K = np.sum(kappa, axis=0)
    scale = Mc * (1.0 + h0)
    A = (1.0 - h @ K / scale) * np.eye(3) + np.outer(h, K) / scale
    S = np.linalg.solve(A, S0)
    eta = eta0 - np.cross(S, h) / scale
    return WignerCoordinates(frozen(tau), frozen(eta), frozen(kappa), frozen(E))


# ---------------------------------------------------------------------------
# Fixed coordinate-time snapshots
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedTimeSnapshot:
    """Particles collected on the hyper-plane ``x^0 = const``."""

    x0: float
    tau: np.ndarray
    x: np.ndarray
    p: np.ndarray


def free_fixed_time_tau(eta0: np.ndarray, kappa: np.ndarray, energies: np.ndarray,
                        j: JacobiData, Y0_time: float, x0: float) -> np.ndarray:
    """Closed-form ``tau_i`` with ``x^0_i(tau_i) = x0`` for free motion.

    The time component of a free world-line is linear in ``tau`` with slope
    ``h0 + h.kappa_i/E_i``; the slope reduces to ``h0`` when ``h`` is
    orthogonal to the particle momentum.
    """
    eta0 = np.asarray(eta0, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    E = np.asarray(energies, dtype=float)
    slope = j.h0 + kappa @ j.h / E
    return (x0 - Y0_time - eta0 @ j.h) / slope


def resample_at_fixed_time(traj: Sequence[WorldlineSample], x0: float, xtol: float = 1e-12) -> FixedTimeSnapshot:
    """Collect every particle at coordinate time ``x0``.

    ``x^0_i(tau)`` is interpolated with a cubic spline through the supplied
    samples and the root is found with Brent's bracketed method; position
    and momentum are then read from splines at the per-particle ``tau_i``.
    """
    if len(traj) < 4:
        raise ValidationError("at least four trajectory samples are needed for cubic interpolation")
    taus = np.array([w.tau for w in traj])
    if np.any(np.diff(taus) <= 0):
        raise ValidationError("trajectory samples must be strictly increasing in tau")
    X = np.stack([w.x for w in traj])  # (T, N, 4)
    P = np.stack([w.p for w in traj])
    n = X.shape[1]
    xs = CubicSpline(taus, X, axis=0)
    ps = CubicSpline(taus, P, axis=0)
    tau_i = np.empty(n)
    for i in range(n):
        g = lambda t, i=i: float(xs(t)[i, 0]) - x0
        lo, hi = g(taus[0]), g(taus[-1])
        if lo * hi > 0:
            raise OutOfRangeError(f"x0={x0} not bracketed for particle {i}")
        tau_i[i] = brentq(g, taus[0], taus[-1], xtol=xtol, rtol=4 * np.finfo(float).eps)
    x = np.array([xs(t)[i] for i, t in enumerate(tau_i)])
    p = np.array([ps(t)[i] for i, t in enumerate(tau_i)])
    return FixedTimeSnapshot(float(x0), frozen(tau_i), frozen(x), frozen(p))


# ---------------------------------------------------------------------------
# Wigner rotations
# ---------------------------------------------------------------------------


def check_lorentz(Lam: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    Lam = np.asarray(Lam, dtype=float)
    if Lam.shape != (4, 4):
        raise ValidationError("Lorentz matrix must be 4x4")
    if np.max(np.abs(Lam.T @ METRIC @ Lam - METRIC)) > tol * max(1.0, np.max(np.abs(Lam)) ** 2):
        raise ValidationError("matrix does not preserve the Minkowski metric")
    if Lam[0, 0] < 1.0 - tol or np.linalg.det(Lam) < 0:
        raise ValidationError("Lorentz matrix must be proper and orthochronous")
    return Lam


def boosted_rapidity(Lam: np.ndarray, h: np.ndarray) -> np.ndarray:
    u = np.concatenate([[h0_of(h)], h])
    return (Lam @ u)[1:]


def wigner_rotation(Lam: np.ndarray, h: Sequence[float]) -> np.ndarray:
    """Rotation ``L(h')^-1 Lam L(h)`` induced on Wigner 3-vectors."""
    Lam = check_lorentz(Lam)
    h = as_vector3(h, "h")
    h_new = boosted_rapidity(Lam, h)
    W = METRIC @ boost_matrix(h_new).T @ METRIC @ Lam @ boost_matrix(h)
    R = W[1:, 1:]
    # re-orthonormalize away rounding (polar factor)
    U, _, Vt = np.linalg.svd(R)
    return U @ Vt


def rotation_lorentz(R: np.ndarray) -> np.ndarray:
    """Embed a 3x3 rotation as a Lorentz matrix."""
    out = np.eye(4)
    out[1:, 1:] = np.asarray(R, dtype=float)
    return out


def pure_boost(v: Sequence[float]) -> np.ndarray:
    """Lorentz boost with spatial rapidity-vector ``v`` (``u = (sqrt(1+v.v); v)``)."""
    return boost_matrix(as_vector3(v, "v"))
