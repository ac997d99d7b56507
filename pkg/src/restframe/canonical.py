"""Collective and relative canonical variables and the internal Poincare generators."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._base import ValidationError, as_particles, frozen
from .models import ModelSpec, energies

# A state is tagged rest-frame reduced when both residuals fall below this.
REST_FRAME_TOL = 1e-9


@dataclass(frozen=True)
class WignerPhaseState:
    """Per-particle Wigner 3-vectors ``eta`` (length) and ``kappa`` (momentum) at ``tau``."""

    tau: float
    eta: np.ndarray
    kappa: np.ndarray

    def __post_init__(self) -> None:
        eta = as_particles(self.eta, "eta")
        kappa = as_particles(self.kappa, "kappa", eta.shape[0])
        object.__setattr__(self, "eta", frozen(eta))
        object.__setattr__(self, "kappa", frozen(kappa))
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def n(self) -> int:
        return int(self.eta.shape[0])

    def to_array(self) -> np.ndarray:
        """Flat phase-space vector ``(eta.ravel(), kappa.ravel())``."""
        return np.concatenate([self.eta.ravel(), self.kappa.ravel()])

    @classmethod
    def from_array(cls, tau: float, y: np.ndarray) -> "WignerPhaseState":
        y = np.asarray(y, dtype=float)
        n = y.size // 6
        return cls(tau, y[: 3 * n].reshape(n, 3), y[3 * n :].reshape(n, 3))

    def rotated(self, R: np.ndarray) -> "WignerPhaseState":
        R = np.asarray(R, dtype=float)
        return WignerPhaseState(self.tau, self.eta @ R.T, self.kappa @ R.T)


@dataclass(frozen=True)
class RelativeState:
    """Relative variables ``rho`` and ``pi`` with shape (N-1, 3)."""

    tau: float
    rho: np.ndarray
    pi: np.ndarray

    def __post_init__(self) -> None:
        rho = np.asarray(self.rho, dtype=float).reshape(-1, 3)
        pi = np.asarray(self.pi, dtype=float).reshape(-1, 3)
        if rho.shape != pi.shape:
            raise ValidationError("rho and pi must have the same shape")
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(pi))):
            raise ValidationError("relative variables must be finite")
        object.__setattr__(self, "rho", frozen(rho))
        object.__setattr__(self, "pi", frozen(pi))
        object.__setattr__(self, "tau", float(self.tau))


@dataclass(frozen=True)
class InternalGenerators:
    """Internal generators: invariant mass ``Mc`` and the 3-vectors ``P``, ``S``, ``K``."""

    Mc: float
    P: np.ndarray
    S: np.ndarray
    K: np.ndarray


@dataclass(frozen=True)
class SeparationMatrix:
    """Coefficients ``gamma`` and ``Gamma`` (shape (N-1, N)) of the relative variables."""

    masses: np.ndarray
    gamma: np.ndarray
    Gamma: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return int(self.masses.size)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    def identity_residuals(self) -> dict[str, float]:
        """Largest violation of each canonicity identity."""
        n = self.n
        g, G, m = self.gamma, self.Gamma, self.masses
        mu = m / np.sum(m)
        eye_a = np.eye(n - 1)
        return {
            "sum_gamma": float(np.max(np.abs(g.sum(axis=1)))),
            "gamma_orthonormal": float(np.max(np.abs(g @ g.T - eye_a))),
            "gamma_complete": float(np.max(np.abs(g.T @ g - (np.eye(n) - 1.0 / n)))),
            "Gamma_definition": float(np.max(np.abs(G - (g - (g @ mu)[:, None])))),
            "Gamma_mass_weighted": float(np.max(np.abs(G @ mu))),
            "gamma_Gamma_dual": float(np.max(np.abs(g @ G.T - eye_a))),
        }


def _gram_schmidt_gamma(n: int) -> np.ndarray:
    rows = []
    for a in range(n - 1):
        v = -np.full(n, 1.0 / n)
        v[a] += 1.0
        for r in rows:
            v = v - (v @ r) * r
        rows.append(v / np.linalg.norm(v))
    return np.array(rows).reshape(n - 1, n)


def build_separation_matrix(masses: Sequence[float], gamma: np.ndarray | None = None,
                            tol: float = 1e-12) -> SeparationMatrix:
    """Separation coefficients for ``masses``.

    By default ``gamma`` comes from Gram-Schmidt on ``e_a = (delta_ai - 1/N)``.
    Any other valid choice (for instance ``Q @ gamma`` with ``Q`` orthogonal)
    may be passed and is checked against the canonicity identities.
    """
    m = np.atleast_1d(np.asarray(masses, dtype=float))
    if m.ndim != 1 or m.size < 2:
        raise ValidationError("at least two particles are required")
    if np.any(~np.isfinite(m)) or np.any(m <= 0):
        raise ValidationError("masses must be positive")
    n = m.size
    g = _gram_schmidt_gamma(n) if gamma is None else np.asarray(gamma, dtype=float)
    if g.shape != (n - 1, n):
        raise ValidationError(f"gamma must have shape {(n - 1, n)}")
    mu = m / np.sum(m)
    G = g - (g @ mu)[:, None]
    sep = SeparationMatrix(frozen(m), frozen(g), frozen(G))
    worst = max(sep.identity_residuals().values())
    if worst > tol:
        raise ValidationError(f"gamma violates the canonicity identities (max residual {worst:.2e})")
    return sep


def to_relative(s: WignerPhaseState, sep: SeparationMatrix) -> tuple[np.ndarray, np.ndarray, RelativeState]:
    """Return ``(eta_plus, kappa_plus, RelativeState)``."""
    if s.n != sep.n:
        raise ValidationError(f"state has {s.n} particles, separation matrix {sep.n}")
    n = sep.n
    eta_plus = (sep.masses / sep.total_mass) @ s.eta
    kappa_plus = s.kappa.sum(axis=0)
    rho = np.sqrt(n) * (sep.gamma @ s.eta)
    pi = (sep.Gamma @ s.kappa) / np.sqrt(n)
    return eta_plus, kappa_plus, RelativeState(s.tau, rho, pi)


def from_relative(eta_plus: Sequence[float], kappa_plus: Sequence[float], r: RelativeState,
                  sep: SeparationMatrix) -> WignerPhaseState:
    """Inverse of :func:`to_relative`."""
    n = sep.n
    if r.rho.shape[0] != n - 1:
        raise ValidationError(f"relative state must hold {n - 1} vectors")
    eta_plus = np.asarray(eta_plus, dtype=float)
    kappa_plus = np.asarray(kappa_plus, dtype=float)
    eta = eta_plus[None, :] + (sep.Gamma.T @ r.rho) / np.sqrt(n)
    kappa = (sep.masses / sep.total_mass)[:, None] * kappa_plus[None, :] + np.sqrt(n) * (sep.gamma.T @ r.pi)
    return WignerPhaseState(r.tau, eta, kappa)


def two_body_relative(s: WignerPhaseState, masses: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Two-body ``(eta_1 - eta_2, (m_2 kappa_1 - m_1 kappa_2)/m)`` computed directly."""
    m1, m2 = (float(x) for x in masses)
    if s.n != 2:
        raise ValidationError("two_body_relative needs exactly two particles")
    rho = s.eta[0] - s.eta[1]
    pi = (m2 * s.kappa[0] - m1 * s.kappa[1]) / (m1 + m2)
    return rho, pi


def internal_generators(s: WignerPhaseState, model: ModelSpec) -> InternalGenerators:
    """``Mc = sum E_i``, ``P = sum kappa_i``, ``S = sum eta_i x kappa_i``, ``K = -sum eta_i E_i``."""
    E = energies(s.eta, s.kappa, model)
    return InternalGenerators(
        Mc=float(np.sum(E)),
        P=frozen(s.kappa.sum(axis=0)),
        S=frozen(np.sum(np.cross(s.eta, s.kappa), axis=0)),
        K=frozen(-(E @ s.eta)),
    )


def solve_internal_com(r: RelativeState, sep: SeparationMatrix, model: ModelSpec) -> np.ndarray:
    """``eta_plus`` that makes the internal boost vanish at ``kappa_plus = 0``.

    For the supported models the energies depend on positions only through
    differences, so they are evaluated at ``eta_plus = 0`` and the condition
    ``sum_i eta_i E_i = 0`` is linear in ``eta_plus``.
    """
    if model.n != sep.n:
        raise ValidationError("model and separation matrix disagree on N")
    probe = from_relative(np.zeros(3), np.zeros(3), r, sep)
    E = energies(probe.eta, probe.kappa, model)
    Mc = float(np.sum(E))
    weights = sep.Gamma @ E / Mc
    return -(weights @ r.rho) / np.sqrt(sep.n)


def rest_frame_state(r: RelativeState, sep: SeparationMatrix, model: ModelSpec) -> WignerPhaseState:
    """Full state with ``P = 0`` and ``K = 0`` built from relative variables."""
    eta_plus = solve_internal_com(r, sep, model)
    return from_relative(eta_plus, np.zeros(3), r, sep)


def constraint_residuals(s: WignerPhaseState, model: ModelSpec) -> tuple[float, float]:
    """``(|P|, |K|/Mc)``."""
    gen = internal_generators(s, model)
    return float(np.linalg.norm(gen.P)), float(np.linalg.norm(gen.K) / gen.Mc)


def is_rest_frame(s: WignerPhaseState, model: ModelSpec, tol: float = REST_FRAME_TOL) -> bool:
    resP, resK = constraint_residuals(s, model)
    return resP < tol and resK < tol
