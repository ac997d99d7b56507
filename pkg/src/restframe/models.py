"""Particle energies for the free model and the quadratic momentum-shift model.

The quadratic model is the image of free motion under the canonical map
``kappa_i -> kappa_i + D_i`` with ``D_i = dF/d eta_i`` and
``F = (g/2) sum_a rho_a^2 = (g/2) sum_ij (N delta_ij - 1) eta_i . eta_j``.
Hence ``D_i = g (N eta_i - sum_j eta_j)`` and every particle energy is
``E_i = sqrt(m_i^2 c^2 + |kappa_i + D_i|^2)``.  Energies are in momentum
units; multiply by ``c`` for energy units.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._base import ModelDomainError, ValidationError, check_positive, frozen

KINDS = ("free", "quadratic")

# Radicands below this fraction of m^2 c^2 are treated as unphysical.
RADICAND_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    """Hamiltonian model: ``kind``, coupling ``g``, particle ``masses`` and ``c``."""

    kind: str
    masses: np.ndarray
    g: float = 0.0
    c: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        m = np.atleast_1d(np.asarray(self.masses, dtype=float))
        if m.ndim != 1 or m.size < 1 or np.any(~np.isfinite(m)) or np.any(m <= 0):
            raise ValidationError("masses must be a non-empty sequence of positive numbers")
        object.__setattr__(self, "masses", frozen(m))
        object.__setattr__(self, "c", check_positive(self.c, "c"))
        g = float(self.g)
        if not np.isfinite(g):
            raise ValidationError("g must be finite")
        if self.kind == "free" and g != 0.0:
            raise ValidationError("the free model takes no coupling")
        object.__setattr__(self, "g", g)

    @property
    def n(self) -> int:
        return int(self.masses.size)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    def with_c(self, c: float) -> "ModelSpec":
        return ModelSpec(self.kind, self.masses, self.g, c)

    def with_g(self, g: float) -> "ModelSpec":
        return ModelSpec("free" if g == 0.0 else "quadratic", self.masses, g, self.c)


def free_model(masses: Sequence[float], c: float = 1.0) -> ModelSpec:
    return ModelSpec("free", np.asarray(masses, dtype=float), 0.0, c)


def quadratic_model(masses: Sequence[float], g: float, c: float = 1.0) -> ModelSpec:
    return ModelSpec("quadratic", np.asarray(masses, dtype=float), g, c)


def momentum_shift(eta: np.ndarray, model: ModelSpec) -> np.ndarray:
    """``D_i = dF/d eta_i`` for every particle (zeros for the free model)."""
    eta = np.asarray(eta, dtype=float)
    if model.kind == "free" or model.g == 0.0:
        return np.zeros_like(eta)
    n = eta.shape[0]
    return model.g * (n * eta - np.sum(eta, axis=0))


def interaction_potential(eta: np.ndarray) -> float:
    """``F / g = (1/2) sum_a rho_a^2`` written without the separation matrix."""
    eta = np.asarray(eta, dtype=float)
    n = eta.shape[0]
    return 0.5 * float(n * np.sum(eta * eta) - np.sum(np.sum(eta, axis=0) ** 2))


def potentials(eta: np.ndarray, kappa: np.ndarray, model: ModelSpec) -> np.ndarray:
    """``V_i = 2 kappa_i . D_i + D_i . D_i`` for every particle."""
    D = momentum_shift(eta, model)
    return 2.0 * np.sum(np.asarray(kappa) * D, axis=1) + np.sum(D * D, axis=1)


def energies(eta: np.ndarray, kappa: np.ndarray, model: ModelSpec) -> np.ndarray:
    """Particle energies ``E_i`` (momentum units)."""
    kappa = np.asarray(kappa, dtype=float)
    if kappa.shape[0] != model.n:
        raise ValidationError(f"model has {model.n} masses but state has {kappa.shape[0]} particles")
    k = kappa + momentum_shift(eta, model)
    mc2 = (model.masses * model.c) ** 2
    rad = mc2 + np.sum(k * k, axis=1)
    bad = rad <= RADICAND_FLOOR * mc2
    if np.any(bad):
        raise ModelDomainError(f"energy radicand non-positive for particles {np.flatnonzero(bad).tolist()}")
    return np.sqrt(rad)


def kinetic_excess(kappa_eff: np.ndarray, masses: np.ndarray, c: float) -> np.ndarray:
    """``(E_i - m_i c) c`` evaluated as ``c k^2 / (E_i + m_i c)`` to avoid cancellation."""
    k2 = np.sum(np.asarray(kappa_eff) ** 2, axis=1)
    mc = np.asarray(masses) * c
    return c * k2 / (np.sqrt(mc * mc + k2) + mc)
