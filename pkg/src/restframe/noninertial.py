"""Non-inertial rest frames: relativistic embeddings, Galilei frames and their ensembles.

A relativistic non-inertial frame is the embedding
``z(tau, sigma) = (tau + g(tau, sigma), sigma + g_vec(tau, sigma))`` of
curved instantaneous 3-spaces, with ``g`` and ``g_vec`` vanishing at the
origin and at spatial infinity.  Particles sit at ``sigma = eta_i`` and
carry covariant momenta ``kappa_i``; coordinates are in length units so
the light cone has unit slope.

A Galilei frame is the time-dependent map ``x = A(t, sigma)`` of Euclidean
space onto itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import rng as _rng
from ._base import BandwidthError, ModelDomainError, NumericError, ValidationError, as_particles, check_positive, frozen
from .canonical import (
    InternalGenerators,
    RelativeState,
    WignerPhaseState,
    build_separation_matrix,
    internal_generators,
    solve_internal_com,
)
from .ensembles import (
    EnsembleSpec,
    PartitionEstimate,
    _uniform_ball,
    ball_volume,
    relative_mass_matrix,
    silverman_bandwidth,
)
from .frames import METRIC, LEVI_CIVITA
from .models import ModelSpec


def _cross_matrix(n: np.ndarray) -> np.ndarray:
    return -np.einsum("ijk,k->ij", LEVI_CIVITA, n)


def _rotation(axis: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Rotation matrices about unit ``axis`` by angles ``theta`` (any shape)."""
    K = _cross_matrix(axis)
    th = np.asarray(theta, dtype=float)[..., None, None]
    return np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * (K @ K)


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LapseBump:
    """``g = A s(tau) q exp(-q)`` with ``q = |sigma|^2 / w^2`` and ``s = cos(Omega tau)``."""

    amplitude: float
    width: float
    omega: float = 0.0

    def evaluate(self, tau: float, sigma: np.ndarray):
        w2 = self.width**2
        q = np.sum(sigma * sigma, axis=-1) / w2
        bump = q * np.exp(-q)
        s = math.cos(self.omega * tau)
        sdot = -self.omega * math.sin(self.omega * tau)
        g = self.amplitude * s * bump
        gdot = self.amplitude * sdot * bump
        grad = (self.amplitude * s * (1 - q) * np.exp(-q) * 2.0 / w2)[..., None] * sigma
        return g, gdot, grad

    def scaled(self, eps: float) -> "LapseBump":
        return replace(self, amplitude=self.amplitude * eps)


@dataclass(frozen=True)
class ClockProfile:
    """Time reparametrization ``g = f(tau) - tau`` with polynomial ``f`` (pure linear acceleration)."""

    coefficients: tuple[float, ...] = (0.0, 1.0)

    def evaluate(self, tau: float, sigma: np.ndarray):
        c = np.asarray(self.coefficients, dtype=float)
        f = np.polynomial.polynomial.polyval(tau, c)
        fdot = np.polynomial.polynomial.polyval(tau, np.polynomial.polynomial.polyder(c))
        shape = sigma.shape[:-1]
        return np.full(shape, f - tau), np.full(shape, fdot - 1.0), np.zeros_like(sigma)

    def scaled(self, eps: float) -> "ClockProfile":
        c = np.asarray(self.coefficients, dtype=float)
        ident = np.zeros_like(c)
        ident[1] = 1.0
        return ClockProfile(tuple(ident + eps * (c - ident)))


@dataclass(frozen=True)
class DifferentialRotation:
    """``g_vec = (R(omega tau F(|sigma|)) - 1) sigma`` about ``axis``.

    ``F = exp(-|sigma|^2 / w^2)`` by default; ``rigid=True`` uses
    ``F = 1`` everywhere, which breaks causality far from the axis.
    """

    omega: float
    width: float = 1.0
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    rigid: bool = False

    def evaluate(self, tau: float, sigma: np.ndarray):
        n = np.asarray(self.axis, dtype=float)
        n = n / np.linalg.norm(n)
        K = _cross_matrix(n)
        r2 = np.sum(sigma * sigma, axis=-1)
        if self.rigid:
            F = np.ones_like(r2)
            gradF = np.zeros_like(sigma)
        else:
            F = np.exp(-r2 / self.width**2)
            gradF = (-2.0 * F / self.width**2)[..., None] * sigma
        theta = self.omega * tau * F
        R = _rotation(n, theta)
        Rs = np.einsum("...ij,...j->...i", R, sigma)
        KRs = Rs @ K.T
        gvec = Rs - sigma
        gvec_dot = (self.omega * F)[..., None] * KRs
        # J^a_r = R^a_r + (K R sigma)^a omega tau dF/dsigma^r
        J = R + self.omega * tau * KRs[..., :, None] * gradF[..., None, :]
        return gvec, gvec_dot, J

    def scaled(self, eps: float) -> "DifferentialRotation":
        return replace(self, omega=self.omega * eps)


@dataclass(frozen=True)
class FrameJet:
    """Embedding and its first derivatives at a batch of points."""

    z: np.ndarray  # (..., 4)
    z_tau: np.ndarray  # (..., 4)
    z_r: np.ndarray  # (..., 4, 3), column r is dz/dsigma^r


@dataclass(frozen=True)
class RelNonInertialFrame:
    """Relativistic non-inertial rest frame built from a lapse and a shift profile."""

    lapse: LapseBump | ClockProfile | None = None
    shift: DifferentialRotation | None = None

    @property
    def is_flat(self) -> bool:
        return self.lapse is None and self.shift is None

    def scaled(self, eps: float) -> "RelNonInertialFrame":
        """Frame with every profile amplitude multiplied by ``eps`` (``eps = 0`` is flat)."""
        return RelNonInertialFrame(
            None if self.lapse is None else self.lapse.scaled(eps),
            None if self.shift is None else self.shift.scaled(eps),
        )

    def jet(self, tau: float, sigma: np.ndarray) -> FrameJet:
        sigma = np.asarray(sigma, dtype=float)
        shape = sigma.shape[:-1]
        if self.lapse is None:
            g = np.zeros(shape)
            gdot = np.zeros(shape)
            grad = np.zeros_like(sigma)
        else:
            g, gdot, grad = self.lapse.evaluate(tau, sigma)
        if self.shift is None:
            gvec = np.zeros_like(sigma)
            gvec_dot = np.zeros_like(sigma)
            J = np.broadcast_to(np.eye(3), shape + (3, 3)).copy()
        else:
            gvec, gvec_dot, J = self.shift.evaluate(tau, sigma)
        z = np.concatenate([(tau + g)[..., None], sigma + gvec], axis=-1)
        z_tau = np.concatenate([(1.0 + gdot)[..., None], gvec_dot], axis=-1)
        z_r = np.concatenate([grad[..., None, :], J], axis=-2)
        return FrameJet(z, z_tau, z_r)

    def embed(self, tau: float, sigma: Sequence[float]) -> np.ndarray:
        return self.jet(tau, np.asarray(sigma, dtype=float)).z


def flat_frame() -> RelNonInertialFrame:
    return RelNonInertialFrame()


def _mdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 0] - np.sum(a[..., 1:] * b[..., 1:], axis=-1)


@dataclass(frozen=True)
class Geometry:
    """Lapse ``1 + n``, shift covector ``n_r``, 3-metric ``h_rs`` and unit normal ``l``."""

    lapse: np.ndarray
    shift: np.ndarray
    h: np.ndarray
    h_inv: np.ndarray
    g_tautau: np.ndarray
    l: np.ndarray


def geometry(jet: FrameJet) -> Geometry:
    zr = jet.z_r
    # g_rs = z_r . z_s (Minkowski); h_rs = -g_rs
    h = -(np.einsum("...mr,...ms->...rs", zr[..., :1, :], zr[..., :1, :])
          - np.einsum("...mr,...ms->...rs", zr[..., 1:, :], zr[..., 1:, :]))
    g_tau_r = np.einsum("...m,...mr->...r", jet.z_tau[..., :1], zr[..., :1, :]) - np.einsum(
        "...m,...mr->...r", jet.z_tau[..., 1:], zr[..., 1:, :])
    g_tt = _mdot(jet.z_tau, jet.z_tau)
    # unit normal: lower-index generalized cross product of the three tangents
    cols = [np.delete(zr, mu, axis=-2) for mu in range(4)]
    l_lower = np.stack([(-1) ** mu * np.linalg.det(cols[mu]) for mu in range(4)], axis=-1)
    l_up = l_lower * np.array([1.0, -1.0, -1.0, -1.0])
    norm2 = _mdot(l_up, l_up)
    with np.errstate(invalid="ignore", divide="ignore"):
        l_up = l_up / np.sqrt(np.abs(norm2))[..., None]
    l_up = np.where((l_up[..., :1] < 0), -l_up, l_up)
    l_up = np.where((norm2 > 0)[..., None], l_up, np.nan)
    lapse = _mdot(jet.z_tau, l_up)
    h_inv = np.linalg.inv(h)
    return Geometry(lapse, -g_tau_r, h, h_inv, g_tt, l_up)


# ---------------------------------------------------------------------------
# Admissibility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MollerReport:
    admissible: bool
    n_points: int
    n_violations: int
    first_violation: dict | None
    min_lapse: float
    min_g_tautau: float
    min_metric_eigenvalue: float


def moller_check(frame: RelNonInertialFrame, taus: Sequence[float], points: np.ndarray) -> MollerReport:
    """Check ``1 + n > 0``, ``g_tautau > 0`` and a positive 3-metric on a grid."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    first = None
    nviol = 0
    mins = [np.inf, np.inf, np.inf]
    total = 0
    for tau in np.atleast_1d(taus):
        geo = geometry(frame.jet(float(tau), points))
        eig = np.linalg.eigvalsh(geo.h)[:, 0]
        lapse = np.nan_to_num(geo.lapse, nan=-np.inf)
        bad = ~((lapse > 0) & (geo.g_tautau > 0) & (eig > 0))
        total += points.shape[0]
        nviol += int(np.count_nonzero(bad))
        mins = [min(mins[0], float(np.min(lapse))), min(mins[1], float(np.min(geo.g_tautau))),
                min(mins[2], float(np.min(eig)))]
        if first is None and np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            reasons = []
            if not lapse[k] > 0:
                reasons.append("lapse")
            if not geo.g_tautau[k] > 0:
                reasons.append("g_tautau")
            if not eig[k] > 0:
                reasons.append("3-metric")
            first = {"tau": float(tau), "sigma": points[k].tolist(), "conditions": reasons}
    return MollerReport(nviol == 0, total, nviol, first, mins[0], mins[1], mins[2])


# ---------------------------------------------------------------------------
# Relativistic generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NonInertialGenerators:
    """Asymptotic generators and the effective Hamiltonian ``calM c`` (momentum units)."""

    Mc: float
    P: np.ndarray
    S: np.ndarray
    K: np.ndarray
    calMc: float
    calMc_lapse_form: float
    p: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)


def _particle_momenta(frame, tau, eta, kappa, masses, c):
    """Four-momenta, positions and geometric data of every particle (batched)."""
    jet = frame.jet(tau, eta)
    geo = geometry(jet)
    if not (np.all(geo.lapse > 0) and np.all(geo.g_tautau > 0)):
        raise ModelDomainError("frame is not admissible at a particle position")
    hk = np.einsum("...rs,...s->...r", geo.h_inv, kappa)
    rad = (masses * c) ** 2 + np.sum(hk * kappa, axis=-1)
    root = np.sqrt(rad)
    p = root[..., None] * geo.l + np.einsum("...mr,...r->...m", jet.z_r, hk)
    return p, jet, geo, root


def _generator_sums(p, jet, geo, root, kappa, tau):
    x = jet.z
    Mc = np.sum(p[..., 0], axis=-1)
    P = np.sum(p[..., 1:], axis=-2)
    rel = x[..., 1:]
    S = np.sum(np.cross(rel, p[..., 1:]), axis=-2)
    K = np.sum((x[..., :1] - tau) * p[..., 1:] - rel * p[..., :1], axis=-2)
    calMc = np.sum(_mdot(p, jet.z_tau), axis=-1)
    # lapse/shift form: (1 + n) root - N^r kappa_r with N^r = h^{rs} N_s, N_s = -g_tau s
    Nvec = np.einsum("...rs,...s->...r", geo.h_inv, geo.shift)
    lapse_form = np.sum(geo.lapse * root - np.sum(Nvec * kappa, axis=-1), axis=-1)
    return Mc, P, S, K, calMc, lapse_form


def rel_noninertial_generators(frame: RelNonInertialFrame, state: WignerPhaseState,
                               model: ModelSpec) -> NonInertialGenerators:
    """Generators of a free gas whose particles sit at ``sigma = eta_i`` in ``frame``."""
    if model.kind != "free":
        raise ValidationError("non-inertial generators are implemented for free particles only")
    if state.n != model.n:
        raise ValidationError("state and model disagree on N")
    p, jet, geo, root = _particle_momenta(frame, state.tau, state.eta, state.kappa, model.masses, model.c)
    Mc, P, S, K, calMc, lapse_form = _generator_sums(p, jet, geo, root, state.kappa, state.tau)
    return NonInertialGenerators(float(Mc), frozen(P), frozen(S), frozen(K), float(calMc), float(lapse_form),
                                 frozen(p), frozen(jet.z))


# ---------------------------------------------------------------------------
# Galilei frames
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GalileiFrame:
    """Time-dependent map ``x = A(t, sigma)``.

    ``kind="rigid"``: ``A = x_o(t) + R(theta(t)) sigma`` with polynomial
    ``x_o`` (rows are coefficients of ``t^k``) and polynomial angle about a
    fixed axis.  ``kind="general"``: ``A`` is a user callable and
    derivatives are taken by fourth-order central differences.
    """

    kind: str = "rigid"
    origin: np.ndarray = field(default_factory=lambda: np.zeros((1, 3)))
    angle: tuple[float, ...] = (0.0,)
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    A: Callable[[float, np.ndarray], np.ndarray] | None = None
    fd_step: float = 1e-5

    def __post_init__(self) -> None:
        if self.kind not in ("rigid", "general"):
            raise ValidationError("kind must be 'rigid' or 'general'")
        if self.kind == "general" and self.A is None:
            raise ValidationError("a general frame needs the map A(t, sigma)")
        o = np.atleast_2d(np.asarray(self.origin, dtype=float))
        if o.shape[1] != 3:
            raise ValidationError("origin coefficients must have shape (k, 3)")
        object.__setattr__(self, "origin", frozen(o))

    @classmethod
    def rotating(cls, omega: float, axis=(0.0, 0.0, 1.0)) -> "GalileiFrame":
        return cls("rigid", np.zeros((1, 3)), (0.0, float(omega)), tuple(axis))

    @classmethod
    def identity(cls) -> "GalileiFrame":
        return cls()

    def _axis(self):
        n = np.asarray(self.axis, dtype=float)
        return n / np.linalg.norm(n)

    def _rigid_parts(self, t):
        P = np.polynomial.polynomial
        a = np.asarray(self.angle, dtype=float)
        theta = P.polyval(t, a)
        theta_dot = P.polyval(t, P.polyder(a)) if a.size > 1 else 0.0
        xo = np.array([P.polyval(t, self.origin[:, k]) for k in range(3)])
        xo_dot = (np.array([P.polyval(t, P.polyder(self.origin[:, k])) for k in range(3)])
                  if self.origin.shape[0] > 1 else np.zeros(3))
        n = self._axis()
        R = _rotation(n, theta)
        Omega = theta_dot * _cross_matrix(n)  # R^T R_dot for a fixed axis
        return xo, xo_dot, R, Omega

    def map(self, t: float, sigma: np.ndarray) -> np.ndarray:
        sigma = np.asarray(sigma, dtype=float)
        if self.kind == "rigid":
            xo, _, R, _ = self._rigid_parts(t)
            return xo + sigma @ R.T
        return np.asarray(self.A(t, sigma), dtype=float)

    def jacobian(self, t: float, sigma: np.ndarray) -> np.ndarray:
        """``J[..., a, r] = dA^a/dsigma^r``."""
        sigma = np.asarray(sigma, dtype=float)
        if self.kind == "rigid":
            _, _, R, _ = self._rigid_parts(t)
            return np.broadcast_to(R, sigma.shape[:-1] + (3, 3)).copy()
        cols = []
        for r in range(3):
            e = np.zeros(3)
            h = self.fd_step
            e[r] = h
            d = (-self.map(t, sigma + 2 * e) + 8 * self.map(t, sigma + e) - 8 * self.map(t, sigma - e)
                 + self.map(t, sigma - 2 * e)) / (12 * h)
            cols.append(d)
        return np.stack(cols, axis=-1)

    def inverse_jacobian(self, t: float, sigma: np.ndarray) -> np.ndarray:
        J = self.jacobian(t, sigma)
        if np.any(np.linalg.det(J) <= 0):
            raise ModelDomainError("frame Jacobian is singular or orientation-reversing")
        return np.linalg.inv(J)

    def velocity(self, t: float, sigma: np.ndarray) -> np.ndarray:
        """``dA/dt`` at fixed ``sigma``."""
        sigma = np.asarray(sigma, dtype=float)
        if self.kind == "rigid":
            xo, xo_dot, R, Omega = self._rigid_parts(t)
            return xo_dot + sigma @ (R @ Omega).T
        h = self.fd_step * max(1.0, abs(t))
        return (-self.map(t + 2 * h, sigma) + 8 * self.map(t + h, sigma) - 8 * self.map(t - h, sigma)
                + self.map(t - 2 * h, sigma)) / (12 * h)


@dataclass(frozen=True)
class GalileiGenerators:
    E: float
    P: np.ndarray
    J: np.ndarray
    K: np.ndarray
    calM: float


def galilei_generators(frame: GalileiFrame, eta: np.ndarray, p: np.ndarray, t: float,
                       masses: Sequence[float]) -> GalileiGenerators:
    """Galilei generators of free particles at ``sigma = eta_i`` with covariant momenta ``p_i``."""
    eta = as_particles(eta, "eta")
    p = as_particles(p, "p", eta.shape[0])
    m = np.asarray(masses, dtype=float)
    Jinv = frame.inverse_jacobian(t, eta)
    x = frame.map(t, eta)
    phys = np.einsum("nra,nr->na", Jinv, p)  # p_a = Jinv^r_a p_r
    E = float(np.sum(np.sum(phys * phys, axis=1) / (2 * m)))
    P = phys.sum(axis=0)
    L = np.sum(np.cross(x, phys), axis=0)
    K = t * P - (m @ x)
    calM = E - float(np.sum(phys * frame.velocity(t, eta)))
    return GalileiGenerators(E, frozen(P), frozen(L), frozen(K), calM)


def galilei_rhs(frame: GalileiFrame, t: float, eta: np.ndarray, p: np.ndarray, masses: np.ndarray):
    """Hamilton equations of ``calM`` for free particles (analytic for rigid frames)."""
    m = np.asarray(masses, dtype=float)[:, None]
    if frame.kind == "rigid":
        _, xo_dot, R, Omega = frame._rigid_parts(t)
        d_eta = p / m - xo_dot @ R - eta @ Omega.T
        d_p = -(p @ Omega.T)
        return d_eta, d_p
    n = eta.shape[0]
    y = np.concatenate([eta.ravel(), p.ravel()])
    f = lambda z: galilei_generators(frame, z[: 3 * n].reshape(n, 3), z[3 * n :].reshape(n, 3), t,
                                     m[:, 0]).calM
    grad = np.empty_like(y)
    for k in range(y.size):
        h = frame.fd_step * max(1.0, abs(y[k]))
        e = np.zeros_like(y)
        e[k] = h
        grad[k] = (-f(y + 2 * e) + 8 * f(y + e) - 8 * f(y - e) + f(y - 2 * e)) / (12 * h)
    return grad[3 * n :].reshape(n, 3), -grad[: 3 * n].reshape(n, 3)


@dataclass(frozen=True)
class GalileiTrajectory:
    t: np.ndarray
    eta: np.ndarray
    p: np.ndarray
    generators: list[GalileiGenerators]

    def drift(self) -> dict[str, float]:
        g0 = self.generators[0]
        out = {"E": 0.0, "P": 0.0, "J": 0.0, "K": 0.0}
        for g in self.generators[1:]:
            out["E"] = max(out["E"], abs(g.E - g0.E))
            out["P"] = max(out["P"], float(np.max(np.abs(g.P - g0.P))))
            out["J"] = max(out["J"], float(np.max(np.abs(g.J - g0.J))))
            out["K"] = max(out["K"], float(np.max(np.abs(g.K - g0.K))))
        return out


def integrate_galilei(frame: GalileiFrame, eta0: np.ndarray, p0: np.ndarray, masses: Sequence[float],
                      t_span: tuple[float, float], tol: float = 1e-10, n_out: int = 101) -> GalileiTrajectory:
    """Integrate the ``calM`` flow and record the generators along it."""
    eta0 = as_particles(eta0, "eta0")
    p0 = as_particles(p0, "p0", eta0.shape[0])
    m = np.asarray(masses, dtype=float)
    n = eta0.shape[0]

    def f(t, y):
        de, dp = galilei_rhs(frame, t, y[: 3 * n].reshape(n, 3), y[3 * n :].reshape(n, 3), m)
        return np.concatenate([de.ravel(), dp.ravel()])

    y0 = np.concatenate([eta0.ravel(), p0.ravel()])
    t_eval = np.linspace(t_span[0], t_span[1], n_out)
    sol = solve_ivp(f, t_span, y0, method="DOP853", rtol=tol, atol=tol, t_eval=t_eval)
    if not sol.success:
        raise NumericError(f"integration failed: {sol.message}")
    etas = sol.y[: 3 * n].T.reshape(-1, n, 3)
    ps = sol.y[3 * n :].T.reshape(-1, n, 3)
    gens = [galilei_generators(frame, e, p, t, m) for t, e, p in zip(sol.t, etas, ps)]
    return GalileiTrajectory(frozen(sol.t), frozen(etas), frozen(ps), gens)


# ---------------------------------------------------------------------------
# Non-inertial partition functions
# ---------------------------------------------------------------------------

# Kernel widths for the momentum and center-of-mass restrictions, as fractions
# of the typical particle momentum and of the container radius.
MOMENTUM_KERNEL_FRACTION = 0.05
BOOST_KERNEL_FRACTION = 0.05
CHUNK = 1 << 15


def _gauss(u: np.ndarray, b: np.ndarray | float) -> np.ndarray:
    """Product of normalized Gaussian kernels over the last axis."""
    b = np.broadcast_to(np.asarray(b, dtype=float), u.shape[-1:])
    z = u / b
    return np.exp(-0.5 * np.sum(z * z, axis=-1)) / float(np.prod(np.sqrt(2 * np.pi) * b))


@dataclass
class _NIContext:
    spec: EnsembleSpec
    sep: object
    pi_radius: np.ndarray
    rho_radius: np.ndarray
    volume: float
    bP: float
    bK: float


def _ni_context(spec: EnsembleSpec, margin: float) -> _NIContext:
    if spec.regime != "rel-restframe":
        raise ValidationError("the relativistic non-inertial ensemble needs the rel-restframe regime")
    if spec.model.kind != "free":
        raise ValidationError("non-inertial ensembles are implemented for free particles only")
    if spec.N < 2:
        raise ValidationError("N >= 2 required")
    m, c = spec.model.masses, spec.model.c
    sep = build_separation_matrix(m)
    rest = float(np.sum(m)) * c * c
    E_max = rest + margin * (spec.E - rest)
    kmax = np.array([math.sqrt(max((E_max / c - (np.sum(m) - mi) * c) ** 2 - (mi * c) ** 2, 0.0)) for mi in m])
    pi_radius = np.abs(sep.Gamma) @ kmax / np.sqrt(spec.N)
    if spec.volume == "relative":
        rho_radius = np.full(spec.N - 1, 2 * spec.R)
    else:
        rho_radius = np.sqrt(spec.N) * np.abs(sep.gamma).sum(axis=1) * spec.R
    vol = float(np.prod([ball_volume(3, r) for r in pi_radius]) * np.prod([ball_volume(3, r) for r in rho_radius]))
    k_typ = float(np.mean(kmax)) / math.sqrt(3.0)
    return _NIContext(spec, sep, pi_radius, rho_radius, vol,
                      MOMENTUM_KERNEL_FRACTION * k_typ, BOOST_KERNEL_FRACTION * spec.R)


def _ni_batch(ctx: _NIContext, frame: RelNonInertialFrame, tau: float, gen: np.random.Generator, size: int,
              iterations: int = 3):
    spec, sep = ctx.spec, ctx.sep
    N = spec.N
    m, c = spec.model.masses, spec.model.c
    mu = m / np.sum(m)
    pi = _uniform_ball(gen, (size, N - 1)) * ctx.pi_radius[None, :, None]
    rho = _uniform_ball(gen, (size, N - 1)) * ctx.rho_radius[None, :, None]
    k_rel = np.sqrt(N) * np.einsum("ai,naj->nij", sep.gamma, pi)
    e_rel = np.einsum("ai,naj->nij", sep.Gamma, rho) / np.sqrt(N)

    def build(eta_plus, kappa_plus):
        eta = eta_plus[:, None, :] + e_rel
        kappa = mu[None, :, None] * kappa_plus[:, None, :] + k_rel
        return eta, kappa

    Ei = np.sqrt((m * c) ** 2 + np.sum(k_rel**2, axis=-1))
    w = np.einsum("ai,ni->na", sep.Gamma, Ei) / np.sum(Ei, axis=-1, keepdims=True)
    x_c = np.concatenate([np.zeros((size, 3)), -np.einsum("na,naj->nj", w, rho) / np.sqrt(N)], axis=1)
    scale = np.array([ctx.bP] * 3 + [ctx.bK] * 3)

    def evaluate(x):
        eta, kappa = build(x[:, 3:], x[:, :3])
        jet = frame.jet(tau, eta)
        geo = geometry(jet)
        admissible = np.all((geo.lapse > 0) & (geo.g_tautau > 0), axis=-1)
        hk = np.einsum("...rs,...s->...r", geo.h_inv, kappa)
        rad = (m * c) ** 2 + np.sum(hk * kappa, axis=-1)
        root = np.sqrt(np.where(rad > 0, rad, np.nan))
        p = root[..., None] * geo.l + np.einsum("...mr,...r->...m", jet.z_r, hk)
        _, P, S, K, calMc, _ = _generator_sums(p, jet, geo, root, kappa, tau)
        resid = np.concatenate([P, K / calMc[:, None]], axis=1)
        ok = admissible & np.all(np.isfinite(resid), axis=1)
        return eta, calMc, S, resid, ok

    def jacobian(x, r0):
        # forward differences of the (momentum, boost) restrictions
        cols = []
        for k in range(6):
            e = np.zeros(6)
            e[k] = 1e-5 * scale[k]
            cols.append((evaluate(x + e)[3] - r0) / e[k])
        Jn = np.stack(cols, axis=-1)
        valid = np.all(np.isfinite(Jn), axis=(1, 2)) & (np.abs(np.linalg.det(Jn)) > 1e-12)
        return np.where(valid[:, None, None], Jn, np.eye(6)), valid

    # proposal: Gaussian in the linearized restrictions around their root,
    # located by chord iterations with the Jacobian at the flat-space guess
    r0 = evaluate(x_c)[3]
    Jn, valid = jacobian(x_c, r0)
    if not frame.is_flat:
        for _ in range(iterations):
            step = np.linalg.solve(Jn, np.nan_to_num(r0)[..., None])[..., 0]
            x_c = x_c - np.where(valid[:, None], step, 0.0)
            r0 = evaluate(x_c)[3]
        Jn, valid = jacobian(x_c, r0)
    u = scale * gen.standard_normal((size, 6))
    x = x_c + np.linalg.solve(Jn, u[..., None])[..., 0]
    q = _gauss(u, scale) * np.abs(np.linalg.det(Jn))
    eta, calMc, S, resid, ok = evaluate(x)
    chi = np.ones(size)
    if spec.volume == "particle":
        chi = np.all(np.linalg.norm(eta, axis=-1) <= spec.R, axis=-1).astype(float)
    good = valid & ok & (chi > 0)
    P = resid[:, :3]
    K_over = resid[:, 3:]
    return {"H": calMc * c, "P": P, "S": S, "K_over": K_over, "q": q, "chi": chi * good}


def noninertial_partition(spec: EnsembleSpec, frame: RelNonInertialFrame, n_samples: int, seed: int = 0,
                          tau: float = 0.0, bandwidth: float | None = None, spin_bandwidth=None,
                          margin: float = 1.5, threads: int | None = None) -> PartitionEstimate:
    """Kernel-smoothed Monte-Carlo estimate of the non-inertial partition function.

    Every restriction (energy through the effective Hamiltonian, momentum,
    center of mass and optionally spin) is a Gaussian kernel.  Relative
    variables are drawn uniformly; the collective ones are drawn from
    Gaussians of the kernel widths centered where the momentum and
    center-of-mass restrictions hold, and the estimate is reweighted by
    that proposal density.
    """
    ctx = _ni_context(spec, margin)
    n_samples = int(n_samples)
    pilot = _ni_batch(ctx, frame, tau, _rng.generator(seed, "mc-pilot", 0), 1 << 13)
    keep = pilot["chi"] > 0
    if np.count_nonzero(keep) < 10:
        raise BandwidthError("pilot sample found no admissible configurations")
    bE = float(bandwidth) if bandwidth is not None else silverman_bandwidth(pilot["H"][keep], n_samples)
    bS = None
    if spec.extended:
        if spin_bandwidth is not None:
            bS = np.asarray(spin_bandwidth, dtype=float) * np.ones(3)
        else:
            sd = np.std(pilot["S"][keep], axis=0, ddof=1)
            bS = sd * (4.0 / (6 * n_samples)) ** (1.0 / 8)

    def run(k, size):
        b = _ni_batch(ctx, frame, tau, _rng.generator(seed, "mc", k), size)
        w = b["chi"] * _gauss((b["H"] - spec.E)[:, None], bE) * _gauss(b["P"], ctx.bP) * _gauss(b["K_over"], ctx.bK)
        if spec.extended:
            w = w * _gauss(b["S"] - spec.S[None, :], bS)
        w = np.where(b["chi"] > 0, w / b["q"], 0.0)
        near = int(np.count_nonzero((np.abs(b["H"] - spec.E) < bE) & (b["chi"] > 0)))
        return math.fsum(w), math.fsum(w * w), near

    parts = _rng.map_chunks(run, _rng.chunk_sizes(n_samples, CHUNK), threads)
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    near = sum(p[2] for p in parts)
    if near < 20:
        raise BandwidthError(f"only {near} samples near the energy shell; increase n_samples")
    norm = ctx.volume / math.factorial(spec.N)
    mean = s1 / n_samples
    var = max(s2 / n_samples - mean * mean, 0.0)
    return PartitionEstimate(norm * mean, norm * math.sqrt(var / n_samples), n_samples, "mc-kernel", bE,
                             int(seed), "mc", meta={"tau": tau, "bandwidth_P": ctx.bP, "bandwidth_K": ctx.bK,
                                                    "spin_bandwidth": None if bS is None else bS.tolist()})


def galilei_partition(spec: EnsembleSpec, frame: GalileiFrame, n_samples: int, seed: int = 0, t: float = 0.0,
                      bandwidth: float | None = None, spin_bandwidth=None,
                      threads: int | None = None) -> PartitionEstimate:
    """Non-relativistic non-inertial partition function with Galilei generators.

    Energy, momentum, boost (divided by the total mass) and optionally spin
    restrictions are Gaussian kernels; the sampling mirrors
    :func:`noninertial_partition` with the center-of-mass proposal placed
    where the Galilei boost vanishes.
    """
    if spec.regime != "nonrel-restframe":
        raise ValidationError("the Galilei ensemble needs the nonrel-restframe regime")
    if frame.kind != "rigid":
        raise ValidationError("the Galilei ensemble is implemented for rigid frames")
    m = spec.model.masses
    N = spec.N
    M = float(np.sum(m))
    mu = m / M
    sep = build_separation_matrix(m)
    A = relative_mass_matrix(sep)
    E_max = 1.5 * spec.E
    pi_radius = np.sqrt(2 * E_max * np.diag(np.linalg.inv(A)))
    rho_radius = (np.full(N - 1, 2 * spec.R) if spec.volume == "relative"
                  else np.sqrt(N) * np.abs(sep.gamma).sum(axis=1) * spec.R)
    vol = float(np.prod([ball_volume(3, r) for r in pi_radius]) * np.prod([ball_volume(3, r) for r in rho_radius]))
    bP = MOMENTUM_KERNEL_FRACTION * math.sqrt(2 * float(np.mean(m)) * spec.E / N)
    bK = BOOST_KERNEL_FRACTION * spec.R
    xo, _, R, _ = frame._rigid_parts(t)

    def batch(gen, size):
        pi = _uniform_ball(gen, (size, N - 1)) * pi_radius[None, :, None]
        rho = _uniform_ball(gen, (size, N - 1)) * rho_radius[None, :, None]
        k_rel = np.sqrt(N) * np.einsum("ai,naj->nij", sep.gamma, pi)
        e_rel = np.einsum("ai,naj->nij", sep.Gamma, rho) / np.sqrt(N)
        kp = bP * gen.standard_normal((size, 3))
        # boost K = t P - M (x_o + R eta_plus) vanishes at eta_plus = R^T (t P / M - x_o)
        P_phys = kp @ R.T
        ep_c = (t * P_phys / M - xo) @ R
        ep = ep_c + bK * gen.standard_normal((size, 3))
        q = _gauss(kp, bP) * _gauss(ep - ep_c, bK)
        eta = ep[:, None, :] + e_rel
        kappa = mu[None, :, None] * kp[:, None, :] + k_rel
        x = xo + eta @ R.T
        phys = kappa @ R.T
        E = np.sum(np.sum(phys**2, axis=-1) / (2 * m), axis=-1)
        P = phys.sum(axis=1)
        L = np.sum(np.cross(x, phys), axis=1)
        K = t * P - np.einsum("i,nij->nj", m, x)
        chi = np.ones(size)
        if spec.volume == "particle":
            chi = np.all(np.linalg.norm(eta, axis=-1) <= spec.R, axis=-1).astype(float)
        return E, P, L, K / M, q, chi

    pilot = batch(_rng.generator(seed, "mc-pilot", 0), 1 << 13)
    bE = float(bandwidth) if bandwidth is not None else silverman_bandwidth(pilot[0][pilot[5] > 0], n_samples)
    bS = None
    if spec.extended:
        bS = (np.asarray(spin_bandwidth, dtype=float) * np.ones(3) if spin_bandwidth is not None
              else np.std(pilot[2][pilot[5] > 0], axis=0, ddof=1) * (4.0 / (6 * n_samples)) ** (1.0 / 8))

    def run(k, size):
        E, P, L, Kn, q, chi = batch(_rng.generator(seed, "mc", k), size)
        w = chi * _gauss((E - spec.E)[:, None], bE) * _gauss(P, bP) * _gauss(Kn, bK) / q
        if spec.extended:
            w = w * _gauss(L - spec.S[None, :], bS)
        return math.fsum(w), math.fsum(w * w)

    parts = _rng.map_chunks(run, _rng.chunk_sizes(n_samples, CHUNK), threads)
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    norm = vol / math.factorial(N)
    mean = s1 / n_samples
    var = max(s2 / n_samples - mean * mean, 0.0)
    return PartitionEstimate(norm * mean, norm * math.sqrt(var / n_samples), int(n_samples), "mc-kernel", bE,
                             int(seed), "mc", meta={"t": t, "bandwidth_P": bP, "bandwidth_K": bK})
