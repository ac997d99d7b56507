"""One-particle distributions, the Juttner equilibrium and hydrodynamic moments.

Temperatures are in energy units (``k_B = 1``); momenta in momentum units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, optimize, special, stats

from . import rng as _rng
from ._base import (
    BaseEstimator,
    NumericError,
    ValidationError,
    as_particles,
    check_positive,
    frozen,
)
from .canonical import WignerPhaseState, build_separation_matrix, from_relative, to_relative, RelativeState
from .frames import METRIC, boost_matrix, check_lorentz, wigner_rotation


# ---------------------------------------------------------------------------
# Juttner distribution
# ---------------------------------------------------------------------------


def juttner_norm(m: float, T: float, c: float = 1.0) -> float:
    """``int d^3 kappa exp(-(E - m c^2)/T)`` with ``E = c sqrt(m^2 c^2 + kappa^2)``."""
    m, T, c = check_positive(m, "m"), check_positive(T, "T"), check_positive(c, "c")
    x = m * c * c / T
    return 4 * math.pi * m * m * c * T * special.kve(2, x)


def juttner_pdf(kappa, m: float, T: float, c: float = 1.0) -> np.ndarray:
    """Normalized Juttner density in momentum space (depends on ``|kappa|`` only)."""
    k = np.asarray(kappa, dtype=float)
    k2 = np.sum(k * k, axis=-1)
    return _radial_density(np.sqrt(k2), m, T, c)


def _radial_density(k, m, T, c):
    norm = juttner_norm(m, T, c)
    mc = m * c
    kinetic = c * np.asarray(k) ** 2 / (np.sqrt(mc * mc + np.asarray(k) ** 2) + mc)
    return np.exp(-kinetic / T) / norm


def juttner_speed_pdf(k, m: float, T: float, c: float = 1.0) -> np.ndarray:
    """Density of ``|kappa|``: ``4 pi k^2 f(k)``."""
    k = np.asarray(k, dtype=float)
    return 4 * np.pi * k * k * _radial_density(k, m, T, c)


def juttner_quantile_kmax(m: float, T: float, c: float = 1.0, q: float = 1 - 1e-6) -> float:
    """``|kappa|`` below which a fraction ``q`` of the Juttner mass lies."""
    cdf = JuttnerCDF(m, T, c)
    return cdf.quantile(q)


class JuttnerCDF:
    """Cumulative distribution of ``|kappa|`` tabulated by adaptive quadrature."""

    def __init__(self, m: float, T: float, c: float = 1.0, n_grid: int = 4001):
        self.m, self.T, self.c = m, T, c
        # scale of the tail: the larger of the relativistic and non-relativistic widths
        scale = max(T / c, math.sqrt(m * T))
        kmax = 60.0 * scale
        grid = np.linspace(0.0, kmax, n_grid)
        f = lambda k: float(juttner_speed_pdf(k, m, T, c))
        pieces = [integrate.quad(f, a, b, epsabs=0, epsrel=1e-12)[0] for a, b in zip(grid[:-1], grid[1:])]
        cum = np.concatenate([[0.0], np.cumsum(pieces)])
        self.total = float(cum[-1])
        self.grid = grid
        self.cum = cum / cum[-1]

    def __call__(self, k) -> np.ndarray:
        return np.interp(np.asarray(k, dtype=float), self.grid, self.cum)

    def quantile(self, q: float) -> float:
        return float(np.interp(q, self.cum, self.grid))


def juttner_mean_energy(m: float, T: float, c: float = 1.0) -> float:
    """``<E> = m c^2 (K1(x)/K2(x) + 3/x)`` with ``x = m c^2 / T``."""
    x = m * c * c / T
    return m * c * c * (special.kve(1, x) / special.kve(2, x) + 3.0 / x)


def juttner_temperature(mean_energy: float, m: float, c: float = 1.0) -> float:
    """Invert :func:`juttner_mean_energy` for ``T``."""
    rest = m * c * c
    if not mean_energy > rest:
        raise ValidationError("mean energy must exceed the rest energy")
    # <E> - mc^2 lies between 3T/2 (slow) and 3T (ultra-relativistic)
    lo = (mean_energy - rest) / 3.0
    hi = (mean_energy - rest) / 1.5
    g = lambda T: juttner_mean_energy(m, T, c) - mean_energy
    return float(optimize.brentq(g, lo * 0.999, hi * 1.001, xtol=1e-14, rtol=1e-14))


def sample_juttner(m: float, T: float, c: float = 1.0, n: int = 100_000, seed: int = 0,
                   max_rounds: int = 1000) -> np.ndarray:
    """Juttner momenta by rejection from a gamma-radius envelope.

    The proposal density of ``k = |kappa|`` is ``k^2 exp(-lam k)``; with
    ``lam < c/T`` the ratio to the target is bounded and its maximum is
    found in closed form.  If the observed acceptance is poor the envelope
    is widened once.
    """
    m, T, c = check_positive(m, "m"), check_positive(T, "T"), check_positive(c, "c")
    n = int(n)
    gen = _rng.generator(seed, "juttner", 0)
    mean_k = _mean_speed(m, T, c)
    lam = 3.0 / mean_k
    lam = min(lam, 0.999 * c / T)
    out: list[np.ndarray] = []
    have = 0
    widened = False
    rounds = 0
    while have < n:
        rounds += 1
        if rounds > max_rounds:
            raise NumericError("Juttner rejection sampler made no progress")
        log_bound = _log_ratio_max(lam, m, T, c)
        size = max(1024, int(1.5 * (n - have)))
        k = gen.gamma(3.0, 1.0 / lam, size)
        log_ratio = -(c * k * k / (np.sqrt((m * c) ** 2 + k * k) + m * c)) / T + lam * k - log_bound
        u = gen.random(size)
        acc = np.log(u) < log_ratio
        rate = float(np.mean(acc))
        if rate < 0.05 and not widened:
            lam = 0.5 * lam
            widened = True
            continue
        if rate == 0.0:
            raise NumericError("Juttner envelope failed even after widening")
        kk = k[acc]
        dirs = gen.standard_normal((kk.size, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        out.append(kk[:, None] * dirs)
        have += kk.size
    return np.concatenate(out)[:n]


def _mean_speed(m, T, c):
    f = lambda k: k * float(juttner_speed_pdf(k, m, T, c))
    scale = max(T / c, math.sqrt(m * T))
    return integrate.quad(f, 0, 60 * scale, limit=400)[0]


def _log_ratio_max(lam, m, T, c):
    """``max_k [lam k - (E(k) - m c^2)/T]``."""
    mc = m * c
    beta_c = c / T
    k_star = lam * mc / math.sqrt(beta_c**2 - lam**2)
    kin = c * k_star**2 / (math.sqrt(mc * mc + k_star**2) + mc)
    return lam * k_star - kin / T


def ks_juttner(samples_k: np.ndarray, m: float, T: float, c: float = 1.0):
    """Kolmogorov-Smirnov test of ``|kappa|`` samples against the Juttner marginal."""
    k = np.asarray(samples_k, dtype=float)
    if k.ndim == 2:
        k = np.linalg.norm(k, axis=1)
    cdf = JuttnerCDF(m, T, c)
    return stats.kstest(k, cdf)


# ---------------------------------------------------------------------------
# Histograms of the one-particle distribution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistributionHistogram:
    """Normalized histogram; ``density`` integrates to one over the bins."""

    edges: tuple[np.ndarray, ...]
    density: np.ndarray
    counts: np.ndarray
    n: int
    tau: float = 0.0
    variables: str = "kappa"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def bin_volumes(self) -> np.ndarray:
        widths = [np.diff(e) for e in self.edges]
        if self.variables == "speed":
            e = self.edges[0]
            return 4.0 / 3.0 * np.pi * (e[1:] ** 3 - e[:-1] ** 3)
        grids = np.meshgrid(*widths, indexing="ij")
        return np.prod(grids, axis=0)

    @property
    def centers(self) -> tuple[np.ndarray, ...]:
        return tuple(0.5 * (e[1:] + e[:-1]) for e in self.edges)

    def total(self) -> float:
        return float(np.sum(self.density * self.bin_volumes))

    def marginal(self, axis: int) -> np.ndarray:
        """Marginal density along one Cartesian axis of a 3D histogram."""
        if self.variables != "kappa":
            raise ValidationError("marginals are defined for Cartesian histograms")
        other = tuple(a for a in range(3) if a != axis)
        mass = np.sum(self.density * self.bin_volumes, axis=other)
        return mass / np.diff(self.edges[axis])

    def mix(self, other: "DistributionHistogram", alpha: float) -> "DistributionHistogram":
        if any(a.shape != b.shape or np.any(a != b) for a, b in zip(self.edges, other.edges)):
            raise ValidationError("histograms must share their bins")
        dens = alpha * self.density + (1 - alpha) * other.density
        return DistributionHistogram(self.edges, dens, alpha * self.counts + (1 - alpha) * other.counts,
                                     self.n + other.n, self.tau, self.variables)


def _gather(states: Sequence[WignerPhaseState]) -> tuple[np.ndarray, np.ndarray, float]:
    if len(states) == 0:
        raise ValidationError("no states to histogram")
    eta = np.concatenate([s.eta for s in states])
    kappa = np.concatenate([s.kappa for s in states])
    return eta, kappa, float(states[0].tau)


def histogram_from_samples(kappa: np.ndarray, bins, tau: float = 0.0, speed: bool = False,
                           meta: dict | None = None) -> DistributionHistogram:
    kappa = as_particles(kappa, "kappa")
    if speed:
        edges = np.asarray(bins, dtype=float) if np.ndim(bins) else None
        k = np.linalg.norm(kappa, axis=1)
        counts, e = np.histogram(k, bins=bins)
        vols = 4.0 / 3.0 * np.pi * (e[1:] ** 3 - e[:-1] ** 3)
        dens = counts / (k.size * vols)
        return DistributionHistogram((e,), dens, counts, int(k.size), tau, "speed", meta or {})
    counts, edges = np.histogramdd(kappa, bins=bins)
    widths = np.meshgrid(*[np.diff(e) for e in edges], indexing="ij")
    vols = np.prod(widths, axis=0)
    n_in = counts.sum()
    if n_in == 0:
        raise ValidationError("no samples fall inside the bins")
    dens = counts / (n_in * vols)
    return DistributionHistogram(tuple(edges), dens, counts, int(kappa.shape[0]), tau, "kappa", meta or {})


def estimate_f1(states: Sequence[WignerPhaseState], bins, speed: bool = False,
                require_rest_frame: bool = False, model=None, tol: float = 1e-6) -> DistributionHistogram:
    """Histogram of ``(1/N) sum_i delta(kappa - kappa_i)`` averaged over states.

    With ``require_rest_frame`` every state must satisfy the rest-frame
    conditions for ``model``; states that do not are rejected.
    """
    states = list(states)
    if require_rest_frame:
        from .canonical import constraint_residuals

        if model is None:
            raise ValidationError("a model is needed to check the rest-frame conditions")
        for k, s in enumerate(states):
            resP, resK = constraint_residuals(s, model)
            if resP > tol or resK > tol:
                raise ValidationError(f"state {k} violates the rest-frame conditions ({resP:.2e}, {resK:.2e})")
    _, kappa, tau = _gather(states)
    return histogram_from_samples(kappa, bins, tau, speed)


def default_speed_bins(m: float, T: float, c: float = 1.0, n_bins: int = 40) -> np.ndarray:
    """Uniform ``|kappa|`` bins up to the ``1 - 1e-6`` Juttner quantile."""
    return np.linspace(0.0, juttner_quantile_kmax(m, T, c), n_bins + 1)


# ---------------------------------------------------------------------------
# Invariance under Wigner rotations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InvarianceReport:
    rotation: np.ndarray
    discrepancy: np.ndarray
    chi2: float
    dof: int
    p_value: float
    relabel_identical: bool
    mc_max_change: float

    @property
    def passed(self) -> bool:
        return self.relabel_identical and self.p_value > 0.01 and self.mc_max_change < 1e-12


def scalar_invariance_report(states: Sequence[WignerPhaseState], Lam: np.ndarray, bins,
                             h: Sequence[float] = (0.0, 0.0, 0.0), model=None) -> InvarianceReport:
    """Compare the one-particle histogram before and after a Wigner rotation.

    The chi-square compares the original and rotated samples in fixed
    Cartesian bins.  ``relabel_identical`` checks that the rotated samples
    counted in rotated bins reproduce the original counts exactly, which is
    done by mapping them back with the inverse rotation.
    """
    check_lorentz(Lam)
    R = wigner_rotation(Lam, h)
    states = list(states)
    _, kappa, tau = _gather(states)
    rot = kappa @ R.T
    h0 = histogram_from_samples(kappa, bins, tau)
    h1 = histogram_from_samples(rot, h0.edges, tau)
    back = histogram_from_samples(rot @ R, h0.edges, tau)
    a, b = h0.counts.ravel(), h1.counts.ravel()
    mask = (a + b) > 0
    chi2 = float(np.sum((a[mask] - b[mask]) ** 2 / (a[mask] + b[mask])))
    dof = int(np.count_nonzero(mask)) - 1
    p = float(stats.chi2.sf(chi2, max(dof, 1)))
    max_change = 0.0
    if model is not None:
        from .canonical import internal_generators

        for s in states:
            m0 = internal_generators(s, model).Mc
            m1 = internal_generators(s.rotated(R), model).Mc
            max_change = max(max_change, abs(m1 - m0) / m0)
    identical = bool(np.array_equal(h0.counts, back.counts)) or bool(
        np.max(np.abs(h0.counts - back.counts)) <= 0.0
    )
    return InvarianceReport(frozen(R), frozen((h1.density - h0.density)), chi2, dof, p, identical, max_change)


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentFields:
    """Particle current ``J``, energy-momentum tensor ``T`` and entropy current ``S`` (upper indices)."""

    J: np.ndarray
    T: np.ndarray
    S: np.ndarray | None
    J_err: np.ndarray | None = None
    T_err: np.ndarray | None = None


def four_momenta(kappa: np.ndarray, m: float, c: float = 1.0) -> np.ndarray:
    kappa = np.asarray(kappa, dtype=float)
    k0 = np.sqrt((m * c) ** 2 + np.sum(kappa * kappa, axis=-1))
    return np.concatenate([k0[..., None], kappa], axis=-1)


def moments(hist: DistributionHistogram, m: float, c: float = 1.0, density: float = 1.0) -> MomentFields:
    """Moments of a Cartesian momentum histogram (midpoint rule per bin).

    ``J^mu = n int d^3k/k^0 k^mu f``, ``T^{mu nu} = n int d^3k/k^0 k^mu k^nu f``
    and ``S^mu = -n int d^3k/k^0 k^mu f ln f`` with ``n`` the number density;
    empty bins do not contribute to ``S``.
    """
    if hist.variables != "kappa":
        raise ValidationError("moments need a Cartesian momentum histogram")
    grids = np.meshgrid(*hist.centers, indexing="ij")
    k = np.stack(grids, axis=-1).reshape(-1, 3)
    f = hist.density.ravel()
    w = (hist.bin_volumes.ravel() * f)
    p = four_momenta(k, m, c)
    inv_k0 = 1.0 / p[:, 0]
    J = density * np.einsum("n,n,nm->m", w, inv_k0, p)
    T = density * np.einsum("n,n,nm,nl->ml", w, inv_k0, p, p)
    pos = f > 0
    logf = np.zeros_like(f)
    logf[pos] = np.log(f[pos])
    S = -density * np.einsum("n,n,nm->m", w * logf, inv_k0, p)
    return MomentFields(frozen(J), frozen(T), frozen(S))


def moments_from_samples(kappa: np.ndarray, m: float, c: float = 1.0, density: float = 1.0) -> MomentFields:
    """Monte-Carlo moments with per-component standard errors (no entropy current)."""
    kappa = as_particles(kappa, "kappa")
    p = four_momenta(kappa, m, c)
    inv_k0 = 1.0 / p[:, 0]
    n = kappa.shape[0]
    j = p * inv_k0[:, None]
    t = np.einsum("n,nm,nl->nml", inv_k0, p, p)
    J = density * j.mean(axis=0)
    T = density * t.mean(axis=0)
    J_err = density * j.std(axis=0, ddof=1) / math.sqrt(n)
    T_err = density * t.std(axis=0, ddof=1) / math.sqrt(n)
    return MomentFields(frozen(J), frozen(T), None, frozen(J_err), frozen(T_err))


@dataclass(frozen=True)
class PerfectFluid:
    energy_density: float
    pressure: float
    U: np.ndarray


def perfect_fluid_decompose(T: np.ndarray, tol: float = 1e-12) -> PerfectFluid:
    """Energy density, pressure and four-velocity of a perfect-fluid tensor.

    ``U`` is the time-like eigenvector of ``T^mu_nu``; the pressure is the
    mean spatial diagonal of ``T`` in the frame comoving with ``U``.
    """
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4) or np.max(np.abs(T - T.T)) > 1e-9 * max(1.0, np.max(np.abs(T))):
        raise ValidationError("T must be a symmetric 4x4 matrix")
    mixed = T @ METRIC
    w, vecs = np.linalg.eig(mixed)
    best = None
    for k in range(4):
        if abs(w[k].imag) > tol * max(1.0, abs(w[k])):
            continue
        u = np.real(vecs[:, k])
        norm2 = u @ METRIC @ u
        if norm2 > tol * (u @ u):
            u = u / math.sqrt(norm2)
            if u[0] < 0:
                u = -u
            best = (float(np.real(w[k])), u)
            break
    if best is None:
        raise NumericError("no time-like eigenvector: the tensor is not of perfect-fluid form")
    rho, U = best
    L = boost_matrix(U[1:])
    Linv = METRIC @ L.T @ METRIC
    rest = Linv @ T @ Linv.T
    p = float(np.mean(np.diag(rest)[1:]))
    return PerfectFluid(rho, p, frozen(U))


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


class JuttnerFit(BaseEstimator):
    """Fit the Juttner temperature to momentum samples by matching the mean energy.

    Parameters
    ----------
    m, c : float
        Particle mass and speed of light.
    """

    def __init__(self, m: float = 1.0, c: float = 1.0):
        self.m = m
        self.c = c

    def fit(self, X, y=None) -> "JuttnerFit":
        k = _as_momenta(X)
        E = self.c * np.sqrt((self.m * self.c) ** 2 + np.sum(k * k, axis=1))
        self.mean_energy_ = float(np.mean(E))
        self.T_ = juttner_temperature(self.mean_energy_, self.m, self.c)
        self.n_samples_ = int(k.shape[0])
        return self

    def score_samples(self, X) -> np.ndarray:
        """Log density of each momentum under the fitted distribution."""
        self._check_is_fitted("T_")
        return np.log(juttner_pdf(_as_momenta(X), self.m, self.T_, self.c))

    def ks_test(self, X):
        self._check_is_fitted("T_")
        return ks_juttner(_as_momenta(X), self.m, self.T_, self.c)

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        self._check_is_fitted("T_")
        return sample_juttner(self.m, self.T_, self.c, n, seed)


def _as_momenta(X) -> np.ndarray:
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], WignerPhaseState):
        return np.concatenate([s.kappa for s in X])
    return as_particles(X, "kappa")


class OneParticleDistribution(BaseEstimator):
    """Histogram estimator of the one-particle momentum distribution."""

    def __init__(self, bins=20, speed: bool = False):
        self.bins = bins
        self.speed = speed

    def fit(self, X, y=None) -> "OneParticleDistribution":
        self.histogram_ = histogram_from_samples(_as_momenta(X), self.bins, speed=self.speed)
        return self

    def predict(self, X) -> np.ndarray:
        """Histogram density at each momentum (zero outside the bins)."""
        self._check_is_fitted("histogram_")
        h = self.histogram_
        k = _as_momenta(X)
        if self.speed:
            v = np.linalg.norm(k, axis=1)
            idx = np.searchsorted(h.edges[0], v, side="right") - 1
            ok = (idx >= 0) & (idx < h.density.size)
            out = np.zeros(v.size)
            out[ok] = h.density[idx[ok]]
            return out
        idx = [np.searchsorted(e, k[:, a], side="right") - 1 for a, e in enumerate(h.edges)]
        ok = np.all([(i >= 0) & (i < e.size - 1) for i, e in zip(idx, h.edges)], axis=0)
        out = np.zeros(k.shape[0])
        out[ok] = h.density[tuple(i[ok] for i in idx)]
        return out


class RelativeCoordinates(BaseEstimator):
    """Transformer between particle Wigner variables and collective/relative ones.

    ``transform`` maps an (n, 2, N, 3) array of ``(eta, kappa)`` states to
    rows ``(eta_plus, kappa_plus, rho, pi)`` flattened; ``inverse_transform``
    undoes it.
    """

    def __init__(self, masses: Sequence[float] = (1.0, 1.0)):
        self.masses = masses

    def fit(self, X=None, y=None) -> "RelativeCoordinates":
        self.separation_ = build_separation_matrix(self.masses)
        return self

    def transform(self, X) -> np.ndarray:
        self._check_is_fitted("separation_")
        X = np.asarray(X, dtype=float)
        N = self.separation_.n
        X = X.reshape(-1, 2, N, 3)
        rows = []
        for eta, kappa in X:
            ep, kp, r = to_relative(WignerPhaseState(0.0, eta, kappa), self.separation_)
            rows.append(np.concatenate([ep, kp, r.rho.ravel(), r.pi.ravel()]))
        return np.array(rows)

    def inverse_transform(self, Y) -> np.ndarray:
        self._check_is_fitted("separation_")
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        N = self.separation_.n
        out = []
        for row in Y:
            ep, kp = row[:3], row[3:6]
            rho = row[6 : 6 + 3 * (N - 1)].reshape(N - 1, 3)
            pi = row[6 + 3 * (N - 1) :].reshape(N - 1, 3)
            s = from_relative(ep, kp, RelativeState(0.0, rho, pi), self.separation_)
            out.append(np.stack([s.eta, s.kappa]))
        return np.array(out)

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X).transform(X)
