"""Micro-canonical partition functions, shell sampling and thermodynamic derivatives.

Closed forms cover the free equal-mass non-relativistic gas in three
versions (energy only, energy and total momentum, energy with momentum
and center-of-mass restrictions), the extended ensemble with a fixed
internal spin, and the relativistic gas through its Laplace transform.
Monte-Carlo estimators replace the energy delta function either by a
Gaussian kernel or by a finite difference of the phase-space volume.

Units: ``k_B = 1``; energies are in energy units (``Mc * c``), momenta in
momentum units.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import mpmath
import numpy as np
from scipy import integrate, special

from . import rng as _rng
from ._base import BandwidthError, NumericError, ValidationError, as_vector3, check_positive, frozen
from .canonical import (
    SeparationMatrix,
    WignerPhaseState,
    build_separation_matrix,
    from_relative,
    RelativeState,
)
from .models import ModelSpec, energies, free_model, momentum_shift

REGIMES = ("nonrel-standard", "nonrel-restframe", "rel-restframe")
VOLUMES = ("particle", "relative")
METHODS = ("kernel", "indicator")

# Samples per chunk; the chunk layout fixes the random numbers.
CHUNK = 1 << 18
# Minimum number of samples inside one bandwidth of the shell.
MIN_SHELL_SAMPLES = 20
# Kernel support, in bandwidths, kept inside the sampling domain.
KERNEL_REACH = 8.0


def ball_volume(dim: int, radius: float = 1.0) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1) * radius**dim


def sphere_volume(R: float) -> float:
    return 4.0 * math.pi * R**3 / 3.0


def radius_from_volume(V: float) -> float:
    return (3.0 * V / (4.0 * math.pi)) ** (1.0 / 3.0)


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleSpec:
    """Definition of a micro-canonical ensemble.

    ``volume`` selects the spatial characteristic function: ``"particle"``
    confines every particle to the ball of radius ``R``; ``"relative"``
    confines every relative vector ``rho_a`` to the ball of radius ``2R``.
    It defaults to ``"particle"`` for the non-relativistic regimes and
    ``"relative"`` for the relativistic one.  ``boost_constraint=False``
    drops the center-of-mass restriction and fixes the total momentum to
    ``kappa_plus`` instead of zero.
    """

    regime: str
    E: float
    R: float
    N: int
    model: ModelSpec | None = None
    S: np.ndarray | None = None
    extended: bool = False
    boost_constraint: bool = True
    volume: str | None = None
    kappa_plus: np.ndarray | None = None

    def __post_init__(self) -> None:
        model = self.model if self.model is not None else free_model(np.ones(int(self.N)))
        object.__setattr__(self, "model", model)
        object.__setattr__(self, "N", int(self.N))
        if self.volume is None:
            object.__setattr__(self, "volume", "relative" if self.regime == "rel-restframe" else "particle")
        if self.S is not None:
            object.__setattr__(self, "S", frozen(as_vector3(self.S, "S")))
        kp = np.zeros(3) if self.kappa_plus is None else as_vector3(self.kappa_plus, "kappa_plus")
        object.__setattr__(self, "kappa_plus", frozen(kp))
        problems = self.violations()
        if problems:
            raise ValidationError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if self.regime not in REGIMES:
            out.append(f"regime must be one of {REGIMES}")
        if self.volume not in VOLUMES:
            out.append(f"volume must be one of {VOLUMES}")
        if not (np.isfinite(self.R) and self.R > 0):
            out.append("R must be positive")
        if self.N < 1:
            out.append("N must be at least 1")
        if self.model.n != self.N:
            out.append(f"model has {self.model.n} masses but N={self.N}")
        if self.regime == "nonrel-restframe" and self.N < 2:
            out.append("rest-frame regimes need N >= 2")
        if self.regime == "rel-restframe":
            ground = self.model.total_mass * self.model.c**2
            if not self.E > ground:
                out.append(f"E={self.E} must exceed the rest energy {ground}")
        elif not self.E > 0:
            out.append("E must be positive")
        if self.extended:
            if self.S is None:
                out.append("the extended ensemble needs a spin target S")
            if self.regime == "nonrel-standard":
                out.append("the extended ensemble is defined in the rest-frame regimes")
            if self.N < 3:
                out.append("the extended ensemble needs N >= 3 (the spin shell is degenerate for N = 2)")
            if not self.boost_constraint:
                out.append("the extended ensemble requires the boost constraint")
        if self.regime == "nonrel-standard" and (not self.boost_constraint):
            out.append("boost_constraint=False applies to the rest-frame regimes only")
        if self.regime == "rel-restframe" and not self.boost_constraint:
            out.append("boost_constraint=False is implemented for the non-relativistic rest frame only")
        if np.any(self.kappa_plus != 0) and self.boost_constraint:
            out.append("a non-zero kappa_plus requires boost_constraint=False")
        return out

    @property
    def V(self) -> float:
        return sphere_volume(self.R)

    def with_energy(self, E: float) -> "EnsembleSpec":
        return replace(self, E=float(E))

    def with_radius(self, R: float) -> "EnsembleSpec":
        return replace(self, R=float(R))


@dataclass(frozen=True)
class PartitionEstimate:
    """Partition-function value with its uncertainty and provenance."""

    value: float
    stderr: float
    n_samples: int
    method: str
    bandwidth: float | None = None
    seed: int | None = None
    stream: str | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.stderr < 0 or not np.isfinite(self.stderr):
            raise ValidationError("stderr must be a finite non-negative number")

    def to_record(self) -> dict:
        rec = {
            "value": self.value,
            "stderr": self.stderr,
            "n": self.n_samples,
            "method": self.method,
            "bandwidth": self.bandwidth,
            "seed": self.seed,
            "stream": self.stream,
        }
        rec.update(self.meta)
        return rec


def _analytic(value: float, err: float = 0.0, **meta) -> PartitionEstimate:
    return PartitionEstimate(float(value), float(abs(err)), 0, "analytic", meta=meta)


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def log_Z_free_nr(E, V, N: int, m: float):
    """Logarithm of the energy-shell partition function; accepts complex ``E`` and ``V``."""
    return (-special.gammaln(N + 1) + 1.5 * N * np.log(2 * np.pi * m) + (1.5 * N - 1) * np.log(E)
            + N * np.log(V) - special.gammaln(1.5 * N))


def analytic_Z_free_nr(E: float, V: float, N: int, m: float) -> PartitionEstimate:
    """Free gas with only the energy restriction."""
    _check_common(V, N, m)
    if E <= 0:
        return _analytic(0.0)
    return _analytic(float(np.exp(log_Z_free_nr(E, V, N, m))))


def log_Z_restframe_mom(E, V, N: int, m: float, kappa_plus2: float = 0.0):
    d = 3 * N - 3
    return (-special.gammaln(N + 1) + N * np.log(V) - 1.5 * np.log(N) + 0.5 * d * np.log(2 * np.pi * m)
            + (0.5 * d - 1) * np.log(E - kappa_plus2 / (2 * N * m)) - special.gammaln(0.5 * d))


def analytic_Z_restframe_mom(E: float, V: float, N: int, m: float, kappa_plus: Sequence[float] | float = 0.0,
                             normalization: str = "derived") -> PartitionEstimate:
    """Free gas with energy and total-momentum restrictions.

    ``normalization="printed"`` evaluates an alternative published
    prefactor kept for comparison; the derived form is the default.
    """
    _check_common(V, N, m)
    if N < 2:
        raise ValidationError("N >= 2 required")
    k2 = float(np.sum(np.asarray(kappa_plus, dtype=float) ** 2))
    d = 3 * N - 3
    if normalization == "derived":
        threshold = k2 / (2 * N * m)
        if E <= threshold:
            return _analytic(0.0)
        return _analytic(float(np.exp(log_Z_restframe_mom(E, V, N, m, k2))))
    if normalization == "printed":
        if E <= 2 * k2 / (N * m) or E <= 2 * k2 / m:
            return _analytic(0.0)
        val = (math.sqrt(m / (2 * math.pi)) ** d * (E - 2 * k2 / (N * m)) ** ((d - 2) / 2)
               / (N**1.5 * math.gamma(d / 2)) * V**N / math.factorial(N))
        return _analytic(val, normalization="printed")
    raise ValidationError("normalization must be 'derived' or 'printed'")


def _bessel_ratio(x: np.ndarray) -> np.ndarray:
    """``j1(x)/x`` with the small-argument series near zero."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-3
    xs = x[small]
    out[small] = 1.0 / 3.0 - xs**2 / 30.0 + xs**4 / 840.0
    xl = x[~small]
    out[~small] = special.spherical_jn(1, xl) / xl
    return out


def _trig_coefficients(a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
    """Fourier coefficients of ``sin^a x cos^b x`` (cosine and sine parts, orders 0..a+b)."""
    M = 4 * (a + b + 2)
    x = 2 * np.pi * np.arange(M) / M
    f = np.sin(x) ** a * np.cos(x) ** b
    F = np.fft.rfft(f) / M
    K = a + b + 1
    cos_c = np.zeros(K)
    sin_c = np.zeros(K)
    cos_c[0] = F[0].real
    cos_c[1:] = 2 * F[1:K].real
    sin_c[1:] = -2 * F[1:K].imag
    cos_c[np.abs(cos_c) < 1e-14] = 0.0
    sin_c[np.abs(sin_c) < 1e-14] = 0.0
    return cos_c, sin_c


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    abserr: float


def bessel_moment_integral(N: int, split: int = 60) -> QuadratureResult:
    """``I_N = int_0^inf x^2 (j1(x)/x)^N dx``.

    The head ``[0, split*pi]`` is integrated interval by interval.  On the
    tail the integrand ``(sin x - x cos x)^N x^(2-3N)`` is expanded into
    powers of ``x`` times ``cos(w x)`` and ``sin(w x)``; the
    non-oscillating powers integrate in closed form and the oscillating
    ones use Fourier-weighted quadrature on the half line.
    """
    N = int(N)
    if N < 2:
        raise ValidationError("I_N converges for N >= 2")
    total, err = 0.0, 0.0
    f = lambda x: x * x * _bessel_ratio(np.atleast_1d(x))[0] ** N
    for k in range(split):
        v, e = integrate.quad(f, k * np.pi, (k + 1) * np.pi, epsabs=1e-15, epsrel=1e-13, limit=200)
        total += v
        err += e
    X = split * np.pi
    # tail: sum_k C(N,k) (-1)^k x^(k+2-3N) sin^(N-k) cos^k
    n_omega = N + 1
    cos_terms: list[list[tuple[float, int]]] = [[] for _ in range(n_omega)]
    sin_terms: list[list[tuple[float, int]]] = [[] for _ in range(n_omega)]
    for k in range(N + 1):
        coef = math.comb(N, k) * (-1) ** k
        p = k + 2 - 3 * N
        cc, sc = _trig_coefficients(N - k, k)
        for w in range(n_omega):
            if cc[w]:
                cos_terms[w].append((coef * cc[w], p))
            if sc[w]:
                sin_terms[w].append((coef * sc[w], p))
    tail = 0.0
    for c, p in cos_terms[0]:
        tail += c * X ** (p + 1) / (-(p + 1))
    for w in range(1, n_omega):
        for terms, weight in ((cos_terms[w], "cos"), (sin_terms[w], "sin")):
            if not terms:
                continue
            g = lambda x, terms=terms: sum(c * x**p for c, p in terms)
            v, e = integrate.quad(g, X, np.inf, weight=weight, wvar=w, epsabs=1e-16, limlst=100)
            tail += v
            err += e
    total += tail
    if not np.isfinite(total):
        raise NumericError("Bessel moment quadrature did not converge")
    return QuadratureResult(float(total), float(err))


def log_Z_restframe_boost(E, V, N: int, m: float, I_N: float | None = None):
    d = 3 * N - 3
    if I_N is None:
        I_N = bessel_moment_integral(N).value
    return (-special.gammaln(N + 1) + 1.5 * np.log(N) + 0.5 * d * np.log(2 * np.pi * m)
            + (0.5 * d - 1) * np.log(E) - special.gammaln(0.5 * d)
            + np.log(2 / np.pi) + (N - 1) * np.log(3.0) + (N - 1) * np.log(V) + np.log(I_N))


def analytic_Z_restframe_boost(E: float, V: float, N: int, m: float,
                               normalization: str = "derived") -> PartitionEstimate:
    """Free gas with energy, momentum and center-of-mass restrictions.

    The center-of-mass restriction is taken as ``delta^3(eta_plus)``.  The
    position integral reduces to the Bessel moment ``I_N``.
    """
    _check_common(V, N, m)
    if N < 2:
        raise ValidationError("N >= 2 required")
    if E <= 0:
        return _analytic(0.0)
    q = bessel_moment_integral(N)
    d = 3 * N - 3
    if normalization == "derived":
        val = float(np.exp(log_Z_restframe_boost(E, V, N, m, q.value)))
    elif normalization == "printed":
        val = (math.sqrt(m / (2 * math.pi)) ** (3 * N) * E ** ((d - 2) / 2) / math.gamma(d / 2)
               * math.sqrt(32 * math.pi / (N**3 * m**9)) * 3 ** (N - 1) * V ** (N - 1) * q.value
               / math.factorial(N))
    else:
        raise ValidationError("normalization must be 'derived' or 'printed'")
    return _analytic(val, val * q.abserr / q.value, I_N=q.value, normalization=normalization)


def _check_common(V: float, N: int, m: float) -> None:
    check_positive(V, "V")
    check_positive(m, "m")
    if int(N) != N or N < 1:
        raise ValidationError("N must be a positive integer")


# ---------------------------------------------------------------------------
# Extended ensemble (fixed internal spin)
# ---------------------------------------------------------------------------


def relative_mass_matrix(sep: SeparationMatrix) -> np.ndarray:
    """``A_ab = N sum_i gamma_ai gamma_bi / m_i``; the relative kinetic energy is ``pi^T A pi / 2``."""
    return sep.n * (sep.gamma / sep.masses) @ sep.gamma.T


def _spin_metric(rho: np.ndarray, Ainv: np.ndarray) -> np.ndarray:
    """``sum_ab Ainv_ab ((rho_a . rho_b) I - rho_b rho_a^T)`` for a batch of rho (n, N-1, 3)."""
    dots = np.einsum("nai,nbi->nab", rho, rho)
    scal = np.einsum("ab,nab->n", Ainv, dots)
    outer = np.einsum("ab,nbi,naj->nij", Ainv, rho, rho)
    return scal[:, None, None] * np.eye(3)[None] - outer


def _positions_from_unit_ball(x: np.ndarray, masses: np.ndarray) -> np.ndarray:
    """Append ``x_N = -sum_{i<N} (m_i/m_N) x_i`` to a batch (n, N-1, 3)."""
    last = -np.einsum("i,nij->nj", masses[:-1] / masses[-1], x)
    return np.concatenate([x, last[:, None, :]], axis=1)


def _uniform_ball(gen: np.random.Generator, shape: tuple[int, ...], dim: int = 3) -> np.ndarray:
    v = gen.standard_normal(shape + (dim,))
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    r = gen.random(shape + (1,)) ** (1.0 / dim)
    return v * r


def extended_Z_nr(E: float, S: Sequence[float], V: float, N: int, m: float | Sequence[float],
                  n_samples: int = 200_000, seed: int = 0, form: str = "exact",
                  threads: int | None = None) -> PartitionEstimate:
    """Free non-relativistic rest-frame gas with fixed internal spin ``S``.

    Positions are sampled as ``eta_i = R x_i`` with ``x_i`` uniform in the
    unit ball for ``i < N`` and the last particle fixed by the
    center-of-mass condition.  For every configuration the momentum
    integral over the intersection of the energy shell with the spin
    constraint is done in closed form.

    ``form="printed"`` evaluates an alternative published version of the
    same integral (diagonal inertia and a different exponent) for
    comparison; the default is the exact reduction.
    """
    check_positive(V, "V")
    if N < 3:
        raise ValidationError("the extended ensemble needs N >= 3")
    S = as_vector3(S, "S")
    masses = np.full(N, float(m)) if np.isscalar(m) else np.asarray(m, dtype=float)
    if masses.shape != (N,):
        raise ValidationError("need one mass per particle")
    if form not in ("exact", "printed"):
        raise ValidationError("form must be 'exact' or 'printed'")
    R = radius_from_volume(V)
    sep = build_separation_matrix(masses)
    A = relative_mass_matrix(sep)
    Ainv = np.linalg.inv(A)
    d = 3 * N - 3
    M = np.sqrt(N) * (sep.gamma[:, :-1] - np.outer(sep.gamma[:, -1], masses[:-1] / masses[-1]))
    jac = abs(np.linalg.det(M)) ** 3
    ball = ball_volume(3) ** (N - 1)

    def chunk(k: int, size: int):
        gen = _rng.generator(seed, "mc", k)
        x = _positions_from_unit_ball(_uniform_ball(gen, (size, N - 1)), masses)
        inside = np.linalg.norm(x[:, -1], axis=1) <= 1.0
        if form == "exact":
            rho = R * np.sqrt(N) * np.einsum("ai,nij->naj", sep.gamma, x)
            G = _spin_metric(rho, Ainv)
            detG = np.linalg.det(G)
            Et = 0.5 * np.einsum("i,nij,j->n", S, np.linalg.inv(G), S)
            gap = E - Et
            ok = inside & (gap > 0) & (detG > 0)
            w = np.zeros(size)
            w[ok] = (detG[ok] ** -0.5 * gap[ok] ** ((d - 5) / 2))
        else:
            axis_sums = np.sum(x**2, axis=1)  # (n, 3)
            Et = np.sum(S**2 / (2 * masses[0] * R**2 * axis_sums), axis=1)
            gap = E - Et
            ok = inside & (gap > 0)
            w = np.zeros(size)
            w[ok] = gap[ok] ** ((d - 2) / 2)
        return float(np.sum(w)), float(np.sum(w * w)), int(np.count_nonzero(ok))

    sizes = _rng.chunk_sizes(n_samples, CHUNK)
    parts = _rng.map_chunks(chunk, sizes, threads)
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    hits = sum(p[2] for p in parts)
    if hits == 0:
        if E <= 0:
            return PartitionEstimate(0.0, 0.0, n_samples, "mc-kernel", seed=seed, stream="mc")
        raise ValidationError("no configuration satisfied the spin shell; the ensemble is degenerate")
    mean = s1 / n_samples
    var = max(s2 / n_samples - mean * mean, 0.0)
    if form == "exact":
        pref = (R ** (3 * (N - 1)) * jac * ball * np.linalg.det(A) ** -1.5
                * (2 * np.pi) ** ((d - 3) / 2) / math.gamma((d - 3) / 2) / math.factorial(N))
    else:
        mm = masses[0]
        pref = (1.0 / (math.factorial(N) * (2 * np.pi) ** (9 * N)) * math.sqrt(8 * np.pi**3) ** (N + 1)
                * math.sqrt(mm**3) ** (N - 1) * (2 * np.pi) ** 3 / mm**3 * (3 * V / (4 * np.pi)) ** (N - 1)
                * ball / math.gamma(d / 2))
    return PartitionEstimate(pref * mean, pref * math.sqrt(var / n_samples), n_samples, "mc-kernel",
                             seed=seed, stream="mc", meta={"form": form, "hits": hits})


def extended_marginal_grid(E: float, V: float, N: int, m: float, n_samples: int = 20_000,
                           grid: int = 24, seed: int = 0) -> float:
    """Integrate the exact extended partition function over a cubic spin grid.

    The same position samples are reused for every grid point, so the
    result is a smooth function of the grid and can be compared with the
    boost-restricted closed form.
    """
    masses = np.full(N, float(m))
    R = radius_from_volume(V)
    sep = build_separation_matrix(masses)
    A = relative_mass_matrix(sep)
    Ainv = np.linalg.inv(A)
    d = 3 * N - 3
    gen = _rng.generator(seed, "mc", 0)
    x = _positions_from_unit_ball(_uniform_ball(gen, (n_samples, N - 1)), masses)
    inside = np.linalg.norm(x[:, -1], axis=1) <= 1.0
    rho = R * np.sqrt(N) * np.einsum("ai,nij->naj", sep.gamma, x)[inside]
    G = _spin_metric(rho, Ainv)
    smax = math.sqrt(2 * E * float(np.max(np.linalg.eigvalsh(G))))
    # midpoint grid over the cube [-smax, smax]^3
    h = 2 * smax / grid
    axis = -smax + h * (np.arange(grid) + 0.5)
    pts = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    Ginv = np.linalg.inv(G)
    detG = np.linalg.det(G)
    acc = 0.0
    for s in pts:
        Et = 0.5 * np.einsum("i,nij,j->n", s, Ginv, s)
        gap = E - Et
        ok = gap > 0
        acc += float(np.sum(detG[ok] ** -0.5 * gap[ok] ** ((d - 5) / 2)))
    jac = abs(np.linalg.det(np.sqrt(N) * (sep.gamma[:, :-1] - np.outer(sep.gamma[:, -1], masses[:-1] / masses[-1])))) ** 3
    pref = (R ** (3 * (N - 1)) * jac * ball_volume(3) ** (N - 1) * np.linalg.det(A) ** -1.5
            * (2 * np.pi) ** ((d - 3) / 2) / math.gamma((d - 3) / 2) / math.factorial(N))
    return pref * acc * h**3 / n_samples


# ---------------------------------------------------------------------------
# Relativistic gas: Laplace transform and its inverse
# ---------------------------------------------------------------------------


def laplace_Z_rel(s: float, V: float, N: int, m: float, c: float = 1.0) -> float:
    """Laplace transform in energy of the free relativistic partition function."""
    s = check_positive(s, "s")
    _check_common(V, N, m)
    c = check_positive(c, "c")
    x = s * m * c * c
    one = 4 * np.pi * V * m * m * c * special.kv(2, x) / s
    return float(one**N / math.factorial(N))


def _laplace_shifted_mp(s, V, N, m, c):
    """Transform multiplied by ``exp(s N m c^2)``, in mpmath arithmetic."""
    x = s * m * c * c
    one = 4 * mpmath.pi * V * m * m * c * mpmath.besselk(2, x) * mpmath.exp(x) / s
    return one**N / mpmath.factorial(N)


def inverse_laplace_Z_rel(E: float, V: float, N: int, m: float, c: float = 1.0, degree: int = 64) -> float:
    """Numerical inverse Laplace transform on a fixed Talbot contour.

    The rest-energy exponential is removed before inversion so the contour
    only sees the kinetic energy ``E - N m c^2``.
    """
    _check_common(V, N, m)
    kinetic = E - N * m * c * c
    if kinetic <= 0:
        return 0.0
    with mpmath.workdps(30):
        val = mpmath.invertlaplace(lambda s: _laplace_shifted_mp(s, V, N, m, c), kinetic,
                                   method="talbot", degree=degree)
    return float(val)


def shell_Z_rel_single(E: float, V: float, m: float, c: float = 1.0) -> float:
    """One free relativistic particle: ``4 pi V kappa* E / c^2``."""
    kstar2 = (E * E - (m * c * c) ** 2) / (c * c)
    if kstar2 <= 0:
        return 0.0
    return 4 * np.pi * V * math.sqrt(kstar2) * E / (c * c)


# ---------------------------------------------------------------------------
# Monte-Carlo estimators
# ---------------------------------------------------------------------------


@dataclass
class _Batch:
    H: np.ndarray
    weight: np.ndarray  # characteristic function times Jacobian factors
    spin: np.ndarray | None = None


class _Domain:
    """Uniform sampler of a bounded region that contains ``H <= E_max``."""

    volume: float

    def draw(self, gen: np.random.Generator, size: int) -> _Batch:  # pragma: no cover - interface
        raise NotImplementedError


def _positions_ok(eta: np.ndarray, R: float) -> np.ndarray:
    return np.all(np.linalg.norm(eta, axis=-1) <= R, axis=-1)


class _StandardDomain(_Domain):
    """Momenta of each particle in its own ball; positions integrate to ``V^N``."""

    def __init__(self, spec: EnsembleSpec, E_max: float):
        m = spec.model.masses
        self.m = m
        self.kmax = np.sqrt(2 * m * E_max)
        self.volume = spec.V**spec.N * float(np.prod([ball_volume(3, k) for k in self.kmax]))

    def draw(self, gen, size):
        k = _uniform_ball(gen, (size, self.m.size)) * self.kmax[None, :, None]
        H = np.sum(np.sum(k * k, axis=-1) / (2 * self.m), axis=-1)
        return _Batch(H, np.ones(size))


class _RelativeDomain(_Domain):
    """Relative momenta ``pi_a`` and relative positions ``rho_a`` in balls.

    The sampled momenta are the shifted ones, ``kappa_i + D_i``; the shift
    depends on positions only, so the change of variables has unit
    Jacobian and the energy depends on them alone.
    """

    def __init__(self, spec: EnsembleSpec, E_max: float):
        self.spec = spec
        model = spec.model
        m = model.masses
        self.sep = build_separation_matrix(m)
        self.N = spec.N
        self.rel = spec.regime == "rel-restframe"
        A = relative_mass_matrix(self.sep)
        self.A = A
        if self.rel:
            c = model.c
            kmax = np.array([
                math.sqrt(max((E_max / c - (np.sum(m) - mi) * c) ** 2 - (mi * c) ** 2, 0.0)) for mi in m
            ])
            self.pi_radius = np.abs(self.sep.Gamma) @ kmax / np.sqrt(self.N)
        else:
            k2 = float(np.sum(spec.kappa_plus**2))
            budget = max(E_max - k2 / (2 * np.sum(m)), 0.0)
            self.pi_radius = np.sqrt(2 * budget * np.diag(np.linalg.inv(A)))
        self.need_positions = spec.volume == "particle" and spec.boost_constraint
        if spec.volume == "relative":
            self.rho_radius = np.full(self.N - 1, 2 * spec.R)
        else:
            self.rho_radius = np.sqrt(self.N) * np.abs(self.sep.gamma).sum(axis=1) * spec.R
        vol_pi = float(np.prod([ball_volume(3, r) for r in self.pi_radius]))
        if not spec.boost_constraint:
            # total momentum fixed, positions free in V^N; momentum Jacobian |det A_kappa|^3
            Ak = np.column_stack([m / np.sum(m), np.sqrt(self.N) * self.sep.gamma.T])
            self.volume = vol_pi * abs(np.linalg.det(Ak)) ** 3 * spec.V**self.N
            self.need_rho = spec.extended
        else:
            vol_rho = float(np.prod([ball_volume(3, r) for r in self.rho_radius]))
            self.volume = vol_pi * vol_rho
            self.need_rho = self.need_positions or spec.extended

    def draw(self, gen, size):
        spec, sep, N = self.spec, self.sep, self.N
        m = spec.model.masses
        pi_eff = _uniform_ball(gen, (size, N - 1)) * self.pi_radius[None, :, None]
        kappa_eff = np.sqrt(N) * np.einsum("ai,naj->nij", sep.gamma, pi_eff)
        kappa_eff = kappa_eff + (m / np.sum(m))[None, :, None] * spec.kappa_plus[None, None, :]
        k2 = np.sum(kappa_eff**2, axis=-1)
        if self.rel:
            c = spec.model.c
            Ei = np.sqrt((m * c) ** 2 + k2)
            H = c * np.sum(Ei, axis=-1)
        else:
            Ei = None
            H = np.sum(k2 / (2 * m), axis=-1)
        weight = np.ones(size)
        spin = None
        if self.need_rho or spec.extended:
            rho = _uniform_ball(gen, (size, N - 1)) * self.rho_radius[None, :, None]
            eta_rel = np.einsum("ai,naj->nij", sep.Gamma, rho) / np.sqrt(N)
            eta_plus = np.zeros((size, 3))
            if self.rel:
                w = np.einsum("ai,ni->na", sep.Gamma, Ei) / np.sum(Ei, axis=-1, keepdims=True)
                eta_plus = -np.einsum("na,naj->nj", w, rho) / np.sqrt(N)
            eta = eta_plus[:, None, :] + eta_rel
            if self.need_positions:
                weight = _positions_ok(eta, spec.R).astype(float)
            if spec.extended:
                D = momentum_shift_batch(eta, spec.model)
                kappa = kappa_eff - D
                spin = np.sum(np.cross(eta, kappa), axis=1)
        return _Batch(H, weight, spin)


class _SingleRelDomain(_Domain):
    def __init__(self, spec: EnsembleSpec, E_max: float):
        m, c = float(spec.model.masses[0]), spec.model.c
        self.m, self.c = m, c
        self.kmax = math.sqrt(max((E_max / c) ** 2 - (m * c) ** 2, 0.0))
        self.volume = spec.V * ball_volume(3, self.kmax)

    def draw(self, gen, size):
        k = _uniform_ball(gen, (size,)) * self.kmax
        H = self.c * np.sqrt((self.m * self.c) ** 2 + np.sum(k * k, axis=-1))
        return _Batch(H, np.ones(size))


def momentum_shift_batch(eta: np.ndarray, model: ModelSpec) -> np.ndarray:
    if model.kind == "free" or model.g == 0.0:
        return np.zeros_like(eta)
    n = eta.shape[-2]
    return model.g * (n * eta - np.sum(eta, axis=-2, keepdims=True))


def _make_domain(spec: EnsembleSpec, E_max: float) -> _Domain:
    if spec.regime == "nonrel-standard":
        return _StandardDomain(spec, E_max)
    if spec.regime == "rel-restframe" and spec.N == 1:
        return _SingleRelDomain(spec, E_max)
    return _RelativeDomain(spec, E_max)


def silverman_bandwidth(values: np.ndarray, n: int | None = None) -> float:
    """Silverman's rule ``0.9 min(sd, IQR/1.34) n^(-1/5)``."""
    values = np.asarray(values, dtype=float)
    n = values.size if n is None else int(n)
    sd = float(np.std(values, ddof=1))
    q75, q25 = np.percentile(values, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * n ** (-0.2)


def _pilot_bandwidth(spec: EnsembleSpec, n_total: int, seed: int) -> tuple[float, np.ndarray | None]:
    E_max = _initial_emax(spec)
    dom = _make_domain(spec, E_max)
    batch = dom.draw(_rng.generator(seed, "mc-pilot", 0), 1 << 15)
    keep = batch.weight > 0
    b = silverman_bandwidth(batch.H[keep], n_total)
    bS = None
    if spec.extended:
        d = 4
        sd = np.std(batch.spin[keep], axis=0, ddof=1)
        bS = sd * (4.0 / ((d + 2) * n_total)) ** (1.0 / (d + 4))
    return b, bS


def _initial_emax(spec: EnsembleSpec) -> float:
    if spec.regime == "rel-restframe":
        rest = spec.model.total_mass * spec.model.c**2
        return rest + 1.25 * (spec.E - rest)
    return 1.25 * spec.E


def _emax(spec: EnsembleSpec, reach: float) -> float:
    return spec.E + reach


def mc_partition(spec: EnsembleSpec, n_samples: int, seed: int = 0, method: str = "kernel",
                 bandwidth: float | None = None, spin_bandwidth: Sequence[float] | None = None,
                 threads: int | None = None, chunk: int = CHUNK) -> PartitionEstimate:
    """Monte-Carlo micro-canonical partition function.

    A bounded region containing the energy shell is sampled uniformly and
    the energy delta is replaced by a Gaussian kernel (``method="kernel"``)
    or by a centered finite difference of the phase-space volume
    (``method="indicator"``).  The bandwidth follows Silverman's rule on a
    pilot sample unless given.  Rest-frame regimes sample relative
    variables, so the momentum and center-of-mass restrictions hold
    exactly.
    """
    if method not in METHODS:
        raise ValidationError(f"method must be one of {METHODS}")
    n_samples = int(n_samples)
    if n_samples < 1000:
        raise ValidationError("n_samples must be at least 1000")
    b_pilot, bS_pilot = _pilot_bandwidth(spec, n_samples, seed)
    b = float(bandwidth) if bandwidth is not None else b_pilot
    check_positive(b, "bandwidth")
    bS = None
    if spec.extended:
        bS = np.asarray(spin_bandwidth if spin_bandwidth is not None else bS_pilot, dtype=float) * np.ones(3)
    half = b * math.sqrt(3.0)  # box of the same standard deviation as the Gaussian
    reach = KERNEL_REACH * b if method == "kernel" else half
    dom = _make_domain(spec, _emax(spec, reach))
    E = spec.E

    def run(k: int, size: int):
        batch = dom.draw(_rng.generator(seed, "mc", k), size)
        u = (batch.H - E) / b
        if method == "kernel":
            w = np.exp(-0.5 * u * u) / (math.sqrt(2 * math.pi) * b)
        else:
            w = (np.abs(batch.H - E) < half) / (2 * half)
        w = w * batch.weight
        if spec.extended:
            z = (batch.spin - spec.S[None, :]) / bS[None, :]
            w = w * np.exp(-0.5 * np.sum(z * z, axis=1)) / float(np.prod(np.sqrt(2 * math.pi) * bS))
        near = int(np.count_nonzero((np.abs(batch.H - E) < b) & (batch.weight > 0)))
        return math.fsum(w), math.fsum(w * w), near

    sizes = _rng.chunk_sizes(n_samples, chunk)
    parts = _rng.map_chunks(run, sizes, threads)
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    near = sum(p[2] for p in parts)
    if near < MIN_SHELL_SAMPLES:
        raise BandwidthError(
            f"only {near} samples within one bandwidth ({b:.3g}) of the shell; "
            "increase n_samples or pass a larger bandwidth"
        )
    norm = dom.volume / math.factorial(spec.N)
    mean = s1 / n_samples
    var = max(s2 / n_samples - mean * mean, 0.0)
    return PartitionEstimate(
        value=norm * mean,
        stderr=norm * math.sqrt(var / n_samples),
        n_samples=n_samples,
        method="mc-kernel" if method == "kernel" else "mc-indicator",
        bandwidth=b,
        seed=int(seed),
        stream="mc",
        meta={"regime": spec.regime, "volume": spec.volume, "shell_samples": near,
              "spin_bandwidth": None if bS is None else bS.tolist()},
    )


def mc_phase_volume(spec: EnsembleSpec, E_values: Sequence[float], n_samples: int, seed: int = 0,
                    threads: int | None = None) -> np.ndarray:
    """Phase-space volume ``Omega(E)`` below each energy, from one common sample."""
    E_values = np.asarray(E_values, dtype=float)
    dom = _make_domain(spec, float(np.max(E_values)))

    def run(k, size):
        batch = dom.draw(_rng.generator(seed, "mc", k), size)
        Hs = batch.H[batch.weight > 0]
        return np.array([np.count_nonzero(Hs <= e) for e in E_values], dtype=np.int64)

    counts = sum(_rng.map_chunks(run, _rng.chunk_sizes(n_samples, CHUNK), threads))
    return dom.volume / math.factorial(spec.N) * counts / n_samples


# ---------------------------------------------------------------------------
# Shell sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShellSample:
    """States on the energy shell with sampler diagnostics."""

    states: list[WignerPhaseState]
    acceptance: float
    tau_int: float
    thin: int
    method: str


def _uniform_sphere(gen, size, dim):
    v = gen.standard_normal((size, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def integrated_autocorrelation(x: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's adaptive window."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0:
        return 1.0
    y = x - x.mean()
    f = np.fft.rfft(y, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 1.0
    for w in range(1, n):
        tau = 1.0 + 2.0 * float(np.sum(acf[1 : w + 1]))
        if w >= c * tau:
            break
    return max(tau, 1.0)


def _rest_state(spec: EnsembleSpec, sep: SeparationMatrix, rho: np.ndarray, pi: np.ndarray) -> WignerPhaseState:
    """Full state from relative variables with the rest-frame conditions imposed."""
    from .canonical import solve_internal_com

    r = RelativeState(0.0, rho, pi)
    if spec.regime == "rel-restframe":
        eta_plus = solve_internal_com(r, sep, spec.model)
    else:
        eta_plus = np.zeros(3)
    return from_relative(eta_plus, spec.kappa_plus, r, sep)


def _sample_rho(gen, spec: EnsembleSpec, sep: SeparationMatrix, pi: np.ndarray | None,
                max_tries: int = 100_000) -> np.ndarray:
    """Relative positions uniform in the allowed region (by rejection)."""
    N = spec.N
    if spec.volume == "relative":
        return _uniform_ball(gen, (N - 1,)) * 2 * spec.R
    radius = np.sqrt(N) * np.abs(sep.gamma).sum(axis=1) * spec.R
    for _ in range(max_tries):
        rho = _uniform_ball(gen, (N - 1,)) * radius[:, None]
        s = _rest_state(spec, sep, rho, np.zeros_like(rho) if pi is None else pi)
        if _positions_ok(s.eta, spec.R):
            return rho
    raise NumericError("position rejection sampler found no admissible configuration")


def _shift_pi(spec: EnsembleSpec, sep: SeparationMatrix, rho: np.ndarray, pi_eff: np.ndarray) -> np.ndarray:
    """Canonical ``pi`` from the shifted ``pi_eff`` at fixed ``rho``."""
    if spec.model.kind == "free" or spec.model.g == 0.0:
        return pi_eff
    eta = (sep.Gamma.T @ rho) / np.sqrt(spec.N)
    D = momentum_shift(eta, spec.model)
    return pi_eff - (sep.Gamma @ D) / np.sqrt(spec.N)


def sample_shell(spec: EnsembleSpec, n_states: int, seed: int = 0, burn_in: int | None = None,
                 thin: int | None = None) -> ShellSample:
    """Draw states from the micro-canonical distribution of ``spec``.

    Free non-relativistic ensembles without a spin target are sampled
    exactly.  The free relativistic rest-frame gas uses a Metropolis chain
    of exact two-body elastic collisions, which keeps energy and total
    momentum fixed.  Every other ensemble uses a random-walk Metropolis
    chain on a Gaussian-smoothed shell.
    """
    n_states = int(n_states)
    if n_states < 1:
        raise ValidationError("n_states must be positive")
    free = spec.model.kind == "free" or spec.model.g == 0.0
    if spec.regime.startswith("nonrel") and not spec.extended and (free or spec.regime == "nonrel-standard"):
        return _exact_nonrel(spec, n_states, seed)
    if spec.regime == "nonrel-restframe" and not spec.extended:
        return _exact_nonrel(spec, n_states, seed)
    if spec.regime == "rel-restframe" and free and not spec.extended and spec.N >= 2:
        return _collision_chain(spec, n_states, seed, burn_in, thin)
    return _smoothed_metropolis(spec, n_states, seed, burn_in, thin)


def _exact_nonrel(spec: EnsembleSpec, n_states: int, seed: int) -> ShellSample:
    gen = _rng.generator(seed, "metropolis", 0)
    m = spec.model.masses
    N = spec.N
    states = []
    if spec.regime == "nonrel-standard":
        for _ in range(n_states):
            y = _uniform_sphere(gen, 1, 3 * N)[0] * math.sqrt(2 * spec.E)
            k_eff = np.sqrt(m)[:, None] * y.reshape(N, 3)
            eta = _uniform_ball(gen, (N,)) * spec.R
            kappa = k_eff - momentum_shift(eta, spec.model)
            states.append(WignerPhaseState(0.0, eta, kappa))
        return ShellSample(states, 1.0, 1.0, 1, "exact")
    sep = build_separation_matrix(m)
    A = relative_mass_matrix(sep)
    w, U = np.linalg.eigh(A)
    A_inv_sqrt = U @ np.diag(w**-0.5) @ U.T
    k2 = float(np.sum(spec.kappa_plus**2))
    e_rel = spec.E - k2 / (2 * np.sum(m))
    if e_rel <= 0:
        raise ValidationError("energy below the center-of-mass kinetic energy")
    for _ in range(n_states):
        y = _uniform_sphere(gen, 1, 3 * (N - 1))[0].reshape(N - 1, 3) * math.sqrt(2 * e_rel)
        pi_eff = A_inv_sqrt @ y
        if spec.boost_constraint:
            rho = _sample_rho(gen, spec, sep, pi_eff)
            pi = _shift_pi(spec, sep, rho, pi_eff)
            states.append(_rest_state(spec, sep, rho, pi))
        else:
            eta = _uniform_ball(gen, (N,)) * spec.R
            rel = np.sqrt(N) * (sep.gamma @ eta)
            pi = _shift_pi(spec, sep, rel, pi_eff)
            kappa = (m / np.sum(m))[:, None] * spec.kappa_plus[None, :] + np.sqrt(N) * (sep.gamma.T @ pi)
            states.append(WignerPhaseState(0.0, eta, kappa))
    return ShellSample(states, 1.0, 1.0, 1, "exact")


def _pair_collisions(gen, kappa: np.ndarray, m: np.ndarray, c: float) -> tuple[np.ndarray, int]:
    """One sweep of elastic two-body collisions over a random pairing.

    The outgoing direction is isotropic in each pair's center-of-momentum
    frame; Metropolis acceptance ``E_i' E_j' / (E_i E_j)`` converts the
    invariant two-body measure to the flat momentum measure.
    """
    N = kappa.shape[0]
    perm = gen.permutation(N)
    npair = N // 2
    i, j = perm[: 2 * npair : 2], perm[1 : 2 * npair : 2]
    ki, kj = kappa[i], kappa[j]
    mi, mj = m[i] * c, m[j] * c
    Ei = np.sqrt(mi**2 + np.sum(ki * ki, axis=1))
    Ej = np.sqrt(mj**2 + np.sum(kj * kj, axis=1))
    Pt = ki + kj
    Et = Ei + Ej
    Minv = np.sqrt(Et**2 - np.sum(Pt * Pt, axis=1))
    # momentum magnitude in the pair rest frame
    q = np.sqrt(np.maximum((Minv**2 - (mi + mj) ** 2) * (Minv**2 - (mi - mj) ** 2), 0.0)) / (2 * Minv)
    n = _uniform_sphere(gen, npair, 3)
    qv = q[:, None] * n
    Ei_rest = np.sqrt(mi**2 + q * q)
    # boost (E_rest, qv) by the pair velocity
    beta = Pt / Et[:, None]
    gam = Et / Minv
    bq = np.sum(beta * qv, axis=1)
    b2 = np.sum(beta * beta, axis=1)
    coef = np.where(b2 > 0, (gam - 1) * bq / np.where(b2 > 0, b2, 1.0), 0.0)
    ki_new = qv + coef[:, None] * beta + (gam * Ei_rest)[:, None] * beta
    kj_new = Pt - ki_new
    Ei_new = np.sqrt(mi**2 + np.sum(ki_new**2, axis=1))
    Ej_new = np.sqrt(mj**2 + np.sum(kj_new**2, axis=1))
    accept = gen.random(npair) < np.minimum(1.0, Ei_new * Ej_new / (Ei * Ej))
    out = kappa.copy()
    out[i[accept]] = ki_new[accept]
    out[j[accept]] = kj_new[accept]
    return out, int(np.count_nonzero(accept))


def _initial_rel_momenta(gen, spec: EnsembleSpec) -> np.ndarray:
    """Momenta with zero sum and total energy exactly ``E``."""
    m, c, N = spec.model.masses, spec.model.c, spec.N
    dirs = _uniform_sphere(gen, N // 2 + 1, 3)
    u = np.zeros((N, 3))
    for a in range(N // 2):
        u[2 * a] = dirs[a]
        u[2 * a + 1] = -dirs[a]
    if N % 2:
        u[-1] = 0.0
    # scale: sum_i c sqrt(m_i^2 c^2 + s^2 |u_i|^2) = E, solve for s
    def energy(s):
        return c * np.sum(np.sqrt((m * c) ** 2 + s * s * np.sum(u * u, axis=1))) - spec.E

    from scipy.optimize import brentq

    hi = 1.0
    while energy(hi) < 0:
        hi *= 2
    s = brentq(energy, 0.0, hi, xtol=1e-15, rtol=1e-15)
    return s * u


def _collision_chain(spec: EnsembleSpec, n_states: int, seed: int, burn_in: int | None,
                     thin: int | None) -> ShellSample:
    gen = _rng.generator(seed, "metropolis", 0)
    m, c, N = spec.model.masses, spec.model.c, spec.N
    sep = build_separation_matrix(m)
    kappa = _initial_rel_momenta(gen, spec)
    burn = 50 + 10 * N if burn_in is None else int(burn_in)
    rho = _sample_rho(gen, spec, sep, None) if spec.volume == "relative" else None
    accepted = proposed = 0

    def sweep(kappa, rho):
        nonlocal accepted, proposed
        new, acc = _pair_collisions(gen, kappa, m, c)
        if spec.volume == "particle":
            pi = (sep.Gamma @ new) / np.sqrt(N)
            s = _rest_state(spec, sep, rho, pi)
            if not _positions_ok(s.eta, spec.R):
                new = kappa
                acc = 0
        accepted += acc
        proposed += N // 2
        return new

    if spec.volume == "particle":
        rho = _sample_rho(gen, spec, sep, (sep.Gamma @ kappa) / np.sqrt(N))
    for _ in range(burn):
        kappa = sweep(kappa, rho)
    if thin is None:
        trace = []
        probe = kappa
        for _ in range(400):
            probe = sweep(probe, rho)
            trace.append(np.sum(probe[: max(1, N // 4)] ** 2))
        thin = int(math.ceil(integrated_autocorrelation(np.array(trace))))
        kappa = probe
    acc_rate = accepted / max(proposed, 1)
    if acc_rate < 0.01:
        raise NumericError(f"collision Metropolis acceptance {acc_rate:.3%} is below 1%")
    states = []
    for _ in range(n_states):
        for _ in range(thin):
            kappa = sweep(kappa, rho)
        rho = _sample_rho(gen, spec, sep, (sep.Gamma @ kappa) / np.sqrt(N))
        pi = (sep.Gamma @ kappa) / np.sqrt(N)
        states.append(_rest_state(spec, sep, rho, pi))
    return ShellSample(states, accepted / max(proposed, 1), float(thin), int(thin), "pair-collision")


def _state_observables(spec: EnsembleSpec, s: WignerPhaseState) -> tuple[float, np.ndarray]:
    from .canonical import internal_generators

    gen = internal_generators(s, spec.model)
    if spec.regime == "rel-restframe":
        H = gen.Mc * spec.model.c
    else:
        k = s.kappa + momentum_shift(s.eta, spec.model)
        H = float(np.sum(np.sum(k * k, axis=1) / (2 * spec.model.masses)))
    return H, gen.S


def _smoothed_metropolis(spec: EnsembleSpec, n_states: int, seed: int, burn_in: int | None,
                         thin: int | None) -> ShellSample:
    """Random-walk Metropolis on relative (or particle) variables with a Gaussian shell."""
    gen = _rng.generator(seed, "metropolis", 0)
    m, N = spec.model.masses, spec.model.n
    standard = spec.regime == "nonrel-standard" or N == 1
    sep = None if standard else build_separation_matrix(m)
    b, bS = _pilot_bandwidth(spec, 100_000, seed)

    def unpack(y):
        if standard:
            return WignerPhaseState(0.0, y[: 3 * N].reshape(N, 3), y[3 * N :].reshape(N, 3))
        rho = y[: 3 * (N - 1)].reshape(N - 1, 3)
        pi = y[3 * (N - 1) :].reshape(N - 1, 3)
        return _rest_state(spec, sep, rho, pi)

    def log_target(y):
        s = unpack(y)
        if standard:
            if not _positions_ok(s.eta, spec.R):
                return -np.inf
        elif spec.volume == "relative":
            if np.any(np.linalg.norm(y[: 3 * (N - 1)].reshape(N - 1, 3), axis=1) > 2 * spec.R):
                return -np.inf
        elif not _positions_ok(s.eta, spec.R):
            return -np.inf
        try:
            H, S = _state_observables(spec, s)
        except NumericError:
            return -np.inf
        lt = -0.5 * ((H - spec.E) / b) ** 2
        if spec.extended:
            lt += -0.5 * float(np.sum(((S - spec.S) / bS) ** 2))
        return lt

    # start from an exact nonrel-like sample scaled near the shell
    dim = 6 * N if standard else 6 * (N - 1)
    y = np.zeros(dim)
    half = dim // 2
    y[:half] = (_uniform_ball(gen, (half // 3,)) * 0.5 * spec.R).ravel()
    scale_k = math.sqrt(2 * float(np.mean(m)) * max(_kinetic_budget(spec), 1e-12) / max(half // 3, 1))
    y[half:] = gen.standard_normal(half) * scale_k / math.sqrt(3)
    if spec.extended:
        # seed the spin near the target by a rigid adjustment of the momenta
        y[half:] += _spin_seed(y[:half], spec.S, half // 3)
    lt = log_target(y)
    step = np.concatenate([np.full(half, 0.2 * spec.R), np.full(half, 0.2 * scale_k)])
    burn = 4000 if burn_in is None else int(burn_in)
    acc = 0
    for it in range(burn):
        prop = y + step * gen.standard_normal(dim)
        lp = log_target(prop)
        if np.log(gen.random()) < lp - lt:
            y, lt = prop, lp
            acc += 1
        if (it + 1) % 200 == 0:
            rate = acc / 200
            step *= math.exp(rate - 0.25)
            acc = 0
    acc_total = 0
    trace = []
    states_y = []
    if thin is None:
        for _ in range(2000):
            prop = y + step * gen.standard_normal(dim)
            lp = log_target(prop)
            if np.log(gen.random()) < lp - lt:
                y, lt = prop, lp
            trace.append(y[half])
        thin = int(math.ceil(integrated_autocorrelation(np.array(trace))))
    total = 0
    while len(states_y) < n_states:
        for _ in range(thin):
            prop = y + step * gen.standard_normal(dim)
            lp = log_target(prop)
            total += 1
            if np.log(gen.random()) < lp - lt:
                y, lt = prop, lp
                acc_total += 1
        states_y.append(y.copy())
    rate = acc_total / max(total, 1)
    if rate < 0.01:
        raise NumericError(f"Metropolis acceptance {rate:.3%} is below 1%; the proposal scale is too large")
    return ShellSample([unpack(v) for v in states_y], rate, float(thin), int(thin), "smoothed-metropolis")


def _spin_seed(rho_flat: np.ndarray, S: np.ndarray, n: int) -> np.ndarray:
    rho = rho_flat.reshape(n, 3)
    # least-squares pi with sum rho_a x pi_a = S
    L = np.hstack([np.array([[0, -r[2], r[1]], [r[2], 0, -r[0]], [-r[1], r[0], 0]]) for r in rho])
    return np.linalg.lstsq(L, S, rcond=None)[0]


def _kinetic_budget(spec: EnsembleSpec) -> float:
    if spec.regime == "rel-restframe":
        c = spec.model.c
        return (spec.E - spec.model.total_mass * c * c)
    return spec.E


def microcanonical_average(observable: Callable[[WignerPhaseState], float], spec: EnsembleSpec,
                           n_states: int, seed: int = 0) -> tuple[float, float]:
    """Shell average of ``observable`` with an autocorrelation-corrected error."""
    sample = sample_shell(spec, n_states, seed)
    vals = np.array([observable(s) for s in sample.states], dtype=float)
    mean = float(np.mean(vals))
    if vals.size < 2 or np.all(vals == vals[0]):
        return mean, 0.0
    tau = integrated_autocorrelation(vals)
    return mean, float(np.std(vals, ddof=1) * math.sqrt(tau / vals.size))


# ---------------------------------------------------------------------------
# Entropy, temperature, pressure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Thermo:
    """Micro-canonical entropy ``S = ln Z`` (also per particle), temperature and pressure."""

    S: float
    S_per_particle: float
    T: float
    P: float
    beta: float
    beta_err: float = 0.0
    method: str = "analytic"


def entropy_temperature(curve, E0: float, V: float, N: int, *, E_grid: Sequence[float] | None = None,
                        Z_values: Sequence[float] | None = None, Z_err: Sequence[float] | None = None,
                        V_grid: Sequence[float] | None = None, ZV_values: Sequence[float] | None = None,
                        degree: int = 2) -> Thermo:
    """Temperature from ``1/T = d ln Z/dE`` and pressure from ``P/T = d ln Z/dV``.

    ``curve`` is either a callable ``log_Z(E, V)`` that accepts complex
    arguments (differentiated by the complex-step rule, exact to rounding),
    or ``None`` together with Monte-Carlo samples ``Z_values`` on
    ``E_grid`` (and optionally ``ZV_values`` on ``V_grid``), which are fit
    by a weighted local polynomial in ``ln Z``.
    """
    if curve is not None:
        h = 1e-20 * max(1.0, abs(E0))
        hv = 1e-20 * max(1.0, abs(V))
        lnZ = float(np.real(curve(E0, V)))
        beta = float(np.imag(curve(E0 + 1j * h, V)) / h)
        pbeta = float(np.imag(curve(E0, V + 1j * hv)) / hv)
        if not beta > 0:
            raise NumericError("d ln Z/dE is not positive; temperature undefined")
        T = 1.0 / beta
        return Thermo(lnZ, lnZ / N, T, pbeta * T, beta)
    if E_grid is None or Z_values is None:
        raise ValidationError("provide either a callable log Z or sampled values")
    Eg = np.asarray(E_grid, dtype=float)
    Zv = np.asarray(Z_values, dtype=float)
    if np.any(Zv <= 0):
        raise NumericError("Z must be positive around E0")
    lz = np.log(Zv)
    err = np.asarray(Z_err, dtype=float) / Zv if Z_err is not None else np.full(Eg.size, 1e-3)
    beta, beta_err, ok = _local_slope(Eg, lz, err, E0, degree)
    if not ok:
        warnings.warn("ln Z(E) is not monotone near E0; falling back to a smoothing spline", RuntimeWarning)
        from scipy.interpolate import UnivariateSpline

        spl = UnivariateSpline(Eg, lz, w=1 / np.maximum(err, 1e-12), k=3)
        beta = float(spl.derivative()(E0))
        beta_err = float("nan")
    lnZ0 = float(np.polyval(np.polyfit(Eg - E0, lz, degree, w=1 / err), 0.0))
    P = float("nan")
    if V_grid is not None and ZV_values is not None:
        Vg = np.asarray(V_grid, dtype=float)
        lzv = np.log(np.asarray(ZV_values, dtype=float))
        pbeta, _, _ = _local_slope(Vg, lzv, np.full(Vg.size, 1e-3), V, degree)
        P = pbeta / beta
    return Thermo(lnZ0, lnZ0 / N, 1.0 / beta, P, beta, beta_err, "mc-fit")


def _local_slope(x, y, err, x0, degree):
    X = x - x0
    w = 1.0 / np.maximum(err, 1e-300)
    coef, cov = np.polyfit(X, y, degree, w=w, cov="unscaled")
    slope = float(coef[-2])
    slope_err = float(math.sqrt(max(cov[-2, -2], 0.0)))
    deriv = np.polyval(np.polyder(coef), X)
    return slope, slope_err, bool(np.all(deriv > 0))


def analytic_log_Z(kind: str, N: int, m: float, **kw) -> Callable:
    """Complex-safe ``log Z(E, V)`` for the closed forms (``free``, ``momentum``, ``boost``)."""
    if kind == "free":
        return lambda E, V: log_Z_free_nr(E, V, N, m)
    if kind == "momentum":
        k2 = float(kw.get("kappa_plus2", 0.0))
        return lambda E, V: log_Z_restframe_mom(E, V, N, m, k2)
    if kind == "boost":
        I_N = bessel_moment_integral(N).value
        return lambda E, V: log_Z_restframe_boost(E, V, N, m, I_N)
    raise ValidationError("kind must be 'free', 'momentum' or 'boost'")
