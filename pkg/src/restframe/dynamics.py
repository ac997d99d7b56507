"""Hamilton equations with the invariant mass as Hamiltonian, integration and the Galilei limit."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import fixed_point

from ._base import ModelDomainError, NumericError, ValidationError, frozen
from .canonical import WignerPhaseState, constraint_residuals, internal_generators
from .models import (
    ModelSpec,
    energies,
    free_model,
    interaction_potential,
    kinetic_excess,
    momentum_shift,
    potentials,
    quadratic_model,
)

__all__ = [
    "ModelSpec",
    "Trajectory",
    "free_model",
    "quadratic_model",
    "potential_V",
    "hamiltonian",
    "hamilton_rhs",
    "hamilton_rhs_fd",
    "integrate",
    "liouville_apply",
    "galilei_limit_scan",
    "GalileiScan",
]

# Events fire when two particles come closer than this distance.
COLLISION_DISTANCE = 1e-6


def _check(state: WignerPhaseState, model: ModelSpec) -> None:
    if state.n != model.n:
        raise ValidationError(f"model has {model.n} masses but state has {state.n} particles")


def potential_V(i: int, state: WignerPhaseState, model: ModelSpec) -> float:
    """Energy-radicand shift of particle ``i`` (zero for the free model)."""
    _check(state, model)
    return float(potentials(state.eta, state.kappa, model)[i])


def hamiltonian(state: WignerPhaseState, model: ModelSpec) -> float:
    """Invariant mass ``Mc = sum_i E_i`` in momentum units."""
    _check(state, model)
    return float(np.sum(energies(state.eta, state.kappa, model)))


def _rhs_arrays(eta: np.ndarray, kappa: np.ndarray, model: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    k_eff = kappa + momentum_shift(eta, model)
    E = energies(eta, kappa, model)
    v = k_eff / E[:, None]
    if model.kind == "free" or model.g == 0.0:
        return v, np.zeros_like(kappa)
    n = eta.shape[0]
    return v, -model.g * (n * v - v.sum(axis=0))


def hamilton_rhs(state: WignerPhaseState, model: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Analytic ``(d eta/d tau, d kappa/d tau)``."""
    _check(state, model)
    return _rhs_arrays(state.eta, state.kappa, model)


def _central_gradient(f: Callable[[np.ndarray], float], y: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    """Fourth-order central-difference gradient."""
    y = np.asarray(y, dtype=float)
    grad = np.empty_like(y)
    for k in range(y.size):
        h = rel_step * max(1.0, abs(y[k]))
        e = np.zeros_like(y)
        e[k] = h
        grad[k] = (-f(y + 2 * e) + 8 * f(y + e) - 8 * f(y - e) + f(y - 2 * e)) / (12 * h)
    return grad


def hamilton_rhs_fd(state: WignerPhaseState, model: ModelSpec, rel_step: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference Hamilton equations from ``Mc`` alone."""
    _check(state, model)
    n = state.n
    grad = _central_gradient(lambda y: hamiltonian(WignerPhaseState.from_array(state.tau, y), model),
                             state.to_array(), rel_step)
    d_eta, d_kappa = grad[: 3 * n].reshape(n, 3), grad[3 * n :].reshape(n, 3)
    return d_kappa, -d_eta


@dataclass(frozen=True)
class Trajectory:
    """Integrated trajectory with dense output and per-sample diagnostics."""

    model: ModelSpec
    tau: np.ndarray
    y: np.ndarray  # (T, 6N)
    dMc_rel: np.ndarray
    resP: np.ndarray
    resK: np.ndarray
    dS: np.ndarray
    method: str
    collisions: np.ndarray = field(default_factory=lambda: np.zeros(0))
    _dense: Callable[[float], np.ndarray] | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.model.n

    def __len__(self) -> int:
        return int(self.tau.size)

    def state(self, k: int) -> WignerPhaseState:
        return WignerPhaseState.from_array(self.tau[k], self.y[k])

    def states(self) -> list[WignerPhaseState]:
        return [self.state(k) for k in range(len(self))]

    def at(self, tau: float) -> WignerPhaseState:
        """State from the dense interpolant (falls back to the nearest sample grid)."""
        lo, hi = min(self.tau[0], self.tau[-1]), max(self.tau[0], self.tau[-1])
        if not lo - 1e-12 <= tau <= hi + 1e-12:
            raise ValidationError(f"tau={tau} outside the integrated span [{lo}, {hi}]")
        if self._dense is not None:
            return WignerPhaseState.from_array(tau, self._dense(tau))
        y = np.array([np.interp(tau, self.tau, col) for col in self.y.T])
        return WignerPhaseState.from_array(tau, y)

    def diagnostics_table(self) -> np.ndarray:
        """Columns ``tau, dMc_rel, resP, resK``."""
        return np.column_stack([self.tau, self.dMc_rel, self.resP, self.resK])


def _diagnostics(model: ModelSpec, taus: np.ndarray, ys: np.ndarray):
    Mc, resP, resK, S = [], [], [], []
    for t, y in zip(taus, ys):
        s = WignerPhaseState.from_array(t, y)
        gen = internal_generators(s, model)
        Mc.append(gen.Mc)
        S.append(gen.S)
        resP.append(np.linalg.norm(gen.P))
        resK.append(np.linalg.norm(gen.K) / gen.Mc)
    Mc = np.array(Mc)
    S = np.array(S)
    return (np.abs(Mc - Mc[0]) / Mc[0], np.array(resP), np.array(resK),
            np.linalg.norm(S - S[0], axis=1))


def _closest_pair(eta: np.ndarray) -> tuple[int, int, float]:
    n = eta.shape[0]
    d = np.linalg.norm(eta[:, None, :] - eta[None, :, :], axis=-1)
    iu = np.triu_indices(n, 1)
    k = int(np.argmin(d[iu]))
    return int(iu[0][k]), int(iu[1][k]), float(d[iu][k])


def _collision_event(n: int, model: ModelSpec):
    """Closest approach of the nearest pair: its radial velocity crosses zero upwards."""

    def event(t, y):
        if n < 2:
            return 1.0
        eta = y[: 3 * n].reshape(n, 3)
        i, j, _ = _closest_pair(eta)
        v, _ = _rhs_arrays(eta, y[3 * n :].reshape(n, 3), model)
        return float((eta[i] - eta[j]) @ (v[i] - v[j]))

    event.terminal = False
    event.direction = 1.0
    return event


def _collisions(sol, n: int) -> np.ndarray:
    """Closest approaches closer than :data:`COLLISION_DISTANCE`."""
    if not sol.t_events or len(sol.t_events[0]) == 0:
        return np.zeros(0)
    keep = [t for t, y in zip(sol.t_events[0], sol.y_events[0])
            if _closest_pair(y[: 3 * n].reshape(n, 3))[2] < COLLISION_DISTANCE]
    return np.asarray(keep, dtype=float)


def _implicit_midpoint(model: ModelSpec, y0: np.ndarray, t0: float, t1: float, step: float, tol: float):
    n = model.n
    span = t1 - t0
    steps = max(1, int(np.ceil(abs(span) / step)))
    dt = span / steps

    def f(y):
        v, dk = _rhs_arrays(y[: 3 * n].reshape(n, 3), y[3 * n :].reshape(n, 3), model)
        return np.concatenate([v.ravel(), dk.ravel()])

    ys = [y0]
    y = y0
    for _ in range(steps):
        guess = y + dt * f(y)
        try:
            y_new = fixed_point(lambda z, y=y: y + dt * f(0.5 * (y + z)), guess, xtol=tol, maxiter=200)
        except RuntimeError as exc:
            raise NumericError(f"implicit midpoint iteration failed: {exc}") from exc
        y = y_new
        ys.append(y)
    taus = t0 + dt * np.arange(steps + 1)
    return taus, np.array(ys)


def integrate(state0: WignerPhaseState, model: ModelSpec, tau_span: tuple[float, float] | float,
              tol: float = 1e-10, method: str = "RK45", n_out: int = 201,
              step: float | None = None) -> Trajectory:
    """Integrate the Hamilton flow of ``Mc``.

    ``method`` is any explicit solver of :func:`scipy.integrate.solve_ivp`
    (``"RK45"`` by default, ``"DOP853"`` for tight tolerances) or
    ``"midpoint"`` for the fixed-step implicit midpoint rule.
    """
    _check(state0, model)
    if np.isscalar(tau_span):
        t0, t1 = state0.tau, state0.tau + float(tau_span)
    else:
        t0, t1 = (float(t) for t in tau_span)
    if t0 == t1:
        raise ValidationError("tau span must be non-empty")
    tol = float(tol)
    if not 0 < tol < 1:
        raise ValidationError("tol must lie in (0, 1)")
    n = model.n
    y0 = state0.to_array()

    if method == "midpoint":
        h = step if step is not None else 1e-2
        taus, ys = _implicit_midpoint(model, y0, t0, t1, h, tol)
        dense = None
        events = np.zeros(0)
    else:
        def f(t, y):
            try:
                v, dk = _rhs_arrays(y[: 3 * n].reshape(n, 3), y[3 * n :].reshape(n, 3), model)
            except ModelDomainError as exc:
                raise ModelDomainError(f"{exc} at tau={t:.6g}") from exc
            return np.concatenate([v.ravel(), dk.ravel()])

        scale = max(1.0, float(np.max(np.abs(y0))))
        t_eval = np.linspace(t0, t1, max(2, int(n_out)))
        sol = solve_ivp(f, (t0, t1), y0, method=method, rtol=tol, atol=tol * scale,
                        t_eval=t_eval, dense_output=True, events=_collision_event(n, model))
        if not sol.success:
            raise NumericError(f"integration failed: {sol.message}")
        taus, ys = sol.t, sol.y.T
        dense = sol.sol
        events = _collisions(sol, n)

    dMc, resP, resK, dS = _diagnostics(model, taus, ys)
    return Trajectory(model, frozen(taus), frozen(ys), frozen(dMc), frozen(resP), frozen(resK), frozen(dS),
                      method, frozen(events), dense)


def liouville_apply(observable: Callable[[WignerPhaseState], float], state: WignerPhaseState,
                    model: ModelSpec, rel_step: float = 1e-5) -> float:
    """Total derivative of ``observable`` along the Hamilton flow.

    Phase-space gradients use fourth-order central differences; an explicit
    ``tau`` dependence of the observable is differentiated the same way.
    """
    _check(state, model)
    n = state.n
    y = state.to_array()
    grad = _central_gradient(lambda z: observable(WignerPhaseState.from_array(state.tau, z)), y, rel_step)
    v, dk = hamilton_rhs(state, model)
    rhs = np.concatenate([v.ravel(), dk.ravel()])
    h = rel_step * max(1.0, abs(state.tau))

    def at_tau(t):
        return observable(WignerPhaseState.from_array(t, y))

    explicit = (-at_tau(state.tau + 2 * h) + 8 * at_tau(state.tau + h)
                - 8 * at_tau(state.tau - h) + at_tau(state.tau - 2 * h)) / (12 * h)
    return float(grad @ rhs + explicit)


@dataclass(frozen=True)
class GalileiScan:
    """Deviation of ``Mc c - sum m c^2`` from the Galilean internal energy."""

    c: np.ndarray
    deviation: np.ndarray
    spin: np.ndarray
    slope: float
    intercept: float


def galilei_limit_scan(state0: WignerPhaseState, model: ModelSpec, c_values: Sequence[float]) -> GalileiScan:
    """Scan ``c`` at fixed positions and momenta and fit the log-log slope.

    The relativistic excess ``Mc c - sum m c^2`` is summed particle by
    particle as ``c k^2/(E + m c)``, which keeps full relative precision at
    large ``c``.
    """
    _check(state0, model)
    cs = np.asarray(c_values, dtype=float)
    if cs.ndim != 1 or cs.size < 2 or np.any(cs <= 0):
        raise ValidationError("need at least two positive c values")
    devs, spins = [], []
    k_eff = state0.kappa + momentum_shift(state0.eta, model)
    h_rel = float(np.sum(np.sum(k_eff**2, axis=1) / (2 * model.masses)))
    for c in cs:
        excess = float(np.sum(kinetic_excess(k_eff, model.masses, c)))
        devs.append(abs(excess - h_rel))
        spins.append(internal_generators(state0, model.with_c(c)).S)
    devs = np.array(devs)
    positive = devs > 0
    if np.count_nonzero(positive) >= 2:
        slope, intercept = np.polyfit(np.log(cs[positive]), np.log(devs[positive]), 1)
    else:
        slope, intercept = float("nan"), float("nan")
    return GalileiScan(frozen(cs), frozen(devs), frozen(np.array(spins)), float(slope), float(intercept))


def interaction_energy(state: WignerPhaseState, model: ModelSpec) -> float:
    """``F = (g/2) sum_a rho_a^2``."""
    return model.g * interaction_potential(state.eta)
