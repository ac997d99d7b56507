from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from restframe._base import ModelDomainError, ValidationError
from restframe.canonical import WignerPhaseState, internal_generators
from restframe.ensembles import EnsembleSpec, mc_partition
from restframe.models import free_model, quadratic_model
from restframe.noninertial import (
    ClockProfile,
    DifferentialRotation,
    GalileiFrame,
    LapseBump,
    RelNonInertialFrame,
    flat_frame,
    galilei_generators,
    galilei_partition,
    geometry,
    integrate_galilei,
    moller_check,
    noninertial_partition,
    rel_noninertial_generators,
)


def random_state(seed=0, n=3, scale=0.6):
    rng = np.random.default_rng(seed)
    return WignerPhaseState(rng.normal(), rng.normal(0, scale, (n, 3)), rng.normal(0, scale, (n, 3)))


def curved_frame(eps=1.0):
    return RelNonInertialFrame(LapseBump(0.1 * eps, 1.0, omega=0.5), DifferentialRotation(0.2 * eps, 1.0))


def grid(n=7, L=2.0):
    a = np.linspace(-L, L, n)
    return np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1).reshape(-1, 3)


# ---------------------------------------------------------------------------
# Frames and admissibility
# ---------------------------------------------------------------------------


def test_profiles_vanish_at_origin():
    for frame in (curved_frame(), RelNonInertialFrame(None, DifferentialRotation(0.4, 0.7, axis=(1, 1, 0)))):
        z = frame.embed(1.3, [0.0, 0.0, 0.0])
        assert_allclose(z, [1.3, 0, 0, 0], atol=1e-15)


def test_profiles_decay_far_away():
    z = curved_frame().embed(2.0, [30.0, 0.0, 0.0])
    assert_allclose(z, [2.0, 30.0, 0.0, 0.0], atol=1e-12)


def test_flat_frame_is_admissible():
    rep = moller_check(flat_frame(), [0.0, 5.0], grid())
    assert rep.admissible and rep.n_violations == 0 and rep.first_violation is None
    assert_allclose([rep.min_lapse, rep.min_g_tautau, rep.min_metric_eigenvalue], 1.0, atol=1e-15)


def test_rigid_rotation_is_flagged_far_from_axis():
    frame = RelNonInertialFrame(None, DifferentialRotation(0.5, rigid=True))
    rep = moller_check(frame, [0.0], grid(9, 4.0))
    assert not rep.admissible
    assert "g_tautau" in rep.first_violation["conditions"]
    # the offending point lies beyond the light cylinder |sigma_perp| = 1/omega
    s = np.asarray(rep.first_violation["sigma"])
    assert math.hypot(s[0], s[1]) > 2.0


def test_differential_rotation_is_admissible_when_slow():
    assert moller_check(curved_frame(), [0.0, 1.0, 3.0], grid()).admissible


def test_linear_acceleration_lapse_and_shift():
    frame = RelNonInertialFrame(ClockProfile((0.0, 1.0, 0.15)), None)
    tau = 2.0
    geo = geometry(frame.jet(tau, grid(3)))
    assert_allclose(geo.lapse, 1.0 + 0.3 * tau, rtol=1e-14)
    assert_allclose(geo.shift, 0.0, atol=0)
    assert moller_check(frame, [0.0, tau], grid(3)).admissible


def test_jacobian_of_shift_matches_finite_differences():
    frame = curved_frame()
    s = np.array([0.3, -0.4, 0.2])
    J = frame.jet(1.1, s).z_r
    h = 1e-6
    fd = np.stack([(frame.embed(1.1, s + h * e) - frame.embed(1.1, s - h * e)) / (2 * h) for e in np.eye(3)], axis=-1)
    assert_allclose(J, fd, atol=1e-9)
    zt = frame.jet(1.1, s).z_tau
    assert_allclose(zt, (frame.embed(1.1 + h, s) - frame.embed(1.1 - h, s)) / (2 * h), atol=1e-9)


# ---------------------------------------------------------------------------
# Relativistic generators
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("c", [1.0, 3.0])
def test_flat_generators_equal_inertial_ones(c):
    model = free_model([1.0, 2.0, 0.5], c=c)
    s = random_state(1)
    ni = rel_noninertial_generators(flat_frame(), s, model)
    g = internal_generators(s, model)
    assert_allclose(ni.Mc, g.Mc, rtol=1e-14)
    assert_allclose(np.concatenate([ni.P, ni.S, ni.K]), np.concatenate([g.P, g.S, g.K]), atol=1e-14)
    assert_allclose(ni.calMc, g.Mc, rtol=1e-14)


def test_effective_hamiltonian_two_forms_agree():
    model = free_model([1.0, 2.0, 0.5])
    for seed in range(5):
        ni = rel_noninertial_generators(curved_frame(), random_state(seed), model)
        assert abs(ni.calMc - ni.calMc_lapse_form) < 1e-10 * abs(ni.calMc)


def test_effective_hamiltonian_minus_mass_is_the_inertial_potential_sum():
    model = free_model([1.0, 2.0, 0.5])
    s = random_state(2)
    frame = curved_frame()
    ni = rel_noninertial_generators(frame, s, model)
    jet = frame.jet(s.tau, s.eta)
    gdot = jet.z_tau[:, 0] - 1.0
    gvec_dot = jet.z_tau[:, 1:]
    expected = float(np.sum(gdot * ni.p[:, 0] - np.sum(gvec_dot * ni.p[:, 1:], axis=1)))
    assert_allclose(ni.calMc - ni.Mc, expected, atol=1e-12)


def test_mass_shift_is_linear_in_the_shift_amplitude():
    model = free_model([1.0, 1.0, 1.0])
    s = random_state(3)
    base = RelNonInertialFrame(None, DifferentialRotation(1.0, 1.0))
    mc = lambda e: rel_noninertial_generators(base.scaled(e), s, model).Mc
    h = 1e-5
    slope = (mc(h) - mc(-h)) / (2 * h)
    for eps in (1e-3, 2e-3):
        assert_allclose(mc(eps) - mc(0.0), eps * slope, rtol=5 * eps, atol=1e-13)


def test_particle_momenta_are_on_the_mass_shell():
    model = free_model([1.0, 2.0, 0.5])
    ni = rel_noninertial_generators(curved_frame(), random_state(4), model)
    m2 = ni.p[:, 0] ** 2 - np.sum(ni.p[:, 1:] ** 2, axis=1)
    assert_allclose(m2, model.masses**2, rtol=1e-12)


def test_generators_reject_interacting_models_and_bad_frames():
    with pytest.raises(ValidationError):
        rel_noninertial_generators(flat_frame(), random_state(), quadratic_model([1, 1, 1], 0.1))
    far = WignerPhaseState(0.0, [[5.0, 0, 0], [0, 0, 0], [0, 1, 0]], np.zeros((3, 3)))
    rigid = RelNonInertialFrame(None, DifferentialRotation(0.5, rigid=True))
    with pytest.raises(ModelDomainError):
        rel_noninertial_generators(rigid, far, free_model([1, 1, 1]))


# ---------------------------------------------------------------------------
# Galilei frames
# ---------------------------------------------------------------------------


def test_identity_frame_hamiltonian_is_kinetic_energy():
    rng = np.random.default_rng(5)
    eta, p, m = rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), np.array([1.0, 2.0, 0.5])
    g = galilei_generators(GalileiFrame.identity(), eta, p, 0.7, m)
    assert_allclose(g.E, np.sum(np.sum(p * p, axis=1) / (2 * m)), rtol=1e-15)
    assert g.calM == g.E


def test_rotating_frame_hamiltonian():
    rng = np.random.default_rng(6)
    eta, p, m = rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), np.array([1.0, 2.0, 0.5, 1.5])
    w = 0.37
    for t in (0.0, 1.3, 17.0):
        g = galilei_generators(GalileiFrame.rotating(w), eta, p, t, m)
        Lz = np.sum(np.cross(eta, p), axis=0)[2]
        assert abs(g.calM - (np.sum(np.sum(p * p, axis=1) / (2 * m)) - w * Lz)) < 1e-12


def general_frame():
    def A(t, s):
        s = np.asarray(s, dtype=float)
        th = 0.2 * t
        R = np.array([[np.cos(th), -np.sin(th), 0], [np.sin(th), np.cos(th), 0], [0, 0, 1.0]])
        return s @ R.T + 0.05 * np.sin(t) * s * np.sum(s * s, axis=-1, keepdims=True)

    return GalileiFrame("general", A=A)


def test_jacobian_duality():
    frame = general_frame()
    pts = grid(5, 1.0)
    for t in (0.0, 0.8, 2.0):
        J = frame.jacobian(t, pts)
        Jt = frame.inverse_jacobian(t, pts)
        assert np.max(np.abs(np.einsum("nsa,nar->nsr", Jt, J) - np.eye(3))) < 1e-10


def test_general_frame_matches_rigid_description():
    rigid = GalileiFrame.rotating(0.2)
    general = GalileiFrame("general", A=lambda t, s: rigid.map(t, s))
    rng = np.random.default_rng(7)
    eta, p, m = rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), np.ones(3)
    a = galilei_generators(rigid, eta, p, 1.1, m)
    b = galilei_generators(general, eta, p, 1.1, m)
    assert abs(a.calM - b.calM) < 1e-9
    assert_allclose(np.concatenate([a.P, a.J, a.K]), np.concatenate([b.P, b.J, b.K]), atol=1e-9)


def test_singular_frame_is_rejected():
    frame = GalileiFrame("general", A=lambda t, s: np.asarray(s) * np.array([1.0, 1.0, 0.0]))
    with pytest.raises(ModelDomainError):
        frame.inverse_jacobian(0.0, np.zeros((1, 3)))
    with pytest.raises(ValidationError):
        GalileiFrame("general")


def test_generators_constant_along_rotating_flow():
    rng = np.random.default_rng(8)
    eta, p = rng.normal(size=(3, 3)), rng.normal(0, 0.5, (3, 3))
    tr = integrate_galilei(GalileiFrame.rotating(0.3), eta, p, [1.0, 2.0, 0.5], (0.0, 20.0), tol=1e-11)
    assert max(tr.drift().values()) < 1e-8


def test_generators_constant_along_accelerated_flow():
    frame = GalileiFrame("rigid", np.array([[0, 0, 0], [0.1, 0, 0], [0, 0.02, 0]]), (0.0, 0.3, 0.01))
    rng = np.random.default_rng(9)
    eta, p = rng.normal(size=(3, 3)), rng.normal(0, 0.5, (3, 3))
    tr = integrate_galilei(frame, eta, p, [1.0, 2.0, 0.5], (0.0, 10.0), tol=1e-11)
    assert max(tr.drift().values()) < 1e-8


# ---------------------------------------------------------------------------
# Partition functions
# ---------------------------------------------------------------------------

SPEC = EnsembleSpec("rel-restframe", E=3.6, R=1.0, N=3)


def test_flat_partition_matches_inertial_estimate():
    flat = noninertial_partition(SPEC, flat_frame(), 60_000, seed=1)
    ref = mc_partition(SPEC, 400_000, seed=2)
    assert abs(flat.value - ref.value) < 3 * math.hypot(flat.stderr, ref.stderr)


def test_partition_is_stationary_in_tau():
    frame = RelNonInertialFrame(None, DifferentialRotation(0.3, 1.0))
    a = noninertial_partition(SPEC, frame, 40_000, seed=3, tau=0.0)
    b = noninertial_partition(SPEC, frame, 40_000, seed=4, tau=3.0)
    assert abs(a.value - b.value) < 3 * math.hypot(a.stderr, b.stderr)


def test_partition_is_deterministic():
    a = noninertial_partition(SPEC, curved_frame(), 20_000, seed=5)
    b = noninertial_partition(SPEC, curved_frame(), 20_000, seed=5)
    assert a.value == b.value and a.stderr == b.stderr


def test_partition_rejects_wrong_regime():
    with pytest.raises(ValidationError):
        noninertial_partition(EnsembleSpec("nonrel-standard", E=3.0, R=1.0, N=3), flat_frame(), 1000)


def test_galilei_identity_partition_matches_boost_restricted_estimate():
    spec = EnsembleSpec("nonrel-restframe", E=5.0, R=1.0, N=3)
    ident = galilei_partition(spec, GalileiFrame.identity(), 200_000, seed=6)
    rot = galilei_partition(spec, GalileiFrame.rotating(0.2), 200_000, seed=7, t=2.0)
    ref = mc_partition(spec, 300_000, seed=8)
    assert abs(ident.value - ref.value) < 3 * math.hypot(ident.stderr, ref.stderr)
    assert abs(rot.value - ident.value) < 3 * math.hypot(rot.stderr, ident.stderr)
