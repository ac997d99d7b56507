from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from restframe.canonical import WignerPhaseState
from restframe.frames import (
    METRIC,
    JacobiData,
    OutOfRangeError,
    UnsupportedInversionError,
    boosted_rapidity,
    build_boost_tetrad,
    collective_centers,
    embed,
    external_generators,
    fokker_pryce,
    free_fixed_time_tau,
    minkowski_dot,
    pure_boost,
    resample_at_fixed_time,
    rotation_lorentz,
    wigner_from_worldlines,
    wigner_rotation,
    worldlines_from_wigner,
)
from restframe.models import energies, free_model, quadratic_model
from restframe._base import ValidationError


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def random_state(rng, n=3, tau=0.0):
    return WignerPhaseState(tau, rng.normal(size=(n, 3)), rng.normal(size=(n, 3)))


def test_tetrad_zero_rapidity_is_identity():
    assert_allclose(build_boost_tetrad([0, 0, 0]).matrix, np.eye(4), atol=0)


def test_tetrad_collinear_closed_form():
    L = build_boost_tetrad([0.75, 0, 0]).matrix
    assert_allclose(L[:, 0], [1.25, 0.75, 0, 0], atol=1e-15)
    assert_allclose(L[:, 1], [0.75, 1.25, 0, 0], atol=1e-15)
    assert_allclose(L[:, 2], [0, 0, 1, 0], atol=1e-15)
    assert_allclose(L[:, 3], [0, 0, 0, 1], atol=1e-15)


def test_tetrad_orthonormal_for_large_rapidities():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(2000):
        h = rng.normal(size=3)
        h *= rng.uniform(0, 10) / np.linalg.norm(h)
        worst = max(worst, build_boost_tetrad(h).orthonormality_error())
    assert worst < 1e-10


def test_centers_collapse_without_spin():
    j = JacobiData([0.3, -0.1, 0.2], [0.4, 0.5, -0.2])
    c = collective_centers(j, 2.0, None, 1.7)
    assert_allclose(c.tilde_x, c.Y, atol=0)
    assert_allclose(c.R, c.Y, atol=0)


def test_centers_collapse_at_zero_rapidity():
    j = JacobiData([0.3, -0.1, 0.2], [0, 0, 0])
    c = collective_centers(j, 2.0, [0.1, 0.4, 1.0], 0.5)
    assert_allclose(c.tilde_x, c.Y, atol=0)
    assert_allclose(c.R, c.Y, atol=0)


def test_moller_radius_ratio_and_scaling():
    j = JacobiData([0, 0, 0], [0.2, 0, 0])
    assert collective_centers(j, 2.0, [0, 0, 1], 0.0).moller_radius == 0.5
    r1 = collective_centers(j, 3.0, [0.2, 0.5, 0.1], 0.0).moller_radius
    r2 = collective_centers(j, 3.0, [0.4, 1.0, 0.2], 0.0).moller_radius
    assert r2 == 2 * r1


def test_centers_offsets_are_spatial():
    j = JacobiData([0.3, -0.1, 0.2], [0.4, 0.5, -0.2])
    c = collective_centers(j, 2.0, [0.3, -0.7, 0.2], 1.1)
    assert (c.tilde_x - c.Y)[0] == 0 and (c.R - c.Y)[0] == 0


def test_centers_reject_nonpositive_mass():
    with pytest.raises(ValidationError):
        collective_centers(JacobiData([0, 0, 0], [0, 0, 0]), 0.0, None, 0.0)


def test_embed_origin_and_rest_frame():
    j = JacobiData([0.2, 0.1, 0], [0.3, 0, 0.1])
    assert_allclose(embed(j, 0.7, [0, 0, 0], Mc=3.0), fokker_pryce(j, 3.0, None, 0.7))
    rest = JacobiData([0, 0, 0], [0, 0, 0])
    assert_allclose(embed(rest, 0.7, [1, 2, 3], Mc=3.0), [0.7, 1, 2, 3], atol=1e-15)


def test_embed_jacobian_equals_tetrad_legs():
    j = JacobiData([0.2, 0.1, 0], [0.3, -0.4, 0.1])
    L = build_boost_tetrad(j.h).matrix
    sigma = np.array([0.3, -0.2, 0.5])
    for r in range(3):
        e = np.zeros(3)
        e[r] = 1e-6
        fd = (embed(j, 1.0, sigma + e, Mc=2.0) - embed(j, 1.0, sigma - e, Mc=2.0)) / 2e-6
        assert_allclose(fd, L[:, r + 1], atol=1e-8)


def test_worldlines_rest_frame_specialization():
    rng = np.random.default_rng(2)
    s = random_state(rng, tau=0.4)
    s = WignerPhaseState(0.4, s.eta, s.kappa - s.kappa.mean(axis=0))
    model = free_model([1.0, 2.0, 1.5])
    # at h = 0 the spin offsets vanish
    w = worldlines_from_wigner(s, energies(s.eta, s.kappa, model), JacobiData([0, 0, 0], [0, 0, 0]))
    assert_allclose(w.x[:, 0], 0.4)
    assert_allclose(w.x[:, 1:], s.eta)


def test_worldlines_free_mass_shell():
    rng = np.random.default_rng(3)
    m = np.array([1.0, 2.0, 0.5])
    model = free_model(m)
    for _ in range(20):
        s = random_state(rng)
        j = JacobiData(rng.normal(size=3), rng.normal(size=3) * 2)
        w = worldlines_from_wigner(s, energies(s.eta, s.kappa, model), j)
        assert_allclose(minkowski_dot(w.p, w.p), m**2, rtol=1e-10)


def test_worldline_round_trip():
    rng = np.random.default_rng(4)
    model = free_model([1.0, 1.3, 0.7, 2.0])
    for _ in range(50):
        s = random_state(rng, 4, tau=rng.normal())
        h = rng.normal(size=3)
        h *= rng.uniform(0, 5) / np.linalg.norm(h)
        j = JacobiData(rng.normal(size=3), h)
        w = worldlines_from_wigner(s, energies(s.eta, s.kappa, model), j)
        back = wigner_from_worldlines(w, j)
        assert_allclose(back.eta, s.eta, atol=1e-11)
        assert_allclose(back.kappa, s.kappa, atol=1e-11)
        assert_allclose(back.tau, s.tau, atol=1e-11)


def test_inversion_h_kappa_identity():
    rng = np.random.default_rng(5)
    model = free_model([1.0, 1.0])
    s = random_state(rng, 2)
    j = JacobiData([0, 0, 0], [0.3, -0.6, 0.2])
    w = worldlines_from_wigner(s, energies(s.eta, s.kappa, model), j)
    back = wigner_from_worldlines(w, j)
    lhs = back.kappa @ j.h
    rhs = j.h0 * (w.p[:, 1:] @ j.h) - (j.h @ j.h) * w.p[:, 0]
    assert_allclose(lhs, rhs, atol=1e-12)


def test_inversion_at_zero_rapidity():
    rng = np.random.default_rng(6)
    model = free_model([1.0, 1.0, 1.0])
    s = random_state(rng, tau=2.0)
    z = np.array([0.3, 0.2, -0.1])
    j = JacobiData(z, [0, 0, 0])
    E = energies(s.eta, s.kappa, model)
    w = worldlines_from_wigner(s, E, j)
    back = wigner_from_worldlines(w, j)
    assert_allclose(back.tau, w.x[:, 0], atol=1e-12)
    assert_allclose(back.eta, w.x[:, 1:] - z / E.sum(), atol=1e-12)


def test_inversion_rejects_interacting_models():
    w = worldlines_from_wigner(WignerPhaseState(0, np.zeros((2, 3)), np.zeros((2, 3))), [1.0, 1.0],
                               JacobiData([0, 0, 0], [0, 0, 0]))
    with pytest.raises(UnsupportedInversionError):
        wigner_from_worldlines(w, JacobiData([0, 0, 0], [0, 0, 0]), model_kind="quadratic")


def _free_trajectory(s, model, j, taus):
    E = energies(s.eta, s.kappa, model)
    v = s.kappa / E[:, None]
    return [worldlines_from_wigner(WignerPhaseState(t, s.eta + v * (t - s.tau), s.kappa), E, j) for t in taus]


def test_free_worldlines_are_straight():
    rng = np.random.default_rng(7)
    model = free_model([1.0, 2.0, 3.0])
    s = random_state(rng)
    s = WignerPhaseState(0.0, s.eta, s.kappa - s.kappa.mean(axis=0))
    j = JacobiData([0.1, 0, 0.2], [0.5, 0.2, -0.3])
    traj = _free_trajectory(s, model, j, [0.0, 1.3])
    dx = traj[1].x - traj[0].x
    p = traj[0].p
    assert_allclose(dx[:, 1:], p[:, 1:] / p[:, :1] * dx[:, :1], atol=1e-10)


def test_fixed_time_resampling_matches_closed_form():
    rng = np.random.default_rng(8)
    model = free_model([1.0, 2.0, 3.0])
    s = random_state(rng)
    s = WignerPhaseState(0.0, s.eta, s.kappa - s.kappa.mean(axis=0))
    j = JacobiData([0, 0, 0], [0.4, -0.2, 0.1])
    traj = _free_trajectory(s, model, j, np.linspace(-5, 5, 41))
    snap = resample_at_fixed_time(traj, 1.0)
    Mc = energies(s.eta, s.kappa, model).sum()
    Y0 = fokker_pryce(j, Mc, np.sum(np.cross(s.eta, s.kappa), axis=0), 0.0)[0]
    expected = free_fixed_time_tau(s.eta, s.kappa, energies(s.eta, s.kappa, model), j, Y0, 1.0)
    assert_allclose(snap.tau, expected, atol=1e-10)
    assert_allclose(snap.x[:, 0], 1.0, atol=1e-10)


def test_fixed_time_rest_frame_simultaneity():
    rng = np.random.default_rng(9)
    model = free_model([1.0, 1.0])
    s = random_state(rng, 2)
    j = JacobiData([0, 0, 0], [0, 0, 0])
    traj = _free_trajectory(s, model, j, np.linspace(0, 4, 9))
    assert_allclose(resample_at_fixed_time(traj, 2.5).tau, 2.5, atol=1e-12)


def test_fixed_time_interacting_matches_interpolation_oracle():
    from restframe.dynamics import integrate
    from restframe.canonical import build_separation_matrix, rest_frame_state, RelativeState

    model = quadratic_model([1.0, 1.0], 0.05)
    sep = build_separation_matrix([1.0, 1.0])
    s0 = rest_frame_state(RelativeState(0.0, [[0.5, 0.1, 0]], [[0.1, 0.4, 0]]), sep, model)
    traj = integrate(s0, model, 4.0, tol=1e-12, n_out=81)
    j = JacobiData([0, 0, 0], [0.3, 0.1, 0])
    samples = [worldlines_from_wigner(st, energies(st.eta, st.kappa, model), j) for st in traj.states()]
    snap = resample_at_fixed_time(samples, 2.0)
    # oracle: bisection on the dense-output world-line time
    for i in range(2):
        lo, hi = 0.0, 4.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            st = traj.at(mid)
            x0 = worldlines_from_wigner(st, energies(st.eta, st.kappa, model), j).x[i, 0]
            lo, hi = (mid, hi) if x0 < 2.0 else (lo, mid)
        assert abs(snap.tau[i] - 0.5 * (lo + hi)) < 1e-8


def test_fixed_time_out_of_range():
    model = free_model([1.0, 1.0])
    s = WignerPhaseState(0, np.zeros((2, 3)), np.zeros((2, 3)))
    traj = _free_trajectory(s, model, JacobiData([0, 0, 0], [0, 0, 0]), np.linspace(0, 1, 5))
    with pytest.raises(OutOfRangeError):
        resample_at_fixed_time(traj, 10.0)


def test_wigner_rotation_of_pure_rotation():
    rng = np.random.default_rng(10)
    Q = random_rotation(rng)
    assert_allclose(wigner_rotation(rotation_lorentz(Q), rng.normal(size=3)), Q, atol=1e-12)


def test_wigner_rotation_collinear_boost_is_identity():
    h = np.array([0.3, -0.2, 0.5])
    assert_allclose(wigner_rotation(pure_boost(1.7 * h), h), np.eye(3), atol=1e-12)


def test_wigner_rotation_orthogonal_and_cocycle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        L1 = pure_boost(rng.normal(size=3)) @ rotation_lorentz(random_rotation(rng))
        L2 = pure_boost(rng.normal(size=3))
        h = rng.normal(size=3)
        R1 = wigner_rotation(L1, h)
        assert_allclose(R1.T @ R1, np.eye(3), atol=1e-12)
        assert np.linalg.det(R1) > 0
        R21 = wigner_rotation(L2 @ L1, h)
        assert_allclose(R21, wigner_rotation(L2, boosted_rapidity(L1, h)) @ R1, atol=1e-10)


def test_wigner_rotation_rejects_improper():
    P = np.diag([1.0, -1.0, -1.0, -1.0])
    with pytest.raises(ValidationError):
        wigner_rotation(P, [0, 0, 0])


def test_external_generators_trivial_and_rest():
    g = external_generators(JacobiData([0, 0, 0], [0.2, 0.1, 0]), 2.0, None)
    assert_allclose(g.K, 0, atol=0)
    assert_allclose(g.J, 0, atol=0)
    g = external_generators(JacobiData([0.3, 0.1, -0.2], [0, 0, 0]), 2.0, [0.1, 0.2, 0.3])
    assert_allclose(g.P, [2, 0, 0, 0])
    assert_allclose(g.K, [-0.3, -0.1, 0.2])


def test_external_momenta_commute_under_numerical_brackets():
    # Poisson brackets on (z, h) with {z^i, h^j} = delta^ij
    j0 = np.array([0.3, -0.2, 0.4]), np.array([0.2, 0.5, -0.1])
    Mc = 1.7

    def P(z, h):
        return external_generators(JacobiData(z, h), Mc, [0.1, 0.2, 0.3]).P

    d = 1e-6
    grads_z = np.array([(P(j0[0] + d * e, j0[1]) - P(j0[0] - d * e, j0[1])) / (2 * d) for e in np.eye(3)])
    grads_h = np.array([(P(j0[0], j0[1] + d * e) - P(j0[0], j0[1] - d * e)) / (2 * d) for e in np.eye(3)])
    bracket = grads_z.T @ grads_h - grads_h.T @ grads_z
    assert_allclose(bracket, 0, atol=1e-8)
    assert_allclose(P(*j0), Mc * np.concatenate([[np.sqrt(1 + j0[1] @ j0[1])], j0[1]]))


def test_tetrad_orthonormality_matches_metric():
    L = build_boost_tetrad([1.0, 2.0, -0.5]).matrix
    assert_allclose(L.T @ METRIC @ L, METRIC, atol=1e-12)
