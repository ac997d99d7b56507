from __future__ import annotations

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from restframe.canonical import (
    WignerPhaseState,
    build_separation_matrix,
    from_relative,
    internal_generators,
    to_relative,
)
from restframe.ensembles import log_Z_free_nr, log_Z_restframe_mom
from restframe.frames import (
    JacobiData,
    build_boost_tetrad,
    wigner_from_worldlines,
    worldlines_from_wigner,
)
from restframe.io import read_csv, write_csv
from restframe.kinetic import histogram_from_samples, moments
from restframe.models import energies, free_model, quadratic_model
from restframe.noninertial import GalileiFrame, flat_frame, rel_noninertial_generators

seeds = st.integers(0, 2**32 - 1)
SETTINGS = settings(max_examples=40, deadline=None)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def random_state(rng, n, tau=0.0):
    return WignerPhaseState(tau, rng.normal(size=(n, 3)), rng.normal(size=(n, 3)))


@SETTINGS
@given(seeds)
def test_tetrad_orthonormal(seed):
    h = np.random.default_rng(seed).normal(0, 2, 3)
    assert build_boost_tetrad(h).orthonormality_error() < 1e-10 * (1 + h @ h)


@SETTINGS
@given(seeds, st.integers(1, 5))
def test_worldline_round_trip(seed, n):
    rng = np.random.default_rng(seed)
    model = free_model(rng.uniform(0.5, 2.0, n))
    s = random_state(rng, n, tau=rng.normal())
    j = JacobiData(rng.normal(size=3), rng.normal(0, 0.5, 3))
    back = wigner_from_worldlines(worldlines_from_wigner(s, energies(s.eta, s.kappa, model), j), j)
    assert_allclose(back.eta, s.eta, atol=1e-9)
    assert_allclose(back.kappa, s.kappa, atol=1e-9)


@SETTINGS
@given(seeds, st.integers(2, 7))
def test_relative_round_trip_and_identities(seed, n):
    rng = np.random.default_rng(seed)
    sep = build_separation_matrix(rng.uniform(0.1, 10.0, n))
    assert max(sep.identity_residuals().values()) < 1e-12
    s = random_state(rng, n)
    back = from_relative(*to_relative(s, sep), sep)
    assert_allclose(back.eta, s.eta, atol=1e-12)
    assert_allclose(back.kappa, s.kappa, atol=1e-12)


@SETTINGS
@given(seeds, st.integers(1, 5), st.floats(0.0, 0.5))
def test_generators_under_rotation(seed, n, g):
    rng = np.random.default_rng(seed)
    model = quadratic_model(rng.uniform(0.5, 2.0, n), g)
    s = random_state(rng, n)
    R = random_rotation(rng)
    a = internal_generators(s, model)
    b = internal_generators(s.rotated(R), model)
    assert_allclose(b.Mc, a.Mc, rtol=1e-12)
    for va, vb in ((a.P, b.P), (a.S, b.S), (a.K, b.K)):
        assert_allclose(vb, R @ va, atol=1e-11 * (1 + np.abs(va).max()))


@SETTINGS
@given(st.floats(0.1, 50.0), st.floats(0.01, 5.0), st.integers(2, 8), st.floats(1.01, 2.0))
def test_analytic_partition_functions_increase_with_energy(E, V, N, factor):
    m = 1.0
    assert log_Z_free_nr(E * factor, V, N, m) > log_Z_free_nr(E, V, N, m)
    assert log_Z_restframe_mom(E * factor, V, N, m) > log_Z_restframe_mom(E, V, N, m)


@SETTINGS
@given(seeds, st.floats(0.0, 1.0))
def test_histogram_normalisation_rotation_and_mixing(seed, alpha):
    rng = np.random.default_rng(seed)
    edges = [np.linspace(-8, 8, 9)] * 3
    k = rng.normal(size=(500, 3))
    a = histogram_from_samples(k, edges)
    b = histogram_from_samples(k @ random_rotation(rng).T, edges)
    assert abs(a.total() - 1) < 1e-12 and abs(b.total() - 1) < 1e-12
    mix = a.mix(b, alpha)
    assert abs(mix.total() - 1) < 1e-12
    assert_allclose(moments(mix, 1.0).J, alpha * moments(a, 1.0).J + (1 - alpha) * moments(b, 1.0).J,
                    rtol=1e-12, atol=1e-14)


@SETTINGS
@given(seeds, st.integers(1, 4), st.floats(0.5, 4.0))
def test_flat_frame_reduces_to_inertial_generators(seed, n, c):
    rng = np.random.default_rng(seed)
    model = free_model(rng.uniform(0.5, 2.0, n), c=c)
    s = random_state(rng, n)
    ni = rel_noninertial_generators(flat_frame(), s, model)
    g = internal_generators(s, model)
    assert_allclose(ni.Mc, g.Mc, rtol=1e-13)
    assert_allclose(np.concatenate([ni.P, ni.S, ni.K]), np.concatenate([g.P, g.S, g.K]),
                    atol=1e-12 * (1 + g.Mc))


@SETTINGS
@given(seeds, st.floats(-2.0, 2.0), st.floats(-5.0, 5.0))
def test_rigid_galilei_jacobian_duality(seed, omega, t):
    rng = np.random.default_rng(seed)
    frame = GalileiFrame("rigid", rng.normal(size=(3, 3)), (rng.normal(), omega), tuple(rng.normal(size=3) + 0.1))
    pts = rng.normal(size=(6, 3))
    J = frame.jacobian(t, pts)
    Jt = frame.inverse_jacobian(t, pts)
    assert np.max(np.abs(np.einsum("nsa,nar->nsr", Jt, J) - np.eye(3))) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=True, width=64), min_size=1, max_size=12))
def test_csv_float_round_trip(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    write_csv(path, ["x"], [[v] for v in values])
    _, data = read_csv(path)
    assert np.array_equal(data[:, 0], np.array(values, dtype=float))
