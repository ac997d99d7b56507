from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, special

from restframe._base import NotFittedError, NumericError, ValidationError
from restframe.canonical import WignerPhaseState
from restframe.ensembles import EnsembleSpec, sample_shell
from restframe.frames import boost_matrix, pure_boost, rotation_lorentz
from restframe.kinetic import (
    JuttnerCDF,
    JuttnerFit,
    OneParticleDistribution,
    RelativeCoordinates,
    default_speed_bins,
    estimate_f1,
    histogram_from_samples,
    juttner_mean_energy,
    juttner_norm,
    juttner_pdf,
    juttner_speed_pdf,
    juttner_temperature,
    ks_juttner,
    moments,
    moments_from_samples,
    perfect_fluid_decompose,
    sample_juttner,
    scalar_invariance_report,
)
from restframe.models import free_model


@pytest.mark.parametrize("T", [0.05, 0.5, 1.0, 5.0])
def test_juttner_normalisation(T):
    total = integrate.quad(lambda k: float(juttner_speed_pdf(k, 1.0, T)), 0, np.inf, epsrel=1e-12, limit=400)[0]
    assert abs(total - 1) < 1e-8


def test_juttner_norm_closed_form():
    # 4 pi m^2 c T K2(m c^2/T) times the rest-energy factor removed by the kinetic-energy form
    m, T, c = 1.3, 0.7, 2.0
    x = m * c * c / T
    assert_allclose(juttner_norm(m, T, c), 4 * np.pi * m * m * c * T * special.kv(2, x) * np.exp(x), rtol=1e-12)


def test_juttner_maxwell_limit():
    # the leading correction to the Maxwell ratio grows like k^4/(8 m^3 c^2 T), i.e. linearly in T here
    def spread(T):
        k = np.linspace(0, 3 * math.sqrt(T), 50)
        ratio = juttner_pdf(np.stack([k, 0 * k, 0 * k], axis=1), 1.0, T) / np.exp(-k * k / (2 * T))
        return np.ptp(ratio) / ratio.mean()

    assert spread(1e-6) < 2e-5
    assert_allclose(spread(1e-5) / spread(1e-6), 10, rtol=0.01)


def test_juttner_isotropic():
    v = np.array([0.3, -1.2, 0.5])
    R = rotation_lorentz(special_rotation())[1:, 1:]
    assert_allclose(juttner_pdf(v, 1.0, 0.8), juttner_pdf(R @ v, 1.0, 0.8), rtol=1e-14)


def special_rotation():
    th = 0.9
    return np.array([[np.cos(th), -np.sin(th), 0], [np.sin(th), np.cos(th), 0], [0, 0, 1.0]])


def test_juttner_rejects_nonpositive_temperature():
    with pytest.raises(ValidationError):
        juttner_pdf([0, 0, 0], 1.0, 0.0)


@pytest.mark.parametrize("T", [0.1, 1.0, 10.0])
def test_sampler_passes_ks(T):
    k = sample_juttner(1.0, T, n=100_000, seed=3)
    res = ks_juttner(k, 1.0, T)
    assert res.pvalue > 0.01
    assert np.all(np.abs(k.mean(axis=0)) < 3 * k.std(axis=0) / math.sqrt(k.shape[0]) + 1e-12)


def test_sampler_mean_energy():
    m, T = 1.0, 0.8
    k = sample_juttner(m, T, n=100_000, seed=4)
    E = np.sqrt(m * m + np.sum(k * k, axis=1))
    quad = integrate.quad(lambda q: math.sqrt(m * m + q * q) * float(juttner_speed_pdf(q, m, T)), 0, np.inf)[0]
    assert abs(E.mean() - quad) < 3 * E.std() / math.sqrt(E.size)
    assert_allclose(juttner_mean_energy(m, T), quad, rtol=1e-9)


def test_sampler_is_deterministic():
    assert np.array_equal(sample_juttner(1.0, 0.5, n=1000, seed=7), sample_juttner(1.0, 0.5, n=1000, seed=7))


def test_temperature_inverse_round_trip():
    for T in (0.01, 0.3, 3.0, 30.0):
        assert_allclose(juttner_temperature(juttner_mean_energy(2.0, T, 1.5), 2.0, 1.5), T, rtol=1e-10)
    with pytest.raises(ValidationError):
        juttner_temperature(0.5, 1.0)


def test_cdf_quantile_inverts():
    cdf = JuttnerCDF(1.0, 0.5)
    k = cdf.quantile(0.3)
    assert_allclose(cdf(k), 0.3, atol=1e-6)
    assert cdf(0.0) == 0.0


def test_single_state_single_particle_fills_one_bin():
    s = WignerPhaseState(0, [[0, 0, 0]], [[0.2, 0.3, 0.4]])
    h = estimate_f1([s], bins=4)
    assert h.counts.sum() == 1 and np.count_nonzero(h.counts) == 1
    assert_allclose(h.total(), 1.0, rtol=1e-12)


def test_histogram_normalisation_and_mixing():
    rng = np.random.default_rng(1)
    edges = [np.linspace(-4, 4, 9)] * 3
    a = histogram_from_samples(rng.normal(size=(5000, 3)), edges)
    b = histogram_from_samples(rng.normal(0.5, 1.0, size=(5000, 3)), edges)
    assert abs(a.total() - 1) < 1e-10
    mix = a.mix(b, 0.3)
    assert abs(mix.total() - 1) < 1e-10
    for ma, mb, mm in zip(moments(a, 1.0).T.ravel(), moments(b, 1.0).T.ravel(), moments(mix, 1.0).T.ravel()):
        assert_allclose(mm, 0.3 * ma + 0.7 * mb, rtol=1e-12, atol=1e-15)


def test_speed_histogram_integrates_to_one():
    k = sample_juttner(1.0, 1.0, n=20_000, seed=2)
    bins = default_speed_bins(1.0, 1.0)
    h = histogram_from_samples(k, bins, speed=True)
    assert abs(h.total() - 1) < 1e-4


def test_estimate_rejects_empty_and_non_rest_frame():
    with pytest.raises(ValidationError):
        estimate_f1([], bins=4)
    s = WignerPhaseState(0, [[0, 0, 0], [1, 0, 0]], [[1.0, 0, 0], [1.0, 0, 0]])
    with pytest.raises(ValidationError):
        estimate_f1([s], bins=4, require_rest_frame=True, model=free_model([1.0, 1.0]))


def shell_states(n=200, seed=1):
    spec = EnsembleSpec("rel-restframe", E=12.0, R=1.0, N=8)
    return sample_shell(spec, n, seed=seed).states, spec.model


def test_invariance_identity_and_rotation():
    states, model = shell_states(60)
    bins = [np.linspace(-3, 3, 7)] * 3
    r0 = scalar_invariance_report(states, np.eye(4), bins, model=model)
    assert r0.chi2 == 0.0 and r0.passed
    r1 = scalar_invariance_report(states, rotation_lorentz(special_rotation()), bins, model=model)
    assert r1.relabel_identical and r1.mc_max_change < 1e-13


def test_invariance_under_generic_boosts():
    states, model = shell_states(120)
    bins = [np.linspace(-3, 3, 5)] * 3
    rng = np.random.default_rng(5)
    for _ in range(3):
        L = pure_boost(rng.uniform(-0.6, 0.6, 3)) @ boost_matrix(rng.uniform(-0.5, 0.5, 3))
        rep = scalar_invariance_report(states, L, bins, h=rng.uniform(-0.5, 0.5, 3), model=model)
        assert rep.passed


def test_invariance_rejects_improper_transformation():
    states, _ = shell_states(5)
    P = np.diag([1.0, -1.0, 1.0, 1.0])
    with pytest.raises(ValidationError):
        scalar_invariance_report(states, P, 4)


def test_juttner_moments_isotropic():
    k = sample_juttner(1.0, 1.0, n=200_000, seed=8)
    mf = moments_from_samples(k, 1.0)
    assert np.all(np.abs(mf.J[1:]) < 4 * mf.J_err[1:])
    assert np.all(np.abs(mf.T[0, 1:]) < 4 * mf.T_err[0, 1:])
    d = np.diag(mf.T)[1:]
    assert np.ptp(d) < 4 * np.max(np.diag(mf.T_err)[1:]) * math.sqrt(2)
    assert_allclose(mf.T, mf.T.T, atol=0)


def test_juttner_entropy_current_along_time():
    k = sample_juttner(1.0, 1.0, n=200_000, seed=9)
    h = histogram_from_samples(k, [np.linspace(-6, 6, 25)] * 3)
    S = moments(h, 1.0).S
    assert S[0] > 0
    assert np.all(np.abs(S[1:]) < 0.02 * S[0])


def test_perfect_fluid_diagonal_and_boosted():
    rho, p = 3.0, 0.7
    T = np.diag([rho, p, p, p])
    fl = perfect_fluid_decompose(T)
    assert_allclose([fl.energy_density, fl.pressure], [rho, p], rtol=1e-12)
    assert_allclose(fl.U, [1, 0, 0, 0], atol=1e-12)
    h = np.array([0.3, -0.2, 0.1])
    L = pure_boost(h)
    fl = perfect_fluid_decompose(L @ T @ L.T)
    assert_allclose(fl.U, np.concatenate([[math.sqrt(1 + h @ h)], h]), atol=1e-10)
    assert_allclose([fl.energy_density, fl.pressure], [rho, p], rtol=1e-10)


def test_perfect_fluid_rejects_spacelike_data():
    with pytest.raises((NumericError, ValidationError)):
        perfect_fluid_decompose(np.diag([-1.0, 1.0, 1.0, 1.0]) + np.array(
            [[0, 2, 0, 0], [2, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0.0]]))


def test_juttner_fluid_equation_of_state():
    # per unit density the pressure equals T for a Juttner gas
    T = 1.0
    k = sample_juttner(1.0, T, n=200_000, seed=10)
    mf = moments_from_samples(k, 1.0)
    fl = perfect_fluid_decompose(mf.T / mf.J[0])
    assert abs(fl.pressure - T) < 0.02


def test_juttner_fit_recovers_temperature():
    k = sample_juttner(1.0, 0.7, n=100_000, seed=11)
    fit = JuttnerFit(1.0).fit(k)
    assert abs(fit.T_ - 0.7) < 0.01
    assert fit.ks_test(k).pvalue > 0.01
    assert np.all(np.isfinite(fit.score_samples(k[:10])))
    assert fit.sample(5).shape == (5, 3)


def test_estimators_require_fit():
    with pytest.raises(NotFittedError):
        JuttnerFit().score_samples(np.zeros((1, 3)))
    with pytest.raises(NotFittedError):
        OneParticleDistribution().predict(np.zeros((1, 3)))


def test_one_particle_estimator_predicts_density():
    k = sample_juttner(1.0, 1.0, n=50_000, seed=12)
    est = OneParticleDistribution(bins=default_speed_bins(1.0, 1.0), speed=True).fit(k)
    pred = est.predict(np.array([[0.5, 0, 0], [100.0, 0, 0]]))
    assert pred[1] == 0.0
    # compare with the exact bin average of the density
    edges = est.histogram_.edges[0]
    j = np.searchsorted(edges, 0.5, side="right") - 1
    cdf = JuttnerCDF(1.0, 1.0)
    exact = (cdf(edges[j + 1]) - cdf(edges[j])) / (4 * np.pi / 3 * (edges[j + 1] ** 3 - edges[j] ** 3))
    assert_allclose(pred[0], exact, rtol=0.05)


def test_relative_coordinates_round_trip():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(4, 2, 3, 3))
    tr = RelativeCoordinates([1.0, 2.0, 0.5])
    Y = tr.fit_transform(X)
    assert Y.shape == (4, 6 + 2 * 6)
    assert_allclose(tr.inverse_transform(Y), X, atol=1e-13)
