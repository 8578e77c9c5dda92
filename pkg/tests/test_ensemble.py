import numpy as np
import pytest

from tbflip.ensemble import (EnsembleSpec, MeanField, characteristic_function, fit_diffusion_cf, fit_diffusion_m2,
                             loglog_slope, run_ensemble, second_moment)
from tbflip.evolution import evolve_checkpoints
from tbflip.lattice import LatticeWindow, WaveFunction, nearest_neighbor
from tbflip.markov import FlipProcessConfig, sample_trajectory


def _spec(lam=1.0, side=128, n_traj=20, times=(1.0, 2.0, 4.0), d=1, seed=17):
    return EnsembleSpec(nearest_neighbor(d), lam, 1.0, LatticeWindow(d, side), n_traj, seed, np.array(times))


@pytest.fixture(scope="module")
def field():
    return run_ensemble(_spec(n_traj=30, times=np.linspace(0.5, 8.0, 16)))


def test_spec_validation():
    with pytest.raises(ValueError):
        _spec(n_traj=0)
    with pytest.raises(ValueError):
        _spec(times=(2.0, 1.0))
    with pytest.raises(ValueError):
        EnsembleSpec(nearest_neighbor(1), 1.0, 0.0, LatticeWindow(1, 8), 2, 0, [1.0])


def test_single_trajectory_is_its_own_mean():
    spec = _spec(n_traj=1)
    f = run_ensemble(spec)
    path = sample_trajectory(FlipProcessConfig(1.0, spec.window), spec.t_max, spec.master_seed, 0)
    amps = evolve_checkpoints(WaveFunction.delta(spec.window), path, spec.checkpoints, spec.h, spec.lam)
    np.testing.assert_allclose(f.mean, np.abs(amps) ** 2, atol=1e-15)
    assert np.all(np.isnan(f.site_stderr()))


def test_mean_field_is_a_probability(field):
    assert np.all(field.mean >= -1e-15)
    np.testing.assert_allclose(field.trace(), 1.0, atol=1e-8)
    assert field.max_norm_drift < 1e-9


def test_same_seed_is_bitwise_reproducible():
    a = run_ensemble(_spec(n_traj=5))
    b = run_ensemble(_spec(n_traj=5))
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.site_stderr(), b.site_stderr())
    c = run_ensemble(_spec(n_traj=5, seed=18))
    assert not np.array_equal(a.mean, c.mean)


def test_free_field_has_no_disorder_dependence():
    f = run_ensemble(_spec(lam=0.0, n_traj=6, times=(1.0, 3.0, 10.0)))
    assert np.abs(f.batch_sums / f.batch_counts[:, None, None] - f.mean).max() < 1e-12
    assert np.nanmax(f.site_stderr()) < 1e-12
    m2, valid = second_moment(f)
    np.testing.assert_allclose(m2.value, 2 * f.times**2, rtol=1e-6)
    assert valid.all()


def test_characteristic_function_basic_identities(field):
    cf0, _ = characteristic_function(field, [0.0])
    np.testing.assert_allclose(cf0.value, 1.0, atol=1e-8)
    k = [3 * 2 * np.pi / field.window.side]
    cf_p, kp = characteristic_function(field, k)
    cf_m, km = characteristic_function(field, [-k[0]])
    np.testing.assert_allclose(kp, -km)
    np.testing.assert_allclose(cf_m.value, np.conj(cf_p.value), atol=1e-12)


def test_characteristic_function_of_point_mass():
    f = run_ensemble(_spec(n_traj=2, times=(0.0, 1.0)))
    for m in (1, 5, 40):
        cf, _ = characteristic_function(f, [2 * np.pi * m / f.window.side])
        assert cf.value[0] == 1.0
    m2, _ = second_moment(f)
    assert m2.value[0] == 0.0


def test_second_moment_grows(field):
    m2, valid = second_moment(field)
    assert valid.all()
    diff = np.diff(m2.value)
    se = np.std(np.diff(m2.replicates, axis=1), axis=0, ddof=1)
    assert np.all(diff >= -3 * se)
    assert np.all(m2.stderr > 0)


def _synthetic_field(window, times, density_fn, n_batches=2):
    mean = np.array([density_fn(t) for t in times])
    sums = np.repeat(mean[None], n_batches, axis=0)
    return MeanField(np.asarray(times, dtype=float), window, mean, sums, np.ones(n_batches), n_batches)


def test_m2_fit_on_exact_linear_moment():
    w = LatticeWindow(1, 64)
    c = 0.8

    def rho(t):
        out = np.zeros(64)
        p = c * t / 2 / 100.0  # mass p at each of +-10
        out[0], out[10], out[-10] = 1 - 2 * p, p, p
        return out

    f = _synthetic_field(w, np.linspace(1, 10, 10), rho)
    est = fit_diffusion_m2(f)
    assert est.D[0, 0] == pytest.approx(c / 2, rel=1e-12)
    assert est.r2 == pytest.approx(1.0, abs=1e-12)
    assert not est.flags


def test_m2_fit_flags_ballistic_growth():
    f = run_ensemble(_spec(lam=0.0, n_traj=2, side=256, times=np.linspace(4.0, 40.0, 10)))
    est = fit_diffusion_m2(f)
    assert est.flagged
    assert any("exponent" in s for s in est.flags)
    m2, _ = second_moment(f)
    assert loglog_slope(f.times, m2.value) == pytest.approx(2.0, abs=1e-6)


def test_m2_fit_needs_enough_points(field):
    with pytest.raises(ValueError):
        fit_diffusion_m2(field, (7.9, 8.0))


def test_cf_fit_on_exact_gaussian():
    w = LatticeWindow(1, 128)
    D = 1.7
    kgrid = w.dual_grid()[:, 0]
    x = w.offsets()[:, 0]

    def rho(t):
        cf = np.exp(-t * D * kgrid**2)
        return (np.exp(1j * np.outer(x, kgrid)) @ cf).real / w.n_sites

    f = _synthetic_field(w, np.linspace(1, 5, 9), rho)
    ks = [np.array([m * 2 * np.pi / 128]) for m in range(1, 7)]
    est = fit_diffusion_cf(f, ks, tau=1.0)
    assert abs(est.D[0, 0] - D) < 1e-10
    assert abs(est.diagnostics["intercept"]) < 1e-10
    assert est.r2 == pytest.approx(1.0, abs=1e-12)
    est4 = fit_diffusion_cf(f, [k * 2 for k in ks], tau=4.0, times=[4.0])
    assert abs(est4.D[0, 0] - D) < 1e-10


def test_cf_and_m2_fits_agree_on_one_ensemble():
    f = run_ensemble(_spec(side=256, n_traj=200, times=np.linspace(1.0, 25.0, 25), seed=5))
    m2 = fit_diffusion_m2(f)
    ks = [np.array([s]) for s in np.sqrt(np.arange(1, 7) / 6 * 2 / (3.2 * 25.0))]
    cf = fit_diffusion_cf(f, ks, 1.0, f.times[f.times >= 12.5])
    assert not m2.flags and not cf.flags
    joint = np.hypot(m2.trace_stderr(), cf.trace_stderr())
    assert abs(m2.D[0, 0] - cf.D[0, 0]) <= 3 * joint
    assert abs(m2.D[0, 0] - 3.2094) / 3.2094 < 0.1


def test_cf_fit_off_diagonal_vanishes_by_reflection_symmetry():
    w = LatticeWindow(2, 32)
    spec = EnsembleSpec(nearest_neighbor(2), 1.0, 1.0, w, 40, 5, np.linspace(0.25, 4.0, 16))
    f = run_ensemble(spec)
    dk = 2 * np.pi / 32
    dirs = [(1, 0), (2, 0), (0, 1), (0, 2), (1, 1), (1, -1), (-1, 1), (2, 1), (2, -1), (1, 2), (1, -2)]
    est = fit_diffusion_cf(f, [dk * np.array(v, float) for v in dirs], 1.0, f.times[f.times >= 2.0])
    assert abs(est.D[0, 1]) <= 3 * est.stderr[0, 1]
    assert est.D[0, 1] == est.D[1, 0]
