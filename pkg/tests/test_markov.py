import numpy as np
import pytest
from scipy import stats

from tbflip.lattice import LatticeWindow
from tbflip.markov import (FlipProcessConfig, PotentialPath, character_vector, derive_flip_constants,
                           flip_constants, flip_generator_dense, potential_at, sample_invariant, sample_path,
                           sample_trajectory, trajectory_rng)


def _cfg(n, rate=1.0):
    return FlipProcessConfig(rate, LatticeWindow(1, n))


def test_rate_must_be_positive():
    with pytest.raises(ValueError):
        _cfg(4, 0.0)


def test_invariant_spins_are_unbiased_and_independent():
    rng = trajectory_rng(7, 0)
    cfg = _cfg(2)
    draws = np.array([sample_invariant(cfg, rng) for _ in range(100_000)], dtype=float)
    assert np.all(np.abs(draws) == 1)
    assert np.all(np.abs(draws.mean(axis=0)) < 0.02)
    assert abs(np.mean(draws[:, 0] * draws[:, 1])) < 0.02


def test_invariant_replay_is_identical():
    cfg = _cfg(32)
    a = sample_invariant(cfg, trajectory_rng(11, 3))
    b = sample_invariant(cfg, trajectory_rng(11, 3))
    np.testing.assert_array_equal(a, b)


def test_streams_differ_by_index_and_stream():
    a = trajectory_rng(5, 0).random(4)
    assert not np.allclose(a, trajectory_rng(5, 1).random(4))
    assert not np.allclose(a, trajectory_rng(5, 0, stream=1).random(4))


def test_event_count_is_poisson():
    cfg = _cfg(16)
    rng = trajectory_rng(3, 0)
    counts = np.array([sample_path(cfg, 10.0, rng).n_events for _ in range(10_000)])
    assert abs(counts.mean() - 160) < 4
    assert abs(counts.var() / 160 - 1) < 0.1


def test_event_sites_are_uniform():
    cfg = _cfg(16)
    rng = trajectory_rng(4, 0)
    sites = np.concatenate([sample_path(cfg, 10.0, rng).sites for _ in range(500)])
    obs = np.bincount(sites, minlength=16)
    assert stats.chisquare(obs).pvalue > 0.01


def test_single_site_no_event_probability():
    cfg = _cfg(1)
    rng = trajectory_rng(5, 0)
    empty = np.mean([sample_path(cfg, 1.0, rng).n_events == 0 for _ in range(100_000)])
    assert abs(empty - np.exp(-1)) < 0.005


def test_path_invariants():
    path = sample_trajectory(_cfg(8), 5.0, 1, 2)
    assert np.all(np.diff(path.times) > 0)
    assert path.times[-1] <= 5.0
    assert path.seed == (1, 2)
    with pytest.raises(ValueError):
        PotentialPath(np.ones(3), [0.5, 0.4], [0, 1], 1.0)
    with pytest.raises(ValueError):
        PotentialPath(np.array([1, 0, 1]), [], [], 1.0)


def test_potential_at_conventions():
    path = PotentialPath(np.array([1, -1, 1]), [0.5, 1.0, 1.5], [0, 2, 0], 2.0)
    np.testing.assert_array_equal(potential_at(path, 0.0), [1, -1, 1])
    np.testing.assert_array_equal(potential_at(path, 0.5), [-1, -1, 1])
    np.testing.assert_array_equal(potential_at(path, 1.0), [-1, -1, -1])
    np.testing.assert_array_equal(potential_at(path, 2.0), [1, -1, -1])
    with pytest.raises(ValueError):
        potential_at(path, 2.5)


def test_path_text_roundtrip():
    path = sample_trajectory(_cfg(6, 2.0), 3.0, 9, 4)
    back = PotentialPath.from_text(path.to_text())
    np.testing.assert_array_equal(back.initial, path.initial)
    np.testing.assert_array_equal(back.times, path.times)
    np.testing.assert_array_equal(back.sites, path.sites)
    assert back.t_max == path.t_max and back.rate == path.rate and back.seed == path.seed
    assert back.window == path.window


def test_dense_generator_single_site():
    np.testing.assert_array_equal(flip_generator_dense(1, 1.0), [[1, -1], [-1, 1]])


def test_characters_are_eigenvectors():
    n = 4
    B = flip_generator_dense(n, 1.0)
    np.testing.assert_allclose(B @ np.ones(2**n), 0, atol=1e-14)
    np.testing.assert_allclose(np.ones(2**n) @ B, 0, atol=1e-14)
    for A in ([1], [0, 3], [0, 1, 2]):
        e = character_vector(n, A)
        np.testing.assert_allclose(B @ e, 2 * len(A) * e, atol=1e-13)
    ev = np.linalg.eigvalsh(B)
    np.testing.assert_allclose(np.unique(np.round(ev, 10)), [0, 2, 4, 6, 8])


def test_characters_are_orthonormal():
    n = 3
    vecs = [character_vector(n, A) for A in ([], [0], [1], [0, 2], [0, 1, 2])]
    G = np.array([[np.mean(a * b) for b in vecs] for a in vecs])
    np.testing.assert_allclose(G, np.eye(len(vecs)), atol=1e-15)


@pytest.mark.parametrize("rate", [0.5, 1.0, 3.0])
def test_flip_constants_closed_form_and_derived(rate):
    mc = flip_constants(rate)
    assert mc.gap_T * 2 * rate == pytest.approx(1.0)
    assert mc.sector_gamma == 0.0
    assert mc.nondeg_chi**2 * rate**2 == pytest.approx(0.5)
    dv = derive_flip_constants(rate)
    assert dv.gap_T == pytest.approx(mc.gap_T, rel=1e-12)
    assert dv.sector_gamma == 0.0
    assert dv.nondeg_chi == pytest.approx(mc.nondeg_chi, rel=1e-12)


def test_path_text_with_numpy_scalars():
    path = PotentialPath(np.array([1, -1]), [0.5], [1], np.float64(2.0), np.float64(1.5))
    back = PotentialPath.from_text(path.to_text())
    assert back.t_max == 2.0 and back.rate == 1.5
