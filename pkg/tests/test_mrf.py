import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import enumerate_energies
from streamderain.core import ShapeError
from streamderain.mrf import PixelEnergy, build_energy, energy_of, min_cut_solve


def random_energy(g, shape=(4, 4), alpha=0.1, beta=0.05, sigma2=0.02):
    X, B, F, R = g.random((4,) + shape)
    H_prev = (g.random(shape) > 0.5).astype(np.uint8)
    return build_energy(X, B, F, 0.2 * R, sigma2, H_prev, alpha, beta)


def test_exact_background_gives_empty_mask():
    g = np.random.default_rng(0)
    B, F, R = g.random((3, 8, 8))
    e = build_energy(B + R, B, F, R, 0.01, np.zeros((8, 8)), 0.3, 0.15)
    # zero up to the rounding of (B + R) - B - R
    assert np.all(e.cost0 < 1e-25)
    assert np.all(e.cost1 > e.cost0)
    assert not np.any(min_cut_solve(e))


def test_decoupled_pixels():
    g = np.random.default_rng(1)
    c0, c1 = g.random((2, 6, 6))
    H = min_cut_solve(PixelEnergy(c0, c1, 0.0))
    np.testing.assert_array_equal(H, (c1 < c0).astype(np.uint8))


@pytest.mark.parametrize("seed", range(10))
def test_matches_exhaustive_enumeration(seed):
    e = random_energy(np.random.default_rng(seed))
    all_e = enumerate_energies(e.cost0, e.cost1, e.alpha)
    got = energy_of(e, min_cut_solve(e))
    assert got <= all_e.min() + 1e-9 * max(1.0, abs(all_e.min()))


def test_large_cost1_gives_zero_mask():
    H = min_cut_solve(PixelEnergy(np.zeros((5, 5)), np.full((5, 5), 1e9), 0.5))
    assert not np.any(H)


def test_symmetric_energy_prefers_zero():
    c = np.random.default_rng(2).random((5, 5))
    assert not np.any(min_cut_solve(PixelEnergy(c, c.copy(), 0.3)))
    assert not np.any(min_cut_solve(PixelEnergy(np.ones((4, 4)), np.ones((4, 4)), 0.0)))


def test_energy_of_examples():
    c0 = np.arange(4.0).reshape(2, 2)
    c1 = 10 + c0
    e = PixelEnergy(c0, c1, 0.7)
    assert energy_of(e, np.zeros((2, 2))) == c0.sum()
    assert energy_of(e, np.ones((2, 2))) == c1.sum()
    checker = np.array([[0, 1], [1, 0]])
    assert energy_of(e, checker) == pytest.approx(c0[0, 0] + c0[1, 1] + c1[0, 1] + c1[1, 0]
                                                  + 4 * 0.7)


def test_temporal_term_in_unaries():
    z = np.zeros((4, 4))
    H_prev = np.zeros((4, 4), dtype=np.uint8)
    H_prev[1, 2] = 1
    e = build_energy(z, z, z, z, 1.0, H_prev, 0.3, 0.0)
    np.testing.assert_allclose(e.cost0, 0.3 * H_prev)
    np.testing.assert_allclose(e.cost1, 0.3 * (1 - H_prev))
    e = build_energy(z, z, z, z, 1.0, H_prev, 0.3, 0.0, alpha_temporal=2.0)
    np.testing.assert_allclose(e.cost0, 2.0 * H_prev)
    assert e.alpha == 0.3


def test_errors():
    z = np.zeros((4, 4))
    with pytest.raises(ValueError):
        build_energy(z, z, z, z, 0.0, z, 0.1, 0.1)
    with pytest.raises(ValueError):
        PixelEnergy(z, z, -0.1)
    with pytest.raises(ShapeError):
        build_energy(z, z, z, np.zeros((4, 5)), 1.0, z, 0.1, 0.1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 0.5), st.floats(0.0, 0.2))
def test_beta_monotone(seed, alpha, beta):
    g = np.random.default_rng(seed)
    X, B, F = g.random((3, 8, 8))
    H_prev = (g.random((8, 8)) > 0.7).astype(np.uint8)
    counts = []
    for db in (0.0, 0.05, 0.2, 1.0):
        e = build_energy(X, B, F, np.zeros((8, 8)), 0.05, H_prev, alpha, beta + db)
        counts.append(int(min_cut_solve(e).sum()))
    assert counts == sorted(counts, reverse=True)


def test_deterministic_and_binary():
    e = random_energy(np.random.default_rng(3), shape=(16, 16))
    a, b = min_cut_solve(e), min_cut_solve(e)
    np.testing.assert_array_equal(a, b)
    assert a.dtype == np.uint8 and set(np.unique(a)) <= {0, 1}
