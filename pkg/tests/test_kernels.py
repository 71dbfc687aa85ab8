import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from otfs_mp.kernels import (GridDims, dd_phase, phi, phi_prime, spread_f, spread_f_dkappa,
                             spread_f_series)

DIMS = GridDims(128, 32)

# pinned from a 30-digit mpmath evaluation of the N-term geometric series
GOLD_F_0_03 = 0.524858644284306 + 0.679394013781206j
GOLD_PHI = 0.142053232771506 + 0.111386308154432j


def brute_series(q, kappa, N):
    n = np.arange(N)
    return np.sum(np.exp(2j * np.pi * n * (q + kappa) / N)) / N


def test_integer_doppler_limit_is_one():
    assert spread_f(0, 0.0, 32) == pytest.approx(1.0 + 0j, abs=1e-15)


def test_integer_offset_vanishes():
    assert abs(spread_f(3, 0.0, 32)) < 1e-14


def test_golden_fractional_value():
    assert spread_f(0, 0.3, 32) == pytest.approx(GOLD_F_0_03, abs=1e-12)


def test_requires_two_bins():
    with pytest.raises(ValueError):
        spread_f(0, 0.1, 1)


def test_near_singularity_is_smooth():
    for eps in (1e-7, -1e-7, 1e-9):
        assert abs(spread_f(0, eps, 32) - brute_series(0, eps, 32)) < 1e-12
    assert abs(spread_f(32, 1e-8, 32) - brute_series(32, 1e-8, 32)) < 1e-12


def test_vectorised_matches_scalar():
    q = np.arange(-3, 4)
    vec = spread_f(q, 0.2, 16)
    assert np.allclose(vec, [spread_f(int(v), 0.2, 16) for v in q], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(q=st.integers(-64, 64), kappa=st.floats(-0.5, 0.5), N=st.integers(2, 64))
def test_series_identity(q, kappa, N):
    assert abs(spread_f(q, kappa, N) - brute_series(q, kappa, N)) < 1e-10


@settings(max_examples=100, deadline=None)
@given(kappa=st.floats(-0.5, 0.5), N=st.integers(2, 64))
def test_unit_partition(kappa, N):
    total = np.sum(spread_f(np.arange(N), kappa, N))
    assert abs(total - 1) < 1e-10


@settings(max_examples=100, deadline=None)
@given(q=st.integers(-8, 8), kappa=st.floats(-0.5, 0.5))
def test_mirror_magnitude(q, kappa):
    assert abs(abs(spread_f(q, kappa, 32)) - abs(spread_f(-q, -kappa, 32))) < 1e-12


def test_series_helper_agrees():
    q = np.arange(-5, 6)
    assert np.allclose(spread_f(q, 0.37, 32), spread_f_series(q, 0.37, 32), atol=1e-13)


def test_phi_reduces_to_f_without_delay():
    for d in (-4, 0, 3):
        assert phi(1, 0.2, 0, d, DIMS) == pytest.approx(spread_f(1, 0.2, 32), abs=1e-15)


def test_phi_integer_phase():
    assert phi(0, 0.0, 0, 2, DIMS) == pytest.approx(1.0, abs=1e-15)
    assert phi(0, 0.0, 5, 3, DIMS) == pytest.approx(np.exp(-2j * np.pi * 15 / 4096), abs=1e-14)


def test_phi_golden():
    assert phi(1, 0.25, 2, -1, DIMS) == pytest.approx(GOLD_PHI, abs=1e-12)


def test_phi_prime_at_origin():
    n = np.arange(1, 32)
    want = np.sum(1j * 2 * np.pi * n / 32) / 32
    assert phi_prime(0, 0.0, 0, 0, DIMS) == pytest.approx(want, abs=1e-12)


def test_phi_prime_matches_finite_difference():
    rng = np.random.default_rng(11)
    h = 1e-6
    for _ in range(100):
        q = int(rng.integers(-3, 4))
        kappa = float(rng.uniform(-0.49, 0.49))
        t = int(rng.integers(0, 128))
        d = int(rng.integers(-4, 5))
        fd = (phi(q, kappa + h, t, d, DIMS) - phi(q, kappa - h, t, d, DIMS)) / (2 * h)
        an = phi_prime(q, kappa, t, d, DIMS)
        assert abs(fd - an) <= 1e-4 * max(abs(an), 1e-3)


def test_phi_prime_continuous_across_singularity():
    a = phi_prime(0, 1e-7, 3, 1, DIMS)
    b = phi_prime(0, -1e-7, 3, 1, DIMS)
    assert abs(a - b) < 1e-5


def test_dkappa_series_matches_difference():
    h = 1e-6
    for q, k in ((0, 0.1), (2, -0.4), (-1, 0.49)):
        fd = (spread_f(q, k + h, 32) - spread_f(q, k - h, 32)) / (2 * h)
        assert abs(fd - spread_f_dkappa(q, k, 32)) < 1e-6


def test_dd_phase_unit_modulus():
    assert abs(abs(dd_phase(7, -3, 0.3, DIMS)) - 1) < 1e-15


def test_grid_dims_physical():
    g = GridDims(128, 32, delta_f=2e3)
    assert g.MN == 4096
    assert g.T == pytest.approx(5e-4)
    with pytest.raises(ValueError):
        GridDims(0, 4)
