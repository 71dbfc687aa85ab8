import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from otfs_mp.channel import (ChannelPath, DDChannel, add_noise, apply_channel, build_H,
                             sample_channel)
from otfs_mp.kernels import GridDims

DIMS = GridDims(16, 8)


def rand_grid(rng, dims=DIMS):
    return rng.standard_normal((dims.N, dims.M)) + 1j * rng.standard_normal((dims.N, dims.M))


def one_path(gain=1.0, l=0, k=0, kappa=0.0, n_hat=1, dims=DIMS):
    return DDChannel((ChannelPath(gain, l, k, kappa),), n_hat, dims)


@pytest.mark.parametrize("wf", ["bi", "rect"])
def test_identity_channel(wf):
    x = rand_grid(np.random.default_rng(0))
    assert np.allclose(apply_channel(one_path(), x, wf), x, atol=1e-14)
    assert np.allclose(build_H(one_path(), wf).toarray(), np.eye(DIMS.MN), atol=1e-14)


def test_integer_shift_bi():
    x = rand_grid(np.random.default_rng(1))
    ch = one_path(l=3, k=2)
    y = apply_channel(ch, x, "bi")
    ph = np.exp(2j * np.pi * (-3 * 2) / DIMS.MN)
    assert np.allclose(y, ph * np.roll(x, (2, 3), axis=(0, 1)), atol=1e-13)


def test_rect_edge_rows_follow_printed_model():
    x = np.zeros((DIMS.N, DIMS.M), dtype=complex)
    x[1, DIMS.M - 1] = 1.0        # wraps into delay row 1 under l = 2
    y = apply_channel(one_path(l=2, k=0), x, "rect")
    ph = np.exp(-2j * np.pi / DIMS.N)
    assert abs(y[1, 1] - (DIMS.N - 1) / DIMS.N * ph) < 1e-13
    assert abs(y[0, 1] + ph / DIMS.N) < 1e-13
    assert abs(y[2, 1] + ph / DIMS.N) < 1e-13


@pytest.mark.parametrize("l,k,kappa", [(2, 0, 0.0), (3, 1, 0.3), (0, -2, -0.4), (5, 2, 0.5)])
def test_rect_matches_time_domain_away_from_wrap(l, k, kappa):
    # oracle: delay and Doppler applied to the serialised rectangular-pulse
    # signal; N odd and every Doppler offset kept so no truncation error
    from otfs_mp.modem import isfft, sfft, to_time_rect
    dims = GridDims(16, 7)
    x = rand_grid(np.random.default_rng(5), dims)
    y = apply_channel(DDChannel((ChannelPath(1.0, l, k, kappa),), 3, dims), x, "rect")
    n = np.arange(dims.MN)
    r = np.roll(to_time_rect(isfft(x)), l) * np.exp(2j * np.pi * (k + kappa) * (n - l) / dims.MN)
    ref = sfft(np.fft.fft(r.reshape(dims.N, dims.M), axis=1, norm="ortho"))
    assert np.allclose(y[:, l:], ref[:, l:], atol=1e-12)


@pytest.mark.parametrize("wf", ["bi", "rect"])
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), P=st.integers(1, 6), n_hat=st.integers(0, 2))
def test_matrix_matches_direct_sum(wf, seed, P, n_hat):
    rng = np.random.default_rng(seed)
    ch = sample_channel(seed, P, 4, 2, DIMS, n_hat)
    x = rand_grid(rng)
    direct = apply_channel(ch, x, wf)
    mat = (build_H(ch, wf) @ x.ravel()).reshape(x.shape)
    assert np.linalg.norm(mat - direct) <= 1e-10 * np.linalg.norm(direct)


@pytest.mark.parametrize("wf", ["bi", "rect"])
def test_linearity(wf):
    rng = np.random.default_rng(4)
    ch = sample_channel(4, 3, 4, 2, DIMS)
    a, b = rand_grid(rng), rand_grid(rng)
    lhs = apply_channel(ch, 2 * a - 1j * b, wf)
    assert np.allclose(lhs, 2 * apply_channel(ch, a, wf) - 1j * apply_channel(ch, b, wf), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(kappa=st.floats(-0.5, 0.5), n_hat=st.integers(0, 3))
def test_single_path_gain_bounds(kappa, n_hat):
    # bi: H is a sum of unitary shifts with coefficients f(q, kappa), so
    # |sum f| <= ||H||_2 <= sum |f|
    from otfs_mp.kernels import spread_f
    ch = one_path(l=1, k=1, kappa=kappa, n_hat=n_hat)
    f = spread_f(np.arange(-n_hat, n_hat + 1), kappa, DIMS.N)
    s = np.linalg.svd(build_H(ch, "bi").toarray(), compute_uv=False)
    assert abs(f.sum()) - 1e-12 <= s[0] <= np.abs(f).sum() + 1e-12


def test_build_h_is_sparse():
    ch = sample_channel(3, 6, 4, 2, DIMS, 1)
    H = build_H(ch, "bi")
    assert sp.issparse(H)
    assert H.nnz <= 6 * 3 * DIMS.MN


def test_noise_variance():
    y = np.zeros(200_000, dtype=complex)
    n = add_noise(y, 4.0, 0)
    assert np.mean(np.abs(n) ** 2) == pytest.approx(0.25, rel=0.02)
    assert abs(np.mean(n.real ** 2) - np.mean(n.imag ** 2)) < 0.005


def test_noise_reproducible_and_infinite_precision():
    y = np.ones(10)
    assert np.array_equal(add_noise(y, 1.0, 5), add_noise(y, 1.0, 5))
    assert np.array_equal(add_noise(y, np.inf, 5), y.astype(complex))
    with pytest.raises(ValueError):
        add_noise(y, 0.0, 1)


def test_json_round_trip():
    ch = sample_channel(9, 5, 4, 2, DIMS, 2)
    back = DDChannel.from_json(ch.to_json())
    assert back == ch


def test_sample_channel_layout():
    ch = sample_channel(0, 6, 10, 4, GridDims(128, 32))
    assert ch.paths[0].delay == 0
    assert all(1 <= p.delay <= 10 for p in ch.paths[1:])
    assert all(abs(p.doppler) <= 4 and abs(p.kappa) <= 0.5 for p in ch.paths)
    assert len({(p.delay, p.doppler) for p in ch.paths}) == 6


def test_sample_channel_gain_power():
    P = 4
    g = np.array([p.gain for s in range(2000) for p in sample_channel(s, P, 10, 4, DIMS).paths])
    assert np.mean(np.abs(g) ** 2) == pytest.approx(1 / P, rel=0.05)


def test_sample_channel_capacity():
    with pytest.raises(ValueError):
        sample_channel(0, 5, 1, 1, DIMS)


def test_path_validation():
    with pytest.raises(ValueError):
        ChannelPath(1.0, 0, 0, 0.6)
    with pytest.raises(ValueError):
        ChannelPath(1.0, -1, 0)
    with pytest.raises(ValueError):
        DDChannel((ChannelPath(1.0, 1, 1), ChannelPath(0.5, 1, 1)), 1, DIMS)


def test_unknown_waveform():
    with pytest.raises(ValueError):
        apply_channel(one_path(), np.zeros((DIMS.N, DIMS.M)), "ofdm")


def test_grid_shape_checked():
    with pytest.raises(ValueError):
        apply_channel(one_path(), np.zeros((DIMS.M, DIMS.N)), "bi")
