import numpy as np
import pytest

from otfs_mp.channel import ChannelPath, DDChannel, apply_channel, sample_channel
from otfs_mp.crlb import (channel_bounds, crlb_bounds, derivatives, fisher_matrix,
                          normalized_bounds)
from otfs_mp.frame import FrameConfig, extract_observation, pilot_grid, qpsk_pilots
from otfs_mp.kernels import GridDims

DIMS = GridDims(32, 16)
CFG = FrameConfig(M_p=3, l_max=4, k_max=2, pilot_power=100.0)


def window(ch, pilots, wf):
    return extract_observation(apply_channel(ch, pilot_grid(CFG, pilots, DIMS), wf), CFG, DIMS)


def with_param(ch, i, dh=0.0, dk=0.0):
    paths = list(ch.paths)
    p = paths[i]
    paths[i] = ChannelPath(p.gain + dh, p.delay, p.doppler, p.kappa + dk)
    return DDChannel(tuple(paths), ch.n_hat, ch.dims)


def channel():
    return DDChannel((ChannelPath(0.7 + 0.2j, 1, 1, 0.31), ChannelPath(-0.4j, 3, -2, -0.12)), 1, DIMS)


@pytest.mark.parametrize("wf", ["bi", "rect"])
def test_derivatives_match_finite_differences(wf):
    ch = channel()
    pilots = qpsk_pilots(CFG, 0)
    D = derivatives(ch, CFG, pilots, wf)
    h = 1e-6
    for i in range(ch.P):
        fd_h = (window(with_param(ch, i, dh=h), pilots, wf) - window(with_param(ch, i, dh=-h), pilots, wf)) / (2 * h)
        fd_k = (window(with_param(ch, i, dk=h), pilots, wf) - window(with_param(ch, i, dk=-h), pilots, wf)) / (2 * h)
        assert np.allclose(D[:, i], fd_h, atol=1e-7)
        assert np.allclose(D[:, ch.P + i], fd_k, atol=1e-6 * np.abs(fd_k).max())


def test_fisher_symmetric_psd_and_linear_in_gamma():
    ch = sample_channel(3, 5, 4, 2, DIMS)
    pilots = qpsk_pilots(CFG, 3)
    I1 = fisher_matrix(ch, CFG, pilots, 1.0)
    I10 = fisher_matrix(ch, CFG, pilots, 10.0)
    assert np.allclose(I1, I1.T)
    assert np.linalg.eigvalsh(I1).min() > -1e-9 * np.abs(I1).max()
    assert np.allclose(I10, 10 * I1)
    b1 = crlb_bounds(I1).values
    assert np.allclose(crlb_bounds(I10).values, b1 / 10)


def test_gamma_must_be_positive():
    with pytest.raises(ValueError):
        fisher_matrix(channel(), CFG, qpsk_pilots(CFG, 0), 0.0)


def test_bounds_invert_diagonal_fisher():
    b = crlb_bounds(np.diag([2.0, 4.0]))
    assert b.values.tolist() == [0.5, 0.25]
    assert b.rank == 2 and not b.pseudo_inverse


def test_singular_fisher_uses_pseudo_inverse():
    b = crlb_bounds(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert b.pseudo_inverse and b.rank == 1
    assert np.all(np.isfinite(b.values))


def test_normalisation():
    h, k = normalized_bounds(np.array([1.0, 3.0, 0.1, 0.3]), [1.0, 1j], [0.2, -0.4])
    assert h == pytest.approx(2.0)
    assert k == pytest.approx(0.4 / 0.2)
    with pytest.raises(ValueError):
        normalized_bounds(np.ones(3), [1.0], [0.1])


def test_normalisation_ignores_common_gain_phase():
    b = np.array([0.2, 0.1, 0.01, 0.02])
    h = np.array([0.7 + 0.2j, -0.4j])
    assert normalized_bounds(b, h, [0.3, -0.1]) == normalized_bounds(b, h * np.exp(1.3j), [0.3, -0.1])


def test_identical_paths_normalisation():
    P, per = 3, 0.05
    h, _ = normalized_bounds(np.full(2 * P, per), np.full(P, 0.5), np.full(P, 0.2))
    assert h == pytest.approx(P * per / (P * 0.25))


def test_rect_matches_bi_when_delay_phases_vanish():
    # zero delay span: every observed row has l = l_p = 0
    cfg = FrameConfig(N_p=2, l_max=0, k_max=2, pilot_power=10.0)
    ch = DDChannel((ChannelPath(0.5 + 0.5j, 0, 1, 0.3),), 1, DIMS)
    pilots = qpsk_pilots(cfg, 0)
    assert np.allclose(fisher_matrix(ch, cfg, pilots, 2.0, "bi"),
                       fisher_matrix(ch, cfg, pilots, 2.0, "rect"), rtol=1e-12, atol=0)


def test_bounds_scale_with_pilot_power():
    ch = channel()
    pilots = qpsk_pilots(CFG, 0)
    a = channel_bounds(ch, CFG, pilots, 1.0)
    b = channel_bounds(ch, CFG.with_(pilot_power=1000.0), pilots, 1.0)
    assert np.allclose(np.array(a) / np.array(b), 10.0)
