import numpy as np
import pytest

from otfs_mp.baseline import pilot_sigma, shift_channel, threshold_baseline
from otfs_mp.channel import ChannelPath, DDChannel, add_noise, apply_channel, build_H
from otfs_mp.frame import FrameConfig, make_system, pilot_grid
from otfs_mp.harness import matrix_nmse
from otfs_mp.kernels import GridDims

DIMS = GridDims(32, 16)
CFG = FrameConfig(l_max=4, k_max=2)


def test_pilot_sigma():
    assert pilot_sigma(40.0) == pytest.approx(1e-2)
    assert pilot_sigma(0.0) == 1.0


def test_noiseless_integer_path_is_exact():
    ch = DDChannel((ChannelPath(0.6 - 0.3j, 3, -1),), 0, DIMS)
    cfg = CFG.with_(pilot_power=100.0)
    y = apply_channel(ch, pilot_grid(cfg, [1j], DIMS), "bi")
    est = threshold_baseline(make_system(y, cfg, [1j], DIMS), pilot_sigma(40.0))
    assert est.n_taps == 1
    assert (est.delay[0], est.doppler[0]) == (3, -1)
    assert matrix_nmse(shift_channel(est, DIMS), build_H(ch, "bi")) < 1e-28


def test_noise_only_gives_empty_estimate():
    cfg = CFG.with_(pilot_power=10 ** 4)
    y = add_noise(np.zeros((DIMS.N, DIMS.M)), 100.0, 1)   # far below 3 sigma
    est = threshold_baseline(make_system(y, cfg, [1.0], DIMS), pilot_sigma(40.0))
    assert est.n_taps == 0
    assert shift_channel(est, DIMS).nnz == 0


def test_single_pilot_only():
    sys = make_system(np.zeros((DIMS.N, DIMS.M)), CFG.with_(M_p=2), [1.0, 1.0], DIMS)
    with pytest.raises(ValueError):
        threshold_baseline(sys, 0.1)


def test_wrapped_doppler_shift():
    ch = DDChannel((ChannelPath(1.0, 0, -2),), 0, DIMS)
    y = apply_channel(ch, pilot_grid(CFG, [1.0], DIMS), "bi")
    est = threshold_baseline(make_system(y, CFG, [1.0], DIMS), 0.01)
    assert est.doppler.tolist() == [-2]
