"""Threshold channel estimate from a single pilot.

Every window sample is divided by the pilot symbol and kept when it clears
``3 * sigma_p``; the surviving values are used directly as integer
delay/Doppler shift coefficients, with no gain/Doppler structure imposed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .channel import _row_shift
from .frame import SparseSystem, window_indices
from .kernels import GridDims


@dataclass
class ThresholdEstimate:
    delay: np.ndarray      # kept delay shifts
    doppler: np.ndarray    # kept (integer) Doppler shifts
    coef: np.ndarray       # complex shift coefficients
    c_hat: np.ndarray      # full window response, zeros where rejected

    @property
    def n_taps(self) -> int:
        return self.coef.size


def pilot_sigma(snrp_db: float) -> float:
    """Noise standard deviation relative to the pilot amplitude."""
    return float((10 ** (snrp_db / 10)) ** -0.5)


def threshold_baseline(sys: SparseSystem, sigma_p: float, factor: float = 3.0) -> ThresholdEstimate:
    cfg, dims = sys.cfg, sys.dims
    if cfg.n_pilots != 1:
        raise ValueError("the threshold estimate needs a single-pilot frame")
    if sys.pilots is None:
        raise ValueError("system carries no pilot symbol")
    xp = np.sqrt(cfg.pilot_power) * sys.pilots.ravel()[0]
    if xp == 0:
        raise ValueError("zero pilot")
    resp = sys.y / xp
    keep = np.abs(resp) > factor * sigma_p
    l0, k0 = cfg.origin(dims)
    kz, lz = window_indices(cfg, dims)
    t = np.mod(lz - l0, dims.M)
    m = np.mod(kz - k0 + dims.N // 2, dims.N) - dims.N // 2
    c_hat = np.where(keep, resp, 0.0)
    return ThresholdEstimate(t[keep], m[keep], resp[keep], c_hat)


def shift_channel(est: ThresholdEstimate, dims: GridDims) -> sp.csr_array:
    """Channel matrix ``sum coef * (Doppler shift kron delay shift)``."""
    H = sp.csr_array((dims.MN, dims.MN), dtype=complex)
    for t, m, a in zip(est.delay, est.doppler, est.coef):
        H = H + sp.kron(_row_shift(dims.N, int(m)), a * _row_shift(dims.M, int(t)), format="csr")
    return H
