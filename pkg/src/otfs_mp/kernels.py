"""Scalar delay-Doppler kernels: the fractional-Doppler spreading function and
its phase-augmented form used by the channel model, the dictionary and the
estimator.

All functions broadcast over numpy arrays of ``q``/``kappa``/``t``/``d``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

# below this distance (in units of q + kappa) from a multiple of N the closed
# form is 0/0 and the geometric series is used instead
SINGULAR_TOL = 1e-6


@dataclass(frozen=True)
class GridDims:
    """Delay-Doppler grid size.

    ``M`` delay bins (subcarriers), ``N`` Doppler bins (time slots).  The
    optional ``delta_f`` is the subcarrier spacing in Hz; ``T = 1/delta_f``.
    """

    M: int
    N: int
    delta_f: Optional[float] = None

    def __post_init__(self):
        if int(self.M) != self.M or int(self.N) != self.N or self.M < 1 or self.N < 1:
            raise ValueError(f"grid dims must be positive integers, got M={self.M}, N={self.N}")

    @property
    def MN(self) -> int:
        return self.M * self.N

    @property
    def T(self) -> Optional[float]:
        return None if self.delta_f is None else 1.0 / self.delta_f

    def delay_seconds(self, l):
        return l / (self.M * self.delta_f)

    def doppler_hz(self, k, kappa=0.0):
        return (k + kappa) * self.delta_f / self.N

    def wrap(self, k, l):
        """Reduce Doppler index mod N and delay index mod M."""
        return np.mod(k, self.N), np.mod(l, self.M)


def _series(x, N, start=0):
    n = np.arange(start, N)
    x = np.asarray(x, dtype=float)
    return np.exp(2j * np.pi * np.multiply.outer(x, n) / N).sum(axis=-1) / N


def spread_f(q, kappa, N: int):
    """Fractional-Doppler spreading ``f(q, kappa)``.

    Closed form ``(1 - e^{j2pi(q+kappa)}) / (N (1 - e^{j2pi(q+kappa)/N}))``,
    equal to ``(1/N) sum_n e^{j2pi n (q+kappa)/N}``; the series is used near
    the removable singularity.
    """
    if N < 2:
        raise ValueError(f"spread_f needs N >= 2, got {N}")
    x = np.add(q, kappa, dtype=float)
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(x)
    dist = x - N * np.round(x / N)
    near = np.abs(dist) < SINGULAR_TOL
    out = np.empty(x.shape, dtype=complex)
    far = ~near
    if far.any():
        xf = x[far]
        out[far] = (1 - np.exp(2j * np.pi * xf)) / (N * (1 - np.exp(2j * np.pi * xf / N)))
    if near.any():
        out[near] = _series(x[near], N)
    return out[0] if scalar else out


def spread_f_series(q, kappa, N: int):
    """Brute-force N-term series for ``f``; reference only."""
    return _series(np.add(q, kappa, dtype=float), N)


def spread_f_dkappa(q, kappa, N: int):
    """d f(q, kappa) / d kappa via the differentiated series."""
    x = np.asarray(np.add(q, kappa, dtype=float))
    n = np.arange(1, N)
    w = 1j * 2 * np.pi * n / N
    return (w * np.exp(np.multiply.outer(x, w))).sum(axis=-1) / N


def dd_phase(t, d, kappa, dims: GridDims):
    """``e^{-j2pi t (d + kappa) / (MN)}``."""
    return np.exp(-2j * np.pi * np.multiply(t, np.add(d, kappa)) / dims.MN)


def phi(q, kappa, t, d, dims: GridDims):
    """Phase-augmented spreading ``f(q, kappa) e^{-j2pi t (d+kappa)/(MN)}``."""
    return spread_f(q, kappa, dims.N) * dd_phase(t, d, kappa, dims)


def phi_prime(q, kappa, t, d, dims: GridDims):
    """Derivative of :func:`phi` with respect to ``kappa``."""
    ph = dd_phase(t, d, kappa, dims)
    f = spread_f(q, kappa, dims.N)
    return (-2j * np.pi * np.asarray(t) / dims.MN) * f * ph + ph * spread_f_dkappa(q, kappa, dims.N)
