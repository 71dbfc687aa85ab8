"""Fisher information and Cramer-Rao bounds for path gains and fractional
Doppler shifts under known support.

The parameter vector is ``[h_1 .. h_P, kappa_1 .. kappa_P]``; each complex
gain occupies a single slot and the Fisher entries are
``2 * gamma * Re sum_z du/dtheta_i * conj(du/dtheta_j)`` over the pilot
observation window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import DDChannel
from .frame import FrameConfig, pilot_grid, window_indices
from .kernels import spread_f, spread_f_dkappa


@dataclass
class Bounds:
    values: np.ndarray     # per-parameter variance bounds
    rank: int
    pseudo_inverse: bool   # True when the Fisher matrix was singular


def _path_phase(p, lz, dims, waveform):
    nu = p.doppler + p.kappa
    if waveform == "bi":
        return np.full(lz.shape, np.exp(-2j * np.pi * p.delay * nu / dims.MN)), \
            np.full(lz.shape, -2j * np.pi * p.delay / dims.MN)
    if waveform == "rect":
        rel = lz - p.delay
        return np.exp(2j * np.pi * rel * nu / dims.MN), 2j * np.pi * rel / dims.MN
    raise ValueError(f"unknown waveform {waveform!r}")


def derivatives(ch: DDChannel, cfg: FrameConfig, pilots, waveform: str = "bi"):
    """``(Z, 2P)`` matrix of du_z/dh_p (first P columns) and du_z/dkappa_p."""
    dims = ch.dims
    x = pilot_grid(cfg, pilots, dims)
    kz, lz = window_indices(cfg, dims)
    P = ch.P
    D = np.zeros((kz.size, 2 * P), dtype=complex)
    for i, p in enumerate(ch.paths):
        ph, dph = _path_phase(p, lz, dims, waveform)
        src_l = np.mod(lz - p.delay, dims.M)
        for q in ch.q_range():
            xs = x[np.mod(kz - p.doppler + q, dims.N), src_l]
            f = spread_f(q, p.kappa, dims.N)
            df = spread_f_dkappa(q, p.kappa, dims.N)
            D[:, i] += f * ph * xs
            D[:, P + i] += p.gain * (df * ph + f * ph * dph) * xs
    return D


def fisher_matrix(ch: DDChannel, cfg: FrameConfig, pilots, gamma: float,
                  waveform: str = "bi") -> np.ndarray:
    if not gamma > 0:
        raise ValueError("noise precision must be positive")
    D = derivatives(ch, cfg, pilots, waveform)
    I = 2.0 * gamma * np.real(D.T @ D.conj())
    return 0.5 * (I + I.T)


def crlb_bounds(I, rtol: float = 1e-12) -> Bounds:
    """Diagonal of the inverse Fisher matrix; pseudo-inverse when singular."""
    I = np.asarray(I, dtype=float)
    rank = int(np.linalg.matrix_rank(I, tol=rtol * np.abs(I).max() if I.size else None))
    if rank < I.shape[0]:
        inv = np.linalg.pinv(I, rcond=rtol, hermitian=True)
        return Bounds(np.clip(np.diag(inv), 0.0, None), rank, True)
    inv = np.linalg.inv(I)
    return Bounds(np.clip(np.diag(inv), 0.0, None), rank, False)


def normalized_bounds(bounds, h, kappa):
    """``(sum of gain bounds / ||h||^2, sum of Doppler bounds / ||kappa||^2)``."""
    b = np.asarray(getattr(bounds, "values", bounds), dtype=float)
    h = np.asarray(h)
    kappa = np.asarray(kappa, dtype=float)
    P = h.size
    if b.size != 2 * P or kappa.size != P:
        raise ValueError("bounds must hold 2P entries for P gains and P Doppler shifts")
    hn = np.sum(np.abs(h) ** 2)
    kn = np.sum(kappa ** 2)
    h_bound = b[:P].sum() / hn if hn > 0 else np.inf
    k_bound = b[P:].sum() / kn if kn > 0 else np.inf
    return float(h_bound), float(k_bound)


def channel_bounds(ch: DDChannel, cfg: FrameConfig, pilots, gamma: float, waveform: str = "bi"):
    """Normalised (gain, Doppler) bounds for one realisation."""
    b = crlb_bounds(fisher_matrix(ch, cfg, pilots, gamma, waveform))
    return normalized_bounds(b, [p.gain for p in ch.paths], [p.kappa for p in ch.paths])
