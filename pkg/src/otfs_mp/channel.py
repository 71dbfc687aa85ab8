"""Sparse delay-Doppler channels and their effective DD-domain operators.

Grids are ``(N, M)`` arrays indexed ``x[k, l]`` (Doppler ``k``, delay ``l``),
so ``x.ravel()`` is the stacking ``j = k*M + l``.  Two routes to the channel
output exist for each waveform: direct summation (``apply_*``) and an explicit
sparse matrix (``build_H_*``); they are cross-checked in the tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .kernels import GridDims, dd_phase, spread_f

WAVEFORMS = ("bi", "rect")


@dataclass(frozen=True)
class ChannelPath:
    gain: complex
    delay: int
    doppler: int
    kappa: float = 0.0

    def __post_init__(self):
        if abs(self.kappa) > 0.5 + 1e-12:
            raise ValueError(f"fractional Doppler must lie in [-0.5, 0.5], got {self.kappa}")
        if self.delay < 0:
            raise ValueError(f"delay index must be >= 0, got {self.delay}")


@dataclass(frozen=True)
class DDChannel:
    paths: tuple
    n_hat: int
    dims: GridDims

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        if self.n_hat < 0:
            raise ValueError("n_hat must be >= 0")
        cells = [(p.delay, p.doppler) for p in self.paths]
        if len(set(cells)) != len(cells):
            raise ValueError("paths must occupy distinct (delay, doppler) cells")

    @property
    def P(self) -> int:
        return len(self.paths)

    def q_range(self):
        return range(-self.n_hat, self.n_hat + 1)

    def to_json(self) -> dict:
        return {
            "M": self.dims.M,
            "N": self.dims.N,
            "n_hat": self.n_hat,
            "paths": [
                {"re": float(np.real(p.gain)), "im": float(np.imag(p.gain)),
                 "l": int(p.delay), "k": int(p.doppler), "kappa": float(p.kappa)}
                for p in self.paths
            ],
        }

    @classmethod
    def from_json(cls, rec) -> "DDChannel":
        if isinstance(rec, str):
            rec = json.loads(rec)
        paths = [ChannelPath(complex(p["re"], p["im"]), int(p["l"]), int(p["k"]), float(p["kappa"]))
                 for p in rec["paths"]]
        return cls(tuple(paths), int(rec["n_hat"]), GridDims(int(rec["M"]), int(rec["N"])))


def sample_channel(seed, P: int, l_max: int, k_max: int, dims: GridDims, n_hat: int = 1) -> DDChannel:
    """Draw a random P-path channel.

    Gains are CN(0, 1/P); the first path has delay 0, the others a delay
    uniform on [1, l_max]; Doppler indices are uniform on [-k_max, k_max] and
    fractional parts uniform on [-0.5, 0.5].  Colliding (delay, doppler)
    cells are redrawn.
    """
    if P < 1:
        raise ValueError("need at least one path")
    capacity = 1 + l_max * (2 * k_max + 1)
    if P > capacity:
        raise ValueError(f"P={P} exceeds the {capacity} distinct cells available")
    rng = np.random.default_rng(seed)
    taken = set()
    paths = []
    for i in range(P):
        while True:
            l = 0 if i == 0 else int(rng.integers(1, l_max + 1))
            k = int(rng.integers(-k_max, k_max + 1))
            if (l, k) not in taken:
                break
        taken.add((l, k))
        kappa = float(rng.uniform(-0.5, 0.5))
        g = (rng.standard_normal() + 1j * rng.standard_normal()) * np.sqrt(0.5 / P)
        paths.append(ChannelPath(complex(g), l, k, kappa))
    return DDChannel(tuple(paths), n_hat, dims)


def _check_grid(x, dims):
    x = np.asarray(x)
    if x.shape != (dims.N, dims.M):
        raise ValueError(f"grid shape {x.shape} does not match (N, M) = ({dims.N}, {dims.M})")
    return x


def apply_bi(ch: DDChannel, x) -> np.ndarray:
    """Noiseless DD output for the bi-orthogonal waveform (direct summation)."""
    dims = ch.dims
    x = _check_grid(x, dims)
    y = np.zeros(x.shape, dtype=complex)
    for p in ch.paths:
        ph = dd_phase(p.delay, p.doppler, p.kappa, dims)
        for q in ch.q_range():
            coef = p.gain * spread_f(q, p.kappa, dims.N) * ph
            # y[k, l] += coef * x[k - k_i + q, l - l_i]
            y += coef * np.roll(x, (p.doppler - q, p.delay), axis=(0, 1))
    return y


def apply_rect(ch: DDChannel, x) -> np.ndarray:
    """Noiseless DD output for the rectangular waveform (direct summation)."""
    dims = ch.dims
    M, N = dims.M, dims.N
    x = _check_grid(x, dims)
    y = np.zeros(x.shape, dtype=complex)
    l = np.arange(M)
    k = np.arange(N)
    for p in ch.paths:
        nu = p.doppler + p.kappa
        rot = np.exp(2j * np.pi * (l - p.delay) * nu / (M * N))
        edge = l < p.delay
        for q in ch.q_range():
            beta = N * spread_f(q, p.kappa, N)
            src_k = np.mod(k - p.doppler + q, N)
            alpha = np.broadcast_to(beta / N, (N, M)).astype(complex)
            if edge.any():
                alpha = alpha.copy()
                alpha[:, edge] = ((beta - 1) / N) * np.exp(-2j * np.pi * src_k / N)[:, None]
            y += p.gain * rot[None, :] * alpha * np.roll(x, (p.doppler - q, p.delay), axis=(0, 1))
    return y


def apply_channel(ch: DDChannel, x, waveform: str = "bi") -> np.ndarray:
    if waveform == "bi":
        return apply_bi(ch, x)
    if waveform == "rect":
        return apply_rect(ch, x)
    raise ValueError(f"unknown waveform {waveform!r}")


def _row_shift(n: int, s: int):
    """Identity with rows circularly shifted by ``s``: row r has its 1 at column r - s."""
    r = np.arange(n)
    return sp.csr_array((np.ones(n), (r, np.mod(r - s, n))), shape=(n, n))


def build_H_bi(ch: DDChannel, dims: GridDims = None) -> sp.csr_array:
    """Sparse ``MN x MN`` matrix with ``vec(y) = H vec(x)`` (Kronecker form)."""
    dims = dims or ch.dims
    M, N = dims.M, dims.N
    H = sp.csr_array((dims.MN, dims.MN), dtype=complex)
    for p in ch.paths:
        ph = dd_phase(p.delay, p.doppler, p.kappa, dims)
        I_M = _row_shift(M, p.delay)
        for q in ch.q_range():
            coef = p.gain * spread_f(q, p.kappa, N) * ph
            I_N = _row_shift(N, -np.mod(q - p.doppler, N))
            H = H + sp.kron(I_N, coef * I_M, format="csr")
    return H


def build_H_rect(ch: DDChannel, dims: GridDims = None) -> sp.csr_array:
    """Sparse rectangular-waveform channel matrix.

    Per path and Doppler offset: ``(I_N(-[q-k]_N) kron Lambda) @ Delta`` where
    ``Lambda`` is diagonal over output delay and ``Delta`` is block diagonal
    over source Doppler index ``n`` with blocks ``Psi_n I_M(l_i)``;
    ``Psi_n`` carries ``e^{-j2pi n/N}`` on the wrapped rows ``m < l_i``.
    """
    dims = dims or ch.dims
    M, N = dims.M, dims.N
    H = sp.csr_array((dims.MN, dims.MN), dtype=complex)
    l = np.arange(M)
    for p in ch.paths:
        nu = p.doppler + p.kappa
        I_M = _row_shift(M, p.delay)
        edge = l < p.delay
        gain = p.gain * np.exp(-2j * np.pi * p.delay * nu / dims.MN)
        blocks = []
        for n in range(N):
            psi = np.where(edge, np.exp(-2j * np.pi * n / N), 1.0)
            blocks.append(sp.diags_array(psi) @ I_M)
        Delta = sp.block_diag(blocks, format="csr")
        for q in ch.q_range():
            beta = N * spread_f(q, p.kappa, N)
            lam = np.exp(2j * np.pi * l * nu / dims.MN) * np.where(edge, beta - 1, beta) / N
            I_N = _row_shift(N, -np.mod(q - p.doppler, N))
            H = H + sp.kron(I_N, sp.diags_array(gain * lam), format="csr") @ Delta
    return H


def build_H(ch: DDChannel, waveform: str = "bi") -> sp.csr_array:
    if waveform == "bi":
        return build_H_bi(ch)
    if waveform == "rect":
        return build_H_rect(ch)
    raise ValueError(f"unknown waveform {waveform!r}")


def add_noise(y, gamma: float, seed) -> np.ndarray:
    """Add circular complex Gaussian noise of variance ``1/gamma`` per sample."""
    y = np.asarray(y)
    if gamma <= 0:
        raise ValueError("noise precision must be positive")
    if np.isinf(gamma):
        return y.astype(complex, copy=True)
    rng = np.random.default_rng(seed)
    s = np.sqrt(0.5 / gamma)
    return y + s * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
