"""Pilot/guard/data layout, the pilot observation window and the
structured-sparse dictionaries for both waveforms.

Block ``j`` covers delay tap ``t`` and Doppler tap ``d`` with
``j = (l_max+1)(k_max+d) + t`` (0-based); dictionary column ``n = j*B + b``
belongs to Doppler offset ``q = -n_hat + b`` with ``B = 2*n_hat + 1``.
Observation samples are flattened delay-major: the window row ``l`` is the
outer index and the Doppler index ``k`` the inner one.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .channel import DDChannel
from .config import ConfigError, read_config
from .kernels import GridDims, dd_phase, spread_f


@dataclass(frozen=True)
class FrameConfig:
    """Pilot block, guard geometry and symbol powers.

    ``M_p`` x ``N_p`` is the pilot block (delay x Doppler).  ``pilot_origin``
    is ``(l0, k0)``; ``None`` means ``(l_max, N // 2)``.
    """

    M_p: int = 1
    N_p: int = 1
    l_max: int = 10
    k_max: int = 4
    n_hat: int = 1
    pilot_power: float = 1.0
    data_power: float = 1.0
    pilot_origin: Optional[Tuple[int, int]] = None

    @property
    def B(self) -> int:
        return 2 * self.n_hat + 1

    @property
    def J(self) -> int:
        return (self.l_max + 1) * (2 * self.k_max + 1)

    @property
    def Z(self) -> int:
        return (self.l_max + self.M_p) * (self.N_p + 2 * self.k_max + 2 * self.n_hat)

    @property
    def n_pilots(self) -> int:
        return self.M_p * self.N_p

    def origin(self, dims: GridDims) -> Tuple[int, int]:
        if self.pilot_origin is None:
            return self.l_max, dims.N // 2
        return tuple(self.pilot_origin)

    def guard_extent(self) -> Tuple[int, int]:
        """(delay, Doppler) size of the pilot-plus-guard rectangle."""
        return 2 * self.l_max + self.M_p, 4 * self.k_max + 4 * self.n_hat + self.N_p

    def overhead(self, dims: GridDims) -> float:
        gl, gk = self.guard_extent()
        return gl * gk / dims.MN

    def n_data(self, dims: GridDims) -> int:
        gl, gk = self.guard_extent()
        return dims.MN - gl * gk

    def validate(self, dims: GridDims) -> None:
        if min(self.M_p, self.N_p) < 1:
            raise ValueError("pilot block must be at least 1x1")
        if min(self.l_max, self.k_max, self.n_hat) < 0:
            raise ValueError("l_max, k_max and n_hat must be >= 0")
        gl, gk = self.guard_extent()
        if gl > dims.M or gk > dims.N:
            raise ValueError(
                f"pilot+guard region {gl}x{gk} (delay x Doppler) does not fit a {dims.M}x{dims.N} grid")
        l0, _ = self.origin(dims)
        if l0 < self.l_max:
            raise ValueError(f"pilot delay origin {l0} must be >= l_max={self.l_max}")
        if self.pilot_power <= 0:
            raise ValueError("pilot power must be positive")

    def with_(self, **kw) -> "FrameConfig":
        return dataclasses.replace(self, **kw)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        if d["pilot_origin"] is not None:
            d["pilot_origin"] = list(d["pilot_origin"])
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "FrameConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ConfigError(f"unknown frame config keys: {sorted(unknown)}")
        kw = dict(raw)
        if kw.get("pilot_origin") is not None:
            kw["pilot_origin"] = tuple(int(v) for v in kw["pilot_origin"])
        for key in ("M_p", "N_p", "l_max", "k_max", "n_hat"):
            if key in kw:
                kw[key] = int(kw[key])
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "FrameConfig":
        return cls.from_dict(read_config(path))


# -- index maps -------------------------------------------------------------

def block_index(t, d, cfg: FrameConfig):
    return (cfg.l_max + 1) * (cfg.k_max + np.asarray(d)) + np.asarray(t)


def block_taps(j, cfg: FrameConfig):
    """Inverse of :func:`block_index`: ``j -> (t, d)``."""
    j = np.asarray(j)
    return j % (cfg.l_max + 1), j // (cfg.l_max + 1) - cfg.k_max


def column_index(j, b, cfg: FrameConfig):
    return np.asarray(j) * cfg.B + np.asarray(b)


def column_block(n, cfg: FrameConfig):
    """``n -> (j, b)``."""
    n = np.asarray(n)
    return n // cfg.B, n % cfg.B


def column_taps(cfg: FrameConfig):
    """Per-column ``(t, d, q)`` arrays over all ``J*B`` columns."""
    n = np.arange(cfg.J * cfg.B)
    j, b = column_block(n, cfg)
    t, d = block_taps(j, cfg)
    return t, d, b - cfg.n_hat


# -- layout -----------------------------------------------------------------

def _region(cfg, dims):
    l0, k0 = cfg.origin(dims)
    pilot = np.zeros((dims.N, dims.M), dtype=bool)
    pilot[np.ix_(np.arange(k0, k0 + cfg.N_p) % dims.N, np.arange(l0, l0 + cfg.M_p) % dims.M)] = True
    gk = 2 * (cfg.k_max + cfg.n_hat)
    guard = np.zeros_like(pilot)
    guard[np.ix_(np.arange(k0 - gk, k0 + cfg.N_p + gk) % dims.N,
                 np.arange(l0 - cfg.l_max, l0 + cfg.M_p + cfg.l_max) % dims.M)] = True
    return pilot, guard


def pilot_mask(cfg: FrameConfig, dims: GridDims) -> np.ndarray:
    return _region(cfg, dims)[0]


def data_mask(cfg: FrameConfig, dims: GridDims) -> np.ndarray:
    """Cells outside the pilot-plus-guard rectangle."""
    return ~_region(cfg, dims)[1]


def pilot_grid(cfg: FrameConfig, pilots, dims: GridDims) -> np.ndarray:
    """Grid holding only the power-scaled pilot block."""
    cfg.validate(dims)
    pilots = np.asarray(pilots, dtype=complex).reshape(cfg.N_p, cfg.M_p)
    l0, k0 = cfg.origin(dims)
    x = np.zeros((dims.N, dims.M), dtype=complex)
    x[np.ix_(np.arange(k0, k0 + cfg.N_p) % dims.N, np.arange(l0, l0 + cfg.M_p) % dims.M)] = (
        np.sqrt(cfg.pilot_power) * pilots)
    return x


def place_frame(cfg: FrameConfig, pilots, data, dims: GridDims) -> np.ndarray:
    """Assemble a DD frame: scaled pilots, zero guard, data elsewhere.

    ``data`` holds unit-power symbols (scaled by ``sqrt(data_power)``) in
    row-major order of :func:`data_mask`, or ``None`` for an empty data area.
    """
    x = pilot_grid(cfg, pilots, dims)
    mask = data_mask(cfg, dims)
    if data is not None:
        data = np.asarray(data, dtype=complex).ravel()
        if data.size != mask.sum():
            raise ValueError(f"expected {mask.sum()} data symbols, got {data.size}")
        x[mask] = np.sqrt(cfg.data_power) * data
    return x


def qpsk(n, rng) -> np.ndarray:
    bits = rng.integers(0, 2, size=(2, n))
    return ((1 - 2 * bits[0]) + 1j * (1 - 2 * bits[1])) / np.sqrt(2)


def qpsk_pilots(cfg: FrameConfig, seed) -> np.ndarray:
    """Unit-modulus QPSK pilot block, shape ``(N_p, M_p)``."""
    return qpsk(cfg.n_pilots, np.random.default_rng(seed)).reshape(cfg.N_p, cfg.M_p)


# -- observation window and dictionaries -----------------------------------

def window_indices(cfg: FrameConfig, dims: GridDims):
    """``(k_z, l_z)`` of every observation sample, delay-major order."""
    l0, k0 = cfg.origin(dims)
    ls = np.arange(l0, l0 + cfg.l_max + cfg.M_p)
    span = cfg.k_max + cfg.n_hat
    ks = np.arange(k0 - span, k0 + cfg.N_p + span)
    L, K = np.meshgrid(ls, ks, indexing="ij")
    return np.mod(K.ravel(), dims.N), np.mod(L.ravel(), dims.M)


def extract_observation(y_grid, cfg: FrameConfig, dims: GridDims) -> np.ndarray:
    kz, lz = window_indices(cfg, dims)
    return np.asarray(y_grid)[kz, lz]


def build_dictionary_bi(cfg: FrameConfig, pilots, dims: GridDims) -> np.ndarray:
    """``Z x J*B`` dictionary; column (t, d, q) holds ``x_p[[k-d+q]_N, [l-t]_M]``."""
    xp = pilot_grid(cfg, pilots, dims)
    if not np.any(xp):
        raise ValueError("all-zero pilot block gives an empty dictionary")
    kz, lz = window_indices(cfg, dims)
    t, d, q = column_taps(cfg)
    rows_k = np.mod(kz[:, None] - d[None, :] + q[None, :], dims.N)
    rows_l = np.mod(lz[:, None] - t[None, :], dims.M)
    return xp[rows_k, rows_l]


def rect_phase(cfg: FrameConfig, dims: GridDims, kappa_blocks) -> np.ndarray:
    """``e^{j2pi l_z (d_n + kappa_n) / (MN)}`` for every (z, n)."""
    _, lz = window_indices(cfg, dims)
    _, d, _ = column_taps(cfg)
    kappa_blocks = np.broadcast_to(np.asarray(kappa_blocks, dtype=float), (cfg.J,))
    kappa_n = np.repeat(kappa_blocks, cfg.B)
    return np.exp(2j * np.pi * np.outer(lz, d + kappa_n) / dims.MN)


def build_dictionary_rect(cfg: FrameConfig, pilots, dims: GridDims, kappa_est) -> np.ndarray:
    """Rectangular-waveform dictionary: the bi-orthogonal one with each
    column rotated by its block's current Doppler estimate."""
    return rect_phase(cfg, dims, kappa_est) * build_dictionary_bi(cfg, pilots, dims)


def build_true_c(ch: DDChannel, cfg: FrameConfig) -> np.ndarray:
    """Ground-truth block-sparse coefficient vector."""
    c = np.zeros(cfg.J * cfg.B, dtype=complex)
    q = np.arange(-cfg.n_hat, cfg.n_hat + 1)
    for p in ch.paths:
        if p.delay > cfg.l_max or abs(p.doppler) > cfg.k_max:
            raise ValueError(f"path at ({p.delay}, {p.doppler}) lies outside the dictionary")
        j = int(block_index(p.delay, p.doppler, cfg))
        c[j * cfg.B:(j + 1) * cfg.B] = (
            p.gain * dd_phase(p.delay, p.doppler, p.kappa, ch.dims) * spread_f(q, p.kappa, ch.dims.N))
    return c


@dataclass
class SparseSystem:
    """Observation vector plus dictionary for one received frame."""

    y: np.ndarray
    X_bi: np.ndarray
    cfg: FrameConfig
    dims: GridDims
    waveform: str = "bi"
    pilots: Optional[np.ndarray] = None   # unit-modulus block, (N_p, M_p)

    @property
    def Z(self) -> int:
        return self.y.size

    @property
    def J(self) -> int:
        return self.cfg.J

    @property
    def B(self) -> int:
        return self.cfg.B

    def matrix(self, kappa_blocks=None) -> np.ndarray:
        """Dictionary for the configured waveform at the given block Doppler
        estimates (zeros when omitted)."""
        if self.waveform == "bi":
            return self.X_bi
        if kappa_blocks is None:
            kappa_blocks = 0.0
        return rect_phase(self.cfg, self.dims, kappa_blocks) * self.X_bi

    def export(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        np.savetxt(outdir / "y.csv", np.column_stack([self.y.real, self.y.imag]),
                   delimiter=",", header="re,im", comments="")
        np.save(outdir / "X_bi.npy", self.X_bi)


def make_system(y_grid, cfg: FrameConfig, pilots, dims: GridDims, waveform: str = "bi") -> SparseSystem:
    return SparseSystem(extract_observation(y_grid, cfg, dims),
                        build_dictionary_bi(cfg, pilots, dims), cfg, dims, waveform,
                        np.asarray(pilots, dtype=complex).reshape(cfg.N_p, cfg.M_p))
