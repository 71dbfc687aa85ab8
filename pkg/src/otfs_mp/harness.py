"""Monte-Carlo campaigns: NMSE sweeps, PAPR tables and BER runs, with CSV and
gnuplot emission.

Trial seeds are split deterministically from the campaign seed with
``numpy.random.SeedSequence``: the channel, pilots and data of trial ``i``
come from ``spawn_key=(0, i)`` and the noise of sweep cell ``c`` from
``spawn_key=(1, c, i)``.  Every method in a cell therefore sees the same
realisations, and trials can run in any order or in parallel.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from itertools import product
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .baseline import pilot_sigma, shift_channel, threshold_baseline
from .channel import add_noise, apply_channel, build_H, sample_channel, WAVEFORMS
from .config import ConfigError, read_config
from .crlb import channel_bounds
from .estimator import (EstimationError, Hyperparams, detect_support, estimate,
                        estimate_integer_doppler, reconstruct_channel)
from .frame import (FrameConfig, block_index, data_mask, make_system, pilot_grid,
                    place_frame, qpsk, qpsk_pilots, window_indices)
from .kernels import GridDims
from .modem import isfft, papr, to_time_rect

NMSE_FLOOR_DB = -200.0


def _tuple(v, cast):
    if isinstance(v, (list, tuple)):
        return tuple(cast(x) for x in v)
    return (cast(v),)


@dataclass(frozen=True)
class SimConfig:
    M: int = 128
    N: int = 32
    carrier_hz: float = 3e9
    delta_f: float = 2e3
    l_max: int = 10
    k_max: int = 4
    n_hat: int = 1
    paths: tuple = (6,)
    pilots: tuple = (10,)
    snrp_db: tuple = (40.0,)
    snrd_db: tuple = (14.0,)
    waveform: str = "bi"
    trials: int = 200
    seed: int = 0
    max_iter: int = 50
    tol: float = 1e-6
    damping: float = 0.7
    epsilon: float = 1.0
    eta: float = 0.0
    rho: float = 1e-3
    baselines: bool = True
    crlb: bool = True
    papr_frames: int = 500
    ber_symbols: int = 100_000
    jobs: int = 1

    def __post_init__(self):
        for name, cast in (("paths", int), ("pilots", int), ("snrp_db", float), ("snrd_db", float)):
            object.__setattr__(self, name, _tuple(getattr(self, name), cast))
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.waveform not in WAVEFORMS:
            raise ConfigError(f"waveform must be one of {WAVEFORMS}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    @property
    def dims(self) -> GridDims:
        return GridDims(self.M, self.N, self.delta_f)

    @property
    def hyper(self) -> Hyperparams:
        return Hyperparams(self.epsilon, self.eta, self.max_iter, self.tol, self.damping)

    def frame(self, n_pilots: int, pilot_power: float = 1.0, data_power: float = 1.0) -> FrameConfig:
        return FrameConfig(M_p=n_pilots, N_p=1, l_max=self.l_max, k_max=self.k_max,
                           n_hat=self.n_hat, pilot_power=pilot_power, data_power=data_power)

    def with_(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    def to_json(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}

    def config_hash(self) -> str:
        """Provenance tag; ``jobs`` does not change results and is excluded."""
        rec = self.to_json()
        rec.pop("jobs")
        blob = json.dumps(rec, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**raw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        return cls.from_dict(read_config(path))


BER_DEFAULTS = dict(M=32, N=16, l_max=4, k_max=2, paths=(6,), pilots=(1,), snrp_db=(35.0,),
                    snrd_db=(8.0, 10.0, 12.0, 14.0, 16.0))


@dataclass
class MetricRow:
    experiment: str
    method: str
    waveform: str
    P: Optional[int] = None
    pilots: Optional[int] = None
    snrp_db: Optional[float] = None
    snrd_db: Optional[float] = None
    trials: Optional[int] = None
    nmse_h_db: Optional[float] = None
    nmse_kappa_db: Optional[float] = None
    nmse_H_db: Optional[float] = None
    median_nmse_H_db: Optional[float] = None
    papr_db: Optional[float] = None
    ber: Optional[float] = None
    crlb_h_db: Optional[float] = None
    crlb_kappa_db: Optional[float] = None
    config_hash: str = ""


CSV_COLUMNS = [f.name for f in fields(MetricRow)]


# -- metrics ---------------------------------------------------------------

def to_db(x) -> float:
    x = float(x)
    return NMSE_FLOOR_DB if x <= 0 else max(10 * math.log10(x), NMSE_FLOOR_DB)


def nmse(estimates: Sequence, truth) -> float:
    """Trial-averaged squared error over the squared truth norm, in dB."""
    truth = np.asarray(truth)
    ref = np.sum(np.abs(truth) ** 2)
    if not ref > 0:
        raise ValueError("NMSE undefined for an all-zero truth")
    err = np.mean([np.sum(np.abs(np.asarray(e) - truth) ** 2) for e in estimates])
    return to_db(err / ref)


def matrix_nmse(H_hat, H) -> float:
    """Linear NMSE between two (sparse or dense) channel matrices."""
    def norm2(A):
        return spla.norm(A) ** 2 if sp.issparse(A) else np.linalg.norm(A) ** 2
    return float(norm2(H_hat - H) / norm2(H))


def _mean_db(values) -> float:
    return to_db(np.mean(values))


def _median_db(values) -> float:
    return to_db(np.median(values))


# -- seeds and parallel map ------------------------------------------------

def trial_seed(seed: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(0, trial))


def noise_seed(seed: int, cell: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(1, cell, trial))


def _pmap(fn, tasks, jobs: int):
    tasks = list(tasks)
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def _draw(sim: SimConfig, P: int, n_pilots: int, trial: int, dims: GridDims = None):
    """Channel, pilot block and data generator seed for one trial."""
    dims = dims or sim.dims
    ch_ss, pil_ss, data_ss = trial_seed(sim.seed, trial).spawn(3)
    ch = sample_channel(ch_ss, P, sim.l_max, sim.k_max, dims, sim.n_hat)
    pilots = qpsk_pilots(sim.frame(n_pilots), pil_ss)
    return ch, pilots, data_ss


# -- NMSE sweep ------------------------------------------------------------

def nmse_trial(task):
    """One estimation trial; returns linear per-trial metrics."""
    sim, cell, P, n_pilots, snrp, trial = task
    dims = sim.dims
    wf = sim.waveform
    ch, pilots, _ = _draw(sim, P, n_pilots, trial)
    cfg = sim.frame(n_pilots, pilot_power=10 ** (snrp / 10))   # unit noise variance
    x = pilot_grid(cfg, pilots, dims)
    y = add_noise(apply_channel(ch, x, wf), 1.0, noise_seed(sim.seed, cell, trial))
    sys = make_system(y, cfg, pilots, dims, wf)
    H = build_H(ch, wf)
    out = {}

    res = estimate(sys, sim.hyper, wf)
    _, paths = detect_support(res, cfg, sim.rho)
    out["H"] = matrix_nmse(reconstruct_channel(paths, dims, wf, sim.n_hat), H)
    js = np.array([block_index(p.delay, p.doppler, cfg) for p in ch.paths])
    h = np.array([p.gain for p in ch.paths])
    k = np.array([p.kappa for p in ch.paths])
    out["h"] = float(np.sum(np.abs(res.h_hat[js] - h) ** 2) / np.sum(np.abs(h) ** 2))
    kn = np.sum(k ** 2)
    out["kappa"] = float(np.sum((res.kappa_hat[js] - k) ** 2) / kn) if kn > 0 else 0.0

    if sim.crlb:
        out["crlb_h"], out["crlb_kappa"] = channel_bounds(ch, cfg, pilots, 1.0, wf)
    if sim.baselines:
        res0 = estimate_integer_doppler(sys, sim.hyper, wf)
        _, paths0 = detect_support(res0, cfg.with_(n_hat=0), sim.rho)
        out["integer"] = matrix_nmse(reconstruct_channel(paths0, dims, wf, 0), H)
        if n_pilots == 1 and wf == "bi":
            est = threshold_baseline(sys, pilot_sigma(snrp))
            out["threshold"] = matrix_nmse(shift_channel(est, dims), H)
    return out


def nmse_cells(sim: SimConfig):
    return list(product(sim.paths, sim.pilots, sim.snrp_db))


def run_nmse_sweep(sim: SimConfig, progress=None):
    """One row per (P, pilots, SNRp) cell and method."""
    rows, tag = [], sim.config_hash()
    for cell, (P, n_pilots, snrp) in enumerate(nmse_cells(sim)):
        tasks = [(sim, cell, P, n_pilots, snrp, i) for i in range(sim.trials)]
        trials = _pmap(nmse_trial, tasks, sim.jobs)
        base = dict(experiment="nmse", waveform=sim.waveform, P=P, pilots=n_pilots,
                    snrp_db=snrp, trials=sim.trials, config_hash=tag)
        Hs = [t["H"] for t in trials]
        row = MetricRow(method="proposed", nmse_h_db=_mean_db([t["h"] for t in trials]),
                        nmse_kappa_db=_mean_db([t["kappa"] for t in trials]),
                        nmse_H_db=_mean_db(Hs), median_nmse_H_db=_median_db(Hs), **base)
        if sim.crlb:
            row.crlb_h_db = _mean_db([t["crlb_h"] for t in trials])
            row.crlb_kappa_db = _mean_db([t["crlb_kappa"] for t in trials])
        cell_rows = [row]
        for method in ("threshold", "integer"):
            vals = [t[method] for t in trials if method in t]
            if vals:
                cell_rows.append(MetricRow(method=method, nmse_H_db=_mean_db(vals),
                                           median_nmse_H_db=_median_db(vals), **base))
        rows.extend(cell_rows)
        if progress:
            progress(cell_rows)
    return rows


# -- PAPR ------------------------------------------------------------------

def papr_frame(task):
    sim, cell, n_pilots, snrp, snrd, frame = task
    ss = np.random.SeedSequence(sim.seed, spawn_key=(2, cell, frame))
    pil_ss, data_ss = ss.spawn(2)
    cfg = sim.frame(n_pilots, pilot_power=10 ** ((snrp - snrd) / 10))
    dims = sim.dims
    pilots = qpsk_pilots(cfg, pil_ss)
    data = qpsk(cfg.n_data(dims), np.random.default_rng(data_ss))
    x = place_frame(cfg, pilots, data, dims)
    return papr(to_time_rect(isfft(x)))


def run_papr_table(sim: SimConfig, progress=None):
    """Mean time-domain PAPR (dB) per (SNRp, pilots) cell at the first SNRd."""
    rows, tag = [], sim.config_hash()
    snrd = sim.snrd_db[0]
    for cell, (snrp, n_pilots) in enumerate(product(sim.snrp_db, sim.pilots)):
        tasks = [(sim, cell, n_pilots, snrp, snrd, f) for f in range(sim.papr_frames)]
        vals = _pmap(papr_frame, tasks, sim.jobs)
        rows.append(MetricRow(experiment="papr", method="frame", waveform="rect", pilots=n_pilots,
                              snrp_db=snrp, snrd_db=snrd, trials=sim.papr_frames,
                              papr_db=float(np.mean(vals)), config_hash=tag))
        if progress:
            progress(rows[-1:])
    return rows


# -- BER -------------------------------------------------------------------

def lmmse_detect(y, H, snr: float):
    """``(H^H H + I/snr)^-1 H^H y`` followed by nearest-QPSK slicing."""
    H = H.toarray() if sp.issparse(H) else np.asarray(H)
    y = np.asarray(y).ravel()
    A = H.conj().T @ H
    A[np.diag_indices_from(A)] += 1.0 / snr
    x = la.solve(A, H.conj().T @ y, assume_a="pos")
    return (np.sign(x.real) + 1j * np.sign(x.imag)) / np.sqrt(2)


def _bit_errors(x_hat, x) -> int:
    return int(np.sum(np.sign(x_hat.real) != np.sign(x.real)) +
               np.sum(np.sign(x_hat.imag) != np.sign(x.imag)))


BER_METHODS = ("perfect", "proposed", "threshold", "integer")


def ber_frame(task):
    """Bit errors of every method on one frame; returns (errors dict, bits)."""
    sim, cell, P, n_pilots, snrp, snrd, frame = task
    dims = sim.dims
    ch, pilots, data_ss = _draw(sim, P, n_pilots, frame)
    gamma = 10 ** (snrd / 10)
    cfg = sim.frame(n_pilots, pilot_power=10 ** ((snrp - snrd) / 10))
    dmask = data_mask(cfg, dims)
    data = qpsk(int(dmask.sum()), np.random.default_rng(data_ss))
    x = place_frame(cfg, pilots, data, dims)
    H = build_H(ch, "bi")
    y = add_noise((H @ x.ravel()).reshape(dims.N, dims.M), gamma, noise_seed(sim.seed, cell, frame))
    sys = make_system(y, cfg, pilots, dims, "bi")

    kz, lz = window_indices(cfg, dims)
    rows = np.ones(dims.MN, dtype=bool)
    rows[kz * dims.M + lz] = False
    cols = dmask.ravel()
    xp = pilot_grid(cfg, pilots, dims).ravel()

    est = {"perfect": H}
    try:
        res = estimate(sys, sim.hyper, "bi")
        _, paths = detect_support(res, cfg, sim.rho)
        est["proposed"] = reconstruct_channel(paths, dims, "bi", sim.n_hat)
    except (EstimationError, ValueError):
        est["proposed"] = None
    res0 = estimate_integer_doppler(sys, sim.hyper, "bi")
    _, paths0 = detect_support(res0, cfg.with_(n_hat=0), sim.rho)
    est["integer"] = reconstruct_channel(paths0, dims, "bi", 0)
    if n_pilots == 1:
        est["threshold"] = shift_channel(threshold_baseline(sys, pilot_sigma(snrp)), dims)

    yv = y.ravel()
    errors = {}
    for name, Hh in est.items():
        if Hh is None:
            errors[name] = 2 * data.size
            continue
        Hh = sp.csr_array(Hh)
        r = (yv - Hh @ xp)[rows]
        x_hat = lmmse_detect(r, Hh[rows][:, cols], gamma)
        errors[name] = _bit_errors(x_hat, data)
    return errors, 2 * data.size


def run_ber(sim: SimConfig, progress=None):
    """BER of perfect, proposed, threshold and integer-Doppler channel knowledge."""
    rows, tag = [], sim.config_hash()
    dims = sim.dims
    cells = list(product(sim.paths, sim.pilots, sim.snrp_db, sim.snrd_db))
    for cell, (P, n_pilots, snrp, snrd) in enumerate(cells):
        n_data = sim.frame(n_pilots).n_data(dims)
        frames = max(sim.trials, math.ceil(sim.ber_symbols / n_data))
        tasks = [(sim, cell, P, n_pilots, snrp, snrd, f) for f in range(frames)]
        out = _pmap(ber_frame, tasks, sim.jobs)
        bits = sum(b for _, b in out)
        cell_rows = []
        for method in BER_METHODS:
            errs = [e[method] for e, _ in out if method in e]
            if not errs:
                continue
            cell_rows.append(MetricRow(experiment="ber", method=method, waveform="bi", P=P,
                                       pilots=n_pilots, snrp_db=snrp, snrd_db=snrd, trials=frames,
                                       ber=sum(errs) / bits, config_hash=tag))
        rows.extend(cell_rows)
        if progress:
            progress(cell_rows)
    return rows


# -- CRLB only -------------------------------------------------------------

def crlb_trial(task):
    sim, P, n_pilots, snrp, trial = task
    ch, pilots, _ = _draw(sim, P, n_pilots, trial)
    cfg = sim.frame(n_pilots, pilot_power=10 ** (snrp / 10))
    return channel_bounds(ch, cfg, pilots, 1.0, sim.waveform)


def run_crlb(sim: SimConfig, progress=None):
    rows, tag = [], sim.config_hash()
    for P, n_pilots, snrp in nmse_cells(sim):
        tasks = [(sim, P, n_pilots, snrp, i) for i in range(sim.trials)]
        b = np.array(_pmap(crlb_trial, tasks, sim.jobs))
        rows.append(MetricRow(experiment="crlb", method="bound", waveform=sim.waveform, P=P,
                              pilots=n_pilots, snrp_db=snrp, trials=sim.trials,
                              crlb_h_db=_mean_db(b[:, 0]), crlb_kappa_db=_mean_db(b[:, 1]),
                              config_hash=tag))
        if progress:
            progress(rows[-1:])
    return rows


# -- output ----------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows))
    return path


_PLOTS = {
    "nmse": ("snrp_db", "median_nmse_H_db", "SNRp (dB)", "NMSE (dB)", False),
    "crlb": ("snrp_db", "crlb_h_db", "SNRp (dB)", "normalised bound (dB)", False),
    "ber": ("snrd_db", "ber", "SNRd (dB)", "BER", True),
    "papr": ("pilots", "papr_db", "pilot symbols", "mean PAPR (dB)", False),
}


def plot_script(experiment: str, csv_name: str) -> str:
    """gnuplot script plotting one curve per method from the emitted CSV."""
    x, y, xl, yl, logy = _PLOTS[experiment]
    xi, yi = CSV_COLUMNS.index(x) + 1, CSV_COLUMNS.index(y) + 1
    mi = CSV_COLUMNS.index("method") + 1
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set xlabel '{xl}'",
        f"set ylabel '{yl}'",
        "set grid",
    ]
    if logy:
        lines.append("set logscale y")
    lines += [
        f"methods = system(\"tail -n +2 {csv_name} | cut -d, -f{mi} | sort -u | tr '\\\\n' ' '\")",
        f"plot for [m in methods] '{csv_name}' using {xi}:(strcol({mi}) eq m ? ${yi} : NaN) "
        "with linespoints title m",
    ]
    return "\n".join(lines) + "\n"
