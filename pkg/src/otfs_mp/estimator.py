"""Structured sparse message-passing estimator for channel gains and
fractional Doppler shifts.

Each active dictionary block ``c_j = h_j g_j`` is a gain times the
phase-augmented spreading vector ``g_j = [Phi(q, kappa_j)]_q``.  The loop
mixes a mean-field Gaussian update for ``c`` and the noise precision with
belief-propagation messages through the bilinear ``c = h g`` node, a sparse
Bayesian (Gamma-precision) prior on ``h`` and a first-order Taylor
linearisation of ``Phi`` in ``kappa``.

Messages are Gaussian and stored as (mean, variance) pairs.  A vague message
has infinite variance; everything is combined in precision form so such
messages simply drop out.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la

from .channel import ChannelPath, DDChannel, build_H
from .frame import SparseSystem, block_taps, column_taps
from .kernels import GridDims, dd_phase, spread_f, spread_f_dkappa

VAR_FLOOR = 1e-12
VAR_CEIL = 1e12
GAMMA_CAP = 1e12
G_TINY = 1e-8
KAPPA_PRIOR_PREC = 12.0  # 1 / var(U[-0.5, 0.5])


class EstimationError(RuntimeError):
    """Raised when the Gaussian update hits a non-positive-definite system."""


@dataclass(frozen=True)
class Hyperparams:
    epsilon: float = 1.0
    eta: float = 0.0
    max_iter: int = 50
    tol: float = 1e-6
    damping: float = 0.7

    def __post_init__(self):
        if self.epsilon < 0 or self.eta < 0:
            raise ValueError("epsilon and eta must be >= 0")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class EstimatorState:
    """Every message of one iteration.  Arrays over ``(J, B)`` unless noted."""

    c_bwd: np.ndarray        # backward c mean (from the c = h g node)
    nu_c_bwd: np.ndarray
    lam: np.ndarray          # (J,) prior precision of h
    gamma: float             # noise precision estimate
    kappa_prev: np.ndarray   # (J,) linearisation point
    g_hat: np.ndarray        # belief mean of g
    nu_g: np.ndarray
    # filled by the first iteration
    c_post: Optional[np.ndarray] = None
    nu_c_post: Optional[np.ndarray] = None
    c_fwd: Optional[np.ndarray] = None
    nu_c_fwd: Optional[np.ndarray] = None
    h_fwd: Optional[np.ndarray] = None
    nu_h_fwd: Optional[np.ndarray] = None
    h_hat: Optional[np.ndarray] = None      # (J,)
    nu_h: Optional[np.ndarray] = None       # (J,)
    h_bwd: Optional[np.ndarray] = None
    nu_h_bwd: Optional[np.ndarray] = None
    g_fwd: Optional[np.ndarray] = None
    nu_g_fwd: Optional[np.ndarray] = None
    kappa_fwd: Optional[np.ndarray] = None
    nu_kappa_fwd: Optional[np.ndarray] = None
    kappa_hat: Optional[np.ndarray] = None  # (J,)
    nu_kappa: Optional[np.ndarray] = None   # (J,)
    kappa_bwd: Optional[np.ndarray] = None
    nu_kappa_bwd: Optional[np.ndarray] = None
    g_bwd: Optional[np.ndarray] = None
    nu_g_bwd: Optional[np.ndarray] = None
    iteration: int = 0

    def variances(self):
        names = [f.name for f in dataclasses.fields(self) if f.name.startswith("nu_")]
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}


@dataclass
class EstimateResult:
    h_hat: np.ndarray
    kappa_hat: np.ndarray
    gamma_hat: float
    iterations: int
    converged: bool
    nu_h: np.ndarray
    c_post: np.ndarray
    support: Optional[np.ndarray] = None   # boolean per block

    def to_json(self, cfg=None) -> dict:
        out = {
            "gamma_hat": float(self.gamma_hat),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "blocks": [],
        }
        for j in range(self.h_hat.size):
            rec = {"j": j, "re": float(self.h_hat[j].real), "im": float(self.h_hat[j].imag),
                   "kappa": float(self.kappa_hat[j])}
            if cfg is not None:
                t, d = block_taps(j, cfg)
                rec["t"], rec["d"] = int(t), int(d)
            if self.support is not None:
                rec["support"] = bool(self.support[j])
            out["blocks"].append(rec)
        return out


class _Geometry:
    """Per-column ``(t, d, q)`` taps and the normalised spreading vectors.

    The block vector ``[Phi(q, kappa)]_q`` is written as ``scale(kappa) *
    u(kappa)`` where ``u`` has unit norm and no kappa-dependent common phase.
    The gain absorbs ``scale``, so ``u`` and its kappa-derivative are
    orthogonal and the kappa messages carry no component the gain can
    explain.  ``scale`` maps the gains back afterwards.
    """

    def __init__(self, sys: SparseSystem):
        t, d, q = column_taps(sys.cfg)
        J, B = sys.J, sys.B
        self.t = t.reshape(J, B)
        self.d = d.reshape(J, B)
        self.q = q.reshape(J, B)
        self.dims = sys.dims
        N = sys.dims.N
        self._w = np.pi * (N - 1) / N
        self._qphase = np.exp(1j * self._w * self.q)

    def _real_kernel(self, kappa):
        N = self.dims.N
        x = self.q + kappa[:, None]
        rot = np.exp(-1j * self._w * x)
        f = spread_f(self.q, kappa[:, None], N)
        df = spread_f_dkappa(self.q, kappa[:, None], N)
        D = np.real(f * rot)
        dD = np.real((df - 1j * self._w * f) * rot)
        return D, dD

    def phi(self, kappa):
        D, _ = self._real_kernel(kappa)
        S = np.sqrt((D ** 2).sum(axis=1, keepdims=True))
        return self._qphase * D / S

    def phi_prime(self, kappa):
        D, dD = self._real_kernel(kappa)
        S = np.sqrt((D ** 2).sum(axis=1, keepdims=True))
        dS = (D * dD).sum(axis=1, keepdims=True) / S
        return self._qphase * (dD / S - D * dS / S ** 2)

    def scale(self, kappa):
        """Per-block complex factor with ``Phi = scale * phi``."""
        D, _ = self._real_kernel(kappa)
        S = np.sqrt((D ** 2).sum(axis=1))
        t, d = self.t[:, 0], self.d[:, 0]
        return S * np.exp(1j * self._w * kappa) * dd_phase(t, d, kappa, self.dims)


def _inv_var(nu):
    with np.errstate(divide="ignore"):
        return np.where(np.isfinite(nu), 1.0 / nu, 0.0)


def _clamp(nu):
    nu = np.where(np.isnan(nu), np.inf, nu)
    return np.clip(nu, VAR_FLOOR, np.inf)


def init_state(sys: SparseSystem, hp: Hyperparams = Hyperparams()) -> EstimatorState:
    J, B = sys.J, sys.B
    kappa0 = np.zeros(J)
    geom = _Geometry(sys)
    return EstimatorState(
        c_bwd=np.zeros((J, B), dtype=complex),
        nu_c_bwd=np.ones((J, B)),
        lam=np.ones(J),
        gamma=1.0,
        kappa_prev=kappa0,
        g_hat=geom.phi(kappa0),
        nu_g=np.zeros((J, B)),
    )


def _posterior_c(X, y, c_bwd, nu_c_bwd, gamma):
    prec = np.clip(1.0 / np.clip(nu_c_bwd, VAR_FLOOR, VAR_CEIL), 1.0 / VAR_CEIL, 1.0 / VAR_FLOOR)
    XhX = X.conj().T @ X
    A = gamma * XhX
    A[np.diag_indices_from(A)] += prec
    try:
        cf = la.cho_factor(A, lower=False, check_finite=True)
    except (la.LinAlgError, ValueError) as exc:
        raise EstimationError(f"posterior precision is not positive definite: {exc}") from exc
    V = la.cho_solve(cf, np.eye(A.shape[0], dtype=complex))
    c_post = V @ (prec * c_bwd + gamma * (X.conj().T @ y))
    return c_post, V, XhX


def iterate_once(state: EstimatorState, sys: SparseSystem, hp: Hyperparams = Hyperparams(),
                 waveform: Optional[str] = None, freeze_kappa: bool = False,
                 _geom: Optional[_Geometry] = None) -> EstimatorState:
    """One sweep of the message schedule; returns a new state."""
    waveform = waveform or sys.waveform
    geom = _geom or _Geometry(sys)
    J, B = sys.J, sys.B
    s = dataclasses.replace(state)
    y = sys.y
    X = sys.X_bi if waveform == "bi" else dataclasses.replace(sys, waveform="rect").matrix(s.kappa_prev)

    # 1. Gaussian belief of c
    c_bwd = s.c_bwd.ravel()
    nu_c_bwd = np.clip(s.nu_c_bwd.ravel(), VAR_FLOOR, VAR_CEIL)
    c_post, V, XhX = _posterior_c(X, y, c_bwd, nu_c_bwd, s.gamma)
    nu_post = np.clip(V.diagonal().real, VAR_FLOOR, None)

    # 2. noise precision
    r = y - X @ c_post
    denom = np.vdot(r, r).real + np.sum(V * XhX.T).real
    s.gamma = float(min(sys.Z / denom, GAMMA_CAP)) if denom > 0 else GAMMA_CAP

    # 3. extrinsic messages out of the observation node
    tau_fwd = np.clip(1.0 / nu_post - 1.0 / nu_c_bwd, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        nu_c_fwd = np.where(tau_fwd > 0, 1.0 / tau_fwd, np.inf)
        c_fwd = np.where(tau_fwd > 0, nu_c_fwd * (c_post / nu_post - c_bwd / nu_c_bwd), 0.0)
    nu_c_fwd = _clamp(nu_c_fwd)
    s.c_post, s.nu_c_post = c_post.reshape(J, B), nu_post.reshape(J, B)
    s.c_fwd, s.nu_c_fwd = c_fwd.reshape(J, B), nu_c_fwd.reshape(J, B)

    # 4. forward h messages, g treated as known
    g = s.g_hat
    ok = (np.abs(g) >= G_TINY) & np.isfinite(s.nu_c_fwd)
    with np.errstate(divide="ignore", invalid="ignore"):
        s.h_fwd = np.where(ok, s.c_fwd / np.where(ok, g, 1.0), 0.0)
        s.nu_h_fwd = np.where(ok, s.nu_c_fwd / np.abs(np.where(ok, g, 1.0)) ** 2, np.inf)
    s.nu_h_fwd = _clamp(s.nu_h_fwd)
    tau_b = _inv_var(s.nu_h_fwd)
    tau_q = tau_b.sum(axis=1)
    wsum = (tau_b * s.h_fwd).sum(axis=1)

    # 5-7. belief of h, prior precision, belief refresh
    def h_belief(lam):
        nu_h = 1.0 / (tau_q + lam)
        return nu_h * wsum, nu_h

    s.h_hat, s.nu_h = h_belief(s.lam)
    s.lam = (hp.epsilon + 1.0) / (hp.eta + np.abs(s.h_hat) ** 2 + s.nu_h)
    s.h_hat, s.nu_h = h_belief(s.lam)

    # 8. backward h messages (extrinsic per b)
    prec_bwd = (tau_q + s.lam)[:, None] - tau_b
    s.nu_h_bwd = _clamp(1.0 / prec_bwd)
    s.h_bwd = s.nu_h_bwd * (wsum[:, None] - tau_b * s.h_fwd)

    # 9. forward g messages
    energy = (np.abs(s.h_hat) ** 2 + s.nu_h)[:, None]
    s.g_fwd = s.c_fwd * s.h_hat.conj()[:, None] / energy
    s.nu_g_fwd = _clamp(s.nu_c_fwd / energy)

    kp = s.kappa_prev
    Phi = geom.phi(kp)
    dPhi = geom.phi_prime(kp)
    if freeze_kappa:
        s.kappa_fwd = np.zeros((J, B))
        s.nu_kappa_fwd = np.full((J, B), np.inf)
        s.kappa_hat = np.zeros(J)
        s.nu_kappa = np.zeros(J)
        s.kappa_bwd = np.zeros((J, B))
        s.nu_kappa_bwd = np.zeros((J, B))
        s.g_bwd = Phi
        s.nu_g_bwd = np.zeros((J, B))
    else:
        # 10. forward kappa messages from the linearised Phi; the real and
        # imaginary parts are merged in precision form, so a vanishing part
        # of Phi' contributes zero precision
        mag2 = np.abs(dPhi) ** 2
        tau_k = 2.0 * mag2 * _inv_var(s.nu_g_fwd)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(mag2 > 0, np.real(dPhi.conj() * (s.g_fwd - Phi)) / mag2, 0.0)
            s.kappa_fwd = kp[:, None] + step
            s.nu_kappa_fwd = np.where(tau_k > 0, 1.0 / tau_k, np.inf)

        # 11. kappa belief with clipping to the uniform prior's support
        tau_sum = tau_k.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            k_hat = np.where(tau_sum > 0, (tau_k * s.kappa_fwd).sum(axis=1) / tau_sum, kp)
            nu_k = np.where(tau_sum > 0, 1.0 / tau_sum, np.inf)
        clipped = np.abs(k_hat) >= 0.5
        k_hat = np.clip(k_hat, -0.5, 0.5)
        nu_k = np.where(clipped, 0.0, nu_k)
        s.kappa_hat, s.nu_kappa = k_hat, nu_k

        # 12. backward kappa messages; the uniform prior enters as its
        # moment-matched Gaussian N(0, 1/12) so the message stays proper
        tau_rest = tau_sum[:, None] - tau_k + KAPPA_PRIOR_PREC
        with np.errstate(divide="ignore", invalid="ignore"):
            nu_kb = np.where(tau_rest > 0, 1.0 / tau_rest, np.inf)
            kb = ((tau_sum * k_hat)[:, None] - tau_k * s.kappa_fwd) / tau_rest
        kb = np.where((tau_rest > 0) & ~clipped[:, None], kb, k_hat[:, None])
        nu_kb = np.where(clipped[:, None], 0.0, nu_kb)
        s.kappa_bwd, s.nu_kappa_bwd = kb, np.clip(nu_kb, 0.0, VAR_CEIL)

        # 13. backward g messages through the linearised Phi
        s.g_bwd = Phi + dPhi * (s.kappa_bwd - kp[:, None])
        s.nu_g_bwd = s.nu_kappa_bwd * np.abs(dPhi) ** 2

    # 14. belief of g
    exact = s.nu_g_bwd <= 0
    tau_gb = np.where(exact, 0.0, _inv_var(s.nu_g_bwd))
    tau_gf = _inv_var(s.nu_g_fwd)
    tot = tau_gb + tau_gf
    with np.errstate(divide="ignore", invalid="ignore"):
        g_mix = np.where(tot > 0, (tau_gb * s.g_bwd + tau_gf * s.g_fwd) / tot, s.g_bwd)
        nu_mix = np.where(tot > 0, 1.0 / tot, np.inf)
    s.g_hat = np.where(exact, s.g_bwd, g_mix)
    s.nu_g = np.where(exact, 0.0, nu_mix)

    # 15. backward c messages (product of the h and g messages), damped
    c_new = s.h_bwd * s.g_bwd
    nu_new = (np.abs(s.h_bwd) ** 2 * s.nu_g_bwd + np.abs(s.g_bwd) ** 2 * s.nu_h_bwd
              + s.nu_h_bwd * s.nu_g_bwd)
    nu_new = np.clip(np.nan_to_num(nu_new, nan=VAR_CEIL, posinf=VAR_CEIL), VAR_FLOOR, VAR_CEIL)
    a = hp.damping
    if state.iteration == 0:
        a = 1.0
    s.c_bwd = a * c_new + (1 - a) * s.c_bwd
    s.nu_c_bwd = a * nu_new + (1 - a) * s.nu_c_bwd

    s.kappa_prev = s.kappa_hat.copy()
    s.iteration = state.iteration + 1
    return s


def estimate(sys: SparseSystem, hp: Hyperparams = Hyperparams(), waveform: Optional[str] = None,
             freeze_kappa: bool = False, state: Optional[EstimatorState] = None) -> EstimateResult:
    """Run the message schedule to convergence or ``hp.max_iter``."""
    if sys.Z < 1:
        raise ValueError("empty observation")
    geom = _Geometry(sys)
    s = state or init_state(sys, hp)
    prev = None
    converged = False
    for _ in range(hp.max_iter):
        s = iterate_once(s, sys, hp, waveform, freeze_kappa, _geom=geom)
        params = np.concatenate([s.h_hat.real, s.h_hat.imag, s.kappa_hat])
        if prev is not None:
            ref = np.linalg.norm(prev)
            if ref > 0 and np.linalg.norm(params - prev) / ref < hp.tol:
                converged = True
                break
        prev = params
    h, nu_h = physical_gains(s, geom)
    return EstimateResult(h, s.kappa_hat.copy(), s.gamma, s.iteration, converged,
                          nu_h, s.c_post.ravel().copy())


def physical_gains(state: EstimatorState, geom: _Geometry):
    """Gains and their variances in the original ``c = h Phi`` parameterisation."""
    sc = geom.scale(state.kappa_hat)
    return state.h_hat / sc, state.nu_h / np.abs(sc) ** 2


def estimate_integer_doppler(sys: SparseSystem, hp: Hyperparams = Hyperparams(),
                             waveform: Optional[str] = None) -> EstimateResult:
    """Ablation: every Doppler shift assumed on-grid (kappa frozen at 0, q = 0 only)."""
    cfg0 = sys.cfg.with_(n_hat=0)
    keep = sys.cfg.n_hat + sys.cfg.B * np.arange(sys.J)
    sub = SparseSystem(sys.y, sys.X_bi[:, keep], cfg0, sys.dims, sys.waveform, sys.pilots)
    return estimate(sub, hp, waveform, freeze_kappa=True)


def detect_support(result: EstimateResult, sys_or_cfg, rho: float = 1e-3):
    """Keep blocks with ``|h_j|^2 >= rho * max |h|^2``; returns (mask, paths)."""
    cfg = getattr(sys_or_cfg, "cfg", sys_or_cfg)
    p = np.abs(result.h_hat) ** 2
    if not p.max() > 0:
        raise ValueError("empty support: every gain estimate is zero")
    mask = p >= rho * p.max()
    t, d = block_taps(np.arange(result.h_hat.size), cfg)
    paths = [ChannelPath(complex(result.h_hat[j]), int(t[j]), int(d[j]),
                         float(np.clip(result.kappa_hat[j], -0.5, 0.5)))
             for j in np.flatnonzero(mask)]
    result.support = mask
    return mask, paths


def reconstruct_channel(paths, dims: GridDims, waveform: str = "bi", n_hat: int = 1):
    """Sparse channel matrix rebuilt from estimated paths."""
    return build_H(DDChannel(tuple(paths), n_hat, dims), waveform)
