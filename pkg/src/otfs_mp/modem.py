"""ISFFT/SFFT, rectangular-pulse time synthesis and PAPR."""

import numpy as np


def isfft(x):
    """DD grid ``x[k, l]`` -> TF grid ``X[n, m]`` (unitary).

    ``X[n,m] = (1/sqrt(MN)) sum_k sum_l x[k,l] e^{j2pi(nk/N - ml/M)}``.
    """
    x = np.asarray(x, dtype=complex)
    return np.fft.fft(np.fft.ifft(x, axis=0, norm="ortho"), axis=1, norm="ortho")


def sfft(X):
    """TF grid -> DD grid; exact inverse of :func:`isfft`."""
    X = np.asarray(X, dtype=complex)
    return np.fft.ifft(np.fft.fft(X, axis=0, norm="ortho"), axis=1, norm="ortho")


def to_time_rect(X):
    """Rectangular-pulse Heisenberg transform, critically sampled.

    Slot ``n`` holds the energy-preserving length-M IDFT of ``X[n, :]``; slots
    are concatenated, giving ``M*N`` samples.
    """
    X = np.asarray(X, dtype=complex)
    return np.fft.ifft(X, axis=1, norm="ortho").ravel()


def papr(s) -> float:
    """Peak-to-average power ratio in dB."""
    p = np.abs(np.asarray(s)) ** 2
    mean = p.mean()
    if not mean > 0:
        raise ValueError("PAPR undefined for an all-zero signal")
    return float(10 * np.log10(p.max() / mean))
