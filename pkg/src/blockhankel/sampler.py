"""Correlated complex Gaussian rows and the block-Hankel matrix ``W``.

Row ``m`` is a circularly-symmetric complex Gaussian vector
``w_m(1..N+L-1)`` with ``E[w_m(k) w_m(k')^*] = r_m(k - k') / N``, drawn
exactly by circulant embedding. ``W`` stacks the ``M`` Hankel blocks
``W^m[i, j] = w_m(i + j - 1)`` (1-based) vertically.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectra import EnsembleSpec, SpectralDensity, autocovariance

NEGATIVE_EIGEN_TOL = 1e-8
MAX_EMBEDDING_DOUBLINGS = 6


class SamplingError(RuntimeError):
    """Circulant embedding failed to produce a nonnegative spectrum."""


def row_rng(seed: int, m: int = 0, trial: int = 0) -> np.random.Generator:
    """Independent counter-based (Philox) stream for one (seed, row, trial) triple."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(trial), int(m)))
    return np.random.Generator(np.random.Philox(ss))


def embedding_spectrum(model: SpectralDensity, n: int) -> np.ndarray:
    """Eigenvalues of the smallest admissible circulant embedding of ``r(0..n-1)``.

    Starts at length ``2n`` and doubles while the spectrum dips below
    ``-1e-8``; values in ``(-1e-8, 0)`` are clipped to 0.
    """
    size = 2 * n
    for _ in range(MAX_EMBEDDING_DOUBLINGS + 1):
        half = size // 2
        r = np.asarray(autocovariance(model, np.arange(half + 1)), dtype=complex)
        c = np.zeros(size, dtype=complex)
        c[:half] = r[:half]
        c[half] = r[half].real
        c[size - half + 1:] = np.conj(r[1:half][::-1])
        lam = np.fft.fft(c).real
        if lam.min() >= -NEGATIVE_EIGEN_TOL:
            return np.clip(lam, 0.0, None)
        size *= 2
    raise SamplingError(
        f"circulant embedding of {model.family} density has eigenvalue {lam.min():.3e} "
        f"at size {size // 2}; the spectrum is probably not a valid density"
    )


def sample_sequence(model: SpectralDensity, N: int, L: int, seed: int, *, m: int = 0, trial: int = 0,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """One row ``w(1..N+L-1)`` with covariance ``r(k - k') / N``."""
    if N < 1 or L < 1:
        raise ValueError("N and L must be positive")
    n = N + L - 1
    lam = embedding_spectrum(model, n)
    if rng is None:
        rng = row_rng(seed, m, trial)
    size = lam.size
    xi = (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)
    x = np.sqrt(size) * np.fft.ifft(np.sqrt(lam) * xi)
    return x[:n] / np.sqrt(N)


def sample_sequences(spec: EnsembleSpec, seed: int, trial: int = 0) -> np.ndarray:
    """``(M, N+L-1)`` array of independent rows for one trial."""
    return np.vstack(
        [sample_sequence(d, spec.N, spec.L, seed, m=m, trial=trial) for m, d in enumerate(spec.densities)]
    )


def build_block_hankel(sequences: np.ndarray, spec: EnsembleSpec) -> np.ndarray:
    """Stack the ``L x N`` Hankel blocks built from each row into an ``ML x N`` matrix."""
    seqs = np.asarray(sequences)
    n = spec.N + spec.L - 1
    if seqs.shape != (spec.M, n):
        raise ValueError(f"expected sequences of shape {(spec.M, n)}, got {seqs.shape}")
    windows = np.lib.stride_tricks.sliding_window_view(seqs, spec.N, axis=1)
    return windows.reshape(spec.M * spec.L, spec.N).copy()


@dataclass
class BlockHankelSample:
    spec: EnsembleSpec
    sequences: np.ndarray
    W: np.ndarray
    seed: int
    trial: int = 0


def draw(spec: EnsembleSpec, seed: int, trial: int = 0) -> BlockHankelSample:
    seqs = sample_sequences(spec, seed, trial)
    return BlockHankelSample(spec, seqs, build_block_hankel(seqs, spec), seed, trial)


def covariance_from_series(x: np.ndarray, L: int, normalization: str = "per-sample") -> np.ndarray:
    """Sample covariance of the stacked lag vectors of a multichannel series.

    ``x`` has shape ``(N, M)`` (time by channel). Only complete windows
    ``x_L(n)``, ``n = 1..N-L+1`` are used. ``per-sample`` divides by ``N``,
    ``paper-literal`` by ``ML``.
    """
    x = np.asarray(x)
    N, M = x.shape
    if N < L:
        raise ValueError(f"series of length {N} is shorter than L={L}")
    windows = np.lib.stride_tricks.sliding_window_view(x, L, axis=0)  # (N-L+1, M, L)
    X = windows.reshape(N - L + 1, M * L).T
    if normalization == "per-sample":
        scale = 1.0 / N
    elif normalization == "paper-literal":
        scale = 1.0 / (M * L)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return scale * (X @ X.conj().T)


def sample_covariance(spec: EnsembleSpec, sequences: np.ndarray, normalization: str = "per-sample") -> np.ndarray:
    """``R_hat_L`` from the observed part ``x_m(1..N) = sqrt(N) w_m(1..N)``."""
    seqs = np.asarray(sequences)
    x = np.sqrt(spec.N) * seqs[:, : spec.N].T
    return covariance_from_series(x, spec.L, normalization)


def end_effect_gap(sample: BlockHankelSample) -> float:
    """Spectral norm ``||W W^H - R_hat_L||`` with per-sample normalization."""
    W = sample.W
    Rhat = sample_covariance(sample.spec, sample.sequences, "per-sample")
    return float(np.linalg.norm(W @ W.conj().T - Rhat, 2))
