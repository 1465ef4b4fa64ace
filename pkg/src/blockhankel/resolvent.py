"""Empirical spectral objects of ``W W^H``: eigenvalues, resolvents and Stieltjes transforms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .spectra import EnsembleSpec

CLIP_RELATIVE = 1e-10
MIN_DISTANCE = 1e-12


class SpectrumError(RuntimeError):
    pass


def distance_to_support(z) -> float:
    """``dist(z, [0, inf))``."""
    z = complex(z)
    return abs(z.imag) if z.real >= 0 else abs(z)


def _check_z(z) -> complex:
    z = complex(z)
    if distance_to_support(z) <= MIN_DISTANCE:
        raise ValueError(f"z={z} is too close to the nonnegative real axis")
    return z


@dataclass
class SpectralSample:
    """Sorted nonnegative eigenvalues of one ``W W^H``."""

    eigenvalues: np.ndarray
    seed: int | None = None
    spec: EnsembleSpec | None = None

    def __len__(self):
        return self.eigenvalues.size

    def cdf(self, x) -> np.ndarray:
        return np.searchsorted(self.eigenvalues, np.asarray(x, dtype=float), side="right") / self.eigenvalues.size


def _clip(eigs: np.ndarray) -> np.ndarray:
    thresh = CLIP_RELATIVE * max(1.0, float(np.max(eigs, initial=0.0)))
    if eigs.size and eigs.min() < -thresh:
        raise SpectrumError(f"Gram matrix has eigenvalue {eigs.min():.3e} below -{thresh:.1e}")
    return np.clip(eigs, 0.0, None)


def gram_eigs(W: np.ndarray, seed: int | None = None, spec: EnsembleSpec | None = None) -> SpectralSample:
    """Eigenvalues of ``W W^H`` from a Hermitian eigensolver."""
    W = np.asarray(W)
    G = W @ W.conj().T
    try:
        eigs = scipy.linalg.eigvalsh(G)
    except np.linalg.LinAlgError as exc:
        raise SpectrumError(
            f"eigensolver failed on {G.shape} Gram matrix (Frobenius norm {np.linalg.norm(G):.3e}): {exc}"
        ) from exc
    return SpectralSample(np.sort(_clip(eigs)), seed, spec)


def resolvent(W: np.ndarray, z) -> np.ndarray:
    """``(W W^H - z I)^{-1}``."""
    z = _check_z(z)
    W = np.asarray(W)
    G = W @ W.conj().T
    return np.linalg.inv(G - z * np.eye(G.shape[0]))


def co_resolvent(W: np.ndarray, z) -> np.ndarray:
    """``(W^H W - z I)^{-1}``."""
    z = _check_z(z)
    W = np.asarray(W)
    G = W.conj().T @ W
    return np.linalg.inv(G - z * np.eye(G.shape[0]))


def stieltjes_empirical(sample: SpectralSample, z):
    """``q_N(z) = mean_k 1 / (lambda_k - z)``; ``z`` may be an array."""
    z_arr = np.asarray(z, dtype=complex)
    for zz in np.ravel(z_arr):
        _check_z(zz)
    out = np.mean(1.0 / (sample.eigenvalues[:, None] - np.ravel(z_arr)[None, :]), axis=0)
    return complex(out[0]) if z_arr.ndim == 0 else out.reshape(z_arr.shape)


def trace_functional(Q: np.ndarray, A: np.ndarray) -> complex:
    """``(1/ML) tr(A Q)``."""
    Q = np.asarray(Q)
    A = np.asarray(A)
    if Q.shape != A.shape or Q.shape[0] != Q.shape[1]:
        raise ValueError("Q and A must be square with equal shapes")
    return complex(np.sum(A * Q.T)) / Q.shape[0]


class GramFactor:
    """Eigendecomposition of ``W W^H`` reused across many ``z``."""

    def __init__(self, W: np.ndarray):
        W = np.asarray(W)
        self.size = W.shape[0]
        eigs, vecs = scipy.linalg.eigh(W @ W.conj().T)
        self.eigenvalues = _clip(eigs)
        self.vectors = vecs

    def resolvent(self, z) -> np.ndarray:
        d = 1.0 / (self.eigenvalues - _check_z(z))
        return (self.vectors * d) @ self.vectors.conj().T

    def stieltjes(self, z) -> complex:
        return complex(np.mean(1.0 / (self.eigenvalues - _check_z(z))))

    def trace_with(self, A: np.ndarray | None, z) -> complex:
        """``(1/ML) tr(A Q(z))``; ``A=None`` means the identity."""
        d = 1.0 / (self.eigenvalues - _check_z(z))
        if A is None:
            return complex(np.mean(d))
        U = self.vectors
        # tr(A U D U^H) = sum_k d_k (U^H A U)_{kk}
        diag = np.einsum("ik,ij,jk->k", U.conj(), A, U, optimize=True)
        return complex(np.sum(diag * d)) / self.size

    def diagonal_blocks(self, z, M: int) -> np.ndarray:
        """``(M, L, L)`` diagonal blocks of ``Q(z)``."""
        d = 1.0 / (self.eigenvalues - _check_z(z))
        L = self.size // M
        Ub = self.vectors.reshape(M, L, self.size)
        return np.einsum("mik,k,mjk->mij", Ub, d, Ub.conj(), optimize=True)


def histogram(sample: SpectralSample, bins: int = 50, range_=None) -> np.ndarray:
    """Rows ``(bin_left, bin_right, count, density)``."""
    counts, edges = np.histogram(sample.eigenvalues, bins=bins, range=range_)
    widths = np.diff(edges)
    dens = counts / (sample.eigenvalues.size * widths)
    return np.column_stack([edges[:-1], edges[1:], counts, dens])
