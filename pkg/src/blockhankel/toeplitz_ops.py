"""Toeplitzification operators.

``tau(M)(l) = tr(M J^l) / R`` averages the ``l``-th subdiagonal of an
``R x R`` matrix. ``psi_m`` convolves that sequence with a row's
autocovariance ``r_m`` and returns the ``K x K`` Toeplitz matrix with
entries ``g(i - j)``, ``g(n) = sum_l r_m(n - l) tau(M)(l)``. ``psi_block``
maps ``N x N`` matrices to block-diagonal ``ML x ML`` matrices and
``psi_bar`` maps (the diagonal blocks of) ``ML x ML`` matrices back to
``N x N``, as the average of the per-row operators.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .spectra import EnsembleSpec, SpectralDensity, eval_density, lag_sequence


@dataclass
class BlockDiagonal:
    """``M`` square ``L x L`` blocks stored as an ``(M, L, L)`` array."""

    blocks: np.ndarray

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks)
        if self.blocks.ndim != 3 or self.blocks.shape[1] != self.blocks.shape[2]:
            raise ValueError(f"blocks must have shape (M, L, L), got {self.blocks.shape}")

    @property
    def M(self) -> int:
        return self.blocks.shape[0]

    @property
    def L(self) -> int:
        return self.blocks.shape[1]

    @classmethod
    def identity(cls, M: int, L: int, scale=1.0) -> "BlockDiagonal":
        return cls(np.broadcast_to(scale * np.eye(L, dtype=complex), (M, L, L)).copy())

    @classmethod
    def from_full(cls, A: np.ndarray, M: int) -> "BlockDiagonal":
        """Extract the diagonal blocks of a full ``ML x ML`` matrix."""
        A = np.asarray(A)
        L, rem = divmod(A.shape[0], M)
        if rem or A.shape != (M * L, M * L):
            raise ValueError(f"cannot split a {A.shape} matrix into {M} square blocks")
        idx = np.arange(M)
        return cls(A.reshape(M, L, M, L)[idx, :, idx, :].copy())

    def materialize(self) -> np.ndarray:
        return scipy.linalg.block_diag(*self.blocks)

    def inv(self) -> "BlockDiagonal":
        return BlockDiagonal(np.linalg.inv(self.blocks))

    def H(self) -> "BlockDiagonal":
        return BlockDiagonal(np.conj(np.swapaxes(self.blocks, 1, 2)))

    def T(self) -> "BlockDiagonal":
        return BlockDiagonal(np.swapaxes(self.blocks, 1, 2).copy())

    def norm(self) -> float:
        """Spectral norm of the materialized matrix."""
        return float(np.max(np.linalg.norm(self.blocks, ord=2, axis=(1, 2))))

    def trace(self) -> complex:
        return complex(np.trace(self.blocks, axis1=1, axis2=2).sum())

    def __add__(self, other):
        if isinstance(other, BlockDiagonal):
            return BlockDiagonal(self.blocks + other.blocks)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, BlockDiagonal):
            return BlockDiagonal(self.blocks - other.blocks)
        return NotImplemented

    def __mul__(self, scalar):
        return BlockDiagonal(self.blocks * scalar)

    __rmul__ = __mul__


def as_blocks(A, M: int) -> np.ndarray:
    """``(M, L, L)`` diagonal blocks from a BlockDiagonal, a block array or a full matrix."""
    if isinstance(A, BlockDiagonal):
        out = A.blocks
    else:
        A = np.asarray(A)
        out = A if A.ndim == 3 else BlockDiagonal.from_full(A, M).blocks
    if out.shape[0] != M:
        raise ValueError(f"expected {M} blocks, got {out.shape[0]}")
    return out


def shift(K: int, l: int) -> np.ndarray:
    """``J_K^l``; negative powers are powers of the transpose. Zero once ``|l| >= K``."""
    return np.eye(K, k=l)


@lru_cache(maxsize=16)
def _diag_index(R: int) -> np.ndarray:
    i, j = np.indices((R, R))
    return (i - j + R - 1).ravel()


def tau_sequence(Mtx: np.ndarray) -> np.ndarray:
    """``tau(M)(l)`` for ``l = -(R-1), ..., R-1`` (index ``l + R - 1``)."""
    Mtx = np.asarray(Mtx)
    R = Mtx.shape[0]
    if Mtx.shape != (R, R):
        raise ValueError("tau needs a square matrix")
    idx = _diag_index(R)
    flat = Mtx.ravel()
    out = np.bincount(idx, weights=flat.real, minlength=2 * R - 1).astype(complex)
    if np.iscomplexobj(flat):
        out += 1j * np.bincount(idx, weights=flat.imag, minlength=2 * R - 1)
    return out / R


def tau(Mtx: np.ndarray, l: int) -> complex:
    """``tr(M J^l) / R``, zero when ``|l| >= R``."""
    Mtx = np.asarray(Mtx)
    R = Mtx.shape[0]
    if abs(l) >= R:
        return 0j
    return complex(np.trace(Mtx, offset=-l)) / R


def block_tau(blocks: np.ndarray) -> np.ndarray:
    """``tau`` of each ``L x L`` block: array ``(M, 2L - 1)``."""
    L = blocks.shape[1]
    return np.stack(
        [np.trace(blocks, offset=-l, axis1=1, axis2=2) for l in range(-L + 1, L)], axis=1
    ) / L


def _convolve_lags(rlags: np.ndarray, taus: np.ndarray, K: int) -> np.ndarray:
    """``g(n) = sum_l r(n - l) tau(l)`` for ``|n| < K``.

    ``rlags[..., k + P]`` holds ``r(k)`` for ``|k| <= P`` with ``P >= K + R - 2``;
    ``taus[..., l + R - 1]`` holds ``tau(l)``. Leading axes broadcast.
    """
    R = (taus.shape[-1] + 1) // 2
    P = (rlags.shape[-1] - 1) // 2
    if P < K + R - 2:
        raise ValueError("lag sequence too short")
    n = np.arange(-K + 1, K)[:, None]
    l = np.arange(-R + 1, R)[None, :]
    gathered = rlags[..., n - l + P]
    return np.einsum("...nl,...l->...n", gathered, taus)


def toeplitz_from_lags(g: np.ndarray) -> np.ndarray:
    """``K x K`` matrix with entries ``g(i - j)`` from ``g(-(K-1)..K-1)``."""
    K = (g.shape[-1] + 1) // 2
    col = g[K - 1:]
    row = g[K - 1::-1]
    return scipy.linalg.toeplitz(col, row)


def psi_m(model: SpectralDensity, Mtx: np.ndarray, K: int) -> np.ndarray:
    """``K x K`` Toeplitzification of ``Mtx`` with the autocovariance of ``model``."""
    Mtx = np.asarray(Mtx)
    R = Mtx.shape[0]
    rl = lag_sequence(model, K + R - 2)
    return toeplitz_from_lags(_convolve_lags(rl, tau_sequence(Mtx), K))


def psi_m_expanded(model: SpectralDensity, Mtx: np.ndarray, K: int) -> np.ndarray:
    """Same operator written as ``sum_n (sum_l r(n-l) tau(l)) J_K^{-n}``.

    Explicit double loop over lags; slow, kept as an independent route.
    """
    Mtx = np.asarray(Mtx)
    R = Mtx.shape[0]
    P = K + R - 2
    rl = lag_sequence(model, P)
    out = np.zeros((K, K), dtype=complex)
    for n in range(-K + 1, K):
        coeff = sum(rl[n - l + P] * tau(Mtx, l) for l in range(-R + 1, R))
        out += coeff * shift(K, -n)
    return out


def classical_toeplitzation(Mtx: np.ndarray, K: int) -> np.ndarray:
    """``sum_{|n| < K} tau(M)(n) J_K^{-n}`` built from shift matrices."""
    out = np.zeros((K, K), dtype=complex)
    for n in range(-K + 1, K):
        out += tau(Mtx, n) * shift(K, -n)
    return out


def psi_m_freq(model: SpectralDensity, Mtx: np.ndarray, K: int, grid_points: int = 8192) -> np.ndarray:
    """Frequency-domain evaluation ``int S(nu) a^H M a d_K d_K^H dnu`` (trapezoid rule).

    Exact for densities that are trigonometric polynomials once
    ``grid_points`` exceeds the total degree; used for cross-checks only.
    """
    Mtx = np.asarray(Mtx)
    R = Mtx.shape[0]
    if grid_points < 2 * (R + K):
        raise ValueError(f"grid_points must be at least {2 * (R + K)}")
    nu = np.arange(grid_points) / grid_points
    D = np.exp(2j * np.pi * np.outer(nu, np.arange(R)))
    quad = np.einsum("pa,ab,pb->p", D.conj(), Mtx, D, optimize=True) / R
    weights = np.fft.ifft(eval_density(model, nu) * quad)
    g = weights[np.mod(np.arange(-K + 1, K), grid_points)]
    return toeplitz_from_lags(g)


def _grouped(spec: EnsembleSpec):
    """Row indices grouped by density, so each distinct lag sequence is built once."""
    groups: dict[SpectralDensity, list[int]] = {}
    for m, d in enumerate(spec.densities):
        groups.setdefault(d, []).append(m)
    return groups


def psi_block(spec: EnsembleSpec, B: np.ndarray, *, taus: np.ndarray | None = None) -> BlockDiagonal:
    """Block-diagonal operator: block ``m`` is ``psi_m(S_m, B, L)`` for an ``N x N`` matrix ``B``."""
    N, L = spec.N, spec.L
    if taus is None:
        B = np.asarray(B)
        if B.shape != (N, N):
            raise ValueError(f"expected an {N}x{N} matrix, got {B.shape}")
        taus = tau_sequence(B)
    rl = _lag_table(spec, L + N - 2)
    g = _convolve_lags(rl, taus[None, :], L)
    out = np.empty((spec.M, L, L), dtype=complex)
    for u, rows in enumerate(_unique_rows(spec)):
        out[rows] = toeplitz_from_lags(g[u])
    return BlockDiagonal(out)


def psi_bar(spec: EnsembleSpec, A) -> np.ndarray:
    """``N x N`` average ``(1/M) sum_m psi_m(S_m, A^{m,m}, N)``.

    ``A`` may be a :class:`BlockDiagonal`, an ``(M, L, L)`` array or a full
    ``ML x ML`` matrix (off-diagonal blocks ignored).
    """
    blocks = as_blocks(A, spec.M)
    if blocks.shape[1] != spec.L:
        raise ValueError(f"expected {spec.L}x{spec.L} blocks, got {blocks.shape[1:]}")
    return toeplitz_from_lags(psi_bar_lags(spec, block_tau(blocks)))


def psi_bar_lags(spec: EnsembleSpec, taus: np.ndarray) -> np.ndarray:
    """Lag sequence ``g(n)``, ``|n| < N``, of ``psi_bar`` from per-block ``tau`` rows."""
    N, L = spec.N, spec.L
    rl = _lag_table(spec, N + L - 2)
    g = np.zeros(2 * N - 1, dtype=complex)
    for u, rows in enumerate(_unique_rows(spec)):
        g += _convolve_lags(rl[u], taus[rows].sum(axis=0), N)
    return g / spec.M


def psi_bar_expanded(spec: EnsembleSpec, A) -> np.ndarray:
    """``psi_bar`` through ``tau^(M)(A (R(n-l) kron I_L))(l)``; slow independent route."""
    M, L, N = spec.M, spec.L, spec.N
    full = A.materialize() if isinstance(A, BlockDiagonal) else np.asarray(A)
    if full.ndim == 3:
        full = scipy.linalg.block_diag(*full)
    P = N + L - 2
    rl = spec.lag_matrix(P)
    out = np.zeros((N, N), dtype=complex)
    for n in range(-N + 1, N):
        coeff = 0j
        for l in range(-L + 1, L):
            kron = np.kron(np.diag(rl[:, n - l + P]), np.eye(L))
            coeff += np.trace(full @ kron @ np.kron(np.eye(M), shift(L, l))) / (M * L)
        out += coeff * shift(N, -n)
    return out


# per-spec caches keyed on the (hashable) spec
@lru_cache(maxsize=32)
def _unique_cache(spec: EnsembleSpec):
    groups = _grouped(spec)
    return tuple(groups), tuple(np.array(rows) for rows in groups.values())


def _unique_rows(spec: EnsembleSpec):
    return _unique_cache(spec)[1]


@lru_cache(maxsize=64)
def _lag_table(spec: EnsembleSpec, max_lag: int) -> np.ndarray:
    dens = _unique_cache(spec)[0]
    table = np.vstack([lag_sequence(d, max_lag) for d in dens])
    table.setflags(write=False)
    return table
