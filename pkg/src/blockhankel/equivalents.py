"""Deterministic equivalents: the canonical fixed-point system and its diagnostics.

The pair ``(T, T_tilde)`` solves

    T       = -(1/z) (I_ML + psi_block(T_tilde^T))^{-1}
    T_tilde = -(1/z) (I_N + c_N psi_bar(T)^T)^{-1}

with ``T`` block diagonal. The solver keeps ``T`` as ``M`` blocks and never
forms ``T_tilde`` inside the loop: the map only needs the diagonal sums of
``T_tilde``, which for a Toeplitz system come from two Levinson solves and
the Gohberg-Semencul formula.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.integrate import trapezoid

from .resolvent import GramFactor, distance_to_support
from .sampler import draw
from .spectra import EnsembleSpec
from .toeplitz_ops import (
    BlockDiagonal,
    block_tau,
    psi_bar,
    psi_bar_lags,
    psi_block,
    tau_sequence,
    toeplitz_from_lags,
)

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000
DAMPING_LADDER = (0.5, 0.8)
SINGULAR_CONDITION = 1e12


class ConvergenceError(RuntimeError):
    """The fixed-point iteration hit ``max_iter`` or produced non-finite values."""

    def __init__(self, message, residual=np.nan, iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class StieltjesPair:
    z: complex
    T: BlockDiagonal
    T_tilde: np.ndarray
    iterations: int
    final_residual: float
    damping: float = 0.0
    spec: EnsembleSpec | None = field(default=None, repr=False)

    @property
    def t(self) -> complex:
        return t_scalar(self)


def t_scalar(pair) -> complex:
    """``t_N(z) = tr(T) / (ML)``."""
    T = pair.T if isinstance(pair, StieltjesPair) else pair
    return T.trace() / (T.M * T.L)


def _check_z(z) -> complex:
    z = complex(z)
    if distance_to_support(z) <= 0:
        raise ValueError(f"z={z} lies on the nonnegative real axis")
    return z


def _diag_sums_LU(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Subdiagonal sums of ``L(a) U(b)`` (lower/upper triangular Toeplitz).

    Output index ``l + N - 1`` holds the sum over entries with ``i - j = l``.
    """
    N = a.size
    w = N - np.arange(N)
    pos = np.convolve(a * w, b[::-1])[N - 1:]   # l = 0..N-1
    neg = np.convolve(b * w, a[::-1])[N:]       # l = -1..-(N-1)
    return np.concatenate([neg[::-1], pos])


def toeplitz_inverse_tau(col: np.ndarray, row: np.ndarray) -> np.ndarray:
    """``tau`` sequence of the inverse of the Toeplitz matrix with given first column/row."""
    N = col.size
    rhs = np.zeros((N, 2), dtype=complex)
    rhs[0, 0] = 1.0
    rhs[-1, 1] = 1.0
    sol = scipy.linalg.solve_toeplitz((col, row), rhs, check_finite=False)
    x, y = sol[:, 0], sol[:, 1]
    zy = np.concatenate([[0.0], y[:-1]])
    zx = np.concatenate([[0.0], x[:0:-1]])
    sums = _diag_sums_LU(x, y[::-1]) - _diag_sums_LU(zy, zx)
    return sums / (x[0] * N)


class CanonicalMap:
    """The two half-steps of the canonical iteration at a fixed ``z``."""

    def __init__(self, spec: EnsembleSpec, z, method: str = "structured"):
        if method not in ("structured", "dense"):
            raise ValueError(f"unknown method {method!r}")
        self.spec = spec
        self.z = _check_z(z)
        self.method = method
        self.eye_L = np.eye(spec.L)

    def tilde_system(self, blocks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """First column and row of ``I_N + c_N psi_bar(T)^T``."""
        g = self.spec.c_N * psi_bar_lags(self.spec, block_tau(blocks))
        N = self.spec.N
        # transpose reverses the lag sequence: entry (i, j) becomes g(j - i)
        col = g[N - 1::-1].copy()
        row = g[N - 1:].copy()
        col[0] += 1.0
        row[0] += 1.0
        return col, row

    def tilde_tau(self, blocks: np.ndarray) -> np.ndarray:
        """``tau(T_tilde)`` for ``T_tilde = F_tilde(T)``."""
        col, row = self.tilde_system(blocks)
        if self.method == "structured":
            tau_inv = toeplitz_inverse_tau(col, row)
        else:
            tau_inv = tau_sequence(np.linalg.inv(scipy.linalg.toeplitz(col, row)))
        return -tau_inv / self.z

    def tilde_matrix(self, blocks: np.ndarray) -> np.ndarray:
        col, row = self.tilde_system(blocks)
        return -np.linalg.inv(scipy.linalg.toeplitz(col, row)) / self.z

    def blocks_from_tau(self, tilde_tau: np.ndarray) -> np.ndarray:
        """``F(T_tilde)`` blocks; ``tau(T_tilde^T)(l) = tau(T_tilde)(-l)``."""
        P = psi_block(self.spec, None, taus=tilde_tau[::-1]).blocks
        return -np.linalg.inv(self.eye_L + P) / self.z

    def __call__(self, blocks: np.ndarray) -> np.ndarray:
        return self.blocks_from_tau(self.tilde_tau(blocks))


def initial_blocks(spec: EnsembleSpec, z, start="psi-identity") -> np.ndarray:
    """``(psi_block(I_N) - z I)^{-1}`` (``"psi-identity"``) or ``-(1/z) I`` (``"zero-coupling"``)."""
    z = complex(z)
    if isinstance(start, BlockDiagonal):
        return start.blocks.astype(complex, copy=True)
    if start == "psi-identity":
        delta = np.zeros(2 * spec.N - 1, dtype=complex)
        delta[spec.N - 1] = 1.0
        P = psi_block(spec, None, taus=delta).blocks
        return np.linalg.inv(P - z * np.eye(spec.L))
    if start == "zero-coupling":
        return BlockDiagonal.identity(spec.M, spec.L, -1.0 / z).blocks
    raise ValueError(f"unknown start {start!r}")


def _block_dist(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(a - b, ord=2, axis=(1, 2))))


def _oscillating(history: list[float], window: int = 10) -> bool:
    if len(history) < window + 1:
        return False
    recent = np.asarray(history[-(window + 1):])
    return int(np.sum(np.diff(recent) > 0)) >= window // 2


def solve_canonical(
    spec: EnsembleSpec,
    z,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    damping: float = 0.0,
    *,
    start="psi-identity",
    accel: str | None = None,
    method: str = "structured",
    anderson_memory: int = 8,
) -> StieltjesPair:
    """Solve the canonical system at ``z`` by fixed-point iteration.

    The residual is ``||F(F_tilde(T)) - T||`` in spectral norm, i.e. the
    defect of the returned pair in the first equation; the second holds
    exactly because ``T_tilde`` is recomputed from the returned ``T``.
    ``damping`` mixes ``(1 - d) new + d old`` and escalates through 0.5 and
    0.8 when the residual oscillates. ``accel="anderson"`` switches to
    Anderson mixing, which is much faster close to the real axis.
    """
    z = _check_z(z)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    fmap = CanonicalMap(spec, z, method)
    blocks = initial_blocks(spec, z, start)
    if accel == "anderson":
        blocks, its, res = _anderson(fmap, blocks, tol, max_iter, anderson_memory, damping)
        d = damping
    elif accel is None:
        blocks, its, res, d = _picard(fmap, blocks, tol, max_iter, damping)
    else:
        raise ValueError(f"unknown accel {accel!r}")
    return StieltjesPair(z, BlockDiagonal(blocks), fmap.tilde_matrix(blocks), its, res, d, spec)


def _picard(fmap, blocks, tol, max_iter, damping):
    d = damping
    history: list[float] = []
    ladder = [x for x in DAMPING_LADDER if x > d]
    for it in range(1, max_iter + 1):
        new = fmap(blocks)
        if not np.all(np.isfinite(new)):
            raise ConvergenceError(f"non-finite iterate at sweep {it}", np.inf, it)
        res = _block_dist(new, blocks)
        history.append(res)
        if res <= tol:
            return blocks, it, res, d
        if ladder and _oscillating(history):
            d = ladder.pop(0)
            history.clear()
            log.debug("residual oscillates at sweep %d, damping raised to %.1f", it, d)
        blocks = (1 - d) * new + d * blocks
    raise ConvergenceError(
        f"no convergence after {max_iter} sweeps at z={fmap.z} (residual {res:.3e}); retry with larger damping",
        res,
        max_iter,
    )


def _anderson(fmap, blocks, tol, max_iter, memory, damping):
    """Anderson mixing on the flattened blocks, with restarts when a step misbehaves."""
    beta = 1.0 - damping
    shape = blocks.shape
    x = blocks.ravel()
    X_hist: list[np.ndarray] = []
    F_hist: list[np.ndarray] = []
    best = (np.inf, x)
    res = np.inf
    for it in range(1, max_iter + 1):
        try:
            gx = fmap(x.reshape(shape)).ravel()
        except np.linalg.LinAlgError:
            gx = None
        if gx is None or not np.all(np.isfinite(gx)):
            if not np.isfinite(best[0]):
                raise ConvergenceError(f"non-finite iterate at sweep {it}", np.inf, it)
            # fall back to a plain step from the best point seen
            X_hist.clear()
            F_hist.clear()
            x = best[1]
            continue
        f = gx - x
        res = _block_dist(gx.reshape(shape), x.reshape(shape))
        if res <= tol:
            return x.reshape(shape), it, res
        if res < best[0]:
            best = (res, x)
        elif res > 1e3 * best[0]:
            X_hist.clear()
            F_hist.clear()
            x = best[1]
            continue
        X_hist.append(x)
        F_hist.append(f)
        if len(X_hist) > memory + 1:
            X_hist.pop(0)
            F_hist.pop(0)
        if len(X_hist) > 1:
            dX = np.diff(np.array(X_hist), axis=0).T
            dF = np.diff(np.array(F_hist), axis=0).T
            gamma = np.linalg.lstsq(dF, f, rcond=None)[0]
            x = x + beta * f - (dX + beta * dF) @ gamma
        else:
            x = x + beta * f
    raise ConvergenceError(
        f"Anderson iteration did not converge after {max_iter} sweeps at z={fmap.z} (residual {res:.3e})",
        res,
        max_iter,
    )


def canonical_residuals(spec: EnsembleSpec, pair: StieltjesPair) -> tuple[float, float]:
    """Spectral-norm defects of both canonical equations, evaluated densely."""
    z = pair.z
    T = pair.T
    Tt = pair.T_tilde
    rhs_T = -BlockDiagonal(np.eye(spec.L) + psi_block(spec, Tt.T).blocks).inv().blocks / z
    inner = np.eye(spec.N) + spec.c_N * psi_bar(spec, T).T
    rhs_Tt = -np.linalg.inv(inner) / z
    return _block_dist(rhs_T, T.blocks), float(np.linalg.norm(rhs_Tt - Tt, 2))


@dataclass
class AuxiliaryPair:
    R: BlockDiagonal
    R_tilde: np.ndarray
    source: BlockDiagonal


class SingularSystemError(RuntimeError):
    pass


def deterministic_R(spec: EnsembleSpec, z, EQ_blocks) -> AuxiliaryPair:
    """``R_tilde = -(1/z)(I_N + c_N psi_bar(EQ))^{-1}``, ``R = -(1/z)(I + psi_block(R_tilde^T))^{-1}``."""
    z = _check_z(z)
    EQ = EQ_blocks if isinstance(EQ_blocks, BlockDiagonal) else BlockDiagonal(np.asarray(EQ_blocks))
    if not np.all(np.isfinite(EQ.blocks)):
        raise SingularSystemError("E[Q] estimate contains non-finite entries")
    inner = np.eye(spec.N) + spec.c_N * psi_bar(spec, EQ)
    cond = np.linalg.cond(inner)
    if not np.isfinite(cond) or cond > SINGULAR_CONDITION:
        raise SingularSystemError(f"I + c psi_bar(EQ) has condition {cond:.3e}; the E[Q] estimate looks corrupted")
    R_tilde = -np.linalg.inv(inner) / z
    inner_blocks = np.eye(spec.L) + psi_block(spec, R_tilde.T).blocks
    conds = np.linalg.cond(inner_blocks)
    if not np.all(np.isfinite(conds)) or conds.max() > SINGULAR_CONDITION:
        raise SingularSystemError(f"I + psi_block(R_tilde^T) has condition {conds.max():.3e}")
    R = BlockDiagonal(-np.linalg.inv(inner_blocks) / z)
    return AuxiliaryPair(R, R_tilde, EQ)


@dataclass
class DeltaEstimate:
    blocks: BlockDiagonal
    trace: complex
    trace_stderr: float
    block_stderr: np.ndarray
    expected_Q: BlockDiagonal
    aux: AuxiliaryPair
    trials: int


def expected_resolvent_blocks(spec: EnsembleSpec, z, trials: int, seed: int, A=None):
    """Monte Carlo mean of the diagonal blocks of ``Q(z)`` plus per-trial ``(1/ML) tr(A Q)``."""
    z = _check_z(z)
    acc = np.zeros((spec.M, spec.L, spec.L), dtype=complex)
    acc2 = np.zeros((spec.M, spec.L, spec.L))
    traces = np.empty(trials, dtype=complex)
    A_blocks = None if A is None else _diag_blocks_of(A, spec)
    for t in range(trials):
        fac = GramFactor(draw(spec, seed, t).W)
        blk = fac.diagonal_blocks(z, spec.M)
        acc += blk
        acc2 += np.abs(blk) ** 2
        if A_blocks is None:
            traces[t] = np.trace(blk, axis1=1, axis2=2).sum() / (spec.M * spec.L)
        else:
            traces[t] = np.einsum("mij,mji->", A_blocks, blk) / (spec.M * spec.L)
    mean = acc / trials
    var = np.clip(acc2 / trials - np.abs(mean) ** 2, 0.0, None) * trials / max(trials - 1, 1)
    return mean, np.sqrt(var / trials), traces


def _diag_blocks_of(A, spec):
    if isinstance(A, BlockDiagonal):
        return A.blocks
    A = np.asarray(A)
    if A.ndim == 3:
        return A
    return BlockDiagonal.from_full(A, spec.M).blocks


def delta_estimate(spec: EnsembleSpec, z, trials: int, seed: int, A=None) -> DeltaEstimate:
    """``Delta = E[Q] - R`` on the diagonal blocks, with ``(1/ML) tr(A Delta)``.

    Only the diagonal blocks of ``A`` enter the trace because ``Delta`` is
    stored block-diagonally. ``A=None`` means the identity.
    """
    if trials < 100:
        raise ValueError("delta_estimate needs at least 100 trials")
    mean, stderr, traces = expected_resolvent_blocks(spec, z, trials, seed, A)
    aux = deterministic_R(spec, z, BlockDiagonal(mean))
    delta = mean - aux.R.blocks
    if A is None:
        tr = np.trace(delta, axis1=1, axis2=2).sum() / (spec.M * spec.L)
    else:
        Ab = _diag_blocks_of(A, spec)
        tr = np.einsum("mij,mji->", Ab, delta) / (spec.M * spec.L)
        if not np.any(Ab):
            tr = 0j
    tr_err = float(np.std(traces, ddof=1) / np.sqrt(trials))
    return DeltaEstimate(BlockDiagonal(delta), complex(tr), tr_err, stderr, BlockDiagonal(mean), aux, trials)


@dataclass
class ClassSReport:
    y_grid: np.ndarray
    im_T_margin: np.ndarray
    im_zT_margin: np.ndarray
    im_Tt_margin: np.ndarray
    im_zTt_margin: np.ndarray
    asymptote_error: np.ndarray
    norm_slack: np.ndarray
    first_moment: float
    first_moment_reference: float

    @property
    def passed(self) -> bool:
        return bool(
            np.all(self.im_T_margin >= -1e-9)
            and np.all(self.im_zT_margin >= -1e-9)
            and np.all(self.norm_slack >= -1e-8)
        )


def _hermitian_im(X: np.ndarray) -> np.ndarray:
    return (X - np.conj(np.swapaxes(X, -1, -2))) / 2j


def min_eig_im(X: np.ndarray) -> float:
    """Smallest eigenvalue of ``Im X`` (blocks or a single matrix)."""
    return float(np.min(np.linalg.eigvalsh(_hermitian_im(X))))


def first_moment_estimate(pair: StieltjesPair) -> float:
    """Normalized trace of ``Re(-iy (I + iy T(iy)))``."""
    y = pair.z.imag
    blocks = pair.T.blocks
    L = blocks.shape[1]
    X = -1j * y * (np.eye(L) + 1j * y * blocks)
    return float(np.trace(X, axis1=1, axis2=2).real.sum() / (blocks.shape[0] * L))


def class_s_check(spec: EnsembleSpec, y_grid, tol: float = 1e-12) -> ClassSReport:
    """Solve at ``iy`` for each ``y`` and measure the matrix Stieltjes class properties.

    The first moment uses the largest ``y`` with one Richardson step at ``2y``
    (the estimate has an ``O(1/y^2)`` error).
    """
    ys = np.asarray(y_grid, dtype=float)
    if np.any(ys <= 0) or np.any(np.diff(ys) <= 0):
        raise ValueError("y_grid must be increasing positive reals")
    rows = []
    for y in ys:
        # the moment estimate multiplies the solver error by y^2
        pair = solve_canonical(spec, 1j * y, tol=min(tol, 1e-6 / y**2))
        z = pair.z
        Tb = pair.T.blocks
        rows.append((
            min_eig_im(Tb),
            min_eig_im(z * Tb),
            min_eig_im(pair.T_tilde),
            min_eig_im(z * pair.T_tilde),
            _block_dist(-1j * y * Tb, np.broadcast_to(np.eye(spec.L), Tb.shape)),
            1.0 / distance_to_support(z) - max(pair.T.norm(), np.linalg.norm(pair.T_tilde, 2)),
        ))
    rows = np.array(rows)
    y_top = ys[-1]
    m1 = first_moment_estimate(solve_canonical(spec, 1j * y_top, tol=1e-6 / y_top**2))
    m2 = first_moment_estimate(solve_canonical(spec, 2j * y_top, tol=1e-6 / (2 * y_top) ** 2))
    richardson = (4 * m2 - m1) / 3
    delta = np.zeros(2 * spec.N - 1, dtype=complex)
    delta[spec.N - 1] = 1.0
    reference = psi_block(spec, None, taus=delta).trace().real / (spec.M * spec.L)
    return ClassSReport(ys, *rows.T, richardson, reference)


@dataclass
class DensityResult:
    x: np.ndarray
    f: np.ndarray
    t: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    eps: float

    def mass(self) -> float:
        ok = self.converged
        return float(trapezoid(self.f[ok], self.x[ok]))


def density_from_stieltjes(
    spec: EnsembleSpec,
    x_grid,
    eps: float = 1e-3,
    tol: float = 1e-10,
    max_iter: int | None = None,
    method: str = "structured",
) -> DensityResult:
    """``f(x) = Im t_N(x + i eps) / pi`` on a grid, warm-starting each point from its neighbour.

    Points where the solver fails are masked out (``converged`` false) rather
    than aborting the whole grid.
    """
    if not 1e-4 <= eps <= 1e-1:
        raise ValueError("eps must lie in [1e-4, 1e-1]")
    xs = np.asarray(x_grid, dtype=float)
    if max_iter is None:
        max_iter = int(np.ceil(5.0 / eps))
    f = np.full(xs.shape, np.nan)
    t = np.full(xs.shape, np.nan, dtype=complex)
    ok = np.zeros(xs.shape, dtype=bool)
    its = np.zeros(xs.shape, dtype=int)
    warm = None
    for i, x in enumerate(xs):
        z = complex(x, eps)
        fmap = CanonicalMap(spec, z, method)
        start = warm if warm is not None else initial_blocks(spec, z)
        try:
            blocks, it, _ = _anderson(fmap, start, tol, max_iter, 8, 0.0)
        except ConvergenceError:
            try:
                blocks, it, _ = _anderson(fmap, initial_blocks(spec, z), tol, max_iter, 8, 0.5)
            except ConvergenceError as exc:
                log.warning("density solve failed at x=%g: %s", x, exc)
                warm = None
                continue
        warm = blocks
        tv = np.trace(blocks, axis1=1, axis2=2).sum() / (spec.M * spec.L)
        t[i] = tv
        f[i] = tv.imag / np.pi
        ok[i] = True
        its[i] = it
    return DensityResult(xs, f, t, ok, its, eps)
