"""Monte Carlo checks of the convergence statements for block-Hankel Gram matrices.

Every trial draws its own ``W`` from the ``(seed, row, trial)`` stream, so a
report depends only on the configuration and seed, never on how trials are
spread over workers.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import marchenko_pastur as mp
from .equivalents import density_from_stieltjes, solve_canonical
from .resolvent import GramFactor, SpectralSample, gram_eigs, stieltjes_empirical
from .sampler import draw
from .spectra import EnsembleSpec, grid_extrema

LADDER_TOL = 1e-12


@dataclass
class RateRow:
    M: int
    L: int
    N: int
    z: complex
    statistic: str
    trials: int
    estimate: float
    stderr: float
    seed: int


@dataclass
class RateReport:
    rows: list[RateRow]
    slope: float = np.nan
    slope_ci: tuple[float, float] = (np.nan, np.nan)
    unresolved: list[bool] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["M", "L", "N", "re_z", "im_z", "statistic", "trials", "estimate", "stderr", "seed"])
        for r in self.rows:
            writer.writerow([r.M, r.L, r.N, repr(r.z.real), repr(r.z.imag), r.statistic, r.trials, repr(r.estimate), repr(r.stderr), r.seed])
        buf.write(f"# slope={self.slope!r} ci_low={self.slope_ci[0]!r} ci_high={self.slope_ci[1]!r}\n")
        return buf.getvalue()


def check_ladder(ladder) -> float:
    """Common ratio ``ML/N`` of a ladder; raises if any entry departs from it."""
    ladder = [tuple(int(v) for v in entry) for entry in ladder]
    if not ladder:
        raise ValueError("empty ladder")
    ratios = [M * L / N for M, L, N in ladder]
    for (M, L, N), c in zip(ladder, ratios):
        if abs(c - ratios[0]) > LADDER_TOL:
            raise ValueError(f"ladder entry {(M, L, N)} has ratio {c}, expected {ratios[0]}")
    return ratios[0]


def random_test_matrix(size: int, seed: int) -> np.ndarray:
    """Random Hermitian matrix with unit spectral norm."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=int(seed), spawn_key=(size, 7))))
    G = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
    H = (G + G.conj().T) / 2
    return H / np.linalg.norm(H, 2)


def _resolve_A(A, size: int, seed: int):
    if A is None or (isinstance(A, str) and A == "identity"):
        return None
    if isinstance(A, str) and A == "random":
        return random_test_matrix(size, seed)
    if isinstance(A, str) and A == "zero":
        return np.zeros((size, size))
    return np.asarray(A)


def _trial_trace(spec: EnsembleSpec, z: complex, seed: int, A, trial: int) -> complex:
    fac = GramFactor(draw(spec, seed, trial).W)
    return fac.trace_with(A, z)


def trial_traces(spec: EnsembleSpec, z, trials: int, seed: int, A=None, workers: int = 1) -> np.ndarray:
    """``(1/ML) tr(A Q_t(z))`` for ``t = 0..trials-1`` in trial order."""
    fn = partial(_trial_trace, spec, complex(z), seed, A)
    if workers <= 1:
        return np.array([fn(t) for t in range(trials)])
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return np.array(list(pool.map(fn, range(trials), chunksize=max(1, trials // (4 * workers)))))


def sample_variance(values: np.ndarray) -> float:
    """Unbiased ``E|v - mean|^2`` of complex samples."""
    v = np.asarray(values)
    return float(np.sum(np.abs(v - v.mean()) ** 2) / (v.size - 1))


def jackknife_stderr(values: np.ndarray, stat=sample_variance) -> float:
    v = np.asarray(values)
    n = v.size
    loo = np.array([stat(np.delete(v, i)) for i in range(n)])
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def jackknife_variance_stderr(values: np.ndarray) -> float:
    """Closed-form leave-one-out jackknife for :func:`sample_variance` (O(n))."""
    v = np.asarray(values)
    n = v.size
    s1 = v.sum()
    s2 = np.sum(np.abs(v) ** 2)
    # leave-one-out sums
    l1 = s1 - v
    l2 = s2 - np.abs(v) ** 2
    loo = (l2 - np.abs(l1) ** 2 / (n - 1)) / (n - 2)
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def fit_loglog_slope(x, y, yerr=None) -> tuple[float, float]:
    """Weighted least-squares slope of ``log y`` against ``log x`` and its standard error.

    With ``yerr`` the weights are inverse delta-method variances and the error
    is taken as known; without it the residual scatter sets the error.
    """
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if yerr is None:
        w = np.ones_like(lx)
    else:
        w = (np.asarray(y, float) / np.asarray(yerr, float)) ** 2
    X = np.column_stack([np.ones_like(lx), lx])
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    beta = cov @ X.T @ (w * ly)
    if yerr is None and lx.size > 2:
        resid = ly - X @ beta
        cov = cov * float(resid @ resid) / (lx.size - 2)
    return float(beta[1]), float(np.sqrt(cov[1, 1]))


def variance_sweep(spec_family: EnsembleSpec, ladder, z=2j, trials: int = 200, seed: int = 0,
                   A=None, workers: int = 1) -> RateReport:
    """Sample variance of ``(1/ML) tr(A Q(z))`` along a fixed-ratio ladder.

    ``A`` is ``None`` (identity), ``"random"`` (Hermitian, unit norm) or an
    explicit matrix. The fitted slope is against ``log(MN)``.
    """
    if trials < 2:
        raise ValueError("variance needs at least 2 trials")
    check_ladder(ladder)
    rows = []
    for M, L, N in ladder:
        spec = spec_family.resized(M, L, N)
        vals = trial_traces(spec, z, trials, seed, _resolve_A(A, M * L, seed), workers)
        rows.append(RateRow(M, L, N, complex(z), "variance", trials, sample_variance(vals),
                            jackknife_variance_stderr(vals), seed))
    mn = [r.M * r.N for r in rows]
    slope, se = fit_loglog_slope(mn, [r.estimate for r in rows], [r.stderr for r in rows])
    return RateReport(rows, slope, (slope - 1.96 * se, slope + 1.96 * se))


def bias_sweep(spec_family: EnsembleSpec, ladder, z=2j, trials: int = 500, seed: int = 0,
               A=None, workers: int = 1, tol: float = 1e-12) -> RateReport:
    """``|mean_t (1/ML) tr(A (Q_t - T))|`` along a ladder.

    ``unresolved[i]`` flags sizes whose estimate lies within two standard
    errors of zero.
    """
    if trials < 2:
        raise ValueError("bias needs at least 2 trials")
    check_ladder(ladder)
    rows, flags = [], []
    for M, L, N in ladder:
        spec = spec_family.resized(M, L, N)
        Amat = _resolve_A(A, M * L, seed)
        pair = solve_canonical(spec, z, tol=tol)
        if Amat is None:
            det = pair.t
        else:
            det = np.einsum("mij,mji->", _diag_blocks(Amat, M), pair.T.blocks) / (M * L)
        vals = trial_traces(spec, z, trials, seed, Amat, workers) - det
        if Amat is not None and not np.any(Amat):
            vals = np.zeros(trials, dtype=complex)
        est = float(abs(vals.mean()))
        err = float(np.sqrt(sample_variance(vals) / trials))
        rows.append(RateRow(M, L, N, complex(z), "bias", trials, est, err, seed))
        flags.append(est <= 2 * err)
    return RateReport(rows, unresolved=flags)


def bias_trend_ok(report: RateReport) -> bool:
    """Estimates non-increasing along the ladder, or every size statistically zero."""
    est = [r.estimate for r in report.rows]
    monotone = all(b <= a for a, b in zip(est, est[1:]))
    return monotone or all(report.unresolved)


def _diag_blocks(A: np.ndarray, M: int) -> np.ndarray:
    L = A.shape[0] // M
    idx = np.arange(M)
    return A.reshape(M, L, M, L)[idx, :, idx, :]


@dataclass
class GapResult:
    gap: float
    re: float
    im: float
    q: complex
    t: complex


def as_convergence_run(spec: EnsembleSpec, z=2j, seed: int = 0, W: np.ndarray | None = None) -> GapResult:
    """``|q_N(z) - t_N(z)|`` for one realization (or a supplied ``W``)."""
    if W is None:
        W = draw(spec, seed).W
    q = stieltjes_empirical(gram_eigs(W), z)
    t = solve_canonical(spec, z).t
    d = q - t
    return GapResult(abs(d), d.real, d.imag, q, t)


@dataclass
class KSResult:
    distance: float
    edges: np.ndarray
    empirical_cdf: np.ndarray
    model_cdf: np.ndarray
    mp_distance: float | None
    failed_points: int


def model_cdf_on_grid(spec: EnsembleSpec, x_grid: np.ndarray, eps: float) -> tuple[np.ndarray, int]:
    """Cumulative trapezoid of the solved density; the atom at 0 is added when ``c_N > 1``."""
    res = density_from_stieltjes(spec, x_grid, eps)
    f = np.where(res.converged, res.f, 0.0)
    cdf = np.concatenate([[0.0], np.cumsum(np.diff(x_grid) * (f[1:] + f[:-1]) / 2)])
    return cdf + mp.atom(spec.c_N), int(np.sum(~res.converged))


def histogram_vs_density(spec: EnsembleSpec, bins: int = 50, eps: float = 1e-3, seed: int = 0,
                         sample: SpectralSample | None = None) -> KSResult:
    """Sup over histogram edges of ``|empirical cdf - model cdf|``.

    The model cdf integrates ``density_from_stieltjes`` on a grid four times
    finer than the histogram. For all-white ensembles the distance to the
    closed-form Marchenko-Pastur cdf is reported as well.
    """
    if bins < 20:
        raise ValueError("need at least 20 bins")
    if sample is None:
        sample = gram_eigs(draw(spec, seed).W, seed, spec)
    smax = max(grid_extrema(d)[1] for d in spec.densities)
    hi = max(1.1 * sample.eigenvalues[-1], (1 + np.sqrt(spec.c_N)) ** 2 * smax)
    edges = np.linspace(0.0, hi, bins + 1)
    fine = np.linspace(0.0, hi, 4 * bins + 1)
    cdf_fine, failed = model_cdf_on_grid(spec, fine, eps)
    model = cdf_fine[::4]
    emp = sample.cdf(edges)
    dist = float(np.max(np.abs(emp - model)))
    mp_dist = None
    if spec.all_white and len({d.sigma2 for d in spec.densities}) == 1:
        s2 = spec.densities[0].sigma2
        mp_dist = float(np.max(np.abs(emp - mp.cdf(edges / s2, spec.c_N))))
    return KSResult(dist, edges, emp, model, mp_dist, failed)
