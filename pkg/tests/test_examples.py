"""Concrete input/output examples for each operation, one small test each."""
import numpy as np
import pytest
import scipy.linalg

from blockhankel import cli
from blockhankel import marchenko_pastur as mp
from blockhankel.equivalents import (
    delta_estimate,
    density_from_stieltjes,
    deterministic_R,
    solve_canonical,
    t_scalar,
)
from blockhankel.harness import as_convergence_run, bias_sweep, variance_sweep
from blockhankel.indeptest import kappa_hat, logdet_stat, predicted_logdet
from blockhankel.resolvent import (
    SpectralSample,
    co_resolvent,
    gram_eigs,
    resolvent,
    stieltjes_empirical,
    trace_functional,
)
from blockhankel.sampler import build_block_hankel, draw, end_effect_gap, sample_covariance, sample_sequence
from blockhankel.spectra import EnsembleSpec, ar1, autocovariance, raised_cosine, white
from blockhankel.toeplitz_ops import (
    BlockDiagonal,
    psi_bar,
    psi_block,
    psi_m,
    psi_m_freq,
    shift,
    tau,
)
from conftest import crandn, random_pd


# sampler ------------------------------------------------------------------

def _moment_draws(model, T=100_000, N=4):
    # batch the 1e5 draws through one generator per row model for speed
    rng = np.random.default_rng(11)
    return np.array([sample_sequence(model, N, 1, seed=0, rng=rng) for _ in range(T)]), N


@pytest.mark.slow
def test_white_entry_variance():
    w, N = _moment_draws(white())
    v = np.abs(w[:, 0]) ** 2
    assert abs(v.mean() - 1 / N) <= 3 * v.std(ddof=1) / np.sqrt(v.size)


@pytest.mark.slow
def test_ar1_lag_one_covariance():
    w, N = _moment_draws(ar1(0.5))
    p = w[:, 1] * np.conj(w[:, 0])
    se = np.sqrt(np.var(p.real, ddof=1) + np.var(p.imag, ddof=1)) / np.sqrt(p.size)
    assert abs(p.mean() - 0.5 / N) <= 3 * se


def test_hankel_unrolled():
    spec = EnsembleSpec.repeat(1, 2, 3, white())
    s = np.array([[1, 2, 3, 4]], dtype=complex)
    np.testing.assert_array_equal(build_block_hankel(s, spec), [[1, 2, 3], [2, 3, 4]])
    z = build_block_hankel(np.zeros((1, 4)), spec)
    assert not np.any(z)


def test_hankel_random_probes(rng):
    spec = EnsembleSpec.repeat(3, 4, 7, white())
    s = crandn(rng, 3, 10)
    W = build_block_hankel(s, spec)
    for _ in range(50):
        m, i, j = rng.integers(3), rng.integers(4), rng.integers(7)
        assert W[i + m * 4, j] == s[m, i + j]
        if i + 1 < 4 and j >= 1:
            assert W[m * 4 + i, j] == W[m * 4 + i + 1, j - 1]
    np.testing.assert_array_equal(build_block_hankel(s, spec), W)


@pytest.mark.slow
def test_expected_sample_covariance_is_identity():
    spec = EnsembleSpec.repeat(2, 2, 8, white())
    T = 10_000
    Rs = np.array([sample_covariance(spec, draw(spec, 12, t).sequences) for t in range(T)])
    mean = Rs.mean(axis=0)
    se = np.sqrt(Rs.real.var(axis=0, ddof=1) + Rs.imag.var(axis=0, ddof=1)) / np.sqrt(T)
    # complete windows only: E R_hat = (N - L + 1)/N * I
    target = (spec.N - spec.L + 1) / spec.N * np.eye(4)
    assert np.all(np.abs(mean - target) <= 5 * se + 1e-15)


def test_end_effect_zero_sequences():
    spec = EnsembleSpec.repeat(2, 3, 8, white())
    s = draw(spec, 0)
    s.sequences = np.zeros_like(s.sequences)
    s.W = np.zeros_like(s.W)
    assert end_effect_gap(s) == 0
    assert not np.any(sample_covariance(spec, s.sequences))


@pytest.mark.slow
def test_end_effect_median_trend():
    def med(N):
        spec = EnsembleSpec.repeat(8, 4, N, white())
        return np.median([end_effect_gap(draw(spec, s)) for s in range(50)])
    assert med(256) < med(128)


# operators ----------------------------------------------------------------

def test_shift_examples():
    np.testing.assert_array_equal(shift(3, 0), np.eye(3))
    expected = np.zeros((3, 3))
    expected[0, 1] = expected[1, 2] = 1  # 1-based (1,2), (2,3)
    np.testing.assert_array_equal(shift(3, 1), expected)
    assert not np.any(shift(3, 3))


def test_tau_examples():
    assert tau(np.eye(4), 0) == 1
    assert tau(np.eye(4), 2) == 0
    assert tau(shift(4, 2).T, 2) == 0.5


def test_psi_m_examples(rng):
    np.testing.assert_allclose(psi_m(white(), np.eye(5), 4), np.eye(4), atol=1e-15)
    beta = 0.3
    P = psi_m(raised_cosine(beta), np.eye(5), 4)
    expected = np.eye(4) + beta / 2 * (np.eye(4, k=1) + np.eye(4, k=-1))
    np.testing.assert_allclose(P, expected, atol=1e-15)
    np.testing.assert_allclose(psi_m_freq(white(), np.eye(3), 4), np.eye(4), atol=1e-10)
    A = crandn(rng, 5, 5)
    assert np.max(np.abs(psi_m_freq(raised_cosine(0.6), A, 6) - psi_m(raised_cosine(0.6), A, 6))) <= 1e-8
    assert np.max(np.abs(psi_m_freq(ar1(0.5), A, 6, 8192) - psi_m(ar1(0.5), A, 6))) <= 1e-6


def test_psi_block_examples(rng):
    spec = EnsembleSpec.repeat(3, 4, 10, white())
    np.testing.assert_allclose(psi_block(spec, np.eye(10)).blocks, np.broadcast_to(np.eye(4), (3, 4, 4)), atol=1e-15)
    mixed = EnsembleSpec.cycle(3, 4, 10, [white(), ar1(0.5), raised_cosine(0.4)])
    blocks = psi_block(mixed, np.eye(10)).blocks
    for m, d in enumerate(mixed.densities):
        cov = scipy.linalg.toeplitz(autocovariance(d, np.arange(4)))
        np.testing.assert_allclose(blocks[m], cov, atol=1e-14)
    B = random_pd(rng, 10)
    for b in psi_block(mixed, B).blocks:
        np.testing.assert_allclose(b, b.conj().T, atol=1e-13)
        assert np.linalg.eigvalsh(b).min() > 0


def test_psi_bar_examples(rng):
    spec = EnsembleSpec.repeat(3, 2, 7, white())
    np.testing.assert_allclose(psi_bar(spec, np.eye(6)), np.eye(7), atol=1e-15)
    one = EnsembleSpec(1, 3, 6, (ar1(0.2),))
    A = crandn(rng, 3, 3)
    np.testing.assert_allclose(psi_bar(one, A), psi_m(ar1(0.2), A, 6), atol=1e-15)
    mixed = EnsembleSpec.cycle(3, 2, 7, [white(), ar1(0.5), raised_cosine(0.4)])
    Ab = BlockDiagonal(crandn(rng, 3, 2, 2))
    B = crandn(rng, 7, 7)
    lhs = np.trace(psi_bar(mixed, Ab) @ B) / 7
    rhs = np.trace(Ab.materialize() @ psi_block(mixed, B).materialize()) / 6
    assert abs(lhs - rhs) <= 1e-10


def test_block_diagonal_materialize_layout(rng):
    b = crandn(rng, 3, 2, 2)
    full = BlockDiagonal(b).materialize()
    for m in range(3):
        np.testing.assert_array_equal(full[2 * m:2 * m + 2, 2 * m:2 * m + 2], b[m])
    mask = scipy.linalg.block_diag(*[np.ones((2, 2))] * 3) == 0
    assert not np.any(full[mask])


# resolvent ----------------------------------------------------------------

def test_gram_eig_examples(rng):
    assert not np.any(gram_eigs(np.zeros((4, 6))).eigenvalues)
    W = np.hstack([np.eye(4), np.zeros((4, 3))])
    np.testing.assert_allclose(gram_eigs(W).eigenvalues, 1)
    W = crandn(rng, 5, 9)
    s = gram_eigs(W)
    assert len(s) == 5
    assert s.eigenvalues.sum() == pytest.approx(np.linalg.norm(W) ** 2, rel=1e-8)


def test_resolvent_examples(rng):
    z = 0.3 + 0.8j
    np.testing.assert_allclose(resolvent(np.zeros((3, 5)), z), -np.eye(3) / z)
    np.testing.assert_allclose(co_resolvent(np.zeros((3, 5)), z), -np.eye(5) / z)
    W = crandn(rng, 4, 7)
    Q = resolvent(W, z)
    G = W @ W.conj().T
    np.testing.assert_allclose(z * Q, Q @ G - np.eye(4), atol=1e-9)
    np.testing.assert_allclose(resolvent(W, np.conj(z)), Q.conj().T, atol=1e-12)
    Qt = co_resolvent(W, z)
    assert abs(np.trace(Qt) - np.trace(Q) + (7 - 4) / z) <= 1e-9
    np.testing.assert_allclose(Qt @ W.conj().T @ W, W.conj().T @ Q @ W, atol=1e-9)


def test_stieltjes_examples(rng):
    z = 1 + 1j
    assert stieltjes_empirical(SpectralSample(np.zeros(3)), z) == pytest.approx(-1 / z)
    assert stieltjes_empirical(SpectralSample(np.array([1.0])), 2j) == pytest.approx(1 / (1 - 2j))
    Q = resolvent(crandn(rng, 4, 6), 2j)
    assert trace_functional(Q, np.eye(4)) == pytest.approx(np.trace(Q) / 4)
    assert trace_functional(Q, np.zeros((4, 4))) == 0
    A = crandn(rng, 4, 4)
    brute = sum(A[i, j] * Q[j, i] for i in range(4) for j in range(4)) / 4
    assert abs(trace_functional(Q, A) - brute) <= 1e-12


# deterministic equivalents ------------------------------------------------

def test_t_scalar_examples():
    z = 2j
    assert t_scalar(BlockDiagonal.identity(3, 2, -1 / z)) == pytest.approx(-1 / z)


def test_solver_post_conditions():
    spec = EnsembleSpec.cycle(4, 3, 12, [ar1(0.5), raised_cosine(0.8)])
    for z in (0.5 + 0.2j, 3 + 1j, -1.0):
        pair = solve_canonical(spec, z, tol=1e-10)
        d = abs(z.imag) if z.real >= 0 else abs(z)
        assert pair.final_residual <= 1e-10
        assert pair.T.norm() <= 1 / d + 1e-8
        assert np.linalg.norm(pair.T_tilde, 2) <= 1 / d + 1e-8
    a = solve_canonical(spec, 1 + 0.5j, tol=1e-10, start="psi-identity")
    b = solve_canonical(spec, 1 + 0.5j, tol=1e-10, start="zero-coupling")
    assert (a.T - b.T).norm() <= 10 * 1e-10


def test_asymptote_iy():
    spec = EnsembleSpec.cycle(3, 2, 8, [ar1(0.5), white()])
    y = 1e4
    T = solve_canonical(spec, 1j * y, tol=1e-14).T.blocks
    assert np.max(np.linalg.norm(-1j * y * T - np.eye(2), 2, axis=(1, 2))) <= 1e-3


def test_R_from_mp_exact():
    spec = EnsembleSpec.repeat(4, 2, 16, white())
    z = 1 + 1j
    EQ = BlockDiagonal.identity(4, 2, mp.stieltjes(z, 0.5))
    R = deterministic_R(spec, z, EQ).R.blocks
    np.testing.assert_allclose(R, np.broadcast_to(mp.stieltjes(z, 0.5) * np.eye(2), R.shape), atol=1e-6)


def test_delta_stabilizes_with_trials():
    spec = EnsembleSpec.repeat(2, 2, 8, white())
    est = delta_estimate(spec, 2j, trials=1000, seed=4)
    assert abs(est.trace) <= 3 * est.trace_stderr


def test_density_white_half():
    spec = EnsembleSpec.repeat(4, 4, 32, white())  # c = 0.5
    eps = 1e-3
    xs = np.linspace(0.0, 4.0, 801)
    res = density_from_stieltjes(spec, xs, eps)
    a, b = mp.edges(0.5)
    assert a == pytest.approx(0.0858, abs=1e-4) and b == pytest.approx(2.914, abs=1e-3)
    outside = (xs < a - 2 * eps) | (xs > b + 2 * eps)
    smoothed = mp.stieltjes(xs + 1j * eps, 0.5).imag / np.pi
    np.testing.assert_allclose(res.f, smoothed, atol=1e-7)
    # the eps-smoothed law itself exceeds 1e-3 just past 2 eps from either edge,
    # so the 1e-3 bound is only checked well clear of the support
    assert smoothed[xs > b + 2 * eps].max() > 1e-3
    assert np.all(res.f[xs > b + 0.05] < 1e-3)
    assert np.all(res.f[outside] < 0.05)
    assert res.mass() == pytest.approx(1.0, abs=0.02)
    assert np.all(res.f >= 0)


# harness ------------------------------------------------------------------

def test_sweep_rows_and_negative_z():
    spec = EnsembleSpec.repeat(2, 2, 8, white())
    rep = variance_sweep(spec, [(2, 2, 8), (4, 2, 16)], z=-1.0, trials=20, seed=0)
    assert all(r.stderr > 0 for r in rep.rows)
    assert all(abs(r.M * r.L / r.N - 0.5) <= 1e-12 for r in rep.rows)


def test_bias_stderr_sqrt_law():
    spec = EnsembleSpec.repeat(2, 2, 8, white())
    a = bias_sweep(spec, [(2, 2, 8)], trials=500, seed=3).rows[0].stderr
    b = bias_sweep(spec, [(2, 2, 8)], trials=2000, seed=3).rows[0].stderr
    assert 0.4 <= b / a <= 0.6


def test_zero_W_gap_pin():
    spec = EnsembleSpec.repeat(2, 2, 8, white())
    res = as_convergence_run(spec, 2j, W=np.zeros((4, 8)))
    assert res.q == pytest.approx(-1 / 2j)
    assert res.gap == pytest.approx(abs(-1 / 2j - solve_canonical(spec, 2j).t))


# independence statistic ---------------------------------------------------

def test_kappa_examples(rng):
    R = random_pd(rng, 4)
    assert kappa_hat(R, 1, 4).kappa_hat == 0
    bd = scipy.linalg.block_diag(random_pd(rng, 2), random_pd(rng, 2))
    assert abs(kappa_hat(bd, 2, 2).kappa_hat) <= 1e-10


def test_logdet_examples(rng):
    assert logdet_stat(SpectralSample(np.ones(4))) == 0
    assert logdet_stat(SpectralSample(np.array([np.e, np.e]))) == pytest.approx(1.0)
    W = crandn(rng, 4, 9)
    chol = 2 * np.sum(np.log(np.diag(np.linalg.cholesky(W @ W.conj().T)).real)) / 4
    assert abs(logdet_stat(gram_eigs(W)) - chol) <= 1e-9


def test_predicted_logdet_examples():
    half = EnsembleSpec.repeat(4, 4, 32, white())
    assert predicted_logdet(half) == pytest.approx(mp.log_moment(0.5), abs=5e-3)
    small = EnsembleSpec.repeat(1, 1, 20, white())  # c = 0.05
    assert abs(predicted_logdet(small)) < 0.05


def test_logdet_desk_scale():
    spec = EnsembleSpec.repeat(64, 2, 256, white())
    assert abs(logdet_stat(gram_eigs(draw(spec, 0).W)) - predicted_logdet(spec)) <= 0.05


# CLI ----------------------------------------------------------------------

def test_cli_solve_matches_mp(tmp_path, capsys):
    cfg = tmp_path / "w.yaml"
    cfg.write_text("M: 4\nL: 2\nN: 16\nrepeat: {family: white}\n")
    assert cli.main(["solve", "--config", str(cfg), "--z", "2i"]) == 0
    row = capsys.readouterr().out.strip().splitlines()[1].split(",")
    t = complex(float(row[2]), float(row[3]))
    assert abs(t - mp.stieltjes(2j, 0.5)) <= 1e-6


def test_cli_missing_N_named(tmp_path, capsys):
    cfg = tmp_path / "w.yaml"
    cfg.write_text("M: 4\nL: 2\nrepeat: {family: white}\n")
    assert cli.main(["solve", "--config", str(cfg)]) == 1
    assert "'N'" in capsys.readouterr().err


def test_cli_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "w.yaml"
    cfg.write_text("M: 4\nL: 2\nN: 16\nrepeat: {family: white}\ncolour: blue\n")
    assert cli.main(["solve", "--config", str(cfg)]) == 1


@pytest.mark.parametrize("flags", [["--eps", "0.5"], ["--tol", "0"], ["--damping", "1"]])
def test_cli_parameter_ranges(tmp_path, capsys, flags):
    cfg = tmp_path / "w.yaml"
    cfg.write_text("M: 4\nL: 2\nN: 16\nrepeat: {family: white}\n")
    assert cli.main(["density", "--config", str(cfg), *flags]) == 1


@pytest.mark.parametrize("sub", [["sample", "--format", "bin"], ["spectrum"], ["solve", "--z", "1+1i"]])
def test_cli_byte_identical(tmp_path, capsys, sub):
    cfg = tmp_path / "w.yaml"
    cfg.write_text("M: 3\nL: 2\nN: 12\ncycle: [{family: ar1, a: 0.4}, {family: white}]\n")
    outs = []
    for k in range(2):
        dest = tmp_path / f"out{k}"
        assert cli.main([sub[0], "--config", str(cfg), "--seed", "9", "--out", str(dest), *sub[1:]]) == 0
        outs.append(dest.read_bytes())
    assert outs[0] == outs[1]
