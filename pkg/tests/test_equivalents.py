import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockhankel import marchenko_pastur as mp
from blockhankel.equivalents import (
    CanonicalMap,
    ConvergenceError,
    SingularSystemError,
    canonical_residuals,
    class_s_check,
    delta_estimate,
    density_from_stieltjes,
    deterministic_R,
    initial_blocks,
    solve_canonical,
    toeplitz_inverse_tau,
)
from blockhankel.spectra import EnsembleSpec, ar1, raised_cosine, white
from blockhankel.toeplitz_ops import BlockDiagonal, tau_sequence
from conftest import bumpy_density, crandn


def herm(X):
    return np.conj(np.swapaxes(X, -1, -2))


@pytest.mark.parametrize("dims", [(4, 2, 16), (8, 4, 16), (6, 1, 4)])
@pytest.mark.parametrize("z", [2j, -1.0, 0.5 + 0.3j, 3 + 0.05j])
def test_white_matches_marchenko_pastur(dims, z):
    spec = EnsembleSpec.repeat(*dims, white())
    pair = solve_canonical(spec, z)
    assert abs(pair.t - mp.stieltjes(z, spec.c_N)) <= 1e-8


def test_white_variance_scaling():
    spec = EnsembleSpec.repeat(4, 2, 16, white(2.0))
    z = 1 + 1j
    # sigma^2 W'W'^H: m(z) = m_1(z / sigma^2) / sigma^2
    assert solve_canonical(spec, z).t == pytest.approx(mp.stieltjes(z / 2, 0.5) / 2, abs=1e-9)


def test_toeplitz_inverse_tau(rng):
    from scipy.linalg import toeplitz
    n = 9
    col = crandn(rng, n)
    row = crandn(rng, n)
    row[0] = col[0] = col[0] + 10
    inv = np.linalg.inv(toeplitz(col, row))
    np.testing.assert_allclose(toeplitz_inverse_tau(col, row), tau_sequence(inv), atol=1e-13)


@pytest.mark.parametrize("z", [2j, 0.7 + 0.2j, -0.5])
def test_structured_equals_dense(mixed_spec, z):
    a = solve_canonical(mixed_spec, z, method="structured")
    b = solve_canonical(mixed_spec, z, method="dense")
    np.testing.assert_allclose(a.T.blocks, b.T.blocks, atol=1e-12)
    np.testing.assert_allclose(a.T_tilde, b.T_tilde, atol=1e-12)


def test_residuals_plug_back(mixed_spec):
    pair = solve_canonical(mixed_spec, 1 + 1j, tol=1e-11)
    r1, r2 = canonical_residuals(mixed_spec, pair)
    assert pair.final_residual <= 1e-11
    assert r1 <= 1e-10 and r2 <= 1e-12


def test_start_independence(mixed_spec):
    z = 0.4 + 0.5j
    a = solve_canonical(mixed_spec, z, start="psi-identity")
    b = solve_canonical(mixed_spec, z, start="zero-coupling")
    c = solve_canonical(mixed_spec, z, accel="anderson")
    np.testing.assert_allclose(a.T.blocks, b.T.blocks, atol=1e-9)
    np.testing.assert_allclose(a.T.blocks, c.T.blocks, atol=1e-9)
    d = solve_canonical(mixed_spec, z, start=a.T)
    assert d.iterations <= 2


def test_conjugate_symmetry_and_negative_axis(mixed_spec):
    up = solve_canonical(mixed_spec, 1 + 1j)
    down = solve_canonical(mixed_spec, 1 - 1j)
    np.testing.assert_allclose(down.T.blocks, herm(up.T.blocks), atol=1e-12)
    neg = solve_canonical(mixed_spec, -2.0)
    np.testing.assert_allclose(neg.T.blocks, herm(neg.T.blocks), atol=1e-13)
    assert np.linalg.eigvalsh(neg.T.blocks).min() > 0


@settings(max_examples=20, deadline=None)
@given(x=st.floats(-3, 5), y=st.floats(0.05, 5), a=st.floats(-0.8, 0.8))
def test_stieltjes_sign_property(x, y, a):
    spec = EnsembleSpec.cycle(2, 3, 8, [ar1(a), raised_cosine(0.5)])
    pair = solve_canonical(spec, complex(x, y), accel="anderson")
    im = (pair.T.blocks - herm(pair.T.blocks)) / 2j
    assert np.linalg.eigvalsh(im).min() >= -1e-10
    assert pair.t.imag > 0
    assert pair.T.norm() <= 1 / y + 1e-9


def test_nonconvergence_raises(mixed_spec):
    with pytest.raises(ConvergenceError) as info:
        solve_canonical(mixed_spec, 1 + 0.01j, tol=1e-14, max_iter=3)
    assert info.value.iterations == 3 and info.value.residual > 0


def test_argument_validation(mixed_spec):
    with pytest.raises(ValueError):
        solve_canonical(mixed_spec, 1.0)
    with pytest.raises(ValueError):
        solve_canonical(mixed_spec, 2j, damping=1.0)
    with pytest.raises(ValueError):
        solve_canonical(mixed_spec, 2j, accel="magic")
    with pytest.raises(ValueError):
        initial_blocks(mixed_spec, 2j, start="nowhere")


def test_canonical_map_fixed_point(mixed_spec):
    z = 2j
    pair = solve_canonical(mixed_spec, z, tol=1e-13)
    fmap = CanonicalMap(mixed_spec, z)
    np.testing.assert_allclose(fmap(pair.T.blocks), pair.T.blocks, atol=1e-12)


def test_deterministic_R_reproduces_T_at_fixed_point(mixed_spec):
    # R built from EQ = T returns T (even densities)
    pair = solve_canonical(mixed_spec, 1 + 1j, tol=1e-13)
    aux = deterministic_R(mixed_spec, 1 + 1j, pair.T)
    np.testing.assert_allclose(aux.R.blocks, pair.T.blocks, atol=1e-11)


def test_deterministic_R_singular():
    spec = EnsembleSpec.repeat(2, 2, 4, white())
    bad = BlockDiagonal(np.full((2, 2, 2), np.nan + 0j))
    with pytest.raises(SingularSystemError):
        deterministic_R(spec, 2j, bad)


def test_delta_estimate_small():
    spec = EnsembleSpec.repeat(2, 2, 8, white())
    est = delta_estimate(spec, 2j, trials=200, seed=1)
    assert est.trials == 200
    assert abs(est.trace) < 0.05
    with pytest.raises(ValueError):
        delta_estimate(spec, 2j, trials=50, seed=1)
    zero = delta_estimate(spec, 2j, trials=100, seed=1, A=np.zeros((4, 4)))
    assert zero.trace == 0


def test_class_s_report(mixed_spec):
    rep = class_s_check(mixed_spec, [0.5, 2.0, 10.0, 100.0])
    assert rep.passed
    assert rep.asymptote_error[-1] < rep.asymptote_error[0]
    assert rep.first_moment == pytest.approx(rep.first_moment_reference, rel=1e-3)


def test_density_mp_and_mass():
    spec = EnsembleSpec.repeat(4, 2, 32, white())
    xs = np.linspace(0.01, 3.5, 300)
    res = density_from_stieltjes(spec, xs, eps=1e-3)
    assert res.converged.all()
    ref = mp.stieltjes(xs + 1e-3j, 0.25).imag / np.pi
    np.testing.assert_allclose(res.f, ref, atol=1e-7)
    assert res.mass() == pytest.approx(1.0, abs=0.02)
    with pytest.raises(ValueError):
        density_from_stieltjes(spec, xs, eps=0.5)


def test_density_nonnegative_colored():
    spec = EnsembleSpec.cycle(4, 2, 16, [ar1(0.6), bumpy_density()])
    res = density_from_stieltjes(spec, np.linspace(0.0, 6.0, 120), eps=1e-2)
    assert res.converged.all() and np.all(res.f >= 0)


@pytest.mark.slow
def test_delta_trace_non_increasing_with_size():
    def median_delta(dims):
        spec = EnsembleSpec.repeat(*dims, white())
        return np.median([abs(delta_estimate(spec, 2j, trials=2000, seed=s).trace) for s in range(5)])
    assert median_delta((8, 2, 32)) <= median_delta((4, 2, 16))


@pytest.mark.slow
def test_R_approaches_T_as_EQ_sharpens():
    from blockhankel.equivalents import expected_resolvent_blocks
    spec = EnsembleSpec.repeat(2, 2, 8, ar1(0.3))
    T = solve_canonical(spec, 2j, tol=1e-13).T.blocks

    def dist(trials):
        mean, _, _ = expected_resolvent_blocks(spec, 2j, trials, seed=3)
        return np.abs(deterministic_R(spec, 2j, mean).R.blocks - T).max()
    assert dist(10_000) < dist(1)


@pytest.mark.parametrize("z", [0.2 + 0.01j, 2 + 0.1j, -5.0, 50j])
def test_T_strictly_invertible(mixed_spec, z):
    # only invertibility is checked; the quantitative lower-bound constants are not computable
    pair = solve_canonical(mixed_spec, z, accel="anderson")
    assert np.linalg.svd(pair.T.blocks, compute_uv=False).min() > 0
    assert np.linalg.svd(pair.T_tilde, compute_uv=False).min() > 0
