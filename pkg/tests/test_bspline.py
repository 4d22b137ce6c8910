import numpy as np
import pytest
from scipy import integrate
from scipy.interpolate import BSpline

from covgrow import DomainError, design_matrix, eval_basis, evaluate, make_basis, penalty_matrix
from covgrow.bspline import eval_basis_many, greville, penalty_null_basis, to_raw_coef


@pytest.fixture
def basis():
    return make_basis([0.1, 0.25, 0.3, 0.55, 0.8, 0.9], (0.0, 1.0))


@pytest.mark.parametrize("n_inner,K", [(10, 14), (0, 4), (42, 46)])
def test_basis_size(n_inner, K):
    knots = np.linspace(0, 1, n_inner + 2)[1:-1]
    assert make_basis(knots, (0, 1)).K == K


@pytest.mark.parametrize("knots,domain,order", [
    ([0.5, 0.4], (0, 1), 4),
    ([0.3, 0.3], (0, 1), 4),
    ([0.0, 0.5], (0, 1), 4),
    ([0.5, 1.2], (0, 1), 4),
    ([0.5], (0, 1), 1),
    ([], (1, 1), 4),
])
def test_make_basis_rejects_bad_input(knots, domain, order):
    with pytest.raises(ValueError):
        make_basis(knots, domain, order)


def test_clamped_knot_vector(basis):
    assert np.all(basis.knots[:4] == 0) and np.all(basis.knots[-4:] == 1)
    assert np.all(np.diff(basis.knots) >= 0)


def test_partition_of_unity(basis):
    ts = np.linspace(0, 1, 1000)
    first, vals = eval_basis_many(basis, ts)
    assert np.max(np.abs(vals.sum(axis=1) - 1)) < 1e-12
    assert vals.shape[1] == basis.order


def test_endpoints_are_interpolatory(basis):
    first, vals = eval_basis(basis, 0.0)
    dense = np.zeros(basis.K)
    dense[first:first + len(vals)] = vals
    assert dense[0] == pytest.approx(1.0, abs=1e-15)
    assert np.all(np.abs(dense[1:]) < 1e-15)
    first, vals = eval_basis(basis, 1.0)
    dense = np.zeros(basis.K)
    dense[first:first + len(vals)] = vals
    assert dense[-1] == pytest.approx(1.0, abs=1e-15)


def test_outside_domain_raises(basis):
    with pytest.raises(DomainError):
        eval_basis(basis, 1.0 + 1e-9)
    with pytest.raises(DomainError):
        design_matrix(basis, [0.5, -0.1])
    with pytest.raises(DomainError):
        design_matrix(basis, [np.nan])


def test_deriv_out_of_range(basis):
    with pytest.raises(ValueError):
        eval_basis(basis, 0.5, deriv=4)


def test_design_matches_scipy(basis):
    ts = np.linspace(0, 1, 77)
    ref = BSpline.design_matrix(ts, basis.knots, basis.degree).toarray()
    assert np.max(np.abs(design_matrix(basis, ts) - ref)) < 1e-14


def test_band_reconstruction_equals_dense(basis):
    rng = np.random.default_rng(1)
    c = rng.normal(size=basis.K)
    ts = rng.uniform(0, 1, 300)
    assert np.allclose(evaluate(basis, c, ts), design_matrix(basis, ts) @ c, atol=1e-14)
    C = rng.normal(size=(basis.K, 3))
    assert np.allclose(evaluate(basis, C, ts), design_matrix(basis, ts) @ C, atol=1e-14)


@pytest.mark.parametrize("deriv", [1, 2])
def test_derivatives_match_finite_differences(basis, deriv):
    h = 1e-6
    rng = np.random.default_rng(2)
    ts = rng.uniform(0.02, 0.98, 200)
    inner = basis.interior_knots
    ts = ts[np.min(np.abs(ts[:, None] - inner[None, :]), axis=1) > 1e-3]
    lower = design_matrix(basis, ts, deriv - 1)
    fd = (design_matrix(basis, ts + h, deriv - 1) - design_matrix(basis, ts - h, deriv - 1)) / (2 * h)
    exact = design_matrix(basis, ts, deriv)
    assert lower.shape == exact.shape
    err = np.abs(fd - exact) / np.maximum(np.abs(exact), 1.0)
    assert err.max() < 1e-5


def test_first_derivative_fd_relative(basis):
    # relative error 1e-6 on entries of appreciable size
    h = 1e-6
    ts = np.array([0.05, 0.17, 0.42, 0.67, 0.85, 0.95])
    fd = (design_matrix(basis, ts + h) - design_matrix(basis, ts - h)) / (2 * h)
    exact = design_matrix(basis, ts, 1)
    big = np.abs(exact) > 1e-2
    assert np.max(np.abs(fd[big] - exact[big]) / np.abs(exact[big])) < 1e-6


@pytest.mark.parametrize("gamma", [2, 3])
def test_penalty_symmetric_banded_psd(basis, gamma):
    pm = penalty_matrix(basis, gamma)
    S = pm.S
    assert np.array_equal(S, S.T)
    k = np.arange(basis.K)
    assert np.all(S[np.abs(k[:, None] - k[None, :]) >= basis.order] == 0)
    w = np.linalg.eigvalsh(S)
    assert w.min() > -1e-10 * w.max()


@pytest.mark.parametrize("gamma", [2, 3])
@pytest.mark.parametrize("n_inner", [0, 3, 10, 42])
def test_penalty_rank(gamma, n_inner):
    basis = make_basis(np.linspace(0, 1, n_inner + 2)[1:-1], (0, 1))
    w = np.linalg.eigvalsh(penalty_matrix(basis, gamma).S)
    assert int(np.sum(w > 1e-10 * w.max())) == basis.K - gamma


def test_penalty_annihilates_constants_and_linears(basis):
    S = penalty_matrix(basis, 2).S
    assert np.max(np.abs(S @ np.ones(basis.K))) < 1e-12 * np.abs(S).max()
    assert np.max(np.abs(S @ greville(basis))) < 1e-12 * np.abs(S).max()


def test_greville_reproduces_identity(basis):
    ts = np.linspace(0, 1, 50)
    assert np.allclose(evaluate(basis, greville(basis), ts), ts, atol=1e-14)


def test_penalty_entries_match_adaptive_quadrature():
    basis = make_basis([0.15, 0.3, 0.5, 0.7, 0.85, 0.93], (0.0, 1.0))
    S = penalty_matrix(basis, 2).S
    brk = np.unique(basis.knots)
    splines = [BSpline(basis.knots, np.eye(basis.K)[k], 3).derivative(2) for k in range(basis.K)]
    for i in range(basis.K):
        for j in range(i, min(i + 4, basis.K)):
            ref = sum(integrate.quad(lambda t: splines[i](t) * splines[j](t), lo, hi, epsabs=0, epsrel=1e-13)[0]
                      for lo, hi in zip(brk[:-1], brk[1:]))
            assert abs(S[i, j] - ref) <= 1e-9 * max(abs(ref), np.abs(S).max() * 1e-3)


@pytest.mark.parametrize("gamma", [2, 3])
def test_quadratic_form_equals_integral(basis, gamma):
    rng = np.random.default_rng(3)
    S = penalty_matrix(basis, gamma).S
    brk = np.unique(basis.knots)
    for _ in range(5):
        a = rng.normal(size=basis.K)
        f = BSpline(basis.knots, a, 3).derivative(gamma)
        ref = sum(integrate.quad(lambda t: f(t) ** 2, lo, hi, epsabs=0, epsrel=1e-13)[0]
                  for lo, hi in zip(brk[:-1], brk[1:]))
        assert abs(a @ S @ a - ref) < 1e-8 * ref


def test_penalty_gamma_out_of_range(basis):
    with pytest.raises(ValueError):
        penalty_matrix(basis, 1)
    with pytest.raises(ValueError):
        penalty_matrix(basis, 4)


def test_non_unit_domain_scaling():
    # stretching time by c scales the gamma=2 penalty by c^-3
    b1 = make_basis([0.3, 0.6], (0.0, 1.0))
    b2 = make_basis([3.0, 6.0], (0.0, 10.0))
    assert np.allclose(penalty_matrix(b2, 2).S, penalty_matrix(b1, 2).S / 1000, rtol=1e-12, atol=1e-15)


def test_linear_ends_zero_curvature_at_boundary():
    basis = make_basis(np.linspace(0, 1, 8)[1:-1], (0.0, 1.0), linear_ends=True)
    assert basis.n_coef == basis.K - 2
    rng = np.random.default_rng(4)
    c = rng.normal(size=basis.n_coef)
    assert np.allclose(evaluate(basis, c, [0.0, 1.0], deriv=2), 0, atol=1e-10)
    ts = rng.uniform(0, 1, 40)
    raw = make_basis(basis.interior_knots, basis.domain)
    assert np.allclose(evaluate(basis, c, ts), evaluate(raw, to_raw_coef(basis, c), ts), atol=1e-13)
    # the null space of the constrained penalty is still the linears
    S = penalty_matrix(basis, 2).S
    w = np.linalg.eigvalsh(S)
    assert int(np.sum(w > 1e-10 * w.max())) == basis.n_coef - 2


@pytest.mark.parametrize("gamma", [2, 3])
def test_null_basis_spans_penalty_kernel(basis, gamma):
    N = penalty_null_basis(basis, gamma)
    S = penalty_matrix(basis, gamma).S
    assert N.shape == (basis.K, gamma)
    assert np.allclose(N.T @ N, np.eye(gamma), atol=1e-13)
    assert np.max(np.abs(S @ N)) < 1e-11 * np.abs(S).max()
