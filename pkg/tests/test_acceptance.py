"""Acceptance criteria 1-7.

Each test carries a ``criterion`` marker; ``conftest.py`` prints one PASS/FAIL
line per criterion at the end of the session together with the measured
numbers recorded through ``record_property("detail", ...)``.
"""

import dataclasses
import json
import time

import numpy as np
import pytest
from conftest import CONFIGS
from helpers import (DenseOracle, oracle_design, random_dataset, random_lambdas, random_spd, random_system, rel_err,
                     sim_config)
from scipy import integrate, optimize
from scipy.interpolate import BSpline

from covgrow import (CovariateBasis, Dataset, Individual, PenalizedSolution, UniformSystem, assemble,
                     design_matrix, expected_error, gcv_score, lambda_fixed_point, make_basis, penalty_matrix,
                     posterior_covariance, predict, rhat, risk, risk_gradient, risk_hat_gradient, select,
                     sigma2_hat, solve_multivariate, solve_penalized, solve_separable)
from covgrow.bspline import eval_basis_many
from covgrow.cli import main
from covgrow.io import read_coef, read_csv_columns
from covgrow.pipeline import build_system, fit_dataset
from covgrow.simulate import simulate
from covgrow.solver import build_fit, plugin_se

pytestmark = pytest.mark.acceptance


class Stopwatch:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


# -- 1 -------------------------------------------------------------------------


def _piecewise_quad(f, breaks):
    return sum(integrate.quad(f, lo, hi, epsabs=0, epsrel=1e-13, limit=200)[0]
               for lo, hi in zip(breaks[:-1], breaks[1:]))


@pytest.mark.criterion(1, "basis suite", limit=5.0)
def test_criterion_1_basis_suite(record_property):
    rng = np.random.default_rng(101)
    bases = [
        make_basis(np.linspace(0, 1, 12)[1:-1], (0.0, 1.0)),
        make_basis(np.linspace(0, 1, 44)[1:-1], (0.0, 1.0)),
        make_basis(np.sort(rng.uniform(0.05, 0.95, 7)), (0.0, 1.0)),
        make_basis([2.0, 3.5, 4.0, 7.5], (1.0, 9.0)),
    ]
    worst = dict(unity=0.0, deriv=0.0, quad=0.0)
    with Stopwatch() as sw:
        for basis in bases:
            a, b = basis.domain
            ts = np.linspace(a, b, 1000)
            _, vals = eval_basis_many(basis, ts)
            worst["unity"] = max(worst["unity"], np.max(np.abs(vals.sum(axis=1) - 1.0)))

            # central differences of derivative order d-1 against order d, away from knots
            h = 1e-6 * (b - a)
            tt = rng.uniform(a + 0.01 * (b - a), b - 0.01 * (b - a), 300)
            tt = tt[np.min(np.abs(tt[:, None] - basis.interior_knots[None, :]), axis=1) > 1e-3 * (b - a)]
            for d in (1, 2, 3):
                fd = (design_matrix(basis, tt + h, d - 1) - design_matrix(basis, tt - h, d - 1)) / (2 * h)
                exact = design_matrix(basis, tt, d)
                scale = np.maximum(np.abs(exact), np.abs(exact).max() * 1e-3)
                worst["deriv"] = max(worst["deriv"], np.max(np.abs(fd - exact) / scale))

            breaks = np.unique(basis.knots)
            for gamma in (2, 3):
                S = penalty_matrix(basis, gamma).S
                w = np.linalg.eigvalsh(S)
                rank = int(np.sum(w > 1e-10 * w.max()))
                assert rank == basis.K - gamma, (basis.K, gamma, rank)
                for _ in range(3):
                    c = rng.normal(size=basis.K)
                    f = BSpline(basis.knots, c, basis.degree).derivative(gamma)
                    ref = _piecewise_quad(lambda t: f(t) ** 2, breaks)
                    worst["quad"] = max(worst["quad"], abs(c @ S @ c - ref) / ref)
    record_property("detail", f"unity {worst['unity']:.1e}, derivative FD {worst['deriv']:.1e}, "
                              f"quadratic form {worst['quad']:.1e}, ranks K-gamma ok, {sw.seconds:.2f} s")
    assert worst["unity"] < 1e-12
    assert worst["deriv"] < 1e-5
    assert worst["quad"] < 1e-8
    assert sw.seconds < 5.0


# -- 2 -------------------------------------------------------------------------


@pytest.mark.criterion(2, "oracle equivalence", limit=30.0)
def test_criterion_2_oracle_equivalence(record_property):
    rng = np.random.default_rng(202)
    worst = dict(theta=0.0, trace=0.0, gcv=0.0, posterior=0.0, se=0.0)
    checked = {"banded": 0, "dense": 0}
    target = {"banded": 20, "dense": 10}
    with Stopwatch() as sw:
        while any(checked[k] < target[k] for k in checked):
            kind = "banded" if checked["banded"] < target["banded"] else "dense"
            system, inds = random_system(rng, max_nt=50, max_k=8, max_l=2, dense_cov=(kind == "dense"))
            assert system.n_obs <= 50 and system.K <= 8 and system.L <= 2
            if np.linalg.cond(system.C) > 1e8:
                continue  # posterior needs an invertible cross-product
            lam = random_lambdas(rng, system)
            sol = PenalizedSolution(system, lam, path=kind)
            assert sol.path == kind
            oracle = DenseOracle(system, inds, lam)
            sigma2 = float(rng.uniform(0.1, 2.0))
            fit = build_fit(system, lam, sigma2=sigma2)
            D = np.vstack([system.design_rows(ind.times, ind.covariates, i) for i, ind in enumerate(inds)])
            se_ref = np.sqrt(np.einsum("ij,jk,ik->i", oracle.X, oracle.sampling_cov(sigma2, oracle.theta),
                                       oracle.X))
            errs = dict(
                theta=rel_err(sol.theta, oracle.theta),
                trace=abs(sol.trace_A - oracle.trace) / oracle.trace,
                gcv=abs(gcv_score(system, lam) - oracle.gcv) / oracle.gcv,
                posterior=rel_err(posterior_covariance(system, lam, sigma2), oracle.posterior(sigma2)),
                se=rel_err(plugin_se(fit, system, D), se_ref),
            )
            for k, v in errs.items():
                worst[k] = max(worst[k], v)
            checked[kind] += 1
    record_property("detail", f"{checked['banded']} banded + {checked['dense']} dense systems; worst rel. "
                    + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {sw.seconds:.2f} s")
    for k, v in worst.items():
        assert v < 1e-9, k
    assert sw.seconds < 30.0


# -- 3 -------------------------------------------------------------------------


def _log_fd(fun, lam, h=1e-5):
    out = np.empty(len(lam))
    for ell in range(len(lam)):
        up, dn = lam.copy(), lam.copy()
        up[ell] *= np.exp(h)
        dn[ell] *= np.exp(-h)
        out[ell] = (fun(up) - fun(dn)) / (2 * h)
    return out


def _noisy_random_system(rng, L):
    inds = random_dataset(rng, n_ind=5, n_range=(9, 10), n_cov=2)
    terms = ["lin:u1", "log:u2"][:L]
    return assemble(inds, make_basis([0.25, 0.5, 0.75], (0, 1)), CovariateBasis(terms))


@pytest.mark.criterion(3, "risk calculus", limit=30.0)
def test_criterion_3_risk_calculus(record_property):
    rng = np.random.default_rng(303)
    worst_exact = worst_hat = 0.0
    n_lam = 0
    with Stopwatch() as sw:
        for L in (0, 1, 2, 2):
            system = _noisy_random_system(rng, L)
            theta = rng.normal(size=system.p)
            sigma2 = float(rng.uniform(0.02, 0.5))
            for _ in range(5):
                lam = random_lambdas(rng, system, -2, 2)
                n_lam += 1
                for q in ("C", "S_c"):
                    # gradients are returned in lambda; FD is taken in log lambda
                    g = 2 * lam * risk_gradient(system, lam, q, theta, sigma2)
                    fd = _log_fd(lambda v: risk(system, v, q, theta, sigma2), lam)
                    worst_exact = max(worst_exact, np.linalg.norm(g - fd) / np.linalg.norm(fd))
                g = 2 * lam * risk_hat_gradient(system, lam, sigma2)
                fd = _log_fd(lambda v: rhat(system, v, sigma2), lam)
                worst_hat = max(worst_hat, np.linalg.norm(g - fd) / np.linalg.norm(fd))

        worst_stat = 0.0
        n_fp = n_free = 0
        for seed in range(5):
            config = sim_config(model={"g_terms": "log:q" if seed % 2 else "log:q, lin:q"},
                                selection={"method": "risk-fixed-point"})
            ds, _, _ = simulate(config, seed=seed)
            system = build_system(ds, config.model)
            s2 = sigma2_hat(system)
            fp = lambda_fixed_point(system, config.selection, s2)
            assert fp.converged, seed
            n_fp += 1
            sol = PenalizedSolution(system, fp.lambdas)
            g = risk_hat_gradient(system, fp.lambdas, s2)
            for ell in np.flatnonzero(~fp.clamped):
                scale = s2 * float(np.sum(sol.W_S([ell]) * sol.W_C))
                worst_stat = max(worst_stat, abs(g[ell]) / scale)
                n_free += 1
    record_property("detail", f"{n_lam} lambda vectors: exact-risk grad {worst_exact:.1e}, estimated-risk grad "
                              f"{worst_hat:.1e}; {n_fp} fixed points, {n_free} free groups, stationarity "
                              f"{worst_stat:.1e}; {sw.seconds:.2f} s")
    assert worst_exact < 1e-5
    assert worst_hat < 1e-5
    assert n_free > 0 and worst_stat < 1e-6
    assert sw.seconds < 30.0


# -- 4 -------------------------------------------------------------------------


def _with_responses(dataset, ys):
    inds = [Individual(ind.id, ind.times, y, ind.covariance, ind.covariates) for ind, y in zip(dataset, ys)]
    return Dataset(inds, dataset.covariate_names)


def _sigma2_mean(rng):
    config = sim_config(model={"knots": "uniform:6"},
                        simulate={"n_individuals": "5", "n_times": "40", "noise_sd": "0"})
    mean, _, _ = simulate(config, seed=11)
    sigma2, n_rep = 0.04, 400
    est = np.empty(n_rep)
    for r in range(n_rep):
        ys = [ind.responses + rng.normal(0, np.sqrt(sigma2), ind.n) for ind in mean]
        est[r] = sigma2_hat(build_system(_with_responses(mean, ys), config.model))
    system = build_system(mean, config.model)
    return abs(est.mean() / sigma2 - 1.0), system.K, system.L, system.n_obs


def _expected_error_mc(rng):
    basis = make_basis([1 / 3, 2 / 3], (0.0, 1.0))
    base = random_dataset(rng, n_ind=3, n_range=(8, 8), n_cov=0)
    system = assemble(base, basis)
    assert system.p == 6
    theta = np.array([0.3, -0.8, 1.2, 0.1, -0.5, 0.9])
    lam = np.array([1e-3]) * system.scales
    sigma2, n_rep = 0.25, 2000
    X, Sigma, _ = oracle_design(system, base)
    mu = X @ theta
    chol = np.linalg.cholesky(sigma2 * Sigma)
    errs = np.empty((n_rep, system.p))
    for r in range(n_rep):
        y = mu + chol @ rng.standard_normal(len(mu))
        o, inds = 0, []
        for ind in base:
            inds.append(Individual(ind.id, ind.times, y[o:o + ind.n], ind.covariance, ind.covariates))
            o += ind.n
        errs[r] = solve_penalized(assemble(inds, basis), lam) - theta
    prod = errs[:, :, None] * errs[:, None, :]
    emp = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / np.sqrt(n_rep)
    ref = expected_error(system, lam, theta, sigma2).total
    iu = np.triu_indices(system.p)
    z = np.abs(emp - ref)[iu] / se[iu]
    return float(z.max()), len(z)


def _gcv_loss_ratio(rng):
    config = sim_config(
        model={"knots": "uniform:6", "gamma": "3", "h_terms": "per_id_intercept"},
        selection={"method": "gcv-grid", "points_per_decade": "2", "lambda_min": "1e-6", "lambda_max": "1e6"},
        simulate={"n_individuals": "12", "n_times": "25", "f0": "profile", "f1": "bump:0.3",
                  "beta": "normal:0:0.1", "noise_sd": "0"},
    )
    mean, truth, _ = simulate(config, seed=21)
    system = build_system(mean, config.model)
    theta = system.join(np.array(truth["alpha_canonical"]), np.array(truth["beta_canonical"]))
    sigma2 = 0.05 ** 2

    def expected_loss(loglam_std):
        return risk(system, 10.0 ** np.asarray(loglam_std) * system.scales, "C", theta, sigma2)

    grid = np.log10(config.selection.grid())
    values = np.array([[expected_loss([a, b]) for b in grid] for a in grid])
    i, j = np.unravel_index(np.argmin(values), values.shape)
    res = optimize.minimize(expected_loss, [grid[i], grid[j]], method="Nelder-Mead",
                            options={"xatol": 1e-4, "fatol": 1e-14})
    lam_oracle = 10.0 ** np.clip(res.x, grid[0], grid[-1]) * system.scales

    ratios = np.empty(100)
    for r in range(len(ratios)):
        ys = [ind.responses + rng.normal(0, np.sqrt(sigma2), ind.n) for ind in mean]
        sys_r = build_system(_with_responses(mean, ys), config.model)
        fit = select(sys_r, config.selection)
        e_gcv = fit.theta - theta
        e_orc = solve_penalized(sys_r, lam_oracle) - theta
        ratios[r] = (e_gcv @ sys_r.C @ e_gcv) / (e_orc @ sys_r.C @ e_orc)
    return float(np.median(ratios))


@pytest.mark.slow
@pytest.mark.criterion(4, "Monte Carlo checks", limit=600.0)
def test_criterion_4_monte_carlo(record_property):
    rng = np.random.default_rng(404)
    with Stopwatch() as sw:
        s2_err, K, L, n = _sigma2_mean(rng)
        z_max, n_entries = _expected_error_mc(rng)
        ratio = _gcv_loss_ratio(rng)
    record_property("detail", f"mean sigma2-hat off by {100 * s2_err:.2f}% (K={K}, L={L}, N={n}); "
                              f"coefficient MSE entries max {z_max:.2f} s.e. over {n_entries}; "
                              f"median GCV/oracle loss {ratio:.3f}; {sw.seconds:.1f} s")
    assert s2_err < 0.05
    assert z_max < 3.0
    assert ratio <= 1.5
    assert sw.seconds < 600.0


# -- 5 -------------------------------------------------------------------------


@pytest.mark.criterion(5, "separable solver", limit=10.0)
def test_criterion_5_separable(record_property):
    rng = np.random.default_rng(505)
    terms = ["lin:u1", "log:u2", "lin:u3"]
    worst_sol = worst_orth = 0.0
    with Stopwatch() as sw:
        for _ in range(20):
            n_t = int(rng.integers(8, 30))
            n_ind = int(rng.integers(4, 10))
            L = int(rng.integers(0, 4))
            t = np.sort(rng.uniform(0, 1, n_t))
            cov = random_spd(rng, n_t, 4.0) if rng.integers(0, 2) else rng.uniform(0.5, 2.0, n_t)
            inds = [Individual(f"i{k}", t, np.cos(4 * t) * rng.uniform(0.5, 2) + rng.normal(0, 0.2, n_t), cov,
                               rng.uniform(1, 3, 3)) for k in range(n_ind)]
            data = Dataset(inds, ("u1", "u2", "u3"))
            basis = make_basis(np.linspace(0, 1, int(rng.integers(2, 8)))[1:-1], (0, 1))
            us = UniformSystem.from_dataset(data, basis, CovariateBasis(terms[:L]), float(10 ** rng.uniform(-4, 1)))
            worst_sol = max(worst_sol, rel_err(solve_separable(us), solve_multivariate(us)))
            worst_orth = max(worst_orth, np.max(np.abs(us.O.T @ us.O - np.eye(L + 1))))
    record_property("detail", f"20 designs: separable vs multivariate {worst_sol:.1e}, "
                              f"orthogonality {worst_orth:.1e}; {sw.seconds:.2f} s")
    assert worst_sol < 1e-8
    assert worst_orth < 1e-12
    assert sw.seconds < 10.0


# -- 6 -------------------------------------------------------------------------


@pytest.mark.criterion(6, "knot insensitivity", limit=60.0)
def test_criterion_6_knot_insensitivity(record_property, profiles_config, profiles_data):
    dataset, _ = profiles_data
    grid = np.linspace(0, 1, 201)
    interior = grid[(grid >= 0.05) & (grid <= 0.95)]
    curves = {}
    with Stopwatch() as sw:
        for knots in ("uniform:10", "uniform:42"):
            config = dataclasses.replace(profiles_config,
                                         model=dataclasses.replace(profiles_config.model, knots=knots))
            system, fit = fit_dataset(dataset, config)
            curves[system.K] = np.array([predict(fit, system, interior, individual=i, se=False)[0]
                                         for i in range(len(dataset))])
    assert sorted(curves) == [14, 46]
    span = curves[14].max() - curves[14].min()
    rms = np.sqrt(np.mean((curves[14] - curves[46]) ** 2))
    record_property("detail", f"RMS difference {100 * rms / span:.3f}% of curve range over {len(dataset)} "
                              f"profiles x {interior.size} interior points; {sw.seconds:.2f} s")
    assert rms / span < 0.02
    assert sw.seconds < 60.0


# -- 7 -------------------------------------------------------------------------


@pytest.mark.criterion(7, "end to end", limit=10.0)
def test_criterion_7_end_to_end(record_property, tmp_path, profiles_config, profiles_data):
    cfg = CONFIGS / "exact40.cfg"
    data = tmp_path / "exact.csv"
    out = tmp_path / "fit"
    assert main(["simulate", "--config", str(cfg), "--out", str(data), "--seed", "3"]) == 0
    assert main(["fit", "--data", str(data), "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["predict", "--data", str(data), "--config", str(cfg), "--out", str(out),
                 "--grid", str(data)]) == 0
    truth = json.loads((tmp_path / "exact.truth.json").read_text())
    alpha, beta = read_coef(out / "coef.csv")
    coef_err = max(np.max(np.abs(alpha - np.array(truth["alpha_raw_canonical"]))),
                   np.max(np.abs(beta - np.array(truth["beta_canonical"]))))
    pred, obs = read_csv_columns(out / "predictions.csv"), read_csv_columns(data)
    pred_err = np.max(np.abs(pred["fit"] - obs["y"]))

    dataset, _ = profiles_data
    fit_dataset(dataset, profiles_config)  # compile and cache kernels
    with Stopwatch() as sw:
        system, fit = fit_dataset(dataset, profiles_config)
    shape = (system.K, system.L, len(dataset), system.n_obs)
    record_property("detail", f"round trip coef {coef_err:.1e}, predictions {pred_err:.1e}; "
                              f"K={shape[0]}, L={shape[1]}, {shape[2]} ids, N={shape[3]} fit with "
                              f"{fit.method} in {sw.seconds:.2f} s")
    assert coef_err < 1e-8 and pred_err < 1e-8
    assert shape == (14, 1, 40, 2440)
    assert sw.seconds < 10.0
