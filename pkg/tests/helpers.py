"""Random problem generators and brute-force dense oracles.

Oracles rebuild the design with scipy's B-spline implementation and use
explicit inverses, so they share no numerical code with the package.
"""

import numpy as np
from scipy.interpolate import BSpline

from covgrow import CovariateBasis, Individual, ParametricBasis, assemble, make_basis


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    w = np.exp(rng.uniform(0, np.log(cond), n))
    A = (Q * w) @ Q.T
    return 0.5 * (A + A.T)


def random_dataset(rng, n_ind=3, n_range=(5, 10), n_cov=2, dense_cov=False, domain=(0.0, 1.0)):
    a, b = domain
    inds = []
    for i in range(n_ind):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        t = np.sort(rng.uniform(a, b, n))
        y = np.sin(3 * t) + rng.normal(0, 0.3, n)
        cov = random_spd(rng, n, 5.0) if dense_cov else rng.uniform(0.5, 2.0, n)
        u = rng.uniform(1.0, 3.0, n_cov)
        inds.append(Individual(f"id{i}", t, y, cov, u))
    return inds


def random_system(rng, max_nt=50, max_k=8, max_l=2, dense_cov=None, h_terms=None, gamma=2):
    """Random identifiable system with ``N_T <= max_nt``, ``K <= max_k``, ``L <= max_l``."""
    L = int(rng.integers(0, max_l + 1))
    n_int = int(rng.integers(1, max_k - 4 + 1))
    if dense_cov is None:
        dense_cov = bool(rng.integers(0, 2))
    g_terms = ["lin:u1", "log:u2"][:L]
    if h_terms is None:
        h_terms = [[], ["lin:u2"], ["per_id_intercept"]][int(rng.integers(0, 3))]
    n_ind = int(rng.integers(3, 6))
    per = max_nt // n_ind
    inds = random_dataset(rng, n_ind, (max(per - 4, 4), per), dense_cov=dense_cov)
    knots = np.linspace(0, 1, n_int + 2)[1:-1]
    basis = make_basis(knots, (0.0, 1.0))
    system = assemble(inds, basis, CovariateBasis(g_terms), ParametricBasis(h_terms), gamma=gamma)
    return system, inds


def random_lambdas(rng, system, lo=-3, hi=3):
    return 10 ** rng.uniform(lo, hi, system.L + 1) * system.scales


# -- dense oracles ----------------------------------------------------------


def scipy_design(basis, t):
    """Dense B-spline design from scipy (raw basis, no end constraints)."""
    return BSpline.design_matrix(np.asarray(t, dtype=float), basis.knots, basis.degree).toarray()


def oracle_design(system, inds):
    """Dense effective design, block covariance and response in original coordinates."""
    K, Lp1 = system.K, system.L + 1
    rows, Hs, covs, ys = [], [], [], []
    for i, ind in enumerate(inds):
        B = scipy_design(system.basis, ind.times)
        g = system.gbasis.values(ind.covariates, i)
        X = np.zeros((ind.n, K * Lp1))
        for ell in range(Lp1):
            X[:, np.arange(K) * Lp1 + ell] = B * g[ell]
        rows.append(X)
        Hs.append(system.pbasis.values(ind.times, ind.covariates, i) @ system.beta_map)
        covs.append(np.diag(ind.covariance) if ind.covariance.ndim == 1 else ind.covariance)
        ys.append(ind.responses)
    X = np.hstack([np.vstack(rows), np.vstack(Hs)])
    n = X.shape[0]
    Sigma = np.zeros((n, n))
    o = 0
    for c in covs:
        Sigma[o:o + len(c), o:o + len(c)] = c
        o += len(c)
    return X, Sigma, np.concatenate(ys)


def oracle_penalty(system, lam):
    K, Lp1 = system.K, system.L + 1
    S = np.zeros((system.p, system.p))
    for ell in range(Lp1):
        idx = np.arange(K) * Lp1 + ell
        S[np.ix_(idx, idx)] += lam[ell] * system.penalty.S
    return S


class DenseOracle:
    """Explicit-inverse versions of every solver quantity."""

    def __init__(self, system, inds, lam):
        self.X, self.Sigma, self.y = oracle_design(system, inds)
        self.Si = np.linalg.inv(self.Sigma)
        self.C = self.X.T @ self.Si @ self.X
        self.Sc = oracle_penalty(system, lam)
        self.G = np.linalg.inv(self.C + self.Sc)
        self.theta = self.G @ self.X.T @ self.Si @ self.y
        self.A = self.X @ self.G @ self.X.T @ self.Si
        self.n = len(self.y)
        r = self.y - self.A @ self.y
        self.rss = float(r @ self.Si @ r)
        self.trace = float(np.trace(self.A))
        self.gcv = (self.rss / self.n) / (1 - self.trace / self.n) ** 2

    def posterior(self, sigma2):
        w, V = np.linalg.eigh(self.Sc)
        keep = w > 1e-10 * max(w.max(), 0)
        S_pinv = (V[:, keep] / w[keep]) @ V[:, keep].T
        data_cov = sigma2 * np.linalg.inv(self.C)
        prior_cov = sigma2 * S_pinv
        wp, Vp = np.linalg.eigh(prior_cov)
        keep = wp > 1e-10 * max(wp.max(), 0)
        prior_prec = (Vp[:, keep] / wp[keep]) @ Vp[:, keep].T
        return np.linalg.inv(np.linalg.inv(data_cov) + prior_prec)

    def sampling_cov(self, sigma2, theta):
        b = self.G @ self.Sc @ theta
        return sigma2 * self.G @ self.C @ self.G + np.outer(b, b)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# -- simulated datasets -------------------------------------------------------


def sim_config(model=None, selection=None, simulate=None):
    """Config from dicts of overrides on a small log-covariate design."""
    from covgrow.io import parse_config

    m = {"domain": "0, 1", "knots": "uniform:6", "gamma": "2", "g_terms": "log:q", "h_terms": "none"}
    s = {"method": "gcv-grid"}
    sim = {"n_individuals": "8", "n_times": "25", "f0": "sine", "f1": "bump:0.5",
           "covariates": "q:uniform:1.5:4.5", "beta": "zero", "noise_sd": "0.1"}
    m.update(model or {})
    s.update(selection or {})
    sim.update(simulate or {})
    text = "".join(f"{k} = {v}\n" for k, v in m.items())
    text += "[selection]\n" + "".join(f"{k} = {v}\n" for k, v in s.items())
    text += "[simulate]\n" + "".join(f"{k} = {v}\n" for k, v in sim.items())
    return parse_config(text)


def simulated_system(config, seed):
    """``(system, truth theta, dataset)`` for a simulated dataset."""
    from covgrow.pipeline import build_system, transform_dataset
    from covgrow.simulate import simulate

    dataset, truth, _ = simulate(config, seed=seed)
    system = build_system(transform_dataset(dataset, config.model.response_transform), config.model)
    theta = system.join(np.array(truth["alpha_canonical"]), np.array(truth["beta_canonical"]))
    return system, theta, dataset
