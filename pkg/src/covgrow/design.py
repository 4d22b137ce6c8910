"""Datasets, covariate and parametric bases, and assembly of the penalized system.

Coefficients are ordered row-wise: spline coefficient ``k`` of function ``l``
sits at column ``k * (L + 1) + l``, which keeps the spline block of the
cross-product matrix banded with half-bandwidth ``(L + 1) * order - 1``.
Parametric coefficients follow the ``K * (L + 1)`` spline columns.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from . import kernels
from .bspline import PenaltyMatrix, SplineBasis, eval_basis_many, penalty_matrix
from .errors import ConfigError, DataError, IdentifiabilityError
from .linalg import null_space

NULL_RTOL = 1e-10


@dataclass(eq=False)
class Individual:
    """One individual's measurements.

    ``covariance`` is either a vector of per-point variances (diagonal case)
    or a dense ``(n, n)`` SPD matrix. ``covariates`` is an ``(M,)`` vector, or
    ``(n, M)`` for time-dependent covariates.
    """

    id: str
    times: np.ndarray
    responses: np.ndarray
    covariance: np.ndarray | None = None
    covariates: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.id = str(self.id)
        self.times = np.asarray(self.times, dtype=float).ravel()
        self.responses = np.asarray(self.responses, dtype=float).ravel()
        n = self.times.size
        if n < 1:
            raise DataError(f"individual {self.id!r} has no measurements")
        if self.responses.size != n:
            raise DataError(f"individual {self.id!r}: {n} times but {self.responses.size} responses")
        if not (np.all(np.isfinite(self.times)) and np.all(np.isfinite(self.responses))):
            raise DataError(f"individual {self.id!r} has non-finite values")
        if self.covariance is None:
            self.covariance = np.ones(n)
        cov = np.asarray(self.covariance, dtype=float)
        if cov.ndim == 1:
            if cov.size != n or not np.all(cov > 0):
                raise DataError(f"individual {self.id!r}: variances must be {n} positive values")
        elif cov.shape == (n, n):
            if not np.allclose(cov, cov.T, rtol=0, atol=1e-10 * np.abs(cov).max()):
                raise DataError(f"individual {self.id!r}: covariance is not symmetric")
            cov = 0.5 * (cov + cov.T)
            try:
                cholesky(cov, lower=True)
            except np.linalg.LinAlgError as exc:
                raise DataError(f"individual {self.id!r}: covariance is not positive definite") from exc
        else:
            raise DataError(f"individual {self.id!r}: covariance shape {cov.shape} does not match n={n}")
        self.covariance = cov
        u = np.asarray(self.covariates, dtype=float)
        if u.ndim == 2 and u.shape[0] != n:
            raise DataError(f"individual {self.id!r}: time-dependent covariates need {n} rows")
        self.covariates = u

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def diagonal(self) -> bool:
        return self.covariance.ndim == 1

    @property
    def time_dependent(self) -> bool:
        return self.covariates.ndim == 2


@dataclass(eq=False)
class Dataset:
    individuals: list
    covariate_names: tuple = ()

    def __post_init__(self):
        self.individuals = list(self.individuals)
        if not self.individuals:
            raise DataError("dataset has no individuals")
        ids = [ind.id for ind in self.individuals]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate individual ids")
        widths = {ind.covariates.shape[-1] if ind.covariates.size else 0 for ind in self.individuals}
        if len(widths) > 1:
            raise DataError("individuals disagree on the number of covariates")
        m = widths.pop()
        if not self.covariate_names:
            self.covariate_names = tuple(f"u{j + 1}" for j in range(m))
        self.covariate_names = tuple(self.covariate_names)
        if len(self.covariate_names) != m:
            raise DataError(f"{len(self.covariate_names)} covariate names for {m} covariates")

    def __len__(self):
        return len(self.individuals)

    def __iter__(self):
        return iter(self.individuals)

    @property
    def ids(self):
        return [ind.id for ind in self.individuals]

    @property
    def n_obs(self) -> int:
        return sum(ind.n for ind in self.individuals)

    @property
    def time_dependent(self) -> bool:
        return any(ind.time_dependent for ind in self.individuals)

    def column(self, name):
        try:
            return self.covariate_names.index(name)
        except ValueError:
            raise ConfigError(f"unknown covariate column {name!r}") from None

    def pooled_times(self):
        return np.concatenate([ind.times for ind in self.individuals])


def as_dataset(data) -> Dataset:
    return data if isinstance(data, Dataset) else Dataset(list(data))


# -- covariate and parametric bases -----------------------------------------

_G_KINDS = ("lin", "quad", "log", "per_id")
_H_KINDS = ("intercept", "per_id_intercept", "lin")


def _split_term(term):
    kind, _, col = str(term).strip().partition(":")
    return kind.strip(), col.strip()


def _continuous_value(kind, u, center):
    if kind == "lin":
        return u - center[0]
    if kind == "quad":
        return (u - center[0]) ** 2 - center[1]
    if kind == "log":
        return np.log(u) - center[0]
    raise ValueError(kind)


def _fit_center(kind, u):
    if kind == "lin":
        return (float(np.mean(u)),)
    if kind == "quad":
        c = float(np.mean(u))
        return (c, float(np.mean((u - c) ** 2)))
    if kind == "log":
        if np.any(u <= 0):
            raise DataError("log covariate term needs strictly positive values")
        return (float(np.mean(np.log(u))),)
    raise ValueError(kind)


def _covariate_sample(dataset, col):
    """Values used for centering: one per individual, or every observation if time-dependent."""
    if dataset.time_dependent:
        return np.concatenate([np.atleast_2d(ind.covariates)[:, col] if ind.time_dependent
                               else np.full(ind.n, ind.covariates[col]) for ind in dataset])
    return np.array([ind.covariates[col] for ind in dataset])


class _TermBasis:
    def __init__(self, terms=()):
        self.terms = tuple(terms)
        # (kind, column index, center or individual index, label) per expanded term
        self.expanded = None
        self.ids = ()

    def __repr__(self):
        return f"{type(self).__name__}({list(self.terms)!r})"

    @property
    def fitted(self) -> bool:
        return self.expanded is not None

    def labels(self):
        return [e[3] for e in self.expanded]

    def _require_fit(self):
        if self.expanded is None:
            raise RuntimeError(f"{type(self).__name__} must be fitted to a dataset first")


class CovariateBasis(_TermBasis):
    """Covariate multipliers ``g_l(u, i)`` of the temporal functions.

    Supported terms: ``lin:<col>``, ``quad:<col>``, ``log:<col>`` (all centered
    on the dataset mean) and ``per_id`` (indicators of every individual but
    the first, so that ``f_0`` is the first individual's curve).
    The constant term ``g_0 = 1`` is implicit.
    """

    def __init__(self, terms=()):
        super().__init__(terms=tuple(terms))
        for term in self.terms:
            if _split_term(term)[0] not in _G_KINDS:
                raise ConfigError(f"unknown covariate term {term!r}")

    @property
    def L(self) -> int:
        self._require_fit()
        return len(self.expanded)

    def fit(self, dataset) -> "CovariateBasis":
        dataset = as_dataset(dataset)
        out = CovariateBasis(self.terms)
        expanded = []
        for term in self.terms:
            kind, col = _split_term(term)
            if kind == "per_id":
                for i, ind in enumerate(dataset.individuals[1:], start=1):
                    expanded.append(("per_id", -1, i, f"per_id:{ind.id}"))
                continue
            j = dataset.column(col)
            expanded.append((kind, j, _fit_center(kind, _covariate_sample(dataset, j)), f"{kind}:{col}"))
        out.expanded = tuple(expanded)
        out.ids = tuple(dataset.ids)
        return out

    def values(self, u, index=None, n=None):
        """``(1, g_1, ..., g_L)`` for covariates ``u``; a row per time if ``u`` is 2-D.

        ``index`` is the individual's position in the fitted dataset (None for
        a new individual, whose indicator terms are zero).
        """
        self._require_fit()
        u = np.asarray(u, dtype=float)
        rows = u.shape[0] if u.ndim == 2 else None
        out = np.zeros((rows if rows is not None else 1, self.L + 1))
        out[:, 0] = 1.0
        for ell, (kind, j, center, _) in enumerate(self.expanded, start=1):
            if kind == "per_id":
                out[:, ell] = 1.0 if index == center else 0.0
            else:
                col = u[:, j] if rows is not None else np.array([u[j]])
                out[:, ell] = _continuous_value(kind, col, center)
        return out if rows is not None else out[0]


class ParametricBasis(_TermBasis):
    """Parametric terms ``h_j(t, u, i)``: ``intercept``, ``per_id_intercept``, ``lin:<col>``."""

    def __init__(self, terms=()):
        super().__init__(terms=tuple(terms))
        for term in self.terms:
            if _split_term(term)[0] not in _H_KINDS:
                raise ConfigError(f"unknown parametric term {term!r}")

    @property
    def J(self) -> int:
        self._require_fit()
        return len(self.expanded)

    def fit(self, dataset) -> "ParametricBasis":
        dataset = as_dataset(dataset)
        out = ParametricBasis(self.terms)
        expanded = []
        for term in self.terms:
            kind, col = _split_term(term)
            if kind == "intercept":
                expanded.append(("intercept", -1, None, "intercept"))
            elif kind == "per_id_intercept":
                for i, ind in enumerate(dataset.individuals):
                    expanded.append(("per_id_intercept", -1, i, f"intercept:{ind.id}"))
            else:
                j = dataset.column(col)
                expanded.append(("lin", j, _fit_center("lin", _covariate_sample(dataset, j)), f"lin:{col}"))
        out.expanded = tuple(expanded)
        out.ids = tuple(dataset.ids)
        return out

    def values(self, times, u, index=None):
        """``(n, J)`` matrix ``H[p, j] = h_j(t_p, u, i)``."""
        self._require_fit()
        times = np.atleast_1d(np.asarray(times, dtype=float))
        u = np.asarray(u, dtype=float)
        H = np.zeros((times.size, self.J))
        for jj, (kind, j, center, _) in enumerate(self.expanded):
            if kind == "intercept":
                H[:, jj] = 1.0
            elif kind == "per_id_intercept":
                H[:, jj] = 1.0 if index == center else 0.0
            else:
                col = u[:, j] if u.ndim == 2 else np.full(times.size, u[j])
                H[:, jj] = col - center[0]
        return H


# -- knot placement ---------------------------------------------------------


def place_knots(dataset, domain, rule="quantile:10"):
    """Interior knots from a rule: ``quantile:<n>``, ``uniform:<n>``, ``typical``, or a list."""
    dataset = as_dataset(dataset)
    a, b = domain
    if not isinstance(rule, str):
        return np.asarray(rule, dtype=float)
    kind, _, arg = rule.partition(":")
    kind = kind.strip()
    if kind == "quantile":
        n = int(arg)
        knots = np.quantile(dataset.pooled_times(), np.arange(1, n + 1) / (n + 1)) if n else np.zeros(0)
    elif kind == "uniform":
        n = int(arg)
        knots = np.linspace(a, b, n + 2)[1:-1]
    elif kind == "typical":
        sizes = np.array([ind.n for ind in dataset])
        vals, counts = np.unique(sizes, return_counts=True)
        n_mode = vals[np.argmax(counts)]
        stacked = np.array([np.sort(ind.times) for ind in dataset if ind.n == n_mode])
        knots = np.unique(stacked.mean(axis=0))
        knots = knots[(knots > a) & (knots < b)]
    else:
        try:
            knots = np.array([float(x) for x in rule.replace(";", ",").split(",") if x.strip()])
        except ValueError:
            raise ConfigError(f"unrecognized knot rule {rule!r}") from None
    knots = np.asarray(knots, dtype=float)
    if knots.size and (np.any(np.diff(knots) <= 0) or knots[0] <= a or knots[-1] >= b):
        raise ConfigError(f"knot rule {rule!r} produced repeated or out-of-domain knots")
    return knots


# -- individual design ------------------------------------------------------


def _spline_rows(basis, ind, gvals):
    """Row-band spline design for one individual: ``(first_col, vals)``.

    ``gvals`` is ``(L+1,)`` (fast Kronecker path) or ``(n, L+1)`` (general path).
    """
    first, bvals = eval_basis_many(basis, ind.times)
    L1 = gvals.shape[-1]
    if gvals.ndim == 1:
        vals = (bvals[:, :, None] * gvals[None, None, :]).reshape(ind.n, -1)
    else:
        vals = (bvals[:, :, None] * gvals[:, None, :]).reshape(ind.n, -1)
    return first * L1, vals


def individual_design(ind, basis, gbasis, pbasis, index=None, general=False):
    """Dense design blocks of one individual.

    Returns ``(nonparam_block, param_block)`` of shapes ``(n, K(L+1))`` and
    ``(n, J)``. With ``general=True`` the per-time product form is used even
    for time-independent covariates.
    """
    gvals = gbasis.values(ind.covariates, index)
    if general and gvals.ndim == 1:
        gvals = np.tile(gvals, (ind.n, 1))
    first, vals = _spline_rows(basis, ind, gvals)
    width = basis.n_coef * (gbasis.L + 1)
    X = np.zeros((ind.n, width))
    X[np.arange(ind.n)[:, None], first[:, None] + np.arange(vals.shape[1])] = vals
    return X, pbasis.values(ind.times, ind.covariates, index)


# -- assembled system -------------------------------------------------------


@dataclass(eq=False)
class AssembledSystem:
    """Concatenated penalized system in the effective (identifiable) parameterization.

    Parametric coefficients are ``beta = beta_map @ beta_eff``; ``beta_map`` is
    the identity unless constraints were needed to remove confounding between
    the parametric terms and the unpenalized spline directions.
    """

    basis: SplineBasis
    penalty: PenaltyMatrix
    gbasis: CovariateBasis
    pbasis: ParametricBasis
    ids: list
    offsets: np.ndarray
    times: np.ndarray
    y: np.ndarray
    xs_first: np.ndarray
    xs_vals: np.ndarray
    H_full: np.ndarray
    beta_map: np.ndarray
    sigma_blocks: list
    banded: bool
    null_dirs: np.ndarray
    unresolved: np.ndarray | None
    w_sqrt: np.ndarray | None = None
    chol_blocks: list | None = None
    notes: list = field(default_factory=list)
    covariates: list = field(default_factory=list)

    def __post_init__(self):
        self.H = self.H_full @ self.beta_map
        self.yw = self.whiten(self.y)
        if self.banded:
            self.xw_first = self.xs_first
            self.xw_vals = self.xs_vals * self.w_sqrt[:, None]
        Xw = self.Xw
        n_s = self.n_spline
        self.rhs = Xw.T @ self.yw
        if self.banded:
            bw = self.bandwidth
            self.C_band = kernels.gram_band(self.xw_first, self.xw_vals, np.ones(self.n_obs), n_s, bw)
        self.C12 = Xw[:, :n_s].T @ Xw[:, n_s:]
        self.C22 = Xw[:, n_s:].T @ Xw[:, n_s:]
        self.scales = self._lambda_scales()

    # dimensions
    @property
    def K(self) -> int:
        return self.basis.n_coef

    @property
    def L(self) -> int:
        return self.gbasis.L

    @property
    def J(self) -> int:
        return self.H_full.shape[1]

    @property
    def q(self) -> int:
        return self.beta_map.shape[1]

    @property
    def n_spline(self) -> int:
        return self.K * (self.L + 1)

    @property
    def p(self) -> int:
        return self.n_spline + self.q

    @property
    def n_obs(self) -> int:
        return self.y.size

    @property
    def order(self) -> int:
        return self.basis.order

    @property
    def bandwidth(self) -> int:
        return (self.L + 1) * self.order - 1

    @property
    def gamma(self) -> int:
        return self.penalty.gamma

    @property
    def reparameterized(self) -> bool:
        return self.q != self.J

    # whitening
    def whiten(self, v):
        """Apply ``Sigma_hat^{-1/2}`` blockwise (rows of ``v``)."""
        v = np.asarray(v, dtype=float)
        if self.w_sqrt is not None:
            return v * (self.w_sqrt if v.ndim == 1 else self.w_sqrt[:, None])
        out = np.empty_like(v)
        for i, Lc in enumerate(self.chol_blocks):
            s = slice(self.offsets[i], self.offsets[i + 1])
            out[s] = solve_triangular(Lc, v[s], lower=True)
        return out

    @cached_property
    def X(self) -> np.ndarray:
        """Dense effective design ``(N_T, p)`` (unwhitened)."""
        n_s = self.n_spline
        Xs = np.zeros((self.n_obs, n_s))
        m = self.xs_vals.shape[1]
        Xs[np.arange(self.n_obs)[:, None], self.xs_first[:, None] + np.arange(m)] = self.xs_vals
        return np.hstack([Xs, self.H])

    @cached_property
    def Xw(self) -> np.ndarray:
        return self.whiten(self.X)

    @cached_property
    def Hw(self) -> np.ndarray:
        """Whitened parametric block."""
        return np.ascontiguousarray(self.Xw[:, self.n_spline:])

    @cached_property
    def C(self) -> np.ndarray:
        """Dense cross-product ``X^T Sigma_hat^{-1} X``."""
        return self.Xw.T @ self.Xw

    @cached_property
    def penalty_split(self):
        """Coordinates separating the penalty null space (see :class:`covgrow.linalg.PenaltySplit`)."""
        from .linalg import PenaltySplit

        return PenaltySplit(self)

    def sigma_dense(self) -> np.ndarray:
        S = np.zeros((self.n_obs, self.n_obs))
        for i, blk in enumerate(self.sigma_blocks):
            s = slice(self.offsets[i], self.offsets[i + 1])
            S[s, s] = np.diag(blk) if blk.ndim == 1 else blk
        return S

    # penalties
    def S_embedded(self, ell) -> np.ndarray:
        """Dense ``(p, p)`` embedding of the penalty on function ``ell``."""
        out = np.zeros((self.p, self.p))
        idx = np.arange(self.K) * (self.L + 1) + ell
        out[np.ix_(idx, idx)] = self.penalty.S
        return out

    @property
    def S_blocks(self) -> list:
        return [self.S_embedded(ell) for ell in range(self.L + 1)]

    def penalty_dense(self, lambdas) -> np.ndarray:
        lambdas = self.check_lambdas(lambdas)
        out = np.zeros((self.p, self.p))
        Lp1 = self.L + 1
        for ell, lam in enumerate(lambdas):
            idx = np.arange(self.K) * Lp1 + ell
            out[np.ix_(idx, idx)] += lam * self.penalty.S
        return out

    def penalty_band(self, lambdas) -> np.ndarray:
        """Lower band of ``sum_l lambda_l S_l`` on the spline block."""
        lambdas = self.check_lambdas(lambdas)
        Lp1 = self.L + 1
        ab = np.zeros((self.bandwidth + 1, self.n_spline))
        sb = self.penalty.band
        for ell, lam in enumerate(lambdas):
            if lam == 0.0:
                continue
            for d in range(sb.shape[0]):
                ab[d * Lp1, ell::Lp1] += lam * sb[d]
        return ab

    def penalty_apply(self, ell, v) -> np.ndarray:
        """``S_ell @ v`` without forming the embedding; ``v`` is (p,) or (p, m)."""
        v = np.asarray(v, dtype=float)
        out = np.zeros_like(v)
        idx = np.arange(self.K) * (self.L + 1) + ell
        out[idx] = self.penalty.S @ v[idx]
        return out

    def check_lambdas(self, lambdas) -> np.ndarray:
        lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
        if lam.size == 1 and self.L > 0:
            lam = np.full(self.L + 1, lam[0])
        if lam.shape != (self.L + 1,):
            raise ValueError(f"expected {self.L + 1} smoothing parameters, got {lam.size}")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("smoothing parameters must be finite and nonnegative")
        return lam

    def _lambda_scales(self):
        """Per-function ratio ``tr(C_ll) / tr(S)`` used to standardize smoothing parameters."""
        trS = np.trace(self.penalty.S)
        if self.banded:
            diagC = self.C_band[0]
        else:
            diagC = np.einsum("ij,ij->j", self.Xw[:, : self.n_spline], self.Xw[:, : self.n_spline])
        Lp1 = self.L + 1
        out = np.array([diagC[ell::Lp1].sum() / trS for ell in range(Lp1)])
        out[~(out > 0)] = 1.0
        return out

    # coefficients
    def split(self, theta):
        """Effective coefficient vector to ``(alpha (K, L+1), beta (J,))``."""
        theta = np.asarray(theta, dtype=float)
        alpha = theta[: self.n_spline].reshape(self.K, self.L + 1)
        beta = self.beta_map @ theta[self.n_spline:]
        return alpha, beta

    def join(self, alpha, beta=None):
        """Inverse of :meth:`split`; ``beta`` must satisfy the identifiability constraints."""
        alpha = np.asarray(alpha, dtype=float).reshape(self.K, self.L + 1)
        beta = np.zeros(self.J) if beta is None else np.asarray(beta, dtype=float)
        return np.concatenate([alpha.ravel(), self.beta_map.T @ beta])

    def canonicalize(self, alpha, beta):
        """Shift ``(alpha, beta)`` along unidentified directions to satisfy the constraints.

        The fitted mean is unchanged; the result is the representation
        estimated by the solver.
        """
        alpha = np.asarray(alpha, dtype=float).reshape(self.K, self.L + 1)
        beta = np.asarray(beta, dtype=float)
        if self.null_dirs.shape[1] == 0:
            return alpha, beta
        n_s = self.n_spline
        Nb = self.null_dirs[n_s:]
        c = -np.linalg.lstsq(Nb, beta, rcond=None)[0]
        theta = np.concatenate([alpha.ravel(), beta]) + self.null_dirs @ c
        return theta[:n_s].reshape(self.K, self.L + 1), theta[n_s:]

    def parameter_labels(self):
        """Names of the effective coefficients."""
        g = ["1"] + self.gbasis.labels()
        labels = [f"alpha[k={k}, g={g[ell]}]" for k in range(self.K) for ell in range(self.L + 1)]
        if self.reparameterized:
            return labels + [f"beta_constrained[{j}]" for j in range(self.q)]
        return labels + [f"beta[{lab}]" for lab in self.pbasis.labels()]

    def design_rows(self, times, covariates, index=None):
        """Dense effective design rows for new points of one individual."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        ind = Individual("_", times, np.zeros(times.size), None, covariates)
        Xs, H = individual_design(ind, self.basis, self.gbasis, self.pbasis, index)
        return np.hstack([Xs, H @ self.beta_map])


def assemble(dataset, basis, gbasis=None, pbasis=None, gamma=2, strict=False) -> AssembledSystem:
    """Build the concatenated penalized system.

    Parameters
    ----------
    dataset : Dataset or list of Individual
    basis : SplineBasis
    gbasis, pbasis : CovariateBasis, ParametricBasis, optional
        Fitted to ``dataset`` here if not already fitted. Default: no terms.
    gamma : int
        Penalized derivative order.
    strict : bool
        If True, raise :class:`IdentifiabilityError` when the system is
        singular in a way parametric constraints cannot repair. Otherwise the
        direction is recorded in ``unresolved`` and solves will fail.

    Notes
    -----
    Unpenalized spline directions confounded with parametric terms (e.g.
    per-individual intercepts against constant temporal functions) are
    removed by constraining ``beta`` to be orthogonal to the parametric part
    of the null space; with a single ``f_0`` this is the sum-to-zero
    constraint on per-individual intercepts.
    """
    dataset = as_dataset(dataset)
    gbasis = gbasis or CovariateBasis()
    pbasis = pbasis or ParametricBasis()
    if not gbasis.fitted:
        gbasis = gbasis.fit(dataset)
    if not pbasis.fitted:
        pbasis = pbasis.fit(dataset)
    pen = penalty_matrix(basis, gamma)

    firsts, vals, Hs, blocks, offsets = [], [], [], [], [0]
    for i, ind in enumerate(dataset):
        basis.check_domain(ind.times)
        gv = gbasis.values(ind.covariates, i)
        f, v = _spline_rows(basis, ind, gv)
        firsts.append(f)
        vals.append(v)
        Hs.append(pbasis.values(ind.times, ind.covariates, i))
        blocks.append(ind.covariance)
        offsets.append(offsets[-1] + ind.n)
    diagonal = all(blk.ndim == 1 for blk in blocks)
    kwargs = {}
    if diagonal:
        kwargs["w_sqrt"] = 1.0 / np.sqrt(np.concatenate(blocks))
    else:
        kwargs["chol_blocks"] = [np.diag(np.sqrt(b)) if b.ndim == 1 else cholesky(b, lower=True) for b in blocks]

    J = pbasis.J
    common = dict(
        basis=basis, penalty=pen, gbasis=gbasis, pbasis=pbasis, ids=dataset.ids,
        offsets=np.array(offsets), times=np.concatenate([ind.times for ind in dataset]),
        y=np.concatenate([ind.responses for ind in dataset]),
        xs_first=np.concatenate(firsts).astype(np.int64), xs_vals=np.vstack(vals),
        H_full=np.vstack(Hs) if J else np.zeros((offsets[-1], 0)),
        sigma_blocks=blocks, banded=diagonal, covariates=[ind.covariates for ind in dataset], **kwargs,
    )
    full = AssembledSystem(beta_map=np.eye(J), null_dirs=np.zeros((0, 0)), unresolved=None, **common)
    M = full.C + sum(s * full.S_embedded(ell) for ell, s in enumerate(full.scales))
    N = null_space(M, NULL_RTOL)
    r = N.shape[1]
    if r == 0:
        full.null_dirs = np.zeros((full.p, 0))
        return full

    n_s = full.n_spline
    Nb = N[n_s:]
    U, sv, _ = np.linalg.svd(Nb, full_matrices=True) if J else (None, np.zeros(0), None)
    rank = int(np.sum(sv > 1e-8 * max(sv.max(initial=0.0), 1e-300))) if J else 0
    notes = []
    unresolved = None
    if rank < r:
        # directions with no parametric component cannot be fixed by constraining beta
        _, _, Vt = np.linalg.svd(Nb if J else np.zeros((1, r)))
        w = Vt[rank:].T if J else np.eye(r)
        unresolved = N @ w
        unresolved /= np.linalg.norm(unresolved, axis=0)
        msg = (f"penalized system is singular: {unresolved.shape[1]} unpenalized direction(s) "
               f"not determined by the data")
        if strict:
            raise IdentifiabilityError(msg, direction=unresolved[:, 0])
        notes.append(msg)
        N = N @ Vt[:rank].T if J and rank else np.zeros((full.p, 0))
    if rank:
        Z = U[:, rank:]
        notes.append(f"constrained parametric coefficients: {rank} confounded direction(s) removed")
    else:
        Z = np.eye(J)
    system = AssembledSystem(beta_map=Z, null_dirs=N, unresolved=unresolved, notes=notes, **common)
    return system
