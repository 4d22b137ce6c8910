"""Smoothing-parameter selection: GCV, noise variance, risk functionals, fixed-point iterations.

Smoothing parameters are handled in two forms. *Raw* values enter the
objective directly. *Standardized* values divide out a per-function scale
``tr(C_ll) / tr(S)`` so that grids and bounds mean the same thing for every
dataset; grids, clamps and convergence tests work on standardized values in
log space.
"""

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IdentifiabilityError, SelectionError
from .solver import PenalizedSolution, build_fit

METHODS = ("gcv-grid", "risk-fixed-point", "risk-fixed-point-simplified", "fixed")
Q_CHOICES = ("C", "S_c")
# residual sums below this fraction of |y|^2 are treated as exact fits
EXACT_FIT_RTOL = 1e-20
TIE_RTOL = 1e-12


@dataclass
class SelectionConfig:
    """Selection settings.

    ``lambdas`` gives raw smoothing parameters for ``method="fixed"``.
    ``initial`` is the standardized starting value of the fixed-point
    iterations. ``sigma2`` is the known noise variance, or None to estimate it.
    """

    method: str = "gcv-grid"
    q_choice: str = "C"
    lambda_min: float = 1e-8
    lambda_max: float = 1e8
    points_per_decade: int = 4
    tie_lambdas: bool = False
    tol: float = 1e-4
    max_iter: int = 100
    stationarity_tol: float = 1e-6
    sigma2: float | None = None
    fallback: bool = True
    lambdas: list | None = None
    initial: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown selection method {self.method!r}; choose from {METHODS}")
        if self.q_choice not in Q_CHOICES:
            raise ConfigError(f"unknown risk weight {self.q_choice!r}; choose from {Q_CHOICES}")
        if not 0 < self.lambda_min < self.lambda_max:
            raise ConfigError("grid bounds must satisfy 0 < lambda_min < lambda_max")
        if self.points_per_decade < 1:
            raise ConfigError("points_per_decade must be >= 1")
        if not self.tol > 0 or self.max_iter < 1:
            raise ConfigError("tol must be positive and max_iter at least 1")
        if self.sigma2 is not None and not self.sigma2 > 0:
            raise ConfigError("known sigma2 must be positive")
        if self.method == "fixed" and self.lambdas is None:
            raise ConfigError("method 'fixed' needs explicit lambdas")
        if self.method.startswith("risk") and self.q_choice != "C":
            raise ConfigError("the empirical risk estimate exists only for the predictive weight Q = C")

    def grid(self) -> np.ndarray:
        """Standardized log-spaced grid."""
        decades = np.log10(self.lambda_max / self.lambda_min)
        n = int(round(decades * self.points_per_decade)) + 1
        return np.logspace(np.log10(self.lambda_min), np.log10(self.lambda_max), n)

    def groups(self, L) -> list:
        """Index groups sharing one smoothing parameter."""
        if self.tie_lambdas and L >= 1:
            return [[0], list(range(1, L + 1))]
        return [[ell] for ell in range(L + 1)]


def group_scales(system, groups) -> np.ndarray:
    # a tied group shares one raw value, so it shares one scale
    return np.array([system.scales[g].mean() for g in groups])


def expand(system, groups, group_raw) -> np.ndarray:
    """Per-function raw smoothing parameters from per-group values."""
    lam = np.empty(system.L + 1)
    for g, val in zip(groups, group_raw):
        lam[g] = val
    return lam


# -- criteria ---------------------------------------------------------------


def _gcv_from(sol) -> float:
    n = sol.system.n_obs
    if sol.trace_A >= n * (1 - 1e-12):
        return np.inf
    return (sol.rss / n) / (1.0 - sol.trace_A / n) ** 2


def gcv_score(system, lambdas) -> float:
    """Generalized cross-validation ``[rss / N] / (1 - tr A / N)^2``."""
    sol = PenalizedSolution(system, lambdas)
    if sol.trace_A >= system.n_obs * (1 - 1e-12):
        raise SelectionError(
            f"tr A = {sol.trace_A:.6g} >= N = {system.n_obs}: the model interpolates the data"
        )
    return _gcv_from(sol)


def sigma2_hat(system) -> float:
    """Noise variance from the unpenalized fit: ``rss(0) / (N - tr A(0))``."""
    if system.n_obs <= system.p:
        raise SelectionError(
            f"cannot estimate sigma2: {system.n_obs} observations for {system.p} parameters"
        )
    sol = PenalizedSolution(system, np.zeros(system.L + 1))
    denom = system.n_obs - sol.trace_A
    if not denom > 0:
        raise SelectionError("cannot estimate sigma2: nonpositive residual degrees of freedom")
    return sol.rss / denom


def _rhat_from(sol, sigma2) -> float:
    return sol.rss + 2.0 * sigma2 * sol.trace_A - sigma2 * sol.system.n_obs


def rhat(system, lambdas, sigma2) -> float:
    """Unbiased estimate of predictive loss: ``rss + 2 sigma^2 tr A - sigma^2 N``."""
    return _rhat_from(PenalizedSolution(system, lambdas), sigma2)


def risk_weight(system, q) -> np.ndarray:
    """Risk weight matrix: ``"C"`` (predictive), ``"S_c"`` (sum of penalties) or an explicit matrix."""
    if isinstance(q, str):
        if q == "C":
            return system.C
        if q == "S_c":
            return sum(system.S_blocks)
        raise ConfigError(f"unknown risk weight {q!r}")
    return np.asarray(q, dtype=float)


def risk(system, lambdas, Q, theta_true, sigma2) -> float:
    """Exact risk ``tr(Q [sigma^2 G C G + G S theta theta^T S G])``."""
    sol = PenalizedSolution(system, lambdas)
    Q = risk_weight(system, Q)
    GC = sol.G(system.C)
    GCG = sol.G(GC.T)
    theta_true = np.asarray(theta_true, dtype=float)
    b = sol.G(_penalty_times(system, sol.lambdas, theta_true))
    return float(sigma2 * np.sum(Q * GCG) + b @ Q @ b)


def _penalty_times(system, lam, v):
    out = np.zeros_like(v)
    for ell, val in enumerate(lam):
        if val:
            out += val * system.penalty_apply(ell, v)
    return out


def risk_gradient(system, lambdas, Q, theta_true, sigma2) -> np.ndarray:
    """Half-gradient ``(1/2) dR/dlambda_l`` of the exact risk.

    ``(1/2) dR/dlambda_l = b^T Q G S_l G C theta - sigma^2 tr(Q G S_l G C G)``
    with ``b = G S theta`` the coefficient bias.
    """
    sol = PenalizedSolution(system, lambdas)
    Q = risk_weight(system, Q)
    C = system.C
    theta_true = np.asarray(theta_true, dtype=float)
    b = sol.G(_penalty_times(system, sol.lambdas, theta_true))
    GCt = sol.G(C @ theta_true)
    GCG = sol.G(sol.G(C).T)
    M = GCG @ Q @ sol.G(np.eye(system.p))
    Qb = Q @ b
    out = np.empty(system.L + 1)
    for ell in range(system.L + 1):
        w = sol.G(system.penalty_apply(ell, GCt))
        idx = np.arange(system.K) * (system.L + 1) + ell
        tr = np.sum(system.penalty.S * M[np.ix_(idx, idx)].T)
        out[ell] = Qb @ w - sigma2 * tr
    return out


class _RiskTerms:
    """Quadratic and trace terms of the estimated-risk gradient for penalty groups."""

    def __init__(self, sol, groups):
        self.sol = sol
        self.groups = groups
        s = sol.system
        Sg_theta = np.column_stack([sol.penalty_vec(g) for g in groups])
        V = sol.factor.half_solve(Sg_theta)
        # cross[g', g] = theta^T S_g' G S_g theta
        self.cross = V.T @ V
        self._tr = {}
        self.lam_g = np.array([sol.lambdas[g[0]] for g in groups])
        self.n = s.n_obs

    def trace(self, gi) -> float:
        """``tr(G S_g G C)``."""
        if gi not in self._tr:
            self._tr[gi] = float(np.sum(self.sol.W_S(self.groups[gi]) * self.sol.W_C))
        return self._tr[gi]

    def half_gradient(self, gi, sigma2) -> float:
        return float(self.lam_g @ self.cross[:, gi] - sigma2 * self.trace(gi))


def risk_hat_gradient(system, lambdas, sigma2, groups=None) -> np.ndarray:
    """Half-gradient of the estimated risk, ``(1/2) dRhat/dlambda``.

    Component ``l`` is ``theta^T S_c G S_l theta - sigma^2 tr(G S_l G C)``;
    with ``groups`` the derivative is taken along each group's shared value.
    """
    sol = PenalizedSolution(system, lambdas)
    groups = groups or [[ell] for ell in range(system.L + 1)]
    # the quadratic term needs S_c theta in full, which holds for any lambdas
    Sc_theta = sol.S_theta if np.ndim(sol.S_theta) else np.zeros(system.p)
    u = sol.factor.half_solve(Sc_theta)
    terms = _RiskTerms(sol, groups)
    out = np.empty(len(groups))
    for gi, g in enumerate(groups):
        v = sol.factor.half_solve(sol.penalty_vec(g))
        out[gi] = u @ v - sigma2 * terms.trace(gi)
    return out


# -- fixed point ------------------------------------------------------------


@dataclass
class FixedPointResult:
    lambdas: np.ndarray
    iterations: int
    converged: bool
    stationarity: np.ndarray
    clamped: np.ndarray
    path: list = field(default_factory=list)
    notes: list = field(default_factory=list)


def lambda_fixed_point(system, config, sigma2, initial=None) -> FixedPointResult:
    """Cyclic fixed-point iteration for the stationary point of the estimated risk.

    Each group value is updated in turn from
    ``lambda_g = [sigma^2 tr(G S_g G C) - sum_{g' != g} lambda_g' theta^T S_g' G S_g theta]
    / theta^T S_g G S_g theta``; the simplified method drops the cross sum.
    Values are clamped to the grid bounds. Convergence requires the relative
    change of every value below ``tol`` and, for the full update, the scaled
    gradient ``|(1/2) dRhat/dlambda_g| / (sigma^2 tr(G S_g G C))`` below
    ``stationarity_tol`` for unclamped groups.
    """
    simplified = config.method == "risk-fixed-point-simplified"
    groups = config.groups(system.L)
    scale = group_scales(system, groups)
    lo, hi = config.lambda_min * scale, config.lambda_max * scale
    if initial is None:
        lam_g = np.full(len(groups), float(config.initial)) * scale
    else:
        lam_g = np.asarray(initial, dtype=float).copy()
    lam_g = np.clip(lam_g, lo, hi)
    path = [lam_g.copy()]
    notes = []
    clamped = np.zeros(len(groups), dtype=bool)
    converged = False
    stationarity = np.full(len(groups), np.nan)
    it = 0
    for it in range(1, config.max_iter + 1):
        old = lam_g.copy()
        for gi in range(len(groups)):
            sol = PenalizedSolution(system, expand(system, groups, lam_g))
            terms = _RiskTerms(sol, groups)
            den = terms.cross[gi, gi]
            num = sigma2 * terms.trace(gi)
            if not simplified:
                others = np.arange(len(groups)) != gi
                num -= lam_g[others] @ terms.cross[others, gi]
            if den > 0 and num > 0:
                new = num / den
            else:
                new = hi[gi] if num > 0 else lo[gi]
            if new >= hi[gi]:
                if den <= 0 or num > den * hi[gi] * 1e6:
                    note = f"null-signal: group {groups[gi]} clamped at the upper bound"
                    if note not in notes:
                        notes.append(note)
                new = hi[gi]
            new = min(max(new, lo[gi]), hi[gi])
            clamped[gi] = new in (lo[gi], hi[gi])
            lam_g[gi] = new
        path.append(lam_g.copy())
        change = np.max(np.abs(lam_g / old - 1.0))
        if change < config.tol:
            sol = PenalizedSolution(system, expand(system, groups, lam_g))
            terms = _RiskTerms(sol, groups)
            stationarity = np.array([
                abs(terms.half_gradient(gi, sigma2)) / max(sigma2 * terms.trace(gi), 1e-300)
                for gi in range(len(groups))
            ])
            if simplified or np.all(stationarity[~clamped] < config.stationarity_tol):
                converged = True
                break
    return FixedPointResult(
        lambdas=expand(system, groups, lam_g), iterations=it, converged=converged,
        stationarity=stationarity, clamped=clamped.copy(), path=path, notes=notes,
    )


# -- grid scan --------------------------------------------------------------


@dataclass
class ScanResult:
    """Criterion values over visited grid points (raw smoothing parameters)."""

    lambdas: np.ndarray
    gcv: np.ndarray
    rhat: np.ndarray | None
    trace: np.ndarray
    index: np.ndarray
    best: int
    exact_fit: bool
    notes: list = field(default_factory=list)


def _best_index(index, values):
    finite = np.isfinite(values)
    if not finite.any():
        raise SelectionError("no grid point gives a finite criterion value")
    vmin = values[finite].min()
    ties = np.flatnonzero(finite & (values <= vmin + TIE_RTOL * abs(vmin)))
    # smallest lambda: lexicographically smallest grid index
    order = sorted(ties, key=lambda r: tuple(index[r]))
    return int(order[0])


def gcv_scan(system, config=None, sigma2=None) -> ScanResult:
    """Evaluate GCV (and the estimated risk when ``sigma2`` is given) on the grid.

    With at most two groups the full tensor grid is scanned; otherwise a
    cyclic coordinate search over the grid is used. If the most heavily
    smoothed corner already fits the data exactly, it is selected.
    """
    config = config or SelectionConfig()
    grid = config.grid()
    groups = config.groups(system.L)
    scale = group_scales(system, groups)
    cache = {}

    def visit(idx):
        idx = tuple(int(i) for i in idx)
        if idx not in cache:
            lam = expand(system, groups, grid[list(idx)] * scale)
            sol = PenalizedSolution(system, lam)
            rh = _rhat_from(sol, sigma2) if sigma2 is not None else np.nan
            cache[idx] = (lam, _gcv_from(sol), rh, sol.trace_A, sol.rss)
        return cache[idx]

    top = (len(grid) - 1,) * len(groups)
    corner_rss = visit(top)[4]
    exact = corner_rss <= EXACT_FIT_RTOL * float(system.yw @ system.yw)
    notes = []
    if len(groups) <= 2:
        for idx in itertools.product(range(len(grid)), repeat=len(groups)):
            visit(idx)
    else:
        cur = list((len(grid) // 2,) * len(groups))
        for _ in range(20):
            prev = list(cur)
            for gi in range(len(groups)):
                cand = []
                for k in range(len(grid)):
                    trial = list(cur)
                    trial[gi] = k
                    cand.append(tuple(trial))
                vals = np.array([visit(c)[1] for c in cand])
                cur = list(cand[_best_index(np.array(cand), vals)])
            if cur == prev:
                break
        notes.append(f"coordinate search over {len(groups)} groups")
    keys = sorted(cache)
    index = np.array(keys, dtype=int)
    lam = np.array([cache[k][0] for k in keys])
    V = np.array([cache[k][1] for k in keys])
    R = np.array([cache[k][2] for k in keys]) if sigma2 is not None else None
    T = np.array([cache[k][3] for k in keys])
    if exact:
        best = keys.index(top)
        notes.append("exact fit at maximal smoothing; selected the grid maximum")
    else:
        best = _best_index(index, V)
    return ScanResult(lambdas=lam, gcv=V, rhat=R, trace=T, index=index, best=best,
                      exact_fit=bool(exact), notes=notes)


def rhat_grid_minimizer(scan: ScanResult) -> int:
    """Row of the scan minimizing the estimated risk."""
    if scan.rhat is None:
        raise SelectionError("scan has no estimated-risk column (sigma2 unknown)")
    return _best_index(scan.index, scan.rhat)


# -- orchestration ----------------------------------------------------------


def _resolve_sigma2(system, config):
    if config.sigma2 is not None:
        return float(config.sigma2), "known"
    try:
        return sigma2_hat(system), "estimated"
    except (SelectionError, IdentifiabilityError) as exc:
        return None, str(exc)


def select(system, config=None):
    """Select smoothing parameters and return the final :class:`FitResult`."""
    config = config or SelectionConfig()
    sigma2, source = _resolve_sigma2(system, config)
    notes = list(system.notes)
    method = config.method
    converged, iterations, path = True, 0, []

    if method == "fixed":
        lam = system.check_lambdas(config.lambdas)
    elif method.startswith("risk"):
        if sigma2 is None:
            raise SelectionError(f"risk-based selection needs sigma2: {source}")
        fp = lambda_fixed_point(system, config, sigma2)
        notes += fp.notes
        iterations, path = fp.iterations, [p.tolist() for p in fp.path]
        lam = fp.lambdas
        if not fp.converged:
            msg = f"{method} did not converge in {fp.iterations} iterations"
            if np.isfinite(fp.stationarity).any():
                msg += f" (scaled stationarity {np.nanmax(fp.stationarity):.3g})"
            if not config.fallback:
                raise SelectionError(msg)
            warnings.warn(msg + "; falling back to gcv-grid", RuntimeWarning, stacklevel=2)
            notes.append(msg + "; fell back to gcv-grid")
            scan = gcv_scan(system, config, sigma2)
            lam = scan.lambdas[scan.best]
            method, converged = "gcv-grid", False
    else:
        scan = gcv_scan(system, config, sigma2)
        notes += scan.notes
        lam = scan.lambdas[scan.best]
        path = [lam.tolist()]

    fit_sigma2 = sigma2
    if sigma2 is None:
        notes.append(f"sigma2 from residuals at the selected smoothing ({source})")
        source = "residual"
    fit = build_fit(system, lam, fit_sigma2, source if fit_sigma2 is not None else "residual",
                    method=method, converged=converged, iterations=iterations, path=path,
                    notes=notes)
    if fit_sigma2 is not None:
        fit.rhat = rhat(system, lam, fit_sigma2)
    return fit
