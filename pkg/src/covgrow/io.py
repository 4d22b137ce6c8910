"""Dataset and configuration files, and writers/readers for fit outputs.

All delimited files are comma-separated UTF-8 with LF line endings; floats
are written with 17 significant digits so outputs are locale-independent and
round-trip exactly.
"""

import configparser
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .design import Dataset, Individual
from .errors import ConfigError, DataError
from .selection import SelectionConfig

FLOAT_FMT = "%.17g"


def fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if np.isnan(x):
        return "nan"
    return FLOAT_FMT % x


# -- configuration ----------------------------------------------------------


@dataclass
class ModelConfig:
    domain: tuple | None = None
    knots: str = "quantile:10"
    order: int = 4
    gamma: int = 3
    response_transform: str = "none"
    g_terms: list = field(default_factory=list)
    h_terms: list = field(default_factory=list)
    sigma2: float | None = None
    linear_ends: bool = False
    time_dependent: bool = False
    covariance_file: str | None = None

    def __post_init__(self):
        if self.response_transform not in ("none", "log"):
            raise ConfigError(f"response_transform must be 'none' or 'log', got {self.response_transform!r}")
        if self.gamma not in (2, 3):
            raise ConfigError(f"gamma must be 2 or 3, got {self.gamma}")
        if self.order < 2:
            raise ConfigError(f"order must be >= 2, got {self.order}")
        if self.domain is not None and not self.domain[1] > self.domain[0]:
            raise ConfigError(f"empty domain {self.domain}")


@dataclass
class Config:
    model: ModelConfig
    selection: SelectionConfig
    simulate: dict
    base_dir: Path = Path(".")


def _floats(text, what):
    try:
        return [float(x) for x in text.replace("[", "").replace("]", "").replace(";", ",").split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {text!r}") from None


def _terms(text):
    return [t.strip() for t in text.split(",") if t.strip() and t.strip().lower() != "none"]


def _bool(text, what):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{what}: expected a boolean, got {text!r}")


def _int(text, what):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{what}: expected an integer, got {text!r}") from None


def _float(text, what):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{what}: expected a number, got {text!r}") from None


def _sigma2(text):
    text = text.strip()
    if text in ("", "estimate"):
        return None
    kind, _, val = text.partition(":")
    if kind != "known":
        raise ConfigError(f"sigma2 must be 'estimate' or 'known:<value>', got {text!r}")
    v = _float(val, "sigma2")
    if not v > 0:
        raise ConfigError("known sigma2 must be positive")
    return v


def parse_config(text: str, base_dir=".") -> Config:
    """Parse key = value configuration text with optional ``[model]``,
    ``[selection]`` and ``[simulate]`` sections (keys before any section
    belong to ``[model]``)."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        cp.read_string("[model]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from None
    unknown = set(cp.sections()) - {"model", "selection", "simulate"}
    if unknown:
        raise ConfigError(f"unknown configuration section(s): {sorted(unknown)}")
    m = cp["model"]
    known_model = {"domain", "knots", "order", "gamma", "response_transform", "g_terms", "h_terms",
                   "sigma2", "linear_ends", "time_dependent", "covariance_file"}
    bad = set(m) - known_model
    if bad:
        raise ConfigError(f"unknown model key(s): {sorted(bad)}")
    domain = None
    if "domain" in m:
        d = _floats(m["domain"], "domain")
        if len(d) != 2:
            raise ConfigError(f"domain needs two numbers, got {m['domain']!r}")
        domain = (d[0], d[1])
    model = ModelConfig(
        domain=domain,
        knots=m.get("knots", "quantile:10").strip(),
        order=_int(m.get("order", "4"), "order"),
        gamma=_int(m.get("gamma", "3"), "gamma"),
        response_transform=m.get("response_transform", "none").strip(),
        g_terms=_terms(m.get("g_terms", "")),
        h_terms=_terms(m.get("h_terms", "")),
        sigma2=_sigma2(m.get("sigma2", "estimate")),
        linear_ends=_bool(m.get("linear_ends", "false"), "linear_ends"),
        time_dependent=_bool(m.get("time_dependent", "false"), "time_dependent"),
        covariance_file=m.get("covariance_file", "").strip() or None,
    )
    sel = {}
    if cp.has_section("selection"):
        s = cp["selection"]
        conv = {
            "method": str.strip, "q_choice": str.strip,
            "lambda_min": lambda v: _float(v, "lambda_min"),
            "lambda_max": lambda v: _float(v, "lambda_max"),
            "points_per_decade": lambda v: _int(v, "points_per_decade"),
            "tie_lambdas": lambda v: _bool(v, "tie_lambdas"),
            "tol": lambda v: _float(v, "tol"),
            "max_iter": lambda v: _int(v, "max_iter"),
            "stationarity_tol": lambda v: _float(v, "stationarity_tol"),
            "fallback": lambda v: _bool(v, "fallback"),
            "lambdas": lambda v: _floats(v, "lambdas"),
            "initial": lambda v: _float(v, "initial"),
        }
        for key, val in s.items():
            if key not in conv:
                raise ConfigError(f"unknown selection key {key!r}")
            sel[key] = conv[key](val)
    selection = SelectionConfig(sigma2=model.sigma2, **sel)
    simulate = dict(cp["simulate"]) if cp.has_section("simulate") else {}
    return Config(model=model, selection=selection, simulate=simulate, base_dir=Path(base_dir))


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent)


# -- datasets ---------------------------------------------------------------


def read_dataset(path, time_dependent=False, covariance_file=None) -> Dataset:
    """Read a dataset CSV with columns ``id, t, y[, sigma], covariates...``.

    Rows are grouped by id in order of first appearance. The ``sigma``
    column gives per-point standard deviations; the resulting covariance is
    rescaled to unit mean diagonal over the whole dataset. A JSON file
    mapping ids to dense covariance matrices overrides the column.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:3] != ["id", "t", "y"]:
        raise DataError(f"{path}: header must start with id,t,y (got {','.join(header[:3])})")
    has_sigma = len(header) > 3 and header[3] == "sigma"
    cov_names = header[4:] if has_sigma else header[3:]
    groups = {}
    for line_no, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row[1:]]
        except ValueError:
            raise DataError(f"{path}:{line_no}: non-numeric or missing value") from None
        groups.setdefault(row[0].strip(), []).append(vals)
    if not groups:
        raise DataError(f"{path}: no data rows")
    dense = {}
    if covariance_file:
        try:
            dense = json.loads(Path(covariance_file).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read covariance file {covariance_file}: {exc}") from None
    individuals = []
    for pid, vals in groups.items():
        a = np.array(vals)
        t, y = a[:, 0], a[:, 1]
        sig = a[:, 2] if has_sigma else np.ones(len(a))
        if np.any(sig <= 0):
            raise DataError(f"individual {pid!r}: sigma must be positive")
        u = a[:, 3:] if has_sigma else a[:, 2:]
        if time_dependent:
            cov_u = u if u.shape[1] else np.zeros(0)
        else:
            if u.shape[1] and np.any(u != u[0]):
                raise DataError(f"individual {pid!r}: covariates vary within the id (set time_dependent = true)")
            cov_u = u[0] if u.shape[1] else np.zeros(0)
        cov = np.array(dense[pid], dtype=float) if pid in dense else sig ** 2
        individuals.append(Individual(pid, t, y, cov, cov_u))
    mean_diag = np.mean(np.concatenate([np.diag(i.covariance) if i.covariance.ndim == 2 else i.covariance
                                        for i in individuals]))
    for ind in individuals:
        ind.covariance = ind.covariance / mean_diag
    return Dataset(individuals, tuple(cov_names))


def write_dataset(path, dataset: Dataset, sigma=None):
    """Write a dataset CSV; ``sigma`` maps ids to per-point standard deviations."""
    header = ["id", "t", "y"] + (["sigma"] if sigma is not None else []) + list(dataset.covariate_names)
    rows = []
    for ind in dataset:
        u = ind.covariates
        for p in range(ind.n):
            row = [ind.id, fmt(ind.times[p]), fmt(ind.responses[p])]
            if sigma is not None:
                row.append(fmt(sigma[ind.id][p]))
            if u.size:
                row += [fmt(v) for v in (u[p] if u.ndim == 2 else u)]
            rows.append(row)
    write_csv(path, header, rows)


# -- generic CSV ------------------------------------------------------------


def write_csv(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_csv_columns(path, text=("id", "label", "param")) -> dict:
    """Columns of a CSV file; numeric columns become float arrays, ``text`` columns stay strings."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in body]
        if name in text:
            out[name] = col
            continue
        try:
            out[name] = np.array([float(v) if v != "" else np.nan for v in col])
        except ValueError:
            out[name] = col
    return out


# -- fit outputs ------------------------------------------------------------


def write_coef(path, system, fit):
    """``coef.csv``: raw spline coefficients by (k, l) and parametric coefficients by j."""
    from .bspline import to_raw_coef

    raw = to_raw_coef(system.basis, fit.alpha)
    g_labels = ["1"] + system.gbasis.labels()
    rows = [["alpha", k, ell, g_labels[ell], fmt(raw[k, ell])]
            for k in range(raw.shape[0]) for ell in range(raw.shape[1])]
    rows += [["beta", j, "", lab, fmt(fit.beta[j])] for j, lab in enumerate(system.pbasis.labels())]
    write_csv(path, ["param", "k", "l", "label", "value"], rows)


def read_coef(path):
    """Inverse of :func:`write_coef`: ``(alpha (K, L+1), beta (J,))``."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    a = [(int(r["k"]), int(r["l"]), float(r["value"])) for r in rows if r["param"] == "alpha"]
    K = max(k for k, _, _ in a) + 1
    L1 = max(ell for _, ell, _ in a) + 1
    alpha = np.zeros((K, L1))
    for k, ell, v in a:
        alpha[k, ell] = v
    beta = np.array([float(r["value"]) for r in rows if r["param"] == "beta"])
    return alpha, beta


def write_summary(path, system, fit):
    lines = [
        ("method", fit.method),
        ("converged", str(fit.converged).lower()),
        ("iterations", str(fit.iterations)),
        ("lambdas", " ".join(fmt(v) for v in fit.lambdas)),
        ("lambdas_standardized", " ".join(fmt(v) for v in fit.lambdas_std)),
        ("sigma2", fmt(fit.sigma2)),
        ("sigma2_source", fit.sigma2_source),
        ("trace_A", fmt(fit.trace_A)),
        ("gcv", fmt(fit.gcv)),
        ("rhat", fmt(fit.rhat) if fit.rhat is not None else "nan"),
        ("rss_weighted", fmt(fit.rss)),
        ("n_obs", str(fit.n_obs)),
        ("n_params", str(fit.n_params)),
        ("n_individuals", str(len(system.ids))),
        ("order", str(system.order)),
        ("gamma", str(system.gamma)),
        ("domain", " ".join(fmt(v) for v in system.basis.domain)),
        ("interior_knots", " ".join(fmt(v) for v in system.basis.interior_knots)),
        ("g_terms", " ".join(system.gbasis.labels()) or "none"),
        ("h_terms", " ".join(system.pbasis.terms) or "none"),
        ("backend", _backend()),
    ]
    lines += [(f"note{i + 1}", n) for i, n in enumerate(fit.notes)]
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in lines), encoding="utf-8")


def _backend():
    from .kernels import BACKEND

    return BACKEND


def read_summary(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if " = " in line:
            k, v = line.split(" = ", 1)
            out[k] = v
    return out


def write_curves(path, system, fit, n_points=200):
    """``curves.csv``: fit and plug-in se on a uniform grid per individual."""
    from .solver import plugin_se

    a, b = system.basis.domain
    grid = np.linspace(a, b, n_points)
    rows = []
    for i, pid in enumerate(system.ids):
        D = system.design_rows(grid, system.covariates[i] if _const(system.covariates[i]) else
                               _interp_covariates(system, i, grid), i)
        mean = D @ fit.theta
        se = plugin_se(fit, system, D)
        rows += [[pid, fmt(t), fmt(m), fmt(s)] for t, m, s in zip(grid, mean, se)]
    write_csv(path, ["id", "t", "fit", "se"], rows)


def _const(u):
    return np.ndim(u) < 2


def _interp_covariates(system, i, grid):
    # time-dependent covariates: linear interpolation of the observed path
    s = slice(system.offsets[i], system.offsets[i + 1])
    t = system.times[s]
    u = system.covariates[i]
    order = np.argsort(t, kind="stable")
    return np.column_stack([np.interp(grid, t[order], u[order, m]) for m in range(u.shape[1])])


def write_residuals(path, system, fit):
    fitted = system.X @ fit.theta
    rows = []
    for i, pid in enumerate(system.ids):
        for p in range(system.offsets[i], system.offsets[i + 1]):
            rows.append([pid, fmt(system.times[p]), fmt(system.y[p]), fmt(fitted[p]),
                         fmt(system.y[p] - fitted[p])])
    write_csv(path, ["id", "t", "y", "fit", "residual"], rows)


def write_scan(path, scan, L):
    header = [f"lambda_{ell}" for ell in range(L + 1)] + ["V", "Rhat", "trA"]
    rows = []
    for r in range(len(scan.gcv)):
        rh = scan.rhat[r] if scan.rhat is not None else None
        rows.append([fmt(v) for v in scan.lambdas[r]] + [fmt(scan.gcv[r]), fmt(rh), fmt(scan.trace[r])])
    write_csv(path, header, rows)
