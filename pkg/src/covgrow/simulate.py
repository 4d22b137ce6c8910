"""Synthetic datasets with known truth for Monte Carlo and round-trip checks.

The ``[simulate]`` configuration section accepts:

``n_individuals``, ``n_times``
    Design size; times are a uniform grid on the model domain.
``jitter``
    Standard deviation of per-point time jitter as a fraction of the grid
    spacing (0 gives identical times for everyone); jittered times are clipped
    to the domain and sorted.
``f0``, ``f1``, ...
    Temporal functions: a named shape ``name[:amplitude]`` or explicit
    spline coefficients ``coef:c1,c2,...``. Shapes are projected onto the
    model's spline basis, so the truth lies exactly in the fitted space.
``covariates``
    ``;``-separated ``name:dist:params`` specs, with ``dist`` one of
    ``uniform:a:b``, ``normal:mu:sd``, ``lognormal:mu:sd``, ``const:v``.
``beta``
    ``normal:mu:sd`` draws, ``zero``, or an explicit comma list.
``noise_sd``
    Noise standard deviation on the model (possibly transformed) scale.
``sigma_profile``
    ``none`` or ``edge:<k>``: per-point sd multiplier ``1 + k s^2`` with
    ``s`` the position in the domain scaled to [-1, 1]; written to the
    ``sigma`` column.
``seed``
    Default seed if none is given on the command line.
"""

import json
from pathlib import Path

import numpy as np

from .bspline import design_matrix, to_raw_coef
from .design import CovariateBasis, Dataset, Individual, ParametricBasis
from .errors import ConfigError
from .io import write_dataset
from .pipeline import build_system

SHAPES = {
    "zero": lambda s: np.zeros_like(s),
    "const": lambda s: np.ones_like(s),
    "linear": lambda s: s,
    "quadratic": lambda s: s ** 2,
    "sine": lambda s: np.sin(2 * np.pi * s),
    "bump": lambda s: np.exp(-(((s - 0.5) / 0.15) ** 2)),
    "profile": lambda s: 1.0 - s ** 2,
    "edge": lambda s: s ** 4,
}


def shape_values(spec: str, s):
    name, _, amp = spec.partition(":")
    name = name.strip()
    if name not in SHAPES:
        raise ConfigError(f"unknown shape {name!r}; choose from {sorted(SHAPES)} or coef:...")
    try:
        a = float(amp) if amp.strip() else 1.0
    except ValueError:
        raise ConfigError(f"bad amplitude in {spec!r}") from None
    return a * SHAPES[name](s)


def project_shape(basis, spec: str) -> np.ndarray:
    """Least-squares spline coefficients (model parameterization) of a shape spec."""
    spec = spec.strip()
    if spec.startswith("coef:"):
        c = np.array([float(x) for x in spec[5:].split(",") if x.strip()])
        if c.size != basis.n_coef:
            raise ConfigError(f"{spec!r}: need {basis.n_coef} coefficients, got {c.size}")
        return c
    a, b = basis.domain
    t = np.linspace(a, b, 4001)
    X = design_matrix(basis, t)
    return np.linalg.lstsq(X, shape_values(spec, (t - a) / (b - a)), rcond=None)[0]


def _draw(rng, spec, size):
    parts = spec.split(":")
    kind, args = parts[0].strip(), [float(x) for x in parts[1:]]
    if kind == "uniform" and len(args) == 2:
        return rng.uniform(args[0], args[1], size)
    if kind == "normal" and len(args) == 2:
        return rng.normal(args[0], args[1], size)
    if kind == "lognormal" and len(args) == 2:
        return rng.lognormal(args[0], args[1], size)
    if kind == "const" and len(args) == 1:
        return np.full(size, args[0])
    raise ConfigError(f"bad distribution spec {spec!r}")


def simulate(config, seed=None):
    """Generate ``(dataset, truth dict, sigma map)`` from a :class:`~covgrow.io.Config`.

    Responses are on the original scale: with a log response transform the
    model scale values are exponentiated.
    """
    sim = config.simulate
    model = config.model
    if model.domain is None:
        raise ConfigError("simulation needs an explicit model domain")
    if model.time_dependent:
        raise ConfigError("simulation generates time-independent covariates only")
    try:
        n_ind = int(sim.get("n_individuals", 40))
        n_t = int(sim.get("n_times", 61))
        jitter = float(sim.get("jitter", 0.0))
        noise_sd = float(sim.get("noise_sd", 0.0))
    except ValueError as exc:
        raise ConfigError(f"bad simulate setting: {exc}") from None
    if n_ind < 1 or n_t < 1 or noise_sd < 0 or jitter < 0:
        raise ConfigError("simulation sizes must be positive and noise/jitter nonnegative")
    if seed is None:
        seed = int(sim.get("seed", 0))
    rng = np.random.default_rng(seed)
    a, b = model.domain
    base = np.linspace(a, b, n_t)
    step = (b - a) / max(n_t - 1, 1)

    cov_specs = [c.strip() for c in sim.get("covariates", "").split(";") if c.strip()]
    names = []
    draws = []
    for spec in cov_specs:
        name, _, dist = spec.partition(":")
        names.append(name.strip())
        draws.append(_draw(rng, dist, n_ind))
    U = np.column_stack(draws) if draws else np.zeros((n_ind, 0))

    times = []
    for i in range(n_ind):
        t = base + (rng.normal(0.0, jitter * step, n_t) if jitter else 0.0)
        times.append(np.sort(np.clip(t, a, b)))
    skeleton = Dataset([Individual(f"p{i + 1:03d}", times[i], np.zeros(n_t), None,
                                   U[i] if U.shape[1] else np.zeros(0)) for i in range(n_ind)],
                       tuple(names))
    system = build_system(skeleton, model)
    basis = system.basis
    gbasis = system.gbasis
    pbasis = system.pbasis
    L, J = gbasis.L, pbasis.J
    alpha = np.column_stack([project_shape(basis, sim.get(f"f{ell}", "profile" if ell == 0 else "zero"))
                             for ell in range(L + 1)])
    beta_spec = sim.get("beta", "zero").strip()
    if beta_spec == "zero":
        beta = np.zeros(J)
    elif beta_spec.startswith(("normal:", "uniform:")):
        beta = _draw(rng, beta_spec, J)
    else:
        beta = np.array([float(x) for x in beta_spec.split(",") if x.strip()])
        if beta.size != J:
            raise ConfigError(f"beta list has {beta.size} values for {J} parametric terms")

    profile = sim.get("sigma_profile", "none").strip()
    individuals, sigma = [], {}
    for i, ind in enumerate(skeleton):
        s = 2 * (ind.times - a) / (b - a) - 1
        if profile == "none":
            sd = np.ones(n_t)
        elif profile.startswith("edge:"):
            sd = 1.0 + float(profile[5:]) * s ** 2
        else:
            raise ConfigError(f"unknown sigma_profile {profile!r}")
        g = gbasis.values(ind.covariates, i)
        mean = design_matrix(basis, ind.times) @ alpha @ g
        if J:
            mean = mean + pbasis.values(ind.times, ind.covariates, i) @ beta
        eta = mean + noise_sd * sd * rng.standard_normal(n_t)
        y = np.exp(eta) if model.response_transform == "log" else eta
        individuals.append(Individual(ind.id, ind.times, y, sd ** 2, ind.covariates))
        if profile != "none":
            sigma[ind.id] = sd
    dataset = Dataset(individuals, tuple(names))
    alpha_c, beta_c = system.canonicalize(alpha, beta)
    truth = {
        "seed": seed,
        "domain": list(basis.domain),
        "order": basis.order,
        "interior_knots": basis.interior_knots.tolist(),
        "g_terms": gbasis.labels(),
        "h_terms": pbasis.labels(),
        "alpha": alpha.tolist(),
        "alpha_raw": to_raw_coef(basis, alpha).tolist(),
        "beta": beta.tolist(),
        "alpha_canonical": alpha_c.tolist(),
        "alpha_raw_canonical": to_raw_coef(basis, alpha_c).tolist(),
        "beta_canonical": beta_c.tolist(),
        "noise_sd": noise_sd,
    }
    return dataset, truth, (sigma if profile != "none" else None)


def write_simulation(out, dataset, truth, sigma=None):
    """Write the dataset CSV and ``<stem>.truth.json`` next to it."""
    out = Path(out)
    write_dataset(out, dataset, sigma)
    truth_path = out.with_name(out.stem + ".truth.json")
    truth_path.write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return truth_path
