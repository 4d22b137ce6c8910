"""Configuration-driven model building shared by the CLI and the simulator."""

import numpy as np

from .bspline import make_basis
from .design import CovariateBasis, Dataset, Individual, ParametricBasis, assemble, place_knots
from .errors import ConfigError, DataError
from .selection import select


def transform_dataset(dataset: Dataset, transform: str) -> Dataset:
    """Apply the response transform (``none`` or ``log``)."""
    if transform == "none":
        return dataset
    if transform != "log":
        raise ConfigError(f"unknown response transform {transform!r}")
    out = []
    for ind in dataset:
        if np.any(ind.responses <= 0):
            raise DataError(f"individual {ind.id!r}: log transform needs positive responses")
        out.append(Individual(ind.id, ind.times, np.log(ind.responses), ind.covariance, ind.covariates))
    return Dataset(out, dataset.covariate_names)


def model_domain(dataset, model):
    if model.domain is not None:
        return model.domain
    t = dataset.pooled_times()
    return (float(t.min()), float(t.max()))


def build_basis(dataset, model):
    domain = model_domain(dataset, model)
    try:
        knots = place_knots(dataset, domain, model.knots)
        return make_basis(knots, domain, model.order, linear_ends=model.linear_ends)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_system(dataset, model, strict=False):
    """Assemble the penalized system for a (transformed) dataset."""
    basis = build_basis(dataset, model)
    if model.gamma > model.order - 1:
        raise ConfigError(f"gamma = {model.gamma} needs order >= {model.gamma + 1}")
    return assemble(dataset, basis, CovariateBasis(model.g_terms), ParametricBasis(model.h_terms),
                    gamma=model.gamma, strict=strict)


def fit_dataset(dataset, config):
    """Transform, assemble and select; returns ``(system, fit)``."""
    data = transform_dataset(dataset, config.model.response_transform)
    system = build_system(data, config.model)
    return system, select(system, config.selection)
