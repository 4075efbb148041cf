import numpy as np
import pytest

from penhaz.model import SurvivalDataset
from penhaz.simulation import (
    UniformRange,
    WeibullTruth,
    apply_censoring,
    gen_ph,
    gen_weibull,
    replica_rng,
)
from penhaz.splines import make_knots


def weibull_sample(n, seed, shape=13.0, scale=100.0, prop=0.2):
    rng = replica_rng(seed, 0)
    T = gen_weibull(n, WeibullTruth(shape, scale), rng)
    time, event = apply_censoring(T, prop, rng)
    return SurvivalDataset(time, event)


def ph_sample(n, seed, betas=(1.0,), ranges=((0, 1),), shape=12.0, prop=0.2):
    rng = replica_rng(seed, 0)
    raw = gen_ph(n, shape, 100.0, betas, [UniformRange(*r) for r in ranges], rng)
    time, event = apply_censoring(raw.time, prop, rng)
    return SurvivalDataset(time, event, raw.covariates)


@pytest.fixture(scope="session")
def weibull100():
    data = weibull_sample(100, 11)
    return data, make_knots(data.time, 7)


@pytest.fixture(scope="session")
def ph200():
    data = ph_sample(200, 5, betas=(1.0, -1.0), ranges=((0, 1), (0, 3)))
    return data, make_knots(data.time, 7)
