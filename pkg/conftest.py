import numpy as np
import pytest

from riskbounds.dist_core import (
    EmpiricalDistribution,
    ExponentialDistribution,
    LognormalDistribution,
    NormalDistribution,
    ParetoDistribution,
    PowerLawDistribution,
    TailMonotonicity,
    UniformDistribution,
)
from riskbounds.simplex_opt import SearchConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def fast_search():
    """A small search that still resolves the bounds of the test instances to about 1e-9."""
    return SearchConfig(coarse_grid_resolution=8, lhs_samples=400, refine_rounds=3, local_polish=True, seed=0)


@pytest.fixture
def exp1():
    return ExponentialDistribution(1.0, tail_monotonicity=TailMonotonicity.everywhere("decreasing"))


@pytest.fixture
def power2():
    return PowerLawDistribution(2.0, tail_monotonicity=TailMonotonicity.everywhere("increasing"))


@pytest.fixture
def bernoulli():
    return EmpiricalDistribution([0.0, 1.0])


@pytest.fixture
def marginal_suite():
    """Uniform, exponential, Pareto(3), power law x^2, normal and lognormal marginals."""
    return {
        "uniform": UniformDistribution(0.0, 1.0),
        "exponential": ExponentialDistribution(1.0),
        "pareto": ParetoDistribution(3.0, 1.0),
        "power": PowerLawDistribution(2.0),
        "normal": NormalDistribution(0.0, 1.0),
        "lognormal": LognormalDistribution(0.0, 0.5),
    }
