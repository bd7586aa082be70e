"""
Discrete couplings: rearrangement, exhaustive enumeration and three-block constructions.
"""
import math

import numpy as np
import pandas as pd
import pytest

from riskbounds.bounds import (
    CERTIFIED_BY_CONDITION,
    CERTIFIED_BY_ORACLE,
    UNKNOWN,
    BoundProblem,
    BoundResult,
    ird_sup,
    lower_bound_rvar,
    upper_bound_rvar,
)
from riskbounds.dist_core import (
    EmpiricalDistribution,
    PointMass,
    QuantileFunctionDistribution,
    RiskFunctional,
    UniformDistribution,
    rvar,
)
from riskbounds.errors import ConstraintViolation, InstanceTooLarge, InvalidParams, NonFiniteQuantile
from riskbounds.oracle import (
    DiscreteCoupling,
    RAConfig,
    blocks_disjoint,
    certify_bound,
    corner_coupling,
    discretization_slack,
    discretize,
    exhaustive_extreme,
    ra_inf_rvar,
    ra_sup_rvar,
)


class TestDiscretize:
    def test_midpoints(self):
        np.testing.assert_allclose(discretize(UniformDistribution(), 4), [0.125, 0.375, 0.625, 0.875])

    def test_bernoulli(self, bernoulli):
        np.testing.assert_array_equal(discretize(bernoulli, 2), [0.0, 1.0])

    def test_nonfinite_quantile(self):
        bad = QuantileFunctionDistribution(lambda u: np.where(u > 0.5, np.inf, u))
        with pytest.raises(NonFiniteQuantile):
            discretize(bad, 4)

    def test_invalid_size(self):
        with pytest.raises(InvalidParams):
            discretize(UniformDistribution(), 0)


class TestBernoulliCouplings:
    """Two fair coins: ES at 1/2 of the sum is 2 comonotone and 1 antithetic."""

    def test_exhaustive(self, bernoulli):
        functional = RiskFunctional.rvar(0.5, 0.5)
        sup, _ = exhaustive_extreme([bernoulli, bernoulli], functional, "sup", 2)
        inf, coupling = exhaustive_extreme([bernoulli, bernoulli], functional, "inf", 2)
        assert sup == 2.0
        assert inf == 1.0
        np.testing.assert_array_equal(coupling.row_sums(), [1.0, 1.0])

    def test_rearrangement(self, bernoulli):
        cfg = RAConfig(m=2, restarts=2)
        sup, _ = ra_sup_rvar([bernoulli, bernoulli], 0.5, 0.5, cfg)
        inf, _ = ra_inf_rvar([bernoulli, bernoulli], 0.5, 0.5, cfg)
        assert sup == 2.0
        assert inf == 1.0

    def test_three_coins_upper_quantile(self, bernoulli):
        functional = RiskFunctional.quantile(0.5, "right")
        value, _ = exhaustive_extreme([bernoulli] * 3, functional, "sup", 2)
        assert value == 3.0


class TestRearrangement:
    def test_config_validation(self):
        with pytest.raises(InvalidParams):
            RAConfig(m=1)
        with pytest.raises(InvalidParams):
            RAConfig(restarts=0)
        assert RAConfig.from_defaults(m=50).m == 50

    def test_es_is_comonotone(self, exp1):
        value, coupling = ra_sup_rvar([exp1, exp1], 0.5, 0.5, RAConfig(m=1000, restarts=1))
        assert value == pytest.approx(2.0 * (1.0 + math.log(2.0)), abs=5e-3)
        assert coupling.m == 1000
        assert coupling.n == 2

    def test_marginals_preserved(self, exp1):
        _, coupling = ra_sup_rvar([exp1, UniformDistribution()], 0.2, 0.3, RAConfig(m=100, restarts=3))
        np.testing.assert_allclose(np.sort(coupling.atoms[:, 0]), discretize(exp1, 100))
        np.testing.assert_allclose(np.sort(coupling.atoms[:, 1]), discretize(UniformDistribution(), 100))

    def test_below_exhaustive_optimum(self):
        marginals = [UniformDistribution(), UniformDistribution(0.0, 2.0)]
        functional = RiskFunctional.rvar(0.2, 0.5)
        exact, _ = exhaustive_extreme(marginals, functional, "sup", 6)
        estimate, _ = ra_sup_rvar(marginals, 0.2, 0.5, RAConfig(m=6, restarts=4))
        assert estimate <= exact + 1e-12
        exact_inf, _ = exhaustive_extreme(marginals, functional, "inf", 6)
        estimate_inf, _ = ra_inf_rvar(marginals, 0.2, 0.5, RAConfig(m=6, restarts=4))
        assert estimate_inf >= exact_inf - 1e-12

    def test_deterministic_for_seed(self, exp1):
        cfg = RAConfig(m=60, restarts=3, seed=11)
        first = ra_sup_rvar([exp1, exp1, exp1], 0.1, 0.6, cfg)
        second = ra_sup_rvar([exp1, exp1, exp1], 0.1, 0.6, cfg)
        assert first[0] == second[0]
        np.testing.assert_array_equal(first[1].atoms, second[1].atoms)

    def test_parallel_restarts_match_serial(self, exp1):
        serial = ra_sup_rvar([exp1, exp1], 0.1, 0.6, RAConfig(m=60, restarts=3, jobs=1))
        parallel = ra_sup_rvar([exp1, exp1], 0.1, 0.6, RAConfig(m=60, restarts=3, jobs=3))
        assert serial[0] == parallel[0]

    @pytest.mark.slow
    def test_rearrangement_within_bound(self, exp1, fast_search):
        problem = BoundProblem.rvar([exp1, exp1, exp1], 0.3, 0.4)
        bound = upper_bound_rvar(problem, fast_search).value
        value, _ = ra_sup_rvar([exp1] * 3, 0.3, 0.4, RAConfig(m=2000, restarts=3))
        assert value <= bound + 5e-3


@pytest.mark.slow
class TestSharpInstances:
    """Bounds under their sharpness conditions are reached by 2000-atom couplings."""

    def test_upper_bound_for_increasing_density(self, power2, fast_search):
        bound = upper_bound_rvar(BoundProblem.rvar([power2, power2], 0.5, 0.25), fast_search)
        assert bound.sharp == CERTIFIED_BY_CONDITION
        value, _ = ra_sup_rvar([power2, power2], 0.5, 0.25, RAConfig(m=2000, restarts=3))
        assert abs(bound.value - value) <= 1e-2

    def test_lower_bound_for_decreasing_density(self, exp1, fast_search):
        bound = lower_bound_rvar(BoundProblem.rvar([exp1, exp1], 0.0, 0.5, "inf"), fast_search)
        value, _ = ra_inf_rvar([exp1, exp1], 0.0, 0.5, RAConfig(m=2000, restarts=3))
        assert abs(bound.value - value) <= 1e-2

    def test_corner_coupling_reaches_ird_bound(self, fast_search):
        marginals = [UniformDistribution(), UniformDistribution()]
        functional = RiskFunctional.ird(0.0, 0.5, 0.5, 1.0)
        bound = ird_sup(BoundProblem(marginals, 0.0, 1.0, "sup", functional), fast_search)
        coupling = corner_coupling(marginals, 0.5, 0.5, "comonotone", m=2000)
        assert coupling.evaluate(functional) <= bound.value + 1e-9
        assert bound.value - coupling.evaluate(functional) <= 2e-2


class TestExhaustive:
    def test_too_large(self, bernoulli):
        with pytest.raises(InstanceTooLarge):
            exhaustive_extreme([bernoulli, bernoulli], RiskFunctional.rvar(0.0, 0.5), "sup", 9)
        with pytest.raises(InstanceTooLarge):
            exhaustive_extreme([bernoulli] * 4, RiskFunctional.rvar(0.0, 0.5), "sup", 2)

    def test_single_marginal(self):
        value, _ = exhaustive_extreme([UniformDistribution()], RiskFunctional.rvar(0.25, 0.5), "sup", 4)
        assert value == pytest.approx(0.5)


class TestCornerCoupling:
    def test_comonotone_single_marginal(self):
        d = UniformDistribution()
        functional = RiskFunctional.ird(0.0, 0.25, 0.75, 1.0)
        coupling = corner_coupling([d], 0.25, 0.75, "comonotone", m=400)
        np.testing.assert_allclose(coupling.evaluate(functional), rvar(d, 0.75, 0.25) - rvar(d, 0.0, 0.25), atol=1e-12)
        assert coupling.blocks == {"lower": (0, 100), "body": (100, 300), "upper": (300, 400)}
        assert blocks_disjoint(coupling)

    def test_antithetic_tails_shrink_the_difference(self, exp1):
        functional = RiskFunctional.ird(0.0, 0.2, 0.8, 1.0)
        comonotone = corner_coupling([exp1, exp1], 0.2, 0.8, "comonotone", m=500)
        antithetic = corner_coupling([exp1, exp1], 0.2, 0.8, "antithetic", m=500)
        assert antithetic.evaluate(functional) <= comonotone.evaluate(functional) + 1e-12

    def test_rearranged_tails(self, exp1):
        functional = RiskFunctional.ird(0.0, 0.2, 0.8, 1.0)
        comonotone = corner_coupling([exp1, exp1], 0.2, 0.8, "comonotone", m=200)
        rearranged = corner_coupling(
            [exp1, exp1], 0.2, 0.8, ("comonotone", "ra"), m=200, cfg=RAConfig(m=200), functional=functional
        )
        assert rearranged.evaluate(functional) >= comonotone.evaluate(functional) - 1e-12

    def test_invalid_arguments(self, exp1):
        with pytest.raises(ConstraintViolation):
            corner_coupling([exp1], 0.8, 0.2)
        with pytest.raises(ConstraintViolation):
            corner_coupling([exp1], 0.2, 0.8, "random")


class TestCouplingExport:
    def test_to_csv(self, tmp_path):
        coupling = DiscreteCoupling(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
        path = tmp_path / "coupling.csv"
        coupling.to_csv(str(path))
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["X1", "X2"]
        assert frame.shape == (3, 2)

    def test_canonical_order(self):
        a = DiscreteCoupling(np.array([[2.0, 0.0], [1.0, 5.0]]))
        b = DiscreteCoupling(np.array([[1.0, 5.0], [2.0, 0.0]]))
        np.testing.assert_array_equal(a.canonical(), b.canonical())

    def test_shape(self):
        with pytest.raises(InvalidParams):
            DiscreteCoupling(np.arange(3.0))


class TestCertification:
    def test_point_masses_certified_by_exhaustive_oracle(self, fast_search):
        problem = BoundProblem.rvar([PointMass(1.0), PointMass(2.0)], 0.2, 0.5)
        result = certify_bound(problem, upper_bound_rvar(problem, fast_search), RAConfig(m=2))
        assert result.sharp == CERTIFIED_BY_ORACLE
        assert result.oracle_gap == pytest.approx(0.0, abs=1e-12)
        assert result.value == pytest.approx(3.0)

    def test_bernoulli_sharpness(self, bernoulli, fast_search):
        problem = BoundProblem.rvar([bernoulli, bernoulli], 0.5, 0.5)
        result = certify_bound(problem, upper_bound_rvar(problem, fast_search), RAConfig(m=2))
        assert result.oracle_value == 2.0
        assert result.sharp == CERTIFIED_BY_ORACLE

    def test_large_gap_is_not_certified(self):
        problem = BoundProblem.rvar([UniformDistribution()] * 2, 0.0, 0.5)
        loose = BoundResult(value=5.0, method="extended_upper")
        result = certify_bound(problem, loose, RAConfig(m=4), tau_sharp=1e-3)
        assert result.sharp == UNKNOWN
        assert result.oracle_gap > 1.0

    def test_discretization_slack_shrinks(self, exp1):
        coarse = discretization_slack([exp1, exp1], 0.2, 0.5, 50)
        fine = discretization_slack([exp1, exp1], 0.2, 0.5, 400)
        assert fine <= coarse
        assert fine < 1e-3

    def test_empirical_marginal(self):
        d = EmpiricalDistribution([0.0, 1.0, 2.0, 3.0])
        value, _ = exhaustive_extreme([d, d], RiskFunctional.rvar(0.5, 0.5), "sup", 4)
        assert value == pytest.approx(5.0)
