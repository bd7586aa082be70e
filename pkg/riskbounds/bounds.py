import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .defaults import load_defaults
from .dist_core import (
    EmpiricalDistribution,
    IntervalSet,
    ParametricDistribution,
    PointMass,
    RiskFunctional,
    avg_quantile,
    negate,
    tail_lower,
)
from .errors import ConditionNotMet, ConstraintViolation, InvalidParams, InvalidProbability
from .simplex_opt import SearchConfig, SimplexConstraint, SimplexPoint, batch_evaluate, optimize

logger = logging.getLogger(__name__)

CERTIFIED_BY_CONDITION = "certified_by_condition"
CERTIFIED_BY_ORACLE = "certified_by_oracle"
UNKNOWN = "unknown"

_EPS = 1e-12
_SHORT_WINDOW = 1e-6


@dataclass(frozen=True)
class BoundProblem:
    """
    Marginals plus a window and a direction.

    For an rvar functional the window is [r, r+s]. If the window touches 0 (lower tail) or 1 (upper
    tail) every marginal must have a finite mean.
    """
    marginals: tuple
    r: float
    s: float
    direction: str = "sup"
    functional: RiskFunctional = None

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        if not self.marginals:
            raise ConstraintViolation("at least one marginal is required")
        if self.direction not in ("sup", "inf"):
            raise InvalidParams("direction must be 'sup' or 'inf'", direction=self.direction)
        if self.functional is None:
            object.__setattr__(self, "functional", RiskFunctional.rvar(self.r, self.s))
        if self.functional.kind == "rvar":
            if not (0.0 <= self.r and self.s > 0.0 and self.r + self.s <= 1.0 + _EPS):
                raise ConstraintViolation("need 0 <= r < r+s <= 1", r=self.r, s=self.s)
            touches = self.r <= 0.0 or self.r + self.s >= 1.0 - _EPS
            if touches and not all(d.mean_finite for d in self.marginals):
                raise ConstraintViolation(
                    "window touches 0 or 1: every marginal must have a finite mean", r=self.r, s=self.s
                )

    @classmethod
    def rvar(cls, marginals, r, s, direction="sup"):
        return cls(tuple(marginals), float(r), float(s), direction)

    @property
    def n(self):
        return len(self.marginals)

    def reflected(self):
        """The mirrored problem for the negated marginals and window [1-r-s, 1-r]."""
        flipped = "inf" if self.direction == "sup" else "sup"
        return BoundProblem(
            tuple(negate(d) for d in self.marginals), max(0.0, 1.0 - self.r - self.s), self.s, flipped
        )


@dataclass(frozen=True)
class BoundResult:
    """
    A bound value with its optimizing simplex point and sharpness status.

    If sharp is certified_by_oracle, oracle_gap is present and within tau_sharp.
    """
    value: float
    argpoint: SimplexPoint = None
    sharp: str = UNKNOWN
    condition_note: str = ""
    oracle_gap: float = None
    method: str = ""
    components: tuple = field(default_factory=tuple)
    oracle_value: float = None
    tau_sharp: float = None

    def __post_init__(self):
        if self.sharp not in (CERTIFIED_BY_CONDITION, CERTIFIED_BY_ORACLE, UNKNOWN):
            raise InvalidParams("unknown sharpness status", sharp=self.sharp)
        if self.sharp == CERTIFIED_BY_ORACLE:
            tau = self.tau_sharp if self.tau_sharp is not None else load_defaults()["tau_sharp"]
            if self.oracle_gap is None or abs(self.oracle_gap) > tau:
                raise InvalidParams("oracle certification needs |oracle_gap| <= tau_sharp", gap=self.oracle_gap)

    def to_dict(self):
        out = {
            "value": self.value,
            "method": self.method,
            "argpoint": self.argpoint.to_dict() if self.argpoint is not None else None,
            "sharp": self.sharp,
            "condition_note": self.condition_note,
            "oracle_value": self.oracle_value,
            "oracle_gap": self.oracle_gap,
        }
        if self.components:
            out["components"] = [c.to_dict() for c in self.components]
        return out


def _scaled_r(d, pairs, coefficient):
    """
    coefficient * R over the union of pairs, with a zero-length union contributing 0.

    Unions shorter than _SHORT_WINDOW use the midpoint quantile of each piece.
    """
    pieces = [(max(0.0, a), min(1.0, b)) for a, b in pairs]
    pieces = [(a, b) for a, b in pieces if b > a]
    length = sum(b - a for a, b in pieces)
    if length <= _EPS or coefficient == 0.0:
        return 0.0
    if length < _SHORT_WINDOW:
        total = sum((b - a) * d.quantile_left(0.5 * (a + b)) for a, b in pieces)
    else:
        total = sum(d.quantile_integral(a, b) for a, b in pieces)
    return coefficient * total / length


def _top_window_sum(marginals, point):
    """Sum of R over [1-beta_i-beta_0, 1-beta_i]."""
    b0 = point.beta0
    return sum(_scaled_r(d, [(1.0 - bi - b0, 1.0 - bi)], 1.0) for d, bi in zip(marginals, point.betas))


def _bottom_window_sum(marginals, point):
    """Sum of R over [beta_i, beta_i+beta_0]."""
    b0 = point.beta0
    return sum(_scaled_r(d, [(bi, bi + b0)], 1.0) for d, bi in zip(marginals, point.betas))


class ConvolutionBound():
    """
    ConvolutionBound is the foundational class for the simplex-optimized aggregation bounds.

    This class provides basic functionalities to:
    - Define the feasible simplex of a bound
    - Evaluate the bound objective at a SimplexPoint, singly or in batches
    - Optimize the objective and certify sharpness from declared tail metadata

    Attributes
    -------
    problem:
        The BoundProblem (marginals and window [r, r+s]).
    search_config:
        SearchConfig forwarded to the optimizer.
    defaults:
        Numerical defaults loaded from data/defaults.json.

    Main Functionality Methods
    -------
    compute_bound(self):
        Optimizes the objective and returns a BoundResult with the sharpness status.

    objective(self, point):
        Bound objective at a feasible SimplexPoint.

    constraint(self):
        The SimplexConstraint of the bound.

    certify_condition(self):
        Sharpness status and note from the declared tail metadata.

    Notes
    -------
    This class serves as the base for more specialized classes:

        ExtendedUpperBound: infimum of the two-interval objective, sharp for increasing upper-tail densities
        ExtendedLowerBound: supremum of the mirrored objective, sharp for decreasing lower-tail densities
        ConvolutionUpperBound: comparison upper bound, sharp for decreasing upper-tail densities
        ConvolutionLowerBound: comparison lower bound, sharp for increasing lower-tail densities
    """
    name = None
    direction = None
    mirror_class = None

    # Initialization Methods
    def __init__(self, problem, search_config=None, route="reflection"):
        self.problem = problem
        self.search_config = search_config or SearchConfig.from_defaults()
        self.route = route
        self.set_defaults()

    def set_defaults(self):
        """
        Set defaults attribute by loading the shipped json file
        """
        self.defaults = load_defaults()

    # Main Functionality Methods
    def compute_bound(self):
        """
        Optimize the objective and attach the sharpness status.

        Lower bounds run through their mirrored upper bound on the negated marginals unless
        route="direct"; the reported value is this class's own objective at the returned point.

        Returns
        -------
        BoundResult
        """
        if self.mirror_class is not None and self.route == "reflection":
            mirror = self.mirror_class(self.problem.reflected(), self.search_config)
            mirrored_point, mirrored_value = mirror.optimize()
            point = SimplexPoint.from_vector(mirrored_point.as_vector(), self.constraint().scale)
            value = self.objective(point)
            if abs(value + mirrored_value) > 1e-9 * max(1.0, abs(value)):
                logger.warning("%s: direct objective %.12g disagrees with mirror %.12g", self.name, value, -mirrored_value)
        else:
            point, value = self.optimize()
        sharp, note = self.certify_condition()
        logger.info("%s(r=%g, s=%g) = %.10g [%s]", self.name, self.problem.r, self.problem.s, value, sharp)
        return BoundResult(value=float(value), argpoint=point, sharp=sharp, condition_note=note, method=self.name)

    def optimize(self):
        return optimize(self.objective, self.constraint(), self.direction, self.search_config)

    def evaluate_batch(self, points, jobs=1):
        """Objective values at a list of SimplexPoints."""
        return batch_evaluate(self.objective, points, jobs)

    def objective(self, point):
        """
        This method is a placeholder for the bound objective.

        Raises
        ------
        NotImplementedError
            This method is not implemented in the base class and must be implemented by subclasses.
        """
        raise NotImplementedError("Subclasses must implement objective")

    def constraint(self):
        raise NotImplementedError("Subclasses must implement constraint")

    def certify_condition(self):
        raise NotImplementedError("Subclasses must implement certify_condition")

    # Helper Methods
    def _all_directions(self, level, side, direction):
        meta = [d.tail_monotonicity for d in self.problem.marginals]
        if side == "beyond":
            return all(m.direction_beyond(level) == direction for m in meta)
        return all(m.direction_below(level) == direction for m in meta)


class ExtendedUpperBound(ConvolutionBound):
    """
    Upper bound on sup R over [r, r+s] of the sum.

    Infimum over beta in (1-r) times the simplex with beta0 >= 1-r-s of
    (1-(1-r-beta0)/s) sum R[r+beta_i, r+beta_i+beta0] + ((1-r-beta0)/s) sum R[r, r+beta_i] u [r+beta_i+beta0, 1].
    """
    name = "extended_upper"
    direction = "min"

    def constraint(self):
        r, s = self.problem.r, self.problem.s
        return SimplexConstraint(self.problem.n, 1.0 - r, max(0.0, 1.0 - r - s))

    def objective(self, point):
        r, s = self.problem.r, self.problem.s
        b0 = point.beta0
        outer = (1.0 - r - b0) / s
        value = 0.0
        for d, bi in zip(self.problem.marginals, point.betas):
            value += _scaled_r(d, [(r + bi, r + bi + b0)], 1.0 - outer)
            value += _scaled_r(d, [(r, r + bi), (r + bi + b0, 1.0)], outer)
        return value

    def certify_condition(self):
        r = self.problem.r
        if self._all_directions(r, "beyond", "increasing"):
            return CERTIFIED_BY_CONDITION, f"increasing density beyond the {r:g}-quantile for every marginal"
        masses = [_top_mass(d, r) for d in self.problem.marginals]
        if all(m is not None for m in masses):
            total = sum(masses)
            if total <= 1.0 - r + _EPS:
                return CERTIFIED_BY_CONDITION, f"tail mass condition holds: {total:g} <= {1.0 - r:g}"
            return UNKNOWN, f"tail mass condition fails: {total:g} > {1.0 - r:g}"
        return UNKNOWN, "no sufficient condition declared; tail mass condition not checkable"


class ConvolutionUpperBound(ConvolutionBound):
    """
    Comparison upper bound: infimum over beta in (1-r) times the simplex, beta0 >= s, of
    sum R[1-beta_i-beta0, 1-beta_i].
    """
    name = "convolution_upper"
    direction = "min"

    def constraint(self):
        return SimplexConstraint(self.problem.n, 1.0 - self.problem.r, self.problem.s)

    def objective(self, point):
        return _top_window_sum(self.problem.marginals, point)

    def certify_condition(self):
        r = self.problem.r
        if self._all_directions(r, "beyond", "decreasing"):
            return CERTIFIED_BY_CONDITION, f"decreasing density beyond the {r:g}-quantile for every marginal"
        return UNKNOWN, "decreasing upper-tail density not declared"


class ExtendedLowerBound(ConvolutionBound):
    """
    Lower bound on inf R over [r, r+s] of the sum.

    Supremum over beta in (r+s) times the simplex with beta0 >= r of
    (1-(r+s-beta0)/s) sum R[r+s-beta_i-beta0, r+s-beta_i] + ((r+s-beta0)/s) sum R[0, r+s-beta_i-beta0] u [r+s-beta_i, r+s].
    """
    name = "extended_lower"
    direction = "max"
    mirror_class = ExtendedUpperBound

    def constraint(self):
        r, s = self.problem.r, self.problem.s
        return SimplexConstraint(self.problem.n, r + s, r)

    def objective(self, point):
        r, s = self.problem.r, self.problem.s
        top = r + s
        b0 = point.beta0
        outer = (top - b0) / s
        value = 0.0
        for d, bi in zip(self.problem.marginals, point.betas):
            value += _scaled_r(d, [(top - bi - b0, top - bi)], 1.0 - outer)
            value += _scaled_r(d, [(0.0, top - bi - b0), (top - bi, top)], outer)
        return value

    def certify_condition(self):
        top = self.problem.r + self.problem.s
        if self._all_directions(top, "below", "decreasing"):
            return CERTIFIED_BY_CONDITION, f"decreasing density below the {top:g}-quantile for every marginal"
        masses = [_bottom_mass(d, top) for d in self.problem.marginals]
        if all(m is not None for m in masses):
            total = sum(masses)
            if total <= top + _EPS:
                return CERTIFIED_BY_CONDITION, f"lower tail mass condition holds: {total:g} <= {top:g}"
            return UNKNOWN, f"lower tail mass condition fails: {total:g} > {top:g}"
        return UNKNOWN, "no sufficient condition declared; lower tail mass condition not checkable"


class ConvolutionLowerBound(ConvolutionBound):
    """
    Comparison lower bound: supremum over beta in (r+s) times the simplex, beta0 >= s, of
    sum R[beta_i, beta_i+beta0].
    """
    name = "convolution_lower"
    direction = "max"
    mirror_class = ConvolutionUpperBound

    def constraint(self):
        return SimplexConstraint(self.problem.n, self.problem.r + self.problem.s, self.problem.s)

    def objective(self, point):
        return _bottom_window_sum(self.problem.marginals, point)

    def certify_condition(self):
        top = self.problem.r + self.problem.s
        if self._all_directions(top, "below", "increasing"):
            return CERTIFIED_BY_CONDITION, f"increasing density below the {top:g}-quantile for every marginal"
        return UNKNOWN, "increasing lower-tail density not declared"


def _top_mass(d, r):
    """
    Mass of [q^+_r, ess sup) for bounded-above laws, None when not checkable.
    """
    lo, hi = d.support()
    if not math.isfinite(hi):
        return None
    if isinstance(d, EmpiricalDistribution):
        start = d.quantile_right(r) if r < 1.0 else hi
        return float(np.count_nonzero((d.values >= start) & (d.values < hi))) / d.m
    if isinstance(d, PointMass):
        return 0.0
    if isinstance(d, ParametricDistribution):
        return 1.0 - r
    return None


def _bottom_mass(d, level):
    """
    Mass of (ess inf, q^-_level] for bounded-below laws, None when not checkable.
    """
    lo, hi = d.support()
    if not math.isfinite(lo):
        return None
    if isinstance(d, EmpiricalDistribution):
        stop = d.quantile_left(level) if level > 0.0 else lo
        return float(np.count_nonzero((d.values > lo) & (d.values <= stop))) / d.m
    if isinstance(d, PointMass):
        return 0.0
    if isinstance(d, ParametricDistribution):
        return level
    return None


# Operations
def upper_bound_rvar(problem, search_config=None):
    """Extended upper bound, optimized; see ExtendedUpperBound."""
    return ExtendedUpperBound(problem, search_config).compute_bound()


def lower_bound_rvar(problem, search_config=None, route="reflection"):
    """Extended lower bound, optimized; see ExtendedLowerBound."""
    return ExtendedLowerBound(problem, search_config, route).compute_bound()


def bllw_upper(problem, search_config=None):
    return ConvolutionUpperBound(problem, search_config).compute_bound()


def bllw_lower(problem, search_config=None, route="reflection"):
    return ConvolutionLowerBound(problem, search_config, route).compute_bound()


def new_rvar_rhs(marginals, r, s, alphas, betas):
    """
    Right-hand side of the generalized RVaR inequality for given splits.

    Parameters
    ----------
    marginals : sequence of Distribution
    r, s : float
        Window [r, r+s].
    alphas : sequence of float
        alpha_i >= 0 with sum(alpha) <= s.
    betas : sequence of float
        beta_i > 0 with sum(alpha) + max(beta) <= 1-r.

    Returns
    -------
    float
        sum over i of ((1-r-beta_i)/s) R[r, r+alpha_i] u [r+alpha_i+beta_i, 1]
        + (1-(1-r-beta_i)/s) R[r+alpha_i, r+alpha_i+beta_i]. A zero-length union contributes 0.

    Raises
    ------
    ConstraintViolation
        Naming the failed precondition.
    """
    alphas = np.asarray(alphas, dtype=float)
    betas = np.asarray(betas, dtype=float)
    _check_marginal_vector(marginals, alphas, betas)
    if np.any(alphas < 0):
        raise ConstraintViolation("alpha_i >= 0 violated", alphas=alphas.tolist())
    if np.any(betas <= 0):
        raise ConstraintViolation("beta_i > 0 violated", betas=betas.tolist())
    if alphas.sum() + betas.max() > 1.0 - r + _EPS:
        raise ConstraintViolation("sum(alpha) + max(beta) <= 1-r violated", r=r)
    if alphas.sum() > s + _EPS:
        raise ConstraintViolation("sum(alpha) <= s violated", s=s)
    _check_window_integrable(marginals, r)
    value = 0.0
    for d, a, b in zip(marginals, alphas, betas):
        outer = (1.0 - r - b) / s
        value += _scaled_r(d, [(r, r + a), (r + a + b, 1.0)], outer)
        value += _scaled_r(d, [(r + a, r + a + b)], 1.0 - outer)
    return float(value)


def simplified_rhs(marginals, r, s, alphas):
    """
    sum over i of R[r, r+alpha_i] u [1-s+alpha_i, 1] with sum(alpha) = s.

    Raises
    ------
    ConstraintViolation
        If some alpha_i is outside (0, 1-r) or the alphas do not sum to s.
    """
    alphas = np.asarray(alphas, dtype=float)
    _check_marginal_vector(marginals, alphas)
    if np.any(alphas <= 0) or np.any(alphas >= 1.0 - r):
        raise ConstraintViolation("alpha_i in (0, 1-r) violated", alphas=alphas.tolist(), r=r)
    if abs(alphas.sum() - s) > 1e-12:
        raise ConstraintViolation("sum(alpha) = s violated", total=float(alphas.sum()), s=s)
    _check_window_integrable(marginals, r)
    return float(
        sum(
            avg_quantile(d, IntervalSet.of((r, r + a), (min(1.0, 1.0 - s + a), 1.0)))
            for d, a in zip(marginals, alphas)
        )
    )


@dataclass(frozen=True)
class CnScan:
    """Outcome of the c_n grid scan."""
    value: float
    equality_everywhere: bool
    satisfied_fraction: float
    grid_points: int


def cn_scan(d, n, grid=None):
    """
    Scan the defining inequality of c_n on a grid of x in (0, 1/n) and refine.

    The condition ((n-1) q_{(n-1)x} + q_{1-x})/n <= R[(n-1)x, 1-x] is tested on x_j = j/(nG); the
    smallest satisfying grid point is refined by bisection against its left neighbour. If the first
    grid point already satisfies the condition the value is reported as 0; if none does, 1/n.

    Returns
    -------
    CnScan
    """
    if int(n) < 2:
        raise InvalidParams("c_n needs n >= 2", n=n)
    n = int(n)
    grid = int(grid or load_defaults()["cn_grid"])
    x = np.arange(1, grid) / (n * grid)
    gaps = np.array([_cn_gap(d, n, xi) for xi in x])
    tol = 1e-12 * np.maximum(1.0, np.abs(gaps))
    satisfied = gaps <= tol
    equality = bool(np.all(np.abs(gaps) <= tol))
    fraction = float(np.mean(satisfied))
    if not satisfied.any():
        value = 1.0 / n
    elif satisfied[0]:
        value = 0.0
    else:
        j = int(np.argmax(satisfied))
        lo, hi = x[j - 1], x[j]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _cn_gap(d, n, mid) <= 1e-12:
                hi = mid
            else:
                lo = mid
        value = float(hi)
    if equality:
        logger.info("c_%d: condition holds with equality on the whole grid", n)
    return CnScan(value, equality, fraction, grid)


def c_n(d, n, grid=None):
    """Threshold probability c_n(d); see cn_scan."""
    return cn_scan(d, n, grid).value


def _cn_gap(d, n, x):
    lhs = ((n - 1) * d.quantile_left((n - 1) * x) + d.quantile_left(1.0 - x)) / n
    rhs = avg_quantile(d, IntervalSet.of(((n - 1) * x, 1.0 - x)))
    return float(lhs - rhs)


def homo_upper(d, n, r, s, threshold="literal", cross_check=False, search_config=None):
    """
    Closed-form sup of R over [r, r+s] for n copies of a law with increasing density.

    Value n R[r, r+s/n] u [1-s+s/n, 1], valid when s/(1-r) <= n c_n. threshold="literal" uses
    c_n(d); threshold="transformed" uses c_n of the lower (1-r)-tail of the negated law. Both are
    always computed and logged. Degenerate laws return n times the point.

    Raises
    ------
    ConditionNotMet
        If the density declaration or the threshold condition fails.
    """
    n = int(n)
    if n < 1:
        raise InvalidParams("n must be positive", n=n)
    lo, hi = d.support()
    if lo == hi:
        logger.info("homo_upper: degenerate law, value n*c")
        return float(n * lo)
    if d.tail_monotonicity.on_support() != "increasing":
        raise ConditionNotMet("increasing density on the support is not declared", required="increasing")
    if not (0.0 <= r and s > 0 and r + s <= 1.0 + _EPS):
        raise InvalidProbability("need 0 <= r < r+s <= 1", r=r, s=s)
    value = n * avg_quantile(d, IntervalSet.of((r, r + s / n), (1.0 - s + s / n, 1.0)))
    if n > 1:
        _check_homogeneous_threshold(d, n, r, s, threshold)
    if cross_check:
        general = upper_bound_rvar(BoundProblem.rvar([d] * n, r, s), search_config)
        gap = general.value - value
        if abs(gap) > load_defaults()["tau_sharp"]:
            logger.warning("homo_upper %.10g disagrees with optimized bound %.10g", value, general.value)
    return float(value)


def homo_lower(d, n, r, s, threshold="literal", cross_check=False, search_config=None):
    """
    Closed-form inf of R over [r, r+s] for n copies of a law with decreasing density.

    Value n R[0, (n-1)s/n] u [r+(n-1)s/n, r+s], valid when s/(r+s) <= n c_n(negate(d)); computed
    as minus homo_upper of the negated law on the window [1-r-s, 1-r].

    Raises
    ------
    ConditionNotMet
    """
    lo, hi = d.support()
    if lo != hi and d.tail_monotonicity.on_support() != "decreasing":
        raise ConditionNotMet("decreasing density on the support is not declared", required="decreasing")
    mirrored = homo_upper(negate(d), n, max(0.0, 1.0 - r - s), s, threshold, False, search_config)
    value = -mirrored
    if cross_check:
        general = lower_bound_rvar(BoundProblem.rvar([d] * int(n), r, s), search_config)
        if abs(general.value - value) > load_defaults()["tau_sharp"]:
            logger.warning("homo_lower %.10g disagrees with optimized bound %.10g", value, general.value)
    return float(value)


def _check_homogeneous_threshold(d, n, r, s, threshold):
    if threshold not in ("literal", "transformed"):
        raise InvalidParams("threshold must be 'literal' or 'transformed'", threshold=threshold)
    cn_literal = c_n(d, n)
    cn_transformed = c_n(tail_lower(negate(d), 1.0 - r), n) if r < 1.0 else cn_literal
    logger.info("c_%d literal %.6g, transformed %.6g", n, cn_literal, cn_transformed)
    available = n * (cn_literal if threshold == "literal" else cn_transformed)
    required = s / (1.0 - r)
    if required > available + _EPS:
        raise ConditionNotMet(
            f"s/(1-r) = {required:g} exceeds n*c_n = {available:g} ({threshold} threshold)",
            threshold=available,
            required=required,
            cn_literal=cn_literal,
            cn_transformed=cn_transformed,
        )


def ird_sup(problem, search_config=None):
    """
    Upper bound on sup IRD over windows [r1, s1], [r2, s2].

    The upper component bounds sup R[r2, s2] and the lower component inf R[r1, s1]; each is chosen
    by the declared tail metadata (extended bound for increasing upper / decreasing lower tails,
    convolution bound for decreasing upper / increasing lower tails) and otherwise is the tighter of
    the two valid bounds.

    Returns
    -------
    BoundResult
        value = upper component value minus lower component value, components = (upper, lower).
    """
    if problem.functional.kind != "ird":
        raise InvalidParams("ird_sup needs an ird functional", kind=problem.functional.kind)
    r1, s1, r2, s2 = problem.functional.params
    upper_problem = BoundProblem.rvar(problem.marginals, r2, s2 - r2, "sup")
    lower_problem = BoundProblem.rvar(problem.marginals, r1, s1 - r1, "inf")
    beyond = {d.tail_monotonicity.direction_beyond(r2) for d in problem.marginals}
    below = {d.tail_monotonicity.direction_below(s1) for d in problem.marginals}

    if beyond == {"increasing"}:
        upper = upper_bound_rvar(upper_problem, search_config)
    elif beyond == {"decreasing"}:
        upper = bllw_upper(upper_problem, search_config)
    else:
        candidates = [upper_bound_rvar(upper_problem, search_config), bllw_upper(upper_problem, search_config)]
        upper = replace(min(candidates, key=lambda c: c.value), sharp=UNKNOWN, condition_note="tighter of two upper bounds")

    if below == {"decreasing"}:
        lower = lower_bound_rvar(lower_problem, search_config)
    elif below == {"increasing"}:
        lower = bllw_lower(lower_problem, search_config)
    else:
        candidates = [lower_bound_rvar(lower_problem, search_config), bllw_lower(lower_problem, search_config)]
        lower = replace(max(candidates, key=lambda c: c.value), sharp=UNKNOWN, condition_note="tighter of two lower bounds")

    value = upper.value - lower.value
    both = upper.sharp == CERTIFIED_BY_CONDITION and lower.sharp == CERTIFIED_BY_CONDITION
    note = f"upper: {upper.method} ({upper.condition_note}); lower: {lower.method} ({lower.condition_note})"
    return BoundResult(
        value=value,
        sharp=CERTIFIED_BY_CONDITION if both else UNKNOWN,
        condition_note=note,
        method="ird_sup",
        components=(upper, lower),
    )


def quantile_diff_sup(marginals, r, s, search_config=None):
    """
    Upper bound on sup (q^+_s - q^-_r) of the sum.

    inf over (1-s) times the simplex of sum R[1-beta_i-beta0, 1-beta_i] minus sup over r times the
    simplex of sum R[beta_i, beta_i+beta0], with beta0 kept above a tiny floor for the zero-width
    limit. Sharp when every marginal's density is monotone in one common direction beyond its
    s-quantile and in one common direction below its r-quantile.

    Returns
    -------
    BoundResult
    """
    marginals = tuple(marginals)
    RiskFunctional.quantile_diff(r, s)
    n = len(marginals)
    search_config = search_config or SearchConfig.from_defaults()
    floor = load_defaults()["qdiff_window_floor"]
    upper_point, upper = optimize(
        lambda p: _top_window_sum(marginals, p), SimplexConstraint(n, 1.0 - s, floor), "min", search_config
    )
    lower_point, lower = optimize(
        lambda p: _bottom_window_sum(marginals, p), SimplexConstraint(n, r, min(floor, r)), "max", search_config
    )
    beyond = {d.tail_monotonicity.direction_beyond(s) for d in marginals}
    below = {d.tail_monotonicity.direction_below(r) for d in marginals}
    sharp = len(beyond) == 1 and len(below) == 1 and "none" not in beyond | below
    components = (
        BoundResult(value=upper, argpoint=upper_point, method="quantile_upper"),
        BoundResult(value=lower, argpoint=lower_point, method="quantile_lower"),
    )
    note = "common monotone densities in both tails" if sharp else "monotone tail densities not declared"
    logger.info("quantile_diff_sup(r=%g, s=%g) = %.10g", r, s, upper - lower)
    return BoundResult(
        value=float(upper - lower),
        sharp=CERTIFIED_BY_CONDITION if sharp else UNKNOWN,
        condition_note=note,
        method="quantile_diff_sup",
        components=components,
    )


def iqd_sup(marginals, r, variant="plus", search_config=None):
    """
    Upper bound on sup IQD_r of the sum through quantile_diff_sup(r, 1-r).

    The minus variant is dominated by the plus variant; it is certified only when every marginal
    declares a continuous quantile function.
    """
    if variant not in ("plus", "minus"):
        raise InvalidParams("variant must be 'plus' or 'minus'", variant=variant)
    if not 0.0 < r < 0.5 + _EPS:
        raise InvalidProbability("iqd_sup needs r in (0, 1/2]", r=r)
    result = quantile_diff_sup(marginals, r, 1.0 - r, search_config)
    if variant == "minus" and not all(d.tail_monotonicity.quantile_continuous for d in marginals):
        return replace(result, sharp=UNKNOWN, condition_note="plus-variant value; quantile continuity not declared")
    return replace(result, method=f"iqd_sup_{variant}")


def _check_marginal_vector(marginals, *vectors):
    for v in vectors:
        if len(v) != len(marginals):
            raise ConstraintViolation("one parameter per marginal is required", expected=len(marginals), got=len(v))


def _check_window_integrable(marginals, r):
    if r <= 0.0 and not all(d.mean_finite for d in marginals):
        raise ConstraintViolation("r = 0 requires finite-mean marginals", r=r)
