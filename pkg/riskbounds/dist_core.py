import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import integrate, special, stats

from .defaults import load_defaults
from .errors import (
    EmptyIntervalSet,
    InvalidParams,
    InvalidProbability,
    NonIntegrableTail,
)

logger = logging.getLogger(__name__)

_DEFAULTS = load_defaults()
DIRECTIONS = ("increasing", "decreasing", "none")


def _quad(integrand, lo, hi):
    tol = _DEFAULTS["tau_quad_adaptive"]
    value, _ = integrate.quad(integrand, lo, hi, epsrel=tol, epsabs=1e-14, limit=500)
    return value


def _check_prob(name, value, low=0.0, high=1.0, low_open=False, high_open=False):
    """
    Validate that value lies in the interval [low, high] with optionally open ends.

    Raises
    ------
    InvalidProbability
        If the value is NaN or outside the interval.
    """
    v = float(value)
    bad = (
        math.isnan(v)
        or v < low
        or v > high
        or (low_open and v == low)
        or (high_open and v == high)
    )
    if bad:
        left = "(" if low_open else "["
        right = ")" if high_open else "]"
        raise InvalidProbability(
            f"{name}={value} is not in {left}{low}, {high}{right}", name=name, value=v
        )
    return v


def _level_index(t, m, side):
    """
    Map probability levels to 1-based order-statistic indices of an m-atom equal-weight sample.

    Levels are rounded to 9 decimals of t*m first so that k/m lands exactly on atom k.
    """
    tm = np.round(np.asarray(t, dtype=float) * m, 9)
    if side == "left":
        idx = np.ceil(tm)
    else:
        idx = np.floor(tm) + 1
    return np.clip(idx, 1, m).astype(int)


@dataclass(frozen=True)
class TailMonotonicity:
    """
    Declared direction of the density in the tails of a marginal.

    The declaration is an assertion by the caller and is never inferred. It gates sharpness
    claims only.

    Attributes
    ----------
    upper : str
        Density direction beyond the upper threshold: increasing, decreasing or none.
    upper_threshold : float
        Probability level p such that the density is monotone beyond the p-quantile.
    lower : str
        Density direction below the lower threshold.
    lower_threshold : float
        Probability level p such that the density is monotone below the p-quantile.
    quantile_continuous : bool
        Declared continuity of the quantile function (left and right quantiles agree).
    """
    upper: str = "none"
    upper_threshold: float = 1.0
    lower: str = "none"
    lower_threshold: float = 0.0
    quantile_continuous: bool = False

    def __post_init__(self):
        for name in ("upper", "lower"):
            if getattr(self, name) not in DIRECTIONS:
                raise InvalidParams(f"{name} direction must be one of {DIRECTIONS}", field=name)
        _check_prob("upper_threshold", self.upper_threshold)
        _check_prob("lower_threshold", self.lower_threshold)

    @classmethod
    def everywhere(cls, direction, quantile_continuous=True):
        """Density monotone in the given direction on the whole support."""
        return cls(direction, 0.0, direction, 1.0, quantile_continuous)

    @classmethod
    def from_dict(cls, spec):
        if spec is None:
            return cls()
        if "everywhere" in spec:
            return cls.everywhere(spec["everywhere"], spec.get("quantile_continuous", True))
        return cls(
            upper=spec.get("upper", "none"),
            upper_threshold=spec.get("upper_threshold", 0.0 if spec.get("upper", "none") != "none" else 1.0),
            lower=spec.get("lower", "none"),
            lower_threshold=spec.get("lower_threshold", 1.0 if spec.get("lower", "none") != "none" else 0.0),
            quantile_continuous=spec.get("quantile_continuous", False),
        )

    def to_dict(self):
        return {
            "upper": self.upper,
            "upper_threshold": self.upper_threshold,
            "lower": self.lower,
            "lower_threshold": self.lower_threshold,
            "quantile_continuous": self.quantile_continuous,
        }

    def direction_beyond(self, level):
        """Declared density direction on the region beyond the level-quantile, or 'none'."""
        if self.upper != "none" and self.upper_threshold <= level + 1e-12:
            return self.upper
        if self.lower != "none" and self.lower_threshold >= 1.0 - 1e-12:
            return self.lower
        return "none"

    def direction_below(self, level):
        """Declared density direction on the region below the level-quantile, or 'none'."""
        if self.lower != "none" and self.lower_threshold >= level - 1e-12:
            return self.lower
        if self.upper != "none" and self.upper_threshold <= 1e-12:
            return self.upper
        return "none"

    def on_support(self):
        """Direction declared for the whole support, or 'none'."""
        beyond = self.direction_beyond(0.0)
        return beyond if beyond == self.direction_below(1.0) else "none"

    def restrict_upper(self, r):
        """Metadata of the upper tail law beyond the r-quantile."""
        if r == 0:
            return self
        upper, upper_thr = "none", 1.0
        if self.upper != "none":
            upper, upper_thr = self.upper, max(0.0, (self.upper_threshold - r) / (1 - r))
        lower, lower_thr = "none", 0.0
        if self.lower != "none" and self.lower_threshold > r:
            lower, lower_thr = self.lower, min(1.0, (self.lower_threshold - r) / (1 - r))
        elif self.upper != "none" and self.upper_threshold <= r:
            lower, lower_thr = self.upper, 1.0
        return TailMonotonicity(upper, upper_thr, lower, lower_thr, self.quantile_continuous)

    def restrict_lower(self, r):
        """Metadata of the lower tail law below the r-quantile."""
        if r == 1:
            return self
        lower, lower_thr = "none", 0.0
        if self.lower != "none":
            lower, lower_thr = self.lower, min(1.0, self.lower_threshold / r)
        upper, upper_thr = "none", 1.0
        if self.upper != "none" and self.upper_threshold < r:
            upper, upper_thr = self.upper, self.upper_threshold / r
        elif self.lower != "none" and self.lower_threshold >= r:
            upper, upper_thr = self.lower, 0.0
        return TailMonotonicity(upper, upper_thr, lower, lower_thr, self.quantile_continuous)

    def reflect(self):
        """Metadata of the law of -X: tails swapped, directions flipped."""
        flip = {"increasing": "decreasing", "decreasing": "increasing", "none": "none"}
        return TailMonotonicity(
            upper=flip[self.lower],
            upper_threshold=1.0 - self.lower_threshold,
            lower=flip[self.upper],
            lower_threshold=1.0 - self.upper_threshold,
            quantile_continuous=self.quantile_continuous,
        )


@dataclass(frozen=True)
class IntervalSet:
    """
    A finite union of closed subintervals of [0,1], stored sorted with touching pieces merged.

    Zero-length pieces are dropped on construction; a set with no positive length left raises
    EmptyIntervalSet.
    """
    intervals: tuple = field(default_factory=tuple)

    def __post_init__(self):
        pieces = []
        for a, b in self.intervals:
            a, b = float(a), float(b)
            if not (0.0 <= a <= b <= 1.0):
                raise InvalidProbability(f"interval [{a}, {b}] is not inside [0, 1]", interval=[a, b])
            if b > a:
                pieces.append((a, b))
        pieces.sort()
        merged = []
        for a, b in pieces:
            if merged and a <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], b))
            else:
                merged.append((a, b))
        if not merged:
            raise EmptyIntervalSet("interval set has zero total length", intervals=list(self.intervals))
        object.__setattr__(self, "intervals", tuple(merged))

    @classmethod
    def of(cls, *pairs):
        return cls(tuple(pairs))

    @property
    def total_length(self):
        return float(sum(b - a for a, b in self.intervals))

    def touches_zero(self):
        return self.intervals[0][0] <= 0.0

    def touches_one(self):
        return self.intervals[-1][1] >= 1.0

    def reflect(self):
        """The set 1 - I."""
        return IntervalSet(tuple((1.0 - b, 1.0 - a) for a, b in reversed(self.intervals)))

    def to_list(self):
        return [list(p) for p in self.intervals]


class Distribution():
    """
    Distribution is the foundational class for marginal laws given by their quantile functions.

    This class provides basic functionalities to:
    - Evaluate left and right quantiles (scalars or numpy arrays)
    - Integrate the left quantile over [a,b] exactly where an antiderivative is known, otherwise by
      adaptive quadrature
    - Report tail integrability and the declared tail monotonicity

    Attributes
    -------
    tail_monotonicity:
        Declared TailMonotonicity metadata.

    Main Functionality Methods
    -------
    quantile_left(t):
        q_t^-, nondecreasing and left-continuous.

    quantile_right(t):
        q_t^+, nondecreasing and right-continuous.

    quantile_integral(a, b, method="auto"):
        The integral of q^- over [a, b].

    Notes
    -------
    This class serves as the base for more specialized classes:

        ParametricDistribution: closed-form families (uniform, exponential, Pareto, normal, lognormal,
            triangular, power law, point mass)
        EmpiricalDistribution: equal-weight sample
        TransformedDistribution: tail restrictions, negation, shift and scale of another distribution
        QuantileFunctionDistribution: arbitrary user quantile function, integrated by quadrature
    """
    kind = None

    # Initialization Methods
    def __init__(self, tail_monotonicity=None):
        self.tail_monotonicity = tail_monotonicity or TailMonotonicity()

    # Main Functionality Methods
    def quantile_left(self, t):
        t = self._levels(t)
        return self._scalar_or_array(self._quantile_left(t))

    def quantile_right(self, t):
        t = self._levels(t)
        return self._scalar_or_array(self._quantile_right(t))

    def quantile_integral(self, a, b, method="auto"):
        """
        Integrate the left quantile function over [a, b].

        Parameters
        ----------
        a, b : float
            Integration limits with 0 <= a <= b <= 1.
        method : str
            "auto" uses the closed form when the class has one, "quad" forces adaptive quadrature.

        Returns
        -------
        float

        Raises
        ------
        NonIntegrableTail
            If [a, b] reaches an unbounded tail whose integral diverges.
        """
        a = _check_prob("a", a)
        b = _check_prob("b", b)
        if b <= a:
            return 0.0
        self._check_integrable(a, b)
        if method == "auto" and self.has_closed_form:
            return float(self._closed_integral(a, b))
        return self._quad_integral(a, b)

    @property
    def mean_finite(self):
        return self.lower_tail_integrable and self.upper_tail_integrable

    @property
    def lower_tail_integrable(self):
        return True

    @property
    def upper_tail_integrable(self):
        return True

    @property
    def has_closed_form(self):
        return False

    def support(self):
        """(essential infimum, essential supremum), possibly infinite."""
        return float(self._quantile_right(np.asarray(0.0))), float(self._quantile_left(np.asarray(1.0)))

    def mean(self):
        return self.quantile_integral(0.0, 1.0)

    def describe(self):
        return {"kind": self.kind}

    # Helper Methods
    def _quantile_left(self, t):
        raise NotImplementedError("Subclasses must implement _quantile_left")

    def _quantile_right(self, t):
        return self._quantile_left(t)

    def _closed_integral(self, a, b):
        raise NotImplementedError("Subclasses must implement _closed_integral")

    def _check_integrable(self, a, b):
        lo, hi = self.support()
        if a <= 0.0 and np.isinf(lo) and not self.lower_tail_integrable:
            raise NonIntegrableTail("lower tail integral diverges", a=a, b=b)
        if b >= 1.0 and np.isinf(hi) and not self.upper_tail_integrable:
            raise NonIntegrableTail("upper tail integral diverges", a=a, b=b)

    def _quad_integral(self, a, b):
        """
        Adaptive quadrature on [a, b] with end buffers of width eps_end split off near 0 and 1.

        The lower half is integrated in w = -log(u) and the upper half in v = -log(1-u). End buffers
        use the closed form when the class has one and a midpoint rectangle otherwise.
        """
        eps = _DEFAULTS["eps_end"]
        lo, hi = max(a, eps), min(b, 1.0 - eps)
        total = 0.0
        if lo < min(hi, 0.5):
            total += self._quad_lower(lo, min(hi, 0.5))
        if max(lo, 0.5) < hi:
            total += self._quad_upper(max(lo, 0.5), hi)
        for end_a, end_b in ((a, min(b, lo)), (max(a, hi), b)):
            if end_b <= end_a:
                continue
            if self.has_closed_form:
                total += float(self._closed_integral(end_a, end_b))
            else:
                mid = 0.5 * (end_a + end_b)
                logger.debug("rectangle rule on end buffer [%g, %g]", end_a, end_b)
                total += (end_b - end_a) * float(self._quantile_left(np.asarray(mid)))
        return float(total)

    def _quad_lower(self, a, b):
        def integrand(w):
            u = math.exp(-w)
            return float(self._quantile_left(np.asarray(u))) * u

        return _quad(integrand, -math.log(b), -math.log(a))

    def _quad_upper(self, a, b):
        def integrand(v):
            tail = math.exp(-v)
            return float(self._quantile_left(np.asarray(-math.expm1(-v)))) * tail

        return _quad(integrand, -math.log1p(-a), -math.log1p(-b))

    @staticmethod
    def _levels(t):
        arr = np.asarray(t, dtype=float)
        if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
            raise InvalidProbability("quantile levels must lie in [0, 1]", levels=np.atleast_1d(arr).tolist()[:8])
        return arr

    @staticmethod
    def _scalar_or_array(values):
        values = np.asarray(values, dtype=float)
        return float(values) if values.ndim == 0 else values


class ParametricDistribution(Distribution):
    """
    Base class for closed-form families with an analytic quantile antiderivative.

    Subclasses implement ``_quantile_left`` and the antiderivative ``_antiderivative`` on [0,1].
    """
    kind = "parametric"
    family = None

    def __init__(self, tail_monotonicity=None, **params):
        super().__init__(tail_monotonicity)
        self.params = params

    @property
    def has_closed_form(self):
        return True

    def describe(self):
        return {"kind": self.kind, "family": self.family, "params": dict(self.params)}

    def _closed_integral(self, a, b):
        return self._antiderivative(b) - self._antiderivative(a)

    def _antiderivative(self, u):
        raise NotImplementedError("Subclasses must implement _antiderivative")

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"


class UniformDistribution(ParametricDistribution):
    family = "uniform"

    def __init__(self, low=0.0, high=1.0, tail_monotonicity=None):
        if not high > low:
            raise InvalidParams("uniform requires high > low", low=low, high=high)
        super().__init__(tail_monotonicity, low=float(low), high=float(high))

    def _quantile_left(self, t):
        return self.params["low"] + (self.params["high"] - self.params["low"]) * t

    def _antiderivative(self, u):
        low, high = self.params["low"], self.params["high"]
        return low * u + 0.5 * (high - low) * u * u


class ExponentialDistribution(ParametricDistribution):
    family = "exponential"

    def __init__(self, scale=1.0, loc=0.0, tail_monotonicity=None):
        if not scale > 0:
            raise InvalidParams("exponential requires scale > 0", scale=scale)
        super().__init__(tail_monotonicity, scale=float(scale), loc=float(loc))

    def _quantile_left(self, t):
        with np.errstate(divide="ignore"):
            return self.params["loc"] - self.params["scale"] * np.log1p(-t)

    def _antiderivative(self, u):
        # (1-u)log(1-u) + u has derivative -log(1-u)
        return self.params["loc"] * u + self.params["scale"] * (special.xlogy(1.0 - u, 1.0 - u) + u)


class ParetoDistribution(ParametricDistribution):
    """Pareto law with survival (scale/x)^alpha for x >= scale; finite mean iff alpha > 1."""
    family = "pareto"

    def __init__(self, alpha=3.0, scale=1.0, tail_monotonicity=None):
        if not (alpha > 0 and scale > 0):
            raise InvalidParams("pareto requires alpha > 0 and scale > 0", alpha=alpha, scale=scale)
        super().__init__(tail_monotonicity, alpha=float(alpha), scale=float(scale))

    @property
    def upper_tail_integrable(self):
        return self.params["alpha"] > 1.0

    def _quantile_left(self, t):
        with np.errstate(divide="ignore"):
            return self.params["scale"] * np.power(1.0 - t, -1.0 / self.params["alpha"])

    def _antiderivative(self, u):
        alpha, scale = self.params["alpha"], self.params["scale"]
        if alpha == 1.0:
            with np.errstate(divide="ignore"):
                return -scale * np.log1p(-u)
        k = 1.0 - 1.0 / alpha
        with np.errstate(divide="ignore"):
            return -scale * np.power(1.0 - u, k) / k


class NormalDistribution(ParametricDistribution):
    family = "normal"

    def __init__(self, loc=0.0, scale=1.0, tail_monotonicity=None):
        if not scale > 0:
            raise InvalidParams("normal requires scale > 0", scale=scale)
        super().__init__(tail_monotonicity, loc=float(loc), scale=float(scale))

    def _quantile_left(self, t):
        return self.params["loc"] + self.params["scale"] * special.ndtri(t)

    def _antiderivative(self, u):
        # the integral of ndtri is -phi(ndtri(u))
        return self.params["loc"] * u - self.params["scale"] * stats.norm.pdf(special.ndtri(u))


class LognormalDistribution(ParametricDistribution):
    """Law of exp(mu + sigma Z) with Z standard normal."""
    family = "lognormal"

    def __init__(self, mu=0.0, sigma=1.0, tail_monotonicity=None):
        if not sigma > 0:
            raise InvalidParams("lognormal requires sigma > 0", sigma=sigma)
        super().__init__(tail_monotonicity, mu=float(mu), sigma=float(sigma))

    def _quantile_left(self, t):
        return np.exp(self.params["mu"] + self.params["sigma"] * special.ndtri(t))

    def _antiderivative(self, u):
        mu, sigma = self.params["mu"], self.params["sigma"]
        return np.exp(mu + 0.5 * sigma * sigma) * special.ndtr(special.ndtri(u) - sigma)


class TriangularDistribution(ParametricDistribution):
    family = "triangular"

    def __init__(self, low=0.0, mode=0.5, high=1.0, tail_monotonicity=None):
        if not (low <= mode <= high and high > low):
            raise InvalidParams("triangular requires low <= mode <= high, high > low", low=low, mode=mode, high=high)
        super().__init__(tail_monotonicity, low=float(low), mode=float(mode), high=float(high))

    @property
    def _split(self):
        p = self.params
        return (p["mode"] - p["low"]) / (p["high"] - p["low"])

    def _quantile_left(self, t):
        p = self.params
        width = p["high"] - p["low"]
        left = p["low"] + np.sqrt(np.clip(t, 0, None) * width * (p["mode"] - p["low"]))
        right = p["high"] - np.sqrt(np.clip(1.0 - t, 0, None) * width * (p["high"] - p["mode"]))
        return np.where(t <= self._split, left, right)

    def _antiderivative(self, u):
        p = self.params
        width = p["high"] - p["low"]
        k_left = math.sqrt(width * (p["mode"] - p["low"]))
        k_right = math.sqrt(width * (p["high"] - p["mode"]))
        split = self._split

        def left(x):
            return p["low"] * x + (2.0 / 3.0) * k_left * x ** 1.5

        def right(x):
            return p["high"] * x + (2.0 / 3.0) * k_right * (1.0 - x) ** 1.5

        if u <= split:
            return left(u)
        return left(split) + right(u) - right(split)


class PowerLawDistribution(ParametricDistribution):
    """Law on [0,1] with distribution function x^k; k > 1 gives an increasing density."""
    family = "power_law"

    def __init__(self, k=2.0, tail_monotonicity=None):
        if not k > 0:
            raise InvalidParams("power law requires k > 0", k=k)
        super().__init__(tail_monotonicity, k=float(k))

    def _quantile_left(self, t):
        return np.power(t, 1.0 / self.params["k"])

    def _antiderivative(self, u):
        e = 1.0 + 1.0 / self.params["k"]
        return u ** e / e


class PointMass(ParametricDistribution):
    family = "point_mass"

    def __init__(self, value=0.0, tail_monotonicity=None):
        super().__init__(tail_monotonicity, value=float(value))

    def _quantile_left(self, t):
        return np.full_like(t, self.params["value"], dtype=float)

    def _closed_integral(self, a, b):
        return self.params["value"] * (b - a)

    def _antiderivative(self, u):
        return self.params["value"] * u


FAMILIES = {
    cls.family: cls
    for cls in (
        UniformDistribution,
        ExponentialDistribution,
        ParetoDistribution,
        NormalDistribution,
        LognormalDistribution,
        TriangularDistribution,
        PowerLawDistribution,
        PointMass,
    )
}


class EmpiricalDistribution(Distribution):
    """
    Equal-weight law on a finite sample; all integrals are exact finite sums.

    quantile_left(k/m) is the k-th order statistic and quantile_right(k/m) the (k+1)-th.
    """
    kind = "empirical"

    def __init__(self, values, tail_monotonicity=None):
        super().__init__(tail_monotonicity)
        values = np.sort(np.asarray(values, dtype=float).ravel())
        if values.size == 0:
            raise InvalidParams("empirical distribution needs at least one value")
        if not np.all(np.isfinite(values)):
            raise InvalidParams("empirical values must be finite")
        self.values = values
        self.values.setflags(write=False)
        self.m = values.size
        self._cumsum = np.concatenate([[0.0], np.cumsum(values)])

    @classmethod
    def from_csv(cls, path, tail_monotonicity=None):
        """Load a one-column CSV of sample values; a header row is skipped."""
        frame = pd.read_csv(path, header=None)
        column = pd.to_numeric(frame.iloc[:, 0], errors="coerce").dropna()
        return cls(column.to_numpy(), tail_monotonicity)

    @property
    def has_closed_form(self):
        return True

    def describe(self):
        return {"kind": self.kind, "m": int(self.m)}

    def _quantile_left(self, t):
        return self.values[_level_index(t, self.m, "left") - 1]

    def _quantile_right(self, t):
        return self.values[_level_index(t, self.m, "right") - 1]

    def _primitive(self, u):
        um = float(np.round(u * self.m, 9))
        k = min(int(math.floor(um)), self.m - 1)
        return (self._cumsum[k] + self.values[k] * (um - k)) / self.m

    def _closed_integral(self, a, b):
        return self._primitive(b) - self._primitive(a)

    def _quad_integral(self, a, b):
        return self._closed_integral(a, b)


class QuantileFunctionDistribution(Distribution):
    """
    Law given by an arbitrary vectorized left-quantile callable; integrals use quadrature.
    """
    kind = "quantile_function"

    def __init__(self, quantile, tail_monotonicity=None, lower_integrable=True, upper_integrable=True, name="custom"):
        super().__init__(tail_monotonicity)
        self._quantile = quantile
        self._lower_integrable = lower_integrable
        self._upper_integrable = upper_integrable
        self.name = name

    @property
    def lower_tail_integrable(self):
        return self._lower_integrable

    @property
    def upper_tail_integrable(self):
        return self._upper_integrable

    def describe(self):
        return {"kind": self.kind, "name": self.name}

    def _quantile_left(self, t):
        return np.asarray(self._quantile(t), dtype=float)


class TransformedDistribution(Distribution):
    """
    Distribution derived from a base law by a quantile composition.

    Transform tags
    -------
    tail_upper(r): u -> q_{r+(1-r)u}
    tail_lower(r): u -> q_{ru}
    negate: left quantile t -> -q^+_{1-t}
    shift(c): q + c
    scale(c): c q, c > 0
    """
    kind = "transformed"

    def __init__(self, base, tag, tail_monotonicity=None, **params):
        self.base = base
        self.tag = tag
        self.params = params
        super().__init__(tail_monotonicity or self._derived_metadata())

    @property
    def has_closed_form(self):
        return self.base.has_closed_form

    @property
    def lower_tail_integrable(self):
        if self.tag == "tail_upper":
            return True
        if self.tag == "negate":
            return self.base.upper_tail_integrable
        return self.base.lower_tail_integrable

    @property
    def upper_tail_integrable(self):
        if self.tag == "tail_lower":
            return True
        if self.tag == "negate":
            return self.base.lower_tail_integrable
        return self.base.upper_tail_integrable

    def describe(self):
        return {"kind": self.kind, "transform": self.tag, "params": dict(self.params), "base": self.base.describe()}

    def _derived_metadata(self):
        meta = self.base.tail_monotonicity
        if self.tag == "tail_upper":
            return meta.restrict_upper(self.params["r"])
        if self.tag == "tail_lower":
            return meta.restrict_lower(self.params["r"])
        if self.tag == "negate":
            return meta.reflect()
        return meta

    def _map(self, t, side):
        base_q = self.base._quantile_left if side == "left" else self.base._quantile_right
        if self.tag == "tail_upper":
            r = self.params["r"]
            return base_q(r + (1.0 - r) * t)
        if self.tag == "tail_lower":
            return base_q(self.params["r"] * t)
        if self.tag == "negate":
            other = self.base._quantile_right if side == "left" else self.base._quantile_left
            return -other(1.0 - t)
        if self.tag == "shift":
            return base_q(t) + self.params["c"]
        if self.tag == "scale":
            return base_q(t) * self.params["c"]
        raise InvalidParams(f"unknown transform {self.tag}")

    def _quantile_left(self, t):
        return self._map(t, "left")

    def _quantile_right(self, t):
        return self._map(t, "right")

    def _closed_integral(self, a, b):
        return self._compose_integral(a, b, "auto")

    def _quad_integral(self, a, b):
        return self._compose_integral(a, b, "quad")

    def _compose_integral(self, a, b, method):
        if self.tag == "tail_upper":
            r = self.params["r"]
            return self.base.quantile_integral(r + (1 - r) * a, r + (1 - r) * b, method) / (1 - r)
        if self.tag == "tail_lower":
            r = self.params["r"]
            return self.base.quantile_integral(r * a, r * b, method) / r
        if self.tag == "negate":
            return -self.base.quantile_integral(1.0 - b, 1.0 - a, method)
        if self.tag == "shift":
            return self.base.quantile_integral(a, b, method) + self.params["c"] * (b - a)
        if self.tag == "scale":
            return self.params["c"] * self.base.quantile_integral(a, b, method)
        raise InvalidParams(f"unknown transform {self.tag}")


# Constructors
def make_distribution(family, tail_monotonicity=None, **params):
    """
    Build a parametric distribution by family name.

    Raises
    ------
    InvalidParams
        If the family is unknown or the parameters are rejected by the family.
    """
    if family not in FAMILIES:
        raise InvalidParams(f"unknown family '{family}'", family=family, known=sorted(FAMILIES))
    try:
        return FAMILIES[family](tail_monotonicity=tail_monotonicity, **params)
    except TypeError as e:
        raise InvalidParams(f"bad parameters for {family}: {e}", family=family) from e


def from_spec(spec, base_dir=None):
    """
    Build a Distribution from a marginal specification record.

    Parameters
    ----------
    spec : dict
        {"family": name, "params": {...}} for parametric laws, {"family": "empirical", "path": csv}
        or {"family": "empirical", "values": [...]}, each with an optional "tail_monotonicity" record.
    base_dir : str, optional
        Directory that relative CSV paths are resolved against.

    Returns
    -------
    Distribution
    """
    meta = TailMonotonicity.from_dict(spec.get("tail_monotonicity"))
    family = spec.get("family")
    if family == "empirical":
        if "values" in spec:
            return EmpiricalDistribution(spec["values"], meta)
        path = spec["path"]
        if base_dir and not path.startswith("/"):
            path = f"{base_dir}/{path}"
        return EmpiricalDistribution.from_csv(path, meta)
    return make_distribution(family, meta, **spec.get("params", {}))


# Transforms
def tail_upper(d, r):
    """Law of q_U(d) with U uniform on [r, 1]."""
    r = _check_prob("r", r, high_open=True)
    if r == 0.0:
        return d
    return TransformedDistribution(d, "tail_upper", r=r)


def tail_lower(d, r):
    """Law of q_V(d) with V uniform on [0, r]."""
    r = _check_prob("r", r, low_open=True)
    if r == 1.0:
        return d
    return TransformedDistribution(d, "tail_lower", r=r)


def negate(d):
    """Law of -X; negating twice returns the original object."""
    if isinstance(d, TransformedDistribution) and d.tag == "negate":
        return d.base
    return TransformedDistribution(d, "negate")


def shift(d, c):
    return TransformedDistribution(d, "shift", c=float(c))


def scale(d, c):
    if not c > 0:
        raise InvalidParams("scale factor must be positive", c=c)
    return TransformedDistribution(d, "scale", c=float(c))


# Functionals
def avg_quantile(d, intervals, method="auto"):
    """
    Average of the left quantile over a union of intervals.

    Parameters
    ----------
    d : Distribution
    intervals : IntervalSet or iterable of (a, b) pairs
    method : str
        "auto" or "quad", forwarded to Distribution.quantile_integral.

    Returns
    -------
    float

    Raises
    ------
    EmptyIntervalSet
        If the set has zero length.
    NonIntegrableTail
        If the set reaches a tail with divergent integral.
    """
    if not isinstance(intervals, IntervalSet):
        intervals = IntervalSet(tuple(intervals))
    total = sum(d.quantile_integral(a, b, method) for a, b in intervals.intervals)
    return float(total / intervals.total_length)


def rvar(d, r, s):
    """R over the window [r, r+s]."""
    r, s = _check_window(r, s)
    return avg_quantile(d, IntervalSet.of((r, min(1.0, r + s))))


def mean(d):
    return avg_quantile(d, IntervalSet.of((0.0, 1.0)))


def es(d, p):
    """Expected shortfall, the average of the quantiles above level 1-p."""
    p = _check_prob("p", p, low_open=True)
    return avg_quantile(d, IntervalSet.of((1.0 - p, 1.0)))


def les(d, p):
    """Left expected shortfall, the average of the quantiles below level p."""
    p = _check_prob("p", p, low_open=True)
    return avg_quantile(d, IntervalSet.of((0.0, p)))


def iqd(d, r, variant="plus"):
    """
    Inter-quantile difference.

    plus: q^+_{1-r} - q^-_r for r in (0, 1/2]; minus: q^-_{1-r} - q^+_r for r in [0, 1/2).
    Evaluations where left and right quantiles disagree (atom boundaries) are logged.
    """
    if variant == "plus":
        r = _check_prob("r", r, 0.0, 0.5, low_open=True)
        high, low = d.quantile_right(1.0 - r), d.quantile_left(r)
    elif variant == "minus":
        r = _check_prob("r", r, 0.0, 0.5, high_open=True)
        high, low = d.quantile_left(1.0 - r), d.quantile_right(r)
    else:
        raise InvalidParams("variant must be 'plus' or 'minus'", variant=variant)
    for level in (r, 1.0 - r):
        if 0.0 < level < 1.0 and d.quantile_left(level) != d.quantile_right(level):
            logger.warning("iqd evaluated at an atom boundary (level %g); %s variant used literally", level, variant)
    return float(high - low)


def _check_window(r, s):
    r = _check_prob("r", r, high_open=True)
    s = _check_prob("s", s, low_open=True)
    if r + s > 1.0 + 1e-12:
        raise InvalidProbability(f"window [r, r+s] = [{r}, {r + s}] exceeds 1", r=r, s=s)
    return r, s


@dataclass(frozen=True)
class RiskFunctional:
    """
    A quantile-based functional of a law, linear in the sorted sample (an L-statistic).

    Kinds
    -------
    rvar(r, s): R over [r, r+s]
    quantile(t, side): q^-_t or q^+_t
    ird(r1, s1, r2, s2): R over [r2, s2] minus R over [r1, s1]
    quantile_diff(r, s): q^+_s - q^-_r
    """
    kind: str
    params: tuple

    @classmethod
    def rvar(cls, r, s):
        r, s = _check_window(r, s)
        return cls("rvar", (r, s))

    @classmethod
    def quantile(cls, t, side="left"):
        return cls("quantile_" + side, (_check_prob("t", t),))

    @classmethod
    def ird(cls, r1, s1, r2, s2):
        if not (0.0 <= r1 < s1 <= r2 < s2 <= 1.0):
            raise InvalidProbability("IRD windows need 0 <= r1 < s1 <= r2 < s2 <= 1", windows=[r1, s1, r2, s2])
        return cls("ird", (float(r1), float(s1), float(r2), float(s2)))

    @classmethod
    def quantile_diff(cls, r, s):
        if not (0.0 < r <= s < 1.0):
            raise InvalidProbability("quantile difference needs 0 < r <= s < 1", r=r, s=s)
        return cls("quantile_diff", (float(r), float(s)))

    def evaluate(self, d):
        """Value on a Distribution, or on a raw sample (wrapped as an empirical law)."""
        if not isinstance(d, Distribution):
            d = EmpiricalDistribution(d)
        if self.kind == "rvar":
            return rvar(d, *self.params)
        if self.kind == "quantile_left":
            return float(d.quantile_left(self.params[0]))
        if self.kind == "quantile_right":
            return float(d.quantile_right(self.params[0]))
        if self.kind == "ird":
            r1, s1, r2, s2 = self.params
            return avg_quantile(d, IntervalSet.of((r2, s2))) - avg_quantile(d, IntervalSet.of((r1, s1)))
        if self.kind == "quantile_diff":
            r, s = self.params
            return float(d.quantile_right(s) - d.quantile_left(r))
        raise InvalidParams(f"unknown functional {self.kind}")

    def sorted_weights(self, m):
        """
        Weights w with value = w @ sort(sample) for an m-atom equal-weight sample.
        """
        if self.kind == "rvar":
            r, s = self.params
            return _window_weights(r, min(1.0, r + s), m)
        if self.kind in ("quantile_left", "quantile_right"):
            return _point_weights(self.params[0], m, self.kind.split("_")[1])
        if self.kind == "ird":
            r1, s1, r2, s2 = self.params
            return _window_weights(r2, s2, m) - _window_weights(r1, s1, m)
        if self.kind == "quantile_diff":
            r, s = self.params
            return _point_weights(s, m, "right") - _point_weights(r, m, "left")
        raise InvalidParams(f"unknown functional {self.kind}")

    def to_dict(self):
        return {"kind": self.kind, "params": list(self.params)}


def _window_weights(a, b, m):
    grid = np.arange(m + 1) / m
    overlap = np.clip(np.minimum(b, grid[1:]) - np.maximum(a, grid[:-1]), 0.0, None)
    return overlap / (b - a)


def _point_weights(t, m, side):
    w = np.zeros(m)
    w[int(_level_index(t, m, side)) - 1] = 1.0
    return w


# Diagnostics
def check_tail_monotonicity(d, n_points=None):
    """
    Spot-check a declared density direction by finite differences of the quantile function.

    The density at q_u is 1/q'(u); it is sampled on the declared region and compared with the
    declared direction. Disagreement emits a warning and is returned; nothing is raised.

    Returns
    -------
    dict
        {"upper": bool or None, "lower": bool or None}; None means nothing declared or checkable.
    """
    n_points = n_points or _DEFAULTS["density_check_points"]
    meta = d.tail_monotonicity
    report = {"upper": None, "lower": None}
    if isinstance(d, EmpiricalDistribution):
        logger.debug("density spot check skipped for empirical law")
        return report
    regions = {
        "upper": (meta.upper, max(meta.upper_threshold, 0.01), 0.99),
        "lower": (meta.lower, 0.01, min(meta.lower_threshold, 0.99)),
    }
    for side, (direction, lo, hi) in regions.items():
        if direction == "none" or hi <= lo:
            continue
        u = np.linspace(lo, hi, n_points)
        h = 1e-6
        slope = (d.quantile_left(np.clip(u + h, 0, 1)) - d.quantile_left(np.clip(u - h, 0, 1))) / (2 * h)
        with np.errstate(divide="ignore"):
            density = 1.0 / slope
        steps = np.diff(density)
        slack = 1e-6 * np.maximum(1.0, np.abs(density[:-1]))
        ok = bool(np.all(steps >= -slack)) if direction == "increasing" else bool(np.all(steps <= slack))
        report[side] = ok
        if not ok:
            warnings.warn(f"declared {direction} density in the {side} tail disagrees with a finite-difference check")
            logger.warning("density spot check failed for %s tail of %r", side, d)
    return report
