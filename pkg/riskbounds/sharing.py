"""
Risk sharing for the averaged quantile on an equal-weight discrete probability space.

Agent i is charged R over I_i = [0, beta_i] U [1-beta+beta_i, 1]. The minimal total charge over
all allocations of the total is R over [0, beta] of the total, attained by an explicit allocation
that is counter-monotone on the low event A = {U_X <= beta} and comonotone off it.

With m atoms and every m * beta_i an integer, every R value below is a finite sum over sorted
atoms. Passing exact=True runs the same sums in Fraction arithmetic.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_flow

from .defaults import load_defaults
from .dist_core import Distribution, EmpiricalDistribution, IntervalSet, avg_quantile, mean
from .errors import (
    ConstraintViolation,
    InvalidParams,
    InvalidProbability,
    InvalidT,
    NonIntegralMass,
    ShapeMismatch,
)
from .oracle import discretize

logger = logging.getLogger(__name__)

_MASS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SharingProblem:
    """
    Total-risk sample on m equal-weight atoms plus the agents' masses beta_i.

    u_rank[j] is the rank of atom j in the total sorted by (value, index), which realizes U_X.
    """
    total: np.ndarray
    betas: tuple
    u_rank: np.ndarray = None

    def __post_init__(self):
        total = np.asarray(self.total, dtype=float).ravel().copy()
        if total.size == 0 or not np.all(np.isfinite(total)):
            raise InvalidParams("total must be a non-empty finite sample")
        betas = tuple(float(b) for b in self.betas)
        if not betas or any(b <= 0.0 for b in betas):
            raise InvalidProbability("every beta_i must be positive", betas=list(betas))
        beta = math.fsum(betas)
        if not 0.0 < beta < 1.0:
            raise InvalidProbability("beta in (0,1)", beta=beta)
        m = total.size
        for b in betas:
            if abs(m * b - round(m * b)) > _MASS_TOL:
                raise NonIntegralMass("m * beta_i must be an integer", m=m, beta_i=b)
        order = np.argsort(total, kind="stable")
        rank = np.empty(m, dtype=int)
        rank[order] = np.arange(m)
        total.setflags(write=False)
        rank.setflags(write=False)
        object.__setattr__(self, "total", total)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "u_rank", rank)

    @classmethod
    def from_distribution(cls, d, m, betas):
        """Share the midpoint discretization of a Distribution on m atoms."""
        return cls(discretize(d, m), tuple(betas))

    @classmethod
    def from_csv(cls, path, betas, column=0):
        """Load the total-risk sample from one column of a CSV file."""
        frame = pd.read_csv(path)
        series = frame[column] if isinstance(column, str) else frame.iloc[:, int(column)]
        values = pd.to_numeric(series, errors="coerce").dropna().to_numpy()
        return cls(values, tuple(betas))

    @property
    def m(self):
        return self.total.size

    @property
    def n(self):
        return len(self.betas)

    @property
    def beta(self):
        return math.fsum(self.betas)

    @property
    def counts(self):
        """Atom counts m * beta_i."""
        return tuple(int(round(self.m * b)) for b in self.betas)

    @property
    def k(self):
        return sum(self.counts)

    @property
    def order(self):
        """Atom indices sorted by (value, index)."""
        return np.argsort(self.u_rank)

    def low_event(self):
        """Boolean mask of A = {U_X <= beta}: the k lowest atoms."""
        return self.u_rank < self.k

    def blocks(self):
        """A_1, ..., A_n as index arrays: consecutive blocks of sizes m * beta_i in sorted order."""
        order = self.order
        edges = np.concatenate([[0], np.cumsum(self.counts)])
        return [order[edges[i]:edges[i + 1]] for i in range(self.n)]

    def to_dict(self):
        return {"m": int(self.m), "betas": list(self.betas), "beta": self.beta}


@dataclass(frozen=True, eq=False)
class Allocation:
    """
    n x m array of parts on the problem's atoms; meta records how it was built.
    """
    parts: np.ndarray
    meta: dict = field(default_factory=lambda: {"construction": "custom"})

    def __post_init__(self):
        parts = np.asarray(self.parts)
        if parts.ndim == 1:
            parts = parts[np.newaxis, :]
        if parts.ndim != 2:
            raise ShapeMismatch("parts must be an n x m array", shape=list(parts.shape))
        if parts.dtype != object:
            parts = parts.astype(float)
        object.__setattr__(self, "parts", parts)

    @property
    def n(self):
        return self.parts.shape[0]

    @property
    def m(self):
        return self.parts.shape[1]

    @property
    def exact(self):
        return self.parts.dtype == object

    def column_sums(self):
        if self.exact:
            return np.array([sum(col, Fraction(0)) for col in self.parts.T.tolist()], dtype=object)
        return np.array([math.fsum(col) for col in self.parts.T])

    def to_frame(self):
        values = self.parts.astype(float) if self.exact else self.parts
        return pd.DataFrame(values.T, columns=[f"agent_{i + 1}" for i in range(self.n)])

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)
        logger.info("allocation written to %s", path)


@dataclass(frozen=True)
class DistortionParams:
    lam: float
    beta_i: float
    beta: float

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise InvalidParams("lambda must lie in [0, 1)", lam=self.lam)
        if not 0.0 < self.beta < 1.0:
            raise InvalidParams("beta must lie in (0, 1)", beta=self.beta)
        if not 0.0 < self.beta_i < self.beta:
            raise InvalidParams("beta_i must lie in (0, beta)", beta_i=self.beta_i, beta=self.beta)

    def breakpoints(self):
        return (0.0, self.beta - self.beta_i, 1.0 - self.beta_i, 1.0)


@dataclass(frozen=True)
class DependenceReport:
    holds: bool
    case: str = "none"
    theta: float = None
    candidate_cases: tuple = ()
    exhaustive: bool = True
    witness: tuple = ()

    def to_dict(self):
        return {
            "holds": self.holds,
            "case": self.case,
            "theta": self.theta,
            "candidate_cases": list(self.candidate_cases),
            "exhaustive": self.exhaustive,
        }


# Discrete arithmetic helpers
def _exact(values):
    return np.array([Fraction(v) for v in np.asarray(values).tolist()], dtype=object)


def _values(values, exact):
    values = np.asarray(values)
    if exact and values.dtype != object:
        return _exact(values)
    return values


def _sum(values):
    values = np.asarray(values)
    if values.dtype == object:
        return sum(values.tolist(), Fraction(0))
    return math.fsum(values)


def _sorted(values):
    values = np.asarray(values)
    if values.dtype == object:
        return np.array(sorted(values.tolist()), dtype=object)
    return np.sort(values)


def _block_mean(sorted_values, pieces):
    """R over a union of index ranges [a, b) of a sorted sample."""
    length = sum(b - a for a, b in pieces)
    return _sum(np.concatenate([sorted_values[a:b] for a, b in pieces])) / length


def _result(value, exact):
    return value if exact else float(value)


def _sharing_pieces(p, i):
    """Index ranges of I_i = [0, beta_i] U [1-beta+beta_i, 1]."""
    ki, k, m = p.counts[i], p.k, p.m
    return [(0, ki), (m - k + ki, m)]


def _dual_pieces(p, i):
    """Index range of [beta_i, 1-beta+beta_i]."""
    ki, k, m = p.counts[i], p.k, p.m
    return [(ki, m - k + ki)]


# Main Functionality Methods
def inf_convolution(p, exact=False):
    """
    Minimal total charge: R over [0, beta] of the total, the mean of the m * beta lowest atoms.
    """
    low = _sorted(_values(p.total, exact))[:p.k]
    return _result(_sum(low) / p.k, exact)


def r_sharing(p, values, i, exact=False):
    """R over I_i of one part."""
    return _result(_block_mean(_sorted(_values(values, exact)), _sharing_pieces(p, i)), exact)


def evaluate_allocation(p, a, exact=False):
    """
    Total charge sum_i R_{I_i}(X_i) of an allocation.

    Raises
    ------
    ShapeMismatch
        If the allocation does not have n parts on the problem's m atoms.
    ConstraintViolation
        If the parts do not add up to the total.
    """
    _check_allocation(p, a)
    parts = [_values(row, exact) for row in a.parts]
    total = sum(_block_mean(_sorted(part), _sharing_pieces(p, i)) for i, part in enumerate(parts))
    return _result(total, exact)


def evaluate_dual(p, a, exact=False):
    """Dual charge sum_i R_{[beta_i, 1-beta+beta_i]}(X_i)."""
    _check_allocation(p, a)
    parts = [_values(row, exact) for row in a.parts]
    total = sum(_block_mean(_sorted(part), _dual_pieces(p, i)) for i, part in enumerate(parts))
    return _result(total, exact)


def allocation_threshold(p):
    """Smallest admissible t for the optimal allocation: the positive part of the largest atom."""
    return max(0.0, float(p.total.max()))


def optimal_allocation(p, t=None, exact=False):
    """
    Optimal allocation of the total.

    On A_i agent i takes X - t, on A minus A_i it takes t/(n-1), and off A every agent takes X/n.
    The total charge equals inf_convolution(p) for every admissible t.

    Parameters
    ----------
    p : SharingProblem
    t : float, optional
        Side payment; defaults to max(0, max X) + 1.
    exact : bool
        Build the parts from Fraction values.

    Returns
    -------
    Allocation

    Raises
    ------
    InvalidT
        If t is below max(0, max X).
    """
    threshold = allocation_threshold(p)
    if t is None:
        t = threshold + 1.0
    if t < threshold:
        raise InvalidT("t must be at least max(0, max X)", threshold=threshold, t=t)
    parts = _side_payment_parts(p, t, exact)
    return Allocation(parts, {"construction": "optimal_t", "t": float(t)})


def sequence_threshold(p):
    """Smallest admissible m_param: (q^-_beta v max_i q^-_{1-beta+beta_i})_+ on the sample."""
    ordered = np.sort(p.total)
    levels = [p.k] + [p.m - p.k + ki for ki in p.counts]
    return max(0.0, max(float(ordered[j - 1]) for j in levels))


def allocation_sequence(p, m_param, exact=False):
    """
    Member of the approximating allocation sequence for a total that is not bounded above.

    The parts follow the optimal construction with side payment m_param. The total charge
    exceeds inf_convolution(p) by stop_loss(X, a_m) / beta with a_m = n * m_param / (n - 1).

    Returns
    -------
    tuple of (Allocation, float)
        The allocation and its total charge.

    Raises
    ------
    InvalidT
        If m_param is below sequence_threshold(p).
    InvalidParams
        If there is only one agent.
    """
    if p.n < 2:
        raise InvalidParams("the allocation sequence needs at least two agents", n=p.n)
    threshold = sequence_threshold(p)
    if m_param < threshold:
        raise InvalidT("m_param below the sequence threshold", threshold=threshold, m_param=m_param)
    parts = _side_payment_parts(p, m_param, exact)
    allocation = Allocation(parts, {"construction": "sequence", "mu_m": float(m_param)})
    exposure = evaluate_allocation(p, allocation, exact)
    logger.debug(
        "allocation_sequence(%g): exposure %.12g, a_m %.6g", m_param, float(exposure), sequence_level(p, m_param)
    )
    return allocation, exposure


def sequence_level(p, m_param, exact=False):
    """a_m = n * m_param / (n - 1)."""
    if exact:
        return Fraction(m_param) * p.n / (p.n - 1)
    return p.n * float(m_param) / (p.n - 1)


def sequence_error(p, m_param, exact=False):
    """Excess charge stop_loss(X, a_m) / beta of the sequence allocation."""
    level = sequence_level(p, m_param, exact)
    beta = Fraction(p.k, p.m) if exact else p.beta
    return _result(stop_loss(p.total, level, exact) / beta, exact)


def stop_loss(total, a, exact=False):
    """Discrete stop-loss transform E[(X - a)_+] on equal-weight atoms."""
    values = _values(np.asarray(total).ravel(), exact)
    a = Fraction(a) if exact else float(a)
    excess = [v - a for v in values.tolist() if v > a]
    if exact:
        return sum(excess, Fraction(0)) / len(values)
    return math.fsum(excess) / len(values)


def keep_all_allocation(p):
    """Agent 1 keeps the whole total, everybody else holds 0."""
    parts = np.zeros((p.n, p.m))
    parts[0] = p.total
    return Allocation(parts, {"construction": "keep_all"})


def dual_sup(p, exact=False):
    """
    Supremum of sum_i R_{[beta_i, 1-beta+beta_i]}(X_i) over allocations, R_{[beta, 1]}(X).

    The value is checked against (E[X] - beta R_{[0,beta]}(X)) / (1 - beta); the optimal allocation
    attains it since a finite sample is bounded above.

    Returns
    -------
    tuple of (value, Allocation)
    """
    ordered = _sorted(_values(p.total, exact))
    value = _sum(ordered[p.k:]) / (p.m - p.k)
    beta = Fraction(p.k, p.m) if exact else p.beta
    identity = (_sum(ordered) / p.m - beta * (_sum(ordered[:p.k]) / p.k)) / (1 - beta)
    if exact and value != identity:
        raise ConstraintViolation("dual identity failed in exact arithmetic", value=str(value), identity=str(identity))
    if not exact and not math.isclose(value, identity, rel_tol=1e-9, abs_tol=1e-9):
        raise ConstraintViolation("dual identity failed", value=value, identity=identity)
    return _result(value, exact), optimal_allocation(p, exact=exact)


# Distortion
def distortion_g(s, params):
    """
    Piecewise-linear inverse-S distortion g(s) for agent i.

    g(s) = lam s + (1-lam)/beta (s ^ (beta-beta_i)) on [0, 1-beta_i) and
    lam s + (1-lam)/beta (s - 1 + beta) on [1-beta_i, 1].
    """
    s = np.asarray(s, dtype=float)
    if np.any((s < 0.0) | (s > 1.0)):
        raise InvalidParams("distortion argument must lie in [0, 1]")
    lam, bi, beta = params.lam, params.beta_i, params.beta
    c = (1.0 - lam) / beta
    g = np.where(s < 1.0 - bi, lam * s + c * np.minimum(s, beta - bi), lam * s + c * (s - 1.0 + beta))
    g = np.where(s >= 1.0, 1.0, g)
    return float(g) if g.ndim == 0 else g


def distortion_density(s, params):
    """Derivative of g_{lam,i}: lam + (1-lam)/beta off [beta-beta_i, 1-beta_i), lam on it."""
    s = np.asarray(s, dtype=float)
    c = (1.0 - params.lam) / params.beta
    steep = (s < params.beta - params.beta_i) | (s >= 1.0 - params.beta_i)
    density = params.lam + c * steep
    return float(density) if density.ndim == 0 else density


def distortion_value(d, params, route="identity"):
    """
    Distortion risk measure of X under g_{lam,i}.

    route="identity" evaluates lam E[X] + (1-lam) R_{I_i}(X). route="direct" evaluates the
    Stieltjes integral of q(1-s) against dg(s): a sample is weighted by the g-mass of each order
    statistic's tail band, a law is integrated against the density of g on the regions where it is
    constant. d is a Distribution or a sample.
    """
    if not isinstance(d, Distribution):
        d = EmpiricalDistribution(d)
    if route == "identity":
        intervals = IntervalSet.of((0.0, params.beta_i), (1.0 - params.beta + params.beta_i, 1.0))
        value = (1.0 - params.lam) * avg_quantile(d, intervals)
        if params.lam > 0.0:
            value += params.lam * mean(d)
        return float(value)
    if route == "direct":
        if isinstance(d, EmpiricalDistribution):
            # the k-th smallest of m values carries g((m-k+1)/m) - g((m-k)/m)
            bands = np.diff(distortion_g(np.arange(d.m + 1) / d.m, params))[::-1]
            return float(math.fsum(bands * d.values))
        total = 0.0
        points = params.breakpoints()
        for a, b in zip(points[:-1], points[1:]):
            if b <= a:
                continue
            density = distortion_density(0.5 * (a + b), params)
            total += density * d.quantile_integral(1.0 - b, 1.0 - a)
        return float(total)
    raise InvalidParams("route must be 'identity' or 'direct'", route=route)


# Dependence structure
def verify_dependence(p, a, tie_cap=None):
    """
    Search for probability transforms with {U_X <= beta} = {U_{X_i} in I_i} for every i.

    Each vector pins the event down up to ties at its boundary values; the search enumerates the
    remaining tie resolutions up to tie_cap candidates. For every witness the report classifies
    case i (the low pieces {U_{X_i} <= beta_i} tile the event) or case ii, with theta the smallest
    uncovered mass and the total and parts constant off the covered atoms. A witness meeting neither
    is reported as "unclassified" unless another tie resolution classifies. If tie resolutions
    disagree every case seen is listed in candidate_cases.

    Returns
    -------
    DependenceReport
    """
    _check_allocation(p, a)
    tie_cap = int(tie_cap or load_defaults()["tie_cap"])
    constraints = [_event_constraint(p.total, p.k, 0)]
    constraints += [_event_constraint(part, ki, p.k - ki) for part, ki in zip(a.parts, p.counts)]

    forced_in = np.zeros(p.m, dtype=bool)
    forced_out = np.zeros(p.m, dtype=bool)
    classes = []
    for inside, outside, ties in constraints:
        forced_in |= inside
        forced_out |= outside
        classes.extend(ties)
    if np.any(forced_in & forced_out):
        return DependenceReport(holds=False)

    free = np.flatnonzero(~(forced_in | forced_out))
    need = p.k - int(forced_in.sum())
    if need < 0 or need > free.size:
        return DependenceReport(holds=False)

    cases, witness, tried = [], None, 0
    exhaustive = True
    for chosen in itertools.combinations(free.tolist(), need):
        if tried >= tie_cap:
            exhaustive = False
            logger.warning("verify_dependence stopped at the tie-resolution cap of %d candidates", tie_cap)
            break
        tried += 1
        event = forced_in.copy()
        event[list(chosen)] = True
        if all(int(event[idx].sum()) == required for idx, required in classes):
            case, theta = _classify(p, a, event)
            if witness is None or (witness[1] == "unclassified" and case != "unclassified"):
                witness = (event, case, theta)
            if case not in cases:
                cases.append(case)
            if "i" in cases and "ii" in cases:
                break

    if witness is None:
        return DependenceReport(holds=False, exhaustive=exhaustive)
    event, case, theta = witness
    return DependenceReport(
        holds=True,
        case=case,
        theta=theta,
        candidate_cases=tuple(cases),
        exhaustive=exhaustive,
        witness=tuple(int(j) for j in np.flatnonzero(event)),
    )


# Helper Methods
def _check_allocation(p, a):
    if a.parts.shape != (p.n, p.m):
        raise ShapeMismatch(
            "allocation shape does not match the problem", shape=list(a.parts.shape), expected=[p.n, p.m]
        )
    sums = a.column_sums()
    if a.exact:
        ok = all(s == Fraction(x) for s, x in zip(sums.tolist(), p.total.tolist()))
    else:
        scale = max(1.0, float(np.abs(p.total).max()))
        ok = bool(np.all(np.abs(sums - p.total) <= 1e-9 * scale))
    if not ok:
        raise ConstraintViolation("allocation parts must add up to the total")


def _side_payment_parts(p, t, exact):
    total = _values(p.total, exact)
    n = p.n
    if exact:
        t = Fraction(t)
        parts = np.empty((n, p.m), dtype=object)
    else:
        t = float(t)
        parts = np.empty((n, p.m))
    if n == 1:
        parts[0] = total
        return parts
    low = p.low_event()
    blocks = p.blocks()
    for i in range(n):
        row = total / n
        row[low] = t / (n - 1)
        row[blocks[i]] = total[blocks[i]] - t
        parts[i] = row
    return parts


def _event_constraint(values, bottom, top):
    """
    Atoms forced into or out of {U in [0, bottom/m] U [1 - top/m, 1]}, plus tie classes with the
    number of their atoms the event must contain.
    """
    values = np.asarray(values)
    m = values.size
    ordered = _sorted(values)
    inside = np.zeros(m, dtype=bool)
    boundary = {}
    if bottom > 0:
        lo = ordered[bottom - 1]
        inside |= values < lo
        boundary[lo] = boundary.get(lo, 0) + bottom - int(np.sum(values < lo))
    if top > 0:
        hi = ordered[m - top]
        inside |= values > hi
        boundary[hi] = boundary.get(hi, 0) + top - int(np.sum(values > hi))
    outside = ~inside
    ties = []
    for value, required in boundary.items():
        idx = np.flatnonzero(values == value)
        outside[idx] = False
        if required == idx.size:
            inside[idx] = True
        elif required == 0:
            outside[idx] = True
        else:
            ties.append((idx, required))
    return inside, outside, ties


def _classify(p, a, event):
    """
    Largest mass of the event covered by disjoint low pieces {U_{X_i} <= beta_i}.

    Low piece i holds every event atom strictly below the k_i-th smallest value of X_i and is
    filled from event atoms tied at that value; the filling is a bipartite flow. Case ii also needs
    the total and every part constant off the covered atoms, otherwise the event is unclassified.
    """
    members = np.flatnonzero(event)
    covered = np.zeros(p.m, dtype=bool)
    slots, eligible = [], []
    for part, ki in zip(a.parts, p.counts):
        values = np.asarray(part)[members]
        lo = _sorted(values)[ki - 1]
        below = members[values < lo]
        covered[below] = True
        slots.append(ki - below.size)
        eligible.append(set(members[values == lo].tolist()))

    keys = {}
    for j in members.tolist():
        if not covered[j]:
            keys[j] = tuple(i for i in range(p.n) if j in eligible[i] and slots[i] > 0)
    extra = _max_flow(_count_patterns(keys.values()), slots, p.n)
    uncovered = members.size - int(covered.sum()) - extra
    if uncovered == 0:
        return "i", 0.0
    theta = uncovered / p.m
    if not _constant_off_cover(p, a, event, keys, slots):
        logger.warning("uncovered mass %g without a constant block", theta)
        return "unclassified", theta
    return "ii", theta


def _count_patterns(keys):
    patterns = {}
    for key in keys:
        if key:
            patterns[key] = patterns.get(key, 0) + 1
    return patterns


def _constant_off_cover(p, a, event, keys, slots):
    """
    Whether the total and the parts can all be constant on the complement of the event together
    with the event atoms left uncovered.

    Pending atoms off those constants must all fit into the low pieces.
    """
    outside = ~event
    columns = [np.asarray(p.total)] + [np.asarray(part) for part in a.parts]
    scale = max(1.0, float(np.max(np.abs(np.asarray(p.total, dtype=float)))))
    levels = []
    for column in columns:
        block = column[outside]
        if not all(_same(v, block[0], scale) for v in block.tolist()):
            return False
        levels.append(block[0])
    off = [key for j, key in keys.items() if not all(_same(c[j], v, scale) for c, v in zip(columns, levels))]
    if not all(off):
        return False
    return _max_flow(_count_patterns(off), slots, p.n) == len(off)


def _same(x, y, scale):
    if isinstance(x, Fraction) or isinstance(y, Fraction):
        return x == y
    return abs(float(x) - float(y)) <= 1e-9 * scale


def _max_flow(patterns, slots, n):
    """Flow from atom groups (keyed by the agents they may join) to agents with given slots."""
    if not patterns:
        return 0
    keys = list(patterns)
    source, sink = 0, 1 + len(keys) + n
    size = sink + 1
    capacity = np.zeros((size, size), dtype=np.int32)
    for g, key in enumerate(keys, start=1):
        capacity[source, g] = patterns[key]
        for i in key:
            capacity[g, 1 + len(keys) + i] = patterns[key]
    for i in range(n):
        capacity[1 + len(keys) + i, sink] = max(0, slots[i])
    return int(maximum_flow(csr_matrix(capacity), source, sink).flow_value)
