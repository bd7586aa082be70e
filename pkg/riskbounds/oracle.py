import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from .bounds import CERTIFIED_BY_CONDITION, CERTIFIED_BY_ORACLE, UNKNOWN
from .defaults import load_defaults
from .dist_core import RiskFunctional
from .errors import ConstraintViolation, InstanceTooLarge, InvalidParams, NonFiniteQuantile

logger = logging.getLogger(__name__)

_EXHAUSTIVE_LIMIT = 10 ** 7


@dataclass(frozen=True)
class RAConfig:
    m: int = 1000
    max_sweeps: int = 200
    tol: float = 1e-9
    restarts: int = 5
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.m < 2:
            raise InvalidParams("RA needs m >= 2", m=self.m)
        if self.restarts < 1:
            raise InvalidParams("RA needs at least one restart", restarts=self.restarts)

    @classmethod
    def from_defaults(cls, **overrides):
        values = dict(load_defaults()["ra"])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DiscreteCoupling:
    """
    m equal-mass joint scenarios (rows) of n marginals (columns).

    Sorted columns equal the midpoint discretizations of the marginals. ``blocks`` maps block names
    to half-open row ranges for couplings built block-wise.
    """
    atoms: np.ndarray
    blocks: dict = field(default_factory=dict)

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        if atoms.ndim != 2:
            raise InvalidParams("coupling atoms must be an m x n array", shape=list(atoms.shape))
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)

    @property
    def m(self):
        return self.atoms.shape[0]

    @property
    def n(self):
        return self.atoms.shape[1]

    def row_sums(self):
        return self.atoms.sum(axis=1)

    def evaluate(self, functional):
        """Value of a RiskFunctional on the empirical law of the row sums."""
        return float(functional.sorted_weights(self.m) @ np.sort(self.row_sums()))

    def canonical(self):
        """Rows in lexicographic order; two couplings of the same law compare equal."""
        order = np.lexsort(self.atoms.T[::-1])
        return self.atoms[order]

    def to_frame(self):
        return pd.DataFrame(self.atoms, columns=[f"X{i + 1}" for i in range(self.n)])

    def to_csv(self, path):
        """Write m rows by n columns, one column per marginal."""
        self.to_frame().to_csv(path, index=False)
        logger.info("coupling written to %s", path)


def discretize(d, m):
    """
    Midpoint quantile atoms q^-_{(j-1/2)/m}, j = 1..m, sorted ascending.

    Raises
    ------
    NonFiniteQuantile
        If a quantile on the midpoint grid is infinite or NaN.
    """
    m = int(m)
    if m < 1:
        raise InvalidParams("m must be positive", m=m)
    u = (np.arange(1, m + 1) - 0.5) / m
    atoms = np.atleast_1d(np.asarray(d.quantile_left(u), dtype=float))
    if not np.all(np.isfinite(atoms)):
        raise NonFiniteQuantile("quantile is not finite on the midpoint grid", m=m)
    return np.sort(atoms)


# Rearrangement
class BlockRearrangement():
    """
    Column-wise rearrangement of a block of rows, maximizing a sorted-sum L-statistic.

    Each sweep visits every column and tries two rearrangements of its entries within the block:
    antithetic to the sum of the other columns over the whole block, and antithetic only within the
    block rows currently carrying positive objective weight. The best strictly improving candidate
    is kept. Sweeps stop when the total improvement of a sweep is at most tol.

    Attributes
    -------
    weights:
        Objective weights applied to the sorted row sums.
    rows:
        Row indices that may be rearranged; the others stay fixed.
    config:
        RAConfig.
    """

    def __init__(self, weights, rows, config):
        self.weights = np.asarray(weights, dtype=float)
        self.rows = np.asarray(rows, dtype=int)
        self.config = config

    def value(self, atoms):
        return float(self.weights @ np.sort(atoms.sum(axis=1)))

    def run(self, atoms):
        """Rearrange in place; returns (value, sweeps used)."""
        current = self.value(atoms)
        if self.rows.size < 2:
            return current, 0
        for sweep in range(1, self.config.max_sweeps + 1):
            start = current
            for j in range(atoms.shape[1]):
                current = self._improve_column(atoms, j, current)
            if current - start <= self.config.tol * max(1.0, abs(start)):
                return current, sweep
        logger.warning("rearrangement stopped at max_sweeps=%d without stalling", self.config.max_sweeps)
        return current, self.config.max_sweeps

    def _improve_column(self, atoms, j, current):
        partial = atoms.sum(axis=1) - atoms[:, j]
        best_value, best_column = current, None
        for rows in (self.rows, self._weighted_rows(atoms)):
            if rows.size < 2:
                continue
            column = atoms[:, j].copy()
            order = rows[np.argsort(partial[rows], kind="stable")]
            column[order] = np.sort(atoms[rows, j], kind="stable")[::-1]
            candidate = atoms.copy()
            candidate[:, j] = column
            value = self.value(candidate)
            if value > best_value + 1e-15 * max(1.0, abs(best_value)):
                best_value, best_column = value, column
        if best_column is not None:
            atoms[:, j] = best_column
        return best_value

    def _weighted_rows(self, atoms):
        ranks = np.empty(atoms.shape[0], dtype=int)
        ranks[np.argsort(atoms.sum(axis=1), kind="stable")] = np.arange(atoms.shape[0])
        in_block = np.zeros(atoms.shape[0], dtype=bool)
        in_block[self.rows] = True
        return np.flatnonzero(in_block & (self.weights[ranks] != 0.0))


def _lex_less(a, b):
    diff = np.flatnonzero(a.ravel() != b.ravel())
    return bool(diff.size) and a.ravel()[diff[0]] < b.ravel()[diff[0]]


def _ra_maximize(grids, r, weights, config):
    """
    Maximize weights @ sort(row sums) over couplings whose rows below the r-level are comonotone.

    Returns the best (value, atoms) over the restarts.
    """
    m = grids[0].size
    fixed = int(math.floor(round(r * m, 9)))
    active = np.arange(fixed, m)
    ra = BlockRearrangement(weights, active, config)

    def restart(k):
        atoms = np.column_stack(grids).copy()
        if k > 0:
            rng = np.random.default_rng([config.seed, k])
            for j in range(atoms.shape[1]):
                atoms[fixed:, j] = rng.permutation(atoms[fixed:, j])
        value, sweeps = ra.run(atoms)
        logger.debug("RA restart %d: %.10g after %d sweeps", k, value, sweeps)
        return value, atoms

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            outcomes = list(pool.map(restart, range(config.restarts)))
    else:
        outcomes = [restart(k) for k in range(config.restarts)]

    best_value, best_atoms = outcomes[0]
    for value, atoms in outcomes[1:]:
        if value > best_value or (
            value == best_value
            and _lex_less(DiscreteCoupling(atoms).canonical(), DiscreteCoupling(best_atoms).canonical())
        ):
            best_value, best_atoms = value, atoms
    return best_value, best_atoms


def ra_sup_rvar(marginals, r, s, cfg=None):
    """
    Rearrangement estimate of sup R over [r, r+s] of the sum.

    Rows holding the atoms below the r-level are fixed comonotone and only the remaining block is
    rearranged, so the window is the lower part of the active block.

    Returns
    -------
    tuple of (float, DiscreteCoupling)
    """
    cfg = cfg or RAConfig.from_defaults()
    functional = RiskFunctional.rvar(r, s)
    grids = [discretize(d, cfg.m) for d in marginals]
    value, atoms = _ra_maximize(grids, r, functional.sorted_weights(cfg.m), cfg)
    logger.info("RA sup R[%g, %g] at m=%d: %.10g", r, r + s, cfg.m, value)
    return value, DiscreteCoupling(atoms)


def ra_inf_rvar(marginals, r, s, cfg=None):
    """
    Rearrangement estimate of inf R over [r, r+s] of the sum, by reflection of the atoms.

    Returns
    -------
    tuple of (float, DiscreteCoupling)
    """
    cfg = cfg or RAConfig.from_defaults()
    mirror_r = max(0.0, 1.0 - r - s)
    functional = RiskFunctional.rvar(mirror_r, s)
    grids = [np.sort(-discretize(d, cfg.m)) for d in marginals]
    value, atoms = _ra_maximize(grids, mirror_r, functional.sorted_weights(cfg.m), cfg)
    logger.info("RA inf R[%g, %g] at m=%d: %.10g", r, r + s, cfg.m, -value)
    return -value, DiscreteCoupling(-atoms)


def exhaustive_extreme(marginals, functional, direction, m):
    """
    Exact extreme of a functional over all permutation couplings of m-atom discretizations.

    Column 1 is held fixed and all m!^(n-1) arrangements of the others are enumerated. Among equal
    values the first in enumeration order is returned.

    Parameters
    ----------
    marginals : sequence of Distribution
    functional : RiskFunctional
    direction : str
        "sup" or "inf".
    m : int

    Returns
    -------
    tuple of (float, DiscreteCoupling)

    Raises
    ------
    InstanceTooLarge
        If m > 8, n > 3 or m!^(n-1) exceeds 10^7.
    """
    n = len(marginals)
    m = int(m)
    count = math.factorial(m) ** (n - 1)
    if m > 8 or n > 3 or count > _EXHAUSTIVE_LIMIT:
        raise InstanceTooLarge("exhaustive enumeration too large", m=m, n=n, couplings=count)
    if direction not in ("sup", "inf"):
        raise InvalidParams("direction must be 'sup' or 'inf'", direction=direction)
    sign = 1.0 if direction == "sup" else -1.0
    grids = [discretize(d, m) for d in marginals]
    weights = functional.sorted_weights(m)
    perms = np.array(list(itertools.permutations(range(m))))

    best_value, best_atoms = -np.inf, None
    outer = perms if n == 3 else [None]
    for p1 in outer:
        base = grids[0].copy()
        if n == 3:
            base = base + grids[1][p1]
        last = grids[-1] if n > 1 else np.zeros(m)
        sums = base[None, :] + (last[perms] if n > 1 else last[None, :])
        values = sign * (np.sort(sums, axis=1) @ weights)
        k = int(np.argmax(values))
        if values[k] > best_value:
            best_value = float(values[k])
            columns = [grids[0]]
            if n == 3:
                columns.append(grids[1][p1])
            if n > 1:
                columns.append(grids[-1][perms[k]])
            best_atoms = np.column_stack(columns)
    logger.info("exhaustive %s over %d couplings: %.10g", direction, count, sign * best_value)
    return sign * best_value, DiscreteCoupling(best_atoms)


def corner_coupling(marginals, r, s, tail_spec="comonotone", m=None, cfg=None, functional=None):
    """
    Three-block coupling: a comonotone body on levels in (r, s] with chosen tail couplings.

    The lower block holds each marginal's atoms at levels <= r, the upper block those at levels > s.
    Inside each tail block the coupling is comonotone, antithetic (first column ascending, the others
    descending) or "ra": rearranged to maximize the functional, by default the IRD with windows
    [0, r] and [s, 1].

    Parameters
    ----------
    tail_spec : str or tuple of (str, str)
        One spec for both tails, or (lower, upper).

    Returns
    -------
    DiscreteCoupling
        With blocks {"lower", "body", "upper"}.

    Raises
    ------
    ConstraintViolation
        If not 0 < r <= s < 1 or a tail spec is unknown.
    """
    if not 0.0 < r <= s < 1.0:
        raise ConstraintViolation("corner coupling needs 0 < r <= s < 1", r=r, s=s)
    specs = (tail_spec, tail_spec) if isinstance(tail_spec, str) else tuple(tail_spec)
    for spec in specs:
        if spec not in ("comonotone", "antithetic", "ra"):
            raise ConstraintViolation(f"unknown tail spec '{spec}'", tail_spec=spec)
    cfg = cfg or RAConfig.from_defaults()
    m = int(m or cfg.m)
    functional = functional or RiskFunctional.ird(0.0, r, s, 1.0)
    u = (np.arange(1, m + 1) - 0.5) / m
    low = int(np.count_nonzero(u <= r))
    high = int(np.count_nonzero(u > s))
    blocks = {"lower": (0, low), "body": (low, m - high), "upper": (m - high, m)}
    atoms = np.column_stack([discretize(d, m) for d in marginals])

    for name, spec in zip(("lower", "upper"), specs):
        start, stop = blocks[name]
        if stop - start < 2 or spec == "comonotone":
            continue
        if spec == "antithetic":
            atoms[start:stop, 1:] = atoms[start:stop, 1:][::-1]
        else:
            ra = BlockRearrangement(functional.sorted_weights(m), np.arange(start, stop), cfg)
            ra.run(atoms)
    coupling = DiscreteCoupling(atoms, blocks)
    logger.info("corner coupling (%s) functional value %.10g", "/".join(specs), coupling.evaluate(functional))
    return coupling


def blocks_disjoint(coupling):
    """Max of the lower-block row sums <= min of the upper-block row sums."""
    sums = coupling.row_sums()
    lo_start, lo_stop = coupling.blocks["lower"]
    up_start, up_stop = coupling.blocks["upper"]
    if lo_stop <= lo_start or up_stop <= up_start:
        return True
    return bool(sums[lo_start:lo_stop].max() <= sums[up_start:up_stop].min())


def discretization_slack(marginals, r, s, m):
    """
    Empirical slack delta(m): change of the comonotone R over [r, r+s] between m and 2m atoms.
    """
    functional = RiskFunctional.rvar(r, s)
    values = []
    for size in (m, 2 * m):
        sums = np.sum([discretize(d, size) for d in marginals], axis=0)
        values.append(float(functional.sorted_weights(size) @ sums))
    return abs(values[1] - values[0])


def certify_bound(problem, result, cfg=None, tau_sharp=None):
    """
    Oracle track of sharpness certification.

    The oracle is exhaustive enumeration when it is small enough, the rearrangement estimate
    otherwise. A gap within tau_sharp certifies the bound by oracle; otherwise the condition-based
    status is kept, and a condition-certified bound with a large gap is logged.

    Returns
    -------
    BoundResult
        A copy of result with oracle_value, oracle_gap and possibly sharp updated.
    """
    cfg = cfg or RAConfig.from_defaults()
    tau = tau_sharp if tau_sharp is not None else load_defaults()["tau_sharp"]
    small = cfg.m <= 8 and problem.n <= 3 and math.factorial(cfg.m) ** (problem.n - 1) <= _EXHAUSTIVE_LIMIT
    if small:
        oracle, _ = exhaustive_extreme(problem.marginals, problem.functional, problem.direction, cfg.m)
    elif problem.direction == "sup":
        oracle, _ = ra_sup_rvar(problem.marginals, problem.r, problem.s, cfg)
    else:
        oracle, _ = ra_inf_rvar(problem.marginals, problem.r, problem.s, cfg)
    gap = float(result.value - oracle)
    if abs(gap) <= tau:
        sharp = CERTIFIED_BY_ORACLE
    else:
        sharp = result.sharp if result.sharp == CERTIFIED_BY_CONDITION else UNKNOWN
        if result.sharp == CERTIFIED_BY_CONDITION:
            logger.warning("condition-certified bound %.10g is %.3g away from the oracle", result.value, gap)
        else:
            logger.warning("oracle did not reach the bound within tau_sharp (gap %.3g)", gap)
    return replace(result, oracle_value=float(oracle), oracle_gap=gap, sharp=sharp, tau_sharp=tau)
