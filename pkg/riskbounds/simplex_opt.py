import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import qmc

from .defaults import load_defaults
from .errors import ConstraintViolation, InfeasibleConstraint, InvalidParams, OptimizerFailure

logger = logging.getLogger(__name__)

_SUM_TOL = 1e-12
_MIN_STEP = 1e-12


@dataclass(frozen=True)
class SimplexConstraint:
    """
    Feasible set {(beta0, beta_1..beta_n) >= 0 : sum = scale, beta0 >= beta0_min}.

    With beta0_open the point beta0 = 0 belongs to the closure only; optima there are flagged.
    """
    n: int
    scale: float
    beta0_min: float = 0.0
    beta0_open: bool = True

    def __post_init__(self):
        if int(self.n) < 1:
            raise InfeasibleConstraint("need at least one beta", n=self.n)
        if not self.scale > 0:
            raise InfeasibleConstraint("scale must be positive", scale=self.scale)
        if self.beta0_min < 0 or self.beta0_min > self.scale + _SUM_TOL:
            raise InfeasibleConstraint(
                "beta0_min must lie in [0, scale]", beta0_min=self.beta0_min, scale=self.scale
            )
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "beta0_min", float(min(self.beta0_min, self.scale)))

    @property
    def slack(self):
        return self.scale - self.beta0_min

    def to_point(self, weights):
        """Map weights on the standard (n+1)-simplex onto the feasible set."""
        w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        w = w / w.sum()
        vec = self.slack * w
        vec[0] += self.beta0_min
        return SimplexPoint.from_vector(vec, self.scale)

    def contains(self, point, tol=_SUM_TOL):
        return (
            len(point.betas) == self.n
            and point.beta0 >= self.beta0_min - tol
            and abs(point.scale - self.scale) <= tol
        )


@dataclass(frozen=True)
class SimplexPoint:
    """
    Decision variable (beta0, beta_1, ..., beta_n) of the bound optimizations.
    """
    beta0: float
    betas: tuple
    scale: float

    def __post_init__(self):
        betas = tuple(float(b) for b in self.betas)
        object.__setattr__(self, "betas", betas)
        if self.beta0 < -_SUM_TOL or any(b < -_SUM_TOL for b in betas):
            raise ConstraintViolation("simplex coordinates must be nonnegative", beta0=self.beta0, betas=list(betas))
        total = self.beta0 + sum(betas)
        if abs(total - self.scale) > _SUM_TOL * max(1.0, abs(self.scale)):
            raise ConstraintViolation("simplex coordinates must sum to scale", total=total, scale=self.scale)

    @classmethod
    def from_vector(cls, vec, scale):
        vec = np.clip(np.asarray(vec, dtype=float), 0.0, None)
        return cls(float(vec[0]), tuple(float(v) for v in vec[1:]), float(scale))

    @property
    def n(self):
        return len(self.betas)

    @property
    def on_boundary(self):
        """True when beta0 sits at 0, outside the open simplex."""
        return self.beta0 <= 0.0

    def as_vector(self):
        return np.array((self.beta0,) + self.betas)

    def to_dict(self):
        return {"beta0": self.beta0, "betas": list(self.betas), "scale": self.scale, "on_boundary": self.on_boundary}


@dataclass(frozen=True)
class SearchConfig:
    coarse_grid_resolution: int = 12
    lhs_samples: int = 5000
    refine_rounds: int = 4
    local_polish: bool = True
    tol: float = 1e-8
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.coarse_grid_resolution < 2:
            raise InvalidParams("coarse_grid_resolution must be >= 2")
        if self.refine_rounds < 0:
            raise InvalidParams("refine_rounds must be >= 0")

    @classmethod
    def from_defaults(cls, **overrides):
        defaults = load_defaults()
        values = dict(defaults["search"], tol=defaults["tau_opt"])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def to_dict(self):
        return asdict(self)


def batch_evaluate(objective, points, jobs=1):
    """
    Evaluate a pure objective on a list of SimplexPoints, optionally on a thread pool.

    Returns
    -------
    numpy.ndarray
        Objective values; NaN where the objective returned a non-number.
    """
    if jobs and jobs > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(objective, points))
    else:
        values = [objective(p) for p in points]
    return np.array([float(v) if v is not None else np.nan for v in values])


def project(raw, constraint):
    """
    Euclidean projection onto the feasible closure.

    The vector is projected onto {x >= 0, sum x = scale}; if beta0 then falls below beta0_min it is
    raised to beta0_min and the betas are rescaled proportionally to sum to scale - beta0_min.

    Raises
    ------
    InfeasibleConstraint
        If raw does not have n+1 entries.
    """
    v = np.asarray(raw, dtype=float).ravel()
    if v.size != constraint.n + 1:
        raise InfeasibleConstraint("raw vector must have n+1 entries", size=int(v.size), n=constraint.n)
    x = _project_to_simplex(v, constraint.scale)
    if x[0] < constraint.beta0_min:
        x[0] = constraint.beta0_min
        rest = x[1:]
        total = rest.sum()
        target = constraint.scale - constraint.beta0_min
        x[1:] = rest * (target / total) if total > 0 else target / constraint.n
    return SimplexPoint.from_vector(x, constraint.scale)


def optimize(objective, constraint, direction="min", config=None):
    """
    Minimize or maximize an objective over the scaled simplex with one lower bound on beta0.

    The search runs a coarse lattice (n <= 3) or Latin-hypercube sample (n > 3) plus all vertices,
    then pattern-search refinement rounds with halving step, then an optional polish down to a step
    of 1e-12. Equal values are broken toward the lexicographically smallest point.

    Parameters
    ----------
    objective : callable
        SimplexPoint -> float, pure.
    constraint : SimplexConstraint
    direction : str
        "min" or "max".
    config : SearchConfig, optional

    Returns
    -------
    tuple of (SimplexPoint, float)

    Raises
    ------
    OptimizerFailure
        If no candidate has a finite value; the best candidate is attached to the exception.
    """
    if direction not in ("min", "max"):
        raise InvalidParams("direction must be 'min' or 'max'", direction=direction)
    config = config or SearchConfig.from_defaults()
    sign = 1.0 if direction == "min" else -1.0
    search = _Search(objective, constraint, sign, config)

    if constraint.slack <= 0:
        search.consider([np.eye(constraint.n + 1)[0]])
    else:
        search.consider(_coarse_candidates(constraint.n, config))
        logger.debug("coarse search: best %.12g after %d evaluations", search.best_value, search.evaluations)
        step = 1.0 / config.coarse_grid_resolution
        for _ in range(config.refine_rounds):
            search.pattern(step)
            step /= 2.0
            logger.debug("refine step %.3g: best %.12g", step, search.best_value)
        if config.local_polish:
            while step >= _MIN_STEP:
                search.pattern(step)
                step /= 2.0

    if not np.isfinite(search.best_loss):
        raise OptimizerFailure(
            "no finite objective value on the feasible set",
            best_point=search.best_point,
            best_value=search.best_value,
        )
    point = search.best_point
    if constraint.beta0_open and point.on_boundary:
        logger.warning("optimum attained on the boundary beta0 = 0 of the closure")
    logger.debug("optimize(%s): %.12g at %s (%d evaluations)", direction, search.best_value, point, search.evaluations)
    return point, search.best_value


# Helper Methods
class _Search():
    """Mutable best-so-far state confined to one optimize call."""

    def __init__(self, objective, constraint, sign, config):
        self.objective = objective
        self.constraint = constraint
        self.sign = sign
        self.config = config
        self.best_weights = None
        self.best_point = None
        self.best_loss = np.inf
        self.best_value = np.nan
        self.evaluations = 0

    def consider(self, weight_list):
        """Evaluate candidates; accept the best one if it improves strictly (ties: lexicographic)."""
        if not weight_list:
            return False
        points = [self.constraint.to_point(w) for w in weight_list]
        values = batch_evaluate(self.objective, points, self.config.jobs)
        self.evaluations += len(points)
        losses = np.where(np.isnan(values), np.inf, self.sign * values)
        best = np.min(losses)
        if self.best_point is not None and not best < self.best_loss:
            return False
        tied = [i for i in np.flatnonzero(losses == best)]
        i = min(tied, key=lambda j: tuple(points[j].as_vector()))
        if self.best_point is None or best < self.best_loss:
            self.best_weights = np.clip(np.asarray(weight_list[i], dtype=float), 0.0, None)
            self.best_weights /= self.best_weights.sum()
            self.best_point = points[i]
            self.best_loss = best
            self.best_value = float(values[i])
            return True
        return False

    def pattern(self, step, max_moves=100):
        """Repeat improving moves of the given step until none improves."""
        for _ in range(max_moves):
            if not self.consider(_moves(self.best_weights, step)):
                return


def _moves(w, step):
    """Pairwise mass transfers and moves toward/away from each vertex, kept on the simplex."""
    k = w.size
    out = []
    for j, i in itertools.permutations(range(k), 2):
        amount = min(step, w[i])
        if amount > 0:
            cand = w.copy()
            cand[i] -= amount
            cand[j] += amount
            out.append(cand)
    eye = np.eye(k)
    for j in range(k):
        toward = (1.0 - step) * w + step * eye[j]
        out.append(toward)
        if w[j] < 1.0:
            lam = min(step, w[j] / (1.0 - w[j]))
            if lam > 0:
                out.append((1.0 + lam) * w - lam * eye[j])
    return out


def _coarse_candidates(n, config):
    k = n + 1
    candidates = list(np.eye(k)) + [np.full(k, 1.0 / k)]
    if n <= 3:
        res = config.coarse_grid_resolution
        # stars and bars: compositions of res into k parts
        for bars in itertools.combinations(range(res + k - 1), k - 1):
            edges = (-1,) + bars + (res + k - 1,)
            parts = [edges[i + 1] - edges[i] - 1 for i in range(k)]
            candidates.append(np.array(parts, dtype=float) / res)
    else:
        sampler = qmc.LatinHypercube(d=k, seed=config.seed)
        u = np.clip(sampler.random(config.lhs_samples), 1e-12, 1.0)
        e = -np.log(u)
        candidates.extend(e / e.sum(axis=1, keepdims=True))
    return candidates


def _project_to_simplex(v, scale):
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - scale
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)
