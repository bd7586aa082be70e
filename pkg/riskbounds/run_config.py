"""
Run configurations: parsing and validation against the shipped schema, dispatch to the library and
result documents.
"""
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import pandas as pd

from .bounds import (
    BoundProblem,
    bllw_lower,
    bllw_upper,
    ird_sup,
    lower_bound_rvar,
    quantile_diff_sup,
    upper_bound_rvar,
)
from .defaults import load_defaults, load_run_config_schema
from .dist_core import RiskFunctional, from_spec
from .errors import ConfigParseError, ConfigValidationError, RiskBoundsError
from .oracle import RAConfig, certify_bound, corner_coupling, ra_inf_rvar, ra_sup_rvar
from .sharing import (
    SharingProblem,
    allocation_sequence,
    dual_sup,
    evaluate_allocation,
    evaluate_dual,
    inf_convolution,
    optimal_allocation,
    sequence_error,
    sequence_level,
    verify_dependence,
)
from .simplex_opt import SearchConfig

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"

_TYPES = {
    "string": (str,),
    "array": (list,),
    "object": (dict,),
    "boolean": (bool,),
}


@dataclass(frozen=True)
class RunConfig:
    """
    A validated run configuration with every default filled in.

    defaults_applied lists the keys (dotted for nested settings) that were not given explicitly.
    """
    command: str
    marginals: tuple = ()
    r: float = None
    s: float = None
    r1: float = None
    s1: float = None
    r2: float = None
    s2: float = None
    direction: str = None
    oracle: bool = None
    total: dict = None
    betas: tuple = ()
    m: int = None
    t: float = None
    m_param: float = None
    exact: bool = None
    sweep: str = None
    jobs: int = None
    tau_sharp: float = None
    search: dict = None
    ra: dict = None
    output: dict = None
    base_dir: str = None
    defaults_applied: tuple = field(default_factory=tuple)

    @property
    def allowed_keys(self):
        spec = load_run_config_schema()["commands"][self.command]
        return spec["required"] + spec["optional"]

    def search_config(self):
        return SearchConfig(**self.search) if self.search is not None else SearchConfig.from_defaults()

    def ra_config(self):
        return RAConfig(**self.ra) if self.ra is not None else RAConfig.from_defaults()

    def to_dict(self):
        """The config as it re-parses: command plus every applicable key that is set."""
        out = {"command": self.command}
        for key in self.allowed_keys:
            value = getattr(self, key)
            if value is None:
                continue
            out[key] = list(value) if isinstance(value, tuple) else value
        return out


def parse_config(text, base_dir=None, command=None, overrides=None):
    """
    Parse and validate a JSON run configuration.

    A result document is accepted as well; its embedded "config" is used, so a run can be
    reproduced from its own output.

    Parameters
    ----------
    text : str
    base_dir : str, optional
        Directory relative CSV paths are resolved against.
    command : str, optional
        Command to assume when the text names none; must agree with it otherwise.
    overrides : dict, optional
        Top-level keys replacing those of the text (nested output settings are merged).

    Returns
    -------
    RunConfig

    Raises
    ------
    ConfigParseError
        Malformed JSON (with line and column) or a value of the wrong type (with the field).
    ConfigValidationError
        Naming the violated requirement, for instance "s required" or "beta in (0,1)".
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(f"invalid JSON: {e.msg}", line=e.lineno, column=e.colno) from e
    if not isinstance(raw, dict):
        raise ConfigParseError("config must be a JSON object", field="$")
    if "status" in raw and isinstance(raw.get("config"), dict):
        raw = raw["config"]
    raw = dict(raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "output":
            value = dict(raw.get("output") or {}, **value)
        raw[key] = value

    if command is not None:
        given = raw.setdefault("command", command)
        if given != command:
            raise ConfigValidationError(f"config command '{given}' does not match '{command}'", field="command")
    schema = load_run_config_schema()
    name = raw.get("command")
    if name is None:
        raise ConfigValidationError("command required", field="command")
    if name not in schema["commands"]:
        raise ConfigValidationError(f"unknown command '{name}'", field="command", known=sorted(schema["commands"]))

    spec = schema["commands"][name]
    allowed = {"command"} | set(spec["required"]) | set(spec["optional"])
    for key in raw:
        if key not in allowed:
            raise ConfigValidationError(f"unknown key '{key}'", field=key)
    for key in spec["required"]:
        if key not in raw:
            raise ConfigValidationError(f"{key} required", field=key)
    for key, value in raw.items():
        _check_type(key, value, schema["properties"][key])

    applied = []
    values = dict(raw)
    for key in spec["optional"]:
        if key in ("search", "ra", "output"):
            continue
        if key not in values and key in schema["defaults"]:
            values[key] = schema["defaults"][key]
            applied.append(key)
    if "tau_sharp" in spec["optional"] and "tau_sharp" not in values:
        values["tau_sharp"] = load_defaults()["tau_sharp"]
        applied.append("tau_sharp")
    if "search" in spec["optional"]:
        values["search"] = _nested_defaults("search", values.get("search"), SearchConfig.from_defaults(), applied)
    if "ra" in spec["optional"]:
        values["ra"] = _nested_defaults("ra", values.get("ra"), RAConfig.from_defaults(), applied)
    if "output" in spec["optional"]:
        output = dict(schema["defaults"]["output"])
        for key in output:
            if key not in (values.get("output") or {}):
                applied.append(f"output.{key}")
        output.update(values.get("output") or {})
        if output["format"] not in ("json", "csv"):
            raise ConfigValidationError("output.format must be json or csv", field="output.format")
        values["output"] = output

    for key in ("marginals", "betas"):
        if key in values:
            values[key] = tuple(values[key])
    config = RunConfig(base_dir=base_dir, defaults_applied=tuple(applied), **values)
    _validate(config)
    if applied:
        logger.info("defaults applied: %s", ", ".join(applied))
    return config


def load_config(path, command=None, overrides=None):
    """Read and parse a run configuration file; relative CSV paths resolve next to it."""
    with open(path, "r") as f:
        text = f.read()
    return parse_config(text, os.path.dirname(os.path.abspath(path)), command, overrides)


def run(config, output_dir=None, output_path=None):
    """
    Execute a RunConfig and write its artifacts.

    The result document always goes to a JSON file; bulk tables (allocations, couplings, compare
    sweeps) go to CSV files next to it.

    Returns
    -------
    tuple of (int, dict)
        Exit code (0 success, 2 computation error) and the result or error document.
    """
    start = time.perf_counter()
    path = _output_path(config, output_dir, output_path)
    try:
        results, tables = COMMANDS[config.command](config)
    except RiskBoundsError as e:
        logger.error("%s failed: %s", config.command, e.message)
        document = error_document(e)
        _write_json(document, path)
        return e.exit_code, document

    artifacts = []
    want_csv = config.output["format"] == "csv" or config.command == "compare"
    if want_csv:
        stem, _ = os.path.splitext(path)
        for name, table in tables.items():
            table_path = f"{stem}_{name}.csv"
            table.to_csv(table_path, index=False)
            artifacts.append(table_path)

    search = config.search_config() if config.search is not None else None
    ra = config.ra_config() if config.ra is not None else None
    document = {
        "schema_version": SCHEMA_VERSION,
        "status": "ok",
        "command": config.command,
        "results": results,
        "config": config.to_dict(),
        "defaults_applied": list(config.defaults_applied),
        "seeds": {"search": search.seed if search else None, "ra": ra.seed if ra else None},
        "tolerances": _tolerances(config, search, ra),
        "wall_time": time.perf_counter() - start,
        "artifacts": [path] + artifacts,
    }
    _write_json(document, path)
    logger.info("result document written to %s", path)
    return 0, document


def error_document(error):
    return {
        "schema_version": SCHEMA_VERSION,
        "status": "error",
        "code": error.code,
        "message": error.message,
        "details": error.details,
    }


def parse_sweep(text):
    """
    Parse "s=start:stop:step" into the list of s values, stop included.

    Raises
    ------
    ConfigParseError
        If the text is not of that form.
    """
    try:
        name, bounds = text.split("=", 1)
        start, stop, step = (float(v) for v in bounds.split(":"))
    except ValueError as e:
        raise ConfigParseError("sweep must look like s=start:stop:step", field="sweep", sweep=text) from e
    if name.strip() != "s":
        raise ConfigValidationError("only s can be swept", field="sweep")
    if not step > 0 or stop < start:
        raise ConfigValidationError("sweep needs step > 0 and stop >= start", field="sweep")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 12) for k in range(count)]


# Command handlers
def _run_bound(config):
    problem = BoundProblem.rvar(_marginals(config), config.r, config.s, config.direction)
    search = config.search_config()
    if config.direction == "sup":
        result = upper_bound_rvar(problem, search)
    else:
        result = lower_bound_rvar(problem, search)
    if config.oracle:
        result = certify_bound(problem, result, config.ra_config(), config.tau_sharp)
    return {"bound": result.to_dict()}, {}


def _run_ird(config):
    functional = RiskFunctional.ird(config.r1, config.s1, config.r2, config.s2)
    marginals = _marginals(config)
    problem = BoundProblem(marginals, config.r1, config.s2 - config.r1, "sup", functional)
    result = ird_sup(problem, config.search_config())
    results = {"ird": result.to_dict()}
    tables = {}
    if config.oracle and 0.0 < config.s1 <= config.r2 < 1.0:
        coupling = corner_coupling(marginals, config.s1, config.r2, "ra", cfg=config.ra_config(), functional=functional)
        oracle = coupling.evaluate(functional)
        results["oracle"] = {"value": oracle, "gap": result.value - oracle, "m": coupling.m}
        tables["coupling"] = coupling.to_frame()
    return results, tables


def _run_qdiff(config):
    result = quantile_diff_sup(_marginals(config), config.r, config.s, config.search_config())
    return {"qdiff": result.to_dict()}, {}


def _run_share(config):
    problem = _sharing_problem(config)
    exact = bool(config.exact)
    lower = inf_convolution(problem, exact)
    allocation = optimal_allocation(problem, config.t, exact)
    exposure = evaluate_allocation(problem, allocation, exact)
    dual_value, _ = dual_sup(problem, exact)
    results = {
        "problem": problem.to_dict(),
        "t": allocation.meta["t"],
        "inf_convolution": float(lower),
        "exposure": float(exposure),
        "gap": float(exposure - lower),
        "dual_sup": float(dual_value),
        "dual_exposure": float(evaluate_dual(problem, allocation, exact)),
        "dependence": verify_dependence(problem, allocation).to_dict(),
    }
    if exact:
        results["exact"] = {"inf_convolution": str(lower), "exposure": str(exposure), "dual_sup": str(dual_value)}
    tables = {"allocation": allocation.to_frame()}
    if config.m_param is not None:
        sequence, seq_exposure = allocation_sequence(problem, config.m_param, exact)
        error = sequence_error(problem, config.m_param, exact)
        results["sequence"] = {
            "m_param": config.m_param,
            "a_m": float(sequence_level(problem, config.m_param)),
            "exposure": float(seq_exposure),
            "error_term": float(error),
            "gap": float(seq_exposure - lower),
        }
        tables["sequence"] = sequence.to_frame()
    return results, tables


def _run_sharpness(config):
    problem = BoundProblem.rvar(_marginals(config), config.r, config.s, config.direction)
    search = config.search_config()
    result = upper_bound_rvar(problem, search) if config.direction == "sup" else lower_bound_rvar(problem, search)
    certified = certify_bound(problem, result, config.ra_config(), config.tau_sharp)
    return {
        "formula": certified.value,
        "oracle": certified.oracle_value,
        "gap": certified.oracle_gap,
        "sharp": certified.sharp,
        "bound": certified.to_dict(),
    }, {}


def _run_compare(config):
    marginals = _marginals(config)
    s_values = parse_sweep(config.sweep) if config.sweep else [config.s]
    s_values = [s for s in s_values if s > 0.0 and config.r + s <= 1.0 + 1e-12]
    if not s_values:
        raise ConfigValidationError("no s value of the sweep fits the window 0 < s <= 1 - r", field="sweep")
    search, ra = config.search_config(), config.ra_config()

    def row(s):
        s = min(s, 1.0 - config.r)
        sup_problem = BoundProblem.rvar(marginals, config.r, s, "sup")
        inf_problem = BoundProblem.rvar(marginals, config.r, s, "inf")
        return {
            "r": config.r,
            "s": s,
            "new_upper": upper_bound_rvar(sup_problem, search).value,
            "bllw_upper": bllw_upper(sup_problem, search).value,
            "oracle_sup": ra_sup_rvar(marginals, config.r, s, ra)[0],
            "new_lower": lower_bound_rvar(inf_problem, search).value,
            "bllw_lower": bllw_lower(inf_problem, search).value,
            "oracle_inf": ra_inf_rvar(marginals, config.r, s, ra)[0],
        }

    jobs = max(1, int(config.jobs or 1))
    if jobs > 1 and len(s_values) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(row, s_values))
    else:
        rows = [row(s) for s in s_values]
    table = pd.DataFrame(rows).sort_values("s").reset_index(drop=True)
    return {"rows": table.to_dict(orient="records")}, {"compare": table}


COMMANDS = {
    "bound": _run_bound,
    "ird": _run_ird,
    "qdiff": _run_qdiff,
    "share": _run_share,
    "sharpness": _run_sharpness,
    "compare": _run_compare,
}


# Helper Methods
def _check_type(key, value, prop):
    kind = prop["type"]
    if kind == "number":
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif kind == "integer":
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, _TYPES[kind])
    if not ok:
        raise ConfigParseError(f"{key} must be of type {kind}", field=key)
    if "enum" in prop and value not in prop["enum"]:
        raise ConfigValidationError(f"{key} must be one of {prop['enum']}", field=key)
    if "keys" in prop:
        for sub in value:
            if sub not in prop["keys"]:
                raise ConfigValidationError(f"unknown key '{key}.{sub}'", field=f"{key}.{sub}")


def _nested_defaults(name, given, default_config, applied):
    given = dict(given or {})
    full = default_config.to_dict()
    for key in full:
        if key not in given:
            applied.append(f"{name}.{key}")
    full.update(given)
    return full


def _validate(config):
    """Command-specific invariants, checked before anything runs."""
    c = config
    if c.command in ("bound", "sharpness"):
        if not (0.0 <= c.r and c.s > 0.0 and c.r + c.s <= 1.0 + 1e-12):
            raise ConfigValidationError("0 <= r < r+s <= 1", field="s")
    if c.command == "qdiff" and not 0.0 < c.r <= c.s < 1.0:
        raise ConfigValidationError("0 < r <= s < 1", field="r")
    if c.command == "ird" and not 0.0 <= c.r1 < c.s1 <= c.r2 < c.s2 <= 1.0:
        raise ConfigValidationError("0 <= r1 < s1 <= r2 < s2 <= 1", field="r1")
    if c.command == "compare":
        if c.s is None and c.sweep is None:
            raise ConfigValidationError("s or sweep required", field="s")
        if not 0.0 <= c.r < 1.0:
            raise ConfigValidationError("0 <= r < 1", field="r")
    if c.command != "share":
        if not c.marginals:
            raise ConfigValidationError("at least one marginal required", field="marginals")
        for i, spec in enumerate(c.marginals):
            if not isinstance(spec, dict) or "family" not in spec:
                raise ConfigValidationError(f"marginals[{i}].family required", field=f"marginals[{i}]")
    if c.command == "share":
        betas = [b for b in c.betas if isinstance(b, (int, float)) and not isinstance(b, bool)]
        if len(betas) != len(c.betas) or not betas or any(b <= 0 for b in betas):
            raise ConfigValidationError("beta_i > 0", field="betas")
        if not 0.0 < math.fsum(betas) < 1.0:
            raise ConfigValidationError("beta in (0,1)", field="betas")
        total = c.total
        if not any(key in total for key in ("values", "path", "family")):
            raise ConfigValidationError("total needs values, path or family", field="total")
        if total.get("family") not in (None, "empirical") and c.m is None:
            raise ConfigValidationError("m required for a parametric total", field="m")


def _marginals(config):
    return [from_spec(spec, config.base_dir) for spec in config.marginals]


def _sharing_problem(config):
    total = dict(config.total)
    if "values" in total:
        return SharingProblem(np.asarray(total["values"], dtype=float), config.betas)
    if total.get("family") in (None, "empirical"):
        total["family"] = "empirical"
        law = from_spec(total, config.base_dir)
        return SharingProblem(law.values, config.betas)
    law = from_spec(total, config.base_dir)
    return SharingProblem.from_distribution(law, config.m, config.betas)


def _output_path(config, output_dir, output_path):
    path = output_path or config.output.get("path") or f"riskbounds_{config.command}.json"
    if not os.path.isabs(path):
        path = os.path.join(output_dir or os.getcwd(), path)
    if not path.endswith(".json"):
        path = os.path.splitext(path)[0] + ".json"
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    return path


def _tolerances(config, search, ra):
    defaults = load_defaults()
    out = {key: defaults[key] for key in ("tau_quad_closed", "tau_quad_adaptive", "eps_end", "tau_opt")}
    if config.tau_sharp is not None:
        out["tau_sharp"] = config.tau_sharp
    if search is not None:
        out["search_tol"] = search.tol
    if ra is not None:
        out["ra_tol"] = ra.tol
    return out


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Fraction):
        return str(value)
    if hasattr(value, "to_dict"):
        return value.to_dict()
    return str(value)


def to_json(document):
    return json.dumps(document, indent=2, default=_json_default)


def _write_json(document, path):
    with open(path, "w") as f:
        f.write(to_json(document))
