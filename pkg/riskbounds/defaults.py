import json
import os
from functools import lru_cache

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")


@lru_cache(maxsize=None)
def _load_json(name):
    with open(os.path.join(DATA_DIR, name), "r") as f:
        return json.load(f)


def load_defaults():
    """
    Return a fresh copy of the numerical defaults shipped in data/defaults.json.
    """
    return json.loads(json.dumps(_load_json("defaults.json")))


def load_run_config_schema():
    """
    Return a fresh copy of the run-config schema shipped in data/run_config_schema.json.
    """
    return json.loads(json.dumps(_load_json("run_config_schema.json")))
