"""SPD manifold layers and differentiable architecture search."""

import json

from ._core import *  # noqa: F401,F403
from ._core import __version__, default_config
from ._core import search as _search
from ._core import train as _train


def _as_json(obj):
    return obj if isinstance(obj, str) else json.dumps(obj)


def config(**overrides):
    """Default run configuration as a dict, with top-level sections updated."""
    cfg = json.loads(default_config())
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg


def search(cfg):
    """Runs an architecture search; `cfg` is a dict or JSON string."""
    out = _search(_as_json(cfg))
    out["genotype"] = json.loads(out["genotype"])
    return out


def train(cfg, genotype):
    """Trains the discrete model named by `genotype` from scratch."""
    return _train(_as_json(cfg), _as_json(genotype))
