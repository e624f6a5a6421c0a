"""Run configuration: one JSON document plus dotted-path overrides."""

from __future__ import annotations

import copy
import json

from .errors import InvalidArgument

DEFAULTS = {
    "seed": 2024,
    "workers": 1,
    "out": "results",
    "channel": {"K": 2, "sigma2": 1.0},
    # Used by sd-simulate and the state case of cr-check; simulate ignores it.
    "state": {"mu": [1.0, -1.0], "sigma": [[1.0, 0.5], [0.5, 1.0]]},
    "power": {"p_total": 10.0, "p_peak": None},
    "code": {
        "L": 256,
        "M": [16, 16],
        "lam": 0.1,
        "master_seed": 0,
        "bits_per_symbol": None,
        "reps": None,          # fixed reps skip the search but are still measured
        "p_use": None,         # None: largest power-compliant value
        "compensate_mean": True,
    },
    "calibration": {"epsilon_target": None, "trials": 100000, "max_reps": 4096,
                    "with_state": False},  # with_state only affects the calibrate command
    "type1": {"identities": 64, "trials": 1000},
    "type2": {"pairs": 1000, "trials": 1000, "distinguished_sender": None},
    "cr_check": {"L": [2, 16, 64, 1024], "samples": 1000000, "sigma_y_scale": 1.0,
                 "with_state": True, "alpha": 0.01},
    "bounds": {"L": [16, 64, 128], "lam": [0.2, 0.25, 0.35], "M": [4, 16, 256]},
    "rates": {"n": [16], "kinds": ["exponential", "super-exponential", "doubly-exponential"],
              "log2_N": [], "L": [256, 4096, 65536, 1048576], "lam": 0.25, "M": 256},
    "collisions": {"L": 4096, "M": 16, "pairs": 10000, "tail_lam": 0.25, "tail_M": 256,
                   "tail_L": 1024, "tail_pairs": 100000,
                   "psi": {"L": 64, "M": 4, "lam": 0.35, "pair_trials": 1000000,
                           "source": "bernoulli"}},
}


def _merge(base, extra, path=""):
    for key, value in extra.items():
        where = f"{path}{key}"
        if key not in base:
            raise InvalidArgument(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, where + ".")
        else:
            base[key] = value


def parse_value(text):
    """JSON literal if it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, assignment):
    if "=" not in assignment:
        raise InvalidArgument(f"override {assignment!r} is not KEY=VALUE")
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise InvalidArgument(f"unknown config key {path!r}")
        node = node[k]
    if keys[-1] not in node:
        raise InvalidArgument(f"unknown config key {path!r}")
    node[keys[-1]] = parse_value(raw)


def load_config(path=None, overrides=()):
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidArgument(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise InvalidArgument("config must be a JSON object")
        # A results.json carries its config under "config".
        if "config" in doc and isinstance(doc["config"], dict):
            doc = doc["config"]
        _merge(cfg, doc)
    for item in overrides:
        apply_override(cfg, item)
    return cfg


def dumps(obj):
    """Canonical JSON used for every emitted file."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True)
