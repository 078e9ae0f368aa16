"""Versioned YAML run configuration shared by the command line tools."""

from __future__ import annotations

import copy
import hashlib
import json

import yaml

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 20240101,
    "out": "results",
    "model": {
        "n_streams": 10,
        "C": 1.0,
        "gamma": 1.1,
        "sigma": 2.0,
        "ar": [],
        # time origin of the signal profile for the detect/calibrate commands
        "anchor": "change",
    },
    "priors": {
        "rho": 0.1,
        "pi_minus1": 0.0,
        "q": 0.1,
        "K": None,
    },
    "detector": {
        "statistic": "R_pW",
        "theta": 0.1,
        "grid": [0.1, 0.3, 0.01],
        "head_start": 0.0,
        "window": 200,
        "alpha": 0.01,
        "pfa_levels": [0.1, 0.01],
        "threshold_method": "calibrated",
        "calibration_budget": 10000,
    },
    "experiment": {
        "budget": 100000,
        "calibration_budget": None,
        "m_values": [1, 2, 3],
        "pfa_levels": [0.1, 0.05, 0.01, 0.005, 0.001, 0.0005],
        "detectors": ["R_ptheta", "R_pW"],
        "threshold_method": "calibrated",
        # the Monte Carlo harness counts the profile from the start of observation
        "anchor": "absolute",
        "window": None,
        "post_horizon": None,
        "workers": 1,
    },
    "streak": {
        "height": 160,
        "width": 64,
        "sigma": 1.0,
        "n_angles": 21,
        "max_angle_deg": 10.0,
        "half_width": 4,
        "center_x": None,
        "L": 20,
        "K": 5,
        "w_psf": 1.5,
        "false_alarm": 0.01,
        "calibration_frames": 1000,
        "synthetic": {"x0": 31.5, "y0": 40.0, "x1": 31.5, "y1": 110.0, "theta": 3.0},
    },
}

_CHOICES = {
    ("model", "anchor"): ("absolute", "change"),
    ("experiment", "anchor"): ("absolute", "change"),
    ("detector", "statistic"): ("R_pW", "R_ptheta"),
    ("detector", "threshold_method"): ("calibrated", "lemma1"),
    ("experiment", "threshold_method"): ("calibrated", "lemma1"),
}


class ConfigError(ValueError):
    """Invalid or unsupported configuration document."""


def _merge(defaults: dict, given: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown key '{where}'")
        dv = defaults[key]
        if isinstance(dv, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be a mapping")
            out[key] = _merge(dv, value, where)
            continue
        out[key] = _check_type(value, dv, where)
    return out


def _check_type(value, default, where):
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{where}' must be true/false")
        return value
    if isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{where}' must be a number")
        if isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
            if not value.is_integer():
                raise ConfigError(f"'{where}' must be an integer")
            return int(value)
        return float(value) if isinstance(default, float) else value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"'{where}' must be a list")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"'{where}' must be a string")
        return value
    return value


def resolve(doc: dict | None) -> dict:
    """Fill defaults and validate; raises :class:`ConfigError`."""
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    cfg = _merge(DEFAULTS, doc, "")
    for (block, key), allowed in _CHOICES.items():
        if cfg[block][key] not in allowed:
            raise ConfigError(f"'{block}.{key}' must be one of {allowed}")
    if cfg["model"]["n_streams"] < 1:
        raise ConfigError("'model.n_streams' must be >= 1")
    if len(cfg["detector"]["grid"]) != 3:
        raise ConfigError("'detector.grid' must be [lo, hi, step]")
    for block in ("detector", "experiment"):
        for a in cfg[block]["pfa_levels"]:
            if not 0 < a < 1:
                raise ConfigError(f"'{block}.pfa_levels' entries must lie in (0, 1)")
    if not 0 < cfg["detector"]["alpha"] < 1:
        raise ConfigError("'detector.alpha' must lie in (0, 1)")
    if cfg["experiment"]["budget"] < 1000:
        raise ConfigError("'experiment.budget' must be at least 1000")
    return cfg


def load(path) -> dict:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from None
    return resolve(doc)


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False, default_flow_style=None)


def save(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump(cfg))


def fingerprint(cfg: dict, *blocks: str) -> str:
    """Stable hash of the named blocks plus the seed."""
    sub = {b: cfg[b] for b in blocks}
    sub["seed"] = cfg["seed"]
    return hashlib.sha256(json.dumps(sub, sort_keys=True).encode()).hexdigest()[:16]
