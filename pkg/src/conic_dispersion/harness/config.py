"""TOML configuration with strict key validation.

Misspelled keys are hard errors, never silent defaults: every section and
key is checked against the schema below, and the error names the full
dotted path of the offender.
"""

from __future__ import annotations

import copy
import os
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from ..geometry import ChartMetric2D, WarpedMetric

__all__ = ["ConfigError", "load_config", "loads_config", "apply_overrides",
           "metric_from_config", "default_config_path"]


class ConfigError(ValueError):
    pass


_METRIC_KEYS = {"family", "n", "nu", "amplitude", "r_flat", "ang_amp", "R_M"}
_GRID_KEYS = {"r_max", "dr", "n_r", "n_theta", "r_min", "theta_lo", "theta_hi"}
_RUN_KEYS = {"seed", "threads", "tolerance", "cache_dir"}
_EXPERIMENT_KEYS = {
    "flow": {"n_samples", "s_end", "tolerance"},
    "scatter-map": {"n_samples", "tolerance", "n_doublings"},
    "eikonal": {"n_r", "n_theta", "n_vartheta", "theta_window"},
    "transport": {"n_points", "r_max"},
    "wkb": {"s", "rho", "eta_over_r"},
    "oscillatory": {"h_values", "s_values", "r_base", "rho_center"},
    "lp-check": {"n_states", "ell_max", "q"},
    "resolvent": {"lam", "deltas", "weight_k", "ell_max"},
    "smoothing": {"band_indices", "T", "weight_k"},
    "sobolev": {"n_probes"},
    "dispersive": {"t_values", "band_index", "exterior_radius"},
    "strichartz": {"p", "q", "band_indices", "n_t", "bump_center", "bump_width",
                   "r_max", "dr"},
    "nls": {"sigma", "u0_norm", "T", "tolerance", "max_iter", "n_intervals",
            "chirp"},
    "normal-form": {"n_samples", "r_lo", "r_hi"},
    "suite": {"level"},
}


def _check_keys(section: dict, allowed: set, path: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key '{path}.{key}'")


def _validate(cfg: dict) -> dict:
    for section in cfg:
        if section not in ("metric", "grid", "run", "experiment"):
            raise ConfigError(f"unknown section '[{section}]'")
    _check_keys(cfg.get("metric", {}), _METRIC_KEYS, "metric")
    _check_keys(cfg.get("grid", {}), _GRID_KEYS, "grid")
    _check_keys(cfg.get("run", {}), _RUN_KEYS, "run")
    for name, sub in cfg.get("experiment", {}).items():
        if name not in _EXPERIMENT_KEYS:
            raise ConfigError(f"unknown experiment section '[experiment.{name}]'")
        if not isinstance(sub, dict):
            raise ConfigError(f"'experiment.{name}' must be a table")
        _check_keys(sub, _EXPERIMENT_KEYS[name], f"experiment.{name}")
    return cfg


def loads_config(text: str) -> dict:
    try:
        cfg = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    return _validate(cfg)


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_config(fh.read())


def default_config_path() -> str:
    return os.path.join(os.path.dirname(__file__), "reference.toml")


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``key.path=value`` strings; values parse as TOML scalars."""
    out = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        dotted, _, raw = item.partition("=")
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw  # bare string
        node = out
        parts = dotted.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override '{dotted}' descends into a scalar")
        node[parts[-1]] = value
    return _validate(out)


def metric_from_config(cfg: dict):
    """Build the configured metric (warped n=3 by default, chart for n=2)."""
    mc = dict(cfg.get("metric", {}))
    family = mc.get("family", "flat")
    n = int(mc.get("n", 3))
    if n == 2:
        return ChartMetric2D(family=family, nu=float(mc.get("nu", 1.0)),
                             amplitude=float(mc.get("amplitude", 0.0)),
                             R_M=float(mc.get("R_M", 1.0)),
                             ang_amp=float(mc.get("ang_amp", 0.0)))
    return WarpedMetric(n=n, family=family, nu=float(mc.get("nu", 1.0)),
                        amplitude=float(mc.get("amplitude", 0.0)),
                        r_flat=float(mc.get("r_flat", 10.0)))
