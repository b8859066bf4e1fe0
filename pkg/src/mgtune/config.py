"""TOML experiment configuration with strict key checking.

Configs are flat tables per concern ([problem], [ensemble], [cycle], ...).
Unknown or missing keys fail loudly with the offending key named; silent
defaults are limited to values whose meaning cannot drift between
experiments.
"""

from __future__ import annotations

from dataclasses import fields

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .bench import EnsembleProtocol
from .optimize import TrainConfig
from .smoothers import SmootherSpec
from .spectral import RateWindow


class ConfigError(ValueError):
    pass


_SECTIONS = {
    "problem": {"m", "hx", "hy", "delta", "mu", "sigma", "poisson",
                "aniso_fraction", "aniso_hy"},
    "ensemble": {"samples", "seed"},
    "cycle": {"kind", "nu1", "nu2", "prolongation", "coarsest_m", "cycles"},
    "rate": {"first", "last"},
    "smoother": {"type", "omegas"},
    "entries": {"label", "type", "omegas", "theta_file"},
    "sweep": {"start", "stop", "step", "subset"},
    "spectrum": {"alphas"},
    "train": {f.name for f in fields(TrainConfig)} | {"theta0", "refine"},
    "search": {"step", "bounds_lo", "bounds_hi", "restarts", "max_rounds"},
    "output": {"prefix"},
}


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    for section, content in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        items = content if isinstance(content, list) else [content]
        for table in items:
            if not isinstance(table, dict):
                raise ConfigError(f"section [{section}] must be a table")
            for key in table:
                if key not in _SECTIONS[section]:
                    raise ConfigError(
                        f"unknown key {key!r} in section [{section}]"
                    )
    return data


def require(data: dict, section: str, key: str):
    try:
        table = data[section]
    except KeyError:
        raise ConfigError(
            f"missing required section [{section}] (needed for key {key!r})"
        ) from None
    try:
        return table[key]
    except KeyError:
        raise ConfigError(
            f"missing required key {key!r} in section [{section}]"
        ) from None


def _merge(defaults: dict, data: dict, section: str) -> dict:
    out = dict(defaults)
    out.update(data.get(section, {}))
    return out


def protocol_from_config(data: dict, seed_override=None) -> EnsembleProtocol:
    problem = _merge({}, data, "problem")
    ensemble = _merge({}, data, "ensemble")
    cycle = _merge({}, data, "cycle")
    rate = _merge({}, data, "rate")
    m = require(data, "problem", "m")
    samples = require(data, "ensemble", "samples")
    seed = ensemble.get("seed", 0) if seed_override is None else seed_override
    window = RateWindow(rate.get("first", 15), rate.get("last", 40))
    return EnsembleProtocol(
        m=int(m),
        samples=int(samples),
        seed=int(seed),
        hx=float(problem.get("hx", 1.0)),
        hy=float(problem.get("hy", 1.0)),
        delta=float(problem.get("delta", 0.0)),
        mu=float(problem.get("mu", 0.0)),
        sigma=float(problem.get("sigma", 1.0)),
        poisson=bool(problem.get("poisson", False)),
        aniso_fraction=float(problem.get("aniso_fraction", 0.0)),
        aniso_hy=float(problem.get("aniso_hy", 2.0)),
        kind=cycle.get("kind", "v"),
        nu1=int(cycle.get("nu1", 1)),
        nu2=int(cycle.get("nu2", 0)),
        prolongation=cycle.get("prolongation", "bilinear"),
        coarsest_m=int(cycle.get("coarsest_m", 4)),
        cycles=int(cycle.get("cycles", 45)),
        window=window,
    )


def smoother_from_table(table: dict, theta=None) -> SmootherSpec:
    cfg = {"type": table.get("type", "jacobi")}
    if theta is not None:
        cfg["omegas"] = list(theta)
    elif "omegas" in table:
        cfg["omegas"] = list(table["omegas"])
    return SmootherSpec.from_config(cfg)


def train_config_from(data: dict, seed_override=None) -> TrainConfig:
    table = dict(data.get("train", {}))
    table.pop("theta0", None)
    refine = table.pop("refine", None)
    if refine is not None:
        table["refine_steps"] = tuple(refine)
    if "pool_size" in table and table["pool_size"] == 0:
        table["pool_size"] = None
    if seed_override is not None:
        table["seed"] = int(seed_override)
    try:
        return TrainConfig(**table)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
