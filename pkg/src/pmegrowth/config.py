"""Run configuration: JSON schema, validation, and deterministic hashing.

Every cross-field constraint is checked here before any compute starts,
with messages naming the violated admissibility condition; command code
can assume a valid config.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .evolution import barenblatt_profile
from .field import (Boundary, FieldError, GridField, GridSpec, bump_field,
                    constant_field, step_field, zero_field)
from .model import GrowthKind, GrowthLaw, ModelError


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (exit code 2)."""


_COMMANDS = ("evolve", "certify", "infer", "validate")


def _require(cfg: dict, key: str, ctx: str) -> Any:
    if key not in cfg:
        raise ConfigError(f"missing required field '{key}' in {ctx}")
    return cfg[key]


def load_config(path: str | Path) -> dict:
    try:
        with Path(path).open() as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def build_grid(cfg: dict) -> GridSpec:
    g = _require(cfg, "grid", "config")
    boundary_name = g.get("boundary", "dirichlet")
    try:
        boundary = Boundary(boundary_name)
    except ValueError:
        raise ConfigError(
            f"grid.boundary '{boundary_name}' is not one of "
            f"{[b.value for b in Boundary]}") from None
    try:
        return GridSpec(dim=int(_require(g, "dim", "grid")),
                        half_width=float(_require(g, "half_width", "grid")),
                        points_per_axis=int(_require(g, "points_per_axis", "grid")),
                        boundary=boundary)
    except FieldError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def build_initial(cfg: dict, spec: GridSpec) -> GridField:
    init = _require(cfg, "initial", "config")
    kind = _require(init, "kind", "initial")
    try:
        if kind == "zero":
            return zero_field(spec)
        if kind == "constant":
            return constant_field(spec, float(_require(init, "value", "initial")))
        if kind == "bump":
            return bump_field(spec, float(init.get("amplitude", 1.0)),
                              float(init.get("width", 0.5)),
                              float(init.get("center", 0.0)))
        if kind == "step":
            return step_field(spec, float(init.get("left", 0.0)),
                              float(init.get("right", 1.0)))
        if kind == "barenblatt":
            return barenblatt_profile(spec, float(_require(init, "gamma", "initial")),
                                      float(_require(init, "t0", "initial")),
                                      float(_require(init, "c", "initial")))
    except FieldError as exc:
        raise ConfigError(f"initial: {exc}") from exc
    raise ConfigError(f"initial.kind '{kind}' is not one of "
                      "zero|constant|bump|step|barenblatt")


def build_growth(cfg: dict) -> GrowthLaw:
    g = cfg.get("growth", {"kind": "constant", "g0": 1.0, "beta": 0.0})
    kind_name = g.get("kind", "constant")
    try:
        kind = GrowthKind(kind_name)
    except ValueError:
        raise ConfigError(
            f"growth.kind '{kind_name}' is not one of "
            f"{[k.value for k in GrowthKind]}") from None
    try:
        return GrowthLaw(kind=kind, g0=float(g.get("g0", 1.0)),
                         beta=float(g.get("beta", 0.0)))
    except ModelError as exc:
        raise ConfigError(f"growth: {exc}") from exc


def check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not gamma > 1.0:
        raise ConfigError(f"gamma = {gamma} <= 1 violates power-law admissibility")
    return gamma


def check_tau_admissible(t_final: float, n_steps: int, g0: float) -> float:
    if not t_final > 0:
        raise ConfigError(f"t_final = {t_final} must be positive")
    if n_steps < 1:
        raise ConfigError(f"n_steps = {n_steps} must be >= 1")
    tau = t_final / n_steps
    if tau * g0 >= 1.0:
        raise ConfigError(
            f"tau*G(0) = {tau * g0:.6g} >= 1 violates resolvent admissibility "
            f"(t_final/n_steps too large for this growth law)")
    return tau


def check_window_alignment(windows, spec: GridSpec) -> None:
    from .evolution import EvolutionError, window_mass

    probe = zero_field(spec)
    for w in windows:
        try:
            window_mass(probe, w)
        except EvolutionError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class CommonConfig:
    command: str
    seed: int
    output_dir: Path
    raw: dict = field(repr=False)


def parse_common(cfg: dict, command: str, output_override: str | None = None,
                 seed_override: int | None = None) -> CommonConfig:
    declared = cfg.get("command")
    if declared is not None and declared != command:
        raise ConfigError(f"config declares command '{declared}' but '{command}' was invoked")
    if command not in _COMMANDS:
        raise ConfigError(f"unknown command '{command}'")
    seed = seed_override if seed_override is not None else cfg.get("seed")
    if seed is None:
        raise ConfigError("missing required field 'seed' (reproducibility contract)")
    out = output_override if output_override is not None else cfg.get("output_dir")
    if out is None:
        raise ConfigError("missing required field 'output_dir'")
    return CommonConfig(command=command, seed=int(seed), output_dir=Path(out), raw=cfg)
