"""Run configuration: every named constant in one place.

Precedence is flags > config file > defaults; the CLI builds an override
dict from flags and merges it over the file values here. All values are
plain numbers so a config round-trips through JSON unchanged.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

_POSITIVE = {
    "timestep", "t_o", "t_p", "gamma0", "n_max", "n_min", "n_pour",
    "particle_radius", "particle_mass", "scale",
    "cup_mouth_diameter", "cup_bottom_diameter", "cup_height", "cup_wall",
    "cup_segments", "drop_steps", "rotate_ramp_steps", "rotate_hold_steps",
    "field_steps", "final_rest_steps", "pour_ramp_steps",
    "prefill_settle_steps", "base_clearance", "layer_spacing",
    "plane_clearance", "l0_indent", "solver_iterations", "frame_stride",
    "jobs", "rotate_angle", "field_accel",
}
_NONNEGATIVE = {
    "omega_thr", "restitution", "friction_mesh", "friction_particle",
    "friction_ground", "solver_beta", "solver_slop", "rest_threshold",
}
_INTEGRAL = {
    "t_o", "t_p", "n_max", "n_min", "n_pour", "cup_segments", "drop_steps",
    "rotate_ramp_steps", "rotate_hold_steps", "field_steps",
    "final_rest_steps", "pour_ramp_steps", "prefill_settle_steps",
    "solver_iterations", "frame_stride", "jobs",
}


@dataclass(frozen=True)
class RunConfig:
    # integration and scoring
    timestep: float = 1.0 / 240.0
    gravity_z: float = -9.81
    omega_thr: float = 0.0
    scale: float = 1.0

    # containability phase budget
    t_o: int = 1500
    drop_steps: int = 500
    rotate_angle: float = math.pi / 60.0
    rotate_ramp_steps: int = 50
    rotate_hold_steps: int = 25
    field_accel: float = 0.5
    field_steps: int = 100
    final_rest_steps: int = 200
    n_max: int = 200
    n_min: int = 40
    base_clearance: float = 0.01
    layer_spacing: float = 0.05

    # particles
    particle_radius: float = 0.005
    particle_mass: float = 0.0009
    restitution: float = 0.1
    friction_mesh: float = 0.5
    friction_particle: float = 0.3
    friction_ground: float = 0.5

    # solver
    solver_iterations: int = 4
    solver_beta: float = 0.2
    solver_slop: float = 1e-4
    rest_threshold: float = 0.08

    # pouring
    t_p: int = 600
    pour_ramp_steps: int = 450
    gamma0: float = 62.0 * math.pi / 180.0
    n_pour: int = 60
    prefill_settle_steps: int = 300
    plane_clearance: float = 0.01
    l0_indent: float = 0.01
    cup_mouth_diameter: float = 0.08
    cup_bottom_diameter: float = 0.06
    cup_height: float = 0.10
    cup_wall: float = 0.003
    cup_segments: int = 64

    # orchestration
    jobs: int = 1
    frame_stride: int = 10

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"{f.name} must be a number, got {v!r}")
            if not math.isfinite(v):
                raise ConfigError(f"{f.name} must be finite")
            if f.name in _INTEGRAL:
                if int(v) != v:
                    raise ConfigError(f"{f.name} must be an integer, got {v}")
                object.__setattr__(self, f.name, int(v))
                v = int(v)
            if f.name in _POSITIVE and v <= 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")
            if f.name in _NONNEGATIVE and v < 0:
                raise ConfigError(f"{f.name} must be nonnegative, got {v}")
        if self.gravity_z >= 0:
            raise ConfigError("gravity_z must be negative")
        if self.n_min > self.n_max:
            raise ConfigError("n_min must not exceed n_max")
        if self.drop_steps >= self.t_o:
            raise ConfigError("drop_steps must leave room in the t_o budget")
        if self.pour_ramp_steps > self.t_p:
            raise ConfigError("pour_ramp_steps must fit in t_p")
        if self.cup_bottom_diameter > self.cup_mouth_diameter:
            raise ConfigError("cup mouth must be at least as wide as the bottom")
        if self.cup_segments < 16:
            raise ConfigError("cup_segments must be at least 16")
        if self.restitution > 1.0:
            raise ConfigError("restitution must be at most 1")

    def with_overrides(self, overrides: dict) -> "RunConfig":
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **overrides)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config document must be a JSON object")
        return cls().with_overrides(data)

    @classmethod
    def load(cls, path: str | Path, overrides: dict | None = None) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        cfg = cls.from_dict(data)
        if overrides:
            cfg = cfg.with_overrides(overrides)
        return cfg
