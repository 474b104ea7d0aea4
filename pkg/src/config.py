"""YAML configuration, validated section by section with pydantic models."""
from __future__ import annotations

import os
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

DEFAULT_CONFIG = "config/config.yaml"
EUROC_DEFAULTS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                              "config", "euroc_defaults.yaml")

WeightingMode = Literal["none", "lambda", "fp", "combined"]


def load_yaml(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return yaml.safe_load(f) or {}
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}") from e


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SolverConfig(_Section):
    max_loops: int = Field(6, ge=1)
    lm_max_iters: int = Field(20, ge=1)
    chi2_alpha: float = Field(0.05, gt=0.0, lt=1.0)
    epsilon_pass: float = Field(0.8, ge=0.0, le=1.0)
    weight_clamp: Tuple[float, float] = (1e-6, 1e6)
    covisibility_min: int = Field(20, ge=5)
    min_active: int = Field(5, ge=1)
    cauchy_scale: float = Field(1.0, gt=0.0)
    weighting: WeightingMode = "combined"
    estimate_extrinsic: bool = True
    reintegrate_threshold: float = Field(1e-3, ge=0.0)
    condition_max: float = Field(1e8, gt=1.0)
    rel_tol: float = Field(1e-6, gt=0.0)
    step_tol: float = Field(1e-10, gt=0.0)
    state_tol: float = Field(1e-5, gt=0.0)
    max_theta_sigma_deg: float = Field(1.0, gt=0.0)
    pixel_sigma: float = Field(0.5, ge=0.0)
    max_pair_gap: int = Field(2, ge=1)
    window_size: int = Field(10, ge=3)
    keyframe_hz: float = Field(4.0, gt=0.0)

    @field_validator("weight_clamp")
    @classmethod
    def _clamp_order(cls, v):
        lo, hi = v
        if not (0.0 < lo < hi):
            raise ValueError("weight_clamp must satisfy 0 < low < high")
        return v


class RefinerConfig(_Section):
    max_iters: int = Field(10, ge=1)
    step_tol: float = Field(1e-8, gt=0.0)
    divergence_patience: int = Field(3, ge=1)
    parallax_deg: float = Field(1.0, gt=0.0)
    use_prior: bool = True
    stop_on_parallax: bool = False


class ImuConfig(_Section):
    sigma_g: float = Field(1.6968e-4, gt=0.0)
    sigma_bg: float = Field(1.9393e-5, gt=0.0)
    rate_hz: float = Field(200.0, gt=0.0)


class CameraConfig(_Section):
    fx: float = 458.654
    fy: float = 457.296
    cx: float = 367.215
    cy: float = 248.375
    width: int = 752
    height: int = 480
    r_ic: List[List[float]] = Field(default_factory=lambda: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


class ScenarioConfig(_Section):
    seed: int = 0
    n_points: int = Field(500, ge=1)
    duration: float = Field(50.0, gt=0.0)
    rotation_prefix: float = Field(25.0, ge=0.0)
    pixel_sigma: float = Field(0.5, ge=0.0)
    keyframe_hz: float = Field(4.0, gt=0.0)
    imu: ImuConfig = Field(default_factory=ImuConfig)
    camera: CameraConfig = Field(default_factory=CameraConfig)
    bias: List[float] = Field(default_factory=lambda: [0.03, -0.02, 0.015])
    bias_random_walk: bool = False
    gyro_noise: bool = True
    offset_deg: float = Field(10.0, ge=0.0)
    rotation_amplitude_deg: float = Field(25.0, ge=0.0)
    translation_amplitude: float = Field(0.5, ge=0.0)
    waypoint_rate_hz: float = Field(2.0, gt=0.0)
    max_features: Optional[int] = Field(None, ge=5)

    @model_validator(mode="after")
    def _prefix_within_duration(self):
        if self.rotation_prefix > self.duration:
            raise ValueError("rotation_prefix must not exceed duration")
        if len(self.bias) != 3:
            raise ValueError("bias must have 3 components")
        return self


class ExperimentSpec(_Section):
    name: str = "sweep"
    seed: int = 0
    dataset: Optional[str] = None
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    window_sizes: List[int] = Field(default_factory=lambda: [5, 10, 20])
    deformations_deg: List[float] = Field(default_factory=lambda: [0.0, 1.0, 5.0, 10.0, 20.0])
    modes: List[WeightingMode] = Field(default_factory=lambda: ["combined"])
    repetitions: int = Field(1, ge=1)
    segments: int = Field(1, ge=1)
    segment_length: float = Field(20.0, gt=0.0)
    segment_stride: float = Field(5.0, gt=0.0)
    min_rotation_deg: float = Field(20.0, ge=0.0)
    refine: bool = False
    workers: int = Field(1, ge=1)
    output: str = "out/sweep"

    @field_validator("window_sizes", "deformations_deg", "modes")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("sweep lists must be non-empty")
        return v

    @field_validator("window_sizes")
    @classmethod
    def _window_min(cls, v):
        if any(n < 3 for n in v):
            raise ValueError("window sizes must be >= 3 keyframes")
        return v


class LoggingConfig(_Section):
    level: str = "INFO"


class AppConfig(_Section):
    logging: LoggingConfig = Field(default_factory=LoggingConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    refiner: RefinerConfig = Field(default_factory=RefinerConfig)
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    bench: ExperimentSpec = Field(default_factory=ExperimentSpec)


def _set_path(d: Dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        nxt = cur.get(k)
        if not isinstance(nxt, dict):
            nxt = {}
            cur[k] = nxt
        cur = nxt
    cur[keys[-1]] = value


def apply_overrides(raw: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply `section.key=value` strings; values are parsed as YAML scalars or lists."""
    out = dict(raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}", key=item)
        key, text = item.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"empty key in override {item!r}", key=item)
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse value of {key}: {e}", key=key) from e
        _set_path(out, key, value)
    return out


def _first_error_key(e: ValidationError) -> str:
    errs = e.errors()
    if not errs:
        return ""
    return ".".join(str(p) for p in errs[0].get("loc", ()))


def validate(model, raw: Dict[str, Any], prefix: str = ""):
    try:
        return model.model_validate(raw or {})
    except ValidationError as e:
        key = _first_error_key(e)
        if prefix:
            key = f"{prefix}.{key}" if key else prefix
        msg = e.errors()[0].get("msg", str(e)) if e.errors() else str(e)
        raise ConfigError(f"{key}: {msg}", key=key) from e


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> AppConfig:
    raw: Dict[str, Any] = {}
    if path:
        raw = load_yaml(path)
    elif os.path.exists(DEFAULT_CONFIG):
        raw = load_yaml(DEFAULT_CONFIG)
    raw = apply_overrides(raw, overrides)
    return validate(AppConfig, raw)


def load_experiment(path: str, overrides: Iterable[str] = ()) -> ExperimentSpec:
    """Sweep spec from a bare spec file or from the `bench` section of a full config.

    Overrides are keyed like the config, e.g. `bench.window_sizes=[5,10]`.
    """
    raw = load_yaml(path)
    if not isinstance(raw.get("bench"), dict):
        raw = {"bench": raw}
    raw = apply_overrides(raw, overrides)
    return validate(ExperimentSpec, raw["bench"], prefix="bench")


def euroc_defaults(path: str = EUROC_DEFAULTS) -> Dict[str, Any]:
    return load_yaml(path)
