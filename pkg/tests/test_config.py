"""Config loading, overrides and validation errors."""
import os
import sys
import tempfile
from pathlib import Path

import pytest

repo_root = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(repo_root))

from src.config import (
    AppConfig,
    ExperimentSpec,
    ScenarioConfig,
    SolverConfig,
    apply_overrides,
    euroc_defaults,
    load_config,
    load_experiment,
)
from src.errors import ConfigError

CONFIG = str(repo_root / "config" / "config.yaml")


def _yaml(td, name, text):
    path = os.path.join(td, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


class TestLoadConfig:
    def test_shipped_config_matches_defaults(self):
        """config.yaml agrees with the model defaults."""
        cfg = load_config(CONFIG)
        assert cfg.solver == SolverConfig()
        assert cfg.scenario.rotation_prefix == 25.0
        assert cfg.bench.window_sizes == [5, 10, 20]

    def test_overrides(self):
        """Dotted overrides replace scalars and lists."""
        cfg = load_config(CONFIG, ["solver.max_loops=8", "bench.window_sizes=[5, 10]", "solver.weighting=fp"])
        assert cfg.solver.max_loops == 8
        assert cfg.solver.weighting == "fp"
        assert cfg.bench.window_sizes == [5, 10]

    def test_prefix_longer_than_duration(self):
        """The rotation prefix must fit inside the duration."""
        with pytest.raises(ConfigError) as exc:
            load_config(CONFIG, ["scenario.duration=10", "scenario.rotation_prefix=20"])
        assert exc.value.key.startswith("scenario")

    def test_unknown_key(self):
        """Unknown keys are rejected with their dotted path."""
        with pytest.raises(ConfigError) as exc:
            load_config(CONFIG, ["solver.bogus=1"])
        assert exc.value.key == "solver.bogus"

    def test_bad_override_syntax(self):
        """An override without "=" is rejected."""
        with pytest.raises(ConfigError):
            apply_overrides({}, ["solver.max_loops"])

    def test_missing_file(self):
        """A missing config file raises ConfigError."""
        with pytest.raises(ConfigError):
            load_config("/nonexistent/config.yaml")

    def test_invalid_yaml(self):
        """Malformed YAML raises ConfigError."""
        with tempfile.TemporaryDirectory() as td:
            path = _yaml(td, "bad.yaml", "solver: [1, 2\n")
            with pytest.raises(ConfigError):
                load_config(path)

    def test_defaults_without_file(self):
        """Models construct from their defaults alone."""
        assert AppConfig().refiner.divergence_patience == 3


class TestValidation:
    def test_weight_clamp_order(self):
        """The weight clamp must be increasing and positive."""
        with pytest.raises(ValueError):
            SolverConfig(weight_clamp=(1e6, 1e-6))

    def test_repetitions_at_least_one(self):
        """Zero repetitions is invalid."""
        with pytest.raises(ValueError):
            ExperimentSpec(repetitions=0)

    def test_window_sizes(self):
        """Window sizes below 3 and empty sweep lists are invalid."""
        with pytest.raises(ValueError):
            ExperimentSpec(window_sizes=[2, 10])
        with pytest.raises(ValueError):
            ExperimentSpec(deformations_deg=[])

    def test_bias_length(self):
        """The bias needs three components."""
        with pytest.raises(ValueError):
            ScenarioConfig(bias=[0.0, 0.0])


class TestExperiment:
    """Sweep spec files, bare or as the bench section of a full config."""

    def test_bare_spec(self):
        """A bare spec file loads and takes bench overrides."""
        with tempfile.TemporaryDirectory() as td:
            path = _yaml(td, "spec.yaml", "name: t\nwindow_sizes: [5]\nsegments: 3\n")
            spec = load_experiment(path, ["bench.segments=4"])
        assert spec.name == "t"
        assert spec.window_sizes == [5]
        assert spec.segments == 4

    def test_bench_section(self):
        """The bench section of a full config loads as a spec."""
        spec = load_experiment(CONFIG)
        assert spec.name == "default"
        assert spec.segments == 20

    def test_error_key_is_prefixed(self):
        """Spec errors are reported under bench."""
        with tempfile.TemporaryDirectory() as td:
            path = _yaml(td, "spec.yaml", "repetitions: 0\n")
            with pytest.raises(ConfigError) as exc:
                load_experiment(path)
        assert exc.value.key == "bench.repetitions"

    def test_example_spec(self):
        """The shipped example spec validates."""
        spec = load_experiment(str(repo_root / "config" / "sweep_example.yaml"))
        assert spec.workers >= 1


class TestEurocDefaults:
    def test_values(self):
        """EuRoC defaults carry the sensor noise and camera."""
        d = euroc_defaults()
        assert d["imu"]["sigma_g"] == pytest.approx(1.6968e-4)
        assert d["imu"]["rate_hz"] == 200.0
        assert len(d["camera"]["r_ic"]) == 3
