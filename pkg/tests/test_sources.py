"""Dataset directories: plain export/ingest and the EuRoC layout."""
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

repo_root = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(repo_root))

from src.config import ScenarioConfig
from src.errors import DatasetError
from src.simworld import generate
from src.sources import export, ingest

SENSOR_CAM = """%YAML:1.0
sensor_type: camera
T_BS:
  cols: 4
  rows: 4
  data: [0.0148655429818, -0.999880929698, 0.00414029679422, -0.0216401454975,
         0.999557249008, 0.0149672133247, 0.025715529948, -0.064676986768,
         -0.0257744366974, 0.00375618835797, 0.999660727178, 0.00981073058949,
         0.0, 0.0, 0.0, 1.0]
rate_hz: 20
resolution: [752, 480]
camera_model: pinhole
intrinsics: [458.654, 457.296, 367.215, 248.375]
distortion_model: radial-tangential
distortion_coefficients: [-0.28340811, 0.07395907, 0.00019359, 1.76187114e-05]
"""


def _write(path, text):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def _euroc_tree(root):
    mav = os.path.join(root, "mav0")
    _write(os.path.join(mav, "cam0", "sensor.yaml"), SENSOR_CAM)
    rows = ["#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
            "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]"]
    for k in range(20):
        rows.append(f"{1403636579758555392 + k * 5000000},0.01,-0.02,0.03,9.8,0.1,-0.2")
    _write(os.path.join(mav, "imu0", "data.csv"), "\n".join(rows) + "\n")
    _write(os.path.join(root, "features.csv"),
           "t_ns,frame_id,feature_id,u,v\n"
           "1403636579758555392,0,4,100.0,120.5\n"
           "1403636579758555392,0,2,300.0,20.0\n"
           "1403636579808555392,1,2,301.5,21.0\n")


class TestPlainRoundTrip:
    def test_bit_exact(self):
        """Every array and calibration value survives export then ingest unchanged."""
        ds = generate(ScenarioConfig(seed=4, duration=3.0, rotation_prefix=1.0, n_points=100))
        with tempfile.TemporaryDirectory() as td:
            export(ds, td)
            back = ingest(td)
        np.testing.assert_array_equal(back.imu.t_ns, ds.imu.t_ns)
        np.testing.assert_array_equal(back.imu.omega, ds.imu.omega)
        assert back.imu.acc is None
        assert len(back.frames) == len(ds.frames)
        for a, b in zip(ds.frames, back.frames):
            assert (a.frame_id, a.t_ns) == (b.frame_id, b.t_ns)
            np.testing.assert_array_equal(a.feature_ids, b.feature_ids)
            np.testing.assert_array_equal(a.uv, b.uv)
        np.testing.assert_array_equal(back.r_ci_nominal, ds.r_ci_nominal)
        np.testing.assert_array_equal(back.ground_truth.rotations, ds.ground_truth.rotations)
        np.testing.assert_array_equal(back.ground_truth.biases, ds.ground_truth.biases)
        np.testing.assert_array_equal(back.ground_truth.r_ci, ds.ground_truth.r_ci)
        assert back.noise == ds.noise
        assert back.intrinsics == ds.intrinsics
        assert back.name == ds.name


class TestPlainErrors:
    """Malformed files are reported with path, line and column."""

    def _exported(self, td):
        ds = generate(ScenarioConfig(seed=4, duration=2.0, rotation_prefix=1.0, n_points=60))
        export(ds, td)
        return os.path.join(td, "imu.csv")

    def test_bad_number(self):
        """A non-numeric field points at its line and column."""
        with tempfile.TemporaryDirectory() as td:
            imu = self._exported(td)
            with open(imu, encoding="utf-8") as f:
                lines = f.read().splitlines()
            parts = lines[3].split(",")
            parts[2] = "abc"
            lines[3] = ",".join(parts)
            _write(imu, "\n".join(lines) + "\n")
            with pytest.raises(DatasetError) as exc:
                ingest(td)
        err = exc.value
        assert (err.line, err.column) == (4, 3)
        assert str(err).startswith(f"{imu}:4:3: ")
        assert err.context()["line"] == 4

    def test_non_increasing_timestamps(self):
        """A repeated timestamp is reported at the offending line."""
        with tempfile.TemporaryDirectory() as td:
            imu = self._exported(td)
            with open(imu, encoding="utf-8") as f:
                lines = f.read().splitlines()
            lines[5] = lines[4]
            _write(imu, "\n".join(lines) + "\n")
            with pytest.raises(DatasetError) as exc:
                ingest(td)
        assert exc.value.line == 6

    def test_missing_directory(self):
        """Ingesting a folder that does not exist fails cleanly."""
        with tempfile.TemporaryDirectory() as td:
            with pytest.raises(DatasetError):
                ingest(os.path.join(td, "nope"))

    def test_missing_calib_key(self):
        """calib.yaml without a camera block names the missing key."""
        with tempfile.TemporaryDirectory() as td:
            self._exported(td)
            _write(os.path.join(td, "calib.yaml"), "name: x\nimu: {sigma_g: 1.0e-4, sigma_bg: 1.0e-5, dt: 0.005}\n")
            with pytest.raises(DatasetError) as exc:
                ingest(td)
        assert "camera" in str(exc.value)


class TestEuroc:
    def test_minimal_tree(self):
        """IMU CSV, cam0 sensor.yaml and features.csv are enough; IMU noise falls back to defaults."""
        with tempfile.TemporaryDirectory() as td:
            _euroc_tree(td)
            ds = ingest(td)
        assert len(ds.imu) == 20
        np.testing.assert_allclose(ds.imu.omega[0], [0.01, -0.02, 0.03])
        assert ds.imu.acc.shape == (20, 3)
        assert ds.noise.sigma_g == pytest.approx(1.6968e-4)
        assert ds.noise.dt == pytest.approx(0.005)
        assert ds.intrinsics.width == 752
        assert ds.r_ci_nominal[1, 0] == pytest.approx(-0.999880929698)
        assert [f.frame_id for f in ds.frames] == [0, 1]
        np.testing.assert_array_equal(ds.frames[0].feature_ids, [2, 4])
        assert ds.ground_truth is None

    def test_bad_intrinsics(self):
        """Intrinsics with the wrong number of entries are rejected."""
        with tempfile.TemporaryDirectory() as td:
            _euroc_tree(td)
            _write(os.path.join(td, "mav0", "cam0", "sensor.yaml"), "%YAML:1.0\nintrinsics: [1.0, 2.0]\n")
            with pytest.raises(DatasetError):
                ingest(td)

    def test_non_increasing_imu_timestamps(self):
        """A repeated IMU timestamp is reported at its file line, as for the plain layout."""
        with tempfile.TemporaryDirectory() as td:
            _euroc_tree(td)
            imu = os.path.join(td, "mav0", "imu0", "data.csv")
            with open(imu, encoding="utf-8") as f:
                lines = f.read().splitlines()
            lines[7] = lines[6]
            _write(imu, "\n".join(lines) + "\n")
            with pytest.raises(DatasetError) as exc:
                ingest(td)
        assert (exc.value.path, exc.value.line, exc.value.column) == (imu, 8, 1)
        assert "strictly increasing" in str(exc.value)
