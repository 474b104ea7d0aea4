from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .manifold import exp_so3, log_so3

NS = 1e-9


@dataclass(frozen=True)
class GyroSample:
    t: float  # seconds
    omega: np.ndarray  # rad/s, IMU frame


@dataclass
class ImuStream:
    t_ns: np.ndarray  # int64, strictly increasing
    omega: np.ndarray  # (n, 3) rad/s
    acc: Optional[np.ndarray] = None  # (n, 3) m/s^2, carried through untouched

    @property
    def t(self) -> np.ndarray:
        return self.t_ns * NS

    def __len__(self) -> int:
        return int(self.t_ns.shape[0])

    def samples(self) -> List[GyroSample]:
        return [GyroSample(float(t), w) for t, w in zip(self.t, self.omega)]


@dataclass(frozen=True)
class ImuNoiseModel:
    sigma_g: float  # rad/s/sqrt(Hz)
    sigma_bg: float  # rad/s^2/sqrt(Hz)
    dt: float  # nominal sample interval, s

    def __post_init__(self):
        for name in ("sigma_g", "sigma_bg", "dt"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"ImuNoiseModel.{name} must be > 0, got {v}")

    def scaled(self, factor: float) -> "ImuNoiseModel":
        return ImuNoiseModel(self.sigma_g * factor, self.sigma_bg * factor, self.dt)


@dataclass(frozen=True)
class PreintegratedRotation:
    gamma: np.ndarray  # rotation I_i -> I_j increment
    j_bg: np.ndarray  # d gamma / d b_g (right perturbation)
    cov: np.ndarray  # 3x3, rad^2
    t_start: float
    t_end: float
    bias: np.ndarray  # b_g used at integration
    omegas: np.ndarray  # (n, 3) held rates, kept for reintegration
    dts: np.ndarray  # (n,) hold durations

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class CameraPreintegration:
    gamma: np.ndarray
    j_bg: np.ndarray
    j_theta: np.ndarray
    source: PreintegratedRotation
    r_ci: np.ndarray


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point outside image")

    def contains(self, uv: np.ndarray) -> np.ndarray:
        uv = np.atleast_2d(uv)
        return ((uv[:, 0] >= 0) & (uv[:, 0] <= self.width - 1)
                & (uv[:, 1] >= 0) & (uv[:, 1] <= self.height - 1))

    def project(self, p_c: np.ndarray) -> np.ndarray:
        p_c = np.atleast_2d(p_c)
        return np.column_stack([
            self.fx * p_c[:, 0] / p_c[:, 2] + self.cx,
            self.fy * p_c[:, 1] / p_c[:, 2] + self.cy,
        ])


@dataclass(frozen=True)
class BearingObservation:
    f: np.ndarray  # unit 3-vector, camera frame
    cov: np.ndarray  # 3x3 PSD
    pixel: tuple
    feature_id: int = -1
    frame_id: int = -1


@dataclass(frozen=True)
class CalibState:
    b_g: np.ndarray  # rad/s
    r_ci: np.ndarray  # camera-from-IMU rotation

    def boxplus(self, delta: np.ndarray) -> "CalibState":
        return CalibState(self.b_g + delta[:3], self.r_ci @ exp_so3(delta[3:6]))

    def boxminus(self, other: "CalibState") -> np.ndarray:
        return np.concatenate([self.b_g - other.b_g, log_so3(other.r_ci.T @ self.r_ci)])

    def to_dict(self) -> Dict[str, Any]:
        return {"b_g": [float(x) for x in self.b_g], "r_ci": [[float(x) for x in row] for row in self.r_ci]}


@dataclass
class PriorBelief:
    state: CalibState
    cov: np.ndarray  # 6x6 over [b_g; theta_ci]
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class Frame:
    frame_id: int
    t_ns: int
    feature_ids: np.ndarray  # (m,) int
    uv: np.ndarray  # (m, 2) pixels

    @property
    def t(self) -> float:
        return self.t_ns * NS


@dataclass
class GroundTruth:
    t_ns: np.ndarray
    positions: np.ndarray  # (n, 3) world position of the IMU
    rotations: np.ndarray  # (n, 3, 3) R_WI
    biases: np.ndarray  # (n, 3) b_g(t)
    r_ci: np.ndarray

    def index_at(self, t_ns: int) -> int:
        i = int(np.searchsorted(self.t_ns, t_ns))
        if i >= len(self.t_ns):
            return len(self.t_ns) - 1
        if i > 0 and abs(int(self.t_ns[i - 1]) - t_ns) <= abs(int(self.t_ns[i]) - t_ns):
            return i - 1
        return i

    def camera_rotation_at(self, t_ns: int) -> np.ndarray:
        """R_WC = R_WI R_CI^T."""
        return self.rotations[self.index_at(t_ns)] @ self.r_ci.T

    def relative_camera_rotation(self, t_i: int, t_j: int) -> np.ndarray:
        """R_CiCj, maps points from C_j to C_i."""
        return self.camera_rotation_at(t_i).T @ self.camera_rotation_at(t_j)

    def mean_bias(self, t0_ns: int, t1_ns: int) -> np.ndarray:
        a, b = self.index_at(t0_ns), self.index_at(t1_ns)
        return self.biases[a:b + 1].mean(axis=0)


@dataclass
class Dataset:
    imu: ImuStream
    frames: List[Frame]
    intrinsics: CameraIntrinsics
    noise: ImuNoiseModel
    r_ci_nominal: np.ndarray  # calibration shipped with the data
    ground_truth: Optional[GroundTruth] = None
    name: str = "dataset"

    def frame_times(self) -> np.ndarray:
        return np.array([f.t_ns for f in self.frames], dtype=np.int64)
