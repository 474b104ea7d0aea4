"""Deterministic synthetic scenes, trajectories, gyro streams and feature tracks.

The camera starts at the origin looking along +z at points scattered over a
spherical-shell sector. Orientation follows R_WC(t) = R0 Exp(a(t)) with a(t) a
quintic spline; position stays exactly at the origin during the pure-rotation
prefix and then follows a second quintic spline that leaves the origin with zero
velocity and acceleration. Camera and IMU share their origin.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import make_interp_spline
from scipy.spatial.transform import Rotation

from .config import ScenarioConfig
from .errors import SimulationError
from .manifold import exp_so3, is_rotation, log_so3, right_jacobian
from .models import CameraIntrinsics, Dataset, Frame, GroundTruth, ImuNoiseModel, ImuStream

logger = logging.getLogger(__name__)

AZIMUTH_DEG = 60.0
ELEVATION_DEG = 45.0
RADIUS = (4.0, 8.0)
MIN_DEPTH = 0.1
# per-axis scale of the orientation waypoints (camera x = tilt, y = pan, z = roll)
AXIS_SCALE = np.array([0.6, 1.0, 0.6])
ZERO_ENDS = ([(1, np.zeros(3)), (2, np.zeros(3))], [(1, np.zeros(3)), (2, np.zeros(3))])


@dataclass
class Trajectory:
    """Orientation and position splines of the camera."""

    rot_spline: object
    pos_spline: Optional[object]
    prefix: float
    r0: np.ndarray

    def tangent(self, t: np.ndarray) -> np.ndarray:
        return self.rot_spline(np.atleast_1d(t))

    def rotations(self, t: np.ndarray) -> np.ndarray:
        """R_WC at each t, (n, 3, 3)."""
        a = self.tangent(t)
        return np.einsum("ij,njk->nik", self.r0, Rotation.from_rotvec(a).as_matrix())

    def positions(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        p = np.zeros((t.size, 3))
        if self.pos_spline is not None:
            moving = t > self.prefix
            if np.any(moving):
                p[moving] = self.pos_spline(t[moving])
        return p

    def body_rates(self, t: np.ndarray) -> np.ndarray:
        """Camera-frame angular velocity Jr(a) da/dt."""
        a = self.tangent(t)
        da = self.rot_spline.derivative(1)(np.atleast_1d(t))
        return np.array([right_jacobian(ak) @ dak for ak, dak in zip(a, da)])


def sphere_points(rng: np.random.Generator, n: int) -> np.ndarray:
    az = np.radians(rng.uniform(-AZIMUTH_DEG, AZIMUTH_DEG, n))
    el = np.radians(rng.uniform(-ELEVATION_DEG, ELEVATION_DEG, n))
    r = rng.uniform(RADIUS[0], RADIUS[1], n)
    return np.column_stack([r * np.cos(el) * np.sin(az), r * np.sin(el), r * np.cos(el) * np.cos(az)])


def _knot_count(span: float, rate_hz: float) -> int:
    return max(3, int(round(span * rate_hz)) + 1)


def make_trajectory(cfg: ScenarioConfig, rng: np.random.Generator) -> Trajectory:
    """Knots every 1/waypoint_rate_hz seconds, so a short window still sees the rotation axis turn."""
    n_rot = _knot_count(cfg.duration, cfg.waypoint_rate_hz)
    knots = np.linspace(0.0, cfg.duration, n_rot)
    amp = np.radians(cfg.rotation_amplitude_deg)
    values = rng.uniform(-amp, amp, size=(n_rot, 3)) * AXIS_SCALE
    values[0] = 0.0
    rot = make_interp_spline(knots, values, k=5, bc_type=ZERO_ENDS)

    pos = None
    moving = cfg.duration - cfg.rotation_prefix
    if moving > 0.0 and cfg.translation_amplitude > 0.0:
        n_pos = _knot_count(moving, cfg.waypoint_rate_hz)
        pknots = np.linspace(cfg.rotation_prefix, cfg.duration, n_pos)
        pvalues = rng.uniform(-cfg.translation_amplitude, cfg.translation_amplitude, size=(n_pos, 3))
        pvalues[0] = 0.0
        pos = make_interp_spline(pknots, pvalues, k=5, bc_type=ZERO_ENDS)
    return Trajectory(rot_spline=rot, pos_spline=pos, prefix=cfg.rotation_prefix, r0=np.eye(3))


def perturb_rotation(R: np.ndarray, angle_deg: float, rng: np.random.Generator) -> np.ndarray:
    """R Exp(angle * axis) with a seeded random unit axis."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return R @ exp_so3(np.radians(angle_deg) * axis)


def intrinsics_from(cfg: ScenarioConfig) -> CameraIntrinsics:
    c = cfg.camera
    return CameraIntrinsics(c.fx, c.fy, c.cx, c.cy, c.width, c.height)


def true_extrinsic(cfg: ScenarioConfig) -> np.ndarray:
    r_ic = np.asarray(cfg.camera.r_ic, dtype=float)
    if r_ic.shape != (3, 3):
        raise SimulationError("camera.r_ic must be a 3x3 matrix")
    if not is_rotation(r_ic, tol=1e-6):
        raise SimulationError("camera.r_ic is not a rotation")
    # re-orthonormalise values printed with limited precision
    r_ic = Rotation.from_matrix(r_ic).as_matrix()
    return r_ic.T


def _gyro_stream(cfg: ScenarioConfig, traj: Trajectory, r_ci: np.ndarray, rng: np.random.Generator):
    rate = cfg.imu.rate_hz
    n = int(round(cfg.duration * rate)) + 1
    t_ns = np.round(np.arange(n) * (1e9 / rate)).astype(np.int64)
    t = t_ns * 1e-9
    dt = 1.0 / rate
    t_ext = np.append(t, t[-1] + dt)
    R_wi = traj.rotations(t_ext) @ r_ci
    # exact increment rate over each hold interval
    omega = np.array([log_so3(R_wi[k].T @ R_wi[k + 1]) for k in range(n)]) / np.diff(t_ext)[:, None]

    bias0 = np.asarray(cfg.bias, dtype=float)
    if cfg.bias_random_walk:
        steps = rng.normal(size=(n, 3)) * cfg.imu.sigma_bg * np.sqrt(dt)
        steps[0] = 0.0
        biases = bias0 + np.cumsum(steps, axis=0)
    else:
        biases = np.tile(bias0, (n, 1))
    noise = rng.normal(size=(n, 3)) * (cfg.imu.sigma_g / np.sqrt(dt)) if cfg.gyro_noise else np.zeros((n, 3))
    return t_ns, omega + biases + noise, R_wi[:n], biases


def _frames(cfg: ScenarioConfig, traj: Trajectory, points: np.ndarray, K: CameraIntrinsics,
            rng: np.random.Generator):
    period_ns = int(round(1e9 / cfg.keyframe_hz))
    n = int(np.floor(cfg.duration * 1e9 / period_ns + 1e-9)) + 1
    t_ns = np.arange(n, dtype=np.int64) * period_ns
    t = t_ns * 1e-9
    R_wc = traj.rotations(t)
    p_wc = traj.positions(t)
    ids = np.arange(points.shape[0])
    frames = []
    for k in range(n):
        pc = (points - p_wc[k]) @ R_wc[k]  # R_WC^T (p - c), row form
        front = pc[:, 2] > MIN_DEPTH
        uv = np.full((points.shape[0], 2), -1.0)
        uv[front] = K.project(pc[front])
        visible = front & K.contains(uv)
        if cfg.pixel_sigma > 0:
            uv = uv + rng.normal(size=uv.shape) * cfg.pixel_sigma
            visible &= K.contains(uv)
        keep = ids[visible]
        if cfg.max_features is not None:
            keep = keep[:cfg.max_features]
        if keep.size == 0:
            raise SimulationError(f"no visible points in frame {k} (t={t[k]:.3f} s)")
        frames.append(Frame(frame_id=k, t_ns=int(t_ns[k]), feature_ids=keep, uv=uv[keep]))
    return frames


def generate(cfg: ScenarioConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    K = intrinsics_from(cfg)
    r_ci = true_extrinsic(cfg)
    points = sphere_points(rng, cfg.n_points)
    traj = make_trajectory(cfg, rng)
    t_ns, omega, R_wi, biases = _gyro_stream(cfg, traj, r_ci, rng)
    frames = _frames(cfg, traj, points, K, rng)
    truth = GroundTruth(
        t_ns=t_ns,
        positions=traj.positions(t_ns * 1e-9),
        rotations=R_wi,
        biases=biases,
        r_ci=r_ci,
    )
    nominal = perturb_rotation(r_ci, cfg.offset_deg, rng) if cfg.offset_deg > 0 else r_ci.copy()
    counts = [f.feature_ids.size for f in frames]
    logger.info("simulated %d IMU samples, %d keyframes, features/frame min=%d median=%d",
                len(t_ns), len(frames), min(counts), int(np.median(counts)))
    return Dataset(
        imu=ImuStream(t_ns=t_ns, omega=omega),
        frames=frames,
        intrinsics=K,
        noise=ImuNoiseModel(cfg.imu.sigma_g, cfg.imu.sigma_bg, 1.0 / cfg.imu.rate_hz),
        r_ci_nominal=nominal,
        ground_truth=truth,
        name=f"sim-{cfg.seed}",
    )
