"""Gyroscope-only rotation preintegration in the IMU and camera frames.

Rates are held constant between samples (zero-order hold), so the increment is the
ordered product of Exp((w_k - b) dt_k). The bias Jacobian and the covariance follow
the usual on-manifold first-order recursion:

    J   <- dR^T J - Jr(phi_k) dt_k
    Cov <- dR^T Cov dR + Jr(phi_k) (sigma_g^2 dt_k) Jr(phi_k)^T

Only the white gyro noise enters the covariance; the bias is held constant within a
window.
"""
from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from .manifold import exp_so3, exp_so3_batch, right_jacobian_batch
from .models import (
    CameraPreintegration,
    GyroSample,
    ImuNoiseModel,
    ImuStream,
    PreintegratedRotation,
)

logger = logging.getLogger(__name__)


def _integrate_arrays(omegas: np.ndarray, dts: np.ndarray, bias: np.ndarray, noise: ImuNoiseModel,
                      t_start: float, t_end: float) -> PreintegratedRotation:
    gamma = np.eye(3)
    j_bg = np.zeros((3, 3))
    cov = np.zeros((3, 3))
    var_g = noise.sigma_g ** 2
    dts = np.asarray(dts, dtype=float)
    phis = (np.asarray(omegas, dtype=float).reshape(-1, 3) - bias) * dts[:, None]
    for dR, Jr, dt in zip(exp_so3_batch(phis), right_jacobian_batch(phis), dts):
        j_bg = dR.T @ j_bg - Jr * dt
        cov = dR.T @ cov @ dR + (var_g * dt) * (Jr @ Jr.T)
        cov = 0.5 * (cov + cov.T)
        gamma = gamma @ dR
    return PreintegratedRotation(
        gamma=gamma,
        j_bg=j_bg,
        cov=cov,
        t_start=float(t_start),
        t_end=float(t_end),
        bias=np.array(bias, dtype=float),
        omegas=np.array(omegas, dtype=float),
        dts=np.array(dts, dtype=float),
    )


def integrate(samples: Sequence[GyroSample], b_g: np.ndarray, noise: ImuNoiseModel,
              t_end: Optional[float] = None) -> PreintegratedRotation:
    """Integrate a sample stream; the last sample is held until t_end (default t_last + noise.dt)."""
    if len(samples) == 0:
        raise ValueError("cannot integrate an empty gyro stream")
    b_g = np.asarray(b_g, dtype=float)
    if not np.all(np.isfinite(b_g)):
        raise ValueError("bias estimate must be finite")
    times = np.array([s.t for s in samples], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("gyro timestamps must be strictly increasing")
    if t_end is None:
        t_end = float(times[-1]) + noise.dt
    if t_end <= times[-1]:
        raise ValueError("t_end must be after the last sample")
    dts = np.diff(np.append(times, t_end))
    omegas = np.array([s.omega for s in samples], dtype=float)
    return _integrate_arrays(omegas, dts, b_g, noise, times[0], t_end)


def slice_stream(stream: ImuStream, t_i: float, t_j: float):
    """Held rates and hold durations covering [t_i, t_j]."""
    if t_j <= t_i:
        raise ValueError(f"empty interval [{t_i}, {t_j}]")
    t = stream.t
    first = int(np.searchsorted(t, t_i, side="right")) - 1
    if first < 0:
        raise ValueError(f"no gyro sample at or before t={t_i:.9f}")
    last = int(np.searchsorted(t, t_j, side="left"))  # exclusive
    idx = np.arange(first, last)
    starts = np.maximum(t[idx], t_i)
    ends = np.minimum(np.append(t[idx[1:]], t_j), t_j)
    return stream.omega[idx], ends - starts


def integrate_stream(stream: ImuStream, t_i: float, t_j: float, b_g: np.ndarray,
                     noise: ImuNoiseModel) -> PreintegratedRotation:
    omegas, dts = slice_stream(stream, t_i, t_j)
    return _integrate_arrays(omegas, dts, np.asarray(b_g, dtype=float), noise, t_i, t_j)


def reintegrate(p: PreintegratedRotation, b_g: np.ndarray, noise: ImuNoiseModel) -> PreintegratedRotation:
    return _integrate_arrays(p.omegas, p.dts, np.asarray(b_g, dtype=float), noise, p.t_start, p.t_end)


def compose(p_ik: PreintegratedRotation, p_kj: PreintegratedRotation) -> PreintegratedRotation:
    """Concatenate two consecutive preintegrations integrated at the same bias."""
    if not np.allclose(p_ik.bias, p_kj.bias, rtol=0.0, atol=1e-15):
        raise ValueError("cannot compose preintegrations integrated at different biases")
    g = p_kj.gamma
    cov = g.T @ p_ik.cov @ g + p_kj.cov
    return PreintegratedRotation(
        gamma=p_ik.gamma @ g,
        j_bg=g.T @ p_ik.j_bg + p_kj.j_bg,
        cov=0.5 * (cov + cov.T),
        t_start=p_ik.t_start,
        t_end=p_kj.t_end,
        bias=p_ik.bias,
        omegas=np.vstack([p_ik.omegas, p_kj.omegas]),
        dts=np.concatenate([p_ik.dts, p_kj.dts]),
    )


def to_camera_frame(p: PreintegratedRotation, r_ci: np.ndarray) -> CameraPreintegration:
    """Express the increment in the camera frame.

    gamma_C = R gamma_I R^T and J_bg^C = R J_bg^I. For the extrinsic the state moves
    as R <- R Exp(d), which gives J_theta = (R gamma_I^T R^T - I) R; the bracket is the
    camera-frame (left-perturbation) form, the trailing R its adjoint.
    """
    R = np.asarray(r_ci, dtype=float)
    gamma_c = R @ p.gamma @ R.T
    return CameraPreintegration(
        gamma=gamma_c,
        j_bg=R @ p.j_bg,
        j_theta=(R @ p.gamma.T @ R.T - np.eye(3)) @ R,
        source=p,
        r_ci=R,
    )


def correction_vector(c: CameraPreintegration, d_bg: np.ndarray, d_theta: np.ndarray) -> np.ndarray:
    return c.j_bg @ np.asarray(d_bg, dtype=float) + c.j_theta @ np.asarray(d_theta, dtype=float)


def apply_correction(c: CameraPreintegration, d_bg: np.ndarray, d_theta: np.ndarray) -> np.ndarray:
    """First-order corrected camera increment; valid while the corrections stay small
    (bias offsets of a few mrad/s, extrinsic offsets of a few degrees)."""
    return c.gamma @ exp_so3(correction_vector(c, d_bg, d_theta))
