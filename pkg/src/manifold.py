"""SO(3) primitives. All interfaces exchange 3x3 rotation matrices and 3-vectors."""
from __future__ import annotations

import numpy as np

# Below this angle the closed forms are replaced by their Taylor series.
SMALL_ANGLE = 1e-6
# Above pi - NEAR_PI the log recovers the axis from the symmetric part.
NEAR_PI = 1e-3


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def exp_so3(theta: np.ndarray) -> np.ndarray:
    """Rodrigues' formula, second-order series below SMALL_ANGLE."""
    theta = np.asarray(theta, dtype=float)
    angle = float(np.linalg.norm(theta))
    K = skew(theta)
    if angle < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + a * K + b * (K @ K)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Principal logarithm, norm <= pi.

    The angle comes from atan2(|vee(R - R^T)|/2, (tr R - 1)/2), which stays accurate
    at both ends. Within NEAR_PI of a half-turn the axis is taken from the column of
    (R + R^T)/2 - cos(t) I with the largest diagonal, sign-matched to vee(R - R^T).
    """
    R = np.asarray(R, dtype=float)
    w = 0.5 * vee(R - R.T)
    s = float(np.linalg.norm(w))
    c = 0.5 * (np.trace(R) - 1.0)
    angle = float(np.arctan2(s, c))
    if angle < SMALL_ANGLE:
        # sin(t)/t ~ 1 - t^2/6
        return w * (1.0 + angle * angle / 6.0)
    if angle > np.pi - NEAR_PI:
        B = 0.5 * (R + R.T) - c * np.eye(3)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if float(axis @ w) < 0.0:
            axis = -axis
        return angle * axis
    return (angle / s) * w


def right_jacobian(theta: np.ndarray) -> np.ndarray:
    """Jr with Exp(theta + d) ~ Exp(theta) Exp(Jr(theta) d)."""
    theta = np.asarray(theta, dtype=float)
    angle = float(np.linalg.norm(theta))
    K = skew(theta)
    if angle < SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    a2 = angle * angle
    return (np.eye(3)
            - (1.0 - np.cos(angle)) / a2 * K
            + (angle - np.sin(angle)) / (a2 * angle) * (K @ K))


def right_jacobian_inv(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    angle = float(np.linalg.norm(theta))
    K = skew(theta)
    if angle < SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + (K @ K) / 12.0
    coef = 1.0 / (angle * angle) - (1.0 + np.cos(angle)) / (2.0 * angle * np.sin(angle))
    return np.eye(3) + 0.5 * K + coef * (K @ K)


def boxplus(R: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return R @ exp_so3(theta)


def boxminus(R_new: np.ndarray, R: np.ndarray) -> np.ndarray:
    return log_so3(R.T @ R_new)


def geodesic_angle(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Angle in radians of R_a R_b^T."""
    return float(np.linalg.norm(log_so3(R_a @ R_b.T)))


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.allclose(R @ R.T, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) < tol)


def exp_so3_batch(thetas: np.ndarray) -> np.ndarray:
    """exp_so3 over rows of an (n, 3) array, (n, 3, 3)."""
    thetas = np.asarray(thetas, dtype=float).reshape(-1, 3)
    angle = np.linalg.norm(thetas, axis=1)
    K = skew_batch(thetas)
    KK = K @ K
    small = angle < SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / (safe * safe))
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * KK


def right_jacobian_batch(thetas: np.ndarray) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=float).reshape(-1, 3)
    angle = np.linalg.norm(thetas, axis=1)
    K = skew_batch(thetas)
    KK = K @ K
    small = angle < SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    a = np.where(small, 0.5, (1.0 - np.cos(safe)) / (safe * safe))
    b = np.where(small, 1.0 / 6.0, (safe - np.sin(safe)) / (safe ** 3))
    return np.eye(3) - a[:, None, None] * K + b[:, None, None] * KK


def skew_batch(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1, 3)
    out = np.zeros((v.shape[0], 3, 3))
    out[:, 0, 1], out[:, 0, 2] = -v[:, 2], v[:, 1]
    out[:, 1, 0], out[:, 1, 2] = v[:, 2], -v[:, 0]
    out[:, 2, 0], out[:, 2, 1] = -v[:, 1], v[:, 0]
    return out
