"""Bearing vectors with uncertainty, epipolar-plane normals and the M matrix.

For a keyframe pair (i, j) every correspondence k contributes the normal
n_k = f_i x (gamma_C f_j). All normals are orthogonal to the translation between the
two views, so M = sum n_k n_k^T has a zero eigenvalue at the true rotation and its
smallest eigenvector is the translation direction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .models import BearingObservation, CameraIntrinsics, CameraPreintegration
from .preintegration import apply_correction

PIXEL_SIGMA = 0.5
RAY_EPS = 1e-12  # variance added along the ray so the 3x3 covariance is full rank
MIN_ACTIVE = 5

# Scaled unscented transform over the 2D pixel noise
UT_ALPHA = 1e-3
UT_BETA = 2.0
UT_KAPPA = 0.0


def _ut_weights(n: int = 2):
    lam = UT_ALPHA ** 2 * (n + UT_KAPPA) - n
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + (1.0 - UT_ALPHA ** 2 + UT_BETA)
    return n + lam, wm, wc


def _pinhole_rays(uv: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """uv (..., 2) -> unit rays (..., 3)."""
    x = (uv[..., 0] - K.cx) / K.fx
    y = (uv[..., 1] - K.cy) / K.fy
    rays = np.stack([x, y, np.ones_like(x)], axis=-1)
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def unproject_batch(pixels: np.ndarray, K: CameraIntrinsics, sigma_px: float = PIXEL_SIGMA
                    ) -> Tuple[np.ndarray, np.ndarray]:
    """Bearings (n, 3) and their covariances (n, 3, 3) for pixels (n, 2)."""
    pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
    if sigma_px < 0:
        raise ValueError("pixel sigma must be non-negative")
    inside = K.contains(pixels)
    if not np.all(inside):
        bad = pixels[~inside][0]
        raise ValueError(f"{int(np.sum(~inside))} pixel(s) outside the image, e.g. ({bad[0]:.3f}, {bad[1]:.3f})")

    f = _pinhole_rays(pixels, K)

    scale, wm, wc = _ut_weights(2)
    spread = np.sqrt(scale) * sigma_px
    offsets = np.array([[0.0, 0.0], [spread, 0.0], [0.0, spread], [-spread, 0.0], [0.0, -spread]])
    sigmas = pixels[:, None, :] + offsets[None, :, :]  # (n, 5, 2)
    ys = _pinhole_rays(sigmas, K)  # (n, 5, 3)

    # deviations from the centre point keep the large UT weights from cancelling
    d0 = ys - ys[:, :1, :]
    mean_offset = np.einsum("s,nsk->nk", wm, d0)
    d = d0 - mean_offset[:, None, :]
    cov = np.einsum("s,nsi,nsj->nij", wc, d, d)
    cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))
    cov += RAY_EPS * np.einsum("ni,nj->nij", f, f)
    return f, cov


def unproject_with_covariance(pixel, K: CameraIntrinsics, sigma_px: float = PIXEL_SIGMA,
                              feature_id: int = -1, frame_id: int = -1) -> BearingObservation:
    f, cov = unproject_batch(np.array([pixel], dtype=float), K, sigma_px)
    return BearingObservation(f=f[0], cov=cov[0], pixel=(float(pixel[0]), float(pixel[1])),
                              feature_id=feature_id, frame_id=frame_id)


def epipolar_normal(f_i: np.ndarray, f_j: np.ndarray, R: np.ndarray) -> np.ndarray:
    return np.cross(f_i, R @ f_j)


# ---- eigen decomposition ----

def symmetric_eigenvalues(M: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a symmetric 3x3 matrix (trigonometric closed form)."""
    p1 = M[0, 1] ** 2 + M[0, 2] ** 2 + M[1, 2] ** 2
    if p1 == 0.0:
        return np.sort(np.diag(M).astype(float))
    q = np.trace(M) / 3.0
    p2 = (M[0, 0] - q) ** 2 + (M[1, 1] - q) ** 2 + (M[2, 2] - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    B = (M - q * np.eye(3)) / p
    r = np.clip(np.linalg.det(B) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e_max = q + 2.0 * p * np.cos(phi)
    e_min = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e_mid = 3.0 * q - e_max - e_min
    return np.array([e_min, e_mid, e_max])


def canonical_sign(v: np.ndarray) -> np.ndarray:
    """Largest-magnitude component positive (first index on ties)."""
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def _eigenvector(M: np.ndarray, lam: float) -> Tuple[np.ndarray, bool]:
    """Unit eigenvector for lam and whether lam is simple.

    Repeated eigenvalue: a double one takes the standard basis vector least aligned
    with the remaining row of (M - lam I), projected onto the eigenplane; a triple one
    takes e1.
    """
    A = M - lam * np.eye(3)
    scale = float(np.linalg.norm(M)) + 1e-300
    a_norm = float(np.linalg.norm(A))
    if a_norm <= 1e-12 * scale:
        return np.array([1.0, 0.0, 0.0]), False
    crosses = [np.cross(A[0], A[1]), np.cross(A[0], A[2]), np.cross(A[1], A[2])]
    norms = [float(np.linalg.norm(c)) for c in crosses]
    k = int(np.argmax(norms))
    if norms[k] > 1e-10 * a_norm * a_norm:
        return crosses[k] / norms[k], True
    row = A[int(np.argmax(np.linalg.norm(A, axis=1)))]
    row = row / np.linalg.norm(row)
    e = np.zeros(3)
    e[int(np.argmin(np.abs(row)))] = 1.0
    v = e - (e @ row) * row
    return v / np.linalg.norm(v), False


def min_eigenpair(M: np.ndarray) -> Tuple[float, np.ndarray]:
    """Smallest eigenvalue and its sign-canonical unit eigenvector.

    For a simple eigenvalue the value returned is the Rayleigh quotient of the
    closed-form eigenvector, which is accurate to second order in that vector.
    """
    M = np.asarray(M, dtype=float)
    lam = float(symmetric_eigenvalues(M)[0])
    v, simple = _eigenvector(M, lam)
    if simple:
        lam = float(v @ M @ v)
    return lam, canonical_sign(v)


def is_degenerate(M: np.ndarray, rel_tol: float = 1e-6) -> bool:
    """Two smallest eigenvalues too close for a stable eigenvector."""
    e = symmetric_eigenvalues(M)
    return bool(e[1] - e[0] <= rel_tol * max(abs(e[2]), 1e-300))


# ---- pair problem ----

@dataclass
class PairProblem:
    i: int  # keyframe positions inside the window
    j: int
    frame_i: int
    frame_j: int
    feature_ids: np.ndarray
    f_i: np.ndarray  # (n, 3)
    f_j: np.ndarray
    cov_i: np.ndarray  # (n, 3, 3)
    cov_j: np.ndarray
    preint: CameraPreintegration
    weights: np.ndarray = field(default=None)
    inliers: np.ndarray = field(default=None)
    m: Optional[np.ndarray] = None
    lam: float = 0.0
    v: Optional[np.ndarray] = None
    var_lambda: float = 1.0
    excluded: bool = False

    def __post_init__(self):
        n = self.f_i.shape[0]
        if self.weights is None:
            self.weights = np.ones(n)
        if self.inliers is None:
            self.inliers = np.ones(n, dtype=bool)

    @property
    def size(self) -> int:
        return int(self.f_i.shape[0])

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.inliers))

    def reset_weights(self) -> None:
        self.weights = np.ones(self.size)
        self.inliers = np.ones(self.size, dtype=bool)


def active_terms(pair: PairProblem, d_bg, d_theta, weighted: bool = True):
    """gamma_C, active f_i, weighted active f_j and their normals."""
    gamma = apply_correction(pair.preint, d_bg, d_theta)
    mask = pair.inliers if weighted else np.ones(pair.size, dtype=bool)
    f_i = pair.f_i[mask]
    f_j = pair.f_j[mask]
    if weighted:
        f_j = f_j * pair.weights[mask][:, None]
    normals = np.cross(f_i, f_j @ gamma.T)
    return gamma, f_i, f_j, normals


def build_M(pair: PairProblem, d_bg=np.zeros(3), d_theta=np.zeros(3), weighted: bool = True) -> np.ndarray:
    if weighted and pair.n_active < MIN_ACTIVE:
        raise ValueError(f"pair ({pair.frame_i}, {pair.frame_j}) has {pair.n_active} active "
                         f"correspondences, need {MIN_ACTIVE}")
    _, _, _, normals = active_terms(pair, d_bg, d_theta, weighted)
    return normals.T @ normals


def rotation_parallax(pair: PairProblem) -> np.ndarray:
    """Per-correspondence angle (rad) between f_i and gamma_C f_j."""
    g = pair.f_j @ pair.preint.gamma.T
    return np.arctan2(np.linalg.norm(np.cross(pair.f_i, g), axis=1), np.einsum("nk,nk->n", pair.f_i, g))
