from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .manifold import geodesic_angle
from .models import CalibState, GroundTruth
from .preintegration import apply_correction

GOOD = "good"
DETECTED_BAD = "detected-bad"
NON_DETECTED_BAD = "non-detected-bad"
CLASSES = (GOOD, DETECTED_BAD, NON_DETECTED_BAD)

BIAS_ERROR_PCT_MAX = 50.0
R_CI_ERROR_DEG_MAX = 5.0
ABS_BIAS_MIN_NORM = 1e-6  # below this the bias error is reported in rad/s
ABS_BIAS_ERROR_MAX = 1e-3


@dataclass
class Metrics:
    b_g_error: float  # percent, or rad/s when b_g_error_absolute
    b_g_error_absolute: bool
    r_ci_error_deg: float
    rel_rot_error_deg: Optional[float] = None


def bias_error(b_est: np.ndarray, b_true: np.ndarray) -> Tuple[float, bool]:
    """100 |b_est - b| / |b| in percent; absolute error (rad/s) with flag when |b| is ~0."""
    diff = float(np.linalg.norm(np.asarray(b_est) - np.asarray(b_true)))
    norm = float(np.linalg.norm(b_true))
    if norm < ABS_BIAS_MIN_NORM:
        return diff, True
    return 100.0 * diff / norm, False


def extrinsic_error_deg(r_est: np.ndarray, r_true: np.ndarray) -> float:
    return float(np.degrees(geodesic_angle(r_est, r_true)))


def relative_rotation_error_deg(window, state: CalibState, truth: GroundTruth) -> float:
    """Mean angle between the corrected camera increments and the true relative rotations."""
    window.express(state.r_ci)
    d_bg = window.d_bg(state)
    errs = []
    for p in window.pairs:
        gamma = apply_correction(p.preint, d_bg, np.zeros(3))
        true = truth.relative_camera_rotation(int(window.keyframe_t_ns[p.i]), int(window.keyframe_t_ns[p.j]))
        errs.append(geodesic_angle(gamma, true))
    return float(np.degrees(np.mean(errs))) if errs else float("nan")


def compute_metrics(estimate: CalibState, truth: GroundTruth, window=None) -> Metrics:
    if window is not None:
        b_true = truth.mean_bias(int(window.keyframe_t_ns[0]), int(window.keyframe_t_ns[-1]))
    else:
        b_true = truth.biases.mean(axis=0)
    b_err, absolute = bias_error(estimate.b_g, b_true)
    return Metrics(
        b_g_error=b_err,
        b_g_error_absolute=absolute,
        r_ci_error_deg=extrinsic_error_deg(estimate.r_ci, truth.r_ci),
        rel_rot_error_deg=relative_rotation_error_deg(window, estimate, truth) if window is not None else None,
    )


def classify(success: bool, m: Metrics) -> str:
    """good iff accepted with bias and extrinsic errors under the limits; detected-bad iff rejected."""
    if not success:
        return DETECTED_BAD
    bias_ok = (m.b_g_error < ABS_BIAS_ERROR_MAX) if m.b_g_error_absolute else (m.b_g_error < BIAS_ERROR_PCT_MAX)
    if bias_ok and m.r_ci_error_deg < R_CI_ERROR_DEG_MAX:
        return GOOD
    return NON_DETECTED_BAD


@dataclass
class OutcomeRecord:
    segment: int
    window_size: int
    deformation_deg: float
    mode: str
    repetition: int
    success: bool
    converged: bool
    classification: str
    b_g_error: float = float("nan")
    b_g_error_absolute: bool = False
    r_ci_error_deg: float = float("nan")
    rel_rot_error_deg: float = float("nan")
    pass_rate: float = 0.0
    mean_rate: float = float("nan")  # rad/s, window excitation
    refined_r_ci_error_deg: float = float("nan")
    error: str = ""
    timings: Dict[str, float] = field(default_factory=dict)  # ms, kept out of row()

    @property
    def cell(self) -> Tuple[int, float, str]:
        return (self.window_size, self.deformation_deg, self.mode)

    def sort_key(self):
        return (self.segment, self.window_size, self.deformation_deg, self.mode, self.repetition)

    def row(self) -> Dict[str, Any]:
        d = asdict(self)
        d.pop("timings")
        d["success"] = int(self.success)
        d["converged"] = int(self.converged)
        d["b_g_error_absolute"] = int(self.b_g_error_absolute)
        return d
