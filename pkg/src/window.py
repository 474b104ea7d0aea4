"""Keyframe window assembly: pairs, bearings and preintegrations for one solve."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from .config import SolverConfig
from .epipolar import PairProblem, unproject_batch
from .errors import DegenerateWindowError
from .models import CalibState, Dataset, Frame, ImuNoiseModel, PreintegratedRotation
from .preintegration import compose, integrate_stream, reintegrate, to_camera_frame

logger = logging.getLogger(__name__)


@dataclass
class WindowProblem:
    keyframe_ids: List[int]
    keyframe_t_ns: np.ndarray
    adjacent: List[PreintegratedRotation]  # IMU frame, keyframe k -> k+1
    pairs: List[PairProblem]
    bias_ref: np.ndarray  # bias the preintegrations were integrated at
    noise: ImuNoiseModel
    mode: str = "combined"
    stats: Dict[str, float] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.keyframe_ids)

    @property
    def keyframe_times(self) -> np.ndarray:
        return self.keyframe_t_ns * 1e-9

    def active_pairs(self) -> List[PairProblem]:
        return [p for p in self.pairs if not p.excluded]

    def pair_preint(self, i: int, j: int) -> PreintegratedRotation:
        p = self.adjacent[i]
        for k in range(i + 1, j):
            p = compose(p, self.adjacent[k])
        return p

    def express(self, r_ci: np.ndarray) -> None:
        """Camera-frame increments at r_ci, exactly."""
        for pair in self.pairs:
            pair.preint = to_camera_frame(pair.preint.source, r_ci)

    def refresh(self, state: CalibState, reintegrate_threshold: float = 1e-3) -> bool:
        """Re-express every pair at `state`; reintegrate when the bias moved past the threshold.

        Returns True when the preintegrations were reintegrated.
        """
        moved = float(np.linalg.norm(state.b_g - self.bias_ref))
        redone = moved > reintegrate_threshold
        if redone:
            self.adjacent = [reintegrate(p, state.b_g, self.noise) for p in self.adjacent]
            self.bias_ref = np.array(state.b_g, dtype=float)
            for pair in self.pairs:
                pair.preint = to_camera_frame(self.pair_preint(pair.i, pair.j), state.r_ci)
            logger.debug("reintegrated %d intervals, bias moved %.3e rad/s", len(self.adjacent), moved)
        else:
            self.express(state.r_ci)
        return redone

    def d_bg(self, state: CalibState) -> np.ndarray:
        return np.asarray(state.b_g, dtype=float) - self.bias_ref

    def reset_weights(self) -> None:
        for p in self.pairs:
            p.reset_weights()
            p.excluded = False
            p.var_lambda = 1.0


def select_keyframes(frames: Sequence[Frame], rate_hz: float) -> List[int]:
    """Indices of frames spaced at least 1/rate_hz apart (greedy from the first)."""
    if not frames:
        return []
    min_gap = int(round(1e9 / rate_hz))
    out = [0]
    last = frames[0].t_ns
    for k in range(1, len(frames)):
        # 1 ms slack so a 20 Hz stream subsamples cleanly to 4 Hz
        if frames[k].t_ns - last >= min_gap - 1_000_000:
            out.append(k)
            last = frames[k].t_ns
    return out


def _frame_bearings(frame: Frame, dataset: Dataset, sigma_px: float):
    inside = dataset.intrinsics.contains(frame.uv) if len(frame.uv) else np.zeros(0, dtype=bool)
    ids = frame.feature_ids[inside]
    if len(ids) == 0:
        return ids, np.zeros((0, 3)), np.zeros((0, 3, 3))
    f, cov = unproject_batch(frame.uv[inside], dataset.intrinsics, sigma_px)
    return ids, f, cov


def build_window(dataset: Dataset, keyframe_indices: Sequence[int], state: CalibState,
                 cfg: Optional[SolverConfig] = None, noise: Optional[ImuNoiseModel] = None,
                 sigma_px: Optional[float] = None) -> WindowProblem:
    """Pairs (k, k+1), ..., (k, k+max_pair_gap) sharing at least covisibility_min features."""
    cfg = cfg or SolverConfig()
    noise = noise or dataset.noise
    sigma_px = cfg.pixel_sigma if sigma_px is None else sigma_px
    idx = list(keyframe_indices)
    if len(idx) < 3:
        raise DegenerateWindowError(f"window needs at least 3 keyframes, got {len(idx)}")
    frames = [dataset.frames[k] for k in idx]
    times = np.array([fr.t_ns for fr in frames], dtype=np.int64)
    if np.any(np.diff(times) <= 0):
        raise DegenerateWindowError("keyframe timestamps must be strictly increasing")

    b_g = np.array(state.b_g, dtype=float)
    adjacent = [integrate_stream(dataset.imu, frames[k].t, frames[k + 1].t, b_g, noise)
                for k in range(len(frames) - 1)]
    bearings = [_frame_bearings(fr, dataset, sigma_px) for fr in frames]

    window = WindowProblem(
        keyframe_ids=[fr.frame_id for fr in frames],
        keyframe_t_ns=times,
        adjacent=adjacent,
        pairs=[],
        bias_ref=b_g,
        noise=noise,
        mode=cfg.weighting,
    )
    for a in range(len(frames)):
        ids_a, f_a, cov_a = bearings[a]
        for gap in range(1, cfg.max_pair_gap + 1):
            b = a + gap
            if b >= len(frames):
                break
            ids_b, f_b, cov_b = bearings[b]
            shared, ia, ib = np.intersect1d(ids_a, ids_b, assume_unique=True, return_indices=True)
            if len(shared) < cfg.covisibility_min:
                continue
            window.pairs.append(PairProblem(
                i=a, j=b,
                frame_i=frames[a].frame_id, frame_j=frames[b].frame_id,
                feature_ids=shared,
                f_i=f_a[ia], f_j=f_b[ib],
                cov_i=cov_a[ia], cov_j=cov_b[ib],
                preint=to_camera_frame(window.pair_preint(a, b), state.r_ci),
            ))
    if len(window.pairs) < 2:
        raise DegenerateWindowError(
            f"only {len(window.pairs)} keyframe pair(s) share >= {cfg.covisibility_min} features")
    window.stats["correspondences"] = float(sum(p.size for p in window.pairs))
    logger.debug("window %s..%s: %d pairs, %d correspondences", window.keyframe_ids[0],
                 window.keyframe_ids[-1], len(window.pairs), int(window.stats["correspondences"]))
    return window


def iter_windows(dataset: Dataset, size: int, keyframes: Optional[Sequence[int]] = None,
                 start: int = 0) -> Iterator[List[int]]:
    """Keyframe index lists of `size`, sliding by one keyframe."""
    kf = list(keyframes) if keyframes is not None else list(range(len(dataset.frames)))
    for s in range(start, len(kf) - size + 1):
        yield kf[s:s + size]


def mean_angular_rate(window: WindowProblem) -> float:
    """Mean |omega - b| over the window's held samples, rad/s."""
    rates = np.vstack([p.omegas for p in window.adjacent]) - window.bias_ref
    dts = np.concatenate([p.dts for p in window.adjacent])
    return float(np.sum(np.linalg.norm(rates, axis=1) * dts) / max(np.sum(dts), 1e-12))
