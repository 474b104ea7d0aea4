"""Sliding-window MAP refinement of (b_g, R_CI) with an iterated error-state Kalman update.

The belief from one window becomes the prior of the next. Between windows only the
bias block is inflated (random walk over the elapsed keyframe time, averaged over
the window size); the extrinsic is treated as constant.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy import linalg

from .config import RefinerConfig, SolverConfig
from .epipolar import rotation_parallax
from .manifold import right_jacobian_inv
from .models import CalibState, GroundTruth, ImuNoiseModel, PriorBelief
from .scoring import bias_error, extrinsic_error_deg
from .solver import SolveReport, ZERO3, reweight, irls_solve, pair_system
from .window import WindowProblem

logger = logging.getLogger(__name__)

Measure = Callable[[CalibState], Tuple[np.ndarray, np.ndarray]]


@dataclass
class IeskfIterate:
    index: int
    state: CalibState
    jacobian: np.ndarray  # d(x ⊟ x_prior)/d delta at `state`
    z: np.ndarray
    H: np.ndarray
    cost: float


@dataclass
class RefineStep:
    index: int
    t: float  # newest keyframe time, s
    state: CalibState
    cov: np.ndarray
    pairs: int
    parallax_deg: float
    r_ci_error_deg: Optional[float] = None
    b_g_error: Optional[float] = None
    handoff: bool = False
    skipped: str = ""
    extra: Dict[str, Any] = field(default_factory=dict)

    def row(self) -> Dict[str, Any]:
        d = np.diag(self.cov)
        return {
            "window": self.index,
            "t": self.t,
            "bgx": float(self.state.b_g[0]),
            "bgy": float(self.state.b_g[1]),
            "bgz": float(self.state.b_g[2]),
            "r_ci_error_deg": self.r_ci_error_deg,
            "b_g_error": self.b_g_error,
            **{f"var{k}": float(d[k]) for k in range(6)},
            "pairs": self.pairs,
            "parallax_deg": self.parallax_deg,
            "handoff": int(self.handoff),
            "skipped": self.skipped,
        }


def propagate_prior(prev: PriorBelief, window_times, noise: ImuNoiseModel, N: Optional[int] = None) -> PriorBelief:
    """Inflate the bias block by sigma_bg^2 * sum(dt) / N.

    `window_times` are keyframe times in seconds, starting with the keyframe that
    just slid out.
    """
    times = np.asarray(window_times, dtype=float)
    if times.size < 2:
        return PriorBelief(prev.state, prev.cov.copy(), dict(prev.extra))
    if np.any(np.diff(times) < 0):
        raise ValueError("window times must be monotone")
    N = N if N is not None else times.size - 1
    if N < 2:
        raise ValueError(f"window size must be >= 2, got {N}")
    elapsed = float(times[-1] - times[0])
    cov = prev.cov.copy()
    cov[:3, :3] += noise.sigma_bg ** 2 * (elapsed / N) * np.eye(3)
    return PriorBelief(prev.state, cov, dict(prev.extra))


def _prior_jacobian(r: np.ndarray) -> np.ndarray:
    J = np.eye(6)
    J[3:, 3:] = right_jacobian_inv(r[3:])
    return J


def _prior_cost(r: np.ndarray, P: np.ndarray) -> float:
    return float(r @ linalg.pinvh(P) @ r)


def iterated_update(prior: PriorBelief, measure: Measure, max_iters: int = 10, step_tol: float = 1e-8,
                    patience: int = 3) -> PriorBelief:
    """Iterated error-state update; measure(state) returns whitened (z, H) linearised at state."""
    x = prior.state
    P = prior.cov
    I6 = np.eye(6)
    worse = 0
    last_cost = None
    history: List[IeskfIterate] = []
    K = H = P_J = None
    for kappa in range(max_iters):
        r = x.boxminus(prior.state)
        J = _prior_jacobian(r)
        J_inv = linalg.inv(J)
        P_J = J_inv @ P @ J_inv.T
        z, H = measure(x)
        if z.size == 0:
            return PriorBelief(prior.state, prior.cov.copy(), dict(prior.extra))
        cost = float(z @ z) + _prior_cost(r, P)
        history.append(IeskfIterate(kappa, x, J, z, H, cost))
        if last_cost is not None and cost > last_cost:
            worse += 1
            if worse >= patience:
                logger.warning("iterated update diverged after %d iterations, keeping prior", kappa + 1)
                extra = dict(prior.extra)
                extra["diverged"] = True
                return PriorBelief(prior.state, prior.cov.copy(), extra)
        else:
            worse = 0
        last_cost = cost
        # K = P H^T (H P H^T + I)^-1 rewritten as a 6x6 solve; P may be singular
        K = linalg.solve(I6 + P_J @ (H.T @ H), P_J @ H.T)
        delta = -K @ z - (I6 - K @ H) @ J_inv @ r
        x = x.boxplus(delta)
        if float(np.linalg.norm(delta)) < step_tol:
            break
    P_post = (I6 - K @ H) @ P_J
    extra = dict(prior.extra)
    extra["iterations"] = len(history)
    extra.pop("diverged", None)
    return PriorBelief(x, 0.5 * (P_post + P_post.T), extra)


def window_measure(window: WindowProblem, threshold: float = 1e-3) -> Measure:
    """Stacked N'v / sigma' over the window's usable pairs, with their Jacobians."""

    def measure(state: CalibState):
        window.refresh(state, threshold)
        d_bg = window.d_bg(state)
        zs, Hs = [], []
        for p in window.active_pairs():
            s, J, _, _ = pair_system(p, d_bg, ZERO3)
            sigma = np.sqrt(p.var_lambda)
            zs.append(s / sigma)
            Hs.append(J / sigma)
        if not zs:
            return np.zeros(0), np.zeros((0, 6))
        return np.concatenate(zs), np.vstack(Hs)

    return measure


def ieskf_update(prior: PriorBelief, window: WindowProblem, cfg: Optional[RefinerConfig] = None,
                 solver_cfg: Optional[SolverConfig] = None) -> PriorBelief:
    cfg = cfg or RefinerConfig()
    solver_cfg = solver_cfg or SolverConfig()
    if not window.pairs:
        return PriorBelief(prior.state, prior.cov.copy(), dict(prior.extra))
    # weights, gates and variances fixed at the prior for the whole update
    window.reset_weights()
    window.refresh(prior.state, solver_cfg.reintegrate_threshold)
    reweight(window, prior.state, solver_cfg.model_copy(update={"weighting": "combined"}))
    return iterated_update(prior, window_measure(window, solver_cfg.reintegrate_threshold),
                           cfg.max_iters, cfg.step_tol, cfg.divergence_patience)


def median_parallax_deg(window: WindowProblem, state: CalibState) -> float:
    window.refresh(state)
    angles = np.concatenate([rotation_parallax(p) for p in window.pairs]) if window.pairs else np.zeros(1)
    return float(np.degrees(np.median(angles)))


def handoff_package(step: RefineStep, reason: str = "parallax") -> Dict[str, Any]:
    """State package for the downstream velocity/gravity initialisation."""
    return {
        "window": step.index,
        "t": step.t,
        "reason": reason,
        "state": step.state.to_dict(),
        "cov": [[float(x) for x in row] for row in step.cov],
        "parallax_deg": step.parallax_deg,
    }


def run_sequence(windows: Iterable[Optional[WindowProblem]], init: SolveReport, noise: ImuNoiseModel,
                 cfg: Optional[RefinerConfig] = None, solver_cfg: Optional[SolverConfig] = None,
                 truth: Optional[GroundTruth] = None, init_window: Optional[WindowProblem] = None
                 ) -> List[RefineStep]:
    """Chain prior propagation and iterated updates over windows sliding by one keyframe.

    A None entry stands for a degenerate window: it is skipped and the belief carried.
    With cfg.use_prior false every window is solved from scratch, seeded only by the
    previous estimate.
    """
    cfg = cfg or RefinerConfig()
    solver_cfg = solver_cfg or SolverConfig()
    if not init.success:
        raise ValueError("refinement needs a successful initial solve")
    belief = PriorBelief(init.state, init.cov.copy())
    prev_first = float(init_window.keyframe_times[0]) if init_window is not None else None
    steps: List[RefineStep] = []
    for index, window in enumerate(windows, start=1):
        if window is None:
            logger.info("window %d degenerate, skipped", index)
            steps.append(RefineStep(index, float("nan"), belief.state, belief.cov, 0, float("nan"),
                                    skipped="degenerate"))
            continue
        times = window.keyframe_times
        if prev_first is not None and prev_first < times[0]:
            times = np.concatenate([[prev_first], times])
        prev_first = float(window.keyframe_times[0])

        if cfg.use_prior:
            belief = propagate_prior(belief, times, noise, window.size)
            belief = ieskf_update(belief, window, cfg, solver_cfg)
        else:
            report = irls_solve(window, belief.state, solver_cfg)
            if report.success:
                belief = PriorBelief(report.state, report.cov)

        step = RefineStep(
            index=index,
            t=float(window.keyframe_times[-1]),
            state=belief.state,
            cov=belief.cov,
            pairs=len(window.active_pairs()),
            parallax_deg=median_parallax_deg(window, belief.state),
            extra=dict(belief.extra),
        )
        if truth is not None:
            step.r_ci_error_deg = extrinsic_error_deg(belief.state.r_ci, truth.r_ci)
            b_true = truth.mean_bias(int(window.keyframe_t_ns[0]), int(window.keyframe_t_ns[-1]))
            step.b_g_error = bias_error(belief.state.b_g, b_true)[0]
        step.handoff = step.parallax_deg > cfg.parallax_deg
        steps.append(step)
        logger.info("window %d t=%.2f pairs=%d parallax=%.3f deg r_ci_err=%s", index, step.t, step.pairs,
                    step.parallax_deg, "n/a" if step.r_ci_error_deg is None else f"{step.r_ci_error_deg:.4f}")
        if step.handoff and cfg.stop_on_parallax:
            logger.info("translation parallax reached at window %d, handing off", index)
            break
    return steps
