"""Joint gyroscope-bias and extrinsic-orientation estimation over a keyframe window.

Each pair contributes e = sqrt(lambda_min(M)). The optimisation works with the
vector form s = N v (rows n_k^T v, v held at the current eigenvector), which has
|s|^2 = lambda_min and the same gradient as the scalar form. Loop 0 runs under a
Cauchy loss; later loops reweight correspondences, gate them with a chi-square
test and normalise every pair by its propagated variance.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.stats import chi2

from .config import SolverConfig
from .epipolar import PairProblem, build_M, is_degenerate, min_eigenpair
from .manifold import exp_so3, exp_so3_batch, right_jacobian, right_jacobian_batch
from .models import CalibState
from .preintegration import correction_vector
from .window import WindowProblem

logger = logging.getLogger(__name__)

ZERO3 = np.zeros(3)
VAR_FLOOR = 1e-16
LAMBDA_GUARD = 1e-18
BIAS_SANITY = 1.0  # rad/s


@dataclass
class SolveReport:
    converged: bool
    success: bool
    state: CalibState
    cov: np.ndarray  # 6x6 over [b_g; theta_ci]
    pass_rate: float
    loop_costs: List[float] = field(default_factory=list)
    iterations: List[int] = field(default_factory=list)
    condition: float = float("inf")
    pairs_used: int = 0
    mode: str = "combined"
    message: str = ""
    timings: Dict[str, float] = field(default_factory=dict)  # seconds

    def to_dict(self) -> Dict[str, Any]:
        return {
            "converged": self.converged,
            "success": self.success,
            "state": self.state.to_dict(),
            "cov": [[float(x) for x in row] for row in self.cov],
            "pass_rate": float(self.pass_rate),
            "loop_costs": [float(c) for c in self.loop_costs],
            "iterations": list(self.iterations),
            "condition": float(self.condition) if np.isfinite(self.condition) else None,
            "pairs_used": self.pairs_used,
            "mode": self.mode,
            "message": self.message,
        }


def chi2_threshold(alpha: float, dof: int = 1) -> float:
    return float(chi2.ppf(1.0 - alpha, df=dof))


def gate(e: np.ndarray, var: np.ndarray, threshold: float) -> np.ndarray:
    """Inlier iff e^2 / var <= threshold (e == 0 always passes)."""
    e = np.asarray(e, dtype=float)
    return e * e <= threshold * np.asarray(var, dtype=float)


# ---- per-pair algebra ----

def _terms(pair: PairProblem, d_bg, d_theta, weighted: bool = True):
    c = correction_vector(pair.preint, d_bg, d_theta)
    gamma = pair.preint.gamma @ exp_so3(c)
    if weighted:
        mask = pair.inliers
        f_i = pair.f_i[mask]
        f_j = pair.f_j[mask] * pair.weights[mask][:, None]
    else:
        mask = np.ones(pair.size, dtype=bool)
        f_i, f_j = pair.f_i, pair.f_j
    N = np.cross(f_i, f_j @ gamma.T)
    return c, gamma, mask, f_i, f_j, N


def _ds_dpsi(gamma: np.ndarray, f_i: np.ndarray, f_j: np.ndarray, v: np.ndarray) -> np.ndarray:
    """d(n_k . v)/d psi for gamma <- gamma Exp(psi), one row per correspondence."""
    u = np.cross(v, f_i)
    return -np.cross(u @ gamma, f_j)


def _ds_dx(pair: PairProblem, c, gamma, f_i, f_j, v) -> np.ndarray:
    B = right_jacobian(c) @ np.hstack([pair.preint.j_bg, pair.preint.j_theta])
    return _ds_dpsi(gamma, f_i, f_j, v) @ B


def pair_system(pair: PairProblem, d_bg=ZERO3, d_theta=ZERO3, weighted: bool = True):
    """(s, ds/dx, lambda, v) with s = N v; x = [d_bg; d_theta]."""
    c, gamma, _, f_i, f_j, N = _terms(pair, d_bg, d_theta, weighted)
    _, v = min_eigenpair(N.T @ N)
    s = N @ v
    return s, _ds_dx(pair, c, gamma, f_i, f_j, v), float(s @ s), v


def residual(pair: PairProblem, d_bg=ZERO3, d_theta=ZERO3, weighted: bool = True) -> Tuple[float, np.ndarray]:
    """e = sqrt(lambda_min) and de/d[d_bg; d_theta]."""
    s, J, lam, _ = pair_system(pair, d_bg, d_theta, weighted)
    e = float(np.sqrt(lam))
    return e, (s @ J) / np.sqrt(max(lam, LAMBDA_GUARD))


def lambda_variance(pair: PairProblem, d_bg=ZERO3, d_theta=ZERO3, weighted: bool = True,
                    floor: float = VAR_FLOOR) -> float:
    """Variance of e propagated from the bearing covariances and the gyro increment covariance.

    With weighting active the primed quantities are used: f_j' = w f_j, cov_j' = w^2 cov_j.
    """
    c, gamma, mask, f_i, f_j, N = _terms(pair, d_bg, d_theta, weighted)
    _, v = min_eigenpair(N.T @ N)
    s = N @ v
    e = float(np.sqrt(s @ s))
    if e == 0.0:
        return floor
    ratio = s / e
    g = f_j @ gamma.T
    a_i = np.cross(g, v)
    u = np.cross(v, f_i)
    a_j = u @ gamma
    cov_i = pair.cov_i[mask]
    cov_j = pair.cov_j[mask]
    if weighted:
        cov_j = cov_j * (pair.weights[mask] ** 2)[:, None, None]
    bearing = np.einsum("n,ni,nij,nj->", ratio ** 2, a_i, cov_i, a_i) \
        + np.einsum("n,nj,njk,nk->", ratio ** 2, a_j, cov_j, a_j)
    # gyro noise perturbs gamma_I on the right; in camera terms psi = Exp(c)^T R phi
    de_dpsi = ratio @ (-np.cross(u @ gamma, f_j))
    de_dphi = de_dpsi @ exp_so3(c).T @ pair.preint.r_ci
    gyro = float(de_dphi @ pair.preint.source.cov @ de_dphi)
    return max(float(bearing) + gyro, floor)


def fp_weights(pair: PairProblem, v: np.ndarray, d_bg=ZERO3, d_theta=ZERO3, alpha: float = 0.05,
               clamp: Tuple[float, float] = (1e-6, 1e6)):
    """Per-correspondence weights 1/sigma_k and chi-square inlier mask.

    Returns (weights, inliers, e_k, var_k); evaluated on every correspondence so a
    previously gated one can come back.
    """
    _, gamma, _, f_i, f_j, N = _terms(pair, d_bg, d_theta, weighted=False)
    e = N @ v
    g = f_j @ gamma.T
    a_i = np.cross(g, v)
    a_j = np.cross(v, f_i) @ gamma
    var = np.einsum("ni,nij,nj->n", a_i, pair.cov_i, a_i) + np.einsum("ni,nij,nj->n", a_j, pair.cov_j, a_j)
    w = np.clip(1.0 / np.sqrt(np.maximum(var, 1e-300)), clamp[0], clamp[1])
    inliers = gate(e, var, chi2_threshold(alpha))
    return w, inliers, e, var


# ---- failure detection / information ----

def theta_sigma_deg(cov: np.ndarray) -> float:
    """Standard deviation (deg) of the extrinsic along its worst-determined direction."""
    block = 0.5 * (cov[3:6, 3:6] + cov[3:6, 3:6].T)
    return float(np.degrees(np.sqrt(max(float(np.linalg.eigvalsh(block)[-1]), 0.0))))


def detect_failure(pass_rate: float, condition: float, b_g: Optional[np.ndarray] = None,
                   epsilon_pass: float = 0.8, condition_max: float = 1e8,
                   cov: Optional[np.ndarray] = None, max_theta_sigma_deg: float = 1.0) -> bool:
    """True when the solve is accepted.

    Needs pass rate >= epsilon_pass, a well-conditioned information matrix, a sane
    bias and, when `cov` is given, an extrinsic no worse determined than
    max_theta_sigma_deg in any direction.
    """
    if not (pass_rate >= epsilon_pass):
        return False
    if not (np.isfinite(condition) and condition < condition_max):
        return False
    if b_g is not None:
        if not np.all(np.isfinite(b_g)) or float(np.linalg.norm(b_g)) >= BIAS_SANITY:
            return False
    if cov is not None:
        if not np.all(np.isfinite(cov)) or theta_sigma_deg(cov) > max_theta_sigma_deg:
            return False
    return True


def fisher_information(window: WindowProblem, state: CalibState, pairs: Optional[Sequence[PairProblem]] = None
                       ) -> np.ndarray:
    window.express(state.r_ci)
    d_bg = window.d_bg(state)
    info = np.zeros((6, 6))
    for p in (pairs if pairs is not None else window.active_pairs()):
        var = lambda_variance(p, d_bg, ZERO3)
        _, J, _, _ = pair_system(p, d_bg, ZERO3)
        info += J.T @ J / var
    return 0.5 * (info + info.T)


def condition_number(info: np.ndarray) -> float:
    eig = np.linalg.eigvalsh(info)
    if eig[0] <= 0.0:
        return float("inf")
    return float(eig[-1] / eig[0])


def fisher_covariance(window: WindowProblem, state: CalibState, estimate_extrinsic: bool = True,
                      pairs: Optional[Sequence[PairProblem]] = None) -> Tuple[np.ndarray, float]:
    """(6x6 covariance, condition number of the information over the free parameters).

    A fixed extrinsic gets a zero covariance block. A singular information gives an
    infinite condition number and a pseudo-inverse covariance.
    """
    info = fisher_information(window, state, pairs)
    n = 6 if estimate_extrinsic else 3
    sub = info[:n, :n]
    cond = condition_number(sub)
    cov = np.zeros((6, 6))
    if np.isfinite(cond):
        cov[:n, :n] = linalg.inv(sub)
    else:
        cov[:n, :n] = linalg.pinvh(sub)
    return 0.5 * (cov + cov.T), cond


# ---- IRLS ----

@dataclass
class PairStack:
    """Active correspondences of several pairs, concatenated for one vectorised evaluation."""

    f_i: np.ndarray  # (n, 3)
    f_j: np.ndarray  # (n, 3), weights applied
    owner: np.ndarray  # (n,) pair position of each row
    starts: np.ndarray  # (P,) first row of each pair
    gamma_imu: np.ndarray  # (P, 3, 3) IMU-frame increments at the window's reference bias
    j_bg_imu: np.ndarray  # (P, 3, 3)
    scales: np.ndarray  # (P,)

    @classmethod
    def from_pairs(cls, pairs: Sequence[PairProblem], scales: Sequence[float]) -> "PairStack":
        f_i, f_j, owner = [], [], []
        for k, p in enumerate(pairs):
            mask = p.inliers
            f_i.append(p.f_i[mask])
            f_j.append(p.f_j[mask] * p.weights[mask][:, None])
            owner.append(np.full(int(np.count_nonzero(mask)), k))
        sizes = np.array([len(o) for o in owner])
        return cls(
            f_i=np.vstack(f_i),
            f_j=np.vstack(f_j),
            owner=np.concatenate(owner),
            starts=np.concatenate([[0], np.cumsum(sizes)[:-1]]),
            gamma_imu=np.stack([p.preint.source.gamma for p in pairs]),
            j_bg_imu=np.stack([p.preint.source.j_bg for p in pairs]),
            scales=np.asarray(scales, dtype=float),
        )

    def evaluate(self, d_bg: np.ndarray, r_ci: np.ndarray, with_jacobian: bool = True):
        """(cost, H, g) of sum_p scale_p |N_p v_p|^2 with d_theta = 0 at r_ci."""
        R = np.asarray(r_ci, dtype=float)
        gamma_c = R @ self.gamma_imu @ R.T
        j_bg = R @ self.j_bg_imu
        c = j_bg @ np.asarray(d_bg, dtype=float)
        gamma = gamma_c @ exp_so3_batch(c)
        g_rows = gamma[self.owner]
        N = np.cross(self.f_i, np.einsum("nij,nj->ni", g_rows, self.f_j))
        M = np.add.reduceat(N[:, :, None] * N[:, None, :], self.starts, axis=0)
        v = np.linalg.eigh(M)[1][:, :, 0]
        v_rows = v[self.owner]
        s = np.einsum("ni,ni->n", N, v_rows)
        w = self.scales[self.owner]
        cost = float(np.sum(w * s * s))
        if not with_jacobian:
            return cost, None, None
        j_theta = (R @ np.transpose(self.gamma_imu, (0, 2, 1)) @ R.T - np.eye(3)) @ R
        B = right_jacobian_batch(c) @ np.concatenate([j_bg, j_theta], axis=2)  # (P, 3, 6)
        u = np.cross(v_rows, self.f_i)
        ds_dpsi = -np.cross(np.einsum("ni,nij->nj", u, g_rows), self.f_j)
        J = np.einsum("ni,nij->nj", ds_dpsi, B[self.owner])
        return cost, (J * w[:, None]).T @ J, J.T @ (w * s)


def _levenberg_marquardt(window: WindowProblem, pairs, scales, state: CalibState, cfg: SolverConfig):
    """Damped Gauss-Newton over the stacked pairs.

    Stops when the model predicts a relative decrease below rel_tol, the step is
    below step_tol, an accepted step gains less than rel_tol, or the damping runs away.
    """
    n = 6 if cfg.estimate_extrinsic else 3
    stack = PairStack.from_pairs(pairs, scales)
    mu = 1e-4
    cost, H, g = stack.evaluate(window.d_bg(state), state.r_ci)
    converged = cost < 1e-20
    it = 0
    while not converged and it < cfg.lm_max_iters:
        it += 1
        Hf, gf = H[:n, :n], g[:n]
        diag = np.diag(Hf)
        A = Hf + mu * np.diag(diag + 1e-9 * max(float(np.mean(diag)), 1e-300))
        try:
            step = -linalg.solve(A, gf, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = -np.linalg.lstsq(A, gf, rcond=None)[0]
        predicted = -(2.0 * float(gf @ step) + float(step @ Hf @ step))
        if predicted <= cfg.rel_tol * cost or float(np.linalg.norm(step)) <= cfg.step_tol:
            converged = True
            break
        delta = np.zeros(6)
        delta[:n] = step
        candidate = state.boxplus(delta)
        new_cost, _, _ = stack.evaluate(window.d_bg(candidate), candidate.r_ci, with_jacobian=False)
        if new_cost < cost:
            gain = (cost - new_cost) / max(cost, 1e-300)
            state = candidate
            mu = max(mu / 10.0, 1e-12)
            cost, H, g = stack.evaluate(window.d_bg(state), state.r_ci)
            if gain <= cfg.rel_tol or cost < 1e-20:
                converged = True
                break
        else:
            mu *= 10.0
            if mu > 1e12:
                break
    window.express(state.r_ci)
    return state, cost, it, converged


def _cauchy_scales(window: WindowProblem, state: CalibState, c: float) -> List[float]:
    d_bg = window.d_bg(state)
    e = np.array([residual(p, d_bg, ZERO3)[0] for p in window.pairs])
    m = max(float(np.median(e)), 1e-12)
    z = e / (c * m)
    return list(1.0 / (1.0 + z * z))


def reweight(window: WindowProblem, state: CalibState, cfg: SolverConfig) -> None:
    d_bg = window.d_bg(state)
    gated = cfg.weighting in ("fp", "combined")
    normalised = cfg.weighting in ("lambda", "combined")
    for p in window.pairs:
        if gated:
            if p.n_active < cfg.min_active:
                p.reset_weights()
            M = build_M(p, d_bg, ZERO3)
            if is_degenerate(M):
                logger.debug("pair (%s, %s): repeated smallest eigenvalue, weights kept", p.frame_i, p.frame_j)
            else:
                _, v = min_eigenpair(M)
                p.weights, p.inliers, _, _ = fp_weights(p, v, d_bg, ZERO3, cfg.chi2_alpha, cfg.weight_clamp)
        p.excluded = p.n_active < cfg.min_active
        p.var_lambda = lambda_variance(p, d_bg, ZERO3) if (normalised and not p.excluded) else 1.0


def final_gate(window: WindowProblem, state: CalibState, cfg: SolverConfig) -> float:
    """Chi-square pass rate over every correspondence of the usable pairs at `state`."""
    window.express(state.r_ci)
    d_bg = window.d_bg(state)
    passed = total = 0
    for p in window.pairs:
        if p.excluded:
            continue
        M = build_M(p, d_bg, ZERO3) if p.n_active >= cfg.min_active else build_M(p, d_bg, ZERO3, weighted=False)
        lam, v = min_eigenpair(M)
        _, inliers, _, _ = fp_weights(p, v, d_bg, ZERO3, cfg.chi2_alpha, cfg.weight_clamp)
        p.m, p.lam, p.v = M, lam, v
        passed += int(np.count_nonzero(inliers))
        total += p.size
    return passed / total if total else 0.0


def irls_solve(window: WindowProblem, init: CalibState, cfg: Optional[SolverConfig] = None) -> SolveReport:
    cfg = cfg or SolverConfig()
    t_start = time.perf_counter()
    t_reint = 0.0
    state = init
    window.mode = cfg.weighting
    window.reset_weights()
    loop_costs: List[float] = []
    iterations: List[int] = []
    converged = False
    message = ""
    prev_cost: Optional[float] = None
    prev_state = state

    for loop in range(cfg.max_loops):
        t0 = time.perf_counter()
        window.refresh(state, cfg.reintegrate_threshold)
        t_reint += time.perf_counter() - t0

        if loop == 0:
            pairs = list(window.pairs)
            scales = _cauchy_scales(window, state, cfg.cauchy_scale)
        else:
            reweight(window, state, cfg)
            pairs = window.active_pairs()
            if len(pairs) < 2:
                message = f"only {len(pairs)} pair(s) keep >= {cfg.min_active} inliers"
                break
            scales = [1.0 / p.var_lambda for p in pairs]

        state, cost, n_it, lm_converged = _levenberg_marquardt(window, pairs, scales, state, cfg)
        loop_costs.append(float(cost))
        iterations.append(n_it)
        logger.debug("loop %d: cost=%.6e lm_iters=%d lm_converged=%s pairs=%d", loop, cost, n_it,
                     lm_converged, len(pairs))
        moved = state.boxminus(prev_state)
        prev_state = state
        if loop >= 1:
            settled = max(float(np.linalg.norm(moved[:3])), float(np.linalg.norm(moved[3:]))) <= cfg.state_tol
            if settled or cost < 1e-20 or (prev_cost is not None
                                           and abs(prev_cost - cost) <= cfg.rel_tol * max(prev_cost, 1e-300)):
                converged = True
                break
            prev_cost = cost

    t0 = time.perf_counter()
    window.refresh(state, cfg.reintegrate_threshold)
    t_reint += time.perf_counter() - t0

    used = window.active_pairs()
    pass_rate = final_gate(window, state, cfg) if len(used) >= 2 else 0.0
    if len(used) >= 2:
        cov, cond = fisher_covariance(window, state, cfg.estimate_extrinsic, used)
    else:
        cov, cond = np.zeros((6, 6)), float("inf")
    success = (not message) and detect_failure(pass_rate, cond, state.b_g, cfg.epsilon_pass, cfg.condition_max,
                                               cov if cfg.estimate_extrinsic else None, cfg.max_theta_sigma_deg)
    if not success and not message:
        if pass_rate < cfg.epsilon_pass:
            message = f"pass rate {pass_rate:.3f} below {cfg.epsilon_pass}"
        elif not (cond < cfg.condition_max):
            message = f"information condition number {cond:.3e} too large"
        elif cfg.estimate_extrinsic and not (theta_sigma_deg(cov) <= cfg.max_theta_sigma_deg):
            message = f"extrinsic poorly observed, sigma {theta_sigma_deg(cov):.3f} deg"
        else:
            message = "bias estimate out of range"
    if not success:
        logger.warning("solve rejected for window %s..%s: %s", window.keyframe_ids[0],
                       window.keyframe_ids[-1], message)

    total = time.perf_counter() - t_start
    return SolveReport(
        converged=converged,
        success=success,
        state=state,
        cov=cov,
        pass_rate=float(pass_rate),
        loop_costs=loop_costs,
        iterations=iterations,
        condition=cond,
        pairs_used=len(used),
        mode=cfg.weighting,
        message=message,
        timings={"reintegration": t_reint, "estimation": total - t_reint, "total": total},
    )
