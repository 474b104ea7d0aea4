"""Bias and extrinsic solve: residual algebra, gating, failure detection and IRLS on synthetic windows."""
import dataclasses
import sys
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

repo_root = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(repo_root))

from src.config import ScenarioConfig, SolverConfig
from src.epipolar import PairProblem, unproject_batch
from src.manifold import exp_so3, geodesic_angle
from src.models import CalibState, CameraIntrinsics, Dataset, Frame, GyroSample, ImuNoiseModel, ImuStream
from src.preintegration import integrate, to_camera_frame
from src.simworld import generate, intrinsics_from, perturb_rotation, sphere_points
from src.solver import (
    chi2_threshold,
    detect_failure,
    fisher_covariance,
    fisher_information,
    fp_weights,
    gate,
    irls_solve,
    lambda_variance,
    residual,
    theta_sigma_deg,
)
from src.window import build_window, select_keyframes

K = CameraIntrinsics(458.654, 457.296, 367.215, 248.375, 752, 480)
T = np.array([0.3, -0.1, 0.05])


def noisy_pair(sigma_px=0.5, n=4000, seed=0, noise=None, r_ci=np.eye(3)):
    """Pair seen through pinhole pixels with Gaussian pixel noise; camera j at T."""
    rng = np.random.default_rng(seed)
    noise = noise or ImuNoiseModel(1.6968e-4, 1.9393e-5, 0.005)
    p = integrate([GyroSample(0.005 * k, np.array([0.2, -0.3, 0.1])) for k in range(50)], np.zeros(3), noise)
    preint = to_camera_frame(p, r_ci)
    gamma = preint.gamma
    X = np.column_stack([rng.uniform(-2, 2, n), rng.uniform(-1.5, 1.5, n), rng.uniform(4, 8, n)])
    uv_i = K.project(X)
    uv_j = K.project((X - T) @ gamma)
    margin = 5.0
    keep = np.all((uv_i > margin) & (uv_i < [K.width - 1 - margin, K.height - 1 - margin]), axis=1) \
        & np.all((uv_j > margin) & (uv_j < [K.width - 1 - margin, K.height - 1 - margin]), axis=1)
    uv_i = uv_i[keep] + rng.normal(size=(keep.sum(), 2)) * sigma_px
    uv_j = uv_j[keep] + rng.normal(size=(keep.sum(), 2)) * sigma_px
    f_i, cov_i = unproject_batch(uv_i, K, max(sigma_px, 0.5))
    f_j, cov_j = unproject_batch(uv_j, K, max(sigma_px, 0.5))
    return PairProblem(i=0, j=1, frame_i=0, frame_j=1, feature_ids=np.arange(len(f_i)), f_i=f_i, f_j=f_j,
                       cov_i=cov_i, cov_j=cov_j, preint=preint)


def scenario(**kw):
    base = dict(seed=3, duration=10.0, rotation_prefix=0.0, n_points=300, pixel_sigma=0.0,
                gyro_noise=False, offset_deg=10.0)
    base.update(kw)
    return ScenarioConfig(**base)


@lru_cache(maxsize=None)
def noiseless_dataset(seed=3):
    return generate(scenario(seed=seed))


def first_window(dataset, size=10, start=4, cfg=None, state=None):
    kfs = select_keyframes(dataset.frames, 4.0)
    state = state or CalibState(np.zeros(3), dataset.r_ci_nominal)
    return build_window(dataset, kfs[start:start + size], state, cfg), state


def constant_rate_dataset(seed=0, omega=(0.05, 0.3, 0.02), velocity=(0.4, 0.0, 0.1), duration=4.0):
    """Camera turning at one fixed body rate while it translates; IMU and camera frames coincide."""
    cfg = scenario(pixel_sigma=0.5, gyro_noise=True)
    rng = np.random.default_rng(seed)
    K_sim = intrinsics_from(cfg)
    points = sphere_points(rng, 400)
    noise = ImuNoiseModel(cfg.imu.sigma_g, cfg.imu.sigma_bg, 1.0 / cfg.imu.rate_hz)
    w = np.asarray(omega, dtype=float)
    v = np.asarray(velocity, dtype=float)

    t_ns = np.arange(int(round(duration * cfg.imu.rate_hz)) + 1, dtype=np.int64) * int(round(1e9 * noise.dt))
    gyro = w + np.asarray(cfg.bias) + rng.normal(size=(t_ns.size, 3)) * cfg.imu.sigma_g / np.sqrt(noise.dt)

    frames = []
    ids = np.arange(points.shape[0])
    for k, t in enumerate(np.arange(0.0, duration + 1e-9, 1.0 / cfg.keyframe_hz)):
        R_wc = exp_so3(w * (t - 0.5 * duration))
        pc = (points - v * t) @ R_wc
        uv = K_sim.project(pc) + rng.normal(size=(points.shape[0], 2)) * cfg.pixel_sigma
        keep = (pc[:, 2] > 0.1) & K_sim.contains(uv)
        frames.append(Frame(frame_id=k, t_ns=int(round(t * 1e9)), feature_ids=ids[keep], uv=uv[keep]))
    return Dataset(imu=ImuStream(t_ns=t_ns, omega=gyro), frames=frames, intrinsics=K_sim, noise=noise,
                   r_ci_nominal=perturb_rotation(np.eye(3), 5.0, rng), name="constant-rate")


class TestResidual:
    """Scalar residual sqrt(lambda_min) and its Jacobian."""

    def test_jacobian_central_differences(self):
        """Analytic de/dx matches central differences away from the truth."""
        rng = np.random.default_rng(0)
        for case in range(10):
            pair = noisy_pair(sigma_px=0.0, n=200, seed=case, r_ci=exp_so3(rng.normal(size=3)))
            d_bg = rng.normal(size=3) * 1e-2
            d_theta = rng.normal(size=3) * 2e-2
            e, jac = residual(pair, d_bg, d_theta)
            eps = 1e-7
            fd = np.zeros(6)
            for k in range(6):
                d = np.zeros(6)
                d[k] = eps
                e_p, _ = residual(pair, d_bg + d[:3], d_theta + d[3:])
                e_m, _ = residual(pair, d_bg - d[:3], d_theta - d[3:])
                fd[k] = (e_p - e_m) / (2 * eps)
            assert e > 0
            assert np.linalg.norm(fd - jac) < 1e-4 * np.linalg.norm(jac)

    def test_zero_at_truth(self):
        """Noiseless bearings at the true rotation give a vanishing residual."""
        pair = noisy_pair(sigma_px=0.0, n=200)
        e, _ = residual(pair)
        assert e < 1e-6


class TestGate:
    """Chi-square gate, per-correspondence weights and the propagated pair variance."""

    def test_threshold_value(self):
        """One-dof 95% quantile."""
        assert chi2_threshold(0.05) == pytest.approx(3.841458820694124, rel=1e-9)

    def test_gate_boundary(self):
        """Inlier iff e^2 <= threshold * var."""
        thr = chi2_threshold(0.05)
        var = np.array([1.0, 1.0, 2.0, 1.0])
        e = np.array([0.0, np.sqrt(thr) * 0.999, np.sqrt(2 * thr) * 1.001, 10.0])
        np.testing.assert_array_equal(gate(e, var, thr), [True, True, False, False])

    def test_empirical_pass_rate(self):
        """Pure pixel noise passes the 95% gate about 95% of the time."""
        pair = noisy_pair(sigma_px=0.5, n=6000, seed=11)
        v = T / np.linalg.norm(T)
        _, inliers, e, var = fp_weights(pair, v)
        rate = inliers.mean()
        assert 0.93 <= rate <= 0.97
        assert np.all(var > 0)

    def test_weights_are_clamped_inverse_sigma(self):
        """w_k = clip(1 / sigma_k)."""
        pair = noisy_pair(sigma_px=0.5, n=500, seed=12)
        v = T / np.linalg.norm(T)
        w, _, _, var = fp_weights(pair, v, clamp=(1e-6, 1e6))
        np.testing.assert_allclose(w, np.clip(1.0 / np.sqrt(var), 1e-6, 1e6))

    def test_lambda_variance_scales_with_pixel_noise(self):
        """Four times the bearing covariance gives four times the variance."""
        quiet = ImuNoiseModel(1e-12, 1e-12, 0.005)
        pair = noisy_pair(sigma_px=0.0, n=300, seed=13, noise=quiet)
        d_bg = np.array([0.01, 0.0, 0.0])
        v1 = lambda_variance(pair, d_bg, np.zeros(3), weighted=False)
        pair.cov_i = pair.cov_i * 4.0
        pair.cov_j = pair.cov_j * 4.0
        v4 = lambda_variance(pair, d_bg, np.zeros(3), weighted=False)
        assert v4 / v1 == pytest.approx(4.0, rel=1e-3)

    def test_lambda_variance_floor_at_zero_residual(self):
        """Identical bearings and no rotation fall back to the floor."""
        pair = noisy_pair(sigma_px=0.0, n=100)
        still = integrate([GyroSample(0.005 * k, np.zeros(3)) for k in range(10)], np.zeros(3),
                          ImuNoiseModel(1e-4, 1e-5, 0.005))
        pair.preint = to_camera_frame(still, np.eye(3))
        pair.f_j = pair.f_i.copy()
        assert lambda_variance(pair, floor=1e-16) == 1e-16

    def test_lambda_variance_matches_sampled_variance(self):
        """Propagated variance of e agrees with resampled pixel and gyro noise."""
        noise = ImuNoiseModel(2e-3, 1.9393e-5, 0.005)
        base = noisy_pair(sigma_px=0.0, n=300, seed=14, noise=noise)
        # a systematic bias offset keeps e away from zero, where it is not linear in the noise
        d_bg = np.array([0.1, -0.05, 0.08])
        predicted = lambda_variance(base, d_bg, np.zeros(3), weighted=False)

        rng = np.random.default_rng(15)
        uv_i, uv_j = K.project(base.f_i), K.project(base.f_j)
        source = base.preint.source
        chol = np.linalg.cholesky(source.cov)

        def rays(uv):
            r = np.column_stack([(uv[:, 0] - K.cx) / K.fx, (uv[:, 1] - K.cy) / K.fy, np.ones(len(uv))])
            return r / np.linalg.norm(r, axis=1, keepdims=True)

        samples = []
        for _ in range(2000):
            jittered = dataclasses.replace(source, gamma=source.gamma @ exp_so3(chol @ rng.normal(size=3)))
            trial = dataclasses.replace(
                base,
                f_i=rays(uv_i + rng.normal(size=uv_i.shape) * 0.5),
                f_j=rays(uv_j + rng.normal(size=uv_j.shape) * 0.5),
                preint=to_camera_frame(jittered, base.preint.r_ci),
            )
            samples.append(residual(trial, d_bg, np.zeros(3), weighted=False)[0])
        assert np.var(samples) == pytest.approx(predicted, rel=0.3)


class TestDetectFailure:
    """Pass-rate threshold is a >= comparison at 0.8."""

    def test_pass_rate_boundary(self):
        """0.8 itself is accepted."""
        assert not detect_failure(0.799, 10.0)
        assert detect_failure(0.800, 10.0)
        assert detect_failure(0.801, 10.0)

    def test_condition(self):
        """Infinite or oversized condition numbers are rejected."""
        assert not detect_failure(1.0, float("inf"))
        assert not detect_failure(1.0, 1e9)
        assert detect_failure(1.0, 1e7)

    def test_bias_sanity(self):
        """Non-finite or implausibly large biases are rejected."""
        assert not detect_failure(1.0, 10.0, np.array([2.0, 0.0, 0.0]))
        assert not detect_failure(1.0, 10.0, np.array([np.nan, 0.0, 0.0]))
        assert detect_failure(1.0, 10.0, np.array([0.03, -0.02, 0.015]))

    def test_extrinsic_sigma_bound(self):
        """The worst extrinsic direction must stay within max_theta_sigma_deg."""
        cov = np.diag([1e-6] * 3 + [np.radians(0.5) ** 2] * 3)
        assert detect_failure(1.0, 10.0, cov=cov)
        cov[5, 5] = np.radians(2.0) ** 2
        assert not detect_failure(1.0, 10.0, cov=cov)
        assert detect_failure(1.0, 10.0, cov=cov, max_theta_sigma_deg=3.0)
        cov[0, 0] = np.nan
        assert not detect_failure(1.0, 10.0, cov=cov, max_theta_sigma_deg=3.0)

    def test_theta_sigma_uses_worst_direction(self):
        """Correlated axes are judged along the principal direction, not per axis."""
        R = exp_so3(np.array([0.3, -0.2, 0.5]))
        block = R @ np.diag([np.radians(2.0) ** 2, 1e-10, 1e-10]) @ R.T
        cov = np.zeros((6, 6))
        cov[3:, 3:] = block
        assert theta_sigma_deg(cov) == pytest.approx(2.0, rel=1e-6)
        assert np.degrees(np.sqrt(np.max(np.diag(block)))) < 2.0


class TestFisher:
    """Information and covariance of a noiseless window near the true state."""

    @pytest.fixture()
    def near_truth(self):
        ds = noiseless_dataset()
        truth = ds.ground_truth
        window, _ = first_window(ds)
        return window, CalibState(truth.biases[0] + np.array([2e-3, -1e-3, 1e-3]), truth.r_ci)

    def test_symmetric_positive_definite(self, near_truth):
        """Full covariance is symmetric with positive eigenvalues."""
        window, state = near_truth
        cov, cond = fisher_covariance(window, state, True, window.pairs)
        np.testing.assert_array_equal(cov, cov.T)
        assert np.all(np.linalg.eigvalsh(cov) > 0)
        assert np.isfinite(cond) and cond > 1.0

    def test_scales_with_noise_variance(self, near_truth):
        """Four times every noise covariance gives four times the state covariance."""
        window, state = near_truth
        cov1, cond1 = fisher_covariance(window, state, True, window.pairs)
        for p in window.pairs:
            p.cov_i = p.cov_i * 4.0
            p.cov_j = p.cov_j * 4.0
            source = dataclasses.replace(p.preint.source, cov=4.0 * p.preint.source.cov)
            p.preint = to_camera_frame(source, p.preint.r_ci)
        cov4, cond4 = fisher_covariance(window, state, True, window.pairs)
        np.testing.assert_allclose(cov4, 4.0 * cov1, rtol=1e-6, atol=1e-20)
        assert cond4 == pytest.approx(cond1, rel=1e-6)

    def test_fixed_extrinsic_block(self, near_truth):
        """Without the extrinsic the bias block inverts the bias information alone."""
        window, state = near_truth
        info = fisher_information(window, state, window.pairs)
        cov, _ = fisher_covariance(window, state, False, window.pairs)
        np.testing.assert_allclose(cov[:3, :3], np.linalg.inv(info[:3, :3]), rtol=1e-8)
        np.testing.assert_array_equal(cov[3:, :], np.zeros((3, 6)))


class TestIrls:
    """Full solve on noiseless and noisy synthetic windows."""

    def test_noiseless_recovery(self):
        """Bias and extrinsic recovered from a 10-degree offset."""
        ds = noiseless_dataset()
        window, init = first_window(ds)
        report = irls_solve(window, init, SolverConfig())
        truth = ds.ground_truth
        assert report.success, report.message
        assert np.linalg.norm(report.state.b_g - truth.biases[0]) < 1e-4
        assert np.degrees(geodesic_angle(report.state.r_ci, truth.r_ci)) < 0.01
        assert report.pass_rate >= 0.8
        assert set(report.timings) == {"reintegration", "estimation", "total"}
        assert report.cov.shape == (6, 6)

    @pytest.mark.parametrize("mode", ["none", "lambda", "fp"])
    def test_weighting_modes(self, mode):
        """Every weighting mode converges on a clean window."""
        ds = noiseless_dataset()
        window, init = first_window(ds)
        report = irls_solve(window, init, SolverConfig(weighting=mode))
        assert report.mode == mode
        assert np.degrees(geodesic_angle(report.state.r_ci, ds.ground_truth.r_ci)) < 0.05

    def test_bias_only(self):
        """A fixed extrinsic is left untouched and gets no covariance."""
        ds = noiseless_dataset()
        truth = ds.ground_truth
        window, init = first_window(ds, state=CalibState(np.zeros(3), truth.r_ci))
        report = irls_solve(window, init, SolverConfig(estimate_extrinsic=False))
        np.testing.assert_array_equal(report.state.r_ci, truth.r_ci)
        assert np.linalg.norm(report.state.b_g - truth.biases[0]) < 1e-4
        np.testing.assert_array_equal(report.cov[3:, 3:], np.zeros((3, 3)))

    def test_lm_stops_early(self):
        """The damped solver stops on its tolerances well before the iteration cap."""
        ds = noiseless_dataset()
        window, init = first_window(ds)
        cfg = SolverConfig()
        report = irls_solve(window, init, cfg)
        assert report.converged
        assert len(report.iterations) < cfg.max_loops
        assert all(n < cfg.lm_max_iters for n in report.iterations[1:])

    def test_pure_translation_is_rejected(self):
        """No rotation leaves the extrinsic unobservable."""
        ds = generate(scenario(seed=5, rotation_amplitude_deg=0.0))
        window, init = first_window(ds)
        report = irls_solve(window, init, SolverConfig())
        assert not report.success
        assert report.message

    def test_constant_rate_is_rejected(self):
        """A fixed rotation axis cannot separate the extrinsic from the bias."""
        ds = constant_rate_dataset()
        window, init = first_window(ds)
        report = irls_solve(window, init, SolverConfig())
        assert not report.success
        assert report.message

    def test_noisy_window_with_outliers(self):
        """Pixel and gyro noise plus 2% gross outliers still give a good estimate."""
        ds = generate(scenario(seed=7, pixel_sigma=0.5, gyro_noise=True))
        rng = np.random.default_rng(0)
        for fr in ds.frames:
            bad = rng.random(len(fr.feature_ids)) < 0.02
            fr.uv[bad] = rng.uniform([0, 0], [K.width - 1, K.height - 1], size=(int(bad.sum()), 2))
        window, init = first_window(ds)
        report = irls_solve(window, init, SolverConfig())
        truth = ds.ground_truth
        assert report.success, report.message
        assert np.degrees(geodesic_angle(report.state.r_ci, truth.r_ci)) < 2.0
        b = truth.biases[0]
        assert 100 * np.linalg.norm(report.state.b_g - b) / np.linalg.norm(b) < 30.0
