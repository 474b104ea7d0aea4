"""Keyframe selection and window assembly."""
import sys
from pathlib import Path

import numpy as np
import pytest

repo_root = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(repo_root))

from src.config import ScenarioConfig, SolverConfig
from src.errors import DegenerateWindowError
from src.models import CalibState, Frame
from src.simworld import generate
from src.window import build_window, iter_windows, mean_angular_rate, select_keyframes

DS = generate(ScenarioConfig(seed=1, duration=6.0, rotation_prefix=0.0, n_points=300, pixel_sigma=0.0,
                             gyro_noise=False))


def _state():
    return CalibState(np.zeros(3), DS.r_ci_nominal)


class TestSelectKeyframes:
    def test_subsamples_20hz_to_4hz(self):
        """A 20 Hz stream keeps every fifth frame."""
        frames = [Frame(k, k * 50_000_000, np.arange(3), np.zeros((3, 2))) for k in range(41)]
        assert select_keyframes(frames, 4.0) == list(range(0, 41, 5))

    def test_empty(self):
        """No frames, no keyframes."""
        assert select_keyframes([], 4.0) == []


class TestBuildWindow:
    """Pairs (k, k+1) and (k, k+2) with enough shared features."""

    def test_pairs_and_preintegrations(self):
        """Pairs up to the gap limit with composed increments."""
        idx = list(range(10))
        w = build_window(DS, idx, _state(), SolverConfig())
        assert w.size == 10
        assert len(w.adjacent) == 9
        assert 2 <= len(w.pairs) <= 17
        for p in w.pairs:
            assert p.j - p.i in (1, 2)
            assert p.size >= 20
            np.testing.assert_array_equal(p.f_i.shape, (p.size, 3))
        assert w.stats["correspondences"] == sum(p.size for p in w.pairs)

    def test_too_few_keyframes(self):
        """Fewer than three keyframes is degenerate."""
        with pytest.raises(DegenerateWindowError):
            build_window(DS, [0, 1], _state())

    def test_no_covisible_pairs(self):
        """An unreachable covisibility threshold is degenerate."""
        with pytest.raises(DegenerateWindowError):
            build_window(DS, list(range(5)), _state(), SolverConfig(covisibility_min=100000))

    def test_unordered_keyframes(self):
        """Keyframes must be in time order."""
        with pytest.raises(DegenerateWindowError):
            build_window(DS, [3, 2, 4], _state())

    def test_refresh_reintegrates_past_threshold(self):
        """Only a bias move past the threshold triggers reintegration."""
        w = build_window(DS, list(range(6)), _state())
        before = [p.preint.gamma.copy() for p in w.pairs]
        assert not w.refresh(CalibState(np.full(3, 1e-4), DS.r_ci_nominal), 1e-3)
        assert w.refresh(CalibState(np.full(3, 1e-2), DS.r_ci_nominal), 1e-3)
        np.testing.assert_allclose(w.bias_ref, np.full(3, 1e-2))
        assert any(not np.allclose(b, p.preint.gamma) for b, p in zip(before, w.pairs))

    def test_mean_rate_positive(self):
        """A rotating window has a positive mean rate."""
        w = build_window(DS, list(range(6)), _state())
        assert mean_angular_rate(w) > 0.0


class TestIterWindows:
    def test_sliding_by_one(self):
        """Windows advance by one keyframe."""
        wins = list(iter_windows(DS, 5, keyframes=list(range(8))))
        assert wins == [[0, 1, 2, 3, 4], [1, 2, 3, 4, 5], [2, 3, 4, 5, 6], [3, 4, 5, 6, 7]]

    def test_start_offset(self):
        """start skips the leading windows."""
        wins = list(iter_windows(DS, 5, keyframes=list(range(8)), start=2))
        assert wins[0] == [2, 3, 4, 5, 6]
        assert len(wins) == 2
