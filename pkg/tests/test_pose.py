"""Keypoint normalization and conditioning-map rasterization contracts."""

from __future__ import annotations

import math

import numpy as np
import pytest

from balancegen.pose import (
    CONFIDENCE_GATE,
    DEFAULT_SKELETON,
    HandPose,
    render_bones,
    render_joints,
    select_primary_hand,
)


def pose_at(points: list[tuple[float, float]], confidence: float = 1.0) -> HandPose:
    kp = np.zeros((21, 2))
    for i, (x, y) in enumerate(points):
        kp[i] = (x, y)
    return HandPose(keypoints=kp, confidences=np.full(21, confidence))


def random_pose(rng: np.random.Generator) -> HandPose:
    return HandPose(keypoints=rng.random((21, 2)), confidences=rng.random(21))


class TestHandPose:
    def test_clamping(self):
        kp = np.full((21, 2), 1.7)
        kp[0] = (-0.2, 0.5)
        p = HandPose(keypoints=kp, confidences=np.ones(21))
        assert p.keypoints.max() <= 1.0
        assert p.keypoints.min() >= 0.0

    def test_mean_confidence(self):
        conf = np.linspace(0, 1, 21)
        p = HandPose(keypoints=np.zeros((21, 2)), confidences=conf)
        assert p.mean_confidence == pytest.approx(conf.mean())

    def test_wrong_shape(self):
        with pytest.raises(ValueError):
            HandPose(keypoints=np.zeros((20, 2)), confidences=np.ones(21))


class TestSelectPrimaryHand:
    def test_singleton(self):
        p = pose_at([(0.5, 0.5)])
        assert select_primary_hand([p]) is p

    def test_argmax(self):
        strong = pose_at([(0.1, 0.1)], confidence=0.9)
        weak = pose_at([(0.2, 0.2)], confidence=0.4)
        assert select_primary_hand([weak, strong]) is strong

    def test_empty(self):
        assert select_primary_hand([]) is None


class TestRenderJoints:
    def test_peak_at_center(self):
        m = render_joints(pose_at([(0.5, 0.5)] * 21), 64, 64)
        ch = m.channels[0]
        assert ch[32, 32] == pytest.approx(1.0)
        assert np.unravel_index(ch.argmax(), ch.shape) == (32, 32)

    def test_overlapping_keypoints_stay_separate(self):
        m = render_joints(pose_at([(0.3, 0.7), (0.3, 0.7)] + [(0.5, 0.5)] * 19), 32, 32)
        assert m.num_channels == 21
        np.testing.assert_array_equal(m.channels[0], m.channels[1])

    def test_gaussian_value_at_three_pixels(self):
        # hand evaluation: exp(-(3^2 + 0) / (2 * 1.5^2)) = exp(-2)
        m = render_joints(pose_at([(0.5, 0.5)] * 21), 64, 64, sigma_px=1.5)
        assert m.channels[0][32, 35] == pytest.approx(math.exp(-2.0), abs=1e-6)

    def test_peak_is_one_for_random_poses(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = HandPose(keypoints=rng.random((21, 2)), confidences=np.ones(21))
            m = render_joints(p, 48, 48)
            assert m.channels.reshape(21, -1).max(axis=1) == pytest.approx(1.0)

    def test_monotone_radial_decay(self):
        m = render_joints(pose_at([(0.5, 0.5)] * 21), 65, 65, sigma_px=2.0)
        row = m.channels[0][32, 32:]
        assert (np.diff(row) <= 0).all()
        # strictly decreasing until float32 underflow flattens the tail
        assert (np.diff(row[:10]) < 0).all()

    def test_confidence_gate(self):
        p = pose_at([(0.5, 0.5)] * 21, confidence=CONFIDENCE_GATE / 2)
        m = render_joints(p, 32, 32)
        assert m.channels.max() == 0.0

    def test_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            render_joints(pose_at([(0.5, 0.5)] * 21), 32, 32, sigma_px=0.0)

    def test_flip_equivariance_odd_width(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            p = random_pose(rng)
            rendered_flip = render_joints(p.flipped_horizontal(), 33, 33).channels
            mirrored = render_joints(p, 33, 33).channels[:, :, ::-1]
            np.testing.assert_array_equal(rendered_flip, mirrored)

    def test_determinism(self):
        rng = np.random.default_rng(3)
        p = random_pose(rng)
        a = render_joints(p, 64, 64).channels
        b = render_joints(p, 64, 64).channels
        np.testing.assert_array_equal(a, b)


def bone_support_oracle(
    a: tuple[float, float], b: tuple[float, float], h: int, w: int, thickness: float
) -> set[tuple[int, int]]:
    """Dense-sampling reference: pixels within the anti-aliased stroke."""
    ax, ay = a[0] * (w - 1), a[1] * (h - 1)
    bx, by = b[0] * (w - 1), b[1] * (h - 1)
    ts = np.linspace(0.0, 1.0, 4096)
    px, py = ax + ts * (bx - ax), ay + ts * (by - ay)
    support = set()
    for v in range(h):
        for u in range(w):
            d = np.sqrt((px - u) ** 2 + (py - v) ** 2).min()
            if thickness / 2 + 0.5 - d > 0:
                support.add((v, u))
    return support


class TestRenderBones:
    def test_channel_count(self):
        m = render_bones(pose_at([(0.5, 0.5)] * 21), 32, 32)
        assert m.num_channels == 20

    def test_coincident_endpoints_make_disc(self):
        p = pose_at([(0.5, 0.5)] * 21)
        m = render_bones(p, 65, 65, thickness_px=4.0)
        ch = m.channels[0]
        assert ch[32, 32] == 1.0
        # fully-on pixels sit within the disc radius, nothing beyond the ramp
        dist = np.sqrt(
            (np.arange(65)[None, :] - 32.0) ** 2 + (np.arange(65)[:, None] - 32.0) ** 2
        )
        assert (ch[dist <= 1.5] == 1.0).all()
        assert (ch[dist >= 2.5] == 0.0).all()

    def test_horizontal_bone_support_matches_oracle(self):
        kp = [(0.25, 0.5), (0.75, 0.5)] + [(0.0, 0.0)] * 19
        conf = np.zeros(21)
        conf[0] = conf[1] = 1.0
        p = HandPose(keypoints=np.array(kp), confidences=conf)
        m = render_bones(p, 64, 64, thickness_px=1.0)
        got = {(v, u) for v, u in zip(*np.nonzero(m.channels[0]))}
        want = bone_support_oracle((0.25, 0.5), (0.75, 0.5), 64, 64, 1.0)
        assert got == want
        # support hugs row 32 and columns 16..48, give or take the
        # one-pixel anti-aliasing ramp
        rows = {int(v) for v, _ in got}
        cols = {int(u) for _, u in got}
        assert rows <= {31, 32, 33}
        assert 15 <= min(cols) and max(cols) <= 48

    def test_all_channels_zero_when_gated(self):
        p = pose_at([(0.5, 0.5)] * 21, confidence=0.0)
        m = render_bones(p, 32, 32)
        assert m.channels.max() == 0.0

    def test_values_in_unit_range(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            m = render_bones(random_pose(rng), 32, 32, thickness_px=2.0)
            assert m.channels.min() >= 0.0
            assert m.channels.max() <= 1.0

    def test_flip_equivariance(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            p = HandPose(keypoints=rng.random((21, 2)), confidences=np.ones(21))
            rendered_flip = render_bones(p.flipped_horizontal(), 33, 33).channels
            mirrored = render_bones(p, 33, 33).channels[:, :, ::-1]
            np.testing.assert_allclose(rendered_flip, mirrored, atol=1e-6)

    def test_thickness_below_one_rejected(self):
        with pytest.raises(ValueError):
            render_bones(pose_at([(0.5, 0.5)] * 21), 32, 32, thickness_px=0.5)


class TestSkeleton:
    def test_default_is_a_tree(self):
        assert len(DEFAULT_SKELETON.bones) == 20
        children = [b for _, b in DEFAULT_SKELETON.bones]
        assert sorted(children) == list(range(1, 21))
