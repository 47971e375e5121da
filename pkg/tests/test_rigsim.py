import math

import numpy as np
import pytest

from panorig.camera import lift_keypoints
from panorig.errors import NoOverlap
from panorig.lie import Pose, rotation_angle
from panorig.matching import restrict_to_overlap
from panorig.pipeline import Capture, calibrate
from panorig.rigsim import (
    DEPTH_STEP,
    Landmarks,
    NoiseSpec,
    RigSpec,
    Room,
    build_rig,
    generate_scene,
    kinect_like,
    noiseless,
    overlap_region,
    perturbed_ring,
    relative_to_first,
    render_observations,
    scatter_landmarks,
    visible_mask,
)


def test_consecutive_cameras_are_thirty_degrees_apart():
    poses = build_rig(RigSpec())
    for a, b in zip(poses, poses[1:] + poses[:1]):
        rel = b.inverse() @ a
        assert math.degrees(rotation_angle(rel.rotation)) == pytest.approx(30.0, abs=1e-12)


def test_zero_radius_ring_is_pure_rotation():
    poses = build_rig(RigSpec(n_cameras=4, ring_radius=0.0))
    for a, b in zip(poses, poses[1:]):
        np.testing.assert_array_equal((b.inverse() @ a).translation, 0)


def test_ring_composes_to_identity():
    truth = relative_to_first(build_rig(RigSpec()))
    n = len(truth)
    total = Pose.identity()
    for k in range(n):
        total = (truth[(k + 1) % n].inverse() @ truth[k]) @ total
    assert total.allclose(Pose.identity(), 1e-12)


def test_rig_spec_validation():
    for bad in (dict(n_cameras=2), dict(fov_deg=0), dict(fov_deg=180), dict(overlap_fraction=1.0)):
        with pytest.raises(ValueError):
            RigSpec(**bad)
    with pytest.raises(ValueError):
        NoiseSpec(pixel_sigma=-1)
    with pytest.raises(ValueError):
        NoiseSpec(outlier_rate=1.0)


def test_default_rig_nominal_overlap():
    assert RigSpec().nominal_overlap == pytest.approx(13 / 43)


def test_landmarks_deterministic_and_on_walls():
    room = Room()
    a = scatter_landmarks(RigSpec(), 2000, room, noiseless(3))
    b = scatter_landmarks(RigSpec(), 2000, room, noiseless(3))
    assert np.array_equal(a.points, b.points) and np.array_equal(a.descriptors, b.descriptors)
    assert room.on_vertical_wall(a.points).all()


def test_landmark_count_scales_with_density():
    rig = RigSpec()
    counts = {d: len(scatter_landmarks(rig, d, Room(), noiseless(5))) for d in (2000, 4000)}
    expected = 2 * counts[2000]
    sigma = math.sqrt(counts[4000] + 4 * counts[2000])
    assert abs(counts[4000] - expected) < 3 * sigma


def test_density_must_be_positive():
    with pytest.raises(ValueError):
        scatter_landmarks(RigSpec(), 0, Room())


def test_every_overlap_holds_fifty_shared_landmarks(clean_scene):
    s = clean_scene
    for (i, j), (ra, rb) in s.overlaps.items():
        a = restrict_to_overlap(s.keypoints[i - 1], ra)
        b = restrict_to_overlap(s.keypoints[j - 1], rb)
        shared = np.intersect1d(a.ids, b.ids)
        assert len(shared) >= 50


def test_landmark_on_axis_renders_at_principal_point():
    k = RigSpec().intrinsics()
    lm = Landmarks(np.array([[0.0, 0.0, 2.0]]), np.zeros((1, 64)))
    kps, dm = render_observations(lm, Room(length_x=4.0, length_z=4.0), Pose.identity(), k, noiseless())
    assert len(kps) == 1
    assert tuple(kps.uv[0]) == (k.u0, k.v0)
    assert dm.data[int(k.v0), int(k.u0)] == 2.0


def test_range_culling():
    k = RigSpec().intrinsics()
    z = np.array([0.4, 0.6, 4.9, 5.1])
    pts = np.column_stack([0.05 * z * np.arange(4), np.zeros(4), z])  # distinct pixels
    lm = Landmarks(pts, np.eye(4, 64))
    kps, _ = render_observations(lm, Room(length_x=12.0, length_z=12.0), Pose.identity(), k, noiseless())
    assert sorted(kps.ids.tolist()) == [1, 2]


def test_zero_noise_keypoints_lift_to_landmarks(clean_scene):
    s = clean_scene
    for c in range(s.n):
        kps, dm = s.keypoints[c], s.depth_maps[c]
        pts, valid = lift_keypoints(kps.uv, dm, s.intrinsics)
        assert valid.all()
        world = s.world_poses[c].apply(pts)
        assert np.abs(world - s.landmarks.points[kps.ids]).max() < 1e-6


def test_noise_adds_outliers_and_keeps_bounds(noisy_scene):
    s = noisy_scene
    k = s.intrinsics
    for kps in s.keypoints:
        assert np.all(k.contains(kps.uv[:, 0], kps.uv[:, 1]))
        frac = np.mean(kps.ids == -1)
        assert 0.07 < frac < 0.13


def test_overlap_identical_cameras_is_full_image():
    k = RigSpec().intrinsics()
    r = overlap_region(Pose.identity(), Pose.identity(), k)
    assert r.width_fraction(k) > 0.98
    assert (r.v_max - r.v_min) / k.height > 0.97
    assert r.within(k)


def test_overlap_opposite_cameras():
    poses = build_rig(RigSpec())
    with pytest.raises(NoOverlap):
        overlap_region(poses[0], poses[6], RigSpec().intrinsics())


def test_adjacent_overlap_width(clean_scene):
    k = clean_scene.intrinsics
    for ra, rb in clean_scene.overlaps.values():
        assert 0.2 <= ra.width_fraction(k) <= 0.4
        assert 0.2 <= rb.width_fraction(k) <= 0.4
        assert ra.within(k) and rb.within(k)


def test_scene_generation_is_deterministic(noisy_scene):
    again = generate_scene(noise=kinect_like(7))
    for a, b in zip(noisy_scene.keypoints, again.keypoints):
        assert np.array_equal(a.uv, b.uv) and np.array_equal(a.descriptors, b.descriptors)
    for a, b in zip(noisy_scene.depth_maps, again.depth_maps):
        assert np.array_equal(a.data, b.data)


def test_smaller_rings():
    s = generate_scene(RigSpec(n_cameras=8, fov_deg=60), noiseless(1), density=1500)
    assert len(s.keypoints) == 8 and len(s.overlaps) == 8
    res = calibrate(Capture.from_scene(s))
    assert max(e[0] for e in res.optimized_pair_errors) < 1e-6


def test_pixel_noise_does_not_help():
    rig = RigSpec(width=320, height=240)
    medians = []
    for sigma in (0.5, 2.0):
        errs = []
        for seed in range(20):
            s = generate_scene(rig, NoiseSpec(pixel_sigma=sigma, seed=seed), density=3000)
            res = calibrate(Capture.from_scene(s))
            errs.extend(p.error[0] for p in res.pairs)
        medians.append(np.median(errs))
    assert medians[1] >= medians[0]


def test_perturbed_ring_shape():
    truth, meas = perturbed_ring(seed=0)
    assert len(truth) == len(meas) == 12
    assert truth[0].allclose(Pose.identity(), 0)


def test_snapped_landmarks_sit_on_the_depth_grid(clean_scene):
    s = clean_scene
    for c, cam in enumerate(s.world_poses):
        seen = s.landmarks.points[visible_mask(s.landmarks.points, cam, s.true_intrinsics)]
        z = cam.inverse().apply(seen)[:, 2] / DEPTH_STEP
        assert np.abs(z - np.round(z)).max() < 1e-6, c
    assert np.abs(s.room.wall_distance(s.landmarks.points)).max() < DEPTH_STEP * 2
