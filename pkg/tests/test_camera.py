import numpy as np
import pytest

from panorig.camera import (
    DepthMap,
    DepthPixel,
    Intrinsics,
    RgbdRig,
    _splat,
    align_depth_to_color,
    backproject,
    depth_map_points,
    lift_keypoint,
    lift_keypoints,
    project,
    read_depth_map,
    transform_point,
    write_depth_map,
)
from panorig.errors import BehindCamera, DimensionMismatch, InvalidDepth, MissingDepth
from panorig.lie import Pose, exp_map

K = Intrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


def test_backproject_examples():
    np.testing.assert_array_equal(backproject(DepthPixel(320, 240, 2.0), K), [0, 0, 2.0])
    np.testing.assert_allclose(backproject(DepthPixel(420, 240, 1.0), K), [0.2, 0, 1.0])
    with pytest.raises(InvalidDepth):
        backproject(DepthPixel(10, 10, 0.0), K)


def test_transform_point_examples():
    p = np.array([0.3, -1.0, 4.0])
    np.testing.assert_array_equal(transform_point(Pose.identity(), p), p)
    np.testing.assert_allclose(transform_point(Pose.from_translation([0.025, 0, 0]), [0, 0, 1]), [0.025, 0, 1])
    T = exp_map([0, 0, 0, 0, 0, np.pi / 2])
    np.testing.assert_allclose(transform_point(T, [1, 0, 0]), [0, 1, 0], atol=1e-15)


def test_project_examples():
    assert project([0, 0, 1.5], K) == (320.0, 240.0, 1.5)
    np.testing.assert_allclose(project([0.2, 0, 1.0], K), (420, 240, 1.0))
    with pytest.raises(BehindCamera):
        project([0.1, 0.1, 0.0], K)


def test_project_backproject_round_trip(rng):
    for _ in range(1000):
        u, v, z = rng.uniform(0, 640), rng.uniform(0, 480), rng.uniform(0.5, 5.0)
        uu, vv, zz = project(backproject(DepthPixel(u, v, z), K), K)
        assert abs(uu - u) < 1e-9 and abs(vv - v) < 1e-9 and abs(zz - z) < 1e-9


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(0.0, 500, 320, 240, 640, 480)
    with pytest.raises(ValueError):
        Intrinsics(500, 500, 700, 240, 640, 480)


def test_depth_map_shape_checked():
    with pytest.raises(DimensionMismatch):
        DepthMap(K, np.zeros((10, 10)))


def _random_depth(rng, holes=0.2):
    data = rng.uniform(0.5, 5.0, size=(K.height, K.width))
    data[rng.random(data.shape) < holes] = 0.0
    return DepthMap(K, data)


def test_alignment_identity_is_bit_exact(rng):
    dm = _random_depth(rng)
    rig = RgbdRig(K, K, Pose.identity())
    out = align_depth_to_color(dm, rig)
    assert np.array_equal(out.data, dm.data)
    # the general splat path gives the same answer as the registered shortcut
    assert np.array_equal(_splat(dm, rig).data, dm.data)


def test_alignment_single_pixel_example():
    data = np.zeros((480, 640))
    data[240, 420] = 1.0
    out = align_depth_to_color(DepthMap(K, data), RgbdRig(K, K, Pose.from_translation([0.1, 0, 0])))
    assert out.data[240, 470] == 1.0
    assert np.count_nonzero(out.data) == 1


def test_alignment_keeps_nearer_depth():
    data = np.zeros((480, 640))
    # both pixels land on output (420, 240) after a shift along the optical axis
    data[240, 420] = 1.0
    data[240, 370] = 2.0
    shift = Pose.from_translation([0.1, 0, 0])
    out = align_depth_to_color(DepthMap(K, data), RgbdRig(K, K, shift))
    # pixel 420 at z=1 moves 50 px; pixel 370 at z=2 moves 25 px
    assert out.data[240, 470] == 1.0
    assert out.data[240, 395] == 2.0
    data2 = np.zeros((480, 640))
    data2[240, 400] = 2.0  # moves 25 px -> 425
    data2[240, 375] = 1.0  # moves 50 px -> 425
    out = align_depth_to_color(DepthMap(K, data2), RgbdRig(K, K, shift))
    assert out.data[240, 425] == 1.0
    assert np.count_nonzero(out.data) == 1


def test_alignment_invents_no_depths(rng):
    dm = _random_depth(rng, holes=0.5)
    T = exp_map([0.025, 0.01, -0.005, 0.01, -0.02, 0.005])
    kc = Intrinsics(520.0, 515.0, 318.0, 243.0, 640, 480)
    out = align_depth_to_color(dm, RgbdRig(K, kc, T))
    z_all = set(T.apply(depth_map_points(dm))[:, 2].tolist())
    vals = out.data[out.data > 0]
    assert len(vals) > 0
    assert all(v in z_all for v in vals.tolist())


def test_alignment_is_order_independent(rng):
    dm = _random_depth(rng)
    T = exp_map([0.05, 0, 0, 0, 0.02, 0])
    rig = RgbdRig(K, K, T)
    a = align_depth_to_color(dm, rig)
    b = align_depth_to_color(dm, rig)
    assert np.array_equal(a.data, b.data)


def test_alignment_dimension_check():
    small = Intrinsics(100, 100, 50, 50, 100, 100)
    with pytest.raises(DimensionMismatch):
        align_depth_to_color(DepthMap(small, np.ones((100, 100))), RgbdRig(K, K, Pose.identity()))


def test_lift_keypoint_nearest_pixel():
    data = np.zeros((480, 640))
    data[240, 420] = 1.0
    dm = DepthMap(K, data)
    p = lift_keypoint(419.6, 240.4, dm, K)
    np.testing.assert_allclose(p, [(419.6 - 320) / 500, 0.4 / 500, 1.0])
    with pytest.raises(MissingDepth):
        lift_keypoint(100.0, 100.0, dm, K)
    with pytest.raises(ValueError):
        lift_keypoint(-3.0, 10.0, dm, K)


def test_lift_keypoints_flags_holes():
    data = np.zeros((480, 640))
    data[240, 420] = 1.0
    pts, valid = lift_keypoints([[420, 240], [10, 10]], DepthMap(K, data), K)
    assert valid.tolist() == [True, False]
    assert np.isnan(pts[1]).all()


def test_depth_file_round_trip(tmp_path, rng):
    dm = _random_depth(rng)
    path = tmp_path / "d.depth"
    write_depth_map(path, dm)
    blob = path.read_bytes()
    assert blob[:4] == b"PRDM"
    assert len(blob) == 16 + 2 * 640 * 480
    back = read_depth_map(path, K)
    assert np.all((back.data == 0) == (dm.data == 0))
    assert np.max(np.abs(back.data - dm.data)) <= 0.5e-4 + 1e-9
    write_depth_map(tmp_path / "again.depth", back)
    assert (tmp_path / "again.depth").read_bytes() == blob
