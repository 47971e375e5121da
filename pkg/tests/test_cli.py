import json
import subprocess
import sys

import numpy as np
import pytest

from panorig.bundle import DEFAULT_DEPTH_SCALE, read_bundle, write_bundle
from panorig.camera import DepthMap, nearest_pixel, write_depth_map
from panorig.cli import main
from panorig.graph import read_nodes
from panorig.pairwise import pose_error
from panorig.pipeline import parse_sweep_csv, read_ply


@pytest.fixture(scope="module")
def clean_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("clean")
    assert main(["generate", "--preset", "noiseless", "--seed", "7", "--out", str(out)]) == 0
    return out


def _files(path):
    return sorted(p.name for p in path.iterdir())


def test_generate_inventory_and_determinism(tmp_path, clean_bundle):
    names = _files(clean_bundle)
    assert sum(n.endswith(".kp") for n in names) == 12
    assert sum(n.endswith(".depth") for n in names) == 12
    assert "truth_poses.txt" in names and "rig.json" in names
    again = tmp_path / "again"
    assert main(["generate", "--preset", "noiseless", "--seed", "7", "--out", str(again)]) == 0
    for name in names:
        assert (again / name).read_bytes() == (clean_bundle / name).read_bytes(), name


def test_generate_four_cameras(tmp_path):
    assert main(["generate", "--cameras", "4", "--out", str(tmp_path)]) == 0
    names = _files(tmp_path)
    assert sum(n.endswith(".kp") for n in names) == 4
    assert sum(n.endswith(".depth") for n in names) == 4
    meta = json.loads((tmp_path / "rig.json").read_text())
    assert meta["rig"]["n_cameras"] == 4


def test_bundle_round_trip_matches_scene(tmp_path, clean_scene):
    write_bundle(tmp_path, clean_scene)
    cap = read_bundle(tmp_path)
    assert cap.n == 12
    for a, b in zip(cap.keypoints, clean_scene.keypoints):
        assert np.array_equal(a.uv, b.uv) and np.array_equal(a.ids, b.ids)
    for a, b, kp in zip(cap.depth_maps, clean_scene.depth_maps, clean_scene.keypoints):
        assert np.abs(a.data - b.data).max() <= DEFAULT_DEPTH_SCALE / 2 + 1e-12
        ui, vi = nearest_pixel(kp.uv[:, 0], kp.uv[:, 1], cap.intrinsics)
        # keypoint depths sit on the grid and survive the file exactly
        np.testing.assert_allclose(a.data[vi, ui], b.data[vi, ui], rtol=1e-15, atol=0)
    for a, b in zip(cap.truth, clean_scene.truth_poses):
        assert a.allclose(b, 1e-12)
    assert set(cap.overlaps) == set(clean_scene.overlaps)


def test_calibrate_zero_noise_bundle(tmp_path, clean_bundle, capsys):
    out = tmp_path / "cal"
    assert main(["calibrate", "--bundle", str(clean_bundle), "--out", str(out)]) == 0
    report = capsys.readouterr().out
    assert "closure_after" in report
    poses = read_nodes(out / "poses.txt")
    truth = read_nodes(clean_bundle / "truth_poses.txt")
    gauge = truth[1] @ poses[1].inverse()
    for k in truth:
        rot, trans = pose_error(gauge @ poses[k], truth[k])
        assert rot < 1e-6 and trans / 100 < 1e-8
    closure = [float(x) for l in report.splitlines() if l.startswith("closure_after") for x in l.split()[2::2]]
    assert closure and max(closure) < 1e-8
    assert (out / "report.txt").read_text() == report


def test_calibrate_kinect_like_ratio_six(capsys):
    assert main(["calibrate", "--preset", "kinect-like", "--seed", "7", "--ratio", "6"]) == 0
    lines = dict(l.split(" ", 1) for l in capsys.readouterr().out.splitlines() if l.endswith(tuple("0123456789")))
    ini = float(lines["initial_mean_error"].split()[1])
    opt = float(lines["optimized_mean_error"].split()[1])
    assert opt < ini


def test_sweep_csv(tmp_path, capsys):
    assert main(["sweep", "--seed", "7", "--ratios", "1.5,2,3,4,5,6,7,8,9,10", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert (tmp_path / "sweep.csv").read_text() == text
    rows = parse_sweep_csv(text)
    assert len(rows) == 10
    counts = [r.correspondences for r in rows]
    assert counts == sorted(counts)


def test_merge(tmp_path, clean_bundle, capsys):
    assert main(["merge", "--bundle", str(clean_bundle), "--poses", str(clean_bundle / "truth_poses.txt"), "--out", str(tmp_path)]) == 0
    points, colors = read_ply(tmp_path / "merged.ply")
    cap = read_bundle(clean_bundle)
    assert len(points) == sum(d.valid_count for d in cap.depth_maps)
    assert colors is not None and len(colors) == len(points)


def test_merge_missing_pose_is_input_error(tmp_path, clean_bundle, capsys):
    poses = tmp_path / "few.txt"
    poses.write_text("\n".join((clean_bundle / "truth_poses.txt").read_text().splitlines()[:3]) + "\n")
    assert main(["merge", "--bundle", str(clean_bundle), "--poses", str(poses), "--out", str(tmp_path)]) == 2
    assert "camera 4" in capsys.readouterr().err


def test_netsim(capsys):
    assert main(["netsim", "--frames", "3"]) == 0
    out = capsys.readouterr().out
    assert "18432000" in out and "6.8 fps" in out
    assert main(["netsim", "--frames", "3", "--bandwidth", "2e9"]) == 0
    assert "13.6 fps" in capsys.readouterr().out
    assert main(["netsim", "--frames", "3", "--loss", "0"]) == 0
    assert "dropped_sets    0" in capsys.readouterr().out


def test_config_errors_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"preset": "kinect-like", "colour": 3}))
    assert main(["calibrate", "--config", str(bad)]) == 2
    assert "colour" in capsys.readouterr().err
    bad.write_text("{not json")
    assert main(["calibrate", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"noise": {"pixel_sigma": -1}}))
    assert main(["calibrate", "--config", str(bad)]) == 2
    assert main(["sweep", "--ratios", "3,2"]) == 2
    assert main(["calibrate", "--bundle", str(tmp_path / "nowhere")]) == 2


def test_config_file_drives_the_run(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "noiseless", "seed": 3, "ratios": [2, 4], "rig": {"n_cameras": 12}}))
    assert main(["sweep", "--config", str(cfg)]) == 0
    rows = parse_sweep_csv(capsys.readouterr().out)
    assert [r.ratio for r in rows] == [2.0, 4.0]
    assert all(r.opti_rot_deg < 1e-6 for r in rows)


def test_numerical_failure_exit_three(tmp_path, clean_bundle, capsys):
    broken = tmp_path / "broken"
    broken.mkdir()
    for f in clean_bundle.iterdir():
        (broken / f.name).write_bytes(f.read_bytes())
    cap = read_bundle(broken)
    dm = cap.depth_maps[1]
    write_depth_map(broken / "cam02.depth", DepthMap(dm.intrinsics, np.zeros_like(dm.data)))
    assert main(["calibrate", "--bundle", str(broken)]) == 3
    err = capsys.readouterr().err
    assert "TooFewPoints" in err and "pair 1-2" in err


def test_console_script_runs():
    out = subprocess.run([sys.executable, "-m", "panorig.cli", "netsim", "--frames", "1"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "bytes_per_set" in out.stdout
