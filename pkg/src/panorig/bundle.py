"""Scene bundles on disk and atomic file output.

A bundle directory holds::

    rig.json            rig, noise, room, intrinsics, depth scale, overlap rectangles
    camNN.kp            keypoints of camera NN (text)
    camNN.depth         depth map of camera NN (binary u16)
    truth_poses.txt     NODE records of the ground-truth poses (optional)
"""

from __future__ import annotations

import json
import os
import tempfile
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

from .camera import Intrinsics, RgbdRig, read_depth_map, write_depth_map
from .graph import read_nodes, write_nodes
from .matching import OverlapRegion, read_keypoints, write_keypoints
from .pipeline import Capture
from .rigsim import DEPTH_STEP, SyntheticScene

BUNDLE_VERSION = 1
DEFAULT_DEPTH_SCALE = DEPTH_STEP
RIG_FILE = "rig.json"
TRUTH_FILE = "truth_poses.txt"


@contextmanager
def atomic_path(path):
    """Yield a temporary sibling of ``path``; it replaces ``path`` on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        yield tmp
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    with atomic_path(path) as tmp:
        Path(tmp).write_text(text)


def camera_stem(k: int) -> str:
    return f"cam{k:02d}"


def _pair_key(i: int, j: int) -> str:
    return f"{i}-{j}"


def write_bundle(out_dir, scene: SyntheticScene, depth_scale: float = DEFAULT_DEPTH_SCALE) -> Path:
    """Write every file of the bundle; rerunning with the same scene is byte-identical."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": BUNDLE_VERSION,
        "rig": asdict(scene.rig),
        "noise": asdict(scene.noise),
        "room": asdict(scene.room),
        "density": scene.density,
        "intrinsics": scene.intrinsics.to_dict(),
        "depth_scale": depth_scale,
        "overlaps": {
            _pair_key(i, j): [list(ra.as_tuple()), list(rb.as_tuple())]
            for (i, j), (ra, rb) in sorted(scene.overlaps.items())
        },
    }
    atomic_write_text(out / RIG_FILE, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for k in range(1, scene.n + 1):
        with atomic_path(out / f"{camera_stem(k)}.kp") as tmp:
            write_keypoints(tmp, scene.keypoints[k - 1])
        with atomic_path(out / f"{camera_stem(k)}.depth") as tmp:
            write_depth_map(tmp, scene.depth_maps[k - 1], depth_scale)
    with atomic_path(out / TRUTH_FILE) as tmp:
        write_nodes(tmp, scene.truth_poses)
    return out


def read_bundle_meta(bundle_dir) -> dict:
    path = Path(bundle_dir) / RIG_FILE
    if not path.is_file():
        raise FileNotFoundError(f"{path} not found; is this a scene bundle?")
    return json.loads(path.read_text())


def read_bundle(bundle_dir) -> Capture:
    """Load a bundle as a :class:`Capture`; truth is attached when present."""
    root = Path(bundle_dir)
    meta = read_bundle_meta(root)
    k = Intrinsics(**meta["intrinsics"])
    n = int(meta["rig"]["n_cameras"])
    keypoints, depth_maps = [], []
    for c in range(1, n + 1):
        keypoints.append(read_keypoints(root / f"{camera_stem(c)}.kp"))
        depth_maps.append(read_depth_map(root / f"{camera_stem(c)}.depth", k))
    overlaps = {}
    for key, (ra, rb) in meta.get("overlaps", {}).items():
        i, j = (int(x) for x in key.split("-"))
        overlaps[(i, j)] = (OverlapRegion(*ra), OverlapRegion(*rb))
    truth = None
    if (root / TRUTH_FILE).is_file():
        nodes = read_nodes(root / TRUTH_FILE)
        truth = [nodes[c] for c in range(1, n + 1)]
    return Capture(k, RgbdRig.registered(k), keypoints, depth_maps, overlaps, truth)
