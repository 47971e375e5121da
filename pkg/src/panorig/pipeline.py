"""Calibration pipeline: match neighbours, estimate pairs, close the ring."""

from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np
from scipy.spatial import cKDTree

from .camera import DepthMap, Intrinsics, RgbdRig, align_depth_to_color, depth_map_points, pixel_grid, backproject_many
from .errors import MissingPose, PanorigError
from .graph import (
    PoseGraph,
    chain_initialize,
    closure_residual,
    optimize,
    relative_poses,
    ring_edges,
)
from .matching import (
    CorrespondenceSet,
    KeypointSet,
    Matches,
    MatchFilterConfig,
    OverlapRegion,
    build_correspondences,
    filter_by_min_distance,
    match_descriptors,
)
from .pairwise import PairwiseEstimate, SolverConfig, estimate_pose, pose_error

SWEEP_RATIOS = (1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0)


def thread_count(n_jobs: int) -> int:
    cap = os.environ.get("PANORIG_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_jobs))


def _pmap(fn, items):
    items = list(items)
    workers = thread_count(len(items))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


@dataclass(frozen=True, eq=False)
class Capture:
    """Everything a calibration consumes: one RGB-D frame per camera."""

    intrinsics: Intrinsics  # color intrinsics, shared by all cameras
    rgbd: RgbdRig
    keypoints: list
    depth_maps: list
    overlaps: dict  # (i, j) -> (OverlapRegion in i, OverlapRegion in j)
    truth: list | None = None

    @property
    def n(self) -> int:
        return len(self.keypoints)

    @property
    def pairs(self) -> list:
        return [(k, k % self.n + 1) for k in range(1, self.n + 1)]

    @classmethod
    def from_scene(cls, scene) -> Capture:
        return cls(
            scene.intrinsics,
            scene.rgbd_rig(),
            list(scene.keypoints),
            list(scene.depth_maps),
            dict(scene.overlaps),
            scene.truth_poses,
        )


@dataclass(frozen=True, eq=False)
class PairMatches:
    pair: tuple
    kps_a: KeypointSet
    kps_b: KeypointSet
    matches: Matches


@dataclass(frozen=True, eq=False)
class Prepared:
    capture: Capture
    aligned: list
    pair_matches: list


def prepare(capture: Capture, cross_check: bool = False) -> Prepared:
    """Align depth and match every ring pair once; ratios are applied later."""
    aligned = _pmap(lambda dm: align_depth_to_color(dm, capture.rgbd), capture.depth_maps)

    def match_pair(pair):
        i, j = pair
        kps_a, kps_b = capture.keypoints[i - 1], capture.keypoints[j - 1]
        region = capture.overlaps.get(pair)
        if region is not None:
            ra, rb = region
            kps_a = kps_a.subset(ra.contains(kps_a.uv[:, 0], kps_a.uv[:, 1]))
            kps_b = kps_b.subset(rb.contains(kps_b.uv[:, 0], kps_b.uv[:, 1]))
        try:
            m = match_descriptors(kps_a, kps_b, cross_check=cross_check)
        except PanorigError as exc:
            raise _tag(exc, pair)
        return PairMatches(pair, kps_a, kps_b, m)

    return Prepared(capture, aligned, _pmap(match_pair, capture.pairs))


def _tag(exc: PanorigError, pair) -> PanorigError:
    exc.pair = pair
    exc.args = (f"pair {pair[0]}-{pair[1]}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
    return exc


@dataclass(frozen=True, eq=False)
class PairResult:
    pair: tuple
    n_matches: int
    correspondences: CorrespondenceSet
    estimate: PairwiseEstimate
    error: tuple | None  # (rot_deg, trans_cm) against truth


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    ratio: float
    pairs: list
    initial: PoseGraph
    optimized: PoseGraph
    closure_before: tuple
    closure_after: tuple
    optimized_pair_errors: list | None
    elapsed_s: float

    @property
    def mean_correspondences(self) -> float:
        return float(np.mean([len(p.correspondences) for p in self.pairs]))

    def mean_initial_error(self) -> tuple:
        errs = np.array([p.error for p in self.pairs])
        return float(errs[:, 0].mean()), float(errs[:, 1].mean())

    def mean_optimized_error(self) -> tuple:
        errs = np.array(self.optimized_pair_errors)
        return float(errs[:, 0].mean()), float(errs[:, 1].mean())


def information_for(n_points: int) -> np.ndarray:
    return float(n_points) * np.eye(6)


def calibrate_prepared(
    prep: Prepared,
    ratio: float = 3.0,
    pair_cfg: SolverConfig | None = None,
    graph_cfg: SolverConfig | None = None,
    jacobians: str = "numeric",
) -> CalibrationResult:
    t0 = time.monotonic()
    cap = prep.capture
    cfg = MatchFilterConfig(ratio)
    truth_rel = relative_poses(cap.truth) if cap.truth is not None else None

    def solve_pair(k):
        pm = prep.pair_matches[k]
        i, j = pm.pair
        try:
            kept = filter_by_min_distance(pm.matches, cfg)
            corr = build_correspondences(
                kept, pm.kps_a, pm.kps_b, prep.aligned[i - 1], prep.aligned[j - 1], cap.intrinsics
            )
            est = estimate_pose(corr, pair_cfg)
        except PanorigError as exc:
            raise _tag(exc, pm.pair)
        err = pose_error(est.pose, truth_rel[k]) if truth_rel is not None else None
        return PairResult(pm.pair, len(kept), corr, est, err)

    pairs = _pmap(solve_pair, range(cap.n))
    edges = ring_edges([p.estimate.pose for p in pairs], [information_for(len(p.correspondences)) for p in pairs])
    initial = chain_initialize(edges, cap.n)
    optimized = optimize(initial, graph_cfg, jacobians)
    opt_errors = None
    if truth_rel is not None:
        opt_errors = [pose_error(e, t) for e, t in zip(relative_poses(optimized.poses()), truth_rel)]
    return CalibrationResult(
        ratio,
        pairs,
        initial,
        optimized,
        closure_residual(initial),
        closure_residual(optimized),
        opt_errors,
        time.monotonic() - t0,
    )


def calibrate(capture: Capture, ratio: float = 3.0, pair_cfg=None, graph_cfg=None, jacobians="numeric") -> CalibrationResult:
    """Estimate every ring pair from matches, then close the loop with the pose graph."""
    t0 = time.monotonic()
    res = calibrate_prepared(prepare(capture), ratio, pair_cfg, graph_cfg, jacobians)
    return _with_elapsed(res, time.monotonic() - t0)


def _with_elapsed(res: CalibrationResult, elapsed: float) -> CalibrationResult:
    return CalibrationResult(**{**{f.name: getattr(res, f.name) for f in fields(res)}, "elapsed_s": elapsed})


# --- match ratio sweep ---------------------------------------------------

SWEEP_COLUMNS = ("ratio", "correspondences", "ini_rot_deg", "opti_rot_deg", "ini_trans_cm", "opti_trans_cm", "error")


def _r6(x: float) -> float:
    return float(f"{x:.6f}")


@dataclass(frozen=True)
class SweepRow:
    ratio: float
    correspondences: float  # mean per camera pair
    ini_rot_deg: float
    opti_rot_deg: float
    ini_trans_cm: float
    opti_trans_cm: float
    error: str = ""

    @classmethod
    def from_result(cls, res: CalibrationResult) -> SweepRow:
        ir, it = res.mean_initial_error() if res.pairs[0].error is not None else (math.nan, math.nan)
        orr, ot = res.mean_optimized_error() if res.optimized_pair_errors is not None else (math.nan, math.nan)
        return cls(_r6(res.ratio), _r6(res.mean_correspondences), _r6(ir), _r6(orr), _r6(it), _r6(ot))

    @classmethod
    def failed(cls, ratio: float, exc: Exception) -> SweepRow:
        tag = type(exc).__name__
        pair = getattr(exc, "pair", None)
        if pair:
            tag += f"@{pair[0]}-{pair[1]}"
        nan = math.nan
        return cls(_r6(ratio), nan, nan, nan, nan, nan, tag)


def sweep(capture: Capture, ratios=SWEEP_RATIOS, pair_cfg=None, graph_cfg=None, jacobians="numeric") -> list:
    """One calibration per ratio, reusing the matches; failures become tagged rows."""
    ratios = [float(r) for r in ratios]
    if any(r < 1 for r in ratios) or ratios != sorted(ratios):
        raise ValueError("ratios must be >= 1 and sorted ascending")
    prep = prepare(capture)
    rows = []
    for r in ratios:
        try:
            rows.append(SweepRow.from_result(calibrate_prepared(prep, r, pair_cfg, graph_cfg, jacobians)))
        except PanorigError as exc:
            rows.append(SweepRow.failed(r, exc))
    return rows


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    return "nan" if math.isnan(x) else f"{x:.6f}"


def format_sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def parse_sweep_csv(text: str) -> list:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        vals = {c: float(rec[c]) for c in SWEEP_COLUMNS if c != "error"}
        rows.append(SweepRow(**vals, error=rec["error"]))
    return rows


def rows_equal(a, b) -> bool:
    """Row-list equality that treats NaN fields as equal."""
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        for c in SWEEP_COLUMNS:
            u, v = getattr(x, c), getattr(y, c)
            if isinstance(u, float) and math.isnan(u) and math.isnan(v):
                continue
            if u != v:
                return False
    return True


# --- reports -------------------------------------------------------------


def format_pair_dump(res: CalibrationResult) -> str:
    """``pair i j rot_deg trans_cm rmse n_points`` per line (errors are nan without truth)."""
    lines = []
    for p in res.pairs:
        rot, trans = p.error if p.error is not None else (math.nan, math.nan)
        i, j = p.pair
        lines.append(f"pair {i} {j} {rot:.6f} {trans:.6f} {p.estimate.rmse:.6g} {len(p.correspondences)}")
    return "\n".join(lines) + "\n"


def format_report(res: CalibrationResult) -> str:
    out = [f"ratio {res.ratio:g}", f"cameras {len(res.pairs)}"]
    out.append(f"mean_correspondences {res.mean_correspondences:.1f}")
    if res.pairs[0].error is not None:
        ir, it = res.mean_initial_error()
        orr, ot = res.mean_optimized_error()
        out.append(f"initial_mean_error rot_deg {ir:.4f} trans_cm {it:.4f}")
        out.append(f"optimized_mean_error rot_deg {orr:.4f} trans_cm {ot:.4f}")
    out.append(f"closure_before rot_deg {res.closure_before[0]:.6g} trans_cm {res.closure_before[1]:.6g}")
    out.append(f"closure_after rot_deg {res.closure_after[0]:.6g} trans_cm {res.closure_after[1]:.6g}")
    out.append(f"elapsed_s {res.elapsed_s:.3f}")
    return "\n".join(out) + "\n" + format_pair_dump(res)


# --- point clouds --------------------------------------------------------


def merge_clouds(depth_maps, poses):
    """Back-project every valid pixel and move it into the reference frame.

    Returns ``(points (M, 3), camera_index (M,))``.
    """
    if len(poses) < len(depth_maps):
        raise MissingPose(f"{len(depth_maps)} cameras but only {len(poses)} poses")
    chunks, cams = [], []
    for c, (dm, pose) in enumerate(zip(depth_maps, poses)):
        pts = pose.apply(depth_map_points(dm)) if dm.valid_count else np.zeros((0, 3))
        chunks.append(pts)
        cams.append(np.full(len(pts), c, dtype=np.int32))
    if not chunks:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int32)
    return np.vstack(chunks), np.concatenate(cams)


def camera_colors(n: int) -> np.ndarray:
    hues = np.arange(n) / max(n, 1)
    k = (np.array([5.0, 3.0, 1.0])[None, :] + hues[:, None] * 6.0) % 6.0
    rgb = 1.0 - np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0)
    return (rgb * 255).astype(np.uint8)


def write_ply(path, points, colors=None) -> None:
    """Binary little-endian PLY, float32 xyz with optional u8 rgb."""
    points = np.asarray(points, dtype="<f4").reshape(-1, 3)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(points)}",
              "property float x", "property float y", "property float z"]
    if colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
        dtype = np.dtype([("xyz", "<f4", 3), ("rgb", "u1", 3)])
    else:
        dtype = np.dtype([("xyz", "<f4", 3)])
    header.append("end_header")
    rec = np.empty(len(points), dtype=dtype)
    rec["xyz"] = points
    if colors is not None:
        rec["rgb"] = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())


def read_ply(path):
    """Inverse of :func:`write_ply`: ``(points float32 (M, 3), colors or None)``."""
    blob = open(path, "rb").read()
    end = blob.index(b"end_header\n") + len(b"end_header\n")
    header = blob[:end].decode("ascii").splitlines()
    count = int(next(l for l in header if l.startswith("element vertex")).split()[-1])
    has_rgb = any("red" in l for l in header)
    dtype = [("xyz", "<f4", 3)] + ([("rgb", "u1", 3)] if has_rgb else [])
    rec = np.frombuffer(blob, dtype=np.dtype(dtype), count=count, offset=end)
    return rec["xyz"].copy(), (rec["rgb"].copy() if has_rgb else None)


def _region_points(dm: DepthMap, region: OverlapRegion, stride: int) -> np.ndarray:
    u, v = pixel_grid(dm.intrinsics)
    mask = (dm.data > 0) & region.contains(u, v)
    rows, cols = dm.data.shape
    on_grid = (np.arange(rows)[:, None] % stride == 0) & (np.arange(cols)[None, :] % stride == 0)
    mask &= on_grid
    return backproject_many(u[mask], v[mask], dm.data[mask], dm.intrinsics)


def seam_misalignment(capture: Capture, poses, stride: int = 2) -> float:
    """Mean nearest-neighbour gap between the last and first camera's shared strip."""
    n = capture.n
    ra, rb = capture.overlaps[(n, 1)]
    aligned_a = align_depth_to_color(capture.depth_maps[n - 1], capture.rgbd)
    aligned_b = align_depth_to_color(capture.depth_maps[0], capture.rgbd)
    pa = poses[n - 1].apply(_region_points(aligned_a, ra, stride))
    pb = poses[0].apply(_region_points(aligned_b, rb, stride))
    if len(pa) == 0 or len(pb) == 0:
        return math.nan
    d, _ = cKDTree(pb).query(pa)
    return float(np.mean(d))
