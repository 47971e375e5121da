"""Synthetic panoramic RGB-D rig: camera ring, textured walls, noisy observations.

World frame: origin at the rig centre, ``y`` pointing down along the rig
axis, matching the camera convention (x right, y down, z forward). Camera
``k`` (1-based) is yawed by ``2*pi*(k-1)/n`` about ``y`` so each camera sees
to the right of its predecessor.

Noise beyond plain Gaussian jitter:

* ``focal_bias`` renders with focal lengths ``(1 + focal_bias)`` times the
  nominal intrinsics the pipeline is given, as when factory intrinsics are
  slightly off. Every adjacent pair then sees a yaw bias of the same sign,
  which is the error a loop closure can remove.
* ``depth_wobble`` is a smooth multiplicative depth error field per camera
  (low-order sinusoids over the image). It does not average out with more
  correspondences.
* descriptor noise is scaled per observation by a detection quality drawn
  log-uniformly from ``[descriptor_quality_min, 1]``, which spreads true
  match distances over about a decade like real detector output.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .camera import DepthMap, Intrinsics, RgbdRig, nearest_pixel, pixel_grid, project_many
from .errors import NoOverlap
from .lie import Pose, exp_map, so3_exp
from .matching import NO_ID, KeypointSet, OverlapRegion

KINECT_MIN_RANGE = 0.5
KINECT_MAX_RANGE = 5.0
# Depth grid of the simulated sensor in metres. A power of two is exact in the
# f32 scale of a depth file, so grid depths survive a write/read unchanged.
DEPTH_STEP = 2.0**-13
DESCRIPTOR_LENGTH = 64
WOBBLE_MODES = 4


@dataclass(frozen=True)
class RigSpec:
    n_cameras: int = 12
    fov_deg: float = 43.0
    ring_radius: float = 0.1
    overlap_fraction: float = 0.30
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.n_cameras < 3:
            raise ValueError("a ring needs at least 3 cameras")
        if not 0 < self.fov_deg < 180:
            raise ValueError("fov_deg must be in (0, 180)")
        if not 0 < self.overlap_fraction < 1:
            raise ValueError("overlap_fraction must be in (0, 1)")
        if self.ring_radius < 0:
            raise ValueError("ring_radius must be >= 0")

    @property
    def nominal_overlap(self) -> float:
        """Angular overlap of neighbours as a fraction of the field of view."""
        return max(0.0, (self.fov_deg - 360.0 / self.n_cameras) / self.fov_deg)

    def intrinsics(self) -> Intrinsics:
        return Intrinsics.from_fov(self.fov_deg, self.width, self.height)


@dataclass(frozen=True)
class NoiseSpec:
    pixel_sigma: float = 0.0
    depth_sigma: float = 0.0  # metres at 2 m, grows with range squared
    descriptor_sigma: float = 0.0
    outlier_rate: float = 0.0
    seed: int = 0
    focal_bias: float = 0.0
    depth_wobble: float = 0.0
    descriptor_quality_min: float = 0.1

    def __post_init__(self):
        if min(self.pixel_sigma, self.depth_sigma, self.descriptor_sigma, self.depth_wobble) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not 0 <= self.outlier_rate < 1:
            raise ValueError("outlier_rate must be in [0, 1)")
        if not 0 < self.descriptor_quality_min <= 1:
            raise ValueError("descriptor_quality_min must be in (0, 1]")

    @property
    def exact_depth(self) -> bool:
        return self.depth_sigma == 0 and self.depth_wobble == 0

    def with_seed(self, seed: int) -> NoiseSpec:
        return NoiseSpec(**{**asdict(self), "seed": int(seed)})


def noiseless(seed: int = 0) -> NoiseSpec:
    return NoiseSpec(seed=seed)


def kinect_like(seed: int = 0) -> NoiseSpec:
    return NoiseSpec(
        pixel_sigma=0.5,
        depth_sigma=0.01,
        descriptor_sigma=0.35,
        outlier_rate=0.1,
        seed=seed,
        focal_bias=0.012,
        depth_wobble=0.0015,
    )


PRESETS = {"noiseless": noiseless, "kinect-like": kinect_like}


@dataclass(frozen=True)
class Room:
    """Axis-aligned box centred on the rig; ``length_x`` by ``length_z`` floor plan."""

    length_x: float = 3.3
    length_z: float = 3.0
    height: float = 2.6

    def __post_init__(self):
        if min(self.length_x, self.length_z, self.height) <= 0:
            raise ValueError("room dimensions must be positive")

    @property
    def half(self) -> np.ndarray:
        return np.array([self.length_x, self.height, self.length_z]) / 2.0

    def ray_cast(self, origins, dirs) -> np.ndarray:
        """Distance along ``dirs`` (any length) from interior ``origins`` to the box."""
        o = np.broadcast_to(np.asarray(origins, dtype=float), np.shape(dirs))
        d = np.asarray(dirs, dtype=float)
        half = self.half
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(d > 0, (half - o) / d, np.where(d < 0, (-half - o) / d, np.inf))
        return t.min(axis=-1)

    def wall_distance(self, points) -> np.ndarray:
        """Distance of points to the nearest box face (0 on the surface)."""
        p = np.abs(np.asarray(points, dtype=float))
        return np.min(self.half - p, axis=-1)

    def on_vertical_wall(self, points, tol: float = 1e-9) -> np.ndarray:
        p = np.abs(np.asarray(points, dtype=float))
        h = self.half
        return (np.abs(p[..., 0] - h[0]) < tol) | (np.abs(p[..., 2] - h[2]) < tol)


@dataclass(frozen=True, eq=False)
class Landmarks:
    points: np.ndarray  # (M, 3) world
    descriptors: np.ndarray  # (M, D)

    def __len__(self):
        return len(self.points)


def build_rig(spec: RigSpec) -> list:
    """Camera-to-world poses of the ring."""
    poses = []
    for k in range(spec.n_cameras):
        R = so3_exp([0.0, 2.0 * math.pi * k / spec.n_cameras, 0.0])
        poses.append(Pose(R, R @ np.array([0.0, 0.0, spec.ring_radius])))
    return poses


def relative_to_first(world_poses) -> list:
    ref = world_poses[0].inverse()
    return [ref @ p for p in world_poses]


def _elevation_band(spec: RigSpec) -> float:
    k = spec.intrinsics()
    return math.atan(k.height / 2.0 / k.fy) + math.radians(8.0)


def scatter_landmarks(
    spec: RigSpec, density: float, room: Room, noise: NoiseSpec | None = None, rng=None
) -> Landmarks:
    """Pattern points on the walls, uniform in direction from the rig centre.

    ``density`` is points per steradian within the elevation band the cameras
    can see; the count is Poisson distributed.
    """
    if not density > 0:
        raise ValueError("density must be positive")
    if rng is None:
        seed = 0 if noise is None else noise.seed
        rng = np.random.default_rng([seed, 0])
    el = _elevation_band(spec)
    solid_angle = 4.0 * math.pi * math.sin(el)
    m = int(rng.poisson(density * solid_angle))
    az = rng.uniform(0.0, 2.0 * math.pi, m)
    y = rng.uniform(-math.sin(el), math.sin(el), m)
    r = np.sqrt(1.0 - y * y)
    dirs = np.stack([r * np.sin(az), y, r * np.cos(az)], axis=1)
    pts = dirs * room.ray_cast(np.zeros(3), dirs)[:, None]
    desc = rng.normal(size=(m, DESCRIPTOR_LENGTH))
    keep = room.on_vertical_wall(pts, tol=1e-9)
    return Landmarks(pts[keep], desc[keep])


def snap_to_depth_grid(landmarks: Landmarks, cameras, k: Intrinsics, step: float = DEPTH_STEP) -> Landmarks:
    """Nudge landmarks so every camera that sees one reads a depth on the grid.

    Each nudge is the smallest move meeting one depth plane per observing
    camera, so landmarks stay within a fraction of ``step`` of their wall.
    Landmarks seen by more than two cameras, or whose visibility the nudge
    changes, are dropped.
    """
    pts = landmarks.points
    if len(pts) == 0:
        return landmarks
    vis = np.array([visible_mask(pts, c, k) for c in cameras])
    count = vis.sum(axis=0)
    axes = np.array([c.rotation[:, 2] for c in cameras])
    centres = np.array([c.translation for c in cameras])
    new = pts.copy()
    for n_cam in (1, 2):
        sel = np.flatnonzero(count == n_cam)
        if len(sel) == 0:
            continue
        cams = np.argsort(~vis[:, sel], axis=0, kind="stable")[:n_cam].T
        a = axes[cams]  # (M, n_cam, 3)
        z = np.einsum("mcj,mcj->mc", a, pts[sel][:, None, :] - centres[cams])
        target = step * np.round(z / step)
        new[sel] += (np.linalg.pinv(a) @ (target - z)[..., None])[..., 0]
    vis_after = np.array([visible_mask(new, c, k) for c in cameras])
    keep = (count <= 2) & np.all(vis_after == vis, axis=0)
    return Landmarks(new[keep], landmarks.descriptors[keep])


def _wobble_field(rng, k: Intrinsics, amplitude: float):
    freq = rng.uniform(0.5, 1.5, size=(WOBBLE_MODES, 2)) * rng.choice([-1.0, 1.0], size=(WOBBLE_MODES, 2))
    phase = rng.uniform(0.0, 2.0 * math.pi, WOBBLE_MODES)
    norm = amplitude * math.sqrt(2.0 / WOBBLE_MODES)

    def field(u, v):
        u = np.asarray(u, dtype=float) / k.width
        v = np.asarray(v, dtype=float) / k.height
        out = np.zeros(np.broadcast(u, v).shape)
        for (fu, fv), ph in zip(freq, phase):
            out += np.sin(2.0 * math.pi * (fu * u + fv * v) + ph)
        return norm * out

    return field


def _depth_noise(rng, z, noise: NoiseSpec):
    if noise.depth_sigma == 0:
        return np.zeros_like(z)
    return rng.normal(size=z.shape) * noise.depth_sigma * (z / 2.0) ** 2


def render_depth(room: Room, camera: Pose, k: Intrinsics) -> np.ndarray:
    """Exact z-depth of the room at every pixel centre, 0 outside sensor range."""
    u, v = pixel_grid(k)
    rays = np.stack([(u - k.u0) / k.fx, (v - k.v0) / k.fy, np.ones_like(u)], axis=-1)
    world_dirs = rays @ camera.rotation.T
    z = room.ray_cast(camera.translation, world_dirs)
    z[(z < KINECT_MIN_RANGE) | (z > KINECT_MAX_RANGE)] = 0.0
    return z


def render_observations(
    landmarks: Landmarks,
    room: Room,
    camera: Pose,
    k: Intrinsics,
    noise: NoiseSpec,
    rng=None,
):
    """Keypoints and depth map one camera would report.

    ``k`` is the nominal intrinsics; rendering uses the focal-biased true ones.
    Each keypoint's depth pixel holds that landmark's own depth, the rest of
    the map holds the wall depth. When two landmarks fall on one pixel only
    the nearer is detected.
    """
    rng = rng if rng is not None else np.random.default_rng([noise.seed, 1])
    k_true = k.scaled_focal(1.0 + noise.focal_bias)
    wobble = _wobble_field(rng, k, noise.depth_wobble) if noise.depth_wobble > 0 else None

    depth = render_depth(room, camera, k_true)
    if wobble is not None:
        u_grid, v_grid = pixel_grid(k)
        depth = depth * (1.0 + wobble(u_grid, v_grid))
    valid = depth > 0
    depth = np.where(valid, depth + _depth_noise(rng, depth, noise), 0.0)
    depth = np.where(depth > 0, depth, 0.0)

    pc = camera.inverse().apply(landmarks.points)
    z = pc[:, 2]
    in_range = (z >= KINECT_MIN_RANGE) & (z <= KINECT_MAX_RANGE)
    idx = np.flatnonzero(in_range)
    u, v, zc = project_many(pc[idx], k_true)
    if noise.pixel_sigma > 0:
        u = u + rng.normal(scale=noise.pixel_sigma, size=u.shape)
        v = v + rng.normal(scale=noise.pixel_sigma, size=v.shape)
    inside = k.contains(u, v)
    idx, u, v, zc = idx[inside], u[inside], v[inside], zc[inside]

    # one detection per pixel, nearest landmark wins
    ui, vi = nearest_pixel(u, v, k)
    flat = vi * k.width + ui
    order = np.lexsort((idx, zc, flat))
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat[order][1:] != flat[order][:-1]
    keep = np.sort(order[first])
    idx, u, v, zc, ui, vi = idx[keep], u[keep], v[keep], zc[keep], ui[keep], vi[keep]

    zk = zc.copy()
    if wobble is not None:
        zk = zk * (1.0 + wobble(ui, vi))
    zk = np.maximum(zk + _depth_noise(rng, zk, noise), 1e-3)
    depth[vi, ui] = zk

    desc = landmarks.descriptors[idx].copy()
    if noise.descriptor_sigma > 0:
        lo = math.log(noise.descriptor_quality_min)
        quality = np.exp(rng.uniform(lo, 0.0, size=len(idx)))
        desc += rng.normal(size=desc.shape) * (noise.descriptor_sigma * quality)[:, None]
    ids = idx.astype(np.int64)
    uv = np.stack([u, v], axis=1)

    if noise.outlier_rate > 0 and len(idx):
        n_out = int(round(noise.outlier_rate * len(idx) / (1.0 - noise.outlier_rate)))
        taken = set((vi * k.width + ui).tolist())
        ou, ov = [], []
        while len(ou) < n_out:
            cu = rng.uniform(-0.5, k.width - 0.5)
            cv = rng.uniform(-0.5, k.height - 0.5)
            pu, pv = nearest_pixel(cu, cv, k)
            key = int(pv) * k.width + int(pu)
            if key in taken or depth[pv, pu] <= 0:
                continue
            taken.add(key)
            ou.append(cu)
            ov.append(cv)
        uv = np.vstack([uv, np.stack([ou, ov], axis=1)]) if n_out else uv
        desc = np.vstack([desc, rng.normal(size=(n_out, desc.shape[1]))])
        ids = np.concatenate([ids, np.full(n_out, NO_ID, dtype=np.int64)])

    return KeypointSet(uv, desc, ids), DepthMap(k, depth)


def visible_mask(points_world, camera: Pose, k: Intrinsics) -> np.ndarray:
    """Whether world points project into the image within sensor range."""
    pc = camera.inverse().apply(points_world)
    z = pc[:, 2]
    ok = (z >= KINECT_MIN_RANGE) & (z <= KINECT_MAX_RANGE)
    u = np.full(len(z), -1e9)
    v = np.full(len(z), -1e9)
    u[ok], v[ok], _ = project_many(pc[ok], k)
    return ok & k.contains(u, v)


def overlap_region(
    cam_a: Pose,
    cam_b: Pose,
    k: Intrinsics,
    room: Room | None = None,
    depth: float = 2.0,
    k_b: Intrinsics | None = None,
    step: int = 4,
) -> OverlapRegion:
    """Rectangle of camera ``a``'s image that camera ``b`` also sees.

    Scene points behind a grid of ``a``'s pixels (on the room walls, or at a
    fixed z ``depth`` when no room is given) are tested for visibility in
    ``b``. The returned rectangle is the largest one obtained by trimming the
    bounding box of the visible samples until every enclosed sample is
    co-visible, so restriction to it never keeps a point ``b`` cannot see.
    """
    k_b = k_b or k
    us = np.arange(0.0, k.width, step)
    vs = np.arange(0.0, k.height, step)
    if us[-1] != k.width - 1:
        us = np.append(us, k.width - 1.0)
    if vs[-1] != k.height - 1:
        vs = np.append(vs, k.height - 1.0)
    U, V = np.meshgrid(us, vs)
    rays = np.stack([(U - k.u0) / k.fx, (V - k.v0) / k.fy, np.ones_like(U)], axis=-1).reshape(-1, 3)
    if room is not None:
        z = room.ray_cast(cam_a.translation, rays @ cam_a.rotation.T)
    else:
        z = np.full(len(rays), float(depth))
    pw = cam_a.apply(rays * z[:, None])
    ok = visible_mask(pw, cam_b, k_b)
    if room is not None:
        ok &= (z >= KINECT_MIN_RANGE) & (z <= KINECT_MAX_RANGE)
    mask = ok.reshape(V.shape)
    if not mask.any():
        raise NoOverlap("camera frusta do not intersect")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    r0, r1, c0, c1 = rows[0], rows[-1], cols[0], cols[-1]
    while True:
        box = mask[r0 : r1 + 1, c0 : c1 + 1]
        if box.all():
            break
        bad = ~box
        sides = {
            "top": bad[0].mean(),
            "bottom": bad[-1].mean(),
            "left": bad[:, 0].mean(),
            "right": bad[:, -1].mean(),
        }
        side = max(sides, key=lambda s: (sides[s], s))
        if side == "top":
            r0 += 1
        elif side == "bottom":
            r1 -= 1
        elif side == "left":
            c0 += 1
        else:
            c1 -= 1
        if r0 > r1 or c0 > c1:
            raise NoOverlap("co-visible footprint is too thin for a rectangle")
    if r0 == r1 or c0 == c1:
        raise NoOverlap("co-visible footprint is too thin for a rectangle")
    return OverlapRegion(us[c0], vs[r0], us[c1], vs[r1])


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    rig: RigSpec
    noise: NoiseSpec
    room: Room
    density: float
    intrinsics: Intrinsics  # nominal, what a calibration is told
    landmarks: Landmarks
    world_poses: list
    keypoints: list  # per camera KeypointSet
    depth_maps: list  # per camera DepthMap
    overlaps: dict = field(default_factory=dict)  # (i, j) -> (region in i, region in j)

    @property
    def n(self) -> int:
        return self.rig.n_cameras

    @property
    def truth_poses(self) -> list:
        return relative_to_first(self.world_poses)

    @property
    def true_intrinsics(self) -> Intrinsics:
        return self.intrinsics.scaled_focal(1.0 + self.noise.focal_bias)

    def rgbd_rig(self) -> RgbdRig:
        return RgbdRig.registered(self.intrinsics)


def ring_pairs(n: int) -> list:
    return [(k, k % n + 1) for k in range(1, n + 1)]


def perturbed_ring(rig: RigSpec | None = None, sigma_rot_deg: float = 0.5, sigma_trans: float = 0.01, seed: int = 0):
    """Truth poses and ring measurements with Gaussian twist noise on every edge.

    Returns ``(truth, measurements)``; measurement ``k`` is the noisy
    ``x_{k+1}^-1 x_k`` with the closure pair last.
    """
    rig = rig or RigSpec()
    rng = np.random.default_rng(seed)
    truth = relative_to_first(build_rig(rig))
    n = len(truth)
    out = []
    for k in range(n):
        exact = truth[(k + 1) % n].inverse() @ truth[k]
        noise = np.concatenate([rng.normal(0, sigma_trans, 3), rng.normal(0, math.radians(sigma_rot_deg), 3)])
        out.append(exp_map(noise) @ exact)
    return truth, out


def generate_scene(
    rig: RigSpec | None = None,
    noise: NoiseSpec | None = None,
    density: float = 6000.0,
    room: Room | None = None,
) -> SyntheticScene:
    """Deterministic function of its arguments (the seed lives in ``noise``).

    When ``noise`` leaves depth exact, landmarks are snapped to the depth grid
    so a written bundle keeps them exactly. Ring pairs whose views do not
    overlap get no overlap rectangle.
    """
    rig = rig or RigSpec()
    noise = noise or noiseless()
    room = room or Room()
    ss = np.random.SeedSequence(noise.seed)
    streams = [np.random.default_rng(s) for s in ss.spawn(rig.n_cameras + 1)]
    k = rig.intrinsics()
    world = build_rig(rig)
    k_true = k.scaled_focal(1.0 + noise.focal_bias)
    landmarks = scatter_landmarks(rig, density, room, noise, rng=streams[0])
    if noise.exact_depth:
        # noisy depth is off the grid anyway, so only exact scenes are snapped
        landmarks = snap_to_depth_grid(landmarks, world, k_true)
    kps, depths = [], []
    for c in range(rig.n_cameras):
        kp, dm = render_observations(landmarks, room, world[c], k, noise, rng=streams[c + 1])
        kps.append(kp)
        depths.append(dm)
    overlaps = {}
    for i, j in ring_pairs(rig.n_cameras):
        try:
            ra = overlap_region(world[i - 1], world[j - 1], k_true, room=room)
            rb = overlap_region(world[j - 1], world[i - 1], k_true, room=room)
        except NoOverlap:
            continue  # such a pair is matched over the whole image, and will likely fail
        overlaps[(i, j)] = (ra, rb)
    return SyntheticScene(rig, noise, room, density, k, landmarks, world, kps, depths, overlaps)
