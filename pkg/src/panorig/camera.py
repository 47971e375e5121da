"""Pinhole model for an RGB-D sensor pair and depth-to-color registration.

Depth value 0 means "no measurement" throughout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import BehindCamera, DimensionMismatch, InvalidDepth, MissingDepth
from .lie import Pose, is_valid_pose

DEPTH_MAGIC = b"PRDM"
_DEPTH_HEADER = struct.Struct("<4sIIf")
MIN_PROJECT_Z = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    u0: float
    v0: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal scale factors must be positive")
        if not (0 <= self.u0 < self.width and 0 <= self.v0 < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, fov_deg: float, width: int, height: int) -> Intrinsics:
        """Square pixels, centred principal point, ``fov_deg`` across the width."""
        f = (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height)

    def scaled_focal(self, factor: float) -> Intrinsics:
        return Intrinsics(self.fx * factor, self.fy * factor, self.u0, self.v0, self.width, self.height)

    def contains(self, u, v):
        """Whether sub-pixel coordinates fall on the image (nearest pixel exists)."""
        return (u >= -0.5) & (u < self.width - 0.5) & (v >= -0.5) & (v < self.height - 0.5)

    def to_dict(self) -> dict:
        return dict(fx=self.fx, fy=self.fy, u0=self.u0, v0=self.v0, width=self.width, height=self.height)


class DepthPixel(NamedTuple):
    u: float
    v: float
    z: float


@dataclass(frozen=True, eq=False)
class DepthMap:
    intrinsics: Intrinsics
    data: np.ndarray  # (height, width) metres

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        k = self.intrinsics
        if data.shape != (k.height, k.width):
            raise DimensionMismatch(
                f"depth data {data.shape} does not match intrinsics {(k.height, k.width)}"
            )
        if np.any(data < 0) or not np.all(np.isfinite(data)):
            raise ValueError("depth values must be finite and non-negative")
        object.__setattr__(self, "data", data)

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.data))


@dataclass(frozen=True)
class RgbdRig:
    depth_intrinsics: Intrinsics
    color_intrinsics: Intrinsics
    depth_to_color: Pose

    def __post_init__(self):
        if not is_valid_pose(self.depth_to_color):
            raise ValueError("depth_to_color is not a rigid transform")

    @classmethod
    def registered(cls, k: Intrinsics) -> RgbdRig:
        """A sensor whose depth is already expressed in the color geometry."""
        return cls(k, k, Pose.identity())


def backproject(px: DepthPixel, k: Intrinsics) -> np.ndarray:
    if not px.z > 0:
        raise InvalidDepth(f"depth {px.z!r} at ({px.u}, {px.v}) is not a measurement")
    return np.array([(px.u - k.u0) * px.z / k.fx, (px.v - k.v0) * px.z / k.fy, float(px.z)])


def backproject_many(u, v, z, k: Intrinsics) -> np.ndarray:
    """Vectorised back-projection; caller guarantees ``z > 0``. Returns (N, 3)."""
    u, v, z = (np.asarray(a, dtype=float) for a in (u, v, z))
    return np.stack([(u - k.u0) * z / k.fx, (v - k.v0) * z / k.fy, z], axis=-1)


def transform_point(T: Pose, p) -> np.ndarray:
    return T.apply(p)


def project(p, k: Intrinsics) -> tuple[float, float, float]:
    x, y, z = (float(c) for c in p)
    if z <= MIN_PROJECT_Z:
        raise BehindCamera(f"point depth {z!r} is not in front of the camera")
    return (x / z * k.fx + k.u0, y / z * k.fy + k.v0, z)


def project_many(points, k: Intrinsics):
    """Project (N, 3) points; returns ``u, v, z`` arrays. No depth check."""
    p = np.asarray(points, dtype=float)
    z = p[:, 2]
    return p[:, 0] / z * k.fx + k.u0, p[:, 1] / z * k.fy + k.v0, z


def pixel_grid(k: Intrinsics):
    v, u = np.mgrid[0 : k.height, 0 : k.width]
    return u.astype(float), v.astype(float)


def depth_map_points(dm: DepthMap) -> np.ndarray:
    """Back-project every valid pixel of a depth map, row-major order."""
    u, v = pixel_grid(dm.intrinsics)
    mask = dm.data > 0
    return backproject_many(u[mask], v[mask], dm.data[mask], dm.intrinsics)


def align_depth_to_color(dm: DepthMap, rig: RgbdRig) -> DepthMap:
    """Re-render a depth map in the color camera's geometry.

    Valid pixels are carried into the color frame and splatted to the nearest
    color pixel. The nearer depth wins on collisions, so the result does not
    depend on visiting order.
    """
    kd, kc = rig.depth_intrinsics, rig.color_intrinsics
    if (dm.intrinsics.width, dm.intrinsics.height) != (kd.width, kd.height):
        raise DimensionMismatch("depth map does not match the rig's depth intrinsics")
    if kd == kc and rig.depth_to_color.is_identity():
        # already registered; the splat below would reproduce the input exactly
        return DepthMap(kc, np.where(dm.data > 0, dm.data, 0.0))
    return _splat(dm, rig)


def _splat(dm: DepthMap, rig: RgbdRig) -> DepthMap:
    kc = rig.color_intrinsics
    pts = rig.depth_to_color.apply(depth_map_points(dm))
    out = np.full((kc.height, kc.width), np.inf)
    if len(pts):
        front = pts[:, 2] > MIN_PROJECT_Z
        u, v, z = project_many(pts[front], kc)
        ui = np.floor(u + 0.5)
        vi = np.floor(v + 0.5)
        inside = (ui >= 0) & (ui < kc.width) & (vi >= 0) & (vi < kc.height)
        np.minimum.at(out, (vi[inside].astype(np.intp), ui[inside].astype(np.intp)), z[inside])
    out[np.isinf(out)] = 0.0
    return DepthMap(kc, out)


def nearest_pixel(u, v, k: Intrinsics):
    ui = np.clip(np.floor(np.asarray(u, dtype=float) + 0.5), 0, k.width - 1).astype(np.intp)
    vi = np.clip(np.floor(np.asarray(v, dtype=float) + 0.5), 0, k.height - 1).astype(np.intp)
    return ui, vi


def lift_keypoint(u: float, v: float, aligned: DepthMap, k_color: Intrinsics) -> np.ndarray:
    if not k_color.contains(u, v):
        raise ValueError(f"keypoint ({u}, {v}) lies outside the image")
    ui, vi = nearest_pixel(u, v, k_color)
    z = aligned.data[vi, ui]
    if z <= 0:
        raise MissingDepth(f"no depth at pixel ({int(ui)}, {int(vi)})")
    return backproject(DepthPixel(u, v, z), k_color)


def lift_keypoints(uv, aligned: DepthMap, k_color: Intrinsics):
    """Batch :func:`lift_keypoint`: returns ``(points (N, 3), valid (N,))``.

    Rows whose depth is missing are NaN and flagged invalid instead of raising.
    """
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    ui, vi = nearest_pixel(uv[:, 0], uv[:, 1], k_color)
    z = aligned.data[vi, ui]
    valid = z > 0
    pts = np.full((len(uv), 3), np.nan)
    pts[valid] = backproject_many(uv[valid, 0], uv[valid, 1], z[valid], k_color)
    return pts, valid


def write_depth_map(path, dm: DepthMap, depth_scale: float = 1e-4) -> None:
    """Little-endian u16 depth file; values beyond the u16 range become 0."""
    depth_scale = float(np.float32(depth_scale))
    raw = np.floor(dm.data / depth_scale + 0.5)
    raw[raw > 0xFFFF] = 0
    k = dm.intrinsics
    with open(path, "wb") as f:
        f.write(_DEPTH_HEADER.pack(DEPTH_MAGIC, k.width, k.height, depth_scale))
        f.write(raw.astype("<u2").tobytes())


def read_depth_map(path, intrinsics: Intrinsics) -> DepthMap:
    blob = Path(path).read_bytes()
    magic, width, height, scale = _DEPTH_HEADER.unpack_from(blob)
    if magic != DEPTH_MAGIC:
        raise ValueError(f"{path}: not a depth map file")
    if (width, height) != (intrinsics.width, intrinsics.height):
        raise DimensionMismatch(f"{path}: {width}x{height} does not match intrinsics")
    raw = np.frombuffer(blob, dtype="<u2", offset=_DEPTH_HEADER.size, count=width * height)
    return DepthMap(intrinsics, raw.reshape(height, width).astype(float) * float(scale))
