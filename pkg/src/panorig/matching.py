"""Descriptor matching and 3D correspondence construction."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np
from scipy.spatial.distance import cdist

from .camera import DepthMap, Intrinsics, lift_keypoints
from .errors import DimensionMismatch, EmptyFrame, TooFewPoints

NO_ID = -1


class Keypoint(NamedTuple):
    u: float
    v: float
    descriptor: np.ndarray
    id: Optional[int] = None


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """Keypoints of one frame stored column-wise.

    ``ids`` is simulation ground truth; ``-1`` tags a spurious detection.
    """

    uv: np.ndarray  # (N, 2)
    descriptors: np.ndarray  # (N, D)
    ids: Optional[np.ndarray] = None  # (N,) int

    def __post_init__(self):
        uv = np.asarray(self.uv, dtype=float).reshape(-1, 2)
        desc = np.asarray(self.descriptors, dtype=float)
        if desc.ndim != 2 or len(desc) != len(uv):
            desc = desc.reshape(len(uv), -1)
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "descriptors", desc)
        if self.ids is not None:
            ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
            if len(ids) != len(uv):
                raise DimensionMismatch("ids and keypoints differ in length")
            object.__setattr__(self, "ids", ids)

    @classmethod
    def from_list(cls, kps) -> KeypointSet:
        kps = list(kps)
        if not kps:
            return cls(np.zeros((0, 2)), np.zeros((0, 0)))
        lengths = {len(k.descriptor) for k in kps}
        if len(lengths) != 1:
            raise DimensionMismatch("descriptor lengths differ within a frame")
        ids = None
        if any(k.id is not None for k in kps):
            ids = [NO_ID if k.id is None else k.id for k in kps]
        return cls(
            [(k.u, k.v) for k in kps],
            np.array([np.asarray(k.descriptor, dtype=float) for k in kps]),
            ids,
        )

    def __len__(self):
        return len(self.uv)

    def __iter__(self) -> Iterator[Keypoint]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i) -> Keypoint:
        kid = None if self.ids is None else int(self.ids[i])
        return Keypoint(float(self.uv[i, 0]), float(self.uv[i, 1]), self.descriptors[i], kid)

    @property
    def descriptor_length(self) -> int:
        return self.descriptors.shape[1]

    def subset(self, mask_or_index) -> KeypointSet:
        ids = None if self.ids is None else self.ids[mask_or_index]
        return KeypointSet(self.uv[mask_or_index], self.descriptors[mask_or_index], ids)


def _as_set(kps) -> KeypointSet:
    return kps if isinstance(kps, KeypointSet) else KeypointSet.from_list(kps)


@dataclass(frozen=True)
class OverlapRegion:
    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def __post_init__(self):
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            raise ValueError(f"empty overlap rectangle {self}")

    def contains(self, u, v):
        return (u >= self.u_min) & (u <= self.u_max) & (v >= self.v_min) & (v <= self.v_max)

    def width_fraction(self, k: Intrinsics) -> float:
        return (self.u_max - self.u_min) / k.width

    def within(self, k: Intrinsics) -> bool:
        return self.u_min >= -0.5 and self.v_min >= -0.5 and self.u_max <= k.width - 0.5 and self.v_max <= k.height - 0.5

    def as_tuple(self):
        return (self.u_min, self.v_min, self.u_max, self.v_max)


@dataclass(frozen=True)
class MatchFilterConfig:
    ratio: float = 3.0
    cross_check: bool = False

    def __post_init__(self):
        if not self.ratio >= 1.0:
            raise ValueError("ratio must be at least 1")


@dataclass(frozen=True, eq=False)
class Matches:
    """Candidate matches, one per row: indices into frame a and b and their distance."""

    ia: np.ndarray
    ib: np.ndarray
    distance: np.ndarray

    def __len__(self):
        return len(self.ia)

    def __iter__(self):
        return iter(zip(self.ia.tolist(), self.ib.tolist(), self.distance.tolist()))

    def take(self, mask) -> Matches:
        return Matches(self.ia[mask], self.ib[mask], self.distance[mask])

    @classmethod
    def from_tuples(cls, rows) -> Matches:
        rows = list(rows)
        if not rows:
            return cls(np.zeros(0, np.intp), np.zeros(0, np.intp), np.zeros(0))
        ia, ib, d = zip(*rows)
        return cls(np.array(ia, np.intp), np.array(ib, np.intp), np.array(d, float))


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    points_a: np.ndarray  # (N, 3) in camera a
    points_b: np.ndarray  # (N, 3) in camera b

    def __post_init__(self):
        a = np.asarray(self.points_a, dtype=float).reshape(-1, 3)
        b = np.asarray(self.points_b, dtype=float).reshape(-1, 3)
        if a.shape != b.shape:
            raise DimensionMismatch("point sets differ in length")
        object.__setattr__(self, "points_a", a)
        object.__setattr__(self, "points_b", b)

    def __len__(self):
        return len(self.points_a)


def match_descriptors(a, b, cross_check: bool = False) -> Matches:
    """Exact nearest neighbour in ``b`` for every keypoint of ``a``.

    With ``cross_check`` only mutual best pairs are kept.
    """
    a, b = _as_set(a), _as_set(b)
    if len(a) == 0 or len(b) == 0:
        raise EmptyFrame("cannot match an empty keypoint list")
    if a.descriptor_length != b.descriptor_length:
        raise DimensionMismatch(
            f"descriptor lengths {a.descriptor_length} and {b.descriptor_length} differ"
        )
    d = cdist(a.descriptors, b.descriptors)
    ib = np.argmin(d, axis=1)
    ia = np.arange(len(a))
    dist = d[ia, ib]
    m = Matches(ia, ib, dist)
    if cross_check:
        back = np.argmin(d, axis=0)
        m = m.take(back[ib] == ia)
    return m


def filter_by_min_distance(matches, cfg: MatchFilterConfig | float) -> Matches:
    """Keep matches whose distance is below ``ratio`` times the smallest one."""
    if not isinstance(matches, Matches):
        matches = Matches.from_tuples(matches)
    ratio = cfg.ratio if isinstance(cfg, MatchFilterConfig) else float(cfg)
    if len(matches) == 0:
        raise EmptyFrame("no matches to filter")
    m = matches.distance.min()
    if m == 0:
        return matches.take(matches.distance == 0)
    return matches.take(matches.distance < ratio * m)


def restrict_to_overlap(kps, region: OverlapRegion) -> KeypointSet:
    kps = _as_set(kps)
    if len(kps) == 0:
        return kps
    return kps.subset(region.contains(kps.uv[:, 0], kps.uv[:, 1]))


def id_consistent(matches: Matches, kps_a: KeypointSet, kps_b: KeypointSet) -> np.ndarray:
    """Per match: both ends carry the same real landmark id (simulation only)."""
    ida, idb = kps_a.ids[matches.ia], kps_b.ids[matches.ib]
    return (ida == idb) & (ida != NO_ID)


def build_correspondences(
    matches,
    kps_a,
    kps_b,
    aligned_a: DepthMap,
    aligned_b: DepthMap,
    k_color: Intrinsics,
    k_color_b: Intrinsics | None = None,
) -> CorrespondenceSet:
    """Lift both ends of every match; pairs with a missing depth are dropped."""
    if not isinstance(matches, Matches):
        matches = Matches.from_tuples(matches)
    kps_a, kps_b = _as_set(kps_a), _as_set(kps_b)
    pa, va = lift_keypoints(kps_a.uv[matches.ia], aligned_a, k_color)
    pb, vb = lift_keypoints(kps_b.uv[matches.ib], aligned_b, k_color_b or k_color)
    keep = va & vb
    if keep.sum() < 3:
        raise TooFewPoints(f"only {int(keep.sum())} correspondences have depth on both sides")
    return CorrespondenceSet(pa[keep], pb[keep])


def write_keypoints(path, kps: KeypointSet) -> None:
    kps = _as_set(kps)
    lines = [f"# keypoints {len(kps)} descriptor_length {kps.descriptor_length if len(kps) else 0}"]
    for i in range(len(kps)):
        row = [f"{kps.uv[i, 0]:.17g}", f"{kps.uv[i, 1]:.17g}"]
        row += [f"{x:.17g}" for x in kps.descriptors[i]]
        if kps.ids is not None:
            row.append(str(int(kps.ids[i])))
        lines.append(" ".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_keypoints(path) -> KeypointSet:
    """Parse "u v d0 ... dk [id]" lines; the header fixes the descriptor length."""
    text = Path(path).read_text().splitlines()
    dlen = None
    rows = []
    for line in text:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if "descriptor_length" in parts:
                dlen = int(parts[parts.index("descriptor_length") + 1])
            continue
        rows.append(line.split())
    if not rows:
        return KeypointSet(np.zeros((0, 2)), np.zeros((0, dlen or 0)))
    if dlen is None:
        dlen = len(rows[0]) - 2
    widths = {len(r) for r in rows}
    if widths - {dlen + 2, dlen + 3} or len(widths) != 1:
        raise DimensionMismatch(f"{path}: inconsistent keypoint line lengths {sorted(widths)}")
    has_ids = widths == {dlen + 3}
    body = np.array([[float(x) for x in r[: dlen + 2]] for r in rows])
    ids = np.array([int(r[-1]) for r in rows]) if has_ids else None
    return KeypointSet(body[:, :2], body[:, 2:], ids)


def write_correspondences(path, c: CorrespondenceSet) -> None:
    np.savetxt(path, np.hstack([c.points_a, c.points_b]), fmt="%.17g")
