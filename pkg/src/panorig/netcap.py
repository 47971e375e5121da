"""Simulated capture network: RGB-D frames chunked into datagrams over a lossy link.

Each sender node owns one camera and pushes its frames to a single
aggregator. All senders share one switch uplink, so datagrams are serialised
on a virtual clock at the link bandwidth. A frame set (one frame from every
camera) is delivered only when every chunk of every camera's frame arrives.
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

HEADER = struct.Struct("<BIHHH")  # camera_id, frame_id, chunk_index, chunk_count, payload_len
HEADER_SIZE = HEADER.size  # 11 bytes

DEPTH_BYTES = 2
COLOR_BYTES = 3


@dataclass(frozen=True)
class FrameHeader:
    camera_id: int
    frame_id: int
    chunk_index: int
    chunk_count: int
    payload_len: int

    def __post_init__(self):
        if not 0 <= self.chunk_index < self.chunk_count:
            raise ValueError(f"chunk_index {self.chunk_index} outside 0..{self.chunk_count - 1}")

    def pack(self) -> bytes:
        return HEADER.pack(self.camera_id, self.frame_id, self.chunk_index, self.chunk_count, self.payload_len)

    @classmethod
    def unpack(cls, datagram: bytes) -> FrameHeader:
        if len(datagram) < HEADER_SIZE:
            raise ValueError(f"datagram of {len(datagram)} bytes is shorter than the header")
        return cls(*HEADER.unpack_from(datagram))


@dataclass(frozen=True)
class ChannelSpec:
    bandwidth_bps: float = 1e9
    loss_rate: float = 0.0
    latency: float = 1e-4  # seconds, one way
    mtu: int = 1500  # bytes per datagram including our header
    seed: int = 0
    retries: int = 0  # resend rounds for lost chunks of an incomplete set

    def __post_init__(self):
        if not self.bandwidth_bps > 0:
            raise ValueError("bandwidth_bps must be positive")
        if not 0 <= self.loss_rate < 1:
            raise ValueError("loss_rate must be in [0, 1)")
        if self.latency < 0:
            raise ValueError("latency must be >= 0")
        if self.mtu <= HEADER_SIZE:
            raise ValueError(f"mtu must exceed the {HEADER_SIZE}-byte header")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")

    @property
    def max_payload(self) -> int:
        return self.mtu - HEADER_SIZE


@dataclass
class FrameSetStats:
    bytes_per_set: int
    max_fps: float
    attempted: int
    delivered: int
    dropped_sets: int
    achieved_fps: float = 0.0
    datagrams_sent: int = 0
    datagrams_lost: int = 0
    duration_s: float = 0.0
    # (start_s, end_s, wire_bytes) per set, in send order
    trace: list = field(default_factory=list, repr=False)

    def table(self) -> str:
        rows = [(k, v) for k, v in asdict(self).items() if k != "trace"]
        width = max(len(k) for k, _ in rows)
        out = []
        for k, v in rows:
            if isinstance(v, float):
                v = f"{v:.4f}"
            out.append(f"{k:<{width}}  {v}")
        return "\n".join(out)


def frame_set_bytes(width: int, height: int, n_cameras: int) -> int:
    """Raw bytes of one synchronised set: 2-byte depth plus 3-byte color per pixel."""
    if width <= 0 or height <= 0 or n_cameras <= 0:
        raise ValueError("dimensions must be positive")
    return width * height * (DEPTH_BYTES + COLOR_BYTES) * n_cameras


def frame_rate_bound(bytes_per_set: float, channel: ChannelSpec | None = None) -> float:
    """Sets per second the link can carry, ignoring header overhead (unrounded)."""
    channel = channel or ChannelSpec()
    if bytes_per_set <= 0:
        raise ValueError("bytes_per_set must be positive")
    return channel.bandwidth_bps / (bytes_per_set * 8)


def max_frame_rate(bytes_per_set: float, channel: ChannelSpec | None = None) -> float:
    """:func:`frame_rate_bound` rounded to one decimal."""
    return round(frame_rate_bound(bytes_per_set, channel), 1)


def chunk_count(frame_len: int, mtu: int = 1500) -> int:
    return max(1, math.ceil(frame_len / (mtu - HEADER_SIZE)))


def chunk_frame(frame: bytes, camera_id: int, frame_id: int, mtu: int = 1500) -> list:
    """Split a frame into header-prefixed datagrams; all but the last are full."""
    if len(frame) == 0:
        raise ValueError("cannot chunk an empty frame")
    size = mtu - HEADER_SIZE
    if size <= 0:
        raise ValueError(f"mtu must exceed the {HEADER_SIZE}-byte header")
    count = chunk_count(len(frame), mtu)
    if count > 0xFFFF:
        raise ValueError(f"frame needs {count} chunks, more than a u16 index allows")
    view = memoryview(frame)
    out = []
    for k in range(count):
        payload = view[k * size : (k + 1) * size]
        out.append(FrameHeader(camera_id, frame_id, k, count, len(payload)).pack() + payload.tobytes())
    return out


class Reassembler:
    """Aggregator side: collects datagrams per (camera, frame) until complete.

    Datagrams may arrive in any order; duplicates are ignored.
    """

    def __init__(self):
        self._parts = {}
        self._counts = {}

    def receive(self, datagram: bytes):
        """Store one datagram. Returns ``(camera_id, frame_id, frame)`` once complete."""
        h = FrameHeader.unpack(datagram)
        payload = datagram[HEADER_SIZE:]
        if len(payload) != h.payload_len:
            raise ValueError(f"payload is {len(payload)} bytes, header says {h.payload_len}")
        key = (h.camera_id, h.frame_id)
        expected = self._counts.setdefault(key, h.chunk_count)
        if expected != h.chunk_count:
            raise ValueError(f"chunk_count changed mid-frame for camera {h.camera_id} frame {h.frame_id}")
        parts = self._parts.setdefault(key, {})
        parts[h.chunk_index] = payload
        if len(parts) == expected:
            del self._parts[key], self._counts[key]
            return h.camera_id, h.frame_id, b"".join(parts[k] for k in range(expected))
        return None

    def pending(self) -> int:
        return len(self._parts)


def reassemble(datagrams) -> bytes:
    """Rebuild a single frame from its datagrams, in any order."""
    r = Reassembler()
    result = None
    for d in datagrams:
        done = r.receive(d)
        if done is not None:
            result = done[2]
    if result is None:
        raise ValueError("datagrams do not make up a complete frame")
    return result


def simulate_session(
    n_cameras: int = 12,
    frames_per_camera: int = 10,
    frame_bytes: int = 640 * 480 * (DEPTH_BYTES + COLOR_BYTES),
    channel: ChannelSpec | None = None,
) -> FrameSetStats:
    """Stream ``frames_per_camera`` sets through the shared link on a virtual clock.

    Every datagram is lost independently with ``channel.loss_rate``. With
    ``channel.retries > 0`` the lost chunks of an incomplete set are resent,
    up to that many rounds, before the set is declared dropped. Only datagram
    headers are simulated; payload bytes are accounted for, not materialised.
    """
    channel = channel or ChannelSpec()
    if n_cameras <= 0 or frames_per_camera < 0 or frame_bytes <= 0:
        raise ValueError("n_cameras and frame_bytes must be positive, frames_per_camera >= 0")
    rng = np.random.default_rng(channel.seed)
    size = channel.max_payload
    chunks = chunk_count(frame_bytes, channel.mtu)
    last_payload = frame_bytes - (chunks - 1) * size
    byte_time = 8.0 / channel.bandwidth_bps

    def wire_bytes(n_full: int, n_last: int) -> int:
        return n_full * (size + HEADER_SIZE) + n_last * (last_payload + HEADER_SIZE)

    clock = 0.0
    delivered = sent = lost_total = 0
    trace = []
    for _ in range(frames_per_camera):
        start = clock
        # chunk index per outstanding datagram; the last index carries the short payload
        outstanding = np.tile(np.arange(chunks), n_cameras)
        set_bytes = 0
        for _round in range(channel.retries + 1):
            n_last = int(np.count_nonzero(outstanding == chunks - 1))
            b = wire_bytes(len(outstanding) - n_last, n_last)
            set_bytes += b
            sent += len(outstanding)
            lost = rng.random(len(outstanding)) < channel.loss_rate
            lost_total += int(lost.sum())
            outstanding = outstanding[lost]
            if len(outstanding) == 0:
                break
        clock = start + set_bytes * byte_time
        trace.append((start, clock, set_bytes))
        if len(outstanding) == 0:
            delivered += 1
    duration = clock + channel.latency if frames_per_camera else 0.0
    bytes_per_set = frame_bytes * n_cameras
    return FrameSetStats(
        bytes_per_set=bytes_per_set,
        max_fps=max_frame_rate(bytes_per_set, channel),
        attempted=frames_per_camera,
        delivered=delivered,
        dropped_sets=frames_per_camera - delivered,
        achieved_fps=delivered / duration if duration > 0 else 0.0,
        datagrams_sent=sent,
        datagrams_lost=lost_total,
        duration_s=duration,
        trace=trace,
    )


def expected_delivery_fraction(chunks_per_set: int, loss_rate: float) -> float:
    """Probability that a set with no retries loses none of its chunks."""
    return (1.0 - loss_rate) ** chunks_per_set
