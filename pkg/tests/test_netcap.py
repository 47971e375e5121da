import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panorig.netcap import (
    HEADER_SIZE,
    ChannelSpec,
    FrameHeader,
    Reassembler,
    chunk_count,
    chunk_frame,
    expected_delivery_fraction,
    frame_rate_bound,
    frame_set_bytes,
    max_frame_rate,
    reassemble,
    simulate_session,
)

FULL = 640 * 480 * 5


def test_header_layout():
    assert HEADER_SIZE == 11
    h = FrameHeader(3, 0x01020304, 5, 9, 1489)
    raw = h.pack()
    assert raw == bytes([3, 4, 3, 2, 1, 5, 0, 9, 0, 0xD1, 0x05])
    assert FrameHeader.unpack(raw) == h
    with pytest.raises(ValueError):
        FrameHeader(0, 0, 3, 3, 0)


def test_frame_set_bytes():
    assert frame_set_bytes(640, 480, 12) == 18_432_000
    assert round(frame_set_bytes(640, 480, 12) / 2**20, 2) == 17.58
    assert frame_set_bytes(1, 1, 1) == 5
    assert frame_set_bytes(320, 240, 12) == 4_608_000
    with pytest.raises(ValueError):
        frame_set_bytes(0, 480, 12)


def test_frame_rate():
    assert max_frame_rate(18_432_000) == 6.8
    assert max_frame_rate(18_432_000, ChannelSpec(bandwidth_bps=1e8)) == 0.7
    assert max_frame_rate(18_432_000, ChannelSpec(bandwidth_bps=2e9)) == 13.6
    assert frame_rate_bound(9_216_000) == 2 * frame_rate_bound(18_432_000)


def test_channel_validation():
    for bad in (dict(bandwidth_bps=0), dict(loss_rate=1.0), dict(loss_rate=-0.1), dict(mtu=11), dict(latency=-1)):
        with pytest.raises(ValueError):
            ChannelSpec(**bad)


def test_chunking_example():
    grams = chunk_frame(bytes(range(256)) * 11 + bytes(184), 2, 9, mtu=1500)
    assert [len(g) - HEADER_SIZE for g in grams] == [1489, 1489, 22]
    heads = [FrameHeader.unpack(g) for g in grams]
    assert [h.chunk_index for h in heads] == [0, 1, 2]
    assert all(h.chunk_count == 3 and h.camera_id == 2 and h.frame_id == 9 for h in heads)


def test_small_frame_is_one_datagram():
    grams = chunk_frame(b"abc", 0, 0)
    assert len(grams) == 1 and FrameHeader.unpack(grams[0]).chunk_count == 1
    with pytest.raises(ValueError):
        chunk_frame(b"", 0, 0)


def test_chunk_round_trip_random_frames(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 20000))
        frame = rng.integers(0, 256, n, dtype=np.uint8).tobytes()
        grams = chunk_frame(frame, int(rng.integers(0, 256)), int(rng.integers(0, 2**32)), mtu=int(rng.integers(64, 9000)))
        order = rng.permutation(len(grams))
        assert reassemble([grams[k] for k in order]) == frame


@settings(max_examples=50)
@given(st.binary(min_size=1, max_size=5000), st.integers(12, 2000))
def test_chunks_are_maximal_except_last(frame, mtu):
    grams = chunk_frame(frame, 1, 1, mtu)
    sizes = [len(g) - HEADER_SIZE for g in grams]
    assert all(s == mtu - HEADER_SIZE for s in sizes[:-1])
    assert 0 < sizes[-1] <= mtu - HEADER_SIZE
    assert len(grams) == chunk_count(len(frame), mtu)


def test_reassembler_interleaved_frames():
    r = Reassembler()
    a = chunk_frame(b"x" * 4000, 1, 1)
    b = chunk_frame(b"y" * 2000, 2, 1)
    done = []
    for g in [a[0], b[0], a[1], b[1], a[1], a[2]]:
        out = r.receive(g)
        if out:
            done.append(out)
    assert done == [(2, 1, b"y" * 2000), (1, 1, b"x" * 4000)]
    assert r.pending() == 0


def test_incomplete_frame_is_rejected():
    grams = chunk_frame(b"z" * 4000, 1, 1)
    with pytest.raises(ValueError):
        reassemble(grams[:-1])
    with pytest.raises(ValueError):
        Reassembler().receive(grams[0][:-1])


def test_lossless_session_delivers_everything():
    stats = simulate_session(12, 5, 10_000, ChannelSpec(loss_rate=0.0))
    assert stats.delivered == 5 and stats.dropped_sets == 0
    assert stats.datagrams_lost == 0


def test_full_size_session_rate():
    stats = simulate_session(12, 20, FULL, ChannelSpec())
    assert stats.achieved_fps == pytest.approx(6.8, rel=0.05)
    assert stats.achieved_fps <= frame_rate_bound(stats.bytes_per_set)


def test_throughput_never_exceeds_bandwidth():
    ch = ChannelSpec(loss_rate=0.001, retries=2, seed=3)
    stats = simulate_session(12, 10, FULL, ch)
    for start, end, nbytes in stats.trace:
        assert nbytes * 8 <= ch.bandwidth_bps * (end - start) * (1 + 1e-12)
    starts = [t[0] for t in stats.trace]
    ends = [t[1] for t in stats.trace]
    assert all(s >= e - 1e-15 for s, e in zip(starts[1:], ends[:-1]))


def test_loss_kills_sets_without_retries():
    ch = ChannelSpec(loss_rate=0.01, seed=1)
    stats = simulate_session(12, 10, FULL, ch)
    chunks = 12 * chunk_count(FULL)
    assert chunks == 12384
    assert expected_delivery_fraction(chunks, 0.01) < 1e-50
    assert stats.delivered == 0 and stats.dropped_sets == 10


def test_retries_recover_sets():
    stats = simulate_session(12, 10, FULL, ChannelSpec(loss_rate=0.01, seed=1, retries=3))
    assert stats.delivered == 10
    assert stats.datagrams_sent > 10 * 12384


def test_stats_consistent_and_deterministic():
    ch = ChannelSpec(loss_rate=0.0002, seed=9)
    a = simulate_session(12, 8, FULL, ch)
    b = simulate_session(12, 8, FULL, ch)
    assert a == b
    assert a.delivered + a.dropped_sets == a.attempted
    assert "bytes_per_set" in a.table()
