"""Trace parsing, synthesis, and windowing."""

import numpy as np
import pytest

from magneto.ingest import (ChannelSpec, SensorFrame, StreamWindower,
                            TimestampRegressionError, TraceFormatError,
                            TraceHeader, TraceSpec, Window, format_trace,
                            parse_trace, parse_trace_with_header, segment,
                            synthesize_trace)


def make_frames(n, channels=3, seed=0, step_us=8333):
    rng = np.random.default_rng(seed)
    return [
        SensorFrame(timestamp_us=i * step_us, channels=rng.normal(size=channels))
        for i in range(n)
    ]


class TestTraceFormat:
    def test_round_trip_bit_exact(self):
        frames = make_frames(50, channels=4, seed=3)
        header = TraceHeader(channels=4, rate_hz=120.0, label="walk")
        data = format_trace(frames, header)
        header2, frames2 = parse_trace_with_header(data)
        assert header2 == header
        assert len(frames2) == len(frames)
        for a, b in zip(frames, frames2):
            assert a.timestamp_us == b.timestamp_us
            assert np.array_equal(a.channels, b.channels)
        # serializing again is byte-identical
        assert format_trace(frames2, header2) == data

    def test_unlabeled_trace_uses_dash(self):
        frames = make_frames(3, channels=2)
        data = format_trace(frames, TraceHeader(2, 120.0, None))
        assert b"label=-" in data.split(b"\n")[0]
        header, _ = parse_trace_with_header(data)
        assert header.label is None

    def test_missing_header(self):
        with pytest.raises(TraceFormatError) as exc:
            parse_trace(b"0,1.0,2.0\n")
        assert exc.value.line == 1

    def test_malformed_header(self):
        with pytest.raises(TraceFormatError) as exc:
            parse_trace(b"#magneto-trace v1 channels=x rate_hz=120 label=-\n")
        assert exc.value.line == 1

    def test_wrong_channel_count_names_line(self):
        frames = make_frames(10, channels=10)
        lines = format_trace(frames, TraceHeader(10, 120.0, "a")).decode().split("\n")
        # row 7 of the file (frame 6) gets only 9 channels
        lines[7] = ",".join(lines[7].split(",")[:10])
        with pytest.raises(TraceFormatError, match="line 8.*got 9"):
            parse_trace("\n".join(lines).encode())

    def test_bad_timestamp(self):
        data = b"#magneto-trace v1 channels=1 rate_hz=120.0 label=-\nnope,1.0\n"
        with pytest.raises(TraceFormatError, match="line 2"):
            parse_trace(data)

    def test_non_finite_value(self):
        data = b"#magneto-trace v1 channels=1 rate_hz=120.0 label=-\n0,nan\n"
        with pytest.raises(TraceFormatError, match="line 2.*non-finite"):
            parse_trace(data)

    def test_timestamp_regression(self):
        data = (b"#magneto-trace v1 channels=1 rate_hz=120.0 label=-\n"
                b"100,1.0\n50,1.0\n")
        with pytest.raises(TraceFormatError, match="line 3.*regresses"):
            parse_trace(data)


class TestFrameAndWindow:
    def test_frame_rejects_non_finite(self):
        with pytest.raises(ValueError):
            SensorFrame(timestamp_us=0, channels=np.array([1.0, np.inf]))

    def test_window_validates_times(self):
        with pytest.raises(ValueError):
            Window(frames=np.zeros((2, 3)), start_us=10, end_us=10)

    def test_window_shape(self):
        w = Window(frames=np.zeros((2, 5)), start_us=0, end_us=100)
        assert w.channel_count == 2
        assert w.length == 5


class TestSegment:
    def test_counts_and_trailing_drop(self):
        frames = make_frames(25)
        wins = segment(frames, window_len=10, hop=5)
        assert len(wins) == 4  # starts at 0, 5, 10, 15; 20 would overrun
        assert all(w.length == 10 for w in wins)

    def test_default_hop_is_window_len(self):
        frames = make_frames(30)
        assert len(segment(frames, window_len=10)) == 3

    def test_label_propagates(self):
        wins = segment(make_frames(10), window_len=5, label="run")
        assert all(w.label == "run" for w in wins)

    def test_short_input_yields_nothing(self):
        assert segment(make_frames(4), window_len=5) == []

    def test_bad_hop(self):
        with pytest.raises(ValueError):
            segment(make_frames(10), window_len=5, hop=6)


class TestStreamWindower:
    def test_stream_matches_batch(self):
        frames = make_frames(127, channels=3, seed=11)
        for hop in (4, 7, 12):
            sw = StreamWindower(window_len=12, hop=hop, channels=3)
            streamed = [w for w in (sw.push(f) for f in frames) if w is not None]
            batch = segment(frames, window_len=12, hop=hop)
            assert len(streamed) == len(batch)
            for a, b in zip(streamed, batch):
                assert np.array_equal(a.frames, b.frames)
                assert (a.start_us, a.end_us) == (b.start_us, b.end_us)

    def test_regression_rejected_buffer_unchanged(self):
        sw = StreamWindower(window_len=5, channels=2)
        frames = make_frames(3, channels=2)
        for f in frames:
            sw.push(f)
        with pytest.raises(TimestampRegressionError):
            sw.push(SensorFrame(timestamp_us=0, channels=np.zeros(2)))
        # accepted frames still pending; two more complete the window
        assert sw.push(make_frames(5, channels=2)[3]) is None
        win = sw.push(make_frames(5, channels=2)[4])
        assert win is not None and win.length == 5

    def test_channel_mismatch(self):
        sw = StreamWindower(window_len=5, channels=2)
        with pytest.raises(ValueError, match="expected 2"):
            sw.push(SensorFrame(timestamp_us=0, channels=np.zeros(3)))


class TestSynthesize:
    def test_deterministic(self):
        spec = TraceSpec("t", 1.0, (ChannelSpec(1.0, 0.5, 2.0, 0.1),), seed=5)
        a = synthesize_trace(spec)
        b = synthesize_trace(spec)
        assert len(a) == 120
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.channels, fb.channels)

    def test_duration_rows(self):
        spec = TraceSpec("t", 2.0, (ChannelSpec(),), seed=0)
        assert len(synthesize_trace(spec)) == 240

    def test_noiseless_channel_is_pure_sinusoid(self):
        spec = TraceSpec("t", 1.0, (ChannelSpec(2.0, 1.0, 3.0, 0.0),), seed=1)
        frames = synthesize_trace(spec)
        t = np.arange(120) / 120.0
        expected = 2.0 + np.sin(2 * np.pi * 3.0 * t)
        got = np.array([f.channels[0] for f in frames])
        assert np.allclose(got, expected, atol=1e-12)
