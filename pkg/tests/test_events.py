import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evtach.errors import EventParseError, EventValidationError
from evtach.events import (
    EventStream,
    SlicingParams,
    embed,
    load_events,
    slice_stream,
    store_events,
)


def random_stream(rng, n, width=346, height=260, t_max=200_000):
    t = rng.integers(0, t_max, n)
    x = rng.integers(0, width, n)
    y = rng.integers(0, height, n)
    p = rng.choice([-1, 1], n)
    return EventStream.from_unsorted(t, x, y, p, width, height)


def write_csv(path, body, width=346, height=260):
    path.write_text(f"# width={width}\n# height={height}\nt_us,x,y,p\n" + body)


def test_load_two_rows(tmp_path):
    f = tmp_path / "ev.csv"
    write_csv(f, "0,10,20,1\n5,11,20,-1\n")
    s = load_events(f)
    assert len(s) == 2
    assert s.duration == 5
    assert list(s) == [(0, 10, 20, 1), (5, 11, 20, -1)]


def test_load_empty_body(tmp_path):
    f = tmp_path / "ev.csv"
    write_csv(f, "")
    s = load_events(f)
    assert len(s) == 0 and s.duration == 0


def test_unordered_file_is_stably_sorted(tmp_path):
    f = tmp_path / "ev.csv"
    write_csv(f, "7,1,1,1\n3,2,2,1\n7,3,3,-1\n3,4,4,-1\n")
    s = load_events(f)
    assert s.t.tolist() == [3, 3, 7, 7]
    assert s.x.tolist() == [2, 4, 1, 3]


@pytest.mark.parametrize(
    "body, line",
    [("0,1,2,1\n5,1,2\n", 5), ("0,1,2,1\n1,a,2,1\n", 5), ("0,1,2,0\n", 4), ("-3,1,1,1\n", 4)],
)
def test_malformed_row_reports_line(tmp_path, body, line):
    f = tmp_path / "ev.csv"
    write_csv(f, body)
    with pytest.raises(EventParseError, match=f"line {line}"):
        load_events(f)


def test_out_of_geometry(tmp_path):
    f = tmp_path / "ev.csv"
    write_csv(f, "0,346,0,1\n")
    with pytest.raises(EventValidationError):
        load_events(f)


def test_bad_header(tmp_path):
    f = tmp_path / "ev.csv"
    f.write_text("# width=10\nt_us,x,y,p\n")
    with pytest.raises(EventParseError):
        load_events(f)


def test_store_empty_writes_header_only(tmp_path):
    f = tmp_path / "ev.csv"
    store_events(EventStream.empty(346, 260), f)
    assert f.read_text() == "# width=346\n# height=260\nt_us,x,y,p\n"


def test_store_three_rows_in_time_order(tmp_path):
    f = tmp_path / "ev.csv"
    s = EventStream.from_events([(9, 1, 1, 1), (2, 3, 4, -1), (5, 0, 0, 1)], 10, 10)
    store_events(s, f)
    rows = f.read_text().splitlines()[3:]
    assert rows == ["2,3,4,-1", "5,0,0,1", "9,1,1,1"]


def test_store_io_error_names_path(tmp_path):
    bad = tmp_path / "missing" / "ev.csv"
    with pytest.raises(OSError, match="missing"):
        store_events(EventStream.empty(4, 4), bad)


@pytest.mark.parametrize("fmt, name", [("csv", "ev.csv"), ("binary", "ev.bin")])
def test_round_trip_large(tmp_path, fmt, name):
    rng = np.random.default_rng(42)
    s = random_stream(rng, 100_000)
    f = tmp_path / name
    store_events(s, f, fmt)
    assert load_events(f, fmt) == s


def test_csv_round_trip_keeps_duration(tmp_path):
    s = EventStream.from_events([(0, 1, 1, 1), (10, 2, 2, -1)], 8, 8, duration=150_000)
    f = tmp_path / "ev.csv"
    store_events(s, f)
    assert load_events(f) == s


def test_binary_layout(tmp_path):
    s = EventStream.from_events([(1, 2, 3, -1)], 346, 260)
    f = tmp_path / "ev.bin"
    store_events(s, f)
    raw = f.read_bytes()
    assert raw[:4] == b"EVT1"
    assert int.from_bytes(raw[4:8], "little") == 346
    assert int.from_bytes(raw[8:12], "little") == 260
    assert int.from_bytes(raw[12:20], "little") == 1
    assert len(raw) == 20 + 8 + 2 + 2 + 1
    assert raw[-1:] == (-1).to_bytes(1, "little", signed=True)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.integers(0, 10**9), st.integers(0, 63), st.integers(0, 31), st.sampled_from([-1, 1])
        ),
        max_size=60,
    ),
    st.sampled_from(["csv", "binary"]),
)
def test_round_trip_property(tmp_path_factory, events, fmt):
    s = EventStream.from_events(events, 64, 32)
    f = tmp_path_factory.mktemp("rt") / "ev"
    store_events(s, f, fmt)
    assert load_events(f, fmt) == s


def test_stream_invariants():
    with pytest.raises(EventValidationError):
        EventStream([5, 1], [0, 0], [0, 0], [1, 1], 4, 4)
    with pytest.raises(EventValidationError):
        EventStream([1], [0], [0], [1], 4, 4, duration=0)
    with pytest.raises(EventValidationError):
        EventStream([1], [0], [5], [1], 4, 4)


def test_slice_half_open():
    s = EventStream.from_events([(0, 1, 1, 1), (5, 1, 1, 1), (10, 1, 1, 1)], 4, 4)
    assert slice_stream(s, 0, 10).t.tolist() == [0, 5]


def test_slice_beyond_end_is_empty():
    s = EventStream.from_events([(0, 1, 1, 1), (5, 1, 1, 1)], 4, 4)
    assert len(slice_stream(s, 100, 10)) == 0


def test_slice_rejects_bad_window():
    s = EventStream.empty(4, 4)
    with pytest.raises(ValueError):
        slice_stream(s, -1, 10)
    with pytest.raises(ValueError):
        slice_stream(s, 0, 0)


def test_consecutive_slices_share_overlap():
    rng = np.random.default_rng(1)
    s = random_stream(rng, 5000, t_max=30_000)
    params = SlicingParams(t_l=10_000, t_s=3_000)
    a = slice_stream(s, 0, params.t_l)
    b = slice_stream(s, params.t_s, params.t_l)
    ids = np.arange(len(s))
    in_a = set(ids[(s.t >= 0) & (s.t < 10_000)])
    in_b = set(ids[(s.t >= 3_000) & (s.t < 13_000)])
    shared = in_a & in_b
    overlap = slice_stream(s, 3_000, params.overlap)
    assert params.overlap == 7_000
    assert len(shared) == len(overlap)
    assert np.all((s.t[list(shared)] >= 3_000) & (s.t[list(shared)] < 10_000))
    assert len(a) + len(b) - len(shared) == len(slice_stream(s, 0, 13_000))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40_000), st.integers(0, 2**32 - 1))
def test_slices_partition_stream(t_l, seed):
    s = random_stream(np.random.default_rng(seed), 500, t_max=100_000)
    parts = [slice_stream(s, start, t_l) for start in range(0, s.duration + 1, t_l)]
    t = np.concatenate([p.t for p in parts])
    x = np.concatenate([p.x for p in parts])
    assert np.array_equal(t, s.t) and np.array_equal(x, s.x)


def test_slicing_params_invariants():
    with pytest.raises(ValueError):
        SlicingParams(t_l=1000, t_s=2000)
    with pytest.raises(ValueError):
        SlicingParams(t_s=0)
    with pytest.raises(ValueError):
        SlicingParams(temporal_scale=0)


def test_embed_examples():
    s = EventStream.from_events([(2000, 3, 4, 1), (3000, 5, 6, -1), (3500, 7, 8, 1)], 10, 10)
    sl = slice_stream(s, 2000, 5000)
    np.testing.assert_array_equal(embed(sl, 1.0)[0], [3, 4, 0])
    np.testing.assert_array_equal(embed(sl, 1.0)[1], [5, 6, 1])
    assert embed(sl, 2.0)[2, 2] == 3.0


def test_embed_orders_time_and_ignores_polarity():
    rng = np.random.default_rng(3)
    s = random_stream(rng, 300, t_max=10_000)
    pts = embed(slice_stream(s, 0, 10_000), 7.5)
    assert np.all(np.diff(pts[:, 2]) >= 0)
    flipped = EventStream(s.t, s.x, s.y, -s.p, s.width, s.height)
    np.testing.assert_array_equal(pts, embed(slice_stream(flipped, 0, 10_000), 7.5))
    distinct = {(e.x, e.y, e.t) for e in s}
    assert len({tuple(p) for p in pts}) == len(distinct)
