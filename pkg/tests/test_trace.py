import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mirage.trace import (
    FIELDS, HOUR, JobRecord, SynthParams, Trace, TraceError, clean_trace, diurnal_trace,
    parse_trace, split_trace, synth_trace, write_trace,
)


def write_csv(path, rows, header=FIELDS):
    lines = [",".join(header)] + [",".join(str(x) for x in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def rec(job_id, submit=0, start=0, end=10, limit=100, nodes=1, user="u1"):
    return JobRecord(job_id, "n", user, submit, start, end, limit, nodes)


def test_parse_minimal(tmp_path):
    p = write_csv(tmp_path / "t.csv", [("J1", "name", "u1", 0, 10, 20, 100, 1)])
    t = parse_trace(p, 4)
    assert len(t) == 1
    r = t.records[0]
    assert (r.submit_time, r.start_time, r.end_time, r.time_limit, r.num_nodes) == (0, 10, 20, 100, 1)


def test_parse_sorts_by_submit(tmp_path):
    p = write_csv(tmp_path / "t.csv", [
        ("B", "n", "u", 50, 60, 70, 100, 1),
        ("A", "n", "u", 5, 6, 7, 100, 1),
        ("C", "n", "u", 5, 5, 9, 100, 2),
    ])
    t = parse_trace(p, 4)
    assert [r.job_id for r in t.records] == ["A", "C", "B"]


@pytest.mark.parametrize("row,needle", [
    (("J", "n", "u", 0, 1, 2, 10, 0), "row 2"),
    (("J", "n", "u", "abc", 1, 2, 10, 1), "row 2"),
    (("J", "n", "u", 5, 1, 2, 10, 1), "row 2"),
])
def test_parse_rejects_bad_rows(tmp_path, row, needle):
    p = write_csv(tmp_path / "t.csv", [("ok", "n", "u", 0, 0, 1, 10, 1), row])
    with pytest.raises(TraceError, match=needle):
        parse_trace(p, 4)


def test_parse_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        parse_trace(tmp_path / "missing.csv", 4)
    p = write_csv(tmp_path / "h.csv", [], header=("JobID", "Submit"))
    with pytest.raises(TraceError, match="header"):
        parse_trace(p, 4)


def test_write_parse_roundtrip(tmp_path):
    t = synth_trace(SynthParams(duration=48 * HOUR, node_count=16, sizes=(1, 2), size_weights=(0.5, 0.5), seed=3))
    write_trace(t, tmp_path / "x.csv")
    assert parse_trace(tmp_path / "x.csv", 16) == t


def test_clean_drops_oversize():
    t = Trace((rec("A", nodes=96), rec("B", nodes=88)), 88)
    assert [r.job_id for r in clean_trace(t).records] == ["B"]


def test_clean_merges_subjobs():
    t = Trace((rec("J7_1", submit=0, start=0, end=10), rec("J7_2", submit=0, start=12, end=30)), 4)
    out = clean_trace(t).records
    assert len(out) == 1
    assert (out[0].start_time, out[0].end_time) == (0, 30)


def test_clean_merge_requires_same_user():
    t = Trace((rec("J7_1", user="a"), rec("J7_2", user="b")), 4)
    assert len(clean_trace(t)) == 2


def test_clean_clamps_to_limit():
    t = Trace((rec("A", start=5, end=205, limit=100),), 4)
    assert clean_trace(t).records[0].end_time == 105


record_st = st.builds(
    lambda jid, sub, wait, run, limit, nodes, user: JobRecord(jid, "n", user, sub, sub + wait, sub + wait + run, limit, nodes),
    st.sampled_from(["A", "B", "J_1", "J_2", "J_3", "K_1_2", "K_1_3", "K_2", "X9"]),
    st.integers(0, 1000), st.integers(0, 100), st.integers(0, 300), st.integers(1, 200),
    st.integers(1, 12), st.sampled_from(["u1", "u2"]),
)


@settings(max_examples=200, deadline=None)
@given(st.lists(record_st, max_size=12))
def test_clean_properties(records):
    t = Trace(tuple(records), 8)
    once = clean_trace(t)
    assert clean_trace(once) == once
    for r in once.records:
        assert r.num_nodes <= 8
        assert r.end_time - r.start_time <= r.time_limit
        assert r.submit_time <= r.start_time <= r.end_time


def test_split_examples():
    t = Trace(tuple(rec(f"J{i}", submit=i) for i in range(10)), 4)
    train, val = split_trace(t, 0.8)
    assert [r.submit_time for r in train] == list(range(8))
    assert [r.submit_time for r in val] == [8, 9]
    a, b = split_trace(Trace((rec("A", submit=0), rec("B", submit=1)), 4), 0.5)
    assert len(a) == len(b) == 1
    with pytest.raises(ValueError):
        split_trace(t, 1.0)
    with pytest.raises(TraceError):
        split_trace(Trace((), 4), 0.5)


@given(st.lists(record_st, min_size=1, max_size=20), st.floats(0.05, 0.95))
def test_split_preserves_records(records, ratio):
    t = Trace(tuple(records), 8)
    a, b = split_trace(t, ratio)
    assert sorted(a.records + b.records, key=repr) == sorted(t.records, key=repr)
    if a.records and b.records:
        assert a.records[-1].submit_time <= b.records[0].submit_time


def test_synth_zero_rate_and_determinism():
    assert len(synth_trace(SynthParams(duration=100 * HOUR, rate=0.0))) == 0
    p = SynthParams(duration=100 * HOUR, rate=5.0, seed=11)
    assert synth_trace(p) == synth_trace(p)
    with pytest.raises(ValueError):
        synth_trace(SynthParams(duration=0))


def test_synth_poisson_count_band():
    # mean 1000, sd ~31.6: [800, 1200] is beyond +-5 sd
    for seed in range(20):
        n = len(synth_trace(SynthParams(duration=100 * HOUR, rate=10.0, seed=seed)))
        assert 800 <= n <= 1200


def test_synth_invariants():
    t = synth_trace(SynthParams(duration=10 * 24 * HOUR, seed=2))
    assert all(r.runtime <= r.time_limit and r.num_nodes <= t.node_count for r in t.records)
    subs = [r.submit_time for r in t.records]
    assert subs == sorted(subs)


def test_synth_rate_schedule():
    sched = tuple([0.0] * 12 + [20.0] * 12)
    t = synth_trace(SynthParams(duration=10 * 24 * HOUR, rate_schedule=sched, seed=1))
    hours = np.array([(r.submit_time // HOUR) % 24 for r in t.records])
    assert (hours >= 12).all()


def test_synth_rejects_bad_weights():
    with pytest.raises(ValueError):
        synth_trace(SynthParams(limit_weights=(0.5, 0.5, 0.5, -0.5)))
    with pytest.raises(ValueError):
        synth_trace(SynthParams(size_weights=(0.5, 0.2, 0.2, 0.2)))


def test_diurnal_shape():
    t = diurnal_trace(days=3, node_count=10, busy_hours=18)
    assert all(r.num_nodes == 1 for r in t.records)
    assert len(t) == 3 * (2 * 8 + 1)
