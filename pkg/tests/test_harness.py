import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mirage.harness import (
    HEAVY, LIGHT, LOAD_CLASSES, MEDIUM, ROW_FIELDS, AvgPolicy, CallablePolicy, EpisodePlan, EvalConfig,
    PairEpisode, PairSpec, Report, ReactivePolicy, classify_load, emit_report, empirical_cdf, evaluate,
    read_rows, run_episode, sample_plans,
)
from mirage.reward import Kind
from mirage.trace import DAY, HOUR, Trace, diurnal_trace, steady_trace

FAST = EvalConfig(episodes=6, pair=PairSpec(1, 12 * 3600), warmup=DAY, cadence=1800, k=4)


@pytest.fixture(scope="module")
def diurnal():
    return diurnal_trace(8, node_count=8, busy_hours=20, waves=20)


@pytest.fixture(scope="module")
def plans(diurnal):
    return sample_plans(diurnal, 0, 8 * DAY, 6, seed=5, cfg=FAST)


# ---------------------------------------------------------------- load classes

@pytest.mark.parametrize("hours,cls", [(13, HEAVY), (5, MEDIUM), (1, LIGHT), (12, MEDIUM), (2, MEDIUM),
                                       (12.0001, HEAVY), (1.9999, LIGHT), (0, LIGHT)])
def test_classify_load_examples(hours, cls):
    assert classify_load(hours) == cls


@given(st.floats(0, 1e4, allow_nan=False))
def test_classify_load_partitions(h):
    hits = [h > 12, 2 <= h <= 12, h < 2]
    assert sum(hits) == 1
    assert classify_load(h) == LOAD_CLASSES[hits.index(True)]


def test_classify_load_rejects_negative():
    with pytest.raises(ValueError):
        classify_load(-0.1)


# ---------------------------------------------------------------- plans

def test_plan_validation(diurnal):
    with pytest.raises(ValueError):
        EpisodePlan(diurnal, DAY, cadence=0)
    with pytest.raises(ValueError):
        EpisodePlan(diurnal, DAY, pair=PairSpec(1, 300), cadence=600)


def test_sample_plans_range_and_errors(diurnal):
    ps = sample_plans(diurnal, 0, 8 * DAY, 50, seed=1, cfg=FAST)
    assert all(FAST.warmup <= p.submit_at <= 8 * DAY - FAST.pair.limit for p in ps)
    assert all(p.submit_at == int(p.submit_at) for p in ps)
    with pytest.raises(ValueError):
        sample_plans(diurnal, 0, DAY, 5, seed=1, cfg=FAST)
    with pytest.raises(ValueError):
        sample_plans(diurnal, 0, 8 * DAY, 0, seed=1, cfg=FAST)


def test_limit_jitter_draws_within_bounds(diurnal):
    cfg = replace(FAST, limit_jitter=(6 * 3600, 12 * 3600))
    ps = sample_plans(diurnal, 0, 8 * DAY, 30, seed=2, cfg=cfg)
    lims = {p.pair.limit for p in ps}
    assert all(6 * 3600 <= x <= 12 * 3600 for x in lims) and len(lims) > 1


# ---------------------------------------------------------------- episodes

def test_reactive_identity(plans):
    for p in plans:
        res = run_episode(p, ReactivePolicy())
        assert res.outcome.overlap == 0
        assert res.outcome.interruption == pytest.approx(res.reactive_wait, abs=1e-12)
        assert res.load_class == classify_load(res.reactive_wait)


def test_avg_with_zero_estimate_matches_reactive(plans):
    for p in plans:
        a = run_episode(p, AvgPolicy(fixed=0.0))
        r = run_episode(p, ReactivePolicy())
        assert a.outcome == r.outcome and a.succ_submit == r.succ_submit


def test_idle_cluster_submitting_at_end_is_exact():
    idle = Trace((), node_count=4)
    plan = EpisodePlan(idle, 3 * DAY, PairSpec(1, 6 * 3600))
    res = run_episode(plan, CallablePolicy(lambda d: d.pred_done))
    assert res.outcome.kind == Kind.EXACT and res.reactive_wait == 0
    assert res.decisions == 6 * 3600 // 600 + 1


def test_avg_on_constant_wait_trace_is_within_one_cadence():
    tr = steady_trace(2)
    rng = np.random.default_rng(0)
    for s in np.floor(rng.uniform(6 * 3600, DAY, 8)):
        # window opens at the trace start so the standing backlog is simulated
        plan = EpisodePlan(tr, float(s), PairSpec(1, 2 * 3600), warmup=float(s), cadence=600)
        wait_h = run_episode(plan, ReactivePolicy()).reactive_wait
        assert 0.9 < wait_h < 1.2
        res = run_episode(plan, AvgPolicy(fixed=wait_h * HOUR))
        assert res.outcome.magnitude * HOUR <= 600


def test_decisions_land_on_grid_and_pred_end():
    idle = Trace((), node_count=2)
    plan = EpisodePlan(idle, 1000.0, PairSpec(1, 3 * 600 + 250), warmup=0, cadence=600, k=3)
    ep = PairEpisode(plan)
    seen = []
    while True:
        d = ep.decision()
        seen.append(d.now)
        if ep.act(False) or len(seen) > 10:
            break
    assert seen[:5] == [1000.0, 1600.0, 2200.0, 2800.0, 1000.0 + 2050]


def test_never_submitting_policy_is_capped():
    idle = Trace((), node_count=2)
    plan = EpisodePlan(idle, 0.0, PairSpec(1, 3600), warmup=0, cadence=1800, cap=2 * 3600)
    res = run_episode(plan, CallablePolicy(lambda d: False))
    assert res.outcome.kind == Kind.INTERRUPTION
    assert res.outcome.interruption == pytest.approx(2.0)


def test_history_matrix_shape(plans):
    ep = PairEpisode(plans[0])
    assert ep.decision().matrix.shape == (FAST.k, 40)


# ---------------------------------------------------------------- evaluation

def test_paired_starts_identical_across_policies(diurnal, plans):
    rep = evaluate({"reactive": ReactivePolicy(), "avg": AvgPolicy()}, plans, seed=3)
    by = {pol: [r["submit_at"] for r in rep.rows if r["policy"] == pol] for pol in rep.policies()}
    assert by["reactive"] == by["avg"] == [p.submit_at for p in plans]
    again = sample_plans(diurnal, 0, 8 * DAY, 6, seed=5, cfg=FAST)
    assert [p.submit_at for p in again] == [p.submit_at for p in plans]


def test_reactive_never_overlaps_in_any_class(plans):
    agg = evaluate({"reactive": ReactivePolicy()}, plans).aggregates()["reactive"]
    for cls in LOAD_CLASSES + ("all",):
        if agg[cls]["n"]:
            assert agg[cls]["mean_overlap_h"] == 0


def test_oracle_policy_has_full_zero_interruption_fraction():
    idle = Trace((), node_count=4)
    cfg = replace(FAST, pair=PairSpec(1, 4 * 3600))
    ps = sample_plans(idle, 0, 6 * DAY, 5, seed=0, cfg=cfg)
    agg = evaluate({"oracle": CallablePolicy(lambda d: d.pred_done)}, ps).aggregates()["oracle"]
    assert agg["all"]["zero_interruption_fraction"] == 1.0


def test_parallel_evaluation_matches_sequential(plans):
    pols = {"reactive": ReactivePolicy(), "avg": AvgPolicy()}
    assert evaluate(pols, plans, seed=1, workers=2).rows == evaluate(pols, plans, seed=1).rows


# ---------------------------------------------------------------- reports

def test_empirical_cdf_example():
    assert empirical_cdf([1, 2, 2, 5]) == [(1.0, 0.25), (2.0, 0.75), (5.0, 1.0)]
    assert empirical_cdf([]) == []


@settings(max_examples=40)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=30))
def test_cdf_is_monotone_and_ends_at_one(vals):
    cdf = empirical_cdf(vals)
    xs, fs = zip(*cdf)
    assert list(xs) == sorted(set(xs)) and all(a < b for a, b in zip(fs, fs[1:]))
    assert fs[-1] == 1.0 and all(0 < f <= 1 for f in fs)


def test_empty_report_writes_header_only(tmp_path):
    paths = emit_report(Report(), tmp_path)
    assert paths["rows"].read_text() == ",".join(ROW_FIELDS) + "\n"
    assert paths["cdf"].read_text() == "policy,load_class,interruption_h,cdf\n"
    assert json.loads(paths["summary"].read_text()) == {}


def test_summary_recomputes_from_rows(tmp_path, plans):
    rep = evaluate({"reactive": ReactivePolicy(), "avg": AvgPolicy()}, plans, seed=2)
    paths = emit_report(rep, tmp_path)
    summary = json.loads(paths["summary"].read_text())
    assert summary == json.loads(json.dumps(read_rows(paths["rows"]).aggregates()))
    for pol in summary.values():
        for agg in pol.values():
            if agg["n"]:
                assert 0 <= agg["zero_interruption_fraction"] <= 1


def test_rows_file_is_byte_identical_for_fixed_seed(tmp_path, diurnal):
    out = []
    for run in range(2):
        ps = sample_plans(diurnal, 0, 8 * DAY, 4, seed=9, cfg=FAST)
        rep = evaluate({"reactive": ReactivePolicy(), "avg": AvgPolicy()}, ps, seed=9)
        out.append(emit_report(rep, tmp_path / str(run))["rows"].read_bytes())
    assert out[0] == out[1]
