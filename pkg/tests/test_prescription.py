import logging
import math

import pytest
from hypothesis import given, strategies as st

from causalpipe.diagnosis import MediationTriple, diagnose_task
from causalpipe.payloads import Text
from causalpipe.pipeline import run_pipeline
from causalpipe.prescription import (ConfigurationResult, CorrectionTriple, PrescriptionContext, RoutingStats,
                                     SplitHygieneError, adaptive_route, build_pools, check_split_hygiene,
                                     count_examples, parse_configuration, read_pools, render_patch, routing_decision,
                                     run_configuration, select_pool, write_pools)


def _cand(tid, sev, module=1):
    return CorrectionTriple(tid, module, "in", Text("wrong"), Text("right"), sev)


def test_pool_threshold():
    pool = select_pool([_cand("c1", 0.95), _cand("c2", 0.70), _cand("c3", 0.31), _cand("c4", 0.29)], 1, 0.30, 5)
    assert [t.task_id for t in pool.triples] == ["c1", "c2", "c3"]


def test_pool_takes_top_k():
    pool = select_pool([_cand(f"c{j}", 0.3 + j / 100) for j in range(6)], 1, 0.30, 5)
    assert len(pool.triples) == 5
    assert "c0" not in pool.task_ids


def test_pool_tie_break_by_task_id():
    pool = select_pool([_cand("c12", 0.70), _cand("c09", 0.70)], 1)
    assert [t.task_id for t in pool.triples] == ["c09", "c12"]


def test_pool_filters_module():
    assert select_pool([_cand("a", 0.9, module=2)], 1).triples == ()


@given(st.lists(st.tuples(st.integers(0, 60), st.sampled_from([0.0, 0.3, 0.7, 0.95, 0.99]) | st.floats(0, 0.99)),
                max_size=40),
       st.floats(0.01, 0.99), st.integers(1, 8))
def test_pool_rule_property(cands, tau_demo, k):
    triples = [_cand(f"t{i:03d}", s) for i, s in cands]
    pool = select_pool(triples, 1, tau_demo, k)
    assert len(pool.triples) <= k
    assert all(t.severity >= tau_demo for t in pool.triples)
    keys = [(-t.severity, t.task_id) for t in pool.triples]
    assert keys == sorted(keys)
    admitted = sorted((-t.severity, t.task_id) for t in triples if t.severity >= tau_demo)
    assert keys == admitted[:k]


def test_split_hygiene():
    pools = {1: select_pool([_cand("d1", 0.9)], 1)}
    check_split_hygiene(pools, ["p1", "p2"])
    with pytest.raises(SplitHygieneError):
        check_split_hygiene(pools, ["p1", "d1"])


def test_render_patch():
    one = render_patch(select_pool([_cand("a", 0.9)], 1))
    assert one.rendered_block == "### Example 1\nInput: in\nWrong: wrong\nCorrect: right"
    five = render_patch(select_pool([_cand(f"c{j}", 0.5 + j / 20) for j in range(5)], 1))
    assert count_examples(five.rendered_block) == 5
    assert five.rendered_block.index("Example 1") < five.rendered_block.index("Example 5")
    again = render_patch(select_pool([_cand(f"c{j}", 0.5 + j / 20) for j in range(5)], 1))
    assert again.rendered_block == five.rendered_block and again.pool_hash == five.pool_hash
    empty = render_patch(select_pool([], 1))
    assert empty.empty and empty.rendered_block == ""


def test_build_pools_validates(small_sim):
    with pytest.raises(ValueError):
        build_pools([], {}, {})
    with pytest.raises(ValueError):
        build_pools([object()], {}, {}, tau_demo=1.5)


@pytest.fixture(scope="module")
def diag(small_sim):
    s = small_sim
    dtasks = s["tasks"][:25]
    ds = [diagnose_task(t, s["agent"], s["oracles"][t.task_id], s["judge"], 0, s["baselines"][t.task_id])
          for t in dtasks]
    pools = build_pools(ds, {t.task_id: t for t in dtasks}, s["oracles"])
    triples = [x for d in ds for x in d.triples]
    return ds, pools, triples


def test_pools_from_diagnosis(diag, small_sim):
    ds, pools, _ = diag
    diag_ids = {d.task_id for d in ds}
    for i, pool in pools.items():
        assert pool.task_ids <= diag_ids
        for t in pool.triples:
            assert t.severity > 0 and t.wrong != t.correct
            task = next(x for x in small_sim["tasks"] if x.task_id == t.task_id)
            if i == 1:
                assert t.input == task.user_query


def test_pools_json_roundtrip(tmp_path, diag):
    _, pools, _ = diag
    digest = write_pools(tmp_path / "p.json", pools)
    back = read_pools(tmp_path / "p.json")
    assert {i: p.content_hash for i, p in back.items()} == {i: p.content_hash for i, p in pools.items()}
    assert write_pools(tmp_path / "q.json", back) == digest


def test_zscore_arithmetic():
    stats = RoutingStats({2: 0.5, 3: 1.0, 4: 0.1}, {2: 0.1, 3: 0.2, 4: 0.05}, 1.0)
    z = stats.zscores({2: 0.2, 3: 0.9, 4: 0.1})
    assert z[2] == pytest.approx(-3) and z[3] == pytest.approx(-0.5) and z[4] == pytest.approx(0)
    assert routing_decision({2: 0.2, 3: 0.9, 4: 0.1}, "zscore", stats)[0] is None
    assert stats.zscores({3: 1.3})[3] == pytest.approx(1.5)
    assert routing_decision({2: 0.5, 3: 1.3, 4: 0.1}, "zscore", stats)[0] == 3


def test_zero_sigma_never_fires():
    stats = RoutingStats({3: 0.0}, {3: 0.0})
    assert stats.zscores({3: 100.0})[3] == -math.inf
    assert routing_decision({3: 100.0}, "zscore", stats)[0] is None


def test_absolute_rule():
    assert routing_decision({2: 0.01, 3: 0.05, 4: -1}, "absolute", tau=0.05)[0] is None
    assert routing_decision({2: 0.2, 3: 0.9, 4: 0.9}, "absolute", tau=0.05)[0] == 3


def test_routing_stats_ddof1_and_json():
    t = [MediationTriple("a", 3, 0, 0, 1.0), MediationTriple("b", 3, 0, 0, 3.0), MediationTriple("c", 2, 0, 0, 1.0)]
    s = RoutingStats.from_triples(t)
    assert s.mu[3] == 2.0 and s.sigma[3] == pytest.approx(math.sqrt(2)) and s.sigma[2] == 0.0
    assert RoutingStats.from_json(s.to_json()) == s


def test_adaptive_no_fire_returns_baseline(small_sim, diag):
    s = small_sim
    _, pools, _ = diag
    task = s["tasks"][30]
    base = s["baselines"][task.task_id]
    never = RoutingStats({2: 0, 3: 0, 4: 0}, {2: 0, 3: 0, 4: 0})
    dec = adaptive_route(task, s["agent"], lambda t, b: s["oracles"][t.task_id], s["judge"], pools, base,
                         "zscore", never)
    assert dec.target is None and dec.episode is base


def test_adaptive_routing_failure_falls_back(small_sim, diag, caplog):
    s = small_sim
    _, pools, triples = diag
    task = s["tasks"][30]
    base = s["baselines"][task.task_id]

    def broken(t, b):
        raise ConnectionError("router offline")

    with caplog.at_level(logging.WARNING):
        dec = adaptive_route(task, s["agent"], broken, s["judge"], pools, base, "zscore",
                             RoutingStats.from_triples(triples))
    assert dec.target is None and dec.episode is base
    assert "not patching" in caplog.text


def test_adaptive_rejects_bad_rule(small_sim, diag):
    s = small_sim
    task = s["tasks"][30]
    with pytest.raises(ValueError):
        adaptive_route(task, s["agent"], lambda t, b: {}, s["judge"], {}, s["baselines"][task.task_id], "vote")


@pytest.mark.parametrize("tag,rule,treatment,fixed", [
    ("baseline", "none", "none", None), ("popccp@M3", "fixed", "ccp", 3), ("popccp@pop", "pop_target", "ccp", None),
    ("oracle@M2", "fixed", "oracle-inject", 2), ("oracle@pop", "pop_target", "oracle-inject", None),
    ("adaptive-zscore", "adaptive_zscore", "ccp", None), ("rewrite@pop", "pop_target", "none", None),
    ("naive-pop-severity", "naive_pop_severity", "ccp", None)])
def test_parse_configuration(tag, rule, treatment, fixed):
    c = parse_configuration(tag)
    assert (c.rule, c.treatment, c.fixed) == (rule, treatment, fixed)


def test_unknown_configuration():
    with pytest.raises(ValueError):
        parse_configuration("popccp@M")


@pytest.fixture(scope="module")
def ctx(diag):
    from causalpipe.simulator import DegradedOracle

    ds, pools, triples = diag
    return PrescriptionContext(pools, 3, 3, RoutingStats.from_triples(triples), 0.05, DegradedOracle(0.15, 0))


def _presc(small_sim):
    return small_sim["tasks"][25:]


def _run(tag, small_sim, ctx):
    s = small_sim
    return run_configuration(tag, _presc(s), s["agent"], s["oracles"], s["judge"], s["baselines"], ctx)


def test_split_hygiene_asserted_at_entry(small_sim, ctx):
    s = small_sim
    with pytest.raises(SplitHygieneError):
        run_configuration("popccp@M3", s["tasks"], s["agent"], s["oracles"], s["judge"], s["baselines"], ctx)


def test_baseline_and_noop_have_zero_delta(small_sim, ctx):
    for tag in ("baseline", "rewrite@pop", "compute-upgrade@pop"):
        assert _run(tag, small_sim, ctx).delta == [0.0] * len(_presc(small_sim))


def test_task_set_matches_baseline(small_sim, ctx):
    r = _run("popccp@M2", small_sim, ctx)
    assert r.task_ids == [t.task_id for t in _presc(small_sim)]


def test_patch_isolation(small_sim, ctx):
    s = small_sim
    task = _presc(s)[0]
    calls = []

    class Spy:
        serial = False

        def __init__(self, inner):
            self.inner = inner

        def __call__(self, call):
            calls.append(call)
            return self.inner(call)

    from causalpipe.pipeline import Agent

    spy = Agent({i: Spy(b) for i, b in s["agent"].backends.items()}, s["agent"].slots)
    run_pipeline(task, spy, baseline=s["baselines"][task.task_id], patches={2: render_patch(ctx.pools[2])})
    assert {c.slot.index for c in calls} == {2, 3, 4}
    assert [c.slot.index for c in calls if c.patch is not None] == [2]


def test_oracle_inject_dominates_ccp_on_mean(small_sim, ctx):
    for i in (1, 2, 3, 4):
        oracle_r = _run(f"oracle@M{i}", small_sim, ctx)
        ccp_r = _run(f"popccp@M{i}", small_sim, ctx)
        assert sum(oracle_r.F_patched) <= sum(ccp_r.F_patched) + 1e-9


def test_adaptive_no_fire_identity(small_sim, ctx):
    r = _run("adaptive-zscore", small_sim, ctx)
    for tgt, d in zip(r.targets, r.delta):
        if tgt is None:
            assert d == 0.0


def test_oracle_inject_needs_oracles(small_sim, ctx):
    s = small_sim
    partial = {k: v for k, v in s["oracles"].items() if k != _presc(s)[0].task_id}
    with pytest.raises(KeyError):
        run_configuration("oracle@M3", _presc(s), s["agent"], partial, s["judge"], s["baselines"], ctx)


def test_result_csv_roundtrip(tmp_path, small_sim, ctx):
    r = _run("per-task-severity", small_sim, ctx)
    r.write_csv(tmp_path / "r.csv")
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header.startswith("task_id,F_base,F_patched,delta,tool_match")
    back = ConfigurationResult.read_csv(tmp_path / "r.csv", r.configuration_tag)
    assert back.F_patched == r.F_patched and back.tool_match == r.tool_match and back.targets == r.targets
    assert set(r.summary()) >= {"mean_delta", "tool_match_rate"}
