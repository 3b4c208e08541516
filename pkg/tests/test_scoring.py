import math

import pytest
from hypothesis import assume, given, settings, strategies as st

from causalpipe.payloads import Intent, Text, ToolCall
from causalpipe.pipeline import Episode, ModuleOutput
from causalpipe.scoring import (SEV_MAX, FailureRecord, RubricJudge, SeverityVector, failure_index,
                                judge_episode, read_records_csv, write_records_csv)

judge = RubricJudge()


def test_failure_index_values():
    assert failure_index([0, 0, 0, 0]) == 0
    assert failure_index([0.5, 0.5]) == pytest.approx(1.3863, abs=1e-4)
    assert failure_index([0, 0, 0.95, 0.70]) == pytest.approx(4.1997, abs=1e-4)


def test_failure_index_rejects_out_of_range():
    with pytest.raises(ValueError):
        failure_index([1.0])
    with pytest.raises(ValueError):
        failure_index([-0.1])


def test_clamp_ceiling():
    sv = SeverityVector((1.5, -0.2))
    assert sv.sev == (SEV_MAX, 0.0)
    assert sv.F == pytest.approx(-math.log(0.01))


sev = st.floats(0, SEV_MAX)


@settings(max_examples=1000)
@given(st.lists(sev, min_size=1, max_size=8), st.data())
def test_raising_one_entry_raises_F(v, data):
    j = data.draw(st.integers(0, len(v) - 1))
    assume(SEV_MAX - v[j] > 1e-6)
    frac = data.draw(st.floats(1e-3, 1.0))
    w = list(v)
    w[j] = v[j] + (SEV_MAX - v[j]) * frac
    assert failure_index(w) > failure_index(v)


@given(st.lists(sev, min_size=1, max_size=8))
def test_F_zero_iff_all_zero(v):
    assert (failure_index(v) == 0) == all(s == 0 for s in v)


def test_rubric_tiers():
    assert judge.score(Text("a b"), Text("a b")) == 0.0
    assert judge.score(Text("A, b"), Text("a b")) == 0.30
    assert judge.score(Text("x a b c d"), Text("a b c d")) == 0.30
    assert judge.score(Text("a b x y"), Text("a b c d")) == 0.70
    assert judge.score(Text("x y z"), Text("a b c d")) == 0.95
    assert judge.score(Intent("cancel", {"a": "1"}), Intent("return", {"a": "1"})) == 0.70
    assert judge.score(Intent("cancel", {"b": "1"}), Intent("cancel", {"a": "1"})) == 0.70
    assert judge.score(ToolCall("t", {"a": "1"}), ToolCall("u", {"a": "1"})) == 0.95
    assert judge.score(ToolCall("t", {"name": "x"}), ToolCall("t", {"id": "1"})) == 0.70
    assert judge.score(Text("x"), ToolCall("t")) == 0.95


def _episode(payloads):
    return Episode("t", tuple(ModuleOutput(i, p) for i, p in enumerate(payloads, start=1)))


def test_judge_episode_exact_and_tool_mismatch(toy_oracle):
    ep = _episode([toy_oracle[i] for i in range(1, 5)])
    assert judge_episode(ep, toy_oracle, judge).sev == (0, 0, 0, 0)
    bad = _episode([toy_oracle[1], toy_oracle[2], ToolCall("other", {"n": "4"}), toy_oracle[4]])
    assert judge_episode(bad, toy_oracle, judge).sev[2] == 0.95


def test_judge_episode_oracle_gap(toy_oracle):
    ep = _episode([toy_oracle[i] for i in range(1, 5)])
    with pytest.raises(KeyError):
        judge_episode(ep, {1: toy_oracle[1]}, judge)


def test_records_csv_roundtrip(tmp_path):
    recs = [FailureRecord.from_severity("a", SeverityVector((0.3, 0.0, 0.95, 0.7)), "baseline"),
            FailureRecord.from_severity("b", SeverityVector((0.0, 0.0, 0.0, 0.0)), "popccp@M3")]
    write_records_csv(tmp_path / "r.csv", recs)
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "task_id,configuration_tag,F,sev_1,sev_2,sev_3,sev_4"
    back = read_records_csv(tmp_path / "r.csv")
    assert [(r.task_id, r.configuration_tag, r.F, r.severity.sev) for r in back] == \
        [(r.task_id, r.configuration_tag, r.F, r.severity.sev) for r in recs]
    assert abs(back[0].F - failure_index(back[0].severity)) < 1e-12
