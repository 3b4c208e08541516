import json

import pytest

from causalpipe.payloads import Intent, Text, ToolCall, payload_from_json
from causalpipe.pipeline import (EXECUTED, FROZEN, REPLACED, Agent, Episode, InterventionError, InterventionSpec,
                                 ModuleExecutionError, ModuleSlot, Task, check_slots, map_tasks, module_seed,
                                 read_episodes, read_tasks, run_pipeline, world_pair, write_episodes, write_tasks)


def test_plain_run_all_executed(toy_agent, toy_task):
    ep = run_pipeline(toy_task, toy_agent)
    assert len(ep.outputs) == 4
    assert all(o.provenance == EXECUTED for o in ep.outputs)
    assert ep.payload(4) == Text("done cancel_tool(n=4)")


def test_replacement_reexecutes_downstream(toy_agent, toy_task):
    base = run_pipeline(toy_task, toy_agent)
    ep = run_pipeline(toy_task, toy_agent, InterventionSpec({3: ToolCall("x", {})}), base)
    assert [o.provenance for o in ep.outputs] == [EXECUTED, EXECUTED, REPLACED, EXECUTED]
    assert ep.outputs[:2] == base.outputs[:2]
    assert ep.payload(4) == Text("done x()")


def test_world_b_freezes_and_reexecutes_only_downstream(toy_agent, toy_task, toy_oracle):
    base = run_pipeline(toy_task, toy_agent)
    spec = InterventionSpec({1: toy_oracle[1], 2: toy_oracle[2]}, {3})
    ep = run_pipeline(toy_task, toy_agent, spec, base)
    assert [o.provenance for o in ep.outputs] == [REPLACED, REPLACED, FROZEN, EXECUTED]
    assert ep.payload(3) == base.payload(3)


def test_upstream_copies_baseline_without_calling_backend(toy_agent, toy_task):
    base = run_pipeline(toy_task, toy_agent)
    n1 = len(toy_agent.backends[1].calls)
    run_pipeline(toy_task, toy_agent, InterventionSpec({3: ToolCall("x", {})}), base)
    assert len(toy_agent.backends[1].calls) == n1


def test_upstream_executes_without_baseline(toy_agent, toy_task):
    ep = run_pipeline(toy_task, toy_agent, InterventionSpec({3: ToolCall("x", {})}))
    assert ep.outputs[0].provenance == EXECUTED


def test_type_mismatch_rejected(toy_agent, toy_task):
    with pytest.raises(InterventionError):
        run_pipeline(toy_task, toy_agent, InterventionSpec({3: Text("nope")}))


def test_frozen_needs_baseline(toy_agent, toy_task):
    with pytest.raises(InterventionError):
        run_pipeline(toy_task, toy_agent, InterventionSpec(frozen={2}))


def test_overlap_rejected():
    with pytest.raises(InterventionError):
        InterventionSpec({2: Intent("a")}, {2})


def test_backend_failure_carries_index(toy_task):
    def boom(call):
        raise RuntimeError("down")

    agent = Agent({1: lambda c: Text("a"), 2: boom, 3: lambda c: ToolCall("t"), 4: lambda c: Text("b")})
    with pytest.raises(ModuleExecutionError) as err:
        run_pipeline(toy_task, agent)
    assert err.value.module_index == 2


def test_wrong_payload_from_backend(toy_task):
    agent = Agent({1: lambda c: Text("a"), 2: lambda c: Text("x"), 3: lambda c: ToolCall("t"),
                   4: lambda c: Text("b")})
    with pytest.raises(ModuleExecutionError):
        run_pipeline(toy_task, agent)


def test_determinism_byte_identical(toy_agent, toy_task):
    a = run_pipeline(toy_task, toy_agent, seed=3).dumps()
    b = run_pipeline(toy_task, toy_agent, seed=3).dumps()
    assert a == b


def test_world_pair_shares_upstream(toy_agent, toy_task, toy_oracle):
    base = run_pipeline(toy_task, toy_agent)
    for i in (2, 3, 4):
        a, b = world_pair(toy_task, toy_agent, toy_oracle, i, base)
        assert a.outputs[:i - 1] == b.outputs[:i - 1]
        assert b.payload(i) == base.payload(i)
        assert b.outputs[i - 1].provenance == FROZEN


def test_world_pair_rejects_module_one(toy_agent, toy_task, toy_oracle):
    base = run_pipeline(toy_task, toy_agent)
    with pytest.raises(InterventionError):
        world_pair(toy_task, toy_agent, toy_oracle, 1, base)


def test_world_pair_last_module_has_nothing_downstream(toy_agent, toy_task, toy_oracle):
    base = run_pipeline(toy_task, toy_agent)
    _, b = world_pair(toy_task, toy_agent, toy_oracle, 4, base)
    assert [o.provenance for o in b.outputs] == [REPLACED, REPLACED, REPLACED, FROZEN]


def test_world_pair_noop_when_refresh_equals_baseline(toy_agent, toy_task, toy_oracle):
    # the toy M2 already produces the oracle intent from the oracle rewrite
    base = run_pipeline(toy_task, toy_agent, InterventionSpec({1: toy_oracle[1]}))
    a, b = world_pair(toy_task, toy_agent, toy_oracle, 2, base)
    assert a.payloads == b.payloads


def test_world_pair_missing_oracle(toy_agent, toy_task):
    base = run_pipeline(toy_task, toy_agent)
    with pytest.raises(InterventionError):
        world_pair(toy_task, toy_agent, {1: Text("x")}, 3, base)


def test_slots_must_be_contiguous():
    with pytest.raises(ValueError):
        check_slots([ModuleSlot(1, "a", "text"), ModuleSlot(3, "b", "text")])


def test_arbitrary_arity(toy_task):
    slots = [ModuleSlot(1, "a", "text"), ModuleSlot(2, "b", "text")]
    agent = Agent({1: lambda c: Text("x"), 2: lambda c: Text(c.upstream[0].text + "y")}, slots)
    assert run_pipeline(toy_task, agent).payload(2) == Text("xy")


def test_module_seed_distinct_and_stable():
    assert module_seed(0, "t", 1) == module_seed(0, "t", 1)
    assert len({module_seed(0, "t", i) for i in range(1, 5)}) == 4


def test_empty_query_rejected():
    with pytest.raises(ValueError):
        Task("x", "")


def test_episode_jsonl_roundtrip(tmp_path, toy_agent, toy_task, toy_oracle):
    base = run_pipeline(toy_task, toy_agent)
    eps = [base, run_pipeline(toy_task, toy_agent, InterventionSpec({1: toy_oracle[1]}, {2}), base)]
    write_episodes(tmp_path / "e.jsonl", eps)
    back = read_episodes(tmp_path / "e.jsonl")
    assert [e.dumps() for e in back] == [e.dumps() for e in eps]
    line = json.loads((tmp_path / "e.jsonl").read_text().splitlines()[0])
    assert set(line) >= {"task_id", "seed", "intervention", "outputs"}
    assert set(line["outputs"][0]) == {"index", "kind", "payload", "provenance"}


def test_tasks_roundtrip_and_duplicates(tmp_path):
    tasks = [Task("a", "q1"), Task("b", "q2", "retail")]
    write_tasks(tmp_path / "t.jsonl", tasks)
    assert read_tasks(tmp_path / "t.jsonl") == tasks
    write_tasks(tmp_path / "d.jsonl", [Task("a", "q"), Task("a", "r")])
    with pytest.raises(ValueError):
        read_tasks(tmp_path / "d.jsonl")


def test_payload_json_roundtrip():
    for p in (Text("hi"), Intent("cancel", {"a": "1"}), ToolCall("t", {"x": "y"})):
        assert payload_from_json(p.to_json()) == p
    with pytest.raises(ValueError):
        payload_from_json({"kind": "blob"})


def test_map_tasks_parallel_preserves_order():
    assert map_tasks(lambda x: x * 2, range(50), jobs=4) == [x * 2 for x in range(50)]
