import pytest

from causalpipe.payloads import Intent, Text, ToolCall
from causalpipe.pipeline import Agent, DEFAULT_SLOTS, Task


class ToyBackend:
    """Deterministic module that records every call it sees."""

    serial = False

    def __init__(self, fn):
        self.fn = fn
        self.calls = []

    def __call__(self, call):
        self.calls.append(call)
        return self.fn(call)


def _m1(call):
    return Text(call.task.user_query.lower())


def _m2(call):
    text = call.upstream[0].render()
    return Intent("cancel" if "cancel" in text else "other", {"n": str(len(text.split()))})


def _m3(call):
    plan = call.upstream[1]
    return ToolCall(f"{plan.intent}_tool", dict(plan.slots))


def _m4(call):
    return Text(f"done {call.upstream[2].render()}")


@pytest.fixture
def toy_agent():
    return Agent({1: ToyBackend(_m1), 2: ToyBackend(_m2), 3: ToyBackend(_m3), 4: ToyBackend(_m4)},
                 DEFAULT_SLOTS, "toy")


@pytest.fixture
def toy_task():
    return Task("t1", "Please Cancel my order")


@pytest.fixture
def toy_oracle():
    return {1: Text("please cancel my order"), 2: Intent("cancel", {"n": "4"}),
            3: ToolCall("cancel_tool", {"n": "4"}), 4: Text("done cancel_tool(n=4)")}


@pytest.fixture(scope="session")
def small_sim():
    """40 synthetic tasks under the default agent, with gold oracles and baselines."""
    from causalpipe.pipeline import run_pipeline
    from causalpipe.scoring import RubricJudge
    from causalpipe.simulator import generate_tasks, gold_oracle, make_agent

    agent = make_agent()
    tasks = generate_tasks(40, seed=11)
    oracles = {t.task_id: gold_oracle(t) for t in tasks}
    baselines = {t.task_id: run_pipeline(t, agent, seed=0) for t in tasks}
    return {"agent": agent, "tasks": tasks, "oracles": oracles, "baselines": baselines, "judge": RubricJudge()}


# acceptance criteria outcomes, filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
