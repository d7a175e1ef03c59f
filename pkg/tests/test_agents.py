from __future__ import annotations

import json

import pytest

from hlsdse.agents import (
    AgentConfig,
    Agents,
    BudgetState,
    CallRecord,
    account_tokens,
    judge,
)
from hlsdse.errors import FrozenParam, MultiParamDiff, NoCandidates, TransportError
from hlsdse.evaluator import RESOURCES, EvalResult, Status, SurrogateEvaluator
from hlsdse.history import ExplorationTree, HistoryLog
from hlsdse.llm import CannedTransport, ReasonerClient, RecordingTransport, fence, request_key
from hlsdse.messages import Judgment, Orientation, Proposal, Role, Task
from hlsdse.space import DesignPoint, default_point

from conftest import single_space


def ok(lat, u=0.1, **over):
    util = {k: u for k in RESOURCES}
    util.update(over)
    return EvalResult(Status.OK, latency=lat, util=util)


TIMEOUT = EvalResult(Status.TIMEOUT)


class ScriptTransport:
    """Answers from a fixed list of reply texts and remembers each request."""

    def __init__(self, *texts, usage=None):
        self.texts = list(texts)
        self.requests = []
        self.usage = usage

    def send(self, request):
        self.requests.append(request)
        if not self.texts:
            raise TransportError("script exhausted")
        body = {"choices": [{"message": {"content": self.texts.pop(0)}}]}
        if self.usage:
            body["usage"] = self.usage
        return body


def llm_agents(space, transport, role, **cfg):
    config = AgentConfig(**cfg)
    config.roles[role.value] = "llm"
    return Agents(space, config, ReasonerClient(transport, retries=cfg.get("retries", 2)),
                  SurrogateEvaluator(space.kernel), log=HistoryLog())


@pytest.fixture
def space():
    return single_space()


@pytest.fixture
def tree(space):
    """A: 200 feasible, B: 150 feasible, C pruned."""
    t = ExplorationTree()
    root = default_point(space)
    t.insert(root, ok(200, 0.2), None)
    t.insert(root.with_value("PF_L0", 2), ok(150, 0.5), 0)
    t.insert(root.with_value("PIPE_L0", "cg"), ok(100, 0.3), 0)
    t.prune(2)
    return t


@pytest.fixture
def agents(space):
    return Agents(space, AgentConfig(), predictor=SurrogateEvaluator(space.kernel))


# -- router ---------------------------------------------------------------

def test_route_performance_picks_fastest_unpruned(agents, tree):
    (task,) = agents.route(tree.nodes, [], Orientation.PERFORMANCE)
    assert task.node_id == 1 and task.orientation is Orientation.PERFORMANCE


def test_route_resource_on_all_feasible_picks_highest_util(agents, tree):
    (task,) = agents.route(tree.nodes, [], Orientation.RESOURCE)
    # max util: node 0 0.2, node 1 0.5 (node 2 is pruned)
    assert task.node_id == 1


def test_route_resource_prefers_fewest_violations(agents, space):
    t = ExplorationTree()
    root = default_point(space)
    t.insert(root, ok(200, 0.9), None)
    t.insert(root.with_value("PF_L0", 2), ok(150, 0.1, DSP=0.95), 0)
    (task,) = agents.route(t.nodes, [], Orientation.RESOURCE)
    assert task.node_id == 1


def test_route_errors(agents, tree):
    with pytest.raises(NoCandidates):
        agents.route([], [], Orientation.PERFORMANCE)
    for n in tree.nodes:
        n.pruned = True
    with pytest.raises(NoCandidates):
        agents.route(tree.nodes, [], Orientation.PERFORMANCE)


def test_route_llm_out_of_view_falls_back(space, tree):
    bad = fence({"tasks": [{"node_id": 2, "rationale": "pruned one"}]})
    tr = ScriptTransport(bad, bad, bad)
    a = llm_agents(space, tr, Role.ROUTER)
    (task,) = a.route(tree.nodes, [], Orientation.PERFORMANCE)
    assert task.node_id == 1
    assert len(tr.requests) == 3
    call = a.log.records[-1]
    assert call["type"] == "call" and call["fallback"] is True and call["attempts"] == 3


def test_route_llm_accepts_valid_node(space, tree):
    tr = ScriptTransport("thinking...\n" + fence({"tasks": [{"node_id": 0, "rationale": "r"}]}))
    a = llm_agents(space, tr, Role.ROUTER)
    (task,) = a.route(tree.nodes, [], Orientation.PERFORMANCE)
    assert task == Task(0, Orientation.PERFORMANCE, "r")


# -- specialists ----------------------------------------------------------

def test_propose_parallel_next_value(agents, tree):
    task = Task(0, Orientation.PERFORMANCE)
    p = agents.propose(task, "PF_L0", tree[0], tree.nodes, [])
    assert (p.old_value, p.new_value) == (1, 2)


def test_propose_pipeline_ladder(agents, tree):
    p = agents.propose(Task(0, Orientation.PERFORMANCE), "PIPE_L0", tree[0], tree.nodes, [])
    assert p.new_value == "cg"


def test_propose_resource_on_timeout_steps_down(agents, space):
    t = ExplorationTree()
    pt = DesignPoint.of({"PF_L0": 8, "PIPE_L0": "off"})
    t.insert(pt, TIMEOUT, None)
    p = agents.propose(Task(0, Orientation.RESOURCE), "PF_L0", t[0], t.nodes, [])
    assert p.new_value == 4


def test_propose_skips_explored_and_reports_frozen(agents, tree):
    # 2 is explored (node 1), so the next preferred factor is 4
    p = agents.propose(Task(0, Orientation.PERFORMANCE), "PF_L0", tree[0], tree.nodes, [], tree)
    assert p.new_value == 4
    frozen = single_space(pf=(1,))
    a = Agents(frozen, AgentConfig())
    t = ExplorationTree()
    t.insert(default_point(frozen), ok(200), None)
    with pytest.raises(FrozenParam):
        a.propose(Task(0, Orientation.PERFORMANCE), "PF_L0", t[0], t.nodes, [])


def test_propose_llm_non_adjacent_jump(space, tree):
    tr = ScriptTransport(fence({"new_value": 4, "prediction": "halves latency"}))
    a = llm_agents(space, tr, Role.SPECIALIST)
    p = a.propose(Task(0, Orientation.PERFORMANCE), "PF_L0", tree[0], tree.nodes, [])
    assert (p.old_value, p.new_value, p.prediction) == (1, 4, "halves latency")


def test_propose_llm_illegal_value_retried(space, tree):
    tr = ScriptTransport(fence({"new_value": 3}), fence({"new_value": 8}))
    a = llm_agents(space, tr, Role.SPECIALIST)
    p = a.propose(Task(0, Orientation.PERFORMANCE), "PF_L0", tree[0], tree.nodes, [])
    assert p.new_value == 8
    assert "Attempt 2" in tr.requests[1]["messages"][1]["content"]


# -- arbitrator -----------------------------------------------------------

def proposals_for(tree, space):
    out = []
    for v in (2, 4, 8):
        out.append(Proposal(0, "PF_L0", 1, v))
    out.append(Proposal(0, "PIPE_L0", "off", "fg"))
    out.append(Proposal(1, "PIPE_L0", "off", "cg"))
    return out


def test_arbitrate_subset_and_batch(agents, tree, space):
    props = proposals_for(tree, space)
    sel = agents.arbitrate(props, BudgetState(1, 40), tree)
    assert len(sel) == 2 and all(p in props for p in sel)


def test_arbitrate_ranks_by_predicted_delta(agents, tree, space):
    # root (200 in the fixture) with PF 8: 13 rounds x 2 = 26, delta -0.87
    # node 1 (150) with cg: II 1, 2 + 49 = 51, delta -0.66
    # root with PF 4: 25 x 2 = 50, delta -0.75
    a = Agents(space, AgentConfig(batch_size=3), predictor=agents.predictor)
    props = [Proposal(1, "PIPE_L0", "off", "cg"), Proposal(0, "PF_L0", 1, 4),
             Proposal(0, "PF_L0", 1, 8)]
    assert a.arbitrate(props, BudgetState(1, 40), tree) == props[::-1]


def test_arbitrate_dedups(agents, tree):
    dup = [Proposal(0, "PF_L0", 1, 2, "a"), Proposal(0, "PF_L0", 1, 2, "b")]
    a = Agents(agents.space, AgentConfig(batch_size=4), predictor=agents.predictor)
    sel = a.arbitrate(dup, BudgetState(0, 10), tree)
    assert sel == [dup[0]]


def test_arbitrate_late_phase_drops_timeouts(tree):
    space = single_space(pf=(1, 2, 4, 8))

    class Predict:
        def evaluate(self, space, point):
            return TIMEOUT if point["PF_L0"] == 8 else ok(100)

    a = Agents(space, AgentConfig(batch_size=8), predictor=Predict())
    props = [Proposal(0, "PF_L0", 1, 8), Proposal(0, "PF_L0", 1, 4)]
    early = a.arbitrate(props, BudgetState(10, 40), tree)
    late = a.arbitrate(props, BudgetState(31, 40), tree)
    assert Proposal(0, "PF_L0", 1, 8) in early
    assert late == [Proposal(0, "PF_L0", 1, 4)]


def test_arbitrate_llm_rejects_oversized_selection(space, tree):
    props = proposals_for(tree, space)
    tr = ScriptTransport(fence({"selected": [0, 1, 2]}), fence({"selected": [3]}))
    a = llm_agents(space, tr, Role.ARBITRATOR)
    assert a.arbitrate(props, BudgetState(1, 40), tree) == [props[3]]


def test_budget_state_phase():
    assert BudgetState(30, 40).phase == 0.75 and not BudgetState(30, 40).is_late()
    assert BudgetState(31, 40).is_late()


# -- critic ---------------------------------------------------------------

@pytest.mark.parametrize("parent,child,want", [
    (ok(200), ok(150), (Judgment.BETTER, False)),
    (ok(200), TIMEOUT, (Judgment.WORSE, True)),
    (ok(200), EvalResult(Status.INVALID, diagnostic="x"), (Judgment.WORSE, True)),
    (ok(200), ok(201), (Judgment.NEUTRAL, False)),
    (ok(200), ok(210), (Judgment.NEUTRAL, False)),
    (ok(200), ok(211), (Judgment.WORSE, False)),
    (ok(200, 0.9), ok(300), (Judgment.BETTER, False)),
    (TIMEOUT, TIMEOUT, (Judgment.NEUTRAL, False)),
])
def test_judge_table(parent, child, want):
    assert judge(parent, child, 0.05) == want


def test_criticize_scripted_message_and_contract(agents, space, tree):
    v = agents.criticize(tree[0], tree[1])
    assert v.judgment is Judgment.BETTER and not v.prune
    assert v.message.startswith("PF_L0 1->2 from node 0: better")
    assert agents.criticize(tree[0], tree[1]) == v
    t = ExplorationTree()
    t.insert(default_point(space), ok(1), None)
    t.nodes.append(type(t[0])(1, DesignPoint.of({"PF_L0": 2, "PIPE_L0": "cg"}), ok(2), 0, "PF_L0"))
    with pytest.raises(MultiParamDiff):
        agents.criticize(t[0], t[1])


def test_criticize_llm_cannot_prune_improvement(space, tree):
    tr = ScriptTransport(fence({"message": "looks  bad\n really", "prune": True}))
    a = llm_agents(space, tr, Role.CRITIC)
    v = a.criticize(tree[0], tree[1])
    assert v.judgment is Judgment.BETTER and not v.prune and v.message == "looks bad really"


# -- reasoner client ------------------------------------------------------

def test_client_retry_then_success_counts_usage():
    tr = ScriptTransport("no block here", fence({"a": 1}),
                         usage={"prompt_tokens": 10, "completion_tokens": 3})
    out = ReasonerClient(tr, retries=2).call("sys", "user")
    assert out.reply == {"a": 1} and out.attempts == 2 and not out.fallback
    assert (out.input_tokens, out.output_tokens) == (20, 6)
    req = tr.requests[0]
    assert req["messages"][0] == {"role": "system", "content": "sys"}
    assert req["temperature"] == 0.0 and req["model"] == "gpt-4o"


def test_client_all_malformed_falls_back():
    tr = ScriptTransport("x", "```json\n[1]\n```", "```json\n{bad\n```")
    out = ReasonerClient(tr, retries=2).call("s", "u")
    assert out.fallback and out.reply is None and out.attempts == 3
    assert out.input_tokens > 0


def test_client_transport_error_falls_back():
    out = ReasonerClient(ScriptTransport(), retries=1).call("s", "u")
    assert out.fallback and out.attempts == 2 and "exhausted" in out.error


def test_canned_and_recording_transport(tmp_path):
    client = ReasonerClient(ScriptTransport(fence({"k": "v"}),
                                            usage={"prompt_tokens": 7, "completion_tokens": 2}))
    client.transport = RecordingTransport(client.transport, tmp_path)
    first = client.call("s", "u")
    replay = ReasonerClient(CannedTransport(tmp_path)).call("s", "u")
    assert replay == first
    assert (replay.input_tokens, replay.output_tokens) == (7, 2)
    key = request_key(client.build_request("s", "u"))
    assert json.loads((tmp_path / f"{key}.json").read_text())["usage"]["prompt_tokens"] == 7
    with pytest.raises(TransportError):
        CannedTransport(tmp_path).send({"other": 1})


def test_llm_role_requires_client(space):
    cfg = AgentConfig()
    cfg.roles["critic"] = "llm"
    with pytest.raises(ValueError):
        Agents(space, cfg)


# -- tokens ---------------------------------------------------------------

def test_account_tokens_ratios():
    recs = [
        {"type": "call", "role": "router", "iteration": 1, "input_tokens": 200, "output_tokens": 50},
        {"type": "call", "role": "specialist", "iteration": 1, "input_tokens": 500, "output_tokens": 100},
        {"type": "call", "role": "critic", "iteration": 2, "input_tokens": 40, "output_tokens": 10},
        {"type": "call", "role": "arbitrator", "iteration": 2, "input_tokens": 90, "output_tokens": 10},
        {"type": "node"},
    ]
    rep = account_tokens(recs)
    assert rep.run_total == 1000
    assert rep.ratios == pytest.approx(
        {"router": 0.25, "specialist": 0.60, "critic": 0.05, "arbitrator": 0.10})
    assert rep.per_iteration == {1: 850, 2: 150}


def test_account_tokens_empty_and_call_records():
    rep = account_tokens([])
    assert rep.run_total == 0 and rep.ratios is None
    assert all(t["total"] == 0 for t in rep.totals.values())
    rep = account_tokens([CallRecord(Role.CRITIC, 3, "scripted", 4, 1)])
    assert rep.ratios["critic"] == 1.0 and rep.per_iteration == {3: 5}


def test_scripted_calls_account_prompt_tokens(agents, tree):
    agents.route(tree.nodes, [], Orientation.PERFORMANCE)
    (rec,) = agents.calls
    assert rec.mode == "scripted" and rec.input_tokens > 50 and rec.output_tokens > 0
