"""Router, specialists, arbitrator and critic.

Each role is either ``scripted`` (a fixed heuristic) or ``llm`` (a prompt sent
through :class:`~hlsdse.llm.ReasonerClient`). An LLM reply that fails schema
validation is retried; once retries are exhausted the scripted policy answers
instead and the call is flagged as a fallback in the run log.

Scripted calls still render the prompt they would have sent, so token
accounting is comparable across modes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .errors import FrozenParam, MultiParamDiff, NoCandidates, SchemaViolation
from .evaluator import RESOURCES, EvalResult, Status
from .llm import ReasonerClient, estimate_tokens, fence
from .messages import Judgment, Orientation, Proposal, Role, Task, TokenUsage, Verdict
from .space import DesignSpace, Kind, legal_values

SCRIPTED = "scripted"
LLM = "llm"

OBJECTIVES = {
    Orientation.PERFORMANCE: "reduce latency of a feasible design",
    Orientation.RESOURCE: "bring resource use back under the limit or make room for more parallelism",
}


@dataclass
class AgentConfig:
    batch_size: int = 2
    epsilon: float = 0.05
    retries: int = 2
    K: int = 10
    d_min: int = 2
    routers_per_orientation: int = 1
    feedback_window: int = 8
    late_phase: float = 0.75
    roles: dict = field(default_factory=lambda: {r.value: SCRIPTED for r in Role})

    def mode(self, role: Role) -> str:
        return self.roles.get(role.value, SCRIPTED)


@dataclass(frozen=True)
class BudgetState:
    evals_used: int
    evals_max: int

    @property
    def phase(self) -> float:
        return self.evals_used / self.evals_max if self.evals_max else 1.0

    def is_late(self, threshold: float = 0.75) -> bool:
        return self.phase > threshold


# -- prompts --------------------------------------------------------------

def fill(template: str, values: dict) -> str:
    """Substitute ``{name}`` for known names only; other braces are left alone."""
    out = template
    for key, value in values.items():
        out = out.replace("{" + key + "}", str(value))
    return out


class PromptBook:
    def __init__(self, directory=None, backend: str = "merlin"):
        if directory is None:
            base = resources.files("hlsdse") / "prompts"
        else:
            base = Path(directory)
        self.templates = {
            name: (base / f"{name}.txt").read_text(encoding="utf-8")
            for name in ("system", "router", "specialist", "arbitrator", "critic")
        }
        knowledge = yaml.safe_load((base / "knowledge.yaml").read_text(encoding="utf-8"))
        self.knowledge = dict(knowledge.get("common", {}))
        self.knowledge.update(knowledge.get(backend, {}))

    def system(self, role: Role) -> str:
        return fill(self.templates["system"], {"role": role.value})

    def render(self, name: str, **values) -> str:
        return fill(self.templates[name], values)

    def about(self, key: str) -> str:
        return self.knowledge.get(key, "")


def summarize(node) -> str:
    r = node.result
    if not r.ok:
        state = r.status.value
    else:
        worst = max(RESOURCES, key=lambda k: r.util[k])
        flag = "feasible" if r.feasible else "OVER LIMIT"
        state = f"{r.latency} cycles, {flag}, peak {worst} {r.util[worst]:.0%}"
    return f"{state}; {node.point}"


def history_table(nodes) -> str:
    rows = []
    for n in nodes:
        edge = "root" if n.parent is None else f"from {n.parent} via {n.changed_param}"
        verdict = f", critic: {n.verdict.judgment.value}" if n.verdict else ""
        rows.append(f"- node {n.node_id} ({edge}{verdict}): {summarize(n)}")
    return "\n".join(rows) or "(none)"


# -- scripted policies ----------------------------------------------------

def scripted_route(view, orientation: Orientation) -> list[Task]:
    live = [n for n in view if not n.pruned]
    if not live:
        raise NoCandidates("every candidate design is pruned")
    if orientation is Orientation.PERFORMANCE:
        feasible = [n for n in live if n.feasible]
        if not feasible:
            raise NoCandidates("no feasible design to speed up")
        pick = min(feasible, key=lambda n: (n.latency, n.node_id))
        return [Task(pick.node_id, orientation, "fastest feasible design")]
    over = [n for n in live if not n.feasible]
    if over:
        pick = min(over, key=lambda n: (n.result.violations(), n.node_id))
        why = f"violates {pick.result.violations()} resource(s)"
    else:
        pick = min(live, key=lambda n: (-n.result.max_util, n.node_id))
        why = "highest utilization"
    return [Task(pick.node_id, orientation, why)]


def scripted_candidates(space: DesignSpace, point, param: str, orientation: Orientation) -> list:
    """Preferred new values for ``param``, best first. Raises FrozenParam if none is legal."""
    p = space.param(param)
    cur = point[param]
    legal = [v for v in legal_values(space, point, param) if v != cur]
    if not legal:
        raise FrozenParam(f"{param} has no legal alternative to {cur!r}")
    perf = orientation is Orientation.PERFORMANCE
    if p.kind is Kind.PARALLEL:
        if perf:
            larger = sorted(v for v in legal if v > cur)
            jump = [v for v in larger if v >= 2 * cur][:1]
            return jump + [v for v in larger if v not in jump]
        smaller = sorted((v for v in legal if v < cur), reverse=True)
        half = [v for v in smaller if v <= cur / 2][:1]
        return half + [v for v in smaller if v not in half]
    if p.kind is Kind.TILE:
        return [] if perf else sorted(v for v in legal if v > cur)
    if p.kind is Kind.PIPELINE:
        ladder = [m for m in space.profile.pipeline_ladder if m in p.domain]
        i = ladder.index(cur) if cur in ladder else 0
        order = ladder[i + 1:] if perf else ladder[:i][::-1]
        return [m for m in order if m in legal]
    if p.kind is Kind.ARRAY_PARTITION:
        want = "separate" if perf else "off"
    else:
        want = "reg" if perf else "mem"
    return [want] if want in legal else []


def relative_delta(parent: EvalResult, predicted: EvalResult) -> float:
    if not predicted.ok:
        return math.inf
    if not parent.ok or not parent.latency:
        return -1.0
    return (predicted.latency - parent.latency) / parent.latency


def judge(parent: EvalResult, child: EvalResult, epsilon: float) -> tuple[Judgment, bool]:
    degraded = parent.ok and not child.ok
    if child.feasible and (not parent.feasible or child.latency < parent.latency):
        return Judgment.BETTER, False
    if degraded:
        return Judgment.WORSE, True
    if parent.ok and child.ok and child.latency > parent.latency * (1 + epsilon):
        return Judgment.WORSE, False
    return Judgment.NEUTRAL, False


# -- agents ---------------------------------------------------------------

@dataclass
class CallRecord:
    role: Role
    iteration: int
    mode: str
    input_tokens: int
    output_tokens: int
    attempts: int = 1
    fallback: bool = False

    @property
    def usage(self) -> TokenUsage:
        return TokenUsage(self.role, self.input_tokens, self.output_tokens)


class Agents:
    """The four roles bound to one design space and one run."""

    def __init__(self, space: DesignSpace, config: AgentConfig | None = None,
                 client: ReasonerClient | None = None, predictor=None, log=None,
                 prompts: PromptBook | None = None):
        self.space = space
        self.config = config or AgentConfig()
        self.client = client
        self.predictor = predictor
        self.log = log
        self.prompts = prompts or PromptBook(backend=space.profile.name)
        self.calls: list[CallRecord] = []
        self.iteration = 0
        for role in Role:
            if self.config.mode(role) == LLM and client is None:
                raise ValueError(f"role {role.value} is set to llm but no reasoner client is configured")

    # plumbing

    def _record(self, role, mode, tokens_in, tokens_out, attempts=1, fallback=False):
        rec = CallRecord(role, self.iteration, mode, tokens_in, tokens_out, attempts, fallback)
        self.calls.append(rec)
        if self.log is not None:
            self.log.append("call", role=role.value, iteration=self.iteration, mode=mode,
                            input_tokens=tokens_in, output_tokens=tokens_out,
                            attempts=attempts, fallback=fallback)
        return rec

    def _run(self, role: Role, prompt: str, scripted, validate, encode):
        """Ask the LLM (if configured) or the scripted policy; returns the decision."""
        system = self.prompts.system(role)
        if self.config.mode(role) == LLM:
            outcome = self.client.call(system, prompt, validate)
            if not outcome.fallback:
                self._record(role, LLM, outcome.input_tokens, outcome.output_tokens, outcome.attempts)
                return outcome.reply
            decision = scripted()
            self._record(role, LLM, outcome.input_tokens, outcome.output_tokens,
                         outcome.attempts, fallback=True)
            return decision
        decision = scripted()
        reply = fence(encode(decision))
        self._record(role, SCRIPTED, estimate_tokens(system + prompt), estimate_tokens(reply))
        return decision

    def _feedback(self, feedback) -> str:
        recent = list(feedback)[-self.config.feedback_window:]
        return "\n".join(f"- {m}" for m in recent) or "(none yet)"

    def _knowledge(self, kinds=None) -> str:
        kinds = kinds or sorted({p.kind for p in self.space.params}, key=lambda k: k.value)
        return "\n".join(f"{k.value}: {self.prompts.about(k.value)}" for k in kinds)

    # router

    def route(self, view, feedback, orientation: Orientation, rejected: int = 0) -> list[Task]:
        if not view:
            raise NoCandidates("empty history view")
        live = [n for n in view if not n.pruned]
        if not live:
            raise NoCandidates("every candidate design is pruned")
        prompt = self.prompts.render(
            "router",
            code=self.space.template.strip(),
            knowledge=self.prompts.about("router") + "\n" + self._knowledge(),
            history=history_table(view),
            feedback=self._feedback(feedback),
            rejected=rejected,
            objective=OBJECTIVES[orientation],
            orientation=orientation.value.lower(),
        )
        ids = {n.node_id for n in live}

        def validate(data):
            items = data.get("tasks")
            if items is None and "node_id" in data:
                items = [data]
            if not isinstance(items, list) or not items:
                raise SchemaViolation("router reply needs a non-empty 'tasks' list")
            tasks = []
            for item in items[: self.config.routers_per_orientation]:
                try:
                    node_id = int(item["node_id"])
                except (KeyError, TypeError, ValueError):
                    raise SchemaViolation("each task needs an integer node_id") from None
                if node_id not in ids:
                    raise SchemaViolation(f"node {node_id} is not among the offered designs")
                tasks.append(Task(node_id, orientation, str(item.get("rationale", ""))))
            return tasks

        def encode(tasks):
            return {"tasks": [{"node_id": t.node_id, "rationale": t.rationale} for t in tasks]}

        return self._run(Role.ROUTER, prompt, lambda: scripted_route(live, orientation),
                         validate, encode)

    # specialists

    def propose(self, task: Task, param: str, node, view, feedback, tree=None) -> Proposal | None:
        """One value update for ``param`` at the task's design.

        Returns None when every preferred value leads to an already explored
        design. Raises FrozenParam when the parameter has no legal alternative.
        """
        point = node.point
        p = self.space.param(param)
        cur = point[param]
        legal = [v for v in legal_values(self.space, point, param) if v != cur]
        if not legal:
            raise FrozenParam(f"{param} has no legal alternative at node {node.node_id}")
        explored = (lambda v: point.with_value(param, v) in tree) if tree is not None else (lambda v: False)
        tried = [v for v in legal if explored(v)]
        sid = f"{task.orientation.value.lower()}:{param}"

        def scripted():
            for v in scripted_candidates(self.space, point, param, task.orientation):
                if not explored(v):
                    return Proposal(node.node_id, param, cur, v, "scripted step", sid)
            return None

        if self.config.mode(Role.SPECIALIST) == SCRIPTED and not scripted_candidates(
            self.space, point, param, task.orientation
        ):
            # the scripted specialist has nothing to say about this parameter
            return None

        prompt = self.prompts.render(
            "specialist",
            code=self.space.template.strip(),
            param=param,
            kind=p.kind.value,
            attach=p.attach,
            current=cur,
            legal=", ".join(map(str, legal)),
            tried=", ".join(map(str, tried)) or "none",
            knowledge=self.prompts.about(p.kind.value),
            node_id=node.node_id,
            node_summary=summarize(node),
            rationale=task.rationale or "-",
            history=history_table(view),
            feedback=self._feedback(feedback),
            orientation=task.orientation.value.lower(),
        )

        def validate(data):
            if "new_value" not in data:
                raise SchemaViolation("specialist reply needs 'new_value'")
            raw = data["new_value"]
            if p.kind.is_factor:
                try:
                    value = int(raw)
                except (TypeError, ValueError):
                    raise SchemaViolation(f"{raw!r} is not an integer factor") from None
            else:
                value = str(raw)
            if value == cur:
                raise SchemaViolation("new_value must differ from the current value")
            if value not in legal:
                raise SchemaViolation(f"{value!r} is not a legal value for {param}")
            return Proposal(node.node_id, param, cur, value, str(data.get("prediction", "")), sid)

        def encode(proposal):
            if proposal is None:
                return {"new_value": None, "prediction": "nothing left to try"}
            return {"new_value": proposal.new_value, "prediction": proposal.prediction}

        return self._run(Role.SPECIALIST, prompt, scripted, validate, encode)

    # arbitrator

    def arbitrate(self, proposals, budget: BudgetState, tree) -> list[Proposal]:
        unique, seen = [], set()
        for p in proposals:
            if p.key not in seen:
                seen.add(p.key)
                unique.append(p)
        if not unique:
            return []
        cfg = self.config
        late = budget.is_late(cfg.late_phase)
        predictions = [self._predict(p, tree) for p in unique]

        def scripted():
            ranked = []
            for i, (p, pred) in enumerate(zip(unique, predictions)):
                if pred is None:
                    ranked.append(((0, 0.0, i), p))
                    continue
                if late and pred.status is Status.TIMEOUT:
                    continue
                delta = relative_delta(tree[p.node_id].result, pred)
                ranked.append(((int(not pred.ok), delta, i), p))
            ranked.sort(key=lambda item: item[0])
            return [p for _, p in ranked[: cfg.batch_size]]

        lines = []
        for i, (p, pred) in enumerate(zip(unique, predictions)):
            guess = f" | model estimate: {pred.describe()}" if pred is not None else ""
            note = f" | specialist: {p.prediction}" if p.prediction else ""
            lines.append(f"[{i}] node {p.node_id}: {p.param} {p.old_value} -> {p.new_value}{guess}{note}")
        prompt = self.prompts.render(
            "arbitrator",
            knowledge=self._knowledge(),
            heuristics=self.prompts.about("arbitrator"),
            evals_used=budget.evals_used,
            evals_max=budget.evals_max,
            phase="late" if late else "early",
            proposals="\n".join(lines),
            batch_size=cfg.batch_size,
        )

        def validate(data):
            sel = data.get("selected")
            if not isinstance(sel, list):
                raise SchemaViolation("arbitrator reply needs a 'selected' list")
            try:
                idx = [int(i) for i in sel]
            except (TypeError, ValueError):
                raise SchemaViolation("selected entries must be proposal indices") from None
            if len(set(idx)) != len(idx) or any(not 0 <= i < len(unique) for i in idx):
                raise SchemaViolation("selected indices must be distinct and in range")
            if len(idx) > cfg.batch_size:
                raise SchemaViolation(f"at most {cfg.batch_size} proposals may be selected")
            return [unique[i] for i in idx]

        def encode(chosen):
            return {"selected": [unique.index(p) for p in chosen], "rationale": "ranked by estimate"}

        return self._run(Role.ARBITRATOR, prompt, scripted, validate, encode)

    def _predict(self, proposal: Proposal, tree) -> EvalResult | None:
        if self.predictor is None:
            return None
        point = tree[proposal.node_id].point.with_value(proposal.param, proposal.new_value)
        return self.predictor.evaluate(self.space, point)

    # critic

    def criticize(self, parent, child) -> Verdict:
        diff = parent.point.diff(child.point)
        if len(diff) != 1:
            raise MultiParamDiff(f"nodes {parent.node_id} and {child.node_id} differ in {diff}")
        param = diff[0]
        judgment, prune = judge(parent.result, child.result, self.config.epsilon)
        old, new = parent.point[param], child.point[param]
        template_msg = (
            f"{param} {old}->{new} from node {parent.node_id}: {judgment.value.lower()}"
            f" ({summarize_result(parent.result)} -> {summarize_result(child.result)})"
            + ("; branch pruned" if prune else "")
        )
        prompt = self.prompts.render(
            "critic",
            parent_id=parent.node_id,
            parent_summary=summarize(parent),
            child_id=child.node_id,
            child_summary=summarize(child),
            param=param,
            old=old,
            new=new,
            warnings="; ".join(child.result.warnings) or "none",
            judgment=f"{judgment.value}" + (" (status degraded)" if prune else ""),
        )

        def validate(data):
            msg = data.get("message")
            if not isinstance(msg, str) or not msg.strip():
                raise SchemaViolation("critic reply needs a 'message' string")
            want_prune = bool(data.get("prune", False)) or prune
            if want_prune and judgment is not Judgment.WORSE:
                # pruning is only allowed for regressions
                want_prune = False
            return Verdict(judgment, want_prune, " ".join(msg.split()))

        def encode(verdict):
            return verdict.to_dict()

        return self._run(Role.CRITIC, prompt, lambda: Verdict(judgment, prune, template_msg),
                         validate, encode)


def summarize_result(r: EvalResult) -> str:
    if not r.ok:
        return r.status.value
    return f"{r.latency} cycles{'' if r.feasible else ', over limit'}"


# -- token accounting -----------------------------------------------------

@dataclass
class TokenReport:
    totals: dict
    run_total: int
    ratios: dict | None
    per_iteration: dict

    def rows(self):
        for role in Role:
            t = self.totals[role.value]
            ratio = self.ratios[role.value] if self.ratios else None
            yield role.value, t["input"], t["output"], t["total"], ratio


def account_tokens(records) -> TokenReport:
    """Per-role totals, ratios and per-iteration totals from ``call`` log records.

    Accepts log dicts or :class:`CallRecord` objects. Ratios are None for a run
    that used no tokens.
    """
    totals = {r.value: {"input": 0, "output": 0, "total": 0} for r in Role}
    per_iter: dict = {}
    for rec in records:
        if isinstance(rec, CallRecord):
            role, it, i, o = rec.role.value, rec.iteration, rec.input_tokens, rec.output_tokens
        else:
            if rec.get("type") != "call":
                continue
            role, it = rec["role"], rec.get("iteration", 0)
            i, o = int(rec["input_tokens"]), int(rec["output_tokens"])
        t = totals[role]
        t["input"] += i
        t["output"] += o
        t["total"] += i + o
        per_iter[it] = per_iter.get(it, 0) + i + o
    run_total = sum(t["total"] for t in totals.values())
    ratios = None
    if run_total:
        ratios = {role: t["total"] / run_total for role, t in totals.items()}
    return TokenReport(totals, run_total, ratios, dict(sorted(per_iter.items())))
