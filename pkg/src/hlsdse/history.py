"""Exploration tree, its append-only JSON-lines log, curation and replay.

Every mutation of an :class:`ExplorationTree` that owns a :class:`HistoryLog`
is written as one JSON object per line. Record types:

``run``        header: explorer, seed, parameter names, budget
``iteration``  start of an iteration
``node``       node_id, parent, changed_param, assignment, point_id, result, iteration
``verdict``    node_id, judgment, prune, message
``prune``      node_id
``call``       role, iteration, mode, input_tokens, output_tokens, attempts, fallback
``arbitration`` iteration, proposals, selected (indices), rejected (count)
``end``        best node, evals_used, stop_reason

All records carry ``seq`` (strictly increasing) and ``ts``. ``ts`` is a
logical clock (the current iteration) unless wall-clock stamping is enabled,
so identical runs produce byte-identical logs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CorruptLog, DuplicatePoint, MultiParamDiff, NoFeasible, PrunedParent
from .evaluator import EvalResult
from .messages import Verdict
from .space import DesignPoint


@dataclass
class ExplorationNode:
    node_id: int
    point: DesignPoint
    result: EvalResult
    parent: int | None = None
    changed_param: str | None = None
    iteration: int = 0
    verdict: Verdict | None = None
    pruned: bool = False

    @property
    def feasible(self) -> bool:
        return self.result.feasible

    @property
    def latency(self):
        return self.result.latency


def dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class HistoryLog:
    """Append-only record sink; writes through to ``path`` when given."""

    def __init__(self, path=None, wall_clock: bool = False):
        self.path = Path(path) if path is not None else None
        self.wall_clock = wall_clock
        self.records: list[dict] = []
        self.tick = 0
        self._t0 = time.monotonic()
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = self.path.open("w", encoding="utf-8", newline="\n")

    def append(self, type_: str, **fields) -> dict:
        ts = round(time.monotonic() - self._t0, 6) if self.wall_clock else self.tick
        record = {"seq": len(self.records), "ts": ts, "type": type_, **fields}
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(dumps(record) + "\n")
            self._fh.flush()
        return record

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ExplorationTree:
    """Explored designs as a tree whose edges change exactly one parameter."""

    def __init__(self, log: HistoryLog | None = None):
        self.nodes: list[ExplorationNode] = []
        self.by_point: dict[str, int] = {}
        self.log = log

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, node_id: int) -> ExplorationNode:
        return self.nodes[node_id]

    def __contains__(self, point: DesignPoint) -> bool:
        return point.id in self.by_point

    def insert(self, point: DesignPoint, result: EvalResult, parent: int | None = None,
               changed_param: str | None = None, iteration: int = 0) -> int:
        if point.id in self.by_point:
            existing = self.by_point[point.id]
            raise DuplicatePoint(f"{point} was already explored as node {existing}", existing)
        if parent is None:
            if self.nodes:
                raise MultiParamDiff("only the first node may be parentless")
            changed_param = None
        else:
            if not 0 <= parent < len(self.nodes):
                raise MultiParamDiff(f"parent {parent} does not exist")
            par = self.nodes[parent]
            if par.pruned:
                raise PrunedParent(f"node {parent} is pruned and cannot be expanded")
            diff = par.point.diff(point)
            if len(diff) != 1 or (changed_param is not None and diff != [changed_param]):
                raise MultiParamDiff(
                    f"child of node {parent} differs in {diff or 'no parameter'}, "
                    f"expected exactly {changed_param or 'one parameter'}"
                )
            changed_param = diff[0]
        node = ExplorationNode(len(self.nodes), point, result, parent, changed_param, iteration)
        self.nodes.append(node)
        self.by_point[point.id] = node.node_id
        if self.log is not None:
            self.log.append(
                "node",
                node_id=node.node_id,
                parent=parent,
                changed_param=changed_param,
                assignment=point.assignment,
                point_id=point.id,
                result=result.to_dict(),
                iteration=iteration,
            )
        return node.node_id

    def attach_verdict(self, node_id: int, verdict: Verdict) -> None:
        self.nodes[node_id].verdict = verdict
        if self.log is not None:
            self.log.append("verdict", node_id=node_id, **verdict.to_dict())
        if verdict.prune:
            self.prune(node_id)

    def prune(self, node_id: int) -> None:
        if self.nodes[node_id].pruned:
            return
        self.nodes[node_id].pruned = True
        if self.log is not None:
            self.log.append("prune", node_id=node_id)

    def unpruned(self) -> list[ExplorationNode]:
        return [n for n in self.nodes if not n.pruned]

    def children(self, node_id: int) -> list[ExplorationNode]:
        return [n for n in self.nodes if n.parent == node_id]

    def best_series(self) -> list:
        """Best feasible latency after each insertion (None until one exists)."""
        out, cur = [], None
        for n in self.nodes:
            if n.feasible and (cur is None or n.latency < cur):
                cur = n.latency
            out.append(cur)
        return out


def _rank_key(n: ExplorationNode):
    if n.feasible:
        return (0, n.latency, n.node_id)
    if n.result.ok:
        return (1, n.latency, n.node_id)
    return (2, 0, n.node_id)


def best(tree: ExplorationTree) -> ExplorationNode:
    """Feasible node with the lowest latency; ties go to the lowest node_id."""
    feasible = [n for n in tree.nodes if n.feasible]
    if not feasible:
        raise NoFeasible("no feasible design has been explored")
    return min(feasible, key=lambda n: (n.latency, n.node_id))


def curate(tree: ExplorationTree, K: int = 10, d_min: int = 2, exclude=()) -> list[ExplorationNode]:
    """Pick at most ``K`` representative unpruned nodes.

    The best feasible and the most recent node are always kept. Remaining
    slots go to nodes in latency order whose Hamming distance to every kept
    node is at least ``d_min``; the distance requirement is relaxed one step
    at a time until the slots are filled.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    exclude = set(exclude)
    pool = [n for n in tree.nodes if not n.pruned and n.node_id not in exclude]
    if len(pool) <= K:
        return pool
    chosen: list[ExplorationNode] = []
    feasible = [n for n in pool if n.feasible]
    if feasible:
        chosen.append(min(feasible, key=lambda n: (n.latency, n.node_id)))
    recent = max(pool, key=lambda n: n.node_id)
    if len(chosen) < K and recent not in chosen:
        chosen.append(recent)
    ranked = sorted(pool, key=_rank_key)
    d = d_min
    while len(chosen) < K:
        for n in ranked:
            if len(chosen) >= K:
                break
            if n in chosen:
                continue
            if all(n.point.distance(c.point) >= d for c in chosen):
                chosen.append(n)
        d -= 1
    return sorted(chosen, key=lambda n: n.node_id)


# -- persistence ----------------------------------------------------------

def persist(tree: ExplorationTree, path) -> None:
    """Write a standalone log that replays to ``tree``."""
    with HistoryLog(path) as log:
        for n in tree.nodes:
            log.tick = n.iteration
            log.append(
                "node",
                node_id=n.node_id,
                parent=n.parent,
                changed_param=n.changed_param,
                assignment=n.point.assignment,
                point_id=n.point.id,
                result=n.result.to_dict(),
                iteration=n.iteration,
            )
            if n.verdict is not None:
                log.append("verdict", node_id=n.node_id, **n.verdict.to_dict())
            if n.pruned:
                log.append("prune", node_id=n.node_id)


def read_log(path) -> list[dict]:
    """Parse a log file; CorruptLog names the first unreadable line."""
    records = []
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    elif lines:
        raise CorruptLog("truncated final record (no line terminator)", len(lines))
    for lineno, line in enumerate(lines, 1):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptLog(f"unreadable record: {exc.msg}", lineno) from None
        if not isinstance(rec, dict) or "seq" not in rec or "type" not in rec:
            raise CorruptLog("record lacks seq/type", lineno)
        rec["_line"] = lineno
        records.append(rec)
    return records


def replay_records(records) -> ExplorationTree:
    """Rebuild a tree from parsed records, re-checking every tree invariant."""
    tree = ExplorationTree()
    last_seq = None
    for rec in records:
        line = rec.get("_line")
        seq = rec["seq"]
        if last_seq is not None and not seq > last_seq:
            raise CorruptLog(f"sequence number {seq} does not increase", line)
        last_seq = seq
        kind = rec["type"]
        try:
            if kind == "node":
                if rec["node_id"] != len(tree.nodes):
                    raise CorruptLog(f"node id {rec['node_id']} out of order", line)
                point = DesignPoint.of(rec["assignment"])
                tree.insert(point, EvalResult.from_dict(rec["result"]), rec["parent"],
                            rec["changed_param"], rec.get("iteration", 0))
            elif kind == "verdict":
                v = Verdict.from_dict(rec)
                tree[rec["node_id"]].verdict = v
            elif kind == "prune":
                tree[rec["node_id"]].pruned = True
        except CorruptLog:
            raise
        except (DuplicatePoint, MultiParamDiff, PrunedParent) as exc:
            raise CorruptLog(f"{type(exc).__name__}: {exc}", line) from None
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise CorruptLog(f"malformed {kind} record: {exc!r}", line) from None
    return tree


def replay(path) -> ExplorationTree:
    return replay_records(read_log(path))


def check_tree(tree: ExplorationTree) -> list[str]:
    """Global invariant check; returns human-readable violations (empty if clean)."""
    problems = []
    seen = {}
    for n in tree.nodes:
        if n.point.id in seen:
            problems.append(f"node {n.node_id} duplicates node {seen[n.point.id]}")
        seen[n.point.id] = n.node_id
        if n.parent is None:
            if n.node_id != 0:
                problems.append(f"node {n.node_id} has no parent")
            continue
        diff = tree[n.parent].point.diff(n.point)
        if diff != [n.changed_param]:
            problems.append(f"edge {n.parent}->{n.node_id} changes {diff}")
        anc = n.parent
        while anc is not None:
            if tree[anc].pruned:
                problems.append(f"node {n.node_id} descends from pruned node {anc}")
                break
            anc = tree[anc].parent
    series = [s for s in tree.best_series() if s is not None]
    if any(b > a for a, b in zip(series, series[1:])):
        problems.append("best latency increased over time")
    return problems
