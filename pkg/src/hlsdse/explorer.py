"""Closed-loop agentic exploration: route, propose, arbitrate, evaluate, criticize."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .agents import Agents, BudgetState
from .errors import BackendFailure, FrozenParam, NoCandidates, NoFeasible, RootInfeasible
from .history import ExplorationNode, ExplorationTree, HistoryLog, best, curate
from .messages import Orientation
from .space import DesignSpace, default_point, space_size

log = logging.getLogger(__name__)

ORIENTATIONS = (Orientation.PERFORMANCE, Orientation.RESOURCE)
MAX_STALLS = 3


@dataclass
class Budget:
    max_evals: int
    max_wall_seconds: float | None = None

    def __post_init__(self):
        if self.max_evals < 1:
            raise ValueError("max_evals must be >= 1")


def stop_condition(budget: Budget, elapsed: float, evals_used: int) -> bool:
    if evals_used >= budget.max_evals:
        return True
    return budget.max_wall_seconds is not None and elapsed >= budget.max_wall_seconds


@dataclass
class ExploreResult:
    best: ExplorationNode | None
    tree: ExplorationTree
    log: HistoryLog
    evals_used: int
    stop_reason: str


class Session:
    """Shared harness: owns the tree, the log, the eval counter and the eval pool."""

    def __init__(self, space: DesignSpace, evaluator, budget: Budget, log: HistoryLog,
                 parallelism: int = 1, explorer: str = "agentic", seed: int = 0,
                 header: dict | None = None):
        self.space = space
        self.evaluator = evaluator
        self.budget = budget
        self.log = log
        self.tree = ExplorationTree(log)
        self.parallelism = max(1, parallelism)
        self.evals_used = 0
        self.t0 = time.monotonic()
        log.append("run", explorer=explorer, seed=seed, space=space.name,
                   backend=space.profile.name, params=space.names,
                   space_size=space_size(space), max_evals=budget.max_evals, **(header or {}))

    @property
    def elapsed(self) -> float:
        return time.monotonic() - self.t0

    def done(self) -> bool:
        return stop_condition(self.budget, self.elapsed, self.evals_used)

    def remaining(self) -> int:
        return self.budget.max_evals - self.evals_used

    def evaluate_many(self, points):
        """Evaluate concurrently; results come back in submission order."""
        self.evals_used += len(points)
        try:
            if self.parallelism == 1 or len(points) < 2:
                return [self.evaluator.evaluate(self.space, p) for p in points]
            with ThreadPoolExecutor(max_workers=min(self.parallelism, len(points))) as pool:
                return list(pool.map(lambda p: self.evaluator.evaluate(self.space, p), points))
        except Exception as exc:
            raise BackendFailure(f"evaluator raised {type(exc).__name__}: {exc}") from exc

    def seed_root(self) -> int:
        root = default_point(self.space)
        (result,) = self.evaluate_many([root])
        node_id = self.tree.insert(root, result, None, None, 0)
        if not result.feasible:
            log.warning("conservative default is not feasible: %s", result.describe())
        return node_id

    def finish(self, stop_reason: str) -> ExploreResult:
        try:
            top = best(self.tree)
        except NoFeasible:
            top = None
        self.log.append("end", best=top.node_id if top else None,
                        best_latency=top.latency if top else None,
                        evals_used=self.evals_used, stop_reason=stop_reason)
        return ExploreResult(top, self.tree, self.log, self.evals_used, stop_reason)

    def conclude(self, stop_reason: str) -> ExploreResult:
        """Finish and raise RootInfeasible (carrying the result) if nothing feasible was found."""
        out = self.finish(stop_reason)
        if out.best is None:
            exc = RootInfeasible("no feasible design found; the conservative default is infeasible too")
            exc.result = out
            raise exc
        return out

    def fail(self, exc: BackendFailure):
        exc.result = self.finish("backend-failure")
        raise exc


def explore(space: DesignSpace, evaluator, agents: Agents, budget: Budget,
            log: HistoryLog | None = None, parallelism: int = 1, seed: int = 0) -> ExploreResult:
    """Run the agentic search until the budget is spent or it stalls.

    Raises RootInfeasible (after the log is complete) when no feasible design
    was found at all.
    """
    log = log if log is not None else HistoryLog()
    agents.log = log
    header = {"batch_size": agents.config.batch_size, "roles": dict(agents.config.roles)}
    s = Session(space, evaluator, budget, log, parallelism, "agentic", seed, header)
    try:
        reason = _agentic_loop(s, agents, budget)
    except BackendFailure as exc:
        s.fail(exc)
    return s.conclude(reason)


def _agentic_loop(s: Session, agents: Agents, budget: Budget) -> str:
    space, tree, log = s.space, s.tree, s.log
    cfg = agents.config
    s.seed_root()

    feedback: list[str] = []
    exhausted = {o: set() for o in ORIENTATIONS}
    rejected = 0
    stalls = 0
    iteration = 0
    reason = "budget"

    def gather(orientations):
        proposals, seen_points = [], set()
        for orientation in orientations:
            view = curate(tree, cfg.K, cfg.d_min, exclude=exhausted[orientation])
            if not view:
                continue
            try:
                tasks = agents.route(view, feedback, orientation, rejected)
            except NoCandidates:
                continue
            for task in tasks:
                node = tree[task.node_id]
                found = False
                for param in space.names:
                    try:
                        p = agents.propose(task, param, node, view, feedback, tree)
                    except FrozenParam:
                        continue
                    if p is None:
                        continue
                    point = node.point.with_value(p.param, p.new_value)
                    if point in tree or point.id in seen_points:
                        continue
                    seen_points.add(point.id)
                    proposals.append(p)
                    found = True
                if not found:
                    exhausted[orientation].add(task.node_id)
        return proposals

    while True:
        if s.done():
            reason = "budget" if s.evals_used >= budget.max_evals else "wall-clock"
            break
        iteration += 1
        log.tick = iteration
        agents.iteration = iteration
        log.append("iteration", iteration=iteration)

        state = BudgetState(s.evals_used, budget.max_evals)
        proposals = gather(ORIENTATIONS)
        selected = agents.arbitrate(proposals, state, tree) if proposals else []
        if not selected:
            # one forced resource-oriented retry before counting a stall
            proposals = gather((Orientation.RESOURCE,))
            selected = agents.arbitrate(proposals, state, tree) if proposals else []
        selected = selected[: s.remaining()]
        rejected = len(proposals) - len(selected)
        log.append(
            "arbitration",
            iteration=iteration,
            proposals=[p.to_dict() for p in proposals],
            selected=[proposals.index(p) for p in selected],
            rejected=rejected,
        )
        if not selected:
            stalls += 1
            if stalls >= MAX_STALLS:
                reason = "stalled"
                break
            continue
        stalls = 0

        points = [tree[p.node_id].point.with_value(p.param, p.new_value) for p in selected]
        results = s.evaluate_many(points)
        for p, point, result in zip(selected, points, results):
            child_id = tree.insert(point, result, p.node_id, p.param, iteration)
            verdict = agents.criticize(tree[p.node_id], tree[child_id])
            tree.attach_verdict(child_id, verdict)
            feedback.append(verdict.message)
    return reason
