"""Adjacent-move greedy explorer used as the comparison arm.

This approximates a bottleneck-guided heuristic tuner: from the current best
design it tries one neighbouring domain value per parameter, in a fixed
priority order, and adopts the best strictly improving child. It is not a
reimplementation of any particular published tool.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import BackendFailure
from .explorer import Budget, ExploreResult, Session
from .history import HistoryLog
from .space import DesignSpace, Kind, legal_values

DEFAULT_ORDER = (Kind.PARALLEL, Kind.PIPELINE, Kind.TILE, Kind.ARRAY_PARTITION, Kind.ARRAY_TYPE)


@dataclass
class GreedyState:
    current: int
    cursors: dict = field(default_factory=dict)
    batch: list = field(default_factory=list)


def bottleneck_order(space: DesignSpace, order=DEFAULT_ORDER) -> list[str]:
    """Parameters by kind priority, innermost loops first within a kind."""
    kernel = space.kernel
    rank = {Kind(k): i for i, k in enumerate(order)}

    def depth(p):
        if kernel is None or p.kind.on_array or p.attach not in kernel.loops:
            return 0
        return kernel.depth(p.attach)

    indexed = list(enumerate(space.params))
    indexed.sort(key=lambda ip: (rank.get(ip[1].kind, len(rank)), -depth(ip[1]), -ip[0]))
    return [p.name for _, p in indexed]


def adjacent_moves(space: DesignSpace, point, names) -> list:
    """One neighbouring value per parameter: the next domain value up, else the one below."""
    moves = []
    for name in names:
        p = space.param(name)
        i = p.domain.index(point[name])
        legal = legal_values(space, point, name)
        for j in (i + 1, i - 1):
            if 0 <= j < len(p.domain) and p.domain[j] in legal:
                moves.append((name, p.domain[j]))
                break
    return moves


def _better(a, b) -> bool:
    """True if result ``a`` beats the incumbent ``b``."""
    if not a.feasible:
        return False
    return not b.feasible or a.latency < b.latency


def greedy_explore(space: DesignSpace, evaluator, budget: Budget, log: HistoryLog | None = None,
                   batch_size: int = 8, order=DEFAULT_ORDER, parallelism: int = 1,
                   seed: int = 0) -> ExploreResult:
    log = log if log is not None else HistoryLog()
    s = Session(space, evaluator, budget, log, parallelism, "greedy", seed,
                {"batch_size": batch_size})
    try:
        reason = _greedy_loop(s, batch_size, order)
    except BackendFailure as exc:
        s.fail(exc)
    return s.conclude(reason)


def _greedy_loop(s: Session, batch_size: int, order) -> str:
    space, tree, log, budget = s.space, s.tree, s.log, s.budget
    names = bottleneck_order(space, order)
    state = GreedyState(current=s.seed_root())
    iteration = 0
    reason = None

    while reason is None:
        if s.done():
            reason = "budget" if s.evals_used >= budget.max_evals else "wall-clock"
            break
        cur = tree[state.current]
        state.cursors = {n: space.param(n).domain.index(cur.point[n]) for n in names}
        moves = [
            (name, v) for name, v in adjacent_moves(space, cur.point, names)
            if cur.point.with_value(name, v) not in tree
        ]
        if not moves:
            reason = "converged"
            break
        improved = None
        while moves and improved is None and not s.done():
            iteration += 1
            log.tick = iteration
            log.append("iteration", iteration=iteration)
            state.batch, moves = moves[: min(batch_size, s.remaining())], moves[batch_size:]
            points = [cur.point.with_value(n, v) for n, v in state.batch]
            results = s.evaluate_many(points)
            champion = cur
            for (name, _), point, result in zip(state.batch, points, results):
                node_id = tree.insert(point, result, cur.node_id, name, iteration)
                if _better(result, champion.result):
                    champion = tree[node_id]
            if champion is not cur:
                improved = champion
        if improved is None:
            # out of moves: a local optimum, unless the budget ran out first
            if not s.done():
                reason = "converged"
            continue
        state.current = improved.node_id
    return reason
