"""Command-line entry point.

Subcommands::

    hlsdse explore    --config run.yaml --out DIR
    hlsdse eval       --config run.yaml [POINT]
    hlsdse replay     DIR/history.jsonl
    hlsdse compare    --config a.yaml --config b.yaml | --suite
    hlsdse space-info --config run.yaml
    hlsdse tokens     DIR/history.jsonl [--out DIR]

Exit status: 0 success, 1 infeasible result or invariant violation, 2 usage
or input error, 3 no feasible design at all, 4 evaluator failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import statistics
import sys
from pathlib import Path

from . import plots
from .agents import account_tokens
from .config import EXPLORERS, BACKENDS, build_evaluator, build_space, load_config, run
from .errors import BackendFailure, CorruptLog, DSEError, RootInfeasible
from .evaluator import RESOURCES
from .history import check_tree, read_log, replay_records
from .space import default_point, load_point, render, space_size
from .suite import SUITE, config_path, oracle

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_ROOT_INFEASIBLE = 3
EXIT_BACKEND = 4

log = logging.getLogger("hlsdse")


def _overrides(args) -> dict:
    return {
        "seed": getattr(args, "seed", None),
        "budget_evals": getattr(args, "budget_evals", None),
        "explorer": getattr(args, "explorer", None),
        "backend": getattr(args, "backend", None),
    }


def _emit(rows, delimiter="\t", stream=None):
    writer = csv.writer(stream or sys.stdout, delimiter=delimiter, lineterminator="\n")
    writer.writerows(rows)


# -- summaries recomputed from the log ------------------------------------

def summary_from_log(records) -> dict:
    """Everything the summary file reports, derived from log records only."""
    tree = replay_records(records)
    head = next((r for r in records if r["type"] == "run"), {})
    end = next((r for r in reversed(records) if r["type"] == "end"), {})
    feasible = [n for n in tree.nodes if n.feasible]
    top = min(feasible, key=lambda n: (n.latency, n.node_id)) if feasible else None
    tokens = account_tokens(records)
    return {
        "kernel": head.get("space"),
        "explorer": head.get("explorer"),
        "seed": head.get("seed"),
        "max_evals": head.get("max_evals"),
        "evals_used": len(tree),
        "stop_reason": end.get("stop_reason"),
        "best_node": top.node_id if top else None,
        "latency": top.latency if top else None,
        "util": dict(top.result.util) if top else None,
        "point": top.point.assignment if top else None,
        "tokens": {
            "run_total": tokens.run_total,
            "per_role": tokens.totals,
            "ratios": tokens.ratios,
        },
    }


def _convergence_series(records):
    out, cur = [], None
    n = 0
    for rec in records:
        if rec["type"] != "node":
            continue
        n += 1
        r = rec["result"]
        if r["status"] == "Ok" and r.get("latency") is not None and all(
            r["util"].get(k, 0.0) <= 0.80 for k in RESOURCES
        ):
            cur = r["latency"] if cur is None else min(cur, r["latency"])
        out.append((n, cur))
    return out


# -- subcommands ----------------------------------------------------------

def cmd_explore(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "history.jsonl"
    status = EXIT_OK
    try:
        result = run(cfg, log_path)
    except RootInfeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        status, result = EXIT_ROOT_INFEASIBLE, exc.result
    except BackendFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        status, result = EXIT_BACKEND, getattr(exc, "result", None)
    if result is None:
        return status

    records = read_log(log_path)
    summary = summary_from_log(records)
    if summary["evals_used"] != result.evals_used:
        log.warning("log holds %d evaluations, explorer counted %d",
                    summary["evals_used"], result.evals_used)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    plots.convergence(_convergence_series(records), out / "convergence.png",
                      title=f"{summary['kernel']} ({summary['explorer']})")
    if result.best is not None:
        space = build_space(cfg)
        (out / "best.c").write_text(render(space, result.best.point), encoding="utf-8",
                                    newline="\n")
    rows = [
        ("kernel", summary["kernel"]),
        ("explorer", summary["explorer"]),
        ("evals_used", summary["evals_used"]),
        ("stop_reason", summary["stop_reason"]),
        ("latency", summary["latency"] if summary["latency"] is not None else "-"),
        ("best", result.best.point if result.best else "-"),
        ("tokens", summary["tokens"]["run_total"]),
    ]
    _emit(rows)
    return status


def cmd_eval(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    space = build_space(cfg)
    point = load_point(args.point, space) if args.point else default_point(space)
    evaluator = build_evaluator(cfg, space)
    r = evaluator.evaluate(space, point)
    rows = [("status", r.status.value), ("latency", r.latency if r.latency is not None else "-")]
    if r.ok:
        rows += [(f"util.{k}", f"{100 * r.util[k]:.2f}%") for k in RESOURCES]
        rows.append(("feasible", "yes" if r.feasible else "no"))
    if r.diagnostic:
        rows.append(("diagnostic", r.diagnostic))
    for w in r.warnings:
        rows.append(("warning", w))
    _emit(rows)
    return EXIT_OK if r.feasible else EXIT_FAIL


def _log_problems(records) -> list[str]:
    """Checks only the log can answer: arbitration picks and the end record."""
    problems = []
    head = next((r for r in records if r["type"] == "run"), {})
    limit = head.get("batch_size") if head.get("explorer") == "agentic" else None
    for rec in records:
        if rec["type"] != "arbitration":
            continue
        sel, n = rec.get("selected", []), len(rec.get("proposals", []))
        where = f"line {rec['_line']}: "
        if len(set(sel)) != len(sel) or any(not 0 <= i < n for i in sel):
            problems.append(where + "arbitration selected a design that was not proposed")
        elif limit is not None and len(sel) > limit:
            problems.append(where + f"arbitration selected {len(sel)} > batch size {limit}")
    return problems


def cmd_replay(args) -> int:
    try:
        records = read_log(args.log)
        tree = replay_records(records)
    except CorruptLog as exc:
        print(f"violation: {exc}", file=sys.stderr)
        return EXIT_FAIL
    problems = check_tree(tree) + _log_problems(records)
    summary = summary_from_log(records)
    end = next((r for r in reversed(records) if r["type"] == "end"), None)
    if end is not None and end.get("best") != summary["best_node"]:
        problems.append(f"end record names node {end.get('best')} as best, "
                        f"replay finds {summary['best_node']}")
    if problems:
        print(f"violation: {problems[0]}", file=sys.stderr)
        return EXIT_FAIL
    _emit([
        ("nodes", len(tree)),
        ("pruned", sum(n.pruned for n in tree.nodes)),
        ("best_node", summary["best_node"] if summary["best_node"] is not None else "-"),
        ("latency", summary["latency"] if summary["latency"] is not None else "-"),
        ("status", "ok"),
    ])
    return EXIT_OK


def geomean(values) -> float:
    values = [v for v in values if v is not None and v > 0 and math.isfinite(v)]
    return statistics.geometric_mean(values) if values else float("nan")


def cmd_compare(args) -> int:
    explorers = args.explorers
    if len(explorers) < 2:
        print("error: compare needs at least two explorers", file=sys.stderr)
        return EXIT_USAGE
    configs = [str(config_path(k)) for k in SUITE] if args.suite else (args.config or [])
    if not configs:
        print("error: give --config (repeatable) or --suite", file=sys.stderr)
        return EXIT_USAGE
    ours, baselines = explorers[0], explorers[1:]
    header = ["kernel", *explorers, *(f"S_{b}" for b in baselines)]
    rows, speedups, kernels = [header], {b: [] for b in baselines}, []
    for path in configs:
        latencies = {}
        name = None
        for ex in explorers:
            overrides = dict(_overrides(args), explorer=ex)
            cfg = load_config(path, overrides)
            name = cfg.name
            try:
                latencies[ex] = run(cfg).best.latency
            except RootInfeasible:
                latencies[ex] = None
        kernels.append(name)
        row = [name] + [latencies[e] if latencies[e] is not None else "-" for e in explorers]
        for b in baselines:
            s = None
            if latencies[b] is not None and latencies[ours]:
                s = latencies[b] / latencies[ours]
            speedups[b].append(s)
            row.append(f"{s:.2f}" if s is not None else "-")
        rows.append(row)
    rows.append(["geomean"] + ["-"] * len(explorers)
                + [f"{geomean(speedups[b]):.2f}" for b in baselines])
    _emit(rows, args.delimiter)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "compare.tsv").open("w", encoding="utf-8", newline="") as fh:
            _emit(rows, "\t", fh)
        plots.compare_bars(kernels, {b: [s or 0.0 for s in v] for b, v in speedups.items()},
                           out / "compare.png")
    return EXIT_OK


def cmd_space_info(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    space = build_space(cfg)
    rows = [("name", "kind", "attach", "domain", "guard")]
    for p in space.params:
        rows.append((p.name, p.kind.value, p.attach, " ".join(map(str, p.domain)),
                     p.guard.text if p.guard else "-"))
    _emit(rows)
    _emit([("backend", space.profile.name), ("size", space_size(space))])
    if args.oracle:
        o = oracle(space, build_evaluator(cfg, space))
        _emit([("feasible", o.feasible), ("optimum", o.latency if o.point else "-"),
               ("optimum_point", o.point if o.point else "-")])
    return EXIT_OK


def cmd_tokens(args) -> int:
    try:
        records = read_log(args.log)
    except CorruptLog as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    rep = account_tokens(records)
    rows = [("role", "input", "output", "total", "ratio")]
    for role, i, o, t, ratio in rep.rows():
        rows.append((role, i, o, t, f"{ratio:.4f}" if ratio is not None else "-"))
    rows.append(("all", sum(r[1] for r in rows[1:]), sum(r[2] for r in rows[1:]),
                 rep.run_total, "1.0000" if rep.ratios else "-"))
    series = [("iteration", "tokens")] + list(rep.per_iteration.items())
    _emit(rows)
    print()
    _emit(series)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "tokens.csv").open("w", encoding="utf-8", newline="") as fh:
            _emit(series, ",", fh)
        plots.token_series(rep.per_iteration, out / "tokens.png")
    return EXIT_OK


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hlsdse", description="Directive design-space exploration.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run_flags = argparse.ArgumentParser(add_help=False)
    run_flags.add_argument("--seed", type=int, help="override run.seed")
    run_flags.add_argument("--budget-evals", type=int, help="override run.max_evals")
    run_flags.add_argument("--explorer", choices=EXPLORERS, help="override run.explorer")
    run_flags.add_argument("--backend", choices=BACKENDS, help="override evaluator.backend")

    p = sub.add_parser("explore", parents=[run_flags], help="run one exploration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("eval", parents=[run_flags], help="evaluate one design point")
    p.add_argument("--config", required=True)
    p.add_argument("point", nargs="?", help="YAML/JSON mapping of parameter values (default: conservative point)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="rebuild a tree from its log and verify invariants")
    p.add_argument("log")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("compare", parents=[run_flags], help="compare explorers kernel by kernel")
    p.add_argument("--config", action="append", help="run config (repeatable)")
    p.add_argument("--suite", action="store_true", help="use the shipped kernel suite")
    p.add_argument("--explorers", nargs="+", choices=EXPLORERS, default=["agentic", "greedy"],
                   help="first is 'ours'; speedup = other / ours")
    p.add_argument("--out", help="also write compare.tsv and compare.png here")
    p.add_argument("--delimiter", default="\t")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("space-info", help="list parameters and the space size")
    p.add_argument("--config", required=True)
    p.add_argument("--oracle", action="store_true", help="also enumerate for the optimum")
    p.set_defaults(func=cmd_space_info)

    p = sub.add_parser("tokens", help="per-role token totals and per-iteration series")
    p.add_argument("log")
    p.add_argument("--out", help="also write tokens.csv and tokens.png here")
    p.set_defaults(func=cmd_tokens)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DSEError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
