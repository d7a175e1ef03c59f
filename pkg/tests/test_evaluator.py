from __future__ import annotations

import math
import sys
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hlsdse.config import build_evaluator, build_space, load_config
from hlsdse.errors import UnknownLoopAttachment
from hlsdse.evaluator import (
    RESOURCES,
    AdapterEvaluator,
    EvalResult,
    ResourceBudget,
    Status,
    SurrogateEvaluator,
    evaluate,
    format_report,
    kernel_model_from_dict,
    parse_report,
    surrogate_evaluate,
    synth_cost,
)
from hlsdse.space import DesignPoint, build_space as make_space, default_point, enumerate_points
from hlsdse.suite import DEMO, config_path

from conftest import NEST_DOC, NEST_MODEL, NEST_TEMPLATE, SINGLE_MODEL, single_space

FIXTURES = Path(__file__).parent / "fixtures" / "reports"


def point(**kw):
    return DesignPoint.of(kw)


# -- oracles --------------------------------------------------------------

def simulate_loop(trip, factor, body, accesses, ports, mode):
    """Cycle-level schedule of one loop: rounds of ``factor`` iterations.

    Sequential mode runs each round to completion before the next starts.
    Pipelined mode starts a round as soon as the memory ports have served the
    previous round's accesses, one port access per port per cycle.
    """
    rounds = []
    left = trip
    while left > 0:
        rounds.append(min(factor, left))
        left -= factor
    if mode == "off":
        t = 0
        for _ in rounds:
            t += body
        return t
    start, finish, port_free = 0, 0, 0
    for k, _ in enumerate(rounds):
        start = max(start, port_free) if k else 0
        need = factor * accesses
        cycles_on_ports = max(1, -(-need // ports)) if accesses else 1
        port_free = start + cycles_on_ports
        finish = max(finish, start + body)
        start = port_free
    return finish


# -- surrogate examples ---------------------------------------------------

def test_single_loop_sequential_200(single):
    r = surrogate_evaluate(single.kernel, single, point(PF_L0=1, PIPE_L0="off"))
    assert r.status is Status.OK and r.latency == 200
    assert r.latency == simulate_loop(100, 1, 2, 1, 4, "off")


def test_single_loop_parallel_four_50(single):
    r = surrogate_evaluate(single.kernel, single, point(PF_L0=4, PIPE_L0="off"))
    assert r.latency == math.ceil(100 / 4) * 2 == simulate_loop(100, 4, 2, 1, 4, "off") == 50


@pytest.mark.parametrize("f", [1, 2, 3, 4, 7, 8, 16, 100, 128])
@pytest.mark.parametrize("mode", ["off", "cg"])
def test_single_loop_matches_schedule_simulator(f, mode):
    space = single_space(pf=(1, 2, 3, 4, 7, 8, 16, 100, 128), pipe=("off", "cg"))
    r = surrogate_evaluate(space.kernel, space, point(PF_L0=f, PIPE_L0=mode))
    assert r.latency == simulate_loop(100, min(f, 100), 2, 1, 4, mode)


def test_demo_optimum_is_26_by_enumeration(single):
    lat = {p: surrogate_evaluate(single.kernel, single, p).latency for p in enumerate_points(single)}
    assert min(lat.values()) == 26
    assert lat[point(PF_L0=8, PIPE_L0="cg")] == 26


def test_fg_unrolls_descendants(nest_space):
    base = default_point(nest_space)
    flat = base.with_value("PIPE_L0", "fg")
    r = surrogate_evaluate(nest_space.kernel, nest_space, flat)
    # inner loop fully unrolled: 1 round of 2 cycles; outer body 1 + 2 = 3,
    # outer has no own accesses so II = 1: 3 + 63 * 1
    assert r.latency == 66
    assert synth_cost(nest_space.kernel, nest_space, flat) == 1 + 16


def test_every_factor_at_max_times_out():
    model = {
        "arrays": {"a": {"size": 4096, "ports": 2}},
        "loops": [{"id": "L0", "trip": 64, "loops": [
            {"id": "L1", "trip": 64, "body_dsp": 1, "accesses": ["a"]}]}],
    }
    doc = {"params": [
        {"name": "F0", "kind": "PARALLEL", "attach": "L0", "values": [1, 64]},
        {"name": "F1", "kind": "PARALLEL", "attach": "L1", "values": [1, 64]},
    ]}
    tpl = "#pragma ACCEL PARALLEL FACTOR=auto{F0}\n#pragma ACCEL PARALLEL FACTOR=auto{F1}\n"
    space = make_space(doc, tpl, kernel_model_from_dict(model))
    r = surrogate_evaluate(space.kernel, space, point(F0=64, F1=64))
    assert r.status is Status.TIMEOUT and r.latency is None and r.util is None
    assert not r.feasible
    assert surrogate_evaluate(space.kernel, space, point(F0=1, F1=64)).ok


def test_resource_formulas_by_hand(nest_space):
    p = point(PF_L1=4, PIPE_L0="cg", TILE_L0=2)
    r = surrogate_evaluate(nest_space.kernel, nest_space, p)
    budget = ResourceBudget()
    dsp = 1 * 4                         # body_dsp x path product
    banks = 4                           # array a accessed under factor 4
    bram = banks * math.ceil(math.ceil(1024 / 2) / 512)
    lut = 50 * dsp + 10 * banks
    ff = math.ceil(lut / 2)
    assert r.util["DSP"] == pytest.approx(dsp / budget.DSP)
    assert r.util["BRAM"] == pytest.approx(bram / budget.BRAM)
    assert r.util["LUT"] == pytest.approx(lut / budget.LUT)
    assert r.util["FF"] == pytest.approx(ff / budget.FF)
    assert r.util["URAM"] == 0.0


def test_tile_relieves_bram(nest_space):
    small = ResourceBudget(BRAM=7)
    a = surrogate_evaluate(nest_space.kernel, nest_space, point(PF_L1=4, PIPE_L0="off", TILE_L0=1), small)
    b = surrogate_evaluate(nest_space.kernel, nest_space, point(PF_L1=4, PIPE_L0="off", TILE_L0=2), small)
    assert a.util["BRAM"] > b.util["BRAM"]
    assert not a.feasible and b.feasible
    assert a.latency == b.latency


def test_stratus_modes():
    model = {"arrays": {"x": {"size": 64, "ports": 2}},
             "loops": [{"id": "L", "trip": 64, "body_cost": 3, "accesses": ["x"]}]}
    doc = {"backend": "stratus", "params": [
        {"name": "P", "kind": "PIPELINE", "attach": "L", "values": ["off", "hs", "ss"]},
        {"name": "AP", "kind": "ARRAY_PARTITION", "attach": "x", "values": ["off", "separate"]},
        {"name": "AT", "kind": "ARRAY_TYPE", "attach": "x", "values": ["mem", "reg"]},
        {"name": "F", "kind": "PARALLEL", "attach": "L", "values": [1, 4]},
    ]}
    tpl = "\n".join(f"#pragma ACCEL X auto{{{n}}}" for n in ("P", "AP", "AT", "F")) + "\n"
    space = make_space(doc, tpl, kernel_model_from_dict(model))

    def lat(**kw):
        base = {"P": "off", "AP": "separate", "AT": "mem", "F": 1}
        base.update(kw)
        return surrogate_evaluate(space.kernel, space, DesignPoint.of(base))

    assert lat().latency == 64 * 3
    assert lat(P="ss").latency == 64 * 4
    assert lat(P="hs").latency == 3 + 63 * 1
    # 4 lanes share 2 ports: II 2; unpartitioned storage serializes the 4 banks
    assert lat(P="hs", F=4).latency == 3 + 15 * 2
    assert lat(P="hs", F=4, AP="off").latency == 3 + 15 * 2 * 4
    # register arrays need no ports and no BRAM but cost flip-flops
    reg = lat(P="hs", F=4, AT="reg")
    assert reg.latency == 3 + 15 * 1
    assert reg.util["BRAM"] == 0.0 and reg.util["FF"] > lat(P="hs", F=4).util["FF"]


def test_unknown_loop_attachment():
    tpl = "#pragma ACCEL PARALLEL FACTOR=auto{F}\n"
    doc = {"params": [{"name": "F", "kind": "PARALLEL", "attach": "L9", "values": [1, 2]}]}
    with pytest.raises(UnknownLoopAttachment):
        make_space(doc, tpl, kernel_model_from_dict(SINGLE_MODEL))
    space = make_space(doc, tpl)
    with pytest.raises(UnknownLoopAttachment):
        surrogate_evaluate(kernel_model_from_dict(SINGLE_MODEL), space, default_point(space))


def test_surrogate_is_deterministic_and_cached(nest_space):
    ev = SurrogateEvaluator(nest_space.kernel)
    p = point(PF_L1=8, PIPE_L0="cg", TILE_L0=2)
    first = ev.evaluate(nest_space, p)
    assert ev.evaluate(nest_space, p) is first
    assert surrogate_evaluate(nest_space.kernel, nest_space, p) == first


def test_default_point_ok_and_feasible_on_suite():
    from hlsdse.suite import SUITE

    for name in SUITE:
        cfg = load_config(config_path(name))
        space = build_space(cfg)
        r = evaluate(build_evaluator(cfg, space), space, default_point(space))
        assert r.ok and r.feasible, name


def test_parallel_monotone_when_pipeline_off():
    # enumeration over the demo kernel: with every loop sequential, raising one
    # PARALLEL factor never raises latency
    cfg = load_config(config_path(DEMO))
    space = build_space(cfg)
    ev = build_evaluator(cfg, space)
    pipes = [p.name for p in space.params if p.kind.value == "PIPELINE"]
    pars = [p for p in space.params if p.kind.value == "PARALLEL"]
    checked = 0
    for pt in enumerate_points(space):
        if any(pt[n] != "off" for n in pipes):
            continue
        r = ev.evaluate(space, pt)
        for p in pars:
            i = p.domain.index(pt[p.name])
            if i + 1 == len(p.domain):
                continue
            q = pt.with_value(p.name, p.domain[i + 1])
            rq = ev.evaluate(space, q)
            if r.ok and rq.ok:
                assert rq.latency <= r.latency
                checked += 1
    assert checked > 20


def test_demo_kernel_has_ok_timeout_neighbours():
    cfg = load_config(config_path(DEMO))
    space = build_space(cfg)
    ev = build_evaluator(cfg, space)
    root = default_point(space)
    flat = root.with_value("PIPE_I", "fg")
    assert root.distance(flat) == 1
    assert ev.evaluate(space, root).status is Status.OK
    assert ev.evaluate(space, flat).status is Status.TIMEOUT


# -- feasibility rule -----------------------------------------------------

def _ok(u):
    util = {k: 0.1 for k in RESOURCES}
    util["DSP"] = u
    return EvalResult(Status.OK, latency=10, util=util)


def test_feasible_boundary():
    assert _ok(0.80).feasible
    assert not _ok(0.8000001).feasible
    assert not _ok(0.81).feasible


def test_result_invariants():
    with pytest.raises(ValueError):
        EvalResult(Status.TIMEOUT, latency=5)
    with pytest.raises(ValueError):
        EvalResult(Status.OK)
    r = EvalResult(Status.OK, latency=3, util={k: 0.2 for k in RESOURCES}, warnings=("w",))
    assert EvalResult.from_dict(r.to_dict()) == r


# -- report parser --------------------------------------------------------

def read(name):
    return (FIXTURES / name).read_text()


def test_report_ok_3mm():
    r = parse_report(read("ok_3mm.txt"))
    assert r.status is Status.OK and r.latency == 26539 and r.feasible
    assert r.util["DSP"] == pytest.approx(0.645)
    assert r.source == "report"


def test_report_timeout_marker():
    r = parse_report(read("timeout.txt"))
    assert r.status is Status.TIMEOUT and r.latency is None


def test_report_unknown_error_invalid():
    r = parse_report(read("unknown_error.txt"))
    assert r.status is Status.INVALID
    assert "internal compiler failure" in r.diagnostic


def test_report_timeout_beats_error():
    assert parse_report("ERROR: x\nstatus: TIMEOUT\n").status is Status.TIMEOUT


def test_report_uram_optional_other_util_required():
    r = parse_report(read("no_uram.txt"))
    assert r.ok and r.util["URAM"] == 0.0
    assert parse_report(read("missing_bram.txt")).status is Status.INVALID
    assert parse_report("util.LUT: 1%\n").status is Status.INVALID


def test_report_boundaries():
    assert parse_report(read("boundary_80.txt")).feasible
    r = parse_report(read("boundary_80_00001.txt"))
    assert r.ok and not r.feasible
    assert not parse_report(read("over_81.txt")).feasible


def test_report_warnings_from_log():
    r = parse_report(read("ok_3mm.txt"), read("warnings.log"))
    assert r.warnings == (
        "II=2 not met for loop L0 due to memory port contention",
        "unroll factor 8 reduced to 4",
    )


def test_report_round_trip(nest_space):
    for p in enumerate_points(nest_space):
        r = surrogate_evaluate(nest_space.kernel, nest_space, p)
        back = parse_report(format_report(r))
        assert back.status is r.status and back.latency == r.latency
        if r.ok:
            for k in RESOURCES:
                assert back.util[k] == pytest.approx(r.util[k], rel=1e-5)


@settings(max_examples=300, deadline=None)
@given(st.one_of(st.binary(max_size=400), st.text(max_size=400)), st.text(max_size=100))
def test_report_parser_total(report, log):
    r = parse_report(report, log)
    assert isinstance(r, EvalResult)
    if r.ok:
        text = report.decode("utf-8", "replace") if isinstance(report, bytes) else report
        assert "cycles" in text.lower()


# -- adapter --------------------------------------------------------------

def write_tool(tmp_path, body):
    tool = tmp_path / "tool.py"
    tool.write_text("import sys, pathlib, shutil\n" + body)
    return f"{sys.executable} {tool}"


def test_adapter_passes_fixture_through(tmp_path, nest_space):
    cmd = write_tool(tmp_path, "shutil.copy(sys.argv[1], pathlib.Path(sys.argv[2]) / 'report.txt')\n")
    ev = AdapterEvaluator(f"{cmd} {FIXTURES / 'ok_3mm.txt'} {{out}}")
    r = evaluate(ev, nest_space, default_point(nest_space))
    assert r == parse_report(read("ok_3mm.txt"))


def test_adapter_sees_rendered_source(tmp_path, nest_space):
    body = (
        "src = pathlib.Path(sys.argv[1]).read_text()\n"
        "assert 'FACTOR=8' in src, src\n"
        "out = pathlib.Path(sys.argv[2])\n"
        "(out / 'report.txt').write_text('cycles: 7\\n' + ''.join("
        "f'util.{k}: 1%\\n' for k in ('LUT', 'FF', 'DSP', 'BRAM')))\n"
        "(out / 'log.txt').write_text('WARNING: from tool\\n')\n"
    )
    ev = AdapterEvaluator(write_tool(tmp_path, body) + " {src} {out}")
    r = ev.evaluate(nest_space, default_point(nest_space).with_value("PF_L1", 8))
    assert r.ok and r.latency == 7 and r.warnings == ("from tool",)


def test_adapter_nonzero_exit_without_report_invalid(tmp_path, nest_space):
    ev = AdapterEvaluator(write_tool(tmp_path, "sys.exit(3)\n") + " {out}")
    r = ev.evaluate(nest_space, default_point(nest_space))
    assert r.status is Status.INVALID and "exit status 3" in r.diagnostic


def test_adapter_spawn_failure_invalid(nest_space, tmp_path):
    ev = AdapterEvaluator(str(tmp_path / "no-such-tool") + " {src}")
    r = ev.evaluate(nest_space, default_point(nest_space))
    assert r.status is Status.INVALID and "cannot run" in r.diagnostic


def test_adapter_wall_timeout(tmp_path, nest_space):
    ev = AdapterEvaluator(write_tool(tmp_path, "import time; time.sleep(5)\n"), timeout=0.3)
    assert ev.evaluate(nest_space, default_point(nest_space)).status is Status.TIMEOUT
