"""Latency/resource feedback for design points.

Two backends share one result type:

* :class:`SurrogateEvaluator` runs a deterministic analytical model over a
  loop-nest description (:class:`KernelModel`).
* :class:`AdapterEvaluator` renders the point, runs an external command and
  parses the report it leaves behind with :func:`parse_report`.
"""

from __future__ import annotations

import math
import re
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping

import yaml

from .errors import AdapterSpawnFailure, KernelModelError, UnknownLoopAttachment
from .space import DesignPoint, DesignSpace, Kind, render

RESOURCES = ("LUT", "FF", "DSP", "BRAM", "URAM")
FEASIBLE_UTIL = 0.80


class Status(str, Enum):
    OK = "Ok"
    TIMEOUT = "Timeout"
    INVALID = "Invalid"


@dataclass(frozen=True)
class EvalResult:
    status: Status
    latency: int | None = None
    util: dict | None = None
    source: str = "surrogate"
    warnings: tuple = ()
    diagnostic: str = ""

    def __post_init__(self):
        if self.status is Status.OK:
            if self.latency is None or self.util is None:
                raise ValueError("an Ok result needs latency and utilization")
        elif self.latency is not None or self.util is not None:
            raise ValueError(f"a {self.status.value} result carries no latency or utilization")

    @property
    def ok(self) -> bool:
        return self.status is Status.OK

    @property
    def feasible(self) -> bool:
        return self.ok and all(u <= FEASIBLE_UTIL for u in self.util.values())

    @property
    def max_util(self) -> float:
        return max(self.util.values()) if self.ok else math.inf

    def violations(self) -> int:
        """Number of resources over the limit; failed evaluations violate everything."""
        if not self.ok:
            return len(RESOURCES)
        return sum(u > FEASIBLE_UTIL for u in self.util.values())

    def to_dict(self) -> dict:
        d = {"status": self.status.value, "source": self.source}
        if self.ok:
            d["latency"] = self.latency
            d["util"] = {k: self.util[k] for k in RESOURCES if k in self.util}
        if self.warnings:
            d["warnings"] = list(self.warnings)
        if self.diagnostic:
            d["diagnostic"] = self.diagnostic
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> EvalResult:
        return cls(
            status=Status(d["status"]),
            latency=d.get("latency"),
            util=dict(d["util"]) if d.get("util") is not None else None,
            source=d.get("source", "surrogate"),
            warnings=tuple(d.get("warnings", ())),
            diagnostic=d.get("diagnostic", ""),
        )

    def describe(self) -> str:
        if not self.ok:
            return self.status.value + (f" ({self.diagnostic})" if self.diagnostic else "")
        util = " ".join(f"{k}={self.util[k]:.0%}" for k in RESOURCES)
        flag = "feasible" if self.feasible else "infeasible"
        return f"{self.latency} cycles, {flag}, {util}"


# -- kernel model ---------------------------------------------------------

@dataclass(frozen=True)
class Loop:
    id: str
    trip: int
    body_cost: int = 1
    body_dsp: int = 0
    accesses: tuple = ()
    children: tuple = ()


@dataclass(frozen=True)
class ArraySpec:
    size: int
    ports: int = 2


@dataclass(frozen=True)
class KernelModel:
    roots: tuple
    arrays: dict
    name: str = "kernel"
    loops: dict = field(default_factory=dict, compare=False)
    parent: dict = field(default_factory=dict, compare=False)

    @classmethod
    def build(cls, roots, arrays, name="kernel") -> KernelModel:
        loops, parent = {}, {}

        def visit(loop, par):
            if loop.id in loops:
                raise KernelModelError(f"loop id {loop.id!r} used twice")
            if loop.trip < 1:
                raise KernelModelError(f"loop {loop.id!r}: trip count must be >= 1")
            for a in loop.accesses:
                if a not in arrays:
                    raise KernelModelError(f"loop {loop.id!r} accesses unknown array {a!r}")
            loops[loop.id] = loop
            parent[loop.id] = par
            for c in loop.children:
                visit(c, loop.id)

        for name_, spec in arrays.items():
            if spec.size < 1 or spec.ports < 1:
                raise KernelModelError(f"array {name_!r}: size and ports must be >= 1")
        for r in roots:
            visit(r, None)
        return cls(tuple(roots), dict(arrays), name, loops, parent)

    def depth(self, loop_id: str) -> int:
        d = 0
        while self.parent[loop_id] is not None:
            loop_id = self.parent[loop_id]
            d += 1
        return d

    def subtree(self, loop_id: str):
        stack = [self.loops[loop_id]]
        while stack:
            loop = stack.pop()
            yield loop
            stack.extend(loop.children)


def _loop_from_doc(d: Mapping) -> Loop:
    try:
        return Loop(
            id=str(d["id"]),
            trip=int(d["trip"]),
            body_cost=int(d.get("body_cost", 1)),
            body_dsp=int(d.get("body_dsp", 0)),
            accesses=tuple(str(a) for a in d.get("accesses", ())),
            children=tuple(_loop_from_doc(c) for c in d.get("loops", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise KernelModelError(f"bad loop entry {dict(d)!r}: {exc}") from None


def kernel_model_from_dict(doc: Mapping, name="kernel") -> KernelModel:
    arrays = {
        str(k): ArraySpec(int(v["size"]), int(v.get("ports", 2)))
        for k, v in (doc.get("arrays") or {}).items()
    }
    roots = tuple(_loop_from_doc(d) for d in doc.get("loops") or ())
    if not roots:
        raise KernelModelError("kernel model has no loops")
    return KernelModel.build(roots, arrays, doc.get("name", name))


def load_kernel_model(path) -> KernelModel:
    path = Path(path)
    doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    return kernel_model_from_dict(doc, name=path.stem)


# -- surrogate ------------------------------------------------------------

@dataclass(frozen=True)
class ResourceBudget:
    LUT: int = 100_000
    FF: int = 200_000
    DSP: int = 400
    BRAM: int = 300
    URAM: int = 100
    synth_cost_limit: int = 4096

    def __post_init__(self):
        for k in RESOURCES:
            if getattr(self, k) <= 0:
                raise ValueError(f"resource total {k} must be positive")

    def total(self, resource: str) -> int:
        return getattr(self, resource)


@dataclass(frozen=True)
class SurrogateConstants:
    bram_depth: int = 512
    lut_per_dsp: int = 50
    lut_per_bank: int = 10
    reg_ff_per_element: int = 32
    handshake_cycles: int = 1


def _effective_mode(mode: str) -> str:
    if mode == "auto" or mode == "hs":
        return "cg"
    return mode


def surrogate_evaluate(
    kernel: KernelModel,
    space: DesignSpace,
    point: DesignPoint,
    budget: ResourceBudget | None = None,
    constants: SurrogateConstants | None = None,
) -> EvalResult:
    budget = budget or ResourceBudget()
    constants = constants or SurrogateConstants()
    a = point.assignment

    factor, mode, tile, partition, atype = {}, {}, {}, {}, {}
    for p in space.params:
        known = kernel.arrays if p.kind.on_array else kernel.loops
        if p.attach not in known:
            raise UnknownLoopAttachment(f"{p.name}: {p.attach!r} not in kernel model")
        v = a.get(p.name, space.profile.default_for(p.kind))
        {
            Kind.PARALLEL: factor,
            Kind.PIPELINE: mode,
            Kind.TILE: tile,
            Kind.ARRAY_PARTITION: partition,
            Kind.ARRAY_TYPE: atype,
        }[p.kind][p.attach] = v

    # effective unroll factor and path product of factors per loop
    eff, path = {}, {}

    def assign(loop, outer, flattened):
        f = loop.trip if flattened else min(factor.get(loop.id, 1), loop.trip)
        eff[loop.id] = f
        path[loop.id] = outer * f
        inner_flat = flattened or mode.get(loop.id) == "fg"
        for c in loop.children:
            assign(c, path[loop.id], inner_flat)

    for r in kernel.roots:
        assign(r, 1, False)

    synth_cost = sum(path.values())
    if synth_cost > budget.synth_cost_limit:
        return EvalResult(
            Status.TIMEOUT,
            diagnostic=f"synthesis cost {synth_cost} exceeds {budget.synth_cost_limit}",
        )

    tile_of = {name: 1 for name in kernel.arrays}
    for loop_id, t in tile.items():
        touched = {arr for lp in kernel.subtree(loop_id) for arr in lp.accesses}
        for arr in touched:
            tile_of[arr] *= t

    banks = {name: 1 for name in kernel.arrays}
    for loop in kernel.loops.values():
        for arr in loop.accesses:
            banks[arr] = max(banks[arr], path[loop.id])

    def stored_banks(arr):
        return 1 if partition.get(arr) == "off" else banks[arr]

    def lat(loop, flattened):
        iters = math.ceil(loop.trip / eff[loop.id])
        inner_flat = flattened or mode.get(loop.id) == "fg"
        body = loop.body_cost + sum(lat(c, inner_flat) for c in loop.children)
        if flattened:
            return iters * body
        m = _effective_mode(mode.get(loop.id, "off"))
        if m == "off":
            return iters * body
        if m == "ss":
            return iters * (body + constants.handshake_cycles)
        # cg, and fg at the level where it is applied
        mem = [arr for arr in loop.accesses if atype.get(arr, "mem") == "mem"]
        ii = 1
        if mem:
            ports = min(kernel.arrays[arr].ports for arr in mem)
            ii = max(1, math.ceil(eff[loop.id] * len(mem) / ports))
            serial = max(
                (banks[arr] for arr in mem if partition.get(arr) == "off"), default=1
            )
            ii *= serial
        return body + (iters - 1) * ii

    latency = sum(lat(r, False) for r in kernel.roots)

    dsp = sum(loop.body_dsp * path[loop.id] for loop in kernel.loops.values())
    bank_count = 0
    bram = 0
    reg_bits = 0
    for arr, spec in kernel.arrays.items():
        footprint = math.ceil(spec.size / tile_of[arr])
        if atype.get(arr, "mem") == "reg":
            reg_bits += constants.reg_ff_per_element * footprint
            continue
        nb = stored_banks(arr)
        bank_count += nb
        bram += nb * math.ceil(footprint / constants.bram_depth)
    lut = constants.lut_per_dsp * dsp + constants.lut_per_bank * bank_count
    ff = math.ceil(lut / 2) + reg_bits
    amounts = {"LUT": lut, "FF": ff, "DSP": dsp, "BRAM": bram, "URAM": 0}
    util = {k: min(1.0, amounts[k] / budget.total(k)) for k in RESOURCES}
    return EvalResult(Status.OK, latency=latency, util=util)


def synth_cost(kernel: KernelModel, space: DesignSpace, point: DesignPoint) -> int:
    """The timeout proxy alone: sum over loops of the product of factors on its path."""
    a = point.assignment
    factor = {p.attach: a[p.name] for p in space.params if p.kind is Kind.PARALLEL}
    mode = {p.attach: a[p.name] for p in space.params if p.kind is Kind.PIPELINE}
    total = 0

    def walk(loop, outer, flattened):
        nonlocal total
        f = loop.trip if flattened else min(factor.get(loop.id, 1), loop.trip)
        total += outer * f
        for c in loop.children:
            walk(c, outer * f, flattened or mode.get(loop.id) == "fg")

    for r in kernel.roots:
        walk(r, 1, False)
    return total


class SurrogateEvaluator:
    """Evaluator handle backed by the analytical model. Pure and thread-safe."""

    kind = "surrogate"

    def __init__(self, kernel: KernelModel, budget: ResourceBudget | None = None,
                 constants: SurrogateConstants | None = None):
        self.kernel = kernel
        self.budget = budget or ResourceBudget()
        self.constants = constants or SurrogateConstants()
        self._cache = {}
        self._lock = threading.Lock()

    def evaluate(self, space: DesignSpace, point: DesignPoint) -> EvalResult:
        with self._lock:
            hit = self._cache.get(point.id)
        if hit is not None:
            return hit
        result = surrogate_evaluate(self.kernel, space, point, self.budget, self.constants)
        with self._lock:
            self._cache[point.id] = result
        return result


# -- report parsing -------------------------------------------------------

_CYCLES_RE = re.compile(r"^\s*cycles\s*:\s*(\d+)\s*$", re.I)
_UTIL_RE = re.compile(r"^\s*util\.([A-Za-z]+)\s*:\s*([0-9]*\.?[0-9]+(?:[eE][-+]?\d+)?)\s*%\s*$")
_TIMEOUT_RE = re.compile(r"^\s*status\s*:\s*TIMEOUT\s*$", re.I)
_ERROR_RE = re.compile(r"^\s*ERROR\s*:(.*)$")
_WARN_RE = re.compile(r"^\s*WARN(?:ING)?\s*:(.*)$", re.I)

REQUIRED_UTIL = ("LUT", "FF", "DSP", "BRAM")


def _text(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bytes, bytearray)):
        return bytes(x).decode("utf-8", errors="replace")
    return str(x)


def parse_report(report_text, log_text="") -> EvalResult:
    """Turn a toolchain report plus log into an EvalResult. Never raises.

    Recognized report lines: ``cycles: <int>``, ``util.<RES>: <float>%``,
    ``status: TIMEOUT`` and ``ERROR: <text>``. Log lines starting with
    ``WARNING:`` are kept for the critic. A report lacking a cycle count or one
    of the LUT/FF/DSP/BRAM lines is Invalid; URAM defaults to 0.
    """
    try:
        report, log = _text(report_text), _text(log_text)
        warnings = []
        for line in log.splitlines():
            m = _WARN_RE.match(line)
            if m:
                warnings.append(m.group(1).strip())
        warnings = tuple(warnings)
        lines = report.splitlines() + log.splitlines()

        if any(_TIMEOUT_RE.match(line) for line in lines):
            return EvalResult(Status.TIMEOUT, source="report", warnings=warnings,
                              diagnostic="toolchain timeout")
        for line in lines:
            m = _ERROR_RE.match(line)
            if m:
                return EvalResult(Status.INVALID, source="report", warnings=warnings,
                                  diagnostic="error: " + m.group(1).strip()[:200])

        cycles = None
        util = {}
        for line in report.splitlines():
            m = _CYCLES_RE.match(line)
            if m and cycles is None:
                cycles = int(m.group(1))
                continue
            m = _UTIL_RE.match(line)
            if m:
                res = m.group(1).upper()
                if res in RESOURCES and res not in util:
                    value = float(m.group(2))
                    if not math.isfinite(value):
                        return EvalResult(Status.INVALID, source="report", warnings=warnings,
                                          diagnostic=f"non-finite utilization for {res}")
                    util[res] = min(1.0, value / 100.0)
        if cycles is None:
            return EvalResult(Status.INVALID, source="report", warnings=warnings,
                              diagnostic="no cycle count in report")
        missing = [r for r in REQUIRED_UTIL if r not in util]
        if missing:
            return EvalResult(Status.INVALID, source="report", warnings=warnings,
                              diagnostic="missing utilization for " + ", ".join(missing))
        util.setdefault("URAM", 0.0)
        return EvalResult(Status.OK, latency=cycles, util=util, source="report",
                          warnings=warnings)
    except Exception as exc:  # noqa: BLE001 - the parser must be total
        return EvalResult(Status.INVALID, source="report", diagnostic=f"parser failure: {exc!r}")


def format_report(result: EvalResult) -> str:
    """Inverse of :func:`parse_report`, used to build fixtures."""
    if result.status is Status.TIMEOUT:
        return "status: TIMEOUT\n"
    if result.status is Status.INVALID:
        return f"ERROR: {result.diagnostic or 'invalid design'}\n"
    lines = [f"cycles: {result.latency}"]
    lines += [f"util.{k}: {result.util.get(k, 0.0) * 100:.6g}%" for k in RESOURCES]
    return "\n".join(lines) + "\n"


# -- external toolchain adapter ------------------------------------------

class AdapterEvaluator:
    """Run an external command per design point and parse its report.

    ``command`` is split with shell rules; ``{src}`` becomes the rendered
    source path, ``{out}`` the output directory and ``{id}`` the point hash.
    The report and log are read from ``{out}/<report>`` and ``{out}/<log>``.
    """

    kind = "adapter"

    def __init__(self, command: str, report: str = "report.txt", log: str = "log.txt",
                 workdir=None, timeout: float | None = None):
        self.command = command
        self.report = report
        self.log = log
        self.workdir = workdir
        self.timeout = timeout

    def _spawn(self, argv, cwd):
        try:
            return subprocess.run(argv, cwd=cwd, capture_output=True, timeout=self.timeout)
        except (OSError, ValueError) as exc:
            raise AdapterSpawnFailure(f"cannot run {argv[0]!r}: {exc}") from exc

    def evaluate(self, space: DesignSpace, point: DesignPoint) -> EvalResult:
        if self.workdir is not None:
            Path(self.workdir).mkdir(parents=True, exist_ok=True)
        with tempfile.TemporaryDirectory(dir=self.workdir, prefix=f"eval-{point.id}-") as tmp:
            tmp = Path(tmp)
            src = tmp / f"{space.name}.c"
            out = tmp / "out"
            out.mkdir()
            src.write_text(render(space, point), encoding="utf-8", newline="\n")
            subst = {"src": str(src), "out": str(out), "id": point.id}
            argv = []
            for tok in shlex.split(self.command):
                for key, value in subst.items():
                    tok = tok.replace("{" + key + "}", value)
                argv.append(tok)
            try:
                proc = self._spawn(argv, tmp)
            except subprocess.TimeoutExpired:
                return EvalResult(Status.TIMEOUT, source="report",
                                  diagnostic=f"command exceeded {self.timeout}s")
            except AdapterSpawnFailure as exc:
                return EvalResult(Status.INVALID, source="report", diagnostic=str(exc))
            report_path, log_path = out / self.report, out / self.log
            log_text = log_path.read_text(errors="replace") if log_path.exists() else ""
            log_text += _text(proc.stderr)
            if not report_path.exists():
                return EvalResult(
                    Status.INVALID, source="report",
                    diagnostic=f"no report (exit status {proc.returncode})",
                )
            return parse_report(report_path.read_bytes(), log_text)


def evaluate(backend, space: DesignSpace, point: DesignPoint) -> EvalResult:
    """Dispatch to whichever evaluator handle is configured."""
    return backend.evaluate(space, point)
