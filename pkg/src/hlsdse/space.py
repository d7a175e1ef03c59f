"""Directive parameter spaces: definitions, guards, design points and rendering.

A space is described by two files: a YAML document listing the parameters and
an annotated kernel source whose ``#pragma ACCEL`` lines carry ``auto{NAME}``
placeholders, one per parameter.
"""

from __future__ import annotations

import ast
import hashlib
import itertools
import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterator, Mapping, Union

import yaml

from .errors import (
    DefaultViolatesGuard,
    DuplicateParam,
    EmptyDomain,
    InvalidPoint,
    MissingPlaceholder,
    SpaceError,
    UnknownGuardSymbol,
    UnknownLoopAttachment,
    UnknownParam,
    UnsupportedKindForBackend,
)

Value = Union[int, str]

PLACEHOLDER_RE = re.compile(r"auto\{(\w+)\}")


class Kind(str, Enum):
    PARALLEL = "PARALLEL"
    PIPELINE = "PIPELINE"
    TILE = "TILE"
    ARRAY_PARTITION = "ARRAY_PARTITION"
    ARRAY_TYPE = "ARRAY_TYPE"

    @property
    def is_factor(self) -> bool:
        return self in (Kind.PARALLEL, Kind.TILE)

    @property
    def on_array(self) -> bool:
        return self in (Kind.ARRAY_PARTITION, Kind.ARRAY_TYPE)


ARRAY_PARTITION_VOCAB = ("off", "separate")
ARRAY_TYPE_VOCAB = ("mem", "reg")


@dataclass(frozen=True)
class BackendProfile:
    name: str
    supported_kinds: frozenset
    pipeline_vocab: tuple
    tile_supported: bool
    # pipeline modes ordered from slowest to fastest, used by scripted specialists
    pipeline_ladder: tuple

    def default_for(self, kind: Kind) -> Value:
        if kind is Kind.PIPELINE:
            return "auto" if self.pipeline_vocab == ("auto",) else "off"
        return {
            Kind.PARALLEL: 1,
            Kind.TILE: 1,
            Kind.ARRAY_PARTITION: "off",
            Kind.ARRAY_TYPE: "mem",
        }[kind]


PROFILES = {
    "merlin": BackendProfile(
        name="merlin",
        supported_kinds=frozenset({Kind.PARALLEL, Kind.PIPELINE, Kind.TILE}),
        pipeline_vocab=("off", "fg", "cg"),
        tile_supported=True,
        pipeline_ladder=("off", "cg", "fg"),
    ),
    "vitis": BackendProfile(
        name="vitis",
        supported_kinds=frozenset({Kind.PARALLEL, Kind.PIPELINE}),
        pipeline_vocab=("auto",),
        tile_supported=False,
        pipeline_ladder=("auto",),
    ),
    "stratus": BackendProfile(
        name="stratus",
        supported_kinds=frozenset(
            {Kind.PARALLEL, Kind.PIPELINE, Kind.ARRAY_PARTITION, Kind.ARRAY_TYPE}
        ),
        pipeline_vocab=("off", "hs", "ss"),
        tile_supported=False,
        pipeline_ladder=("ss", "off", "hs"),
    ),
}

# bare identifiers in guards that are value literals rather than parameter names
TOKENS = frozenset(
    {"off", "fg", "cg", "auto", "hs", "ss", "flatten"}
    | set(ARRAY_PARTITION_VOCAB)
    | set(ARRAY_TYPE_VOCAB)
)


# -- guards ---------------------------------------------------------------

_CMP = {
    ast.Eq: lambda a, b: a == b,
    ast.NotEq: lambda a, b: a != b,
    ast.Lt: lambda a, b: a < b,
    ast.LtE: lambda a, b: a <= b,
    ast.Gt: lambda a, b: a > b,
    ast.GtE: lambda a, b: a >= b,
}


@dataclass(frozen=True)
class _Ref:
    name: str


class Guard:
    """A boolean expression over parameter values.

    The grammar is Python's expression syntax restricted to ``and``, ``or``,
    ``not``, comparisons, integer literals, quoted strings, mode tokens and
    parameter names. Evaluation short-circuits.
    """

    def __init__(self, text: str, param_names):
        self.text = text
        try:
            tree = ast.parse(text.strip(), mode="eval")
        except SyntaxError as exc:
            raise SpaceError(f"cannot parse guard {text!r}: {exc.msg}") from None
        self.symbols: set[str] = set()
        self._root = self._compile(tree.body, frozenset(param_names))

    def _compile(self, node, names):
        if isinstance(node, ast.BoolOp):
            op = "and" if isinstance(node.op, ast.And) else "or"
            return (op, [self._compile(v, names) for v in node.values])
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.Not):
            return ("not", self._compile(node.operand, names))
        if isinstance(node, ast.Compare):
            ops = []
            for op in node.ops:
                if type(op) not in _CMP:
                    raise SpaceError(f"unsupported operator in guard {self.text!r}")
                ops.append(_CMP[type(op)])
            operands = [self._compile(node.left, names)]
            operands += [self._compile(c, names) for c in node.comparators]
            return ("cmp", ops, operands)
        if isinstance(node, ast.Name):
            if node.id in names:
                self.symbols.add(node.id)
                return _Ref(node.id)
            if node.id in TOKENS:
                return node.id
            raise UnknownGuardSymbol(
                f"guard {self.text!r} references unknown symbol {node.id!r}"
            )
        if isinstance(node, ast.Constant) and type(node.value) in (int, str, bool):
            return node.value
        raise SpaceError(f"unsupported syntax in guard {self.text!r}")

    def __call__(self, env: Mapping[str, Value]) -> bool:
        return bool(self._eval(self._root, env))

    def _eval(self, node, env):
        if isinstance(node, _Ref):
            return env[node.name]
        if not isinstance(node, tuple):
            return node
        tag = node[0]
        if tag == "and":
            return all(self._eval(v, env) for v in node[1])
        if tag == "or":
            return any(self._eval(v, env) for v in node[1])
        if tag == "not":
            return not self._eval(node[1], env)
        _, ops, operands = node
        left = self._eval(operands[0], env)
        for op, right_node in zip(ops, operands[1:]):
            right = self._eval(right_node, env)
            try:
                ok = op(left, right)
            except TypeError:
                # ordering an int against a mode token is never true
                ok = False
            if not ok:
                return False
            left = right
        return True

    def __repr__(self):
        return f"Guard({self.text!r})"


# -- core types -----------------------------------------------------------

@dataclass(frozen=True)
class ParamDef:
    name: str
    kind: Kind
    attach: str
    domain: tuple
    guard: Guard | None = field(default=None, compare=False)

    @property
    def guard_text(self) -> str | None:
        return self.guard.text if self.guard else None


@dataclass(frozen=True)
class DesignPoint:
    """An immutable parameter assignment, hashed by content."""

    items: tuple

    @classmethod
    def of(cls, assignment: Mapping[str, Value]) -> DesignPoint:
        return cls(tuple(sorted(assignment.items())))

    @property
    def assignment(self) -> dict:
        return dict(self.items)

    @cached_property
    def id(self) -> str:
        blob = json.dumps(self.assignment, sort_keys=True, separators=(",", ":"))
        return hashlib.sha1(blob.encode()).hexdigest()[:16]

    def __getitem__(self, name: str) -> Value:
        for key, value in self.items:
            if key == name:
                return value
        raise UnknownParam(name)

    def get(self, name, default=None):
        return dict(self.items).get(name, default)

    def with_value(self, name: str, value: Value) -> DesignPoint:
        assignment = self.assignment
        assignment[name] = value
        return DesignPoint.of(assignment)

    def diff(self, other: DesignPoint) -> list[str]:
        a, b = self.assignment, other.assignment
        return sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))

    def distance(self, other: DesignPoint) -> int:
        return len(self.diff(other))

    def __str__(self):
        return ", ".join(f"{k}={v}" for k, v in self.items)


@dataclass(frozen=True)
class DesignSpace:
    params: tuple
    template: str
    profile: BackendProfile
    kernel: object = None  # evaluator.KernelModel, when a surrogate model is attached
    name: str = "kernel"

    @cached_property
    def by_name(self) -> dict:
        return {p.name: p for p in self.params}

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def param(self, name: str) -> ParamDef:
        try:
            return self.by_name[name]
        except KeyError:
            raise UnknownParam(f"unknown parameter {name!r}") from None

    def default_of(self, name: str) -> Value:
        return self.profile.default_for(self.param(name).kind)


# -- construction ---------------------------------------------------------

def _mode_token(v) -> str:
    # YAML 1.1 reads a bare `off` as False
    return "off" if v is False else str(v)


def _coerce_domain(p_name: str, kind: Kind, values, profile: BackendProfile) -> tuple:
    if values is None or len(values) == 0:
        raise EmptyDomain(f"parameter {p_name!r} has an empty domain")
    out = []
    for v in values:
        if kind.is_factor:
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise SpaceError(f"{p_name}: factor values must be positive integers, got {v!r}")
        else:
            v = _mode_token(v)
            vocab = {
                Kind.PIPELINE: profile.pipeline_vocab,
                Kind.ARRAY_PARTITION: ARRAY_PARTITION_VOCAB,
                Kind.ARRAY_TYPE: ARRAY_TYPE_VOCAB,
            }[kind]
            if v not in vocab:
                raise SpaceError(
                    f"{p_name}: {v!r} is not a {kind.value} mode for {profile.name} "
                    f"(expected one of {', '.join(vocab)})"
                )
        if v in out:
            raise SpaceError(f"{p_name}: duplicate domain value {v!r}")
        out.append(v)
    default = profile.default_for(kind)
    if default not in out:
        raise SpaceError(f"{p_name}: domain must contain the conservative default {default!r}")
    return tuple(out)


def template_placeholders(template: str) -> list[str]:
    """Placeholder names in order of appearance; only ``#pragma ACCEL`` lines count."""
    names = []
    for lineno, line in enumerate(template.split("\n"), 1):
        found = PLACEHOLDER_RE.findall(line)
        if found and not line.lstrip().startswith("#pragma ACCEL"):
            raise SpaceError(f"line {lineno}: placeholder outside a '#pragma ACCEL' line")
        names.extend(found)
    return names


def build_space(doc: Mapping, template: str, kernel=None, name: str | None = None) -> DesignSpace:
    """Validate a parsed space document against its template and kernel model."""
    backend = str(doc.get("backend", "merlin")).lower()
    if backend not in PROFILES:
        raise SpaceError(f"unknown backend {backend!r}")
    profile = PROFILES[backend]
    template = template.replace("\r\n", "\n")

    raw = doc.get("params") or []
    names = [str(p["name"]) for p in raw]
    seen = set()
    for n in names:
        if n in seen:
            raise DuplicateParam(f"duplicate parameter name {n!r}")
        seen.add(n)

    params = []
    attach_seen = set()
    for p in raw:
        p_name = str(p["name"])
        try:
            kind = Kind(str(p["kind"]).upper())
        except ValueError:
            raise SpaceError(f"{p_name}: unknown kind {p['kind']!r}") from None
        if kind not in profile.supported_kinds:
            raise UnsupportedKindForBackend(
                f"{p_name}: {kind.value} is not tunable on the {profile.name} backend"
            )
        attach = str(p.get("attach", ""))
        if not attach:
            raise SpaceError(f"{p_name}: missing 'attach'")
        if (kind, attach) in attach_seen:
            raise SpaceError(f"{p_name}: second {kind.value} parameter on {attach!r}")
        attach_seen.add((kind, attach))
        if kernel is not None:
            known = kernel.arrays if kind.on_array else kernel.loops
            if attach not in known:
                what = "array" if kind.on_array else "loop"
                raise UnknownLoopAttachment(f"{p_name}: no {what} {attach!r} in kernel model")
        domain = _coerce_domain(p_name, kind, p.get("values"), profile)
        guard = Guard(str(p["guard"]), names) if p.get("guard") else None
        params.append(ParamDef(p_name, kind, attach, domain, guard))

    placeholders = template_placeholders(template)
    counts = {n: placeholders.count(n) for n in set(placeholders)}
    for n in names:
        if counts.get(n, 0) == 0:
            raise MissingPlaceholder(f"parameter {n!r} has no auto{{{n}}} placeholder")
        if counts[n] > 1:
            raise SpaceError(f"placeholder auto{{{n}}} appears {counts[n]} times")
    for n in counts:
        if n not in seen:
            raise MissingPlaceholder(f"placeholder auto{{{n}}} has no parameter definition")

    space = DesignSpace(tuple(params), template, profile, kernel, name or doc.get("name", "kernel"))
    default_point(space)  # raises DefaultViolatesGuard on author error
    return space


def load_space(space_file, kernel_file, kernel_model=None) -> DesignSpace:
    """Load a space document and its annotated kernel source.

    If ``kernel_model`` is not given and the document names one under
    ``kernel_model``, it is loaded relative to the space file.
    """
    from .evaluator import load_kernel_model

    space_file = Path(space_file)
    doc = yaml.safe_load(space_file.read_text(encoding="utf-8")) or {}
    template = Path(kernel_file).read_text(encoding="utf-8")
    if kernel_model is None and doc.get("kernel_model"):
        kernel_model = space_file.parent / doc["kernel_model"]
    kernel = None
    if kernel_model is not None:
        kernel = kernel_model if hasattr(kernel_model, "loops") else load_kernel_model(kernel_model)
    return build_space(doc, template, kernel, name=doc.get("name", space_file.stem))


# -- operations -----------------------------------------------------------

def _env(space: DesignSpace, assignment: Mapping[str, Value]) -> dict:
    env = {p.name: space.profile.default_for(p.kind) for p in space.params}
    env.update(assignment)
    return env


def guards_hold(space: DesignSpace, assignment: Mapping[str, Value]) -> bool:
    env = _env(space, assignment)
    return all(p.guard is None or p.guard(env) for p in space.params)


def default_point(space: DesignSpace) -> DesignPoint:
    """The most conservative assignment: no parallelism, no pipelining, no tiling."""
    assignment = {p.name: space.profile.default_for(p.kind) for p in space.params}
    for p in space.params:
        if p.guard is not None and not p.guard(assignment):
            raise DefaultViolatesGuard(
                f"default assignment violates the guard of {p.name!r}: {p.guard.text}"
            )
    return DesignPoint.of(assignment)


def check_point(space: DesignSpace, point: DesignPoint) -> None:
    """Raise InvalidPoint unless ``point`` is total, in-domain and guard-satisfying."""
    a = point.assignment
    extra = set(a) - set(space.by_name)
    if extra:
        raise InvalidPoint(f"unknown parameters: {', '.join(sorted(extra))}")
    for p in space.params:
        if p.name not in a:
            raise InvalidPoint(f"missing value for {p.name!r}")
        if a[p.name] not in p.domain:
            raise InvalidPoint(f"{p.name}={a[p.name]!r} is outside its domain {list(p.domain)}")
    for p in space.params:
        if p.guard is not None and not p.guard(a):
            raise InvalidPoint(f"{point} violates the guard of {p.name}: {p.guard.text}")


def is_valid(space: DesignSpace, point: DesignPoint) -> bool:
    try:
        check_point(space, point)
    except InvalidPoint:
        return False
    return True


def legal_values(space: DesignSpace, point: DesignPoint, param: str) -> list:
    """Domain values of ``param`` that keep every guard satisfied, in declared order."""
    p = space.param(param)
    env = _env(space, point.assignment)
    out = []
    for v in p.domain:
        env[param] = v
        if all(q.guard is None or q.guard(env) for q in space.params):
            out.append(v)
    return out


def render(space: DesignSpace, point: DesignPoint) -> str:
    check_point(space, point)
    a = point.assignment
    return PLACEHOLDER_RE.sub(lambda m: str(a[m.group(1)]), space.template)


def parse_rendered(space: DesignSpace, source: str) -> DesignPoint:
    """Recover the assignment from a source produced by :func:`render`."""
    pattern, pos = [], 0
    for m in PLACEHOLDER_RE.finditer(space.template):
        pattern.append(re.escape(space.template[pos:m.start()]))
        pattern.append(f"(?P<{m.group(1)}>[^\\s]+?)")
        pos = m.end()
    pattern.append(re.escape(space.template[pos:]))
    m = re.fullmatch("".join(pattern), source.replace("\r\n", "\n"), flags=re.S)
    if m is None:
        raise InvalidPoint("source does not match the kernel template")
    assignment = {}
    for p in space.params:
        text = m.group(p.name)
        match = [v for v in p.domain if str(v) == text]
        if not match:
            raise InvalidPoint(f"{p.name}: {text!r} is not in its domain")
        assignment[p.name] = match[0]
    point = DesignPoint.of(assignment)
    check_point(space, point)
    return point


def space_size(space: DesignSpace) -> int:
    """Product of domain sizes. Guards are ignored, so this is an upper bound."""
    return math.prod(len(p.domain) for p in space.params)


def enumerate_points(space: DesignSpace) -> Iterator[DesignPoint]:
    """Every guard-satisfying point, in lexicographic domain order."""
    names = space.names
    for combo in itertools.product(*(p.domain for p in space.params)):
        a = dict(zip(names, combo))
        if guards_hold(space, a):
            yield DesignPoint.of(a)


def load_point(path, space: DesignSpace | None = None) -> DesignPoint:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(doc, dict):
        raise InvalidPoint(f"{path}: expected a mapping of parameter values")
    point = DesignPoint.of({str(k): (_mode_token(v) if isinstance(v, bool) else v)
                            for k, v in doc.items()})
    if space is not None:
        check_point(space, point)
    return point
