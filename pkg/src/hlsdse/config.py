"""Run configuration: one YAML document with a section per module.

Paths are resolved relative to the config file. Command-line flags override
values through :func:`load_config`'s ``overrides`` argument. The API key is
never read from the config; only the name of its environment variable is.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .agents import AgentConfig, Agents, PromptBook
from .baseline import DEFAULT_ORDER, greedy_explore
from .errors import ConfigError
from .evaluator import (
    AdapterEvaluator,
    ResourceBudget,
    SurrogateConstants,
    SurrogateEvaluator,
)
from .explorer import Budget, explore
from .history import HistoryLog
from .llm import DEFAULT_API_KEY_ENV, CannedTransport, HttpTransport, ReasonerClient, RecordingTransport
from .messages import Role
from .space import DesignSpace, Kind, load_space

EXPLORERS = ("agentic", "greedy")
BACKENDS = ("surrogate", "adapter")


@dataclass
class LLMConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4o"
    temperature: float = 0.0
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 120.0
    canned_dir: str | None = None
    record_dir: str | None = None


@dataclass
class AdapterConfig:
    command: str = ""
    report: str = "report.txt"
    log: str = "log.txt"
    workdir: str | None = None
    timeout: float | None = None


@dataclass
class RunConfig:
    base_dir: Path
    space_file: Path
    source_file: Path
    model_file: Path | None = None
    explorer: str = "agentic"
    backend: str = "surrogate"
    seed: int = 0
    max_evals: int = 40
    max_wall_seconds: float | None = None
    parallelism: int = 1
    wall_clock_log: bool = False
    resources: ResourceBudget = field(default_factory=ResourceBudget)
    surrogate: SurrogateConstants = field(default_factory=SurrogateConstants)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    agents: AgentConfig = field(default_factory=AgentConfig)
    llm: LLMConfig = field(default_factory=LLMConfig)
    prompt_dir: Path | None = None
    greedy_batch_size: int = 8
    greedy_order: tuple = DEFAULT_ORDER
    name: str = "kernel"

    @property
    def budget(self) -> Budget:
        return Budget(self.max_evals, self.max_wall_seconds)


def _section(doc, key) -> dict:
    value = doc.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"section {key!r} must be a mapping")
    return value


def _fill(cls, values: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {where}: {exc}") from None


def _check_keys(section: dict, allowed, where: str):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    _check_keys(doc, ("name", "kernel", "run", "evaluator", "agents", "greedy"), "config")
    base = path.parent
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    kernel = _section(doc, "kernel")
    _check_keys(kernel, ("space", "source", "model"), "kernel")
    for key in ("space", "source"):
        if not kernel.get(key):
            raise ConfigError(f"kernel.{key} is required")

    def resolve(p):
        return (base / p).resolve() if p is not None else None

    run = _section(doc, "run")
    _check_keys(run, ("explorer", "seed", "max_evals", "max_wall_seconds", "parallelism",
                      "wall_clock_log"), "run")
    ev = _section(doc, "evaluator")
    _check_keys(ev, ("backend", "resources", "surrogate", "adapter"), "evaluator")
    ag = dict(_section(doc, "agents"))
    llm = ag.pop("llm", None) or {}
    prompt_dir = ag.pop("prompt_dir", None)
    roles = ag.pop("roles", None)
    gr = _section(doc, "greedy")
    _check_keys(gr, ("batch_size", "order"), "greedy")

    agents = _fill(AgentConfig, ag, "agents")
    if roles:
        bad = set(roles) - {r.value for r in Role}
        if bad:
            raise ConfigError(f"unknown agent role(s): {', '.join(sorted(bad))}")
        for role, mode in roles.items():
            if mode not in ("scripted", "llm"):
                raise ConfigError(f"agents.roles.{role} must be 'scripted' or 'llm'")
        agents.roles.update(roles)

    cfg = RunConfig(
        base_dir=base,
        space_file=resolve(kernel["space"]),
        source_file=resolve(kernel["source"]),
        model_file=resolve(kernel.get("model")),
        explorer=overrides.get("explorer", run.get("explorer", "agentic")),
        backend=overrides.get("backend", ev.get("backend", "surrogate")),
        seed=int(overrides.get("seed", run.get("seed", 0))),
        max_evals=int(overrides.get("budget_evals", run.get("max_evals", 40))),
        max_wall_seconds=run.get("max_wall_seconds"),
        parallelism=int(run.get("parallelism", 1)),
        wall_clock_log=bool(run.get("wall_clock_log", False)),
        resources=_fill(ResourceBudget, _section(ev, "resources"), "evaluator.resources"),
        surrogate=_fill(SurrogateConstants, _section(ev, "surrogate"), "evaluator.surrogate"),
        adapter=_fill(AdapterConfig, _section(ev, "adapter"), "evaluator.adapter"),
        agents=agents,
        llm=_fill(LLMConfig, llm, "agents.llm"),
        prompt_dir=resolve(prompt_dir),
        greedy_batch_size=int(gr.get("batch_size", 8)),
        greedy_order=tuple(Kind(k) for k in gr.get("order", [k.value for k in DEFAULT_ORDER])),
        name=str(doc.get("name", path.stem)),
    )
    if cfg.explorer not in EXPLORERS:
        raise ConfigError(f"explorer must be one of {EXPLORERS}, got {cfg.explorer!r}")
    if cfg.backend not in BACKENDS:
        raise ConfigError(f"evaluator backend must be one of {BACKENDS}, got {cfg.backend!r}")
    if cfg.max_evals < 1:
        raise ConfigError("run.max_evals must be >= 1")
    if cfg.backend == "adapter" and not cfg.adapter.command:
        raise ConfigError("evaluator.adapter.command is required for the adapter backend")
    for label, p in (("space", cfg.space_file), ("source", cfg.source_file), ("model", cfg.model_file)):
        if p is not None and not p.exists():
            raise ConfigError(f"kernel {label} file not found: {p}")
    return cfg


# -- assembly -------------------------------------------------------------

def build_space(cfg: RunConfig) -> DesignSpace:
    return load_space(cfg.space_file, cfg.source_file, cfg.model_file)


def build_evaluator(cfg: RunConfig, space: DesignSpace):
    if cfg.backend == "surrogate":
        if space.kernel is None:
            raise ConfigError("the surrogate backend needs a kernel model (kernel.model)")
        return SurrogateEvaluator(space.kernel, cfg.resources, cfg.surrogate)
    a = cfg.adapter
    workdir = (cfg.base_dir / a.workdir) if a.workdir else None
    return AdapterEvaluator(a.command, a.report, a.log, workdir, a.timeout)


def build_client(cfg: RunConfig) -> ReasonerClient | None:
    if all(cfg.agents.mode(r) == "scripted" for r in Role):
        return None
    c = cfg.llm
    if c.canned_dir:
        transport = CannedTransport(cfg.base_dir / c.canned_dir)
    else:
        transport = HttpTransport(c.endpoint, c.api_key_env, c.timeout)
    if c.record_dir:
        transport = RecordingTransport(transport, cfg.base_dir / c.record_dir)
    return ReasonerClient(transport, c.model, c.temperature, cfg.agents.retries)


def build_agents(cfg: RunConfig, space: DesignSpace, client=None) -> Agents:
    predictor = None
    if space.kernel is not None:
        predictor = SurrogateEvaluator(space.kernel, cfg.resources, cfg.surrogate)
    prompts = PromptBook(cfg.prompt_dir, backend=space.profile.name)
    client = client if client is not None else build_client(cfg)
    return Agents(space, cfg.agents, client, predictor, prompts=prompts)


def run(cfg: RunConfig, log_path=None, client=None):
    """Execute the configured explorer; returns an ExploreResult."""
    space = build_space(cfg)
    evaluator = build_evaluator(cfg, space)
    log = HistoryLog(log_path, wall_clock=cfg.wall_clock_log)
    try:
        if cfg.explorer == "greedy":
            return greedy_explore(space, evaluator, cfg.budget, log, cfg.greedy_batch_size,
                                  cfg.greedy_order, cfg.parallelism, cfg.seed)
        agents = build_agents(cfg, space, client)
        return explore(space, evaluator, agents, cfg.budget, log, cfg.parallelism, cfg.seed)
    finally:
        log.close()
