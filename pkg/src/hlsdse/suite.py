"""The shipped synthetic kernels and an exhaustive-enumeration oracle."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .evaluator import EvalResult
from .space import DesignPoint, DesignSpace, enumerate_points

SUITE = ("single", "gemm", "trmm", "stencil", "fir")
DEMO = "gemm"
TRAP = "trmm"


def kernel_dir(name: str) -> Path:
    if name not in SUITE:
        raise KeyError(f"no shipped kernel {name!r}; choose from {', '.join(SUITE)}")
    return Path(str(resources.files("hlsdse") / "data" / name))


def config_path(name: str) -> Path:
    return kernel_dir(name) / "config.yaml"


@dataclass(frozen=True)
class Oracle:
    point: DesignPoint | None
    result: EvalResult | None
    size: int
    feasible: int

    @property
    def latency(self) -> int | None:
        return self.result.latency if self.result else None


def oracle(space: DesignSpace, evaluator) -> Oracle:
    """Best feasible design by full enumeration; ties go to the first point enumerated."""
    best_point = best_result = None
    size = feasible = 0
    for point in enumerate_points(space):
        size += 1
        r = evaluator.evaluate(space, point)
        if not r.feasible:
            continue
        feasible += 1
        if best_result is None or r.latency < best_result.latency:
            best_point, best_result = point, r
    return Oracle(best_point, best_result, size, feasible)
