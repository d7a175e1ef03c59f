"""Messages passed between agents within one exploration iteration."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum


class Orientation(str, Enum):
    PERFORMANCE = "Performance"
    RESOURCE = "Resource"


class Judgment(str, Enum):
    BETTER = "Better"
    WORSE = "Worse"
    NEUTRAL = "Neutral"


class Role(str, Enum):
    ROUTER = "router"
    SPECIALIST = "specialist"
    ARBITRATOR = "arbitrator"
    CRITIC = "critic"


@dataclass(frozen=True)
class Task:
    node_id: int
    orientation: Orientation
    rationale: str = ""


@dataclass(frozen=True)
class Proposal:
    node_id: int
    param: str
    old_value: object
    new_value: object
    prediction: str = ""
    specialist_id: str = ""

    @property
    def key(self):
        return (self.node_id, self.param, self.new_value)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Verdict:
    judgment: Judgment
    prune: bool
    message: str = ""

    def to_dict(self) -> dict:
        return {"judgment": self.judgment.value, "prune": self.prune, "message": self.message}

    @classmethod
    def from_dict(cls, d) -> Verdict:
        return cls(Judgment(d["judgment"]), bool(d["prune"]), d.get("message", ""))


@dataclass(frozen=True)
class TokenUsage:
    role: Role
    input_tokens: int
    output_tokens: int

    @property
    def total(self) -> int:
        return self.input_tokens + self.output_tokens
