"""Per-job objectives used by the provisioner."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

GOAL_KINDS = ("deadline", "best_effort", "cost_cap")


@dataclass(frozen=True)
class GoalSpec:
    kind: str = "best_effort"
    value: Optional[float] = None

    def __post_init__(self):
        if self.kind not in GOAL_KINDS:
            raise ValueError(f"unknown goal {self.kind!r}; expected one of {GOAL_KINDS}")
        if self.kind == "best_effort":
            if self.value is not None:
                raise ValueError("best_effort takes no value")
        elif self.value is None or not self.value > 0:
            raise ValueError(f"{self.kind} needs a positive value")

    @classmethod
    def deadline(cls, seconds):
        return cls("deadline", float(seconds))

    @classmethod
    def best_effort(cls):
        return cls("best_effort")

    @classmethod
    def cost_cap(cls, amount):
        return cls("cost_cap", float(amount))

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return cls()
        if isinstance(d, GoalSpec):
            return d
        return cls(d.get("kind", "best_effort"), d.get("value"))
