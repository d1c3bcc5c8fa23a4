"""Itemized pass/fail reports used by the condition checkers and audits."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass
class ConditionItem:
    name: str
    passed: bool
    worst: float = float("nan")
    detail: str = ""
    witness: Any = None


@dataclass
class ConditionReport:
    title: str
    items: list[ConditionItem] = field(default_factory=list)

    def add(self, name, passed, worst=float("nan"), detail="", witness=None):
        self.items.append(ConditionItem(name, bool(passed), float(worst), detail, witness))
        return self.items[-1]

    @property
    def passed(self) -> bool:
        return all(item.passed for item in self.items)

    def failures(self) -> list[ConditionItem]:
        return [item for item in self.items if not item.passed]

    def __getitem__(self, name) -> ConditionItem:
        for item in self.items:
            if item.name == name:
                return item
        raise KeyError(name)

    def table(self) -> str:
        width = max([len(item.name) for item in self.items] + [9])
        lines = [f"# {self.title}", f"{'condition':<{width}}  status  worst                 detail"]
        for item in self.items:
            status = "PASS" if item.passed else "FAIL"
            lines.append(f"{item.name:<{width}}  {status:<6}  {item.worst:<21.14g} {item.detail}")
        return "\n".join(lines)
