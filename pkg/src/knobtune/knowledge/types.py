from __future__ import annotations

from dataclasses import dataclass, field

SOURCE_PRIORITY = {"manual": 0, "web": 1, "llm": 2}
ATTRIBUTES = ("suggested_values", "min_value", "max_value", "special_value")
TASK_KINDS = ("range_and_suggested", "special_value")


@dataclass(frozen=True)
class KnowledgeDoc:
    knob_name: str
    source: str
    text: str
    ref: str = ""

    def __post_init__(self):
        if self.source not in SOURCE_PRIORITY:
            raise ValueError(f"unknown source {self.source!r}")
        if not self.text.strip():
            raise ValueError(f"empty knowledge text for {self.knob_name}")

    @property
    def priority(self) -> int:
        return SOURCE_PRIORITY[self.source]


@dataclass
class TuningLakeEntry:
    knob_name: str
    summary: str
    provenance: list[str] = field(default_factory=list)
    consistency_attempts: int = 1
    verified: bool = True

    def to_sidecar(self) -> dict:
        return {
            "knob_name": self.knob_name,
            "provenance": list(self.provenance),
            "consistency_attempts": self.consistency_attempts,
            "verified": self.verified,
        }


@dataclass
class StructuredKnob:
    knob_name: str
    suggested_values: list = field(default_factory=list)
    min_value: object = None
    max_value: object = None
    # {"value": ..., "meaning": str} or None
    special_value: dict | None = None

    def to_json_dict(self) -> dict:
        return {
            "name": self.knob_name,
            "suggested_values": list(self.suggested_values),
            "min_value": self.min_value,
            "max_value": self.max_value,
            "special_value": None if self.special_value is None else dict(self.special_value),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "StructuredKnob":
        return cls(
            knob_name=d["name"],
            suggested_values=list(d.get("suggested_values") or []),
            min_value=d.get("min_value"),
            max_value=d.get("max_value"),
            special_value=d.get("special_value"),
        )

    @property
    def is_empty(self) -> bool:
        return (
            not self.suggested_values
            and self.min_value is None
            and self.max_value is None
            and self.special_value is None
        )


@dataclass(frozen=True)
class PromptTask:
    knob_name: str
    task_kind: str
    knowledge_text: str
    examples: tuple = ()

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.task_kind!r}")


@dataclass(frozen=True)
class Verdict:
    keep: bool
    reason: str = ""
    low_confidence: bool = False
    by_rule: bool = False
