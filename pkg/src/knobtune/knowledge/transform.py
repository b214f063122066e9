"""Prompt-ensemble transformation of lake text into structured knowledge."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from pathlib import Path

import jsonschema
import numpy as np

from ..catalog import KnobSpec
from ..llm import LLMClient, LLMError, LLMRequest, parse_json_reply
from ..quantity import QuantityError, SystemProfile, resolve_quantity
from . import prompts
from .types import PromptTask, StructuredKnob, TuningLakeEntry

log = logging.getLogger(__name__)

DEFAULT_ENSEMBLE_SIZE = 5
DEFAULT_EXAMPLES_PER_PROMPT = 3

_TASK_KEYS = {
    "range_and_suggested": ("suggested_values", "min_value", "max_value"),
    "special_value": ("special_value",),
}
_TARGETS = {
    "range_and_suggested": (
        "the suggested values (a list of recommended settings), the minimum value and the "
        "maximum value recommended for the knob"
    ),
    "special_value": (
        "the special value: a single value whose behaviour differs from the rest of the "
        "range (for example 0 meaning the feature is disabled), together with its meaning"
    ),
}

_VALUE = {"type": ["number", "string", "boolean"]}
STRUCTURED_KNOB_SCHEMA = {
    "type": "object",
    "required": ["name", "suggested_values", "min_value", "max_value", "special_value"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "suggested_values": {"type": "array", "items": _VALUE},
        "min_value": {"type": ["number", "string", "null"]},
        "max_value": {"type": ["number", "string", "null"]},
        "special_value": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["value", "meaning"],
                    "additionalProperties": False,
                    "properties": {"value": _VALUE, "meaning": {"type": "string"}},
                },
            ]
        },
    },
}


def stable_seed(*parts) -> int:
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(h[:8], "little")


def sample_examples(pool: list, n: int, seed: int) -> list:
    """Draw ``n`` distinct pool entries uniformly without replacement."""
    if n > len(pool):
        raise ValueError(f"cannot sample {n} examples from a pool of {len(pool)}")
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in idx]


def canonical(value):
    """Normalize a value for voting: integral floats become ints, strings are stripped."""
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, float):
        if math.isfinite(value) and value == int(value):
            return int(value)
        return value
    if isinstance(value, str):
        return value.strip()
    if isinstance(value, list):
        return [canonical(v) for v in value]
    if isinstance(value, dict):
        return {str(k): canonical(v) for k, v in value.items()}
    return value


def canonical_json(value) -> str:
    return json.dumps(canonical(value), sort_keys=True, separators=(",", ":"))


def _absent(value) -> bool:
    return value is None or value == [] or value == ""


def majority_vote(candidates: list[dict]) -> dict:
    """Element-wise vote: per attribute, the most frequent non-absent value.

    Ties go to the value whose canonical JSON sorts first.
    """
    if not candidates:
        raise ValueError("majority_vote needs at least one candidate")
    keys = sorted({k for c in candidates for k in c})
    out = {}
    for key in keys:
        counts: Counter[str] = Counter()
        for c in candidates:
            v = c.get(key)
            if not _absent(v):
                counts[canonical_json(v)] += 1
        if not counts:
            continue
        top = max(counts.values())
        winner = min(s for s, n in counts.items() if n == top)
        out[key] = json.loads(winner)
    return out


def _format_examples(examples, task_kind: str) -> str:
    keys = _TASK_KEYS[task_kind]
    blocks = []
    for ex in examples:
        answer = {k: ex["answer"].get(k) for k in keys}
        blocks.append(
            f"Knob: {ex['knob']}\nKnowledge: {ex['knowledge']}\nJSON: {json.dumps(answer, sort_keys=True)}\n"
        )
    return "Examples:\n" + "\n".join(blocks) if blocks else ""


def build_prompt(task: PromptTask) -> str:
    keys = _TASK_KEYS[task.task_kind]
    return prompts.render(
        "extract",
        target_values=_TARGETS[task.task_kind],
        keys=", ".join(keys),
        examples=_format_examples(task.examples, task.task_kind),
        knob=task.knob_name,
        knowledge=task.knowledge_text,
    )


def _resolve(value, spec: KnobSpec, profile: SystemProfile | None):
    """Number for checking, or None when it cannot be resolved without a profile."""
    if isinstance(value, bool):
        raise QuantityError("boolean for numeric knob")
    return resolve_quantity(value, profile, spec.unit)


def _coerce_choice(value, spec: KnobSpec):
    if spec.kind == "boolean":
        if isinstance(value, bool):
            return value
        t = str(value).strip().lower()
        if t in ("on", "true", "yes", "1"):
            return True
        if t in ("off", "false", "no", "0"):
            return False
        raise ValueError(f"{value!r} is not boolean")
    s = str(value).strip()
    for c in spec.categories:
        if c.lower() == s.lower():
            return c
    raise ValueError(f"{value!r} not in categories of {spec.name}")


def validate_structured(sk: StructuredKnob, spec: KnobSpec, profile: SystemProfile | None = None) -> StructuredKnob:
    """Drop attributes that violate the structured-knowledge invariants.

    Expressions that need a profile which is not available are kept as-is.
    """
    out = StructuredKnob(sk.knob_name)
    if not spec.is_numeric:
        for v in sk.suggested_values:
            try:
                c = _coerce_choice(v, spec)
            except ValueError:
                log.warning("%s: dropping suggested value %r", spec.name, v)
                continue
            if c not in out.suggested_values:
                out.suggested_values.append(c)
        if sk.special_value is not None:
            try:
                out.special_value = {
                    "value": _coerce_choice(sk.special_value.get("value"), spec),
                    "meaning": str(sk.special_value.get("meaning", "")),
                }
            except ValueError:
                log.warning("%s: dropping special value %r", spec.name, sk.special_value)
        return out

    def number(v):
        try:
            x = _resolve(v, spec, profile)
        except QuantityError as exc:
            if profile is None and isinstance(v, str) and "%" in v:
                return "deferred"
            raise ValueError(str(exc)) from None
        if not math.isfinite(x):
            raise ValueError("non-finite")
        return x

    def within_vendor(x) -> bool:
        return x == "deferred" or spec.vendor_min <= x <= spec.vendor_max

    bounds = {}
    for attr in ("min_value", "max_value"):
        v = getattr(sk, attr)
        if v is None:
            continue
        try:
            x = number(v)
        except ValueError:
            log.warning("%s: dropping %s %r", spec.name, attr, v)
            continue
        if not within_vendor(x):
            log.warning("%s: %s %r outside vendor bounds", spec.name, attr, v)
            continue
        bounds[attr] = (v, x)
    lo = bounds.get("min_value")
    hi = bounds.get("max_value")
    if lo and hi and lo[1] != "deferred" and hi[1] != "deferred" and lo[1] > hi[1]:
        log.warning("%s: inverted knowledge bounds %r > %r dropped", spec.name, lo[0], hi[0])
        lo = hi = None
    out.min_value = lo[0] if lo else None
    out.max_value = hi[0] if hi else None

    for v in sk.suggested_values:
        try:
            x = number(v)
        except ValueError:
            log.warning("%s: dropping suggested value %r", spec.name, v)
            continue
        if not within_vendor(x):
            continue
        if x != "deferred":
            if lo and lo[1] != "deferred" and x < lo[1]:
                continue
            if hi and hi[1] != "deferred" and x > hi[1]:
                continue
        if canonical(v) not in [canonical(s) for s in out.suggested_values]:
            out.suggested_values.append(v)

    if sk.special_value is not None:
        sv = sk.special_value.get("value")
        try:
            x = number(sv)
            if x == "deferred" or not within_vendor(x):
                raise ValueError("special value must be an absolute in-range number")
            out.special_value = {"value": canonical(sv) if not isinstance(sv, str) else x,
                                 "meaning": str(sk.special_value.get("meaning", ""))}
        except ValueError:
            log.warning("%s: dropping special value %r", spec.name, sk.special_value)
    return out


def _candidate(reply: dict, task_kind: str) -> dict:
    out = {}
    for key in _TASK_KEYS[task_kind]:
        if key not in reply:
            continue
        v = reply[key]
        if key == "suggested_values":
            if v is None:
                continue
            if not isinstance(v, list):
                v = [v]
            v = [x for x in v if isinstance(x, (int, float, str, bool)) and x is not None]
        elif key == "special_value":
            if isinstance(v, dict):
                if v.get("value") is None:
                    continue
                v = {"value": v["value"], "meaning": str(v.get("meaning", ""))}
            elif isinstance(v, (int, float, str)) and not isinstance(v, bool):
                v = {"value": v, "meaning": ""}
            else:
                continue
        elif not isinstance(v, (int, float, str)) or isinstance(v, bool):
            continue
        out[key] = canonical(v)
    return out


def transform(
    entry: TuningLakeEntry | None,
    spec: KnobSpec,
    llm: LLMClient,
    ensemble_size: int = DEFAULT_ENSEMBLE_SIZE,
    seed: int = 0,
    pool: list | None = None,
    n_examples: int = DEFAULT_EXAMPLES_PER_PROMPT,
    profile: SystemProfile | None = None,
) -> StructuredKnob:
    """Extract structured attributes from one lake entry by prompt ensembling.

    ``ensemble_size`` prompts are issued per subtask, each with a different
    seeded draw of few-shot examples; candidates are merged by
    :func:`majority_vote` and then validated against ``spec``.
    """
    if ensemble_size < 1:
        raise ValueError("ensemble_size must be >= 1")
    if entry is None or not entry.summary.strip():
        return StructuredKnob(spec.name)
    if pool is None:
        pool = prompts.load_example_pool()
    n_examples = min(n_examples, len(pool))
    candidates: list[dict] = []
    for task_kind in ("range_and_suggested", "special_value"):
        for i in range(ensemble_size):
            examples = sample_examples(pool, n_examples, stable_seed(seed, spec.name, task_kind, i))
            task = PromptTask(spec.name, task_kind, entry.summary, tuple(examples))
            req = LLMRequest(task_kind, build_prompt(task), knob=spec.name, variant=i)
            try:
                reply = parse_json_reply(llm.complete(req))
            except LLMError as exc:
                log.warning("extraction %s/%d failed for %s: %s", task_kind, i, spec.name, exc)
                continue
            except ValueError:
                log.warning("malformed JSON from extraction %s/%d for %s", task_kind, i, spec.name)
                continue
            if isinstance(reply, dict):
                candidates.append(_candidate(reply, task_kind))
    if not candidates:
        return StructuredKnob(spec.name)
    voted = majority_vote(candidates)
    raw = StructuredKnob(
        spec.name,
        suggested_values=list(voted.get("suggested_values") or []),
        min_value=voted.get("min_value"),
        max_value=voted.get("max_value"),
        special_value=voted.get("special_value"),
    )
    return validate_structured(raw, spec, profile)


def validate_schema(doc: dict) -> None:
    jsonschema.validate(doc, STRUCTURED_KNOB_SCHEMA)


def write_structured(root: str | Path, sk: StructuredKnob) -> Path:
    doc = sk.to_json_dict()
    validate_schema(doc)
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    path = root / f"{sk.knob_name}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_structured(root: str | Path) -> dict[str, StructuredKnob]:
    out = {}
    for f in sorted(Path(root).glob("*.json")):
        doc = json.loads(f.read_text(encoding="utf-8"))
        validate_schema(doc)
        out[doc["name"]] = StructuredKnob.from_json_dict(doc)
    return out
