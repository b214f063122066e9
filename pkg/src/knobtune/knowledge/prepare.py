"""Knowledge preparation: collect, filter, summarize and consistency-check.

The output per knob is a :class:`TuningLakeEntry`.  Every LLM step has a
deterministic fallback so the pipeline degrades instead of failing when the
model is unavailable.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

from ..catalog import KnobSpec
from ..llm import LLMClient, LLMError, LLMRequest, parse_json_reply
from ..quantity import QuantityError, resolve_quantity
from . import prompts
from .claims import extract_claims, merge_by_priority, priority_violations, unsupported_claims
from .types import KnowledgeDoc, TuningLakeEntry, Verdict

log = logging.getLogger(__name__)

DEFAULT_MAX_ROUNDS = 3


class SourceAdapter(Protocol):
    name: str

    def fetch(self, knob_set: Iterable[str]) -> list[KnowledgeDoc]: ...


@dataclass
class FileDropAdapter:
    """Reads ``<root>/<knob>.txt`` (or every ``*.txt`` under ``<root>/<knob>/``)."""

    root: Path
    source: str = "manual"

    @property
    def name(self) -> str:
        return f"{self.source}:{self.root}"

    def fetch(self, knob_set):
        root = Path(self.root)
        if not root.is_dir():
            raise OSError(f"knowledge directory {root} does not exist")
        docs = []
        for knob in sorted(knob_set):
            files = []
            if (root / f"{knob}.txt").is_file():
                files.append(root / f"{knob}.txt")
            if (root / knob).is_dir():
                files.extend(sorted((root / knob).glob("*.txt")))
            for f in files:
                text = f.read_text(encoding="utf-8").strip()
                if text:
                    docs.append(KnowledgeDoc(knob, self.source, text, ref=f.name))
        return docs


@dataclass
class LLMSourceAdapter:
    """Asks the model itself for tuning advice, one prompt per knob."""

    llm: LLMClient
    dbms: str = "PostgreSQL"
    name: str = "llm"
    errors: dict[str, str] = field(default_factory=dict)

    def fetch(self, knob_set):
        docs = []
        for knob in sorted(knob_set):
            prompt = prompts.render("elicit", dbms=self.dbms, knob=knob)
            try:
                text = self.llm.complete(LLMRequest("elicit", prompt, knob=knob)).strip()
            except LLMError as exc:
                self.errors[knob] = str(exc)
                log.warning("LLM elicitation failed for %s: %s", knob, exc)
                continue
            if text:
                docs.append(KnowledgeDoc(knob, "llm", text, ref="llm"))
        return docs


def collect(adapters, knob_set, errors: dict | None = None) -> list[KnowledgeDoc]:
    """Gather documents from every adapter; a failing adapter does not stop the others."""
    docs: list[KnowledgeDoc] = []
    knob_set = set(knob_set)
    for adapter in adapters:
        try:
            docs.extend(d for d in adapter.fetch(knob_set) if d.knob_name in knob_set)
        except (OSError, ValueError, LLMError) as exc:
            log.warning("adapter %s failed: %s", adapter.name, exc)
            if errors is not None:
                errors[adapter.name] = str(exc)
    return docs


def system_view_row(spec: KnobSpec) -> str:
    fields = {"name": spec.name, "vartype": spec.kind, "unit": spec.native_unit or spec.unit}
    if spec.is_numeric:
        fields.update(min_val=spec.vendor_min, max_val=spec.vendor_max, unit_note=f"canonical unit {spec.unit}")
    if spec.kind == "categorical":
        fields["enumvals"] = list(spec.categories)
    fields["boot_val"] = spec.default_value
    return json.dumps(fields, sort_keys=True, default=str)


_FILTER_SHOTS = (
    'Advice: "set it to 2.5" for an integer knob with range [0, 10] -> {"conflict": true, "reason": "integer knob cannot take 2.5"}\n'
    'Advice: "use 64MB" for a memory knob with range [1MB, 2TB] -> {"conflict": false, "reason": "within range"}\n'
)


def rule_check(doc: KnowledgeDoc, spec: KnobSpec) -> str | None:
    """Deterministic checks against the system view; returns a discard reason or None."""
    if not spec.is_numeric:
        return None
    for slot, value in sorted(extract_claims(doc.text)):
        if "%" in value:
            continue
        try:
            number = resolve_quantity(value, None, spec.unit)
        except QuantityError:
            continue
        unitless = value.replace(".", "", 1).isdigit()
        if unitless and spec.unit != "none":
            # bare numbers on unit-bearing knobs are ambiguous
            continue
        if spec.kind == "integer" and unitless and float(number) != int(float(number)):
            return f"type mismatch: {value} for integer knob"
        if number < spec.vendor_min or number > spec.vendor_max:
            return f"bound violation: {slot} {value} outside [{spec.vendor_min}, {spec.vendor_max}]"
    return None


def filter_noise(doc: KnowledgeDoc, spec: KnobSpec, llm: LLMClient | None) -> Verdict:
    reason = rule_check(doc, spec)
    if reason:
        return Verdict(keep=False, reason=reason, by_rule=True)
    if llm is None:
        return Verdict(keep=True, reason="rule checks only", low_confidence=True)
    prompt = prompts.render(
        "filter", system_view=system_view_row(spec), examples=_FILTER_SHOTS, knowledge=doc.text
    )
    try:
        reply = parse_json_reply(llm.complete(LLMRequest("filter", prompt, knob=doc.knob_name)))
        conflict = bool(reply["conflict"])
        why = str(reply.get("reason", ""))
    except (LLMError, ValueError, KeyError, TypeError) as exc:
        log.warning("noise classification unavailable for %s: %s", doc.knob_name, exc)
        return Verdict(keep=True, reason="rule checks only", low_confidence=True)
    return Verdict(keep=not conflict, reason=why)


def _format_sources(docs) -> str:
    return "\n".join(f"[priority {d.priority}, {d.source}] {d.text}" for d in docs)


def summarize(docs: list[KnowledgeDoc], llm: LLMClient | None, knob: str | None = None) -> str | None:
    """Merge legal documents for one knob; ``None`` means the knob has no knowledge."""
    if not docs:
        return None
    docs = sorted(docs, key=lambda d: d.priority)
    texts = {d.text.strip() for d in docs}
    if len(texts) == 1:
        return docs[0].text.strip()
    if llm is not None:
        prompt = prompts.render("summarize", knob=knob or docs[0].knob_name, sources=_format_sources(docs))
        try:
            text = llm.complete(LLMRequest("summarize", prompt, knob=knob or docs[0].knob_name)).strip()
        except LLMError as exc:
            log.warning("summary via LLM failed: %s", exc)
            text = ""
        if text and not priority_violations(text, docs):
            return text
        if text:
            log.warning("LLM summary kept outranked content; using priority merge")
    return merge_by_priority(docs)


def _check(summary: str, docs, llm) -> tuple[bool, str]:
    if any(summary.strip() == d.text.strip() for d in docs) and len({d.text for d in docs}) == 1:
        return True, ""
    if llm is not None:
        prompt = prompts.render("check", sources=_format_sources(docs), summary=summary)
        try:
            reply = parse_json_reply(llm.complete(LLMRequest("check_consistency", prompt, knob=docs[0].knob_name)))
            return bool(reply["consistent"]), str(reply.get("feedback", ""))
        except (LLMError, ValueError, KeyError, TypeError) as exc:
            log.warning("consistency check via LLM failed: %s", exc)
    bad = unsupported_claims(summary, docs)
    return (not bad), "; ".join(f"unsupported {slot} {value}" for slot, value in bad)


def _revise(summary: str, docs, feedback: str, llm) -> str:
    if llm is not None:
        prompt = prompts.render("revise", feedback=feedback, sources=_format_sources(docs), summary=summary)
        try:
            text = llm.complete(LLMRequest("revise_summary", prompt, knob=docs[0].knob_name)).strip()
            if text.startswith("{"):
                text = str(parse_json_reply(text).get("summary", "")).strip()
            if text:
                return text
        except (LLMError, ValueError, AttributeError) as exc:
            log.warning("summary revision via LLM failed: %s", exc)
    return merge_by_priority(docs)


def consistency_check(
    summary: str, source_docs: list[KnowledgeDoc], llm: LLMClient | None, max_rounds: int = DEFAULT_MAX_ROUNDS
) -> TuningLakeEntry:
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    if not source_docs:
        raise ValueError("consistency check needs at least one source document")
    knob = source_docs[0].knob_name
    provenance = [f"{d.source}:{d.ref}" if d.ref else d.source for d in source_docs]
    for attempt in range(1, max_rounds + 1):
        ok, feedback = _check(summary, source_docs, llm)
        if ok:
            return TuningLakeEntry(knob, summary, provenance, attempt, verified=True)
        if attempt < max_rounds:
            summary = _revise(summary, source_docs, feedback, llm)
    log.warning("summary for %s still inconsistent after %d rounds", knob, max_rounds)
    return TuningLakeEntry(knob, summary, provenance, max_rounds, verified=False)


@dataclass
class KnobPreparation:
    knob_name: str
    entry: TuningLakeEntry | None
    discarded: list[tuple[KnowledgeDoc, Verdict]] = field(default_factory=list)
    kept: list[KnowledgeDoc] = field(default_factory=list)


def prepare_knob(
    knob: str, docs: list[KnowledgeDoc], spec: KnobSpec, llm: LLMClient | None, max_rounds: int = DEFAULT_MAX_ROUNDS
) -> KnobPreparation:
    result = KnobPreparation(knob, None)
    for doc in docs:
        verdict = filter_noise(doc, spec, llm)
        if verdict.keep:
            result.kept.append(doc)
        else:
            result.discarded.append((doc, verdict))
            log.info("discarded %s guidance for %s: %s", doc.source, knob, verdict.reason)
    summary = summarize(result.kept, llm, knob)
    if summary is None:
        return result
    result.entry = consistency_check(summary, sorted(result.kept, key=lambda d: d.priority), llm, max_rounds)
    return result


def write_lake_entry(root: str | Path, dbms: str, entry: TuningLakeEntry) -> Path:
    d = Path(root) / dbms
    d.mkdir(parents=True, exist_ok=True)
    path = d / f"{entry.knob_name}.txt"
    path.write_text(entry.summary.strip() + "\n", encoding="utf-8")
    (d / f"{entry.knob_name}.json").write_text(
        json.dumps(entry.to_sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def read_lake(root: str | Path, dbms: str) -> dict[str, TuningLakeEntry]:
    d = Path(root) / dbms
    lake = {}
    if not d.is_dir():
        return lake
    for f in sorted(d.glob("*.txt")):
        side = f.with_suffix(".json")
        meta = json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}
        lake[f.stem] = TuningLakeEntry(
            knob_name=f.stem,
            summary=f.read_text(encoding="utf-8").strip(),
            provenance=meta.get("provenance", []),
            consistency_attempts=meta.get("consistency_attempts", 1),
            verified=meta.get("verified", True),
        )
    return lake
