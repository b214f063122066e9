"""Target knob selection at system, workload, query and dependency level.

Every LLM answer is validated against the configurable set; names outside it
are dropped and logged.  Scripted fixtures are keyed by task plus a subject:
the DBMS id for system level, ``"<kind>/<objective>"`` for workload level,
``"q<i>"`` for the i-th query and ``None`` for dependency and ranking.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .harness.base import HarnessError, WorkloadSpec
from .knowledge.prompts import render
from .knowledge.types import TuningLakeEntry
from .llm import LLMClient, LLMError, LLMRequest, parse_json_reply

log = logging.getLogger(__name__)

DEFAULT_PLAN_TOKENS = 2000
LEVELS = ("system", "workload", "query", "dependency")


class SelectionError(ValueError):
    pass


@dataclass
class SelectionReport:
    system_set: set[str] = field(default_factory=set)
    workload_set: set[str] = field(default_factory=set)
    query_set: set[str] = field(default_factory=set)
    dependency_added: set[str] = field(default_factory=set)
    final_set: set[str] = field(default_factory=set)
    rationale: dict[str, str] = field(default_factory=dict)
    ranking: list[str] = field(default_factory=list)
    ranking_source: str = "llm"
    fallback_used: bool = False
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "system_set": sorted(self.system_set),
            "workload_set": sorted(self.workload_set),
            "query_set": sorted(self.query_set),
            "dependency_added": sorted(self.dependency_added),
            "final_set": sorted(self.final_set),
            "rationale": dict(sorted(self.rationale.items())),
            "ranking": list(self.ranking),
            "ranking_source": self.ranking_source,
            "fallback_used": self.fallback_used,
            "failures": list(self.failures),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "SelectionReport":
        return cls(
            set(d.get("system_set", ())), set(d.get("workload_set", ())), set(d.get("query_set", ())),
            set(d.get("dependency_added", ())), set(d.get("final_set", ())), dict(d.get("rationale", {})),
            list(d.get("ranking", ())), d.get("ranking_source", "llm"), bool(d.get("fallback_used", False)),
            list(d.get("failures", ())),
        )


def _ask_knobs(llm: LLMClient, task: str, prompt: str, subject: str | None, configurable: set[str],
               rationale: dict | None = None) -> set[str]:
    """One selection prompt; returns the validated subset.  Raises LLMError on failure."""
    try:
        reply = parse_json_reply(llm.complete(LLMRequest(task, prompt, knob=subject)))
    except ValueError as exc:
        raise LLMError(f"{task}: malformed reply: {exc}") from exc
    names = reply.get("knobs") if isinstance(reply, dict) else reply
    if not isinstance(names, list):
        raise LLMError(f"{task}: reply has no knob list")
    picked = {n for n in names if isinstance(n, str) and n in configurable}
    dropped = sorted({str(n) for n in names} - picked)
    if dropped:
        log.warning("%s: dropped names outside the configurable set: %s", task, ", ".join(dropped))
    if rationale is not None and isinstance(reply, dict) and isinstance(reply.get("rationale"), dict):
        for k, v in reply["rationale"].items():
            if k in picked:
                rationale.setdefault(k, str(v))
    return picked


def _knob_list(names: Iterable[str]) -> str:
    return ", ".join(sorted(names))


def select_system_level(configurable: set[str], dbms_id: str, llm: LLMClient, rationale: dict | None = None) -> set[str]:
    if not configurable:
        return set()
    prompt = render("select_system", dbms=dbms_id, knobs=_knob_list(configurable))
    try:
        return _ask_knobs(llm, "select_system", prompt, dbms_id, configurable, rationale)
    except LLMError as exc:
        log.warning("system-level selection failed: %s", exc)
        return set()


def select_workload_level(configurable: set[str], workload: WorkloadSpec, llm: LLMClient,
                          dbms_id: str = "postgres", rationale: dict | None = None) -> set[str]:
    if not configurable:
        return set()
    prompt = render("select_workload", dbms=dbms_id, kind=workload.kind.upper(), objective=workload.objective,
                    knobs=_knob_list(configurable))
    try:
        return _ask_knobs(llm, "select_workload", prompt, f"{workload.kind}/{workload.objective}", configurable,
                          rationale)
    except LLMError as exc:
        log.warning("workload-level selection failed: %s", exc)
        return set()


# -- execution plans ----------------------------------------------------------------


_TOKEN = re.compile(r"\w+|[^\w\s]+")


def count_tokens(text: str) -> int:
    """Rough token count: words and punctuation runs."""
    return len(_TOKEN.findall(text))


def _max_depth(node, depth=0) -> int:
    kids = node.get("Plans") if isinstance(node, dict) else None
    if not isinstance(kids, list) or not kids:
        return depth
    return max(_max_depth(k, depth + 1) for k in kids)


def _cut_at(node, depth: int, level=0) -> None:
    kids = node.get("Plans")
    if not isinstance(kids, list) or not kids:
        return
    if level + 1 == depth:
        node["Plans"] = f"<{len(kids)} subplans pruned>"
        return
    for k in kids:
        _cut_at(k, depth, level + 1)


def prune_plan(plan, max_tokens: int = DEFAULT_PLAN_TOKENS) -> str:
    """Plan text within ``max_tokens``, dropping the deepest plan nodes first."""
    plan = json.loads(json.dumps(plan))
    root = plan[0]["Plan"] if isinstance(plan, list) and plan and isinstance(plan[0], dict) and "Plan" in plan[0] \
        else plan
    text = json.dumps(plan, indent=1, sort_keys=True)
    while count_tokens(text) > max_tokens and isinstance(root, dict):
        depth = _max_depth(root)
        if depth == 0:
            break
        _cut_at(root, depth)
        text = json.dumps(plan, indent=1, sort_keys=True)
    if count_tokens(text) > max_tokens:
        # hard cut at a token boundary; the trailing marker counts as one token
        tokens = list(_TOKEN.finditer(text))
        keep = max(max_tokens - 1, 0)
        text = (text[:tokens[keep - 1].end()] if keep else "") + " ..."
    return text


def select_query_level(configurable: set[str], workload: WorkloadSpec, harness, llm: LLMClient,
                       max_plan_tokens: int = DEFAULT_PLAN_TOKENS, rationale: dict | None = None,
                       failures: list | None = None) -> set[str]:
    out: set[str] = set()
    if not configurable:
        return out
    for i, query in enumerate(workload.queries, 1):
        try:
            plan = harness.get_plan(query)
        except HarnessError as exc:
            log.warning("query %d skipped, no plan: %s", i, exc)
            if failures is not None:
                failures.append(f"query q{i}: {exc}")
            continue
        prompt = render("select_query", plan=prune_plan(plan, max_plan_tokens), knobs=_knob_list(configurable))
        try:
            out |= _ask_knobs(llm, "select_query", prompt, f"q{i}", configurable, rationale)
        except LLMError as exc:
            log.warning("query %d: selection failed: %s", i, exc)
            if failures is not None:
                failures.append(f"query q{i}: {exc}")
    return out


def _mentions(text: str, candidates: Iterable[str]) -> set[str]:
    return {c for c in candidates if re.search(rf"(?<![\w.]){re.escape(c)}(?![\w])", text)}


def select_knob_level(lake: Mapping[str, TuningLakeEntry], base: set[str], llm: LLMClient | None,
                      configurable: set[str] | None = None, rationale: dict | None = None) -> set[str]:
    """``base`` plus knobs the base knobs' lake text ties them to.

    Candidates are the configurable set when given, otherwise every knob
    the lake knows about.  Without an answer from the LLM the lake text is
    scanned for candidate names instead.
    """
    if not base:
        return set()
    universe = set(configurable) if configurable is not None else set(lake) | set(base)
    candidates = universe - set(base)
    texts = {k: lake[k].summary for k in sorted(base) if k in lake and lake[k].summary}
    if not texts or not candidates:
        return set(base)
    knowledge = "\n".join(f"- {k}: {t}" for k, t in texts.items())
    added = None
    if llm is not None:
        prompt = render("select_dependency", knowledge=knowledge, knobs=_knob_list(candidates))
        try:
            # naming an already selected knob is harmless, so validate against the whole universe
            added = _ask_knobs(llm, "select_dependency", prompt, None, universe, rationale) - set(base)
        except LLMError as exc:
            log.warning("dependency selection failed, scanning lake text: %s", exc)
    if added is None:
        added = set()
        for t in texts.values():
            added |= _mentions(t, candidates)
    return set(base) | added


def rank_knobs(union: set[str], counts: Mapping[str, int], llm: LLMClient, dbms_id: str,
               workload: WorkloadSpec) -> tuple[list[str], str]:
    """Importance order of ``union``; LLM rank first, then occurrence count, then name."""
    fallback = sorted(union, key=lambda k: (-counts.get(k, 0), k))
    try:
        prompt = render("rank", dbms=dbms_id, kind=workload.kind.upper(), objective=workload.objective,
                        knobs=_knob_list(union))
        reply = parse_json_reply(llm.complete(LLMRequest("rank", prompt)))
        ranked = reply.get("ranking") if isinstance(reply, dict) else reply
        if not isinstance(ranked, list):
            raise ValueError("no ranking list")
    except (LLMError, ValueError) as exc:
        log.warning("importance ranking failed, using occurrence counts: %s", exc)
        return fallback, "count"
    seen, order = set(), []
    for k in ranked:
        if isinstance(k, str) and k in union and k not in seen:
            seen.add(k)
            order.append(k)
    # knobs the ranking left out follow in fallback order
    order += [k for k in fallback if k not in seen]
    return order, "llm"


def load_static_list(path: str | Path) -> list[str]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


def select_knobs(configurable: set[str], workload: WorkloadSpec, dbms_id: str,
                 lake: Mapping[str, TuningLakeEntry], harness, llm: LLMClient, cap: int,
                 static_fallback: Iterable[str] = (), max_plan_tokens: int = DEFAULT_PLAN_TOKENS) -> SelectionReport:
    if cap < 1:
        raise SelectionError("cap must be >= 1")
    configurable = set(configurable)
    report = SelectionReport()
    r = report.rationale
    report.system_set = select_system_level(configurable, dbms_id, llm, r)
    report.workload_set = select_workload_level(configurable, workload, llm, dbms_id, r)
    report.query_set = (select_query_level(configurable, workload, harness, llm, max_plan_tokens, r, report.failures)
                        if workload.queries and harness is not None else set())
    base = report.system_set | report.workload_set | report.query_set
    if not base:
        static = [k for k in static_fallback if k in configurable]
        log.warning("every selection level came back empty, using the static list (%d knobs)", len(static))
        report.fallback_used = True
        report.ranking = static[:cap]
        report.ranking_source = "static"
        report.final_set = set(report.ranking)
        return report
    completed = select_knob_level(lake, base, llm, configurable, r)
    report.dependency_added = completed - base
    union = completed
    counts = {k: sum(k in s for s in (report.system_set, report.workload_set, report.query_set,
                                      report.dependency_added)) for k in union}
    order, source = rank_knobs(union, counts, llm, dbms_id, workload)
    report.ranking = order
    report.ranking_source = source
    report.final_set = set(order[:cap])
    report.rationale = {k: v for k, v in r.items() if k in union}
    return report
