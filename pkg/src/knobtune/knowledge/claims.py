"""Shallow claim extraction from tuning text.

A claim is a ``(slot, value)`` pair where slot is one of ``upper``,
``lower`` or ``suggested`` and value is a normalized quantity string such as
``40%ofram`` or ``4gb``.  This is deliberately narrow: it only has to be good
enough to detect bound/value contradictions between sources and unsupported
statements in summaries.
"""

from __future__ import annotations

import re
from collections import defaultdict

_NUM = r"\d+(?:\.\d+)?"
_QTY = (
    rf"{_NUM}\s*%(?:\s+of\s+(?:the\s+)?(?:total\s+|system\s+|available\s+|physical\s+|os\s+)?[a-z]+)?"
    rf"|{_NUM}\s*(?:[kmgt]i?b|bytes?|ms|milliseconds?|seconds?|s|min(?:utes?)?|h(?:ours?)?)\b"
    rf"|{_NUM}"
)
_UPPER = (
    r"no more than|not more than|at most|up to|a maximum of|maximum of|not exceed(?:ing)?"
    r"|(?<!no )(?<!not )less than|below|under"
)
_LOWER = (
    r"at least|no less than|not less than|a minimum of|minimum of"
    r"|(?<!no )(?<!not )more than|above|greater than"
)
_SUGGEST = (
    r"set (?:[\w.]+ )?(?:to|as)|recommend(?:ed|s)?(?: value)?(?: of| is)?"
    r"|suggest(?:ed|s)?(?: value)?(?: of| is)?|start(?:ing)? (?:with|point (?:of|is))|a value of"
    r"|value (?:for [\w.]+ )?(?:is|of|as)|default of|try"
)

_RE_RANGE = re.compile(rf"between\s+({_QTY})\s+and\s+({_QTY})", re.IGNORECASE)
_RE_FROM_TO = re.compile(rf"from\s+({_QTY})\s+to\s+({_QTY})", re.IGNORECASE)
_RE_UPPER = re.compile(rf"(?:{_UPPER})\s+({_QTY})", re.IGNORECASE)
_RE_LOWER = re.compile(rf"(?:{_LOWER})\s+({_QTY})", re.IGNORECASE)
_RE_SUGGEST = re.compile(rf"(?:{_SUGGEST})\s+(?:about\s+|around\s+|approximately\s+)?({_QTY})", re.IGNORECASE)

_CLAUSE_SPLIT = re.compile(r"(?<=[.!?])\s+|;\s*|,?\s+but\s+|\n+", re.IGNORECASE)


def normalize_quantity(text: str) -> str:
    t = text.lower()
    t = re.sub(r"\b(the|total|system|available|physical)\b", "", t)
    t = re.sub(r"\bmemory\b", "ram", t)
    t = re.sub(r"\s+", "", t)
    t = t.replace("kib", "kb").replace("mib", "mb").replace("gib", "gb").replace("tib", "tb")
    return t.rstrip(".")


def extract_claims(text: str) -> set[tuple[str, str]]:
    claims: set[tuple[str, str]] = set()
    for rx in (_RE_RANGE, _RE_FROM_TO):
        for m in rx.finditer(text):
            claims.add(("lower", normalize_quantity(m.group(1))))
            claims.add(("upper", normalize_quantity(m.group(2))))
    stripped = _RE_FROM_TO.sub(" ", _RE_RANGE.sub(" ", text))
    for slot, rx in (("upper", _RE_UPPER), ("lower", _RE_LOWER), ("suggested", _RE_SUGGEST)):
        for m in rx.finditer(stripped):
            claims.add((slot, normalize_quantity(m.group(1))))
    return claims


def slot_values(claims) -> dict[str, set[str]]:
    out: dict[str, set[str]] = defaultdict(set)
    for slot, value in claims:
        out[slot].add(value)
    return out


def split_clauses(text: str) -> list[str]:
    parts = [p.strip() for p in _CLAUSE_SPLIT.split(text)]
    return [p for p in parts if p and p != "."]


def _norm_clause(clause: str) -> str:
    return re.sub(r"[^a-z0-9%]+", " ", clause.lower()).strip()


def merge_by_priority(docs) -> str:
    """Merge documents clause by clause, highest priority first.

    A clause from a lower-priority source is dropped when one of its claims
    contradicts a claim on the same slot made by a strictly higher-priority
    source, or when it repeats already-kept content.
    """
    ordered = sorted(docs, key=lambda d: d.priority)
    kept: list[str] = []
    seen: set[str] = set()
    held: dict[str, tuple[int, set[str]]] = {}
    for doc in ordered:
        for clause in split_clauses(doc.text):
            norm = _norm_clause(clause)
            if not norm or norm in seen:
                continue
            claims = extract_claims(clause)
            conflict = any(
                slot in held and held[slot][0] < doc.priority and value not in held[slot][1]
                for slot, value in claims
            )
            if conflict:
                continue
            redundant = bool(claims) and all(
                slot in held and value in held[slot][1] for slot, value in claims
            )
            if redundant:
                continue
            seen.add(norm)
            kept.append(clause.rstrip("."))
            for slot, value in claims:
                prio, values = held.get(slot, (doc.priority, set()))
                values.add(value)
                held[slot] = (min(prio, doc.priority), values)
    text = ". ".join(c[0].upper() + c[1:] for c in kept)
    return text + "." if text else ""


def priority_violations(summary: str, docs) -> list[tuple[str, str]]:
    """Claims in ``summary`` that survive only from a source outranked on that slot."""
    by_doc = [(d.priority, extract_claims(d.text)) for d in docs]
    out = []
    for slot, value in sorted(extract_claims(summary)):
        origins = [p for p, cl in by_doc if (slot, value) in cl]
        if not origins:
            continue
        best_origin = min(origins)
        rivals = [p for p, cl in by_doc if any(s == slot and v != value for s, v in cl)]
        if rivals and min(rivals) < best_origin:
            out.append((slot, value))
    return out


def unsupported_claims(summary: str, docs) -> list[tuple[str, str]]:
    support = set()
    for d in docs:
        support |= extract_claims(d.text)
    return sorted(c for c in extract_claims(summary) if c not in support)
