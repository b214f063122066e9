"""Parsing, resolving and rendering of knob quantities.

Memory quantities are canonicalized to bytes and time quantities to
milliseconds.  Percent expressions are resolved against a machine profile
(RAM or disk); any other percent base is rejected.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

Number = Union[int, float]

MEMORY_FACTORS = {
    "b": 1,
    "byte": 1,
    "bytes": 1,
    "kb": 1024,
    "kib": 1024,
    "mb": 1024**2,
    "mib": 1024**2,
    "gb": 1024**3,
    "gib": 1024**3,
    "tb": 1024**4,
    "tib": 1024**4,
}
TIME_FACTORS = {
    "us": 0.001,
    "ms": 1,
    "millisecond": 1,
    "milliseconds": 1,
    "s": 1000,
    "sec": 1000,
    "second": 1000,
    "seconds": 1000,
    "min": 60_000,
    "minute": 60_000,
    "minutes": 60_000,
    "h": 3_600_000,
    "hour": 3_600_000,
    "hours": 3_600_000,
    "d": 86_400_000,
    "day": 86_400_000,
    "days": 86_400_000,
}

# unit enumeration used on KnobSpec
UNITS = ("none", "bytes", "kilobytes", "milliseconds", "seconds", "pages", "count")
MEMORY_UNITS = {"bytes", "kilobytes", "pages"}
TIME_UNITS = {"milliseconds", "seconds"}

_NUMBER = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?"
_LITERAL_RE = re.compile(rf"^\s*({_NUMBER})\s*([a-zA-Z]*)\s*$")
_PERCENT_RE = re.compile(
    rf"^\s*({_NUMBER})\s*%\s*(?:of\s+)?(?:the\s+)?(?:total\s+|system\s+|available\s+|physical\s+)*"
    r"([a-zA-Z ]*?)\s*$",
    re.IGNORECASE,
)
_RAM_WORDS = {"ram", "memory", "system memory", "main memory", "physical memory", "ram size"}
_DISK_WORDS = {"disk", "disk space", "storage", "disk size"}


class QuantityError(ValueError):
    pass


@dataclass(frozen=True)
class SystemProfile:
    ram_bytes: int
    disk_kind: str = "ssd"
    cpu_cores: int = 1
    disk_bytes: int | None = None

    def __post_init__(self):
        if self.ram_bytes <= 0:
            raise ValueError("ram_bytes must be positive")
        if self.cpu_cores < 1:
            raise ValueError("cpu_cores must be >= 1")
        if self.disk_kind not in ("ssd", "hdd"):
            raise ValueError(f"disk_kind must be 'ssd' or 'hdd', got {self.disk_kind!r}")

    def to_dict(self) -> dict:
        return {
            "ram_bytes": self.ram_bytes,
            "disk_kind": self.disk_kind,
            "cpu_cores": self.cpu_cores,
            "disk_bytes": self.disk_bytes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemProfile":
        ram = d["ram_bytes"] if "ram_bytes" in d else parse_size(str(d["ram"]))
        disk = d.get("disk_bytes")
        if disk is None and "disk" in d:
            disk = parse_size(str(d["disk"]))
        return cls(
            ram_bytes=int(ram),
            disk_kind=d.get("disk_kind", "ssd"),
            cpu_cores=int(d.get("cpu_cores", 1)),
            disk_bytes=None if disk is None else int(disk),
        )


def parse_size(text: str) -> float:
    """Parse a memory literal such as ``"16GB"`` into bytes."""
    m = _LITERAL_RE.match(text)
    if not m:
        raise QuantityError(f"cannot parse size {text!r}")
    suffix = m.group(2).lower()
    if suffix == "":
        return float(m.group(1))
    if suffix not in MEMORY_FACTORS:
        raise QuantityError(f"unknown memory unit in {text!r}")
    return float(m.group(1)) * MEMORY_FACTORS[suffix]


def unit_kind(unit: str) -> str:
    if unit in MEMORY_UNITS:
        return "memory"
    if unit in TIME_UNITS:
        return "time"
    return "plain"


def _percent_base(word: str, profile: SystemProfile | None, expr: str) -> float:
    word = word.strip().lower()
    if profile is not None and word in _RAM_WORDS:
        return float(profile.ram_bytes)
    if profile is not None and word in _DISK_WORDS and profile.disk_bytes:
        return float(profile.disk_bytes)
    raise QuantityError(f"percentage without a resolvable base: {expr!r}")


def is_expression(value) -> bool:
    """True for strings that need resolution before they can be used as numbers."""
    return isinstance(value, str) and value.strip() != ""


def resolve_quantity(expr, profile: SystemProfile | None, unit: str = "none") -> Number:
    """Resolve a quantity expression to an absolute number in the knob's canonical unit.

    ``unit`` is the knob's canonical unit: memory in bytes, time in
    milliseconds.  Numbers pass through unchanged.
    """
    if isinstance(expr, bool):
        raise QuantityError(f"boolean is not a quantity: {expr!r}")
    if isinstance(expr, (int, float)):
        return expr
    if not isinstance(expr, str):
        raise QuantityError(f"unsupported quantity {expr!r}")
    kind = unit_kind(unit)

    pm = _PERCENT_RE.match(expr)
    if pm and "%" in expr:
        pct = float(pm.group(1))
        base = _percent_base(pm.group(2), profile, expr)
        if kind != "memory":
            raise QuantityError(f"percent expression {expr!r} for non-memory knob")
        if pct < 0:
            raise QuantityError(f"negative quantity {expr!r}")
        return pct / 100.0 * base

    m = _LITERAL_RE.match(expr)
    if not m:
        raise QuantityError(f"cannot parse quantity {expr!r}")
    value = float(m.group(1))
    suffix = m.group(2).lower()
    if suffix == "":
        return _as_number(value)
    if value < 0:
        raise QuantityError(f"negative quantity {expr!r}")
    if suffix in MEMORY_FACTORS:
        if kind != "memory":
            raise QuantityError(f"memory quantity {expr!r} for a {unit} knob")
        return _as_number(value * MEMORY_FACTORS[suffix])
    if suffix in TIME_FACTORS:
        if kind != "time":
            raise QuantityError(f"time quantity {expr!r} for a {unit} knob")
        return _as_number(value * TIME_FACTORS[suffix])
    raise QuantityError(f"unknown unit {suffix!r} in {expr!r}")


def _as_number(x: float) -> Number:
    if math.isfinite(x) and x == int(x) and abs(x) < 2**63:
        return int(x)
    return x


_RENDER_MEMORY = (("TB", 1024**4), ("GB", 1024**3), ("MB", 1024**2), ("kB", 1024))
_RENDER_TIME = (("d", 86_400_000), ("h", 3_600_000), ("min", 60_000), ("s", 1000))


def render_quantity(value: Number, unit: str) -> str:
    """Render a canonical value using the largest exact DBMS unit suffix."""
    kind = unit_kind(unit)
    if kind == "plain" or value == 0 or value < 0:
        return _plain(value)
    table = _RENDER_MEMORY if kind == "memory" else _RENDER_TIME
    if float(value) == int(value):
        iv = int(value)
        for suffix, factor in table:
            if iv % factor == 0:
                return f"{iv // factor}{suffix}"
        return f"{iv}B" if kind == "memory" else f"{iv}ms"
    return f"{_plain(value)}ms" if kind == "time" else f"{int(round(value))}B"


def _plain(value) -> str:
    if isinstance(value, float) and value == int(value) and abs(value) < 2**53:
        return str(int(value))
    return repr(value) if isinstance(value, float) else str(value)
