"""Knowledge-derived search spaces.

Two granularities share one set of :class:`KnobDomainView` objects:

* ``tiny`` - per knob, a short sorted list of candidate values built by
  deviating each suggested value toward both ends of the effective range;
* ``full`` - the region-discarded range of every knob, with knobs that have
  a special value split into a control / normal / special triple.

The optimizer always works on *physical* configurations (knob name -> value)
at the harness boundary and on *extended* configurations (virtual knobs
expanded) internally.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .catalog import KnobCatalog, KnobSpec
from .knowledge.types import StructuredKnob
from .quantity import Number, QuantityError, SystemProfile, resolve_quantity

log = logging.getLogger(__name__)

DEFAULT_BETAS = (0.0, 0.25, 0.5)


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


@dataclass(frozen=True)
class DeviationConfig:
    betas: tuple[float, ...] = DEFAULT_BETAS

    def __post_init__(self):
        for b in self.betas:
            if not 0.0 <= b <= 1.0:
                raise ValueError(f"beta {b} outside [0, 1]")


@dataclass(frozen=True)
class VirtualKnob:
    control_name: str
    normal_name: str
    special_name: str
    special_value: object
    normal_min: Number
    normal_max: Number


@dataclass(frozen=True)
class KnobDomainView:
    knob_name: str
    kind: str
    effective_min: Number | None = None
    effective_max: Number | None = None
    tiny_values: tuple = ()
    categories: tuple = ()
    default_value: object = None
    special_value: object = None
    virtual: VirtualKnob | None = None
    vendor_min: Number | None = None
    vendor_max: Number | None = None
    unit: str = "none"

    @property
    def is_numeric(self) -> bool:
        return self.kind in ("integer", "real")

    def contains(self, value) -> bool:
        """Membership in the (extended) full domain of this knob."""
        if not self.is_numeric:
            return value in self.categories
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False
        if self.kind == "integer" and float(value) != int(value):
            return False
        if self.virtual is not None and value == self.virtual.special_value:
            return True
        lo, hi = self.bounds()
        return lo <= value <= hi

    def bounds(self) -> tuple[Number, Number]:
        """Range searched by the fine stage (normal range for extended knobs)."""
        if self.virtual is not None:
            return self.virtual.normal_min, self.virtual.normal_max
        return self.effective_min, self.effective_max

    def to_dict(self) -> dict:
        d = {
            "knob_name": self.knob_name,
            "kind": self.kind,
            "effective_min": self.effective_min,
            "effective_max": self.effective_max,
            "tiny_values": list(self.tiny_values),
            "categories": list(self.categories),
            "default_value": self.default_value,
            "special_value": self.special_value,
            "vendor_min": self.vendor_min,
            "vendor_max": self.vendor_max,
            "unit": self.unit,
            "virtual": None,
        }
        if self.virtual is not None:
            v = self.virtual
            d["virtual"] = {
                "control_name": v.control_name,
                "normal_name": v.normal_name,
                "special_name": v.special_name,
                "special_value": v.special_value,
                "normal_min": v.normal_min,
                "normal_max": v.normal_max,
            }
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "KnobDomainView":
        d = dict(d)
        virt = d.pop("virtual", None)
        d["tiny_values"] = tuple(d.get("tiny_values") or ())
        d["categories"] = tuple(d.get("categories") or ())
        return cls(**d, virtual=None if virt is None else VirtualKnob(**virt))


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[KnobDomainView, ...]
    granularity: str = "full"

    def __post_init__(self):
        names = [d.knob_name for d in self.dims]
        if len(set(names)) != len(names):
            raise ValueError("duplicate dimension names")
        if self.granularity not in ("tiny", "full"):
            raise ValueError(f"unknown granularity {self.granularity!r}")

    @property
    def names(self) -> list[str]:
        return [d.knob_name for d in self.dims]

    def __len__(self) -> int:
        return len(self.dims)

    def dim(self, name: str) -> KnobDomainView:
        for d in self.dims:
            if d.knob_name == name:
                return d
        raise KeyError(name)

    def with_granularity(self, granularity: str) -> "SearchSpace":
        return replace(self, granularity=granularity)

    def contains(self, config: Mapping) -> bool:
        """Membership of a physical configuration in this space."""
        if set(config) != set(self.names):
            return False
        for d in self.dims:
            v = config[d.knob_name]
            if self.granularity == "tiny":
                if v not in d.tiny_values:
                    return False
            elif not d.contains(v):
                return False
        return True

    def to_json(self) -> str:
        return json.dumps(
            {"granularity": self.granularity, "dims": [d.to_dict() for d in self.dims]},
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SearchSpace":
        d = json.loads(text)
        return cls(tuple(KnobDomainView.from_dict(x) for x in d["dims"]), d["granularity"])


def _resolve_bound(expr, spec: KnobSpec, profile) -> Number | None:
    if expr is None:
        return None
    try:
        x = resolve_quantity(expr, profile, spec.unit)
    except QuantityError as exc:
        log.warning("%s: cannot resolve %r: %s", spec.name, expr, exc)
        return None
    return round_half_away(x) if spec.kind == "integer" else float(x)


def region_discard(
    spec: KnobSpec, sk: StructuredKnob | None, profile: SystemProfile | None
) -> tuple[Number, Number]:
    """Intersect the vendor range with the knowledge range.

    Memory knobs are additionally kept strictly below the machine's RAM.
    """
    if not spec.is_numeric:
        raise ValueError(f"{spec.name} is not numeric")
    vmin, vmax = spec.vendor_min, spec.vendor_max
    kmin = _resolve_bound(sk.min_value, spec, profile) if sk else None
    kmax = _resolve_bound(sk.max_value, spec, profile) if sk else None
    lo = vmin if kmin is None else max(vmin, kmin)
    hi = vmax if kmax is None else min(vmax, kmax)
    if lo > hi or (kmin is not None and kmax is not None and kmin > kmax):
        log.warning("%s: knowledge bounds [%s, %s] unusable, keeping vendor range", spec.name, kmin, kmax)
        lo, hi = vmin, vmax
    if spec.is_memory and profile is not None:
        cap = profile.ram_bytes - 1 if spec.kind == "integer" else float(profile.ram_bytes)
        if hi >= profile.ram_bytes:
            hi = max(lo, min(hi, cap))
    return lo, hi


def deviate(value: Number, bound: Number, beta: float, kind: str = "real",
            lo: Number | None = None, hi: Number | None = None) -> Number:
    """Move ``value`` toward ``bound`` by the fraction ``beta``.

    Equal to multiplying by ``1 + beta/value * (bound - value)`` but defined at
    ``value == 0``.  Written as a weighted average so that ``beta`` 0 and 1
    return ``value`` and ``bound`` exactly.  Integer knobs are rounded half
    away from zero, and the result is clamped to ``[lo, hi]`` when given.
    """
    x = (1.0 - beta) * value + beta * bound
    if kind == "integer":
        x = round_half_away(x)
    if lo is not None and x < lo:
        x = lo
    if hi is not None and x > hi:
        x = hi
    return x


def _resolve_value(expr, spec: KnobSpec, profile) -> Number | None:
    v = _resolve_bound(expr, spec, profile)
    return v


def _tiny_numeric(spec: KnobSpec, sk: StructuredKnob | None, lo, hi, profile, config: DeviationConfig,
                  fallback: bool) -> list:
    suggested = []
    for expr in (sk.suggested_values if sk else []):
        v = _resolve_value(expr, spec, profile)
        if v is None:
            continue
        if lo <= v <= hi:
            suggested.append(v)
        else:
            log.info("%s: suggested %r outside effective range, clamped", spec.name, expr)
            suggested.append(min(max(v, lo), hi))
    if not suggested:
        if not fallback:
            return []
        mid = (lo + hi) / 2
        if spec.kind == "integer":
            mid = round_half_away(mid)
        default = spec.default_value
        suggested = [mid] if not (lo <= default <= hi) else [default, mid]
    values = set()
    for v in suggested:
        for beta in config.betas:
            for bound in (hi, lo):
                values.add(deviate(v, bound, beta, spec.kind, lo, hi))
    return sorted(values)


def _special_numeric(spec: KnobSpec, sk: StructuredKnob | None) -> Number | None:
    if sk is None or sk.special_value is None:
        return None
    v = sk.special_value.get("value")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        return None
    if not spec.vendor_min <= v <= spec.vendor_max:
        return None
    return v


def extend_virtual(view: KnobDomainView) -> KnobDomainView:
    """Split a knob with a special value into control / normal / special knobs.

    The normal range is the effective range with the special value cut off.
    Only special values at an end of the range (or outside it) can be split;
    interior special values leave the view unchanged.
    """
    s = view.special_value
    if s is None or not view.is_numeric:
        return view
    lo, hi = view.effective_min, view.effective_max
    step = 1 if view.kind == "integer" else 0.0
    if s < lo or s > hi:
        nlo, nhi = lo, hi
    elif s == lo and lo < hi:
        nlo, nhi = (lo + 1 if step else math.nextafter(lo, math.inf)), hi
    elif s == hi and lo < hi:
        nlo, nhi = lo, (hi - 1 if step else math.nextafter(hi, -math.inf))
    else:
        log.warning("%s: special value %s inside the range, no virtual extension", view.knob_name, s)
        return view
    name = view.knob_name
    return replace(
        view,
        virtual=VirtualKnob(f"control_{name}", f"normal_{name}", f"special_{name}", s, nlo, nhi),
    )


def build_views(
    catalog: KnobCatalog,
    selected: Iterable[str],
    knowledge: Mapping[str, StructuredKnob],
    profile: SystemProfile | None = None,
    config: DeviationConfig = DeviationConfig(),
    use_knowledge: bool = True,
    virtual: bool = True,
    fallback: bool = True,
) -> list[KnobDomainView]:
    """Domain views for the selected knobs, in sorted-name order."""
    profile = profile or catalog.profile
    views = []
    for name in sorted(selected):
        spec = catalog[name]
        sk = knowledge.get(name) if use_knowledge else None
        if spec.is_numeric:
            lo, hi = region_discard(spec, sk, profile) if use_knowledge else (spec.vendor_min, spec.vendor_max)
            special = _special_numeric(spec, sk) if use_knowledge else None
            tiny = _tiny_numeric(spec, sk, lo, hi, profile, config, fallback) if use_knowledge else []
            view = KnobDomainView(
                name, spec.kind, lo, hi, tuple(tiny), (), spec.default_value, special,
                None, spec.vendor_min, spec.vendor_max, spec.unit,
            )
            if special is not None:
                if virtual:
                    view = extend_virtual(view)
                    if view.virtual is not None and special not in view.tiny_values:
                        view = replace(view, tiny_values=tuple(sorted(set(view.tiny_values) | {special})))
                else:
                    # without the extension the special value is simply not part of the space
                    view = _exclude_special(view)
        else:
            cats = tuple(spec.domain_values())
            tiny = []
            if sk is not None:
                tiny = [v for v in sk.suggested_values if v in cats]
                if sk.special_value is not None and sk.special_value.get("value") in cats:
                    tiny.append(sk.special_value["value"])
            if not tiny:
                tiny = list(cats)
            tiny = sorted(set(tiny), key=cats.index)
            view = KnobDomainView(name, spec.kind, None, None, tuple(tiny), cats, spec.default_value)
        if view.is_numeric and not view.tiny_values:
            log.info("%s: no knowledge for the tiny space, full space only", name)
        views.append(view)
    return views


def _exclude_special(view: KnobDomainView) -> KnobDomainView:
    s = view.special_value
    lo, hi = view.effective_min, view.effective_max
    if s == lo and lo < hi:
        lo = lo + 1 if view.kind == "integer" else math.nextafter(lo, math.inf)
    elif s == hi and lo < hi:
        hi = hi - 1 if view.kind == "integer" else math.nextafter(hi, -math.inf)
    tiny = tuple(v for v in view.tiny_values if lo <= v <= hi and v != s)
    return replace(view, effective_min=lo, effective_max=hi, tiny_values=tiny, special_value=None)


def build_tiny_space(views: Iterable[KnobDomainView]) -> SearchSpace:
    """Tiny space over knobs that have candidate values."""
    return SearchSpace(tuple(v for v in views if v.tiny_values), "tiny")


def build_full_space(views: Iterable[KnobDomainView]) -> SearchSpace:
    return SearchSpace(tuple(views), "full")


# --- extended (virtual) representation ----------------------------------------

@dataclass(frozen=True)
class ExtDim:
    """One encoded dimension of the extended space."""

    name: str
    kind: str  # integer | real | categorical
    low: float = 0.0
    high: float = 1.0
    choices: tuple = ()
    source: str = ""  # physical knob name
    role: str = "plain"  # plain | control | normal


def extended_dims(space: SearchSpace) -> list[ExtDim]:
    dims: list[ExtDim] = []
    for v in space.dims:
        if not v.is_numeric:
            dims.append(ExtDim(v.knob_name, "categorical", choices=tuple(v.categories), source=v.knob_name))
        elif v.virtual is not None:
            vk = v.virtual
            dims.append(ExtDim(vk.control_name, "categorical", choices=(0, 1), source=v.knob_name, role="control"))
            dims.append(ExtDim(vk.normal_name, v.kind, vk.normal_min, vk.normal_max, source=v.knob_name, role="normal"))
        else:
            dims.append(ExtDim(v.knob_name, v.kind, v.effective_min, v.effective_max, source=v.knob_name))
    return dims


def encode(config: Mapping, space: SearchSpace) -> dict:
    """Physical configuration -> extended configuration."""
    out = {}
    for v in space.dims:
        value = config[v.knob_name]
        if v.virtual is None:
            out[v.knob_name] = value
            continue
        vk = v.virtual
        if value == vk.special_value:
            out[vk.control_name] = 1
            out[vk.normal_name] = vk.normal_min
        else:
            out[vk.control_name] = 0
            out[vk.normal_name] = value
    return out


def decode(ext: Mapping, space: SearchSpace) -> dict:
    """Extended configuration -> physical configuration."""
    out = {}
    for v in space.dims:
        if v.virtual is None:
            out[v.knob_name] = ext[v.knob_name]
            continue
        vk = v.virtual
        control = ext[vk.control_name]
        if control not in (0, 1):
            raise ValueError(f"control value for {v.knob_name} must be 0 or 1, got {control!r}")
        out[v.knob_name] = vk.special_value if control == 1 else ext[vk.normal_name]
    return out


def default_config(space: SearchSpace) -> dict:
    return {v.knob_name: v.default_value for v in space.dims}
