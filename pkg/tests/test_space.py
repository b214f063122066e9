import json
import math

import pytest
from hypothesis import given, strategies as st

from conftest import GiB
from knobtune.catalog import KnobCatalog, KnobSpec
from knobtune.knowledge.types import StructuredKnob
from knobtune.space import (
    DeviationConfig, SearchSpace, build_full_space, build_tiny_space, build_views, decode, default_config,
    deviate, encode, extend_virtual, region_discard, round_half_away,
)
from scenarios import special_scenario


def test_checkpoint_timeout_example():
    assert deviate(90, 86400, 0.5, "integer") == 43245
    assert deviate(90, 86400, 0.0) == 90 and deviate(90, 86400, 1.0) == 86400


def test_deviation_at_zero_is_defined():
    assert deviate(0, 100, 0.25) == 25.0


@pytest.mark.parametrize("x,expected", [(0.5, 1), (1.5, 2), (-0.5, -1), (-2.5, -3), (2.4999, 2)])
def test_round_half_away(x, expected):
    assert round_half_away(x) == expected


@given(st.integers(-10**6, 10**6), st.integers(-10**6, 10**6), st.floats(0, 1))
def test_deviation_stays_between_value_and_bound(v, u, beta):
    x = deviate(v, u, beta, "integer")
    assert min(v, u) <= x <= max(v, u)


def test_betas_validated():
    with pytest.raises(ValueError):
        DeviationConfig((0.0, 1.5))


def spec(lo=0, hi=1000, default=100, kind="integer", unit="none"):
    return KnobSpec("k", kind, lo, hi, default, unit=unit)


def test_region_discard_intersects_and_recovers():
    s = spec()
    assert region_discard(s, StructuredKnob("k", [], 10, 500), None) == (10, 500)
    assert region_discard(s, StructuredKnob("k", [], -5, 5000), None) == (0, 1000)
    assert region_discard(s, StructuredKnob("k", [], 800, 200), None) == (0, 1000)
    assert region_discard(s, None, None) == (0, 1000)


def test_region_discard_resolves_percent_of_ram(catalog, profile):
    sk = StructuredKnob("shared_buffers", ["25% of RAM"], "25% of RAM", "40% of RAM")
    assert region_discard(catalog["shared_buffers"], sk, profile) == (4 * GiB, round(6.4 * GiB))


def test_memory_knob_kept_below_ram(profile):
    s = KnobSpec("m", "integer", 0, 64 * GiB, GiB, unit="bytes")
    lo, hi = region_discard(s, None, profile)
    assert hi == 16 * GiB - 1


def test_tiny_values_for_one_suggestion():
    cat = KnobCatalog({"k": spec()})
    (view,) = build_views(cat, ["k"], {"k": StructuredKnob("k", [100], 0, 1000)})
    assert view.tiny_values == (50, 75, 100, 325, 550)


def test_knob_without_knowledge_uses_default_and_midpoint():
    cat = KnobCatalog({"k": spec()})
    (view,) = build_views(cat, ["k"], {})
    assert 100 in view.tiny_values and 500 in view.tiny_values
    (bare,) = build_views(cat, ["k"], {}, fallback=False)
    assert bare.tiny_values == ()


def test_categorical_tiny_values(catalog):
    (view,) = build_views(catalog, ["wal_level"], {"wal_level": StructuredKnob("wal_level", ["replica"])})
    assert view.tiny_values == ("replica",)
    (plain,) = build_views(catalog, ["enable_seqscan"], {})
    assert plain.tiny_values == (False, True)


def test_virtual_extension_splits_boundary_special():
    views, _ = special_scenario(virtual=True)
    v = views[0]
    assert v.knob_name == "idle_timeout" and v.virtual is not None
    assert (v.virtual.normal_min, v.virtual.normal_max) == (1, 2**31)
    assert 0 in v.tiny_values and v.contains(0) and v.contains(5) and not v.contains(-1)


def test_without_extension_special_value_is_excluded():
    views, _ = special_scenario(virtual=False)
    v = views[0]
    assert v.virtual is None and 0 not in v.tiny_values and not v.contains(0)


def test_interior_special_value_is_left_alone():
    cat = KnobCatalog({"k": spec()})
    (v,) = build_views(cat, ["k"], {"k": StructuredKnob("k", [], 0, 1000, {"value": 500, "meaning": "x"})})
    assert v.virtual is None
    assert extend_virtual(v) == v


def test_encode_decode_round_trip():
    views, _ = special_scenario()
    full = build_full_space(views)
    for value in (0, 1, 12345):
        cfg = dict(default_config(full), idle_timeout=value)
        ext = encode(cfg, full)
        assert ext["control_idle_timeout"] == (1 if value == 0 else 0)
        assert decode(ext, full) == cfg
    with pytest.raises(ValueError):
        decode(dict(ext, control_idle_timeout=2), full)


def test_space_membership_and_json(catalog, profile):
    views = build_views(catalog, ["shared_buffers", "enable_seqscan"], {}, profile)
    tiny, full = build_tiny_space(views), build_full_space(views)
    cfg = {"shared_buffers": views[1].tiny_values[0], "enable_seqscan": True}
    assert tiny.contains(cfg) and full.contains(cfg)
    assert not tiny.contains({"shared_buffers": 1}) and not full.contains(dict(cfg, enable_seqscan="x"))
    assert SearchSpace.from_json(full.to_json()) == full
    with pytest.raises(ValueError):
        SearchSpace((views[0], views[0]))


@given(st.integers(-10**5, 10**5), st.integers(-10**5, 10**5), st.floats(0, 1), st.floats(0, 1))
def test_deviation_monotone_in_beta(v, u, b1, b2):
    lo_b, hi_b = sorted((b1, b2))
    a, b = deviate(v, u, lo_b, "real"), deviate(v, u, hi_b, "real")
    assert (a <= b + 1e-9) if u >= v else (a >= b - 1e-9)


@given(st.integers(0, 1000), st.integers(1, 1000), st.booleans())
def test_special_value_partition(lo, width, at_low):
    hi = lo + width
    s = lo if at_low else hi
    cat = KnobCatalog({"k": KnobSpec("k", "integer", lo, hi, lo)})
    (v,) = build_views(cat, ["k"], {"k": StructuredKnob("k", [], None, None, {"value": s, "meaning": ""})})
    vk = v.virtual
    normal = set(range(vk.normal_min, vk.normal_max + 1))
    assert s not in normal and normal | {s} == set(range(lo, hi + 1))


@given(st.integers(0, 2**32 - 1))
def test_tiny_points_lie_in_full_space(seed):
    import numpy as np

    rng = np.random.default_rng(seed)
    lo = int(rng.integers(0, 100))
    hi = lo + int(rng.integers(1, 10_000))
    sugg = [int(x) for x in rng.integers(lo, hi + 1, int(rng.integers(1, 3)))]
    special = {"value": lo, "meaning": "off"} if rng.uniform() < 0.5 else None
    cat = KnobCatalog({"k": KnobSpec("k", "integer", lo, hi, lo)})
    views = build_views(cat, ["k"], {"k": StructuredKnob("k", sugg, lo, hi, special)})
    full = build_full_space(views)
    for value in views[0].tiny_values:
        cfg = {"k": value}
        assert full.contains(cfg) and decode(encode(cfg, full), full) == cfg
