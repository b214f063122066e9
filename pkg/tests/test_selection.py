import pytest
from hypothesis import given, strategies as st

from conftest import DEMO
from knobtune.harness import SimulatedHarness, WorkloadSpec
from knobtune.knowledge.types import TuningLakeEntry
from knobtune.llm import ScriptedLLM
from knobtune.selection import (
    SelectionError, SelectionReport, count_tokens, load_static_list, prune_plan, rank_knobs, select_knob_level,
    select_knobs, select_query_level, select_system_level, select_workload_level,
)

OLAP = WorkloadSpec("olap", "latency", tuple((DEMO / "queries" / f).read_text() for f in ("q1.sql", "q2.sql")))
SB_LAKE = {
    "shared_buffers": TuningLakeEntry(
        "shared_buffers",
        "Set shared_buffers to 25% of the RAM. Larger settings usually require a corresponding increase in "
        "checkpoint_segments."),
}


DEMO_LAKE = {f.stem: TuningLakeEntry(f.stem, f.read_text().strip())
             for f in sorted((DEMO / "knowledge" / "manual").glob("*.txt"))}


@pytest.fixture
def harness():
    return SimulatedHarness.from_files(DEMO / "surface.json", DEMO / "plans")


def demo_select(demo_llm, configurable, harness, cap=60, lake=None):
    return select_knobs(configurable, OLAP, "postgres", DEMO_LAKE if lake is None else lake, harness, demo_llm, cap)


def test_system_level_drops_unknown_names(configurable, demo_llm):
    got = select_system_level(configurable, "postgres", demo_llm)
    assert "shared_buffers" in got and "not_a_real_knob" not in got and got <= configurable


def test_workload_level_keyed_by_kind_and_objective(configurable, demo_llm):
    got = select_workload_level(configurable, OLAP, demo_llm)
    assert "max_parallel_workers_per_gather" in got
    assert select_workload_level(configurable, WorkloadSpec("olap", "throughput"), demo_llm) == set()


def test_query_level_seq_scan_brings_scan_costs(configurable, demo_llm, harness):
    got = select_query_level(configurable, WorkloadSpec("olap", "latency", OLAP.queries[:1]), harness, demo_llm)
    assert "random_page_cost" in got
    assert select_query_level(configurable, WorkloadSpec(), harness, demo_llm) == set()


def test_query_level_skips_queries_without_plans(configurable, demo_llm, harness):
    failures = []
    wl = WorkloadSpec("olap", "latency", ("select 1",) + OLAP.queries[1:])
    got = select_query_level(configurable, wl, harness, demo_llm, failures=failures)
    assert "hash_mem_multiplier" in got and failures and "q1" in failures[0]


def test_dependency_level_from_lake_text():
    base = {"shared_buffers"}
    universe = {"shared_buffers", "checkpoint_segments", "work_mem"}
    assert select_knob_level(SB_LAKE, base, None, universe) == {"shared_buffers", "checkpoint_segments"}
    llm = ScriptedLLM().add("select_dependency", None, {"knobs": ["checkpoint_segments", "shared_buffers", "bogus"]})
    assert select_knob_level(SB_LAKE, base, llm, universe) == {"shared_buffers", "checkpoint_segments"}
    assert select_knob_level({}, {"work_mem"}, llm, universe) == {"work_mem"}
    assert select_knob_level(SB_LAKE, set(), llm, universe) == set()


def test_disjoint_levels_union():
    conf = {"a", "b", "c", "d"}
    llm = (ScriptedLLM().add("select_system", "pg", {"knobs": ["a"]})
           .add("select_workload", "oltp/throughput", {"knobs": ["b"]})
           .add("select_query", "q1", {"knobs": ["c"]})
           .add("select_dependency", None, {"knobs": []})
           .add("rank", None, {"ranking": ["c", "b", "a"]}))
    plan_harness = SimulatedHarness(None, {"select 1": [{"Plan": {"Node Type": "Result"}}]})
    rep = select_knobs(conf, WorkloadSpec("oltp", "throughput", ("select 1",)), "pg", {}, plan_harness, llm, 10)
    assert rep.final_set == {"a", "b", "c"} and rep.dependency_added == set()
    assert rep.ranking == ["c", "b", "a"]


def test_olap_fixture_gives_sixty_knobs(configurable, demo_llm, harness):
    rep = demo_select(demo_llm, configurable, harness)
    union = rep.system_set | rep.workload_set | rep.query_set | rep.dependency_added
    assert len(union) == 66 and len(rep.final_set) == 60 and rep.dependency_added
    assert rep.final_set <= configurable and rep.final_set == set(rep.ranking[:60])
    assert not rep.fallback_used and rep.ranking_source == "llm"


def test_cap_one_and_monotone_in_cap(configurable, demo_llm, harness):
    reports = {cap: demo_select(ScriptedLLM.from_dir(DEMO / "llm"), configurable, harness, cap)
               for cap in (1, 10, 40, 60, 100)}
    assert len(reports[1].final_set) == 1 and reports[1].final_set == {reports[100].ranking[0]}
    caps = sorted(reports)
    for a, b in zip(caps, caps[1:]):
        assert reports[a].final_set <= reports[b].final_set
    with pytest.raises(SelectionError):
        demo_select(demo_llm, configurable, harness, 0)


def test_selection_is_deterministic(configurable, harness):
    a = demo_select(ScriptedLLM.from_dir(DEMO / "llm"), configurable, harness)
    b = demo_select(ScriptedLLM.from_dir(DEMO / "llm"), configurable, harness)
    assert a.to_json() == b.to_json()
    assert SelectionReport.from_dict(__import__("json").loads(a.to_json())).to_json() == a.to_json()


def test_total_failure_uses_static_list(configurable, harness):
    static = load_static_list(DEMO / "static_knobs.txt")
    rep = select_knobs(configurable, OLAP, "postgres", {}, harness, ScriptedLLM(), 5, static)
    assert rep.fallback_used and rep.ranking_source == "static"
    assert rep.ranking == [k for k in static if k in configurable][:5]


def test_ranking_falls_back_to_counts():
    order, source = rank_knobs({"a", "b", "c"}, {"a": 1, "b": 3, "c": 1}, ScriptedLLM(), "pg", OLAP)
    assert (order, source) == (["b", "a", "c"], "count")
    llm = ScriptedLLM().add("rank", None, {"ranking": ["c", "zzz", "c"]})
    assert rank_knobs({"a", "b", "c"}, {"b": 2}, llm, "pg", OLAP) == (["c", "b", "a"], "llm")


def nested_plan(depth):
    node = {"Node Type": "Seq Scan", "Relation Name": "lineitem", "Total Cost": 1.0}
    for i in range(depth):
        node = {"Node Type": f"Join{i}", "Plans": [node, {"Node Type": "Index Scan", "Total Cost": 2.0}]}
    return [{"Plan": node}]


@given(st.integers(0, 12), st.integers(20, 400))
def test_prune_plan_respects_budget(depth, budget):
    text = prune_plan(nested_plan(depth), budget)
    assert count_tokens(text) <= budget + 1


def test_prune_plan_drops_deepest_nodes_first():
    text = prune_plan(nested_plan(6), 120)
    assert "Join5" in text and "lineitem" not in text
    assert prune_plan(nested_plan(1), 10_000).count("Index Scan") == 1
