import json
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from conftest import DEMO, GiB
from knobtune.knowledge.claims import extract_claims, merge_by_priority, priority_violations, unsupported_claims
from knobtune.knowledge.prepare import (
    FileDropAdapter, LLMSourceAdapter, collect, consistency_check, filter_noise, prepare_knob, read_lake,
    rule_check, summarize, write_lake_entry,
)
from knobtune.knowledge.transform import (
    STRUCTURED_KNOB_SCHEMA, canonical_json, majority_vote, read_structured, sample_examples, transform,
    validate_schema, validate_structured, write_structured,
)
from knobtune.knowledge.types import KnowledgeDoc, StructuredKnob, TuningLakeEntry
from knobtune.llm import ScriptedLLM
from knobtune.space import build_views

MANUAL_SB = (DEMO / "knowledge" / "manual" / "shared_buffers.txt").read_text().strip()
LLM_SB = "Set shared_buffers to 25% of the RAM, but no more than 4 GB."


def docs_for(knob):
    return collect([FileDropAdapter(DEMO / "knowledge" / "manual", "manual"),
                    FileDropAdapter(DEMO / "knowledge" / "web", "web")], {knob})


# -- claims -------------------------------------------------------------------------


def test_claims_cover_bounds_and_suggestions():
    assert extract_claims("set it to no more than 40% of the RAM") == {("upper", "40%ofram")}
    assert extract_claims("between 0 and 1") == {("lower", "0"), ("upper", "1")}
    assert ("suggested", "25%ofram") in extract_claims("a reasonable starting value is 25% of the memory")
    assert extract_claims("use 4 GiB at least") == set()


def test_priority_merge_keeps_higher_source_bound():
    docs = [KnowledgeDoc("shared_buffers", "llm", LLM_SB), KnowledgeDoc("shared_buffers", "manual", MANUAL_SB)]
    merged = merge_by_priority(docs)
    assert "40% of the RAM" in merged and "4 GB" not in merged
    assert priority_violations(merged, docs) == []
    assert priority_violations(LLM_SB, docs) == [("upper", "4gb")]


def test_unsupported_claims():
    docs = [KnowledgeDoc("k", "manual", "Set k to no more than 10MB.")]
    assert unsupported_claims("Set k to no more than 20MB.", docs) == [("upper", "20mb")]
    assert unsupported_claims("Set k to no more than 10MB.", docs) == []


# -- preparation ---------------------------------------------------------------------


def test_file_drop_adapter_and_missing_dir(tmp_path):
    docs = docs_for("shared_buffers")
    assert [d.source for d in docs] == ["manual", "web"]
    errors = {}
    assert collect([FileDropAdapter(tmp_path / "nope")], {"x"}, errors) == [] and errors


def test_llm_adapter_records_failures():
    llm = ScriptedLLM().add("elicit", "a", "Use 4MB.").add("elicit", "b", {"error": "down"})
    adapter = LLMSourceAdapter(llm)
    docs = adapter.fetch({"a", "b"})
    assert [d.knob_name for d in docs] == ["a"] and "b" in adapter.errors


def test_rule_check_bound_violation_and_type(catalog):
    spec = catalog["backend_flush_after"]
    assert rule_check(KnowledgeDoc(spec.name, "web", "Keep it at most 64MB."), spec).startswith("bound violation")
    assert rule_check(KnowledgeDoc(spec.name, "web", "Keep it at most 1MB."), spec) is None
    rpc = catalog["max_connections"]
    assert "type mismatch" in rule_check(KnowledgeDoc(rpc.name, "web", "set max_connections to 2.5"), rpc)


def test_noise_filter_discards_fig_example(catalog, demo_llm):
    spec = catalog["backend_flush_after"]
    prep = prepare_knob(spec.name, docs_for(spec.name), spec, demo_llm)
    assert [d.source for d in prep.kept] == ["manual"]
    (doc, verdict), = prep.discarded
    assert doc.source == "web" and "between 0 and 1" in doc.text and not verdict.keep
    assert "between 0 and 1" not in prep.entry.summary


def test_noise_filter_without_llm_is_low_confidence(catalog):
    spec = catalog["shared_buffers"]
    v = filter_noise(KnowledgeDoc(spec.name, "web", "Use 25% of RAM."), spec, None)
    assert v.keep and v.low_confidence


def test_consistency_loop_passes_on_second_attempt(catalog, demo_llm):
    prep = prepare_knob("shared_buffers", docs_for("shared_buffers"), catalog["shared_buffers"], demo_llm)
    entry = prep.entry
    assert entry.verified and entry.consistency_attempts == 2
    assert "40% of the RAM" in entry.summary and "OS cache" not in entry.summary


def test_consistency_rounds_are_bounded():
    docs = [KnowledgeDoc("k", "manual", "Set k to no more than 10MB."), KnowledgeDoc("k", "web", "Try 5MB.")]
    llm = ScriptedLLM().add("check_consistency", "k", {"consistent": False, "feedback": "no"}) \
        .add("revise_summary", "k", "still wrong")
    entry = consistency_check("wrong", docs, llm, max_rounds=3)
    assert not entry.verified and entry.consistency_attempts == 3
    assert len([c for c in llm.calls if c.task == "check_consistency"]) == 3
    with pytest.raises(ValueError):
        consistency_check("x", docs, llm, max_rounds=0)


def test_summary_fallbacks():
    docs = [KnowledgeDoc("k", "manual", "Set k to no more than 10MB."), KnowledgeDoc("k", "llm", "Keep k at most 1GB.")]
    assert summarize([], None) is None
    assert summarize(docs[:1], None) == docs[0].text
    # an LLM summary that keeps the outranked bound is replaced by the priority merge
    llm = ScriptedLLM().add("summarize", "k", "Keep k at most 1GB.")
    assert summarize(docs, llm) == "Set k to no more than 10MB."


def test_knob_without_knowledge_has_no_entry(catalog):
    assert prepare_knob("work_mem", [], catalog["work_mem"], None).entry is None


def test_lake_round_trip(tmp_path):
    entry = TuningLakeEntry("k", "Use 4MB.", ["manual:k.txt"], 2, True)
    write_lake_entry(tmp_path, "postgres", entry)
    assert read_lake(tmp_path, "postgres") == {"k": entry}


# -- transformation -------------------------------------------------------------------


def vote_oracle(candidates):
    """Independent count: for every key, tally canonical JSON of non-absent values."""
    out = {}
    keys = set().union(*candidates)
    for key in keys:
        tally = Counter(json.dumps(c[key], sort_keys=True, separators=(",", ":"))
                        for c in candidates if c.get(key) not in (None, [], ""))
        if tally:
            best = max(tally.values())
            out[key] = json.loads(sorted(k for k, n in tally.items() if n == best)[0])
    return out


values = st.one_of(st.none(), st.integers(-3, 3), st.sampled_from(["a", "b", "25% of RAM"]),
                   st.lists(st.integers(0, 2), max_size=2))
cands = st.lists(st.dictionaries(st.sampled_from(["min_value", "max_value", "suggested_values"]), values),
                 min_size=1, max_size=7)


@settings(max_examples=1000, deadline=None)
@given(cands)
def test_majority_vote_matches_oracle(candidates):
    assert majority_vote(candidates) == vote_oracle(candidates)


def test_vote_tie_break_smallest_canonical_json():
    assert majority_vote([{"x": 5}, {"x": 10}]) == {"x": 10}  # "10" < "5"
    assert majority_vote([{"x": 2.0}, {"x": 2}, {"x": 1}]) == {"x": 2}


def test_sample_examples_distinct_and_bounded():
    pool = list(range(10))
    got = sample_examples(pool, 3, 7)
    assert len(set(got)) == 3 and got == sample_examples(pool, 3, 7)
    with pytest.raises(ValueError):
        sample_examples(pool, 11, 0)


def test_transform_shared_buffers_table_example(catalog, demo_llm, profile):
    entry = TuningLakeEntry("shared_buffers", "Set shared_buffers to 25% of the RAM, but no more than 40% of the RAM.")
    sk = transform(entry, catalog["shared_buffers"], demo_llm, seed=1)
    assert sk.min_value == "25% of RAM" and sk.max_value == "40% of RAM"
    assert sk.suggested_values == ["25% of RAM"] and sk.special_value is None
    view = build_views(catalog, {"shared_buffers"}, {"shared_buffers": sk}, profile)[0]
    assert (view.effective_min, view.effective_max) == (4 * GiB, round(0.4 * 16 * GiB))


def test_transform_without_entry_or_llm_answers(catalog):
    spec = catalog["work_mem"]
    assert transform(None, spec, ScriptedLLM()).is_empty
    entry = TuningLakeEntry("work_mem", "Use 4MB.")
    assert transform(entry, spec, ScriptedLLM()).is_empty


def test_transform_ensemble_is_seeded_and_varied(catalog, demo_llm):
    entry = TuningLakeEntry("shared_buffers", "Set shared_buffers to 25% of the RAM.")
    transform(entry, catalog["shared_buffers"], demo_llm, ensemble_size=5, seed=3)
    prompts = [c.prompt for c in demo_llm.calls if c.task == "range_and_suggested"]
    assert len(prompts) == 5 and len(set(prompts)) > 1
    other = ScriptedLLM.from_dir(DEMO / "llm")
    transform(entry, catalog["shared_buffers"], other, ensemble_size=5, seed=3)
    assert [c.prompt for c in other.calls] == [c.prompt for c in demo_llm.calls]


def test_validation_drops_illegal_attributes(catalog, profile):
    spec = catalog["max_connections"]
    sk = validate_structured(StructuredKnob(spec.name, [50, 10**9, "lots"], 500, 100,
                                            {"value": -5, "meaning": "x"}), spec, profile)
    assert sk.min_value is None and sk.max_value is None
    assert sk.suggested_values == [50] and sk.special_value is None
    b = validate_structured(StructuredKnob("enable_seqscan", ["off", "maybe"]), catalog["enable_seqscan"])
    assert b.suggested_values == [False]


def test_percent_expressions_kept_without_profile(catalog):
    sk = validate_structured(StructuredKnob("shared_buffers", ["25% of RAM"], "25% of RAM"), catalog["shared_buffers"])
    assert sk.suggested_values == ["25% of RAM"] and sk.min_value == "25% of RAM"


def test_structured_files_are_schema_checked(tmp_path):
    sk = StructuredKnob("k", [1, "4GB"], 0, "40% of RAM", {"value": 0, "meaning": "off"})
    write_structured(tmp_path, sk)
    assert read_structured(tmp_path) == {"k": sk}
    with pytest.raises(Exception):
        validate_schema({"name": "k"})
    assert STRUCTURED_KNOB_SCHEMA["additionalProperties"] is False
    assert canonical_json({"b": 1.0, "a": " x "}) == '{"a":"x","b":1}'


@pytest.mark.parametrize("advice", ["at most 64MB", "between 8MB and 32MB", "no more than 1GB", "at least 4GB"])
def test_discarded_docs_do_not_change_summary(catalog, advice):
    spec = catalog["backend_flush_after"]
    docs = [d for d in docs_for(spec.name) if d.source == "manual"]
    base = prepare_knob(spec.name, docs, spec, None).entry.summary
    noisy = prepare_knob(spec.name, docs + [KnowledgeDoc(spec.name, "web", f"Keep it {advice}.")], spec, None)
    assert noisy.discarded
    assert noisy.entry.summary == base


@pytest.mark.parametrize("value", ["4 GB", "8 GB", "20% of RAM", "60% of the RAM"])
def test_priority_dominance(value):
    manual = KnowledgeDoc("k", "manual", "Set k to no more than 40% of the RAM.")
    other = KnowledgeDoc("k", "llm", f"Set k to no more than {value}.")
    merged = merge_by_priority([other, manual])
    assert ("upper", "40%ofram") in extract_claims(merged)
    assert priority_violations(merged, [manual, other]) == []
