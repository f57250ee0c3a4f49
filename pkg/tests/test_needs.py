from __future__ import annotations

import json

import pytest
from pydantic import ValidationError

from elicit.errors import MissingLabel, ValidationFailure
from elicit.gateway import json_schema
from elicit.mock import MALFORMED, MockProvider
from elicit.models import (
    ClassificationMode,
    DesignBrief,
    InterviewQA,
    InterviewTranscript,
    NeedLabel,
    NeedStatement,
    QuestionKind,
    RunManifest,
)
from elicit.needs import (
    LatentCriteria,
    LatentVerdictCoT,
    NeedsReport,
    classify_all,
    classify_latent,
    dedupe_needs,
    extract_needs,
    extract_needs_detailed,
    generate_report,
)
from elicit.prompts import default_criteria

from conftest import make_gateway

Z, C, COT = ClassificationMode.zero_shot, ClassificationMode.criteria, ClassificationMode.criteria_cot

SETUP_ANSWER = ("Setting up in the dark with stiff hands took far too long; a self-erecting tent structure "
                "that opens by itself would change everything for me.")


def qa(qid, answer, cat=None):
    kind = QuestionKind.categorical if cat else QuestionKind.freestyle
    return InterviewQA(question_id=qid, question_text=f"question {qid}?", answer_text=answer, kind=kind,
                       category=cat)


def transcript(n=3, name="Hunter"):
    return InterviewTranscript(agent_name=name, qas=tuple(qa(f"q{i}", f"answer {i}") for i in range(n)))


def need(i, agent="Hunter"):
    return NeedStatement(id=f"{agent}-q-{i}", agent_name=agent, source_question_id="q", text=f"need {i}")


def manifest():
    return RunManifest(run_id="run1", brief=DesignBrief(product_name="tent"), seed=7, provider_id="mock:7",
                       created_at="1970-01-01T00:00:00Z")


# -- extraction --------------------------------------------------------------------


def test_default_criteria_asset():
    text = default_criteria()
    assert text.startswith("Label the reported customer need as a latent need")
    for cat in ("size", "shape", "weight", "material", "safety", "durability", "aesthetics", "ergonomics",
                "cost", "setup", "transport"):
        assert cat in text


def test_extraction_one_call_per_qa_with_ids(brief):
    mock = MockProvider(0, [json.dumps({"needs": ["a", "b"]}), json.dumps({"needs": []}),
                            json.dumps({"needs": ["c"]})])
    needs = extract_needs(make_gateway(mock), transcript(), brief=brief)
    assert len(mock.calls) == 3
    assert [n.id for n in needs] == ["Hunter-q0-1", "Hunter-q0-2", "Hunter-q2-1"]
    assert [n.source_question_id for n in needs] == ["q0", "q0", "q2"]


def test_self_erecting_need_scripted(brief):
    t = InterviewTranscript(agent_name="Elderly with arthritis", qas=(qa("setup", SETUP_ANSWER, "setup"),))
    mock = MockProvider(0, [json.dumps({"needs": ["A self-erecting tent structure that sets itself up"]})])
    (n,) = extract_needs(make_gateway(mock), t, brief=brief)
    assert "self-erecting tent structure" in n.text
    assert SETUP_ANSWER in mock.calls[0]["messages"][-1]["content"]


def test_source_ids_resolve_for_full_transcript(brief, gw):
    t = InterviewTranscript(agent_name="Hunter", qas=tuple(qa(f"q{i}", f"answer {i}") for i in range(12)))
    needs = extract_needs(gw, t, brief=brief)
    qids = {x.question_id for x in t.qas}
    assert needs and all(n.source_question_id in qids for n in needs)
    assert len({n.id for n in needs}) == len(needs)


def test_extraction_skips_exhausted_qa(brief):
    mock = MockProvider(0, lambda c: MALFORMED if c["key"].endswith(":001") else None)
    out = extract_needs_detailed(make_gateway(mock), transcript(), brief=brief, key="x")
    assert out.partial and out.skipped_question_ids == ["q1"]
    assert all(n.source_question_id != "q1" for n in out.needs)


def test_extraction_needs_complete_transcript(brief, gw):
    with pytest.raises(ValidationFailure):
        extract_needs(gw, InterviewTranscript(agent_name="x", qas=(), complete=False), brief=brief)


def test_dedupe():
    a = NeedStatement(id="1", agent_name="A", source_question_id="q", text="Light  Weight")
    b = NeedStatement(id="2", agent_name="A", source_question_id="q", text="light weight")
    c = NeedStatement(id="3", agent_name="B", source_question_id="q", text="light weight")
    assert [n.id for n in dedupe_needs([a, b, c])] == ["1", "3"]


# -- classification -----------------------------------------------------------------

FOV = NeedStatement(id="p-1", agent_name="Photographer", source_question_id="shape",
                    text="wide angles would maximize the field of view for photography")
FLOOR = NeedStatement(id="h-1", agent_name="Hunter", source_question_id="durability",
                      text="tent floor that is resilient against tears")


def test_prompt_contents_per_mode(gw, mock):
    crit = LatentCriteria.default()
    classify_latent(gw, FOV, Z)
    classify_latent(gw, FOV, C, crit)
    classify_latent(gw, FOV, COT, crit)
    z, c, cot = (call["messages"] for call in mock.calls)
    assert crit.text not in z[0]["content"]
    assert crit.text in c[0]["content"] and crit.text in cot[0]["content"]
    assert "step-by-step" in cot[0]["content"] and "step-by-step" not in c[0]["content"]
    for msgs in (z, c, cot):
        assert msgs[-1]["content"] == f"Customer need: {FOV.text}"
        assert "Is this a latent need?" in msgs[0]["content"]
    assert all(call["temperature"] == 0.0 for call in mock.calls)


def test_criteria_presence_rules(gw):
    with pytest.raises(ValidationFailure):
        classify_latent(gw, FOV, C)
    with pytest.raises(ValidationFailure):
        classify_latent(gw, FOV, Z, LatentCriteria.default())


def test_cot_schema_orders_reasoning_first():
    props = list(json_schema(LatentVerdictCoT)["properties"])
    assert props == ["reasoning", "latent"]
    assert LatentVerdictCoT.model_validate_json('{"reasoning": "r", "latent": true}').latent
    with pytest.raises(ValidationError):
        LatentVerdictCoT.model_validate_json('{"latent": true, "reasoning": "r"}')


def test_table_examples_scripted():
    crit = LatentCriteria.default()
    mock = MockProvider(0, [
        json.dumps({"reasoning": "Field of view for photography falls outside the excluded categories.",
                    "latent": True}),
        json.dumps({"reasoning": "Tear resistance is a durability concern, an excluded category.",
                    "latent": False}),
    ])
    gw = make_gateway(mock)
    yes = classify_latent(gw, FOV, COT, crit)
    no = classify_latent(gw, FOV.model_copy(update={"text": FLOOR.text}), COT, crit)
    assert yes.latent and "categories" in yes.reasoning
    assert not no.latent and "durability" in no.reasoning


def test_verdict_first_cot_is_reprompted():
    mock = MockProvider(0, ['{"latent": true, "reasoning": "r"}', '{"reasoning": "r", "latent": true}'])
    label = classify_latent(make_gateway(mock), FOV, COT, LatentCriteria.default())
    assert label.latent and label.reasoning == "r" and len(mock.calls) == 2


def test_labels_deterministic():
    crit = LatentCriteria.default()
    needs = [need(i) for i in range(10)]
    run = lambda: classify_all(make_gateway(MockProvider(5), max_in_flight=4), needs, COT, crit)  # noqa: E731
    a, b = run(), run()
    assert a == b and all(lab.reasoning for lab in a)


# -- report ------------------------------------------------------------------------


def test_report_totals_reconcile():
    needs = [need(1, "A"), need(2, "A"), need(3, "B")]
    labels = [NeedLabel(need_id=n.id, latent=lat, mode=C) for n, lat in zip(needs, (True, False, True))]
    report, text = generate_report(needs, labels, manifest(), C, criteria=LatentCriteria.default())
    assert (report.totals.needs, report.totals.latent) == (3, 2)
    assert {a: b.latent_count for a, b in report.per_agent.items()} == {"A": 1, "B": 1}
    assert "Total needs: 3" in text and "Latent needs: 2" in text
    assert default_criteria() in text and '"run_id": "run1"' in text
    assert text.count("**[LATENT]**") == 2
    _, again = generate_report(needs, labels, manifest(), C, criteria=LatentCriteria.default())
    assert again == text


def test_report_zero_needs():
    report, text = generate_report([], [], manifest(), Z, agent_names=["A"])
    assert (report.totals.needs, report.totals.latent) == (0, 0)
    assert "## No needs extracted" in text


def test_report_label_problems():
    n = need(1)
    with pytest.raises(MissingLabel):
        generate_report([n], [NeedLabel(need_id=n.id, latent=True, mode=Z)], manifest(), C)
    with pytest.raises(MissingLabel):
        generate_report([n], [], manifest(), C)
    lab = NeedLabel(need_id=n.id, latent=True, mode=C)
    with pytest.raises(MissingLabel):
        generate_report([n], [lab, lab], manifest(), C)
    with pytest.raises(MissingLabel):
        generate_report([n], [lab, NeedLabel(need_id="ghost", latent=False, mode=C)], manifest(), C)


def test_report_model_rejects_inconsistent_totals():
    with pytest.raises(ValidationError):
        NeedsReport(run_id="r", per_agent={"A": {"needs": [need(1, "A")], "latent_count": 1}},
                    totals={"needs": 1, "latent": 0}, mode=C)
