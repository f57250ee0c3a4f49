from __future__ import annotations

import json

import pytest
from pydantic import ValidationError

from elicit.errors import ProviderUnreachable, ValidationFailure
from elicit.experience import render_experience, simulate_experience
from elicit.interview import (
    Question,
    build_question_pool,
    conduct_interview,
    dump_question_pool,
    interview_all,
    load_question_pool,
)
from elicit.mock import MockProvider
from elicit.models import AgentProfile, DesignBrief, Origin, QuestionKind

from conftest import make_gateway

AGENT = AgentProfile(name="Hunter", description="sets up a tent in dark", reasoning="extreme usage",
                     origin=Origin.manual)


@pytest.fixture
def experience(brief):
    return simulate_experience(make_gateway(MockProvider(9)), brief, AGENT)


def test_tent_pool_has_twelve_questions(brief):
    pool = build_question_pool(brief)
    assert len(pool) == 12
    assert pool[0].kind is QuestionKind.freestyle
    assert pool[0].text == "If you were to purchase an ideal tent, what main characteristics would you look for?"
    assert [q.category for q in pool[1:]] == list(brief.categories)
    assert pool[1].text == ("Focusing specifically on the size, aspect of tent, can you tell me your needs and "
                            "any innovative insights to address those needs?")


def test_pool_without_freestyle():
    pool = build_question_pool(DesignBrief(product_name="tent", categories=("size",)), include_freestyle=False)
    assert len(pool) == 1 and pool[0].category == "size"


def test_pool_requires_categories():
    with pytest.raises(ValidationFailure):
        build_question_pool(DesignBrief(product_name="tent"))


def test_question_invariants():
    with pytest.raises(ValidationError):
        Question(id="q", kind=QuestionKind.categorical, category="weight", text="Tell me about the size.")
    with pytest.raises(ValidationError):
        Question(id="q", kind=QuestionKind.freestyle, category="size", text="size?")


def test_pool_file_roundtrip(tmp_path, brief):
    pool = build_question_pool(brief)
    path = tmp_path / "q.json"
    path.write_text(dump_question_pool(pool))
    assert load_question_pool(path, brief) == pool
    bad = [q.model_dump(mode="json") for q in pool[:2]] * 2
    path.write_text(json.dumps(bad))
    with pytest.raises(ValidationFailure):
        load_question_pool(path, brief)
    stray = [{"id": "x", "kind": "categorical", "category": "colour", "text": "the colour?"}]
    path.write_text(json.dumps(stray))
    with pytest.raises(ValidationFailure):
        load_question_pool(path, brief)


def test_interview_order_and_context(brief, experience):
    mock = MockProvider(1)
    pool = build_question_pool(brief)
    t = conduct_interview(make_gateway(mock), AGENT, experience, pool, brief=brief)
    assert t.complete and [qa.question_id for qa in t.qas] == [q.id for q in pool]
    assert len(mock.calls) == 12
    exp_text = render_experience(experience)
    for i, call in enumerate(mock.calls):
        msgs = call["messages"]
        assert AGENT.description in msgs[0]["content"]          # persona
        assert exp_text in msgs[1]["content"]                    # experience
        assert msgs[-1]["content"] == f"Question: {pool[i].text}"
        if i:
            history = msgs[2]["content"]
            for qa in t.qas[:i]:                                 # every earlier answer, verbatim
                assert qa.answer_text in history and qa.question_text in history
    # question 5 sees answers 1-4 in order
    history = mock.calls[4]["messages"][2]["content"]
    positions = [history.index(qa.answer_text) for qa in t.qas[:4]]
    assert positions == sorted(positions)


def test_context_monotone(brief, experience):
    mock = MockProvider(1)
    conduct_interview(make_gateway(mock), AGENT, experience, build_question_pool(brief), brief=brief)
    hist = [c["messages"][2]["content"] if len(c["messages"]) > 3 else "" for c in mock.calls]
    for prev, nxt in zip(hist[1:], hist[2:]):
        assert nxt.startswith(prev)


def test_failure_leaves_partial_transcript(brief, experience):
    mock = MockProvider(1, lambda c: ProviderUnreachable("down") if c["key"].endswith(":003") else None)
    t = conduct_interview(make_gateway(mock), AGENT, experience, build_question_pool(brief), brief=brief,
                          key="iv")
    assert not t.complete and len(t.qas) == 3


def test_preconditions(brief, experience, gw):
    with pytest.raises(ValidationFailure):
        conduct_interview(gw, AGENT, experience, [], brief=brief)
    other = AGENT.model_copy(update={"name": "Other"})
    with pytest.raises(ValidationFailure):
        conduct_interview(gw, other, experience, build_question_pool(brief), brief=brief)


def test_interview_all_order(brief):
    agents = [AGENT.model_copy(update={"name": f"agent {i}"}) for i in range(5)]
    gw = make_gateway(MockProvider(2), max_in_flight=5)
    exps = [simulate_experience(gw, brief, a) for a in agents]
    pool = build_question_pool(brief)[:3]
    out = interview_all(gw, agents, exps, pool, brief=brief)
    assert [t.agent_name for t in out] == [a.name for a in agents]
    with pytest.raises(ValidationFailure):
        interview_all(gw, agents, exps[:-1], pool, brief=brief)
