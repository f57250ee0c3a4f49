from __future__ import annotations

import json

import numpy as np
import pytest
from pydantic import ValidationError

from elicit.agents import (
    MANUAL_REASONING,
    GenerationRequest,
    generate_agents,
    generate_parallel,
    generate_serial,
    inject_manual,
    select_diverse,
)
from elicit.diversity import kmeans
from elicit.errors import DuplicateAgentNames, TooManySlotFailures, ValidationFailure
from elicit.mock import MALFORMED, MockProvider
from elicit.models import AgentProfile, EmbeddingVector, Origin
from elicit.prompts import data_json, steering_text

from conftest import make_gateway


def req(brief, n, strategy=Origin.serial, **kw):
    return GenerationRequest(brief=brief, n=n, strategy=strategy, **kw)


def agent(i: int) -> AgentProfile:
    return AgentProfile(name=f"a{i}", description=f"d{i}", reasoning="r", origin=Origin.parallel)


def test_serial_single_call_n_profiles(brief, gw, mock):
    agents = generate_serial(gw, req(brief, 3))
    assert len(agents) == 3 and len(mock.calls) == 1
    assert all(a.name and a.description and a.reasoning and a.origin is Origin.serial for a in agents)
    assert len({a.name for a in agents}) == 3


def test_serial_twenty_agents_one_call(brief, gw, mock):
    agents = generate_serial(gw, req(brief, 20))
    assert len(agents) == 20 and len(mock.calls) == 1


def test_serial_cap(brief, gw):
    with pytest.raises(ValidationFailure):
        generate_serial(gw, req(brief, 25), serial_cap=20)


def test_steering_is_verbatim_in_system_text(brief, gw, mock):
    steer = steering_text(brief)
    generate_serial(gw, req(brief, 3, steering_text=steer))
    system = mock.calls[0]["messages"][0]["content"]
    assert steer in system
    assert "The typical user would be a weekend camper" in system
    assert steer.startswith("You must create non-typical users based on the following description")


def _batch(names):
    return json.dumps({"agents": [{"name": n, "description": "d", "reasoning": "r"} for n in names]})


def test_serial_duplicate_names_reprompt_then_ok(brief):
    mock = MockProvider(0, [_batch(["A", "A", "B"]), _batch(["A", "C", "B"])])
    agents = generate_serial(make_gateway(mock), req(brief, 3))
    assert [a.name for a in agents] == ["A", "C", "B"] and len(mock.calls) == 2
    assert "A" in mock.calls[1]["messages"][-1]["content"]


def test_serial_duplicate_names_twice_fails(brief):
    mock = MockProvider(0, [_batch(["A", "A", "B"])] * 2)
    with pytest.raises(DuplicateAgentNames):
        generate_serial(make_gateway(mock), req(brief, 3))


def test_serial_wrong_count_is_schema_violation(brief):
    mock = MockProvider(0, [_batch(["A", "B"]), _batch(["A", "B", "C"])])
    agents = generate_serial(make_gateway(mock), req(brief, 3))
    assert len(agents) == 3


@pytest.mark.parametrize("n,strategy,factor,calls", [
    (20, Origin.parallel, None, 20),
    (20, Origin.parallel_filtered, 2.0, 40),
    (1, Origin.parallel, None, 1),
    (3, Origin.parallel_filtered, 1.5, 5),
])
def test_parallel_call_counts(brief, n, strategy, factor, calls):
    mock = MockProvider(0)
    out = generate_parallel(make_gateway(mock), req(brief, n, strategy, overgeneration_factor=factor))
    # name collisions between independent calls get extra ":rename" repair calls
    generation = [c for c in mock.calls if ":rename" not in c["key"]]
    assert len(out) == calls and len(generation) == calls
    assert sorted(c["key"] for c in generation) == [f"agents:{i:05d}" for i in range(calls)]
    assert all(a.origin is Origin.parallel for a in out)
    assert len({a.name for a in out}) == calls


def test_parallel_slot_failures(brief):
    def script(bad):
        return lambda call: MALFORMED if call["key"] in bad and ":rename" not in call["key"] else None

    gw = make_gateway(MockProvider(0, script({"agents:00003"})), max_attempts=1)
    assert len(generate_parallel(gw, req(brief, 10, Origin.parallel))) == 9
    gw = make_gateway(MockProvider(0, script({"agents:00003", "agents:00004"})), max_attempts=1)
    with pytest.raises(TooManySlotFailures):
        generate_parallel(gw, req(brief, 10, Origin.parallel))


def test_parallel_duplicate_gets_rename(brief):
    same = json.dumps({"name": "Hunter", "description": "d", "reasoning": "r"})
    mock = MockProvider(0, lambda c: same if ":rename" not in c["key"] else None)
    out = generate_parallel(make_gateway(mock), req(brief, 3, Origin.parallel))
    assert out[0].name == "Hunter" and len({a.name for a in out}) == 3
    assert sum(":rename" in c["key"] for c in mock.calls) == 2


def test_request_invariants(brief):
    with pytest.raises(ValidationError):
        req(brief, 5, Origin.parallel_filtered)
    with pytest.raises(ValidationError):
        req(brief, 5, Origin.parallel, overgeneration_factor=2.0)
    with pytest.raises(ValidationError):
        req(brief, 5, Origin.manual)
    with pytest.raises(ValidationError):
        req(brief, 0)


def test_select_diverse_two_blobs():
    agents = [agent(i) for i in range(4)]
    emb = [EmbeddingVector.of([x]) for x in (0.0, 1.0, 10.0, 11.0)]
    out = select_diverse(agents, emb, 2, seed=0)
    picked = {a.name for a in out}
    assert len(out) == 2 and picked & {"a0", "a1"} and picked & {"a2", "a3"}
    # equidistant members: the lower index wins
    assert picked == {"a0", "a2"}
    assert all(a.origin is Origin.parallel_filtered for a in out)


def test_select_diverse_k_equals_n_and_k_one():
    agents = [agent(i) for i in range(5)]
    X = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 3.0], [5.0, 5.0], [1.0, 1.0]])
    assert {a.name for a in select_diverse(agents, X, 5)} == {a.name for a in agents}
    (one,) = select_diverse(agents, X, 1)
    nearest = int(np.argmin(np.linalg.norm(X - X.mean(axis=0), axis=1)))
    assert one.name == f"a{nearest}"


def test_select_diverse_representatives_are_medoid_like():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 4))
    agents = [agent(i) for i in range(30)]
    out = select_diverse(agents, X, 6, seed=5)
    asg = kmeans(X, 6, seed=5)
    assert len(out) == 6 and len({a.name for a in out}) == 6
    for j, a in enumerate(out):
        i = int(a.name[1:])
        members = asg.members(j)
        d = np.linalg.norm(X[members] - asg.centroids[j], axis=1)
        assert i in members and np.linalg.norm(X[i] - asg.centroids[j]) == pytest.approx(d.min())


def test_select_diverse_preconditions():
    with pytest.raises(ValidationFailure):
        select_diverse([agent(0)], [[0.0], [1.0]], 1)
    with pytest.raises(ValidationFailure):
        select_diverse([agent(0)], [[0.0]], 2)


def test_generate_filtered_end_to_end(brief):
    mock = MockProvider(2)
    gw = make_gateway(mock)
    out = generate_agents(gw, req(brief, 5, Origin.parallel_filtered, overgeneration_factor=2.0, seed=2))
    generation = [c for c in mock.calls if ":rename" not in c["key"]]
    assert len(out) == 5 and len(generation) == 10 and len(mock.embed_calls) == 1
    assert len(mock.embed_calls[0]) == 10
    assert all(a.origin is Origin.parallel_filtered for a in out)


@pytest.mark.parametrize("strategy,factor", [(Origin.serial, None), (Origin.parallel, None),
                                             (Origin.parallel_filtered, 2.0)])
def test_strategies_replay_stable(brief, strategy, factor):
    def run():
        gw = make_gateway(MockProvider(11), max_in_flight=6)
        return generate_agents(gw, req(brief, 6, strategy, overgeneration_factor=factor, seed=11))

    assert run() == run()


def test_inject_manual_table_entries(brief):
    entries = [(e["name"], e["description"]) for e in data_json("manual_elu_agents.json")]
    agents = inject_manual(brief, entries)
    assert len(agents) == 20
    assert all(a.origin is Origin.manual and a.reasoning == MANUAL_REASONING for a in agents)
    assert "Elderly with arthritis" in {a.name for a in agents}
    assert len(inject_manual(brief, [("Hunter", "sets up a tent in dark")])) == 1
    with pytest.raises(DuplicateAgentNames):
        inject_manual(brief, [("Hunter", "x"), ("Hunter", "y")])
    with pytest.raises(ValidationFailure):
        inject_manual(brief, [])
