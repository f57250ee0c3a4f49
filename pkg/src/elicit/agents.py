"""Simulated-user generation: serial, parallel, diverse filtering, manual."""

from __future__ import annotations

import logging
import math
from typing import Any, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, create_model, model_validator

from .diversity import as_matrix, kmeans
from .errors import DegenerateClustering, DuplicateAgentNames, TooManySlotFailures, ValidationFailure
from .gateway import Gateway
from .models import AgentProfile, DesignBrief, EmbeddingVector, Origin, ensure_unique_names, require
from .prompts import DEFAULT_TEMPLATES, Templates

logger = logging.getLogger(__name__)

MANUAL_REASONING = "manually specified empathic lead user"
DEFAULT_SERIAL_CAP = 20
DEFAULT_OVERGENERATION = 2.0


class GenerationRequest(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    brief: DesignBrief
    n: int = Field(ge=1)
    strategy: Origin = Origin.serial
    steering_text: str | None = None
    overgeneration_factor: float | None = Field(default=None, ge=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def _factor_iff_filtered(self) -> GenerationRequest:
        if self.strategy is Origin.manual:
            raise ValueError("manual agents are injected, not generated")
        if (self.overgeneration_factor is not None) != (self.strategy is Origin.parallel_filtered):
            raise ValueError("overgeneration_factor is required iff strategy is parallel_filtered")
        return self


class AgentDraft(BaseModel):
    name: str = Field(min_length=1)
    description: str = Field(min_length=1)
    reasoning: str = Field(min_length=1)


class AgentBatch(BaseModel):
    agents: list[AgentDraft]


def _batch_schema(n: int) -> type[AgentBatch]:
    return create_model(
        "AgentBatch", agents=(list[AgentDraft], Field(min_length=n, max_length=n)), __base__=AgentBatch
    )


def _system_text(templates: Templates, name: str, req: GenerationRequest) -> str:
    return templates.render(
        name,
        product=req.brief.product_name,
        brief=req.brief.product_description,
        n=req.n,
        steering=req.steering_text or "",
    )


def _profile(d: AgentDraft, origin: Origin) -> AgentProfile:
    return AgentProfile(name=d.name.strip(), description=d.description, reasoning=d.reasoning, origin=origin)


def _dupes(names: Sequence[str]) -> list[str]:
    return sorted({n for n in names if list(names).count(n) > 1})


def generate_serial(
    gw: Gateway,
    req: GenerationRequest,
    *,
    serial_cap: int = DEFAULT_SERIAL_CAP,
    templates: Templates = DEFAULT_TEMPLATES,
) -> list[AgentProfile]:
    """Generate ``req.n`` agents in one context-accumulating call."""
    require(req.strategy is Origin.serial, "generate_serial needs strategy=serial")
    require(req.n <= serial_cap, f"serial generation is capped at {serial_cap} agents, asked for {req.n}")
    system = _system_text(templates, "agents_serial", req)
    turns = [f"Generate the {req.n} user agents now."]
    schema = _batch_schema(req.n)
    batch, _ = gw.chat_structured(system, turns, schema, key="agents:serial")
    names = [d.name.strip() for d in batch.agents]
    dupes = _dupes(names)
    if dupes:
        logger.info("serial generation repeated names %s; reprompting once", dupes)
        turns.append(
            "These names were used more than once: "
            + ", ".join(dupes)
            + ". Regenerate the complete list so that every name is unique."
        )
        batch, _ = gw.chat_structured(system, turns, schema, key="agents:serial:rename")
        names = [d.name.strip() for d in batch.agents]
        if _dupes(names):
            raise DuplicateAgentNames(names)
    return [_profile(d, Origin.serial) for d in batch.agents]


def generate_parallel(
    gw: Gateway,
    req: GenerationRequest,
    *,
    max_failed_fraction: float = 0.10,
    templates: Templates = DEFAULT_TEMPLATES,
) -> list[AgentProfile]:
    """Generate agents with independent single-agent calls.

    Issues ``ceil(n * factor)`` calls (factor 1 for plain parallel). Slots
    whose call fails are dropped unless more than ``max_failed_fraction`` of
    them fail. Later slots that repeat an earlier name get one reprompt that
    lists the names already taken.
    """
    require(req.strategy in (Origin.parallel, Origin.parallel_filtered),
            "generate_parallel needs strategy parallel or parallel_filtered")
    factor = req.overgeneration_factor or 1.0
    m = math.ceil(req.n * factor - 1e-9)
    system = _system_text(templates, "agents_parallel", req)
    turn = "Generate the user agent now."

    def one(i: int) -> AgentDraft:
        return gw.chat_structured(system, [turn], AgentDraft, key=f"agents:{i:05d}")[0]

    results = gw.map_settled(one, range(m))
    failed = [i for i, r in enumerate(results) if isinstance(r, BaseException)]
    if len(failed) > max_failed_fraction * m:
        raise TooManySlotFailures(f"{len(failed)} of {m} agent slots failed") from results[failed[0]]
    drafts: list[AgentDraft] = []
    taken: set[str] = set()
    for i, r in enumerate(results):
        if isinstance(r, BaseException):
            logger.warning("agent slot %d failed: %s", i, r)
            continue
        if r.name.strip() in taken:
            note = "These names are already taken, choose a different one: " + ", ".join(sorted(taken))
            r = gw.chat_structured(system, [turn, note], AgentDraft, key=f"agents:{i:05d}:rename")[0]
            if r.name.strip() in taken:
                raise DuplicateAgentNames([r.name.strip()])
        taken.add(r.name.strip())
        drafts.append(r)
    return [_profile(d, Origin.parallel) for d in drafts]


def select_diverse(
    agents: Sequence[AgentProfile],
    embeddings: Sequence[EmbeddingVector] | Any,
    k: int,
    seed: int = 0,
) -> list[AgentProfile]:
    """Keep one agent per k-means cluster of the description embeddings.

    The representative is the member nearest its centroid (ties to the lowest
    input index); output follows cluster id.
    """
    X = as_matrix(embeddings)
    require(len(agents) == len(X), "one embedding per agent required")
    require(1 <= k <= len(agents), f"k must be in [1, {len(agents)}], got {k}")
    assignment = kmeans(X, k, seed)
    out = []
    for j in range(k):
        members = assignment.members(j)
        if len(members) == 0:
            raise DegenerateClustering(f"cluster {j} is empty")
        d = np.linalg.norm(X[members] - assignment.centroids[j], axis=1)
        pick = int(members[int(np.argmin(d))])
        out.append(agents[pick].model_copy(update={"origin": Origin.parallel_filtered}))
    return out


def generate_agents(
    gw: Gateway,
    req: GenerationRequest,
    *,
    serial_cap: int = DEFAULT_SERIAL_CAP,
    max_failed_fraction: float = 0.10,
    templates: Templates = DEFAULT_TEMPLATES,
) -> list[AgentProfile]:
    """Run the strategy named by ``req.strategy`` end to end."""
    if req.strategy is Origin.serial:
        agents = generate_serial(gw, req, serial_cap=serial_cap, templates=templates)
    else:
        agents = generate_parallel(gw, req, max_failed_fraction=max_failed_fraction, templates=templates)
        if req.strategy is Origin.parallel_filtered:
            vectors = gw.embed([a.description for a in agents], key="agents:embed")
            agents = select_diverse(agents, vectors, min(req.n, len(agents)), req.seed)
    ensure_unique_names(agents)
    return agents


def inject_manual(brief: DesignBrief, entries: Sequence[tuple[str, str]]) -> list[AgentProfile]:
    """Wrap hand-written (name, description) pairs as agent profiles."""
    if not entries:
        raise ValidationFailure("at least one manual agent is required")
    agents = [
        AgentProfile(name=name, description=desc, reasoning=MANUAL_REASONING, origin=Origin.manual)
        for name, desc in entries
    ]
    ensure_unique_names(agents)
    return agents
