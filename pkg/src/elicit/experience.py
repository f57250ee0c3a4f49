"""Simulated product experience as Action/Observation/Challenge steps."""

from __future__ import annotations

from typing import Sequence

from pydantic import BaseModel, Field, create_model

from .errors import StepCountOutOfRange
from .gateway import Gateway
from .models import AgentProfile, DesignBrief, ExperienceStep, ProductExperience, require
from .prompts import DEFAULT_TEMPLATES, Templates

DEFAULT_MIN_STEPS = 3
DEFAULT_MAX_STEPS = 6


class StepDraft(BaseModel):
    action: str = Field(min_length=1)
    observation: str = Field(min_length=1)
    challenge: str = Field(min_length=1)


class ExperienceDraft(BaseModel):
    steps: list[StepDraft]


def _schema(min_steps: int, max_steps: int) -> type[ExperienceDraft]:
    # Bounds are advertised in the schema but checked here, so an
    # out-of-range count gets its own reprompt and error type.
    return create_model(
        "ExperienceDraft",
        steps=(
            list[StepDraft],
            Field(min_length=1, json_schema_extra={"minItems": min_steps, "maxItems": max_steps}),
        ),
        __base__=ExperienceDraft,
    )


def persona_fields(agent: AgentProfile) -> dict[str, str]:
    return {"name": agent.name, "description": agent.description, "reasoning": agent.reasoning}


def simulate_experience(
    gw: Gateway,
    brief: DesignBrief,
    agent: AgentProfile,
    min_steps: int = DEFAULT_MIN_STEPS,
    max_steps: int = DEFAULT_MAX_STEPS,
    *,
    templates: Templates = DEFAULT_TEMPLATES,
    key: str | None = None,
) -> ProductExperience:
    require(1 <= min_steps <= max_steps, f"need 1 <= min_steps <= max_steps, got [{min_steps}, {max_steps}]")
    system = templates.render(
        "experience",
        product=brief.product_name,
        brief=brief.product_description,
        min_steps=min_steps,
        max_steps=max_steps,
        **persona_fields(agent),
    )
    turns = [f"Describe your experience with the {brief.product_name}, step by step."]
    schema = _schema(min_steps, max_steps)
    key = key or f"experiences:{agent.name}"
    draft, _ = gw.chat_structured(system, turns, schema, key=key)
    if not min_steps <= len(draft.steps) <= max_steps:
        turns.append(
            f"You gave {len(draft.steps)} steps; give between {min_steps} and {max_steps} steps."
        )
        draft, _ = gw.chat_structured(system, turns, schema, key=f"{key}:recount")
        if not min_steps <= len(draft.steps) <= max_steps:
            raise StepCountOutOfRange(
                f"{agent.name}: {len(draft.steps)} steps, expected [{min_steps}, {max_steps}]"
            )
    steps = tuple(
        ExperienceStep(index=i, action=s.action, observation=s.observation, challenge=s.challenge)
        for i, s in enumerate(draft.steps, 1)
    )
    return ProductExperience(agent_name=agent.name, steps=steps)


def simulate_all(
    gw: Gateway,
    brief: DesignBrief,
    agents: Sequence[AgentProfile],
    min_steps: int = DEFAULT_MIN_STEPS,
    max_steps: int = DEFAULT_MAX_STEPS,
    *,
    templates: Templates = DEFAULT_TEMPLATES,
) -> list[ProductExperience]:
    """Concurrent per-agent simulation, returned in agent order."""
    return gw.map(
        lambda ia: simulate_experience(
            gw, brief, ia[1], min_steps, max_steps, templates=templates, key=f"experiences:{ia[0]:05d}"
        ),
        list(enumerate(agents)),
    )


def render_experience(exp: ProductExperience) -> str:
    lines = []
    for s in exp.steps:
        lines += [
            f"Step {s.index}:",
            f"- Action: {s.action}",
            f"- Observation: {s.observation}",
            f"- Challenge: {s.challenge}",
        ]
    return "\n".join(lines)
