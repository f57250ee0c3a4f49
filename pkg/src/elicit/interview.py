"""Question pools and contextualized per-agent interviews."""

from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Sequence

from pydantic import BaseModel, Field, TypeAdapter, field_validator, model_validator

from .errors import ProviderError, ValidationFailure
from .experience import persona_fields, render_experience
from .gateway import Gateway
from .models import (
    AgentProfile,
    DesignBrief,
    InterviewQA,
    InterviewTranscript,
    ProductExperience,
    QuestionKind,
    Record,
    canonical_json,
    require,
)
from .prompts import DEFAULT_TEMPLATES, Templates

logger = logging.getLogger(__name__)


class Question(Record):
    id: str
    kind: QuestionKind
    category: str | None = None
    text: str

    @field_validator("id", "text")
    @classmethod
    def _non_empty(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("must be non-empty")
        return v

    @model_validator(mode="after")
    def _category(self) -> Question:
        if self.kind is QuestionKind.categorical:
            if not self.category:
                raise ValueError("categorical questions need a category")
            if self.category.lower() not in self.text.lower():
                raise ValueError(f"question text must mention its category {self.category!r}")
        elif self.category is not None:
            raise ValueError("freestyle questions carry no category")
        return self


class InterviewAnswer(BaseModel):
    answer: str = Field(min_length=1)


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_")


def build_question_pool(
    brief: DesignBrief,
    include_freestyle: bool = True,
    *,
    templates: Templates = DEFAULT_TEMPLATES,
) -> list[Question]:
    """Optional freestyle question, then one question per brief category."""
    require(len(brief.categories) > 0, "the brief lists no interview categories")
    pool = []
    if include_freestyle:
        pool.append(
            Question(
                id="freestyle",
                kind=QuestionKind.freestyle,
                text=templates.render("question_freestyle", product=brief.product_name),
            )
        )
    for cat in brief.categories:
        pool.append(
            Question(
                id=_slug(cat),
                kind=QuestionKind.categorical,
                category=cat,
                text=templates.render("question_categorical", product=brief.product_name, category=cat),
            )
        )
    check_pool(pool, brief)
    return pool


def check_pool(pool: Sequence[Question], brief: DesignBrief) -> None:
    ids = [q.id for q in pool]
    require(len(set(ids)) == len(ids), f"question ids must be unique: {ids}")
    for q in pool:
        if q.category is not None:
            require(q.category in brief.categories, f"category {q.category!r} is not in the brief")


def load_question_pool(path: str | Path, brief: DesignBrief) -> list[Question]:
    pool = TypeAdapter(list[Question]).validate_json(Path(path).read_text(encoding="utf-8"))
    require(len(pool) > 0, "question pool file is empty")
    check_pool(pool, brief)
    return pool


def dump_question_pool(pool: Sequence[Question]) -> str:
    return canonical_json([q.model_dump(mode="json") for q in pool])


def history_block(qas: Sequence[InterviewQA]) -> str:
    lines = ["Interview so far:"]
    for qa in qas:
        lines += [f"Q: {qa.question_text}", f"A: {qa.answer_text}"]
    return "\n".join(lines)


def conduct_interview(
    gw: Gateway,
    agent: AgentProfile,
    experience: ProductExperience,
    pool: Sequence[Question],
    *,
    brief: DesignBrief,
    templates: Templates = DEFAULT_TEMPLATES,
    key: str | None = None,
) -> InterviewTranscript:
    """Ask the pool in order, one call per question.

    Each prompt carries the persona (system text), then the full experience,
    then every earlier Q&A of this interview. A provider failure stops the
    interview and returns the partial transcript with ``complete=False``.
    """
    require(len(pool) > 0, "question pool is empty")
    require(experience.agent_name == agent.name,
            f"experience belongs to {experience.agent_name!r}, not {agent.name!r}")
    check_pool(pool, brief)
    system = templates.render(
        "interview", product=brief.product_name, brief=brief.product_description, **persona_fields(agent)
    )
    experience_turn = "Your product experience:\n" + render_experience(experience)
    key = key or f"interviews:{agent.name}"
    qas: list[InterviewQA] = []
    for i, q in enumerate(pool):
        turns = [experience_turn]
        if qas:
            turns.append(history_block(qas))
        turns.append(f"Question: {q.text}")
        try:
            ans, _ = gw.chat_structured(system, turns, InterviewAnswer, key=f"{key}:{i:03d}")
        except ProviderError as exc:
            logger.error("interview of %s stopped at question %s: %s", agent.name, q.id, exc)
            return InterviewTranscript(agent_name=agent.name, qas=tuple(qas), complete=False)
        qas.append(
            InterviewQA(
                question_id=q.id,
                question_text=q.text,
                answer_text=ans.answer,
                kind=q.kind,
                category=q.category,
            )
        )
    return InterviewTranscript(agent_name=agent.name, qas=tuple(qas), complete=True)


def interview_all(
    gw: Gateway,
    agents: Sequence[AgentProfile],
    experiences: Sequence[ProductExperience],
    pool: Sequence[Question],
    *,
    brief: DesignBrief,
    templates: Templates = DEFAULT_TEMPLATES,
) -> list[InterviewTranscript]:
    """Interviews run concurrently across agents; results follow agent order."""
    by_name = {e.agent_name: e for e in experiences}
    missing = [a.name for a in agents if a.name not in by_name]
    if missing:
        raise ValidationFailure(f"no product experience for {missing}")
    return gw.map(
        lambda ia: conduct_interview(
            gw, ia[1], by_name[ia[1].name], pool, brief=brief, templates=templates,
            key=f"interviews:{ia[0]:05d}",
        ),
        list(enumerate(agents)),
    )
