"""Shared domain records and their canonical JSON form.

Every record is an immutable pydantic model. Construction validates all
single-record invariants; cross-record rules (foreign keys between stages)
are enforced by the stage that builds the collection.
"""

from __future__ import annotations

import json
import math
from enum import Enum
from typing import Any, Iterable, Sequence, TypeVar

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator, model_validator

from .errors import DuplicateAgentNames, ValidationFailure

STAGES: tuple[str, ...] = ("agents", "experiences", "interviews", "needs", "metrics", "report")


class Origin(str, Enum):
    serial = "serial"
    parallel = "parallel"
    parallel_filtered = "parallel_filtered"
    manual = "manual"


class QuestionKind(str, Enum):
    freestyle = "freestyle"
    categorical = "categorical"


class ClassificationMode(str, Enum):
    zero_shot = "zero_shot"
    criteria = "criteria"
    criteria_cot = "criteria_cot"


class StageState(str, Enum):
    pending = "pending"
    done = "done"


class Record(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", use_enum_values=False)


def _non_empty(value: str, field: str) -> str:
    if not value or not value.strip():
        raise ValueError(f"{field} must be non-empty")
    return value


class DesignBrief(Record):
    product_name: str
    product_description: str = ""
    categories: tuple[str, ...] = ()
    typical_user_profile: str | None = None

    @field_validator("product_name")
    @classmethod
    def _name(cls, v: str) -> str:
        return _non_empty(v, "product_name")

    @field_validator("categories")
    @classmethod
    def _categories(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        for c in v:
            _non_empty(c, "category")
        if len(set(v)) != len(v):
            raise ValueError("categories must not contain duplicates")
        return v


class AgentProfile(Record):
    name: str
    description: str
    reasoning: str
    origin: Origin

    @field_validator("name", "description", "reasoning")
    @classmethod
    def _texts(cls, v: str, info) -> str:
        return _non_empty(v, info.field_name)


class ExperienceStep(Record):
    index: int = Field(ge=1)
    action: str
    observation: str
    challenge: str

    @field_validator("action", "observation", "challenge")
    @classmethod
    def _texts(cls, v: str, info) -> str:
        return _non_empty(v, info.field_name)


class ProductExperience(Record):
    agent_name: str
    steps: tuple[ExperienceStep, ...]

    @field_validator("steps")
    @classmethod
    def _steps(cls, v: tuple[ExperienceStep, ...]) -> tuple[ExperienceStep, ...]:
        if not v:
            raise ValueError("a product experience needs at least one step")
        if [s.index for s in v] != list(range(1, len(v) + 1)):
            raise ValueError("step indices must be contiguous from 1")
        return v


class InterviewQA(Record):
    question_id: str
    question_text: str
    answer_text: str
    kind: QuestionKind
    category: str | None = None

    @field_validator("answer_text")
    @classmethod
    def _answer(cls, v: str) -> str:
        return _non_empty(v, "answer_text")

    @model_validator(mode="after")
    def _category_iff_categorical(self) -> InterviewQA:
        if (self.kind is QuestionKind.categorical) != (self.category is not None):
            raise ValueError("category is required iff kind is categorical")
        return self


class InterviewTranscript(Record):
    agent_name: str
    qas: tuple[InterviewQA, ...] = ()
    complete: bool = True

    @field_validator("qas")
    @classmethod
    def _unique_ids(cls, v: tuple[InterviewQA, ...]) -> tuple[InterviewQA, ...]:
        ids = [qa.question_id for qa in v]
        if len(set(ids)) != len(ids):
            raise ValueError("question ids must be unique within a transcript")
        return v


class NeedStatement(Record):
    id: str
    agent_name: str
    source_question_id: str
    text: str

    @field_validator("text")
    @classmethod
    def _text(cls, v: str) -> str:
        return _non_empty(v, "text")


class NeedLabel(Record):
    need_id: str
    latent: bool
    mode: ClassificationMode
    reasoning: str | None = None

    @model_validator(mode="after")
    def _reasoning_for_cot(self) -> NeedLabel:
        if self.mode is ClassificationMode.criteria_cot and not (self.reasoning and self.reasoning.strip()):
            raise ValueError("criteria_cot labels require non-empty reasoning")
        return self


class EmbeddingVector(Record):
    values: tuple[float, ...]
    dim: int = Field(ge=1)

    @model_validator(mode="after")
    def _shape(self) -> EmbeddingVector:
        if self.dim != len(self.values):
            raise ValueError(f"dim={self.dim} but {len(self.values)} values")
        if not all(math.isfinite(x) for x in self.values):
            raise ValueError("embedding values must be finite")
        return self

    @classmethod
    def of(cls, values: Iterable[float]) -> EmbeddingVector:
        vals = tuple(float(x) for x in values)
        return cls(values=vals, dim=len(vals))


class RunManifest(Record):
    run_id: str
    brief: DesignBrief
    seed: int = Field(ge=0, lt=2**64)
    provider_id: str
    stage_status: dict[str, StageState] = Field(
        default_factory=lambda: {s: StageState.pending for s in STAGES}
    )
    created_at: str
    artifacts: dict[str, str] = Field(default_factory=dict)
    failed_stage: str | None = None
    error: str | None = None

    @model_validator(mode="after")
    def _stage_order(self) -> RunManifest:
        if list(self.stage_status) != list(STAGES):
            raise ValueError(f"stage_status must list stages in order {STAGES}")
        seen_pending = False
        for stage in STAGES:
            state = self.stage_status[stage]
            if state is StageState.done and seen_pending:
                raise ValueError(f"stage {stage!r} is done but an earlier stage is pending")
            seen_pending = seen_pending or state is StageState.pending
        if self.failed_stage is not None and self.failed_stage not in STAGES:
            raise ValueError(f"unknown failed_stage {self.failed_stage!r}")
        return self

    def is_done(self, stage: str) -> bool:
        return self.stage_status[stage] is StageState.done

    def first_pending(self) -> str | None:
        for stage in STAGES:
            if not self.is_done(stage):
                return stage
        return None


# -- canonical JSON ------------------------------------------------------------

R = TypeVar("R", bound=Record)


def _revalidate(record: Record) -> dict[str, Any]:
    # model_construct() can bypass validation; never persist such a record.
    data = record.model_dump(mode="json")
    type(record).model_validate(data)
    return data


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def dumps(record: Record) -> str:
    return canonical_json(_revalidate(record))


def loads(cls: type[R], text: str) -> R:
    return cls.model_validate_json(text)


def dumps_list(records: Sequence[Record]) -> str:
    return canonical_json([_revalidate(r) for r in records])


def loads_list(cls: type[R], text: str) -> list[R]:
    return list(TypeAdapter(list[cls]).validate_json(text))


def roundtrip(record: R) -> R:
    """Serialize and deserialize ``record``; returns an equal record."""
    return loads(type(record), dumps(record))


def ensure_unique_names(agents: Sequence[AgentProfile]) -> None:
    names = [a.name for a in agents]
    dupes = [n for n in names if names.count(n) > 1]
    if dupes:
        raise DuplicateAgentNames(dupes)


def require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationFailure(message)
