"""Need extraction, latent-need classification and the final report."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

from pydantic import BaseModel, Field, field_validator, model_validator

from .errors import MissingLabel, SchemaExhausted
from .gateway import Gateway
from .models import (
    ClassificationMode,
    DesignBrief,
    InterviewTranscript,
    NeedLabel,
    NeedStatement,
    Record,
    RunManifest,
    require,
)
from .prompts import DEFAULT_TEMPLATES, Templates, default_criteria

logger = logging.getLogger(__name__)

CLASSIFY_TEMPERATURE = 0.0


class LatentCriteria(Record):
    text: str

    @field_validator("text")
    @classmethod
    def _text(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("criteria text must be non-empty")
        return v

    @classmethod
    def default(cls) -> LatentCriteria:
        return cls(text=default_criteria())


class NeedList(BaseModel):
    needs: list[str]

    @field_validator("needs")
    @classmethod
    def _non_empty(cls, v: list[str]) -> list[str]:
        if any(not s.strip() for s in v):
            raise ValueError("need statements must be non-empty")
        return v


class LatentVerdict(BaseModel):
    latent: bool


class LatentVerdictCoT(BaseModel):
    reasoning: str = Field(min_length=1)
    latent: bool

    @model_validator(mode="before")
    @classmethod
    def _reasoning_first(cls, data: Any) -> Any:
        if isinstance(data, dict) and "reasoning" in data and "latent" in data:
            keys = list(data)
            if keys.index("latent") < keys.index("reasoning"):
                raise ValueError("write the reasoning before the latent verdict")
        return data


# -- extraction ------------------------------------------------------------------


@dataclass
class Extraction:
    needs: list[NeedStatement]
    skipped_question_ids: list[str] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.skipped_question_ids)


def extract_needs_detailed(
    gw: Gateway,
    transcript: InterviewTranscript,
    *,
    brief: DesignBrief,
    templates: Templates = DEFAULT_TEMPLATES,
    key: str | None = None,
) -> Extraction:
    require(transcript.complete, f"transcript of {transcript.agent_name!r} is incomplete")
    system = templates.render("extract_needs", product=brief.product_name)
    key = key or f"needs:{transcript.agent_name}"
    out = Extraction(needs=[])
    for i, qa in enumerate(transcript.qas):
        turn = f"Question: {qa.question_text}\nAnswer: {qa.answer_text}"
        try:
            found, _ = gw.chat_structured(system, [turn], NeedList, key=f"{key}:{i:03d}")
        except SchemaExhausted as exc:
            logger.warning("skipping %s/%s: %s", transcript.agent_name, qa.question_id, exc)
            out.skipped_question_ids.append(qa.question_id)
            continue
        for ordinal, text in enumerate(found.needs, 1):
            out.needs.append(
                NeedStatement(
                    id=f"{transcript.agent_name}-{qa.question_id}-{ordinal}",
                    agent_name=transcript.agent_name,
                    source_question_id=qa.question_id,
                    text=text.strip(),
                )
            )
    return out


def extract_needs(
    gw: Gateway,
    transcript: InterviewTranscript,
    *,
    brief: DesignBrief,
    templates: Templates = DEFAULT_TEMPLATES,
    key: str | None = None,
) -> list[NeedStatement]:
    """One extraction call per Q&A; ids are ``{agent}-{question}-{ordinal}``."""
    return extract_needs_detailed(gw, transcript, brief=brief, templates=templates, key=key).needs


def dedupe_needs(needs: Sequence[NeedStatement]) -> list[NeedStatement]:
    """Drop repeats of the same normalized text within one agent."""
    seen: set[tuple[str, str]] = set()
    out = []
    for n in needs:
        norm = (n.agent_name, " ".join(n.text.lower().split()))
        if norm not in seen:
            seen.add(norm)
            out.append(n)
    return out


# -- classification -------------------------------------------------------------------


def classification_prompt(
    mode: ClassificationMode | str,
    criteria: LatentCriteria | None,
    templates: Templates = DEFAULT_TEMPLATES,
) -> tuple[str, type[BaseModel]]:
    mode = ClassificationMode(mode)
    if mode is ClassificationMode.zero_shot:
        require(criteria is None, "zero_shot classification takes no criteria")
        return templates.render("classify_zero_shot"), LatentVerdict
    require(criteria is not None, f"mode {mode.value} requires latent-need criteria")
    name = "classify_criteria" if mode is ClassificationMode.criteria else "classify_criteria_cot"
    schema = LatentVerdict if mode is ClassificationMode.criteria else LatentVerdictCoT
    return templates.render(name, criteria=criteria.text.strip()), schema


def classify_text(
    gw: Gateway,
    text: str,
    mode: ClassificationMode | str,
    criteria: LatentCriteria | None = None,
    *,
    templates: Templates = DEFAULT_TEMPLATES,
    key: str = "",
) -> tuple[bool, str | None]:
    system, schema = classification_prompt(mode, criteria, templates)
    verdict, _ = gw.chat_structured(
        system, [f"Customer need: {text}"], schema, temperature=CLASSIFY_TEMPERATURE, key=key
    )
    return verdict.latent, getattr(verdict, "reasoning", None)


def classify_latent(
    gw: Gateway,
    need: NeedStatement,
    mode: ClassificationMode | str,
    criteria: LatentCriteria | None = None,
    *,
    templates: Templates = DEFAULT_TEMPLATES,
    key: str | None = None,
) -> NeedLabel:
    """Label one need; chain-of-thought mode keeps the reasoning."""
    mode = ClassificationMode(mode)
    latent, reasoning = classify_text(
        gw, need.text, mode, criteria, templates=templates, key=key or f"classify:{need.id}"
    )
    return NeedLabel(need_id=need.id, latent=latent, mode=mode, reasoning=reasoning)


def classify_all(
    gw: Gateway,
    needs: Sequence[NeedStatement],
    mode: ClassificationMode | str,
    criteria: LatentCriteria | None = None,
    *,
    templates: Templates = DEFAULT_TEMPLATES,
) -> list[NeedLabel]:
    return gw.map(
        lambda iv: classify_latent(gw, iv[1], mode, criteria, templates=templates, key=f"classify:{iv[0]:06d}"),
        list(enumerate(needs)),
    )


# -- report ------------------------------------------------------------------------


class AgentNeeds(BaseModel):
    needs: list[NeedStatement]
    latent_count: int = Field(ge=0)


class Totals(BaseModel):
    needs: int = Field(ge=0)
    latent: int = Field(ge=0)


class NeedsReport(BaseModel):
    run_id: str
    per_agent: dict[str, AgentNeeds]
    totals: Totals
    mode: ClassificationMode

    @model_validator(mode="after")
    def _totals_reconcile(self) -> NeedsReport:
        if self.totals.needs != sum(len(a.needs) for a in self.per_agent.values()):
            raise ValueError("need total does not match per-agent counts")
        if self.totals.latent != sum(a.latent_count for a in self.per_agent.values()):
            raise ValueError("latent total does not match per-agent counts")
        return self


def generate_report(
    needs: Sequence[NeedStatement],
    labels: Sequence[NeedLabel],
    manifest: RunManifest,
    mode: ClassificationMode | str,
    *,
    criteria: LatentCriteria | None = None,
    agent_names: Sequence[str] = (),
) -> tuple[NeedsReport, str]:
    """Aggregate labelled needs per agent and render the Markdown report.

    ``agent_names`` fixes agent order and lists agents with no needs.
    """
    mode = ClassificationMode(mode)
    by_id: dict[str, NeedLabel] = {}
    for lab in labels:
        if lab.mode is not mode:
            raise MissingLabel(f"label for {lab.need_id!r} has mode {lab.mode.value}, expected {mode.value}")
        if lab.need_id in by_id:
            raise MissingLabel(f"need {lab.need_id!r} has more than one label")
        by_id[lab.need_id] = lab
    need_ids = {n.id for n in needs}
    unlabeled = [n.id for n in needs if n.id not in by_id]
    if unlabeled:
        raise MissingLabel(f"{len(unlabeled)} need(s) have no {mode.value} label, e.g. {unlabeled[0]!r}")
    stray = sorted(set(by_id) - need_ids)
    if stray:
        raise MissingLabel(f"labels refer to unknown needs, e.g. {stray[0]!r}")

    order = list(dict.fromkeys([*agent_names, *(n.agent_name for n in needs)]))
    grouped: dict[str, list[NeedStatement]] = {a: [] for a in order}
    for n in needs:
        grouped[n.agent_name].append(n)
    per_agent = {
        a: AgentNeeds(needs=ns, latent_count=sum(by_id[n.id].latent for n in ns)) for a, ns in grouped.items()
    }
    report = NeedsReport(
        run_id=manifest.run_id,
        per_agent=per_agent,
        totals=Totals(needs=len(needs), latent=sum(by_id[n.id].latent for n in needs)),
        mode=mode,
    )
    return report, render_report(report, by_id, manifest, criteria)


def render_report(
    report: NeedsReport,
    labels: dict[str, NeedLabel],
    manifest: RunManifest,
    criteria: LatentCriteria | None,
) -> str:
    out = [
        f"# Requirements elicitation report: {manifest.brief.product_name}",
        "",
        "## Summary",
        "",
        "| Agents | Needs | Latent needs |",
        "|---:|---:|---:|",
        f"| {len(report.per_agent)} | {report.totals.needs} | {report.totals.latent} |",
        "",
        f"Total needs: {report.totals.needs}",
        f"Latent needs: {report.totals.latent}",
        f"Classification mode: {report.mode.value}",
        "",
    ]
    if report.totals.needs == 0:
        out += ["## No needs extracted", "", "The interviews produced no need statements.", ""]
    else:
        out += ["## Needs by agent", ""]
        for agent, block in report.per_agent.items():
            out.append(f"### {agent} ({len(block.needs)} needs, {block.latent_count} latent)")
            out.append("")
            if not block.needs:
                out += ["No needs extracted for this agent.", ""]
                continue
            for n in block.needs:
                lab = labels[n.id]
                flag = "**[LATENT]** " if lab.latent else ""
                out.append(f"- {flag}{n.text} _(question: {n.source_question_id}; id: {n.id})_")
                if lab.reasoning:
                    out.append(f"  - Reasoning: {lab.reasoning}")
            out.append("")
    out += ["## Latent-need criteria", ""]
    if criteria is None:
        out += ["None (zero-shot classification).", ""]
    else:
        out += ["```text", criteria.text.strip(), "```", ""]
    meta = {
        "run_id": manifest.run_id,
        "seed": manifest.seed,
        "provider_id": manifest.provider_id,
        "created_at": manifest.created_at,
    }
    out += ["## Run metadata", "", "```json", json.dumps(meta, indent=2), "```", ""]
    return "\n".join(out)
