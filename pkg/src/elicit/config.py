"""Run configuration: TOML file plus ``key=value`` overrides."""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any, Literal, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .agents import DEFAULT_OVERGENERATION, DEFAULT_SERIAL_CAP
from .errors import ConfigError
from .evaluation import PricingModel
from .experience import DEFAULT_MAX_STEPS, DEFAULT_MIN_STEPS
from .gateway import ProviderConfig, RetryPolicy
from .models import ClassificationMode, DesignBrief, Origin
from .prompts import tent_brief

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RetrySection(_Section):
    max_attempts: int = Field(default=3, ge=1)
    on_schema_violation: Literal["reprompt_with_error", "fail"] = "reprompt_with_error"
    backoff: tuple[float, ...] = ()

    def policy(self) -> RetryPolicy:
        return RetryPolicy(self.max_attempts, self.on_schema_violation, self.backoff)


class GenerationSection(_Section):
    n: int = Field(default=20, ge=1)
    strategy: Origin = Origin.serial
    steering: bool = False
    steering_file: Path | None = None
    manual_agents_file: Path | None = None
    overgeneration_factor: float = Field(default=DEFAULT_OVERGENERATION, ge=1.0)
    serial_cap: int = Field(default=DEFAULT_SERIAL_CAP, ge=1)
    max_failed_fraction: float = Field(default=0.10, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _manual_needs_file(self) -> GenerationSection:
        if (self.strategy is Origin.manual) != (self.manual_agents_file is not None):
            raise ValueError("manual_agents_file is required iff strategy is manual")
        return self


class ExperienceSection(_Section):
    min_steps: int = Field(default=DEFAULT_MIN_STEPS, ge=1)
    max_steps: int = Field(default=DEFAULT_MAX_STEPS, ge=1)

    @model_validator(mode="after")
    def _bounds(self) -> ExperienceSection:
        if self.min_steps > self.max_steps:
            raise ValueError("min_steps must not exceed max_steps")
        return self


class QuestionsSection(_Section):
    source: Literal["builtin", "file"] = "builtin"
    file: Path | None = None
    include_freestyle: bool = True

    @model_validator(mode="after")
    def _file(self) -> QuestionsSection:
        if (self.source == "file") != (self.file is not None):
            raise ValueError("questions.file is required iff source is 'file'")
        return self


class AnalysisSection(_Section):
    mode: ClassificationMode = ClassificationMode.criteria_cot
    criteria_file: Path | None = None
    dedup: bool = False


class MetricsSection(_Section):
    target_dim: int = Field(default=5, ge=1)
    k_min: int = Field(default=2, ge=2)
    k_max: int = Field(default=10, ge=2)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = Field(default=0, ge=0, lt=2**64)
    provider: Literal["mock", "http"] = "mock"
    output_dir: Path = Path("run")
    max_in_flight: int = Field(default=4, ge=1)
    templates_dir: Path | None = None
    created_at: str | None = None
    brief: DesignBrief = Field(default_factory=tent_brief)
    llm: ProviderConfig = Field(default_factory=ProviderConfig)
    retry: RetrySection = Field(default_factory=RetrySection)
    generation: GenerationSection = Field(default_factory=GenerationSection)
    experience: ExperienceSection = Field(default_factory=ExperienceSection)
    questions: QuestionsSection = Field(default_factory=QuestionsSection)
    analysis: AnalysisSection = Field(default_factory=AnalysisSection)
    metrics: MetricsSection = Field(default_factory=MetricsSection)
    pricing: PricingModel = Field(default_factory=PricingModel)

    @model_validator(mode="after")
    def _files_exist(self) -> RunConfig:
        for label, path in (
            ("generation.steering_file", self.generation.steering_file),
            ("generation.manual_agents_file", self.generation.manual_agents_file),
            ("questions.file", self.questions.file),
            ("analysis.criteria_file", self.analysis.criteria_file),
            ("templates_dir", self.templates_dir),
        ):
            if path is not None and not Path(path).exists():
                raise ValueError(f"{label} does not exist: {path}")
        return self

    def persisted(self) -> dict[str, Any]:
        """JSON-safe form with the API key removed."""
        data = self.model_dump(mode="json")
        data["llm"]["api_key"] = ""
        return data

    def fingerprint_payload(self) -> dict[str, Any]:
        data = self.persisted()
        data.pop("output_dir")
        return data


_PATH_KEYS = {
    ("generation", "steering_file"),
    ("generation", "manual_agents_file"),
    ("questions", "file"),
    ("analysis", "criteria_file"),
    ("templates_dir",),
    ("output_dir",),
}


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(data: dict[str, Any], assignment: str) -> None:
    """Apply one ``dotted.key=value`` assignment in place."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value, got {assignment!r}")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override inside non-table key {p!r}")
    node[parts[-1]] = _parse_value(value.strip())


def _resolve_paths(data: dict[str, Any], base: Path) -> None:
    for path in _PATH_KEYS:
        node = data
        for p in path[:-1]:
            node = node.get(p) if isinstance(node, dict) else None
            if node is None:
                break
        if isinstance(node, dict) and isinstance(node.get(path[-1]), str):
            candidate = Path(node[path[-1]])
            if not candidate.is_absolute():
                node[path[-1]] = str(base / candidate)


def load_config(
    path: str | Path | None = None,
    overrides: Sequence[str] = (),
    **fields: Any,
) -> RunConfig:
    """Read a TOML config; later sources win: file < ``fields`` < overrides."""
    data: dict[str, Any] = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base = path.parent.resolve()
        _resolve_paths(data, base)
    for k, v in fields.items():
        if v is not None:
            data[k] = v
    for o in overrides:
        apply_override(data, o)
    _resolve_paths(data, Path.cwd())
    if isinstance(data.get("brief"), str):
        try:
            data["brief"] = json.loads(Path(base / data["brief"]).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read brief file: {exc}") from exc
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def config_from_json(text: str) -> RunConfig:
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
