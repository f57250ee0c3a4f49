"""Prompt templates and bundled data assets.

Templates are plain text with ``{name}`` placeholders. A directory passed as
``templates_dir`` shadows the bundled copies file by file, so a study can
reword one prompt without touching the rest.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .models import DesignBrief


class _Strict(dict):
    def __missing__(self, key: str) -> str:
        raise ConfigError(f"template placeholder {{{key}}} has no value")


class Templates:
    def __init__(self, templates_dir: str | Path | None = None) -> None:
        self.override = Path(templates_dir) if templates_dir else None

    def raw(self, name: str) -> str:
        if self.override is not None:
            path = self.override / f"{name}.txt"
            if path.exists():
                return path.read_text(encoding="utf-8")
        return resources.files("elicit.templates").joinpath(f"{name}.txt").read_text(encoding="utf-8")

    def render(self, template: str, /, **values: Any) -> str:
        return self.raw(template).format_map(_Strict(values)).strip()


DEFAULT_TEMPLATES = Templates()


def data_text(name: str) -> str:
    return resources.files("elicit.data").joinpath(name).read_text(encoding="utf-8")


def data_json(name: str) -> Any:
    return json.loads(data_text(name))


def default_criteria() -> str:
    return data_text("latent_criteria.txt").strip()


def tent_brief() -> DesignBrief:
    return DesignBrief.model_validate(data_json("tent_brief.json"))


def steering_text(brief: DesignBrief, templates: Templates = DEFAULT_TEMPLATES) -> str:
    """Steering instruction that pushes generation away from the typical user."""
    if not brief.typical_user_profile:
        raise ConfigError("brief has no typical_user_profile to steer away from")
    return templates.render("steering", typical_user=brief.typical_user_profile)
