"""Agreement, classification metrics, pooled t-test, benchmark runner, cost."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator

from .errors import DegenerateVariance, ProviderError, UndefinedMetric, UndefinedScore, ValidationFailure
from .gateway import Gateway, TokenUsage
from .models import ClassificationMode, require
from .needs import LatentCriteria, classify_text
from .prompts import DEFAULT_TEMPLATES, Templates, data_text


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValidationFailure("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_predictions(cls, gold: Iterable[bool], predicted: Iterable[bool]) -> ConfusionMatrix:
        tp = fp = fn = tn = 0
        for g, p in zip(gold, predicted, strict=True):
            if g and p:
                tp += 1
            elif p:
                fp += 1
            elif g:
                fn += 1
            else:
                tn += 1
        return cls(tp, fp, fn, tn)


def agreement_fscore(tp: int, fp: int, fn: int) -> float:
    """Inter-rater F-score ``2tp / (2tp + fp + fn)``."""
    if min(tp, fp, fn) < 0:
        raise ValidationFailure("counts must be nonnegative")
    denom = 2 * tp + fp + fn
    if denom == 0:
        raise UndefinedScore("no annotations from either rater")
    return 2 * tp / denom


def precision(cm: ConfusionMatrix) -> float:
    if cm.tp + cm.fp == 0:
        raise UndefinedMetric("precision undefined: no positive predictions")
    return cm.tp / (cm.tp + cm.fp)


def recall(cm: ConfusionMatrix) -> float:
    if cm.tp + cm.fn == 0:
        raise UndefinedMetric("recall undefined: no positive gold labels")
    return cm.tp / (cm.tp + cm.fn)


@dataclass(frozen=True)
class ClassificationMetrics:
    """Metrics that could not be computed are ``None``; see ``undefined``."""

    precision: float | None
    recall: float | None
    f1: float | None
    undefined: tuple[str, ...] = ()


def classification_metrics(cm: ConfusionMatrix) -> ClassificationMetrics:
    values: dict[str, float | None] = {}
    undefined = []
    for name, fn in (("precision", precision), ("recall", recall)):
        try:
            values[name] = fn(cm)
        except UndefinedMetric:
            values[name] = None
            undefined.append(name)
    p, r = values["precision"], values["recall"]
    if p is None or r is None or p + r == 0:
        f1 = None
        undefined.append("f1")
    else:
        f1 = 2 * p * r / (p + r)
    return ClassificationMetrics(p, r, f1, tuple(undefined))


def pooled_t_test(m1: float, s1: float, n1: int, m2: float, s2: float, n2: int) -> tuple[float, int]:
    """Two-sample Student t statistic with pooled variance; df = n1 + n2 - 2."""
    require(n1 >= 2 and n2 >= 2, "each group needs at least two observations")
    require(s1 >= 0 and s2 >= 0, "standard deviations must be nonnegative")
    df = n1 + n2 - 2
    pooled = ((n1 - 1) * s1**2 + (n2 - 1) * s2**2) / df
    se = math.sqrt(pooled * (1 / n1 + 1 / n2))
    diff = m1 - m2
    if se == 0:
        if diff == 0:
            raise DegenerateVariance("zero variance and equal means")
        return math.copysign(math.inf, diff), df
    return diff / se, df


# -- latent benchmark ---------------------------------------------------------------


class LabeledNeed(BaseModel):
    model_config = ConfigDict(frozen=True, extra="ignore")

    text: str
    latent: bool

    @field_validator("text")
    @classmethod
    def _text(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("need text must be non-empty")
        return v


class LabeledNeedDataset(BaseModel):
    model_config = ConfigDict(frozen=True)

    entries: tuple[LabeledNeed, ...] = Field(min_length=1)

    @classmethod
    def from_json(cls, text: str) -> LabeledNeedDataset:
        return cls(entries=tuple(TypeAdapter(list[LabeledNeed]).validate_json(text)))

    @classmethod
    def load(cls, path: str | Path) -> LabeledNeedDataset:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def bundled(cls) -> LabeledNeedDataset:
        """The shipped 20 latent / 20 non-latent fixture."""
        return cls.from_json(data_text("latent_benchmark.json"))

    @property
    def gold(self) -> list[bool]:
        return [e.latent for e in self.entries]


@dataclass
class ModeResult:
    mode: ClassificationMode
    matrix: ConfusionMatrix | None
    metrics: ClassificationMetrics | None
    predictions: list[bool] = field(default_factory=list)
    misclassified: list[dict] = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "matrix": asdict(self.matrix) if self.matrix else None,
            "metrics": asdict(self.metrics) if self.metrics else None,
            "predictions": self.predictions,
            "misclassified": self.misclassified,
            "error": self.error,
        }


def run_latent_benchmark(
    gw: Gateway,
    ds: LabeledNeedDataset,
    modes: Sequence[ClassificationMode | str],
    criteria: LatentCriteria | None = None,
    *,
    templates: Templates = DEFAULT_TEMPLATES,
) -> dict[ClassificationMode, ModeResult]:
    """Classify every entry under every mode and score against gold.

    Modes run one after another; entries within a mode fan out. A provider
    error voids only the mode it occurred in.
    """
    modes = [ClassificationMode(m) for m in modes]
    require(len(modes) > 0, "at least one mode is required")
    if any(m is not ClassificationMode.zero_shot for m in modes):
        require(criteria is not None, "criteria are required for criteria-based modes")
    results: dict[ClassificationMode, ModeResult] = {}
    for mode in modes:
        crit = None if mode is ClassificationMode.zero_shot else criteria

        def one(ie: tuple[int, LabeledNeed]) -> tuple[bool, str | None]:
            return classify_text(gw, ie[1].text, mode, crit, templates=templates,
                                 key=f"benchmark:{mode.value}:{ie[0]:05d}")

        try:
            outs = gw.map(one, list(enumerate(ds.entries)))
        except ProviderError as exc:
            results[mode] = ModeResult(mode, None, None, error=str(exc))
            continue
        preds = [latent for latent, _ in outs]
        cm = ConfusionMatrix.from_predictions(ds.gold, preds)
        wrong = [
            {"index": i, "text": e.text, "gold": e.latent, "predicted": p, "reasoning": r}
            for i, (e, (p, r)) in enumerate(zip(ds.entries, outs))
            if p != e.latent
        ]
        results[mode] = ModeResult(mode, cm, classification_metrics(cm), preds, wrong)
    return results


def reconstructed_predictions() -> dict[ClassificationMode, list[bool]]:
    """Per-mode predictions over the bundled fixture matching the published matrices."""
    payload = json.loads(data_text("reconstructed_predictions.json"))
    return {ClassificationMode(m): list(p) for m, p in payload["predictions"].items()}


def replay_responder(
    ds: LabeledNeedDataset,
    predictions: Mapping[ClassificationMode | str, Sequence[bool]],
) -> Callable[[dict], Any]:
    """Mock responder that answers benchmark calls with fixed verdicts.

    Calls are matched by their ``benchmark:{mode}:{index}`` key; the need
    text in the prompt is checked against the dataset entry. Anything else
    falls through to the mock's filler.
    """
    preds = {ClassificationMode(m).value: list(p) for m, p in predictions.items()}

    def respond(call: dict) -> Any:
        parts = call["key"].split(":")
        if len(parts) != 3 or parts[0] != "benchmark" or parts[1] not in preds:
            return None
        i = int(parts[2])
        entry = ds.entries[i]
        if f"Customer need: {entry.text}" not in call["messages"][-1]["content"] and call["attempt"] == 1:
            raise AssertionError(f"benchmark call {call['key']} does not carry entry {i}")
        latent = preds[parts[1]][i]
        if parts[1] == ClassificationMode.criteria_cot.value:
            verdict = "meets" if latent else "does not meet"
            return {"reasoning": f"Replayed verdict: the statement {verdict} the criteria.", "latent": latent}
        return {"latent": latent}

    return respond


def benchmark_json(results: dict[ClassificationMode, ModeResult]) -> str:
    return json.dumps({m.value: r.to_dict() for m, r in results.items()}, indent=2) + "\n"


def matrices_csv(results: dict[ClassificationMode, ModeResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "tp", "fp", "fn", "tn", "precision", "recall", "f1"])
    for mode, r in results.items():
        if r.matrix is None:
            w.writerow([mode.value, "", "", "", "", "", "", ""])
            continue
        m = r.metrics
        fmt = lambda x: "" if x is None else f"{x:.4f}"  # noqa: E731
        w.writerow([mode.value, r.matrix.tp, r.matrix.fp, r.matrix.fn, r.matrix.tn,
                    fmt(m.precision), fmt(m.recall), fmt(m.f1)])
    return buf.getvalue()


# -- cost ----------------------------------------------------------------------------


class PricingModel(BaseModel):
    """USD per one million tokens."""

    model_config = ConfigDict(frozen=True)

    input_price_per_1m: Decimal = Field(default=Decimal("10"), ge=0)
    output_price_per_1m: Decimal = Field(default=Decimal("30"), ge=0)


_MILLION = Decimal(1_000_000)


def cost_estimate(usage: TokenUsage, pricing: PricingModel) -> Decimal:
    """Exact cost in USD; round only for display (see :func:`format_usd`)."""
    return (
        Decimal(usage.input_tokens) * pricing.input_price_per_1m
        + Decimal(usage.output_tokens) * pricing.output_price_per_1m
    ) / _MILLION


def format_usd(amount: Decimal) -> str:
    return f"{amount.quantize(Decimal('0.01'), rounding=ROUND_HALF_UP):.2f}"
