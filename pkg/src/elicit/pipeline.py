"""Staged, resumable pipeline over a run directory.

Stage order is agents -> experiences -> interviews -> needs -> metrics ->
report. After each stage its artifacts are written, hashed into the
manifest, and the manifest is flushed. Provider exchanges are appended to
``calls.ledger.jsonl`` in request-key order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path
from typing import Any, Callable, Iterator, Sequence

from pydantic import TypeAdapter, ValidationError

from . import diversity
from .agents import GenerationRequest, generate_agents, inject_manual
from .config import RunConfig, config_from_json
from .errors import (
    ArtifactHashMismatch,
    CorruptManifest,
    ElicitError,
    MissingPriorStage,
    RunLocked,
    StageFailed,
    TooFewPoints,
)
from .evaluation import PricingModel, cost_estimate
from .experience import simulate_all
from .gateway import Gateway, HttpProvider, Provider, TokenUsage
from .interview import Question, build_question_pool, conduct_interview, dump_question_pool, load_question_pool
from .mock import MockProvider
from .models import (
    STAGES,
    AgentProfile,
    ClassificationMode,
    InterviewTranscript,
    NeedLabel,
    NeedStatement,
    Origin,
    ProductExperience,
    RunManifest,
    StageState,
    canonical_json,
    dumps_list,
    ensure_unique_names,
    loads_list,
)
from .needs import LatentCriteria, classify_all, dedupe_needs, extract_needs_detailed, generate_report
from .prompts import Templates, data_json, steering_text

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
CONFIG = "config.json"
LEDGER = "calls.ledger.jsonl"
LOCK = ".lock"

ARTIFACTS: dict[str, tuple[str, ...]] = {
    "agents": ("agents.json",),
    "experiences": ("experiences.json",),
    "interviews": ("questions.json", "interviews.json"),
    "needs": ("needs.json",),
    "metrics": ("metrics.json", "embeddings.json", "silhouette_vs_k.csv", "scatter_2d.csv"),
    "report": ("report.md",),
}

# CLI stage command -> manifest stage
COMMAND_STAGE = {
    "agents": "agents",
    "simulate": "experiences",
    "interview": "interviews",
    "analyze": "needs",
    "metrics": "metrics",
    "report": "report",
}

USER_ROW = "User"


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _created_at(config: RunConfig) -> str:
    if config.created_at:
        return config.created_at
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is None and config.provider == "mock":
        epoch = "0"  # mock runs are replayable, so their timestamp is pinned too
    if epoch is not None:
        moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    else:
        moment = datetime.now(timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def run_id_for(config: RunConfig) -> str:
    blob = json.dumps(config.fingerprint_payload(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def make_gateway(config: RunConfig, provider: Provider | None = None) -> Gateway:
    if provider is None:
        provider = MockProvider(config.seed) if config.provider == "mock" else HttpProvider(config.llm)
    return Gateway(provider, config.llm, config.retry.policy(), max_in_flight=config.max_in_flight)


@dataclass
class Run:
    """An open run directory plus the gateway its stages talk through."""

    dir: Path
    config: RunConfig
    manifest: RunManifest
    gw: Gateway

    @property
    def templates(self) -> Templates:
        return Templates(self.config.templates_dir)

    # -- persistence -----------------------------------------------------------

    def path(self, name: str) -> Path:
        return self.dir / name

    def write(self, name: str, text: str) -> None:
        _write_atomic(self.path(name), text)

    def read(self, name: str) -> str:
        return self.path(name).read_text(encoding="utf-8")

    def flush_manifest(self) -> None:
        RunManifest.model_validate(self.manifest.model_dump())
        self.write(MANIFEST, canonical_json(self.manifest.model_dump(mode="json")))

    def flush_ledger(self, stage: str) -> None:
        entries = self.gw.ledger.drain()
        if not entries:
            return
        with self.path(LEDGER).open("a", encoding="utf-8") as fh:
            for e in entries:
                fh.write(json.dumps({"stage": stage, **e}, sort_keys=True) + "\n")

    def verify_artifacts(self, upto: str | None = None) -> None:
        for stage in STAGES:
            if stage == upto:
                break
            if not self.manifest.is_done(stage):
                continue
            for name in ARTIFACTS[stage]:
                expected = self.manifest.artifacts.get(name)
                path = self.path(name)
                if expected is None or not path.exists():
                    raise ArtifactHashMismatch(f"{name} is missing for completed stage {stage!r}")
                if sha256_file(path) != expected:
                    raise ArtifactHashMismatch(f"{name} does not match its recorded hash")

    def _set(self, stage: str, state: StageState, **extra: Any) -> None:
        status = dict(self.manifest.stage_status)
        status[stage] = state
        self.manifest = self.manifest.model_copy(update={"stage_status": status, **extra})

    def mark_done(self, stage: str) -> None:
        artifacts = dict(self.manifest.artifacts)
        for name in ARTIFACTS[stage]:
            artifacts[name] = sha256_file(self.path(name))
        self._set(stage, StageState.done, artifacts=artifacts, failed_stage=None, error=None)
        self.flush_manifest()

    def invalidate_from(self, stage: str) -> None:
        """Mark ``stage`` and everything after it pending."""
        i = STAGES.index(stage)
        status = dict(self.manifest.stage_status)
        artifacts = dict(self.manifest.artifacts)
        for s in STAGES[i:]:
            status[s] = StageState.pending
            for name in ARTIFACTS[s]:
                artifacts.pop(name, None)
        self.manifest = self.manifest.model_copy(update={"stage_status": status, "artifacts": artifacts})
        self.flush_manifest()

    # -- loaders ---------------------------------------------------------------

    def agents(self) -> list[AgentProfile]:
        return loads_list(AgentProfile, self.read("agents.json"))

    def experiences(self) -> list[ProductExperience]:
        return loads_list(ProductExperience, self.read("experiences.json"))

    def questions(self) -> list[Question]:
        return TypeAdapter(list[Question]).validate_json(self.read("questions.json"))

    def interviews(self) -> list[InterviewTranscript]:
        return loads_list(InterviewTranscript, self.read("interviews.json"))

    def needs(self) -> tuple[list[NeedStatement], list[NeedLabel], dict[str, Any]]:
        payload = json.loads(self.read("needs.json"))
        needs = TypeAdapter(list[NeedStatement]).validate_python(payload["needs"])
        labels = TypeAdapter(list[NeedLabel]).validate_python(payload["labels"])
        return needs, labels, payload

    def criteria(self) -> LatentCriteria | None:
        if self.config.analysis.mode is ClassificationMode.zero_shot:
            return None
        if self.config.analysis.criteria_file is not None:
            return LatentCriteria(text=Path(self.config.analysis.criteria_file).read_text(encoding="utf-8"))
        return LatentCriteria.default()


# -- stages -------------------------------------------------------------------------


def _stage_agents(run: Run) -> None:
    cfg, gen = run.config, run.config.generation
    if gen.strategy is Origin.manual:
        entries = json.loads(Path(gen.manual_agents_file).read_text(encoding="utf-8"))
        agents = inject_manual(cfg.brief, [(e["name"], e["description"]) for e in entries])
    else:
        steer = None
        if gen.steering_file is not None:
            steer = Path(gen.steering_file).read_text(encoding="utf-8").strip()
        elif gen.steering:
            steer = steering_text(cfg.brief, run.templates)
        req = GenerationRequest(
            brief=cfg.brief,
            n=gen.n,
            strategy=gen.strategy,
            steering_text=steer,
            overgeneration_factor=gen.overgeneration_factor if gen.strategy is Origin.parallel_filtered else None,
            seed=cfg.seed,
        )
        agents = generate_agents(
            run.gw, req, serial_cap=gen.serial_cap, max_failed_fraction=gen.max_failed_fraction,
            templates=run.templates,
        )
    run.write("agents.json", dumps_list(agents))


def _stage_experiences(run: Run) -> None:
    ex = run.config.experience
    exps = simulate_all(run.gw, run.config.brief, run.agents(), ex.min_steps, ex.max_steps, templates=run.templates)
    run.write("experiences.json", dumps_list(exps))


class IncompleteInterviews(ElicitError):
    pass


def _stage_interviews(run: Run) -> None:
    cfg = run.config
    if cfg.questions.source == "file":
        pool = load_question_pool(cfg.questions.file, cfg.brief)
    else:
        pool = build_question_pool(cfg.brief, cfg.questions.include_freestyle, templates=run.templates)
    run.write("questions.json", dump_question_pool(pool))
    agents = run.agents()
    experiences = run.experiences()
    # complete transcripts from an earlier failed attempt are kept
    previous: dict[str, InterviewTranscript] = {}
    if run.path("interviews.json").exists():
        try:
            previous = {
                t.agent_name: t for t in run.interviews()
                if t.complete and [qa.question_id for qa in t.qas] == [q.id for q in pool]
            }
        except ValidationError:
            previous = {}
    by_name = {e.agent_name: e for e in experiences}
    todo = [(i, a) for i, a in enumerate(agents) if a.name not in previous]
    # keys follow the agent's position in the full list so reruns replay the same calls
    fresh = run.gw.map(
        lambda ia: conduct_interview(
            run.gw, ia[1], by_name[ia[1].name], pool, brief=cfg.brief, templates=run.templates,
            key=f"interviews:{ia[0]:05d}",
        ),
        todo,
    )
    done = {**previous, **{t.agent_name: t for t in fresh}}
    transcripts = [done[a.name] for a in agents]
    run.write("interviews.json", dumps_list(transcripts))
    incomplete = [t.agent_name for t in transcripts if not t.complete]
    if incomplete:
        raise IncompleteInterviews(f"{len(incomplete)} interview(s) incomplete: {', '.join(incomplete)}")


def _stage_needs(run: Run) -> None:
    cfg = run.config
    transcripts = run.interviews()
    extractions = run.gw.map(
        lambda it: extract_needs_detailed(
            run.gw, it[1], brief=cfg.brief, templates=run.templates, key=f"needs:{it[0]:05d}"
        ),
        list(enumerate(transcripts)),
    )
    needs = [n for e in extractions for n in e.needs]
    if cfg.analysis.dedup:
        needs = dedupe_needs(needs)
    criteria = run.criteria()
    labels = classify_all(run.gw, needs, cfg.analysis.mode, criteria, templates=run.templates)
    payload = {
        "mode": cfg.analysis.mode.value,
        "criteria": criteria.text if criteria else None,
        "dedup": cfg.analysis.dedup,
        "partially_analyzed": {
            t.agent_name: e.skipped_question_ids for t, e in zip(transcripts, extractions) if e.partial
        },
        "needs": [n.model_dump(mode="json") for n in needs],
        "labels": [lab.model_dump(mode="json") for lab in labels],
    }
    run.write("needs.json", canonical_json(payload))


def method_label(config: RunConfig) -> str:
    gen = config.generation
    label = gen.strategy.value
    if gen.steering or gen.steering_file:
        label += "+steering"
    return label


def row_sets(run: Run) -> dict[str, list[list[float]]]:
    """Embeddings of agent descriptions plus the answers to each question."""
    agents = run.agents()
    transcripts = [t for t in run.interviews() if t.complete]
    sets: dict[str, list[list[float]]] = {}
    vecs = run.gw.embed([a.description for a in agents], key="metrics:00000")
    sets[USER_ROW] = [list(v.values) for v in vecs]
    for i, q in enumerate(run.questions(), 1):
        answers = [qa.answer_text for t in transcripts for qa in t.qas if qa.question_id == q.id]
        if answers:
            sets[q.id] = [list(v.values) for v in run.gw.embed(answers, key=f"metrics:{i:05d}")]
    return sets


def compute_metrics(
    sets: dict[str, Any],
    method: str,
    *,
    target_dim: int,
    k_min: int,
    k_max: int,
    seed: int,
    names: Sequence[str] = (),
) -> dict[str, Any]:
    """Diversity tables, silhouette curves and a 2-D projection for one method."""
    per_method = {method: sets}
    out: dict[str, Any] = {"method": method, "row_sets": list(sets), "target_dim": target_dim}
    out["set_sizes"] = {r: len(v) for r, v in sets.items()}
    try:
        out["hull_volume"] = diversity.diversity_table(per_method, "hull_volume", target_dim).model_dump(mode="json")
    except TooFewPoints as exc:
        out["hull_volume"] = None
        out["hull_volume_skipped"] = str(exc)
    out["mean_centroid_distance"] = diversity.diversity_table(
        per_method, "mean_centroid_distance"
    ).model_dump(mode="json")
    sil: dict[str, Any] = {}
    for row, vecs in sets.items():
        n = len(vecs)
        hi = min(k_max, n - 1)
        if hi < k_min:
            continue
        k_star, scores = diversity.best_k(vecs, (k_min, hi), seed)
        sil[row] = {"best_k": k_star, "scores": {str(k): s for k, s in scores.items()}}
    out["silhouette"] = sil
    user = sets[USER_ROW]
    if len(user) >= 2:
        pts = diversity.project_2d(user)
        k = sil.get(USER_ROW, {}).get("best_k")
        labels = diversity.kmeans(user, k, seed).labels.tolist() if k else [0] * len(user)
        out["projection"] = {
            "row": USER_ROW,
            "k": k,
            "points": [
                {"name": names[i] if i < len(names) else str(i), "x": float(x), "y": float(y), "cluster": c}
                for i, ((x, y), c) in enumerate(zip(pts, labels))
            ],
        }
    return out


def _csv(rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _stage_metrics(run: Run) -> None:
    cfg = run.config
    sets = row_sets(run)
    names = [a.name for a in run.agents()]
    m = compute_metrics(
        sets, method_label(cfg), target_dim=cfg.metrics.target_dim, k_min=cfg.metrics.k_min,
        k_max=cfg.metrics.k_max, seed=cfg.seed, names=names,
    )
    run.write("metrics.json", canonical_json(m))
    run.write("embeddings.json", canonical_json({"method": m["method"], "sets": sets}))
    sil_rows = [["row", "k", "silhouette"]] + [
        [row, k, f"{s:.10f}"] for row, d in m["silhouette"].items() for k, s in d["scores"].items()
    ]
    run.write("silhouette_vs_k.csv", _csv(sil_rows))
    pts = m.get("projection", {}).get("points", [])
    run.write("scatter_2d.csv", _csv([["name", "x", "y", "cluster"]]
                                     + [[p["name"], f"{p['x']:.10f}", f"{p['y']:.10f}", p["cluster"]] for p in pts]))


def _stage_report(run: Run) -> None:
    needs, labels, payload = run.needs()
    criteria = LatentCriteria(text=payload["criteria"]) if payload.get("criteria") else None
    _, text = generate_report(
        needs, labels, run.manifest, payload["mode"], criteria=criteria,
        agent_names=[a.name for a in run.agents()],
    )
    run.write("report.md", text)


STAGE_FUNCS: dict[str, Callable[[Run], None]] = {
    "agents": _stage_agents,
    "experiences": _stage_experiences,
    "interviews": _stage_interviews,
    "needs": _stage_needs,
    "metrics": _stage_metrics,
    "report": _stage_report,
}


# -- orchestration ---------------------------------------------------------------


@contextmanager
def _locked(run_dir: Path) -> Iterator[None]:
    lock = run_dir / LOCK
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise RunLocked(f"{run_dir} is in use (remove {lock} if no process owns it)") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _init_run(config: RunConfig, provider: Provider | None) -> Run:
    run_dir = Path(config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    gw = make_gateway(config, provider)
    if (run_dir / MANIFEST).exists():
        run = open_run(run_dir, provider=provider)
        if run.manifest.run_id != run_id_for(config):
            raise CorruptManifest(f"{run_dir} holds a different run ({run.manifest.run_id})")
        return run
    manifest = RunManifest(
        run_id=run_id_for(config),
        brief=config.brief,
        seed=config.seed,
        provider_id=gw.provider_id,
        created_at=_created_at(config),
    )
    run = Run(run_dir, config, manifest, gw)
    run.write(CONFIG, canonical_json(config.fingerprint_payload()))
    run.flush_manifest()
    return run


def open_run(run_dir: str | Path, *, provider: Provider | None = None) -> Run:
    run_dir = Path(run_dir)
    try:
        manifest = RunManifest.model_validate_json((run_dir / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CorruptManifest(f"no manifest in {run_dir}") from exc
    except ValidationError as exc:
        raise CorruptManifest(f"manifest in {run_dir} is invalid: {exc}") from exc
    try:
        data = json.loads((run_dir / CONFIG).read_text(encoding="utf-8"))
    except (FileNotFoundError, ValueError) as exc:
        raise CorruptManifest(f"config.json in {run_dir} is missing or unreadable") from exc
    data["output_dir"] = str(run_dir)
    config = config_from_json(json.dumps(data))
    if run_id_for(config) != manifest.run_id:
        raise CorruptManifest("config.json does not match the manifest's run id")
    return Run(run_dir, config, manifest, make_gateway(config, provider))


def _execute(run: Run, stage: str) -> None:
    logger.info("stage %s: start", stage)
    try:
        STAGE_FUNCS[stage](run)
    except Exception as exc:
        run.flush_ledger(stage)
        run._set(stage, StageState.pending, failed_stage=stage, error=f"{type(exc).__name__}: {exc}")
        run.flush_manifest()
        raise StageFailed(stage, exc) from exc
    run.flush_ledger(stage)
    run.mark_done(stage)
    logger.info("stage %s: done", stage)


def _continue(run: Run) -> Path:
    run.verify_artifacts()
    with _locked(run.dir):
        while (stage := run.manifest.first_pending()) is not None:
            _execute(run, stage)
    return run.dir


def run_pipeline(config: RunConfig, *, provider: Provider | None = None) -> Path:
    """Run every pending stage; returns the run directory.

    Raises :class:`StageFailed` after recording the failure in the manifest.
    """
    return _continue(_init_run(config, provider))


def resume(run_dir: str | Path, *, provider: Provider | None = None) -> Path:
    """Continue from the first pending stage, reusing completed artifacts."""
    return _continue(open_run(run_dir, provider=provider))


def run_stage(
    stage: str,
    *,
    run_dir: str | Path | None = None,
    config: RunConfig | None = None,
    provider: Provider | None = None,
    force: bool = False,
) -> bool:
    """Run one stage of an existing run (or start one for ``agents``).

    Returns False when the stage was already done and ``force`` is off.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    if run_dir is not None and (Path(run_dir) / MANIFEST).exists():
        run = open_run(run_dir, provider=provider)
    elif config is not None and stage == "agents":
        run = _init_run(config, provider)
    else:
        raise MissingPriorStage(f"no run at {run_dir}; start with the agents stage")
    idx = STAGES.index(stage)
    for prior in STAGES[:idx]:
        if not run.manifest.is_done(prior):
            raise MissingPriorStage(f"stage {stage!r} needs {prior!r} to be done first")
    run.verify_artifacts(upto=stage)
    if run.manifest.is_done(stage) and not force:
        return False
    with _locked(run.dir):
        run.invalidate_from(stage)
        _execute(run, stage)
    return True


# -- cost ---------------------------------------------------------------------------


def read_ledger(run_dir: str | Path) -> list[dict[str, Any]]:
    path = Path(run_dir) / LEDGER
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


@dataclass(frozen=True)
class CostSummary:
    chat_usage: TokenUsage
    embed_usage: TokenUsage
    cost: Decimal
    calls: int


def ledger_cost(run_dir: str | Path, pricing: PricingModel | None = None) -> CostSummary:
    """Chat usage priced at the run's rates; embedding tokens reported apart."""
    entries = read_ledger(run_dir)
    if pricing is None:
        pricing = open_run(run_dir).config.pricing
    chat = TokenUsage.total(TokenUsage(e["input_tokens"], e["output_tokens"]) for e in entries if e["kind"] == "chat")
    emb = TokenUsage.total(TokenUsage(e["input_tokens"], e["output_tokens"]) for e in entries if e["kind"] == "embed")
    return CostSummary(chat, emb, cost_estimate(chat, pricing), len(entries))


# -- cross-run comparison -------------------------------------------------------------


def compare_runs(run_dirs: Sequence[str | Path], *, target_dim: int = 5) -> dict[str, diversity.DiversityTable]:
    """Diversity tables across completed runs (one column per run).

    Only rows present in every run are compared.
    """
    sets: dict[str, dict[str, Any]] = {}
    for d in run_dirs:
        payload = json.loads((Path(d) / "embeddings.json").read_text(encoding="utf-8"))
        label = payload["method"]
        while label in sets:
            label += "'"
        sets[label] = payload["sets"]
    common = [r for r in next(iter(sets.values())) if all(r in s for s in sets.values())]
    aligned = {m: {r: s[r] for r in common} for m, s in sets.items()}
    return {
        metric: diversity.diversity_table(aligned, metric, target_dim)
        for metric in ("hull_volume", "mean_centroid_distance")
    }


def manual_agents_default() -> list[tuple[str, str]]:
    return [(e["name"], e["description"]) for e in data_json("manual_elu_agents.json")]
