"""Requirements elicitation with simulated users.

LLM-backed agents are generated, walk through a product experience, are
interviewed, and their answers are mined for (latent) needs. Diversity of
the generated population is measured on text embeddings.
"""

from __future__ import annotations

from .agents import GenerationRequest, generate_agents, inject_manual, select_diverse
from .config import RunConfig, load_config
from .diversity import (
    best_k,
    convex_hull_volume,
    diversity_table,
    kmeans,
    mean_distance_to_centroid,
    silhouette,
)
from .evaluation import (
    ConfusionMatrix,
    LabeledNeedDataset,
    PricingModel,
    agreement_fscore,
    classification_metrics,
    cost_estimate,
    pooled_t_test,
    run_latent_benchmark,
)
from .experience import simulate_experience
from .gateway import Gateway, HttpProvider, ProviderConfig, RetryPolicy, TokenUsage
from .interview import build_question_pool, conduct_interview
from .mock import MockProvider
from .models import (
    AgentProfile,
    ClassificationMode,
    DesignBrief,
    InterviewTranscript,
    NeedLabel,
    NeedStatement,
    ProductExperience,
    RunManifest,
)
from .needs import LatentCriteria, classify_latent, extract_needs, generate_report
from .pipeline import resume, run_pipeline, run_stage

__all__ = [
    "AgentProfile", "ClassificationMode", "ConfusionMatrix", "DesignBrief", "Gateway", "GenerationRequest",
    "HttpProvider", "InterviewTranscript", "LabeledNeedDataset", "LatentCriteria", "MockProvider", "NeedLabel",
    "NeedStatement", "PricingModel", "ProductExperience", "ProviderConfig", "RetryPolicy", "RunConfig",
    "RunManifest", "TokenUsage", "agreement_fscore", "best_k", "build_question_pool", "classification_metrics",
    "classify_latent", "conduct_interview", "convex_hull_volume", "cost_estimate", "diversity_table",
    "extract_needs", "generate_agents", "generate_report", "inject_manual", "kmeans", "load_config",
    "mean_distance_to_centroid", "pooled_t_test", "resume", "run_latent_benchmark", "run_pipeline",
    "run_stage", "select_diverse", "silhouette", "simulate_experience",
]

__version__ = "0.1.0"
