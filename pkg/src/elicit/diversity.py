"""Embedding-space diversity metrics and cluster analysis.

All distances are Euclidean on raw embedding coordinates. Inputs may be
:class:`~elicit.models.EmbeddingVector` records or any 2-D array-like.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Sequence

import numpy as np
from pydantic import BaseModel, Field, create_model
from scipy.spatial import ConvexHull, QhullError

from .errors import (
    DegenerateClustering,
    DimensionMismatch,
    InsufficientClusters,
    TooFewPoints,
    ValidationFailure,
)
from .models import EmbeddingVector
from .prompts import DEFAULT_TEMPLATES, Templates

if TYPE_CHECKING:
    from .gateway import Gateway

_RANK_RTOL = 1e-10


def as_matrix(vectors: Any) -> np.ndarray:
    """Stack embeddings into an ``(n, d)`` float array."""
    if isinstance(vectors, np.ndarray):
        X = np.asarray(vectors, dtype=float)
    else:
        rows = [v.values if isinstance(v, EmbeddingVector) else v for v in vectors]
        if not rows:
            return np.zeros((0, 0))
        dims = {len(np.atleast_1d(r)) for r in rows}
        if len(dims) != 1:
            raise DimensionMismatch(f"vectors have differing dims {sorted(dims)}")
        X = np.asarray(rows, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D array of vectors, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationFailure("vectors must be finite")
    return X


# -- k-means -----------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    k: int
    inertia: float
    seed: int
    n_iter: int = 0
    inertia_trace: tuple[float, ...] = ()

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def to_dict(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "labels": self.labels.tolist(),
            "centroids": self.centroids.tolist(),
            "inertia": self.inertia,
            "seed": self.seed,
        }


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    for _ in range(1, k):
        d2 = _sq_dists(X, np.asarray(centers)).min(axis=1)
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
    return np.array(centers, dtype=float)


def _sse(X: np.ndarray, labels: np.ndarray, C: np.ndarray) -> float:
    return float(((X - C[labels]) ** 2).sum())


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int, tol: float):
    C = _kmeans_pp(X, k, rng)
    trace: list[float] = []
    labels = np.zeros(len(X), dtype=int)
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(X, C)
        labels = d2.argmin(axis=1)
        # empty clusters take the point farthest from its own centroid
        for j in range(k):
            if np.any(labels == j):
                continue
            sizes = np.bincount(labels, minlength=k)
            own = d2[np.arange(len(X)), labels]
            own = np.where(sizes[labels] > 1, own, -1.0)
            p = int(own.argmax())
            if own[p] < 0:
                break
            labels[p] = j
        new_C = np.array(
            [X[labels == j].mean(axis=0) if np.any(labels == j) else C[j] for j in range(k)]
        )
        trace.append(_sse(X, labels, new_C))
        shift = float(np.sqrt(((new_C - C) ** 2).sum(axis=1)).max())
        C = new_C
        if shift < tol:
            break
    return labels, C, trace, it


def _canonical(labels: np.ndarray, C: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Relabel clusters by order of first appearance in the input."""
    order: list[int] = []
    for lab in labels:
        if lab not in order:
            order.append(int(lab))
    order += [j for j in range(k) if j not in order]
    remap = np.empty(k, dtype=int)
    remap[order] = np.arange(k)
    return remap[labels], C[order]


def kmeans(
    vectors: Any,
    k: int,
    seed: int = 0,
    *,
    n_init: int = 10,
    max_iter: int = 300,
    tol: float = 1e-8,
) -> ClusterAssignment:
    """Lloyd's algorithm with k-means++ seeding; best of ``n_init`` restarts.

    Deterministic in ``(vectors, k, seed, n_init)``. Cluster ids are ordered
    by first appearance of a member in the input.
    """
    X = as_matrix(vectors)
    n = len(X)
    if not 1 <= k <= n:
        raise ValidationFailure(f"k must be in [1, {n}], got {k}")
    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        labels, C, trace, it = _lloyd(X, k, np.random.default_rng(child), max_iter, tol)
        inertia = _sse(X, labels, C)
        if best is None or inertia < best[0] - 1e-12:
            best = (inertia, labels, C, trace, it)
    inertia, labels, C, trace, it = best
    labels, C = _canonical(labels, C, k)
    return ClusterAssignment(labels, C, k, inertia, seed, it, tuple(trace))


# -- silhouette ----------------------------------------------------------------------


def silhouette(vectors: Any, assignment: ClusterAssignment | Sequence[int]) -> tuple[float, np.ndarray]:
    """Mean and per-sample silhouette ``(b - a) / max(a, b)``.

    Members of singleton clusters score 0.
    """
    X = as_matrix(vectors)
    if isinstance(assignment, ClusterAssignment):
        labels, k = assignment.labels, assignment.k
    else:
        labels = np.asarray(assignment, dtype=int)
        k = int(labels.max()) + 1 if len(labels) else 0
    if len(labels) != len(X):
        raise ValidationFailure("labels and vectors differ in length")
    if k < 2:
        raise InsufficientClusters(f"silhouette needs k >= 2, got {k}")
    sizes = np.bincount(labels, minlength=k)
    if np.any(sizes == 0):
        raise ValidationFailure("every cluster must be non-empty")
    D = np.sqrt(_sq_dists(X, X))
    s = np.zeros(len(X))
    for i in range(len(X)):
        own = labels[i]
        if sizes[own] == 1:
            continue
        a = D[i, labels == own].sum() / (sizes[own] - 1)
        b = min(D[i, labels == j].mean() for j in range(k) if j != own)
        denom = max(a, b)
        s[i] = (b - a) / denom if denom > 0 else 0.0
    return float(s.mean()), s


def best_k(
    vectors: Any,
    k_range: Iterable[int] | tuple[int, int],
    seed: int = 0,
    *,
    n_init: int = 10,
) -> tuple[int, dict[int, float]]:
    """Pick k maximizing mean silhouette; ties go to the smaller k.

    ``k_range`` is an inclusive ``(lo, hi)`` pair or any iterable of ks.
    """
    X = as_matrix(vectors)
    n = len(X)
    ks = (
        list(range(k_range[0], k_range[1] + 1))
        if isinstance(k_range, tuple) and len(k_range) == 2
        else sorted(set(k_range))
    )
    if not ks or ks[0] < 2 or ks[-1] > n - 1:
        raise ValidationFailure(f"k range must lie within [2, {n - 1}], got {ks}")
    scores = {k: silhouette(X, kmeans(X, k, seed, n_init=n_init))[0] for k in ks}
    k_star = max(ks, key=lambda k: (scores[k], -k))
    return k_star, scores


# -- hull volume / centroid distance --------------------------------------------------


@dataclass(frozen=True)
class HullVolume:
    volume: float
    dim: int
    degenerate: bool
    mean: np.ndarray
    basis: np.ndarray


def pca_basis(X: np.ndarray, dim: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Mean, top-``dim`` principal axes (rows) and numerical rank of ``X``."""
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    rank = int((s > _RANK_RTOL * max(s[0], 1e-300)).sum()) if len(s) and s[0] > 0 else 0
    return mean, vt[:dim], rank


def _hull_measure(Y: np.ndarray) -> float:
    if Y.shape[1] == 1:
        return float(Y.max() - Y.min())
    return float(ConvexHull(Y).volume)


def hull_volume_details(
    vectors: Any,
    target_dim: int = 5,
    *,
    basis: tuple[np.ndarray, np.ndarray] | None = None,
) -> HullVolume:
    """Convex hull hypervolume after PCA projection to ``target_dim`` axes.

    If the centered data has rank below ``target_dim`` the ``target_dim``
    volume is zero and the result is flagged degenerate. Passing ``basis``
    (mean, axes) reuses a projection, e.g. one fitted on a subset.
    """
    if target_dim < 1:
        raise ValidationFailure("target_dim must be positive")
    X = as_matrix(vectors)
    n = len(X)
    if n < target_dim + 1:
        raise TooFewPoints(f"need at least {target_dim + 1} points for a {target_dim}-D hull, got {n}")
    if basis is None:
        mean, axes, rank = pca_basis(X, target_dim)
        eff = min(target_dim, n - 1, rank)
        if eff < target_dim or axes.shape[0] < target_dim:
            return HullVolume(0.0, eff, True, mean, axes[:eff])
    else:
        mean, axes = basis
    Y = (X - mean) @ axes.T
    try:
        vol = _hull_measure(Y)
    except QhullError:
        return HullVolume(0.0, axes.shape[0], True, mean, axes)
    return HullVolume(vol, axes.shape[0], False, mean, axes)


def convex_hull_volume(vectors: Any, target_dim: int = 5) -> float:
    return hull_volume_details(vectors, target_dim).volume


def mean_distance_to_centroid(vectors: Any) -> float:
    X = as_matrix(vectors)
    if len(X) == 0:
        raise ValidationFailure("need at least one vector")
    return float(np.linalg.norm(X - X.mean(axis=0), axis=1).mean())


def normalize_table(raw: Any) -> np.ndarray:
    """Global min-max scaling to [0, 1]; a constant table maps to 0.5."""
    R = np.asarray(raw, dtype=float)
    if R.size == 0 or not np.all(np.isfinite(R)):
        raise ValidationFailure("table must be non-empty and finite")
    lo, hi = R.min(), R.max()
    if hi == lo:
        return np.full_like(R, 0.5)
    return (R - lo) / (hi - lo)


def project_2d(vectors: Any) -> np.ndarray:
    """PCA onto the top two axes with each axis' largest loading positive."""
    X = as_matrix(vectors)
    if len(X) < 2:
        raise ValidationFailure("projection needs at least two vectors")
    mean, axes, _ = pca_basis(X, 2)
    axes = axes.copy()
    for row in axes:
        if row[np.abs(row).argmax()] < 0:
            row *= -1
    Y = (X - mean) @ axes.T
    if Y.shape[1] < 2:
        Y = np.hstack([Y, np.zeros((len(Y), 2 - Y.shape[1]))])
    return Y


# -- tables ----------------------------------------------------------------------------


class DiversityMetric(str, Enum):
    hull_volume = "hull_volume"
    mean_centroid_distance = "mean_centroid_distance"


class DiversityTable(BaseModel):
    row_names: list[str]
    method_names: list[str]
    raw: list[list[float]]
    normalized: list[list[float]]
    metric: DiversityMetric
    degenerate: list[list[bool]] = Field(default_factory=list)

    def column(self, method: str, *, normalized: bool = False) -> list[float]:
        j = self.method_names.index(method)
        return [row[j] for row in (self.normalized if normalized else self.raw)]


def diversity_table(
    sets: Mapping[str, Mapping[str, Any]],
    metric: DiversityMetric | str,
    target_dim: int = 5,
) -> DiversityTable:
    """Score every (row, method) embedding set and append a ``Mean`` row."""
    metric = DiversityMetric(metric)
    methods = list(sets)
    if not methods:
        raise ValidationFailure("no methods given")
    rows = list(sets[methods[0]])
    for m in methods:
        if set(sets[m]) != set(rows) or len(sets[m]) != len(rows):
            raise ValidationFailure(f"method {m!r} does not share the row names {rows}")
    raw = np.zeros((len(rows), len(methods)))
    degenerate = [[False] * len(methods) for _ in rows]
    for j, m in enumerate(methods):
        for i, r in enumerate(rows):
            X = as_matrix(sets[m][r])
            if len(X) == 0:
                raise ValidationFailure(f"empty set for ({r!r}, {m!r})")
            if metric is DiversityMetric.hull_volume:
                hv = hull_volume_details(X, target_dim)
                raw[i, j], degenerate[i][j] = hv.volume, hv.degenerate
            else:
                raw[i, j] = mean_distance_to_centroid(X)
    raw = np.vstack([raw, raw.mean(axis=0)])
    degenerate.append([any(degenerate[i][j] for i in range(len(rows))) for j in range(len(methods))])
    return DiversityTable(
        row_names=rows + ["Mean"],
        method_names=methods,
        raw=raw.tolist(),
        normalized=normalize_table(raw).tolist(),
        metric=metric,
        degenerate=degenerate,
    )


# -- qualitative clustering ------------------------------------------------------------


class ThemeList(BaseModel):
    themes: list[str]


def theme_clusters(
    gw: Gateway,
    groups: Sequence[Sequence[str]],
    *,
    templates: Templates | None = None,
    key: str = "themes",
) -> list[str]:
    """Ask the provider for one theme per group of role descriptions."""
    if not groups or any(len(g) == 0 for g in groups):
        raise ValidationFailure("theme_clusters needs at least one group and no empty groups")
    k = len(groups)
    listing = "\n".join(f"Group {i}: " + "; ".join(g) for i, g in enumerate(groups, 1))
    system = (templates or DEFAULT_TEMPLATES).render("themes", k=k, groups=listing)
    schema = create_model(
        "ThemeList", themes=(list[str], Field(min_length=k, max_length=k)), __base__=ThemeList
    )
    record, _ = gw.chat_structured(system, [listing], schema, key=key)
    return list(record.themes)


@dataclass
class QualitativeClusters:
    k: int
    scores: dict[int, float]
    assignment: ClusterAssignment
    themes: list[str]
    points_2d: np.ndarray
    groups: list[list[int]] = field(default_factory=list)


def qualitative_clusters(
    gw: Gateway,
    descriptions: Sequence[str],
    vectors: Any,
    k_range: tuple[int, int],
    seed: int = 0,
) -> QualitativeClusters:
    """Silhouette-chosen k, KMeans groups, provider themes, 2-D coordinates."""
    X = as_matrix(vectors)
    if len(descriptions) != len(X):
        raise ValidationFailure("one description per vector required")
    k, scores = best_k(X, k_range, seed)
    assignment = kmeans(X, k, seed)
    groups = [assignment.members(j).tolist() for j in range(k)]
    if any(not g for g in groups):
        raise DegenerateClustering("an empty cluster survived k-means")
    themes = theme_clusters(gw, [[descriptions[i] for i in g] for g in groups])
    return QualitativeClusters(k, scores, assignment, themes, project_2d(X), groups)
