"""Gallery ranking per stroke step and the early-retrieval aggregates.

Ranks are reproducible bit-exactly: gallery order is fixed at build time,
distance ties break by insertion index (stable sort), and the aggregate means
are plain left-to-right sums so an independent implementation of the same
formulas produces identical floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import FeatureVector
from .model import StageEmbedder, embed_photo, embed_sketch


@dataclass(frozen=True)
class Gallery:
    """Immutable photo embeddings in build order."""

    ids: list[str]
    embeddings: np.ndarray = field(repr=False)  # (n, D)

    @property
    def n(self) -> int:
        return len(self.ids)

    def index_of(self, photo_id: str) -> int:
        try:
            return self.ids.index(photo_id)
        except ValueError:
            raise KeyError(f"unknown photo id {photo_id!r}") from None


@dataclass(frozen=True)
class RankResult:
    step: int
    distances: np.ndarray = field(repr=False)
    rank: int  # 1-based rank of the true photo
    top_k: list[tuple[str, float]]

    @property
    def n(self) -> int:
        return len(self.distances)


@dataclass(frozen=True)
class EvalReport:
    ranks: list[list[int]]  # per episode, per step
    m_a: float
    m_b: float
    acc: dict[int, float]  # q -> accuracy of the complete sketch, percent
    n: int
    T: int
    episode_count: int
    # Per-step curves for plotting: mean 1/rank and per-step accuracy.
    step_fraction: list[float]
    mean_inverse_rank: list[float]
    step_acc: dict[int, list[float]]


def build_gallery(photo_features: list[FeatureVector], model: StageEmbedder) -> Gallery:
    """Embed every photo once through the frozen base map, order preserved."""
    if len(photo_features) < 2:
        raise ValueError(f"gallery needs at least 2 photos, got {len(photo_features)}")
    seen = set()
    for f in photo_features:
        if f.id in seen:
            raise ValueError(f"duplicate photo id {f.id!r}")
        seen.add(f.id)
    embeddings = np.stack([embed_photo(f, model) for f in photo_features])
    return Gallery(ids=[f.id for f in photo_features], embeddings=embeddings)


def rank_all(query: np.ndarray, gallery: Gallery) -> tuple[np.ndarray, np.ndarray]:
    """Distances to every entry plus the stable (distance, insertion) ordering."""
    diff = gallery.embeddings - np.asarray(query, dtype=float)
    distances = np.sqrt(np.sum(diff * diff, axis=1))
    return distances, np.argsort(distances, kind="stable")


def rank_query(
    query: np.ndarray, gallery: Gallery, true_id: str, step: int = 0, top_k: int = 10
) -> RankResult:
    """Euclidean distances to every entry; stable (distance, insertion) order."""
    true_idx = gallery.index_of(true_id)
    distances, order = rank_all(query, gallery)
    rank = int(np.nonzero(order == true_idx)[0][0]) + 1
    top = [(gallery.ids[i], float(distances[i])) for i in order[: max(0, top_k)]]
    return RankResult(step=step, distances=distances, rank=rank, top_k=top)


def eval_episode(
    episode_partial_features: list[FeatureVector],
    model: StageEmbedder,
    gallery: Gallery,
    true_id: str,
) -> list[RankResult]:
    """Rank the gallery at every rendering step of one episode."""
    if len(episode_partial_features) != model.T:
        raise ValueError(
            f"trajectory has {len(episode_partial_features)} steps, model expects {model.T}"
        )
    return [
        rank_query(embed_sketch(feat, t, model), gallery, true_id, step=t)
        for t, feat in enumerate(episode_partial_features)
    ]


def aggregate_metrics(
    episode_results: list[list[RankResult]], q_list: tuple[int, ...] = (5, 10)
) -> EvalReport:
    """Early-retrieval aggregates over all episodes and steps.

    m@A is the mean ranking percentile 100*(n-rank)/(n-1); m@B is the mean
    reciprocal rank, x100; both average over every (episode, step). A@q is the
    percentage of episodes whose final (complete sketch) rank is <= q. The
    per-step curves are kept for plotting.
    """
    if not episode_results:
        raise ValueError("no episode results to aggregate")
    n = episode_results[0][0].n
    T = len(episode_results[0])
    if n <= 1:
        raise ValueError("ranking percentile undefined for a single-entry gallery")
    for results in episode_results:
        if len(results) != T:
            raise ValueError(f"episodes disagree on step count: {len(results)} != {T}")
        for r in results:
            if r.n != n:
                raise ValueError(f"episodes disagree on gallery size: {r.n} != {n}")
    ranks = [[r.rank for r in results] for results in episode_results]
    count = len(ranks) * T
    m_a = 100.0 * sum((n - r) / (n - 1) for row in ranks for r in row) / count
    m_b = 100.0 * sum(1.0 / r for row in ranks for r in row) / count
    acc = {
        q: 100.0 * sum(1 for row in ranks if row[-1] <= q) / len(ranks) for q in q_list
    }
    mean_inv = [
        100.0 * sum(1.0 / row[t] for row in ranks) / len(ranks) for t in range(T)
    ]
    step_acc = {
        q: [100.0 * sum(1 for row in ranks if row[t] <= q) / len(ranks) for t in range(T)]
        for q in q_list
    }
    return EvalReport(
        ranks=ranks,
        m_a=m_a,
        m_b=m_b,
        acc=acc,
        n=n,
        T=T,
        episode_count=len(ranks),
        step_fraction=[(t + 1) / T for t in range(T)],
        mean_inverse_rank=mean_inv,
        step_acc=step_acc,
    )
