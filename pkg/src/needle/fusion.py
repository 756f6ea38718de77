"""Query-time core: m x l searches, outlier-filtered guides, rank fusion.

A query turns into m guide images; every enabled embedder maps each
guide into its collection's space; each (guide, embedder) pair runs one
k-NN search; the ranked lists are fused by weighted reciprocal rank:

    score(d) = sum over lists containing d of w_e / (kappa + rank_d)

with 1-based ranks, per-embedder weights w_e, and kappa damping low
ranks (default 60). Before searching, guides whose embeddings sit far
outside the group density (mean Local Outlier Factor across embedder
spaces above a threshold) are dropped, so one degenerate generation
cannot poison the fused ranking.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .embedders import EmbedderSpec, embed_batch
from .errors import MisalignedEmbeddings, MissingWeight, TooFewPoints
from .genhub import GeneratorHub, GenRequest, GuideImage, Resolution
from .vecstore import SearchHit, VectorStore

DEFAULT_KAPPA = 60.0
DEFAULT_LOF_THRESHOLD = 1.5
DEFAULT_K = 100


@dataclass
class QueryPlan:
    """Inference hyperparameters; `l` is implied by the enabled embedders."""

    m: int = 1
    k: int = DEFAULT_K
    n: int = 10
    kappa: float = DEFAULT_KAPPA
    lof_k: Optional[int] = None  # None: min(3, m - 1)
    lof_threshold: float = DEFAULT_LOF_THRESHOLD
    resolution: Resolution = Resolution.MEDIUM
    seed: Optional[int] = None

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.n > self.k:
            raise ValueError("n must not exceed the per-source depth k")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.lof_threshold <= 0:
            raise ValueError("lofThreshold must be positive")

    def effective_lof_k(self) -> int:
        return self.lof_k if self.lof_k is not None else min(3, self.m - 1)


@dataclass
class RankedList:
    guide_id: str
    embedder_name: str
    hits: list[SearchHit]


@dataclass
class QueryResult:
    results: list[tuple[int, float]]
    guides: list[GuideImage]
    sources: list[RankedList]
    timings: dict[str, float] = field(default_factory=dict)


# --- weighted reciprocal-rank fusion ---------------------------------------------

def rrf_fuse(
    lists: Sequence[RankedList],
    weights: Mapping[str, float],
    kappa: float = DEFAULT_KAPPA,
) -> list[tuple[int, float]]:
    """Fuse ranked lists into (imageId, score) descending, ties by id.

    Documents absent from a list contribute nothing from it; a list's
    embedder must have a weight.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    scores: dict[int, float] = {}
    for ranked in lists:
        if ranked.embedder_name not in weights:
            raise MissingWeight(ranked.embedder_name)
        w = weights[ranked.embedder_name]
        for rank, hit in enumerate(ranked.hits, start=1):
            scores[hit.id] = scores.get(hit.id, 0.0) + w / (kappa + rank)
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


# --- local outlier factor ---------------------------------------------------------

def lof_scores(points: Sequence, k_lof: int) -> np.ndarray:
    """Standard LOF over euclidean distance.

    k-distance neighborhoods include distance ties, the classic
    definition. Co-located points get lrd = +inf and the ratio
    conventions inf/inf = 1 and finite/inf = 0, which scores a clump of
    duplicates 1.0 instead of dividing by zero.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if k_lof < 1:
        raise ValueError("k_lof must be >= 1")
    if n < k_lof + 1:
        raise TooFewPoints(f"need at least {k_lof + 1} points, got {n}")
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, np.inf)

    kdist = np.partition(dist, k_lof - 1, axis=1)[:, k_lof - 1]
    hoods = [np.flatnonzero(dist[i] <= kdist[i]) for i in range(n)]

    lrd = np.empty(n)
    for i in range(n):
        reach = np.maximum(kdist[hoods[i]], dist[i, hoods[i]])
        mean_reach = reach.mean()
        lrd[i] = np.inf if mean_reach == 0.0 else 1.0 / mean_reach

    lof = np.empty(n)
    for i in range(n):
        neighbor_lrd = lrd[hoods[i]]
        if np.isinf(lrd[i]):
            ratios = np.where(np.isinf(neighbor_lrd), 1.0, 0.0)
        else:
            ratios = neighbor_lrd / lrd[i]
        lof[i] = ratios.mean()
    return lof


def filter_guides(
    guide_embeddings: Mapping[str, Sequence[np.ndarray]],
    plan: QueryPlan,
) -> list[int]:
    """Indices of guides to keep, by mean LOF across embedder spaces.

    Filtering only engages from m >= 3 (below that LOF is meaningless),
    and never drops everything: if every guide exceeds the threshold the
    least anomalous one survives.
    """
    counts = {len(vecs) for vecs in guide_embeddings.values()}
    if len(counts) > 1:
        raise MisalignedEmbeddings(f"embedders disagree on guide count: {sorted(counts)}")
    m = counts.pop() if counts else 0
    if m < 3:
        return list(range(m))
    k_lof = plan.effective_lof_k()
    if k_lof >= m:
        raise ValueError("lofK must be smaller than the number of guides")
    per_embedder = np.array([
        lof_scores(np.asarray(list(vecs), dtype=np.float64), k_lof)
        for vecs in guide_embeddings.values()
    ])
    mean_lof = per_embedder.mean(axis=0)
    kept = [i for i in range(m) if mean_lof[i] <= plan.lof_threshold]
    if not kept:
        kept = [int(np.argmin(mean_lof))]
    return kept


# --- the pipeline -------------------------------------------------------------------

def run_query(
    prompt: str,
    n: int,
    plan: QueryPlan,
    *,
    hub: GeneratorHub,
    specs: Sequence[EmbedderSpec],
    store: VectorStore,
    batch_limit: int = 50,
) -> QueryResult:
    """Generate, embed, filter, search, fuse; returns the top-n fusion.

    Timings: generateMs covers guide generation; searchMs covers
    embedding, filtering, and all (kept guide x embedder) k-NN searches;
    fuseMs the rank fusion. Empty collections yield empty results, not
    errors. Searches run sequentially: at the collection sizes this
    store targets each one is sub-millisecond, and determinism stays
    trivial.
    """
    enabled = [s for s in specs if s.enabled]
    if not enabled:
        raise MissingWeight("no enabled embedders")
    n = max(1, min(n, plan.k))  # plan invariant: n never exceeds depth k

    t0 = time.perf_counter()
    guides = hub.generate(GenRequest(prompt, plan.m, plan.resolution, plan.seed))
    t1 = time.perf_counter()

    pixel_list = [g.pixels for g in guides]
    embeddings: dict[str, list[np.ndarray]] = {
        spec.name: embed_batch(spec, pixel_list, batch_limit) for spec in enabled
    }
    kept = set(filter_guides(embeddings, plan))
    for i, guide in enumerate(guides):
        guide.kept = i in kept

    sources: list[RankedList] = []
    for i, guide in enumerate(guides):
        if i not in kept:
            continue
        for spec in enabled:
            if store.has(spec.name):
                hits = store.get(spec.name).search(embeddings[spec.name][i], k=plan.k)
            else:
                hits = []
            sources.append(RankedList(guide.id, spec.name, hits))
    t2 = time.perf_counter()

    weights = {spec.name: spec.weight for spec in enabled}
    fused = rrf_fuse(sources, weights, plan.kappa)
    results = fused[:n]
    t3 = time.perf_counter()

    return QueryResult(
        results=results,
        guides=guides,
        sources=sources,
        timings={
            "generateMs": (t1 - t0) * 1000.0,
            "searchMs": (t2 - t1) * 1000.0,
            "fuseMs": (t3 - t2) * 1000.0,
            "totalMs": (t3 - t0) * 1000.0,
        },
    )
