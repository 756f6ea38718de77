"""Synthetic retrieval benchmark: corpus, ground truth, AP/MAP/MRR.

The corpus is drawn uniformly over the renderer's scene space (shape x
color x background x position, background never equal to shape color),
so every image carries its exact parameterization as ground truth. A
query's relevant set is the set of corpus images whose scene satisfies
the query predicate, which makes precision metrics exact rather than
judged.

The suite has two difficulty tiers: simple queries constrain only the
two color attributes (shape color and background), the kind of cue one
color-sensitive model resolves alone; hard queries constrain shape,
shape color, background, and position at once, which no single cheap
embedder can resolve.

Reports serialize as a tab-separated table: comment header lines
starting with '#', then one row per query with columns
(index, hardness, relevant, ap, rr, text), then '# map', '# mrr', and
'# latency_*' summary lines.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EmptyRelevantSet
from .genhub import PALETTE, POSITIONS, SHAPES, Resolution, SceneSpec, mock_render
from .pixels import ImagePixels

CORPUS_RESOLUTION = Resolution.SMALL  # desk-scale: keeps a 2k corpus in CI minutes


@dataclass(frozen=True)
class LabeledImage:
    image_id: int
    scene: SceneSpec
    render_seed: int
    pixels: ImagePixels


@dataclass
class BenchQuery:
    text: str
    relevant: frozenset[int]
    hardness: str  # simple | hard

    def __post_init__(self):
        if not self.relevant:
            raise EmptyRelevantSet(self.text)
        if self.hardness not in ("simple", "hard"):
            raise ValueError(f"bad hardness {self.hardness!r}")


@dataclass
class BenchReport:
    per_query_ap: dict[str, float]
    per_query_rr: dict[str, float]
    hardness: dict[str, str]
    map_score: float
    map_simple: float
    map_hard: float
    mrr: float
    latency_ms: dict[str, float] = field(default_factory=dict)

    def to_tsv(self) -> str:
        lines = ["# bench-report v1", "# columns: index\thardness\tap\trr\ttext"]
        for i, text in enumerate(self.per_query_ap):
            lines.append(
                f"{i}\t{self.hardness[text]}\t{self.per_query_ap[text]:.6f}"
                f"\t{self.per_query_rr[text]:.6f}\t{text}"
            )
        lines.append(f"# map\t{self.map_score:.6f}")
        lines.append(f"# map_simple\t{self.map_simple:.6f}")
        lines.append(f"# map_hard\t{self.map_hard:.6f}")
        lines.append(f"# mrr\t{self.mrr:.6f}")
        for stage, ms in sorted(self.latency_ms.items()):
            lines.append(f"# latency_{stage}\t{ms:.3f}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        parts = [
            f"MAP {self.map_score:.3f}",
            f"simple {self.map_simple:.3f}",
            f"hard {self.map_hard:.3f}",
            f"MRR {self.mrr:.3f}",
        ]
        if "totalMs" in self.latency_ms:
            parts.append(f"median query {self.latency_ms['totalMs']:.0f} ms")
        return " | ".join(parts)


# --- corpus ---------------------------------------------------------------------

def build_corpus(count: int, seed: int) -> list[LabeledImage]:
    """Uniform scenes with per-image render jitter; deterministic in
    (count, seed)."""
    rng = np.random.default_rng(seed)
    colors = list(PALETTE)
    corpus: list[LabeledImage] = []
    for i in range(count):
        shape = SHAPES[rng.integers(0, len(SHAPES))]
        color = colors[rng.integers(0, len(colors))]
        others = [c for c in colors if c != color]
        background = others[rng.integers(0, len(others))]
        position = POSITIONS[rng.integers(0, len(POSITIONS))]
        render_seed = int(rng.integers(0, 2**31))
        scene = SceneSpec(shape, color, background, position)
        corpus.append(LabeledImage(
            image_id=i,
            scene=scene,
            render_seed=render_seed,
            pixels=mock_render(scene, render_seed, CORPUS_RESOLUTION),
        ))
    return corpus


def write_corpus(corpus: Sequence[LabeledImage], directory) -> dict[str, SceneSpec]:
    """Render the corpus to <id>.png files; returns relpath -> scene."""
    from pathlib import Path

    from .pixels import encode_png

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mapping = {}
    for image in corpus:
        name = f"{image.image_id:05d}.png"
        (directory / name).write_bytes(encode_png(image.pixels))
        mapping[name] = image.scene
    return mapping


# --- metrics -----------------------------------------------------------------------

def average_precision(ranked_ids: Sequence[int], relevant: Iterable[int]) -> float:
    """AP = mean over the relevant set of precision at each relevant hit;
    relevant documents missing from the ranking contribute zero."""
    relevant = set(relevant)
    if not relevant:
        raise EmptyRelevantSet("relevant set must be nonempty")
    hits = 0
    precision_sum = 0.0
    for i, doc in enumerate(ranked_ids, start=1):
        if doc in relevant:
            hits += 1
            precision_sum += hits / i
    return precision_sum / len(relevant)


def reciprocal_rank(ranked_ids: Sequence[int], relevant: Iterable[int]) -> float:
    """1/rank of the first relevant result; 0 when none is retrieved."""
    relevant = set(relevant)
    for i, doc in enumerate(ranked_ids, start=1):
        if doc in relevant:
            return 1.0 / i
    return 0.0


# --- query suite -----------------------------------------------------------------------

def scene_matches(scene: SceneSpec, **constraints) -> bool:
    return all(getattr(scene, key) == value for key, value in constraints.items())


def prompt_for(shape: str, color: str, background: str, position: str | None = None) -> str:
    base = f"a {color} {shape} on a {background} background"
    return f"{base} on the {position}" if position else base


def build_query_suite(
    scenes: dict[int, SceneSpec],
    simple_count: int = 20,
    hard_count: int = 20,
    seed: int = 7,
) -> list[BenchQuery]:
    """Deterministic suite over a labeled corpus.

    Simple queries constrain (shape color, background); the prompt's
    shape is decor drawn from the corpus. Hard queries constrain all
    four scene attributes. Both tiers sample realized scenes, so every
    relevant set is nonempty by construction.
    """
    rng = np.random.default_rng(seed)
    ids_by_colors: dict[tuple[str, str], list[int]] = {}
    for image_id, scene in scenes.items():
        ids_by_colors.setdefault((scene.shape_color, scene.background), []).append(image_id)

    queries: list[BenchQuery] = []
    color_pairs = sorted(ids_by_colors)
    scene_list = sorted(scenes.items())
    seen_simple: set[tuple[str, str]] = set()
    while sum(q.hardness == "simple" for q in queries) < simple_count:
        pair = color_pairs[rng.integers(0, len(color_pairs))]
        if pair in seen_simple:
            continue
        seen_simple.add(pair)
        color, bg = pair
        pool = ids_by_colors[pair]
        decor = scenes[pool[rng.integers(0, len(pool))]]
        queries.append(BenchQuery(
            text=prompt_for(decor.shape, color, bg),
            relevant=frozenset(pool),
            hardness="simple",
        ))

    seen_hard: set[tuple] = set()
    while sum(q.hardness == "hard" for q in queries) < hard_count:
        _, scene = scene_list[rng.integers(0, len(scene_list))]
        key = (scene.shape, scene.shape_color, scene.background, scene.position)
        if key in seen_hard:
            continue
        seen_hard.add(key)
        relevant = frozenset(
            image_id for image_id, s in scenes.items()
            if scene_matches(s, shape=scene.shape, shape_color=scene.shape_color,
                             background=scene.background, position=scene.position)
        )
        queries.append(BenchQuery(
            text=prompt_for(scene.shape, scene.shape_color, scene.background, scene.position),
            relevant=relevant,
            hardness="hard",
        ))
    return queries


# --- evaluation -------------------------------------------------------------------------

def evaluate(
    queries: Sequence[BenchQuery],
    run: Callable[[BenchQuery], tuple[list[int], dict[str, float]]],
    collect_latency: bool = True,
) -> BenchReport:
    """Run every query sequentially through `run` and aggregate.

    `run` returns (ranked ids, stage timings in ms); timings may be
    empty. Queries run one at a time so the latency medians are not
    polluted by contention.
    """
    per_ap: dict[str, float] = {}
    per_rr: dict[str, float] = {}
    hardness: dict[str, str] = {}
    stage_samples: dict[str, list[float]] = {}
    for query in queries:
        t0 = time.perf_counter()
        ranked, timings = run(query)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        per_ap[query.text] = average_precision(ranked, query.relevant)
        per_rr[query.text] = reciprocal_rank(ranked, query.relevant)
        hardness[query.text] = query.hardness
        if collect_latency:
            for stage, ms in timings.items():
                stage_samples.setdefault(stage, []).append(ms)
            stage_samples.setdefault("wallMs", []).append(wall_ms)

    def mean_of(tier: str) -> float:
        vals = [per_ap[t] for t, h in hardness.items() if h == tier]
        return float(np.mean(vals)) if vals else 0.0

    all_ap = list(per_ap.values())
    return BenchReport(
        per_query_ap=per_ap,
        per_query_rr=per_rr,
        hardness=hardness,
        map_score=float(np.mean(all_ap)) if all_ap else 0.0,
        map_simple=mean_of("simple"),
        map_hard=mean_of("hard"),
        mrr=float(np.mean(list(per_rr.values()))) if per_rr else 0.0,
        latency_ms={
            stage: float(np.median(samples)) for stage, samples in stage_samples.items()
        },
    )
