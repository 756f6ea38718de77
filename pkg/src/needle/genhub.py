"""Generator hub: produces guide images for a query via prioritized engines.

Two engine kinds exist. `mock` renders a flat-color scene parsed from the
prompt (grammar below) entirely in-process, which keeps the pipeline
runnable and deterministic without any model weights. `remote` forwards
the request to an HTTP endpoint speaking a small JSON protocol and is the
seam where real text-to-image backends attach.

Prompt grammar (case-insensitive):

    a <color> <shape> on a <color> background [on the <position>]

with shape in {circle, square, triangle}, position in {left, center,
right} and colors from an 8-color palette. Prompts that do not parse
fall back to a scene derived from a stable 64-bit hash of the prompt,
so generation never refuses a query.

Engine failures are per-request: the whole request moves to the next
engine by (priority, name); an engine failing 3 requests in a row is
considered degraded and only retried after a 60 s backoff, or sooner as
a last resort when no healthy engine is left.
"""

from __future__ import annotations

import base64
import enum
import json
import re
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import requests
import xxhash

from .errors import (
    AllEnginesFailed,
    BadResponse,
    EngineTimeout,
    HttpError,
    NoEnabledEngines,
    StaleRevision,
)
from .pixels import DecodeError, ImagePixels, decode_image

DEGRADED_AFTER_FAILURES = 3
DEGRADED_BACKOFF_S = 60.0
DEFAULT_TIMEOUT_MS = 10_000
DEFAULT_MAX_INFLIGHT = 4

SHAPES = ("circle", "square", "triangle")
POSITIONS = ("left", "center", "right")

# Palette components sit at 0/255, away from the 64-wide histogram bin
# edges, so the renderer's +-5 color noise never moves a bin.
PALETTE = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
    "cyan": (0, 255, 255),
    "magenta": (255, 0, 255),
    "white": (255, 255, 255),
    "black": (0, 0, 0),
}


class Resolution(enum.IntEnum):
    SMALL = 256
    MEDIUM = 512
    LARGE = 1024

    @classmethod
    def parse(cls, value) -> "Resolution":
        if isinstance(value, cls):
            return value
        if isinstance(value, int):
            return cls(value)
        return cls[str(value).upper()]


@dataclass(frozen=True)
class SceneSpec:
    shape: str
    shape_color: str
    background: str
    position: str = "center"

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"bad shape {self.shape!r}")
        if self.shape_color not in PALETTE or self.background not in PALETTE:
            raise ValueError("colors must come from the palette")
        if self.shape_color == self.background:
            raise ValueError("shape color must differ from background")
        if self.position not in POSITIONS:
            raise ValueError(f"bad position {self.position!r}")


@dataclass(frozen=True)
class GenRequest:
    prompt: str
    m: int
    resolution: Resolution = Resolution.MEDIUM
    seed: Optional[int] = None

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")


@dataclass
class GuideImage:
    id: str
    engine_name: str
    seed: int
    pixels: ImagePixels
    prompt_echo: str
    kept: bool = True


@dataclass
class EngineSpec:
    name: str
    kind: str  # mock | remote
    priority: int
    enabled: bool
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("mock", "remote"):
            raise ValueError(f"bad engine kind {self.kind!r}")


# --- prompt parsing -----------------------------------------------------------

_COLOR = "|".join(PALETTE)
_PROMPT_RE = re.compile(
    rf"^\s*an?\s+(?P<color>{_COLOR})\s+(?P<shape>circle|square|triangle)"
    rf"\s+on\s+an?\s+(?P<bg>{_COLOR})\s+background"
    rf"(?:\s+on\s+the\s+(?P<pos>left|center|right))?\s*$",
    re.IGNORECASE,
)


def prompt_hash(prompt: str) -> int:
    """Stable 64-bit digest of a normalized prompt."""
    return xxhash.xxh64(" ".join(prompt.lower().split())).intdigest()


def parse_prompt(prompt: str) -> SceneSpec:
    """Parse the scene grammar; anything else maps to a hash-derived scene.

    The fallback keeps the mock engine total: every prompt renders
    *something*, and the same prompt always renders the same thing.
    """
    match = _PROMPT_RE.match(prompt)
    if match:
        color = match.group("color").lower()
        bg = match.group("bg").lower()
        if color != bg:
            return SceneSpec(
                shape=match.group("shape").lower(),
                shape_color=color,
                background=bg,
                position=(match.group("pos") or "center").lower(),
            )
    digest = prompt_hash(prompt)
    names = list(PALETTE)
    color = names[digest % 8]
    bg = names[(digest >> 3) % 7]
    if bg == color:  # last palette entry is never picked by the bg draw
        bg = names[7] if color != names[7] else names[6]
    return SceneSpec(
        shape=SHAPES[(digest >> 6) % 3],
        shape_color=color,
        background=bg,
        position=POSITIONS[(digest >> 9) % 3],
    )


# --- mock rendering ---------------------------------------------------------------

def mock_render(scene: SceneSpec, seed: int, resolution: Resolution) -> ImagePixels:
    """Deterministic raster of a scene.

    The shape's extent is ~40% of the frame side, jittered +-10%; its
    anchor sits at the position cell's center, jittered +-5% of the
    frame; both fill colors get one +-5 per-channel offset. Jitter makes
    several guides for one prompt genuinely different images.
    """
    res = int(resolution)
    rng = np.random.Generator(np.random.PCG64(seed))
    size = 0.4 * res * (1.0 + rng.uniform(-0.1, 0.1))
    dx = rng.uniform(-0.05, 0.05) * res
    dy = rng.uniform(-0.05, 0.05) * res
    shape_noise = rng.integers(-5, 6, size=3)
    bg_noise = rng.integers(-5, 6, size=3)

    cx = {"left": 0.25, "center": 0.5, "right": 0.75}[scene.position] * res + dx
    cy = 0.5 * res + dy

    shape_rgb = np.clip(np.array(PALETTE[scene.shape_color]) + shape_noise, 0, 255)
    bg_rgb = np.clip(np.array(PALETTE[scene.background]) + bg_noise, 0, 255)

    data = np.empty((res, res, 3), dtype=np.uint8)
    data[:, :] = bg_rgb.astype(np.uint8)

    ys, xs = np.ogrid[:res, :res]
    if scene.shape == "circle":
        mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= (size / 2) ** 2
    elif scene.shape == "square":
        mask = (np.abs(xs - cx) <= size / 2) & (np.abs(ys - cy) <= size / 2)
    else:  # upward triangle: apex at the top, base at the bottom
        half_h = size / 2
        rel_y = ys - (cy - half_h)
        half_w = (size / 2) * np.clip(rel_y / (2 * half_h), 0.0, 1.0)
        mask = (rel_y >= 0) & (rel_y <= 2 * half_h) & (np.abs(xs - cx) <= half_w)
    data[mask] = shape_rgb.astype(np.uint8)
    return ImagePixels.from_array(data)


# --- remote engines ------------------------------------------------------------------

def remote_generate(engine: EngineSpec, request: GenRequest) -> list[GuideImage]:
    """Call a remote engine over the JSON wire protocol.

    POST {prompt, m, resolution, seed} and expect {"images": [b64 PNG
    x m]}. Short answers, undecodable images, HTTP errors, and timeouts
    all surface as engine-level failures the caller's fallback absorbs.
    """
    endpoint = engine.params.get("endpoint")
    if not endpoint:
        raise BadResponse(f"engine {engine.name!r} has no endpoint configured")
    timeout_s = engine.params.get("timeout_ms", DEFAULT_TIMEOUT_MS) / 1000.0
    body = {
        "prompt": request.prompt,
        "m": request.m,
        "resolution": int(request.resolution),
        "seed": request.seed,
    }
    try:
        resp = requests.post(endpoint, json=body, timeout=timeout_s)
    except requests.Timeout as exc:
        raise EngineTimeout(f"{engine.name}: no response within {timeout_s:.1f}s") from exc
    except requests.RequestException as exc:
        raise BadResponse(f"{engine.name}: {exc}") from exc
    if resp.status_code != 200:
        raise HttpError(resp.status_code, f"{engine.name}: HTTP {resp.status_code}")
    try:
        images = resp.json()["images"]
    except (ValueError, KeyError) as exc:
        raise BadResponse(f"{engine.name}: malformed response body") from exc
    if not isinstance(images, list) or len(images) != request.m:
        raise BadResponse(
            f"{engine.name}: expected {request.m} images, got "
            f"{len(images) if isinstance(images, list) else 'non-list'}"
        )
    guides = []
    base_seed = request.seed if request.seed is not None else 0
    for i, b64 in enumerate(images):
        try:
            pixels = decode_image(base64.b64decode(b64))
        except (DecodeError, ValueError) as exc:
            raise BadResponse(f"{engine.name}: image {i} undecodable: {exc}") from exc
        guides.append(GuideImage(
            id=f"g{uuid.uuid4().hex[:12]}",
            engine_name=engine.name,
            seed=base_seed + i,
            pixels=pixels,
            prompt_echo=request.prompt,
        ))
    return guides


# --- the hub ---------------------------------------------------------------------------

class _EngineHealth:
    __slots__ = ("consecutive_failures", "retry_at")

    def __init__(self):
        self.consecutive_failures = 0
        self.retry_at = 0.0


class GeneratorHub:
    """Engine registry with transparent priority fallback.

    Thread-safe; health bookkeeping is shared across concurrent queries
    and per-engine in-flight caps bound concurrency toward remote
    backends.
    """

    def __init__(
        self,
        engines: Sequence[EngineSpec],
        config_path: str | Path | None = None,
        now: Callable[[], float] = time.monotonic,
    ):
        self._engines = {e.name: e for e in engines}
        if len(self._engines) != len(engines):
            raise ValueError("engine names must be unique")
        self.config_path = Path(config_path) if config_path else None
        self._now = now
        self._lock = threading.Lock()
        self._health: dict[str, _EngineHealth] = {e.name: _EngineHealth() for e in engines}
        self._gates = {
            e.name: threading.Semaphore(int(e.params.get("max_inflight", DEFAULT_MAX_INFLIGHT)))
            for e in engines
        }
        self._seed_rng = np.random.default_rng()
        self.revision = 0

    # -- registry management --------------------------------------------------

    @classmethod
    def from_config(cls, path: str | Path, now=time.monotonic) -> "GeneratorHub":
        entries = json.loads(Path(path).read_text())
        engines = [
            EngineSpec(
                name=e["name"], kind=e["kind"], priority=int(e["priority"]),
                enabled=bool(e["enabled"]), params=dict(e.get("params", {})),
            )
            for e in entries
        ]
        return cls(engines, config_path=path, now=now)

    def save(self) -> None:
        if self.config_path is None:
            return
        payload = [
            {"name": e.name, "kind": e.kind, "priority": e.priority,
             "enabled": e.enabled, "params": e.params}
            for e in self.engines()
        ]
        self.config_path.write_text(json.dumps(payload, indent=2) + "\n")

    def engines(self) -> list[EngineSpec]:
        with self._lock:
            return sorted(self._engines.values(), key=lambda e: (e.priority, e.name))

    def engine_health(self, name: str) -> bool:
        with self._lock:
            health = self._health[name]
            return health.consecutive_failures < DEGRADED_AFTER_FAILURES

    def reorder(self, ordered_names: Sequence[str], revision: int) -> int:
        """Rewrite priorities 0..n-1 atomically; stale revisions conflict."""
        with self._lock:
            if revision != self.revision:
                raise StaleRevision(f"revision {revision} != current {self.revision}")
            unknown = [n for n in ordered_names if n not in self._engines]
            if unknown:
                raise KeyError(f"unknown engines {unknown}")
            if len(set(ordered_names)) != len(self._engines):
                raise KeyError("orderedNames must list every engine exactly once")
            for i, name in enumerate(ordered_names):
                self._engines[name].priority = i
            self.revision += 1
        self.save()
        return self.revision

    def set_enabled(self, per_engine: dict[str, bool], revision: int) -> int:
        with self._lock:
            if revision != self.revision:
                raise StaleRevision(f"revision {revision} != current {self.revision}")
            unknown = [n for n in per_engine if n not in self._engines]
            if unknown:
                raise KeyError(f"unknown engines {unknown}")
            for name, enabled in per_engine.items():
                self._engines[name].enabled = bool(enabled)
            self.revision += 1
        self.save()
        return self.revision

    # -- generation --------------------------------------------------------------

    def _candidate_order(self, only: Optional[set[str]] = None) -> list[EngineSpec]:
        """Enabled engines: healthy ones first, backing-off ones last."""
        now = self._now()
        with self._lock:
            enabled = [e for e in self._engines.values() if e.enabled]
            if only is not None:
                enabled = [e for e in enabled if e.name in only]
            healthy, degraded = [], []
            for e in enabled:
                h = self._health[e.name]
                if h.consecutive_failures >= DEGRADED_AFTER_FAILURES and now < h.retry_at:
                    degraded.append(e)
                else:
                    healthy.append(e)
        key = lambda e: (e.priority, e.name)
        return sorted(healthy, key=key) + sorted(degraded, key=key)

    def _record(self, name: str, ok: bool) -> None:
        with self._lock:
            health = self._health[name]
            if ok:
                health.consecutive_failures = 0
            else:
                health.consecutive_failures += 1
                if health.consecutive_failures >= DEGRADED_AFTER_FAILURES:
                    health.retry_at = self._now() + DEGRADED_BACKOFF_S

    def _run_engine(self, engine: EngineSpec, request: GenRequest) -> list[GuideImage]:
        if engine.kind == "remote":
            return remote_generate(engine, request)
        if engine.params.get("fail"):
            raise BadResponse(f"{engine.name}: forced failure (fault injection)")
        scene = parse_prompt(request.prompt)
        if request.seed is not None:
            seeds = [request.seed + i for i in range(request.m)]
        else:
            with self._lock:
                seeds = [int(s) for s in self._seed_rng.integers(0, 2**31, size=request.m)]
        return [
            GuideImage(
                id=f"g{uuid.uuid4().hex[:12]}",
                engine_name=engine.name,
                seed=seed,
                pixels=mock_render(scene, seed, request.resolution),
                prompt_echo=request.prompt,
            )
            for seed in seeds
        ]

    def generate(
        self, request: GenRequest, only: Optional[set[str]] = None
    ) -> list[GuideImage]:
        """Produce exactly m guide images from the first engine that can.

        Partial output is never returned: an engine either serves the
        whole request or the request is rerouted, keeping provenance
        uniform for the downstream outlier filter. `only` restricts the
        fallback chain to a per-request engine subset.
        """
        order = self._candidate_order(only)
        if not order:
            raise NoEnabledEngines("no enabled generator engines")
        causes: dict[str, str] = {}
        for engine in order:
            gate = self._gates[engine.name]
            with gate:
                try:
                    guides = self._run_engine(engine, request)
                except Exception as exc:  # engine-level failure: try the next one
                    self._record(engine.name, ok=False)
                    causes[engine.name] = f"{type(exc).__name__}: {exc}"
                    continue
            self._record(engine.name, ok=True)
            return guides
        raise AllEnginesFailed(causes)
