"""Embedder registry and the built-in pixel-statistics embedders.

The registry file (embedders.json) is an array of objects with exactly
the keys `name`, `model`, `dim`, `weight`, `enabled`. `model` selects
the backend:

    builtin:colorhist64   4x4x4 RGB histogram, l1-normalized
    builtin:grid64        8x8 mean-luminance grid
    builtin:edge36        Sobel orientation histogram, 36 x 10-degree bins
    remote:<url>          HTTP batch endpoint (base64 PNGs in, vectors out)

Builtins are pure functions of the pixels, so the whole pipeline is
deterministic and testable without model weights; real vision models
attach through the remote protocol.
"""

from __future__ import annotations

import base64
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import requests

from .errors import (
    BatchTooLarge,
    DimMismatchWithExistingCollection,
    DuplicateName,
    EmbedderUnavailable,
    RegistryParseError,
)
from .pixels import ImagePixels, encode_png

DEFAULT_BATCH_LIMIT = 50

_ALLOWED_KEYS = {"name", "model", "dim", "weight", "enabled"}

BUILTIN_DIMS = {
    "builtin:colorhist64": 64,
    "builtin:grid64": 64,
    "builtin:edge36": 36,
}


@dataclass(frozen=True)
class EmbedderSpec:
    name: str
    model: str
    dim: int
    weight: float
    enabled: bool


# --- registry ----------------------------------------------------------------

def load_registry(
    path: str | Path, existing_dims: Mapping[str, int] | None = None
) -> list[EmbedderSpec]:
    """Parse embedders.json; every entry is validated strictly.

    `existing_dims` maps embedder name to the dim of an already-created
    vector collection; changing the dim of a live embedder is rejected
    because it would orphan the stored vectors.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise RegistryParseError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise RegistryParseError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(raw, list):
        raise RegistryParseError(f"{path}: top level must be an array")

    specs: list[EmbedderSpec] = []
    seen: set[str] = set()
    for i, entry in enumerate(raw):
        where = f"{path}: entry {i}"
        if not isinstance(entry, dict):
            raise RegistryParseError(f"{where}: must be an object")
        unknown = set(entry) - _ALLOWED_KEYS
        if unknown:
            raise RegistryParseError(f"{where}: unknown keys {sorted(unknown)}")
        missing = _ALLOWED_KEYS - set(entry)
        if missing:
            raise RegistryParseError(f"{where}: missing keys {sorted(missing)}")
        name = entry["name"]
        if not isinstance(name, str) or not name:
            raise RegistryParseError(f"{where}: field 'name' must be a nonempty string")
        if name in seen:
            raise DuplicateName(f"{where}: duplicate embedder {name!r}")
        seen.add(name)
        model = entry["model"]
        if not isinstance(model, str) or not (
            model in BUILTIN_DIMS or model.startswith("remote:")
        ):
            raise RegistryParseError(f"{where}: field 'model' has unsupported value {model!r}")
        dim = entry["dim"]
        if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
            raise RegistryParseError(f"{where}: field 'dim' must be a positive integer")
        if model in BUILTIN_DIMS and dim != BUILTIN_DIMS[model]:
            raise RegistryParseError(
                f"{where}: field 'dim' must be {BUILTIN_DIMS[model]} for {model}"
            )
        weight = entry["weight"]
        if not isinstance(weight, (int, float)) or isinstance(weight, bool) \
                or not np.isfinite(weight) or weight < 0:
            raise RegistryParseError(f"{where}: field 'weight' must be a finite non-negative number")
        enabled = entry["enabled"]
        if not isinstance(enabled, bool):
            raise RegistryParseError(f"{where}: field 'enabled' must be a boolean")
        if existing_dims and name in existing_dims and existing_dims[name] != dim:
            raise DimMismatchWithExistingCollection(
                f"{where}: {name!r} has a collection of dim {existing_dims[name]}, "
                f"registry says {dim}"
            )
        specs.append(EmbedderSpec(name, model, dim, float(weight), enabled))
    return specs


def write_registry(path: str | Path, specs: Sequence[EmbedderSpec]) -> None:
    payload = [
        {"name": s.name, "model": s.model, "dim": s.dim,
         "weight": s.weight, "enabled": s.enabled}
        for s in specs
    ]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


# --- builtin embedders ---------------------------------------------------------

def color_histogram64(image: ImagePixels) -> np.ndarray:
    """4x4x4 RGB histogram with uniform bins of width 64, l1-normalized.

    Component layout: index = 16*r_bin + 4*g_bin + b_bin.
    """
    q = (image.data >> 6).astype(np.int32)  # 256/4 = 64-wide bins
    idx = (q[:, :, 0] << 4) | (q[:, :, 1] << 2) | q[:, :, 2]
    hist = np.bincount(idx.ravel(), minlength=64).astype(np.float64)
    total = hist.sum()
    return hist / total if total else hist


def grid_intensity64(image: ImagePixels) -> np.ndarray:
    """8x8 grid of mean luminance values in [0, 1], row-major.

    Cell edges split width and height as evenly as integer bounds allow;
    cells that end up empty (images narrower than 8 px) contribute 0.
    """
    lum = image.luminance()
    h, w = lum.shape
    out = np.zeros(64, dtype=np.float64)
    for row in range(8):
        y0, y1 = row * h // 8, (row + 1) * h // 8
        for col in range(8):
            x0, x1 = col * w // 8, (col + 1) * w // 8
            cell = lum[y0:y1, x0:x1]
            if cell.size:
                out[row * 8 + col] = cell.mean()
    return out


def edge_orientation_hist36(image: ImagePixels) -> np.ndarray:
    """Orientation histogram of Sobel gradients: 36 bins of 10 degrees,
    magnitude-weighted and l1-normalized; all-zero when the image has no
    gradient (constant image or nothing but border pixels)."""
    lum = image.luminance()
    h, w = lum.shape
    if h < 3 or w < 3:
        return np.zeros(36, dtype=np.float64)
    # valid-region Sobel; borders carry no gradient estimate
    gx = (
        (lum[:-2, 2:] + 2.0 * lum[1:-1, 2:] + lum[2:, 2:])
        - (lum[:-2, :-2] + 2.0 * lum[1:-1, :-2] + lum[2:, :-2])
    )
    gy = (
        (lum[2:, :-2] + 2.0 * lum[2:, 1:-1] + lum[2:, 2:])
        - (lum[:-2, :-2] + 2.0 * lum[:-2, 1:-1] + lum[:-2, 2:])
    )
    mag = np.hypot(gx, gy)
    total = mag.sum()
    if total == 0.0:
        return np.zeros(36, dtype=np.float64)
    ang = np.degrees(np.arctan2(gy, gx)) % 360.0
    bins = np.minimum((ang // 10.0).astype(np.int64), 35)
    hist = np.bincount(bins.ravel(), weights=mag.ravel(), minlength=36)
    return hist / total


_BUILTIN_FNS: dict[str, Callable[[ImagePixels], np.ndarray]] = {
    "builtin:colorhist64": color_histogram64,
    "builtin:grid64": grid_intensity64,
    "builtin:edge36": edge_orientation_hist36,
}


# --- remote embedders -----------------------------------------------------------

class RemoteEmbedder:
    """Client for an HTTP embedding endpoint.

    Wire format: POST {"images": [<base64 PNG>, ...]} and the response
    is {"vectors": [[...], ...]}, positionally aligned. In-flight
    requests are bounded so a slow endpoint cannot pile up workers.
    """

    def __init__(self, endpoint: str, timeout_s: float = 30.0, max_inflight: int = 2):
        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self._gate = threading.Semaphore(max_inflight)

    def embed(self, images: Sequence[ImagePixels]) -> list[np.ndarray]:
        payload = {
            "images": [base64.b64encode(encode_png(img)).decode("ascii") for img in images]
        }
        with self._gate:
            try:
                resp = requests.post(self.endpoint, json=payload, timeout=self.timeout_s)
            except requests.RequestException as exc:
                raise EmbedderUnavailable(f"{self.endpoint}: {exc}") from exc
        if resp.status_code != 200:
            raise EmbedderUnavailable(f"{self.endpoint}: HTTP {resp.status_code}")
        try:
            vectors = resp.json()["vectors"]
        except (ValueError, KeyError) as exc:
            raise EmbedderUnavailable(f"{self.endpoint}: malformed response") from exc
        if len(vectors) != len(images):
            raise EmbedderUnavailable(
                f"{self.endpoint}: {len(vectors)} vectors for {len(images)} images"
            )
        return [np.asarray(v, dtype=np.float64) for v in vectors]


_remote_clients: dict[str, RemoteEmbedder] = {}
_remote_lock = threading.Lock()


def _remote_client(endpoint: str) -> RemoteEmbedder:
    with _remote_lock:
        client = _remote_clients.get(endpoint)
        if client is None:
            client = RemoteEmbedder(endpoint)
            _remote_clients[endpoint] = client
        return client


# --- batch interface -------------------------------------------------------------

def embed_batch(
    spec: EmbedderSpec,
    images: Sequence[ImagePixels],
    batch_limit: int = DEFAULT_BATCH_LIMIT,
) -> list[np.ndarray]:
    """Embed up to `batch_limit` images; output aligns with input order."""
    if len(images) > batch_limit:
        raise BatchTooLarge(f"{len(images)} images exceeds the batch limit {batch_limit}")
    if not images:
        return []
    if spec.model in _BUILTIN_FNS:
        fn = _BUILTIN_FNS[spec.model]
        return [fn(img) for img in images]
    if spec.model.startswith("remote:"):
        endpoint = spec.model.removeprefix("remote:")
        vectors = _remote_client(endpoint).embed(images)
        for v in vectors:
            if v.shape != (spec.dim,):
                raise EmbedderUnavailable(
                    f"{endpoint}: vector of shape {v.shape}, expected ({spec.dim},)"
                )
        return vectors
    raise EmbedderUnavailable(f"no backend for model {spec.model!r}")
