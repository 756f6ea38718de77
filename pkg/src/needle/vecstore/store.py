"""Durable vector collections over the HNSW graph.

Layout, one subdirectory per collection under <root>/vectors/<name>/:

  segments.bin  append-only log of little-endian records:
                u64 id, then dim x f32. A record whose payload is all
                NaN is a deletion marker for that id. The i-th
                *insert* record corresponds to graph slot i, so the
                log alone can rebuild the index.
  graph.snap    binary topology snapshot, written on close and after
                compaction. Header: magic "NDLV1", u32 dim, u32 M,
                u32 efConstruction, u64 seed; then u32 efSearch,
                u8 metric (0=cosine, 1=l2), u64 rng state,
                u64 covered segment bytes, u64 node count,
                i64 entry slot, i32 max level, and per node:
                u64 id, u8 deleted, u16 level, per layer
                (u16 degree, degree x u32 neighbor slots).
  meta.json     creation parameters, kept so a collection with a
                corrupt or missing snapshot can still be rebuilt by
                replaying the log.

Opening a collection replays any log records past the snapshot's
covered offset; a missing or stale snapshot triggers a full replay.
"""

from __future__ import annotations

import json
import re
import struct
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import (
    CollectionExistsWithDifferentParams,
    DimensionMismatch,
    DuplicateId,
    InvalidDim,
    NonFiniteComponent,
    UnknownCollection,
)
from .hnsw import HnswGraph

_MAGIC = b"NDLV1"
_METRICS = ("cosine", "l2")
_NAME_RE = re.compile(r"^[A-Za-z0-9_.-]+$")

# Dead-vector fraction that triggers a rebuild; tombstones keep removal
# cheap, compaction keeps search traffic from rotting.
COMPACT_DEAD_RATIO = 0.30


@dataclass(frozen=True)
class HnswParams:
    m: int = 48
    ef_construction: int = 200
    ef_search: int = 200
    metric: str = "cosine"

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("M must be >= 2")
        if self.ef_construction < self.m:
            raise ValueError("efConstruction must be >= M")
        if self.ef_search < 1:
            raise ValueError("efSearch must be >= 1")
        if self.metric not in _METRICS:
            raise ValueError(f"metric must be one of {_METRICS}")


@dataclass(frozen=True)
class SearchHit:
    id: int
    distance: float


class _RWLock:
    """Many readers or one writer; searches share, mutations serialize.

    Writer-preferring: a continuous stream of searches must not starve
    ingestion, so new readers queue behind a waiting writer.
    """

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writing = False
        self._writers_waiting = 0

    @contextmanager
    def read(self):
        with self._cond:
            while self._writing or self._writers_waiting:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if self._readers == 0:
                    self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            self._writers_waiting += 1
            while self._writing or self._readers:
                self._cond.wait()
            self._writers_waiting -= 1
            self._writing = True
        try:
            yield
        finally:
            with self._cond:
                self._writing = False
                self._cond.notify_all()


class Collection:
    """One named, durable vector collection with its own HNSW index."""

    def __init__(self, directory: Path, name: str, dim: int, params: HnswParams, seed: int):
        self.directory = Path(directory)
        self.name = name
        self.dim = dim
        self.params = params
        self.seed = seed
        self._lock = _RWLock()
        self._record_size = 8 + 4 * dim
        self.directory.mkdir(parents=True, exist_ok=True)
        self._graph = HnswGraph(dim, params.m, params.ef_construction, params.metric, seed)
        self._load()
        self._segment = open(self._segment_path, "ab")

    # -- paths ---------------------------------------------------------------

    @property
    def _segment_path(self) -> Path:
        return self.directory / "segments.bin"

    @property
    def _snapshot_path(self) -> Path:
        return self.directory / "graph.snap"

    @property
    def _meta_path(self) -> Path:
        return self.directory / "meta.json"

    # -- meta ------------------------------------------------------------------

    def write_meta(self) -> None:
        meta = {
            "name": self.name,
            "dim": self.dim,
            "m": self.params.m,
            "ef_construction": self.params.ef_construction,
            "ef_search": self.params.ef_search,
            "metric": self.params.metric,
            "seed": self.seed,
        }
        self._meta_path.write_text(json.dumps(meta, indent=2) + "\n")

    @staticmethod
    def read_meta(directory: Path) -> dict:
        return json.loads((Path(directory) / "meta.json").read_text())

    # -- loading -----------------------------------------------------------------

    def _read_segment_records(self):
        """Yield (ext_id, vector-or-None) per log record; None marks deletion.

        A trailing partial record (crash mid-append) is ignored.
        """
        if not self._segment_path.exists():
            return
        raw = self._segment_path.read_bytes()
        usable = len(raw) - (len(raw) % self._record_size)
        for off in range(0, usable, self._record_size):
            ext_id = struct.unpack_from("<Q", raw, off)[0]
            vec = np.frombuffer(raw, dtype="<f4", count=self.dim, offset=off + 8)
            if np.isnan(vec).all():
                yield ext_id, None
            else:
                yield ext_id, vec.astype(np.float32)

    def _load(self) -> None:
        snap = self._try_load_snapshot()
        records = list(self._read_segment_records())
        if snap is not None:
            rows, entry, max_level, rng_state, covered = snap
            covered_records = covered // self._record_size
            # slot order equals insert-record order within the covered prefix
            inserts = [vec for _, vec in records[:covered_records] if vec is not None]
            if len(inserts) == len(rows):
                self._graph.load_state(rows, inserts, entry, max_level, rng_state)
                for ext_id, vec in records[covered_records:]:
                    self._apply_record(ext_id, vec)
                return
        # missing or stale snapshot: full replay
        for ext_id, vec in records:
            self._apply_record(ext_id, vec)

    def _apply_record(self, ext_id: int, vec) -> None:
        if vec is None:
            self._graph.mark_deleted(ext_id)
        elif not self._graph.contains(ext_id):
            self._graph.insert(ext_id, vec)

    def _try_load_snapshot(self):
        path = self._snapshot_path
        if not path.exists():
            return None
        try:
            raw = path.read_bytes()
            off = 0

            def take(fmt):
                nonlocal off
                vals = struct.unpack_from(fmt, raw, off)
                off += struct.calcsize(fmt)
                return vals

            magic, dim, m, efc, seed = take("<5sIIIQ")
            if magic != _MAGIC or dim != self.dim or m != self.params.m:
                return None
            if efc != self.params.ef_construction or seed != self.seed:
                return None
            efs, metric_code, rng_state, covered, count, entry, max_level = take("<IBQQQqi")
            if _METRICS[metric_code] != self.params.metric:
                return None
            rows = []
            for _ in range(count):
                ext_id, deleted, level = take("<QBH")
                links = []
                for _layer in range(level + 1):
                    (degree,) = take("<H")
                    links.append(list(take(f"<{degree}I")) if degree else [])
                rows.append((ext_id, bool(deleted), level, links))
            return rows, entry, max_level, rng_state, covered
        except (struct.error, IndexError, ValueError):
            return None

    # -- durability ------------------------------------------------------------

    def _append(self, ext_id: int, vec: np.ndarray | None) -> None:
        payload = vec if vec is not None else np.full(self.dim, np.nan, dtype=np.float32)
        self._segment.write(struct.pack("<Q", ext_id) + payload.astype("<f4").tobytes())
        self._segment.flush()

    def write_snapshot(self) -> None:
        parts = [struct.pack(
            "<5sIIIQ", _MAGIC, self.dim, self.params.m,
            self.params.ef_construction, self.seed,
        )]
        parts.append(struct.pack(
            "<IBQQQqi",
            self.params.ef_search,
            _METRICS.index(self.params.metric),
            self._graph.rng.state,
            self._segment_path.stat().st_size if self._segment_path.exists() else 0,
            self._graph.total_count,
            self._graph._entry,
            self._graph._max_level,
        ))
        for ext_id, deleted, level, links in self._graph.state_rows():
            parts.append(struct.pack("<QBH", ext_id, 1 if deleted else 0, level))
            for layer in links:
                parts.append(struct.pack("<H", len(layer)))
                if layer:
                    parts.append(struct.pack(f"<{len(layer)}I", *layer))
        tmp = self._snapshot_path.with_suffix(".snap.tmp")
        tmp.write_bytes(b"".join(parts))
        tmp.replace(self._snapshot_path)

    def flush(self) -> None:
        with self._lock.write():
            self._segment.flush()
            self.write_snapshot()

    def close(self) -> None:
        self.flush()
        self._segment.close()

    # -- validation helpers ---------------------------------------------------

    def _check_vector(self, vector, *, for_insert: bool) -> np.ndarray:
        vec = np.asarray(vector, dtype=np.float32).reshape(-1)
        if vec.shape[0] != self.dim:
            raise DimensionMismatch(
                f"collection {self.name!r} has dim {self.dim}, got {vec.shape[0]}"
            )
        if not np.isfinite(vec).all():
            raise NonFiniteComponent(f"non-finite component in vector for {self.name!r}")
        if self.params.metric == "cosine":
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                if for_insert:
                    raise NonFiniteComponent(
                        "zero vector cannot be stored under the cosine metric"
                    )
                return vec  # zero query: distances all 1.0, still well-defined
            vec = vec / norm
        return vec

    # -- public operations ------------------------------------------------------

    @property
    def count(self) -> int:
        return self._graph.live_count

    def ids(self) -> list[int]:
        with self._lock.read():
            return self._graph.ids()

    def insert(self, ext_id: int, vector) -> None:
        vec = self._check_vector(vector, for_insert=True)
        with self._lock.write():
            if self._graph.contains(ext_id):
                raise DuplicateId(f"id {ext_id} already in collection {self.name!r}")
            self._graph.insert(int(ext_id), vec)
            self._append(int(ext_id), vec)

    def remove(self, ext_id: int) -> None:
        """Tombstone the id; compacts once dead vectors pass the threshold."""
        with self._lock.write():
            if not self._graph.mark_deleted(int(ext_id)):
                return
            self._append(int(ext_id), None)
            total = self._graph.total_count
            if total and self._graph.dead_count / total >= COMPACT_DEAD_RATIO:
                self._compact()

    def contains(self, ext_id: int) -> bool:
        with self._lock.read():
            return self._graph.contains(int(ext_id))

    def _compact(self) -> None:
        """Rebuild the graph from survivors and rewrite the log."""
        survivors = [(i, self._graph.vector(i)) for i in self._graph.ids()]
        rebuilt = HnswGraph(
            self.dim, self.params.m, self.params.ef_construction,
            self.params.metric, self.seed,
        )
        rebuilt.rng.state = self._graph.rng.state
        for ext_id, vec in survivors:
            rebuilt.insert(ext_id, vec)
        self._graph = rebuilt
        self._segment.close()
        tmp = self._segment_path.with_suffix(".bin.tmp")
        with open(tmp, "wb") as fh:
            for ext_id, vec in survivors:
                fh.write(struct.pack("<Q", ext_id) + vec.astype("<f4").tobytes())
        tmp.replace(self._segment_path)
        self._segment = open(self._segment_path, "ab")
        self.write_snapshot()

    def search(self, query, k: int, ef_search: int | None = None) -> list[SearchHit]:
        if k < 1:
            raise ValueError("k must be >= 1")
        vec = self._check_vector(query, for_insert=False)
        ef = max(ef_search or self.params.ef_search, k)
        with self._lock.read():
            hits = self._graph.search(vec, k, ef)
        return [SearchHit(id=i, distance=d) for d, i in hits]

    def exact_search(self, query, k: int) -> list[SearchHit]:
        if k < 1:
            raise ValueError("k must be >= 1")
        vec = self._check_vector(query, for_insert=False)
        with self._lock.read():
            hits = self._graph.exact_search(vec, k)
        return [SearchHit(id=i, distance=d) for d, i in hits]


class VectorStore:
    """Directory of named collections, one per embedder."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._collections: dict[str, Collection] = {}
        self._lock = threading.RLock()
        for sub in sorted(self.root.iterdir()):
            if sub.is_dir() and (sub / "meta.json").exists():
                meta = Collection.read_meta(sub)
                params = HnswParams(
                    m=meta["m"], ef_construction=meta["ef_construction"],
                    ef_search=meta["ef_search"], metric=meta["metric"],
                )
                self._collections[meta["name"]] = Collection(
                    sub, meta["name"], meta["dim"], params, meta["seed"],
                )

    def create_collection(
        self, name: str, dim: int, params: HnswParams | None = None, seed: int | None = None
    ) -> Collection:
        """Create or idempotently reopen; differing parameters are an error."""
        if dim < 1:
            raise InvalidDim(f"dim must be >= 1, got {dim}")
        if not _NAME_RE.match(name):
            raise ValueError(f"collection name {name!r} is not filesystem-safe")
        params = params or HnswParams()
        with self._lock:
            existing = self._collections.get(name)
            if existing is not None:
                if existing.dim != dim or existing.params != params:
                    raise CollectionExistsWithDifferentParams(
                        f"{name!r}: existing (dim={existing.dim}, {existing.params}) "
                        f"vs requested (dim={dim}, {params})"
                    )
                return existing
            if seed is None:
                # stable per name so re-creation after data wipe is reproducible
                seed = int.from_bytes(name.encode("utf-8")[:8].ljust(8, b"\0"), "little")
            coll = Collection(self.root / name, name, dim, params, seed)
            coll.write_meta()
            self._collections[name] = coll
            return coll

    def get(self, name: str) -> Collection:
        with self._lock:
            if name not in self._collections:
                raise UnknownCollection(name)
            return self._collections[name]

    def names(self) -> list[str]:
        with self._lock:
            return sorted(self._collections)

    def has(self, name: str) -> bool:
        with self._lock:
            return name in self._collections

    def remove_everywhere(self, ext_id: int) -> None:
        with self._lock:
            collections = list(self._collections.values())
        for coll in collections:
            coll.remove(ext_id)

    def flush_all(self) -> None:
        with self._lock:
            collections = list(self._collections.values())
        for coll in collections:
            coll.flush()

    def close(self) -> None:
        with self._lock:
            for coll in self._collections.values():
                coll.close()
            self._collections.clear()
