"""Indexing pipeline: scanner, priority queue, workers, watcher, checker.

Flow: a directory gets registered (or a file event arrives), image
records land in the catalog as `pending`, and an IndexTask enters the
priority queue. Workers pull tasks by (priority, enqueue time), page
pending records in batches, decode each image once, run one embedding
batch per enabled embedder, insert the vectors, and flip the records to
`indexed`. The catalog's per-(image, embedder) state doubles as the
crash checkpoint: re-running a batch replaces vectors instead of
duplicating them, so a killed worker loses nothing.

Task priorities: 0 user-triggered adds, 1 watcher events,
2 reconciliation sweeps. One directory is processed by one worker at a
time (batch sequencing stays deterministic); different directories
drain in parallel.

The consistency checker (`reconcile`) diffs disk against catalog by
(relativePath, contentHash) to absorb offline changes: new files are
added and queued, vanished files are purged from the vector collections
first and the catalog second (a crash in between leaves a harmless
re-removable orphan), and rewritten files reset to pending for
re-embedding.
"""

from __future__ import annotations

import logging
import os
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Optional, Sequence

import xxhash
from watchdog.events import FileSystemEventHandler
from watchdog.observers import Observer

from .catalog import Catalog, DirectoryEntry, ImageRecord
from .embedders import EmbedderSpec, embed_batch
from .errors import NonFiniteComponent, PathNotFound
from .pixels import DecodeError, decode_file
from .vecstore import VectorStore

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}

PRIORITY_USER = 0
PRIORITY_WATCHER = 1
PRIORITY_RECONCILE = 2

DEBOUNCE_SECONDS = 0.5


def is_image_path(path: str | Path) -> bool:
    return Path(path).suffix.lower() in IMAGE_EXTENSIONS


def content_hash(path: str | Path) -> str:
    """xx64 digest of the full file bytes, 16 hex chars."""
    h = xxhash.xxh64()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class Candidate:
    relative_path: str
    content_hash: str
    byte_size: int
    mtime: float


@dataclass(order=True)
class IndexTask:
    priority: int
    enqueue_time: float
    seq: int
    directory_id: int = field(compare=False)


@dataclass
class ReconcileReport:
    added: int = 0
    removed: int = 0
    reembedded: int = 0
    skipped_directories: list[str] = field(default_factory=list)


def scan_directory(root: str | Path) -> list[Candidate]:
    """Recursive scan for image files, lexicographic by relative path.

    Directory symlinks are followed, but each real directory is visited
    once (device/inode tracking), so symlink loops terminate.
    """
    root = Path(root)
    if not root.is_dir():
        raise PathNotFound(str(root))
    candidates: list[Candidate] = []
    seen_dirs: set[tuple[int, int]] = set()

    def walk(directory: Path, rel: PurePosixPath) -> None:
        try:
            stat = os.stat(directory)
        except OSError:
            return
        key = (stat.st_dev, stat.st_ino)
        if key in seen_dirs:
            return
        seen_dirs.add(key)
        try:
            entries = sorted(os.scandir(directory), key=lambda e: e.name)
        except OSError:
            return
        for entry in entries:
            try:
                if entry.is_dir(follow_symlinks=True):
                    walk(Path(entry.path), rel / entry.name)
                elif entry.is_file(follow_symlinks=True) and is_image_path(entry.name):
                    st = entry.stat(follow_symlinks=True)
                    candidates.append(Candidate(
                        relative_path=str(rel / entry.name),
                        content_hash=content_hash(entry.path),
                        byte_size=st.st_size,
                        mtime=st.st_mtime,
                    ))
            except OSError:
                continue

    walk(root, PurePosixPath())
    candidates.sort(key=lambda c: c.relative_path)
    return candidates


class IngestManager:
    """Owns the task queue, the worker pool, and the consistency passes."""

    def __init__(
        self,
        catalog: Catalog,
        store: VectorStore,
        specs: Sequence[EmbedderSpec],
        batch_size: int = 50,
        workers: int = 4,
    ):
        self.catalog = catalog
        self.store = store
        self.specs = [s for s in specs if s.enabled]
        self.batch_size = batch_size
        self.worker_count = workers
        self._queue: queue.PriorityQueue[IndexTask] = queue.PriorityQueue()
        self._seq = 0
        self._seq_lock = threading.Lock()
        self._active_dirs: set[int] = set()
        self._dirty_dirs: set[int] = set()
        self._active_lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        self._running = False
        self._reconcile_lock = threading.Lock()
        self._idle = threading.Condition()
        self._inflight = 0
        # observability: every processed batch size, append-only
        self.batch_log: list[int] = []
        # debounced watcher events: path -> flush deadline
        self._pending_events: dict[str, float] = {}
        self._events_lock = threading.Lock()

    # -- queue -----------------------------------------------------------------

    def enqueue(self, directory_id: int, priority: int = PRIORITY_USER) -> None:
        with self._seq_lock:
            self._seq += 1
            seq = self._seq
        with self._idle:
            self._inflight += 1
        self._queue.put(IndexTask(priority, time.monotonic(), seq, directory_id))

    def start(self) -> None:
        if self._running:
            return
        self._running = True
        for i in range(self.worker_count):
            t = threading.Thread(target=self._worker_loop, name=f"ingest-{i}", daemon=True)
            t.start()
            self._threads.append(t)
        t = threading.Thread(target=self._event_flush_loop, name="ingest-debounce", daemon=True)
        t.start()
        self._threads.append(t)

    def stop(self) -> None:
        self._running = False
        for t in self._threads:
            t.join(timeout=5.0)
        self._threads.clear()

    def wait_idle(self, timeout: float = 60.0) -> bool:
        """Block until queued work and debounced events are fully drained."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._events_lock:
                events_pending = bool(self._pending_events)
            with self._idle:
                busy = self._inflight > 0
            if not busy and not events_pending:
                return True
            time.sleep(0.05)
        return False

    # -- workers ------------------------------------------------------------------

    def _worker_loop(self) -> None:
        while self._running:
            try:
                task = self._queue.get(timeout=0.1)
            except queue.Empty:
                continue
            try:
                self._run_task(task)
            except Exception:
                logger.exception("index task for directory %s failed", task.directory_id)
            finally:
                with self._idle:
                    self._inflight -= 1

    def _run_task(self, task: IndexTask) -> None:
        directory_id = task.directory_id
        with self._active_lock:
            if directory_id in self._active_dirs:
                # someone is draining it already; tell them to re-check
                self._dirty_dirs.add(directory_id)
                return
            self._active_dirs.add(directory_id)
        try:
            while self._running:
                entry = self.catalog.get_directory(directory_id)
                if entry is None or not entry.enabled:
                    break
                records = self.catalog.pending_page(directory_id, self.batch_size)
                if records:
                    self.process_batch(records, entry)
                    continue
                with self._active_lock:
                    if directory_id in self._dirty_dirs:
                        self._dirty_dirs.discard(directory_id)
                        continue
                    # atomically hand off: nothing pending, nobody waiting
                    self._active_dirs.discard(directory_id)
                    return
        finally:
            with self._active_lock:
                self._active_dirs.discard(directory_id)

    # -- batch processing -------------------------------------------------------------

    def process_batch(self, records: Sequence[ImageRecord], entry: DirectoryEntry) -> None:
        """Decode once, embed once per enabled embedder, insert, mark.

        Per-record failures (undecodable file, un-storable vector) mark
        that record failed for the affected embedders and never abort
        the rest of the batch.
        """
        if len(records) > self.batch_size:
            raise ValueError(f"batch of {len(records)} exceeds batchSize {self.batch_size}")
        self.batch_log.append(len(records))
        root = Path(entry.path)

        decoded = {}
        for record in records:
            path = root / record.relative_path
            try:
                decoded[record.id] = decode_file(path)
            except (DecodeError, OSError) as exc:
                logger.warning("decode failed for %s: %s", path, exc)
                for spec in self.specs:
                    if record.index_state.get(spec.name) == "pending":
                        self.catalog.mark_state(record.id, spec.name, "failed")

        for spec in self.specs:
            todo = [
                r for r in records
                if r.id in decoded and r.index_state.get(spec.name) == "pending"
            ]
            if not todo:
                continue
            vectors = embed_batch(spec, [decoded[r.id] for r in todo], self.batch_size)
            collection = self.store.get(spec.name)
            for record, vector in zip(todo, vectors):
                try:
                    if collection.contains(record.id):
                        # reprocessing after a crash or a content change:
                        # replace, never duplicate
                        collection.remove(record.id)
                    collection.insert(record.id, vector)
                except NonFiniteComponent as exc:
                    logger.warning("cannot store %s/%s: %s", spec.name, record.id, exc)
                    self.catalog.mark_state(record.id, spec.name, "failed")
                    continue
                self.catalog.mark_state(record.id, spec.name, "indexed")

    # -- directory registration ----------------------------------------------------------

    def add_directory(self, path: str | Path, priority: int = PRIORITY_USER) -> DirectoryEntry:
        """Register, scan, upsert candidates, and queue the indexing."""
        entry = self.catalog.register_directory(path)
        self.rescan_directory(entry, priority=priority)
        return self.catalog.get_directory(entry.id)

    def rescan_directory(self, entry: DirectoryEntry, priority: int = PRIORITY_USER) -> None:
        for cand in scan_directory(entry.path):
            self.catalog.upsert_image(
                entry.id, cand.relative_path, cand.content_hash, cand.byte_size, cand.mtime
            )
        self.enqueue(entry.id, priority)

    def remove_directory(self, directory_id: int) -> None:
        image_ids = self.catalog.remove_directory(directory_id)
        for image_id in image_ids:
            self.store.remove_everywhere(image_id)

    # -- watcher events ---------------------------------------------------------------------

    def notify_path_event(self, path: str) -> None:
        """Debounce entry point: editors fire bursts per save; only the
        state of the file half a second later matters."""
        if not is_image_path(path):
            return
        with self._events_lock:
            self._pending_events[os.path.abspath(path)] = time.monotonic() + DEBOUNCE_SECONDS

    def _event_flush_loop(self) -> None:
        while self._running:
            now = time.monotonic()
            due: list[str] = []
            with self._events_lock:
                for path, deadline in list(self._pending_events.items()):
                    if deadline <= now:
                        due.append(path)
                        del self._pending_events[path]
            for path in due:
                try:
                    with self._reconcile_lock:
                        self.apply_path_event(path)
                except Exception:
                    logger.exception("watch event for %s failed", path)
            time.sleep(0.05)

    def _owning_directory(self, path: str) -> Optional[DirectoryEntry]:
        best: Optional[DirectoryEntry] = None
        for entry in self.catalog.list_directories():
            if not entry.enabled:
                continue
            try:
                Path(path).relative_to(entry.path)
            except ValueError:
                continue
            if best is None or len(entry.path) > len(best.path):
                best = entry
        return best

    def apply_path_event(self, path: str) -> None:
        """Resolve one debounced path against the stores.

        The event kind is re-derived from the filesystem at flush time:
        an existing file upserts (hash change resets index state), a
        missing one deletes. That makes create/modify/delete bursts
        self-healing.
        """
        entry = self._owning_directory(path)
        if entry is None:
            logger.info("ignoring event for unregistered path %s", path)
            return
        rel = str(PurePosixPath(Path(path).relative_to(entry.path)))
        if os.path.exists(path):
            try:
                digest = content_hash(path)
                st = os.stat(path)
            except OSError as exc:
                logger.warning("cannot stat %s: %s", path, exc)
                return
            self.catalog.upsert_image(entry.id, rel, digest, st.st_size, st.st_mtime)
            self.enqueue(entry.id, PRIORITY_WATCHER)
        else:
            record = self.catalog.find_image(entry.id, rel)
            if record is not None:
                # vectors first: a crash here leaves a catalog row the
                # next pass re-removes, never a dangling vector
                self.store.remove_everywhere(record.id)
                self.catalog.remove_image(record.id)

    # -- consistency checker -------------------------------------------------------------------

    def reconcile(self) -> ReconcileReport:
        """Diff disk against catalog per enabled directory; runs with
        watcher event flushing paused."""
        report = ReconcileReport()
        with self._reconcile_lock:
            for entry in self.catalog.list_directories():
                if not entry.enabled:
                    continue
                try:
                    candidates = scan_directory(entry.path)
                except PathNotFound:
                    report.skipped_directories.append(entry.path)
                    continue
                on_disk = {c.relative_path: c for c in candidates}
                in_catalog = {r.relative_path: r for r in self.catalog.list_images(entry.id)}

                changed = False
                for rel, cand in on_disk.items():
                    known = in_catalog.get(rel)
                    if known is None:
                        self.catalog.upsert_image(
                            entry.id, rel, cand.content_hash, cand.byte_size, cand.mtime
                        )
                        report.added += 1
                        changed = True
                    elif known.content_hash != cand.content_hash:
                        self.catalog.upsert_image(
                            entry.id, rel, cand.content_hash, cand.byte_size, cand.mtime
                        )
                        report.reembedded += 1
                        changed = True
                for rel, record in in_catalog.items():
                    if rel not in on_disk:
                        self.store.remove_everywhere(record.id)
                        self.catalog.remove_image(record.id)
                        report.removed += 1
                if changed:
                    self.enqueue(entry.id, PRIORITY_RECONCILE)
        return report


class DirectoryWatcher:
    """watchdog adapter feeding filesystem events into the manager."""

    class _Handler(FileSystemEventHandler):
        def __init__(self, manager: IngestManager):
            self.manager = manager

        def on_created(self, event):
            if not event.is_directory:
                self.manager.notify_path_event(event.src_path)

        def on_modified(self, event):
            if not event.is_directory:
                self.manager.notify_path_event(event.src_path)

        def on_deleted(self, event):
            if not event.is_directory:
                self.manager.notify_path_event(event.src_path)

        def on_moved(self, event):
            if not event.is_directory:
                self.manager.notify_path_event(event.src_path)
                self.manager.notify_path_event(event.dest_path)

    def __init__(self, manager: IngestManager):
        self.manager = manager
        self._observer = Observer()
        self._handler = self._Handler(manager)
        self._watched: dict[int, object] = {}

    def watch(self, entry: DirectoryEntry) -> None:
        if entry.id not in self._watched and Path(entry.path).is_dir():
            self._watched[entry.id] = self._observer.schedule(
                self._handler, entry.path, recursive=True
            )

    def unwatch(self, directory_id: int) -> None:
        watch = self._watched.pop(directory_id, None)
        if watch is not None:
            self._observer.unschedule(watch)

    def start(self) -> None:
        self._observer.start()

    def stop(self) -> None:
        self._observer.stop()
        self._observer.join(timeout=5.0)
