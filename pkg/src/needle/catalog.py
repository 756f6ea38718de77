"""Relational metadata store for directories, images, and index state.

Backed by a single SQLite file under the data root. This is the system's
source of truth: the per-embedder vector collections are kept consistent
with it by the ingest pipeline and the consistency checker.

Schema notes:
  - directory paths are canonicalized (symlinks resolved) at registration,
    so the UNIQUE constraint catches duplicate registrations of one
    physical directory;
  - ids are AUTOINCREMENT and never reused, because they double as vector
    ids in the per-embedder collections;
  - index_state holds one row per (image, embedder) with state
    pending | indexed | failed; a content-hash change resets every row
    for that image back to pending;
  - deletions are hard deletes (the consistency checker re-adds files
    that reappear on disk).

The store exports/imports as line-delimited canonical JSON (one record
per line, `kind` field first by sort order: directory, embedder, image).
Exports are deterministic, so round-tripping a store through
close/reopen yields byte-equal export text.
"""

from __future__ import annotations

import json
import os
import sqlite3
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .errors import (
    NotADirectory,
    PathNotFound,
    PermissionDenied,
    UnknownDirectory,
    UnknownEmbedder,
)

_STATES = ("pending", "indexed", "failed")

_SCHEMA = """
CREATE TABLE IF NOT EXISTS directories (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    path TEXT NOT NULL UNIQUE,
    enabled INTEGER NOT NULL DEFAULT 1,
    created_at REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS images (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    directory_id INTEGER NOT NULL REFERENCES directories(id) ON DELETE CASCADE,
    relative_path TEXT NOT NULL,
    content_hash TEXT NOT NULL,
    byte_size INTEGER NOT NULL,
    mtime REAL NOT NULL,
    UNIQUE (directory_id, relative_path)
);
CREATE TABLE IF NOT EXISTS index_state (
    image_id INTEGER NOT NULL REFERENCES images(id) ON DELETE CASCADE,
    embedder TEXT NOT NULL,
    state TEXT NOT NULL CHECK (state IN ('pending', 'indexed', 'failed')),
    PRIMARY KEY (image_id, embedder)
);
CREATE TABLE IF NOT EXISTS embedders (
    name TEXT PRIMARY KEY
);
CREATE INDEX IF NOT EXISTS idx_state_by_embedder
    ON index_state (embedder, state, image_id);
"""


@dataclass
class DirectoryEntry:
    id: int
    path: str
    enabled: bool
    created_at: float
    image_count: int = 0


@dataclass
class ImageRecord:
    id: int
    directory_id: int
    relative_path: str
    content_hash: str
    byte_size: int
    mtime: float
    index_state: dict[str, str] = field(default_factory=dict)


def canonicalize(path: str | Path) -> Path:
    """Resolve symlinks and normalize separators; does not require existence."""
    return Path(path).expanduser().resolve()


class Catalog:
    """Thread-safe catalog over a single SQLite file.

    All operations are serialized on one lock: concurrent callers are
    safe, and each mutation is atomic (single transaction).
    """

    def __init__(self, db_path: str | Path):
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(str(self.db_path), check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA foreign_keys=ON")
        with self._conn:
            self._conn.executescript(_SCHEMA)

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # -- embedder set ------------------------------------------------------

    def set_embedders(self, names: Iterable[str]) -> None:
        """Sync the known-embedder set with the loaded registry.

        New names get a pending index_state row for every image; rows for
        dropped names are deleted (index state keys stay a subset of the
        registered embedders).
        """
        names = list(dict.fromkeys(names))
        with self._lock, self._conn:
            existing = {r[0] for r in self._conn.execute("SELECT name FROM embedders")}
            for name in names:
                if name not in existing:
                    self._conn.execute("INSERT INTO embedders (name) VALUES (?)", (name,))
                    self._conn.execute(
                        "INSERT OR IGNORE INTO index_state (image_id, embedder, state) "
                        "SELECT id, ?, 'pending' FROM images",
                        (name,),
                    )
            for name in existing - set(names):
                self._conn.execute("DELETE FROM embedders WHERE name = ?", (name,))
                self._conn.execute("DELETE FROM index_state WHERE embedder = ?", (name,))

    def embedder_names(self) -> list[str]:
        with self._lock:
            rows = self._conn.execute("SELECT name FROM embedders ORDER BY name")
            return [r[0] for r in rows]

    # -- directories ---------------------------------------------------------

    def register_directory(self, path: str | Path) -> DirectoryEntry:
        """Register an image directory; idempotent on the canonical path."""
        p = Path(path).expanduser()
        if not p.exists():
            raise PathNotFound(str(path))
        canonical = canonicalize(p)
        if not canonical.is_dir():
            raise NotADirectory(str(path))
        if not os.access(canonical, os.R_OK | os.X_OK):
            raise PermissionDenied(str(path))
        with self._lock, self._conn:
            row = self._conn.execute(
                "SELECT id FROM directories WHERE path = ?", (str(canonical),)
            ).fetchone()
            if row is not None:
                return self._directory(row[0])
            cur = self._conn.execute(
                "INSERT INTO directories (path, enabled, created_at) VALUES (?, 1, ?)",
                (str(canonical), time.time()),
            )
            return self._directory(cur.lastrowid)

    def _directory(self, directory_id: int) -> DirectoryEntry:
        row = self._conn.execute(
            "SELECT id, path, enabled, created_at FROM directories WHERE id = ?",
            (directory_id,),
        ).fetchone()
        if row is None:
            raise UnknownDirectory(str(directory_id))
        count = self._conn.execute(
            "SELECT COUNT(*) FROM images WHERE directory_id = ?", (directory_id,)
        ).fetchone()[0]
        return DirectoryEntry(
            id=row[0], path=row[1], enabled=bool(row[2]), created_at=row[3],
            image_count=count,
        )

    def get_directory(self, directory_id: int) -> Optional[DirectoryEntry]:
        with self._lock:
            try:
                return self._directory(directory_id)
            except UnknownDirectory:
                return None

    def find_directory_by_path(self, path: str | Path) -> Optional[DirectoryEntry]:
        canonical = str(canonicalize(path))
        with self._lock:
            row = self._conn.execute(
                "SELECT id FROM directories WHERE path = ?", (canonical,)
            ).fetchone()
            return self._directory(row[0]) if row else None

    def list_directories(self) -> list[DirectoryEntry]:
        with self._lock:
            ids = [r[0] for r in self._conn.execute("SELECT id FROM directories ORDER BY id")]
            return [self._directory(i) for i in ids]

    def set_directory_enabled(self, directory_id: int, enabled: bool) -> DirectoryEntry:
        with self._lock, self._conn:
            cur = self._conn.execute(
                "UPDATE directories SET enabled = ? WHERE id = ?",
                (1 if enabled else 0, directory_id),
            )
            if cur.rowcount == 0:
                raise UnknownDirectory(str(directory_id))
            return self._directory(directory_id)

    def remove_directory(self, directory_id: int) -> list[int]:
        """Cascade-delete a directory; returns the removed image ids so the
        caller can purge the matching vectors."""
        with self._lock, self._conn:
            image_ids = [
                r[0] for r in self._conn.execute(
                    "SELECT id FROM images WHERE directory_id = ?", (directory_id,)
                )
            ]
            self._conn.execute("DELETE FROM directories WHERE id = ?", (directory_id,))
            return image_ids

    # -- images ----------------------------------------------------------------

    def upsert_image(
        self,
        directory_id: int,
        relative_path: str,
        content_hash: str,
        byte_size: int,
        mtime: float,
    ) -> ImageRecord:
        """Insert the record, or update hash/size/mtime of the existing one.

        A content-hash change resets every index_state row to pending;
        an unchanged hash leaves index state untouched.
        """
        with self._lock, self._conn:
            if self._conn.execute(
                "SELECT 1 FROM directories WHERE id = ?", (directory_id,)
            ).fetchone() is None:
                raise UnknownDirectory(str(directory_id))
            row = self._conn.execute(
                "SELECT id, content_hash FROM images "
                "WHERE directory_id = ? AND relative_path = ?",
                (directory_id, relative_path),
            ).fetchone()
            if row is None:
                cur = self._conn.execute(
                    "INSERT INTO images "
                    "(directory_id, relative_path, content_hash, byte_size, mtime) "
                    "VALUES (?, ?, ?, ?, ?)",
                    (directory_id, relative_path, content_hash, byte_size, mtime),
                )
                image_id = cur.lastrowid
                for name in self._embedder_names_locked():
                    self._conn.execute(
                        "INSERT INTO index_state (image_id, embedder, state) "
                        "VALUES (?, ?, 'pending')",
                        (image_id, name),
                    )
                return self._image(image_id)
            image_id, old_hash = row
            self._conn.execute(
                "UPDATE images SET content_hash = ?, byte_size = ?, mtime = ? "
                "WHERE id = ?",
                (content_hash, byte_size, mtime, image_id),
            )
            if content_hash != old_hash:
                self._conn.execute(
                    "UPDATE index_state SET state = 'pending' WHERE image_id = ?",
                    (image_id,),
                )
            return self._image(image_id)

    def _embedder_names_locked(self) -> list[str]:
        return [r[0] for r in self._conn.execute("SELECT name FROM embedders ORDER BY name")]

    def _image(self, image_id: int) -> ImageRecord:
        row = self._conn.execute(
            "SELECT id, directory_id, relative_path, content_hash, byte_size, mtime "
            "FROM images WHERE id = ?",
            (image_id,),
        ).fetchone()
        if row is None:
            raise KeyError(image_id)
        states = dict(
            self._conn.execute(
                "SELECT embedder, state FROM index_state WHERE image_id = ?", (image_id,)
            )
        )
        return ImageRecord(
            id=row[0], directory_id=row[1], relative_path=row[2],
            content_hash=row[3], byte_size=row[4], mtime=row[5], index_state=states,
        )

    def get_image(self, image_id: int) -> Optional[ImageRecord]:
        with self._lock:
            try:
                return self._image(image_id)
            except KeyError:
                return None

    def find_image(self, directory_id: int, relative_path: str) -> Optional[ImageRecord]:
        with self._lock:
            row = self._conn.execute(
                "SELECT id FROM images WHERE directory_id = ? AND relative_path = ?",
                (directory_id, relative_path),
            ).fetchone()
            return self._image(row[0]) if row else None

    def list_images(self, directory_id: int) -> list[ImageRecord]:
        with self._lock:
            ids = [
                r[0] for r in self._conn.execute(
                    "SELECT id FROM images WHERE directory_id = ? ORDER BY id",
                    (directory_id,),
                )
            ]
            return [self._image(i) for i in ids]

    def list_pending(self, embedder_name: str, limit: int) -> list[ImageRecord]:
        """Oldest-registered pending records for one embedder, at most `limit`."""
        if limit <= 0:
            raise ValueError("limit must be positive")
        with self._lock:
            if embedder_name not in self._embedder_names_locked():
                raise UnknownEmbedder(embedder_name)
            ids = [
                r[0] for r in self._conn.execute(
                    "SELECT image_id FROM index_state "
                    "WHERE embedder = ? AND state = 'pending' "
                    "ORDER BY image_id LIMIT ?",
                    (embedder_name, limit),
                )
            ]
            return [self._image(i) for i in ids]

    def pending_page(self, directory_id: int, limit: int) -> list[ImageRecord]:
        """Oldest records in one directory with any embedder still pending."""
        with self._lock:
            ids = [
                r[0] for r in self._conn.execute(
                    "SELECT DISTINCT s.image_id FROM index_state s "
                    "JOIN images i ON i.id = s.image_id "
                    "WHERE i.directory_id = ? AND s.state = 'pending' "
                    "ORDER BY s.image_id LIMIT ?",
                    (directory_id, limit),
                )
            ]
            return [self._image(i) for i in ids]

    def pending_count(self, embedder_name: str, directory_id: Optional[int] = None) -> int:
        with self._lock:
            if directory_id is None:
                return self._conn.execute(
                    "SELECT COUNT(*) FROM index_state WHERE embedder = ? AND state = 'pending'",
                    (embedder_name,),
                ).fetchone()[0]
            return self._conn.execute(
                "SELECT COUNT(*) FROM index_state s JOIN images i ON i.id = s.image_id "
                "WHERE s.embedder = ? AND s.state = 'pending' AND i.directory_id = ?",
                (embedder_name, directory_id),
            ).fetchone()[0]

    def mark_state(self, image_id: int, embedder_name: str, state: str) -> None:
        if state not in _STATES:
            raise ValueError(f"bad state {state!r}")
        with self._lock, self._conn:
            self._conn.execute(
                "UPDATE index_state SET state = ? WHERE image_id = ? AND embedder = ?",
                (state, image_id, embedder_name),
            )

    def remove_image(self, image_id: int) -> None:
        """Hard delete; missing ids are a no-op."""
        with self._lock, self._conn:
            self._conn.execute("DELETE FROM images WHERE id = ?", (image_id,))

    def image_count(self, directory_id: int) -> int:
        with self._lock:
            return self._conn.execute(
                "SELECT COUNT(*) FROM images WHERE directory_id = ?", (directory_id,)
            ).fetchone()[0]

    def directory_progress(self, directory_id: int) -> float:
        """Fraction indexed, min across registered embedders; 1.0 when empty."""
        with self._lock:
            embedders = self._embedder_names_locked()
            total = self.image_count(directory_id)
            if total == 0 or not embedders:
                return 1.0
            worst = 1.0
            for name in embedders:
                done = self._conn.execute(
                    "SELECT COUNT(*) FROM index_state s JOIN images i ON i.id = s.image_id "
                    "WHERE s.embedder = ? AND s.state != 'pending' AND i.directory_id = ?",
                    (name, directory_id),
                ).fetchone()[0]
                worst = min(worst, done / total)
            return worst

    # -- export / import ------------------------------------------------------

    def export_lines(self) -> Iterator[str]:
        """Self-describing line-delimited records, deterministic order.

        Record kinds: {"kind": "directory", ...}, {"kind": "embedder", ...},
        {"kind": "image", ...} with index_state inline. Used by the
        consistency checker's audit mode and by the round-trip tests.
        """
        def dump(obj) -> str:
            return json.dumps(obj, sort_keys=True, separators=(",", ":"))

        with self._lock:
            for row in self._conn.execute(
                "SELECT id, path, enabled, created_at FROM directories ORDER BY id"
            ):
                yield dump({
                    "kind": "directory", "id": row[0], "path": row[1],
                    "enabled": bool(row[2]), "created_at": row[3],
                })
            for row in self._conn.execute("SELECT name FROM embedders ORDER BY name"):
                yield dump({"kind": "embedder", "name": row[0]})
            for row in self._conn.execute(
                "SELECT id, directory_id, relative_path, content_hash, byte_size, mtime "
                "FROM images ORDER BY id"
            ):
                states = dict(
                    self._conn.execute(
                        "SELECT embedder, state FROM index_state WHERE image_id = ?",
                        (row[0],),
                    )
                )
                yield dump({
                    "kind": "image", "id": row[0], "directory_id": row[1],
                    "relative_path": row[2], "content_hash": row[3],
                    "byte_size": row[4], "mtime": row[5], "index_state": states,
                })

    def export_text(self) -> str:
        return "".join(line + "\n" for line in self.export_lines())

    def import_lines(self, lines: Iterable[str]) -> None:
        """Load an exported dump into an empty catalog (audit/restore path)."""
        with self._lock, self._conn:
            for table in ("index_state", "images", "directories", "embedders"):
                self._conn.execute(f"DELETE FROM {table}")
            for line in lines:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                kind = rec["kind"]
                if kind == "directory":
                    self._conn.execute(
                        "INSERT INTO directories (id, path, enabled, created_at) "
                        "VALUES (?, ?, ?, ?)",
                        (rec["id"], rec["path"], 1 if rec["enabled"] else 0,
                         rec["created_at"]),
                    )
                elif kind == "embedder":
                    self._conn.execute(
                        "INSERT INTO embedders (name) VALUES (?)", (rec["name"],)
                    )
                elif kind == "image":
                    self._conn.execute(
                        "INSERT INTO images (id, directory_id, relative_path, "
                        "content_hash, byte_size, mtime) VALUES (?, ?, ?, ?, ?, ?)",
                        (rec["id"], rec["directory_id"], rec["relative_path"],
                         rec["content_hash"], rec["byte_size"], rec["mtime"]),
                    )
                    for embedder, state in rec["index_state"].items():
                        self._conn.execute(
                            "INSERT INTO index_state (image_id, embedder, state) "
                            "VALUES (?, ?, ?)",
                            (rec["id"], embedder, state),
                        )
                else:
                    raise ValueError(f"unknown record kind {kind!r}")
