"""Backend composition root: wires stores, pipelines, and configuration.

A NeedleService owns one data root containing:

    catalog.db        relational metadata store
    vectors/<name>/   one collection per enabled embedder
    embedders.json    embedder registry (hot-editable; read at startup)
    generators.json   engine registry (editable via API/CLI)
    logs/backend.log  service log

On startup the service loads the embedder registry, creates any missing
vector collections (this is what makes registering a new embedder a
config-only change), backfills pending index state, starts the worker
pool and the filesystem watcher, and schedules the consistency checker
(once now, then periodically).
"""

from __future__ import annotations

import logging
import threading
from collections import OrderedDict
from pathlib import Path
from typing import Optional

from . import __version__, config
from .catalog import Catalog
from .embedders import EmbedderSpec, load_registry, write_registry
from .fusion import QueryPlan, QueryResult, run_query
from .genhub import EngineSpec, GeneratorHub, GuideImage, Resolution
from .ingest import DirectoryWatcher, IngestManager
from .vecstore import HnswParams, VectorStore

logger = logging.getLogger(__name__)

GUIDE_CACHE_SIZE = 512


def bootstrap_configs(data_dir: Path, mode: str) -> None:
    """Write default registries for a fresh data root.

    The mode fixes which builtin embedders start enabled, mirroring an
    install-time profile choice; it never overwrites existing files.
    """
    data_dir.mkdir(parents=True, exist_ok=True)
    embedders_path = data_dir / "embedders.json"
    if not embedders_path.exists():
        enabled = set(config.MODES[mode]["embedders"])
        specs = [
            EmbedderSpec("colorhist64", "builtin:colorhist64", 64, 1.0,
                         "colorhist64" in enabled),
            EmbedderSpec("grid64", "builtin:grid64", 64, 1.0, "grid64" in enabled),
            EmbedderSpec("edge36", "builtin:edge36", 36, 1.0, "edge36" in enabled),
        ]
        write_registry(embedders_path, specs)
    generators_path = data_dir / "generators.json"
    if not generators_path.exists():
        hub = GeneratorHub(
            [
                EngineSpec("mock", "mock", 0, True, {}),
                # template for attaching a real engine over HTTP
                EngineSpec("local-http", "remote", 1, False,
                           {"endpoint": "http://127.0.0.1:9461/generate",
                            "timeout_ms": 10000}),
            ],
            config_path=generators_path,
        )
        hub.save()


class NeedleService:
    """Everything the API and CLI need, behind one object."""

    def __init__(self, data_dir: Path | str | None = None, mode: str | None = None):
        self.data_dir = Path(data_dir) if data_dir else config.data_dir()
        self.mode = mode or config.mode()
        bootstrap_configs(self.data_dir, self.mode)

        self.catalog = Catalog(self.data_dir / "catalog.db")
        self.store = VectorStore(self.data_dir / "vectors")
        existing_dims = {name: self.store.get(name).dim for name in self.store.names()}
        self.embedder_specs = load_registry(self.data_dir / "embedders.json", existing_dims)
        for spec in self.embedder_specs:
            if spec.enabled and not self.store.has(spec.name):
                self.store.create_collection(spec.name, spec.dim, HnswParams())
        self.catalog.set_embedders([s.name for s in self.embedder_specs if s.enabled])

        self.hub = GeneratorHub.from_config(self.data_dir / "generators.json")
        self.ingest = IngestManager(
            self.catalog, self.store,
            [s for s in self.embedder_specs if s.enabled],
            batch_size=config.batch_size(), workers=config.workers(),
        )
        self.watcher = DirectoryWatcher(self.ingest)
        self._query_gate = threading.Semaphore(8)
        self._guides: OrderedDict[str, GuideImage] = OrderedDict()
        self._guides_lock = threading.Lock()
        # fault injection for tests/drills: NEEDLE_FORCE_DOWN=vecstore,ingest
        import os

        forced = os.environ.get("NEEDLE_FORCE_DOWN", "")
        self._forced_down: set[str] = {n.strip() for n in forced.split(",") if n.strip()}
        self._reconcile_timer: Optional[threading.Timer] = None
        self._started = False

    # -- lifecycle -----------------------------------------------------------

    def start(self, reconcile_on_start: bool = True) -> None:
        if self._started:
            return
        self._started = True
        self.ingest.start()
        for entry in self.catalog.list_directories():
            if entry.enabled:
                self.watcher.watch(entry)
        self.watcher.start()
        if reconcile_on_start:
            threading.Thread(target=self._safe_reconcile, daemon=True).start()
        self._schedule_reconcile()

    def _schedule_reconcile(self) -> None:
        minutes = config.reconcile_minutes()

        def tick():
            self._safe_reconcile()
            self._schedule_reconcile()

        self._reconcile_timer = threading.Timer(minutes * 60.0, tick)
        self._reconcile_timer.daemon = True
        self._reconcile_timer.start()

    def _safe_reconcile(self) -> None:
        try:
            report = self.ingest.reconcile()
            logger.info(
                "reconcile: +%d -%d ~%d (skipped %s)",
                report.added, report.removed, report.reembedded,
                report.skipped_directories or "none",
            )
        except Exception:
            logger.exception("reconcile failed")

    def stop(self) -> None:
        if not self._started:
            return
        self._started = False
        if self._reconcile_timer is not None:
            self._reconcile_timer.cancel()
        self.watcher.stop()
        self.ingest.stop()
        self.store.close()
        self.catalog.close()

    # -- querying ---------------------------------------------------------------

    def plan_defaults(self) -> QueryPlan:
        preset = config.MODES[self.mode]
        return QueryPlan(
            m=preset["m"], k=preset["k"],
            resolution=Resolution.parse(preset["resolution"]),
        )

    def query(
        self,
        prompt: str,
        n: int,
        m: Optional[int] = None,
        resolution: Optional[str] = None,
        engines: Optional[list[str]] = None,
        seed: Optional[int] = None,
    ) -> QueryResult:
        plan = self.plan_defaults()
        overrides = {}
        if m is not None:
            overrides["m"] = m
        if resolution is not None:
            overrides["resolution"] = Resolution.parse(resolution)
        if seed is not None:
            overrides["seed"] = seed
        plan = QueryPlan(
            m=overrides.get("m", plan.m),
            k=plan.k,
            n=max(1, min(n, plan.k)),
            kappa=plan.kappa,
            lof_threshold=plan.lof_threshold,
            resolution=overrides.get("resolution", plan.resolution),
            seed=overrides.get("seed"),
        )
        hub = self.hub if not engines else _RestrictedHub(self.hub, set(engines))
        with self._query_gate:
            result = run_query(
                prompt, n, plan,
                hub=hub,
                specs=[s for s in self.embedder_specs if s.enabled],
                store=self.store,
                batch_limit=config.batch_size(),
            )
        with self._guides_lock:
            for guide in result.guides:
                self._guides[guide.id] = guide
            while len(self._guides) > GUIDE_CACHE_SIZE:
                self._guides.popitem(last=False)
        return result

    def guide_image(self, guide_id: str) -> Optional[GuideImage]:
        with self._guides_lock:
            return self._guides.get(guide_id)

    # -- status -----------------------------------------------------------------

    def force_down(self, name: str) -> None:
        """Fault injection for tests and drills: report a service down."""
        self._forced_down.add(name)

    def service_health(self) -> dict[str, str]:
        checks = {
            "catalog": self._catalog_up,
            "vecstore": self._vecstore_up,
            "genhub": lambda: any(e.enabled for e in self.hub.engines()),
            "ingest": lambda: self._started and any(
                t.is_alive() for t in self.ingest._threads
            ),
            "watcher": lambda: self._started and self.watcher._observer.is_alive(),
        }
        out = {}
        for name, check in checks.items():
            if name in self._forced_down:
                out[name] = "down"
                continue
            try:
                out[name] = "up" if check() else "down"
            except Exception:
                out[name] = "down"
        return out

    def _catalog_up(self) -> bool:
        self.catalog.list_directories()
        return True

    def _vecstore_up(self) -> bool:
        self.store.names()
        return True

    def versions(self) -> dict[str, str]:
        ui_version = __version__
        dist = ui_dist_dir()
        version_file = dist / "version.txt" if dist else None
        if version_file and version_file.exists():
            ui_version = version_file.read_text().strip()
        return {"cli": __version__, "backend": __version__, "ui": ui_version}


class _RestrictedHub:
    """View of a hub limited to a per-query engine subset."""

    def __init__(self, hub: GeneratorHub, names: set[str]):
        self._hub = hub
        self._names = names

    def generate(self, request):
        return self._hub.generate(request, only=self._names)


def ui_dist_dir() -> Optional[Path]:
    """Locate the built Web UI assets, if any."""
    import os

    env = os.environ.get("NEEDLE_UI_DIST")
    if env:
        p = Path(env)
        return p if p.is_dir() else None
    here = Path(__file__).resolve()
    for parent in here.parents:
        candidate = parent / "frontend" / "dist"
        if (candidate / "index.html").exists():
            return candidate
    return None
