"""HTTP backend: /v1 endpoints over a NeedleService.

Wire conventions: JSON bodies, UTF-8; fused scores are rounded to
9 significant digits before serialization so goldens and clients see a
stable decimal form; guide images travel by id (GET /v1/images/{id}),
never inline.
"""

from __future__ import annotations

import mimetypes
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .errors import (
    AllEnginesFailed,
    NeedleError,
    NoEnabledEngines,
    NotADirectory,
    PathNotFound,
    PermissionDenied,
    StaleRevision,
)
from .fusion import QueryResult
from .pixels import encode_png
from .service import NeedleService


def wire_score(score: float) -> float:
    """Fixed-precision score rendering: 9 significant decimal digits."""
    return float(f"{score:.9g}")


class QueryOverrides(BaseModel):
    m: Optional[int] = Field(default=None, ge=1)
    resolution: Optional[str] = None
    engines: Optional[list[str]] = None
    seed: Optional[int] = None


class QueryBody(BaseModel):
    prompt: str
    n: int = Field(ge=1)
    overrides: Optional[QueryOverrides] = None


class DirectoryBody(BaseModel):
    path: str


class DirectoryPatch(BaseModel):
    enabled: bool


class GeneratorPatch(BaseModel):
    revision: int
    orderedNames: Optional[list[str]] = None
    perEngine: Optional[dict[str, dict]] = None


def _query_result_payload(service: NeedleService, result: QueryResult) -> dict:
    results = []
    for image_id, score in result.results:
        record = service.catalog.get_image(image_id)
        path = None
        if record is not None:
            entry = service.catalog.get_directory(record.directory_id)
            if entry is not None:
                path = str(Path(entry.path) / record.relative_path)
        results.append({
            "imageId": image_id,
            "score": wire_score(score),
            "path": path,
            "url": f"/v1/images/{image_id}",
        })
    return {
        "results": results,
        "guides": [
            {
                "id": g.id,
                "engineName": g.engine_name,
                "seed": g.seed,
                "kept": g.kept,
                "url": f"/v1/images/{g.id}",
            }
            for g in result.guides
        ],
        "sources": [
            {
                "guideId": s.guide_id,
                "embedderName": s.embedder_name,
                "hits": [
                    {"imageId": h.id, "distance": wire_score(h.distance)}
                    for h in s.hits
                ],
            }
            for s in result.sources
        ],
        "timings": {k: wire_score(v) for k, v in result.timings.items()},
    }


def create_app(service: NeedleService) -> FastAPI:
    app = FastAPI(title="needle", version=service.versions()["backend"])
    app.state.service = service
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )

    # -- health / version / status -------------------------------------------

    @app.get("/v1/health")
    def health():
        return Response(content="ok", media_type="text/plain")

    @app.get("/v1/version")
    def version():
        return service.versions()

    @app.get("/v1/status")
    def status():
        services = service.service_health()
        directories = []
        for entry in service.catalog.list_directories():
            directories.append({
                "id": entry.id,
                "path": entry.path,
                "enabled": entry.enabled,
                "imageCount": entry.image_count,
                "progress": wire_score(service.catalog.directory_progress(entry.id)),
            })
        generators = [
            {
                "name": e.name,
                "kind": e.kind,
                "priority": e.priority,
                "enabled": e.enabled,
                "healthy": service.hub.engine_health(e.name),
            }
            for e in service.hub.engines()
        ]
        return {
            "apiHealthy": True,
            "services": services,
            "directories": directories,
            "generators": generators,
            "versions": service.versions(),
        }

    # -- query -----------------------------------------------------------------

    @app.post("/v1/query")
    def query(body: QueryBody):
        if not body.prompt.strip():
            raise HTTPException(status_code=400, detail="prompt must be nonempty")
        ov = body.overrides or QueryOverrides()
        try:
            result = service.query(
                body.prompt, body.n,
                m=ov.m, resolution=ov.resolution, engines=ov.engines, seed=ov.seed,
            )
        except (AllEnginesFailed, NoEnabledEngines) as exc:
            causes = getattr(exc, "causes", {})
            raise HTTPException(
                status_code=503,
                detail={"error": type(exc).__name__, "causes": causes},
            )
        except NeedleError as exc:
            raise HTTPException(status_code=503,
                                detail={"error": type(exc).__name__, "message": str(exc)})
        return _query_result_payload(service, result)

    # -- images -------------------------------------------------------------------

    @app.get("/v1/images/{image_id}")
    def image(image_id: str):
        if image_id.startswith("g"):
            guide = service.guide_image(image_id)
            if guide is None:
                raise HTTPException(status_code=404, detail="unknown guide image")
            return Response(content=encode_png(guide.pixels), media_type="image/png")
        try:
            numeric = int(image_id)
        except ValueError:
            raise HTTPException(status_code=404, detail="unknown image id")
        record = service.catalog.get_image(numeric)
        if record is None:
            raise HTTPException(status_code=404, detail="unknown image id")
        entry = service.catalog.get_directory(record.directory_id)
        if entry is None:
            raise HTTPException(status_code=404, detail="directory gone")
        path = Path(entry.path) / record.relative_path
        if not path.exists():
            raise HTTPException(status_code=404, detail="file missing on disk")
        media = mimetypes.guess_type(str(path))[0] or "application/octet-stream"
        return Response(content=path.read_bytes(), media_type=media)

    # -- directories -----------------------------------------------------------------

    def _directory_payload(entry) -> dict:
        return {
            "id": entry.id,
            "path": entry.path,
            "enabled": entry.enabled,
            "createdAt": entry.created_at,
            "imageCount": entry.image_count,
            "progress": wire_score(service.catalog.directory_progress(entry.id)),
        }

    @app.post("/v1/directories", status_code=202)
    def add_directory(body: DirectoryBody):
        existing = None
        try:
            existing = service.catalog.find_directory_by_path(body.path)
        except OSError:
            pass
        if existing is not None:
            raise HTTPException(status_code=409, detail="path already registered")
        try:
            entry = service.ingest.add_directory(body.path)
        except (PathNotFound, NotADirectory, PermissionDenied) as exc:
            raise HTTPException(status_code=400,
                                detail=f"{type(exc).__name__}: {exc}")
        service.watcher.watch(entry)
        return _directory_payload(entry)

    @app.get("/v1/directories")
    def list_directories():
        return [_directory_payload(e) for e in service.catalog.list_directories()]

    @app.get("/v1/directories/{directory_id}")
    def get_directory(directory_id: int):
        entry = service.catalog.get_directory(directory_id)
        if entry is None:
            raise HTTPException(status_code=404, detail="unknown directory")
        return _directory_payload(entry)

    @app.patch("/v1/directories/{directory_id}")
    def patch_directory(directory_id: int, body: DirectoryPatch):
        try:
            entry = service.catalog.set_directory_enabled(directory_id, body.enabled)
        except NeedleError:
            raise HTTPException(status_code=404, detail="unknown directory")
        if body.enabled:
            service.watcher.watch(entry)
            service.ingest.enqueue(entry.id)
        else:
            service.watcher.unwatch(entry.id)
        return _directory_payload(entry)

    @app.delete("/v1/directories/{directory_id}", status_code=204)
    def delete_directory(directory_id: int):
        if service.catalog.get_directory(directory_id) is None:
            raise HTTPException(status_code=404, detail="unknown directory")
        service.watcher.unwatch(directory_id)
        service.ingest.remove_directory(directory_id)
        return Response(status_code=204)

    # -- generators ----------------------------------------------------------------------

    @app.get("/v1/generators")
    def list_generators():
        return {
            "revision": service.hub.revision,
            "generators": [
                {
                    "name": e.name,
                    "kind": e.kind,
                    "priority": e.priority,
                    "enabled": e.enabled,
                    "healthy": service.hub.engine_health(e.name),
                    "params": e.params,
                }
                for e in service.hub.engines()
            ],
        }

    @app.patch("/v1/generators")
    def patch_generators(body: GeneratorPatch):
        try:
            if body.orderedNames is not None:
                revision = service.hub.reorder(body.orderedNames, body.revision)
            elif body.perEngine is not None:
                flags = {
                    name: bool(cfg.get("enabled"))
                    for name, cfg in body.perEngine.items()
                    if "enabled" in cfg
                }
                revision = service.hub.set_enabled(flags, body.revision)
            else:
                raise HTTPException(status_code=400,
                                    detail="orderedNames or perEngine required")
        except StaleRevision as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except KeyError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"revision": revision}

    return app
