import json

import pytest

from needle.embedders import load_registry
from needle.genhub import Resolution
from needle.service import NeedleService, bootstrap_configs


@pytest.fixture
def data_dir(tmp_path):
    return tmp_path / "data"


def make_service(data_dir, mode="fast"):
    return NeedleService(data_dir=data_dir, mode=mode)


def test_bootstrap_writes_default_configs(data_dir):
    bootstrap_configs(data_dir, "fast")
    specs = load_registry(data_dir / "embedders.json")
    assert [s.name for s in specs] == ["colorhist64", "grid64", "edge36"]
    assert [s.enabled for s in specs] == [True, True, False]  # fast mode
    generators = json.loads((data_dir / "generators.json").read_text())
    assert generators[0]["name"] == "mock" and generators[0]["enabled"]


def test_bootstrap_does_not_overwrite(data_dir):
    bootstrap_configs(data_dir, "fast")
    (data_dir / "embedders.json").write_text("[]")
    bootstrap_configs(data_dir, "balanced")
    assert (data_dir / "embedders.json").read_text() == "[]"


def test_registry_collection_coherence(data_dir):
    svc = make_service(data_dir)
    try:
        enabled = {s.name for s in svc.embedder_specs if s.enabled}
        assert set(svc.store.names()) == enabled
        for name in enabled:
            spec = next(s for s in svc.embedder_specs if s.name == name)
            assert svc.store.get(name).dim == spec.dim
    finally:
        svc.stop() if svc._started else (svc.store.close(), svc.catalog.close())


def test_hot_embedder_registration_creates_collection(data_dir):
    svc = make_service(data_dir, mode="fast")
    svc.store.close()
    svc.catalog.close()
    # enable edge36 in the registry, "restart" the service
    registry = json.loads((data_dir / "embedders.json").read_text())
    for entry in registry:
        if entry["name"] == "edge36":
            entry["enabled"] = True
    (data_dir / "embedders.json").write_text(json.dumps(registry))

    svc2 = make_service(data_dir, mode="fast")
    try:
        assert svc2.store.has("edge36")
        assert svc2.store.get("edge36").dim == 36
        assert "edge36" in svc2.catalog.embedder_names()
    finally:
        svc2.store.close()
        svc2.catalog.close()


@pytest.mark.parametrize("mode,m,resolution,embedders", [
    ("fast", 1, Resolution.MEDIUM, 2),
    ("balanced", 2, Resolution.MEDIUM, 3),
    ("accurate", 2, Resolution.LARGE, 3),
])
def test_mode_presets(data_dir, mode, m, resolution, embedders):
    svc = make_service(data_dir / mode, mode=mode)
    try:
        plan = svc.plan_defaults()
        assert plan.m == m
        assert plan.resolution == resolution
        assert sum(1 for s in svc.embedder_specs if s.enabled) == embedders
    finally:
        svc.store.close()
        svc.catalog.close()


def test_guide_cache_serves_recent_queries(data_dir):
    svc = make_service(data_dir)
    try:
        result = svc.query("a red circle on a white background", n=3, seed=1)
        assert result.guides
        guide = svc.guide_image(result.guides[0].id)
        assert guide is not None
        assert guide.pixels.width == 512  # fast mode renders MEDIUM
        assert svc.guide_image("gmissing") is None
    finally:
        svc.store.close()
        svc.catalog.close()


def test_versions_are_semver(data_dir):
    svc = make_service(data_dir)
    try:
        versions = svc.versions()
        assert set(versions) == {"cli", "backend", "ui"}
        for value in versions.values():
            major, minor, patch = value.split(".")[:3]
            int(major), int(minor)
    finally:
        svc.store.close()
        svc.catalog.close()
