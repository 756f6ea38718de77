"""Concurrency contracts: linearizable catalog writes, concurrent
searches against a mutating collection, reentrant generation."""

import threading

import numpy as np

from needle.catalog import Catalog
from needle.genhub import EngineSpec, GeneratorHub, GenRequest, Resolution
from needle.vecstore import HnswParams, VectorStore


def run_threads(workers):
    errors = []

    def wrap(fn):
        def inner():
            try:
                fn()
            except Exception as exc:  # surfaced after join
                errors.append(exc)
        return inner

    threads = [threading.Thread(target=wrap(fn)) for fn in workers]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=60)
    assert not errors, errors


def test_catalog_concurrent_upserts(tmp_path):
    catalog = Catalog(tmp_path / "c.db")
    catalog.set_embedders(["e"])
    entry = catalog.register_directory(tmp_path)

    def writer(start):
        def work():
            for i in range(50):
                catalog.upsert_image(entry.id, f"{start}-{i}.png", f"h{i}", 1, 1.0)
        return work

    run_threads([writer(w) for w in range(8)])
    assert catalog.image_count(entry.id) == 400
    assert len(catalog.list_pending("e", 1000)) == 400
    catalog.close()


def test_catalog_register_race_is_idempotent(tmp_path):
    catalog = Catalog(tmp_path / "c.db")
    ids = []

    def register():
        ids.append(catalog.register_directory(tmp_path).id)

    run_threads([register] * 8)
    assert len(set(ids)) == 1
    catalog.close()


def test_vecstore_search_during_inserts(tmp_path):
    store = VectorStore(tmp_path / "v")
    coll = store.create_collection(
        "c", 16, HnswParams(m=8, ef_construction=32, ef_search=32, metric="l2"))
    rng = np.random.default_rng(0)
    seed_vectors = rng.normal(size=(50, 16))
    for i, v in enumerate(seed_vectors):
        coll.insert(i, v)

    stop = threading.Event()

    def inserter():
        local = np.random.default_rng(1)
        for i in range(50, 250):
            coll.insert(i, local.normal(size=16))
        stop.set()

    def searcher():
        local = np.random.default_rng(2)
        while not stop.is_set():
            hits = coll.search(local.normal(size=16), k=5)
            dists = [h.distance for h in hits]
            assert dists == sorted(dists)

    run_threads([inserter, searcher, searcher, searcher])
    assert coll.count == 250
    store.close()


def test_vecstore_concurrent_removes_and_searches(tmp_path):
    store = VectorStore(tmp_path / "v")
    coll = store.create_collection(
        "c", 8, HnswParams(m=8, ef_construction=32, ef_search=32, metric="l2"))
    rng = np.random.default_rng(3)
    for i in range(300):
        coll.insert(i, rng.normal(size=8))

    def remover(ids):
        def work():
            for i in ids:
                coll.remove(i)
        return work

    def searcher():
        local = np.random.default_rng(4)
        for _ in range(100):
            coll.search(local.normal(size=8), k=10)

    run_threads([remover(range(0, 100)), remover(range(100, 150)), searcher, searcher])
    assert coll.count == 150
    assert {h.id for h in coll.exact_search(np.zeros(8), k=300)} == set(range(150, 300))
    store.close()


def test_hub_concurrent_generation(tmp_path):
    hub = GeneratorHub([EngineSpec("mock", "mock", 0, True)])
    results = []
    lock = threading.Lock()

    def query(seed):
        def work():
            guides = hub.generate(GenRequest(
                "a red circle on a white background", m=2,
                resolution=Resolution.SMALL, seed=seed,
            ))
            with lock:
                results.append([g.seed for g in guides])
        return work

    run_threads([query(s) for s in range(12)])
    assert sorted(r[0] for r in results) == list(range(12))
