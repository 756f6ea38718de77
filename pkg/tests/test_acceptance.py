"""Acceptance gate: every primary criterion at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line
per criterion with its measured numbers.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from needle.catalog import Catalog
from needle.cli import main as cli_main
from needle.embedders import EmbedderSpec, embed_batch
from needle.errors import AllEnginesFailed
from needle.fusion import QueryPlan, RankedList, lof_scores, rrf_fuse, run_query
from needle.genhub import EngineSpec, GeneratorHub, GenRequest, Resolution, SceneSpec, mock_render
from needle.ingest import DirectoryWatcher, IngestManager
from needle.pixels import encode_png
from needle.synthbench import build_corpus, build_query_suite, evaluate
from needle.vecstore import HnswParams, SearchHit, VectorStore

BENCH_SPECS = [
    EmbedderSpec("colorhist64", "builtin:colorhist64", 64, 1.0, True),
    EmbedderSpec("grid64", "builtin:grid64", 64, 1.0, True),
]


def report(name: str, detail: str) -> None:
    print(f"\nACCEPTANCE {name}: PASS ({detail})")


# =====================================================================
# 1. RRF oracle equivalence: 1,000 random instances, exact ordering
# =====================================================================

def brute_force_rrf(lists, weights, kappa):
    """Independent score table: accumulate per-document contributions."""
    contributions = {}
    for ranked in lists:
        w = weights[ranked.embedder_name]
        for position, hit in enumerate(ranked.hits):
            contributions.setdefault(hit.id, []).append(w / (kappa + position + 1))
    totals = []
    for doc in contributions:
        acc = 0.0
        for part in contributions[doc]:
            acc += part
        totals.append((doc, acc))
    totals.sort(key=lambda pair: (-pair[1], pair[0]))
    return totals


def test_criterion_1_rrf_oracle_equivalence():
    start = time.monotonic()
    rng = np.random.default_rng(2024)
    kappas = [1.0, 60.0, 1000.0]
    for trial in range(1000):
        n_lists = int(rng.integers(1, 9))
        weights = {f"e{j}": float(rng.uniform(0.05, 5.0)) for j in range(n_lists)}
        lists = []
        for j in range(n_lists):
            depth = int(rng.integers(1, 51))
            docs = rng.permutation(50)[:depth]
            lists.append(RankedList(
                f"g{j}", f"e{j}",
                [SearchHit(id=int(d), distance=0.0) for d in docs],
            ))
        kappa = kappas[trial % 3]
        assert rrf_fuse(lists, weights, kappa) == brute_force_rrf(lists, weights, kappa)
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"took {elapsed:.1f}s, budget 10s"
    report("1 (RRF oracle equivalence)", f"1000 instances exact, {elapsed:.1f}s")


# =====================================================================
# 2. LOF oracle equivalence: 200 random sets, max error <= 1e-9
# =====================================================================

def reference_lof(points, k):
    """O(n^2) reference straight from the definitions (scipy distances)."""
    from scipy.spatial.distance import cdist

    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    dist = cdist(pts, pts)

    def kdist(a):
        others = sorted(dist[a][b] for b in range(n) if b != a)
        return others[k - 1]

    kd = [kdist(a) for a in range(n)]
    hoods = [[b for b in range(n) if b != a and dist[a][b] <= kd[a]] for a in range(n)]

    def lrd(a):
        reach = [max(kd[b], dist[a][b]) for b in hoods[a]]
        mean = sum(reach) / len(reach)
        return math.inf if mean == 0 else 1.0 / mean

    lrds = [lrd(a) for a in range(n)]
    out = []
    for a in range(n):
        if math.isinf(lrds[a]):
            ratios = [1.0 if math.isinf(lrds[b]) else 0.0 for b in hoods[a]]
        else:
            ratios = [lrds[b] / lrds[a] for b in hoods[a]]
        out.append(sum(ratios) / len(ratios))
    return np.array(out)


def test_criterion_2_lof_oracle_equivalence():
    start = time.monotonic()
    rng = np.random.default_rng(7)
    worst = 0.0
    for trial in range(200):
        k = [2, 3, 5][trial % 3]
        n = int(rng.integers(k + 1, 201))
        dim = int(rng.integers(1, 17))
        pts = rng.normal(size=(n, dim))
        got = lof_scores(pts, k)
        want = reference_lof(pts, k)
        finite = np.isfinite(want)
        assert np.array_equal(np.isfinite(got), finite)
        worst = max(worst, float(np.abs(got[finite] - want[finite]).max()))
    assert worst <= 1e-9, f"max deviation {worst}"
    square = lof_scores([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)], 2)
    assert np.array_equal(square, np.ones(4)), "symmetric square must be exactly 1.0"
    elapsed = time.monotonic() - start
    assert elapsed < 30.0, f"took {elapsed:.1f}s, budget 30s"
    report("2 (LOF oracle equivalence)",
           f"200 sets, max |err| {worst:.2e}, square exact, {elapsed:.1f}s")


# =====================================================================
# 3. HNSW quality at the published construction parameters
# =====================================================================

def test_criterion_3_hnsw_recall(tmp_path):
    start = time.monotonic()
    rng = np.random.default_rng(1)
    vectors = rng.normal(size=(10_000, 64))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    queries = rng.normal(size=(100, 64))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)

    store = VectorStore(tmp_path / "vectors")
    coll = store.create_collection(
        "recall", 64,
        HnswParams(m=48, ef_construction=200, ef_search=200, metric="cosine"),
    )
    for i, vec in enumerate(vectors):
        coll.insert(i, vec)

    def recall_at_10():
        total = 0.0
        for q in queries:
            got = {h.id for h in coll.search(q, k=10, ef_search=200)}
            want = {h.id for h in coll.exact_search(q, k=10)}
            total += len(got & want) / len(want)
        return total / len(queries)

    full_recall = recall_at_10()
    assert full_recall >= 0.95, f"recall@10 {full_recall:.4f} < 0.95"

    for i in range(0, 10_000, 2):
        coll.remove(i)
    survivor_recall = recall_at_10()
    assert survivor_recall >= 0.95, f"survivor recall@10 {survivor_recall:.4f} < 0.95"

    store.close()
    elapsed = time.monotonic() - start
    assert elapsed < 120.0, f"took {elapsed:.1f}s, budget 2min"
    report("3 (HNSW quality)",
           f"recall {full_recall:.4f}, survivor recall {survivor_recall:.4f}, {elapsed:.1f}s")


# =====================================================================
# 4 + 5. Ensemble gain and latency on the 2000-image corpus
# =====================================================================

@pytest.fixture(scope="module")
def bench_system(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    corpus = build_corpus(2000, 42)
    scenes = {img.image_id: img.scene for img in corpus}
    store = VectorStore(root / "vectors")
    for spec in BENCH_SPECS:
        store.create_collection(spec.name, spec.dim, HnswParams())
    for spec in BENCH_SPECS:
        coll = store.get(spec.name)
        for img in corpus:
            coll.insert(img.image_id, embed_batch(spec, [img.pixels])[0])
    hub = GeneratorHub([EngineSpec("mock", "mock", 0, True)])
    yield store, hub, scenes
    store.close()


def _bench_run(store, hub, specs, m):
    def run(query):
        plan = QueryPlan(m=m, k=100, n=100, resolution=Resolution.SMALL,
                         seed=100003 + len(query.text) * 977)
        res = run_query(query.text, 100, plan, hub=hub, specs=specs, store=store)
        return [doc for doc, _ in res.results], res.timings
    return run


def test_criterion_4_ensemble_gain(bench_system):
    start = time.monotonic()
    store, hub, scenes = bench_system
    suite = build_query_suite(scenes)
    assert len(suite) == 40

    ensemble = evaluate(suite, _bench_run(store, hub, BENCH_SPECS, m=2))
    ablations = {
        spec.name: evaluate(suite, _bench_run(store, hub, [spec], m=1))
        for spec in BENCH_SPECS
    }
    for name, solo in ablations.items():
        assert ensemble.map_hard > solo.map_hard, (
            f"hard MAP: ensemble {ensemble.map_hard:.3f} "
            f"not greater than {name} {solo.map_hard:.3f}"
        )
    assert ensemble.map_score >= 0.6, f"all-query MAP {ensemble.map_score:.3f} < 0.6"
    elapsed = time.monotonic() - start
    assert elapsed < 300.0, f"took {elapsed:.1f}s, budget 5min"
    solo_hard = {n: round(r.map_hard, 3) for n, r in ablations.items()}
    report("4 (ensemble gain)",
           f"MAP {ensemble.map_score:.3f} >= 0.6; hard {ensemble.map_hard:.3f} "
           f"> ablations {solo_hard}, {elapsed:.1f}s")


def test_criterion_5_latency_decomposition(bench_system):
    store, hub, scenes = bench_system
    suite = build_query_suite(scenes)[:20]
    totals = []
    for i, query in enumerate(suite):
        plan = QueryPlan(m=2, k=100, n=10, resolution=Resolution.SMALL, seed=1000 + i)
        res = run_query(query.text, 10, plan, hub=hub, specs=BENCH_SPECS, store=store)
        t = res.timings
        stage_sum = t["generateMs"] + t["searchMs"] + t["fuseMs"]
        assert abs(stage_sum - t["totalMs"]) <= 0.05 * t["totalMs"], (
            f"stages {stage_sum:.2f}ms vs total {t['totalMs']:.2f}ms drift > 5%"
        )
        totals.append(t["totalMs"])
    median = float(np.median(totals))
    assert median <= 500.0, f"median end-to-end {median:.1f}ms > 500ms"
    report("5 (latency decomposition)",
           f"median {median:.1f}ms <= 500ms, stages sum within 5% on all 20 queries")


# =====================================================================
# 6. Ingest consistency: batches, live churn, offline reconcile
# =====================================================================

def _write_scene(path: Path, seed: int, scene=None):
    scene = scene or SceneSpec("circle", "red", "white")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_png(mock_render(scene, seed, Resolution.SMALL)))


def _assert_bijection(catalog, store, directory, entry_id, specs):
    disk = {p.name for p in directory.iterdir() if p.suffix == ".png"}
    records = catalog.list_images(entry_id)
    catalog_paths = {r.relative_path for r in records}
    assert catalog_paths == disk, "catalog and filesystem disagree"
    record_ids = {r.id for r in records}
    for spec in specs:
        live = set(store.get(spec.name).ids())
        assert live == record_ids, f"collection {spec.name} out of sync"


def test_criterion_6_ingest_consistency(tmp_path):
    start = time.monotonic()
    catalog = Catalog(tmp_path / "catalog.db")
    catalog.set_embedders([s.name for s in BENCH_SPECS])
    store = VectorStore(tmp_path / "vectors")
    for spec in BENCH_SPECS:
        store.create_collection(spec.name, spec.dim, HnswParams(
            m=16, ef_construction=64, ef_search=64, metric="cosine"))
    manager = IngestManager(catalog, store, BENCH_SPECS, batch_size=50, workers=4)
    watcher = DirectoryWatcher(manager)

    imgs = tmp_path / "imgs"
    for i in range(120):
        _write_scene(imgs / f"img{i:03d}.png", seed=i)

    manager.start()
    entry = manager.add_directory(imgs)
    watcher.watch(catalog.get_directory(entry.id))
    watcher.start()
    assert manager.wait_idle(timeout=90)
    assert manager.batch_log == [50, 50, 20], f"batch sizes {manager.batch_log}"

    # live churn under the watcher: add 5, delete 3, overwrite 2
    for i in range(5):
        _write_scene(imgs / f"live{i}.png", seed=500 + i,
                     scene=SceneSpec("square", "blue", "black"))
    for i in range(3):
        (imgs / f"img{i:03d}.png").unlink()
    for i in range(3, 5):
        _write_scene(imgs / f"img{i:03d}.png", seed=900 + i,
                     scene=SceneSpec("triangle", "green", "black"))
    deadline = time.monotonic() + 30
    while time.monotonic() < deadline:
        time.sleep(0.3)
        if not manager.wait_idle(timeout=30):
            continue
        try:
            _assert_bijection(catalog, store, imgs, entry.id, BENCH_SPECS)
            break
        except AssertionError:
            continue
    _assert_bijection(catalog, store, imgs, entry.id, BENCH_SPECS)
    assert catalog.image_count(entry.id) == 122  # 120 + 5 - 3

    # offline mutations: stop everything, script {added: 4, removed: 2, reembedded: 3}
    watcher.stop()
    manager.stop()
    store.close()
    catalog.close()

    for i in range(4):
        _write_scene(imgs / f"offline{i}.png", seed=700 + i)
    (imgs / "img010.png").unlink()
    (imgs / "img011.png").unlink()
    for i in range(12, 15):
        _write_scene(imgs / f"img{i:03d}.png", seed=800 + i,
                     scene=SceneSpec("circle", "yellow", "blue"))

    catalog = Catalog(tmp_path / "catalog.db")
    store = VectorStore(tmp_path / "vectors")
    manager = IngestManager(catalog, store, BENCH_SPECS, batch_size=50, workers=4)
    manager.start()
    rep = manager.reconcile()
    assert (rep.added, rep.removed, rep.reembedded) == (4, 2, 3), (
        f"reconcile counts {(rep.added, rep.removed, rep.reembedded)} != (4, 2, 3)"
    )
    assert manager.wait_idle(timeout=90)
    _assert_bijection(catalog, store, imgs, entry.id, BENCH_SPECS)

    # queries only ever surface live files
    hub = GeneratorHub([EngineSpec("mock", "mock", 0, True)])
    plan = QueryPlan(m=2, k=50, n=20, resolution=Resolution.SMALL, seed=5)
    res = run_query("a red circle on a white background", 20, plan,
                    hub=hub, specs=BENCH_SPECS, store=store)
    assert res.results, "index should not be empty"
    for image_id, _score in res.results:
        record = catalog.get_image(image_id)
        assert record is not None
        assert (imgs / record.relative_path).exists()

    manager.stop()
    store.close()
    catalog.close()
    elapsed = time.monotonic() - start
    assert elapsed < 120.0, f"took {elapsed:.1f}s, budget 2min"
    report("6 (ingest consistency)",
           f"batches 50/50/20, live churn + reconcile (4,2,3) exact, {elapsed:.1f}s")


# =====================================================================
# 7. Generator fallback
# =====================================================================

def test_criterion_7_generator_fallback(tmp_path):
    hub = GeneratorHub([
        EngineSpec("alpha", "mock", 0, True, {"fail": True}),
        EngineSpec("bravo", "mock", 1, True, {}),
    ])
    guides = hub.generate(GenRequest("a red circle on a white background",
                                     m=3, resolution=Resolution.SMALL, seed=1))
    assert all(g.engine_name == "bravo" for g in guides)

    hub_all_fail = GeneratorHub([
        EngineSpec("alpha", "mock", 0, True, {"fail": True}),
        EngineSpec("bravo", "mock", 1, True, {"fail": True}),
    ])
    with pytest.raises(AllEnginesFailed) as err:
        hub_all_fail.generate(GenRequest("x", m=1, resolution=Resolution.SMALL))
    assert set(err.value.causes) == {"alpha", "bravo"}

    # API surfaces 503 with per-engine causes; CLI exits 1
    from tests.conftest import LiveBackend

    backend = LiveBackend(tmp_path / "data")
    try:
        for engine in backend.service.hub.engines():
            engine.params["fail"] = True
        import requests

        resp = requests.post(f"http://{backend.addr}/v1/query",
                             json={"prompt": "anything", "n": 3}, timeout=30)
        assert resp.status_code == 503
        detail = resp.json()["detail"]
        assert detail["error"] == "AllEnginesFailed"
        assert "mock" in detail["causes"]

        runner = CliRunner()
        result = runner.invoke(cli_main, ["--api-addr", backend.addr,
                                          "query", "run", "anything", "-n", "3"])
        assert result.exit_code == 1
    finally:
        backend.stop()
    report("7 (generator fallback)",
           "fallback engine used; all-fail -> API 503 with causes, CLI exit 1")


# =====================================================================
# 8. CLI contract (goldens live in test_cli.py; gate re-runs the core)
# =====================================================================

def test_criterion_8_cli_contract(tmp_path):
    from tests.conftest import LiveBackend

    backend = LiveBackend(tmp_path / "data")
    runner = CliRunner()
    addr = backend.addr
    try:
        imgs = tmp_path / "imgs"
        for i in range(15):
            _write_scene(imgs / f"red{i}.png", seed=i)
        runner.invoke(cli_main, ["--api-addr", addr, "directory", "add", str(imgs),
                                 "--progress"], catch_exceptions=False)

        result = runner.invoke(cli_main, ["--api-addr", addr, "query", "run",
                                          "a red circle on a white background",
                                          "-n", "10", "--seed", "2"],
                               catch_exceptions=False)
        assert result.exit_code == 0
        import re

        ranked = [l for l in result.output.splitlines() if re.match(r"^\d+\. ", l)]
        assert len(ranked) == 10, f"expected 10 ranked lines, got {len(ranked)}"

        verbose = runner.invoke(cli_main, ["--api-addr", addr, "query", "run",
                                           "a red circle on a white background",
                                           "-n", "5", "--m", "2", "--seed", "2",
                                           "--verbose"], catch_exceptions=False)
        blocks = [l for l in verbose.output.splitlines() if l.startswith("-- source")]
        assert len(blocks) == 4, f"expected m*l = 4 source blocks, got {len(blocks)}"

        version = runner.invoke(cli_main, ["--api-addr", addr, "--version"],
                                catch_exceptions=False)
        assert version.exit_code == 0
        assert len(version.output.strip().splitlines()) == 3

        assert runner.invoke(cli_main, ["--api-addr", addr, "query", "run", "x",
                                        "-n", "0"]).exit_code == 2
        assert runner.invoke(cli_main, ["--api-addr", "127.0.0.1:1", "service",
                                        "status"]).exit_code == 1
        assert runner.invoke(cli_main, ["--api-addr", addr, "service",
                                        "status"]).exit_code == 0
    finally:
        backend.stop()
    report("8 (CLI contract)",
           "10 ranked lines, 4 verbose source blocks, 3 version lines, exit codes 0/1/2")
