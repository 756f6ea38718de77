
import pytest

from needle.catalog import Catalog
from needle.errors import NotADirectory, PathNotFound, UnknownDirectory, UnknownEmbedder


@pytest.fixture
def catalog(tmp_path):
    cat = Catalog(tmp_path / "catalog.db")
    cat.set_embedders(["colorhist64", "grid64"])
    yield cat
    cat.close()


def make_dir(tmp_path, name="imgs"):
    d = tmp_path / name
    d.mkdir(exist_ok=True)
    return d


def test_register_is_idempotent(catalog, tmp_path):
    d = make_dir(tmp_path)
    first = catalog.register_directory(d)
    second = catalog.register_directory(d)
    assert first.id == second.id
    assert len(catalog.list_directories()) == 1


def test_register_missing_path(catalog):
    with pytest.raises(PathNotFound):
        catalog.register_directory("/nonexistent/surely/not")


def test_register_file_not_directory(catalog, tmp_path):
    f = tmp_path / "file.txt"
    f.write_text("x")
    with pytest.raises(NotADirectory):
        catalog.register_directory(f)


def test_register_canonicalizes_dotdot(catalog, tmp_path):
    d = make_dir(tmp_path)
    nested = make_dir(tmp_path, "other")
    via_dots = nested / ".." / "imgs"
    first = catalog.register_directory(d)
    second = catalog.register_directory(via_dots)
    assert first.id == second.id


def test_register_resolves_symlink(catalog, tmp_path):
    d = make_dir(tmp_path)
    link = tmp_path / "link"
    link.symlink_to(d)
    assert catalog.register_directory(link).id == catalog.register_directory(d).id


def _upsert(catalog, entry, rel="a.png", h="h1", size=10, mtime=1.0):
    return catalog.upsert_image(entry.id, rel, h, size, mtime)


def test_upsert_unchanged_hash_preserves_state(catalog, tmp_path):
    entry = catalog.register_directory(make_dir(tmp_path))
    rec = _upsert(catalog, entry)
    catalog.mark_state(rec.id, "colorhist64", "indexed")
    again = _upsert(catalog, entry, mtime=2.0)
    assert again.id == rec.id
    assert again.index_state["colorhist64"] == "indexed"


def test_upsert_hash_change_resets_to_pending(catalog, tmp_path):
    entry = catalog.register_directory(make_dir(tmp_path))
    rec = _upsert(catalog, entry)
    catalog.mark_state(rec.id, "colorhist64", "indexed")
    catalog.mark_state(rec.id, "grid64", "indexed")
    changed = _upsert(catalog, entry, h="h2")
    assert set(changed.index_state.values()) == {"pending"}


def test_upsert_under_unknown_directory(catalog):
    with pytest.raises(UnknownDirectory):
        catalog.upsert_image(999, "a.png", "h", 1, 1.0)


def test_list_pending_orders_and_limits(catalog, tmp_path):
    entry = catalog.register_directory(make_dir(tmp_path))
    for i in range(120):
        _upsert(catalog, entry, rel=f"img{i:03d}.png", h=f"h{i}")
    page = catalog.list_pending("colorhist64", 50)
    assert len(page) == 50
    assert page == catalog.list_pending("colorhist64", 50)
    assert [r.relative_path for r in page] == [f"img{i:03d}.png" for i in range(50)]


def test_list_pending_empty_and_drains(catalog, tmp_path):
    assert catalog.list_pending("colorhist64", 10) == []
    entry = catalog.register_directory(make_dir(tmp_path))
    for i in range(5):
        rec = _upsert(catalog, entry, rel=f"{i}.png", h=f"h{i}")
        catalog.mark_state(rec.id, "colorhist64", "indexed")
    assert catalog.list_pending("colorhist64", 10) == []


def test_list_pending_unknown_embedder(catalog):
    with pytest.raises(UnknownEmbedder):
        catalog.list_pending("nope", 1)


def test_remove_image_idempotent_and_counts(catalog, tmp_path):
    entry = catalog.register_directory(make_dir(tmp_path))
    rec = _upsert(catalog, entry)
    assert catalog.image_count(entry.id) == 1
    catalog.remove_image(rec.id)
    catalog.remove_image(rec.id)
    assert catalog.image_count(entry.id) == 0
    assert catalog.list_pending("colorhist64", 10) == []


def test_uniqueness_invariant(catalog, tmp_path):
    entry = catalog.register_directory(make_dir(tmp_path))
    _upsert(catalog, entry, rel="same.png", h="h1")
    _upsert(catalog, entry, rel="same.png", h="h2")
    assert catalog.image_count(entry.id) == 1


def test_remove_directory_cascades(catalog, tmp_path):
    entry = catalog.register_directory(make_dir(tmp_path))
    recs = [_upsert(catalog, entry, rel=f"{i}.png", h=f"h{i}") for i in range(3)]
    removed = catalog.remove_directory(entry.id)
    assert sorted(removed) == sorted(r.id for r in recs)
    assert catalog.get_directory(entry.id) is None
    assert catalog.get_image(recs[0].id) is None


def test_new_embedder_backfills_pending(catalog, tmp_path):
    entry = catalog.register_directory(make_dir(tmp_path))
    rec = _upsert(catalog, entry)
    catalog.mark_state(rec.id, "colorhist64", "indexed")
    catalog.set_embedders(["colorhist64", "grid64", "edge36"])
    rec = catalog.get_image(rec.id)
    assert rec.index_state["edge36"] == "pending"
    assert rec.index_state["colorhist64"] == "indexed"


def test_roundtrip_export_byte_equal(catalog, tmp_path):
    entry = catalog.register_directory(make_dir(tmp_path))
    for i in range(7):
        _upsert(catalog, entry, rel=f"{i}.png", h=f"h{i}", size=i, mtime=float(i))
    rec = catalog.list_images(entry.id)[2]
    catalog.mark_state(rec.id, "grid64", "indexed")
    catalog.remove_image(catalog.list_images(entry.id)[0].id)
    before = catalog.export_text()
    db_path = catalog.db_path
    catalog.close()

    reopened = Catalog(db_path)
    try:
        assert reopened.export_text() == before
    finally:
        reopened.close()


def test_import_restores_export(catalog, tmp_path):
    entry = catalog.register_directory(make_dir(tmp_path))
    _upsert(catalog, entry, rel="x.png")
    text = catalog.export_text()

    other = Catalog(tmp_path / "other.db")
    try:
        other.import_lines(text.splitlines())
        assert other.export_text() == text
    finally:
        other.close()


def test_directory_progress(catalog, tmp_path):
    entry = catalog.register_directory(make_dir(tmp_path))
    assert catalog.directory_progress(entry.id) == 1.0
    recs = [_upsert(catalog, entry, rel=f"{i}.png", h=f"h{i}") for i in range(4)]
    assert catalog.directory_progress(entry.id) == 0.0
    for r in recs:
        catalog.mark_state(r.id, "colorhist64", "indexed")
    # grid64 still pending: min across embedders
    assert catalog.directory_progress(entry.id) == 0.0
    for r in recs:
        catalog.mark_state(r.id, "grid64", "indexed")
    assert catalog.directory_progress(entry.id) == 1.0
