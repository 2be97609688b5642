"""NPDB database file: build, serialize, load, and corruption handling."""

import numpy as np
import pytest

from tunescout.errors import (
    DbBoundsError,
    DbChecksumError,
    DbError,
    DbMagicError,
    DbVersionError,
)
from tunescout.index import train_partitioner, train_pq
from tunescout.store import SongRecord, build_database, load_db, serialize


@pytest.fixture(scope="module")
def song_entries():
    rng = np.random.default_rng(21)
    entries = []
    for s in range(12):
        fps = rng.standard_normal((60, 16)).astype(np.float32)
        fps /= np.linalg.norm(fps, axis=1, keepdims=True)
        entries.append((SongRecord(song_id=s, title=f"song {s}", artist="t", duration_s=60.0), fps))
    return entries


@pytest.fixture(scope="module")
def models(song_entries):
    all_fps = np.concatenate([f for _, f in song_entries])
    part = train_partitioner(all_fps, 8, seed=0)
    cb, _ = train_pq(all_fps - part.centroids[part.assign(all_fps)], m=2, seed=0)
    return part, cb


@pytest.fixture(scope="module")
def db(song_entries, models):
    return build_database(song_entries, *models)


@pytest.fixture(scope="module")
def blob(db):
    return serialize(db)


def test_round_trip_identity(db, blob):
    loaded = load_db(blob)
    assert [(s.song_id, s.title, s.artist, s.fp_start, s.fp_count) for s in loaded.songs] == \
        [(s.song_id, s.title, s.artist, s.fp_start, s.fp_count) for s in db.songs]
    assert np.array_equal(loaded.index.codes, db.index.codes)
    assert np.array_equal(loaded.index.partition_ids, db.index.partition_ids)
    assert np.array_equal(loaded.index.partitioner.centroids, db.index.partitioner.centroids)
    assert np.array_equal(loaded.index.codebook.centroids, db.index.codebook.centroids)
    assert np.array_equal(loaded.radii, db.radii)
    assert np.array_equal(loaded.index.decode_all(), db.index.decode_all())


def test_deterministic_bytes(song_entries, models, blob):
    assert serialize(build_database(song_entries, *models)) == blob


def test_bad_magic(blob):
    with pytest.raises(DbMagicError):
        load_db(b"XXXX" + blob[4:])


def test_bad_version(blob):
    bad = bytearray(blob)
    bad[4] = 99
    with pytest.raises((DbVersionError, DbChecksumError)):
        # version check runs before the checksum, so this must be a version error
        load_db(bytes(bad))
    try:
        load_db(bytes(bad))
    except DbVersionError:
        pass
    else:
        pytest.fail("expected DbVersionError before checksum validation")


def test_truncation_is_bounds_error(blob):
    for cut in (10, len(blob) // 2, len(blob) - 5):
        with pytest.raises(DbBoundsError):
            load_db(blob[:cut])


def test_every_corruption_is_a_typed_error(blob):
    rng = np.random.default_rng(0)
    positions = list(rng.integers(0, len(blob), size=64)) + [0, 5, len(blob) - 1]
    for pos in positions:
        bad = bytearray(blob)
        bad[pos] ^= 0xFF
        with pytest.raises(DbError):
            load_db(bytes(bad))


def test_payload_byte_flip_is_checksum_error(blob, db):
    # flip inside the codes section, which cannot violate bounds
    bad = bytearray(blob)
    bad[-40] ^= 0x01  # radii/codes area, well past the header
    with pytest.raises(DbError):
        load_db(bytes(bad))


def test_build_rejects_bad_inputs(song_entries, models):
    part, cb = models
    with pytest.raises(ValueError):
        build_database([], part, cb)
    dup = [song_entries[0], song_entries[0]]
    with pytest.raises(ValueError):
        build_database(dup, part, cb)
    rec = SongRecord(song_id=99, title="x", artist="y", duration_s=1.0)
    with pytest.raises(ValueError):
        build_database([(rec, np.empty((0, 16), dtype=np.float32))], part, cb)


def test_spans_back_to_back(db):
    pos = 0
    for s in db.songs:
        assert s.fp_start == pos
        pos += s.fp_count
    assert pos == db.index.n_points


def test_storage_report_fields(db):
    rep = db.storage_report()
    assert rep["compression_ratio"] == (16 * 4) / 2
    assert rep["payload_bytes_per_song"] == 60 * 2
    assert rep["total_bytes_per_song"] > rep["payload_bytes_per_song"]
    assert rep["n_songs"] == 12 and rep["n_fingerprints"] == 720
    assert rep["file_bytes"] == len(serialize(db))


def test_loaded_db_scores_identically(db, blob):
    # radii round-trip through float16 at build time, so scoring parity holds
    loaded = load_db(blob)
    assert np.array_equal(loaded.radii, db.radii)


def test_storage_report_payload_ratio_vs_d128():
    # d=96 (M=12) vs d=128 (M=16): code payload is 25% smaller
    assert 12 / 16 == 0.75
