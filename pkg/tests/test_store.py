import json

import numpy as np
import pytest

from ticl.errors import (
    BadMagic,
    CountMismatch,
    DimMismatch,
    DuplicateId,
    NormalizationError,
    ParseError,
    TruncatedFile,
    UnsupportedVersion,
    ZeroNorm,
)
from ticl.store import (
    attach_embeddings,
    ingest_manifest,
    load_store,
    read_embedding_file,
    read_embedding_header,
    save_store,
    validate,
    write_embedding_file,
)

from .conftest import random_unit_rows


def write_manifest(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def simple_rows(n):
    return [
        {
            "utterance_id": f"u{i}",
            "audio_ref": f"audio/u{i}.wav",
            "transcription": f"words of utterance {i}",
        }
        for i in range(n)
    ]


class TestIngestManifest:
    def test_three_line_manifest(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, simple_rows(3))
        store = ingest_manifest(path)
        assert len(store) == 3
        assert [r.utterance_id for r in store.records] == ["u0", "u1", "u2"]
        assert store.text_dim is None and store.acoustic_dim is None

    def test_duplicate_id(self, tmp_path):
        rows = simple_rows(3)
        rows[2]["utterance_id"] = "u7"
        rows[1]["utterance_id"] = "u7"
        path = tmp_path / "m.jsonl"
        write_manifest(path, rows)
        with pytest.raises(DuplicateId, match="u7"):
            ingest_manifest(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("")
        store = ingest_manifest(path)
        assert len(store) == 0

    def test_parse_error_carries_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"utterance_id": "u0", "audio_ref": "a", "transcription": "t"}\nnot json\n')
        with pytest.raises(ParseError, match="line 2"):
            ingest_manifest(path)

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"utterance_id": "u0", "audio_ref": "a"}\n')
        with pytest.raises(ParseError, match="transcription"):
            ingest_manifest(path)

    def test_optional_split_preserved(self, tmp_path):
        rows = simple_rows(1)
        rows[0]["split"] = "train"
        path = tmp_path / "m.jsonl"
        write_manifest(path, rows)
        assert ingest_manifest(path).records[0].split == "train"

    def test_unicode_round_trip(self, tmp_path):
        rows = simple_rows(1)
        rows[0]["transcription"] = "el niño dijo «hola»"
        path = tmp_path / "m.jsonl"
        write_manifest(path, rows)
        assert ingest_manifest(path).records[0].transcription == rows[0]["transcription"]


class TestEmbeddingFile:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        rows = rng.normal(size=(5, 16)).astype(np.float32)
        path = tmp_path / "x.emb"
        write_embedding_file(rows, 16, path, kind="text")
        back, dim = read_embedding_file(path)
        assert dim == 16
        assert back.dtype == np.float32
        assert back.tobytes() == rows.tobytes()

    def test_header_fields_round_trip(self, tmp_path, rng):
        rows = rng.normal(size=(3, 4)).astype(np.float32)
        path = tmp_path / "x.emb"
        write_embedding_file(rows, 4, path, kind="acoustic")
        header = read_embedding_header(path)
        assert header == {"kind": "acoustic", "dim": 4, "count": 3, "version": 1}

    def test_empty_file_round_trip(self, tmp_path):
        path = tmp_path / "x.emb"
        write_embedding_file([], 8, path)
        back, dim = read_embedding_file(path)
        assert back.shape == (0, 8) and dim == 8

    def test_bad_magic(self, tmp_path, rng):
        path = tmp_path / "x.emb"
        write_embedding_file(rng.normal(size=(2, 4)).astype(np.float32), 4, path)
        data = bytearray(path.read_bytes())
        data[:8] = b"NOTMAGIC"
        path.write_bytes(bytes(data))
        with pytest.raises(BadMagic):
            read_embedding_file(path)

    def test_unsupported_version(self, tmp_path, rng):
        path = tmp_path / "x.emb"
        write_embedding_file(rng.normal(size=(2, 4)).astype(np.float32), 4, path)
        data = bytearray(path.read_bytes())
        data[8] = 9  # u32 version little-endian low byte
        path.write_bytes(bytes(data))
        with pytest.raises(UnsupportedVersion):
            read_embedding_file(path)

    def test_truncated_mid_row(self, tmp_path, rng):
        path = tmp_path / "x.emb"
        write_embedding_file(rng.normal(size=(4, 8)).astype(np.float32), 8, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 10])
        with pytest.raises(TruncatedFile):
            read_embedding_file(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "x.emb"
        path.write_bytes(b"TICLEMB1\x01\x00")
        with pytest.raises(TruncatedFile):
            read_embedding_header(path)

    def test_trailing_bytes_rejected(self, tmp_path, rng):
        path = tmp_path / "x.emb"
        write_embedding_file(rng.normal(size=(2, 4)).astype(np.float32), 4, path)
        with path.open("ab") as fh:
            fh.write(b"\x00\x00\x00\x00")
        with pytest.raises(TruncatedFile):
            read_embedding_file(path)


class TestAttachEmbeddings:
    def make_store(self, tmp_path, n=3):
        path = tmp_path / "m.jsonl"
        write_manifest(path, simple_rows(n))
        return ingest_manifest(path)

    def test_attach_binds_by_position(self, tmp_path, rng):
        store = self.make_store(tmp_path)
        rows = random_unit_rows(rng, 3, 8)
        emb = tmp_path / "t.emb"
        write_embedding_file(rows, 8, emb, kind="text")
        out = attach_embeddings(store, emb, "text")
        assert out.text_dim == 8
        for i, rec in enumerate(out.records):
            np.testing.assert_array_equal(rec.text_embedding.values, rows[i])
        # original store untouched
        assert store.records[0].text_embedding is None

    def test_count_mismatch(self, tmp_path, rng):
        store = self.make_store(tmp_path, n=3)
        emb = tmp_path / "t.emb"
        write_embedding_file(random_unit_rows(rng, 2, 8), 8, emb, kind="text")
        with pytest.raises(CountMismatch):
            attach_embeddings(store, emb, "text")

    def test_zero_row_rejected_with_index(self, tmp_path, rng):
        store = self.make_store(tmp_path)
        rows = random_unit_rows(rng, 3, 8)
        rows[1] = 0.0
        emb = tmp_path / "t.emb"
        write_embedding_file(rows, 8, emb, kind="text")
        with pytest.raises(ZeroNorm, match="row 1"):
            attach_embeddings(store, emb, "text")

    def test_renormalization_band(self, tmp_path, rng):
        store = self.make_store(tmp_path)
        rows = random_unit_rows(rng, 3, 8)
        rows[0] = rows[0] * np.float32(1.0 + 5e-4)  # inside band: repaired
        emb = tmp_path / "t.emb"
        write_embedding_file(rows, 8, emb, kind="text")
        out = attach_embeddings(store, emb, "text")
        norm = float(np.linalg.norm(out.records[0].text_embedding.values.astype(np.float64)))
        assert abs(norm - 1.0) <= 1e-6

    def test_beyond_band_rejected(self, tmp_path, rng):
        store = self.make_store(tmp_path)
        rows = random_unit_rows(rng, 3, 8)
        rows[2] = rows[2] * np.float32(1.01)
        emb = tmp_path / "t.emb"
        write_embedding_file(rows, 8, emb, kind="text")
        with pytest.raises(NormalizationError, match="row 2"):
            attach_embeddings(store, emb, "text")

    def test_kind_must_match_file_header(self, tmp_path, rng):
        store = self.make_store(tmp_path)
        emb = tmp_path / "t.emb"
        write_embedding_file(random_unit_rows(rng, 3, 8), 8, emb, kind="acoustic")
        with pytest.raises(DimMismatch):
            attach_embeddings(store, emb, "text")

    def test_never_reorders(self, tmp_path, rng):
        store = self.make_store(tmp_path, n=5)
        emb = tmp_path / "t.emb"
        write_embedding_file(random_unit_rows(rng, 5, 4), 4, emb, kind="text")
        out = attach_embeddings(store, emb, "text")
        assert [r.utterance_id for r in out.records] == [r.utterance_id for r in store.records]


class TestValidate:
    def test_fully_valid_store(self, tmp_path, rng):
        path = tmp_path / "m.jsonl"
        write_manifest(path, simple_rows(4))
        store = ingest_manifest(path)
        for kind in ("text", "acoustic"):
            emb = tmp_path / f"{kind}.emb"
            write_embedding_file(random_unit_rows(rng, 4, 8), 8, emb, kind=kind)
            store = attach_embeddings(store, emb, kind)
        report = validate(store)
        assert report.ok
        assert report.violations == ()
        assert report.unusable_records == ()

    def test_empty_transcription_flagged_unusable(self, tmp_path, rng):
        rows = simple_rows(3)
        rows[1]["transcription"] = ""
        path = tmp_path / "m.jsonl"
        write_manifest(path, rows)
        store = ingest_manifest(path)
        report = validate(store)
        assert report.ok  # unusable is not a violation
        assert report.unusable_records == (1,)

    def test_mis_normalized_vector_reported(self, tmp_path, rng):
        import dataclasses

        from ticl.geometry import EmbeddingVector

        path = tmp_path / "m.jsonl"
        write_manifest(path, simple_rows(2))
        store = ingest_manifest(path)
        emb = tmp_path / "t.emb"
        write_embedding_file(random_unit_rows(rng, 2, 8), 8, emb, kind="text")
        store = attach_embeddings(store, emb, "text")
        # plant the defect after attach (attach itself would reject it)
        bad = EmbeddingVector(store.records[0].text_embedding.values * np.float32(1.01))
        records = list(store.records)
        records[0] = dataclasses.replace(records[0], text_embedding=bad)
        store = dataclasses.replace(store, records=tuple(records))
        report = validate(store)
        assert len(report.normalization_residuals) == 1
        index, kind, residual = report.normalization_residuals[0]
        assert (index, kind) == (0, "text")
        assert residual == pytest.approx(0.01, abs=1e-3)
        assert not report.ok


class TestStoreRoundTrip:
    def test_save_load_field_for_field(self, tmp_path, rng):
        rows = simple_rows(4)
        rows[2]["transcription"] = ""  # unusable rows survive round trips
        rows[3]["split"] = "train"
        path = tmp_path / "m.jsonl"
        write_manifest(path, rows)
        store = ingest_manifest(path)
        for kind, dim in (("text", 8), ("acoustic", 6)):
            emb = tmp_path / f"{kind}.emb"
            write_embedding_file(random_unit_rows(rng, 4, dim), dim, emb, kind=kind)
            store = attach_embeddings(store, emb, kind)
        store_dir = tmp_path / "store"
        save_store(store, store_dir)
        loaded = load_store(store_dir)
        assert loaded.text_dim == store.text_dim
        assert loaded.acoustic_dim == store.acoustic_dim
        assert loaded.metadata == store.metadata
        assert len(loaded) == len(store)
        for a, b in zip(loaded.records, store.records):
            assert a == b  # embeddings compare bit-exact via EmbeddingVector.__eq__

    def test_save_load_save_is_stable(self, tmp_path, rng):
        path = tmp_path / "m.jsonl"
        write_manifest(path, simple_rows(3))
        store = ingest_manifest(path)
        d1, d2 = tmp_path / "s1", tmp_path / "s2"
        save_store(store, d1)
        save_store(load_store(d1), d2)
        assert (d1 / "store.json").read_bytes() == (d2 / "store.json").read_bytes()

    def test_pending_store_round_trip(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, simple_rows(2))
        store = ingest_manifest(path)
        store_dir = tmp_path / "store"
        save_store(store, store_dir)
        loaded = load_store(store_dir)
        assert loaded.text_dim is None
        assert loaded.records[0].text_embedding is None
