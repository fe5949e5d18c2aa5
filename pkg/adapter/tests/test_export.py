"""Adapter contract tests against the engine's external surfaces.

The exported stores are validated by driving the engine's own CLI in a
subprocess (`build-corpus --encoder import` re-reads and re-emits the
store, `inspect` summarizes it); the adapter never imports the engine.
Model-free tests run against deterministic stub backends; live-model
tests are in test_live_models.py.
"""

import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from cirforge_adapter.export import (
    ExportJob,
    export_caption_embeddings,
    export_global_image_text_features,
)
from cirforge_adapter.store_format import (
    KIND_CAPTION,
    KIND_IMAGE,
    AdapterError,
    read_corpus,
    read_store,
    write_store,
)

DIM = 24


def stub_vector(key: str, dim: int = DIM) -> np.ndarray:
    digest = hashlib.sha256(key.encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    vec = rng.normal(size=dim)
    return vec / np.linalg.norm(vec)


class StubTextBackend:
    model_name = "stub-text"

    def encode_text(self, texts):
        return np.stack([stub_vector(t) for t in texts])


class StubPairBackend(StubTextBackend):
    model_name = "stub-pair"

    def encode_image(self, paths):
        return np.stack([stub_vector(f"img:{p.name}") for p in paths])


def write_corpus(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


@pytest.fixture()
def corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    write_corpus(path, [
        {"id": 1, "caption": "a red dog on the grass"},
        {"id": 2, "caption": "a blue bird in the sky"},
        {"id": 3, "caption": "a red dog on the grass"},  # duplicate caption, new id
        {"id": 4, "caption": "two apples in a basket"},
    ])
    return path


def engine(*argv):
    """Run the retrieval engine's CLI out of process."""
    return subprocess.run(
        [sys.executable, "-m", "cirforge.cli", *map(str, argv)],
        capture_output=True, text=True, timeout=120,
    )


class TestCaptionExport:
    def test_store_passes_engine_validation_with_zero_warnings(self, corpus, tmp_path):
        out = tmp_path / "caps.bin"
        count = export_caption_embeddings(
            ExportJob(str(corpus), str(out)), backend=StubTextBackend())
        assert count == 4

        reemitted = tmp_path / "reemitted.bin"
        result = engine("build-corpus", "--captions", corpus, "--out", reemitted,
                        "--encoder", "import", "--dim", DIM, "--import-path", out)
        assert result.returncode == 0, result.stderr
        assert result.stderr == ""
        assert reemitted.read_bytes() == out.read_bytes()

        result = engine("inspect", out)
        assert result.returncode == 0
        blob = json.loads(result.stdout)
        assert blob == {"format": "embedding-store", "dim": DIM, "kind": "caption", "count": 4}

    def test_identical_captions_share_identical_vectors(self, corpus, tmp_path):
        out = tmp_path / "caps.bin"
        export_caption_embeddings(ExportJob(str(corpus), str(out)), backend=StubTextBackend())
        dim, kind, entries = read_store(out)
        assert (dim, kind) == (DIM, KIND_CAPTION)
        vectors = dict(entries)
        assert np.array_equal(vectors[1], vectors[3])
        assert float(np.dot(vectors[1].astype(np.float64),
                            vectors[3].astype(np.float64))) == pytest.approx(1.0, abs=1e-6)

    def test_id_mapping_preserves_corpus_order(self, corpus, tmp_path):
        out = tmp_path / "caps.bin"
        export_caption_embeddings(ExportJob(str(corpus), str(out)), backend=StubTextBackend())
        _, _, entries = read_store(out)
        assert [id_ for id_, _ in entries] == [1, 2, 3, 4]

    def test_all_vectors_unit_norm(self, corpus, tmp_path):
        out = tmp_path / "caps.bin"
        export_caption_embeddings(ExportJob(str(corpus), str(out)), backend=StubTextBackend())
        _, _, entries = read_store(out)
        for id_, vec in entries:
            assert abs(np.linalg.norm(vec.astype(np.float64)) - 1.0) < 1e-4

    def test_export_is_deterministic(self, corpus, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        export_caption_embeddings(ExportJob(str(corpus), str(a)), backend=StubTextBackend())
        export_caption_embeddings(ExportJob(str(corpus), str(b)), backend=StubTextBackend())
        assert a.read_bytes() == b.read_bytes()

    def test_sidecar_records_model_identity(self, corpus, tmp_path):
        out = tmp_path / "caps.bin"
        export_caption_embeddings(
            ExportJob(str(corpus), str(out), model="stub-text"), backend=StubTextBackend())
        meta = json.loads((tmp_path / "caps.bin.meta.json").read_text())
        assert meta["model"] == "stub-text"
        assert meta["dim"] == DIM
        assert meta["count"] == 4

    def test_requested_dim_mismatch_rejected(self, corpus, tmp_path):
        with pytest.raises(AdapterError, match="dim"):
            export_caption_embeddings(
                ExportJob(str(corpus), str(tmp_path / "x.bin"), dim=DIM + 1),
                backend=StubTextBackend())

    def test_empty_corpus_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(AdapterError):
            export_caption_embeddings(ExportJob(str(path), str(tmp_path / "x.bin")),
                                      backend=StubTextBackend())

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        write_corpus(path, [{"id": 7, "caption": "a"}, {"id": 7, "caption": "b"}])
        with pytest.raises(AdapterError, match="7"):
            read_corpus(path)


class TestPairedExport:
    def _images(self, tmp_path, ids):
        img_dir = tmp_path / "images"
        img_dir.mkdir()
        for id_ in ids:
            (img_dir / f"{id_}.png").write_bytes(b"stub image bytes")
        return img_dir

    def test_paired_stores_share_dim(self, corpus, tmp_path):
        img_dir = self._images(tmp_path, [1, 2, 4])
        job = ExportJob(str(corpus), str(tmp_path / "text.bin"),
                        images_dir=str(img_dir), image_out_path=str(tmp_path / "img.bin"))
        images, captions = export_global_image_text_features(job, backend=StubPairBackend())
        assert (images, captions) == (3, 4)
        text_dim, text_kind, _ = read_store(tmp_path / "text.bin")
        img_dim, img_kind, img_entries = read_store(tmp_path / "img.bin")
        assert text_dim == img_dim == DIM
        assert (text_kind, img_kind) == (KIND_CAPTION, KIND_IMAGE)
        assert [i for i, _ in img_entries] == [1, 2, 4]  # id 3 has no image: skipped

    def test_both_stores_pass_engine_validation(self, corpus, tmp_path):
        img_dir = self._images(tmp_path, [1, 2, 3, 4])
        job = ExportJob(str(corpus), str(tmp_path / "text.bin"),
                        images_dir=str(img_dir), image_out_path=str(tmp_path / "img.bin"))
        export_global_image_text_features(job, backend=StubPairBackend())
        for store in ("text.bin", "img.bin"):
            result = engine("inspect", tmp_path / store)
            assert result.returncode == 0, result.stderr
            assert result.stderr == ""

    def test_zero_resolvable_images_gives_valid_empty_store(self, corpus, tmp_path):
        img_dir = tmp_path / "images"
        img_dir.mkdir()
        job = ExportJob(str(corpus), str(tmp_path / "text.bin"),
                        images_dir=str(img_dir), image_out_path=str(tmp_path / "img.bin"))
        images, captions = export_global_image_text_features(job, backend=StubPairBackend())
        assert (images, captions) == (0, 4)
        result = engine("inspect", tmp_path / "img.bin")
        assert result.returncode == 0
        blob = json.loads(result.stdout)
        assert blob["count"] == 0
        assert blob["kind"] == "image"
        assert blob["dim"] == DIM

    def test_missing_image_out_rejected(self, corpus, tmp_path):
        job = ExportJob(str(corpus), str(tmp_path / "text.bin"), images_dir=str(tmp_path))
        with pytest.raises(AdapterError):
            export_global_image_text_features(job, backend=StubPairBackend())


class TestStoreWriter:
    def test_zero_vector_rejected(self, tmp_path):
        with pytest.raises(AdapterError, match="zero"):
            write_store(tmp_path / "x.bin", KIND_CAPTION, [(1, np.zeros(8))])

    def test_inconsistent_dims_rejected(self, tmp_path):
        with pytest.raises(AdapterError):
            write_store(tmp_path / "x.bin", KIND_CAPTION,
                        [(1, np.ones(8)), (2, np.ones(9))])

    def test_round_trip(self, tmp_path):
        entries = [(5, stub_vector("a")), (9, stub_vector("b"))]
        write_store(tmp_path / "x.bin", KIND_IMAGE, entries)
        dim, kind, loaded = read_store(tmp_path / "x.bin")
        assert (dim, kind) == (DIM, KIND_IMAGE)
        assert [i for i, _ in loaded] == [5, 9]


class TestCli:
    def run_cli(self, *argv):
        return subprocess.run(
            [sys.executable, "-m", "cirforge_adapter.cli", *map(str, argv)],
            capture_output=True, text=True, timeout=120,
        )

    def test_images_without_image_out_exits_2(self, corpus, tmp_path):
        result = self.run_cli("--captions", corpus, "--out", tmp_path / "x.bin",
                              "--images", tmp_path)
        assert result.returncode == 2
        assert "--image-out" in result.stderr

    def test_help_exits_zero(self):
        result = self.run_cli("--help")
        assert result.returncode == 0
        assert "--captions" in result.stdout
