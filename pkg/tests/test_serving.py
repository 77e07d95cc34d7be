"""Tests for the embedding store, online ranking paths and serving metrics."""

import mmap
from concurrent.futures import ThreadPoolExecutor
from unittest.mock import patch

import numpy as np
import pytest
from factories import make_document, make_example
from prometheus_client import REGISTRY

from detext.errors import MissingDocumentsError, ModelCapabilityError, StaleStoreError, StoreError
from detext.models.scoring import build_model, score_query
from detext.services.embedding_store import (
    EmbeddingStore,
    EmbeddingStoreManager,
    collect_documents,
    meta_path,
    precompute_embeddings,
)
from detext.services.metrics import RankTimer
from detext.services.ranking_service import (
    STAGE_DEEP,
    STAGE_FIRST_PASS,
    RankingService,
    RankMode,
    first_pass_spec,
    order_by_score,
    rank_all_decoding,
    rank_with_store,
    score_all_decoding,
    two_pass_rank,
)


@pytest.fixture
def documents(train_set, test_set):
    return collect_documents(train_set + test_set)


@pytest.fixture
def store(cnn_model, documents, tmp_path):
    return precompute_embeddings(cnn_model, documents, tmp_path / "store.dtes")


@pytest.fixture
def first_pass(cnn_spec, train_set):
    return build_model(first_pass_spec(cnn_spec), train_set)


class TestEmbeddingStore:
    """Precompute and lookup."""

    def test_lookup_matches_live_encoding(self, cnn_model, store, documents):
        """Stored vectors equal the live per-document encoding bit for bit."""
        for doc in documents[:10]:
            stored = store.lookup(doc.doc_id)
            for a, b in zip(stored, cnn_model.encode_document(doc)):
                np.testing.assert_array_equal(a, b)

    def test_header(self, cnn_model, store, documents):
        """Fingerprint, fields, dimension and count come from the model and documents."""
        assert len(store) == len(documents)
        assert store.field_names == ("title", "headline")
        assert store.dim == 8
        assert store.fingerprint == store.build_info()["fingerprint"]

    def test_rebuild_is_byte_identical(self, cnn_model, documents, tmp_path):
        """Same model and documents give the same file."""
        first = precompute_embeddings(cnn_model, documents, tmp_path / "a.dtes")
        second = precompute_embeddings(cnn_model, list(reversed(documents)), tmp_path / "b.dtes")
        assert (tmp_path / "a.dtes").read_bytes() == (tmp_path / "b.dtes").read_bytes()
        assert first.doc_ids() == sorted(first.doc_ids())
        assert meta_path(tmp_path / "a.dtes").exists()
        second.close()

    def test_missing_ids(self, store):
        """get_many names every absent id."""
        assert store.lookup("nope") is None
        assert "nope" not in store
        with pytest.raises(MissingDocumentsError) as exc_info:
            store.get_many(["zz", store.doc_ids()[0], "aa"])
        assert exc_info.value.doc_ids == ["aa", "zz"]

    def test_mlp_cannot_precompute(self, mlp_model, documents, tmp_path):
        """There is nothing to store without a text encoder."""
        with pytest.raises(ModelCapabilityError):
            precompute_embeddings(mlp_model, documents, tmp_path / "store.dtes")

    def test_corrupt_file(self, store, tmp_path):
        """Truncated stores are rejected on open."""
        path = tmp_path / "broken.dtes"
        path.write_bytes(store.path.read_bytes()[:-4])
        with pytest.raises(StoreError):
            EmbeddingStore.open(path)

    def test_undecodable_header(self, store, tmp_path):
        """Non-text bytes in the fingerprint are a store error, and the mapping is released."""
        data = bytearray(store.path.read_bytes())
        data[8] = 0xFF
        path = tmp_path / "garbled.dtes"
        path.write_bytes(bytes(data))

        opened = []
        real_mmap = mmap.mmap

        def tracking_mmap(*args, **kwargs):
            opened.append(real_mmap(*args, **kwargs))
            return opened[-1]

        with patch("detext.services.embedding_store.mmap.mmap", side_effect=tracking_mmap):
            with pytest.raises(StoreError, match="not valid text"):
                EmbeddingStore.open(path)
        assert len(opened) == 1 and opened[0].closed

    def test_collect_documents_dedupes(self):
        """First occurrence of a doc_id wins."""
        a = make_example("q1")
        b = make_example("q2", documents=(make_document("d1", title="other"), make_document("d9")))
        ids = [d.doc_id for d in collect_documents([a, b])]
        assert ids == ["d1", "d2", "d3", "d9"]


class TestStoreManager:
    """Refresh swaps the active store."""

    def test_no_store_yet(self, tmp_path):
        """current fails before the first refresh."""
        with pytest.raises(StoreError):
            EmbeddingStoreManager(tmp_path / "store.dtes").current

    def test_refresh_swaps(self, cnn_spec, train_set, test_set, documents, tmp_path):
        """Readers holding the old store keep working after a refresh."""
        manager = EmbeddingStoreManager(tmp_path / "store.dtes")
        first_model = build_model(cnn_spec, train_set)
        old = manager.refresh(first_model, documents)

        second_model = build_model(cnn_spec.model_copy(update={"seed": 9}), train_set)
        new = manager.refresh(second_model, documents)
        assert manager.current is new
        assert old.fingerprint != new.fingerprint
        assert old.lookup(documents[0].doc_id) is not None

        ranked = rank_with_store(second_model, test_set[0], manager.current)
        assert len(ranked) == len(test_set[0].documents)

    def test_close_releases_replaced_stores(self, cnn_spec, train_set, documents, tmp_path):
        """Stores swapped out by refresh are unmapped when the manager closes."""
        path = tmp_path / "store.dtes"
        precompute_embeddings(build_model(cnn_spec, train_set), documents, path).close()
        with EmbeddingStoreManager(path) as manager:
            opened = manager.current
            refreshed = manager.refresh(build_model(cnn_spec.model_copy(update={"seed": 3}), train_set), documents)
            again = manager.refresh(build_model(cnn_spec.model_copy(update={"seed": 4}), train_set), documents)
            assert not opened._buf.closed and not refreshed._buf.closed
        assert opened._buf.closed and refreshed._buf.closed and again._buf.closed
        with pytest.raises(StoreError):
            manager.current


class TestRankingPaths:
    """All-decoding, precompute and two-pass."""

    def test_precompute_equals_all_decoding(self, cnn_model, store, test_set):
        """Stored and live embeddings give identical rankings and scores."""
        for example in test_set:
            assert rank_with_store(cnn_model, example, store) == rank_all_decoding(cnn_model, example)

    def test_bert_precompute_equals_all_decoding(self, bert_model, documents, test_set, tmp_path):
        """The same holds for the transformer encoder."""
        store = precompute_embeddings(bert_model, documents, tmp_path / "bert.dtes")
        for example in test_set[:3]:
            assert rank_with_store(bert_model, example, store) == rank_all_decoding(bert_model, example)

    def test_all_decoding_close_to_batched(self, cnn_model, test_set):
        """Serving scores agree with the training-time batched forward pass."""
        example = test_set[0]
        np.testing.assert_allclose(score_all_decoding(cnn_model, example), score_query(cnn_model, example),
                                   atol=1e-5)

    def test_stale_store(self, cnn_spec, train_set, store, test_set):
        """A store from another model is refused."""
        other = build_model(cnn_spec.model_copy(update={"seed": 5}), train_set)
        with pytest.raises(StaleStoreError):
            rank_with_store(other, test_set[0], store)

    def test_unknown_candidate(self, cnn_model, store):
        """Candidates absent from the store fail the request."""
        with pytest.raises(MissingDocumentsError):
            rank_with_store(cnn_model, make_example(), store)

    def test_order_ties_by_doc_id(self):
        """Equal scores sort by doc_id."""
        ranked = order_by_score(["b", "a", "c"], np.array([1.0, 1.0, 2.0]))
        assert [r.doc_id for r in ranked] == ["c", "a", "b"]
        assert all(r.stage == STAGE_DEEP for r in ranked)


class TestTwoPass:
    """First-pass MLP plus deep rescoring of the top K."""

    def test_k_zero_is_first_pass(self, first_pass, cnn_model, test_set):
        """K = 0 returns the first-pass ranking."""
        example = test_set[0]
        ranked = two_pass_rank(first_pass, cnn_model, example, k=0)
        assert ranked == order_by_score([d.doc_id for d in example.documents],
                                        score_query(first_pass, example), STAGE_FIRST_PASS)

    @pytest.mark.parametrize("k", [6, 50])
    def test_large_k_is_deep_ranking(self, first_pass, cnn_model, test_set, k):
        """K >= N reproduces the full deep ranking exactly."""
        for example in test_set:
            assert two_pass_rank(first_pass, cnn_model, example, k=k) == rank_all_decoding(cnn_model, example)

    def test_partial_rescoring(self, first_pass, cnn_model, test_set):
        """Top K are deep-ordered first; the rest keep first-pass order."""
        example = test_set[1]
        first = two_pass_rank(first_pass, cnn_model, example, k=0)
        ranked = two_pass_rank(first_pass, cnn_model, example, k=3)
        assert {r.doc_id for r in ranked[:3]} == {r.doc_id for r in first[:3]}
        assert all(r.stage == STAGE_DEEP for r in ranked[:3])
        assert ranked[3:] == first[3:]
        scores = [r.score for r in ranked[:3]]
        assert scores == sorted(scores, reverse=True)

    def test_with_store(self, first_pass, cnn_model, store, test_set):
        """Rescoring can read the embedding store."""
        example = test_set[2]
        assert two_pass_rank(first_pass, cnn_model, example, k=4, store=store) == \
            two_pass_rank(first_pass, cnn_model, example, k=4)

    def test_duplicate_doc_ids(self, first_pass, cnn_model):
        """Repeated doc_ids are separate candidates: every one is returned and only K are rescored."""
        example = make_example(documents=(
            make_document("a", "cloud engineer", "", (1.0, 2.0, 3.0)),
            make_document("a", "barista", "coffee", (0.0, 0.0, 0.0)),
            make_document("b", "cloud architect", "", (2.0, 1.0, 0.0)),
        ))
        ranked = two_pass_rank(first_pass, cnn_model, example, k=1)
        assert sorted(r.doc_id for r in ranked) == ["a", "a", "b"]
        assert [r.stage for r in ranked].count(STAGE_DEEP) == 1
        assert ranked[1:] == two_pass_rank(first_pass, cnn_model, example, k=0)[1:]

    def test_negative_k(self, first_pass, cnn_model, test_set):
        """K must be non-negative."""
        with pytest.raises(ValueError):
            two_pass_rank(first_pass, cnn_model, test_set[0], k=-1)

    def test_first_pass_spec(self, cnn_spec):
        """The first ranker is an MLP over traditional features."""
        spec = first_pass_spec(cnn_spec)
        assert spec.encoder.value == "mlp" and spec.use_features


class TestRankingService:
    """Mode dispatch and concurrency."""

    def test_modes(self, cnn_model, store, first_pass, test_set):
        """Every mode returns one entry per candidate."""
        service = RankingService(cnn_model, EmbeddingStoreManager(store.path), first_pass, k=3)
        example = test_set[0]
        for mode in RankMode:
            assert len(service.rank(example, mode)) == len(example.documents)
        assert service.rank(example, "precompute") == service.rank(example, RankMode.ALL_DECODING)

    def test_missing_components(self, cnn_model, test_set):
        """Modes that need a store or first pass say so."""
        service = RankingService(cnn_model)
        with pytest.raises(ModelCapabilityError):
            service.rank(test_set[0], RankMode.PRECOMPUTE)
        with pytest.raises(ModelCapabilityError):
            service.rank(test_set[0], RankMode.TWO_PASS)

    def test_concurrent_requests(self, cnn_model, store, test_set):
        """Parallel requests on a frozen model match sequential results."""
        service = RankingService(cnn_model, EmbeddingStoreManager(store.path))
        expected = [service.rank(e, RankMode.PRECOMPUTE) for e in test_set]
        with ThreadPoolExecutor(max_workers=4) as pool:
            got = list(pool.map(lambda e: service.rank(e, RankMode.PRECOMPUTE), test_set))
        assert got == expected


class TestServingMetrics:
    """Request counters."""

    def test_rank_timer_counts_errors(self):
        """Failures are counted with status=error."""
        labels = {"mode": "test", "status": "error"}
        before = REGISTRY.get_sample_value("detext_rank_requests_total", labels) or 0.0
        with pytest.raises(RuntimeError):
            with RankTimer("test"):
                raise RuntimeError("boom")
        assert REGISTRY.get_sample_value("detext_rank_requests_total", labels) == before + 1

    def test_rank_timer_duration(self):
        """Successful requests record a duration."""
        with RankTimer("test") as timer:
            pass
        assert timer.duration >= 0
