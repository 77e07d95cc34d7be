"""Tests for benchmark workloads, percentiles and the latency harness."""

import threading

import pytest
from factories import make_example

from detext.errors import DatasetParseError, EmptyDatasetError, MissingDocumentsError
from detext.services.embedding_store import EmbeddingStoreManager, collect_documents, precompute_embeddings
from detext.services.latency_bench import (
    LatencyReport,
    WorkloadRecord,
    build_workload,
    latency_bench,
    load_workload,
    make_handler,
    nearest_rank_percentiles,
    resolve_workload,
    write_workload,
)
from detext.services.ranking_service import RankingService, RankMode


class TestWorkload:
    """Sampling, files and resolution."""

    def test_deterministic(self, test_set):
        """Same dataset and seed, same requests."""
        first = build_workload(test_set, 5, 4, seed=11)
        second = build_workload(test_set, 5, 4, seed=11)
        assert first == second
        assert all(len(set(r.candidates)) == 4 for r in first)

    def test_candidates_from_whole_pool(self, test_set):
        """N may exceed the documents of one query."""
        pool = collect_documents(test_set)
        records = build_workload(test_set, 3, 20, seed=0, documents=pool)
        assert all(len(r.candidates) == 20 for r in records)

    def test_candidate_bounds(self, test_set):
        """Zero candidates or more than the pool are rejected."""
        with pytest.raises(ValueError):
            build_workload(test_set, 1, 0, seed=0)
        with pytest.raises(ValueError):
            build_workload(test_set, 1, 10_000, seed=0)

    def test_empty_dataset(self):
        """No queries, no workload."""
        with pytest.raises(EmptyDatasetError):
            build_workload([], 1, 1, seed=0)

    def test_file_round_trip(self, test_set, tmp_path):
        """Workloads survive JSON-lines storage."""
        records = build_workload(test_set, 4, 3, seed=2)
        path = tmp_path / "workload.jsonl"
        assert write_workload(records, path) == 4
        assert load_workload(path) == records

    def test_bad_line(self, tmp_path):
        """Parse errors carry the line number."""
        path = tmp_path / "workload.jsonl"
        good = WorkloadRecord(query_id="q", source={"query": "a"}, candidates=["d1"]).model_dump_json()
        path.write_text(good + "\n{not json\n")
        with pytest.raises(DatasetParseError) as exc_info:
            load_workload(path)
        assert exc_info.value.line_number == 2

    def test_undecodable_line(self, tmp_path):
        """Bytes that are not UTF-8 are a parse error with the line number."""
        path = tmp_path / "workload.jsonl"
        path.write_bytes(b'\n{"query_id": "\xff"}\n')
        with pytest.raises(DatasetParseError) as exc_info:
            load_workload(path)
        assert exc_info.value.line_number == 2

    def test_resolve(self):
        """Candidates resolve against the document catalog; unknown ids fail."""
        example = make_example()
        record = WorkloadRecord(query_id="q1#0", source={"query": "cloud"}, candidates=["d3", "d1"])
        resolved = resolve_workload([record], example.documents)[0]
        assert [d.doc_id for d in resolved.documents] == ["d3", "d1"]
        assert resolved.source_fields[0].text == "cloud"

        missing = WorkloadRecord(query_id="q", source={"query": "x"}, candidates=["d1", "nope"])
        with pytest.raises(MissingDocumentsError):
            resolve_workload([missing], example.documents)


class TestPercentiles:
    """Nearest-rank percentiles."""

    def test_known_values(self):
        """1..100 ms gives p50=50, p95=95, p99=99."""
        assert nearest_rank_percentiles(list(range(1, 101))) == [50.0, 95.0, 99.0]

    def test_single_value(self):
        """Every percentile of one sample is that sample."""
        assert nearest_rank_percentiles([7.5]) == [7.5, 7.5, 7.5]

    def test_small_sample_uses_observed_values(self):
        """No interpolation between samples."""
        values = [1.0, 2.0, 10.0, 20.0]
        assert set(nearest_rank_percentiles(values)) <= set(values)

    def test_empty(self):
        """No latencies is an error."""
        with pytest.raises(EmptyDatasetError):
            nearest_rank_percentiles([])


class TestHarness:
    """Warmup, repetitions and concurrency."""

    def counting_fn(self):
        calls = []
        lock = threading.Lock()

        def request(example):
            with lock:
                calls.append(example.query_id)
        return request, calls

    def test_counts(self):
        """Warmup requests run untimed before every timed repetition."""
        workload = [make_example(f"q{i}") for i in range(4)]
        request, calls = self.counting_fn()
        report = latency_bench(workload, request, "test", repetitions=2, warmup=3)
        assert len(calls) == 3 + 8
        assert calls[:3] == ["q0", "q1", "q2"]
        assert report.requests == 8
        assert report.p50_ms <= report.p95_ms <= report.p99_ms

    def test_concurrency(self):
        """A thread pool still times every request."""
        workload = [make_example(f"q{i}") for i in range(5)]
        request, calls = self.counting_fn()
        report = latency_bench(workload, request, RankMode.ALL_DECODING, warmup=0, concurrency=3)
        assert report.requests == 5 and len(calls) == 5
        assert report.mode == "all-decoding"
        assert report.concurrency == 3

    def test_invalid_arguments(self):
        """Empty workloads and non-positive counts are rejected."""
        request, _ = self.counting_fn()
        with pytest.raises(EmptyDatasetError):
            latency_bench([], request, "test")
        with pytest.raises(ValueError):
            latency_bench([make_example()], request, "test", repetitions=0)

    def test_report_json(self, tmp_path):
        """Reports round-trip through JSON and render a table."""
        report = LatencyReport(mode="precompute", requests=3, p50_ms=1.0, p95_ms=2.0, p99_ms=3.0,
                               mean_ms=1.5, warmup=0, repetitions=1, concurrency=1, config={"seed": 1})
        path = tmp_path / "bench.json"
        report.write_json(path)
        assert LatencyReport.from_json(path.read_text()) == report
        assert "p95_ms" in report.to_table()

    def test_handler_ranks_through_service(self, cnn_model, train_set, test_set, tmp_path):
        """make_handler benchmarks a real serving mode."""
        store_path = tmp_path / "store.dtes"
        precompute_embeddings(cnn_model, collect_documents(train_set + test_set), store_path)
        service = RankingService(cnn_model, EmbeddingStoreManager(store_path))
        report = latency_bench(test_set[:3], make_handler(service, "precompute"), RankMode.PRECOMPUTE, warmup=1)
        assert report.requests == 3
        assert report.mean_ms > 0
