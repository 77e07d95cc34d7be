"""Prometheus metrics for training and ranking."""

import logging
import time
from functools import wraps
from typing import Callable, Optional

from prometheus_client import Counter, Gauge, Histogram, start_http_server

logger = logging.getLogger(__name__)

# ============================================================================
# Training Metrics
# ============================================================================

train_steps_total = Counter(
    "detext_train_steps_total",
    "Optimizer steps taken",
    ["encoder"]
)

skipped_queries_total = Counter(
    "detext_skipped_queries_total",
    "Training queries skipped by the loss",
    ["reason"]
)

train_step_duration = Histogram(
    "detext_train_step_duration_seconds",
    "Forward + backward + update duration of one minibatch",
    ["encoder"],
    buckets=[0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0]
)

dev_ndcg = Gauge(
    "detext_dev_ndcg10",
    "Latest dev NDCG@10",
    ["encoder"]
)

# ============================================================================
# Serving Metrics
# ============================================================================

rank_requests_total = Counter(
    "detext_rank_requests_total",
    "Ranking requests",
    ["mode", "status"]
)

rank_request_duration = Histogram(
    "detext_rank_request_duration_seconds",
    "Ranking request wall-clock duration",
    ["mode"],
    buckets=[0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5]
)

store_lookups_total = Counter(
    "detext_store_lookups_total",
    "Document embeddings fetched from the embedding store",
    ["status"]
)

store_refreshes_total = Counter(
    "detext_store_refreshes_total",
    "Embedding store swaps"
)


# ============================================================================
# Metric Helpers
# ============================================================================

def track_train_step(encoder: str, duration: float):
    """Track one optimizer step."""
    train_steps_total.labels(encoder=encoder).inc()
    train_step_duration.labels(encoder=encoder).observe(duration)


def track_skipped_query(reason: str):
    skipped_queries_total.labels(reason=reason).inc()


def track_dev_ndcg(encoder: str, value: float):
    dev_ndcg.labels(encoder=encoder).set(value)


def track_store_lookup(found: int, missing: int = 0):
    if found:
        store_lookups_total.labels(status="hit").inc(found)
    if missing:
        store_lookups_total.labels(status="miss").inc(missing)


def track_store_refresh():
    store_refreshes_total.inc()


class RankTimer:
    """Context manager timing one ranking request; failures are counted by status."""

    def __init__(self, mode: str):
        self.mode = mode
        self.start_time: Optional[float] = None
        self.duration: float = 0.0

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.duration = time.perf_counter() - self.start_time
        rank_request_duration.labels(mode=self.mode).observe(self.duration)
        rank_requests_total.labels(mode=self.mode, status="error" if exc_type else "success").inc()


def track_rank_request(mode: str):
    """Decorator timing a ranking function."""
    def decorator(func: Callable):
        @wraps(func)
        def wrapper(*args, **kwargs):
            with RankTimer(mode):
                return func(*args, **kwargs)
        return wrapper
    return decorator


# ============================================================================
# Exporter
# ============================================================================

def start_exporter(port: Optional[int]) -> bool:
    """Expose /metrics over HTTP when a port is configured."""
    if not port:
        return False
    start_http_server(port)
    logger.info(f"Prometheus exporter listening on :{port}")
    return True
