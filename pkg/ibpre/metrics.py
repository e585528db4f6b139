"""Prometheus metrics for scheme operations and the statistical harness."""

from __future__ import annotations

import time
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterator

from prometheus_client import REGISTRY, Counter, Histogram, write_to_textfile

_OPERATIONS = Counter(
    "ibpre_operations_total",
    "Number of scheme operations executed, by outcome.",
    ("operation", "scheme", "status"),
)

_OPERATION_DURATION = Histogram(
    "ibpre_operation_duration_seconds",
    "Wall time spent in a scheme operation.",
    ("operation", "scheme"),
    buckets=(0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 15.0, 60.0, float("inf")),
)

_HARNESS_TRIALS = Counter(
    "ibpre_harness_trials_total",
    "Round-trip trials executed by the harness.",
    ("scheme", "mode", "outcome"),
)

_RESIDUE_RATIO = Histogram(
    "ibpre_harness_residue_ratio",
    "Observed decryption residue divided by the q/4 budget.",
    ("scheme", "mode"),
    buckets=(1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.1, 0.5, 1.0, float("inf")),
)


@contextmanager
def operation_metrics(operation: str, scheme: str) -> Iterator[Callable[[], None]]:
    """Track duration and outcome of one operation.

    The yielded callback marks the operation as successful. When it is not
    called (an exception escaped, or the caller gave up) the outcome is
    recorded as ``error``.
    """

    start = time.perf_counter()
    status = "error"

    def mark_success() -> None:
        nonlocal status
        status = "success"

    try:
        yield mark_success
    finally:
        duration = max(0.0, time.perf_counter() - start)
        _OPERATION_DURATION.labels(operation=operation, scheme=scheme).observe(duration)
        _OPERATIONS.labels(operation=operation, scheme=scheme, status=status).inc()


def record_trial(scheme: str, mode: str, *, residue: int, budget: float, failed: bool) -> None:
    _HARNESS_TRIALS.labels(scheme=scheme, mode=mode, outcome="failure" if failed else "success").inc()
    if budget > 0:
        _RESIDUE_RATIO.labels(scheme=scheme, mode=mode).observe(abs(residue) / budget)


def export_textfile(path: str | Path) -> None:
    """Write the default registry in the Prometheus text format."""

    write_to_textfile(str(path), REGISTRY)


__all__ = ["export_textfile", "operation_metrics", "record_trial"]
