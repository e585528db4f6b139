from __future__ import annotations

import json
import logging

import numpy as np
import pytest
from prometheus_client import REGISTRY
from pydantic import ValidationError

from logging_config import (
    JsonFormatter,
    RunIdFilter,
    bind_run_id,
    build_logging_config,
    get_run_id,
    reset_run_id,
    run_scope,
)
from metrics import operation_metrics, record_trial
from settings import Settings


def _record(**extra: object) -> logging.LogRecord:
    record = logging.LogRecord("ibpre.test", logging.INFO, __file__, 1, "trials_complete", None, None)
    for key, value in extra.items():
        setattr(record, key, value)
    return record


def test_run_id_is_scoped_to_the_binding():
    assert get_run_id() == "-"
    token = bind_run_id("abc123")
    try:
        assert get_run_id() == "abc123"
    finally:
        reset_run_id(token)
    assert get_run_id() == "-"


def test_run_scope_restores_previous_id():
    with run_scope("outer"):
        with run_scope("inner") as inner:
            assert inner == get_run_id() == "inner"
        assert get_run_id() == "outer"
    assert get_run_id() == "-"


def test_json_formatter_carries_extras_and_run_id():
    record = _record(scheme="selective", failures=0)
    token = bind_run_id("run-7")
    try:
        RunIdFilter().filter(record)
    finally:
        reset_run_id(token)

    payload = json.loads(JsonFormatter().format(record))

    assert payload["message"] == "trials_complete"
    assert payload["run_id"] == "run-7"
    assert payload["scheme"] == "selective"
    assert payload["failures"] == 0


def test_json_formatter_converts_numpy_extras():
    record = _record(max_abs_error=np.int64(12), histogram=np.array([1, 0, 2]), digest=b"\x0f")

    payload = json.loads(JsonFormatter().format(record))

    assert payload["max_abs_error"] == 12
    assert payload["histogram"] == [1, 0, 2]
    assert payload["digest"] == "0f"
    assert payload["run_id"] == "-"


def test_logging_config_honours_level_and_format():
    config = build_logging_config("debug", "plain")

    assert config["loggers"]["ibpre"]["level"] == "DEBUG"
    assert config["root"]["level"] == "WARNING"
    assert config["handlers"]["console"]["formatter"] == "plain"
    assert config["handlers"]["console"]["stream"] == "ext://sys.stderr"


def test_unknown_log_format_falls_back_to_json():
    assert build_logging_config("info", "xml")["handlers"]["console"]["formatter"] == "json"


def test_settings_read_prefixed_environment(monkeypatch):
    monkeypatch.setenv("IBPRE_SEED", "0xABCD")
    monkeypatch.setenv("IBPRE_DEFAULT_SCHEME", "Adaptive")
    monkeypatch.setenv("IBPRE_HARNESS_WORKERS", "4")

    loaded = Settings()

    assert loaded.SEED == "abcd"
    assert loaded.DEFAULT_SCHEME == "adaptive"
    assert loaded.HARNESS_WORKERS == 4


def test_settings_reject_bad_values(monkeypatch):
    monkeypatch.setenv("IBPRE_SEED", "xyz")
    with pytest.raises(ValidationError):
        Settings()

    monkeypatch.delenv("IBPRE_SEED")
    monkeypatch.setenv("IBPRE_DEFAULT_SCHEME", "hybrid")
    with pytest.raises(ValidationError):
        Settings()


def test_operation_metrics_record_outcome():
    def count(status: str) -> float:
        value = REGISTRY.get_sample_value(
            "ibpre_operations_total", {"operation": "audit", "scheme": "selective", "status": status}
        )
        return value or 0.0

    before_ok, before_err = count("success"), count("error")
    with operation_metrics("audit", "selective") as mark_success:
        mark_success()
    with pytest.raises(RuntimeError):
        with operation_metrics("audit", "selective"):
            raise RuntimeError("boom")

    assert count("success") == before_ok + 1
    assert count("error") == before_err + 1


def test_trial_metrics_count_failures():
    labels = {"scheme": "adaptive", "mode": "audit", "outcome": "failure"}
    before = REGISTRY.get_sample_value("ibpre_harness_trials_total", labels) or 0.0

    record_trial("adaptive", "audit", residue=-50, budget=100.0, failed=True)

    assert REGISTRY.get_sample_value("ibpre_harness_trials_total", labels) == before + 1
