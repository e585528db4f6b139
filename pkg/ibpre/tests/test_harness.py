from __future__ import annotations

import csv
import io

import pytest
from prometheus_client import REGISTRY

from services import harness
from services.harness import (
    TRIAL_STREAM,
    SweepSizes,
    TrialReport,
    reenc_trials,
    report_csv,
    roundtrip_trials,
    sampler_checks,
    write_csv,
)

from . import factories

QUICK_SWEEP = SweepSizes(z_draws=100_000, g_draws=200, pre_draws=30, frd_pairs=50, trapdoors=5)
NO_SWEEP = SweepSizes(z_draws=0, g_draws=0, pre_draws=0, frd_pairs=0, trapdoors=0)


def test_fresh_round_trips_never_fail(toy_params):
    report = roundtrip_trials("selective", toy_params, 6, factories.make_rng(400))

    assert report.trials == 6
    assert report.failures == 0
    assert report.failure_rate == 0.0
    assert report.budget == pytest.approx(toy_params.q / 4)
    assert report.within_bound
    assert sum(report.histogram) == 6


def test_reencryption_round_trips_never_fail(toy_params_a):
    report = reenc_trials("adaptive", toy_params_a, 2, factories.make_rng(401))

    assert report.mode == "reenc"
    assert report.trials == 2
    assert report.failures == 0
    assert report.max_abs_error < report.budget


def test_trials_are_reproducible_from_the_seed(toy_params):
    first = roundtrip_trials("selective", toy_params, 3, factories.make_rng(402))
    second = roundtrip_trials("selective", toy_params, 3, factories.make_rng(402))

    assert first == second


def test_worker_count_does_not_change_results(toy_params):
    serial = roundtrip_trials("selective", toy_params, 4, factories.make_rng(403))
    parallel = roundtrip_trials("selective", toy_params, 4, factories.make_rng(403), workers=2)

    assert parallel.trials == serial.trials
    assert parallel.max_abs_error == serial.max_abs_error
    assert parallel.histogram == serial.histogram


def test_worker_pool_trials_are_counted_in_the_caller(toy_params):
    def total() -> float:
        return sum(
            REGISTRY.get_sample_value(
                "ibpre_harness_trials_total", {"scheme": "selective", "mode": "fresh", "outcome": outcome}
            )
            or 0.0
            for outcome in ("success", "failure")
        )

    before = total()
    roundtrip_trials("selective", toy_params, 4, factories.make_rng(404), workers=2)

    assert total() == before + 4


def test_trial_streams_are_seed_xor_index(toy_params):
    report = roundtrip_trials("selective", toy_params, 3, factories.make_rng(405))

    suite = harness._set_up("selective", toy_params, factories.make_rng(405))
    base = factories.make_rng(405).fork(TRIAL_STREAM)
    replay, outcomes = harness._run_chunk(suite, "fresh", base, [0, 1, 2])

    assert base.derive(0).seed == factories.make_rng(405).seed
    assert base.derive(2).seed == (405 ^ 2).to_bytes(32, "little")
    assert replay == report
    assert len(outcomes) == 3


def test_unknown_scheme_is_rejected(toy_params):
    with pytest.raises(ValueError):
        roundtrip_trials("hybrid", toy_params, 1, factories.make_rng())


def test_reports_merge_histograms():
    base = {"scheme": "selective", "mode": "fresh", "budget": 10.0, "analytic_bound": 20.0}
    left = TrialReport(**base, trials=2, failures=0, max_abs_error=5, histogram=(0, 1, 1))
    right = TrialReport(**base, trials=1, failures=1, max_abs_error=9, histogram=(0, 0, 0, 0, 1))

    merged = left.merge(right)

    assert merged.trials == 3
    assert merged.failures == 1
    assert merged.max_abs_error == 9
    assert merged.histogram == (0, 1, 1, 0, 1)
    assert merged.failure_rate == pytest.approx(1 / 3)


def test_histogram_csv_lists_every_bucket(tmp_path):
    report = TrialReport(
        scheme="adaptive", mode="reenc", trials=3, budget=10.0, analytic_bound=20.0, histogram=(1, 0, 2)
    )

    rows = list(csv.DictReader(io.StringIO(report_csv(report).decode("utf-8"))))

    assert [row["count"] for row in rows] == ["1", "0", "2"]
    assert [(row["low"], row["high"]) for row in rows] == [("0", "0"), ("1", "1"), ("2", "3")]

    target = tmp_path / "residues.csv"
    write_csv([report, report.model_copy(update={"mode": "fresh"})], target)
    written = list(csv.DictReader(io.StringIO(target.read_text(encoding="utf-8"))))
    assert len(written) == 6
    assert {row["mode"] for row in written} == {"reenc", "fresh"}


def test_sampler_sweeps_pass_on_sound_parameters(toy_params):
    report = sampler_checks(toy_params, factories.make_rng(404), sizes=QUICK_SWEEP)

    assert report.get("sample_g_exact").passed
    assert report.get("sample_pre_exact").passed
    assert report.get("sample_pre_norm").passed
    assert report.get("frd_full_rank").passed
    assert report.get("sample_z_std").passed
    assert report.get("sample_z_wide_std").passed
    assert report.get("sample_z_tail").passed


def test_undersized_norm_width_is_caught(toy_params):
    sizes = SweepSizes(z_draws=0, g_draws=0, pre_draws=20, frd_pairs=0, trapdoors=0)

    report = sampler_checks(toy_params, factories.make_rng(405), sizes=sizes, norm_width=toy_params.s / 10)

    assert report.get("sample_pre_exact").passed
    assert not report.get("sample_pre_norm").passed
    assert not report.passed


def test_empty_sweep_passes_trivially(toy_params):
    report = sampler_checks(toy_params, factories.make_rng(), sizes=NO_SWEEP)

    assert report.checks == ()
    assert report.passed
    with pytest.raises(KeyError):
        report.get("sample_z_std")
