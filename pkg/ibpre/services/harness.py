"""Monte Carlo harness: round-trip failure rates, residue histograms and sampler checks.

Trial ``i`` draws from its own stream, ``seed XOR i`` on a counter range kept
apart from the set-up draws, so a run is reproducible from the seed alone,
whatever the number of workers.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import repeat
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import chisquare

from gaussian import RngHandle, sample_z_batch, uniform_mat, uniform_vec
from logging_config import run_scope
from metrics import record_trial
from params import ParamSet, validate
from schemes import adaptive, selective
from schemes.common import (
    Ciphertext,
    Identity,
    IdentityBits,
    ReKey,
    UserSecret,
    decrypt,
    decryption_residue,
    reencrypt,
)
from trapdoor import GADGET_GS_NORM, gen_trapdoor, sample_g, sample_pre
from zq_linear import ZqMatrix, det_mod, frd_encode, gadget_matrix, mat_vec

logger = logging.getLogger("ibpre.harness")

Z_TEST_WIDTH = 10.0
Z_WIDE_TEST_WIDTH = 2048.0
MOMENT_TOLERANCE = 0.02
G_STD_TOLERANCE = 0.05
NORM_PASS_FRACTION = 0.99
CHI2_MIN_PVALUE = 1e-3
UNIFORMITY_BUCKETS = 16
# Counter bit that separates per-trial streams from the set-up stream.
TRIAL_STREAM = 1 << 63


class TrialReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    scheme: str
    mode: str
    trials: int = 0
    failures: int = 0
    max_abs_error: int = 0
    budget: float
    analytic_bound: float
    histogram: tuple[int, ...] = Field(default_factory=tuple)

    @property
    def failure_rate(self) -> float:
        return self.failures / self.trials if self.trials else 0.0

    @property
    def within_bound(self) -> bool:
        return self.max_abs_error <= self.analytic_bound

    def merge(self, other: "TrialReport") -> "TrialReport":
        width = max(len(self.histogram), len(other.histogram))
        left = list(self.histogram) + [0] * (width - len(self.histogram))
        right = list(other.histogram) + [0] * (width - len(other.histogram))
        return self.model_copy(
            update={
                "trials": self.trials + other.trials,
                "failures": self.failures + other.failures,
                "max_abs_error": max(self.max_abs_error, other.max_abs_error),
                "histogram": tuple(a + b for a, b in zip(left, right)),
            }
        )


class CheckResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    passed: bool
    observed: float
    expected: float
    detail: str = ""


class SamplerReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    checks: tuple[CheckResult, ...] = ()

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def get(self, name: str) -> CheckResult:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)


@dataclass(frozen=True, slots=True)
class SweepSizes:
    z_draws: int = 1_000_000
    g_draws: int = 10_000
    pre_draws: int = 1_000
    frd_pairs: int = 10_000
    trapdoors: int = 100


@dataclass(frozen=True, eq=False, slots=True)
class _Suite:
    """One set-up system plus the scheme-specific operations the trials need."""

    scheme: str
    params: ParamSet
    pp: object
    msk: object

    def identity(self, rng: RngHandle) -> Identity:
        if self.scheme == "adaptive":
            draws = rng.generator.integers(0, 2, size=self.params.l)
            return IdentityBits(tuple(int(2 * b - 1) for b in draws))
        while True:
            candidate = uniform_vec(self.params.n, self.params.q, rng)
            if not candidate.is_zero():
                return candidate

    def extract(self, identity: Identity, rng: RngHandle) -> UserSecret:
        if self.scheme == "adaptive":
            return adaptive.extract_a(self.pp, self.msk, identity, rng)  # type: ignore[arg-type]
        return selective.extract(self.pp, self.msk, identity, rng)  # type: ignore[arg-type]

    def encrypt(self, identity: Identity, bit: int, rng: RngHandle) -> Ciphertext:
        if self.scheme == "adaptive":
            return adaptive.encrypt_a(self.pp, identity, bit, rng)  # type: ignore[arg-type]
        return selective.encrypt(self.pp, identity, bit, rng)  # type: ignore[arg-type]

    def rekey(self, sk_i: UserSecret, id_j: Identity, rng: RngHandle) -> ReKey:
        if self.scheme == "adaptive":
            return adaptive.rekeygen_a(self.pp, sk_i, sk_i.identity, id_j, rng)  # type: ignore[arg-type]
        return selective.rekeygen(self.pp, sk_i, sk_i.identity, id_j, rng)  # type: ignore[arg-type]


def _set_up(scheme: str, ps: ParamSet, rng: RngHandle) -> _Suite:
    if scheme == "adaptive":
        pp, msk = adaptive.setup_a(ps, rng)
    elif scheme == "selective":
        pp, msk = selective.setup(ps, rng)  # type: ignore[assignment]
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return _Suite(scheme=scheme, params=ps, pp=pp, msk=msk)


def _empty_report(suite: _Suite, mode: str) -> TrialReport:
    budget = validate(suite.params)
    return TrialReport(
        scheme=suite.scheme,
        mode=mode,
        budget=suite.params.q / 4.0,
        analytic_bound=budget.b_reenc if mode == "reenc" else budget.b_fresh,
    )


def _one_trial(suite: _Suite, mode: str, rng: RngHandle) -> tuple[bool, int]:
    bit = int(rng.generator.integers(0, 2))
    sender = suite.identity(rng)
    sk_sender = suite.extract(sender, rng)
    ct = suite.encrypt(sender, bit, rng)
    if mode == "fresh":
        reader = sk_sender
    else:
        receiver = suite.identity(rng)
        reader = suite.extract(receiver, rng)
        ct = reencrypt(suite.rekey(sk_sender, receiver, rng), ct)
    failed = decrypt(reader, ct) != bit
    return failed, decryption_residue(reader, ct, bit)


def _run_chunk(
    suite: _Suite, mode: str, base: RngHandle, indices: Sequence[int]
) -> tuple[TrialReport, list[tuple[bool, int]]]:
    report = _empty_report(suite, mode)
    outcomes = [_one_trial(suite, mode, base.derive(index)) for index in indices]
    buckets: list[int] = []
    for _, residue in outcomes:
        bucket = abs(residue).bit_length()
        if bucket >= len(buckets):
            buckets.extend([0] * (bucket + 1 - len(buckets)))
        buckets[bucket] += 1
    summary = report.model_copy(
        update={
            "trials": len(outcomes),
            "failures": sum(failed for failed, _ in outcomes),
            "max_abs_error": max((abs(residue) for _, residue in outcomes), default=0),
            "histogram": tuple(buckets),
        }
    )
    return summary, outcomes


def _run_trials(scheme: str, ps: ParamSet, trials: int, rng: RngHandle, mode: str, workers: int) -> TrialReport:
    if trials < 0:
        raise ValueError(f"trial count must be non-negative, got {trials}")
    with run_scope(f"{scheme}-{mode}-{rng.hex_seed()[:8]}"):
        suite = _set_up(scheme, ps, rng)
        base = rng.fork(rng.counter ^ TRIAL_STREAM)
        indices = list(range(trials))
        if workers <= 1 or trials < 2:
            parts = [_run_chunk(suite, mode, base, indices)]
        else:
            chunks = [indices[i::workers] for i in range(workers) if indices[i::workers]]
            with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
                parts = list(pool.map(_run_chunk, repeat(suite), repeat(mode), repeat(base), chunks))
        # Workers have their own registries; metrics are recorded here, in the calling process.
        report = parts[0][0]
        for part, _ in parts[1:]:
            report = report.merge(part)
        for _, outcomes in parts:
            for failed, residue in outcomes:
                record_trial(scheme, mode, residue=residue, budget=report.budget, failed=failed)
        logger.info(
            "trials_complete",
            extra={
                "scheme": scheme,
                "mode": mode,
                "trials": report.trials,
                "failures": report.failures,
                "max_abs_error": report.max_abs_error,
                "budget": report.budget,
            },
        )
        return report


def roundtrip_trials(scheme: str, ps: ParamSet, trials: int, rng: RngHandle, *, workers: int = 1) -> TrialReport:
    """Encrypt a random bit to a fresh identity and decrypt it, ``trials`` times."""

    return _run_trials(scheme, ps, trials, rng, "fresh", workers)


def reenc_trials(scheme: str, ps: ParamSet, trials: int, rng: RngHandle, *, workers: int = 1) -> TrialReport:
    """Encrypt to one fresh identity, re-encrypt to another, decrypt there."""

    return _run_trials(scheme, ps, trials, rng, "reenc", workers)


def _check_z_moments(name: str, width: float, draws: int, rng: RngHandle) -> list[CheckResult]:
    samples = sample_z_batch(np.zeros(draws), width, rng).astype(np.float64)
    expected_std = width / math.sqrt(2 * math.pi)
    mean = float(samples.mean())
    std = float(samples.std())
    worst = float(np.max(np.abs(samples)))
    return [
        CheckResult(
            name=f"{name}_mean",
            passed=abs(mean) <= MOMENT_TOLERANCE * expected_std,
            observed=mean,
            expected=0.0,
        ),
        CheckResult(
            name=f"{name}_std",
            passed=abs(std - expected_std) <= MOMENT_TOLERANCE * expected_std,
            observed=std,
            expected=expected_std,
        ),
        CheckResult(name=f"{name}_tail", passed=worst <= 6 * width, observed=worst, expected=6 * width),
    ]


def _check_sample_g(ps: ParamSet, draws: int, rng: RngHandle) -> list[CheckResult]:
    width = GADGET_GS_NORM * ps.r
    gadget = gadget_matrix(ps.n, ps.k, ps.q)
    exact = 0
    coords: list[np.ndarray] = []
    for _ in range(draws):
        target = uniform_vec(ps.n, ps.q, rng)
        x = sample_g(target, width, rng)
        exact += int(mat_vec(gadget, x) == target)
        coords.append(x.entries)
    pooled = np.concatenate(coords).astype(np.float64)
    std = float(pooled.std())
    expected = width / math.sqrt(2 * math.pi)
    return [
        CheckResult(name="sample_g_exact", passed=exact == draws, observed=exact, expected=draws),
        CheckResult(
            name="sample_g_std",
            passed=abs(std - expected) <= G_STD_TOLERANCE * expected,
            observed=std,
            expected=expected,
        ),
    ]


def _check_sample_pre(ps: ParamSet, draws: int, rng: RngHandle, norm_width: float | None) -> list[CheckResult]:
    a_bar = uniform_mat(ps.n, ps.m_bar, ps.q, rng)
    identity = uniform_vec(ps.n, ps.q, rng)
    tag = ZqMatrix.identity(ps.n, ps.q) if identity.is_zero() else frd_encode(identity, ps.frd_poly)
    pair = gen_trapdoor(ps, a_bar, tag, rng)
    claimed = norm_width if norm_width is not None else ps.s
    limit = claimed * math.sqrt(ps.m)
    exact = 0
    short = 0
    for _ in range(draws):
        target = uniform_vec(ps.n, ps.q, rng)
        x = sample_pre(pair.trapdoor, pair.a_mat, target, ps.s, rng)
        exact += int(mat_vec(pair.a_mat, x) == target)
        short += int(x.norm() <= limit)
    fraction = short / draws
    return [
        CheckResult(name="sample_pre_exact", passed=exact == draws, observed=exact, expected=draws),
        CheckResult(
            name="sample_pre_norm",
            passed=fraction >= NORM_PASS_FRACTION,
            observed=fraction,
            expected=NORM_PASS_FRACTION,
            detail=f"limit={limit:.1f}",
        ),
    ]


def _check_frd(ps: ParamSet, pairs: int, rng: RngHandle) -> list[CheckResult]:
    singular = 0
    for _ in range(pairs):
        left = uniform_vec(ps.n, ps.q, rng)
        right = uniform_vec(ps.n, ps.q, rng)
        if left == right:
            continue
        difference = frd_encode(left, ps.frd_poly) - frd_encode(right, ps.frd_poly)
        singular += int(det_mod(difference) == 0)
    return [CheckResult(name="frd_full_rank", passed=singular == 0, observed=singular, expected=0)]


def _check_uniformity(ps: ParamSet, trapdoors: int, rng: RngHandle) -> list[CheckResult]:
    zero_tag = ZqMatrix.zeros(ps.n, ps.n, ps.q)
    counts = np.zeros(UNIFORMITY_BUCKETS, dtype=np.int64)
    for _ in range(trapdoors):
        a_bar = uniform_mat(ps.n, ps.m_bar, ps.q, rng)
        right = gen_trapdoor(ps, a_bar, zero_tag, rng).a_mat.entries[:, ps.m_bar :]
        scaled = np.floor(right.astype(np.float64) / ps.q * UNIFORMITY_BUCKETS).astype(np.int64)
        counts += np.bincount(np.clip(scaled, 0, UNIFORMITY_BUCKETS - 1).reshape(-1), minlength=UNIFORMITY_BUCKETS)
    _, p_value = chisquare(counts)
    return [
        CheckResult(
            name="trapdoor_uniformity",
            passed=float(p_value) > CHI2_MIN_PVALUE,
            observed=float(p_value),
            expected=CHI2_MIN_PVALUE,
        )
    ]


def sampler_checks(
    ps: ParamSet,
    rng: RngHandle,
    *,
    sizes: SweepSizes = SweepSizes(),
    norm_width: float | None = None,
) -> SamplerReport:
    """Statistical sweeps over the samplers.

    ``norm_width`` overrides the width the preimage norms are judged against,
    which is how an undersized width is shown to be caught.
    """

    sweeps: list[tuple[int, Callable[[], list[CheckResult]]]] = [
        (sizes.z_draws, lambda: _check_z_moments("sample_z", Z_TEST_WIDTH, sizes.z_draws, rng)),
        (sizes.z_draws, lambda: _check_z_moments("sample_z_wide", Z_WIDE_TEST_WIDTH, sizes.z_draws, rng)),
        (sizes.g_draws, lambda: _check_sample_g(ps, sizes.g_draws, rng)),
        (sizes.pre_draws, lambda: _check_sample_pre(ps, sizes.pre_draws, rng, norm_width)),
        (sizes.frd_pairs, lambda: _check_frd(ps, sizes.frd_pairs, rng)),
        (sizes.trapdoors, lambda: _check_uniformity(ps, sizes.trapdoors, rng)),
    ]
    checks: list[CheckResult] = []
    for size, sweep in sweeps:
        if size > 0:
            checks.extend(sweep())
    report = SamplerReport(checks=tuple(checks))
    logger.info("sampler_checks_complete", extra={"checks": len(checks), "passed": report.passed})
    return report


def report_csv(report: TrialReport) -> bytes:
    """Residue histogram, one row per magnitude bucket [2^(i-1), 2^i)."""

    output = io.StringIO()
    writer = csv.DictWriter(output, fieldnames=["scheme", "mode", "bucket", "low", "high", "count"])
    writer.writeheader()
    for bucket, count in enumerate(report.histogram):
        writer.writerow(
            {
                "scheme": report.scheme,
                "mode": report.mode,
                "bucket": bucket,
                "low": 0 if bucket == 0 else 1 << (bucket - 1),
                "high": 0 if bucket == 0 else (1 << bucket) - 1,
                "count": count,
            }
        )
    return output.getvalue().encode("utf-8")


def write_csv(reports: Sequence[TrialReport], path: str | Path) -> None:
    chunks = [report_csv(report) for report in reports]
    body = b"".join(chunk if i == 0 else chunk.split(b"\n", 1)[1] for i, chunk in enumerate(chunks))
    Path(path).write_bytes(body)


__all__ = [
    "CheckResult",
    "SamplerReport",
    "SweepSizes",
    "TrialReport",
    "reenc_trials",
    "report_csv",
    "roundtrip_trials",
    "sampler_checks",
    "write_csv",
]
