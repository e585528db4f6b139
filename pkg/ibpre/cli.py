#!/usr/bin/env python3
"""Command line front end: parameters, keys, ciphertexts and the statistical harness.

Every command reads and writes envelope files. Exit status is 0 on success,
2 when an argument, parameter set or key fails validation, and 3 when a file
cannot be decoded::

    python ibpre/cli.py derive-params --n 32 --l 0 --scheme selective --out params.bin
    python ibpre/cli.py setup --scheme selective --params params.bin --out pp.bin --seed 00ff
    python ibpre/cli.py extract --scheme selective --params pp.bin --in pp.bin.msk --id alice --out alice.key
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import uuid
from pathlib import Path
from typing import Callable

from gaussian import RngHandle, SamplerError
from logging_config import run_scope, setup_logging
from metrics import export_textfile, operation_metrics
from params import ParameterError, ParamSet, derive, find_modulus, validate
from schemes import adaptive, selective
from schemes.common import (
    Ciphertext,
    Identity,
    SchemeError,
    UserSecret,
    bits_from_bytes,
    bytes_from_bits,
    decrypt,
    hash_identity,
    hash_identity_bits,
    reencrypt,
)
from services.harness import SweepSizes, reenc_trials, roundtrip_trials, sampler_checks, write_csv
from settings import SCHEMES, settings
from storage.envelope import Envelope, EnvelopeError, ObjectKind, Scheme, deserialize, serialize
from trapdoor import DecodeError, TrapdoorError
from zq_linear import LinearAlgebraError

logger = logging.getLogger("ibpre.cli")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DECODE = 3


class CommandError(ValueError):
    """Raised for command-line level validation failures."""


def _rng(args: argparse.Namespace) -> RngHandle:
    seed = args.seed if getattr(args, "seed", None) else settings.SEED
    return RngHandle.from_hex(seed) if seed else RngHandle.from_entropy()


def _read(path: str, kind: ObjectKind, scheme: Scheme | None = None) -> Envelope:
    file_path = Path(path)
    if not file_path.is_file():
        raise CommandError(f"file not found: {path}")
    return deserialize(file_path.read_bytes(), expect_kind=kind, expect_scheme=scheme)


def _write(path: str, payload: bytes) -> None:
    Path(path).write_bytes(payload)
    logger.info("file_written", extra={"path": path, "size": len(payload)})


def _identity(scheme: Scheme, params: ParamSet, label: str) -> Identity:
    if scheme is Scheme.ADAPTIVE:
        return hash_identity_bits(label, params.l)
    return hash_identity(label, params.n, params.q)


def _cmd_derive_params(args: argparse.Namespace) -> int:
    scheme = Scheme.from_name(args.scheme)
    identity_bits = args.l
    if identity_bits is None:
        identity_bits = settings.DEFAULT_IDENTITY_BITS if scheme is Scheme.ADAPTIVE else 0
    search = find_modulus if args.allow_small else derive
    params = search(args.n, identity_bits, args.margin)
    _write(args.out, serialize(params, params=params, scheme=scheme))
    print(params.model_dump_json())
    return EXIT_OK


def _cmd_validate_params(args: argparse.Namespace) -> int:
    envelope = _read(args.params, ObjectKind.PARAMS)
    report = validate(envelope.params)
    print(report.model_dump_json())
    return EXIT_OK if report.valid else EXIT_INVALID


def _cmd_setup(args: argparse.Namespace) -> int:
    scheme = Scheme.from_name(args.scheme)
    params = _read(args.params, ObjectKind.PARAMS, scheme).params
    rng = _rng(args)
    with operation_metrics("setup", scheme.label) as mark_success:
        if scheme is Scheme.ADAPTIVE:
            pp_a, msk_a = adaptive.setup_a(params, rng)
            pp_bytes = serialize(pp_a, params=params, scheme=scheme)
            msk_bytes = serialize(msk_a, params=params, scheme=scheme)
        else:
            pp, msk = selective.setup(params, rng)
            pp_bytes = serialize(pp, params=params, scheme=scheme)
            msk_bytes = serialize(msk, params=params, scheme=scheme)
        mark_success()
    _write(args.out, pp_bytes)
    _write(args.msk_out or f"{args.out}.msk", msk_bytes)
    return EXIT_OK


def _cmd_extract(args: argparse.Namespace) -> int:
    scheme = Scheme.from_name(args.scheme)
    pp = _read(args.params, ObjectKind.PUBLIC_PARAMS, scheme)
    msk = _read(args.input, ObjectKind.MASTER_KEY, scheme)
    identity = _identity(scheme, pp.params, args.id)
    rng = _rng(args)
    with operation_metrics("extract", scheme.label) as mark_success:
        if scheme is Scheme.ADAPTIVE:
            sk = adaptive.extract_a(pp.obj, msk.obj, identity, rng)  # type: ignore[arg-type]
        else:
            sk = selective.extract(pp.obj, msk.obj, identity, rng)  # type: ignore[arg-type]
        mark_success()
    _write(args.out, serialize(sk, params=pp.params, scheme=scheme))
    return EXIT_OK


def _cmd_encrypt(args: argparse.Namespace) -> int:
    scheme = Scheme.from_name(args.scheme)
    pp = _read(args.params, ObjectKind.PUBLIC_PARAMS, scheme)
    identity = _identity(scheme, pp.params, args.id)
    message = Path(args.message).read_bytes()
    rng = _rng(args)
    records: list[Ciphertext] = []
    with operation_metrics("encrypt", scheme.label) as mark_success:
        for bit in bits_from_bytes(message):
            if scheme is Scheme.ADAPTIVE:
                records.append(adaptive.encrypt_a(pp.obj, identity, bit, rng))  # type: ignore[arg-type]
            else:
                records.append(selective.encrypt(pp.obj, identity, bit, rng))  # type: ignore[arg-type]
        mark_success()
    _write(args.out, serialize(records, params=pp.params, scheme=scheme))
    return EXIT_OK


def _cmd_decrypt(args: argparse.Namespace) -> int:
    scheme = Scheme.from_name(args.scheme)
    sk_env = _read(args.key, ObjectKind.USER_SECRET, scheme)
    ct_env = _read(args.input, ObjectKind.CIPHERTEXT, scheme)
    if ct_env.params != sk_env.params:
        raise CommandError("ciphertext and key were made under different parameters")
    if args.params and _read(args.params, ObjectKind.PUBLIC_PARAMS, scheme).params != sk_env.params:
        raise CommandError("key does not belong to these public parameters")
    sk: UserSecret = sk_env.obj  # type: ignore[assignment]
    with operation_metrics("decrypt", scheme.label) as mark_success:
        bits = [decrypt(sk, ct) for ct in ct_env.obj]  # type: ignore[attr-defined]
        mark_success()
    _write(args.out, bytes_from_bits(bits))
    return EXIT_OK


def _cmd_rekey(args: argparse.Namespace) -> int:
    scheme = Scheme.from_name(args.scheme)
    pp = _read(args.params, ObjectKind.PUBLIC_PARAMS, scheme)
    sk_env = _read(args.key, ObjectKind.USER_SECRET, scheme)
    id_i = _identity(scheme, pp.params, args.id)
    id_j = _identity(scheme, pp.params, args.to_id)
    rng = _rng(args)
    with operation_metrics("rekey", scheme.label) as mark_success:
        if scheme is Scheme.ADAPTIVE:
            rk = adaptive.rekeygen_a(pp.obj, sk_env.obj, id_i, id_j, rng)  # type: ignore[arg-type]
        else:
            rk = selective.rekeygen(pp.obj, sk_env.obj, id_i, id_j, rng)  # type: ignore[arg-type]
        mark_success()
    _write(args.out, serialize(rk, params=pp.params, scheme=scheme))
    return EXIT_OK


def _cmd_reencrypt(args: argparse.Namespace) -> int:
    scheme = Scheme.from_name(args.scheme)
    rk_env = _read(args.key, ObjectKind.REKEY, scheme)
    ct_env = _read(args.input, ObjectKind.CIPHERTEXT, scheme)
    if ct_env.params != rk_env.params:
        raise CommandError("ciphertext and re-key were made under different parameters")
    with operation_metrics("reencrypt", scheme.label) as mark_success:
        records = [reencrypt(rk_env.obj, ct) for ct in ct_env.obj]  # type: ignore[arg-type, attr-defined]
        mark_success()
    _write(args.out, serialize(records, params=ct_env.params, scheme=scheme))
    return EXIT_OK


def _cmd_harness(args: argparse.Namespace) -> int:
    scheme = Scheme.from_name(args.scheme)
    params = _read(args.params, ObjectKind.PARAMS).params
    rng = _rng(args)
    trials = settings.HARNESS_TRIALS if args.trials is None else args.trials
    workers = args.workers or settings.HARNESS_WORKERS
    summary: dict[str, object] = {"scheme": scheme.label, "seed": rng.hex_seed()}
    reports = []
    if args.mode in ("fresh", "all"):
        reports.append(roundtrip_trials(scheme.label, params, trials, rng.fork(1), workers=workers))
    if args.mode in ("reenc", "all"):
        reports.append(reenc_trials(scheme.label, params, trials, rng.fork(2), workers=workers))
    for report in reports:
        summary[report.mode] = report.model_dump() | {
            "failure_rate": report.failure_rate,
            "within_bound": report.within_bound,
        }
    passed = all(report.failures == 0 and report.within_bound for report in reports)
    if args.mode in ("samplers", "all"):
        samplers = sampler_checks(params, rng.fork(3), sizes=SweepSizes())
        summary["samplers"] = samplers.model_dump() | {"passed": samplers.passed}
        passed = passed and samplers.passed
    if args.out and reports:
        write_csv(reports, args.out)
    print(json.dumps(summary, default=str))
    return EXIT_OK if passed else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=settings.APP_NAME, description="Lattice identity-based proxy re-encryption toolkit"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.APP_VERSION}")
    parser.add_argument("--log-level", default=None, help="override IBPRE_LOG_LEVEL")
    parser.add_argument("--metrics", default=settings.METRICS_FILE, help="write Prometheus metrics to FILE")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler: Callable[[argparse.Namespace], int], help_text: str) -> argparse.ArgumentParser:
        cmd = sub.add_parser(name, help=help_text)
        cmd.set_defaults(handler=handler)
        return cmd

    def with_scheme(cmd: argparse.ArgumentParser) -> None:
        cmd.add_argument("--scheme", choices=SCHEMES, default=settings.DEFAULT_SCHEME)

    def with_seed(cmd: argparse.ArgumentParser) -> None:
        cmd.add_argument("--seed", default=None, help="hex seed (falls back to IBPRE_SEED)")

    cmd = command("derive-params", _cmd_derive_params, "search a parameter set and write it")
    with_scheme(cmd)
    cmd.add_argument("--n", type=int, default=settings.DEFAULT_DIMENSION)
    cmd.add_argument(
        "--l", type=int, default=None, help="identity bits (adaptive default: IBPRE_DEFAULT_IDENTITY_BITS)"
    )
    cmd.add_argument("--margin", type=float, default=settings.SAFETY_MARGIN)
    cmd.add_argument("--allow-small", action="store_true", help="skip the n >= 16 floor")
    cmd.add_argument("--out", required=True)

    cmd = command("validate-params", _cmd_validate_params, "print the noise budget of a parameter set")
    cmd.add_argument("--params", required=True)

    cmd = command("setup", _cmd_setup, "generate public parameters and a master key")
    with_scheme(cmd)
    with_seed(cmd)
    cmd.add_argument("--params", required=True)
    cmd.add_argument("--out", required=True)
    cmd.add_argument("--msk-out", default=None)

    cmd = command("extract", _cmd_extract, "derive a user secret key")
    with_scheme(cmd)
    with_seed(cmd)
    cmd.add_argument("--params", required=True)
    cmd.add_argument("--in", dest="input", required=True)
    cmd.add_argument("--id", required=True)
    cmd.add_argument("--out", required=True)

    cmd = command("encrypt", _cmd_encrypt, "encrypt a message file bit by bit")
    with_scheme(cmd)
    with_seed(cmd)
    cmd.add_argument("--params", required=True)
    cmd.add_argument("--id", required=True)
    cmd.add_argument("--message", required=True)
    cmd.add_argument("--out", required=True)

    cmd = command("decrypt", _cmd_decrypt, "decrypt a ciphertext file")
    with_scheme(cmd)
    cmd.add_argument("--params", default=None)
    cmd.add_argument("--key", required=True)
    cmd.add_argument("--in", dest="input", required=True)
    cmd.add_argument("--out", required=True)

    cmd = command("rekey", _cmd_rekey, "derive a re-encryption key")
    with_scheme(cmd)
    with_seed(cmd)
    cmd.add_argument("--params", required=True)
    cmd.add_argument("--key", required=True)
    cmd.add_argument("--id", required=True)
    cmd.add_argument("--to-id", required=True)
    cmd.add_argument("--out", required=True)

    cmd = command("reencrypt", _cmd_reencrypt, "transform a ciphertext with a re-encryption key")
    with_scheme(cmd)
    cmd.add_argument("--key", required=True)
    cmd.add_argument("--in", dest="input", required=True)
    cmd.add_argument("--out", required=True)

    cmd = command("harness", _cmd_harness, "run the statistical harness")
    with_scheme(cmd)
    with_seed(cmd)
    cmd.add_argument("--params", required=True)
    cmd.add_argument("--trials", type=int, default=None)
    cmd.add_argument("--mode", choices=("fresh", "reenc", "samplers", "all"), default="all")
    cmd.add_argument("--workers", type=int, default=None)
    cmd.add_argument("--out", default=None, help="residue histogram CSV")

    return parser


_DECODE_ERRORS = (EnvelopeError, DecodeError)
_INVALID_ERRORS = (
    CommandError,
    ParameterError,
    SchemeError,
    TrapdoorError,
    SamplerError,
    LinearAlgebraError,
    OSError,
)


def _fail(command: str, exc: Exception, code: int) -> int:
    logger.error("command_failed", extra={"command": command, "error": str(exc), "exit": code})
    print(f"error: {exc}", file=sys.stderr)
    return code


def _dispatch(args: argparse.Namespace) -> int:
    try:
        return args.handler(args)
    except _DECODE_ERRORS as exc:
        return _fail(args.command, exc, EXIT_DECODE)
    except _INVALID_ERRORS as exc:
        return _fail(args.command, exc, EXIT_INVALID)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    with run_scope(uuid.uuid4().hex[:12]):
        try:
            return _dispatch(args)
        finally:
            if args.metrics:
                export_textfile(args.metrics)


if __name__ == "__main__":
    raise SystemExit(main())
