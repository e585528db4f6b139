from __future__ import annotations

import json
from pathlib import Path

import pytest

import cli
from services.harness import TrialReport
from storage.envelope import MAGIC, ObjectKind, deserialize

SEED = "00" * 31 + "2a"


def _run(*argv: str) -> int:
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory) -> Path:
    """Parameters, a selective system and two user keys, built through the CLI."""

    root = tmp_path_factory.mktemp("cli")
    params = str(root / "params.bin")
    pp = str(root / "pp.bin")
    assert _run("derive-params", "--n", "4", "--l", "0", "--allow-small", "--out", params) == cli.EXIT_OK
    assert _run("setup", "--params", params, "--out", pp, "--seed", SEED) == cli.EXIT_OK
    for name in ("alice", "bob"):
        code = _run(
            "extract", "--params", pp, "--in", pp + ".msk", "--id", name, "--out", str(root / f"{name}.key"),
            "--seed", SEED,
        )
        assert code == cli.EXIT_OK
    return root


def test_derive_params_prints_the_set(tmp_path, capsys):
    out = tmp_path / "params.bin"

    assert _run("derive-params", "--n", "4", "--allow-small", "--out", str(out)) == cli.EXIT_OK

    printed = json.loads(capsys.readouterr().out)
    envelope = deserialize(out.read_bytes(), expect_kind=ObjectKind.PARAMS)
    assert printed["q"] == envelope.params.q
    assert printed["n"] == 4


def test_derive_params_enforces_production_floor(tmp_path):
    assert _run("derive-params", "--n", "4", "--out", str(tmp_path / "p.bin")) == cli.EXIT_INVALID


def test_validate_params_reports_budget(workspace, capsys):
    assert _run("validate-params", "--params", str(workspace / "params.bin")) == cli.EXIT_OK

    report = json.loads(capsys.readouterr().out)
    assert report["valid"] is True
    assert report["ratio_reenc"] < 1.0


def test_setup_writes_public_and_master_files(workspace):
    pp = deserialize((workspace / "pp.bin").read_bytes())
    msk = deserialize((workspace / "pp.bin.msk").read_bytes())

    assert pp.kind is ObjectKind.PUBLIC_PARAMS
    assert msk.kind is ObjectKind.MASTER_KEY
    assert pp.params == msk.params


def test_message_round_trip_through_reencryption(workspace):
    pp = str(workspace / "pp.bin")
    message = workspace / "message.txt"
    message.write_bytes(b"hi")
    ct = str(workspace / "message.ct")
    rk = str(workspace / "alice-bob.rk")
    ct_bob = str(workspace / "message.bob.ct")
    plain_alice = workspace / "alice.out"
    plain_bob = workspace / "bob.out"

    assert _run("encrypt", "--params", pp, "--id", "alice", "--message", str(message), "--out", ct) == cli.EXIT_OK
    assert _run(
        "decrypt", "--params", pp, "--key", str(workspace / "alice.key"), "--in", ct, "--out", str(plain_alice)
    ) == cli.EXIT_OK
    assert plain_alice.read_bytes() == b"hi"

    assert _run(
        "rekey", "--params", pp, "--key", str(workspace / "alice.key"), "--id", "alice", "--to-id", "bob",
        "--out", rk,
    ) == cli.EXIT_OK
    assert _run("reencrypt", "--key", rk, "--in", ct, "--out", ct_bob) == cli.EXIT_OK
    assert _run("decrypt", "--key", str(workspace / "bob.key"), "--in", ct_bob, "--out", str(plain_bob)) == cli.EXIT_OK
    assert plain_bob.read_bytes() == b"hi"


def test_rekey_with_someone_elses_key_is_invalid(workspace):
    code = _run(
        "rekey", "--params", str(workspace / "pp.bin"), "--key", str(workspace / "bob.key"),
        "--id", "alice", "--to-id", "bob", "--out", str(workspace / "bad.rk"),
    )

    assert code == cli.EXIT_INVALID


def test_garbage_input_is_a_decode_failure(workspace):
    garbage = workspace / "garbage.ct"
    garbage.write_bytes(b"definitely not an envelope")

    code = _run(
        "decrypt", "--key", str(workspace / "alice.key"), "--in", str(garbage), "--out", str(workspace / "x.out")
    )

    assert code == cli.EXIT_DECODE


def test_wrong_scheme_tag_is_a_decode_failure(workspace):
    code = _run(
        "extract", "--scheme", "adaptive", "--params", str(workspace / "pp.bin"), "--in",
        str(workspace / "pp.bin.msk"), "--id", "alice", "--out", str(workspace / "y.key"),
    )

    assert code == cli.EXIT_DECODE


def test_missing_file_is_invalid(workspace):
    code = _run("validate-params", "--params", str(workspace / "missing.bin"))

    assert code == cli.EXIT_INVALID


def test_harness_writes_histogram_and_summary(workspace, tmp_path, capsys):
    csv_path = tmp_path / "residues.csv"

    code = _run(
        "harness", "--params", str(workspace / "params.bin"), "--mode", "fresh", "--trials", "3", "--seed", SEED,
        "--out", str(csv_path),
    )

    summary = json.loads(capsys.readouterr().out)
    assert code == cli.EXIT_OK
    assert summary["fresh"]["trials"] == 3
    assert summary["fresh"]["failures"] == 0
    assert summary["seed"] == SEED
    assert csv_path.read_text(encoding="utf-8").startswith("scheme,mode,bucket")


def test_metrics_are_exported(workspace, tmp_path):
    metrics_file = tmp_path / "metrics.prom"

    code = _run("--metrics", str(metrics_file), "validate-params", "--params", str(workspace / "params.bin"))

    assert code == cli.EXIT_OK
    assert "ibpre_operations_total" in metrics_file.read_text(encoding="utf-8")


def test_harness_fails_when_residue_exceeds_analytic_bound(workspace, monkeypatch, capsys):
    def oversized(scheme, params, trials, rng, *, workers=1):
        return TrialReport(
            scheme=scheme, mode="fresh", trials=trials, failures=0, max_abs_error=500,
            budget=params.q / 4, analytic_bound=100.0, histogram=(0,) * 9 + (trials,),
        )

    monkeypatch.setattr(cli, "roundtrip_trials", oversized)

    code = _run("harness", "--params", str(workspace / "params.bin"), "--mode", "fresh", "--trials", "2")

    summary = json.loads(capsys.readouterr().out)
    assert code == cli.EXIT_INVALID
    assert summary["fresh"]["failures"] == 0
    assert summary["fresh"]["within_bound"] is False


def test_harness_summary_reports_bound(workspace, capsys):
    code = _run(
        "harness", "--params", str(workspace / "params.bin"), "--mode", "fresh", "--trials", "2", "--seed", SEED
    )

    summary = json.loads(capsys.readouterr().out)
    assert code == cli.EXIT_OK
    assert summary["fresh"]["within_bound"] is True


def test_reencrypted_file_looks_like_a_fresh_one(workspace, tmp_path):
    pp = str(workspace / "pp.bin")
    message = tmp_path / "note.txt"
    message.write_bytes(b"proxy")
    ct = tmp_path / "note.ct"
    rk = str(tmp_path / "alice-bob.rk")
    ct_bob = tmp_path / "note.bob.ct"

    assert _run("encrypt", "--params", pp, "--id", "alice", "--message", str(message), "--out", str(ct)) == cli.EXIT_OK
    assert _run(
        "rekey", "--params", pp, "--key", str(workspace / "alice.key"), "--id", "alice", "--to-id", "bob",
        "--out", rk,
    ) == cli.EXIT_OK
    assert _run("reencrypt", "--key", rk, "--in", str(ct), "--out", str(ct_bob)) == cli.EXIT_OK

    original, forwarded = ct.read_bytes(), ct_bob.read_bytes()
    tag = len(MAGIC) + 1
    assert original[tag] == forwarded[tag] == ObjectKind.CIPHERTEXT
    assert len(original) == len(forwarded)
    assert original[: tag + 1] == forwarded[: tag + 1]


def test_seeded_encryption_is_byte_identical(workspace, tmp_path, monkeypatch):
    pp = str(workspace / "pp.bin")
    message = tmp_path / "note.txt"
    message.write_bytes(b"seed")

    def encrypt(name: str, *seed: str) -> bytes:
        out = tmp_path / name
        code = _run("encrypt", "--params", pp, "--id", "alice", "--message", str(message), "--out", str(out), *seed)
        assert code == cli.EXIT_OK
        return out.read_bytes()

    first = encrypt("a.ct", "--seed", SEED)
    assert encrypt("b.ct", "--seed", SEED) == first

    monkeypatch.setattr(cli.settings, "SEED", "00ff")
    from_env = encrypt("c.ct")
    assert encrypt("d.ct") == from_env
    assert from_env != first


def test_adaptive_commands_round_trip(tmp_path):
    params = str(tmp_path / "params.bin")
    pp = str(tmp_path / "pp.bin")
    message = tmp_path / "message.txt"
    message.write_bytes(b"ok")
    adaptive = ("--scheme", "adaptive")

    assert _run("derive-params", *adaptive, "--n", "4", "--l", "3", "--allow-small", "--out", params) == cli.EXIT_OK
    assert _run("setup", *adaptive, "--params", params, "--out", pp, "--seed", SEED) == cli.EXIT_OK
    for name in ("alice", "bob"):
        code = _run(
            "extract", *adaptive, "--params", pp, "--in", pp + ".msk", "--id", name,
            "--out", str(tmp_path / f"{name}.key"), "--seed", SEED,
        )
        assert code == cli.EXIT_OK
    ct = str(tmp_path / "message.ct")
    rk = str(tmp_path / "alice-bob.rk")
    ct_bob = str(tmp_path / "message.bob.ct")
    plain = tmp_path / "bob.out"

    assert _run("encrypt", *adaptive, "--params", pp, "--id", "alice", "--message", str(message), "--out", ct) == 0
    assert _run(
        "rekey", *adaptive, "--params", pp, "--key", str(tmp_path / "alice.key"), "--id", "alice",
        "--to-id", "bob", "--out", rk,
    ) == cli.EXIT_OK
    assert _run("reencrypt", *adaptive, "--key", rk, "--in", ct, "--out", ct_bob) == cli.EXIT_OK
    assert _run("decrypt", *adaptive, "--key", str(tmp_path / "bob.key"), "--in", ct_bob, "--out", str(plain)) == 0
    assert plain.read_bytes() == b"ok"
    assert deserialize((tmp_path / "alice-bob.rk").read_bytes()).kind is ObjectKind.REKEY
