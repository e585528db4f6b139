from __future__ import annotations

import os
import sys
from pathlib import Path

import pytest

ROOT_DIR = Path(__file__).resolve().parents[1]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

# Keep the suite deterministic and quiet regardless of the caller's environment.
os.environ.setdefault("IBPRE_LOG_LEVEL", "WARNING")
os.environ.setdefault("IBPRE_LOG_FORMAT", "plain")
os.environ.pop("IBPRE_SEED", None)
os.environ.pop("IBPRE_METRICS_FILE", None)

from gaussian import RngHandle  # noqa: E402  pylint: disable=wrong-import-position
from params import ParamSet, find_modulus  # noqa: E402  pylint: disable=wrong-import-position
from schemes import adaptive, selective  # noqa: E402  pylint: disable=wrong-import-position

TOY_DIMENSION = 4
TOY_IDENTITY_BITS = 3


@pytest.fixture()
def rng() -> RngHandle:
    """A fresh, fixed-seed stream per test."""

    return RngHandle(bytes(32))


@pytest.fixture(scope="session")
def toy_params() -> ParamSet:
    return find_modulus(TOY_DIMENSION, 0)


@pytest.fixture(scope="session")
def toy_params_a() -> ParamSet:
    return find_modulus(TOY_DIMENSION, TOY_IDENTITY_BITS)


@pytest.fixture(scope="session")
def selective_system(toy_params: ParamSet) -> tuple[selective.PublicParams, selective.MasterKey]:
    return selective.setup(toy_params, RngHandle(b"\x01" * 32))


@pytest.fixture(scope="session")
def adaptive_system(toy_params_a: ParamSet) -> tuple[adaptive.PublicParamsA, adaptive.MasterKeyA]:
    return adaptive.setup_a(toy_params_a, RngHandle(b"\x02" * 32))


__all__ = [
    "TOY_DIMENSION",
    "TOY_IDENTITY_BITS",
    "adaptive_system",
    "rng",
    "selective_system",
    "toy_params",
    "toy_params_a",
]
