"""Adaptive-identity IB-PRE: identities are ±1 strings combined with l trapdoored blocks.

``A_id = [Ā | G + Σ b_j·A_j]`` with ``A_j = -Ā·R_j``, so ``Σ b_j·R_j`` is a
trapdoor for ``A_id`` with tag I, and ``u_id = u_0 + Σ b_j·u_j``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from gaussian import RngHandle, uniform_mat, uniform_vec
from params import ParamSet, ParameterError
from schemes.common import (
    Ciphertext,
    EncryptionRandomness,
    IdentityBits,
    IdentityError,
    KeyMismatchError,
    ReKey,
    UserSecret,
    decrypt,
    encrypt_under,
    reencrypt,
    rekey_under,
    same_identity,
)
from trapdoor import GTrapdoor, gen_trapdoor, sample_pre
from zq_linear import IntMatrix, ZqMatrix, ZqVector, gadget_matrix, hstack, mat_vec

logger = logging.getLogger("ibpre.schemes.adaptive")

decrypt_a = decrypt
reencrypt_a = reencrypt


@dataclass(frozen=True, eq=False, slots=True)
class PublicParamsA:
    params: ParamSet
    a_bar: ZqMatrix
    a_blocks: tuple[ZqMatrix, ...]
    u_list: tuple[ZqVector, ...]


@dataclass(frozen=True, eq=False, slots=True)
class MasterKeyA:
    r_list: tuple[IntMatrix, ...]


@dataclass(frozen=True, eq=False, slots=True)
class IdentityData:
    a_id: ZqMatrix
    u_id: ZqVector
    trapdoor: GTrapdoor | None = None


def setup_a(params: ParamSet, rng: RngHandle) -> tuple[PublicParamsA, MasterKeyA]:
    if params.l < 1:
        raise ParameterError("the adaptive scheme needs identity length l >= 1")
    a_bar = uniform_mat(params.n, params.m_bar, params.q, rng)
    zero_tag = ZqMatrix.zeros(params.n, params.n, params.q)
    blocks: list[ZqMatrix] = []
    trapdoors: list[IntMatrix] = []
    for _ in range(params.l):
        pair = gen_trapdoor(params, a_bar, zero_tag, rng)
        blocks.append(pair.a_mat.column_block(params.m_bar, params.m))
        trapdoors.append(pair.trapdoor.r_mat)
    u_list = tuple(uniform_vec(params.n, params.q, rng) for _ in range(params.l + 1))
    logger.info(
        "setup_complete",
        extra={"scheme": "adaptive", "n": params.n, "q": params.q, "m": params.m, "l": params.l},
    )
    return (
        PublicParamsA(params=params, a_bar=a_bar, a_blocks=tuple(blocks), u_list=u_list),
        MasterKeyA(r_list=tuple(trapdoors)),
    )


def _check_identity(pp: PublicParamsA, identity: object) -> IdentityBits:
    if not isinstance(identity, IdentityBits):
        raise IdentityError("adaptive identities are ±1 bit strings")
    if identity.length != pp.params.l:
        raise IdentityError(f"identity must have {pp.params.l} bits, got {identity.length}")
    return identity


def derive_identity(pp: PublicParamsA, identity: IdentityBits, msk: MasterKeyA | None = None) -> IdentityData:
    """``(A_id, u_id)`` and, when the master key is given, the summed trapdoor."""

    bits = _check_identity(pp, identity).bits
    params = pp.params
    right = gadget_matrix(params.n, params.k, params.q)
    u_id = pp.u_list[0]
    for bit, block, u_j in zip(bits, pp.a_blocks, pp.u_list[1:]):
        right = right + block if bit == 1 else right - block
        u_id = u_id + u_j if bit == 1 else u_id - u_j
    a_id = hstack([pp.a_bar, right])

    trapdoor = None
    if msk is not None:
        if len(msk.r_list) != len(bits):
            raise KeyMismatchError("master key does not match the identity length")
        r_sum = np.zeros_like(msk.r_list[0], dtype=np.int64)
        for bit, r_j in zip(bits, msk.r_list):
            r_sum = r_sum + bit * r_j.astype(np.int64)
        trapdoor = GTrapdoor(
            r_mat=r_sum,
            tag=ZqMatrix.identity(params.n, params.q),
            r_width=math.sqrt(params.l) * params.r,
        )
    return IdentityData(a_id=a_id, u_id=u_id, trapdoor=trapdoor)


def extract_a(pp: PublicParamsA, msk: MasterKeyA, identity: IdentityBits, rng: RngHandle) -> UserSecret:
    data = derive_identity(pp, identity, msk)
    assert data.trapdoor is not None
    x = sample_pre(data.trapdoor, data.a_id, data.u_id, pp.params.s, rng)
    logger.debug("secret_extracted", extra={"scheme": "adaptive", "norm": round(x.norm(), 2)})
    return UserSecret(identity=identity, x=x)


def encrypt_a(
    pp: PublicParamsA,
    identity: IdentityBits,
    bit: int,
    rng: RngHandle,
    *,
    randomness: EncryptionRandomness | None = None,
) -> Ciphertext:
    data = derive_identity(pp, identity)
    return encrypt_under(data.a_id, data.u_id, pp.params, bit, rng, randomness=randomness)


def rekeygen_a(
    pp: PublicParamsA,
    sk_i: UserSecret,
    id_i: IdentityBits,
    id_j: IdentityBits,
    rng: RngHandle,
) -> ReKey:
    if not same_identity(sk_i.identity, id_i):
        raise KeyMismatchError("secret key belongs to a different identity")
    source = derive_identity(pp, id_i)
    if mat_vec(source.a_id, sk_i.x) != source.u_id:
        raise KeyMismatchError("secret key does not satisfy A_id · x = u_id")
    target = derive_identity(pp, id_j)
    return rekey_under(target.a_id, target.u_id, sk_i, pp.params, rng, to_id=id_j)


def rekeygen_pair_a(
    pp: PublicParamsA, sk_i: UserSecret, sk_j: UserSecret, rng: RngHandle
) -> tuple[ReKey, ReKey]:
    """Bidirectional delegation as two unidirectional keys (i→j, j→i)."""

    forward = rekeygen_a(pp, sk_i, sk_i.identity, sk_j.identity, rng)  # type: ignore[arg-type]
    backward = rekeygen_a(pp, sk_j, sk_j.identity, sk_i.identity, rng)  # type: ignore[arg-type]
    return forward, backward


__all__ = [
    "IdentityData",
    "MasterKeyA",
    "PublicParamsA",
    "decrypt_a",
    "derive_identity",
    "encrypt_a",
    "extract_a",
    "reencrypt_a",
    "rekeygen_a",
    "rekeygen_pair_a",
    "setup_a",
]
