"""Selective-identity IB-PRE: identities are encoded with the full-rank-difference map.

The master trapdoor is generated with tag 0, so the public matrix is
``A = [Ā | -Ā·R]``; an identity shifts its right half by ``H(id)·G``, and R
then becomes a trapdoor for ``A_id`` with tag ``H(id)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from gaussian import RngHandle, uniform_mat, uniform_vec
from params import ParamSet
from schemes.common import (
    Ciphertext,
    EncryptionRandomness,
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
from zq_linear import IntMatrix, ZqMatrix, ZqVector, frd_encode, gadget_matrix, hstack, mat_mul, mat_vec

logger = logging.getLogger("ibpre.schemes.selective")


@dataclass(frozen=True, eq=False, slots=True)
class PublicParams:
    params: ParamSet
    a_mat: ZqMatrix
    u: ZqVector


@dataclass(frozen=True, eq=False, slots=True)
class MasterKey:
    r_mat: IntMatrix


def setup(params: ParamSet, rng: RngHandle) -> tuple[PublicParams, MasterKey]:
    a_bar = uniform_mat(params.n, params.m_bar, params.q, rng)
    pair = gen_trapdoor(params, a_bar, ZqMatrix.zeros(params.n, params.n, params.q), rng)
    u = uniform_vec(params.n, params.q, rng)
    logger.info("setup_complete", extra={"scheme": "selective", "n": params.n, "q": params.q, "m": params.m})
    return PublicParams(params=params, a_mat=pair.a_mat, u=u), MasterKey(r_mat=pair.trapdoor.r_mat)


def _check_identity(pp: PublicParams, identity: object) -> ZqVector:
    if not isinstance(identity, ZqVector):
        raise IdentityError("selective identities are vectors over Z_q")
    if identity.q != pp.params.q or identity.dim != pp.params.n:
        raise IdentityError(f"identity must have {pp.params.n} digits mod {pp.params.q}")
    if identity.is_zero():
        raise IdentityError("the zero identity is reserved")
    return identity


def identity_tag(pp: PublicParams, identity: ZqVector) -> ZqMatrix:
    return frd_encode(_check_identity(pp, identity), pp.params.frd_poly)


def identity_matrix(pp: PublicParams, identity: ZqVector) -> ZqMatrix:
    """A_id = [Ā | -Ā·R + H(id)·G]."""

    params = pp.params
    shift = mat_mul(identity_tag(pp, identity), gadget_matrix(params.n, params.k, params.q))
    right = pp.a_mat.column_block(params.m_bar, params.m) + shift
    return hstack([pp.a_mat.column_block(0, params.m_bar), right])


def extract(pp: PublicParams, msk: MasterKey, identity: ZqVector, rng: RngHandle) -> UserSecret:
    params = pp.params
    tag = identity_tag(pp, identity)
    td = GTrapdoor(r_mat=msk.r_mat, tag=tag, r_width=params.r)
    x = sample_pre(td, identity_matrix(pp, identity), pp.u, params.s, rng)
    logger.debug("secret_extracted", extra={"scheme": "selective", "norm": round(x.norm(), 2)})
    return UserSecret(identity=identity, x=x)


def encrypt(
    pp: PublicParams,
    identity: ZqVector,
    bit: int,
    rng: RngHandle,
    *,
    randomness: EncryptionRandomness | None = None,
) -> Ciphertext:
    return encrypt_under(identity_matrix(pp, identity), pp.u, pp.params, bit, rng, randomness=randomness)


def _check_secret(pp: PublicParams, sk: UserSecret, identity: ZqVector) -> None:
    if not same_identity(sk.identity, identity):
        raise KeyMismatchError("secret key belongs to a different identity")
    if mat_vec(identity_matrix(pp, identity), sk.x) != pp.u:
        raise KeyMismatchError("secret key does not satisfy A_id · x = u")


def rekeygen(pp: PublicParams, sk_i: UserSecret, id_i: ZqVector, id_j: ZqVector, rng: RngHandle) -> ReKey:
    """Re-encryption key from ``id_i`` to ``id_j``; needs only the delegator's secret."""

    _check_secret(pp, sk_i, id_i)
    rk = rekey_under(identity_matrix(pp, id_j), pp.u, sk_i, pp.params, rng, to_id=id_j)
    logger.debug("rekey_generated", extra={"scheme": "selective", "rows": rk.mat.rows, "cols": rk.mat.cols})
    return rk


def rekeygen_pair(pp: PublicParams, sk_i: UserSecret, sk_j: UserSecret, rng: RngHandle) -> tuple[ReKey, ReKey]:
    """Bidirectional delegation as two unidirectional keys (i→j, j→i)."""

    forward = rekeygen(pp, sk_i, sk_i.identity, sk_j.identity, rng)  # type: ignore[arg-type]
    backward = rekeygen(pp, sk_j, sk_j.identity, sk_i.identity, rng)  # type: ignore[arg-type]
    return forward, backward


__all__ = [
    "MasterKey",
    "PublicParams",
    "decrypt",
    "encrypt",
    "extract",
    "identity_matrix",
    "identity_tag",
    "reencrypt",
    "rekeygen",
    "rekeygen_pair",
    "setup",
]
