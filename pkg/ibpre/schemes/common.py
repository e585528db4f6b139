"""Keys, ciphertexts and the operations both schemes share.

Decryption and re-encryption do not depend on how an identity was encoded, so
the selective and adaptive schemes use these routines unchanged.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from gaussian import RngHandle, sample_mat, sample_vec, sample_z, uniform_vec
from params import ParamSet
from zq_linear import (
    IntVector,
    ZqMatrix,
    ZqVector,
    bd,
    centered,
    dot,
    gadget_length,
    is_wide,
    mat_mul_into,
    mat_vec,
    p2,
    vec_mat,
)

logger = logging.getLogger("ibpre.schemes")

_IDENTITY_DOMAIN = b"ibpre/identity/v1"
_IDENTITY_BITS_DOMAIN = b"ibpre/identity-bits/v1"
_DIGIT_SLACK_BYTES = 8


class SchemeError(ValueError):
    """Raised when a scheme operation receives unusable input."""


class IdentityError(SchemeError):
    """Raised for malformed identities (zero, wrong length, wrong alphabet)."""


class KeyMismatchError(SchemeError):
    """Raised when a key does not belong to the identity or ciphertext it is used with."""


@dataclass(frozen=True, slots=True)
class IdentityBits:
    """Identity of the adaptive scheme: a string over {-1, +1}."""

    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.bits:
            raise IdentityError("identity must have at least one bit")
        if any(bit not in (-1, 1) for bit in self.bits):
            raise IdentityError("identity bits must be -1 or +1")

    @property
    def length(self) -> int:
        return len(self.bits)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.int64)


Identity = Union[ZqVector, IdentityBits]


@dataclass(frozen=True, eq=False, slots=True)
class UserSecret:
    identity: Identity
    x: IntVector


@dataclass(frozen=True, eq=False, slots=True)
class Ciphertext:
    c1: ZqVector
    c2: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "c2", int(self.c2) % self.c1.q)

    @property
    def q(self) -> int:
        return self.c1.q

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Ciphertext):
            return NotImplemented
        return self.c2 == other.c2 and self.c1 == other.c1

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False, slots=True)
class ReKey:
    mat: ZqMatrix
    from_id: Identity
    to_id: Identity


@dataclass(frozen=True, eq=False, slots=True)
class EncryptionRandomness:
    """Explicit encryption coins. Only tests pass this; normal callers draw from the rng."""

    s: ZqVector
    e0: IntVector
    e1: IntVector
    e: int


def same_identity(left: Identity, right: Identity) -> bool:
    if isinstance(left, IdentityBits) and isinstance(right, IdentityBits):
        return left == right
    if isinstance(left, ZqVector) and isinstance(right, ZqVector):
        return left == right
    return False


def hash_identity(label: str | bytes, n: int, q: int) -> ZqVector:
    """Map a label to a non-zero vector of n base-q digits.

    A SHA-256 digest is expanded with SHAKE-256; each digit takes extra bytes
    so the reduction mod q is close to uniform. A counter is appended until the
    result is non-zero.
    """

    data = label.encode("utf-8") if isinstance(label, str) else bytes(label)
    width = (q.bit_length() + 7) // 8 + _DIGIT_SLACK_BYTES
    counter = 0
    while True:
        suffix = counter.to_bytes(4, "big") if counter else b""
        digest = hashlib.sha256(_IDENTITY_DOMAIN + data + suffix).digest()
        stream = hashlib.shake_256(digest).digest(n * width)
        digits = [int.from_bytes(stream[i * width : (i + 1) * width], "big") % q for i in range(n)]
        if any(digits):
            return ZqVector(np.asarray(digits, dtype=object), q)
        counter += 1


def hash_identity_bits(label: str | bytes, l: int) -> IdentityBits:
    if l < 1:
        raise IdentityError(f"identity length must be positive, got {l}")
    data = label.encode("utf-8") if isinstance(label, str) else bytes(label)
    stream = hashlib.shake_256(_IDENTITY_BITS_DOMAIN + data).digest((l + 7) // 8)
    bits = tuple(1 if (stream[i // 8] >> (i % 8)) & 1 else -1 for i in range(l))
    return IdentityBits(bits)


def bits_from_bytes(data: bytes) -> list[int]:
    """Message bits, most significant bit of each byte first."""

    return [int(bit) for bit in np.unpackbits(np.frombuffer(data, dtype=np.uint8))]


def bytes_from_bits(bits: Sequence[int]) -> bytes:
    if len(bits) % 8:
        raise SchemeError(f"bit count {len(bits)} is not a whole number of bytes")
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def encrypt_under(
    a_id: ZqMatrix,
    u: ZqVector,
    params: ParamSet,
    bit: int,
    rng: RngHandle,
    *,
    randomness: EncryptionRandomness | None = None,
) -> Ciphertext:
    """Dual-Regev encryption of one bit under ``(A_id, u)``.

    The noise on the trapdoor half of ``c1`` is drawn with width
    ``sqrt(|e0|^2 + m̄ (alpha q)^2) · r`` so that it masks ``R``.
    """

    if bit not in (0, 1):
        raise SchemeError(f"message must be a bit, got {bit!r}")
    q = params.q
    if randomness is None:
        width = params.noise_width
        s = uniform_vec(params.n, q, rng)
        e0 = sample_vec(params.m_bar, width, rng)
        spread = math.sqrt(float(np.sum(e0.entries.astype(np.float64) ** 2)) + params.m_bar * width * width)
        e1 = sample_vec(params.nk, spread * params.r, rng)
        e = sample_z(0.0, width, rng)
    else:
        s, e0, e1, e = randomness.s, randomness.e0, randomness.e1, randomness.e
    if e0.dim + e1.dim != a_id.cols or s.dim != a_id.rows:
        raise SchemeError("encryption randomness does not match the matrix shape")

    noise = IntVector(np.concatenate([e0.entries, e1.entries]))
    c1 = vec_mat(s, a_id) + noise.mod(q)
    c2 = (dot(u, s, q) + int(e) + bit * (q // 2)) % q
    return Ciphertext(c1=c1, c2=c2)


def _phase(sk: UserSecret, ct: Ciphertext) -> int:
    if sk.x.dim != ct.c1.dim:
        raise KeyMismatchError(f"secret of dim {sk.x.dim} cannot open a ciphertext of dim {ct.c1.dim}")
    return (ct.c2 - dot(sk.x, ct.c1, ct.q)) % ct.q


def decrypt(sk: UserSecret, ct: Ciphertext) -> int:
    """0 when ``c2 - xᵀc1`` is closer to 0 than to floor(q/2), 1 otherwise (ties give 1)."""

    q = ct.q
    phase = _phase(sk, ct)
    to_zero = min(phase, q - phase)
    to_half = abs(phase - q // 2)
    return 0 if to_zero < to_half else 1


def decryption_residue(sk: UserSecret, ct: Ciphertext, bit: int) -> int:
    """Signed noise left after removing the encoded bit: centered(c2 - xᵀc1 - bit·floor(q/2))."""

    q = ct.q
    return int(centered(np.asarray([(_phase(sk, ct) - bit * (q // 2)) % q], dtype=object), q)[0])


def rekey_under(
    a_j: ZqMatrix,
    u_j: ZqVector,
    sk_i: UserSecret,
    params: ParamSet,
    rng: RngHandle,
    *,
    to_id: Identity,
) -> ReKey:
    """Re-encryption matrix ``[[r1·A_j, r1·u_j + r2 - P2(x_i)], [0, 1]]``."""

    q = params.q
    m = a_j.cols
    mk = m * gadget_length(q)
    if sk_i.x.dim != m:
        raise KeyMismatchError(f"secret of dim {sk_i.x.dim} does not match matrices of width {m}")
    r1 = ZqMatrix(sample_mat(mk, params.n, params.r, rng), q)
    r2 = sample_vec(mk, params.r, rng)

    body = np.zeros((mk + 1, m + 1), dtype=object if is_wide(q) else np.int64)
    mat_mul_into(r1, a_j, body[:mk, :m])
    top_right = mat_vec(r1, u_j) + r2.mod(q) - p2(sk_i.x, q)
    body[:mk, m] = top_right.entries
    body[mk, m] = 1
    return ReKey(mat=ZqMatrix.adopt(body, q), from_id=sk_i.identity, to_id=to_id)


def reencrypt(rk: ReKey, ct: Ciphertext) -> Ciphertext:
    """``[bd(c1)ᵀ | c2] · rk`` split back into ``(c1', c2')``.

    The output has exactly the shape of a fresh ciphertext. Feeding it through
    a second re-encryption is accepted but falls outside the noise budget.
    """

    q = ct.q
    expected = ct.c1.dim * gadget_length(q) + 1
    if rk.mat.q != q or rk.mat.rows != expected:
        raise KeyMismatchError(f"re-key has {rk.mat.rows} rows, ciphertext needs {expected}")
    # Only the bit rows go through the product; c2 just scales the last row.
    top = vec_mat(bd(ct.c1), ZqMatrix.adopt(rk.mat.entries[:-1], q))
    out = (top.entries.astype(object) + ct.c2 * rk.mat.entries[-1].astype(object)) % q
    return Ciphertext(c1=ZqVector(out[:-1], q), c2=int(out[-1]))


__all__ = [
    "Ciphertext",
    "EncryptionRandomness",
    "Identity",
    "IdentityBits",
    "IdentityError",
    "KeyMismatchError",
    "ReKey",
    "SchemeError",
    "UserSecret",
    "bits_from_bytes",
    "bytes_from_bits",
    "decrypt",
    "decryption_residue",
    "encrypt_under",
    "hash_identity",
    "hash_identity_bits",
    "reencrypt",
    "rekey_under",
    "same_identity",
]
