"""Binary file envelope for parameters, keys and ciphertexts.

Layout: ``b"IBPRE1"``, one scheme byte, one object-kind byte, then the
parameter header (n, q, k, m̄, m, l, len(frd_poly), frd_poly...) and the
object body. Every integer is an unsigned 8-byte little-endian word; signed
values are stored two's complement. Vectors are prefixed by their length,
matrices by row and column counts, entries row-major.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence, Union

import numpy as np

from params import ParameterError, ParamSet, from_header
from schemes.adaptive import MasterKeyA, PublicParamsA
from schemes.common import Ciphertext, Identity, IdentityBits, IdentityError, ReKey, UserSecret
from schemes.selective import MasterKey, PublicParams
from zq_linear import IntVector, ZqMatrix, ZqVector, is_wide

logger = logging.getLogger("ibpre.storage")

MAGIC = b"IBPRE1"
_WORD = struct.Struct("<Q")
_MASK = (1 << 64) - 1


class EnvelopeError(ValueError):
    """Raised when bytes are not a well-formed envelope of the expected kind."""


class Scheme(IntEnum):
    SELECTIVE = 0
    ADAPTIVE = 1

    @classmethod
    def from_name(cls, name: str) -> "Scheme":
        try:
            return cls[name.strip().upper()]
        except KeyError as exc:
            raise EnvelopeError(f"unknown scheme {name!r}") from exc

    @property
    def label(self) -> str:
        return self.name.lower()


class ObjectKind(IntEnum):
    PARAMS = 0
    PUBLIC_PARAMS = 1
    MASTER_KEY = 2
    USER_SECRET = 3
    REKEY = 4
    CIPHERTEXT = 5


Storable = Union[
    ParamSet,
    PublicParams,
    PublicParamsA,
    MasterKey,
    MasterKeyA,
    UserSecret,
    ReKey,
    Ciphertext,
    Sequence[Ciphertext],
]


@dataclass(frozen=True, eq=False, slots=True)
class Envelope:
    scheme: Scheme
    kind: ObjectKind
    params: ParamSet
    obj: object


class _Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def word(self, value: int) -> None:
        self._parts.append(_WORD.pack(int(value) & _MASK))

    def _entries(self, values: np.ndarray) -> None:
        flat = values.reshape(-1)
        if flat.dtype == object:
            words = np.asarray([int(v) & _MASK for v in flat], dtype="<u8")
        else:
            words = flat.astype("<i8", copy=False).view("<u8")
        self._parts.append(words.tobytes())

    def vector(self, values: np.ndarray) -> None:
        self.word(values.shape[0])
        self._entries(values)

    def matrix(self, values: np.ndarray) -> None:
        self.word(values.shape[0])
        self.word(values.shape[1])
        self._entries(values)

    def raw(self, payload: bytes) -> None:
        self._parts.append(payload)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self._data = memoryview(data)
        self._offset = 0

    def take(self, size: int) -> memoryview:
        end = self._offset + size
        if size < 0 or end > len(self._data):
            raise EnvelopeError("envelope is truncated")
        chunk = self._data[self._offset : end]
        self._offset = end
        return chunk

    def remaining(self) -> int:
        return len(self._data) - self._offset

    def word(self) -> int:
        return int(_WORD.unpack(self.take(_WORD.size))[0])

    def _words(self, count: int) -> np.ndarray:
        if count > self.remaining() // 8:
            raise EnvelopeError("envelope is truncated")
        return np.frombuffer(self.take(8 * count), dtype="<u8")

    def _residues(self, words: np.ndarray, q: int) -> np.ndarray:
        if words.size and int(words.max()) >= q:
            raise EnvelopeError("entry is not reduced mod q")
        if is_wide(q):
            return np.asarray([int(w) for w in words], dtype=object)
        return words.astype(np.int64)

    def zq_vector(self, q: int) -> ZqVector:
        count = self.word()
        return ZqVector(self._residues(self._words(count), q), q)

    def int_vector(self) -> IntVector:
        count = self.word()
        return IntVector(self._words(count).view("<i8").astype(np.int64))

    def zq_matrix(self, q: int) -> ZqMatrix:
        rows, cols = self.word(), self.word()
        return ZqMatrix.adopt(self._residues(self._words(rows * cols), q).reshape(rows, cols), q)

    def int_matrix(self) -> np.ndarray:
        rows, cols = self.word(), self.word()
        return self._words(rows * cols).view("<i8").astype(np.int64).reshape(rows, cols)

    def finish(self) -> None:
        if self.remaining():
            raise EnvelopeError(f"{self.remaining()} trailing bytes after envelope body")


def _kind_of(obj: object) -> ObjectKind:
    if isinstance(obj, ParamSet):
        return ObjectKind.PARAMS
    if isinstance(obj, (PublicParams, PublicParamsA)):
        return ObjectKind.PUBLIC_PARAMS
    if isinstance(obj, (MasterKey, MasterKeyA)):
        return ObjectKind.MASTER_KEY
    if isinstance(obj, UserSecret):
        return ObjectKind.USER_SECRET
    if isinstance(obj, ReKey):
        return ObjectKind.REKEY
    if isinstance(obj, Ciphertext) or (
        isinstance(obj, (list, tuple)) and all(isinstance(item, Ciphertext) for item in obj)
    ):
        return ObjectKind.CIPHERTEXT
    raise EnvelopeError(f"cannot store objects of type {type(obj).__name__}")


def _write_identity(writer: _Writer, identity: Identity, scheme: Scheme) -> None:
    if scheme is Scheme.SELECTIVE:
        if not isinstance(identity, ZqVector):
            raise EnvelopeError("selective identities are Z_q vectors")
        writer.vector(identity.entries)
    else:
        if not isinstance(identity, IdentityBits):
            raise EnvelopeError("adaptive identities are ±1 strings")
        writer.vector(identity.as_array())


def _read_identity(reader: _Reader, scheme: Scheme, params: ParamSet) -> Identity:
    if scheme is Scheme.SELECTIVE:
        vector = reader.zq_vector(params.q)
        _check_shape("identity", (vector.dim,), (params.n,))
        return vector
    try:
        bits = IdentityBits(tuple(int(v) for v in reader.int_vector().entries))
    except IdentityError as exc:
        raise EnvelopeError(str(exc)) from exc
    _check_shape("identity", (bits.length,), (params.l,))
    return bits


def _write_header(writer: _Writer, params: ParamSet) -> None:
    for value in (params.n, params.q, params.k, params.m_bar, params.m, params.l):
        writer.word(value)
    writer.word(len(params.frd_poly))
    for coeff in params.frd_poly:
        writer.word(coeff)


def _check_shape(what: str, actual: tuple[int, ...], expected: tuple[int, ...]) -> None:
    if actual != expected:
        raise EnvelopeError(f"{what} has shape {actual}, header says {expected}")


def _read_header(reader: _Reader) -> ParamSet:
    n, q, k, m_bar, m, l = (reader.word() for _ in range(6))
    degree = reader.word()
    if degree > reader.remaining() // 8:
        raise EnvelopeError("envelope is truncated")
    frd_poly = tuple(reader.word() for _ in range(degree))
    try:
        return from_header(n, q, k, m_bar, m, l, frd_poly)
    except ParameterError as exc:
        raise EnvelopeError(f"invalid parameter header: {exc}") from exc


def serialize(obj: Storable, *, params: ParamSet, scheme: Scheme) -> bytes:
    """Encode one object (or a list of ciphertexts) into an envelope."""

    kind = _kind_of(obj)
    if isinstance(obj, (PublicParams, MasterKey)) and scheme is not Scheme.SELECTIVE:
        raise EnvelopeError("selective objects cannot be stored under the adaptive tag")
    if isinstance(obj, (PublicParamsA, MasterKeyA)) and scheme is not Scheme.ADAPTIVE:
        raise EnvelopeError("adaptive objects cannot be stored under the selective tag")

    writer = _Writer()
    writer.raw(MAGIC + bytes([int(scheme), int(kind)]))
    _write_header(writer, params)

    if isinstance(obj, PublicParams):
        writer.matrix(obj.a_mat.entries)
        writer.vector(obj.u.entries)
    elif isinstance(obj, PublicParamsA):
        writer.matrix(obj.a_bar.entries)
        writer.word(len(obj.a_blocks))
        for block in obj.a_blocks:
            writer.matrix(block.entries)
        writer.word(len(obj.u_list))
        for vec in obj.u_list:
            writer.vector(vec.entries)
    elif isinstance(obj, MasterKey):
        writer.matrix(obj.r_mat)
    elif isinstance(obj, MasterKeyA):
        writer.word(len(obj.r_list))
        for r_mat in obj.r_list:
            writer.matrix(r_mat)
    elif isinstance(obj, UserSecret):
        _write_identity(writer, obj.identity, scheme)
        writer.vector(obj.x.entries)
    elif isinstance(obj, ReKey):
        _write_identity(writer, obj.from_id, scheme)
        _write_identity(writer, obj.to_id, scheme)
        writer.matrix(obj.mat.entries)
    elif kind is ObjectKind.CIPHERTEXT:
        records = [obj] if isinstance(obj, Ciphertext) else list(obj)  # type: ignore[arg-type]
        writer.word(len(records))
        for ct in records:
            writer.vector(ct.c1.entries)
            writer.word(ct.c2)
    return writer.getvalue()


def deserialize(
    data: bytes,
    *,
    expect_kind: ObjectKind | None = None,
    expect_scheme: Scheme | None = None,
) -> Envelope:
    """Decode an envelope; ciphertext envelopes yield a tuple of ciphertexts."""

    reader = _Reader(data)
    if bytes(reader.take(len(MAGIC))) != MAGIC:
        raise EnvelopeError("not an IBPRE1 envelope")
    scheme_byte, kind_byte = reader.take(2)
    try:
        scheme = Scheme(scheme_byte)
        kind = ObjectKind(kind_byte)
    except ValueError as exc:
        raise EnvelopeError(f"unknown tag bytes {scheme_byte}/{kind_byte}") from exc
    if expect_kind is not None and kind is not expect_kind:
        raise EnvelopeError(f"expected a {expect_kind.name.lower()} envelope, found {kind.name.lower()}")
    if expect_scheme is not None and scheme is not expect_scheme:
        raise EnvelopeError(f"expected the {expect_scheme.label} scheme, found {scheme.label}")

    params = _read_header(reader)
    q = params.q
    obj: object
    if kind is ObjectKind.PARAMS:
        obj = params
    elif kind is ObjectKind.PUBLIC_PARAMS and scheme is Scheme.SELECTIVE:
        a_mat = reader.zq_matrix(q)
        u = reader.zq_vector(q)
        _check_shape("public matrix", a_mat.shape, (params.n, params.m))
        _check_shape("syndrome", (u.dim,), (params.n,))
        obj = PublicParams(params=params, a_mat=a_mat, u=u)
    elif kind is ObjectKind.PUBLIC_PARAMS:
        a_bar = reader.zq_matrix(q)
        blocks = tuple(reader.zq_matrix(q) for _ in range(reader.word()))
        u_list = tuple(reader.zq_vector(q) for _ in range(reader.word()))
        if len(blocks) != params.l or len(u_list) != params.l + 1:
            raise EnvelopeError("public parameters do not match the identity length")
        _check_shape("public matrix", a_bar.shape, (params.n, params.m_bar))
        for block in blocks:
            _check_shape("identity block", block.shape, (params.n, params.nk))
        for vec in u_list:
            _check_shape("syndrome", (vec.dim,), (params.n,))
        obj = PublicParamsA(params=params, a_bar=a_bar, a_blocks=blocks, u_list=u_list)
    elif kind is ObjectKind.MASTER_KEY and scheme is Scheme.SELECTIVE:
        r_mat = reader.int_matrix()
        _check_shape("trapdoor", r_mat.shape, (params.m_bar, params.nk))
        obj = MasterKey(r_mat=r_mat)
    elif kind is ObjectKind.MASTER_KEY:
        r_list = tuple(reader.int_matrix() for _ in range(reader.word()))
        if len(r_list) != params.l:
            raise EnvelopeError(f"master key holds {len(r_list)} trapdoors, header says l={params.l}")
        for r_mat in r_list:
            _check_shape("trapdoor", r_mat.shape, (params.m_bar, params.nk))
        obj = MasterKeyA(r_list=r_list)
    elif kind is ObjectKind.USER_SECRET:
        identity = _read_identity(reader, scheme, params)
        x = reader.int_vector()
        _check_shape("user secret", (x.dim,), (params.m,))
        obj = UserSecret(identity=identity, x=x)
    elif kind is ObjectKind.REKEY:
        from_id = _read_identity(reader, scheme, params)
        to_id = _read_identity(reader, scheme, params)
        mat = reader.zq_matrix(q)
        _check_shape("re-encryption key", mat.shape, (params.reenc_rows, params.m + 1))
        obj = ReKey(mat=mat, from_id=from_id, to_id=to_id)
    else:
        count = reader.word()
        records = []
        for _ in range(count):
            c1 = reader.zq_vector(q)
            _check_shape("ciphertext", (c1.dim,), (params.m,))
            c2 = reader.word()
            if c2 >= q:
                raise EnvelopeError("entry is not reduced mod q")
            records.append(Ciphertext(c1=c1, c2=c2))
        obj = tuple(records)
    reader.finish()
    logger.debug("envelope_decoded", extra={"scheme": scheme.label, "kind": kind.name.lower(), "size": len(data)})
    return Envelope(scheme=scheme, kind=kind, params=params, obj=obj)


__all__ = [
    "Envelope",
    "EnvelopeError",
    "MAGIC",
    "ObjectKind",
    "Scheme",
    "deserialize",
    "serialize",
]
