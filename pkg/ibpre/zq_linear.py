"""Linear algebra over Z_q: matrices, gadget tools and the full-rank-difference encoding.

Entries are kept in ``int64`` arrays while ``q < 2**62`` so every sum of two
reduced values still fits a signed machine word; wider moduli switch to
Python-int (``object``) arrays. Matrix products never reduce after the fact:
the right operand is split into limbs and accumulated Horner-style so no
intermediate leaves the int64 range.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
import numpy.typing as npt
from sympy import Poly, symbols

logger = logging.getLogger("ibpre.zq_linear")

INT64_SAFE_BITS = 62

IntMatrix = npt.NDArray[np.int64]

_X = symbols("x")


class LinearAlgebraError(ValueError):
    """Raised when a Z_q computation receives inconsistent input."""


class DimensionMismatchError(LinearAlgebraError):
    """Raised when operand shapes or moduli do not line up."""


class SingularMatrixError(LinearAlgebraError):
    """Raised when a matrix that must be invertible mod q is not."""


def is_wide(q: int) -> bool:
    """True when residues mod ``q`` do not fit the int64 fast path."""

    return q.bit_length() > INT64_SAFE_BITS


def gadget_length(q: int) -> int:
    """k = ceil(log2 q)."""

    if q < 2:
        raise LinearAlgebraError(f"modulus must be at least 2, got {q}")
    return (q - 1).bit_length()


def reduce_mod(values: npt.ArrayLike, q: int) -> np.ndarray:
    """Reduce integer values into [0, q) using the dtype ``q`` calls for."""

    arr = np.asarray(values)
    if arr.dtype.kind == "f":
        raise LinearAlgebraError("Z_q entries must be integers")
    if is_wide(q):
        return np.asarray(arr.astype(object) % q, dtype=object)
    if arr.dtype == object:
        return np.asarray(arr % q, dtype=np.int64)
    return np.mod(arr.astype(np.int64, copy=False), q)


def centered(values: npt.ArrayLike, q: int) -> np.ndarray:
    """Lift residues to the representatives in (-q/2, q/2]."""

    arr = reduce_mod(values, q)
    half = q // 2
    return np.where(arr > half, arr - q, arr)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False, slots=True)
class ZqVector:
    entries: np.ndarray
    q: int

    def __post_init__(self) -> None:
        if self.q < 2:
            raise LinearAlgebraError(f"modulus must be at least 2, got {self.q}")
        arr = np.asarray(self.entries)
        if arr.ndim != 1:
            raise DimensionMismatchError(f"vector entries must be one-dimensional, got shape {arr.shape}")
        object.__setattr__(self, "entries", _frozen(reduce_mod(arr, self.q).copy()))

    @classmethod
    def zeros(cls, dim: int, q: int) -> "ZqVector":
        return cls(np.zeros(dim, dtype=np.int64), q)

    @property
    def dim(self) -> int:
        return int(self.entries.shape[0])

    def __len__(self) -> int:
        return self.dim

    def is_zero(self) -> bool:
        return not bool(np.any(self.entries != 0))

    def to_ints(self) -> list[int]:
        return [int(v) for v in self.entries]

    def centered(self) -> np.ndarray:
        return centered(self.entries, self.q)

    def _check(self, other: "ZqVector") -> None:
        if self.q != other.q or self.dim != other.dim:
            raise DimensionMismatchError(
                f"cannot combine vectors of dim {self.dim} mod {self.q} and dim {other.dim} mod {other.q}"
            )

    def __add__(self, other: "ZqVector") -> "ZqVector":
        self._check(other)
        return ZqVector(np.mod(self.entries + other.entries, self.q), self.q)

    def __sub__(self, other: "ZqVector") -> "ZqVector":
        self._check(other)
        return ZqVector(np.mod(self.entries - other.entries, self.q), self.q)

    def __neg__(self) -> "ZqVector":
        return ZqVector(np.mod(-self.entries, self.q), self.q)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ZqVector):
            return NotImplemented
        return self.q == other.q and self.dim == other.dim and bool(np.array_equal(self.entries, other.entries))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False, slots=True)
class IntVector:
    """Signed integer vector (Gaussian samples, preimages, noise)."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.entries)
        if arr.ndim != 1:
            raise DimensionMismatchError(f"vector entries must be one-dimensional, got shape {arr.shape}")
        if arr.dtype.kind == "f":
            raise LinearAlgebraError("IntVector entries must be integers")
        if arr.dtype != object:
            arr = arr.astype(np.int64, copy=True)
        else:
            arr = arr.copy()
        object.__setattr__(self, "entries", _frozen(arr))

    @property
    def dim(self) -> int:
        return int(self.entries.shape[0])

    def __len__(self) -> int:
        return self.dim

    def norm(self) -> float:
        return float(np.linalg.norm(self.entries.astype(np.float64)))

    def inf_norm(self) -> int:
        return int(np.max(np.abs(self.entries))) if self.dim else 0

    def mod(self, q: int) -> ZqVector:
        return ZqVector(self.entries, q)

    def to_ints(self) -> list[int]:
        return [int(v) for v in self.entries]

    def __add__(self, other: "IntVector") -> "IntVector":
        if self.dim != other.dim:
            raise DimensionMismatchError(f"cannot add vectors of dim {self.dim} and {other.dim}")
        return IntVector(self.entries + other.entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IntVector):
            return NotImplemented
        return self.dim == other.dim and bool(np.array_equal(self.entries, other.entries))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False, slots=True)
class ZqMatrix:
    entries: np.ndarray
    q: int

    def __post_init__(self) -> None:
        if self.q < 2:
            raise LinearAlgebraError(f"modulus must be at least 2, got {self.q}")
        arr = np.asarray(self.entries)
        if arr.ndim != 2:
            raise DimensionMismatchError(f"matrix entries must be two-dimensional, got shape {arr.shape}")
        object.__setattr__(self, "entries", _frozen(reduce_mod(arr, self.q)))

    @classmethod
    def adopt(cls, entries: np.ndarray, q: int) -> "ZqMatrix":
        """Wrap an array already reduced into [0, q) without copying it; the caller hands over ownership."""

        if entries.ndim != 2:
            raise DimensionMismatchError(f"matrix entries must be two-dimensional, got shape {entries.shape}")
        matrix = object.__new__(cls)
        object.__setattr__(matrix, "entries", _frozen(entries))
        object.__setattr__(matrix, "q", q)
        return matrix

    @classmethod
    def zeros(cls, rows: int, cols: int, q: int) -> "ZqMatrix":
        return cls(np.zeros((rows, cols), dtype=np.int64), q)

    @classmethod
    def identity(cls, n: int, q: int) -> "ZqMatrix":
        return cls(np.eye(n, dtype=np.int64), q)

    @property
    def rows(self) -> int:
        return int(self.entries.shape[0])

    @property
    def cols(self) -> int:
        return int(self.entries.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    @property
    def T(self) -> "ZqMatrix":
        return transpose(self)

    def column_block(self, start: int, stop: int) -> "ZqMatrix":
        return ZqMatrix(self.entries[:, start:stop], self.q)

    def row(self, index: int) -> ZqVector:
        return ZqVector(self.entries[index], self.q)

    def _check(self, other: "ZqMatrix") -> None:
        if self.q != other.q or self.shape != other.shape:
            raise DimensionMismatchError(
                f"cannot combine {self.shape} mod {self.q} with {other.shape} mod {other.q}"
            )

    def __add__(self, other: "ZqMatrix") -> "ZqMatrix":
        self._check(other)
        return ZqMatrix(np.mod(self.entries + other.entries, self.q), self.q)

    def __sub__(self, other: "ZqMatrix") -> "ZqMatrix":
        self._check(other)
        return ZqMatrix(np.mod(self.entries - other.entries, self.q), self.q)

    def __neg__(self) -> "ZqMatrix":
        return ZqMatrix(np.mod(-self.entries, self.q), self.q)

    def __matmul__(self, other: object) -> object:
        if isinstance(other, ZqMatrix):
            return mat_mul(self, other)
        if isinstance(other, (ZqVector, IntVector)):
            return mat_vec(self, other)
        return NotImplemented

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ZqMatrix):
            return NotImplemented
        return self.q == other.q and self.shape == other.shape and bool(np.array_equal(self.entries, other.entries))

    __hash__ = None  # type: ignore[assignment]


Vectorish = Union[ZqVector, IntVector]


# Products are formed in blocks of roughly this many output (or right-operand)
# entries so limb temporaries stay small next to the operands.
_BLOCK_ENTRIES = 1 << 21


def _mulmod_block(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    inner = a.shape[-1]
    out_shape = a.shape[:-1] + b.shape[1:]
    a_max = int(a.max(initial=0)) if a.size else 0
    if inner == 0 or a_max == 0:
        return np.zeros(out_shape, dtype=np.int64)

    value_bits = gadget_length(q)
    headroom = INT64_SAFE_BITS - (a_max * inner).bit_length()
    if headroom >= value_bits:
        return np.mod(a @ b, q)
    limb_bits = min(headroom, INT64_SAFE_BITS - q.bit_length())
    if limb_bits < 1:
        product = a.astype(object) @ b.astype(object)
        return reduce_mod(product, q)

    mask = (1 << limb_bits) - 1
    acc = np.zeros(out_shape, dtype=np.int64)
    top = ((value_bits - 1) // limb_bits) * limb_bits
    for shift in range(top, -1, -limb_bits):
        limb = (b >> shift) & mask
        acc <<= limb_bits
        acc += a @ limb
        np.mod(acc, q, out=acc)
    return acc


def _mulmod(a: np.ndarray, b: np.ndarray, q: int, out: np.ndarray | None = None) -> np.ndarray:
    """``a @ b mod q`` for 2-D operands already reduced into [0, q).

    Rows of ``a`` and the shared dimension are walked in blocks; when ``out``
    is given the result is written into it.
    """

    rows, inner = a.shape
    cols = b.shape[1]
    if out is None:
        out = np.zeros((rows, cols), dtype=object if is_wide(q) else np.int64)
    if a.dtype == object or b.dtype == object or is_wide(q):
        out[...] = reduce_mod(np.asarray(a, dtype=object) @ np.asarray(b, dtype=object), q)
        return out

    step = max(1, _BLOCK_ENTRIES // max(cols, 1))
    for r0 in range(0, rows, step):
        rows_block = out[r0 : r0 + step]
        rows_block[...] = 0
        for i0 in range(0, inner, step):
            rows_block += _mulmod_block(a[r0 : r0 + step, i0 : i0 + step], b[i0 : i0 + step], q)
            np.mod(rows_block, q, out=rows_block)
    return out


def mat_mul_into(a: ZqMatrix, b: ZqMatrix, out: np.ndarray) -> None:
    """Write ``a · b mod q`` into the preallocated ``out`` (a writable view is fine)."""

    if a.q != b.q:
        raise DimensionMismatchError(f"moduli differ: {a.q} vs {b.q}")
    if a.cols != b.rows or out.shape != (a.rows, b.cols):
        raise DimensionMismatchError(f"cannot write {a.shape} times {b.shape} into {out.shape}")
    _mulmod(a.entries, b.entries, a.q, out=out)


def mat_mul(a: ZqMatrix, b: ZqMatrix) -> ZqMatrix:
    """Product of two matrices mod q."""

    if a.q != b.q:
        raise DimensionMismatchError(f"moduli differ: {a.q} vs {b.q}")
    if a.cols != b.rows:
        raise DimensionMismatchError(f"cannot multiply {a.shape} by {b.shape}")
    return ZqMatrix.adopt(_mulmod(a.entries, b.entries, a.q), a.q)


def mat_vec(a: ZqMatrix, v: Vectorish) -> ZqVector:
    """``a · v mod q``; signed vectors are reduced first."""

    if isinstance(v, ZqVector) and v.q != a.q:
        raise DimensionMismatchError(f"moduli differ: {a.q} vs {v.q}")
    if a.cols != v.dim:
        raise DimensionMismatchError(f"cannot multiply {a.shape} by a vector of dim {v.dim}")
    vec = reduce_mod(v.entries, a.q)
    product = _mulmod(a.entries, vec.reshape(-1, 1), a.q)
    return ZqVector(product.reshape(-1), a.q)


def vec_mat(v: Vectorish, a: ZqMatrix) -> ZqVector:
    """Row vector times matrix, ``vᵀ · a mod q``."""

    if a.rows != v.dim:
        raise DimensionMismatchError(f"cannot multiply a vector of dim {v.dim} by {a.shape}")
    vec = reduce_mod(v.entries, a.q)
    product = _mulmod(vec.reshape(1, -1), a.entries, a.q)
    return ZqVector(product.reshape(-1), a.q)


def dot(u: Vectorish, v: Vectorish, q: int) -> int:
    if u.dim != v.dim:
        raise DimensionMismatchError(f"cannot take dot product of dims {u.dim} and {v.dim}")
    left = reduce_mod(u.entries, q).reshape(1, -1)
    right = reduce_mod(v.entries, q).reshape(-1, 1)
    return int(_mulmod(left, right, q).reshape(-1)[0]) if u.dim else 0


def transpose(a: ZqMatrix) -> ZqMatrix:
    return ZqMatrix(a.entries.T, a.q)


def hstack(blocks: Sequence[ZqMatrix]) -> ZqMatrix:
    if not blocks:
        raise LinearAlgebraError("nothing to stack")
    q = blocks[0].q
    if any(block.q != q for block in blocks) or len({block.rows for block in blocks}) != 1:
        raise DimensionMismatchError("blocks must share modulus and row count")
    return ZqMatrix(np.hstack([block.entries for block in blocks]), q)


def gadget_matrix(n: int, k: int, q: int) -> ZqMatrix:
    """G = I_n ⊗ (1, 2, …, 2^(k-1))."""

    if n < 1 or k < 1:
        raise LinearAlgebraError(f"gadget needs n >= 1 and k >= 1, got n={n}, k={k}")
    if k > gadget_length(q):
        raise LinearAlgebraError(f"k={k} exceeds ceil(log2 q)={gadget_length(q)}")
    powers = np.array([1 << j for j in range(k)], dtype=object if is_wide(q) else np.int64)
    eye = np.eye(n, dtype=powers.dtype)
    return ZqMatrix(np.kron(eye, powers), q)


def bd(v: ZqVector) -> IntVector:
    """Bit decomposition: for each coordinate its k binary digits, least significant first.

    Coordinates stay contiguous, so ``gadget_matrix(n, k, q) · bd(v) = v``.
    """

    k = gadget_length(v.q)
    if v.entries.dtype == object:
        digits = [[(int(x) >> j) & 1 for j in range(k)] for x in v.entries]
        flat = np.asarray(digits, dtype=np.int64).reshape(-1)
    else:
        shifts = np.arange(k, dtype=np.int64)
        flat = ((v.entries[:, None] >> shifts) & 1).reshape(-1)
    return IntVector(flat)


def p2(v: Vectorish, q: int | None = None) -> ZqVector:
    """Powers of two: (v_i, 2 v_i, …, 2^(k-1) v_i) per coordinate, so ``bd(x)ᵀ p2(y) = xᵀ y``."""

    modulus = v.q if isinstance(v, ZqVector) else q
    if modulus is None:
        raise LinearAlgebraError("p2 of a signed vector needs an explicit modulus")
    k = gadget_length(modulus)
    base = reduce_mod(v.entries, modulus)
    out = np.empty((base.shape[0], k), dtype=base.dtype)
    if k:
        out[:, 0] = base
    for j in range(1, k):
        out[:, j] = np.mod(out[:, j - 1] * 2, modulus)
    return ZqVector(out.reshape(-1), modulus)


@lru_cache(maxsize=64)
def irreducible_modulus(n: int, q: int) -> tuple[int, ...]:
    """Smallest x^n + a·x + c irreducible over Z_q (c first, then a), low-order coefficients first."""

    if n < 1:
        raise LinearAlgebraError(f"polynomial degree must be positive, got {n}")
    if n == 1:
        return (0, 1)
    for a in range(1, q):
        for c in range(1, q):
            coeffs_high_first = [1] + [0] * (n - 2) + [a, c]
            if Poly.from_list(coeffs_high_first, _X, modulus=q).is_irreducible:
                logger.debug("irreducible_modulus_found", extra={"n": n, "q": q, "a": a, "c": c})
                return tuple(reversed(coeffs_high_first))
            if c >= 4 * n * n + 64:
                break
    raise LinearAlgebraError(f"no irreducible x^{n} + a·x + c found mod {q}")


def frd_encode(identity: ZqVector, frd_poly: Sequence[int]) -> ZqMatrix:
    """Matrix of multiplication by g(x) = Σ id_i x^i in Z_q[x]/(f).

    Column i holds the coefficients of g(x)·x^i mod f, so H(a) - H(b) = H(a - b)
    and H(id) is invertible for every non-zero id when f is irreducible.
    """

    n = identity.dim
    q = identity.q
    if len(frd_poly) != n + 1 or frd_poly[-1] % q != 1:
        raise DimensionMismatchError(f"frd_poly must be monic of degree {n}")
    f = [int(c) % q for c in frd_poly]
    column = identity.to_ints()
    columns = []
    for _ in range(n):
        columns.append(column)
        lead = column[-1]
        shifted = [0] + column[:-1]
        column = [(shifted[j] - lead * f[j]) % q for j in range(n)]
    return ZqMatrix(np.asarray(columns, dtype=object).T, q)


def _rref(rows: list[list[int]], q: int, pivot_cols: int) -> tuple[list[list[int]], list[int], int]:
    """Gauss-Jordan over GF(q) on the first ``pivot_cols`` columns.

    Returns the reduced rows, the pivot columns, and the product of pivots with
    the swap sign (the determinant when the left block is square and full rank).
    """

    matrix = [[value % q for value in row] for row in rows]
    height = len(matrix)
    pivots: list[int] = []
    det = 1
    r = 0
    for c in range(pivot_cols):
        if r >= height:
            break
        piv = next((i for i in range(r, height) if matrix[i][c] % q != 0), None)
        if piv is None:
            continue
        if math.gcd(matrix[piv][c], q) != 1:
            raise LinearAlgebraError(f"modulus {q} is not prime")
        if piv != r:
            matrix[r], matrix[piv] = matrix[piv], matrix[r]
            det = -det
        pivot = matrix[r][c]
        det = (det * pivot) % q
        inv = pow(pivot, -1, q)
        matrix[r] = [(value * inv) % q for value in matrix[r]]
        for i in range(height):
            if i != r and matrix[i][c]:
                factor = matrix[i][c]
                matrix[i] = [(x - factor * y) % q for x, y in zip(matrix[i], matrix[r])]
        pivots.append(c)
        r += 1
    return matrix, pivots, det % q


def rank_mod(a: ZqMatrix) -> int:
    _, pivots, _ = _rref([[int(x) for x in row] for row in a.entries], a.q, a.cols)
    return len(pivots)


def det_mod(a: ZqMatrix) -> int:
    if a.rows != a.cols:
        raise DimensionMismatchError(f"determinant needs a square matrix, got {a.shape}")
    _, pivots, det = _rref([[int(x) for x in row] for row in a.entries], a.q, a.cols)
    return det if len(pivots) == a.rows else 0


def is_full_rank(a: ZqMatrix) -> bool:
    return rank_mod(a) == min(a.rows, a.cols)


def inverse_mod(a: ZqMatrix) -> ZqMatrix:
    """Inverse over GF(q) by Gauss-Jordan on ``[a | I]``."""

    if a.rows != a.cols:
        raise DimensionMismatchError(f"inverse needs a square matrix, got {a.shape}")
    n = a.rows
    augmented = [[int(x) for x in row] + [1 if i == j else 0 for j in range(n)] for i, row in enumerate(a.entries)]
    reduced, pivots, _ = _rref(augmented, a.q, n)
    if len(pivots) != n:
        raise SingularMatrixError(f"matrix of rank {len(pivots)} < {n} is not invertible mod {a.q}")
    return ZqMatrix(np.asarray([row[n:] for row in reduced], dtype=object), a.q)


__all__ = [
    "DimensionMismatchError",
    "IntMatrix",
    "IntVector",
    "LinearAlgebraError",
    "SingularMatrixError",
    "ZqMatrix",
    "ZqVector",
    "bd",
    "centered",
    "det_mod",
    "dot",
    "frd_encode",
    "gadget_length",
    "gadget_matrix",
    "hstack",
    "inverse_mod",
    "irreducible_modulus",
    "is_full_rank",
    "is_wide",
    "mat_mul",
    "mat_mul_into",
    "mat_vec",
    "p2",
    "rank_mod",
    "reduce_mod",
    "transpose",
    "vec_mat",
]
