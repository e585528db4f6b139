"""Gadget trapdoors: generation, LWE inversion and Gaussian preimage sampling.

A trapdoor for ``A = [Ā | H·G - Ā·R]`` is the short integer matrix ``R``
together with its tag ``H``; it satisfies ``A · [R; I] = H · G``.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, Sequence

import numpy as np

from gaussian import RngHandle, sample_mat, sample_z_batch, smoothing_width
from zq_linear import (
    DimensionMismatchError,
    IntMatrix,
    IntVector,
    SingularMatrixError,
    ZqMatrix,
    ZqVector,
    centered,
    gadget_length,
    gadget_matrix,
    hstack,
    inverse_mod,
    mat_mul,
    mat_vec,
    transpose,
    vec_mat,
)

if TYPE_CHECKING:
    from params import ParamSet

logger = logging.getLogger("ibpre.trapdoor")

SINGULAR_VALUE_SLACK = 1.1
GADGET_GS_NORM = math.sqrt(5.0)
PIVOT_FLOOR = 1e-9

_MAX_DECODE_BRANCHES = 64


class TrapdoorError(ValueError):
    """Base error for trapdoor operations."""


class SingularTagError(TrapdoorError):
    """Raised when a trapdoor tag is not invertible mod q."""


class DecodeError(TrapdoorError):
    """Raised when the LWE noise is too large to invert."""


class WidthError(TrapdoorError):
    """Raised when a requested Gaussian width is below the trapdoor's floor."""


class CovarianceError(TrapdoorError):
    """Raised when the perturbation covariance is not positive definite."""


@dataclass(frozen=True, eq=False, slots=True)
class GTrapdoor:
    r_mat: IntMatrix
    tag: ZqMatrix
    r_width: float

    @property
    def m_bar(self) -> int:
        return int(self.r_mat.shape[0])

    @property
    def nk(self) -> int:
        return int(self.r_mat.shape[1])

    @property
    def n(self) -> int:
        return self.tag.rows

    def stacked(self) -> IntMatrix:
        """The (m̄ + nk) × nk integer matrix [R; I]."""

        return np.vstack([self.r_mat.astype(np.int64), np.eye(self.nk, dtype=np.int64)])

    def digest(self) -> bytes:
        payload = np.ascontiguousarray(self.r_mat, dtype=np.int64)
        return hashlib.blake2b(payload.tobytes() + repr(payload.shape).encode(), digest_size=32).digest()

    def tag_inverse(self) -> ZqMatrix:
        try:
            return inverse_mod(self.tag)
        except SingularMatrixError as exc:
            raise SingularTagError(str(exc)) from exc


@dataclass(frozen=True, eq=False, slots=True)
class TrapPair:
    a_mat: ZqMatrix
    trapdoor: GTrapdoor


def gadget_basis(q: int) -> IntMatrix:
    """Basis S_k of the lattice {z : <g, z> = 0 mod q}.

    Columns 0..k-2 are ``2e_i - e_(i+1)``; the last column holds the binary
    digits of q. Every Gram-Schmidt vector has norm at most sqrt(5).
    """

    k = gadget_length(q)
    if k < 2:
        raise TrapdoorError(f"modulus {q} is too small for a gadget basis")
    basis = np.zeros((k, k), dtype=np.int64)
    for i in range(k - 1):
        basis[i, i] = 2
        basis[i + 1, i] = -1
    basis[:, k - 1] = [(q >> j) & 1 for j in range(k)]
    return basis


@lru_cache(maxsize=32)
def _gadget_gram_schmidt(q: int) -> tuple[IntMatrix, np.ndarray, np.ndarray]:
    basis = gadget_basis(q)
    ortho, upper = np.linalg.qr(basis.astype(np.float64))
    return basis, ortho, np.diag(upper).copy()


def width_floor(td: GTrapdoor) -> float:
    """Smallest preimage width this trapdoor supports: sqrt(5)·r·sqrt(s1(R)^2 + 1)."""

    r = smoothing_width(td.n)
    s1 = SINGULAR_VALUE_SLACK * (math.sqrt(td.m_bar) + math.sqrt(td.nk)) * td.r_width
    return GADGET_GS_NORM * r * math.sqrt(s1 * s1 + 1.0)


def gen_trapdoor(params: "ParamSet", a_bar: ZqMatrix, tag: ZqMatrix, rng: RngHandle) -> TrapPair:
    """Build ``A = [Ā | -Ā·R + H·G]`` with ``R`` drawn from D_{Z,r}."""

    if a_bar.q != params.q or a_bar.shape != (params.n, params.m_bar):
        raise DimensionMismatchError(
            f"Ā must be {params.n}x{params.m_bar} mod {params.q}, got {a_bar.shape} mod {a_bar.q}"
        )
    if tag.q != params.q or tag.shape != (params.n, params.n):
        raise DimensionMismatchError(f"tag must be {params.n}x{params.n}, got {tag.shape}")

    nk = params.n * params.k
    r_mat = sample_mat(params.m_bar, nk, params.r, rng)
    gadget = gadget_matrix(params.n, params.k, params.q)
    right = mat_mul(tag, gadget) - mat_mul(a_bar, ZqMatrix(r_mat, params.q))
    a_mat = hstack([a_bar, right])
    logger.debug("trapdoor_generated", extra={"n": params.n, "m": a_mat.cols, "r_width": params.r})
    return TrapPair(a_mat=a_mat, trapdoor=GTrapdoor(r_mat=r_mat, tag=tag, r_width=params.r))


def check_trapdoor(a_mat: ZqMatrix, td: GTrapdoor) -> bool:
    """Whether ``A · [R; I] = H · G`` holds."""

    if a_mat.cols != td.m_bar + td.nk or a_mat.rows != td.n:
        return False
    k = td.nk // td.n
    lhs = mat_mul(a_mat, ZqMatrix(td.stacked(), a_mat.q))
    rhs = mat_mul(td.tag, gadget_matrix(td.n, k, a_mat.q))
    return lhs == rhs


def _decode_coordinate(observed: Sequence[int], q: int, k: int) -> list[int]:
    """Candidate secrets for one coordinate given ``observed[j] ≈ 2^j · s (mod q)``.

    Works from the largest power down, keeping the value of ``2^j s / q`` as an
    exact fraction with denominator ``q · 2^(k-1-j)``. A branch survives while it
    stays within the noise allowance of the observation at that level.
    """

    candidates = [int(observed[k - 1])]
    for j in range(k - 2, -1, -1):
        half = q << (k - 2 - j)
        den = half << 1
        target = int(observed[j]) << (k - 1 - j)
        survivors: list[int] = []
        for value in candidates:
            for cand in (value, value + half):
                dist = (cand - target) % den
                if 4 * min(dist, den - dist) < den + q:
                    survivors.append(cand)
        if len(survivors) > _MAX_DECODE_BRANCHES:
            raise DecodeError("noise too large: decoding does not narrow down")
        candidates = survivors
    if k == 1:
        return sorted({value % q for value in candidates})
    return sorted({((value + (1 << (k - 2))) >> (k - 1)) % q for value in candidates})


def invert_g(b_prime: ZqVector) -> tuple[ZqVector, IntVector]:
    """Recover ``(s, e)`` from ``b' = Gᵀ s + e`` with every ``e_i`` in [-q/4, q/4)."""

    q = b_prime.q
    k = gadget_length(q)
    if b_prime.dim % k:
        raise DimensionMismatchError(f"vector of dim {b_prime.dim} is not a multiple of k={k}")
    n = b_prime.dim // k
    observed = b_prime.to_ints()
    powers = [(1 << j) % q for j in range(k)]

    secret: list[int] = []
    noise: list[int] = []
    for i in range(n):
        block = observed[i * k : (i + 1) * k]
        accepted = []
        for cand in _decode_coordinate(block, q, k):
            errors = centered(np.asarray([(block[j] - powers[j] * cand) % q for j in range(k)], dtype=object), q)
            if all(-q <= 4 * int(err) < q for err in errors):
                accepted.append((cand, [int(err) for err in errors]))
        if not accepted:
            raise DecodeError(f"coordinate {i}: noise exceeds q/4")
        if len(accepted) > 1:
            raise DecodeError(f"coordinate {i}: noise leaves {len(accepted)} candidate secrets")
        cand, errors = accepted[0]
        secret.append(cand)
        noise.extend(errors)

    return ZqVector(np.asarray(secret, dtype=object), q), IntVector(np.asarray(noise, dtype=np.int64))


def invert_lwe(td: GTrapdoor, a_mat: ZqMatrix, b: ZqVector) -> tuple[ZqVector, IntVector]:
    """Recover ``(s, e)`` from ``b = Aᵀ s + e`` using the trapdoor.

    ``[R; I]ᵀ b = Gᵀ (Hᵀ s) + [R; I]ᵀ e``, so the gadget inversion yields
    ``Hᵀ s`` and the tag transpose is undone afterwards.
    """

    if b.q != a_mat.q or b.dim != a_mat.cols:
        raise DimensionMismatchError(f"b must have dim {a_mat.cols} mod {a_mat.q}")
    if a_mat.cols != td.m_bar + td.nk:
        raise DimensionMismatchError("trapdoor does not match the matrix width")
    try:
        tag_t_inv = inverse_mod(transpose(td.tag))
    except SingularMatrixError as exc:
        raise SingularTagError(str(exc)) from exc

    projected = vec_mat(b, ZqMatrix(td.stacked(), b.q))
    shifted, _ = invert_g(projected)
    secret = mat_vec(tag_t_inv, shifted)
    residual = b - mat_vec(transpose(a_mat), secret)
    return secret, IntVector(residual.centered().astype(np.int64))


def sample_g(v: ZqVector, width: float, rng: RngHandle) -> IntVector:
    """Sample ``x`` with ``G x = v`` from the discrete Gaussian of the given width.

    Randomized nearest-plane over S_k, one block per coordinate, all blocks
    advanced together.
    """

    n = v.dim
    q = v.q
    k = gadget_length(q)
    r = smoothing_width(max(n, 1))
    if width < GADGET_GS_NORM * r:
        raise WidthError(f"width {width:.3f} is below sqrt(5)·r = {GADGET_GS_NORM * r:.3f}")
    if n == 0:
        return IntVector(np.zeros(0, dtype=np.int64))

    basis, ortho, diag = _gadget_gram_schmidt(q)
    start = np.asarray(v.to_ints(), dtype=object)
    digits = np.asarray([[(int(x) >> j) & 1 for j in range(k)] for x in start], dtype=np.int64)
    center = -digits.astype(np.float64)
    lattice_point = np.zeros((n, k), dtype=np.int64)
    for i in range(k - 1, -1, -1):
        coeff = (center @ ortho[:, i]) / diag[i]
        z = sample_z_batch(coeff, width / abs(diag[i]), rng)
        step = np.outer(z, basis[:, i])
        center -= step
        lattice_point += step
    return IntVector((digits + lattice_point).reshape(-1))


@dataclass(frozen=True)
class _PerturbationKey:
    digest: bytes
    s_width: float
    g_width: float
    round_width: float
    stacked: np.ndarray = field(compare=False, hash=False, repr=False)


@lru_cache(maxsize=4)
def _perturbation_root(key: _PerturbationKey) -> np.ndarray:
    t = key.stacked.astype(np.float64)
    dim = t.shape[0]
    # The randomized rounding below adds round_width² back on every coordinate.
    cov = (key.s_width**2 - key.round_width**2) * np.eye(dim) - key.g_width**2 * (t @ t.T)
    try:
        root = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError(f"perturbation covariance is not positive definite at s={key.s_width}") from exc
    if float(np.min(np.diag(root))) < PIVOT_FLOOR:
        raise CovarianceError(f"perturbation covariance is degenerate at s={key.s_width}")
    logger.debug("perturbation_factor_cached", extra={"dim": dim, "s_width": key.s_width})
    return root


def sample_pre(td: GTrapdoor, a_mat: ZqMatrix, u: ZqVector, s_width: float, rng: RngHandle) -> IntVector:
    """Sample ``x`` with ``A x = u`` from a discrete Gaussian of width ``s_width``."""

    n = a_mat.rows
    q = a_mat.q
    m = a_mat.cols
    if m != td.m_bar + td.nk or td.n != n:
        raise DimensionMismatchError("trapdoor does not match the matrix shape")
    if u.q != q or u.dim != n:
        raise DimensionMismatchError(f"target must have dim {n} mod {q}")
    floor = width_floor(td)
    if s_width < floor * (1 - 1e-12):
        raise WidthError(f"width {s_width:.3f} is below the trapdoor floor {floor:.3f}")
    tag_inv = td.tag_inverse()

    r = smoothing_width(n)
    g_width = GADGET_GS_NORM * r
    stacked = td.stacked()
    root = _perturbation_root(_PerturbationKey(td.digest(), float(s_width), g_width, r, stacked))

    continuous = root @ rng.generator.standard_normal(m) / math.sqrt(2 * math.pi)
    perturbation = sample_z_batch(continuous, r, rng)
    residual = u - mat_vec(a_mat, IntVector(perturbation))
    z = sample_g(mat_vec(tag_inv, residual), g_width, rng)
    return IntVector(perturbation + stacked @ z.entries)


__all__ = [
    "CovarianceError",
    "DecodeError",
    "GTrapdoor",
    "SingularTagError",
    "TrapPair",
    "TrapdoorError",
    "WidthError",
    "check_trapdoor",
    "gadget_basis",
    "gen_trapdoor",
    "invert_g",
    "invert_lwe",
    "sample_g",
    "sample_pre",
    "width_floor",
]
