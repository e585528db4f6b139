"""Discrete Gaussian sampling over the integers and the counter-based RNG stream.

The density is proportional to ``exp(-pi (x - c)^2 / s^2)`` (width ``s``,
standard deviation ``s / sqrt(2 pi)``), cut at ``|x - c| <= 6 s``. Narrow
widths use cumulative-table inversion, wide ones a discrete-Laplace proposal
with rejection.
"""

from __future__ import annotations

import hashlib
import logging
import math
import secrets
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from zq_linear import IntMatrix, IntVector, ZqMatrix, ZqVector, is_wide

logger = logging.getLogger("ibpre.gaussian")

EPSILON = 2.0**-36
TAIL_CUT = 6.0
TABLE_WIDTH_LIMIT = float(2**10)
SEED_BYTES = 32

_GRID_CELLS = 1 << 22
_COUNTER_LIMIT = 1 << 64


class SamplerError(ValueError):
    """Raised for invalid sampler arguments (non-positive width, bad seed, negative sizes)."""


def smoothing_width(n: int, epsilon: float = EPSILON) -> float:
    """r = sqrt(ln(2n / eps) / pi), the smoothing parameter of Z^n used as the base width."""

    if n < 1:
        raise SamplerError(f"dimension must be positive, got {n}")
    return math.sqrt(math.log(2 * n / epsilon) / math.pi)


@dataclass(slots=True)
class RngHandle:
    """A Philox stream keyed by a 32-byte seed.

    ``counter`` selects the starting block of the stream; handles that share a
    seed but differ in ``counter`` draw from disjoint ranges. The handle is
    stateful: every draw advances it.
    """

    seed: bytes
    counter: int = 0
    _generator: np.random.Generator | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.seed) != SEED_BYTES:
            raise SamplerError(f"seed must be {SEED_BYTES} bytes, got {len(self.seed)}")
        if not 0 <= self.counter < _COUNTER_LIMIT:
            raise SamplerError(f"counter must fit 64 bits, got {self.counter}")

    @classmethod
    def from_hex(cls, text: str, counter: int = 0) -> "RngHandle":
        cleaned = text.strip().lower().removeprefix("0x")
        try:
            raw = bytes.fromhex(cleaned if len(cleaned) % 2 == 0 else "0" + cleaned)
        except ValueError as exc:
            raise SamplerError(f"seed is not valid hex: {text!r}") from exc
        if len(raw) != SEED_BYTES:
            raw = hashlib.blake2b(raw, digest_size=SEED_BYTES).digest()
        return cls(raw, counter)

    @classmethod
    def from_entropy(cls) -> "RngHandle":
        return cls(secrets.token_bytes(SEED_BYTES))

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            key = int.from_bytes(hashlib.blake2b(self.seed, digest_size=16).digest(), "little")
            bit_generator = np.random.Philox(key=key, counter=self.counter << 192)
            self._generator = np.random.Generator(bit_generator)
        return self._generator

    def derive(self, index: int) -> "RngHandle":
        """Independent handle whose seed is ``seed XOR index``."""

        if index < 0:
            raise SamplerError(f"derive index must be non-negative, got {index}")
        mixed = int.from_bytes(self.seed, "little") ^ index
        return RngHandle(mixed.to_bytes(SEED_BYTES, "little"), self.counter)

    def fork(self, stream: int) -> "RngHandle":
        """Same seed, disjoint counter range."""

        return RngHandle(self.seed, stream)

    def hex_seed(self) -> str:
        return self.seed.hex()


def _check_width(s: float) -> float:
    width = float(s)
    if not math.isfinite(width) or width <= 0:
        raise SamplerError(f"Gaussian width must be positive and finite, got {s}")
    return width


def _single_center_table(center: float, s: float) -> tuple[np.ndarray, np.ndarray]:
    radius = TAIL_CUT * s
    support = np.arange(math.floor(center - radius), math.ceil(center + radius) + 1, dtype=np.int64)
    support = support[np.abs(support - center) <= radius]
    if support.size == 0:
        support = np.array([int(round(center))], dtype=np.int64)
    weights = np.exp(-np.pi * (support - center) ** 2 / (s * s))
    cdf = np.cumsum(weights)
    return support, cdf / cdf[-1]


def _sample_table(centers: np.ndarray, s: float, gen: np.random.Generator) -> np.ndarray:
    out = np.empty(centers.shape[0], dtype=np.int64)
    if centers.size == 0:
        return out
    if np.all(centers == centers[0]):
        support, cdf = _single_center_table(float(centers[0]), s)
        idx = np.searchsorted(cdf, gen.random(centers.shape[0]), side="right")
        return support[np.minimum(idx, support.size - 1)]

    radius = TAIL_CUT * s
    span = int(math.ceil(2 * radius)) + 2
    offsets = np.arange(span, dtype=np.int64)
    rows_per_chunk = max(1, _GRID_CELLS // span)
    for start in range(0, centers.shape[0], rows_per_chunk):
        chunk = centers[start : start + rows_per_chunk]
        lo = np.floor(chunk - radius).astype(np.int64)
        grid = lo[:, None] + offsets
        dist = grid - chunk[:, None]
        weights = np.exp(-np.pi * dist * dist / (s * s))
        weights[np.abs(dist) > radius] = 0.0
        empty = weights.sum(axis=1) == 0.0
        if np.any(empty):
            nearest = np.rint(chunk[empty]).astype(np.int64) - lo[empty]
            weights[np.flatnonzero(empty), np.clip(nearest, 0, span - 1)] = 1.0
        cdf = np.cumsum(weights, axis=1)
        draws = gen.random(chunk.shape[0]) * cdf[:, -1]
        idx = np.minimum((cdf <= draws[:, None]).sum(axis=1), span - 1)
        out[start : start + chunk.shape[0]] = grid[np.arange(chunk.shape[0]), idx]
    return out


def _sample_rejection(centers: np.ndarray, s: float, gen: np.random.Generator) -> np.ndarray:
    sigma = s / math.sqrt(2 * math.pi)
    scale = math.floor(sigma) + 1
    p = -math.expm1(-1.0 / scale)
    base = np.rint(centers)
    frac = centers - base
    out = np.empty(centers.shape[0], dtype=np.int64)
    pending = np.arange(centers.shape[0])
    while pending.size:
        proposal = (gen.geometric(p, size=pending.size) - 1) - (gen.geometric(p, size=pending.size) - 1)
        f = frac[pending]
        shift = proposal - f
        log_accept = (
            -(shift * shift) / (2 * sigma * sigma)
            + np.abs(proposal) / scale
            - (sigma * sigma / (2 * scale * scale) + np.abs(f) / scale)
        )
        accepted = (gen.random(pending.size) < np.exp(np.minimum(log_accept, 0.0))) & (
            np.abs(shift) <= TAIL_CUT * s
        )
        hits = pending[accepted]
        out[hits] = proposal[accepted] + base[hits].astype(np.int64)
        pending = pending[~accepted]
    return out


def sample_z_batch(centers: npt.ArrayLike, s: float, rng: RngHandle) -> np.ndarray:
    """One draw from D_{Z,s,c} for every center in ``centers`` (same shape, int64)."""

    width = _check_width(s)
    arr = np.asarray(centers, dtype=np.float64)
    flat = arr.reshape(-1)
    if width < TABLE_WIDTH_LIMIT:
        draws = _sample_table(flat, width, rng.generator)
    else:
        draws = _sample_rejection(flat, width, rng.generator)
    return draws.reshape(arr.shape)


def sample_z(c: float, s: float, rng: RngHandle) -> int:
    return int(sample_z_batch(np.array([c], dtype=np.float64), s, rng)[0])


def sample_vec(dim: int, s: float, rng: RngHandle) -> IntVector:
    if dim < 0:
        raise SamplerError(f"dimension must be non-negative, got {dim}")
    return IntVector(sample_z_batch(np.zeros(dim), s, rng))


def sample_mat(rows: int, cols: int, s: float, rng: RngHandle) -> IntMatrix:
    if rows < 0 or cols < 0:
        raise SamplerError(f"matrix shape must be non-negative, got {rows}x{cols}")
    return sample_z_batch(np.zeros((rows, cols)), s, rng)


def _uniform(shape: tuple[int, ...], q: int, rng: RngHandle) -> np.ndarray:
    if any(dim < 0 for dim in shape):
        raise SamplerError(f"shape must be non-negative, got {shape}")
    if is_wide(q):
        return rng.generator.integers(0, q, size=shape, dtype=np.uint64).astype(object)
    return rng.generator.integers(0, q, size=shape, dtype=np.int64)


def uniform_vec(dim: int, q: int, rng: RngHandle) -> ZqVector:
    return ZqVector(_uniform((dim,), q, rng), q)


def uniform_mat(rows: int, cols: int, q: int, rng: RngHandle) -> ZqMatrix:
    return ZqMatrix(_uniform((rows, cols), q, rng), q)


__all__ = [
    "EPSILON",
    "RngHandle",
    "SamplerError",
    "TAIL_CUT",
    "TABLE_WIDTH_LIMIT",
    "sample_mat",
    "sample_vec",
    "sample_z",
    "sample_z_batch",
    "smoothing_width",
    "uniform_mat",
    "uniform_vec",
]
