"""Parameter sets, noise budgets and the modulus search.

Every derived quantity is a function of the integer fields (n, q, k, m̄, m, l)
and the fixed LWE noise width ``alpha·q = r``, which is what lets a parameter
set travel in the integer-only envelope header.
"""

from __future__ import annotations

import logging
import math

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from sympy import isprime, nextprime

from gaussian import EPSILON, smoothing_width
from zq_linear import gadget_length, irreducible_modulus

logger = logging.getLogger("ibpre.params")

MIN_DERIVE_DIMENSION = 16
MAX_MODULUS_BITS = 64
DEFAULT_SAFETY_MARGIN = 2.0
SINGULAR_VALUE_SLACK = 1.1
TAIL_FACTOR = 6.0


class ParameterError(ValueError):
    """Raised when a parameter set cannot be built or is inconsistent."""


class BudgetReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    b_fresh: float
    b_reenc: float
    ratio_fresh: float
    ratio_reenc: float
    alpha_ok: bool
    noise_degenerate: bool
    valid: bool


class ParamSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=1)
    q: int = Field(ge=3)
    k: int = Field(ge=2)
    m_bar: int = Field(ge=1)
    m: int = Field(ge=1)
    alpha: float = Field(gt=0.0, lt=1.0)
    r: float = Field(gt=0.0)
    s: float = Field(gt=0.0)
    l: int = Field(ge=0)
    frd_poly: tuple[int, ...]

    @model_validator(mode="after")
    def _check_consistency(self) -> "ParamSet":
        if self.q >= 2**MAX_MODULUS_BITS:
            raise ValueError(f"q must stay below 2^{MAX_MODULUS_BITS}")
        if not isprime(self.q):
            raise ValueError(f"q={self.q} is not prime")
        if self.k != gadget_length(self.q):
            raise ValueError(f"k={self.k} does not equal ceil(log2 q)={gadget_length(self.q)}")
        if self.m_bar < 2 * self.n * self.k:
            raise ValueError(f"m_bar={self.m_bar} is below 2nk={2 * self.n * self.k}")
        if self.m != self.m_bar + self.n * self.k:
            raise ValueError(f"m={self.m} must equal m_bar + nk={self.m_bar + self.n * self.k}")
        if len(self.frd_poly) != self.n + 1 or self.frd_poly[-1] != 1:
            raise ValueError(f"frd_poly must be monic of degree {self.n}")
        if any(not 0 <= coeff < self.q for coeff in self.frd_poly):
            raise ValueError("frd_poly coefficients must be reduced mod q")
        return self

    @property
    def nk(self) -> int:
        return self.n * self.k

    @property
    def noise_width(self) -> float:
        """LWE noise width alpha·q."""

        return self.alpha * self.q

    @property
    def reenc_rows(self) -> int:
        """Rows of a re-encryption key: one per bit of a first-level c1, plus one."""

        return self.m * self.k + 1

    @property
    def budget(self) -> BudgetReport:
        return validate(self)


def preimage_singular_value(n: int, k: int, m_bar: int, l: int, r: float) -> float:
    """Estimate of s1(R) for a single trapdoor (l = 0) or a sum of l of them."""

    return SINGULAR_VALUE_SLACK * (math.sqrt(m_bar) + math.sqrt(n * k)) * r * math.sqrt(max(l, 1))


def preimage_width(n: int, k: int, m_bar: int, l: int, r: float) -> float:
    s1 = preimage_singular_value(n, k, m_bar, l, r)
    return math.sqrt(5.0) * r * math.sqrt(s1 * s1 + 1.0)


def _noise_bounds(n: int, k: int, m_bar: int, m: int, l: int, r: float, noise_width: float) -> tuple[float, float]:
    s1 = preimage_singular_value(n, k, m_bar, l, r)
    x_norm = 2.0 * math.sqrt(6.0) * math.sqrt(m) * math.sqrt(s1 * s1 + 1.0) * r
    e_norm = 2.0 * noise_width * math.sqrt(2.0 * m_bar * n * k) * r
    b_fresh = x_norm * e_norm + TAIL_FACTOR * noise_width
    b_reenc = b_fresh + SINGULAR_VALUE_SLACK * m * k * r
    return b_fresh, b_reenc


def validate(ps: ParamSet) -> BudgetReport:
    """Analytic noise budget of a parameter set.

    Both bounds are compared against q/4; the set is usable when the
    re-encryption bound fits, 1/alpha >= (nk)^2 r^2 holds and the noise width
    is not degenerate.
    """

    b_fresh, b_reenc = _noise_bounds(ps.n, ps.k, ps.m_bar, ps.m, ps.l, ps.r, ps.noise_width)
    quarter = ps.q / 4.0
    ratio_fresh = b_fresh / quarter
    ratio_reenc = b_reenc / quarter
    alpha_ok = 1.0 / ps.alpha >= (ps.nk * ps.r) ** 2
    degenerate = ps.noise_width < 1.0
    return BudgetReport(
        b_fresh=b_fresh,
        b_reenc=b_reenc,
        ratio_fresh=ratio_fresh,
        ratio_reenc=ratio_reenc,
        alpha_ok=alpha_ok,
        noise_degenerate=degenerate,
        valid=ratio_reenc < 1.0 and alpha_ok and not degenerate,
    )


def from_header(n: int, q: int, k: int, m_bar: int, m: int, l: int, frd_poly: tuple[int, ...]) -> ParamSet:
    """Rebuild a parameter set from its integer fields."""

    try:
        r = smoothing_width(n, EPSILON)
        return ParamSet(
            n=n,
            q=q,
            k=k,
            m_bar=m_bar,
            m=m,
            alpha=r / q,
            r=r,
            s=preimage_width(n, k, m_bar, l, r),
            l=l,
            frd_poly=tuple(frd_poly),
        )
    except (ValidationError, ValueError) as exc:
        raise ParameterError(str(exc)) from exc


def assemble(n: int, q: int, l: int = 0, m_bar: int | None = None) -> ParamSet:
    """Fill every derived field for an explicit prime modulus."""

    if n < 1 or l < 0:
        raise ParameterError(f"need n >= 1 and l >= 0, got n={n}, l={l}")
    if not isprime(q):
        raise ParameterError(f"q={q} is not prime")
    k = gadget_length(q)
    width = m_bar if m_bar is not None else 2 * n * k
    return from_header(n, q, k, width, width + n * k, l, irreducible_modulus(n, q))


def find_modulus(n: int, l: int = 0, safety_margin: float = DEFAULT_SAFETY_MARGIN) -> ParamSet:
    """Smallest prime q, scanning k upwards, whose budget clears ``safety_margin``.

    No floor on ``n``: small dimensions are accepted for experiments and tests.
    """

    if n < 1 or l < 0:
        raise ParameterError(f"need n >= 1 and l >= 0, got n={n}, l={l}")
    if not safety_margin >= 1.0:
        raise ParameterError(f"safety margin must be at least 1, got {safety_margin}")
    r = smoothing_width(n)
    for k in range(2, MAX_MODULUS_BITS + 1):
        nk = n * k
        m_bar = 2 * nk
        _, b_reenc = _noise_bounds(n, k, m_bar, m_bar + nk, l, r, r)
        needed = max(4.0 * safety_margin * b_reenc, r * (nk * r) ** 2, float(2 ** (k - 1) + 1))
        q = int(nextprime(math.ceil(needed) - 1))
        if q < 2**k:
            ps = assemble(n, q, l)
            logger.info(
                "modulus_found",
                extra={"n": n, "l": l, "q": q, "k": k, "ratio_reenc": ps.budget.ratio_reenc},
            )
            return ps
    raise ParameterError(f"no prime modulus below 2^{MAX_MODULUS_BITS} satisfies the budget for n={n}, l={l}")


def derive(n: int, l: int = 0, safety_margin: float = DEFAULT_SAFETY_MARGIN) -> ParamSet:
    """Production parameter derivation (n >= 16)."""

    if n < MIN_DERIVE_DIMENSION:
        raise ParameterError(f"n must be at least {MIN_DERIVE_DIMENSION}, got {n}")
    return find_modulus(n, l, safety_margin)


__all__ = [
    "BudgetReport",
    "DEFAULT_SAFETY_MARGIN",
    "MAX_MODULUS_BITS",
    "ParamSet",
    "ParameterError",
    "assemble",
    "derive",
    "find_modulus",
    "from_header",
    "preimage_singular_value",
    "preimage_width",
    "validate",
]
