"""Exact arithmetic in the truncated operator ring R_m[D].

Elements are constant-coefficient differential operators ``sum_j p_j D^j``
taken modulo the ideal generated by ``D^(m+1)``.  A law with finite raw
moments ``mu_0..mu_m`` is represented by the operator with coefficients
``(-1)^j mu_j / j!``; under this map convolution of laws becomes the
truncated Cauchy product, which is what makes the whole tail calculus
computable.

Scalars are duck-typed: ``int``, ``fractions.Fraction``, ``float`` and
``sympy.Expr`` all work, and the arithmetic is exact whenever the inputs
are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterator, Sequence

Scalar = Any


class OrderMismatchError(ValueError):
    """Two ring elements of different truncation order were combined."""


class NotInvertibleError(ValueError):
    """Inversion was requested for an element with vanishing constant term."""


def _div(x: Scalar, y: Scalar) -> Scalar:
    """Exact division; int/int is promoted to Fraction instead of float."""
    if isinstance(x, int) and isinstance(y, int):
        return Fraction(x, y)
    return x / y


def _known_negative(x: Scalar) -> bool:
    """True only when x is provably negative (symbolic values stay False)."""
    if isinstance(x, (int, float, Fraction)):
        return x < 0
    return bool(getattr(x, "is_negative", None))


# ---------------------------------------------------------------------------
# Moment vectors


@dataclass(frozen=True)
class MomentVector:
    """Raw moments ``mu_0..mu_m`` of a distribution.

    ``synthetic`` marks vectors that do not come from an actual probability
    law (free parameters in constructions, residual bookkeeping); those skip
    the positive-variance sanity check.
    """

    mu: tuple
    synthetic: bool = False

    def __post_init__(self) -> None:
        if len(self.mu) == 0:
            raise ValueError("moment vector needs at least mu_0")
        if self.mu[0] != 1:
            raise ValueError("mu_0 must equal 1")
        if not self.synthetic and len(self.mu) >= 3 and _known_negative(self.sigma2):
            raise ValueError("non-synthetic moment vector has negative variance")

    @property
    def m(self) -> int:
        return len(self.mu) - 1

    def moment(self, j: int) -> Scalar:
        return self.mu[j]

    @property
    def sigma2(self) -> Scalar:
        """Variance mu_2 - mu_1^2."""
        return self.mu[2] - self.mu[1] ** 2

    @property
    def kappa3(self) -> Scalar:
        """Third central moment."""
        mu1, mu2, mu3 = self.mu[1], self.mu[2], self.mu[3]
        return mu3 - 3 * mu2 * mu1 + 2 * mu1 ** 3

    @property
    def kappa4(self) -> Scalar:
        """Fourth central moment."""
        mu1, mu2, mu3, mu4 = self.mu[1], self.mu[2], self.mu[3], self.mu[4]
        return mu4 - 4 * mu3 * mu1 + 6 * mu2 * mu1 ** 2 - 3 * mu1 ** 4

    def truncated(self, m: int) -> "MomentVector":
        if m > self.m:
            raise ValueError(f"cannot extend moments from order {self.m} to {m}")
        return MomentVector(self.mu[: m + 1], self.synthetic)


def convolve_moments(a: MomentVector, b: MomentVector) -> MomentVector:
    """Moments of X+Y for independent X, Y: binomial convolution."""
    if a.m != b.m:
        raise OrderMismatchError(f"orders differ: {a.m} != {b.m}")
    mu = tuple(
        sum(math.comb(k, i) * a.mu[i] * b.mu[k - i] for i in range(k + 1))
        for k in range(a.m + 1)
    )
    return MomentVector(mu, synthetic=a.synthetic or b.synthetic)


def scale_moments(mv: MomentVector, c: Scalar) -> MomentVector:
    """Moments of cX: mu_j -> c^j mu_j."""
    return MomentVector(tuple(c ** j * mv.mu[j] for j in range(mv.m + 1)), mv.synthetic)


# ---------------------------------------------------------------------------
# Laplace characters


@dataclass(frozen=True)
class LaplaceCharacter:
    """Element ``sum_j coeff[j] D^j`` of R_m[D].

    For a probability law the coefficients are ``(-1)^j mu_j / j!`` and
    ``coeff[0] == 1``; generic operators (sums of characters, scaled
    characters) are allowed as long as callers respect the stated
    preconditions of each operation.
    """

    coeff: tuple

    @property
    def m(self) -> int:
        return len(self.coeff) - 1

    @property
    def moments(self) -> tuple:
        """Moments recovered from the coefficients: (-1)^j j! coeff[j]."""
        return tuple(
            (-1) ** j * math.factorial(j) * self.coeff[j] for j in range(self.m + 1)
        )

    def moment_vector(self, synthetic: bool = False) -> MomentVector:
        return MomentVector(self.moments, synthetic=synthetic)

    def truncated(self, m: int) -> "LaplaceCharacter":
        if m > self.m:
            raise ValueError("cannot extend a character to higher order")
        return LaplaceCharacter(self.coeff[: m + 1])


def identity_character(m: int) -> LaplaceCharacter:
    return LaplaceCharacter((1,) + (0,) * m)


def character_from_moments(mv: MomentVector) -> LaplaceCharacter:
    """Character with coefficients (-1)^j mu_j / j!."""
    coeff = tuple(
        Fraction((-1) ** j, math.factorial(j)) * mv.mu[j] for j in range(mv.m + 1)
    )
    char = LaplaceCharacter(coeff)
    # The defining relation l_j * j! * (-1)^j == mu_j must hold exactly.
    for j, mu in enumerate(char.moments):
        if not _same_scalar(mu, mv.mu[j]):
            raise AssertionError("moment/coefficient consistency violated")
    return char


def _same_scalar(x: Scalar, y: Scalar) -> bool:
    d = x - y
    if isinstance(d, (int, float, Fraction)):
        return d == 0
    try:
        return bool(d.equals(0)) if hasattr(d, "equals") else d == 0
    except Exception:
        return False


def compose(a: LaplaceCharacter, b: LaplaceCharacter) -> LaplaceCharacter:
    """Composition in R_m[D]: truncated Cauchy product of coefficient lists."""
    if a.m != b.m:
        raise OrderMismatchError(f"orders differ: {a.m} != {b.m}")
    m = a.m
    coeff = tuple(
        sum(a.coeff[j] * b.coeff[i - j] for j in range(i + 1)) for i in range(m + 1)
    )
    return LaplaceCharacter(coeff)


def add(a: LaplaceCharacter, b: LaplaceCharacter) -> LaplaceCharacter:
    if a.m != b.m:
        raise OrderMismatchError(f"orders differ: {a.m} != {b.m}")
    return LaplaceCharacter(tuple(x + y for x, y in zip(a.coeff, b.coeff)))


def subtract(a: LaplaceCharacter, b: LaplaceCharacter) -> LaplaceCharacter:
    if a.m != b.m:
        raise OrderMismatchError(f"orders differ: {a.m} != {b.m}")
    return LaplaceCharacter(tuple(x - y for x, y in zip(a.coeff, b.coeff)))


def scale(a: LaplaceCharacter, s: Scalar) -> LaplaceCharacter:
    return LaplaceCharacter(tuple(s * x for x in a.coeff))


def _ordered_partitions(n: int, max_len: int, max_part: int | None = None) -> Iterator[tuple]:
    """Non-increasing tuples of positive integers summing to n, length <= max_len."""
    if n == 0:
        yield ()
        return
    if max_len == 0:
        return
    top = n if max_part is None else min(n, max_part)
    for first in range(top, 0, -1):
        for rest in _ordered_partitions(n - first, max_len - 1, first):
            yield (first,) + rest


def invert_partitions(a: LaplaceCharacter) -> LaplaceCharacter:
    """Inverse in R_m[D] by explicit summation over ordered partitions.

    For each n the D^n coefficient of the inverse is
    ``sum_{p in P(m,n)} (-1)^(n+p_1) binom(p_1; Delta p) prod_k (mu_k/k!)^(Delta p)_k``
    where Delta p is the vector of successive differences of the partition
    padded with zeros.  Requires a nonzero constant term.
    """
    m = a.m
    l0 = a.coeff[0]
    if _same_scalar(l0, 0):
        raise NotInvertibleError("constant term vanishes; not invertible in R_m[D]")
    # Normalised "moments": mu_k of a/l0, i.e. (-1)^k k! coeff[k] / l0.
    mu = [
        _div((-1) ** k * math.factorial(k) * a.coeff[k], l0) for k in range(m + 1)
    ]
    out = []
    for n in range(m + 1):
        total: Scalar = 0
        for part in _ordered_partitions(n, m):
            p = list(part) + [0] * (m + 1 - len(part))
            dp = [p[k] - p[k + 1] for k in range(m)]  # (Delta p)_1 .. (Delta p)_m
            p1 = p[0]
            multinom = math.factorial(p1)
            for d in dp:
                multinom //= math.factorial(d)
            term: Scalar = Fraction((-1) ** (n + p1) * multinom, 1)
            for k in range(1, m + 1):
                if dp[k - 1]:
                    term = term * _div(mu[k], math.factorial(k)) ** dp[k - 1]
            total = total + term
        out.append(_div(total, l0))
    return LaplaceCharacter(tuple(out))


def invert_nilpotent(a: LaplaceCharacter) -> LaplaceCharacter:
    """Inverse via the Neumann sum ``sum_{k<=m} (Id - a)^(compose k)``.

    Id - a lies in the ideal (D), hence is nilpotent of nullity at most m+1,
    and the geometric sum terminates.  Requires constant term exactly 1.
    """
    if not _same_scalar(a.coeff[0], 1):
        raise NotInvertibleError("nilpotent inversion needs constant term 1")
    m = a.m
    n = subtract(identity_character(m), a)
    out = identity_character(m)
    power = identity_character(m)
    for _ in range(1, m + 1):
        power = compose(n, power)
        out = add(out, power)
    return out


def mellin_character(a: MomentVector, b: MomentVector) -> LaplaceCharacter:
    """Character of the product law XY: coefficient-wise moment products."""
    if a.m != b.m:
        raise OrderMismatchError(f"orders differ: {a.m} != {b.m}")
    coeff = tuple(
        Fraction((-1) ** j, math.factorial(j)) * a.mu[j] * b.mu[j]
        for j in range(a.m + 1)
    )
    return LaplaceCharacter(coeff)


def equilibrium_moments(b: MomentVector) -> MomentVector:
    """Moments of the stationary-excess law H(t) = mu_1^{-1} int_0^t Bbar.

    The j-th moment is ``mu_{j+1} / ((j+1) mu_1)``; input must carry one
    extra order.
    """
    mu1 = b.mu[1]
    if _known_negative(mu1) or _same_scalar(mu1, 0):
        raise ValueError("equilibrium law needs a positive mean")
    mu = tuple(
        _div(b.mu[j + 1], (j + 1) * mu1) if j else 1 for j in range(b.m)
    )
    return MomentVector(mu, synthetic=b.synthetic)


def equilibrium_character(b: MomentVector) -> LaplaceCharacter:
    """Character of the stationary-excess law, one order below the input.

    Coefficient j is ``-(1/mu_1) * l_{b,j+1}``, i.e. the character of
    ``-(L_{B,m+1} - Id)/(mu_1 D)``.
    """
    mu1 = b.mu[1]
    if _known_negative(mu1) or _same_scalar(mu1, 0):
        raise ValueError("equilibrium law needs a positive mean")
    cb = character_from_moments(b)
    coeff = tuple(_div(-cb.coeff[j + 1], mu1) for j in range(b.m))
    return LaplaceCharacter(coeff)


# ---------------------------------------------------------------------------
# Truncated formal power series (hosts Laplace-transform manipulations)


@dataclass(frozen=True)
class SeriesPoly:
    """Formal power series in one variable, truncated after degree `order`.

    All operations are exact modulo the truncation ideal for exact scalar
    inputs.
    """

    coeff: tuple

    @property
    def order(self) -> int:
        return len(self.coeff) - 1

    def __getitem__(self, k: int) -> Scalar:
        return self.coeff[k]

    @staticmethod
    def from_coefficients(coeff: Sequence[Scalar]) -> "SeriesPoly":
        return SeriesPoly(tuple(coeff))

    @staticmethod
    def constant(value: Scalar, order: int) -> "SeriesPoly":
        return SeriesPoly((value,) + (0,) * order)

    def _check(self, other: "SeriesPoly") -> None:
        if self.order != other.order:
            raise OrderMismatchError("series orders differ")

    def add(self, other: "SeriesPoly") -> "SeriesPoly":
        self._check(other)
        return SeriesPoly(tuple(x + y for x, y in zip(self.coeff, other.coeff)))

    def sub(self, other: "SeriesPoly") -> "SeriesPoly":
        self._check(other)
        return SeriesPoly(tuple(x - y for x, y in zip(self.coeff, other.coeff)))

    def scale(self, s: Scalar) -> "SeriesPoly":
        return SeriesPoly(tuple(s * x for x in self.coeff))

    def mul(self, other: "SeriesPoly") -> "SeriesPoly":
        self._check(other)
        n = self.order
        out = []
        for k in range(n + 1):
            out.append(sum(self.coeff[j] * other.coeff[k - j] for j in range(k + 1)))
        return SeriesPoly(tuple(out))

    def compose(self, inner: "SeriesPoly") -> "SeriesPoly":
        """self(inner); the inner series must have zero constant term."""
        self._check(inner)
        if not _same_scalar(inner.coeff[0], 0):
            raise ValueError("composition needs inner constant term 0")
        n = self.order
        out = SeriesPoly.constant(self.coeff[n], n)
        for j in range(n - 1, -1, -1):
            out = out.mul(inner)
            out = SeriesPoly((out.coeff[0] + self.coeff[j],) + out.coeff[1:])
        return out

    def reciprocal(self) -> "SeriesPoly":
        """Multiplicative inverse; needs a nonzero constant term."""
        c0 = self.coeff[0]
        if _same_scalar(c0, 0):
            raise NotInvertibleError("series with zero constant term")
        n = self.order
        out = [_div(1, c0) if not isinstance(c0, int) else Fraction(1, c0)]
        for k in range(1, n + 1):
            s = sum(self.coeff[j] * out[k - j] for j in range(1, k + 1))
            out.append(_div(-s, c0))
        return SeriesPoly(tuple(out))

    def exp(self) -> "SeriesPoly":
        """exp of a series with zero constant term."""
        if not _same_scalar(self.coeff[0], 0):
            raise ValueError("exp needs zero constant term")
        n = self.order
        out = [1]
        for k in range(1, n + 1):
            s = sum(j * self.coeff[j] * out[k - j] for j in range(1, k + 1))
            out.append(_div(s, k))
        return SeriesPoly(tuple(out))

    def log(self) -> "SeriesPoly":
        """log of a series with constant term 1."""
        if not _same_scalar(self.coeff[0], 1):
            raise ValueError("log needs constant term 1")
        n = self.order
        out: list = [0]
        for k in range(1, n + 1):
            s = sum(j * out[j] * self.coeff[k - j] for j in range(1, k))
            out.append(self.coeff[k] - _div(s, k))
        return SeriesPoly(tuple(out))

    def derivative(self) -> "SeriesPoly":
        """Formal derivative, one order lower."""
        if self.order == 0:
            return SeriesPoly((0,))
        return SeriesPoly(tuple((k + 1) * self.coeff[k + 1] for k in range(self.order)))


def moment_series(mv: MomentVector, order: int | None = None) -> SeriesPoly:
    """Moment generating series sum mu_j t^j / j! truncated at `order`."""
    n = mv.m if order is None else order
    if n > mv.m:
        raise ValueError("not enough moments for requested order")
    return SeriesPoly(
        tuple(_div(mv.mu[j], math.factorial(j)) for j in range(n + 1))
    )


def laplace_series(mv: MomentVector, order: int | None = None) -> SeriesPoly:
    """Laplace transform series sum (-1)^j mu_j u^j / j! truncated at `order`."""
    n = mv.m if order is None else order
    if n > mv.m:
        raise ValueError("not enough moments for requested order")
    return SeriesPoly(
        tuple(Fraction((-1) ** j, math.factorial(j)) * mv.mu[j] for j in range(n + 1))
    )
