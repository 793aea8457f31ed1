"""Star-asymptotic scales {t^-a (log t)^b} and their operator matrices.

A scale that is closed (up to the chosen cutoff) under differentiation and
under rescaling t -> t/c admits matrix representatives: D for the
derivative, M_c for rescaling, and, for every moment vector, the character
matrix ``sum_j (-1)^j mu_j / j! D^j``.  Tail expansions then become
vectors, and weighted-convolution asymptotics become products of small
lower-triangular matrices.

Exponents are sympy expressions.  Two exponents are comparable when their
difference is rational, or linear in a single symbol whose sign is pinned
down by a known lower bound on that symbol (e.g. a tail index known to
exceed the expansion order).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

import sympy

from .laplace import MomentVector, Scalar

Expr = Any  # sympy.Expr or plain number


class IncomparableExponentsError(ValueError):
    """The dominance order between two exponents cannot be decided."""


class ScaleError(ValueError):
    """Invalid scale construction request."""


def _ex(x) -> sympy.Expr:
    return sympy.expand(sympy.sympify(x))


def gap_sign(x, y, floors: Mapping[sympy.Symbol, Fraction] | None = None) -> int:
    """Sign of x - y (-1, 0, +1), or raise if undecidable.

    `floors` maps a symbol s to a bound with the meaning s > floor strictly;
    this decides signs of differences linear in s whenever the linear form
    is nonnegative (resp. nonpositive) at the floor.
    """
    d = _ex(x) - _ex(y)
    d = sympy.expand(d)
    if d.is_zero:
        return 0
    if d.is_number and d.is_real:
        return 1 if d > 0 else -1
    syms = sorted(d.free_symbols, key=str)
    if len(syms) == 1:
        s = syms[0]
        floor = (floors or {}).get(s)
        if floor is None and s.is_positive:
            floor = Fraction(0)  # positivity assumption acts as a floor
        if floor is not None:
            poly = sympy.Poly(d, s)
            if poly.degree() == 1:
                c1, c0 = poly.all_coeffs()
                if c1.is_Rational and c0.is_Rational:
                    at_floor = c1 * sympy.Rational(floor.numerator, floor.denominator) + c0
                    if c1 > 0 and at_floor >= 0:
                        return 1
                    if c1 < 0 and at_floor <= 0:
                        return -1
    raise IncomparableExponentsError(
        f"cannot order exponents (difference {d}); use a numeric tail index "
        "or supply a floor for the symbolic one"
    )


@dataclass(frozen=True)
class ScaleItem:
    """One scale element t^-a (log t)^b."""

    a: sympy.Expr
    b: sympy.Expr = sympy.S.Zero

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", _ex(self.a))
        object.__setattr__(self, "b", _ex(self.b))

    def key(self) -> tuple:
        return (self.a, self.b)


def _item_cmp(x: ScaleItem, y: ScaleItem, floors) -> int:
    """Dominance order: (a, b) before (a', b') iff a < a', or a = a', b > b'."""
    sa = gap_sign(x.a, y.a, floors)
    if sa != 0:
        return sa
    sb = gap_sign(x.b, y.b, floors)
    return -sb


@dataclass(frozen=True)
class ScaleBasis:
    """Ordered star-asymptotic scale with a hard exponent cutoff."""

    items: tuple
    cutoff: sympy.Expr
    floors: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "cutoff", _ex(self.cutoff))
        fl = dict(self.floors)
        for i in range(len(self.items) - 1):
            if _item_cmp(self.items[i], self.items[i + 1], fl) >= 0:
                raise ScaleError("scale items must be strictly dominance-ordered")
        for it in self.items:
            if gap_sign(it.a, self.cutoff, fl) > 0:
                raise ScaleError("scale item beyond cutoff")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def floor_map(self) -> dict:
        return dict(self.floors)

    def index_of(self, a, b=0) -> int | None:
        key = (_ex(a), _ex(b))
        for i, it in enumerate(self.items):
            if it.key() == key:
                return i
        return None

    def exponent_pairs(self) -> list[tuple]:
        return [it.key() for it in self.items]


def close_under_derivative(
    seed: Iterable,
    cutoff,
    floors: Mapping[sympy.Symbol, Fraction] | None = None,
) -> ScaleBasis:
    """Smallest scale containing `seed` and closed under a -> a+1 up to cutoff.

    Seed entries may be exponents a, pairs (a, b) or ScaleItems; entries
    beyond the cutoff are dropped, duplicates merged, and log powers carry
    through power steps unchanged.
    """
    fl = dict(floors or {})
    cut = _ex(cutoff)
    items: list[ScaleItem] = []

    def _push(it: ScaleItem) -> bool:
        if gap_sign(it.a, cut, fl) > 0:
            return False
        for have in items:
            if it.key() == have.key():
                return False
        items.append(it)
        return True

    queue: list[ScaleItem] = []
    for entry in seed:
        if isinstance(entry, ScaleItem):
            it = entry
        elif isinstance(entry, (tuple, list)):
            it = ScaleItem(*entry)
        else:
            it = ScaleItem(entry)
        queue.append(it)
    if not queue:
        raise ScaleError("empty seed")
    while queue:
        it = queue.pop()
        if _push(it):
            queue.append(ScaleItem(it.a + 1, it.b))

    import functools

    items.sort(key=functools.cmp_to_key(lambda x, y: _item_cmp(x, y, fl)))
    return ScaleBasis(tuple(items), cut, tuple(sorted(fl.items(), key=str)))


def derivative_matrix(basis: ScaleBasis) -> list[list[Scalar]]:
    """Matrix of d/dt on the scale.

    d/dt of t^-a (log t)^b is -a t^-(a+1) (log t)^b + b t^-(a+1) (log t)^(b-1);
    image components absent from the basis (beyond the cutoff, or a missing
    log-power neighbour) are truncated to zero.
    """
    n = len(basis)
    mat: list[list[Scalar]] = [[sympy.S.Zero] * n for _ in range(n)]
    index = {it.key(): i for i, it in enumerate(basis.items)}
    for i, it in enumerate(basis.items):
        j = index.get((_ex(it.a + 1), it.b))
        if j is not None:
            mat[j][i] = mat[j][i] - it.a
        if not it.b.is_zero:
            j2 = index.get((_ex(it.a + 1), _ex(it.b - 1)))
            if j2 is not None:
                mat[j2][i] = mat[j2][i] + it.b
    return mat


def scaling_matrix(basis: ScaleBasis, c) -> list[list[Scalar]]:
    """Matrix of the rescaling t -> t/c (c > 0) on the scale.

    t^-a (log t - log c)^b expands over the basis elements t^-a (log t)^(b-k)
    with coefficients ``ff(b, k)/k! (-1)^k c^a (log c)^k``; a pure-power scale
    therefore gets the diagonal matrix diag(c^a).
    """
    c = sympy.sympify(c)
    if c.is_number and not c.is_positive:
        raise ScaleError("scaling constant must be positive")
    n = len(basis)
    mat: list[list[Scalar]] = [[sympy.S.Zero] * n for _ in range(n)]
    for j, src in enumerate(basis.items):
        for i, dst in enumerate(basis.items):
            if not (dst.a - src.a).is_zero:
                continue
            k = sympy.expand(src.b - dst.b)
            if not (k.is_integer and k >= 0):
                continue
            k = int(k)
            coeff = (
                sympy.ff(src.b, k)
                / math.factorial(k)
                * (-1) ** k
                * c ** src.a
                * sympy.log(c) ** k
            )
            mat[i][j] = coeff
    return mat


def scaling_vector(basis: ScaleBasis, c, p: Sequence[Scalar]) -> list[Scalar]:
    """Apply the rescaling matrix to a coefficient vector."""
    return mat_vec(scaling_matrix(basis, c), list(p))


def operator_matrix(coeffs: Sequence[Scalar], D: list[list[Scalar]]) -> list[list[Scalar]]:
    """Polynomial ``sum_j coeffs[j] D^j`` in the derivative matrix."""
    n = len(D)
    out = mat_scale(mat_eye(n), coeffs[0])
    power = mat_eye(n)
    for j in range(1, len(coeffs)):
        power = mat_mul(power, D)
        if coeffs[j] == 0:
            continue
        out = mat_add(out, mat_scale(power, coeffs[j]))
    return out


def character_matrix(mv: MomentVector, D: list[list[Scalar]]) -> list[list[Scalar]]:
    """Matrix representative of the character of `mv` on the scale."""
    coeffs = [
        Fraction((-1) ** j, math.factorial(j)) * mv.mu[j] for j in range(mv.m + 1)
    ]
    return operator_matrix(coeffs, D)


# ---------------------------------------------------------------------------
# Small dense linear algebra over duck-typed scalars


def mat_eye(n: int) -> list[list[Scalar]]:
    return [[1 if i == j else 0 for j in range(n)] for i in range(n)]


def mat_zeros(n: int) -> list[list[Scalar]]:
    return [[0] * n for _ in range(n)]


def mat_add(a, b):
    return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def mat_sub(a, b):
    return [[x - y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def mat_scale(a, s):
    return [[s * x for x in row] for row in a]


def mat_mul(a, b):
    n, k, m = len(a), len(b), len(b[0])
    out = [[0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            acc = 0
            for t in range(k):
                if a[i][t] == 0 or b[t][j] == 0:
                    continue
                acc = acc + a[i][t] * b[t][j]
            out[i][j] = acc
    return out


def mat_vec(a, v):
    return [
        sum((x * y for x, y in zip(row, v) if x != 0 and y != 0), start=0)
        for row in a
    ]


def mat_map(a, f):
    return [[f(x) for x in row] for row in a]


def lower_solve(L, rhs):
    """Forward substitution for a lower-triangular system L x = rhs."""
    n = len(L)
    x: list[Scalar] = []
    for i in range(n):
        acc = rhs[i]
        for j in range(i):
            if L[i][j] != 0 and x[j] != 0:
                acc = acc - L[i][j] * x[j]
        diag = L[i][i]
        if diag == 0:
            raise ZeroDivisionError("singular lower-triangular system")
        if isinstance(acc, int) and isinstance(diag, int):
            x.append(Fraction(acc, diag))
        else:
            x.append(acc / diag)
    return x


def lower_inverse(L):
    """Inverse of a lower-triangular matrix by columns of forward solves."""
    n = len(L)
    cols = [lower_solve(L, [1 if i == j else 0 for i in range(n)]) for j in range(n)]
    return [[cols[j][i] for j in range(n)] for i in range(n)]
