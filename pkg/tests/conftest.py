"""Shared helpers: seeded rational generators and enumeration oracles."""

from __future__ import annotations

import math
import random
from fractions import Fraction

import pytest

from tailcalc.laplace import MomentVector


def rational(rng: random.Random, lo: int = -6, hi: int = 6, den: int = 6) -> Fraction:
    return Fraction(rng.randint(lo, hi), rng.randint(1, den))


def positive_rational(rng: random.Random, hi: int = 6, den: int = 6) -> Fraction:
    return Fraction(rng.randint(1, hi), rng.randint(1, den))


def random_moments(rng: random.Random, m: int) -> MomentVector:
    """Synthetic moment vector with mu_0 = 1 and random rational entries."""
    return MomentVector(
        (Fraction(1),) + tuple(rational(rng) for _ in range(m)), synthetic=True
    )


class DiscreteLaw:
    """Finite law on rational atoms; the enumeration oracle for moments."""

    def __init__(self, atoms, weights):
        total = sum(weights)
        self.atoms = list(atoms)
        self.weights = [Fraction(w) / total for w in weights]

    @classmethod
    def random(cls, rng: random.Random, n_atoms: int = 3, nonnegative: bool = False):
        atoms = [
            positive_rational(rng) if nonnegative else rational(rng)
            for _ in range(n_atoms)
        ]
        weights = [rng.randint(1, 5) for _ in range(n_atoms)]
        return cls(atoms, weights)

    def moment(self, j: int) -> Fraction:
        return sum(w * a ** j for a, w in zip(self.atoms, self.weights))

    def moment_vector(self, m: int) -> MomentVector:
        return MomentVector(tuple(self.moment(j) for j in range(m + 1)))

    def sum_moment(self, other: "DiscreteLaw", j: int) -> Fraction:
        """E (X + Y)^j by direct double enumeration over atoms."""
        total = Fraction(0)
        for a, wa in zip(self.atoms, self.weights):
            for b, wb in zip(other.atoms, other.weights):
                total += wa * wb * (a + b) ** j
        return total

    def product_moment(self, other: "DiscreteLaw", j: int) -> Fraction:
        total = Fraction(0)
        for a, wa in zip(self.atoms, self.weights):
            for b, wb in zip(other.atoms, other.weights):
                total += wa * wb * (a * b) ** j
        return total


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240613)
