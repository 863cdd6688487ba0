"""Bookkeeping sequences: target polynomials, schedulers and the epsilon budget."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import count
from math import isqrt

from .poly import Poly

SCHEDULE_VERSION = "cantor-iterated/1"


def pair(x: int, y: int) -> int:
    """Cantor pairing."""
    return (x + y) * (x + y + 1) // 2 + y


def unpair(n: int) -> tuple[int, int]:
    w = (isqrt(8 * n + 1) - 1) // 2
    t = w * (w + 1) // 2
    y = n - t
    return w - y, y


def schedule_pair(n: int) -> tuple[int, int]:
    """(alpha(n), beta(n)): unpair n, discard the outer index, unpair again.

    The fiber of (a, b) is {pair(pair(a, b), y) : y >= 0}, hence infinite.
    """
    x, _ = unpair(n)
    return unpair(x)


def schedule_triple(n: int) -> tuple[int, int, int]:
    """(psi1, psi2, psi3) from the pair scheduler and a 3-way pairing."""
    x, _ = unpair(n)
    a, bc = unpair(x)
    b, c = unpair(bc)
    return a, b, c


def pair_fiber_bound(B: int, reps: int = 3) -> int:
    """T such that every (a, b) with a, b < B appears at least `reps` times below T."""
    x = pair(B - 1, B - 1)
    return pair(x, reps - 1) + 1


def triple_fiber_bound(B: int, reps: int = 3) -> int:
    x = pair(B - 1, pair(B - 1, B - 1))
    return pair(x, reps - 1) + 1


@dataclass(frozen=True)
class EpsilonBudget:
    """eps_n = c * 2^-n; sum 2c."""

    c: Fraction = Fraction(1, 16)

    def __call__(self, n: int) -> float:
        return float(self.exact(n))

    def exact(self, n: int) -> Fraction:
        return Fraction(self.c) / (1 << n)

    def tail(self, n: int) -> float:
        """sum_{j>=n} eps_j."""
        return float(2 * Fraction(self.c) / (1 << n))

    @property
    def total(self) -> Fraction:
        return 2 * Fraction(self.c)


DEFAULT_BUDGET = EpsilonBudget()  # eps_n = 2^-(n+4)


# -- dyadic rational polynomials -----------------------------------------------
#
# A polynomial is encoded by (degree d, denominator exponent j, integer numerators
# for re/im of a_0..a_d).  Weight = d + j + sum |numerators|.  Canonical forms:
# top coefficient nonzero when d > 0, numerators not all even when j > 0.
# Within a weight the order is (d, j, zigzag codes of imaginary parts, then real).


def _zigzag(x: int) -> int:
    return 2 * x - 1 if x > 0 else -2 * x


def _signed_compositions(total: int, slots: int):
    """Integer vectors of given length with sum of absolute values == total."""
    if slots == 0:
        if total == 0:
            yield ()
        return
    for first in range(total + 1):
        for rest in _signed_compositions(total - first, slots - 1):
            if first == 0:
                yield (0,) + rest
            else:
                yield (first,) + rest
                yield (-first,) + rest


def _weight_block(w: int):
    items = []
    for d in range(w + 1):
        for j in range(w - d + 1):
            s = w - d - j
            for nums in _signed_compositions(s, 2 * (d + 1)):
                re, im = nums[: d + 1], nums[d + 1:]
                if d > 0 and re[d] == 0 and im[d] == 0:
                    continue
                if j > 0 and all(x % 2 == 0 for x in nums):
                    continue
                key = (d, j, tuple(_zigzag(x) for x in im), tuple(_zigzag(x) for x in re))
                items.append((key, d, j, re, im))
    items.sort(key=lambda t: t[0])
    return [(d, j, re, im) for _, d, j, re, im in items]


class _Enumerator:
    def __init__(self):
        self.items = []
        self.weight = -1

    def extend_to(self, n: int):
        while len(self.items) <= n:
            self.weight += 1
            self.items.extend(_weight_block(self.weight))


_ENUM = _Enumerator()


def rational_code(n: int):
    """(d, j, re numerators, im numerators) of the n-th polynomial."""
    _ENUM.extend_to(n)
    return _ENUM.items[n]


@lru_cache(maxsize=4096)
def rational_polynomial(n: int) -> Poly:
    """n-th dyadic-rational polynomial; index 0 is the zero polynomial."""
    d, j, re, im = rational_code(n)
    s = 2.0 ** -j
    return Poly([complex(a * s, b * s) for a, b in zip(re, im)])


def exact_rational_coeffs(n: int):
    d, j, re, im = rational_code(n)
    den = 1 << j
    return [(Fraction(a, den), Fraction(b, den)) for a, b in zip(re, im)]


def find_rational_index(p: Poly, limit: int = 10 ** 6):
    """Index of p in the enumeration (search), or None."""
    c = list(p.coeffs)
    for n in range(limit):
        q = rational_polynomial(n) if n < 4096 else _poly_from_code(rational_code(n))
        if len(q.coeffs) == len(c) and all(q.coeffs == c):
            return n
    return None


def _poly_from_code(code) -> Poly:
    d, j, re, im = code
    s = 2.0 ** -j
    return Poly([complex(a * s, b * s) for a, b in zip(re, im)])


def restricted_enumeration(a: complex, start: int = 0):
    """Yields (index, p) with |p(1) - a| > 1, in enumeration order."""
    for n in count(start):
        p = rational_polynomial(n) if n < 4096 else _poly_from_code(rational_code(n))
        if abs(p(1.0) - a) > 1:
            yield n, p


def restricted_polynomial(a: complex, k: int):
    """k-th element (index, p) of the restricted stream."""
    for i, item in enumerate(restricted_enumeration(a)):
        if i == k:
            return item
