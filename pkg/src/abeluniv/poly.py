"""Dense complex polynomials and the four basic operators.

Coefficients are stored from index 0; a prescribed valuation shows up as
leading zeros.  Values are immutable.
"""
from __future__ import annotations

from fractions import Fraction
from math import lgamma

import numpy as np
from scipy.signal import czt


class Poly:
    """Finite complex coefficient vector a_0..a_d."""

    __slots__ = ("_c",)

    def __init__(self, coeffs=()):
        c = np.array(coeffs, dtype=complex).ravel()
        nz = np.flatnonzero(c)
        c = c[: nz[-1] + 1] if nz.size else c[:0]
        c.setflags(write=False)
        self._c = c

    @property
    def coeffs(self) -> np.ndarray:
        return self._c

    @property
    def degree(self):
        return self._c.size - 1 if self._c.size else None

    @property
    def valuation(self):
        nz = np.flatnonzero(self._c)
        return int(nz[0]) if nz.size else None

    def is_zero(self) -> bool:
        return self._c.size == 0

    def coeff(self, k: int) -> complex:
        return complex(self._c[k]) if 0 <= k < self._c.size else 0j

    def __len__(self):
        return self._c.size

    def __add__(self, other):
        other = as_poly(other)
        n = max(len(self), len(other))
        out = np.zeros(n, complex)
        out[: len(self)] += self._c
        out[: len(other)] += other._c
        return Poly(out)

    __radd__ = __add__

    def __neg__(self):
        return Poly(-self._c)

    def __sub__(self, other):
        return self + (-as_poly(other))

    def __rsub__(self, other):
        return as_poly(other) - self

    def __mul__(self, other):
        if isinstance(other, Poly):
            if self.is_zero() or other.is_zero():
                return Poly()
            return Poly(np.convolve(self._c, other._c))
        return Poly(self._c * complex(other))

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, Poly):
            return NotImplemented
        return self._c.shape == other._c.shape and bool(np.all(self._c == other._c))

    def __hash__(self):
        return hash(self._c.tobytes())

    def __call__(self, z):
        return evaluate(self, z)

    def __repr__(self):
        return f"Poly(deg={self.degree}, val={self.valuation})"

    def to_json(self):
        return [[float(a.real), float(a.imag)] for a in self._c]

    @classmethod
    def from_json(cls, data):
        return cls([complex(re, im) for re, im in data])

    @classmethod
    def monomial(cls, k: int, a: complex = 1.0):
        c = np.zeros(k + 1, complex)
        c[k] = a
        return cls(c)


def as_poly(p) -> Poly:
    if isinstance(p, Poly):
        return p
    if np.isscalar(p):
        return Poly([p])
    return Poly(p)


class Series(Poly):
    """Truncation sum_{k<=N} P_k kept as one coefficient vector."""

    __slots__ = ("stage_count",)

    def __init__(self, coeffs=(), stage_count: int = 0):
        super().__init__(coeffs)
        self.stage_count = int(stage_count)

    def add_stage(self, p) -> "Series":
        s = Poly.__add__(self, as_poly(p))
        return Series(s.coeffs, self.stage_count + 1)


def evaluate(p, z):
    """Horner evaluation; scalar in, scalar out."""
    p = as_poly(p)
    z = np.asarray(z, dtype=complex)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    c = p.coeffs
    out = np.zeros(z.shape, complex)
    if c.size:
        v = p.valuation
        for a in c[:v - 1:-1] if v else c[::-1]:
            out = out * z + a
        if v:
            out = out * z ** v
    return complex(out[0]) if scalar else out


def eval_arc(p, rho: float, theta0: float, dtheta: float, m: int) -> np.ndarray:
    """Values at rho*exp(i(theta0 + j*dtheta)), j < m, by the chirp z-transform."""
    p = as_poly(p)
    c = p.coeffs
    if c.size == 0:
        return np.zeros(m, complex)
    k = np.arange(c.size)
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        x = c * np.exp(k * np.log(rho)) if rho > 0 else c[:1]
        if x.size == 1:
            return np.full(m, x[0], complex)
        # a^{-n} w^{nk} with a = e^{-i theta0}, w = e^{i dtheta}
        return czt(x, m, np.exp(1j * dtheta), np.exp(-1j * theta0))


def eval_circle(p, rho: float, m: int) -> np.ndarray:
    """Values at the m-th roots of unity scaled by rho (coefficients folded mod m)."""
    p = as_poly(p)
    c = p.coeffs
    buf = np.zeros(m, complex)
    if c.size:
        k = np.arange(c.size)
        with np.errstate(under="ignore", over="ignore", invalid="ignore"):
            np.add.at(buf, k % m, c * np.exp(k * np.log(rho)) if rho > 0 else (k == 0) * c)
    return np.fft.ifft(buf) * m


def partial_sum_at(f, n: int, zeta):
    """S_n(f)(zeta)."""
    f = as_poly(f)
    return evaluate(Poly(f.coeffs[: n + 1]), zeta)


def cesaro_sum_at(f, lam: int, zeta):
    """(1/(lam+1)) * sum_{j<=lam} S_j(f)(zeta)."""
    f = as_poly(f)
    c = f.coeffs[: lam + 1]
    # coefficient a_k enters S_j for j = k..lam
    w = (lam + 1 - np.arange(c.size)) / (lam + 1)
    return evaluate(Poly(c * w), zeta)


def falling(k, l: int):
    """k(k-1)...(k-l+1), vectorised over k."""
    k = np.asarray(k, dtype=float)
    out = np.ones_like(k)
    for i in range(l):
        out = out * (k - i)
    return out


def derivative(p, l: int = 1) -> Poly:
    p = as_poly(p)
    c = p.coeffs
    if l == 0:
        return p
    if c.size <= l:
        return Poly()
    k = np.arange(l, c.size)
    return Poly(c[l:] * falling(k, l))


def dilate(p, r: float) -> Poly:
    """p(r z): a_k -> a_k r^k."""
    p = as_poly(p)
    c = p.coeffs
    if r == 0:
        return Poly(c[:1])
    k = np.arange(c.size)
    with np.errstate(under="ignore"):
        return Poly(c * np.exp(k * np.log(r)))


def weighted_abs_sum(p, radius: float, l: int = 0) -> float:
    """sum_k |a_k| k(k-1)..(k-l+1) radius^(k-l): a rigorous bound for sup_{|z|<=radius} |p^(l)|."""
    p = as_poly(p)
    c = p.coeffs
    if c.size <= l:
        return 0.0
    k = np.arange(l, c.size)
    a = np.abs(c[l:])
    nz = a > 0
    if not nz.any():
        return 0.0
    k, a = k[nz], a[nz]
    logt = np.log(a) + np.array([lgamma(x + 1) - lgamma(x - l + 1) for x in k]) if l else np.log(a)
    if radius == 0:
        return float(a[0] * (k[0] == l) * np.exp(lgamma(l + 1)))
    logt = logt + (k - l) * np.log(radius)
    m = logt.max()
    return float(np.exp(m) * np.exp(logt - m).sum())


# -- exact arithmetic on dyadic coefficients --------------------------------

def dyadic_ints(values):
    """Write floats as integers times a common power of two: returns (ints, e)."""
    fr = [Fraction(float(x)) for x in values]
    e = 0
    for f in fr:
        d = f.denominator
        if d > 1:
            e = max(e, d.bit_length() - 1)
    return [f.numerator * ((1 << e) // f.denominator) for f in fr], -e


def exact_coeffs(p):
    """Real and imaginary parts as Fractions (floats are dyadic, so this is exact)."""
    p = as_poly(p)
    return [(Fraction(float(a.real)), Fraction(float(a.imag))) for a in p.coeffs]


def exact_partial_sums(p, n: int, zeta=1):
    """S_0..S_n of p at zeta in {1, R} (real zeta) as Fractions of real and imaginary parts."""
    zr = Fraction(zeta)
    ex = exact_coeffs(p)
    out = []
    re = im = Fraction(0)
    pw = Fraction(1)
    for k in range(n + 1):
        if k < len(ex):
            re += ex[k][0] * pw
            im += ex[k][1] * pw
        out.append((re, im))
        pw *= zr
    return out
