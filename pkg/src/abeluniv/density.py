"""Densities of integer sets and of interval unions in [0,1), the explicit families
A(l,n) / Gamma(l,n) and their transfer under a reparametrisation r -> h_a(r)."""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from fractions import Fraction
from math import ceil, floor, fsum, isfinite
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import digamma

from .enumerations import pair


class NonMonotone(ValueError):
    pass


def _fs(x) -> str:
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}"


@dataclass
class DensitySet:
    """Either a sorted integer set (kind "integer") or a union of disjoint closed
    intervals of [0,1) with rational endpoints (kind "interval").

    `tail` is an optional analytic model of the part of an interval family lying
    beyond the explicit horizon: a list of (first j, gap G) progressions whose
    members carry the intervals of length (2/3)/(j^2-1) around 1-1/j.  `negated`
    marks the complement in [0,1).
    """

    kind: str
    integers: np.ndarray | None = None
    intervals: list = field(default_factory=list)
    horizon: int = 0
    tail: list = field(default_factory=list)
    negated: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "integer":
            a = np.asarray(self.integers if self.integers is not None else [], dtype=np.int64)
            if a.size and (np.any(np.diff(a) <= 0) or a[-1] > self.horizon):
                raise ValueError("integers must be strictly increasing and <= horizon")
            self.integers = a
            return
        ivs = [(Fraction(lo), Fraction(hi)) for lo, hi in self.intervals]
        ivs.sort()
        for (a, b), (c, d) in zip(ivs, ivs[1:]):
            if c <= b:
                raise ValueError("intervals must be pairwise disjoint")
        for a, b in ivs:
            if not (0 <= a <= b < 1):
                raise ValueError("intervals must lie in [0, 1)")
        self.intervals = ivs
        self._lo = np.array([float(a) for a, _ in ivs])
        self._hi = np.array([float(b) for _, b in ivs])
        lengths = np.array([float(b - a) for a, b in ivs])
        self._suffix = np.concatenate([np.cumsum(lengths[::-1])[::-1], [0.0]]) if ivs else np.zeros(1)

    @classmethod
    def from_integers(cls, ints, horizon):
        return cls("integer", np.array(sorted(set(int(i) for i in ints)), dtype=np.int64), horizon=horizon)

    @classmethod
    def from_intervals(cls, ivs, horizon=0, tail=(), meta=None):
        return cls("interval", intervals=list(ivs), horizon=horizon, tail=list(tail), meta=dict(meta or {}))

    # -- interval measure ---------------------------------------------------------------

    def tail_measure(self) -> float:
        """Measure of the analytic tail beyond the explicit intervals."""
        out = 0.0
        for j0, G in self.tail:
            # sum_{m>=0} (2/3) / ((j0 + mG)^2 - 1) = (1/(3G)) (psi((j0+1)/G) - psi((j0-1)/G))
            out += (digamma((j0 + 1) / G) - digamma((j0 - 1) / G)) / (3 * G)
        return float(out)

    def measure_from(self, t: float) -> float:
        """|Gamma ∩ [t, 1)| (tail included; the tail is assumed to lie above t)."""
        if self.kind != "interval":
            raise TypeError("interval set required")
        i = int(np.searchsorted(self._lo, t, side="left"))
        m = self._suffix[i]
        if i > 0 and self._hi[i - 1] > t:
            m += self._hi[i - 1] - t
        m += self.tail_measure() if self.tail else 0.0
        if self.negated:
            return (1.0 - t) - m
        return m

    def measure(self, lo: Fraction = Fraction(0), hi: Fraction = Fraction(1)) -> Fraction:
        """Exact measure of the explicit intervals inside [lo, hi]."""
        s = Fraction(0)
        for a, b in self.intervals:
            a2, b2 = max(a, Fraction(lo)), min(b, Fraction(hi))
            if b2 > a2:
                s += b2 - a2
        return s

    def complement(self) -> "DensitySet":
        out = DensitySet.from_intervals(self.intervals, self.horizon, self.tail, self.meta)
        out.negated = not self.negated
        return out

    def contains(self, x) -> bool:
        if self.kind == "integer":
            i = int(np.searchsorted(self.integers, x))
            return i < self.integers.size and self.integers[i] == x
        i = bisect.bisect_right(self.intervals, (Fraction(x), Fraction(2))) - 1
        inside = i >= 0 and self.intervals[i][0] <= x <= self.intervals[i][1]
        return inside != self.negated

    def to_json(self):
        if self.kind == "integer":
            return {"kind": "integer", "horizon": self.horizon, "integers": [int(i) for i in self.integers]}
        return {"kind": "interval", "horizon": self.horizon, "negated": self.negated,
                "intervals": [[_fs(a), _fs(b)] for a, b in self.intervals],
                "tail": [[int(j), int(g)] for j, g in self.tail], "meta": _jsonable(self.meta)}

    @classmethod
    def from_json(cls, d):
        if d["kind"] == "integer":
            return cls.from_integers(d["integers"], d["horizon"])
        out = cls.from_intervals([(Fraction(a), Fraction(b)) for a, b in d["intervals"]], d["horizon"],
                                 [tuple(t) for t in d.get("tail", [])], d.get("meta", {}))
        out.negated = d.get("negated", False)
        return out


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, Fraction):
        return _fs(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return x


# -- densities ------------------------------------------------------------------------------

def _window(N: int):
    lo = max(1, int(ceil(N / 2)))
    return np.arange(lo, int(N) + 1)


def natural_density(E: DensitySet, mode: str, N: int) -> float:
    """min (lower) or max (upper) over n in [N/2, N] of |E ∩ {1..n}| / n."""
    if E.kind != "integer":
        raise TypeError("integer set required")
    if N > E.horizon:
        raise ValueError("N exceeds the horizon of E")
    ns = _window(N)
    pos = E.integers[E.integers >= 1]
    counts = np.searchsorted(pos, ns, side="right")
    vals = counts / ns
    return float(vals.min() if mode == "lower" else vals.max())


def uniform_density(G: DensitySet, mode: str, N: int) -> float:
    """min (lower) or max (upper) over n in [N/2, N] of n |G ∩ [1-1/n, 1)|."""
    ns = _window(N)
    vals = np.array([n * G.measure_from(1.0 - 1.0 / n) for n in ns])
    return float(vals.min() if mode == "lower" else vals.max())


# -- the A(l,n) families ----------------------------------------------------------------------

def _block_base(L: int) -> int:
    """Smallest power of two >= 2L: every member is a multiple of it, so distinct members are >= 2L apart."""
    B = 1
    while B < 2 * max(L, 1):
        B *= 2
    return B


def a_family_params(L: int):
    """{(l, n): (first element, gap)}: A(l,n) = {B 2^p (2m+1) : m >= 0} with p = pair(l, n)."""
    B = _block_base(L)
    out = {}
    for l in range(L):
        for n in range(L):
            p = pair(l, n)
            out[(l, n)] = (B * 2 ** p, B * 2 ** (p + 1))
    return out


def make_A_families(L: int, H: int):
    """Pairwise disjoint A(l,n), l, n < L, up to H, with declared lower-density bounds.

    Members of A(l,n) have 2-adic valuation log2(B) + pair(l,n), hence the sets are
    disjoint; all members are multiples of B >= 2L, so |j - j'| >= 2L > n + n'.
    Both properties are verified up to H before returning.
    """
    if L < 1:
        raise ValueError("L >= 1")
    fams, bounds = {}, {}
    for key, (j0, G) in a_family_params(L).items():
        ints = np.arange(j0, H + 1, G, dtype=np.int64)
        fams[key] = DensitySet.from_integers(ints, H)
        fams[key].meta = {"first": j0, "gap": G}
        bounds[key] = Fraction(1, G)
    ok, info = verify_separation(fams, H)
    if not ok:
        raise RuntimeError(f"A-family construction failed: {info}")
    return fams, bounds


def verify_separation(fams: dict, H: int):
    """Exhaustive check up to H: disjointness, j >= n, and |j - j'| >= n + n' for j != j'."""
    owner = []
    for (l, n), E in fams.items():
        for j in E.integers:
            if j > H:
                break
            if j < n:
                return False, f"j={j} < n={n}"
            owner.append((int(j), n, (l, n)))
    owner.sort()
    if not owner:
        return True, {"pairs_checked": 0}
    nmax = max(n for _, n, _ in owner)
    checked = 0
    for i, (j, n, lab) in enumerate(owner):
        k = i + 1
        while k < len(owner) and owner[k][0] - j < 2 * nmax + 1:
            j2, n2, lab2 = owner[k]
            checked += 1
            if j2 == j:
                return False, f"{lab} and {lab2} share {j}"
            if j2 - j < n + n2:
                return False, f"{j} ({lab}) and {j2} ({lab2}) too close"
            k += 1
    return True, {"pairs_checked": checked, "elements": len(owner)}


# -- Gamma families -----------------------------------------------------------------------------

def lower_interval(j: int):
    j = Fraction(j)
    c = 1 - 1 / j
    return c - (1 / (j - 1) - 1 / j) / 3, c + (1 / j - 1 / (j + 1)) / 3


def _dyadic_blocks(count: int):
    """(N_i, M_i): N_0 = 1, M_i = N_i + 4 + i, N_{i+1} = M_i + 1."""
    out, N = [], 1
    for i in range(count):
        M = N + 4 + i
        out.append((N, M))
        N = M + 1
    return out


def make_Gamma_family(mode: str, L: int, H: int):
    """Labelled interval families Gamma(l,n), l, n < L.

    lower: intervals around 1-1/j, j in A(l,n) (j <= H explicit, analytic tail above).
    upper: dyadic blocks [1-2^-N_i, 1-2^-M_i], block u_m(l,n) = pair(pair(l,n), m).
    Returns ({(l,n): DensitySet}, info) where info carries the witnesses M (lower
    mode), the block table (upper mode) and local-finiteness witnesses.
    """
    fams = {}
    info = {"mode": mode, "L": L, "horizon": H}
    if mode == "lower":
        params = a_family_params(L)
        Ms = {}
        for key, (j0, G) in params.items():
            js = list(range(max(j0, 2), H + 1, G))
            ivs = [lower_interval(j) for j in js]
            nxt = js[-1] + G if js else max(j0, 2)
            fams[key] = DensitySet.from_intervals(ivs, H, [(nxt, G)], {"first": j0, "gap": G})
            Ms[key] = G           # j_m = G(m - 1/2) <= G m
        info["M"] = Ms
        info["declared_lower"] = {k: Fraction(2, 3 * M * M) for k, M in Ms.items()}
    elif mode == "upper":
        labels = [(l, n) for l in range(L) for n in range(L)]
        # enough blocks that every label owns at least one
        need = max(pair(pair(l, n), 0) for l, n in labels) + 1
        blocks = _dyadic_blocks(need + 1)
        table = {}
        for l, n in labels:
            ivs = []
            for m in range(len(blocks)):
                i = pair(pair(l, n), m)
                if i >= len(blocks):
                    break
                Ni, Mi = blocks[i]
                ivs.append((1 - Fraction(1, 2 ** Ni), 1 - Fraction(1, 2 ** Mi)))
                table.setdefault((l, n), []).append(i)
            fams[(l, n)] = DensitySet.from_intervals(ivs, H, (), {"blocks": table.get((l, n), [])})
        info["blocks"] = blocks
        info["owner"] = table
    else:
        raise ValueError("mode must be lower or upper")
    check_disjoint_family(fams)
    info["local_finiteness"] = local_finiteness_witness(fams, 100)
    return fams, info


def check_disjoint_family(fams: dict):
    allv = sorted((a, b, k) for k, G in fams.items() for a, b in G.intervals)
    for (a, b, k), (c, d, k2) in zip(allv, allv[1:]):
        if c <= b:
            raise ValueError(f"intervals of {k} and {k2} overlap")
    return True


def local_finiteness_witness(fams: dict, n_max: int):
    """For each n <= n_max, the (label, index) of members meeting [0, 1-1/n]."""
    out = {}
    for n in range(1, n_max + 1):
        t = 1 - Fraction(1, n)
        out[n] = [(k, i) for k, G in fams.items() for i, (a, b) in enumerate(G.intervals) if a <= t]
    return out


def upper_witness(G: DensitySet, horizon: int):
    """max over dyadic windows [2^k, 2^(k+1)] inside the horizon of the upper window density."""
    best, arg = 0.0, None
    k = 1
    while 2 ** (k + 1) <= horizon:
        v = uniform_density(G, "upper", 2 ** (k + 1))
        if v > best:
            best, arg = v, 2 ** (k + 1)
        k += 1
    return best, arg


# -- reparametrisations -------------------------------------------------------------------------

@dataclass
class Reparametrization:
    """h_a = h(a, .): increasing on [0,1), c <= h_a' <= C on [r0, 1)."""

    a: float
    h: Callable
    c: float
    C: float
    r0: float = 0.5
    name: str = "custom"
    inverse: Callable | None = None

    def __call__(self, r):
        return self.h(self.a, r)

    def inv(self, x: float) -> float:
        if self.inverse is not None:
            return self.inverse(self.a, x)
        return brentq(lambda r: self.h(self.a, r) - x, 0.0, 1.0 - 1e-300, xtol=1e-15, rtol=4e-16)

    def check_monotone(self, samples: int = 4096):
        r = np.linspace(0.0, 1.0, samples, endpoint=False)
        v = np.array([self(x) for x in r])
        if np.any(np.diff(v) <= 0):
            raise NonMonotone(f"h_a is not increasing for a={self.a}")
        return True


def affine(a: float) -> Reparametrization:
    return Reparametrization(a, lambda a, r: a * r + (1 - a), a, a, 0.0, "affine",
                             lambda a, x: (x - (1 - a)) / a)


def homographic(a: float, r0: float = 0.5) -> Reparametrization:
    """h(a,r) = 1 - a(1-r)/(a+(1-r)(1-a)); h_a'(r) = a^2/(a+(1-r)(1-a))^2, increasing to 1."""
    s0 = 1 - r0
    c = a * a / (a + s0 * (1 - a)) ** 2

    def inv(a, x):
        # 1 - x = a s / (a + s(1-a))  =>  s = a (1-x) / (a - (1-x)(1-a))
        y = 1 - x
        return 1 - a * y / (a - y * (1 - a))
    return Reparametrization(a, lambda a, r: 1 - a * (1 - r) / (a + (1 - r) * (1 - a)), c, 1.0, r0,
                             "homographic", inv)


def preimage(G: DensitySet, rep: Reparametrization) -> DensitySet:
    """h_a^{-1}(G ∩ (h_a(0), 1)) as an interval union.  Affine maps are inverted exactly; otherwise
    endpoints are inverted in floating point and then made exact."""
    rep.check_monotone()
    lo0 = rep(0.0)
    ivs = []
    if rep.name == "affine":
        # exact: r = (x - (1 - a)) / a with a as a dyadic rational
        A = Fraction(rep.a)
        for a, b in G.intervals:
            if b <= 1 - A:
                continue
            ivs.append(((max(a, 1 - A) - (1 - A)) / A, (b - (1 - A)) / A))
    for a, b in ([] if rep.name == "affine" else G.intervals):
        if float(b) <= lo0:
            continue
        x0 = rep.inv(max(float(a), lo0))
        x1 = rep.inv(float(b))
        if not (isfinite(x0) and isfinite(x1)) or x1 < x0:
            raise NonMonotone("inverse is not monotone on the family")
        ivs.append((Fraction(max(x0, 0.0)), Fraction(min(x1, np.nextafter(1.0, 0)))))
    # merge touching images (rounding can only make them touch, never overlap by more)
    ivs.sort()
    merged = []
    for a, b in ivs:
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(b, merged[-1][1]))
        else:
            merged.append((a, b))
    out = DensitySet.from_intervals(merged, G.horizon, (), {"pullback": rep.name, "a": rep.a})
    # the analytic tail sits next to 1, where h_a' -> h_a'(1)
    if G.tail:
        out.meta["tail_scale"] = 1.0 / _deriv_at_one(rep)
        out._tail_value = G.tail_measure() * out.meta["tail_scale"]
    return out


def _deriv_at_one(rep: Reparametrization) -> float:
    e = 1e-7
    return (rep(1 - e) - rep(1 - 2 * e)) / e


def _measure_with_pulled_tail(G: DensitySet, t: float) -> float:
    m = G.measure_from(t)
    return m + getattr(G, "_tail_value", 0.0)


def pullback_density_bound(G: DensitySet, rep: Reparametrization, N: int):
    """(measured lower uniform density of h_a^{-1}(G), (c/C) * measured lower uniform density of G)."""
    P = preimage(G, rep)
    ns = _window(N)
    measured = float(min(n * _measure_with_pulled_tail(P, 1.0 - 1.0 / n) for n in ns))
    base = uniform_density(G, "lower", N)
    bound = rep.c / rep.C * base
    return measured, bound
