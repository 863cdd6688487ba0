"""Replayable inequality records shared by the builders and the verifier.

A check is a plain dict.  Grid checks ("sup") describe a quantity
sup_{z in region} |Q^(deriv)(z) - T(z)| where Q is a signed sum of stored stage
polynomials and T a serialisable target; exact checks name a function from
EXACT_CHECKS that recomputes an integer violation count from the coefficients.
"""
from __future__ import annotations

from fractions import Fraction
from math import ceil

import numpy as np

from .engine import ApproximationTarget, sup_error, VERIFY_FACTOR
from .poly import Poly, as_poly, dilate
from .regions import Region


# -- polynomial encoding ----------------------------------------------------------

def poly_to_json(p: Poly):
    v = p.valuation
    if v is None:
        return {"v": 0, "c": []}
    return {"v": v, "c": [[float(a.real), float(a.imag)] for a in p.coeffs[v:]]}


def poly_from_json(d) -> Poly:
    if isinstance(d, list):
        return Poly.from_json(d)
    c = np.zeros(d["v"] + len(d["c"]), complex)
    for i, (re, im) in enumerate(d["c"]):
        c[d["v"] + i] = complex(re, im)
    return Poly(c)


def frac_str(x: Fraction) -> str:
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}"


def frac_parse(s) -> Fraction:
    return Fraction(s)


# -- targets --------------------------------------------------------------------------

def target_poly(p: Poly, scale: float = 1.0, radial: bool = False):
    return {"kind": "poly", "coeffs": poly_to_json(p), "scale": float(scale), "radial": bool(radial)}


def target_const(c: complex):
    c = complex(c)
    return {"kind": "const", "value": [c.real, c.imag]}


def target_bridge(w0: complex, w1: complex, r0: float, r1: float, a: complex, margin: float):
    return {"kind": "bridge", "w0": [complex(w0).real, complex(w0).imag], "w1": [complex(w1).real, complex(w1).imag],
            "r0": float(r0), "r1": float(r1), "a": [complex(a).real, complex(a).imag], "margin": float(margin),
            "profile": "smootherstep"}


def smootherstep(s):
    """C^2 ramp 0 -> 1 on [0, 1], flat at both ends."""
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s * s)


def bridge_value(spec_or_path, r0, r1):
    """z -> h(profile((|z| - r0) / (r1 - r0))) for a bridge path h."""
    h = spec_or_path
    return lambda z: h(smootherstep((np.abs(z) - r0) / (r1 - r0)))


class BridgeInfeasible(ValueError):
    pass


def bridge_radius(w0, w1, a, margin):
    """Push-out radius: 1 + margin, reduced so neither endpoint moves; must stay above 1."""
    rho = min(1 + margin, abs(w0 - a), abs(w1 - a))
    if not rho > 1:
        raise BridgeInfeasible(f"bridge endpoint inside the closed disc D({a}, 1)")
    return rho


def bridge_path(w0, w1, a, margin):
    """Straight path w0 -> w1; the stretch inside D(a, rho) is replaced by the shorter arc of
    |w - a| = rho between the entry and exit points (angle linear in t), so the path is
    continuous, keeps both endpoints and never enters D(a, 1)."""
    rho = bridge_radius(w0, w1, a, margin)
    d = w1 - w0
    # |w0 - a + t d|^2 = rho^2
    A = abs(d) ** 2
    B = 2 * ((w0 - a).conjugate() * d).real
    C = abs(w0 - a) ** 2 - rho ** 2
    disc_ = B * B - 4 * A * C
    if A == 0 or disc_ <= 0:
        cut = None
    else:
        t0 = (-B - np.sqrt(disc_)) / (2 * A)
        t1 = (-B + np.sqrt(disc_)) / (2 * A)
        cut = (max(t0, 0.0), min(t1, 1.0)) if t1 > 0 and t0 < 1 else None
    if cut is not None:
        th0 = np.angle(w0 + cut[0] * d - a)
        th1 = np.angle(w0 + cut[1] * d - a)
        dth = (th1 - th0 + np.pi) % (2 * np.pi) - np.pi
        if abs(abs(dth) - np.pi) < 1e-12:
            dth = np.pi

    def h(t):
        t = np.asarray(t, float)
        w = np.where(t >= 1, w1, w0 + t * d)
        if cut is None or cut[1] <= cut[0]:
            return w + 0j
        s = np.clip((t - cut[0]) / (cut[1] - cut[0]), 0.0, 1.0)
        arc = a + rho * np.exp(1j * (th0 + s * dth))
        inside = (t > cut[0]) & (t < cut[1])
        return np.where(inside, arc, w)
    return h


def target_fn(spec):
    """Callable z -> values for a target spec (None means zero)."""
    if spec is None:
        return None
    k = spec["kind"]
    if k == "const":
        return complex(*spec["value"])
    if k == "poly":
        p = poly_from_json(spec["coeffs"])
        s = spec["scale"]
        if spec["radial"]:
            return lambda z: p(np.where(np.abs(z) > 0, z / np.where(np.abs(z) > 0, np.abs(z), 1), 1))
        return p if s == 1.0 else dilate(p, 1.0 / s)
    if k == "bridge":
        w0, w1, a = complex(*spec["w0"]), complex(*spec["w1"]), complex(*spec["a"])
        r0, r1 = spec["r0"], spec["r1"]
        h = bridge_path(w0, w1, a, spec["margin"])
        return bridge_value(h, r0, r1)
    if k == "sum":
        fs = [target_fn(s) for s in spec["parts"]]
        if all(f is None or isinstance(f, (Poly, complex)) for f in fs):
            return sum((as_poly(f) for f in fs if f is not None), Poly())
        return lambda z: sum(_vals(f, z) for f in fs)
    raise ValueError(f"unknown target kind {k}")


def target_sum(*parts):
    return {"kind": "sum", "parts": [p for p in parts if p is not None]}


def _vals(f, z):
    z = np.asarray(z, complex)
    if f is None:
        return np.zeros(z.shape, complex)
    if isinstance(f, Poly):
        return f(z)
    if callable(f):
        return np.broadcast_to(np.asarray(f(z), complex), z.shape)
    return np.full(z.shape, complex(f))


# -- check constructors -----------------------------------------------------------------

def sup_check(cid, terms, region: Region, target, bound, deriv: int = 0, nominal=None, note=None,
              soft: bool = False):
    """terms: list of (stage index, poly name, sign) or ("upto", n) / ("series",).

    A soft check records the achieved value as its bound when the nominal one is missed."""
    return {"id": cid, "kind": "sup", "terms": [list(t) for t in terms], "region": region.to_json(),
            "target": target, "deriv": int(deriv), "bound": float(bound),
            "nominal": float(nominal if nominal is not None else bound), "note": note, "soft": bool(soft)}


def exact_check(cid, fn, args, note=None, advisory: bool = False):
    """Advisory checks are recomputed and reported but do not decide pass/fail."""
    return {"id": cid, "kind": "exact", "fn": fn, "args": args, "bound": 0, "nominal": 0, "note": note,
            "advisory": bool(advisory)}


def value_check(cid, measured, bound, note=None):
    """A recorded scalar whose replay is the same computation done by the builder (kept for the log)."""
    return {"id": cid, "kind": "value", "measured": float(measured), "bound": float(bound),
            "nominal": float(bound), "note": note}


# -- neighbourhoods of the universality targets ------------------------------------------

class NeighborhoodSpec:
    """V = {h : sup_{K_l} |h - center| < radius}, K_l the l-th exhaustion set of the circle."""

    def __init__(self, carrier: int, center: Poly, radius: float):
        self.carrier = int(carrier)
        self.center = as_poly(center)
        self.radius = float(radius)

    def carrier_region(self, r: float = 1.0):
        from .regions import exhaustion_K
        return exhaustion_K(self.carrier, r)

    def to_json(self):
        return {"carrier": self.carrier, "center": poly_to_json(self.center), "radius": self.radius}

    @classmethod
    def from_json(cls, d):
        return cls(d["carrier"], poly_from_json(d["center"]), d["radius"])

    def __repr__(self):
        return f"NeighborhoodSpec(K_{self.carrier}, deg {self.center.degree}, {self.radius})"


def default_neighborhood(l: int, n: int) -> NeighborhoodSpec:
    """V_n(l): center the n-th rational polynomial, radius 2^-(n mod 8)-1."""
    from .enumerations import rational_polynomial
    return NeighborhoodSpec(l, rational_polynomial(n), 2.0 ** (-(n % 8) - 1))


# -- evaluation ------------------------------------------------------------------------------

class PolyStore:
    """Resolves term references against a StagedFunction-like object, with caching."""

    def __init__(self, sf):
        self.sf = sf
        self._cache = {}

    def term(self, t) -> Poly:
        key = tuple(t)
        if key in self._cache:
            return self._cache[key]
        if t[0] == "series":
            p = self.sf.series
        elif t[0] == "upto":
            p = Poly()
            for st in self.sf.stages:
                if st.index <= t[1]:
                    for q in st.polys.values():
                        p = p + q
        else:
            idx, name = t[0], t[1]
            st = self.sf.stage(idx)
            p = st.polys.get(name, Poly()) if st is not None else Poly()
            if len(t) > 2 and t[2] != 1:
                p = p * t[2]
        self._cache[key] = p
        return p

    def quantity(self, terms) -> Poly:
        p = Poly()
        for t in terms:
            p = p + self.term(t)
        return p


def measure(check, store: PolyStore, factor: float = VERIFY_FACTOR):
    """(measured value, grid resolution) of a check."""
    k = check["kind"]
    if k == "value":
        return check["measured"], 0.0
    if k == "exact":
        return float(EXACT_CHECKS[check["fn"]](store.sf, **check["args"])), 0.0
    q = store.quantity(check["terms"])
    region = Region.from_json(check["region"])
    tf = target_fn(check["target"])
    t = ApproximationTarget(region, tf, 1.0, deriv=check["deriv"])
    deg = max(q.degree or 0, (tf.degree or 0) if isinstance(tf, Poly) else 0)
    return sup_error(q, t, deg, factor)


def evaluate_check(check, store, factor=VERIFY_FACTOR):
    m, res = measure(check, store, factor)
    out = dict(check)
    out["measured"] = m
    out["resolution"] = res
    out["factor"] = factor
    return out


# -- exact checks -------------------------------------------------------------------------------

def _exact_series(sf):
    """Coefficients of the final series as (re, im) Fractions, including rational corrections."""
    ex = [(Fraction(float(a.real)), Fraction(float(a.imag))) for a in sf.series.coeffs]
    for k, alpha in sf.exact_corrections.items():
        k = int(k)
        while len(ex) <= k:
            ex.append((Fraction(0), Fraction(0)))
        ex[k] = (ex[k][0] + Fraction(alpha), ex[k][1])
    return ex


def cesaro_violations(sf, k_lo: int, k_hi: int) -> int:
    """Number of k in [k_lo, k_hi] with |sum_{l=1}^k S_l(f)(1)| < k (exact)."""
    from .poly import dyadic_ints
    c = sf.series.coeffs
    n = min(len(c), k_hi + 1)
    re, e = dyadic_ints(np.real(c[:n]))
    im, e2 = dyadic_ints(np.imag(c[:n]))
    # bring both to a common exponent
    E = min(e, e2)
    re = [x << (e - E) for x in re]
    im = [x << (e2 - E) for x in im]
    scale2 = 1 << (-2 * E)
    bad = 0
    Sr = Si = Xr = Xi = 0
    for k in range(k_hi + 1):
        if k < n:
            Sr += re[k]
            Si += im[k]
        if k >= 1:
            Xr += Sr
            Xi += Si
        if k >= k_lo and k >= 1:
            if Xr * Xr + Xi * Xi < k * k * scale2:
                bad += 1
    return bad


def b_bound_violations(sf, names=("Q",)) -> int:
    """Count of stored Q coefficients with |b_k| > 2k."""
    bad = 0
    for st in sf.stages:
        for nm in names:
            q = st.polys.get(nm)
            if q is None:
                continue
            for k, b in enumerate(q.coeffs):
                if b != 0 and abs(b) > 2 * k:
                    bad += 1
    return bad


def valuation_violations(sf, order) -> int:
    """order: list of (stage, name) in the required valuation order; each val must exceed the previous degree."""
    bad = 0
    prev = -1
    for idx, name in order:
        st = sf.stage(idx)
        p = st.polys.get(name, Poly()) if st else Poly()
        if p.is_zero():
            continue
        if p.valuation <= prev:
            bad += 1
        prev = p.degree
    return bad


def decay_violations(sf, R: str, l: int, name: str = "Q") -> int:
    Rf = Fraction(R)
    bad = 0
    for st in sf.stages:
        q = st.polys.get(name)
        if q is None:
            continue
        for k, a in enumerate(q.coeffs):
            if a == 0:
                continue
            if k == 0:
                bad += 1
                continue
            re, im = Fraction(float(a.real)), Fraction(float(a.imag))
            if (re * re + im * im) * Rf ** (2 * k) * Fraction(k) ** (2 * (l + 2)) > 1:
                bad += 1
    return bad


def rounding_violations(sf, R: str, l: int, names=("P",)) -> int:
    """Count k where Re(fall(k,l) R^(k-l) (a_k + alpha_k)) differs from floor(Re(fall(k,l) R^(k-l) a_k))."""
    Rf = Fraction(R)
    bad = 0
    for st in sf.stages:
        alphas = st.exact.get("alpha", {})
        for nm in names:
            p = st.polys.get(nm)
            if p is None or p.is_zero():
                continue
            for k in range(p.valuation, p.degree + 1):
                if k < l:
                    continue
                fall = 1
                for i in range(l):
                    fall *= (k - i)
                m = fall * Rf ** (k - l)
                x = m * Fraction(float(p.coeffs[k].real))
                al = Fraction(alphas.get(str(k), "0"))
                fl = x.numerator // x.denominator
                if m * (Fraction(float(p.coeffs[k].real)) + al) != fl:
                    bad += 1
    return bad


def alpha_bound_violations(sf, R: str, l: int) -> int:
    """Count k with |alpha_k| > 1/(fall(k,l) R^(k-l))."""
    Rf = Fraction(R)
    bad = 0
    for st in sf.stages:
        for ks, a in st.exact.get("alpha", {}).items():
            k = int(ks)
            fall = 1
            for i in range(l):
                fall *= (k - i)
            if fall == 0:
                if Fraction(a) != 0:
                    bad += 1
                continue
            if abs(Fraction(a)) * fall * Rf ** (k - l) > 1:
                bad += 1
    return bad


def integrality_violations(sf, R: str, l: int, names=("P",), j_max: int | None = None) -> int:
    """Count j with Re S_j((sum of named polys, exact)^(l))(R) not an integer."""
    Rf = Fraction(R)
    coeffs = {}
    for st in sf.stages:
        for nm in names:
            p = st.polys.get(nm)
            if p is not None:
                for k, a in enumerate(p.coeffs):
                    if a != 0:
                        coeffs[k] = coeffs.get(k, Fraction(0)) + Fraction(float(a.real))
        for ks, a in st.exact.get("alpha", {}).items():
            coeffs[int(ks)] = coeffs.get(int(ks), Fraction(0)) + Fraction(a)
    if not coeffs:
        return 0
    top = max(coeffs) if j_max is None else j_max
    bad = 0
    s = Fraction(0)
    for j in range(top + 1):
        if j >= l and j in coeffs:
            fall = 1
            for i in range(l):
                fall *= (j - i)
            s += fall * Rf ** (j - l) * coeffs[j]
        if s.denominator != 1:
            bad += 1
    return bad


def alpha_stated_violations(sf, R: str, l: int) -> int:
    """Count k with |alpha_k| > R^-k (k(k-1))^-1 (the bound as usually quoted; informational)."""
    Rf = Fraction(R)
    bad = 0
    for st in sf.stages:
        for ks, a in st.exact.get("alpha", {}).items():
            k = int(ks)
            if k < 2:
                bad += Fraction(a) != 0
                continue
            if abs(Fraction(a)) * Rf ** k * k * (k - 1) > 1:
                bad += 1
    return bad


def offdisc_violations(sf, a, r0: float, r1: float, points: int = 5000, margin: float = 0.5) -> int:
    """Grid points r in [r0, r1] with |f(r) - a| < margin."""
    r = np.linspace(r0, r1, points)
    v = sf.series(r.astype(complex))
    return int(np.sum(np.abs(v - complex(*a)) < margin))


EXACT_CHECKS = {
    "alpha_stated": alpha_stated_violations,
    "offdisc": offdisc_violations,
    "cesaro": cesaro_violations,
    "b_bound": b_bound_violations,
    "valuation_order": valuation_violations,
    "decay": decay_violations,
    "rounding": rounding_violations,
    "alpha_bound": alpha_bound_violations,
    "integrality": integrality_violations,
}
