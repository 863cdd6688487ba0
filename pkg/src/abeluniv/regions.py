"""Sampled compact sets: arc unions on the circle, discs, radial segments, cone pieces."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import ceil, log2, pi, sqrt

import numpy as np

TWO_PI = 2 * pi
DEFAULT_DENSITY = 16.0


@dataclass(frozen=True)
class Region:
    """Finite union of pieces, each a circular arc or a line segment.

    Pieces: ("arc", center, radius, theta0, span) and ("seg", z0, z1) and
    ("point", z).  Discs are stored through their boundary circle: every target
    used with a disc is holomorphic, so the maximum principle applies.
    `dilation` is the factor applied to the base set; point counts are taken
    from the base set so that sample(rE) = r * sample(E).
    """

    kind: str
    pieces: tuple
    params: dict = field(default_factory=dict, compare=False)
    density: float = DEFAULT_DENSITY
    dilation: float = 1.0

    def dilate(self, r: float) -> "Region":
        out = []
        for p in self.pieces:
            if p[0] == "arc":
                out.append(("arc", p[1] * r, p[2] * r, p[3], p[4]))
            elif p[0] == "seg":
                out.append(("seg", p[1] * r, p[2] * r))
            else:
                out.append(("point", p[1] * r))
        params = dict(self.params, dilation=self.dilation * r)
        return Region(self.kind, tuple(out), params, self.density, self.dilation * r)

    @property
    def length(self) -> float:
        """Scaled arclength (of the dilated set)."""
        return sum(_piece_length(p) for p in self.pieces)

    def is_empty(self) -> bool:
        return len(self.pieces) == 0

    def max_modulus(self) -> float:
        m = 0.0
        for p in self.pieces:
            if p[0] == "arc":
                m = max(m, abs(p[1]) + p[2])
            elif p[0] == "seg":
                m = max(m, abs(p[1]), abs(p[2]))
            else:
                m = max(m, abs(p[1]))
        return m

    def to_json(self):
        def enc(p):
            if p[0] == "arc":
                return ["arc", [p[1].real, p[1].imag] if isinstance(p[1], complex) else [float(p[1]), 0.0],
                        float(p[2]), float(p[3]), float(p[4])]
            if p[0] == "seg":
                return ["seg", [complex(p[1]).real, complex(p[1]).imag], [complex(p[2]).real, complex(p[2]).imag]]
            return ["point", [complex(p[1]).real, complex(p[1]).imag]]
        return {"kind": self.kind, "params": _jsonable(self.params), "density": self.density,
                "dilation": self.dilation, "pieces": [enc(p) for p in self.pieces]}

    @classmethod
    def from_json(cls, d):
        pieces = []
        for p in d["pieces"]:
            if p[0] == "arc":
                pieces.append(("arc", complex(*p[1]), p[2], p[3], p[4]))
            elif p[0] == "seg":
                pieces.append(("seg", complex(*p[1]), complex(*p[2])))
            else:
                pieces.append(("point", complex(*p[1])))
        return cls(d["kind"], tuple(pieces), d.get("params", {}), d.get("density", DEFAULT_DENSITY),
                   d.get("dilation", 1.0))


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def _piece_length(p) -> float:
    if p[0] == "arc":
        return p[2] * p[4]
    if p[0] == "seg":
        return abs(p[2] - p[1])
    return 0.0


def is_full_circle(p) -> bool:
    return p[0] == "arc" and p[4] >= TWO_PI - 1e-12


# -- constructors -------------------------------------------------------------

def arc_union(arcs, radius: float = 1.0, density: float = DEFAULT_DENSITY) -> Region:
    """Closed arcs [t0, t0+span] of the circle |z| = radius.  Total span < 2 pi."""
    arcs = [(float(t0) % TWO_PI, float(s)) for t0, s in arcs]
    if sum(s for _, s in arcs) >= TWO_PI:
        raise ValueError("arc union must be a proper subset of the circle")
    pieces = tuple(("arc", 0j, float(radius), t0, s) for t0, s in arcs)
    return Region("arcs", pieces, {"arcs": arcs, "radius": radius}, density)


def disc(radius: float, center: complex = 0j, density: float = DEFAULT_DENSITY) -> Region:
    return Region("disc", (("arc", complex(center), float(radius), 0.0, TWO_PI),),
                  {"radius": radius, "center": complex(center)}, density)


def circle(radius: float, density: float = DEFAULT_DENSITY) -> Region:
    """Full circle used as a bound (growth control); not a Runge set by itself."""
    return Region("circle", (("arc", 0j, float(radius), 0.0, TWO_PI),), {"radius": radius}, density)


def radial_segment(r0: float, r1: float, angle: float = 0.0, density: float = DEFAULT_DENSITY) -> Region:
    u = np.exp(1j * angle)
    return Region("segment", (("seg", complex(r0 * u), complex(r1 * u)),),
                  {"r0": r0, "r1": r1, "angle": angle}, density)


def segments(segs, density: float = DEFAULT_DENSITY) -> Region:
    """Union of radial segments given as (r0, r1, angle)."""
    pieces = tuple(("seg", complex(r0 * np.exp(1j * a)), complex(r1 * np.exp(1j * a))) for r0, r1, a in segs)
    return Region("segment", pieces, {"segments": [list(s) for s in segs]}, density)


def points(zs, kind: str = "points") -> Region:
    return Region(kind, tuple(("point", complex(z)) for z in zs), {})


def union(*regions: Region, kind: str = "union") -> Region:
    pieces = tuple(p for r in regions for p in r.pieces)
    dens = max((r.density for r in regions), default=DEFAULT_DENSITY)
    return Region(kind, pieces, {"parts": [r.kind for r in regions]}, dens)


# -- sampling -------------------------------------------------------------------

def _count(length: float, density: float, factor: float) -> int:
    """Base count times the power of two at or above the factor, so doubling the factor doubles it."""
    base = max(2, int(ceil(density * length - 1e-9)))
    return base << max(0, int(ceil(log2(factor) - 1e-12)))


def piece_count(p, density: float, factor: float, dilation: float = 1.0) -> int:
    if p[0] == "point":
        return 1
    n = _count(_piece_length(p) / dilation, density, factor)
    return n


def sample_piece(p, n: int) -> np.ndarray:
    if p[0] == "point":
        return np.array([p[1]], complex)
    if p[0] == "seg":
        t = np.linspace(0.0, 1.0, n)
        return p[1] + t * (p[2] - p[1])
    c, r, t0, s = p[1], p[2], p[3], p[4]
    if is_full_circle(p):
        th = t0 + TWO_PI * np.arange(n) / n
    else:
        th = t0 + s * np.linspace(0.0, 1.0, n)
    return c + r * np.exp(1j * th)


def sample(region: Region, factor: float = 1.0) -> np.ndarray:
    """Deterministic equally spaced points per piece, endpoints included."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if region.is_empty():
        return np.zeros(0, complex)
    out = [sample_piece(p, piece_count(p, region.density, factor, region.dilation)) for p in region.pieces]
    return np.concatenate(out)


def grid_resolution(region: Region, factor: float = 1.0) -> float:
    """Largest spacing between consecutive samples along a piece."""
    h = 0.0
    for p in region.pieces:
        if p[0] == "point":
            continue
        n = piece_count(p, region.density, factor, region.dilation)
        L = _piece_length(p)
        h = max(h, L / n if is_full_circle(p) else L / (n - 1))
    return h


# -- exhaustion of proper compact subsets of the circle ------------------------

def van_der_corput(i: int) -> Fraction:
    """Bit-reversed dyadic fraction: 0, 1/2, 1/4, 3/4, 1/8, ..."""
    x, den = 0, 1
    while i:
        x = 2 * x + (i & 1)
        den *= 2
        i >>= 1
    return Fraction(x, den)


def exhaustion_params(n: int):
    """(center in turns, gap length in turns) of the excluded open arc of K_n."""
    from .enumerations import unpair
    i, j = unpair(n)
    return van_der_corput(i), Fraction(1, j + 2)


def exhaustion_K(n: int, radius: float = 1.0, density: float = DEFAULT_DENSITY) -> Region:
    """K_n = circle minus the open arc of length 1/m turn centred at a dyadic angle."""
    c, g = exhaustion_params(n)
    t0 = float((c + g / 2) % 1) * TWO_PI
    span = float(1 - g) * TWO_PI
    reg = Region("arcs", (("arc", 0j, float(radius), t0, span),),
                 {"n": n, "center_turns": c, "gap_turns": g, "radius": radius}, density)
    return reg


def arc_contains(outer, inner, tol: float = 1e-12) -> bool:
    """Closed arc (t0, span) contains closed arc (t0, span); angles in radians."""
    o0, os_ = outer
    i0, is_ = inner
    d = (i0 - o0) % TWO_PI
    if d > TWO_PI - tol:
        d = 0.0
    return d + is_ <= os_ + tol


def angle_in_arc(theta, t0: float, span: float, tol: float = 1e-12):
    d = (np.asarray(theta) - t0) % TWO_PI
    return (d <= span + tol) | (d >= TWO_PI - tol)


def region_contains_arcs(region: Region, arcs) -> bool:
    outer = [(p[3], p[4]) for p in region.pieces if p[0] == "arc"]
    return all(any(arc_contains(o, a) for o in outer) for a in arcs)


def find_exhaustion_index(arcs, limit: int = 10 ** 5):
    """Smallest n <= limit with every arc of the union inside K_n; points are zero-span arcs."""
    arcs = [(float(t) % TWO_PI, float(s)) for t, s in arcs]
    for n in range(limit + 1):
        c, g = exhaustion_params(n)
        t0 = float((c + g / 2) % 1) * TWO_PI
        span = float(1 - g) * TWO_PI
        if all(arc_contains((t0, span), a) for a in arcs):
            return n
    return None


# -- cluster geometry -------------------------------------------------------------

@dataclass(frozen=True)
class ClusterGeometry:
    zeta1: complex = 1 + 0j
    zeta2: complex = -1 + 0j

    def a(self, n: int) -> float:
        return 1.0 - 2.0 ** -(n + 1)

    def eta(self, n: int) -> float:
        return 0.5 * self.eta_bound(n)

    def eta_bound(self, n: int) -> float:
        return min(self.a(2 * n + 2) - self.a(2 * n + 1), self.a(2 * n + 3) - self.a(2 * n + 2),
                   abs(self.zeta1 - self.zeta2) / TWO_PI)

    def L_radius(self, n: int) -> float:
        return self.a(2 * n + 2) + self.eta(n)

    def notch(self, n: int):
        """(center, radius) of the open disc removed from the closed disc of radius L_radius(n)."""
        return self.L_radius(n) * self.zeta1, 2 * self.eta(n)

    def in_L(self, z, n: int, tol: float = 0.0):
        c, rad = self.notch(n)
        z = np.asarray(z)
        return (np.abs(z) <= self.L_radius(n) + tol) & (np.abs(z - c) >= rad - tol)

    def segment_pair(self, n: int) -> Region:
        """[a_2n, a_2n+1] zeta1 U [a_2n+1, a_2n+2] zeta2."""
        a1, a2, a3 = self.a(2 * n), self.a(2 * n + 1), self.a(2 * n + 2)
        return Region("segment", (("seg", complex(a1 * self.zeta1), complex(a2 * self.zeta1)),
                                  ("seg", complex(a2 * self.zeta2), complex(a3 * self.zeta2))),
                      {"n": n}, DEFAULT_DENSITY)

    def to_json(self):
        return {"zeta1": [self.zeta1.real, self.zeta1.imag], "zeta2": [self.zeta2.real, self.zeta2.imag],
                "a": "1-2^-(n+1)", "eta": "half of the allowed minimum"}


def _runs(mask):
    """Index ranges [i, j] of consecutive True values."""
    out = []
    i = None
    for k, m in enumerate(mask):
        if m and i is None:
            i = k
        if not m and i is not None:
            out.append((i, k - 1))
            i = None
    if i is not None:
        out.append((i, len(mask) - 1))
    return out


def _refine(f, lo, hi, inside_lo, iters=60):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) == inside_lo:
            lo = mid
        else:
            hi = mid
    return lo if inside_lo else hi


def _arc_pieces(center, radius, t0, span, pred, n_probe=4096):
    """Sub-arcs of the circle arc where pred(point) holds, endpoints refined by bisection."""
    th = t0 + span * np.linspace(0.0, 1.0, n_probe)
    pts = center + radius * np.exp(1j * th)
    mask = pred(pts)
    f = lambda t: bool(pred(np.array([center + radius * np.exp(1j * t)]))[0])
    out = []
    for i, j in _runs(mask):
        a = th[i] if i == 0 else _refine(f, th[i - 1], th[i], False)
        b = th[j] if j == n_probe - 1 else _refine(f, th[j], th[j + 1], True)
        if b > a:
            out.append(("arc", complex(center), float(radius), float(a % TWO_PI if center == 0 else a),
                        float(b - a)))
    return out


def intersect_arcs(a, b):
    """Intersection of two closed arcs (t0, span), as a list of arcs."""
    out = []
    for (s0, ss), (t0, ts) in ((a, b), (b, a)):
        d = (t0 - s0) % TWO_PI
        if d <= ss:
            out.append((t0 % TWO_PI, min(ts, ss - d)))
    # the same piece can be found from both sides when the starts coincide
    uniq = []
    for t, s in out:
        if not any(abs((t - u) % TWO_PI) < 1e-15 and abs(s - v) < 1e-15 for u, v in uniq):
            uniq.append((t, s))
    if a[1] >= TWO_PI - 1e-12:
        return [b]
    if b[1] >= TWO_PI - 1e-12:
        return [a]
    return uniq


def _L_pieces(geom: ClusterGeometry, n: int, arcs=None):
    rho = geom.L_radius(n)
    c, rad = geom.notch(n)
    th1 = float(np.angle(geom.zeta1))
    delta = 2 * np.arcsin(min(1.0, rad / (2 * rho)))
    allowed = (th1 + delta, TWO_PI - 2 * delta)
    outer_arcs = [allowed] if arcs is None else [x for a in arcs for x in intersect_arcs(allowed, a)]
    pieces = [("arc", 0j, float(rho), float(t % TWO_PI), float(s)) for t, s in outer_arcs if s > 0]
    beta = float(np.arccos(min(1.0, rad / (2 * rho))))
    if arcs is None:
        pieces.append(("arc", complex(c), float(rad), th1 + pi - beta, 2 * beta))
    else:
        def in_cone(z):
            th = np.angle(z)
            m = np.zeros(np.shape(z), bool)
            for t0, s in arcs:
                m |= angle_in_arc(th, t0, s)
            return m
        pieces += _arc_pieces(complex(c), rad, th1 + pi - beta, 2 * beta, in_cone)
    return tuple(pieces)


def L_boundary(geom: ClusterGeometry, n: int) -> Region:
    """Boundary of L_n (outer circle outside the notch, notch circle inside the disc)."""
    return Region("L_boundary", _L_pieces(geom, n), {"n": n, "radius": geom.L_radius(n)}, DEFAULT_DENSITY)


def cone_segment(geom: ClusterGeometry, n: int, I: Region) -> Region:
    """C_n(I): points of the boundary of L_n whose argument lies in the arc union I."""
    arcs = [(p[3], p[4]) for p in I.pieces if p[0] == "arc"]
    return Region("cone", _L_pieces(geom, n, arcs), {"n": n, "carrier": I.params}, DEFAULT_DENSITY)
