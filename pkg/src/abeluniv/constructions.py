"""Stage-by-stage builders for the counterexamples and the visitor functions.

Every builder returns a StagedFunction: the truncated series, the polynomials
added at each stage, and a log of inequality checks (grid sups and exact
integer tests) that the verification harness can replay from the JSON alone.

Fits are numerical.  Hard tolerances ("stay small") are enforced by the engine;
targets that carry a genuine approximation are fitted best-effort within a
degree budget and the achieved value is what gets recorded.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import floor, log, log1p

import numpy as np

from .checks import (BridgeInfeasible, NeighborhoodSpec, PolyStore, bridge_path, bridge_radius, bridge_value,
                     default_neighborhood, evaluate_check, exact_check, frac_str, poly_from_json,
                     poly_to_json, sup_check, target_bridge, target_poly, target_sum, value_check)
from .engine import (VERIFY_FACTOR, ApproximationTarget, BudgetExceeded, FitConstraints, approximate,
                     decayed_tail_approximate, radial_flat_approximate, sup_error)
from .enumerations import (DEFAULT_BUDGET, SCHEDULE_VERSION, EpsilonBudget, rational_polynomial,
                           restricted_polynomial, schedule_pair, schedule_triple)
from .poly import Poly, dilate
from .regions import (ClusterGeometry, L_boundary, Region, arc_union, cone_segment, disc, exhaustion_K,
                      points, radial_segment, union, angle_in_arc)

SCHEMA = "abeluniv/1"
DEFAULT_WIDTH = 64


class SegmentOverlap(ValueError):
    pass


class DisjointnessViolation(ValueError):
    pass


# -- the tail bound H ---------------------------------------------------------------------

def h_tail(j: int, r: float) -> float:
    """sum_{k>=j} 2k r^k."""
    if not 0 <= r < 1:
        raise ValueError("r must lie in [0, 1)")
    return 2 * r ** j * (j + r * (1 - j)) / (1 - r) ** 2


def compute_H(k: int, r: float) -> float:
    """H_k(r) = sum_{j>=k} sum_{i>=j} 2i r^i = 2 r^k (k + r(2-k)) / (1-r)^3."""
    if not 0 <= r < 1:
        raise ValueError("r must lie in [0, 1)")
    if k < 0:
        raise ValueError("k >= 0")
    return 2 * r ** k * (k + r * (2 - k)) / (1 - r) ** 3


def _log_H(u: np.ndarray, r: float) -> np.ndarray:
    return log(2) + u * log(r) + np.log(u * (1 - r) + 2 * r) - 3 * log1p(-r)


def first_index(r: float, R_next: float, eps: float, start: int) -> int:
    """Least u >= start such that max(H_u(r), q^u/(1-q)) <= eps for every u' >= u, q = r/R_next."""
    q = r / R_next
    le = log(eps)
    hi = max(start + 64, 2 * start)
    while True:
        u = np.arange(start, hi + 1, dtype=float)
        bad = (_log_H(u, r) > le) | (u * log(q) - log1p(-q) > le)
        if not bad[-1]:
            idx = np.flatnonzero(bad)
            return int(start if idx.size == 0 else start + idx[-1] + 1)
        hi *= 2


# -- radii --------------------------------------------------------------------------------------

def geometric(n: int) -> float:
    return 1.0 - 2.0 ** -(n + 1)


def radius_fn(rho):
    """rho: "geometric", a callable n -> r_n, or a sequence (r_1, r_2, ...)."""
    if rho is None or rho == "geometric":
        return geometric
    if callable(rho):
        return rho
    seq = [float(x) for x in rho]
    return lambda n: seq[n - 1]


def _radii(rho, N: int, extra: int = 1):
    f = radius_fn(rho)
    r = [0.0] + [float(f(n)) for n in range(1, N + 1 + extra)]
    if any(not (0 < x < 1) for x in r[1:]) or any(b <= a for a, b in zip(r, r[1:])):
        raise ValueError("radii must increase strictly inside (0, 1)")
    return r


def _rho_json(rho):
    if rho is None or rho == "geometric":
        return "geometric"
    if callable(rho):
        return getattr(rho, "__name__", "callable")
    return [float(x) for x in rho]


# -- records -----------------------------------------------------------------------------------

def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, Fraction):
        return frac_str(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


@dataclass
class StageRecord:
    index: int
    polys: dict
    params: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    exact: dict = field(default_factory=dict)
    fits: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(_passes(c) for c in self.checks)

    def to_json(self):
        return {"index": self.index, "polys": {k: poly_to_json(p) for k, p in sorted(self.polys.items())},
                "params": _plain(self.params), "checks": _plain(self.checks), "exact": _plain(self.exact),
                "fits": _plain(self.fits)}

    @classmethod
    def from_json(cls, d):
        return cls(d["index"], {k: poly_from_json(v) for k, v in d["polys"].items()}, d["params"],
                   d["checks"], d.get("exact", {}), d.get("fits", []))


def _passes(c) -> bool:
    if c.get("advisory"):
        return True
    return c["measured"] <= c["bound"]


@dataclass
class StagedFunction:
    builder: str
    config: dict
    stages: list = field(default_factory=list)
    final_checks: list = field(default_factory=list)
    series: Poly = field(default_factory=Poly)
    exact_corrections: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def stage(self, idx: int):
        for st in self.stages:
            if st.index == idx:
                return st
        return None

    def checks(self):
        for st in self.stages:
            yield from st.checks
        yield from self.final_checks

    @property
    def ok(self) -> bool:
        return all(_passes(c) for c in self.checks())

    def __call__(self, z):
        return self.series(z)

    def recompute_series(self) -> Poly:
        s = Poly()
        for st in self.stages:
            for name in sorted(st.polys):
                s = s + st.polys[name]
        return s

    def to_json(self):
        return {"schema": SCHEMA, "builder": self.builder, "config": _plain(self.config),
                "environment": {"schedule": SCHEDULE_VERSION, "verify_factor": VERIFY_FACTOR},
                "series": poly_to_json(self.series), "stages": [st.to_json() for st in self.stages],
                "final_checks": _plain(self.final_checks), "exact_corrections": _plain(self.exact_corrections),
                "info": _plain(self.info)}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, d):
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported schema {d.get('schema')!r}")
        sf = cls(d["builder"], d["config"], [StageRecord.from_json(s) for s in d["stages"]],
                 d["final_checks"], poly_from_json(d["series"]), d.get("exact_corrections", {}), d.get("info", {}))
        if sf.recompute_series() != sf.series:
            raise ValueError("stored series differs from the sum of its stage polynomials")
        return sf

    @classmethod
    def loads(cls, s: str):
        return cls.from_json(json.loads(s))


class _Log:
    """Accumulates stages and evaluates their checks against the partial function."""

    def __init__(self, builder, config, budget: EpsilonBudget, width: int, strict: bool):
        self.sf = StagedFunction(builder, dict(config, budget_c=frac_str(budget.c), width=width, strict=strict))
        self.budget = budget
        self.width = width
        self.strict = strict

    def add(self, index, polys, params, checks, exact=None, fits=()):
        st = StageRecord(index, dict(polys), dict(params), [], dict(exact or {}), [f for f in fits])
        self.sf.stages.append(st)
        for name in sorted(st.polys):
            self.sf.series = self.sf.series + st.polys[name]
        store = PolyStore(self.sf)
        st.checks = [_record(c, store) for c in checks]
        return st

    def final(self, checks):
        store = PolyStore(self.sf)
        self.sf.final_checks = [_record(c, store) for c in checks]
        return self.sf

    def fit(self, targets, v=0, stage=None, width=None):
        return fit_stage(targets, v, width or self.width, self.strict, stage)


def _record(c, store):
    ev = evaluate_check(c, store)
    if c.get("soft"):
        ev["nominal_met"] = ev["measured"] <= ev["nominal"]
        ev["bound"] = max(ev["nominal"], ev["measured"])
    return ev


def fit_stage(targets, v: int = 0, width: int = DEFAULT_WIDTH, strict: bool = False, stage=None):
    """One stage fit with the zero polynomial as fallback.  Returns a FitResult."""
    targets = [t for t in targets if not t.region.is_empty()]
    deg0 = max([v] + [t.target.degree or 0 for t in targets if isinstance(t.target, Poly)])
    zero_ach = [sup_error(Poly(), t, deg0)[0] for t in targets]
    zero_bad = _badness(zero_ach, targets)
    if zero_bad == (0.0, 0.0):
        res = approximate([], FitConstraints())
        return _zero_result(targets, zero_ach, v)
    res = approximate(targets, FitConstraints(min_valuation=v, max_degree=v + width, strict=False,
                                              start_width=min(16, width)))
    if _badness(res.achieved, targets) >= zero_bad:
        res = _zero_result(targets, zero_ach, v)
    if strict and not res.ok:
        raise BudgetExceeded(f"stage {stage}: tolerances unmet within width {width}", res, stage)
    return res


def _badness(ach, targets):
    hard = sum(max(0.0, a / t.tolerance - 1) for a, t in zip(ach, targets) if t.hard)
    soft = sum(max(0.0, a / t.tolerance - 1) for a, t in zip(ach, targets) if not t.hard)
    return hard, soft


def _zero_result(targets, ach, v):
    from .engine import FitResult
    ok = _badness(ach, targets) == (0.0, 0.0)
    return FitResult(Poly(), list(ach), [t.tolerance for t in targets], [t.name for t in targets],
                     [t.hard for t in targets], 0, v, [0.0] * len(targets), ok)


def _report(res, name):
    r = res.report()
    r["poly"] = name
    return r


def _cx(x) -> complex:
    return complex(*x) if isinstance(x, (list, tuple)) else complex(x)


def _phi(m: int) -> Poly:
    return rational_polynomial(m)


def _K(m: int, r: float = 1.0) -> Region:
    return exhaustion_K(m, r)


def _contains_one(K: Region) -> bool:
    return any(bool(angle_in_arc(np.array([0.0]), p[3], p[4])[0]) for p in K.pieces if p[0] == "arc")


# ===========================================================================================
# Abel summable, not Cesaro summable; Abel universal
# ===========================================================================================

def build_abel_not_cesaro(rho="geometric", N: int = 8, budget: EpsilonBudget = DEFAULT_BUDGET,
                          width: int = 32, strict: bool = False) -> StagedFunction:
    """Q_{n-1} forces |sum_{l<=k} S_l(f)(1)| >= k on [u_{n-1}, u_n - 1] with coefficients b_k in {0, 2k};
    P_n (valuation u_n) is small on |z| <= R_n and carries the target phi_beta(z/r_n) on r_n K_alpha."""
    r = _radii(rho, N, 2)
    R = [0.0] + [(r[n - 1] + r[n]) / 2 for n in range(1, N + 2)]
    log_ = _Log("abel_not_cesaro", {"rho": _rho_json(rho), "N": N}, budget, width, strict)
    E = 1100                       # coefficients are tracked as integers times 2^-E
    unit = 1 << E
    S = [0, 0]
    X = [0, 0]
    done = 0                       # coefficients 0..done-1 are in the state

    def absorb(re: float, im: float, k: int):
        S[0] += int(Fraction(re) * unit)
        S[1] += int(Fraction(im) * unit)
        if k >= 1:
            X[0] += S[0]
            X[1] += S[1]

    u = [0]
    deg_prev = 0
    visit_bounds = {}
    for n in range(1, N + 1):
        eps = budget(n)
        un = first_index(r[n], R[n + 1], eps, max(1, deg_prev + 1))
        polys, exact = {}, {}
        fits = []
        if n >= 2:
            lo, hi = u[n - 1], un - 1
            c = np.zeros(hi + 1, complex)
            cur = log_.sf.series.coeffs
            while done < lo:
                a = cur[done] if done < cur.size else 0j
                absorb(a.real, a.imag, done)
                done += 1
            for k in range(lo, hi + 1):
                a = complex(cur[k]) if k < cur.size else 0j
                sr = S[0] + int(Fraction(a.real) * unit)
                si = S[1] + int(Fraction(a.imag) * unit)
                xr, xi = X[0] + sr, X[1] + si
                if xr * xr + xi * xi >= k * k * unit * unit:
                    absorb(a.real, a.imag, k)
                else:
                    c[k] = 2 * k
                    v = a + 2 * k          # the value the series will hold
                    absorb(v.real, v.imag, k)
                done = k + 1
            polys["Q"] = Poly(c)
        # the running sum including Q_{n-1}
        w = log_.sf.series + polys.get("Q", Poly())
        al, be = schedule_pair(n)
        K = _K(al, r[n])
        tgt = dilate(_phi(be), 1 / r[n]) - w
        targets = [ApproximationTarget(disc(R[n]), None, eps, hard=True, name="disc"),
                   ApproximationTarget(K, tgt, eps, name="visit")]
        res = log_.fit(targets, un, n)
        polys["P"] = res.poly
        fits.append(_report(res, "P"))
        checks = [sup_check("P.disc", [[n, "P"]], disc(R[n]), None, eps),
                  sup_check("visit", [["upto", n]], K, target_poly(_phi(be), r[n]), eps, soft=True)]
        if "Q" in polys:
            checks.append(exact_check("Q.coeffs", "b_bound", {}))
        st = log_.add(n, polys, {"u": un, "r": r[n], "R": R[n], "eps": eps, "alpha": al, "beta": be,
                                 "H": compute_H(un, r[n])}, checks, exact, fits)
        visit_bounds[n] = st.checks[1]["bound"]
        u.append(un)
        deg_prev = max(res.poly.degree or 0, un)
    final = [exact_check("cesaro", "cesaro", {"k_lo": u[1], "k_hi": u[N] - 1},
                         note="|sum_{l<=k} S_l(f)(1)| >= k on the whole window")]
    for n in range(1, N + 1):
        al, be = schedule_pair(n)
        tail = sum(budget(j) for j in range(n + 1, N + 1)) + compute_H(u[n], r[n])
        final.append(sup_check(f"visit.{n}", [["series"]], _K(al, r[n]), target_poly(_phi(be), r[n]),
                               visit_bounds[n] * (1 + 1e-9) + tail, nominal=budget(n) + tail))
    log_.sf.info = {"u": u[1:], "cesaro_window": [u[1], u[N] - 1]}
    return log_.final(final)


# ===========================================================================================
# Abel universal along D, not along a prescribed radius sequence
# ===========================================================================================

def build_abelD_not_rho(rho="geometric", N: int = 10, budget: EpsilonBudget = DEFAULT_BUDGET,
                        width: int = DEFAULT_WIDTH, strict: bool = False) -> StagedFunction:
    """P_n small on |z| <= r'_{n-1}, cancels the running sum at r_n, carries the target on r'_n K_alpha."""
    r = _radii(rho, N, 2)
    rp = [r[1] / 2] + [(r[n] + r[n + 1]) / 2 for n in range(1, N + 1)]
    log_ = _Log("abelD_not_rho", {"rho": _rho_json(rho), "N": N}, budget, width, strict)
    vb = {}
    for n in range(1, N + 1):
        eps = budget(n)
        S = log_.sf.series
        al, be = schedule_pair(n)
        K = _K(al, rp[n])
        targets = [ApproximationTarget(disc(rp[n - 1]), None, eps, hard=True, name="disc"),
                   ApproximationTarget(points([r[n]]), -S(r[n]), eps, name="point"),
                   ApproximationTarget(K, dilate(_phi(be), 1 / rp[n]) - S, eps, name="visit")]
        res = log_.fit(targets, 0, n)
        checks = [sup_check("P.disc", [[n, "P"]], disc(rp[n - 1]), None, eps),
                  sup_check("point", [["upto", n]], points([r[n]]), None, eps, soft=True),
                  sup_check("visit", [["upto", n]], K, target_poly(_phi(be), rp[n]), eps, soft=True)]
        st = log_.add(n, {"P": res.poly}, {"r": r[n], "r_prime": rp[n], "r_prime_prev": rp[n - 1], "eps": eps,
                                           "alpha": al, "beta": be}, checks, fits=[_report(res, "P")])
        vb[n] = st.checks[2]["bound"]
    total = sum(budget(k) for k in range(1, N + 1))
    final = []
    for n in range(1, N + 1):
        final.append(sup_check(f"abs_at_r.{n}", [["series"]], points([r[n]]), None, total))
    for n in range(1, N + 1):
        al, be = schedule_pair(n)
        tail = sum(budget(j) for j in range(n + 1, N + 1))
        final.append(sup_check(f"visit.{n}", [["series"]], _K(al, rp[n]), target_poly(_phi(be), rp[n]),
                               vb[n] * (1 + 1e-9) + tail, nominal=budget(n) + tail))
    return log_.final(final)


# ===========================================================================================
# Every radial cluster set maximal, not Abel universal
# ===========================================================================================

def build_maxcluster_not_abel(geom: ClusterGeometry | None = None, N: int = 6,
                              budget: EpsilonBudget = DEFAULT_BUDGET, width: int = DEFAULT_WIDTH,
                              strict: bool = False) -> StagedFunction:
    """P_n small on L_{n-1}, cancels the running sum on the segment pair of stage n,
    and makes f(z) close to phi_beta(z/|z|) on the cone segment C_n(K_alpha)."""
    geom = geom or ClusterGeometry()
    log_ = _Log("maxcluster_not_abel", {"geometry": geom.to_json(), "zeta1": geom.zeta1, "zeta2": geom.zeta2,
                                        "N": N}, budget, width, strict)
    seg_b, cone_b = {}, {}
    for n in range(1, N + 1):
        eps = budget(n)
        S = log_.sf.series
        al, be = schedule_pair(n)
        Lb = L_boundary(geom, n - 1)
        segs = geom.segment_pair(n)
        cone = cone_segment(geom, n, _K(al))
        ph = _phi(be)
        radial = lambda z, ph=ph, S=S: ph(z / np.abs(z)) - S(z)
        targets = [ApproximationTarget(Lb, None, eps, hard=True, name="L"),
                   ApproximationTarget(segs, -S, eps, name="segments"),
                   ApproximationTarget(cone, radial, eps, name="cone")]
        res = log_.fit(targets, 0, n)
        checks = [sup_check("P.L", [[n, "P"]], Lb, None, eps),
                  sup_check("segments", [["upto", n]], segs, None, eps, soft=True),
                  sup_check("cone", [["upto", n]], cone, target_poly(ph, radial=True), eps, soft=True)]
        st = log_.add(n, {"P": res.poly}, {"eps": eps, "alpha": al, "beta": be, "a": [geom.a(2 * n), geom.a(2 * n + 1),
                                           geom.a(2 * n + 2)], "L_radius": geom.L_radius(n - 1)},
                      checks, fits=[_report(res, "P")])
        seg_b[n] = st.checks[1]["bound"]
        cone_b[n] = st.checks[2]["bound"]
    final = []
    for n in range(1, N + 1):
        al, be = schedule_pair(n)
        tail = sum(budget(j) for j in range(n + 1, N + 1))
        final.append(sup_check(f"segments.{n}", [["series"]], geom.segment_pair(n), None, seg_b[n] + tail,
                               nominal=budget(n) + tail))
        final.append(sup_check(f"cone.{n}", [["series"]], cone_segment(geom, n, _K(al)),
                               target_poly(_phi(be), radial=True), cone_b[n] + tail, nominal=budget(n) + tail))
    log_.sf.info = {"segment_range": [geom.a(2), geom.a(2 * N + 2)]}
    return log_.final(final)


# ===========================================================================================
# Abel universal with bounded derivative along the radii
# ===========================================================================================

def build_abel_deriv_bounded(rho="geometric", l: int = 1, N: int = 8, budget: EpsilonBudget = DEFAULT_BUDGET,
                             width: int = DEFAULT_WIDTH, strict: bool = False, h: float = 1e-3) -> StagedFunction:
    """P_n small with flat l-th derivative on [0, r_{n-1}] and [r_n, 1-h], P_n(r_n z) close to
    phi_beta(z) - S_{n-1}(r_n z) on K_alpha; hence |f^(l)(r_k)| <= sum eps."""
    r = _radii(rho, N, 1)
    log_ = _Log("abel_deriv_bounded", {"rho": _rho_json(rho), "l": l, "N": N, "h": h}, budget, width, strict)
    vb = {}
    for n in range(1, N + 1):
        eps = budget(n)
        S = log_.sf.series
        al, be = schedule_pair(n)
        K = _K(al)
        phi = dilate(_phi(be), 1 / r[n]) - S
        res = radial_flat_approximate(K, phi, eps, l, r[n - 1], r[n], h=h, max_degree=width, strict=False)
        if strict and not res.ok:
            raise BudgetExceeded(f"stage {n}: tolerances unmet", res, n)
        checks = []
        if r[n - 1] > 0:
            checks.append(sup_check("P.disc", [[n, "P"]], disc(r[n - 1]), None, eps))
            checks.append(sup_check("P.flat_inner", [[n, "P"]], radial_segment(0.0, r[n - 1]), None, eps, deriv=l))
        checks.append(sup_check("P.flat_outer", [[n, "P"]], radial_segment(r[n], 1 - h), None, eps, deriv=l))
        checks.append(sup_check("visit", [["upto", n]], K.dilate(r[n]), target_poly(_phi(be), r[n]), eps, soft=True))
        st = log_.add(n, {"P": res.poly}, {"r": r[n], "r_prev": r[n - 1], "eps": eps, "alpha": al, "beta": be},
                      checks, fits=[_report(res, "P")])
        vb[n] = st.checks[-1]["bound"]
    total = sum(budget(k) for k in range(1, N + 1))
    final = [sup_check("deriv_at_radii", [["series"]], points(r[1:N + 1]), None, total, deriv=l)]
    for n in range(1, N + 1):
        al, be = schedule_pair(n)
        tail = sum(budget(j) for j in range(n + 1, N + 1))
        final.append(sup_check(f"visit.{n}", [["series"]], _K(al, r[n]), target_poly(_phi(be), r[n]),
                               vb[n] * (1 + 1e-9) + tail, nominal=budget(n) + tail))
    return log_.final(final)


def _fall(k: int, l: int) -> int:
    out = 1
    for i in range(l):
        out *= k - i
    return out


def perturb_integer_derivative(f, l: int = 2, R=1):
    """g = f + sum alpha_k z^k, alpha_k real, so that Re(fall(k,l) R^(k-l) (a_k + alpha_k)) is the
    integer part of Re(fall(k,l) R^(k-l) a_k) for k >= l.  Returns (g, alpha) with alpha a list of
    Fractions; |alpha_k| < 1/(fall(k,l) R^(k-l)) and g carries the nearest floats."""
    p = f.series if isinstance(f, StagedFunction) else f
    Rf = Fraction(R)
    alpha = [Fraction(0)] * len(p.coeffs)
    for k in range(l, len(p.coeffs)):
        a = Fraction(float(p.coeffs[k].real))
        if a == 0:
            continue
        m = _fall(k, l) * Rf ** (k - l)
        x = m * a
        alpha[k] = (floor(x) - x) / m
    g = Poly(p.coeffs + np.array([float(a) for a in alpha]))
    return g, alpha


def exact_derivative_partial_sums(f, alpha, l: int = 2, R=1, n_max: int | None = None):
    """Re S_n(g^(l))(R), n <= n_max, exactly, for g = f + alpha (alpha as Fractions)."""
    p = f.series if isinstance(f, StagedFunction) else f
    Rf = Fraction(R)
    top = len(p.coeffs) - 1 if n_max is None else n_max
    out, s = [], Fraction(0)
    for n in range(top + 1):
        k = n + l
        if k < len(p.coeffs):
            s += _fall(k, l) * Rf ** (k - l) * (Fraction(float(p.coeffs[k].real)) + alpha[k])
        out.append(s)
    return out


# ===========================================================================================
# Universal at every |zeta| = R, some derivative not universal at R
# ===========================================================================================

def _frac(x) -> Fraction:
    return Fraction(x).limit_denominator(10 ** 6) if isinstance(x, float) else Fraction(x)


def build_UTS_R_deriv_not(R=1, l: int = 1, N: int = 5, budget: EpsilonBudget = DEFAULT_BUDGET,
                          width: int = DEFAULT_WIDTH, strict: bool = False) -> StagedFunction:
    """Order Q_n -> P_n -> R_n.  Q_n: decayed tail outside the closed R-disc; P_n: small on
    |z| <= 1-1/n, target on the part of L_m in the annulus; R_n: exact rational rounding."""
    Rq = _frac(R)
    if Rq < 1:
        raise ValueError("R >= 1")
    Rf = float(Rq)
    r1 = 1.0 if Rq == 1 else (1 + Rf) / 2
    log_ = _Log("UTS_R_deriv_not", {"R": frac_str(Rq), "l": l, "N": N, "K1_radius": r1, "K2_radius": Rf + 1},
                budget, width, strict)
    order = []
    deg_prev = 0
    for n in range(1, N + 1):
        eps = budget(n)
        p1, p2, m = schedule_triple(n)
        K1, K2 = _K(m, r1), _K(m, Rf + 1)
        S_all = log_.sf.series
        resQ, M, eta = decayed_tail_approximate(K2, _phi(p2) - S_all, eps, l, deg_prev + 1, Rf, strict=False,
                                                max_width=width)
        Q = resQ.poly
        if strict and not resQ.ok:
            raise BudgetExceeded(f"stage {n}: Q tolerances unmet", resQ, n)
        vP = max(deg_prev, Q.degree or 0) + 1
        S_P = Poly()
        for st in log_.sf.stages:
            S_P = S_P + st.polys.get("P", Poly())
        targets = []
        if n >= 2:
            targets.append(ApproximationTarget(disc(1 - 1 / n), None, eps, hard=True, name="disc"))
        targets.append(ApproximationTarget(K1, _phi(p1) - S_P, eps, name="annulus"))
        resP = log_.fit(targets, vP, n)
        P = resP.poly
        alpha = {}
        if not P.is_zero():
            for k in range(P.valuation, P.degree + 1):
                a = Fraction(float(P.coeffs[k].real))
                mult = _fall(k, l) * Rq ** (k - l)
                if k < l or mult == 0:
                    continue
                x = mult * a
                al = (floor(x) - x) / mult
                if al != 0:
                    alpha[str(k)] = frac_str(al)
        Rn = Poly(np.array([float(Fraction(alpha.get(str(k), "0"))) for k in range(P.degree + 1)])) \
            if alpha else Poly()
        checks = [sup_check("Q.disc", [[n, "Q"]], disc(Rf), None, eps),
                  sup_check("Q.target", [["upto", n - 1], [n, "Q"]], K2, target_poly(_phi(p2)), eps, soft=True)]
        if n >= 2:
            checks.append(sup_check("P.disc", [[n, "P"]], disc(1 - 1 / n), None, eps))
        checks.append(sup_check("P.target", [[k, "P"] for k in range(1, n + 1)], K1, target_poly(_phi(p1)), eps,
                                soft=True))
        order += [(n, "Q"), (n, "P")]
        log_.add(n, {"Q": Q, "P": P, "R": Rn}, {"eps": eps, "psi": [p1, p2, m], "M": M, "eta": eta,
                                               "val_Q": Q.valuation, "val_P": P.valuation},
                 checks, {"alpha": alpha}, [_report(resQ, "Q"), _report(resP, "P")])
        deg_prev = max(deg_prev, Q.degree or 0, P.degree or 0)
    Rs = frac_str(Rq)
    final = [exact_check("valuation_order", "valuation_order", {"order": order}),
             exact_check("decay", "decay", {"R": Rs, "l": l, "name": "Q"}),
             exact_check("rounding", "rounding", {"R": Rs, "l": l, "names": ["P"]}),
             exact_check("alpha_bound", "alpha_bound", {"R": Rs, "l": l}),
             exact_check("alpha_bound_stated", "alpha_stated", {"R": Rs, "l": l}, advisory=True,
                         note="|alpha_k| <= R^-k (k(k-1))^-1; not implied by the rounding when R > 1 or l < 2"),
             exact_check("integrality", "integrality", {"R": Rs, "l": l, "names": ["P"]})]
    return log_.final(final)


# ===========================================================================================
# Universal functions whose radial values avoid a disc
# ===========================================================================================

def build_offdisc_universal(a: complex = 3.0, rho="geometric", N: int = 8, budget: EpsilonBudget = DEFAULT_BUDGET,
                            width: int = 256, strict: bool = False, margin: float = 0.05) -> StagedFunction:
    """f_1 = phi~_{alpha(1)}(z/r_1); f_k - f_{k-1} is small on |z| <= r_{k-1}, follows the bridge h_k
    on [r_{k-1}, r_k] and visits phi~_{alpha(k)}(z/r_k) on r_k (K_beta U {1}); the targets phi~ are
    enumerated among polynomials with |p(1) - a| > 1, so f((0,1)) avoids D(a, 1/2)."""
    a = complex(a)
    r = _radii(rho, N, 2)
    log_ = _Log("offdisc_universal", {"a": a, "rho": _rho_json(rho), "N": N, "margin": margin}, budget, width, strict)
    vb, eps_used, targets_used = {}, {}, {}
    for k in range(1, N + 1):
        al, be = schedule_pair(k)
        idx, pt = restricted_polynomial(a, al)
        dist = abs(pt(1.0) - a) - 1
        eps = min(budget(k), 0.5 * dist)
        eps_used[k] = eps
        targets_used[k] = idx
        K = _K(be, r[k])
        I = K if _contains_one(K) else union(K, points([r[k]]), kind="arcs+point")
        vis = target_poly(pt, r[k])
        if k == 1:
            d = dilate(pt, 1 / r[1])
            checks = [sup_check("visit", [["upto", 1]], I, vis, eps, soft=True)]
            st = log_.add(1, {"d": d}, {"r": r[1], "eps": eps, "alpha": al, "beta": be, "target_index": idx},
                          checks)
            vb[k] = st.checks[0]["bound"]
            continue
        f_prev = log_.sf.series
        w0 = f_prev(r[k - 1])
        w1 = pt(1.0)
        bridge_radius(w0, w1, a, margin)
        hk = bridge_path(w0, w1, a, margin)
        seg = radial_segment(r[k - 1], r[k])
        r0, r1_ = r[k - 1], r[k]
        hv = bridge_value(hk, r0, r1_)
        bridge_t = lambda z, hv=hv, f=f_prev: hv(z) - f(z)
        targets = [ApproximationTarget(disc(r[k - 1]), None, eps, hard=True, name="disc"),
                   ApproximationTarget(seg, bridge_t, eps, name="bridge"),
                   ApproximationTarget(I, dilate(pt, 1 / r[k]) - f_prev, eps, name="visit")]
        # keep f near phi~(1) on the rest of the radius range so later bridges start from a tame function
        hold = ApproximationTarget(radial_segment(r[k], r[N + 1]), lambda z, f=f_prev, w=w1: w - f(z),
                                   0.25, name="hold")
        # the bridge carries the off-disc property: a visit is only accepted if it does not
        # cost the bridge or the hold more than their tolerances
        base = log_.fit(targets[:2] + [hold], 0, k)
        res = log_.fit(targets + [hold], 0, k)
        if res.achieved[1] > max(eps, base.achieved[1]) or res.achieved[3] > max(0.25, base.achieved[2]):
            res = base
        bt = target_bridge(w0, w1, r[k - 1], r[k], a, margin)
        checks = [sup_check("d.disc", [[k, "d"]], disc(r[k - 1]), None, eps),
                  sup_check("bridge", [["upto", k]], seg, bt, eps, soft=True),
                  sup_check("visit", [["upto", k]], I, vis, eps, soft=True)]
        st = log_.add(k, {"d": res.poly}, {"r": r[k], "eps": eps, "alpha": al, "beta": be, "target_index": idx,
                                          "w0": w0, "w1": w1}, checks, fits=[_report(res, "d")])
        vb[k] = st.checks[2]["bound"]
    final = [exact_check("offdisc", "offdisc", {"a": [a.real, a.imag], "r0": r[1], "r1": r[N]},
                         note="|f(r) - a| >= 1/2 on a 5000-point grid of [r_1, r_N]")]
    for k in range(2, N + 1):
        st = log_.sf.stage(k)
        w0, w1 = _cx(st.params["w0"]), _cx(st.params["w1"])
        # sufficient for the off-disc property, which the exact grid check decides
        final.append(dict(sup_check(f"bridge.{k}", [["series"]], radial_segment(r[k - 1], r[k]),
                                    target_bridge(w0, w1, r[k - 1], r[k], a, margin), 0.5), advisory=True))
    for k in range(1, N + 1):
        al, be = schedule_pair(k)
        idx, pt = restricted_polynomial(a, al)
        K = _K(be, r[k])
        I = K if _contains_one(K) else union(K, points([r[k]]), kind="arcs+point")
        tail = sum(eps_used[j] for j in range(k + 1, N + 1))
        # relative 1e-9 covers float rounding when the recorded residual is large
        final.append(sup_check(f"visit.{k}", [["series"]], I, target_poly(pt, r[k]), vb[k] * (1 + 1e-9) + tail,
                               nominal=eps_used[k] + tail))
    log_.sf.info = {"eps": [eps_used[k] for k in range(1, N + 1)], "target_index": [targets_used[k] for k in
                                                                                   range(1, N + 1)]}
    return log_.final(final)


def build_offdisc_pair(a1: complex = 3.0, a2: complex = -3.0, rho="geometric", N: int = 8, **kw):
    """Two off-disc universal functions for centres more than 2 apart (D(a1,1) and D(a2,1) disjoint)."""
    if not abs(complex(a1) - complex(a2)) > 2:
        raise BridgeInfeasible("|a1 - a2| must exceed 2")
    return build_offdisc_universal(a1, rho, N, **kw), build_offdisc_universal(a2, rho, N, **kw)


# ===========================================================================================
# Visitors: f o phi_r in V_n(l) for r in the segments of a labelled family
# ===========================================================================================

def continuity_radius(g: Poly, delta: float) -> float:
    """Least r (bisection, 1e-12) with sum |c_k| (1 - r^k) <= delta/4, which bounds
    sup_{|zeta|=1} |g(s zeta) - g(zeta)| for every s in [r, 1]."""
    c = np.abs(g.coeffs)
    k = np.arange(c.size)
    mod = lambda s: float(np.sum(c * (1 - s ** k)))
    if mod(0.0) <= delta / 4:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = (lo + hi) / 2
        if mod(mid) <= delta / 4:
            hi = mid
        else:
            lo = mid
    return hi


def _sector(K: Region, lo: float, hi: float) -> Region:
    """Boundary of {s zeta : s in [lo, hi], zeta in K}."""
    if hi - lo <= 0:
        return K.dilate(lo)
    pieces = list(K.dilate(lo).pieces) + list(K.dilate(hi).pieces)
    for p in K.pieces:
        if p[0] == "arc":
            for th in (p[3], p[3] + p[4]):
                u = np.exp(1j * th)
                pieces.append(("seg", complex(lo * u), complex(hi * u)))
    return Region("sector", tuple(pieces), {"lo": lo, "hi": hi}, K.density)


def _sample_radii(lo: float, hi: float, m: int = 16):
    return [lo] * 1 if hi <= lo else list(np.linspace(lo, hi, m))


def normalize_segments(gamma):
    """gamma: {(l, n): DensitySet of intervals} or iterable of (lo, hi, l, n[, tag]) -> sorted list of dicts."""
    out = []
    if isinstance(gamma, dict):
        for (l, n), G in gamma.items():
            for lo, hi in G.intervals:
                out.append({"lo": Fraction(lo), "hi": Fraction(hi), "l": int(l), "n": int(n), "tag": 1})
    else:
        for s in gamma:
            lo, hi, l, n = s[:4]
            tag = s[4] if len(s) > 4 else 1
            out.append({"lo": Fraction(lo), "hi": Fraction(hi), "l": int(l), "n": int(n), "tag": int(tag)})
    out.sort(key=lambda d: (d["lo"], d["hi"]))
    for a, b in zip(out, out[1:]):
        if b["lo"] <= a["hi"]:
            raise SegmentOverlap(f"segments [{a['lo']}, {a['hi']}] and [{b['lo']}, {b['hi']}] meet")
    return out


def build_visitor(gamma, V=default_neighborhood, g: Poly | None = None, D: float = 0.5, eps: float = 0.05,
                  budget: dict | None = None, h: Poly | None = None, name: str = "visitor") -> StagedFunction:
    """f close to g on |z| <= D and f o phi_r in V_n(l) for every r in the (truncated) segments of gamma.

    Segments tagged 2 are visited by h - f instead of f (used by decompose_sum).
    budget: max_segments, width, strict.
    """
    budget = dict({"max_segments": 8, "width": DEFAULT_WIDTH, "strict": False}, **(budget or {}))
    g = g if g is not None else Poly()
    h = h if h is not None else Poly()
    segs = normalize_segments(gamma)
    live = []
    for s in segs:
        nb = V(s["l"], s["n"])
        rmin = max(continuity_radius(nb.center, nb.radius), D)
        lo = max(float(s["lo"]), rmin)
        hi = float(s["hi"])
        if lo > hi or lo <= D:
            continue
        live.append(dict(s, lo_t=lo, hi_t=hi, nb=nb))
        if len(live) >= budget["max_segments"]:
            break
    cfg = {"D": D, "eps": eps, "g": poly_to_json(g), "h": poly_to_json(h), "budget": budget,
           "segments": [[frac_str(s["lo"]), frac_str(s["hi"]), s["l"], s["n"], s["tag"]] for s in live]}
    log_ = _Log(name, cfg, DEFAULT_BUDGET, budget["width"], budget["strict"])
    dmin = min([s["nb"].radius for s in live] + [eps])
    radii_in = [D] + [(live[i - 1]["hi_t"] + live[i]["lo_t"]) / 2 for i in range(1, len(live))]
    vis_final = []
    for i, s in enumerate(live):
        nb = s["nb"]
        K = exhaustion_K(nb.carrier)
        sec = _sector(K, s["lo_t"], s["hi_t"])
        S = log_.sf.series
        # target for the running sum on the sector
        gn = nb.center
        goal = gn if s["tag"] == 1 else h - gn
        eta = min(eps, dmin) / 2 ** (i + 3)
        targets = []
        if i == 0:
            targets.append(ApproximationTarget(disc(D), g, eps / 2, hard=True, name="disc"))
            targets.append(ApproximationTarget(sec, goal, nb.radius / 4, name="sector"))
        else:
            targets.append(ApproximationTarget(disc(radii_in[i]), None, eta, hard=True, name="disc"))
            targets.append(ApproximationTarget(sec, goal - S, nb.radius / 4, name="sector"))
        res = log_.fit(targets, 0, i)
        goal_spec = target_poly(gn) if s["tag"] == 1 else target_sum(target_poly(h), target_poly(-gn))
        if i == 0:
            checks = [sup_check("disc", [[0, "P"]], disc(D), target_poly(g), eps / 2)]
        else:
            checks = [sup_check("P.disc", [[i, "P"]], disc(radii_in[i]), None, eta)]
        checks.append(sup_check("sector", [["upto", i]], sec, goal_spec, nb.radius / 4, soft=True))
        log_.add(i, {"P": res.poly}, {"segment": [s["lo_t"], s["hi_t"]], "label": [s["l"], s["n"]], "tag": s["tag"],
                                      "disc_radius": radii_in[i], "eta": eta, "delta": nb.radius},
                 checks, fits=[_report(res, "P")])
        arcs = union(*[K.dilate(t) for t in _sample_radii(s["lo_t"], s["hi_t"])], kind="arcs")
        if s["tag"] == 1:
            tgt = target_poly(gn, radial=True)
        else:
            tgt = target_sum(target_poly(h), target_poly(-gn, radial=True))
        vis_final.append(sup_check(f"membership.{i}", [["series"]], arcs, tgt, nb.radius / 2,
                                   note=f"label {s['l']},{s['n']} tag {s['tag']}"))
    if not live:
        log_.add(0, {"P": g}, {"segment": None}, [sup_check("disc", [[0, "P"]], disc(D), target_poly(g), eps / 2)])
    final = [sup_check("disc", [["series"]], disc(D), target_poly(g), eps)] + vis_final
    log_.sf.info = {"processed": len(live), "available": len(segs)}
    return log_.final(final)


def _sequence_points(rho, A, tag_split: bool = False):
    f = radius_fn(rho)
    exact = rho is None or rho == "geometric"
    out = []
    for (l, n), E in A.items():
        for pos, j in enumerate(E.integers):
            try:
                rj = 1 - Fraction(1, 2 ** (int(j) + 1)) if exact else Fraction(float(f(int(j))))
            except IndexError:  # finite radius list: indices past its end carry no segment
                continue
            if not 0 < rj < 1:
                continue
            tag = (1 + pos % 2) if tag_split else 1
            out.append((rj, rj, l, n, tag))
    return out


def build_frequent(rho_list=("geometric",), mode: str = "lower", N: int = 8, L: int = 2, horizon: int = 400,
                   g: Poly | None = None, D: float = 0.5, eps: float = 0.05, width: int = DEFAULT_WIDTH,
                   strict: bool = False) -> StagedFunction:
    """Frequent Abel universality: the segment families of every radius sequence (A(l,n) pulled
    through rho) merged into one family, or the interval families when rho_list is empty."""
    from .density import make_A_families, make_Gamma_family, uniform_density
    info = {}
    if rho_list:
        A, bounds = make_A_families(L, horizon)
        pts = []
        for rho in rho_list:
            pts += _sequence_points(rho, A)
        pts.sort()
        for p, q in zip(pts, pts[1:]):
            if q[0] <= p[1]:
                raise DisjointnessViolation(f"radius {float(q[0])} used twice")
        gamma = pts
        info["declared_lower"] = {f"{l},{n}": frac_str(b) for (l, n), b in bounds.items()}
    else:
        fams, finfo = make_Gamma_family(mode, L, horizon)
        gamma = fams
        key = (0, 0)
        info["density_00"] = uniform_density(fams[key], mode, horizon)
    sf = build_visitor(gamma, default_neighborhood, g, D, eps,
                       {"max_segments": N, "width": width, "strict": strict}, name="frequent")
    sf.config.update({"rho_list": [_rho_json(r) for r in rho_list], "mode": mode, "L": L, "horizon": horizon})
    sf.info.update(info)
    return sf


def _exact_split(h: Poly, f: Poly):
    """Floats f', c with f' + c == h exactly (coefficientwise) and f' within an ulp of f."""
    n = max(len(h.coeffs), len(f.coeffs))
    hc = np.zeros(n, complex)
    fc = np.zeros(n, complex)
    hc[:len(h.coeffs)] = h.coeffs
    fc[:len(f.coeffs)] = f.coeffs
    fo = np.zeros(n, complex)
    co = np.zeros(n, complex)
    for k in range(n):
        parts = []
        for hv, fv in ((hc[k].real, fc[k].real), (hc[k].imag, fc[k].imag)):
            H, F = Fraction(float(hv)), float(fv)
            for _ in range(8):
                c = float(H - Fraction(F))
                F2 = float(H - Fraction(c))
                if Fraction(F2) + Fraction(c) == H:
                    F = F2
                    break
                F = F2
            else:
                raise ArithmeticError("no exact split found")
            parts.append((F, c))
        fo[k] = complex(parts[0][0], parts[1][0])
        co[k] = complex(parts[0][1], parts[1][1])
    return Poly(fo), Poly(co)


def decompose_sum(h: Poly, rho="geometric", N: int = 8, L: int = 2, horizon: int = 400, eps: float = 0.05,
                  width: int = DEFAULT_WIDTH, strict: bool = False):
    """h = f + (h - f) with f visiting V_n(l) along A^1(l,n) and h - f along A^2(l,n), where
    A^1, A^2 take alternate members of A(l,n).  Returns (f, h - f) as StagedFunctions whose
    coefficients sum to those of h exactly."""
    from .density import make_A_families
    h = Poly(h.coeffs) if isinstance(h, Poly) else Poly(h)
    A, _ = make_A_families(L, horizon)
    pts = _sequence_points(rho, A, tag_split=True)
    f = build_visitor(pts, default_neighborhood, Poly(), 0.5, eps,
                      {"max_segments": N, "width": width, "strict": strict}, h=h, name="decompose_sum")
    f_exact, c = _exact_split(h, f.series)
    corr = f_exact - f.series
    if not corr.is_zero():
        f.stages.append(StageRecord(len(f.stages), {"round": corr}, {"note": "exact split"}))
        f.series = f.series + corr
    if f.series + c != h:
        raise ArithmeticError("split is not exact")
    f.config.update({"rho": _rho_json(rho), "L": L, "horizon": horizon})
    comp = StagedFunction("decompose_sum.complement", {"h": poly_to_json(h), "of": "decompose_sum"})
    comp.stages.append(StageRecord(0, {"c": c}, {"note": "h - f"}))
    comp.series = c
    store = PolyStore(comp)
    checks = []
    for st in f.stages:
        if st.params.get("tag") == 2:
            l, n = st.params["label"]
            nb = default_neighborhood(l, n)
            lo, hi = st.params["segment"]
            arcs = union(*[exhaustion_K(l).dilate(t) for t in _sample_radii(lo, hi)], kind="arcs")
            checks.append(sup_check(f"membership.{st.index}", [["series"]], arcs, target_poly(nb.center, radial=True),
                                    nb.radius / 2, note=f"label {l},{n}"))
    comp.final_checks = [_record(c_, store) for c_ in checks]
    return f, comp


def tail_stability(builder, N: int, *args, **kw):
    """sup over |z| = max radius used of |S_{N+1} - S_N| against sum_{n>N} eps_n."""
    a = builder(*args, N=N, **kw)
    b = builder(*args, N=N + 1, **kw)
    rs = [v for st in a.stages for k, v in st.params.items() if k in ("r", "r_prime") and isinstance(v, float)]
    rmax = max(rs)
    diff = b.series - a.series
    t = ApproximationTarget(disc(rmax), None, 1.0)
    measured = sup_error(diff, t, diff.degree or 0)[0]
    bound = DEFAULT_BUDGET.tail(N + 1)
    return {"radius": rmax, "measured": measured, "bound": bound, "ok": measured < bound}


# ===========================================================================================
# Common membership along a continuous family of radius sequences: one fit
# ===========================================================================================

def default_rho_family(lam: float, n: int) -> float:
    """r_n(lambda) = 1 - 2^-(n+1) (1 + lambda)/2, continuous in lambda in [0, 1], increasing to 1 in n."""
    return 1.0 - 2.0 ** -(n + 1) * (1.0 + lam) / 2.0


def build_common_single_fit(g: Poly | None = None, j: int = 3, l: int = 1, s: int = 10, r: float = 0.02,
                            r_tilde: float = 0.7, eps: float = 0.05, width: int = 128,
                            strict: bool = False) -> StagedFunction:
    """One polynomial f with |f - g| < eps on |z| <= r and |f - phi_j| < 1/(2s) on [r_tilde, 1] K_l.

    For any radius family with r_n(lambda) -> 1, some n puts f o phi_{r_n(lambda)} within 1/s of
    phi_j on K_l once phi_j(r zeta) is within 1/(2s) of phi_j(zeta) there."""
    if not 0 < r < r_tilde < 1:
        raise ValueError("need 0 < r < r_tilde < 1")
    g = g if g is not None else Poly()
    phi = _phi(j)
    K = exhaustion_K(l)
    sec = _sector(K, r_tilde, 1.0)
    log_ = _Log("common_single_fit", {"g": poly_to_json(g), "j": j, "l": l, "s": s, "r": r, "r_tilde": r_tilde,
                                      "eps": eps}, DEFAULT_BUDGET, width, strict)
    targets = [ApproximationTarget(disc(r), g, eps / 2, hard=True, name="disc"),
               ApproximationTarget(sec, phi, 1 / (4 * s), name="sector")]
    res = log_.fit(targets, 0, 1)
    checks = [sup_check("disc", [[1, "P"]], disc(r), target_poly(g), eps),
              sup_check("sector", [[1, "P"]], sec, target_poly(phi), 1 / (2 * s))]
    log_.add(1, {"P": res.poly}, {"r": r, "r_tilde": r_tilde, "phi_index": j}, checks, fits=[_report(res, "P")])
    rmin = max(r_tilde, continuity_radius(phi, 2 / s))
    log_.sf.info = {"membership_radius": rmin, "phi_index": j, "carrier": l, "s": s, "finite": True}
    return log_.final([sup_check("sector", [["series"]], sec, target_poly(phi), 1 / (2 * s))])
