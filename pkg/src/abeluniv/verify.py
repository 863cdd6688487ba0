"""Independent re-checks of what the builders claim, computed from the coefficients alone."""
from __future__ import annotations

import json
import platform
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .checks import NeighborhoodSpec, PolyStore, default_neighborhood, measure
from .constructions import SCHEMA, StagedFunction
from .density import DensitySet
from .engine import VERIFY_FACTOR
from .enumerations import EpsilonBudget, SCHEDULE_VERSION
from .poly import Poly, as_poly, derivative, dyadic_ints, eval_arc
from .regions import TWO_PI, exhaustion_K

RELAX = 0.05
NEAR = 0.10

__all__ = ["NeighborhoodSpec", "VerificationReport", "TailUnreliable", "visit_set", "visit_sup", "replay_stage_log",
           "cesaro_growth_check", "derivative_bound_check", "common_membership_check", "offdisc_check",
           "tail_bound", "default_neighborhood"]


class TailUnreliable(ValueError):
    pass


def _environment():
    return {"schema": SCHEMA, "schedule": SCHEDULE_VERSION, "numpy": np.__version__,
            "python": platform.python_version(), "verify_factor": VERIFY_FACTOR}


@dataclass
class VerificationReport:
    entries: list = field(default_factory=list)
    environment: dict = field(default_factory=_environment)
    info: dict = field(default_factory=dict)

    def add(self, cid, passed, measured, bound, resolution=0.0, **extra):
        e = {"id": cid, "passed": bool(passed), "measured": float(measured), "bound": float(bound),
             "resolution": float(resolution)}
        e.update(extra)
        self.entries.append(e)
        return e

    @property
    def ok(self) -> bool:
        return all(e["passed"] for e in self.entries if not e.get("advisory"))

    @property
    def failures(self):
        return [e for e in self.entries if not e["passed"] and not e.get("advisory")]

    def to_json(self):
        return {"schema": SCHEMA, "kind": "verification", "ok": self.ok, "entries": self.entries,
                "environment": self.environment, "info": self.info}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"), default=_default)

    def summary(self) -> str:
        n = len(self.entries)
        return f"{n - len(self.failures)}/{n} checks passed" + ("" if self.ok else
                                                               f"; failing: {[e['id'] for e in self.failures][:8]}")


def _default(x):
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(type(x))


# -- tail model --------------------------------------------------------------------------------

def _series(f) -> Poly:
    return f.series if isinstance(f, StagedFunction) else as_poly(f)


def reliable_radius(sf: StagedFunction) -> float:
    """Largest radius on which the unbuilt stages are controlled: every later stage is small on a disc
    containing the radii used so far."""
    rs = []
    for st in sf.stages:
        for k in ("r", "r_prime"):
            v = st.params.get(k)
            if isinstance(v, (int, float)):
                rs.append(float(v))
        seg = st.params.get("segment")
        if isinstance(seg, (list, tuple)) and seg:
            rs.append(float(seg[1]))
    if "segment_range" in sf.info:
        rs.append(float(sf.info["segment_range"][1]))
    return max(rs) if rs else 0.0


def tail_bound(f, r: float) -> float:
    """Bound for |f_infinite - f_truncated| on |z| <= r: 0 for a bare polynomial; for a staged
    function sum_{n>N} eps_n = 2c 2^-(N+1) on the reliable radius, infinite beyond it.  A builder
    that produces a single polynomial marks itself finite."""
    if not isinstance(f, StagedFunction) or f.info.get("finite"):
        return 0.0
    if r > reliable_radius(f) + 1e-15:
        return float("inf")
    c = Fraction(f.config.get("budget_c", "1/16"))
    N = max((st.index for st in f.stages), default=0)
    return EpsilonBudget(c).tail(N + 1)


def _gate(f, r, delta):
    t = tail_bound(f, r)
    if t >= delta / 10:
        raise TailUnreliable(f"tail bound {t:.3g} >= delta/10 = {delta / 10:.3g} at r = {r}")


# -- visits ---------------------------------------------------------------------------------------

def _arc_grid(K, m):
    pieces = [p for p in K.pieces if p[0] == "arc"]
    return [(p[3], p[4] / (m - 1), m) for p in pieces]


def visit_sup(f, V: NeighborhoodSpec, r: float, m: int | None = None) -> float:
    """Grid sup over K_l of |f(r zeta) - g(zeta)| (chirp z-transform on each arc)."""
    p = _series(f)
    K = exhaustion_K(V.carrier)
    deg = p.degree or 0
    m = m or max(512, 4 * (deg + 1))
    worst = 0.0
    for t0, dt, n in _arc_grid(K, m):
        fv = eval_arc(p, r, t0, dt, n)
        gv = eval_arc(V.center, 1.0, t0, dt, n)
        with np.errstate(invalid="ignore", over="ignore"):
            e = np.abs(fv - gv)
        worst = max(worst, float(np.max(e)) if np.all(np.isfinite(e)) else float("inf"))
    return worst


def visit_set(f, V: NeighborhoodSpec, radii, m: int | None = None) -> DensitySet:
    """Indices n (1-based) with f o phi_{r_n} in V for a radius sequence, or maximal intervals of
    consecutive passing points for a grid given as ("grid", lo, hi, count)."""
    if isinstance(radii, tuple) and radii and radii[0] == "grid":
        _, lo, hi, cnt = radii
        rs = np.linspace(lo, hi, int(cnt))
        grid = True
    else:
        rs = np.asarray(list(radii), float)
        grid = False
    if np.any(rs >= 1) or np.any(rs < 0):
        raise ValueError("radii must lie in [0, 1)")
    for r in rs:
        _gate(f, float(r), V.radius)
    ok = np.array([visit_sup(f, V, float(r), m) < V.radius for r in rs], bool)
    if not grid:
        return DensitySet.from_integers([i + 1 for i in np.flatnonzero(ok)], max(len(rs), 1))
    ivs, i = [], 0
    while i < len(rs):
        if ok[i]:
            j = i
            while j + 1 < len(rs) and ok[j + 1]:
                j += 1
            ivs.append((Fraction(float(rs[i])), Fraction(float(rs[j]))))
            i = j + 1
        else:
            i += 1
    return DensitySet.from_intervals(ivs)


# -- replay -------------------------------------------------------------------------------------------

def replay_stage_log(sf: StagedFunction, factor: float = 2.0, relax: float = RELAX) -> VerificationReport:
    """Recompute every recorded check at `factor` times the recorded resolution; pass within `relax`."""
    if isinstance(sf, (str, bytes)):
        sf = StagedFunction.loads(sf)
    elif isinstance(sf, dict):
        sf = StagedFunction.from_json(sf)
    rep = VerificationReport(info={"builder": sf.builder, "stages": len(sf.stages)})
    same = sf.recompute_series() == sf.series
    rep.add("series_consistency", same, 0.0 if same else 1.0, 0.0)
    store = PolyStore(sf)
    for st_idx, c in [(st.index, c) for st in sf.stages for c in st.checks] + [(None, c) for c in sf.final_checks]:
        cid = c["id"] if st_idx is None else f"stage{st_idx}.{c['id']}"
        adv = bool(c.get("advisory"))
        if c["kind"] == "sup":
            fac = c.get("factor", VERIFY_FACTOR) * factor
            m, res = measure(c, store, fac)
            limit = c["bound"] * (1 + relax)
            if limit > 0 and abs(m - limit) <= NEAR * limit:
                m, res = measure(c, store, 2 * fac)
            rep.add(cid, m <= limit, m, c["bound"], res, stage=st_idx, advisory=adv, recorded=c.get("measured"))
        else:
            m, _ = measure(c, store)
            rep.add(cid, m <= c["bound"], m, c["bound"], 0.0, stage=st_idx, advisory=adv, recorded=c.get("measured"))
    return rep


# -- Cesaro growth --------------------------------------------------------------------------------------

def cesaro_scan(p: Poly, k_min: int, k_max: int):
    """Exact scan of |sum_{l=1}^k S_l(p)(1)| >= k over [k_min, k_max]: (failures, first failing k)."""
    c = p.coeffs
    n = min(len(c), k_max + 1)
    re, e1 = dyadic_ints(np.real(c[:n]))
    im, e2 = dyadic_ints(np.imag(c[:n]))
    E = min(e1, e2)
    re = [x << (e1 - E) for x in re]
    im = [x << (e2 - E) for x in im]
    scale2 = 1 << (-2 * E)
    Sr = Si = Xr = Xi = 0
    bad, first = 0, None
    for k in range(k_max + 1):
        if k < n:
            Sr += re[k]
            Si += im[k]
        if k >= 1:
            Xr += Sr
            Xi += Si
        if k >= max(k_min, 1) and Xr * Xr + Xi * Xi < k * k * scale2:
            bad += 1
            if first is None:
                first = k
    return bad, first


def cesaro_growth_check(f, k_max: int | None = None, k_min: int | None = None) -> VerificationReport:
    """Exact check on the certified window (from the builder log when available, else [1, k_max])."""
    rep = VerificationReport()
    win = f.info.get("cesaro_window") if isinstance(f, StagedFunction) else None
    lo = k_min if k_min is not None else (win[0] if win else 1)
    hi = k_max if k_max is not None else (win[1] if win else 0)
    if hi < lo:
        rep.add("cesaro", True, 0, 0, window=[lo, hi], note="empty window")
        return rep
    bad, first = cesaro_scan(_series(f), lo, hi)
    rep.add("cesaro", bad == 0, bad, 0, window=[lo, hi], first_failure=first)
    return rep


# -- derivative bounds -------------------------------------------------------------------------------------

def derivative_bound_check(f, l: int, radii, bound: float) -> VerificationReport:
    rep = VerificationReport()
    d = derivative(_series(f), l)
    for i, r in enumerate(radii):
        if not 0 <= r < 1:
            raise ValueError("radii must lie in [0, 1)")
        v = abs(d(complex(r)))
        rep.add(f"deriv{l}.r{i + 1}", v <= bound, v, bound, 0.0, radius=float(r))
    return rep


# -- off-disc avoidance -------------------------------------------------------------------------------------

def offdisc_check(f, a: complex, r0: float, r1: float, points: int = 5000, margin: float = 0.5) -> VerificationReport:
    rep = VerificationReport()
    r = np.linspace(r0, r1, points)
    v = np.abs(_series(f)(r.astype(complex)) - complex(a))
    rep.add("offdisc", bool(np.min(v) >= margin), float(np.min(v)), margin, float((r1 - r0) / (points - 1)),
            note="min |f(r) - a| over the grid; bound is the required minimum")
    rep.entries[-1]["passed"] = bool(np.min(v) >= margin)
    return rep


# -- common membership ------------------------------------------------------------------------------------------

def common_membership_check(f, phi, l: int, s: int, rho_family, lam_grid, n_max: int,
                            m: int | None = None) -> VerificationReport:
    """For each lambda find n <= n_max with sup_{K_l} |f(r_n(lambda) zeta) - phi(zeta)| < 1/s."""
    rep = VerificationReport()
    V = NeighborhoodSpec(l, as_poly(phi), 1.0 / s)
    lam_grid = list(lam_grid)
    # continuity on the grid: neighbour differences of r_n(lambda)
    jumps = [max((abs(rho_family(a, n) - rho_family(b, n)) for a, b in zip(lam_grid, lam_grid[1:])), default=0.0)
             for n in range(n_max + 1)]
    rep.info["neighbour_difference"] = max(jumps) if jumps else 0.0
    for lam in lam_grid:
        found, best = None, float("inf")
        for n in range(n_max + 1):
            r = float(rho_family(lam, n))
            if not 0 <= r < 1:
                raise ValueError("radii must lie in [0, 1)")
            _gate(f, r, V.radius)
            e = visit_sup(f, V, r, m)
            best = min(best, e)
            if e < V.radius:
                found = n
                break
        rep.add(f"lambda={lam:g}", found is not None, best, V.radius, n=found)
    return rep
