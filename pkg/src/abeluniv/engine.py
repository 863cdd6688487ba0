"""Constrained polynomial fitting: the numerical stand-in for Runge/Mergelyan steps.

A fit is a weighted linear least-squares problem over the monomial slice
z^v..z^(v+w).  Unknowns are rescaled (y_k = c_k rho^k, rho the largest sample
modulus) so that every column is bounded by one on the sample set.  Each target
is reduced to a small triangular block, either through the discrete Fourier
transform (full circles centred at 0, whose columns are orthogonal) or through a
streamed QR factorisation; the blocks are then stacked and solved together.
Sup norms are certified on a grid three times denser than the fit grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, lgamma, log
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .poly import Poly, as_poly, derivative, eval_arc, eval_circle, evaluate, weighted_abs_sum
from .regions import TWO_PI, Region, is_full_circle, _piece_length

VERIFY_FACTOR = 3
DEFAULT_MAX_DEGREE = 4096


class BudgetExceeded(RuntimeError):
    """The degree budget was exhausted before all tolerances were met."""

    def __init__(self, msg, result=None, stage=None):
        super().__init__(msg)
        self.result = result
        self.stage = stage


class ConstraintInfeasible(ValueError):
    pass


@dataclass
class ApproximationTarget:
    """|p^(deriv) - target| <= tolerance on region.  target: None (zero), constant, Poly or callable."""

    region: Region
    target: object = None
    tolerance: float = 1e-2
    hard: bool = False
    deriv: int = 0
    name: str = ""

    def values(self, z: np.ndarray) -> np.ndarray:
        t = self.target
        if t is None:
            return np.zeros(z.shape, complex)
        if isinstance(t, Poly):
            return evaluate(t, z)
        if callable(t):
            return np.broadcast_to(np.asarray(t(z), dtype=complex), z.shape).copy()
        return np.full(z.shape, complex(t))

    @property
    def is_zero(self) -> bool:
        t = self.target
        if t is None:
            return True
        if isinstance(t, Poly):
            return t.is_zero()
        return not callable(t) and complex(t) == 0


@dataclass
class FitConstraints:
    min_valuation: int = 0
    max_degree: int = DEFAULT_MAX_DEGREE
    decay: tuple | None = None          # (R, l): |a_k| R^k <= k^-(l+2)
    strict: bool = True
    rounds: int = 6
    start_width: int | None = None


@dataclass
class FitResult:
    poly: Poly
    achieved: list
    tolerances: list
    names: list
    hard: list
    width: int
    degree_budget: int
    resolutions: list
    ok: bool
    shrunk: float = 1.0
    history: list = field(default_factory=list)

    def __iter__(self):
        # allows `p, achieved = approximate(...)`
        return iter((self.poly, self.achieved))

    def report(self) -> dict:
        return {
            "degree": self.poly.degree, "valuation": self.poly.valuation, "width": self.width,
            "degree_budget": self.degree_budget, "ok": self.ok, "shrunk": self.shrunk,
            "targets": [{"name": n, "tolerance": t, "achieved": a, "hard": h, "resolution": r}
                        for n, t, a, h, r in zip(self.names, self.tolerances, self.achieved, self.hard,
                                                 self.resolutions)],
        }


# -- sampling tied to the degree --------------------------------------------------

def _pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def fit_count(piece, density: float, degree: int, width: int | None = None) -> int:
    """Number of fit samples on one piece for polynomials of the given degree.

    On a segment the monomial slice is a (width+1)-dimensional space of real-variable
    polynomials, so at least twice that many samples are taken whatever the length."""
    if piece[0] == "point":
        return 1
    if piece[0] == "seg" and width is not None:
        L = _piece_length(piece)
        m = max(abs(piece[1]), abs(piece[2]), 1e-300)
        return max(2, int(ceil(density * L + 0.7 * L * (degree + 1) / m)), 2 * (width + 1))
    L = _piece_length(piece)
    if is_full_circle(piece) and piece[1] == 0:
        return _pow2(max(2 * (degree + 1), int(ceil(density * L))))
    if piece[0] == "arc" and piece[1] == 0:
        osc = piece[4] * (degree + 1)
    else:
        m = max(abs(piece[1]), abs(piece[2]) if piece[0] == "seg" else abs(piece[1]) + piece[2], 1e-300)
        osc = L * (degree + 1) / m
    return max(2, int(ceil(density * L + 0.7 * osc)))


def _piece_points(piece, n: int) -> np.ndarray:
    from .regions import sample_piece
    return sample_piece(piece, n)


def _fit_points(piece, n: int) -> np.ndarray:
    """Fit nodes: Chebyshev-Lobatto spacing on segments (no Runge effect), uniform elsewhere."""
    if piece[0] == "seg" and n > 2:
        t = 0.5 * (1 - np.cos(np.pi * np.arange(n) / (n - 1)))
        return piece[1] + t * (piece[2] - piece[1])
    return _piece_points(piece, n)


def _scaled_powers(z: np.ndarray, ks: np.ndarray, rho: float, l: int) -> np.ndarray:
    """Rows fall(k,l) (z/rho)^(k-l) rho^-l, columns k in ks (a dense block)."""
    t = z / rho
    A = np.zeros((z.size, ks.size), complex)
    e = ks - l
    live = e >= 0
    with np.errstate(divide="ignore", invalid="ignore", under="ignore"):
        lt = np.log(t.astype(complex))
        for j in np.flatnonzero(live):
            if e[j] == 0:
                A[:, j] = 1.0
            else:
                col = np.exp(e[j] * lt)
                col[t == 0] = 0.0
                A[:, j] = col
    if l:
        fac = np.exp(np.array([lgamma(k + 1) - lgamma(k - l + 1) if k >= l else -np.inf for k in ks]) - l * log(rho))
        A *= fac[None, :]
    return A


def _reduce_block(A: np.ndarray, b: np.ndarray, R: np.ndarray | None):
    """Fold rows [A | b] into the running triangular factor R (size (w+1) x (w+1))."""
    M = np.hstack([A, b[:, None]])
    if R is not None:
        M = np.vstack([R, M])
    r = sla.qr(M, mode="r", check_finite=False)[0]
    return r[: M.shape[1]]


def _reduce_target(t: ApproximationTarget, ks: np.ndarray, rho: float, degree: int):
    """Triangular (or diagonal) least-squares block for one target, rows normalised per piece."""
    w = ks.size
    blocks = []
    for piece in t.region.pieces:
        n = fit_count(piece, t.region.density, degree, w - 1)
        if is_full_circle(piece) and piece[1] == 0 and t.deriv == 0:
            z = piece[2] * np.exp(1j * TWO_PI * np.arange(n) / n)
            b = eval_circle(t.target, piece[2], n) if isinstance(t.target, Poly) else t.values(z)
            with np.errstate(under="ignore"):
                s = np.exp(ks * log(piece[2] / rho)) if piece[2] > 0 else (ks == 0).astype(float)
            # columns sqrt(n) * F[:, k mod n] * s_k with F unitary; rows normalised by 1/sqrt(n)
            rhs = np.fft.fft(b)[ks % n] / n
            blocks.append((np.diag(s.astype(complex)), rhs))
            continue
        z = _fit_points(piece, n)
        vals = _target_values(t, piece, z, n)
        Rf = None
        chunk = max(256, (1 << 21) // max(w, 1))
        for i in range(0, z.size, chunk):
            zz = z[i:i + chunk]
            A = _scaled_powers(zz, ks, rho, t.deriv) / np.sqrt(n)
            Rf = _reduce_block(A, vals[i:i + chunk] / np.sqrt(n), Rf)
        blocks.append((Rf[:, :w], Rf[:, w]))
    if not blocks:
        return np.zeros((0, w), complex), np.zeros(0, complex)
    return np.vstack([b[0] for b in blocks]), np.concatenate([b[1] for b in blocks])


def _target_values(t: ApproximationTarget, piece, z: np.ndarray, n: int) -> np.ndarray:
    """Target values at the sample points of a piece; polynomial targets on centred arcs go through czt."""
    if isinstance(t.target, Poly) and piece[0] == "arc" and piece[1] == 0 and piece[2] > 0 \
            and not is_full_circle(piece) and n > 1:
        return eval_arc(t.target, piece[2], piece[3], piece[4] / (n - 1), n)
    return t.values(z)


# -- verification ----------------------------------------------------------------------

def sup_error(p: Poly, t: ApproximationTarget, degree: int, factor: float = VERIFY_FACTOR):
    """Grid sup of |p^(deriv) - target| on a grid `factor` times the fit grid; returns (sup, resolution)."""
    q = derivative(p, t.deriv) if t.deriv else p
    if isinstance(t.target, Poly):
        # compare as one polynomial so that fast evaluators apply to the difference
        q = q - t.target
        t = ApproximationTarget(t.region, None, t.tolerance, t.hard, 0, t.name)
    worst, res = 0.0, 0.0
    width = (q.degree - q.valuation) if not q.is_zero() else 0
    for piece in t.region.pieces:
        n = int(ceil(factor * fit_count(piece, t.region.density, degree, width)))
        if piece[0] == "point":
            z = np.array([piece[1]])
            vals = evaluate(q, z)
        elif is_full_circle(piece) and piece[1] == 0:
            z = piece[2] * np.exp(1j * TWO_PI * np.arange(n) / n)
            vals = eval_circle(q, piece[2], n)
            res = max(res, _piece_length(piece) / n)
        elif piece[0] == "arc" and piece[1] == 0 and piece[2] > 0:
            dt = piece[4] / (n - 1)
            z = piece[2] * np.exp(1j * (piece[3] + dt * np.arange(n)))
            vals = eval_arc(q, piece[2], piece[3], dt, n)
            res = max(res, _piece_length(piece) / (n - 1))
        else:
            z = _piece_points(piece, n)
            vals = evaluate(q, z)
            res = max(res, _piece_length(piece) / (n - 1))
        with np.errstate(invalid="ignore", over="ignore"):
            err = np.abs(vals - t.values(z))
        if err.size:
            # overflow or nan means the fit is useless there
            m = float(np.max(err)) if np.all(np.isfinite(err)) else float("inf")
            worst = max(worst, m)
    return worst, res


# -- the fit ------------------------------------------------------------------------------

def _solve(blocks, weights, w):
    A = np.vstack([wt * B for (B, _), wt in zip(blocks, weights)])
    b = np.concatenate([wt * r for (_, r), wt in zip(blocks, weights)])
    if A.shape[0] == 0:
        return np.zeros(w, complex)
    norms = np.sqrt(np.sum(np.abs(A) ** 2, axis=0))
    norms[norms == 0] = 1.0
    y = sla.lstsq(A / norms, b, cond=1e-14, lapack_driver="gelsy", check_finite=False)[0]
    return y / norms


def _to_poly(y: np.ndarray, ks: np.ndarray, rho: float) -> Poly:
    c = np.zeros(int(ks[-1]) + 1, complex)
    with np.errstate(over="ignore", under="ignore"):
        c[ks] = y * np.exp(-ks * log(rho))
    c[~np.isfinite(c)] = 0
    return Poly(c)


def apply_decay(p: Poly, R: float, l: int) -> Poly:
    """Clip coefficients onto |a_k| R^k <= k^-(l+2) (k >= 1), with a relative safety margin."""
    c = np.array(p.coeffs)
    if c.size == 0:
        return p
    k = np.arange(c.size)
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        bound = np.exp(-(l + 2) * np.log(np.maximum(k, 1)) - k * log(R)) * (1 - 1e-12)
    bound[0] = np.inf if c.size else bound[0]
    a = np.abs(c)
    over = a > bound
    c[over] *= bound[over] / a[over]
    return Poly(c)


def decay_holds(p: Poly, R: float, l: int) -> bool:
    """Exact check of |a_k| R^k <= k^-(l+2) on the dyadic coefficients, for k >= 1."""
    from fractions import Fraction
    Rf = Fraction(R)
    for k, a in enumerate(p.coeffs):
        if k == 0 or a == 0:
            continue
        re, im = Fraction(float(a.real)), Fraction(float(a.imag))
        if (re * re + im * im) * Rf ** (2 * k) * Fraction(k) ** (2 * (l + 2)) > 1:
            return False
    return True


def _score(achieved, targets):
    hard = sum(max(0.0, a / t.tolerance - 1) for a, t in zip(achieved, targets) if t.hard)
    soft = sum(max(0.0, a / t.tolerance - 1) for a, t in zip(achieved, targets) if not t.hard)
    return hard, soft


def _widths(v: int, cons: FitConstraints, targets) -> list:
    rho = max(t.region.max_modulus() for t in targets)
    scaled = sum(t.region.length / max(rho, 1e-300) for t in targets)
    w0 = cons.start_width or max(8, int(ceil(8 * scaled)))
    cap = cons.max_degree - v
    if cap < 0:
        raise ConstraintInfeasible("min_valuation exceeds max_degree")
    out, w = [], w0
    while w < cap:
        out.append(w)
        w *= 2
    out.append(cap)
    return out


def approximate(targets, constraints: FitConstraints | None = None) -> FitResult:
    """Least-squares fit meeting every tolerance on its verification grid, escalating the degree.

    Returns a FitResult (unpacks as (poly, achieved)).  Raises BudgetExceeded when
    constraints.strict and some tolerance is still violated at max_degree.
    """
    cons = constraints or FitConstraints()
    targets = [t for t in targets if not t.region.is_empty()]
    for t in targets:
        if not t.tolerance > 0:
            raise ValueError("tolerances must be positive")
    if cons.decay is not None:
        R, l = cons.decay
        if R < 1 or l < 0:
            raise ConstraintInfeasible("decay needs R >= 1 and l >= 0")
    v = cons.min_valuation
    names = [t.name or f"t{i}" for i, t in enumerate(targets)]
    tols = [t.tolerance for t in targets]
    hard = [t.hard for t in targets]
    if not targets:
        return FitResult(Poly(), [], [], [], [], 0, v, [], True)
    rho = max(t.region.max_modulus() for t in targets)
    rho = rho if rho > 0 else 1.0
    best = None
    history = []
    for w in _widths(v, cons, targets):
        ks = np.arange(v, v + w + 1)
        deg = v + w
        blocks = [_reduce_target(t, ks, rho, deg) for t in targets]
        mult = np.ones(len(targets))
        for _ in range(cons.rounds):
            weights = mult / np.array(tols)
            y = _solve(blocks, weights, ks.size)
            p = _to_poly(y, ks, rho)
            if cons.decay is not None:
                p = apply_decay(p, *cons.decay)
            ach, res = zip(*(sup_error(p, t, deg) for t in targets))
            sc = _score(ach, targets)
            cand = (sc, p, list(ach), list(res), w, deg)
            if best is None or sc < best[0]:
                best = cand
            if sc == (0.0, 0.0):
                break
            for i, (a, t) in enumerate(zip(ach, targets)):
                if a > t.tolerance:
                    cap = 1e4 if t.hard else 1e2
                    mult[i] = min(cap, mult[i] * min(100.0 if t.hard else 10.0, 2 * a / t.tolerance))
        history.append({"width": w, "score": list(best[0])})
        if best[0] == (0.0, 0.0):
            break
    sc, p, ach, res, w, deg = best
    shrunk = 1.0
    if sc[0] > 0 and all(t.is_zero for t in targets if t.hard):
        # every hard target is "stay small": scaling the fit down restores them
        for _ in range(3):
            s = min(t.tolerance / a for a, t in zip(ach, targets) if t.hard and a > 0) * (1 - 1e-6)
            if s >= 1:
                break
            p = p * s
            shrunk *= s
            ach = [sup_error(p, t, deg)[0] for t in targets]
            sc = _score(ach, targets)
    ok = sc == (0.0, 0.0)
    result = FitResult(p, ach, tols, names, hard, w, deg, res, ok, shrunk, history)
    if not ok and cons.strict:
        raise BudgetExceeded(f"tolerances unmet at degree {deg}: {dict(zip(names, ach))}", result)
    return result


# -- specialised front-ends ------------------------------------------------------------

def _as_target(phi):
    if phi is None or isinstance(phi, Poly) or callable(phi):
        return phi
    return complex(phi)


def _phi_values(phi, z):
    return ApproximationTarget(region=Region("points", ()), target=_as_target(phi)).values(np.asarray(z, complex))


def flat_tube_delta(K: Region, phi, eps: float, r: float) -> float:
    """Largest delta (by bisection) with |phi(z) - phi(r)| <= eps/2 on rK near r (|z - r| <= delta)."""
    from .regions import sample
    z = sample(K.dilate(r), 8.0)
    base = complex(_phi_values(phi, np.array([r]))[0])
    d = np.abs(z - r)
    dev = np.abs(_phi_values(phi, z) - base)
    lo, hi = 0.0, min(r, 1 - r, 0.25)
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if np.all(dev[d <= mid] <= eps / 2):
            lo = mid
        else:
            hi = mid
    return max(lo, 1e-6)


def stadium(a: float, b: float, delta: float, density: float = 16.0) -> Region:
    """Boundary of {z : dist(z, [a, b]) <= delta}."""
    pieces = (("seg", complex(a, delta), complex(b, delta)),
              ("arc", complex(b), delta, -np.pi / 2, np.pi),
              ("seg", complex(b, -delta), complex(a, -delta)),
              ("arc", complex(a), delta, np.pi / 2, np.pi))
    return Region("stadium", pieces, {"a": a, "b": b, "delta": delta}, density)


def radial_flat_approximate(K: Region, phi, eps: float, l: int, r_in: float, r: float, h: float = 1e-3,
                            min_valuation: int = 0, max_degree: int = 1024, strict: bool = True,
                            extra=()) -> FitResult:
    """P small on |z| <= r_in, |P^(l)| <= eps on [0, r_in] and [r, 1-h], P close to phi on rK.

    If 1 lies in K the segment [r, 1) meets rK; then a tube around [r, 1] carries the
    constant value phi(r), and rK keeps only the part outside that tube.
    """
    from .regions import disc, radial_segment, arc_union
    if not (0 <= r_in < r < 1):
        raise ValueError("need 0 <= r' < r < 1")
    if phi is None or (isinstance(phi, Poly) and phi.is_zero()) or (not callable(phi) and not isinstance(phi, Poly) and complex(phi) == 0):
        if not extra:
            return FitResult(Poly(), [0.0, 0.0], [eps, eps], ["disc", "flat"], [True, True], 0, 0, [0.0, 0.0], True)
    targets = []
    if r_in > 0:
        targets.append(ApproximationTarget(disc(r_in), None, eps, hard=True, name="disc"))
        targets.append(ApproximationTarget(radial_segment(0.0, r_in), None, eps, hard=True, deriv=l, name="flat_inner"))
    targets.append(ApproximationTarget(radial_segment(r, 1 - h), None, eps, hard=True, deriv=l, name="flat_outer"))
    arcs = [(p[3], p[4]) for p in K.pieces if p[0] == "arc"]
    contains_one = any(bool(np.any(_angle_hits(0.0, t0, s))) for t0, s in arcs)
    if contains_one:
        delta = flat_tube_delta(K, phi, eps, r)
        base = complex(_phi_values(phi, np.array([r]))[0])
        targets.append(ApproximationTarget(stadium(r, 1.0, delta), base, eps / 2, name="tube"))
        theta = 2 * np.arcsin(min(1.0, delta / (2 * r)))
        kept = []
        for t0, s in arcs:
            for piece in _subtract_arc((t0, s), (-theta, 2 * theta)):
                kept.append(piece)
        if kept:
            targets.append(ApproximationTarget(arc_union(kept, r, K.density), _dilated(phi), eps / 2, name="arc"))
    else:
        targets.append(ApproximationTarget(K.dilate(r), _dilated(phi), eps, name="arc"))
    targets.extend(extra)
    return approximate(targets, FitConstraints(min_valuation=min_valuation, max_degree=max_degree, strict=strict))


def _dilated(phi):
    return phi


def _angle_hits(theta, t0, span):
    from .regions import angle_in_arc
    return angle_in_arc(np.array([theta]), t0, span)


def _subtract_arc(a, b):
    """Closed arc a minus the open arc b, as a list of (t0, span)."""
    t0, s = a
    b0, bs = b
    out = []
    # walk along a and keep the parts outside b
    d0 = (b0 - t0) % TWO_PI
    d1 = d0 + bs
    if d0 >= s and d1 - TWO_PI <= 0:
        return [a]
    if d1 > TWO_PI:
        # b wraps over the start of a
        start = d1 - TWO_PI
        end = min(s, d0)
        if end > start:
            out.append(((t0 + start) % TWO_PI, end - start))
        return out
    if d0 > 0:
        out.append((t0 % TWO_PI, min(d0, s)))
    if d1 < s:
        out.append(((t0 + d1) % TWO_PI, s - d1))
    return out


def decayed_tail_approximate(K: Region, phi, eps: float, l: int, N: int, R: float, extra=(),
                             max_degree: int = 2048, strict: bool = True, eta: float | None = None,
                             max_width: int | None = None):
    """P = sum_{k >= max(N, M)} a_k z^k with |a_k| R^k <= k^-(l+2), small on |z| <= R, close to phi on K.

    M is the least integer with eps k^(l+2) R^k / (R+eta)^k <= 1 for all k >= M; P is
    fitted small on |z| <= R+eta, so Cauchy's inequalities give the decay, which is
    checked exactly afterwards (refit with a larger M on failure).
    Returns (FitResult, M, eta).
    """
    from .regions import disc
    if R < 1:
        raise ConstraintInfeasible("R must be >= 1")
    zs = np.concatenate([_piece_points(p, 64) for p in K.pieces]) if not K.is_empty() else np.zeros(0)
    dist = float(np.min(np.abs(zs)) - R) if zs.size else 1.0
    if zs.size and dist <= 0:
        raise ConstraintInfeasible("K must lie outside the closed disc of radius R")
    eta = eta if eta is not None else 0.5 * dist
    M = solvability_index(eps, l, R, eta)
    start = max(N, M)
    for attempt in range(4):
        targets = [ApproximationTarget(disc(R + eta), None, eps, hard=True, name="disc")]
        if not K.is_empty():
            targets.append(ApproximationTarget(K, phi, eps, name="tail_target"))
        targets.extend(extra)
        top = start + max_width if max_width else max(max_degree, start + 16)
        res = approximate(targets, FitConstraints(min_valuation=start, max_degree=top, strict=False,
                                                  start_width=min(16, max_width) if max_width else None))
        p = res.poly
        if decay_holds(p, R, l):
            break
        start = int(ceil(start * 1.5)) + 1
    p = apply_decay(res.poly, R, l)
    if not decay_holds(p, R, l):
        raise ConstraintInfeasible("coefficient decay could not be enforced")
    if p is not res.poly:
        ach = [sup_error(p, t, res.degree_budget)[0] for t in targets]
        res = FitResult(p, ach, res.tolerances, res.names, res.hard, res.width, res.degree_budget,
                        res.resolutions, _score(ach, targets) == (0.0, 0.0), res.shrunk, res.history)
    if strict and not res.ok:
        raise BudgetExceeded("decayed tail fit missed its tolerances", res)
    return res, M, eta


def solvability_index(eps: float, l: int, R: float, eta: float) -> int:
    """Least M with eps k^(l+2) R^k / (R+eta)^k <= 1 for every k >= M."""
    q = log(R / (R + eta))
    g = lambda k: log(eps) + (l + 2) * log(k) + k * q
    # g is concave in k and eventually decreasing; scan past its maximum
    kmax = max(1, int(ceil(-(l + 2) / q)))
    M = kmax
    while M > 1 and g(M - 1) <= 0:
        M -= 1
    if g(kmax) > 0:
        M = kmax
        while g(M) > 0:
            M += 1
    return M


def cauchy_bound(eps: float, radius: float, k: int) -> float:
    return eps / radius ** k


def certified_disc_bound(p: Poly, radius: float, l: int = 0) -> float:
    """sum |a_k| fall(k,l) radius^(k-l), an upper bound for sup_{|z|<=radius} |p^(l)|."""
    return weighted_abs_sum(p, radius, l)
