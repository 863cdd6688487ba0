"""abeluniv: run builders, replay their logs, run density experiments, export curves.

Exit codes: 0 all checks pass, 1 some check fails, 2 configuration error (nothing written),
3 a strict fit exceeded its budget.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import constructions as C
from . import density as D
from .checks import BridgeInfeasible, NeighborhoodSpec, default_neighborhood
from .engine import BudgetExceeded
from .enumerations import rational_polynomial
from .poly import Poly
from .verify import (VerificationReport, cesaro_growth_check, common_membership_check, replay_stage_log,
                     visit_sup)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_default) + "\n"


def _default(x):
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, (tuple, set)):
        return list(x)
    raise TypeError(type(x))


# -- config parsing --------------------------------------------------------------------------------

def parse_rho(s):
    if s is None or s == "geometric":
        return "geometric"
    if isinstance(s, list):
        vals = s
    else:
        try:
            vals = [float(x) for x in str(s).split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"bad --rho {s!r}: use 'geometric' or a comma separated list")
    vals = [float(v) for v in vals]
    if not vals or any(not 0 < v < 1 for v in vals) or any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError("radii must increase strictly inside (0, 1)")
    return vals


def parse_complex(s) -> complex:
    if isinstance(s, (list, tuple)):
        return complex(*map(float, s))
    try:
        parts = [float(x) for x in str(s).split(",")]
    except ValueError:
        raise ConfigError(f"bad complex number {s!r}")
    if len(parts) not in (1, 2):
        raise ConfigError(f"bad complex number {s!r}")
    return complex(*parts)


def _merge_config(args, parser, argv):
    """Values from --config fill in flags left at their defaults; explicit flags win."""
    if not getattr(args, "config", None):
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config: {e}")
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    explicit = {a.dest for a in sub._actions if a.option_strings and any(o in argv or any(x.startswith(o + "=") for x in argv) for o in a.option_strings)}
    for k, v in cfg.items():
        k = k.replace("-", "_")
        if not hasattr(args, k):
            raise ConfigError(f"unknown config key {k!r}")
        if k not in explicit:
            setattr(args, k, v)
    return args


# -- construct -----------------------------------------------------------------------------------------

CONSTRUCTIONS = ["abel-not-cesaro", "abelD-not-rho", "maxcluster", "deriv-bounded", "uts-r", "offdisc",
                 "offdisc-pair", "visitor", "frequent", "decompose", "common-fit"]


def _build(args):
    """Returns {suffix: StagedFunction}; suffix "" is the main output."""
    N = args.stages
    if N is not None and N < 0:
        raise ConfigError("stage count must be >= 0")
    rho = parse_rho(args.rho)
    kw = {"strict": args.strict}
    if args.width is not None:
        kw["width"] = args.width
    cid = args.construction
    if cid == "abel-not-cesaro":
        return {"": C.build_abel_not_cesaro(rho, 8 if N is None else N, **kw)}
    if cid == "abelD-not-rho":
        return {"": C.build_abelD_not_rho(rho, 10 if N is None else N, **kw)}
    if cid == "maxcluster":
        return {"": C.build_maxcluster_not_abel(None, 6 if N is None else N, **kw)}
    if cid == "deriv-bounded":
        return {"": C.build_abel_deriv_bounded(rho, args.l, 8 if N is None else N, **kw)}
    if cid == "uts-r":
        return {"": C.build_UTS_R_deriv_not(Fraction(args.R).limit_denominator(10 ** 6), args.l,
                                            5 if N is None else N, **kw)}
    if cid == "offdisc":
        return {"": C.build_offdisc_universal(parse_complex(args.a), rho, 8 if N is None else N, **kw)}
    if cid == "offdisc-pair":
        f1, f2 = C.build_offdisc_pair(parse_complex(args.a), parse_complex(args.a2), rho, 8 if N is None else N, **kw)
        return {"": f1, ".second": f2}
    if cid == "visitor":
        fams, _ = D.make_Gamma_family("lower", args.labels, args.horizon)
        return {"": C.build_visitor(fams, default_neighborhood, None, 0.5, 0.05,
                                    {"max_segments": 8 if N is None else N, "width": kw.get("width", C.DEFAULT_WIDTH),
                                     "strict": args.strict})}
    if cid == "frequent":
        return {"": C.build_frequent([rho], "lower", 8 if N is None else N, args.labels, args.horizon, **kw)}
    if cid == "decompose":
        f, comp = C.decompose_sum(rational_polynomial(args.j), rho, 8 if N is None else N, args.labels,
                                  args.horizon, **kw)
        return {"": f, ".complement": comp}
    if cid == "common-fit":
        return {"": C.build_common_single_fit(None, args.j, args.l, args.s, **kw)}
    raise ConfigError(f"unknown construction {cid!r}")


def cmd_construct(args):
    out = Path(args.out)
    built = _build(args)
    files = {}
    ok = True
    for suf, sf in built.items():
        path = out if not suf else out.with_name(out.stem + suf + out.suffix)
        files[path] = sf.dumps() + "\n"
        ok = ok and sf.ok
    return files, ok, {sf.builder + suf: sf.ok for suf, sf in built.items()}


# -- verify -------------------------------------------------------------------------------------------------

def cmd_verify(args):
    try:
        sf = C.StagedFunction.loads(Path(args.run).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read {args.run}: {e}")
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"not a staged function log: {e}")
    rep = replay_stage_log(sf, factor=args.factor)
    if "cesaro_window" in sf.info:
        rep.entries += cesaro_growth_check(sf).entries
    if sf.builder == "common_single_fit":
        l, s, j = sf.info["carrier"], sf.info["s"], sf.info["phi_index"]
        cm = common_membership_check(sf, rational_polynomial(j), l, s, C.default_rho_family,
                                     [i / 10 for i in range(11)], 50)
        rep.entries += cm.entries
    files = {}
    if args.out:
        files[Path(args.out)] = rep.dumps() + "\n"
    return files, rep.ok, rep.summary()


# -- density --------------------------------------------------------------------------------------------------

def _lbl(k):
    return f"{k[0]},{k[1]}"


def density_report(kind: str, L: int, H: int, a=None, r0: float = 0.5):
    rep = VerificationReport(info={"experiment": kind, "labels": L, "horizon": H})
    if kind == "gamma-lower":
        fams, info = D.make_Gamma_family("lower", L, H)
        for k, G in sorted(fams.items()):
            M = info["M"][k]
            meas = D.uniform_density(G, "lower", H)
            bound = 2 / (3 * M * M) - 0.02
            rep.add(f"lower.{_lbl(k)}", meas >= bound, meas, bound, M=M)
            # complementarity: lower density of the complement + upper density of G = 1
            up = D.uniform_density(G, "upper", H)
            lc = D.uniform_density(G.complement(), "lower", H)
            rep.add(f"complement.{_lbl(k)}", abs(lc + up - 1) <= 1e-6, abs(lc + up - 1), 1e-6)
    elif kind == "gamma-upper":
        fams, info = D.make_Gamma_family("upper", L, H)
        for k, G in sorted(fams.items()):
            best = 0.0
            for i in info["owner"][k]:
                Ni, _ = info["blocks"][i]
                n = 2 ** Ni
                best = max(best, float(n * G.measure(1 - Fraction(1, n), Fraction(1))))
            rep.add(f"upper.{_lbl(k)}", best >= 0.9, best, 0.9, blocks=info["owner"][k])
    elif kind == "a-families":
        fams, bounds = D.make_A_families(L, H)
        ok, sep = D.verify_separation(fams, H)
        rep.add("separation", ok, 0 if ok else 1, 0, detail=sep)
        for k, E in sorted(fams.items()):
            meas = D.natural_density(E, "lower", H)
            b = float(bounds[k])
            rep.add(f"lower.{_lbl(k)}", meas >= b - 0.02, meas, b - 0.02)
    elif kind == "pullback":
        fams, _ = D.make_Gamma_family("lower", L, H)
        reps = [D.affine(x) for x in (a or [1.0, 0.5, 0.1])] + [D.homographic(0.5, r0)]
        for rp in reps:
            for k, G in sorted(fams.items()):
                meas, bound = D.pullback_density_bound(G, rp, H)
                rep.add(f"pullback.{rp.name}({rp.a:g}).{_lbl(k)}", meas >= bound - 0.03, meas, bound - 0.03)
    else:
        raise ConfigError(f"unknown density experiment {kind!r}")
    return rep


def cmd_density(args):
    if args.labels < 1 or args.horizon < 2:
        raise ConfigError("need labels >= 1 and horizon >= 2")
    a = [float(x) for x in str(args.a).split(",")] if args.a else None
    rep = density_report(args.experiment, args.labels, args.horizon, a)
    return {Path(args.out): rep.dumps() + "\n"}, rep.ok, rep.summary()


# -- export-csv ----------------------------------------------------------------------------------------------------

def curve_rows(sf, carrier: int, target: int, lo: float, hi: float, count: int, m: int = 512):
    V = NeighborhoodSpec(carrier, rational_polynomial(target), 1.0)
    for r in np.linspace(lo, hi, count):
        yield float(r), visit_sup(sf, V, float(r), m), target, carrier


def check_rows(sf):
    for c in sf.final_checks:
        if c["kind"] != "sup":
            continue
        reg = c["region"]
        radius = reg.get("params", {}).get("radius")
        carrier = reg.get("params", {}).get("n", "")
        if radius is None:
            continue
        yield float(radius), float(c["measured"]), c["id"], carrier


def cmd_export(args):
    try:
        sf = C.StagedFunction.loads(Path(args.run).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read {args.run}: {e}")
    if args.grid:
        try:
            lo, hi, cnt = args.grid.split(",")
            lo, hi, cnt = float(lo), float(hi), int(cnt)
        except ValueError:
            raise ConfigError("--grid expects lo,hi,count")
        if not (0 <= lo <= hi < 1) or cnt < 1:
            raise ConfigError("grid must satisfy 0 <= lo <= hi < 1, count >= 1")
        rows = list(curve_rows(sf, args.carrier, args.target, lo, hi, cnt))
    else:
        rows = list(check_rows(sf))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["r", "sup_error", "target_id", "carrier_id"])
    for r, e, t, k in rows:
        w.writerow([repr(r), repr(e), t, k])
    return {Path(args.out): buf.getvalue()}, True, f"{len(rows)} rows"


# -- entry point -------------------------------------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="abeluniv", description="Abel universal function toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("construct", help="run a builder and write its stage log")
    c.add_argument("construction", choices=CONSTRUCTIONS)
    c.add_argument("--stages", "-N", type=int, default=None)
    c.add_argument("--rho", default="geometric", help="'geometric' (1-2^-(n+1)) or r1,r2,...")
    c.add_argument("--width", type=int, default=None, help="degree budget per stage")
    c.add_argument("--strict", action="store_true", help="exit 3 when a fit misses its tolerance")
    c.add_argument("--l", type=int, default=1)
    c.add_argument("--R", default="1")
    c.add_argument("--a", default="3")
    c.add_argument("--a2", default="-3")
    c.add_argument("--j", type=int, default=3)
    c.add_argument("--s", type=int, default=10)
    c.add_argument("--labels", type=int, default=3)
    c.add_argument("--horizon", type=int, default=400)
    c.add_argument("--config")
    c.add_argument("--out", required=True)
    c.add_argument("--meta", help="metadata file (default: <out>.meta.json); 'none' to skip")
    c.set_defaults(run=None, func=cmd_construct)

    v = sub.add_parser("verify", help="replay a stage log")
    v.add_argument("run")
    v.add_argument("--factor", type=float, default=2.0)
    v.add_argument("--out")
    v.add_argument("--meta")
    v.add_argument("--config")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("density", help="density experiments")
    d.add_argument("experiment", choices=["gamma-lower", "gamma-upper", "a-families", "pullback"])
    d.add_argument("--labels", type=int, default=3)
    d.add_argument("--horizon", type=int, default=100000)
    d.add_argument("--a", help="comma separated affine parameters (pullback)")
    d.add_argument("--out", required=True)
    d.add_argument("--meta")
    d.add_argument("--config")
    d.set_defaults(func=cmd_density)

    e = sub.add_parser("export-csv", help="r, sup error curves from a stage log")
    e.add_argument("run")
    e.add_argument("--grid", help="lo,hi,count: sample r and measure against phi_target on K_carrier")
    e.add_argument("--carrier", type=int, default=1)
    e.add_argument("--target", type=int, default=1)
    e.add_argument("--out", required=True)
    e.add_argument("--meta")
    e.add_argument("--config")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    t0 = time.time()
    try:
        args = _merge_config(args, parser, argv)
        files, ok, summary = args.func(args)
    except (ConfigError, BridgeInfeasible, C.SegmentOverlap) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as e:
        print(f"budget exceeded: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for path, text in files.items():
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    meta = getattr(args, "meta", None)
    if files and meta != "none":
        first = next(iter(files))
        mpath = Path(meta) if meta else first.with_name(first.name + ".meta.json")
        mpath.write_text(_dump({"argv": argv,
                                "started": datetime.fromtimestamp(t0, timezone.utc).isoformat(),
                                "elapsed_s": round(time.time() - t0, 3), "outputs": [str(p) for p in files]}))
    print(summary if isinstance(summary, str) else _dump(summary).strip())
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
