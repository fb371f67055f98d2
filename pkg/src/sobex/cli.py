"""Command line front-end.  Every command prints (or writes) a JSON report."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .capacity import CapacityError, CapacityProblem, estimate_capacity
from .conformal import MapError, build_map
from .geom import DomainError, DomainSpec, l_shape, load_domain, unit_disk, unit_square
from .metricpath import CostFunctional, Inconclusive, duality_check, estimate_condition_constant, exponent_sweep
from .whitney import Side, WhitneyError, decompose

SCHEMA = "sobex/1"

BUILTIN = {
    "disk": unit_disk,
    "square": unit_square,
    "L": l_shape,
    "slit": lambda: DomainSpec.slit_disk(1.0, 0.5),
    "cusp": lambda: DomainSpec.power_cusp(2.0, 1.0),
}


class UsageError(ValueError):
    pass


def resolve_domain(arg: str) -> DomainSpec:
    """A JSON domain file, or one of the built-in names."""
    if arg in BUILTIN and not Path(arg).exists():
        return BUILTIN[arg]()
    if not Path(arg).exists():
        raise UsageError(f"domain file {arg!r} not found (built-ins: {', '.join(BUILTIN)})")
    return load_domain(arg)


def parse_point(text: str) -> complex:
    try:
        x, y = (float(t) for t in text.split(","))
    except ValueError:
        raise UsageError(f"expected a point 'x,y', got {text!r}") from None
    return complex(x, y)


def parse_set(text: str) -> np.ndarray:
    """A file of points (JSON ``[[x, y], ...]`` or ``x,y`` lines), ``x,y;x,y;...``, or ``circle:cx,cy,r[,n]``."""
    path = Path(text)
    if path.suffix in (".json", ".csv", ".txt") and path.exists():
        return _read_points(path)
    if text.startswith("circle:"):
        vals = [float(t) for t in text[7:].split(",")]
        if len(vals) not in (3, 4) or vals[2] <= 0:
            raise UsageError(f"expected circle:cx,cy,r[,n], got {text!r}")
        n = int(vals[3]) if len(vals) == 4 else 2048
        t = 2 * np.pi * np.arange(n + 1) / n
        return complex(vals[0], vals[1]) + vals[2] * np.exp(1j * t)
    return np.array([parse_point(t) for t in text.split(";") if t.strip()])


def _read_points(path: Path) -> np.ndarray:
    raw = path.read_text()
    if path.suffix == ".json":
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        if isinstance(obj, dict):
            obj = obj.get("points")
        if not isinstance(obj, list) or not obj:
            raise UsageError(f"{path}: field 'points': expected a non-empty list of [x, y]")
        pts = []
        for i, v in enumerate(obj):
            if not (isinstance(v, list) and len(v) == 2 and all(isinstance(c, (int, float)) for c in v)):
                raise UsageError(f"{path}: point {i}: expected [x, y], got {v!r}")
            pts.append(complex(v[0], v[1]))
        return np.array(pts)
    pts = []
    for n, line in enumerate(raw.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#") or line.lower().startswith("x"):
            continue
        try:
            pts.append(parse_point(line))
        except UsageError:
            raise UsageError(f"{path}: line {n}: expected 'x,y', got {line!r}") from None
    return np.array(pts)


def parse_p_list(text: str) -> list[float]:
    try:
        ps = sorted(float(t) for t in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated exponents, got {text!r}") from None
    for p in ps:
        if not 1 < p < math.inf:
            raise UsageError(f"exponent {p} must lie in (1, inf)")
    return ps


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "report")}


def _emit(args, result: dict, status: int = 0) -> int:
    report = {
        "schema": SCHEMA,
        "command": args.command,
        "config": _config(args),
        "reproducibility": {
            "seed": getattr(args, "seed", None),
            "depth": getattr(args, "depth", None),
            "h": getattr(args, "h", None),
            "version": __version__,
        },
        "result": result,
    }
    text = json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"
    out = getattr(args, "report", None)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    return status


# -- commands -----------------------------------------------------------------------

def cmd_whitney(args) -> int:
    d = resolve_domain(args.domain)
    w = decompose(d, Side(args.side), args.depth)
    if args.csv:
        w.to_csv(args.csv)
    levels, counts = np.unique(w.level, return_counts=True)
    return _emit(args, {"squares": len(w), "levels": {int(k): int(c) for k, c in zip(levels, counts)},
                        "collar_width": w.collar_width})


def _check_status(verdicts) -> int:
    return 2 if "Inconclusive" in verdicts else 0


def cmd_check(args) -> int:
    d = resolve_domain(args.domain)
    f = CostFunctional(args.p, args.side)
    rep = estimate_condition_constant(d, f, depth=args.depth, n_pairs=args.pairs, seed=args.seed)
    return _emit(args, rep.to_dict(), _check_status([rep.verdict]))


def cmd_sweep(args) -> int:
    d = resolve_domain(args.domain)
    rows = exponent_sweep(d, args.side, args.p, args.depth, args.pairs, args.seed)
    res = {"verdicts": [{"p": p, "max_ratio": r, "verdict": v} for p, r, v in rows]}
    return _emit(args, res, _check_status([v for _, _, v in rows]))


def cmd_duality(args) -> int:
    d = resolve_domain(args.domain)
    out = duality_check(d, args.p, args.depth, args.pairs, args.seed)
    comp, inner = out["complement"], out["interior"]
    res = {"p": out["p"], "q": out["q"], "agree": out["agree"],
           "complement": {"verdict": comp.verdict, "max_ratio": comp.max_ratio, "trend": comp.refinement_trend},
           "interior": {"verdict": inner.verdict, "max_ratio": inner.max_ratio, "trend": inner.refinement_trend}}
    return _emit(args, res, _check_status([comp.verdict, inner.verdict]))


def cmd_capacity(args) -> int:
    d = resolve_domain(args.domain)
    est = estimate_capacity(CapacityProblem(parse_set(args.E), parse_set(args.F), d, args.h), args.tol)
    return _emit(args, est.to_dict())


def cmd_extend(args) -> int:
    from .extend import ball_box, exterior_setup, extend_exterior, sample, sobolev_seminorm
    d = resolve_domain(args.domain)
    r = exterior_setup(d, args.h, args.depth)
    u = sample(d, args.u, args.h, box=ball_box(d))
    ext = extend_exterior(u, d, r)
    if args.out:
        ext.values.save(args.out)
    num = sobolev_seminorm(ext.values, args.p)
    den = sobolev_seminorm(u, args.p, "interior")
    return _emit(args, {"ratio": num.full_norm / den.full_norm, "extended": num.to_dict(),
                        "original": den.to_dict(), "info": ext.info, "constants": r.constants})


def cmd_inner_extend(args) -> int:
    from .extend import core_mask, inner_extend, sample, sobolev_seminorm
    d = resolve_domain(args.domain)
    mi = build_map(d, "interior")
    u = sample(d, args.u, args.h)
    core = core_mask(u, args.eps, mi)
    uc = u.replace(np.where(core, u.values, np.nan))
    e = inner_extend(uc, args.eps, mi, d)
    if args.out:
        e.save(args.out)
    num, den = sobolev_seminorm(e, args.p), sobolev_seminorm(uc, args.p)
    return _emit(args, {"ratio": num.full_norm / den.full_norm, "extended": num.to_dict(), "original": den.to_dict()})


def cmd_necessity(args) -> int:
    from .extend import necessity_test_function, sobolev_seminorm
    d = resolve_domain(args.domain)
    z1, z2 = parse_point(args.z1), parse_point(args.z2)
    phi, info = necessity_test_function(d, z1, z2, args.c1, args.p, args.h)
    if args.out:
        phi.save(args.out)
    n = sobolev_seminorm(phi, args.p)
    sep = abs(z1 - z2)
    return _emit(args, {"integral": n.integral, "ratio": n.integral / sep ** (2 - args.p), **info})


def cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        try:
            rep = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        if rep.get("schema") != SCHEMA:
            raise UsageError(f"{path}: field 'schema': expected {SCHEMA!r}")
        res = rep.get("result", {})
        row = {"file": str(path), "command": rep.get("command")}
        for key in ("verdict", "max_ratio", "ratio", "value", "agree"):
            if key in res:
                row[key] = res[key]
        if "verdicts" in res:
            row["verdicts"] = {str(v["p"]): v["verdict"] for v in res["verdicts"]}
        rows.append(row)
    if args.csv:
        keys = ["file", "command", "verdict", "max_ratio", "ratio", "value", "agree"]
        with open(args.csv, "w") as fh:
            fh.write(",".join(keys) + "\n")
            for row in rows:
                fh.write(",".join(str(row.get(k, "")) for k in keys) + "\n")
    return _emit(args, {"rows": rows})


# -- parser -------------------------------------------------------------------------

def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _exponent(text: str) -> float:
    v = float(text)
    if not 1 < v < math.inf:
        raise argparse.ArgumentTypeError(f"exponent must lie in (1, inf), got {text!r}")
    return v


class _Parser(argparse.ArgumentParser):
    # exit status 2 is reserved for inconclusive verdicts
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sobex", description=__doc__)
    ap.add_argument("--version", action="version", version=f"sobex {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_, grid=False):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        # grid commands use --out for the grid prefix
        flags = ("--report",) if grid else ("--out", "--report")
        sp.add_argument(*flags, dest="report", help="write the JSON report here instead of stdout")
        return sp

    def domain(sp):
        sp.add_argument("--domain", required=True, help="domain JSON file or built-in name")

    def study(sp, p_list=False):
        domain(sp)
        if p_list:
            sp.add_argument("--p", type=parse_p_list, default=[1.2, 1.5, 1.8])
        else:
            sp.add_argument("--p", type=_exponent, default=1.5)
        sp.add_argument("--side", choices=["complement", "interior"], default="complement")
        sp.add_argument("--pairs", type=int, default=200)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--depth", type=int, default=7)

    sp = add("whitney", cmd_whitney, "Whitney decomposition")
    domain(sp)
    sp.add_argument("--side", choices=["interior", "exterior"], default="interior")
    sp.add_argument("--depth", type=int, default=7)
    sp.add_argument("--csv", help="write squares (level,m1,m2) here")

    study(add("check", cmd_check, "condition constant and verdict"))
    study(add("sweep", cmd_sweep, "verdicts over several exponents"), p_list=True)

    sp = add("duality", cmd_duality, "complement-p versus interior-q verdicts")
    domain(sp)
    sp.add_argument("--p", type=_exponent, default=1.5)
    sp.add_argument("--pairs", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--depth", type=int, default=7)

    sp = add("capacity", cmd_capacity, "condenser capacity")
    domain(sp)
    sp.add_argument("--E", required=True, help="'x,y;x,y;...' or 'circle:cx,cy,r'")
    sp.add_argument("--F", required=True, help="'x,y;x,y;...' or 'circle:cx,cy,r'")
    sp.add_argument("--h", type=_positive, default=1 / 64)
    sp.add_argument("--tol", type=_positive, default=1e-8)

    sp = add("extend", cmd_extend, "exterior extension of a test function", grid=True)
    domain(sp)
    sp.add_argument("--u", default="x", help="test family, e.g. x, re_z2, abs_pow:a=0.6")
    sp.add_argument("--p", type=_exponent, default=1.5)
    sp.add_argument("--h", type=_positive, default=1 / 64)
    sp.add_argument("--depth", type=int, default=None)
    sp.add_argument("--out", help="grid output prefix (PREFIX.csv, PREFIX.json)")

    sp = add("inner-extend", cmd_inner_extend, "inner extension from phi(B(0, 1 - eps))", grid=True)
    domain(sp)
    sp.add_argument("--u", default="x")
    sp.add_argument("--eps", type=_positive, default=0.125)
    sp.add_argument("--p", type=_exponent, default=1.5)
    sp.add_argument("--h", type=_positive, default=1 / 128)
    sp.add_argument("--out")

    sp = add("necessity", cmd_necessity, "two-point test function", grid=True)
    domain(sp)
    sp.add_argument("--z1", required=True)
    sp.add_argument("--z2", required=True)
    sp.add_argument("--c1", type=float, default=1.0)
    sp.add_argument("--p", type=_exponent, default=1.5)
    sp.add_argument("--h", type=_positive, default=1 / 128)
    sp.add_argument("--out")

    sp = add("report", cmd_report, "collect reports into one table")
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("--csv")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Inconclusive as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return 2
    except (DomainError, UsageError, CapacityError, MapError, WhitneyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
