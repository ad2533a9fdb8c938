"""Command-line front end: ``bee-ident {bench,simulate,sweep,scan,identify}``.

Every run writes ``run_config.json`` into its output directory. Passing that
file back through ``--config`` replays the run and reproduces its result
files byte for byte. Precedence: built-in defaults, then the config file,
then command-line flags.

Exit codes: 0 success, 1 runtime or solver failure, 2 usage or config error.
"""

from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
import argparse
import csv
import json
import logging
import math
import os
from pathlib import Path
import sys

import numpy as np

from . import benchmarks, inverse, mbc, presets
from .errors import ConfigError, ObjectiveError, SolverError
from .transport import TransportParams, mass_audit, simulate, write_field_csv

log = logging.getLogger("bee_ident")

WORKERS_ENV = "BEE_IDENT_WORKERS"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SWEEPABLE = ("pe", "da_a", "da_d", "m_cap")
BENCH_CHUNK = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    command: str
    seed: int = None
    workers: int = 1
    out: str = "."
    blocks: dict = field(default_factory=dict)  # mbc / transport / identification / ...

    def to_dict(self):
        d = {"command": self.command, "seed": self.seed, "workers": self.workers,
             "out": self.out}
        d.update(self.blocks)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        head = {k: d.pop(k) for k in ("command", "seed", "workers", "out") if k in d}
        if "command" not in head:
            raise ConfigError("config is missing 'command'")
        return cls(blocks=d, **head)

    def dump(self, path):
        _write_json(path, self.to_dict())


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _floats(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None
    return vals


def _grid(text):
    parts = text.lower().replace("*", "x").split("x")
    try:
        n1, n2 = (int(p) for p in parts)
    except ValueError:
        raise UsageError(f"grid must look like 20x20, got {text!r}") from None
    return [n1, n2]


def _transport_from(block, base=None):
    base = (base or TransportParams()).to_dict()
    unknown = set(block) - set(base)
    if unknown:
        raise ConfigError(f"unknown transport parameters: {sorted(unknown)}")
    base.update(block)
    return TransportParams(**base)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _common(p):
    p.add_argument("--config", help="JSON run config (e.g. a stored run_config.json)")
    p.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory (created if missing)")
    p.add_argument("--workers", type=int,
                   help=f"worker processes for objective evaluations (default ${WORKERS_ENV} or 1)")
    p.add_argument("--quiet", action="store_true", help="suppress progress on stderr")


def _transport_flags(p):
    g = p.add_argument_group("transport")
    g.add_argument("--pe", type=float)
    g.add_argument("--da-a", type=float, dest="da_a")
    g.add_argument("--da-d", type=float, dest="da_d")
    g.add_argument("--m-cap", type=float, dest="m_cap")
    g.add_argument("--isotherm", choices=("henry", "langmuir"))
    g.add_argument("--nx", type=int)
    g.add_argument("--ny", type=int)
    g.add_argument("--dt", type=float)
    g.add_argument("--t-end", type=float, dest="t_end")
    g.add_argument("--legacy-flux-coupling", action="store_true", default=None)


def _ident_flags(p):
    g = p.add_argument_group("identification")
    g.add_argument("--preset", choices=sorted(presets.PRESETS),
                   help="named problem providing truth, bounds and optimizer settings")
    g.add_argument("--reference", help="reference curve CSV (t,c_out) instead of a synthetic one")
    g.add_argument("--sigma", type=float, help="noise level added to a synthetic reference")


def build_parser():
    parser = _Parser(prog="bee-ident", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("bench", help="run the optimizer on test functions")
    _common(p)
    p.add_argument("names", nargs="*", help="benchmark names or 'all' (default all)")
    p.add_argument("--trace", action="store_true", help="also write per-iteration trace CSVs")

    p = sub.add_parser("simulate", help="run the direct problem once")
    _common(p)
    _transport_flags(p)
    p.add_argument("--snapshots", type=_floats, help="times for field snapshots, e.g. 450,900")
    p.add_argument("--audit", action="store_true", help="report the mass-balance residual")

    p = sub.add_parser("sweep", help="curve family over one parameter")
    _common(p)
    _transport_flags(p)
    p.add_argument("--param", choices=SWEEPABLE)
    p.add_argument("--values", type=_floats)

    p = sub.add_parser("scan", help="misfit J on a uniform 2-D grid")
    _common(p)
    _transport_flags(p)
    _ident_flags(p)
    p.add_argument("--grid", type=_grid, help="cells per axis, e.g. 20x20")
    p.add_argument("--fix", help="fixed parameter for 3-parameter problems, e.g. m_cap=1000")

    p = sub.add_parser("identify", help="identify wall parameters with the bee colony")
    _common(p)
    _transport_flags(p)
    _ident_flags(p)
    p.add_argument("--epsilon", type=float, help="override the optimizer stop criterion")
    p.add_argument("--trace", action="store_true", help="also write the optimizer trace CSV")
    return parser


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------


def resolve(args):
    """Merge defaults, the optional config file and flags into a RunConfig."""
    if args.config:
        rc = RunConfig.from_dict(_load_json(args.config))
        if rc.command != args.command:
            raise ConfigError(f"config is for '{rc.command}', not '{args.command}'")
    else:
        rc = RunConfig(args.command)
    if args.seed is not None:
        rc.seed = args.seed
    if args.out is not None:
        rc.out = args.out
    if args.workers is not None:
        rc.workers = args.workers
    elif not args.config:
        env = os.environ.get(WORKERS_ENV)
        try:
            rc.workers = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    if rc.workers < 1:
        raise ConfigError("workers must be >= 1")
    if rc.seed is not None and not (0 <= rc.seed < 2**64):
        raise ConfigError("seed must fit in an unsigned 64-bit integer")
    b = rc.blocks
    flags = {k: getattr(args, k, None) for k in TransportParams.__dataclass_fields__}
    flags = {k: v for k, v in flags.items() if v is not None}

    if args.command == "bench":
        names = args.names or b.get("bench", {}).get("names") or ["all"]
        if "all" in names:
            names = [s.name for s in benchmarks.registry()]
        for nm in names:
            benchmarks.get(nm)
        b.setdefault("bench", {})["names"] = list(names)
        b["bench"]["trace"] = bool(args.trace or b["bench"].get("trace", False))
        b.setdefault("mbc", {})
    elif args.command in ("simulate", "sweep"):
        tr = _transport_from(b.get("transport", {}))
        b["transport"] = _transport_from(flags, tr).to_dict()
        if args.command == "simulate":
            blk = b.setdefault("simulate", {})
            if args.snapshots is not None:
                blk["snapshots"] = args.snapshots
            blk.setdefault("snapshots", [])
            blk["audit"] = bool(args.audit or blk.get("audit", False))
        else:
            blk = b.setdefault("sweep", {})
            if args.param is not None:
                blk["param"] = args.param
            if args.values is not None:
                blk["values"] = args.values
            if blk.get("param") not in SWEEPABLE:
                raise ConfigError(f"sweep needs --param, one of {SWEEPABLE}")
            if not blk.get("values"):
                raise ConfigError("sweep needs a non-empty --values list")
    else:
        _resolve_ident(args, rc, flags)
    if rc.seed is None:
        default = benchmarks.BENCH_SEED if args.command == "bench" else 0
        rc.seed = int(b.get("mbc", {}).get("seed", default))
    if "mbc" in b:
        b["mbc"]["seed"] = rc.seed
    return rc


def _resolve_ident(args, rc, flags):
    b = rc.blocks
    ident = b.setdefault("identification", {})
    preset_name = args.preset or ident.get("preset")
    if preset_name is None and not b.get("transport"):
        preset_name = "henry"
    if preset_name:
        pre = presets.get(preset_name)
        ident.setdefault("preset", preset_name)
        b.setdefault("transport", pre.truth.to_dict())
        ident.setdefault("bounds", [list(x) for x in zip(pre.bounds.lo, pre.bounds.hi)])
        b.setdefault("mbc", pre.mbc.to_dict())
        if args.seed is None and rc.seed is None:
            rc.seed = pre.mbc.seed
    tr = _transport_from(flags, _transport_from(b.get("transport", {})))
    b["transport"] = tr.to_dict()
    ident.setdefault("fixed_pe", tr.pe)
    if "bounds" not in ident:
        raise ConfigError("identification needs bounds (or a --preset)")
    if args.reference is not None:
        ident["reference"] = str(args.reference)
    if args.sigma is not None:
        ident["sigma"] = args.sigma
    ident.setdefault("sigma", 0.0)
    mblk = b.setdefault("mbc", {})
    if args.command == "identify":
        if args.epsilon is not None:
            mblk["epsilon"] = args.epsilon
        b.setdefault("output", {})["trace"] = bool(args.trace or b.get("output", {}).get("trace"))
        mbc.MbcConfig.from_dict({**mblk, "seed": rc.seed or 0})
    else:
        scan = b.setdefault("scan", {})
        if args.grid is not None:
            scan["grid"] = args.grid
        scan.setdefault("grid", [20, 20])
        if args.fix is not None:
            name, _, value = args.fix.partition("=")
            try:
                scan["fixed"] = [name.strip(), float(value)]
            except ValueError:
                raise UsageError(f"--fix must look like name=value, got {args.fix!r}") from None
        if tr.isotherm == "langmuir" and "fixed" not in scan:
            scan["fixed"] = ["m_cap", tr.m_cap]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


@contextmanager
def _executor(workers):
    if workers <= 1:
        yield None
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            yield ex


def _fmt(v):
    return f"{v:.17g}"


def _bench_report(name, spec, cfg, res, trace, out):
    hits = benchmarks.match_minima(spec, res.extrema)
    ok = all(hits)
    report = {
        "benchmark": name,
        "mbc": cfg.to_dict(),
        "nfe": res.nfe,
        "iterations": res.iterations,
        "extrema": [{"point": list(p), "value": v} for p, v in res.extrema],
        "known_minima": [{"point": list(p), "value": v, "matched": h}
                         for (p, v), h in zip(spec.known_minima, hits)],
        "matched": ok,
    }
    _write_json(out / f"bench_{name}.json", report)
    if trace:
        mbc.write_trace_csv(res, out / f"bench_{name}_trace.csv")
    return name, ok, res.nfe, res.iterations, res.best


def cmd_bench(rc, out):
    blk = rc.blocks["bench"]
    overrides = rc.blocks.get("mbc", {})
    summary = []
    with _executor(rc.workers) as ex:
        for name in blk["names"]:
            spec = benchmarks.get(name)
            cfg = mbc.MbcConfig.from_dict({**spec.config.to_dict(), **overrides})
            # test functions are cheap, so ship them to workers in large chunks
            ev = mbc.Evaluator(spec, executor=ex, chunksize=BENCH_CHUNK)
            res = mbc.run(spec, spec.domain, cfg, evaluator=ev, trace=blk["trace"])
            summary.append(_bench_report(name, spec, cfg, res, blk["trace"], out))
    all_ok = all(ok for _, ok, *_ in summary)
    print(f"{'benchmark':<12} {'ok':<4} {'nfe':>6} {'iter':>5}  best")
    for name, ok, nfe, it, (p, v) in summary:
        pt = ", ".join(f"{x:.6f}" for x in p)
        print(f"{name:<12} {'yes' if ok else 'NO':<4} {nfe:>6} {it:>5}  ({pt}) = {v:.6g}")
    return EXIT_OK if all_ok else EXIT_RUNTIME


def cmd_simulate(rc, out):
    params = TransportParams(**rc.blocks["transport"])
    blk = rc.blocks["simulate"]
    snaps = [float(t) for t in blk["snapshots"]]
    for t in snaps:
        k = t / params.dt
        if not (0 < t <= params.t_end) or abs(k - round(k)) > 1e-9 * max(1.0, k):
            raise ConfigError(f"snapshot time {t:g} is not a step time in (0, {params.t_end:g}]")
    need_history = bool(snaps) or blk["audit"]
    history = [] if need_history else None
    curve, final = simulate(params, history=history)
    curve.to_csv(out / "curve.csv")
    if snaps:
        by_time = {}
        for s in history:
            by_time[round(s.t / params.dt, 6)] = s
        for t in snaps:
            state = by_time[round(t / params.dt, 6)]
            tag = f"{t:g}"
            write_field_csv(state, params, out / f"field_t{tag}.csv", out / f"wall_t{tag}.csv")
    summary = {"final_c_out": float(curve.values[-1]), "max_c": float(final.c.max()),
               "min_c": float(final.c.min())}
    if blk["audit"]:
        summary["mass_audit"] = mass_audit(history, params)
    _write_json(out / "summary.json", summary)
    log.info("c_out(T=%g) = %.6f", params.t_end, curve.values[-1])
    return EXIT_OK


def cmd_sweep(rc, out):
    base = TransportParams(**rc.blocks["transport"])
    blk = rc.blocks["sweep"]
    name, values = blk["param"], [float(v) for v in blk["values"]]
    curves = []
    for v in values:
        params = base.with_(**{name: v})
        curve, _ = simulate(params)
        curve.to_csv(out / f"sweep_{name}_{v:g}.csv")
        curves.append(curve)
        log.info("%s = %g: c_out(T) = %.6f", name, v, curve.values[-1])
    with open(out / f"sweep_{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"{name}={v:.17g}" for v in values])
        for i, t in enumerate(curves[0].times):
            w.writerow([_fmt(t)] + [_fmt(c.values[i]) for c in curves])
    return EXIT_OK


def build_problem(rc):
    b = rc.blocks
    ident = b["identification"]
    truth = TransportParams(**b["transport"])
    bounds = mbc.SearchDomain.from_bounds(ident["bounds"])
    if ident.get("reference"):
        ref = inverse.ReferenceCurve.from_csv(ident["reference"])
    else:
        noise_seed = int(ident.get("noise_seed", rc.seed))
        ref = inverse.synthetic_reference(truth, float(ident["sigma"]), noise_seed)
    cfg = mbc.MbcConfig.from_dict({**b.get("mbc", {}), "seed": rc.seed})
    return inverse.IdentificationProblem(ref, truth.isotherm, bounds, float(ident["fixed_pe"]),
                                         truth, cfg)


def cmd_scan(rc, out):
    problem = build_problem(rc)
    scan = rc.blocks["scan"]
    fixed = tuple(scan["fixed"]) if scan.get("fixed") else None
    with _executor(rc.workers) as ex:
        res = inverse.grid_scan(problem, scan["grid"], fixed=fixed, executor=ex)
    res.write(out / "scan.csv", out / "scan.json")
    cell = res.argmin
    if cell is None:
        print("every scan cell failed")
        return EXIT_RUNTIME
    p1, p2 = res.argmin_point
    print(f"argmin {res.names[0]}={p1:.6g} {res.names[1]}={p2:.6g} J={res.j[cell]:.6g}"
          f" ({len(res.failed)} failed cells)")
    return EXIT_OK


def cmd_identify(rc, out):
    problem = build_problem(rc)
    trace = bool(rc.blocks.get("output", {}).get("trace"))
    with _executor(rc.workers) as ex:
        result = inverse.identify(problem, executor=ex, trace=trace)
    result.write_report(out / "report.json")
    if trace:
        mbc.write_trace_csv(result.mbc_result, out / "trace.csv")
    names = problem.param_names
    print("  ".join(f"{n:>14}" for n in names) + f"  {'J':>12}  {'E_rel':>9}")
    for (p, v), e in zip(result.mbc_result.extrema, result.e_rel):
        print("  ".join(f"{x:14.8g}" for x in p) + f"  {v:12.5e}  {100 * e:8.4f}%")
    print(f"NFE {result.mbc_result.nfe}, iterations {result.mbc_result.iterations}")
    return EXIT_OK


COMMANDS = {"bench": cmd_bench, "simulate": cmd_simulate, "sweep": cmd_sweep,
            "scan": cmd_scan, "identify": cmd_identify}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        rc = resolve(args)
        out = Path(rc.out)
        out.mkdir(parents=True, exist_ok=True)
        rc.dump(out / "run_config.json")
    except (UsageError, ConfigError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](rc, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, ObjectiveError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
