"""Command-line front end: experiment dispatch, CSV + manifest persistence,
and figure rendering.

Every run writes one CSV (the single tabular format), a JSON run-manifest
holding the fully resolved configuration, seeds, wall time and residuals
(enough to re-derive any row), and - unless --no-plot - a PNG rendering of
the CSV next to it.  CSV bytes depend only on the resolved config and seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from fractions import Fraction

import numpy as np

from . import __version__, plots
from .codec import CodeConfig, ber_run
from .de import TransferPair, bp_threshold, optimize_lambda
from .ensemble import EnsembleParams, solve_rho
from .potential import make_scalar_system, map_threshold_area, potential_U, potential_threshold
from .tables import BP_TOL, MAP_TOL, bp_cells, lam_point, map_cells
from .transfer import transfer_for
from .trellis import GENERATORS_BY_STATES, build_trellis, parse_generator


class ConfigError(ValueError):
    pass


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def write_csv(path, header, rows):
    text = ",".join(header) + "\n"
    for row in rows:
        text += ",".join(_fmt(row[h]) for h in header) + "\n"
    _atomic_write(path, text)
    return path


def _atomic_write(path, text):
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(path, command, resolved, outputs, wall, extra=None):
    doc = {
        "tool": "scturbo",
        "version": __version__,
        "command": command,
        "config": resolved,
        "outputs": outputs,
        "wall_time_s": round(wall, 3),
    }
    if extra:
        doc.update(extra)
    _atomic_write(path, json.dumps(doc, indent=2, default=str) + "\n")
    return path


def parse_rate(text) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"--rate: not a fraction: {text!r}") from exc


def trellis_from_args(args):
    if getattr(args, "generators", None):
        spec = parse_generator(args.generators)
    else:
        states = getattr(args, "states", 4) or 4
        if states not in GENERATORS_BY_STATES:
            raise ConfigError(f"--states: no bundled code with {states} states (2, 4, 8)")
        spec = GENERATORS_BY_STATES[states]
    return build_trellis(spec)


def load_config_file(path):
    """Flat key=value lines; '#' starts a comment."""
    out = {}
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key=value, got {line!r}")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def apply_config_defaults(args, parser):
    """Config-file values fill in anything the command line left at default."""
    if not getattr(args, "config", None):
        return args
    file_vals = load_config_file(args.config)
    cli_given = {a.split("=")[0].lstrip("-").replace("-", "_") for a in sys.argv
                 if a.startswith("--")}
    for k, v in file_vals.items():
        if k in cli_given or not hasattr(args, k):
            continue
        cur = getattr(args, k)
        if isinstance(cur, bool):
            v = v.lower() in ("1", "true", "yes", "on")
        elif isinstance(cur, int):
            v = int(v)
        elif isinstance(cur, float):
            v = float(v)
        elif cur is None:
            for cast in (int, float):
                try:
                    v = cast(v)
                    break
                except ValueError:
                    continue
        setattr(args, k, v)
    return args


def out_dir(args):
    return args.out or os.environ.get("SCTURBO_OUTPUT_DIR", "results")


def _resolved(args, skip=("config", "out", "plot", "func", "command")):
    return {k: (str(v) if isinstance(v, Fraction) else v)
            for k, v in sorted(vars(args).items())
            if k not in skip and not callable(v) and v is not None}


# -- subcommands ---------------------------------------------------------------


def cmd_transfer_fn(args):
    trellis = trellis_from_args(args)
    tf = transfer_for(trellis)
    xs = np.round(np.arange(0.0, 1.0 + 1e-12, args.step), 12)
    rows = []
    for y in xs:
        fs, fp = tf.both_batch(xs, np.full_like(xs, y))
        rows += [{"x": float(x), "y": float(y), "f_s": float(a), "f_p": float(b)}
                 for x, a, b in zip(xs, fs, fp)]
    base = os.path.join(out_dir(args), "transfer-fn")
    csv = write_csv(base + ".csv", ["x", "y", "f_s", "f_p"], rows)
    outs = [csv]
    if args.plot:
        outs.append(plots.plot_transfer_grid(rows, base + ".png"))
    return rows, outs, {}


def cmd_threshold(args):
    rate = parse_rate(args.rate)
    if args.lam is None:
        raise ConfigError("--lambda is required (use optimize-lambda to search)")
    L = args.L if args.m > 0 else None
    params = EnsembleParams.for_rate(rate, args.q, args.lam, m=args.m, L=L)
    tf = TransferPair.identical(transfer_for(trellis_from_args(args)))
    res = bp_threshold(params, tf, tol=args.tol)
    rows = [{
        "rate": str(rate), "q": args.q, "m": args.m, "lambda": args.lam,
        "rho": res.rho, "eps_bp": res.eps_bp, "iterations": res.iterations,
        "bracket_lo": res.bracket[0], "bracket_hi": res.bracket[1],
        "inconclusive": int(res.inconclusive),
    }]
    base = os.path.join(out_dir(args), "threshold")
    csv = write_csv(base + ".csv",
                    ["rate", "q", "m", "lambda", "rho", "eps_bp", "iterations",
                     "bracket_lo", "bracket_hi", "inconclusive"], rows)
    outs = [csv]
    if args.plot:
        outs.append(plots.plot_threshold(
            [{"q": args.q, "m": args.m, "lambda": args.lam, "eps_bp": res.eps_bp}],
            base + ".png"))
    return rows, outs, {"residual": res.residual}


def cmd_optimize_lambda(args):
    rate = parse_rate(args.rate)
    L = args.L if args.m > 0 else None
    tf = TransferPair.identical(transfer_for(trellis_from_args(args)))
    opt = optimize_lambda(rate, args.q, args.m, L, tf, grid_step=args.grid,
                          refine_step=args.refine, workers=args.workers,
                          states=args.states)
    rows = [{
        "rate": str(rate), "q": args.q, "m": args.m, "lambda": lam,
        "rho": r.rho, "eps_bp": r.eps_bp, "iterations": r.iterations,
    } for lam, r in opt.scan]
    base = os.path.join(out_dir(args), "optimize-lambda")
    csv = write_csv(base + ".csv",
                    ["rate", "q", "m", "lambda", "rho", "eps_bp", "iterations"], rows)
    outs = [csv]
    if args.plot:
        outs.append(plots.plot_lambda_scan(
            [{"lambda": lam, "eps_bp": r.eps_bp} for lam, r in opt.scan], base + ".png"))
    extra = {"lambda_star": list(opt.lam_interval), "eps_bp": opt.best.eps_bp}
    return rows, outs, extra


def cmd_potential(args):
    rate = parse_rate(args.rate)
    tf = transfer_for(trellis_from_args(args))
    system = make_scalar_system(rate, args.q, tf, rep_ratio=args.lam)
    eps_star = potential_threshold(system)
    eps_list = ([float(e) for e in args.eps.split(",")] if args.eps
                else [round(eps_star + d, 6) for d in (-0.02, -0.005, 0.0, 0.005, 0.02)])
    xs = np.linspace(0.0, 1.0, args.xgrid + 1)
    rows = []
    for e in eps_list:
        u = potential_U(xs, e, system)
        rows += [{"eps": e, "x": float(x), "U": float(v)} for x, v in zip(xs, u)]
    base = os.path.join(out_dir(args), "potential")
    csv = write_csv(base + ".csv", ["eps", "x", "U"], rows)
    outs = [csv]
    if args.plot:
        outs.append(plots.plot_potential(rows, base + ".png"))
    return rows, outs, {"potential_threshold": eps_star, "rho": system.parity_fraction}


def cmd_map_threshold(args):
    rate = parse_rate(args.rate)
    tf = transfer_for(trellis_from_args(args))
    system = make_scalar_system(rate, args.q, tf, rep_ratio=args.lam)
    res = map_threshold_area(system)
    rows = [{"eps": float(e), "h": float(h)} for e, h in zip(res.grid, res.exit_curve)]
    base = os.path.join(out_dir(args), "map-threshold")
    csv = write_csv(base + ".csv", ["eps", "h"], rows)
    outs = [csv]
    if args.plot:
        outs.append(plots.plot_exit(rows, base + ".png", eps_map=res.eps_map))
    extra = {"eps_map": res.eps_map, "eps_bp_uncoupled": res.eps_bp,
             "rho": system.parity_fraction,
             "inconclusive_grid_points": res.inconclusive_points}
    return rows, outs, extra


def cmd_simulate(args):
    rate = parse_rate(args.rate) if args.rate else None
    if rate is not None:
        rho = solve_rho(rate, args.q, args.lam)
    elif args.rho is not None:
        rho = args.rho
    else:
        raise ConfigError("need --rate or --rho")
    if args.kprime:
        kprime = args.kprime
    elif args.k:
        kp = args.k / (1 - (args.q - 1) * args.lam)
        kprime = round(kp)
        if abs(kp - kprime) > 1e-6:
            raise ConfigError(
                f"--k: {args.k} implies non-integer K' = {kp:.3f}; pass --kprime")
    else:
        raise ConfigError("need --k or --kprime")
    spec_u = parse_generator(args.generators) if args.generators else GENERATORS_BY_STATES[args.states or 4]
    config = CodeConfig(
        kprime=kprime, rep_factor=args.q, rep_ratio=args.lam,
        coupling_memory=args.m, coupling_length=args.L,
        parity_fraction=rho, gen_upper=spec_u, gen_lower=spec_u,
    )
    eps_list = [float(e) for e in args.eps.split(",")]
    points = ber_run(config, eps_list, min_events=args.min_events,
                     max_frames=args.max_frames, seed=args.seed,
                     workers=args.workers, max_rounds=args.max_rounds)
    rows = [{
        "eps": p.eps, "ber": p.ber, "frames": p.frames,
        "bit_erasures": p.bit_erasures, "total_bits": p.total_bits,
        "ci_low": p.ci_low, "ci_high": p.ci_high,
    } for p in points]
    base = os.path.join(out_dir(args), "simulate")
    csv = write_csv(base + ".csv",
                    ["eps", "ber", "frames", "bit_erasures", "total_bits",
                     "ci_low", "ci_high"], rows)
    outs = [csv]
    if args.plot:
        outs.append(plots.plot_ber(rows, base + ".png"))
    return rows, outs, {"kprime": kprime, "rho": rho,
                        "rate_realized": config.info_bits_total / config.transmitted_bits}


def cmd_reproduce_tables(args):
    rows = []
    failures = 0
    t_all = time.time()
    if args.table in ("bp", "all"):
        rates = args.rates.split(",") if args.rates else None
        for rate, q, m, lam, ref in bp_cells(memories=tuple(args.memories), rates=rates):
            if args.max_q and q > args.max_q:
                continue
            L = args.L if m > 0 else None
            params = EnsembleParams.for_rate(rate, q, lam, m=m, L=L)
            tf = TransferPair.identical(transfer_for(build_trellis(GENERATORS_BY_STATES[4])))
            res = bp_threshold(params, tf)
            delta = abs(res.eps_bp - ref)
            ok = delta <= BP_TOL
            failures += not ok
            rows.append({
                "cell": f"bp R={rate} q={q} m={m}", "reference": ref,
                "computed": res.eps_bp, "delta": delta, "tolerance": BP_TOL,
                "pass": int(ok),
            })
            print(f"[{'PASS' if ok else 'FAIL'}] {rows[-1]['cell']}: "
                  f"ref {ref:.4f} got {res.eps_bp:.5f} (|d|={delta:.2e})")
    if args.table in ("map", "all"):
        rates = args.rates.split(",") if args.rates else None
        for rate, states, q, ref in map_cells(states=(2, 4), rates=rates):
            if args.max_q and q > args.max_q:
                continue
            tf = transfer_for(build_trellis(GENERATORS_BY_STATES[states]))
            res = map_threshold_area(make_scalar_system(rate, q, tf))
            delta = abs(res.eps_map - ref)
            ok = delta <= MAP_TOL
            failures += not ok
            rows.append({
                "cell": f"map R={rate} s={states} q={q}", "reference": ref,
                "computed": res.eps_map, "delta": delta, "tolerance": MAP_TOL,
                "pass": int(ok),
            })
            print(f"[{'PASS' if ok else 'FAIL'}] {rows[-1]['cell']}: "
                  f"ref {ref:.4f} got {res.eps_map:.5f} (|d|={delta:.2e})")
    base = os.path.join(out_dir(args), "reproduce-tables")
    csv = write_csv(base + ".csv",
                    ["cell", "reference", "computed", "delta", "tolerance", "pass"], rows)
    outs = [csv]
    if args.plot and rows:
        outs.append(plots.plot_table_report(rows, base + ".png"))
    print(f"{len(rows) - failures}/{len(rows)} cells within tolerance "
          f"({time.time() - t_all:.0f}s)")
    return rows, outs, {"failures": failures}


def cmd_rerun(args):
    with open(args.manifest) as f:
        doc = json.load(f)
    argv = [doc["command"]]
    for k, v in doc["config"].items():
        flag = "--" + k.replace("_", "-")
        if k == "lam":
            flag = "--lambda"
        if isinstance(v, bool):
            if v:
                argv.append(flag)
        elif isinstance(v, list):
            argv += [flag, ",".join(str(x) for x in v)]
        else:
            argv += [flag, str(v)]
    if args.out:
        argv += ["--out", args.out]
    return main(argv)


# -- parser ----------------------------------------------------------------------


def _common(p, seeded=False):
    p.add_argument("--out", default=None, help="output directory "
                   "(default $SCTURBO_OUTPUT_DIR or ./results)")
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--plot", dest="plot", action="store_true", default=True)
    p.add_argument("--no-plot", dest="plot", action="store_false")
    if seeded:
        p.add_argument("--seed", type=int, default=0)


def _code_args(p):
    p.add_argument("--states", type=int, default=4, choices=(2, 4, 8))
    p.add_argument("--generators", default=None,
                   help='octal generator pair like "1,5/7"')


def build_parser():
    ap = argparse.ArgumentParser(prog="scturbo",
                                 description="spatially coupled turbo-like code analysis on the BEC")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transfer-fn", help="exact decoder transfer function grid")
    _code_args(p)
    p.add_argument("--step", type=float, default=0.05)
    _common(p)
    p.set_defaults(func=cmd_transfer_fn)

    p = sub.add_parser("threshold", help="BP threshold by density-evolution bisection")
    p.add_argument("--rate", required=True)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--m", type=int, default=0)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--L", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-5)
    _code_args(p)
    _common(p)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("optimize-lambda", help="maximize the threshold over the repetition ratio")
    p.add_argument("--rate", required=True)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--m", type=int, default=0)
    p.add_argument("--L", type=int, default=200)
    p.add_argument("--grid", type=float, default=0.001)
    p.add_argument("--refine", type=float, default=0.0005)
    p.add_argument("--workers", type=int, default=1)
    _code_args(p)
    _common(p)
    p.set_defaults(func=cmd_optimize_lambda)

    p = sub.add_parser("potential", help="potential function grid and threshold")
    p.add_argument("--rate", required=True)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="repetition ratio (default 1/q)")
    p.add_argument("--eps", default=None, help="comma list of channel parameters")
    p.add_argument("--xgrid", type=int, default=400)
    _code_args(p)
    _common(p)
    p.set_defaults(func=cmd_potential)

    p = sub.add_parser("map-threshold", help="area-theorem MAP threshold")
    p.add_argument("--rate", required=True)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    _code_args(p)
    _common(p)
    p.set_defaults(func=cmd_map_threshold)

    p = sub.add_parser("simulate", help="finite-length Monte Carlo BER")
    p.add_argument("--rate", default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--k", type=int, default=None, help="info bits per position")
    p.add_argument("--kprime", type=int, default=None, help="post-repetition block length")
    p.add_argument("--eps", required=True, help="comma list of erasure probabilities")
    p.add_argument("--min-events", type=int, default=50)
    p.add_argument("--max-frames", type=int, default=100)
    p.add_argument("--max-rounds", type=int, default=200)
    p.add_argument("--workers", type=int, default=1)
    _code_args(p)
    _common(p, seeded=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reproduce-tables", help="batch-check bundled reference thresholds")
    p.add_argument("--table", choices=("bp", "map", "all"), default="all")
    p.add_argument("--rates", default=None, help='comma filter like "1/2,1/3"')
    p.add_argument("--max-q", type=int, default=None)
    p.add_argument("--memories", type=int, nargs="*", default=[0, 1])
    p.add_argument("--L", type=int, default=1000)
    _common(p)
    p.set_defaults(func=cmd_reproduce_tables)

    p = sub.add_parser("rerun", help="re-execute a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rerun)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "rerun":
        return cmd_rerun(args)
    try:
        args = apply_config_defaults(args, ap)
        t0 = time.time()
        rows, outputs, extra = args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    manifest = os.path.join(out_dir(args), f"{args.command}-manifest.json")
    write_manifest(manifest, args.command, _resolved(args), outputs,
                   time.time() - t0, extra)
    for o in outputs + [manifest]:
        print("wrote", o)
    if args.command == "reproduce-tables" and extra.get("failures"):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
