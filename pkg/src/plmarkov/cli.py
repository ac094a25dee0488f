"""Command-line entry point: ``plmarkov <subcommand> [options]``.

Results go to standard output as JSON (default) or CSV. Exit status is 0 on
success, 1 when a check or computation fails, 2 on bad usage or bad input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from fractions import Fraction

from .rational import fmt, parse_rational

DEFAULT_MAP = '{"family": "schweitzer", "E": 4}'


class UsageError(Exception):
    pass


def _load_json(text: str):
    if text.startswith("@"):
        with open(text[1:], encoding="utf-8") as fh:
            text = fh.read()
    return json.loads(text)


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _emit(payload, fmt_name: str, rows=None, columns=None):
    if fmt_name == "csv":
        if rows is None:
            raise UsageError("this subcommand has no CSV form")
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
        sys.stdout.write(buf.getvalue())
    else:
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True, default=_default) + "\n")


def _default(v):
    if isinstance(v, Fraction):
        return fmt(v)
    if isinstance(v, (set, frozenset, tuple)):
        return sorted(v)
    if hasattr(v, "item"):
        return v.item()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _family(args):
    from .interval_map import load_map
    return load_map(args.map)


def _trunc(args, family):
    from .transfer import truncate
    return truncate(family, level=args.level, size=args.size, mode=args.leak)


# ---------------------------------------------------------------- subcommands

def cmd_validate(args):
    from .interval_map import validate_partition
    report = validate_partition(_family(args), args.depth)
    _emit(report.to_dict(), args.format, [{"axiom": f["axiom"], "cell": f.get("cell"), "detail": f.get("detail")}
                                          for f in report.to_dict()["failures"]], ["axiom", "cell", "detail"])
    return 0 if report.passed else 1


def cmd_cylinder(args):
    from .symbolic import cylinder
    label = tuple(int(s) for s in args.label.split(","))
    res = cylinder(_family(args), label)
    d = res.to_dict()
    _emit(d, args.format, [{"label": args.label, "lo": d["interval"][0] if d["interval"] else "",
                            "hi": d["interval"][1] if d["interval"] else "", "measure": d["measure"],
                            "orientation": d["orientation"]}], ["label", "lo", "hi", "measure", "orientation"])
    return 0


def cmd_stationary(args):
    from .chain import classify, invariant_union_search, stationary_truncated
    fam = _family(args)
    trunc = _trunc(args, fam)
    diag = classify(trunc)
    if args.leak != "renorm":
        raise UsageError("stationary needs --leak renorm")
    res = stationary_truncated(trunc, method=args.method, tol=args.tol, exact=args.exact)
    payload = res.to_dict()
    payload["diagnostics"] = diag.to_dict()
    payload["invariant_unions"] = [sorted(s) for s in invariant_union_search(trunc)]
    payload["truncation"] = trunc.summary()
    _emit(payload, args.format, [{"i": i, "pi": fmt(v)} for i, v in enumerate(res.pi, 1)], ["i", "pi"])
    return 0


def cmd_closed_form(args):
    from .closed_form import p_block, tables
    t = tables(args.E)
    blocks = [p_block(n, args.E) for n in range(1, args.n + 1)]
    payload = {
        "E": args.E,
        "q": [fmt(t.q(n)) for n in range(1, args.n + 1)],
        "p": [fmt(t.p(lo)) for lo, _ in blocks],
        "p_blocks": [[lo, hi] for lo, hi in blocks],
    }
    rows = [{"k": n, "q_k": fmt(t.q(n)), "p_range": f"{lo}-{hi}", "p": fmt(t.p(lo))}
            for n, (lo, hi) in enumerate(blocks, 1)]
    if args.verify is not None:
        from .chain import closed_form_candidate, verify_stationary_candidate
        from .interval_map import Schweitzer
        rep = verify_stationary_candidate(Schweitzer(args.E), closed_form_candidate(args.E), args.verify)
        payload["verification"] = rep.to_dict()
    _emit(payload, args.format, rows, ["k", "q_k", "p_range", "p"])
    return 0


def cmd_push(args):
    from .transfer import (CylinderCombination, density_from_spec, iterate_to_invariant,
                           push_cylinders, push_pc_density)
    fam = _family(args)
    obj = density_from_spec(_load_json(args.density))
    if args.tol is not None:
        if isinstance(obj, CylinderCombination):
            raise UsageError("iteration to a fixed point needs a pc density")
        res = iterate_to_invariant(fam, obj, tol=args.tol, max_iter=args.max_iter,
                                   level=args.level, size=args.size, mode=args.leak)
        payload = {"density": res.density.to_dict(), "iterations": res.iterations,
                   "truncation": res.truncation,
                   "history": [{"iter": k, "l1_change": d, "mass": m} for k, d, m in res.history]}
        _emit(payload, args.format, payload["history"], ["iter", "l1_change", "mass"])
        return 0
    if isinstance(obj, CylinderCombination):
        out = push_cylinders(fam, obj, args.steps)
        d = out.to_dict()
        rows = [{"weight": t["weight"], "label": " ".join(map(str, t["label"]))} for t in d["terms"]]
        _emit(d, args.format, rows, ["weight", "label"])
        return 0
    out = push_pc_density(fam, obj, args.steps, max_index=args.max_index)
    d = out.to_dict()
    d["mass"] = fmt(out.mass(fam))
    _emit(d, args.format, [{"start": s, "end": e, "value": v} for s, e, v in d["runs"]], ["start", "end", "value"])
    return 0


def cmd_first_passage(args):
    from .chain import first_passage_probs, mean_return_time
    fam = _family(args)
    trunc = _trunc(args, fam)
    j = args.i if args.j is None else args.j
    stats = first_passage_probs(trunc, args.i, j, args.nmax, exact=args.exact)
    payload = stats.to_dict()
    if args.i == j:
        _, oracle = mean_return_time(trunc, args.i, 1, exact=True)
        payload["mean_return_oracle"] = None if oracle is None else fmt(oracle)
    _emit(payload, args.format, stats.csv_rows(), ["n", "value", "bound"])
    return 0


def cmd_power_limit(args):
    from .chain import power_limit
    fam = _family(args)
    res = power_limit(_trunc(args, fam), args.j, kmax=args.kmax, tol=args.tol or 1e-6, row_cap=args.rows)
    _emit(res.to_dict(), args.format, res.csv_rows(), ["n", "value", "bound"])
    return 0


def _config(args, **extra):
    from .experiments import ExperimentConfig, parse_set
    measure = _load_json(args.density) if args.density else {"type": "uniform", "a": "0", "b": "1"}
    cfg = ExperimentConfig(
        family=_family(args),
        measure=measure,
        set_a=parse_set(args.set) if getattr(args, "set", None) else None,
        set_b=parse_set(args.set_b) if getattr(args, "set_b", None) else None,
        steps=args.steps,
        samples=args.samples,
        seed=args.seed,
        level=args.level,
        size=args.size,
        leak=args.leak,
        workers=args.workers,
        **extra,
    )
    return cfg.validate()


def _experiment(result, args):
    if args.format == "csv":
        sys.stdout.write(result.to_csv())
    else:
        sys.stdout.write(result.to_json() + "\n")
    return 0


def cmd_simulate(args):
    from .experiments import run_monte_carlo
    return _experiment(run_monte_carlo(_config(args)), args)


def cmd_pushforward(args):
    from .experiments import run_pushforward_experiment
    if not args.set:
        raise UsageError("pushforward needs --set")
    return _experiment(run_pushforward_experiment(_config(args)), args)


def cmd_mixing(args):
    from .experiments import mixing_estimate
    if not args.set:
        raise UsageError("mixing needs --set")
    if not args.set_b:
        args.set_b = args.set
    return _experiment(mixing_estimate(_config(args)), args)


def cmd_liminf_limsup(args):
    from .experiments import liminf_limsup_probe
    starts = [float(parse_rational(s)) for s in args.starts.split(",")] if args.starts else None
    cfg = _config(args, horizon=args.horizon, burn_in=args.burn_in, starts=starts)
    return _experiment(liminf_limsup_probe(cfg), args)


def cmd_bugiel_check(args):
    from .bugiel import bugiel_u_r
    res = bugiel_u_r(args.r, parse_rational(args.x), args.search_bound, require_rule=not args.any_witness)
    d = res.to_dict()
    _emit(d, args.format, [{k: d[k] for k in ("r", "x", "value", "threshold")} |
                           {"witness": " ".join(map(str, d["witness"] or []))}],
          ["r", "x", "value", "witness", "threshold"])
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plmarkov", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, trunc=False):
        sp.add_argument("--map", default=DEFAULT_MAP, help="map spec as JSON or @file")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        if trunc:
            sp.add_argument("--level", type=_positive, help="schweitzer truncation level L (size E**L + 1)")
            sp.add_argument("--size", type=_positive, help="truncation size N")
            sp.add_argument("--leak", choices=("renorm", "absorb"), default="renorm")
        return sp

    sp = common(sub.add_parser("validate", help="check the partition axioms"))
    sp.add_argument("--depth", type=_positive, default=20)
    sp.set_defaults(func=cmd_validate)

    sp = common(sub.add_parser("cylinder", help="realize a labelled interval"))
    sp.add_argument("--label", required=True, help="comma-separated symbols, e.g. 1,5")
    sp.set_defaults(func=cmd_cylinder)

    sp = common(sub.add_parser("stationary", help="stationary vector of a truncation"), trunc=True)
    sp.add_argument("--method", choices=("power", "direct"), default="power")
    sp.add_argument("--tol", type=float, default=1e-12)
    sp.add_argument("--exact", action="store_true", help="rational direct solve")
    sp.set_defaults(func=cmd_stationary)

    sp = sub.add_parser("closed-form", help="closed-form tables of the schweitzer family")
    sp.add_argument("--E", type=int, default=4)
    sp.add_argument("--n", type=_positive, default=5)
    sp.add_argument("--verify", type=_positive, metavar="JMAX", help="also certify stationarity for j <= JMAX")
    sp.add_argument("--format", choices=("json", "csv"), default="json")
    sp.set_defaults(func=cmd_closed_form)

    sp = common(sub.add_parser("push", help="push a density forward, or iterate it to a fixed point"), trunc=True)
    sp.add_argument("--density", required=True)
    sp.add_argument("--steps", type=int, default=1)
    sp.add_argument("--max-index", type=_positive)
    sp.add_argument("--tol", type=float, help="iterate on the truncation until the L1 change is <= tol")
    sp.add_argument("--max-iter", type=_positive, default=100_000)
    sp.set_defaults(func=cmd_push)

    sp = common(sub.add_parser("first-passage", help="first-passage probabilities"), trunc=True)
    sp.add_argument("--i", type=_positive, default=1)
    sp.add_argument("--j", type=_positive)
    sp.add_argument("--nmax", type=_positive, default=10)
    sp.add_argument("--exact", action="store_true")
    sp.set_defaults(func=cmd_first_passage)

    sp = common(sub.add_parser("power-limit", help="column limit of P^k"), trunc=True)
    sp.add_argument("--j", type=_positive, default=1)
    sp.add_argument("--kmax", type=_positive, default=200)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--rows", type=_positive)
    sp.set_defaults(func=cmd_power_limit)

    def experiment(name, help_text, func, steps=30, sets=0):
        sp = common(sub.add_parser(name, help=help_text), trunc=True)
        sp.add_argument("--density", help="initial measure: density spec, uniform or pi")
        sp.add_argument("--steps", type=int, default=steps)
        sp.add_argument("--samples", type=int, default=100_000)
        sp.add_argument("--seed", type=_seed, default=0)
        sp.add_argument("--workers", type=_positive, default=1)
        if sets:
            sp.add_argument("--set", help="union of intervals 'a,b;c,d'")
        if sets > 1:
            sp.add_argument("--set-b", help="second set for mixing (defaults to --set)")
        sp.set_defaults(func=func)
        return sp

    experiment("simulate", "occupancy histogram and TV distance to pi", cmd_simulate)
    experiment("pushforward", "mu(f^-k A) series", cmd_pushforward, steps=40, sets=1)
    experiment("mixing", "mixing series", cmd_mixing, steps=40, sets=2)
    sp = experiment("liminf-limsup", "running min and max along orbits", cmd_liminf_limsup)
    sp.add_argument("--horizon", type=_positive, default=100_000)
    sp.add_argument("--burn-in", type=int, default=10)
    sp.add_argument("--starts", help="comma-separated explicit starting points")

    sp = sub.add_parser("bugiel-check", help="u_r(x) on the savior map")
    sp.add_argument("--r", type=int, default=2)
    sp.add_argument("--x", default="0")
    sp.add_argument("--search-bound", type=int)
    sp.add_argument("--any-witness", action="store_true", help="accept witnesses below the threshold rule")
    sp.add_argument("--format", choices=("json", "csv"), default="json")
    sp.set_defaults(func=cmd_bugiel_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "samples", 1) is not None and getattr(args, "samples", 1) < 1:
        parser.error("--samples must be >= 1")
    from .errors import NoReturn, ReducibleChain
    try:
        return args.func(args)
    except (NoReturn, ReducibleChain) as exc:
        print(f"plmarkov {args.command}: {exc}", file=sys.stderr)
        return 1
    except (UsageError, ValueError, json.JSONDecodeError, OSError) as exc:
        print(f"plmarkov {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # computation failures: non-convergence, overflow, reducible chains
        print(f"plmarkov {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
