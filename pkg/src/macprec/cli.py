"""Command-line interface.

Subcommands: gen-channel, optimize, sweep, convergence, region, validate,
count-additions.  Global flags --config/--seed/--out/--threads; every CLI
flag overrides its config-file counterpart.  Exit codes: 0 success,
2 validation failure, 3 resource cap exceeded, 4 convergence failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .channel import (
    models_to_json,
    normalize_coupling,
    random_weichselberger,
    derived_rng,
    snr_to_power,
)
from .constellation import count_additions, make_alphabet
from .errors import ConvergenceError, ResourceCapError, ValidationFailure
from .harness import (
    ExperimentSpec,
    build_models,
    run_convergence,
    run_rate_region,
    run_sweep,
    run_validation,
)
from .mi_engine import MonteCarloConfig
from .optimizer import OptimizerConfig, WsrProblem, optimize
from .replica import FixedPointConfig

_CONFIG_KEYS = {
    "scenario", "users", "nt", "nr", "modulation", "snr_grid_db", "weights",
    "methods", "exact", "model_file", "seed", "noise_count", "optimizer",
    "fixed_point", "mc", "gap_tol", "threads", "timings",
}
_OPTIMIZER_KEYS = {"theta", "omega", "wsr_tol", "max_iters", "restarts"}
_FIXED_POINT_KEYS = {"tol", "max_iter", "damping", "n_starts"}
_MC_KEYS = {"n_channels", "n_noise", "alphabet_cap", "batches"}


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for section, keys in (("optimizer", _OPTIMIZER_KEYS),
                          ("fixed_point", _FIXED_POINT_KEYS), ("mc", _MC_KEYS)):
        extra = set(doc.get(section, {})) - keys
        if extra:
            raise ValueError(f"unknown {section} config keys: {sorted(extra)}")
    return doc


def _parse_grid(text: str) -> tuple:
    """Comma list ('-10,-5,0') or start:stop:step ('-10:20:5', inclusive)."""
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        n = int(round((stop - start) / step)) + 1
        return tuple(start + i * step for i in range(n))
    return tuple(float(x) for x in text.split(","))


def build_spec(args: argparse.Namespace) -> ExperimentSpec:
    cfg = load_config(getattr(args, "config", None))
    opt = OptimizerConfig(**cfg.get("optimizer", {}))
    fp = FixedPointConfig(**cfg.get("fixed_point", {}))
    mc = MonteCarloConfig(**cfg.get("mc", {}))

    def pick(flag: str, key: str, default):
        v = getattr(args, flag, None)
        if v is not None:
            return v
        return cfg.get(key, default)

    spec = ExperimentSpec(
        scenario=str(cfg.get("scenario", "default")),
        users=int(pick("users", "users", 2)),
        n_t=int(pick("nt", "nt", 2)),
        n_r=int(pick("nr", "nr", 2)),
        modulation=str(pick("modulation", "modulation", "qpsk")),
        snr_grid_db=tuple(pick("snr_grid", "snr_grid_db",
                               (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0))),
        weights=pick("weights", "weights", None),
        methods=tuple(pick("methods", "methods", ("NP", "FAP"))),
        with_exact=bool(pick("exact", "exact", False)),
        model_file=pick("model", "model_file", None),
        seed=int(pick("seed", "seed", 0)),
        noise_count=int(pick("noise_count", "noise_count", 500)),
        optimizer=opt,
        fixed_point=fp,
        mc=mc,
        gap_tol=float(pick("gap_tol", "gap_tol", 0.3)),
        threads=int(pick("threads", "threads", 1)),
        timings=bool(pick("timings", "timings", False)),
    )
    return spec


def _cmd_gen_channel(args) -> int:
    models = []
    for k in range(args.users):
        m = random_weichselberger(args.nr, args.nt, derived_rng(args.seed, 0xC4, k),
                                  normalized=not args.unnormalized)
        models.append(m)
    text = models_to_json(models, args.out)
    if args.out is None:
        sys.stdout.write(text + "\n")
    else:
        print(f"wrote {args.users} user model(s) to {args.out}")
    return 0


def _cmd_optimize(args) -> int:
    spec = build_spec(args)
    models = build_models(spec)
    alphabets = [make_alphabet(spec.modulation, spec.n_t) for _ in range(spec.users)]
    powers = np.array([snr_to_power(args.snr_db, m) for m in models])
    problem = WsrProblem(models, spec.mu, powers, alphabets,
                         spec.noise_count, spec.seed)
    opt_cfg = replace(spec.optimizer, seed=spec.seed,
                      fixed_point=replace(spec.fixed_point, seed=spec.seed))
    factors, trace = optimize(problem, opt_cfg)
    doc = {
        "version": 1,
        "snr_db": args.snr_db,
        "wsr_bits": trace.wsr_values[-1],
        "iterations": len(trace.wsr_values) - 1,
        "restart_index": trace.restart_index,
        "users": [
            {
                "u": [[[z.real, z.imag] for z in row] for row in f.u],
                "gamma_diag": [float(x) for x in f.gamma_diag],
                "v": [[[z.real, z.imag] for z in row] for row in f.v],
            }
            for f in factors
        ],
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out is None:
        sys.stdout.write(text + "\n")
    else:
        Path(args.out).write_text(text + "\n")
        print(f"WSR {trace.wsr_values[-1]:.6f} bits; precoders written to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    spec = build_spec(args)
    rows = run_sweep(spec, out=args.out)
    if args.out is None:
        for r in rows:
            print(r.as_csv())
    else:
        print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_convergence(args) -> int:
    spec = build_spec(args)
    snrs = list(_parse_grid(args.snr_list)) if args.snr_list else None
    rows = run_convergence(spec, snrs, out=args.out)
    if args.out is None:
        for r in rows:
            print(r.as_csv())
    else:
        print(f"wrote {len(rows)} trace rows to {args.out}")
    return 0


def _cmd_region(args) -> int:
    spec = build_spec(args)
    n = args.points
    grid = [(1.0, 0.0)] + [
        (float(np.cos(t)), float(np.sin(t)))
        for t in (np.pi / 2 * (i / (n - 1)) for i in range(1, n - 1))
    ] + [(0.0, 1.0)]
    rows = run_rate_region(spec, grid, args.snr_db, out=args.out)
    if args.out is None:
        for r in rows:
            print(r.as_csv())
    else:
        print(f"wrote {len(rows)} region rows to {args.out}")
    return 0


def _cmd_validate(args) -> int:
    spec = build_spec(args)
    report = run_validation(spec, out=args.out)
    for r in report.rows:
        print(f"snr {r.snr_db:+6.1f} dB  {r.method:3s}  asy {r.asymptotic_bits:8.4f}  "
              f"exact {r.exact_bits:8.4f}  gap {r.gap_bits:+7.4f}  se {r.std_err:.4f}")
    print(f"max gap {report.max_gap:.4f} bits (tolerance {report.gap_tol});"
          f" {'PASS' if report.passed else 'FAIL'}")
    return 0 if report.passed else 2


def _cmd_count_additions(args) -> int:
    orders = [int(x) for x in args.orders.split(",")]
    print(count_additions(args.mode, orders, args.nt))
    return 0


def main(argv: list[str] | None = None) -> int:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="JSON config file")
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--out", type=str, default=None, help="output file")
    common.add_argument("--threads", type=int, default=None, help="worker threads")

    exp = argparse.ArgumentParser(add_help=False)
    exp.add_argument("--users", type=int, default=None)
    exp.add_argument("--nt", type=int, default=None)
    exp.add_argument("--nr", type=int, default=None)
    exp.add_argument("--modulation", type=str, default=None,
                     choices=["bpsk", "qpsk", "8psk", "16qam"])
    exp.add_argument("--model", type=str, default=None, help="channel model JSON")
    exp.add_argument("--noise-count", dest="noise_count", type=int, default=None)
    exp.add_argument("--timings", action="store_const", const=True, default=None,
                     help="record wall times (breaks byte-reproducibility)")

    p = argparse.ArgumentParser(prog="macprec",
                                description="Finite-alphabet MIMO MAC precoder design")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-channel", parents=[common],
                       help="generate random channel statistics")
    g.add_argument("--users", type=int, default=2)
    g.add_argument("--nt", type=int, default=2)
    g.add_argument("--nr", type=int, default=2)
    g.add_argument("--unnormalized", action="store_true")
    g.set_defaults(func=_cmd_gen_channel, seed=0)

    o = sub.add_parser("optimize", parents=[common, exp],
                       help="optimize precoders at one SNR")
    o.add_argument("--snr-db", dest="snr_db", type=float, required=True)
    o.add_argument("--weights", type=lambda s: tuple(float(x) for x in s.split(",")),
                   default=None)
    o.set_defaults(func=_cmd_optimize)

    s = sub.add_parser("sweep", parents=[common, exp], help="SNR sweep")
    s.add_argument("--snr-grid", dest="snr_grid", type=_parse_grid, default=None)
    s.add_argument("--methods", type=lambda t: tuple(t.split(",")), default=None)
    s.add_argument("--exact", action="store_const", const=True, default=None)
    s.add_argument("--weights", type=lambda t: tuple(float(x) for x in t.split(",")),
                   default=None)
    s.set_defaults(func=_cmd_sweep)

    c = sub.add_parser("convergence", parents=[common, exp],
                       help="optimizer iteration traces")
    c.add_argument("--snr-list", dest="snr_list", type=str, default=None)
    c.set_defaults(func=_cmd_convergence)

    r = sub.add_parser("region", parents=[common, exp],
                       help="two-user rate region boundary")
    r.add_argument("--snr-db", dest="snr_db", type=float, required=True)
    r.add_argument("--points", type=int, default=9, help="weight rays to trace")
    r.add_argument("--methods", type=lambda t: tuple(t.split(",")), default=None)
    r.set_defaults(func=_cmd_region)

    v = sub.add_parser("validate", parents=[common, exp],
                       help="exact-vs-asymptotic validation")
    v.add_argument("--snr-grid", dest="snr_grid", type=_parse_grid, default=None)
    v.add_argument("--methods", type=lambda t: tuple(t.split(",")), default=None)
    v.add_argument("--gap-tol", dest="gap_tol", type=float, default=None)
    v.set_defaults(func=_cmd_validate)

    a = sub.add_parser("count-additions", parents=[common],
                       help="Table-style addition counts")
    a.add_argument("--mode", choices=["per_user", "joint"], required=True)
    a.add_argument("--orders", type=str, required=True,
                   help="comma list of constellation orders, e.g. 4,4,4,4")
    a.add_argument("--nt", type=int, required=True)
    a.set_defaults(func=_cmd_count_additions)

    args = p.parse_args(argv)
    try:
        return args.func(args)
    except ValidationFailure as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return 2
    except ResourceCapError as exc:
        print(f"resource cap exceeded: {exc}", file=sys.stderr)
        return 3
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
