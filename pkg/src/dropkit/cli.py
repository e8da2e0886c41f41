"""``dropkit`` command line.

Exit codes: 0 success, 1 domain error (one ``error: <Kind>: <message>`` line
on stderr), 2 usage error.  Drop-set indices are 0-based.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import attribution, certificate, datafiles, ermcore, scalinglab, synthgen
from .errors import DropkitError, MaxIterExceeded


class UsageError(Exception):
    pass


def _print_config(command: str, args: argparse.Namespace):
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    cfg["command"] = command
    print("config: " + json.dumps(cfg, sort_keys=True, default=str))


def _add_model_flags(p):
    p.add_argument("--dataset", required=True, help="CSV with header y,x1,...,xd")
    p.add_argument("--loss", choices=("logistic", "quadratic"), default="logistic")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="L2 coefficient (regularizer n*lambda/2*||theta||^2)")
    p.add_argument("--grad-tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=100)


def _add_drop_flags(p):
    p.add_argument("--drop", help="comma-separated 0-based indices, e.g. 3,17,42")
    p.add_argument("--strategy", choices=synthgen.STRATEGIES, help="sample the drop set instead of --drop")
    p.add_argument("--k", type=int, help="drop-set size for --strategy")
    p.add_argument("--seed", type=int, default=0, help="seed for --strategy")


def _load_fitted(args):
    if not Path(args.dataset).exists():
        raise UsageError(f"dataset {args.dataset} does not exist")
    dataset = datafiles.read_dataset(args.dataset)
    spec = ermcore.LossSpec(args.loss, args.lam)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", MaxIterExceeded)
        report = ermcore.fit(dataset, spec, ermcore.FitConfig(grad_tol=args.grad_tol, max_iter=args.max_iter))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return dataset, spec, report


def _dropset(args, dataset, state):
    if args.drop is not None and args.strategy is not None:
        raise UsageError("use either --drop or --strategy, not both")
    if args.drop is not None:
        try:
            idx = [int(tok) for tok in args.drop.split(",") if tok.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --drop list: {args.drop!r}") from exc
        return attribution.DropSet.explicit(idx, dataset.n)
    if args.strategy is not None:
        if args.k is None:
            raise UsageError("--strategy needs --k")
        return synthgen.sample_dropset(dataset, state, args.strategy, args.k, args.seed)
    raise UsageError("a drop set is required: --drop or --strategy/--k")


def cmd_synth(args):
    inst = synthgen.generate(synthgen.SynthConfig(args.n, args.d, args.theta_norm, args.lam, args.seed))
    out = Path(args.out)
    datafiles.write_dataset(out, inst.dataset)
    side = out.with_suffix(".json")
    datafiles.dump_json(side, {"theta_star": inst.theta_star, "seed": args.seed, "n": args.n, "d": args.d})
    print(f"wrote {out} ({args.n} x {args.d}) and {side}")


def cmd_fit(args):
    dataset, spec, report = _load_fitted(args)
    datafiles.dump_json(
        args.out,
        {
            "theta": report.theta,
            "final_grad_norm": report.final_grad_norm,
            "iterations": report.iterations,
            "converged": report.converged,
        },
    )
    print(f"fit: {report.iterations} Newton steps, |grad| = {report.final_grad_norm:.3e}, converged={report.converged}")


def cmd_attribute(args):
    dataset, spec, report = _load_fitted(args)
    state = ermcore.build_state(dataset, spec, report.theta)
    T = _dropset(args, dataset, state)
    methods = [m.strip().upper() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in attribution.METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}; choose from {','.join(attribution.METHODS).lower()}")
    ests = attribution.estimate(state, T, methods)
    datafiles.dump_json(
        args.out,
        {
            "theta_hat": report.theta,
            "drop": T.indices,
            "strategy": T.strategy_tag,
            "estimates": [e.to_json() for e in ests.values()],
        },
    )
    for m, e in ests.items():
        print(f"{m:5s} |delta| = {np.linalg.norm(e.delta):.6e}")


def cmd_certify(args):
    dataset, spec, report = _load_fitted(args)
    state = ermcore.build_state(dataset, spec, report.theta)
    T = _dropset(args, dataset, state)
    cfg = certificate.CertificateConfig(
        radius=args.radius,
        sigma_mode=args.sigma,
        path_grid=args.grid,
        ball_samples=args.samples,
        inflation=args.inflation,
        seed=args.cert_seed,
    )
    cert = certificate.certify_ns(state, T, cfg)
    payload = {"drop": T.indices, "certificate": cert.to_json()}
    if args.legacy:
        payload["legacy"] = certificate.legacy_bound(state, T, inflation=args.inflation).to_json()
    datafiles.dump_json(args.out, payload)
    print(
        f"c_h={cert.c_h:.4e} c_op={cert.c_op:.4e} condition_ok={cert.condition_ok} "
        f"bound={cert.bound:.4e} (sampled certificate)"
    )


def _auto_slopes(spec: scalinglab.SweepSpec, records):
    fits = []
    grids = {"n": spec.n_grid, "d": spec.d_grid, "k": spec.k_grid}
    for axis in scalinglab.AXES:
        if len(grids[axis]) < 3:
            continue
        others = [a for a in scalinglab.AXES if a != axis]
        for fixed in np.array(np.meshgrid(*(grids[a] for a in others))).T.reshape(-1, 2):
            for strategy in spec.strategies:
                flt = {others[0]: int(fixed[0]), others[1]: int(fixed[1]), "strategy": strategy}
                for pair in spec.methods:
                    try:
                        fits.append(scalinglab.fit_scaling(records, axis, pair, flt))
                    except DropkitError:
                        continue
    return fits


def cmd_sweep(args):
    spec = scalinglab.SweepSpec.from_json(args.config) if args.config else scalinglab.SweepSpec()
    print("sweep spec: " + json.dumps(spec.to_json(), sort_keys=True))
    records = scalinglab.run_sweep(spec, workers=args.workers)
    fits = _auto_slopes(spec, records)
    paths = scalinglab.emit_report(records, fits, args.out)
    flagged = sum(1 for r in records if r.flag)
    print(f"{len(records)} records ({flagged} flagged); wrote " + ", ".join(str(p) for p in paths))


def _parse_filter(text):
    flt = {}
    if not text:
        return flt
    for item in text.split(","):
        if "=" not in item:
            raise UsageError(f"bad filter item {item!r}; expected key=value")
        key, val = item.split("=", 1)
        key = key.strip()
        flt[key] = val.strip() if key == "strategy" else int(val)
    return flt


def cmd_slopes(args):
    records = scalinglab.read_records(args.records)
    fit = scalinglab.fit_scaling(records, args.axis, args.pair, _parse_filter(args.filter) or None)
    print(f"slope({fit.pair} vs {fit.axis}) = {fit.slope:.4f} ± {fit.ci_halfwidth:.4f}  r^2={fit.r_squared:.4f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump([fit.to_json()], fh, indent=2)
            fh.write("\n")


def cmd_theory_check(args):
    a, b = certificate.population_third_coeffs(args.t)
    a_star, b_star = certificate.population_third_moments(args.t)
    sign = lambda x: "negative" if x < 0 else "non-negative"
    print(f"a({args.t:g}) = {a:.12g} ({sign(a)})")
    print(f"b({args.t:g}) = {b:.12g} ({sign(b)})")
    print(f"E[Z^3 gamma(tZ)] = {a_star:.12g} ({sign(a_star)})")
    print(f"E[Z gamma(tZ)]   = {b_star:.12g} ({sign(b_star)})")
    # the proven sign statement concerns the raw moments and b(t)
    return 0 if (a_star < 0 and b_star < 0 and b < 0) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dropkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a Gaussian logistic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--theta-norm", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit theta_hat")
    _add_model_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("attribute", help="IF/NS/RIF/DRIF (and EXACT) estimates for one drop set")
    _add_model_flags(p)
    _add_drop_flags(p)
    p.add_argument("--methods", default="if,ns,rif,drif")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("certify", help="sampled local certificate for the NS estimate")
    _add_model_flags(p)
    _add_drop_flags(p)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--sigma", choices=("identity", "hessian"), default="identity")
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--inflation", type=float, default=1.1)
    p.add_argument("--cert-seed", type=int, default=0)
    p.add_argument("--legacy", action="store_true", help="also report the global-strong-convexity bound")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("sweep", help="run an (n, d, k) sweep")
    p.add_argument("--config", help="SweepSpec JSON (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=None, help="worker processes (env DROPKIT_WORKERS, else all cores)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("slopes", help="fit a log-log slope from records.csv")
    p.add_argument("--records", required=True)
    p.add_argument("--axis", choices=scalinglab.AXES, required=True)
    p.add_argument("--pair", default="ns_exact")
    p.add_argument("--filter", help="e.g. d=16,k=4,strategy=random")
    p.add_argument("--out")
    p.set_defaults(func=cmd_slopes)

    p = sub.add_parser("theory-check", help="Gaussian third-derivative coefficients and their signs")
    p.add_argument("--t", type=float, default=1.0)
    p.set_defaults(func=cmd_theory_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "sweep" and args.workers is None:
        args.workers = scalinglab.default_workers()
    _print_config(args.command, args)
    try:
        code = args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except DropkitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
