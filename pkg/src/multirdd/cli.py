"""Command line interface.

Exit status is 0 on success, 2 for invalid input and 1 for numerical
failures.  Errors are written to standard error as a JSON object.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import numpy as np

from . import __version__
from .bandwidth import IK_SUBSAMPLES, BandwidthRule
from .core import BandwidthPlan, KernelSpec
from .errors import RDDError, RDDNumericalError, RDDValidationError
from .fuzzy import WBasis, enumerate_compliance, iterate_mse_optimal
from .io import (
    counterfactual_from_dict,
    dumps,
    flat_csv,
    load_json,
    read_sample_csv,
    schedule_from_dict,
)
from .mc import ESTIMATORS, H1_MODES, THREADS_ENV, DgpConfig, run_study
from .quadrature import QuadratureConfig
from .sharp import ate_continuous, ate_discrete, default_h2_grid, select_h2
from .weights import PolyBasis, correction_weights

RESULT_KEYS = ["mu", "se", "mu_bc", "se_bc", "ci95", "h1", "h2", "weights"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("UsageError", message)
        raise SystemExit(2)


def _emit_error(kind, message, **extra):
    doc = {"error": kind, "message": message}
    doc.update(extra)
    print(json.dumps(doc), file=sys.stderr)


def _floats(text):
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _add_bandwidth(p, default_lambda):
    g = p.add_argument_group("first-step bandwidths")
    g.add_argument("--bandwidth", choices=("ik", "manual"), default="ik")
    g.add_argument("--h1", help="manual bandwidths: one value or one per cutoff, comma separated")
    g.add_argument("--lambda1", type=float, default=default_lambda,
                   help="rate exponent for the adjustment h*n^(0.2-lambda1); 0 disables it")
    g.add_argument("--shrink", action="store_true", help="multiply bandwidths by n^(-1/20)")
    g.add_argument("--ik-sample", choices=IK_SUBSAMPLES, default="pooled")
    g.add_argument("--no-clip", action="store_true", help="fail instead of clipping windows at neighbouring cutoffs")
    g.add_argument("--rho1", type=int, default=1)
    g.add_argument("--kernel", choices=("triangular", "uniform"), default="triangular")


def _add_common(p):
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--output", help="also write the result to this file")
    p.add_argument("--threads", type=int, default=None, help=f"worker cap (default ${THREADS_ENV} or 1)")
    p.add_argument("--config", help="JSON file with a 'quadrature' section")


def build_parser():
    p = _Parser(prog="multirdd", description="Regression discontinuity estimation with many cutoffs.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("estimate-sharp-discrete", help="average jump under a discrete counterfactual")
    s.add_argument("--data", required=True)
    s.add_argument("--schedule", required=True)
    s.add_argument("--cf", help="discrete counterfactual JSON (default: equal weights)")
    s.add_argument("--weights", help="comma separated weights, instead of --cf")
    _add_bandwidth(s, 0.0)
    _add_common(s)

    s = sub.add_parser("estimate-sharp-continuous", help="integrated effect under a continuous counterfactual")
    s.add_argument("--data", required=True)
    s.add_argument("--schedule", required=True)
    s.add_argument("--cf", required=True)
    s.add_argument("--h2", help="second-step bandwidth, 'inf', or 'select' for the grid search", default="select")
    s.add_argument("--h2-grid", help="comma separated grid for --h2 select (default m/(K+1), m=3..12)")
    s.add_argument("--rho2", type=int, default=1)
    _add_bandwidth(s, 0.5)
    _add_common(s)

    s = sub.add_parser("estimate-fuzzy", help="ever-complier parameters and effect")
    s.add_argument("--data", required=True)
    s.add_argument("--schedule", required=True)
    s.add_argument("--w-basis", default="0,1", help="exponent pairs a,b for c^a d^b separated by ';'")
    s.add_argument("--z", help="comma separated linear functional Z(F)")
    s.add_argument("--cf", help="full-profile continuous counterfactual JSON giving Z(F)")
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--identity", action="store_true", help="single pass with an identity weighting matrix")
    s.add_argument("--kernel", choices=("triangular", "uniform"), default="triangular")
    s.add_argument("--ik-sample", choices=IK_SUBSAMPLES, default="pooled")
    _add_common(s)

    s = sub.add_parser("weights", help="correction weights of a design")
    s.add_argument("--schedule", required=True)
    s.add_argument("--cf", required=True)
    s.add_argument("--h2", required=True)
    s.add_argument("--rho2", type=int, default=1)
    s.add_argument("--kernel", choices=("triangular", "uniform"), default="triangular")
    _add_common(s)

    s = sub.add_parser("simulate", help="Monte Carlo study of the cubic many-cutoff design")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--reps", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--h1-mode", choices=H1_MODES, default="overlap")
    s.add_argument("--h2-rule", default="fixed:3", help="'fixed:<m>' for h2=m/(K+1) or 'select'")
    s.add_argument("--estimators", default=",".join(ESTIMATORS))
    s.add_argument("--lambda1", type=float, default=0.5)
    s.add_argument("--ik-sample", choices=IK_SUBSAMPLES, default="full")
    s.add_argument("--kernel", choices=("triangular", "uniform"), default="triangular")
    _add_common(s)

    s = sub.add_parser("enumerate-compliance", help="classify every potential assignment")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--K", type=int)
    g.add_argument("--schedule")
    s.add_argument("--list", action="store_true", help="include the full listing")
    _add_common(s)
    return p


def _quad(args):
    if not args.config:
        return QuadratureConfig()
    doc = load_json(args.config)
    try:
        return QuadratureConfig.from_dict(doc.get("quadrature", {}))
    except (TypeError, ValueError) as exc:
        raise RDDValidationError(f"bad quadrature config: {exc}") from None


def _plan(args, sample, schedule, h2=None, rho2=1):
    lam = None if not args.lambda1 else args.lambda1
    if args.bandwidth == "manual":
        if not args.h1:
            raise RDDValidationError("--bandwidth manual needs --h1")
        h = np.array(_floats(args.h1))
        if args.shrink:
            h = h * sample.n ** (-1 / 20)
        audit = {"rule": "manual"}
    else:
        rule = BandwidthRule("ik", lam, args.shrink, subsample=args.ik_sample)
        h, audit = rule.bandwidths(sample, schedule, details=True)
        audit["rule"] = "ik"
        audit["lambda1"] = lam
        audit.pop("ik", None)
    if h.size == 1:
        h = np.full(schedule.K, h[0])
    return BandwidthPlan(tuple(h), h2, args.rho1, rho2, not args.no_clip), audit


def _ate_doc(res, extra=None):
    doc = res.to_dict()
    if extra:
        doc["diagnostics"].update(extra)
    return doc


def cmd_sharp_discrete(args):
    sample = read_sample_csv(args.data)
    schedule = schedule_from_dict(load_json(args.schedule))
    if args.weights:
        w = _floats(args.weights)
    elif args.cf:
        cf = counterfactual_from_dict(load_json(args.cf))
        if cf.kind != "discrete":
            raise RDDValidationError("estimate-sharp-discrete needs a discrete counterfactual")
        w = list(cf.weights)
    else:
        w = [1.0 / schedule.K] * schedule.K
    plan, audit = _plan(args, sample, schedule)
    res = ate_discrete(sample, schedule, w, plan, KernelSpec(args.kernel))
    return _ate_doc(res, {"bandwidth": audit})


def cmd_sharp_continuous(args):
    sample = read_sample_csv(args.data)
    schedule = schedule_from_dict(load_json(args.schedule))
    cf = counterfactual_from_dict(load_json(args.cf))
    if cf.kind != "continuous":
        raise RDDValidationError("estimate-sharp-continuous needs a continuous counterfactual")
    quad = _quad(args)
    basis = PolyBasis(args.rho2, cf.profile)
    kern = KernelSpec(args.kernel)
    if args.h2 == "select":
        plan, audit = _plan(args, sample, schedule, None, args.rho2)
        grid = _floats(args.h2_grid) if args.h2_grid else default_h2_grid(schedule.K)
        sel = select_h2(sample, schedule, cf, plan, kern, basis, grid, quad)
        res = sel.result
        extra = {"bandwidth": audit, "h2_selection": {"h2_star": sel.h2_star,
                 "curve": {str(k): v for k, v in sel.curve.items()},
                 "infeasible": [[h, m] for h, m in sel.infeasible]}}
    else:
        h2 = float(args.h2)
        plan, audit = _plan(args, sample, schedule, h2, args.rho2)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = ate_continuous(sample, schedule, cf, plan, kern, basis, quad)
        extra = {"bandwidth": audit, "warnings": [str(w.message) for w in caught]}
    return _ate_doc(res, extra)


def _parse_basis(text):
    pairs = []
    for part in text.split(";"):
        if part.strip():
            a, b = (int(v) for v in part.split(","))
            pairs.append((a, b))
    return WBasis(tuple(pairs))


def cmd_fuzzy(args):
    sample = read_sample_csv(args.data, require_d=True)
    schedule = schedule_from_dict(load_json(args.schedule))
    try:
        basis = _parse_basis(args.w_basis)
    except ValueError:
        raise RDDValidationError(f"cannot parse --w-basis {args.w_basis!r}") from None
    z = None
    if args.z:
        z = _floats(args.z)
    elif args.cf:
        z = counterfactual_from_dict(load_json(args.cf))
    rule = BandwidthRule("ik", None, subsample=args.ik_sample)
    res = iterate_mse_optimal(sample, schedule, basis, z, KernelSpec(args.kernel), rule=rule,
                              max_iter=args.max_iter, fix_identity=args.identity, quad=_quad(args))
    doc = res.to_dict()
    doc.setdefault("diagnostics", {})["outer_trajectory"] = res.outer_trajectory
    return doc


def cmd_weights(args):
    schedule = schedule_from_dict(load_json(args.schedule))
    cf = counterfactual_from_dict(load_json(args.cf))
    h2 = float(args.h2)
    w = correction_weights(schedule, cf, PolyBasis(args.rho2, cf.profile), h2, KernelSpec(args.kernel), _quad(args))
    doc = w.to_dict()
    doc["weights"] = doc.pop("delta")
    doc["sum"] = float(np.sum(w.delta))
    return doc


def cmd_simulate(args):
    est = tuple(e.strip() for e in args.estimators.split(",") if e.strip())
    rep = run_study(DgpConfig(args.n, kernel=args.kernel), args.reps, est, args.h1_mode, args.h2_rule,
                    args.seed, args.threads, args.lambda1, quad=_quad(args), ik_subsample=args.ik_sample)
    return rep


def cmd_enumerate(args):
    K = args.K if args.K is not None else schedule_from_dict(load_json(args.schedule)).K
    en = enumerate_compliance(K)
    doc = {"K": K, "counts": en.counts, "total": sum(en.counts.values())}
    if args.list:
        doc["listing"] = {k: [list(u) for u in v] for k, v in en.listing.items()}
    return doc


COMMANDS = {
    "estimate-sharp-discrete": cmd_sharp_discrete,
    "estimate-sharp-continuous": cmd_sharp_continuous,
    "estimate-fuzzy": cmd_fuzzy,
    "weights": cmd_weights,
    "simulate": cmd_simulate,
    "enumerate-compliance": cmd_enumerate,
}


def _render(args, out):
    if args.command == "simulate":
        return out.to_csv() if args.format == "csv" else dumps(out.to_dict())
    if args.format == "csv":
        if args.command == "enumerate-compliance":
            return flat_csv({"K": out["K"], **out["counts"]}, ["K", "ever_defier", "never_changer", "ever_complier"])
        keys = [k for k in RESULT_KEYS if k in out] or [k for k, v in out.items() if not isinstance(v, dict)]
        return flat_csv(out, keys)
    return dumps(out)


def run(argv=None):
    """Parse ``argv``, execute the command and return the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        _emit_error("RDDValidationError", "--threads must be at least 1")
        return 2
    try:
        out = COMMANDS[args.command](args)
        text = _render(args, out)
    except RDDValidationError as exc:
        _emit_error(type(exc).__name__, str(exc), **_coords(exc))
        return 2
    except RDDNumericalError as exc:
        _emit_error(type(exc).__name__, str(exc), **_coords(exc))
        return 1
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    return 0


def _coords(exc):
    out = {}
    for name in ("j", "side", "at", "segment", "column", "max_iter"):
        if hasattr(exc, name):
            v = getattr(exc, name)
            out[name] = list(v) if isinstance(v, tuple) else v
    return out


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
