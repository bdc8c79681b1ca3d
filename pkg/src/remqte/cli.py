"""Command-line entry point: ``remqte {design,analyze,simulate,limits}``.

Exit status is 0 on success, 2 for bad input (unreadable or malformed files,
invalid flags) and 3 for numerical degeneracy (singular covariates, vanishing
densities, exhausted rejection budget, failed calibration).
"""
from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import io as rio
from .design import BalanceState, DesignSpec, sample_cre, sample_rem, threshold_from_p
from .errors import DegeneracyError, InvalidParameterError, MalformedInputError
from .estimate import analyze
from .limitlaw import DEFAULT_MIXTURE_DRAWS, MixtureLaw, chisq_cdf, mixture_quantile, \
    truncated_variance

EXIT_INPUT = 2
EXIT_DEGENERATE = 3


def _probability(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {text}")
    return v


def _open_unit(text: str) -> float:
    v = _probability(text)
    if v == 1.0:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return v


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _require_seed(args, parser) -> None:
    if args.seed is None:
        parser.error("--seed is required: this command is randomized and never "
                     "falls back to an implicit entropy source")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="remqte",
        description="Rerandomization designs and quantile treatment effect inference.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    d = sub.add_parser("design", help="draw one treatment assignment",
                       description="Draw a treatment assignment by Mahalanobis rerandomization "
                                   "(or complete randomization with --p 1).")
    d.add_argument("covariates", help="covariate matrix file (x1,...,xK; header optional)")
    d.add_argument("--r1", type=_open_unit, default=0.5,
                   help="treated fraction; n1 = round(r1*n) (default: 0.5)")
    d.add_argument("--p", type=_probability, default=0.001,
                   help="acceptance probability P(chi2_K <= a) (default: 0.001)")
    d.add_argument("--max-attempts", type=int, default=None,
                   help="rejection budget (default: ceil(50/p))")
    d.add_argument("--seed", type=int, help="random seed (required)")
    d.add_argument("--out", required=True, help="assignment file to write (unit_index,z)")

    a = sub.add_parser("analyze", help="estimate a QTE and its confidence interval",
                       description="Estimate the quantile treatment effect from observed data "
                                   "and report a confidence interval matched to the design.")
    a.add_argument("data", help="observed data file (y,z,x1,...,xK)")
    a.add_argument("--alpha", type=_open_unit, required=True, help="quantile level in (0, 1)")
    a.add_argument("--p-design", type=_probability, default=1.0,
                   help="acceptance probability of the design that produced the data; "
                        "1 means complete randomization (default: 1)")
    a.add_argument("--miscoverage", type=_open_unit, default=0.05,
                   help="one minus the confidence level (default: 0.05)")
    a.add_argument("--bandwidth", type=_positive, default=None,
                   help="kernel bandwidth (default: n^(-1/3))")
    a.add_argument("--draws", type=int, default=DEFAULT_MIXTURE_DRAWS,
                   help=f"Monte Carlo draws for the interval quantile "
                        f"(default: {DEFAULT_MIXTURE_DRAWS})")
    a.add_argument("--seed", type=int, help="random seed (required when --p-design < 1)")
    a.add_argument("--out", help="write the results as a name,value table")

    s = sub.add_parser("simulate", help="run a CRE versus ReM simulation study",
                       description="Run the simulation study described by a JSON scenario "
                                   "config and print the metrics table.")
    s.add_argument("config", help="JSON scenario config")
    s.add_argument("--seed", type=int, help="master seed; overrides master_seed (required)")
    s.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: from config)")
    s.add_argument("--replications", type=int, default=None,
                   help="replications per design (default: from config)")
    s.add_argument("--out", help="write the metrics table to this file")
    s.add_argument("--diagnostics", help="write per-cell calibration diagnostics to this file")

    lim = sub.add_parser("limits", help="limit-law constants for a design",
                         description="Tabulate the acceptance threshold, the variance factor "
                                     "v_{K,a} and the asymptotic variance reduction.")
    lim.add_argument("--k", type=int, required=True, help="number of covariates K")
    g = lim.add_mutually_exclusive_group(required=True)
    g.add_argument("--p", type=_probability, help="acceptance probability")
    g.add_argument("--a", type=_positive, help="acceptance threshold")
    lim.add_argument("--r2", type=float, nargs="+", default=[0.2, 0.5],
                     help="R2 values at which to report the percent variance reduction "
                          "PRIASV (default: 0.2 0.5)")
    lim.add_argument("--miscoverage", type=_open_unit, default=0.05,
                     help="level for the mixture quantile nu (default: 0.05)")
    lim.add_argument("--draws", type=int, default=DEFAULT_MIXTURE_DRAWS,
                     help=f"Monte Carlo draws for nu (default: {DEFAULT_MIXTURE_DRAWS})")
    lim.add_argument("--seed", type=int, help="random seed; nu is reported only when given")
    lim.add_argument("--out", help="write the table to this file")
    return parser


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.10g}"


def _table(rows) -> str:
    return "\n".join(f"{k},{v}" for k, v in rows) + "\n"


def cmd_design(args) -> int:
    x = rio.read_matrix(args.covariates)
    state = BalanceState.from_covariates(x)
    spec = DesignSpec.from_fraction(state.n, args.r1, state.k, args.p,
                                    max_attempts=args.max_attempts)
    rng = np.random.default_rng(args.seed)
    if spec.acceptance_probability == 1.0:
        draw = sample_cre(spec.n, spec.n1, rng, state)
    else:
        draw = sample_rem(state, spec, rng)
    with open(args.out, "w") as fh:
        fh.write(rio.format_assignment(draw, spec.threshold, spec.acceptance_probability))
    print(f"n={spec.n} n1={spec.n1} K={spec.k}")
    print(f"M={draw.M:.6g} a={_fmt(spec.threshold)} p={spec.acceptance_probability:.6g}")
    print(f"attempts={draw.attempts} realized acceptance={1.0 / draw.attempts:.6g}")
    print(f"wrote {args.out}")
    return 0


def cmd_analyze(args) -> int:
    data = rio.read_observed(args.data)
    a = threshold_from_p(data.k, args.p_design)
    rng = None
    if args.seed is not None:
        rng = np.random.default_rng(args.seed)
    elif not math.isinf(a):
        raise InvalidParameterError("--seed is required when --p-design < 1")
    res = analyze(data, args.alpha, a, args.miscoverage, args.bandwidth, m=args.draws, rng=rng)
    rows = [("n", data.n), ("n1", data.n1), ("n0", data.n0), ("K", data.k),
            ("alpha", args.alpha), ("a", _fmt(a)),
            ("q1_hat", _fmt(res.q1_hat)), ("q0_hat", _fmt(res.q0_hat)),
            ("tau_hat", _fmt(res.tau_hat)), ("s1_sq", _fmt(res.s1_sq)),
            ("s0_sq", _fmt(res.s0_sq)), ("f1_hat", _fmt(res.f1_hat)),
            ("f0_hat", _fmt(res.f0_hat)), ("C_hat", _fmt(res.C_hat)),
            ("B_hat", _fmt(res.B_hat)), ("A_hat", _fmt(res.A_hat)),
            ("nu", _fmt(res.nu)), ("ci_low", _fmt(res.ci_low)), ("ci_high", _fmt(res.ci_high))]
    rows += [(f"s_q1x[{j + 1}]", _fmt(v)) for j, v in enumerate(res.s_q1x)]
    rows += [(f"s_q0x[{j + 1}]", _fmt(v)) for j, v in enumerate(res.s_q0x)]
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}")
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("name,value\n" + _table(rows))
    return 0


def cmd_simulate(args) -> int:
    from .simharness import load_config, render_diagnostics, render_report, run_scenario

    config = load_config(args.config)
    changes = {"master_seed": args.seed}
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.replications is not None:
        changes["replications"] = args.replications
    report = run_scenario(config.replace(**changes))
    text = render_report(report, args.out)
    print(text, end="")
    if args.diagnostics:
        render_diagnostics(report, args.diagnostics)
    return 0


def cmd_limits(args) -> int:
    if args.k < 1:
        raise InvalidParameterError(f"--k must be >= 1, got {args.k}")
    if args.p is not None:
        p = args.p
        a = threshold_from_p(args.k, p)
    else:
        a = args.a
        p = chisq_cdf(args.k, a)
    for r2 in args.r2:
        if not 0.0 <= r2 < 1.0:
            raise InvalidParameterError(f"--r2 values must lie in [0, 1), got {r2}")
    v = truncated_variance(args.k, a)
    rows = [("K", args.k), ("p", _fmt(p)), ("a", _fmt(a)), ("v", _fmt(v)), ("1-v", _fmt(1 - v))]
    for r2 in args.r2:
        rows.append((f"PRIASV(R2={r2:g})", _fmt(100.0 * (1.0 - v) * r2)))
    if args.seed is not None:
        level = 1.0 - args.miscoverage / 2.0
        rng = np.random.default_rng(args.seed)
        for r2 in args.r2:
            nu = mixture_quantile(MixtureLaw(1.0 - r2, r2, args.k, a), level, args.draws, rng)
            rows.append((f"nu(R2={r2:g})", _fmt(nu)))
    width = max(len(k) for k, _ in rows)
    for k, val in rows:
        print(f"{k:<{width}}  {val}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("name,value\n" + _table(rows))
    return 0


COMMANDS = {"design": cmd_design, "analyze": cmd_analyze, "simulate": cmd_simulate,
            "limits": cmd_limits}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("design", "simulate"):
        _require_seed(args, parser)
    try:
        return COMMANDS[args.command](args)
    except (InvalidParameterError, MalformedInputError) as exc:
        print(f"remqte {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"remqte {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DegeneracyError as exc:
        print(f"remqte {args.command}: numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
