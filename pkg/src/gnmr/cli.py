"""Command line entry point: ``gnmr {complete,sense,sweep,gen,diag}``.

Exit codes: 0 success, 1 usage error (bad flags, malformed config, unreadable
files), 2 numerical failure (non-finite solve, SVD failure, infeasible pattern).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .algorithm import parse_variant, run_gnmr
from .diagnostics import balance, incoherence_mu, neighborhood_report, rel_rmse, rip_delta, rip_probe
from .harness import ConfigError, load_config, run_sweep, with_overrides
from .model import GnmrConfig, StoppingCriteria, dense
from .probgen import PatternInfeasibleError, completion_instance, read_bundle, sensing_instance, write_bundle
from .rng import stream
from .spectral import InitConfig, bsvd, spectral_init


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _variant(text: str) -> float:
    try:
        return parse_variant(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _run_flags(p: argparse.ArgumentParser, default_variant: str) -> None:
    p.add_argument("--variant", type=_variant, default=parse_variant(default_variant),
                   help="updating | averaging | setting | alpha=<x>")
    p.add_argument("--balancing", action="store_true", help="balance factors before each solve")
    p.add_argument("--max-outer", type=int, default=100)
    p.add_argument("--max-inner", type=int, default=1500)
    p.add_argument("--tol", type=float, default=1e-12, help="inner LSQR tolerance")
    p.add_argument("--eps-rmse", type=float, default=1e-14)
    p.add_argument("--eps-diff", type=float, default=1e-14)


def _instance_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n1", type=int, default=100)
    p.add_argument("--n2", type=int, default=100)
    p.add_argument("--rank", "-r", type=int, default=5)
    p.add_argument("--kappa", type=float, default=10.0)
    p.add_argument("--profile", default="equispaced", choices=["equispaced", "geometric"])
    p.add_argument("--noise", type=float, default=0.0, help="per-measurement noise std")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gnmr", description="Gauss-Newton low-rank matrix recovery")
    parser.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("complete", help="one completion run (from a bundle or generated)")
    p.add_argument("--bundle", help="instance directory written by 'gen'")
    _instance_flags(p)
    p.add_argument("--rho", type=float, default=2.5)
    p.add_argument("--mu", type=float, default=None, help="row-clipping incoherence for the init")
    _run_flags(p, "setting")
    p.add_argument("--out", help="write the iteration trace CSV here")

    p = sub.add_parser("sense", help="one Gaussian sensing run")
    _instance_flags(p)
    p.add_argument("--m", type=int, default=None, help="measurements (default 6 max(n1,n2) r)")
    p.add_argument("--init", choices=["spectral", "perturbed"], default="spectral")
    p.add_argument("--perturb", type=float, default=0.05,
                   help="||E||_F / sigma_r for --init perturbed")
    _run_flags(p, "updating")
    p.add_argument("--out", help="write the iteration trace CSV here")

    p = sub.add_parser("sweep", help="run a sweep described by a config file")
    p.add_argument("config")
    p.add_argument("--out", help="CSV destination (default stdout)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--max-outer", type=int, default=None)
    p.add_argument("--max-inner", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)

    p = sub.add_parser("gen", help="write a completion instance bundle")
    _instance_flags(p)
    p.add_argument("--rho", type=float, default=2.5)
    p.add_argument("--out", required=True, help="bundle directory")

    p = sub.add_parser("diag", help="neighborhood report of the spectral init, optional RIP probe")
    p.add_argument("--bundle", required=True)
    p.add_argument("--init", choices=["spectral", "exact"], default="spectral")
    p.add_argument("--probe", type=int, default=0, help="RIP probe trials (0 = skip)")
    p.add_argument("--out", help="also write the report here")
    return parser


def _config(args) -> GnmrConfig:
    return GnmrConfig(rank=args.rank, alpha=args.variant, max_outer=args.max_outer,
                      max_inner=args.max_inner, inner_tol=args.tol, balancing=args.balancing,
                      stopping=StoppingCriteria(eps_rmse=args.eps_rmse, eps_diff=args.eps_diff))


def _report(est, trace, truth, out) -> None:
    print(f"rel_rmse={rel_rmse(est, truth)!r}")
    print(f"outer_iters={len(trace) - 1}")
    print(f"stop_reason={trace.stop_reason}")
    if out:
        Path(out).write_text(trace.to_csv())


def cmd_complete(args) -> int:
    if args.bundle:
        inst = read_bundle(args.bundle)
        args.rank = inst.rank
    else:
        inst = completion_instance(args.n1, args.n2, args.rank, args.kappa, args.rho, args.seed,
                                   noise_sigma=args.noise, profile=args.profile)
    init = spectral_init(inst.model, inst.b, InitConfig(rank=args.rank, mu=args.mu))
    est, trace = run_gnmr(init.z, inst.model, inst.b, _config(args), truth=inst.truth)
    _report(est, trace, inst.truth, args.out)
    return 0


def cmd_sense(args) -> int:
    m = args.m if args.m is not None else 6 * max(args.n1, args.n2) * args.rank
    inst = sensing_instance(args.n1, args.n2, args.rank, args.kappa, m, args.seed,
                            noise_sigma=args.noise, profile=args.profile)
    if args.init == "perturbed":
        e = stream(args.seed, "perturb").standard_normal((args.n1, args.n2))
        e *= args.perturb * inst.truth.spectrum[-1] / np.linalg.norm(e)
        z0 = bsvd(dense(inst.truth) + e, args.rank)
    else:
        z0 = bsvd(inst.model.adjoint(inst.b), args.rank)
    est, trace = run_gnmr(z0, inst.model, inst.b, _config(args), truth=inst.truth)
    _report(est, trace, inst.truth, args.out)
    return 0


def cmd_sweep(args) -> int:
    spec = load_config(args.config)
    spec = with_overrides(spec, workers=args.workers, max_outer=args.max_outer,
                          max_inner=args.max_inner, inner_tol=args.tol)
    text = run_sweep(spec).to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_gen(args) -> int:
    inst = completion_instance(args.n1, args.n2, args.rank, args.kappa, args.rho, args.seed,
                               noise_sigma=args.noise, profile=args.profile)
    write_bundle(args.out, inst, profile=args.profile)
    print(f"wrote {args.out} (m={inst.model.m})")
    return 0


def cmd_diag(args) -> int:
    inst = read_bundle(args.bundle)
    r = inst.rank
    if args.init == "exact":
        z = bsvd(inst.truth, r)
    else:
        z = spectral_init(inst.model, inst.b, InitConfig(rank=r)).z
    lines = [f"balance={balance(z)!r}", f"mu_truth={incoherence_mu(inst.truth)!r}"]
    lines += neighborhood_report(z, inst.truth).lines()
    if args.probe > 0:
        probe = rip_probe(inst.model, 2 * r, args.probe, seed=args.seed)
        lines += [f"rip_probe_min={probe[0]!r}", f"rip_probe_max={probe[1]!r}",
                  f"rip_delta={rip_delta(probe)!r}"]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return 0


COMMANDS = {"complete": cmd_complete, "sense": cmd_sense, "sweep": cmd_sweep,
            "gen": cmd_gen, "diag": cmd_diag}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.seed < 0:
            raise UsageError("--seed must be nonnegative")
        return COMMANDS[args.cmd](args)
    except (UsageError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, UsageError):
            parser.print_usage(sys.stderr)
        return 1
    except (FloatingPointError, np.linalg.LinAlgError, PatternInfeasibleError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # invalid parameter combinations caught by the library's validation
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
