"""Command line entry point ``kernel-spectra``."""

from __future__ import annotations

import argparse
import json
import sys

from .exceptions import ConfigError, DomainError, KernelSpectraError, PreconditionError, ResourceError
from .harness import KINDS, SUITES, config_from_dict, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_VERIFY = 4


def _floats(text, n, flag):
    parts = text.split(",")
    if len(parts) != n:
        raise ConfigError(flag, f"expected {n} comma-separated values")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(flag, str(exc)) from exc


def _json_arg(text, flag):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(flag, f"invalid JSON: {exc}") from exc


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kernel-spectra",
        description="Spectra of random inner-product kernel matrices and their predicted limits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int)
        if kind in ("theory", "simulate"):
            p.add_argument("--ell", help='exponent as "p/q"')
            p.add_argument("--kappa", type=float)
        if kind == "theory":
            p.add_argument("--gammas", help="gamma_a,gamma_b,gamma_c")
            p.add_argument("--series", help="nonlinearity JSON")
            p.add_argument("--grid", help="tau,nE,nEta")
            p.add_argument("--density", help="Emin,Emax,n,eta")
        if kind == "simulate":
            p.add_argument("--dist")
            p.add_argument("--d", type=int)
            p.add_argument("--N", type=int)
            p.add_argument("--f", help="nonlinearity JSON")
            p.add_argument("--model", choices=("A", "Atilde", "B", "Bfull"))
        if kind == "verify":
            p.add_argument("--suite", choices=SUITES + ("all",))
            p.add_argument("--tol", type=float)
    return parser


def _raw_config(args):
    raw = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "expected an object")
    if raw.get("kind", args.command) != args.command:
        raise ConfigError("kind", f"config is for {raw['kind']!r}, not {args.command!r}")
    raw["kind"] = args.command

    def put(key, value):
        if value is not None:
            raw[key] = value

    put("seed", args.seed)
    put("workers", args.workers)
    put("ell", getattr(args, "ell", None))
    put("kappa", getattr(args, "kappa", None))
    if getattr(args, "gammas", None):
        raw["gammas"] = _floats(args.gammas, 3, "--gammas")
    if getattr(args, "series", None):
        raw["nonlinearity"] = _json_arg(args.series, "--series")
    if getattr(args, "grid", None):
        tau, ne, ni = _floats(args.grid, 3, "--grid")
        raw["grid"] = {"tau": tau, "n_re": int(ne), "n_im": int(ni)}
    if getattr(args, "density", None):
        lo, hi, n, eta = _floats(args.density, 4, "--density")
        raw["density"] = {"range": [lo, hi], "points": int(n), "eta": eta}
    if getattr(args, "dist", None):
        raw["distributions"] = [args.dist]
    if getattr(args, "d", None) is not None:
        raw["d"] = [args.d]
    put("N", getattr(args, "N", None))
    if getattr(args, "f", None):
        raw["nonlinearity"] = _json_arg(args.f, "--f")
    put("model", getattr(args, "model", None))
    if getattr(args, "suite", None) or getattr(args, "tol", None) is not None:
        v = dict(raw.get("verify") or {})
        if args.suite:
            v["suite"] = args.suite
        if args.tol is not None:
            v["tol"] = args.tol
        raw["verify"] = v
    return raw


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_dict(_raw_config(args))
        out_dir = args.out or cfg.out or f"kernel-spectra-{cfg.kind}"
        report = run(cfg, out_dir)
    except ResourceError as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ConfigError, PreconditionError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KernelSpectraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    status = "passed" if report.passed else "FAILED"
    print(f"{cfg.kind}: {status}; outputs in {out_dir}")
    return EXIT_OK if report.passed else EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
