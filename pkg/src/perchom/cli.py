"""Command-line interface: ``perchom <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 numerical non-convergence, 4 bad
input file.  ``--config FILE`` reads flat ``key=value`` lines whose keys are
long flag names; flags given on the command line win.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np

from . import __version__
from .cluster import build_partition, is_good_cube, union_find_clusters
from .elliptic import OperatorSpec, cg_solve, multigrid_poisson, neg_div_a_grad
from .homogenization import (centered_flux, effective_conductance, flux_spatial_average,
                             localized_corrector, probe_grid)
from .io import (FormatError, read_conductance, read_field, read_labels, write_conductance,
                 write_field, write_labels, write_manifest)
from .lattice import CubeDomain, TriadicCube, interior_boundary
from .percolation import PercolationLaw, mask_to_cluster, sample
from .render import field_image, labels_image, write_pgm, write_ppm
from .scheme import IterationConfig, corrector_problem, default_lambda, run

EXIT_OK, EXIT_USAGE, EXIT_NONCONV, EXIT_INPUT = 0, 2, 3, 4

# samples and seed offset used by `solve --abar auto`
AUTO_ABAR_SAMPLES = 4
AUTO_ABAR_SEED_OFFSET = 1_000_000


def _direction(text: str, dim: int) -> np.ndarray:
    if len(text) != 2 or text[0] != "e" or not text[1].isdigit():
        raise argparse.ArgumentTypeError(f"direction must look like e1, got {text!r}")
    k = int(text[1]) - 1
    if not 0 <= k < dim:
        raise ValueError(f"direction {text} does not exist in dimension {dim}")
    p = np.zeros(dim)
    p[k] = 1.0
    return p


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("PH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _write_json(path: str, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _flags(args) -> dict:
    skip = {"func", "config", "threads"}
    return {k: v for k, v in vars(args).items() if k not in skip}


# --- subcommands -------------------------------------------------------------------------

def cmd_sample(args) -> int:
    law = PercolationLaw(args.p, args.lambda_ell, args.law)
    a = sample(CubeDomain(args.dim, args.m), law, args.seed)
    write_conductance(args.out, a)
    write_manifest(args.out, "sample", _flags(args), seeds=[args.seed])
    return EXIT_OK


def cmd_cluster(args) -> int:
    a = read_conductance(args.input)
    labels = union_find_clusters(a)
    if args.out:
        write_labels(args.out, labels)
        write_manifest(args.out, "cluster", _flags(args), seeds=[a.seed],
                       inputs={"in": args.input})
    if args.stats or not args.out:
        dom = a.domain
        status = is_good_cube(a, TriadicCube(dom.level, (0,) * dom.dim))
        print(f"maximal_cluster_size {labels.maximal_size}")
        print(f"components {labels.n_components}")
        print(f"crossing {str(labels.is_crossing).lower()}")
        print(f"top_cube {status}")
    return EXIT_OK


def cmd_abar(args) -> int:
    law = PercolationLaw(args.p, args.lambda_ell, args.law)
    seeds = list(range(args.seed, args.seed + args.samples))
    est = effective_conductance(law, args.m, args.samples, seeds=seeds, dim=args.dim,
                                tol=args.tol, workers=_threads(args))
    doc = est.as_dict()
    doc.update({"dim": args.dim, "p": args.p, "law": args.law})
    if args.json:
        _write_json(args.json, doc)
        write_manifest(args.json, "abar", _flags(args), seeds=seeds)
    print(f"abar {est.abar:.10g} stderr {est.stderr:.3g} flux {est.flux_abar:.10g}")
    return EXIT_OK


def cmd_corrector(args) -> int:
    if args.input:
        a = read_conductance(args.input)
    else:
        law = PercolationLaw(args.p, args.lambda_ell, args.law)
        a = sample(CubeDomain(args.dim, args.m), law, args.seed)
    p = _direction(args.dir, a.domain.dim)
    labels = union_find_clusters(a)
    phi, rep = localized_corrector(a, labels, p, tol=args.tol, return_report=True)
    write_field(args.out, phi, a.domain)
    write_manifest(args.out, "corrector", _flags(args), seeds=[a.seed],
                   inputs={"in": args.input} if args.input else None)
    print(f"iterations {rep.iterations} residual {rep.final_residual:.3e}")
    return EXIT_OK if rep.converged else EXIT_NONCONV


def cmd_solve(args) -> int:
    a = read_conductance(args.input)
    dom = a.domain
    labels = union_find_clusters(a)
    p = None
    if args.corrector_dir:
        p = _direction(args.corrector_dir, dom.dim)
        f = corrector_problem(a, labels, p)
    elif args.f:
        f, fdom, kind = read_field(args.f)
        if fdom != dom or kind != "scalar":
            raise FormatError(f"{args.f}: right-hand side does not match the conductance file")
    else:
        raise argparse.ArgumentTypeError("give --f FILE or --corrector-dir")
    g = None
    if args.g and args.g != "zero":
        g, gdom, kind = read_field(args.g)
        if gdom != dom or kind != "scalar":
            raise FormatError(f"{args.g}: boundary data does not match the conductance file")
        interior, _ = interior_boundary(dom)
        g = np.where(interior, 0.0, g)
    lam = default_lambda(dom.level, dom.dim) if args.lam == "auto" else float(args.lam)
    if args.abar == "auto":
        seeds = [AUTO_ABAR_SEED_OFFSET + a.seed + i for i in range(AUTO_ABAR_SAMPLES)]
        abar = effective_conductance(a.law, dom.level, AUTO_ABAR_SAMPLES, seeds=seeds,
                                     dim=dom.dim, workers=_threads(args)).abar
    else:
        abar = float(args.abar)
    cfg = IterationConfig(lam=lam, abar=abar, f=f, g=g, rounds=args.rounds, cg_tol=args.tol,
                          mg_tol=args.tol)
    u, trace = run(cfg, a, labels, seed=a.seed, p=None if p is None else list(p))
    write_field(args.out, u, dom)
    inputs = {"in": args.input, "f": args.f, "g": None if args.g == "zero" else args.g}
    write_manifest(args.out, "solve", _flags(args), seeds=[a.seed], inputs=inputs)
    if args.trace:
        _write_json(args.trace, trace.as_dict())
    for n, r in enumerate(trace.rounds, 1):
        print(f"round {n} res {r.res:.6e}" + ("" if r.ratio is None else f" ratio {r.ratio:.4f}"))
    return EXIT_NONCONV if trace.flagged else EXIT_OK


def cmd_solve_raw(args) -> int:
    rhs, dom, kind = read_field(args.rhs)
    if kind != "scalar":
        raise FormatError(f"{args.rhs}: right-hand side must be a scalar field")
    if args.op == "het":
        if not args.input:
            raise argparse.ArgumentTypeError("--op het needs --in COND")
        a = read_conductance(args.input)
        if a.domain != dom:
            raise FormatError("conductance and right-hand side live on different cubes")
        labels = union_find_clusters(a)
        lam_field = np.where(labels.maximal_mask(), args.lam, 0.0)
        spec = OperatorSpec("heterogeneous", dom, lam_field, mask_to_cluster(a, labels).values)
        u, rep = cg_solve(spec, rhs, tol=args.tol, max_iter=args.max_iter)
    else:
        if args.lam != 0.0:
            lam_field = np.full(dom.shape, args.lam)
            spec = OperatorSpec("homogenized", dom, lam_field, abar=args.abar)
            u, rep = cg_solve(spec, rhs, tol=args.tol, max_iter=args.max_iter)
        else:
            u, rep = multigrid_poisson(args.abar, rhs, tol=args.tol)
    write_field(args.out, u, dom)
    write_manifest(args.out, "solve-raw", _flags(args),
                   inputs={"rhs": args.rhs, "in": args.input})
    if args.report:
        _write_json(args.report, rep.as_dict())
    return EXIT_OK if rep.converged else EXIT_NONCONV


def cmd_flux(args) -> int:
    a = read_conductance(args.input)
    phi, dom, kind = read_field(args.corrector)
    if dom != a.domain or kind != "scalar":
        raise FormatError(f"{args.corrector}: corrector does not match the conductance file")
    labels = union_find_clusters(a)
    p = _direction(args.dir, dom.dim)
    g = centered_flux(a, labels, phi, args.abar, p)
    doc = {"p": list(p), "abar": args.abar, "mean": [float(x) for x in g.reshape(dom.dim, -1).mean(1)],
           "averages": {}}
    for R in args.R:
        probes = probe_grid(dom, R, args.probe_grid)
        vals = flux_spatial_average(g, R, probes)
        doc["averages"][repr(R)] = {
            "probes": probes.tolist(),
            "values": vals.tolist(),
            "median_abs": float(np.median(np.linalg.norm(vals, axis=1))),
        }
    _write_json(args.json, doc)
    write_manifest(args.json, "flux", _flags(args), seeds=[a.seed],
                   inputs={"in": args.input, "corrector": args.corrector})
    return EXIT_OK


def cmd_render(args) -> int:
    with open(args.input, "rb") as fh:
        tag = fh.read(8)
    if tag.startswith(b"PHLBL"):
        labels = read_labels(args.input)
        write_ppm(args.out, labels_image(labels))
        return EXIT_OK
    if tag.startswith(b"PHCOND"):
        a = read_conductance(args.input)
        write_ppm(args.out, labels_image(union_find_clusters(a)))
        return EXIT_OK
    u, dom, kind = read_field(args.input)
    if kind != "scalar":
        u = np.sqrt(np.sum(u * u, axis=0))
    mask = None
    if args.labels:
        labels = read_labels(args.labels)
        if labels.domain != dom:
            raise FormatError("labels and field live on different cubes")
        mask = labels.maximal_mask()
    write_pgm(args.out, field_image(u, mask))
    return EXIT_OK


def _selftest_cases() -> List[str]:
    failures = []
    dom = CubeDomain(2, 3)
    a = sample(dom, PercolationLaw(1.0), 0)
    labels = union_find_clusters(a)
    if labels.maximal_size != dom.size:
        failures.append("full lattice is not one cluster")
    part = build_partition(a, labels)
    if not np.all(part.levels == 1):
        failures.append("full lattice partition is not all size 3")
    est = effective_conductance(PercolationLaw(1.0), 3, 1)
    if abs(est.abar - (1.0 - 3.0 ** -3)) > 1e-12:
        failures.append(f"abar at p=1 is {est.abar}")
    phi = localized_corrector(a, labels, [1.0, 0.0])
    if np.max(np.abs(phi)) > 1e-8:
        failures.append("corrector at p=1 is not zero")
    idx = np.indices(dom.shape) / (dom.side - 1)
    u = np.sin(np.pi * idx[0]) * np.sin(np.pi * idx[1])
    interior, _ = interior_boundary(dom)
    u = np.where(interior, u, 0.0)
    f = neg_div_a_grad(a.values, u)
    cfg = IterationConfig(lam=0.2, abar=1.0, f=f, u0=u, rounds=1)
    uh, tr = run(cfg, a, labels)
    if np.max(np.abs(uh - u)) > 1e-7:
        failures.append("true solution is not a fixed point")
    cfg = IterationConfig(lam=0.2, abar=1.0, f=f, rounds=1)
    _, tr = run(cfg, a, labels)
    if not tr.rounds[0].res <= 0.1 * tr.initial_res:
        failures.append("one round at p=1 does not gain a factor 10")
    return failures


def cmd_selftest(args) -> int:
    failures = _selftest_cases()
    for msg in failures:
        print(f"FAIL {msg}")
    print("selftest ok" if not failures else f"selftest: {len(failures)} failure(s)")
    return EXIT_OK if not failures else EXIT_NONCONV


# --- parser ------------------------------------------------------------------------------

def _law_flags(p: argparse.ArgumentParser, with_seed: bool = True) -> None:
    p.add_argument("--dim", type=int, default=2, choices=(2, 3))
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--p", type=float, default=0.7)
    p.add_argument("--law", default="bernoulli", choices=("bernoulli", "uniform"))
    p.add_argument("--lambda-ell", dest="lambda_ell", type=float, default=2.0)
    if with_seed:
        p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perchom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file of long flag names")
    common.add_argument("--threads", type=int, default=None,
                        help="worker count (default: PH_THREADS, else all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", parents=[common], help="draw a conductance field")
    _law_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("cluster", parents=[common], help="label open clusters")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--stats", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("abar", parents=[common], help="estimate the effective conductance")
    _law_flags(p)
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--json")
    p.set_defaults(func=cmd_abar)

    p = sub.add_parser("corrector", parents=[common], help="localized corrector")
    _law_flags(p)
    p.add_argument("--in", dest="input")
    p.add_argument("--dir", default="e1")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corrector)

    p = sub.add_parser("solve", parents=[common], help="run the iterative scheme")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--f")
    p.add_argument("--corrector-dir", dest="corrector_dir")
    p.add_argument("--g", default="zero")
    p.add_argument("--lambda", dest="lam", default="auto")
    p.add_argument("--abar", default="auto")
    p.add_argument("--rounds", type=int, default=8)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("solve-raw", parents=[common], help="one inner solve")
    p.add_argument("--op", choices=("het", "hom"), required=True)
    p.add_argument("--in", dest="input")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--abar", type=float, default=1.0)
    p.add_argument("--rhs", required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_solve_raw)

    p = sub.add_parser("flux", parents=[common], help="centered flux spatial averages")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--corrector", required=True)
    p.add_argument("--dir", default="e1")
    p.add_argument("--abar", type=float, required=True)
    p.add_argument("--probe-grid", dest="probe_grid", type=int, default=3)
    p.add_argument("--R", type=float, nargs="+", default=[3.0, 9.0])
    p.add_argument("--json", required=True)
    p.set_defaults(func=cmd_flux)

    p = sub.add_parser("render", parents=[common], help="write a PGM/PPM image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("selftest", parents=[common], help="trivial-case checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def _config_tokens(path: str, parser: argparse.ArgumentParser, command: str) -> List[str]:
    """``key=value`` lines turned into ``--key value`` tokens."""
    sub = parser._subparsers._group_actions[0].choices[command]
    flags = {}
    for action in sub._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                flags[opt[2:]] = action
    tokens = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{n}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            action = flags.get(key)
            if action is None or key == "config":
                raise FormatError(f"{path}:{n}: unknown key {key!r}")
            if action.nargs == 0:
                if value.lower() in ("1", "true", "yes", "on"):
                    tokens.append("--" + key)
            elif action.nargs in ("+", "*"):
                tokens += ["--" + key] + value.split()
            else:
                tokens += ["--" + key, value]
    return tokens


def _find_config(argv: List[str]) -> Optional[str]:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        cfg = _find_config(argv)
        if cfg is not None:
            commands = [t for t in argv if t in parser._subparsers._group_actions[0].choices]
            if not commands:
                parser.parse_args(argv)
            cmd = commands[0]
            pos = argv.index(cmd)
            argv = argv[:pos + 1] + _config_tokens(cfg, parser, cmd) + argv[pos + 1:]
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except argparse.ArgumentTypeError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except np.linalg.LinAlgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
