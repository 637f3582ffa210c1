"""Command-line surface: deterministic experiment runs with persisted artifacts.

Subcommands: constants, verify-lemmas, clt, moments, sweep, sample,
dilt-moment.  Every run writes its CSV/JSON artifacts atomically (temp file
plus rename) and finishes with a manifest recording the configuration, the
SHA-256 of every artifact, and the wall time; identical flags reproduce
identical hashes.

Exit codes: 0 success, 1 validation error, 2 numerical failure (quadrature
budget or embedding failure), 3 acceptance-check failure in verify modes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import EmbeddingFailureError, FbmiltError, ParameterError
from .experiments import (
    clt_experiment,
    existence_boundary_sweep,
    moment_growth_probe,
)
from .fbm import RngStream, TimeGrid, get_sampler, path_to_csv
from .functionals import MollifierSpec, refinement_table
from .gaussian_core import ModelConfig
from .lemma_checks import run_all as run_lemma_suites
from .moments import (
    dilt_second_moment,
    limiting_integral,
    moment_report_csv,
    moment_report_rows,
    sigma_constant,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_VERIFY_FAILED = 3

OUT_ENV = "FBMILT_OUT"


def _write_atomic(path, content):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _sha256(path):
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


class RunWriter:
    """Collects artifacts for one command and writes the manifest last."""

    def __init__(self, out_dir, command, config):
        self.out_dir = Path(out_dir)
        self.command = command
        self.config = config
        self.artifacts = []
        self.start = time.monotonic()

    def add(self, name, content):
        path = _write_atomic(self.out_dir / name, content)
        self.artifacts.append({"name": name, "sha256": _sha256(path)})
        return path

    def finish(self):
        manifest = {
            "command": self.command,
            "config": self.config,
            "artifacts": self.artifacts,
            "wall_time_s": round(time.monotonic() - self.start, 3),
            "version": __version__,
        }
        _write_atomic(self.out_dir / f"{self.command}_manifest.json",
                      json.dumps(manifest, indent=2, sort_keys=True))
        return manifest


def _float_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _k_tuple(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _load_config_file(path):
    """Flat key-value JSON; flags given on the command line take precedence."""
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ParameterError("config file must hold a flat JSON object")
    for key, val in data.items():
        if isinstance(val, (dict, list)):
            raise ParameterError(f"config key {key!r} is not flat")
    return data


def _apply_config_file(args, parser):
    if not getattr(args, "config", None):
        return args
    data = _load_config_file(args.config)
    given = {a.split("=")[0].lstrip("-").replace("-", "_")
             for a in sys.argv[2:] if a.startswith("--")}
    for key, val in data.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ParameterError(f"config file key {key!r} is not a known flag")
        if attr in given or attr == "config":
            continue
        current = getattr(args, attr)
        if isinstance(current, list) and isinstance(val, str):
            val = _float_list(val)
        elif current is not None and not isinstance(current, (str, bool)):
            val = type(current)(val)
        setattr(args, attr, val)
    return args


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fbmilt",
        description=("Derivative of (self-)intersection local time of "
                     "fractional Brownian motion: constants, samplers, "
                     "Monte-Carlo harnesses and lemma verification."),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default=None,
                       help=f"output directory (default: ${OUT_ENV} or ./fbmilt_out)")
        p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        p.add_argument("--workers", type=int, default=1,
                       help="worker processes for MC ensembles (default 1)")
        p.add_argument("--budget", type=int, default=20_000_000,
                       help="max integrand evaluations per quadrature (default 2e7)")
        p.add_argument("--config", default=None,
                       help="flat JSON config file; explicit flags override it")
        p.add_argument("--allow-out-of-regime", action="store_true",
                       help="proceed when (d,H,k) violates the existence condition")

    p = sub.add_parser("constants", help="limiting variance constants table")
    common(p)
    p.add_argument("--d", type=int, default=2, choices=(2, 3))
    p.add_argument("--H", type=_float_list, default=None,
                   help="comma-separated H values (default: regime grid)")
    p.add_argument("--t", type=float, default=1.0, help="horizon (default 1.0)")
    p.add_argument("--rtol", type=float, default=1e-5,
                   help="quadrature relative tolerance (default 1e-5)")

    p = sub.add_parser("verify-lemmas", help="run the lemma verification ledger")
    common(p)
    p.add_argument("--include-n1-gamma", action="store_true",
                   help="also print the documented n=1 Gamma counterexample")

    p = sub.add_parser("clt", help="fixed-eps CLT surrogate experiment")
    common(p)
    p.add_argument("--d", type=int, default=2, choices=(2, 3))
    p.add_argument("--H", type=float, default=0.75)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--eps", type=_float_list, default=[0.05],
                   help="comma-separated eps ladder (default 0.05)")
    p.add_argument("--n", type=int, default=256, help="grid steps (default 256)")
    p.add_argument("--N", type=int, default=2000, help="MC samples (default 2000)")
    p.add_argument("--variance-rtol", type=float, default=0.25,
                   help="variance tolerance vs the limit constant (default 0.25)")
    p.add_argument("--p-level", type=float, default=0.01,
                   help="KS rejection level (default 0.01)")
    p.add_argument("--sampler", default="circulant",
                   choices=("circulant", "cholesky"))

    p = sub.add_parser("moments", help="V-decomposition report and growth probe")
    common(p)
    p.add_argument("--d", type=int, default=2, choices=(2, 3))
    p.add_argument("--H", type=float, default=0.75)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--eps", type=_float_list, default=[1e-2, 1e-3, 1e-4])
    p.add_argument("--rtol", type=float, default=1e-6)
    p.add_argument("--growth", action="store_true",
                   help="also run the MC moment-growth probe")
    p.add_argument("--k", type=_k_tuple, default=None,
                   help="multi-index for the growth probe (default 0 vector)")
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--N", type=int, default=2000)

    p = sub.add_parser("sweep", help="existence-boundary variance sweep")
    common(p)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--k", type=_k_tuple, default=(0,))
    p.add_argument("--H", type=_float_list, default=[0.3, 0.5, 0.7])
    p.add_argument("--eps", type=_float_list, default=[0.1, 0.05, 0.025])
    p.add_argument("--kind", default="dilt", choices=("dilt", "dslt"))
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--sampler", default="circulant",
                   choices=("circulant", "cholesky"))

    p = sub.add_parser("sample", help="draw one path and dump it as CSV")
    common(p)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--H", type=float, default=0.75)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--sampler", default="cholesky",
                   choices=("circulant", "cholesky"))
    p.add_argument("--dump", default="path.csv", help="artifact file name")
    p.add_argument("--refine-table", action="store_true",
                   help="emit the grid-refinement convergence table instead")
    p.add_argument("--eps", type=float, default=0.05,
                   help="mollifier eps for the refinement table")
    p.add_argument("--k", type=_k_tuple, default=None)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--N", type=int, default=64)

    p = sub.add_parser("dilt-moment", help="intersection second moment by quadrature")
    common(p)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--H", type=float, default=0.5)
    p.add_argument("--k", type=_k_tuple, default=(0,))
    p.add_argument("--eps", type=_float_list, default=[0.1])
    p.add_argument("--rtol", type=float, default=1e-7)
    return parser


def _out_dir(args):
    return args.out or os.environ.get(OUT_ENV) or "fbmilt_out"


def cmd_constants(args):
    hs = args.H
    if hs is None:
        hs = [0.55, 0.6, 0.75, 0.9] if args.d == 2 else [0.55, 0.6]
    writer = RunWriter(_out_dir(args), "constants",
                       {"d": args.d, "H": hs, "t": args.t, "rtol": args.rtol,
                        "seed": args.seed})
    lines = ["d,H,t,sigma_sq_closed,sigma_sq_quadrature,rel_gap,status"]
    print(f"{'d':>2} {'H':>6} {'closed':>14} {'quadrature':>14} {'rel gap':>10}")
    worst = 0.0
    for H in hs:
        in_regime = (args.d == 2 and 0.5 < H < 1.0) or \
                    (args.d == 3 and 0.5 < H < 2.0 / 3.0)
        if not in_regime:
            lines.append(f"{args.d},{H:.17g},{args.t:.17g},nan,nan,nan,out-of-regime")
            print(f"{args.d:>2} {H:>6.3g} {'out-of-regime':>30}")
            continue
        closed = sigma_constant(args.d, H, args.t)
        quad = limiting_integral(args.d, H, args.t, rel_tol=args.rtol,
                                 max_evals=args.budget)
        gap = abs(quad.value - closed) / closed
        worst = max(worst, gap)
        lines.append(f"{args.d},{H:.17g},{args.t:.17g},{closed:.17g},"
                     f"{quad.value:.17g},{gap:.17g},ok")
        print(f"{args.d:>2} {H:>6.3g} {closed:>14.8g} {quad.value:>14.8g} "
              f"{gap:>10.2e}")
    writer.add("constants.csv", "\n".join(lines) + "\n")
    writer.finish()
    if worst > 1e-3:
        print(f"closed form and quadrature disagree beyond 1e-3 ({worst:.2e})")
        return EXIT_VERIFY_FAILED
    return EXIT_OK


def cmd_verify_lemmas(args):
    records, all_passed = run_lemma_suites(seed=args.seed,
                                           include_n1_gamma=args.include_n1_gamma)
    writer = RunWriter(_out_dir(args), "verify_lemmas",
                       {"seed": args.seed,
                        "include_n1_gamma": args.include_n1_gamma})
    lines = ["check,passed,detail"]
    for name, ok, detail in records:
        expected_failure = "expected failure" in name
        status = "PASS" if ok else ("EXPECTED-FAIL" if expected_failure else "FAIL")
        print(f"[{status:>13}] {name}: {detail}")
        lines.append(f"{name},{int(ok)},\"{detail}\"")
    writer.add("verify_lemmas.csv", "\n".join(lines) + "\n")
    writer.finish()
    return EXIT_OK if all_passed else EXIT_VERIFY_FAILED


def cmd_clt(args):
    config = ModelConfig(H=args.H, d=args.d,
                         k=tuple(1 if j == 0 else 0 for j in range(args.d)),
                         t=args.t)
    report = clt_experiment(config, args.eps, args.n, args.N, args.seed,
                            variance_rtol=args.variance_rtol,
                            p_level=args.p_level, sampler=args.sampler,
                            workers=args.workers)
    writer = RunWriter(_out_dir(args), "clt", vars_config(args))
    writer.add("clt_report.csv", report.to_csv())
    writer.add("clt_verdict.json", report.to_json())
    writer.finish()
    for row in report.rows:
        print(f"eps={row['epsilon']:g}: variance ratio "
              f"{row['variance_ratio']:.4f} (tol {args.variance_rtol}), "
              f"KS p={row['ks_pvalue']:.4g} (level {args.p_level}) "
              f"[{'ok' if row['variance_ok'] and row['ks_ok'] else 'off'}]")
    print(f"verdict: {'PASS' if report.verdict else 'FAIL'}")
    return EXIT_OK


def cmd_moments(args):
    writer = RunWriter(_out_dir(args), "moments", vars_config(args))
    rows = moment_report_rows(args.d, args.H, args.t, args.eps,
                              rel_tol=args.rtol, max_evals=args.budget)
    writer.add("moment_report.csv", moment_report_csv(rows))
    for r in rows:
        print(f"eps={r['epsilon']:g}: Vsum_scaled={r['Vsum_scaled']:.6g} "
              f"Vtilde3_scaled={r['Vtilde3_scaled']:.6g} "
              f"sigma_sq={r['sigma_sq']:.6g}")
    if args.growth:
        k = args.k if args.k is not None else tuple(0 for _ in range(args.d))
        config = ModelConfig(H=args.H, d=args.d, k=k, t=args.t)
        spec = MollifierSpec(eps=args.eps[0], k=k)
        probe = moment_growth_probe(config, spec, (1, 2, 3, 4), args.N,
                                    args.seed, n=args.n, workers=args.workers)
        writer.add("moment_growth.csv", probe.to_csv())
        print(f"moment growth: normalized g(m) = "
              f"{[round(r['normalized'], 4) for r in probe.rows]}"
              f"{' [heavy tail]' if probe.heavy_tail else ''}")
    writer.finish()
    return EXIT_OK


def cmd_sweep(args):
    if len(args.k) != args.d:
        raise ParameterError(f"k={args.k} does not match d={args.d}")
    report = existence_boundary_sweep(args.k, args.d, args.H, args.eps,
                                      args.N, args.seed, n=args.n,
                                      kind=args.kind, sampler=args.sampler,
                                      workers=args.workers)
    writer = RunWriter(_out_dir(args), "sweep", vars_config(args))
    lines = ["H,exists,epsilon,variance"]
    for row in report["rows"]:
        for eps, var in zip(row["eps_ladder"], row["variances"]):
            lines.append(f"{row['H']:.17g},{int(row['exists'])},"
                         f"{eps:.17g},{var:.17g}")
        trend = "growing" if row["monotone_growth"] else "stable/mixed"
        print(f"H={row['H']:g} exists={row['exists']}: variances "
              f"{[f'{v:.4g}' for v in row['variances']]} -> {trend}")
    writer.add("sweep.csv", "\n".join(lines) + "\n")
    writer.add("sweep.json", json.dumps(report, indent=2, sort_keys=True))
    writer.finish()
    return EXIT_OK


def cmd_sample(args):
    writer = RunWriter(_out_dir(args), "sample", vars_config(args))
    if args.refine_table:
        k = args.k if args.k is not None else tuple(0 for _ in range(args.d))
        config = ModelConfig(H=args.H, d=args.d, k=k, t=args.t)
        spec = MollifierSpec(eps=args.eps, k=k)
        rows = refinement_table(config, spec, args.n, args.levels, args.seed,
                                count=args.N, sampler=args.sampler)
        lines = ["n,mean_estimate,mean_abs_refinement_gap"]
        for r in rows:
            lines.append(f"{r['n']},{r['mean_estimate']:.17g},"
                         f"{r['mean_abs_refinement_gap']:.17g}")
            print(f"n={r['n']:>6}: estimate {r['mean_estimate']:.6g}, "
                  f"refinement gap {r['mean_abs_refinement_gap']:.6g}")
        writer.add("refinement_table.csv", "\n".join(lines) + "\n")
    else:
        grid = TimeGrid(args.t, args.n)
        path = get_sampler(args.sampler)(grid, args.H, args.d,
                                         RngStream(args.seed, 0))
        writer.add(args.dump, path_to_csv(path))
        print(f"wrote {args.dump}: {args.d}x{args.n} path, H={args.H}, "
              f"method={args.sampler}")
    writer.finish()
    return EXIT_OK


def cmd_dilt_moment(args):
    if len(args.k) != args.d:
        raise ParameterError(f"k={args.k} does not match d={args.d}")
    writer = RunWriter(_out_dir(args), "dilt_moment", vars_config(args))
    lines = ["epsilon,value,abs_error,evals,converged"]
    prev = None
    for eps in args.eps:
        res = dilt_second_moment(eps, args.H, args.d, args.k,
                                 rel_tol=args.rtol, max_evals=args.budget,
                                 allow_out_of_regime=args.allow_out_of_regime)
        lines.append(f"{eps:.17g},{res.value:.17g},{res.abs_error:.17g},"
                     f"{res.evals},{int(res.converged)}")
        step = "" if prev is None else f" (step {res.value - prev:+.6g})"
        print(f"eps={eps:g}: E[alpha^2] = {res.value:.8g} "
              f"+- {res.abs_error:.2g}{step}")
        prev = res.value
    writer.add("dilt_moment.csv", "\n".join(lines) + "\n")
    writer.finish()
    return EXIT_OK


def vars_config(args):
    """Manifest echo of the parsed flags (drop internals)."""
    skip = {"func", "command"}
    out = {}
    for key, val in vars(args).items():
        if key in skip:
            continue
        out[key] = list(val) if isinstance(val, tuple) else val
    return out


_HANDLERS = {
    "constants": cmd_constants,
    "verify-lemmas": cmd_verify_lemmas,
    "clt": cmd_clt,
    "moments": cmd_moments,
    "sweep": cmd_sweep,
    "sample": cmd_sample,
    "dilt-moment": cmd_dilt_moment,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_file(args, parser)
        return _HANDLERS[args.command](args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (EmbeddingFailureError, FbmiltError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
