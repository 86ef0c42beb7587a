"""Command-line entry point: ``hcgas <command> [options]``.

Every command writes a CSV (or JSON) result plus a ``.json`` sidecar that
echoes the configuration, seed, partition-table checksums and wall time.
Options can also come from ``--config FILE`` holding ``key = value`` lines;
flags given on the command line win.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, HCGError, ResourceError, ValidationFailure
from .hierarchy import DiskRegion
from .outputs import write_csv, write_sidecar
from .parallel import default_workers
from .partition import (DEFAULT_CEILING, DEFAULT_N_MAX, cached_partition_table, envelope_ratio,
                        install_table, jensen_gap, table_for)

log = logging.getLogger("hcgas")

DEFAULT_CACHE = ".hcgas-cache"
VALIDATE_ALPHA = 1e-3


def _floats(s):
    try:
        return [float(v) for v in str(s).replace(";", ",").split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from e


def _point(s):
    v = _floats(s)
    if len(v) != 2:
        raise argparse.ArgumentTypeError(f"expected x,y, got {s!r}")
    return tuple(v)


def read_config_file(path):
    """``key = value`` lines; '#' starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    for i, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{i}: expected key = value")
        k, v = (x.strip() for x in line.split("=", 1))
        out[k.replace("_", "-")] = v
    return out


def _common(p, seed=True):
    p.add_argument("--config", help="key = value file; command-line flags override it")
    p.add_argument("--out", help="output path")
    p.add_argument("--cache", default=DEFAULT_CACHE,
                   help="partition-table cache directory or file")
    p.add_argument("--rebuild", action="store_true", help="rebuild the cached partition table")
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: available CPUs)")
    if seed:
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-level", default="INFO")


def build_parser():
    ap = argparse.ArgumentParser(prog="hcgas", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", help="tabulate log Z(n, beta) and cache it")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--n-max", type=int, default=DEFAULT_N_MAX)
    p.add_argument("--ceiling", type=int, default=DEFAULT_CEILING)
    _common(p, seed=False)

    p = sub.add_parser("sample", help="exact configurations")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--replicas", type=int, default=1)
    _common(p)

    p = sub.add_parser("variance-scan", help="Var mu_n(D) over a radius grid")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--z", type=_point, default=(0.5, 0.5))
    p.add_argument("--R-grid", type=_floats, default=[2.0, 4.0, 8.0, 16.0])
    p.add_argument("--replicas", type=int, default=10_000)
    _common(p)

    p = sub.add_parser("tail-scan", help="naive P[|Delta| >= R^alpha] over an alpha grid")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--z", type=_point, default=(0.5, 0.5))
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--alpha-grid", type=_floats, required=True)
    p.add_argument("--replicas", type=int, default=10_000)
    _common(p)

    p = sub.add_parser("jlm-fit", help="slope of log(-log P) against log R from tail files")
    p.add_argument("inputs", nargs="+", help="tail CSV files")
    p.add_argument("--alpha", type=float, default=None, help="keep rows with this alpha")
    p.add_argument("--level", type=float, default=0.95)
    _common(p, seed=False)

    p = sub.add_parser("overcrowd", help="P[mu_n(Q) = n] for a level-j square")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--j", type=int, required=True)
    p.add_argument("--mode", choices=["exact-path", "monte-carlo"], default="exact-path")
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--replicas", type=int, default=0)
    _common(p)

    p = sub.add_parser("validate", help="exact sampler against the Metropolis chain")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--beta", type=float, default=2.0)
    p.add_argument("--mcmc-samples", type=int, default=100_000)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--thinning", type=int, default=10)
    p.add_argument("--levels", type=_floats, default=[1, 2])
    p.add_argument("--corrupt", action="store_true",
                   help="run the exact sampler at 2 beta; the check should then fail")
    _common(p)

    p = sub.add_parser("tilt-estimate", help="tilted estimate of P[|Delta_n(D)| >= threshold]")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--z", type=_point, default=(0.5, 0.5))
    p.add_argument("--R", type=float, required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--alpha", type=float, help="threshold R^alpha")
    g.add_argument("--threshold", type=float)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--xi", type=_floats, default=None,
                   help="tilt strength, or upper,lower; default: mean matching")
    p.add_argument("--replicas", type=int, default=10_000)
    _common(p)
    return ap


def _expand_config(argv):
    """Insert options from ``--config FILE`` right after the subcommand."""
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return argv
    path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif a.startswith("--config="):
            path = a.split("=", 1)[1]
    if path is None:
        return argv
    extra = []
    for k, v in read_config_file(path).items():
        if k == "config":
            continue
        if v.lower() in ("true", "yes", "on"):
            extra.append(f"--{k}")
        elif v.lower() in ("false", "no", "off"):
            continue
        elif k == "inputs":
            extra.extend(v.split())
        else:
            extra.append(f"--{k}={v}")
    cmd = next((i for i, a in enumerate(argv) if not a.startswith("-")), None)
    if cmd is None:
        return argv
    return argv[:cmd + 1] + extra + argv[cmd + 1:]


def _table(args, beta, n):
    """Shared table for beta; read through the cache when one is configured."""
    n_max = max(int(n), DEFAULT_N_MAX)
    if args.cache:
        cache = Path(args.cache)
        if not cache.suffix:
            cache.mkdir(parents=True, exist_ok=True)
        table, _ = cached_partition_table(beta, n_max, cache, args.rebuild)
        install_table(table)
        return table
    return table_for(beta, n_max)


def _out(args, default):
    return Path(args.out or default)


def _finish(args, path, t0, checksums=(), results=None):
    write_sidecar(path, args.command, {k: v for k, v in vars(args).items() if k != "func"},
                  getattr(args, "seed", None), checksums, round(time.time() - t0, 6), results)
    print(path)


def cmd_partition(args):
    t0 = time.time()
    cache = Path(args.cache)
    if not cache.suffix:
        cache.mkdir(parents=True, exist_ok=True)
    table, loaded = cached_partition_table(args.beta, args.n_max, cache, args.rebuild,
                                           ceiling=args.ceiling)
    path = _out(args, f"logz_beta{args.beta!r}_n{args.n_max}.csv")
    table.to_csv(path)
    gap = jensen_gap(table)[2:]
    diag = {"loaded_from_cache": loaded, "jensen_min_gap": float(gap.min()) if len(gap) else None}
    if table.n_max >= 10:
        r = envelope_ratio(table, 10)
        n = np.arange(10, table.n_max + 1)
        diag["envelope_max_10_128"] = float(r[n <= 128].max())
        if table.n_max >= 128:
            diag["envelope_max_128_nmax"] = float(r[n >= 128].max())
    for k, v in diag.items():
        print(f"{k}: {v}", file=sys.stderr)
    _finish(args, path, t0, [table.checksum], diag)


def cmd_sample(args):
    from .sampler import sample_configurations
    t0 = time.time()
    if args.replicas < 1:
        raise ConfigError(f"replicas must be at least 1, got {args.replicas}")
    table = _table(args, args.beta, args.n)
    cs = sample_configurations(args.n, args.beta, args.seed, 0, args.replicas, table)
    path = _out(args, "configurations.csv")
    write_csv(path, ["replica", "index", "x", "y"],
              ((r, i, float(x), float(y)) for r, c in enumerate(cs)
               for i, (x, y) in enumerate(c.points)))
    _finish(args, path, t0, [table.checksum])


def cmd_variance_scan(args):
    from .stats import variance_scan
    t0 = time.time()
    table = _table(args, args.beta, args.n)
    rep = variance_scan(args.n, args.beta, args.z, args.R_grid, args.replicas, args.seed,
                        args.workers or default_workers())
    path = _out(args, "variance.csv")
    rep.to_csv(path)
    _finish(args, path, t0, [table.checksum])


def cmd_tail_scan(args):
    from .stats import tail_scan, write_tail_reports
    t0 = time.time()
    if args.replicas < 1:
        raise ConfigError(f"replicas must be at least 1, got {args.replicas}")
    table = _table(args, args.beta, args.n)
    reps = tail_scan(args.n, args.beta, args.z, args.R, args.alpha_grid, args.replicas,
                     args.seed, args.workers or default_workers())
    path = _out(args, "tails.csv")
    write_tail_reports(path, reps)
    _finish(args, path, t0, [table.checksum])


def cmd_jlm_fit(args):
    from .stats import jlm_fit, read_tail_reports
    t0 = time.time()
    reps = []
    for f in args.inputs:
        try:
            reps.extend(read_tail_reports(f))
        except (OSError, KeyError) as e:
            raise ConfigError(f"cannot read tail file {f}: {e}") from e
    if args.alpha is not None:
        reps = [r for r in reps if r.alpha is not None and math.isclose(r.alpha, args.alpha)]
    fit = jlm_fit(reps, level=args.level)
    path = _out(args, "jlm_fit.csv")
    write_csv(path, ["slope", "intercept", "stderr", "ci_low", "ci_high", "points"],
              [[fit.slope, fit.intercept, fit.stderr, fit.ci_low, fit.ci_high, len(fit.R)]])
    print(f"slope {fit.slope:.3f} [{fit.ci_low:.3f}, {fit.ci_high:.3f}]", file=sys.stderr)
    _finish(args, path, t0, results={"slope": fit.slope, "stderr": fit.stderr})


def cmd_overcrowd(args):
    from .stats import overcrowd_probability, overcrowd_tail
    t0 = time.time()
    table = _table(args, args.beta, args.n)
    if args.mode == "exact-path":
        lp = overcrowd_probability(args.n, args.beta, args.j).logmag
        se, reps = 0.0, 0
    else:
        rep = overcrowd_tail(args.n, args.beta, args.j, args.delta, args.replicas, args.seed)
        lp, se, reps = rep.estimate.logmag, rep.stderr, rep.replicas
    path = _out(args, "overcrowd.csv")
    write_csv(path, ["n", "beta", "j", "mode", "delta", "replicas", "log_p", "p", "stderr",
                     "scaled"],
              [[args.n, args.beta, args.j, args.mode, args.delta, reps, lp, math.exp(lp), se,
                -lp / (args.j * args.n ** 2)]])
    _finish(args, path, t0, [table.checksum])


def cmd_validate(args):
    from .mcmc import compare_samplers
    t0 = time.time()
    table = _table(args, args.beta, args.n)
    checks = [table.checksum]
    eb = 2.0 * args.beta if args.corrupt else None
    if eb is not None:
        checks.append(_table(args, eb, args.n).checksum)
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        rep = compare_samplers(args.n, args.beta, seeds=(args.seed, args.seed + 1),
                               levels=tuple(int(v) for v in args.levels),
                               mcmc_samples=args.mcmc_samples, burn_in=args.burn_in,
                               thinning=args.thinning, exact_beta=eb)
    path = _out(args, "validate.csv")
    write_csv(path, ["level", "chi2", "p_value", "tv", "tv_exact_vs_law", "tv_mcmc_vs_law"],
              [[c.level, c.chi2, c.p_value, c.tv, c.tv_exact_vs_law, c.tv_mcmc_vs_law]
               for c in rep.levels])
    agree = rep.min_p_value >= VALIDATE_ALPHA
    _finish(args, path, t0, checks, {"agree": agree, "min_p_value": rep.min_p_value,
                                     "tau": rep.tau, "mcmc_ess": rep.mcmc_ess})
    if not agree:
        raise ValidationFailure(f"samplers disagree: min p-value {rep.min_p_value:.3g} "
                                f"< {VALIDATE_ALPHA}")


def cmd_tilt_estimate(args):
    from .rare_events import tilted_tail_estimate
    from .stats import write_tail_reports
    t0 = time.time()
    table = _table(args, args.beta, args.n)
    D = DiskRegion.scaled(args.n, args.z, args.R)
    thr = args.threshold if args.threshold is not None else args.R ** args.alpha
    xi = None
    if args.xi is not None:
        xi = args.xi[0] if len(args.xi) == 1 else tuple(args.xi[:2])
    rep = tilted_tail_estimate(args.n, args.beta, D, thr, xi=xi, depth=args.depth,
                               replicas=args.replicas, seed=args.seed, R=args.R,
                               alpha=args.alpha)
    path = _out(args, "tilted.csv")
    write_tail_reports(path, [rep])
    _finish(args, path, t0, [table.checksum])


COMMANDS = {
    "partition": cmd_partition, "sample": cmd_sample, "variance-scan": cmd_variance_scan,
    "tail-scan": cmd_tail_scan, "jlm-fit": cmd_jlm_fit, "overcrowd": cmd_overcrowd,
    "validate": cmd_validate, "tilt-estimate": cmd_tilt_estimate,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _expand_config(argv)
        args = build_parser().parse_args(argv)
    except HCGError as e:
        print(f"hcgas: error: {e}", file=sys.stderr)
        return e.exit_code
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except HCGError as e:
        print(f"hcgas: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"hcgas: i/o error: {e}", file=sys.stderr)
        return ResourceError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
