"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 resource guard tripped.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import emit_csv, file_sha256, fmt, ingest_csv, manifest, parse_columns, text_sha256
from .errors import DataError, GridTooLargeError
from .experiments import (
    KSSS_ALGORITHMS,
    HarnessConfig,
    bandwidth_sensitivity,
    plant_anomaly,
    power_experiment,
    standard_plant,
    synth_baseline,
)
from .geometry import Domain, LabeledDataset
from .likelihood import SolverConfig
from .scanner import ALGORITHMS, ScanConfig, sample_coreset, scan

EXIT_USAGE, EXIT_DATA, EXIT_RESOURCE = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _range(text):
    v = _floats(text)
    if len(v) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    return v[0], v[1]


def _common(p, scan_flags=True):
    p.add_argument("--input", type=Path, help="CSV with header x,y,m")
    p.add_argument("--columns", help="column names X,Y,M (default x,y,m)")
    p.add_argument("--model", choices=("bernoulli", "gaussian", "poisson"))
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--output", type=Path, help="output path (default stdout)")
    p.add_argument("--grid-scale", type=float, default=1.0)
    p.add_argument("--adaptive-floor", action="store_true",
                   help="never refine adaptive cells below the fixed-grid spacing")
    p.add_argument("--strict", action="store_true", help="solve rates to tolerance")
    p.add_argument("--max-centers", type=int, default=10**7)
    if scan_flags:
        p.add_argument("--algorithm", choices=ALGORITHMS, default="fast")
        g = p.add_mutually_exclusive_group()
        g.add_argument("--bandwidth", type=float)
        g.add_argument("--bandwidth-range", type=_range, metavar="LO,HI")
        p.add_argument("--coreset-size", type=int)
        p.add_argument("--sigma", type=float, default=1.0, help="known std dev (gaussian)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kscan", description="Kernel spatial scan statistics.")
    parser.add_argument("--version", action="version", version=f"kscan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("scan", help="scan one dataset, print a JSON result")
    _common(p)

    for name, helptext in (("power", "recovery vs coreset size"),
                           ("bench", "runtime of the four kernel scans"),
                           ("bandwidth", "recovery vs assumed bandwidth scale")):
        p = sub.add_parser(name, help=helptext)
        _common(p, scan_flags=False)
        p.add_argument("--n", type=int, default=10000, help="synthetic baseline size")
        p.add_argument("--kind", choices=("clustered", "uniform"), default="clustered")
        p.add_argument("--trials", type=int, default=20)
        p.add_argument("--fraction", type=float, default=0.03)
        p.add_argument("--summary", type=Path, help="summary CSV path")
        if name == "power":
            p.add_argument("--algorithms", default="grid,prune,adaptive,fast,disk")
            p.add_argument("--sample-sizes", type=_ints, default=[100, 250, 500, 1000, 2000, 4000])
        elif name == "bench":
            p.add_argument("--algorithms", default="grid,prune,adaptive,fast")
            p.add_argument("--sample-sizes", type=_ints, default=[1000])
        else:
            p.add_argument("--algorithm", choices=ALGORITHMS, default="fast")
            p.add_argument("--scales", type=_floats)
            p.add_argument("--coreset-size", type=int, default=1000)

    p = sub.add_parser("synth", help="write a synthetic dataset with a planted anomaly")
    p.add_argument("--kind", choices=("clustered", "uniform"), default="clustered")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fraction", type=float, default=0.03)
    p.add_argument("--p", type=float, default=0.8)
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--no-plant", action="store_true", help="m iid Bernoulli(q), no anomaly")
    p.add_argument("--output", type=Path)
    return parser


def _solver(args):
    return SolverConfig.strict() if args.strict else SolverConfig()


def _check_ranges(args):
    if not (0 < args.epsilon < 1):
        raise UsageError(f"--epsilon must lie in (0, 1), got {args.epsilon}")
    if args.threads < 1:
        raise UsageError(f"--threads must be >= 1, got {args.threads}")
    if not args.grid_scale > 0:
        raise UsageError(f"--grid-scale must be positive, got {args.grid_scale}")
    bw = getattr(args, "bandwidth", None)
    if bw is not None and not bw > 0:
        raise UsageError(f"--bandwidth must be positive, got {bw}")
    br = getattr(args, "bandwidth_range", None)
    if br is not None and not (0 < br[0] <= br[1]):
        raise UsageError(f"--bandwidth-range needs 0 < LO <= HI, got {br}")
    cs = getattr(args, "coreset_size", None)
    if cs is not None and cs < 1:
        raise UsageError(f"--coreset-size must be >= 1, got {cs}")


def _load(args):
    try:
        cols = parse_columns(args.columns)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = ingest_csv(args.input, cols, args.model)
    return data, file_sha256(args.input)


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _config_dict(args):
    out = {}
    for k, v in sorted(vars(args).items()):
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def cmd_scan(args) -> int:
    started = time.time()
    _check_ranges(args)
    if args.input is None:
        raise UsageError("scan needs --input")
    if args.bandwidth is None and args.bandwidth_range is None:
        raise UsageError("scan needs --bandwidth or --bandwidth-range")
    data, digest = _load(args)
    if args.algorithm == "disk" and data.model != "bernoulli":
        raise DataError("--algorithm disk needs bernoulli data")
    cfg = ScanConfig(
        epsilon=args.epsilon, bandwidth=args.bandwidth, algorithm=args.algorithm,
        solver=_solver(args), seed=args.seed, coreset_size=args.coreset_size,
        bandwidth_range=args.bandwidth_range, grid_scale=args.grid_scale, threads=args.threads,
        max_centers=args.max_centers, sigma=args.sigma, adaptive_floor=args.adaptive_floor)
    domain = Domain.from_points(data.xy)
    res = scan(data, domain, cfg)
    out = {
        "schema": 1,
        "algorithm": args.algorithm,
        "epsilon": args.epsilon,
        "center": [res.best_center.x, res.best_center.y],
        "p_hat": res.rates.p,
        "q_hat": res.rates.q,
        "phi": res.phi,
        "centers_evaluated": res.centers_evaluated,
        "points_scanned": res.points_scanned,
        "runtime_seconds": res.elapsed,
        "n_points": data.n,
        "model": data.model,
        "seed": args.seed,
    }
    if args.bandwidth_range is not None:
        out["bandwidth_range"] = list(args.bandwidth_range)
        out["bandwidth"] = res.best_bandwidth
    else:
        out["bandwidth"] = args.bandwidth
    if args.algorithm == "disk":
        out["radius"] = res.best_bandwidth
    out["manifest"] = manifest("scan", _config_dict(args), digest, started)
    _write(args.output, json.dumps(out, indent=2, allow_nan=True) + "\n")
    return 0


def _baseline(args):
    if args.input is not None:
        data, digest = _load(args)
        return np.array(data.xy), digest
    pts = synth_baseline(args.kind, args.n, args.seed)
    return pts, None


def _harness(args):
    return HarnessConfig(epsilon=args.epsilon, grid_scale=args.grid_scale, solver=_solver(args),
                         threads=args.threads, max_centers=args.max_centers,
                         adaptive_floor=args.adaptive_floor)


def _csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _algorithms(text, allowed):
    algs = [a.strip() for a in text.split(",") if a.strip()]
    bad = [a for a in algs if a not in allowed]
    if bad or not algs:
        raise UsageError(f"--algorithms: unknown algorithm(s) {','.join(bad) or '(none)'}")
    return algs


def _emit_series(args, command, long_rows, long_header, summary_rows, summary_header,
                 digest, started):
    long_text = _csv(long_rows, long_header)
    summary_text = _csv(summary_rows, summary_header)
    _write(args.output, long_text)
    summary_path = args.summary
    if summary_path is None and args.output is not None:
        summary_path = args.output.with_name(args.output.stem + ".summary.csv")
    if summary_path is not None:
        Path(summary_path).write_text(summary_text, encoding="utf-8")
    else:
        sys.stdout.write(summary_text)
    if args.output is not None:
        man = manifest(command, _config_dict(args), digest, started)
        man["outputs"] = {str(args.output): text_sha256(long_text),
                          str(summary_path): text_sha256(summary_text)}
        args.output.with_name(args.output.name + ".manifest.json").write_text(
            json.dumps(man, indent=2) + "\n", encoding="utf-8")


POWER_METRICS = ("distance", "jaccard", "phi")


def _sweep_rows(records, axis, xkey, metrics):
    rows = []
    for rec in records:
        x = getattr(rec, xkey)
        if rec.error is not None:
            rows.append((rec.algorithm, axis, x, rec.trial, "error", rec.error))
            continue
        vals = rec.metrics()
        for name in metrics:
            rows.append((rec.algorithm, axis, x, rec.trial, name, float(vals[name])))
    return rows


def _summary_rows(records, axis, xkey, metrics):
    groups = {}
    for rec in records:
        groups.setdefault((rec.algorithm, getattr(rec, xkey)), []).append(rec)
    rows = []
    for (alg, x), recs in groups.items():
        ok = [r for r in recs if r.error is None]
        meds = [float(np.median([r.metrics()[m] for r in ok])) if ok else math.nan
                for m in metrics]
        rows.append((alg, axis, x, *meds, len(ok), len(recs) - len(ok)))
    return rows


def cmd_power(args) -> int:
    started = time.time()
    _check_ranges(args)
    algs = _algorithms(args.algorithms, ALGORITHMS)
    pts, digest = _baseline(args)
    records = power_experiment(pts, None, algs, args.sample_sizes, args.trials, _harness(args),
                               master_seed=args.seed, f=args.fraction)
    _emit_series(args, "power", _sweep_rows(records, "sample_size", "sample_size", POWER_METRICS),
                 ("algorithm", "axis", "x", "trial", "metric", "value"),
                 _summary_rows(records, "sample_size", "sample_size", POWER_METRICS),
                 ("algorithm", "axis", "x", *(f"median_{m}" for m in POWER_METRICS),
                  "trials", "errors"), digest, started)
    return 0


def cmd_bench(args) -> int:
    started = time.time()
    _check_ranges(args)
    algs = _algorithms(args.algorithms, ALGORITHMS)
    pts, digest = _baseline(args)
    records = power_experiment(pts, None, algs, args.sample_sizes, args.trials, _harness(args),
                               master_seed=args.seed, f=args.fraction)
    metrics = ("runtime",) + POWER_METRICS
    summary = _summary_rows(records, "sample_size", "sample_size", metrics)
    grid_rt = {row[2]: row[3] for row in summary if row[0] == "grid"}
    summary = [(*row[:4], grid_rt.get(row[2], math.nan) / row[3] if row[3] > 0 else math.nan,
                *row[4:]) for row in summary]
    _emit_series(args, "bench", _sweep_rows(records, "sample_size", "sample_size", metrics),
                 ("algorithm", "axis", "x", "trial", "metric", "value"), summary,
                 ("algorithm", "axis", "x", "median_runtime", "speedup_vs_grid",
                  *(f"median_{m}" for m in POWER_METRICS), "trials", "errors"), digest, started)
    return 0


def default_scales(k: int = 30) -> list[float]:
    return [float(s) for s in np.geomspace(1e-2, 10.0, k)]


def cmd_bandwidth(args) -> int:
    started = time.time()
    _check_ranges(args)
    scales = args.scales or default_scales()
    if any(not s > 0 for s in scales):
        raise UsageError("--scales must be positive")
    pts, digest = _baseline(args)
    records = bandwidth_sensitivity(pts, None, scales, args.trials, args.algorithm,
                                    args.coreset_size, _harness(args), master_seed=args.seed,
                                    f=args.fraction)
    _emit_series(args, "bandwidth", _sweep_rows(records, "scale", "scale", POWER_METRICS),
                 ("algorithm", "axis", "x", "trial", "metric", "value"),
                 _summary_rows(records, "scale", "scale", POWER_METRICS),
                 ("algorithm", "axis", "x", *(f"median_{m}" for m in POWER_METRICS),
                  "trials", "errors"), digest, started)
    return 0


def cmd_synth(args) -> int:
    started = time.time()
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    if not (0 < args.q <= args.p < 1):
        raise UsageError("need 0 < q <= p < 1")
    pts = synth_baseline(args.kind, args.n, args.seed)
    truth = None
    if args.no_plant:
        rng = np.random.default_rng(args.seed)
        data = LabeledDataset(pts, (rng.random(args.n) < args.q).astype(float))
    else:
        spec, fit = standard_plant(pts, 0, args.seed, args.fraction, args.p, args.q)
        data = plant_anomaly(pts, spec)
        truth = {"center": list(spec.kernel.center), "bandwidth": spec.kernel.bandwidth,
                 "p": args.p, "q": args.q, "fraction": fit.fraction}
    text = emit_csv(data)
    _write(args.output, text)
    if args.output is not None:
        man = manifest("synth", _config_dict(args), text_sha256(text), started)
        man["truth"] = truth
        args.output.with_name(args.output.name + ".manifest.json").write_text(
            json.dumps(man, indent=2) + "\n", encoding="utf-8")
    return 0


COMMANDS = {"scan": cmd_scan, "power": cmd_power, "bench": cmd_bench,
            "bandwidth": cmd_bandwidth, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"kscan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GridTooLargeError as exc:
        print(f"kscan: resource guard: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except MemoryError:
        print("kscan: resource guard: out of memory", file=sys.stderr)
        return EXIT_RESOURCE
    except DataError as exc:
        print(f"kscan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"kscan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
