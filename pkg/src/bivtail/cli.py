"""Command-line front end.

    python -m bivtail simulate --r 0.4 --n 1000 --seed 7 --output-dir out
    python -m bivtail fit --input out/sample.csv --output-dir out
    python -m bivtail predict --trace out/trace.ndjson --x1 20 --p 0.05 --output-dir out
    python -m bivtail prior-viz --lambda 2 --output-dir out
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import multiprocessing as mp
import platform
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .mcmc import ChainConfig, Trace, bayes_estimate, run_chain, split_rhat
from .predictive import (
    PosteriorDraws,
    conditional_predictive,
    conditional_quantile,
    joint_predictive,
    rare_event_probability,
    write_json,
)
from .prior import NormalizerCache
from .synthetic import FrConfig, sample_fr, write_pairs
from .tail import CensoredSample, censor

log = logging.getLogger("bivtail")

MIN_ROWS = 20


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# data handling
# ---------------------------------------------------------------------------


@dataclass
class IngestResult:
    x1: np.ndarray
    x2: np.ndarray
    names: tuple[str, str]
    dropped: int


def _to_float(s: str):
    try:
        v = float(s)
    except (TypeError, ValueError):
        return None
    return v if math.isfinite(v) else None


def ingest(path, columns=(0, 1)) -> IngestResult:
    """Read two numeric columns from a delimited file.

    ``columns`` holds two header names or 0-based indices. Rows with a
    missing or non-numeric entry in either column are dropped and counted.
    """
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise UsageError(f"{path} is empty")
    try:
        dialect = csv.Sniffer().sniff(lines[0], delimiters=",;\t ")
    except csv.Error:
        dialect = csv.excel
    rows = list(csv.reader(lines, dialect))
    first = [c.strip() for c in rows[0]]
    has_header = all(_to_float(c) is None for c in first if c)
    header = first if has_header else [str(i) for i in range(len(first))]
    idx = []
    for c in columns:
        c = str(c).strip()
        if c in header:
            idx.append(header.index(c))
        elif c.lstrip("-").isdigit() and 0 <= int(c) < len(header):
            idx.append(int(c))
        else:
            raise UsageError(f"cannot resolve column {c!r}; available: {header}")
    if len(idx) != 2 or idx[0] == idx[1]:
        raise UsageError("exactly two distinct columns are required")
    body = rows[1:] if has_header else rows
    x1, x2, dropped = [], [], 0
    for row in body:
        vals = [_to_float(row[i]) if i < len(row) else None for i in idx]
        if None in vals:
            dropped += 1
            continue
        x1.append(vals[0])
        x2.append(vals[1])
    if dropped:
        log.warning("dropped %d rows with missing or non-numeric entries", dropped)
    if len(x1) < MIN_ROWS:
        raise UsageError(f"only {len(x1)} usable rows; at least {MIN_ROWS} required")
    return IngestResult(np.array(x1), np.array(x2), (header[idx[0]], header[idx[1]]), dropped)


def censor_sample(x1, x2, thresholds) -> CensoredSample:
    u1, u2 = thresholds
    if not (math.isfinite(u1) and math.isfinite(u2)):
        raise UsageError("thresholds must be finite")
    above1, above2 = u1 > np.max(x1), u2 > np.max(x2)
    if above1 and above2:
        raise UsageError("both thresholds exceed the sample maxima; nothing to fit")
    if above1 or above2:
        log.warning("one threshold exceeds its sample maximum")
    sample = censor(x1, x2, u1, u2)
    log.info("quadrant counts %s", sample.counts)
    return sample


def quantile_thresholds(x1, x2, level: float) -> tuple[float, float]:
    if not 0.0 < level < 1.0:
        raise UsageError("threshold quantile must lie in (0, 1)")
    return float(np.quantile(x1, level)), float(np.quantile(x2, level))


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


def _versions() -> dict:
    return {"bivtail": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def write_manifest(out_dir: Path, command: str, config: dict, timings: dict,
                   outputs: list, extra: dict | None = None) -> Path:
    payload = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "versions": _versions(),
        "timings": timings,
        "outputs": [str(p) for p in outputs],
    }
    payload.update(extra or {})
    path = out_dir / f"manifest_{command}.json"
    path.write_text(json.dumps(payload, indent=1, default=str))
    return path


def load_config_file(path) -> dict:
    path = Path(path)
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        data = tomllib.loads(path.read_text())
    else:
        data = json.loads(path.read_text())
    # a run manifest nests the options under "config"
    if "command" in data and isinstance(data.get("config"), dict):
        data = data["config"]
    return {k.replace("-", "_"): v for k, v in data.items()}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _chain_config(args, prior_only: bool) -> ChainConfig:
    return ChainConfig(
        iterations=args.iterations,
        burn_in=args.burn_in,
        thin=args.thin,
        seed=args.seed,
        lam=args.lam,
        quadrature_nodes=args.quadrature_nodes,
        prior_only=prior_only,
    )


def _run_one(payload):
    sample, cfg = payload
    return run_chain(sample, cfg)


def run_chains(sample, cfg: ChainConfig, chains: int) -> list[Trace]:
    cfgs = [ChainConfig(**{**asdict(cfg), "seed": cfg.seed + k}) for k in range(chains)]
    if chains == 1:
        return [run_chain(sample, cfgs[0])]
    with mp.get_context("spawn").Pool(min(chains, mp.cpu_count())) as pool:
        return pool.map(_run_one, [(sample, c) for c in cfgs])


def merge_traces(traces: list[Trace]) -> Trace:
    if len(traces) == 1:
        return traces[0]
    merged = Trace(thresholds=traces[0].thresholds, seed=traces[0].seed,
                   config=traces[0].config, fingerprint=traces[0].fingerprint)
    for t in traces:
        merged.records.extend(t.records)
        for k, (p, a) in t.acceptance.items():
            merged.acceptance[k][0] += p
            merged.acceptance[k][1] += a
        for m, c in t.occupancy.items():
            merged.occupancy[m] = merged.occupancy.get(m, 0) + c
    return merged


def _diagnostics(traces: list[Trace]) -> dict:
    if len(traces) < 2:
        return {}
    keys = ["m", "h0", "h1", "loglik"] + ([] if traces[0].thresholds is None else ["xi1", "xi2"])
    return {f"split_rhat_{k}": split_rhat([t.column(k) for t in traces]) for k in keys}


def _write_estimate(out_dir: Path, est, name="estimate") -> list[Path]:
    js = out_dir / f"{name}.json"
    write_json(js, est.to_record())
    cs = out_dir / f"{name}.csv"
    with cs.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("w", "mean", "lower", "upper"))
        w.writerows(zip(est.grid, est.mean, est.lower, est.upper))
    return [js, cs]


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = FrConfig(args.r, args.n, args.seed)
    pairs = sample_fr(cfg)
    path = out_dir / args.output
    write_pairs(path, pairs)
    write_manifest(out_dir, "simulate", {**asdict(cfg), "output": args.output},
                   {"total_s": time.perf_counter() - t0}, [path])
    print(path)
    return 0


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = ingest(args.input, args.columns)
    if args.thresholds:
        thresholds = tuple(args.thresholds)
    else:
        thresholds = quantile_thresholds(data.x1, data.x2, args.threshold_quantile)
    sample = censor_sample(data.x1, data.x2, thresholds)
    cfg = _chain_config(args, args.prior_only)
    cache = NormalizerCache(cfg.quadrature_nodes)
    for m in range(2, 7):
        log.info("normalizer m=%d relative change at %d nodes: %.2e", m,
                 2 * cfg.quadrature_nodes, cache.refinement_gap(m))
    t1 = time.perf_counter()
    traces = run_chains(sample, cfg, args.chains)
    t2 = time.perf_counter()
    outputs = []
    for k, tr in enumerate(traces):
        p = out_dir / ("trace.ndjson" if k == 0 else f"trace_chain{k}.ndjson")
        tr.save(p)
        outputs.append(p)
    merged = merge_traces(traces)
    est = bayes_estimate(merged, np.linspace(0.0, 1.0, args.grid_size))
    outputs += _write_estimate(out_dir, est)
    diag = _diagnostics(traces)
    summary = {
        "n_rows": len(data.x1),
        "dropped_rows": data.dropped,
        "columns": list(data.names),
        "thresholds": list(thresholds),
        "quadrant_counts": sample.counts,
        "acceptance_rates": merged.acceptance_rates,
        "model_probs": {str(k): v for k, v in est.model_probs.items()},
        "diagnostics": diag,
    }
    config = {**vars_config(args), "thresholds": list(thresholds)}
    write_manifest(out_dir, "fit", config,
                   {"setup_s": t1 - t0, "sampling_s": t2 - t1, "total_s": time.perf_counter() - t0},
                   outputs, {"summary": summary})
    print(json.dumps(summary, indent=1, default=float))
    return 0


def cmd_predict(args) -> int:
    t0 = time.perf_counter()
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace = Trace.load(args.trace)
    draws = PosteriorDraws.from_trace(trace, args.max_draws)
    u1, u2 = draws.thresholds
    outputs, result = [], {"thresholds": [u1, u2], "n_draws": len(draws)}

    x1_hi = args.x1_max or (10.0 * u1 if u1 > 0 else u1 + 10.0)
    x2_hi = args.x2_max or (10.0 * u2 if u2 > 0 else u2 + 10.0)
    g1 = np.linspace(u1, x1_hi, args.grid_size)
    g2 = np.linspace(u2, x2_hi, args.grid_size)
    grid = joint_predictive(draws, g1, g2)
    p = out_dir / "joint_predictive.csv"
    grid.write_csv(p)
    outputs.append(p)
    result["corner_mass"] = grid.corner_mass

    if args.x1:
        xs = np.array(sorted(args.x1), dtype=float)
        for exceed, name in ((False, "conditional_quantile.csv"),
                             (True, "conditional_quantile_exceedance.csv")):
            curve = conditional_quantile(draws, xs, args.p, exceedance=exceed)
            p = out_dir / name
            curve.write_csv(p)
            outputs.append(p)
            result[name.removesuffix(".csv")] = [
                {"x1": a, "quantile": q, "lower_band": lo, "upper_band": hi}
                for a, q, lo, hi in curve.rows()
            ]
        cond = [conditional_predictive(draws, float(a), g2).to_record() for a in xs]
        p = out_dir / "conditional_predictive.json"
        write_json(p, {"conditionals": cond})
        outputs.append(p)

    if args.v1 is not None and args.v2 is not None:
        result["rare_event_probability"] = rare_event_probability(draws, args.v1, args.v2)

    p = out_dir / "predict.json"
    write_json(p, result)
    outputs.append(p)
    write_manifest(out_dir, "predict", vars_config(args),
                   {"total_s": time.perf_counter() - t0}, outputs)
    print(json.dumps({k: v for k, v in result.items() if not k.startswith("conditional")},
                     indent=1, default=float))
    return 0


def cmd_prior_viz(args) -> int:
    t0 = time.perf_counter()
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = _chain_config(args, True)
    traces = run_chains(None, cfg, args.chains)
    merged = merge_traces(traces)
    grid = np.linspace(0.0, 1.0, args.grid_size)
    est = bayes_estimate(merged, grid)
    outputs = _write_estimate(out_dir, est, "prior_band")
    p = out_dir / "prior_trace.ndjson"
    merged.save(p)
    outputs.append(p)
    write_manifest(out_dir, "prior-viz", vars_config(args),
                   {"total_s": time.perf_counter() - t0}, outputs,
                   {"model_probs": {str(k): v for k, v in est.model_probs.items()}})
    print(outputs[1])
    return 0


def vars_config(args) -> dict:
    skip = {"func", "config", "verbose"}
    return {k: v for k, v in vars(args).items() if k not in skip}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_chain_args(p, iterations=200_000, burn_in=50_000, thin=10):
    p.add_argument("--iterations", type=int, default=iterations)
    p.add_argument("--burn-in", type=int, default=burn_in)
    p.add_argument("--thin", type=int, default=thin)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", dest="lam", type=float, default=5.0,
                   help="mean of the zero-truncated Poisson prior on m")
    p.add_argument("--quadrature-nodes", type=int, default=64)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--grid-size", type=int, default=101)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bivtail", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic sample")
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default=".")
    p.add_argument("--output", default="sample.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the sampler on a data file")
    p.add_argument("--config", help="JSON/TOML options or a previous run manifest")
    p.add_argument("--input", required=False)
    p.add_argument("--columns", nargs=2, default=["0", "1"],
                   help="two header names or 0-based indices")
    p.add_argument("--threshold-quantile", type=float, default=0.9)
    p.add_argument("--thresholds", type=float, nargs=2, help="absolute thresholds")
    p.add_argument("--output-dir", default=".")
    p.add_argument("--prior-only", action="store_true")
    _add_chain_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predictive summaries from a saved trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--x1", type=float, nargs="+", help="conditioning values")
    p.add_argument("--p", type=float, default=0.05, help="exceedance probability")
    p.add_argument("--v1", type=float)
    p.add_argument("--v2", type=float)
    p.add_argument("--x1-max", type=float)
    p.add_argument("--x2-max", type=float)
    p.add_argument("--grid-size", type=int, default=50)
    p.add_argument("--max-draws", type=int, default=2000)
    p.add_argument("--output-dir", default=".")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("prior-viz", help="prior-only chain and band of H(w)")
    p.add_argument("--config")
    p.add_argument("--output-dir", default=".")
    _add_chain_args(p)
    p.set_defaults(func=cmd_prior_viz)
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        # file values become defaults so explicit flags still win
        sub = parser._subparsers._group_actions[0].choices[args.command]
        values = load_config_file(args.config)
        known = {a.dest for a in sub._actions}
        unknown = set(values) - known
        if unknown:
            log.warning("ignoring unknown config keys: %s", sorted(unknown))
        sub.set_defaults(**{k: v for k, v in values.items() if k in known and k != "config"})
        args = parser.parse_args(argv)
    if args.command == "fit" and not args.input:
        parser.error("fit requires --input (or a config providing it)")
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
