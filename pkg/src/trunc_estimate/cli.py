"""Reproducible experiment driver.

Every subcommand reads a TOML (or JSON) configuration, validates it strictly
(unknown keys are rejected), runs the named pipeline with a fixed seed, and
writes a deterministic ``report.json`` plus, where applicable, a ``trace.csv``
with a ``# schema=1`` header.  Wall-clock time is written to a separate
``run_meta.json`` so that identical (config, seed) pairs produce
byte-identical reports.

Exit codes: 0 success, 2 configuration error, 3 fatness deficit,
4 rejection budget exhausted, 5 identifiability failure, 6 ill-conditioned
system, 1 any other estimation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import fat_sampler, identify, mallows, sgd, testers
from .errors import (
    ConfigError,
    FatnessDeficitError,
    IdentifiabilityError,
    IllConditionedError,
    RejectionBudgetError,
    TruncEstimateError,
)
from .hypercube import ENUM_LIMIT, format_bitstring, parse_bitstring
from .product import ProductDistribution, exact_tv
from .truncation import (
    TruncatedDistribution,
    estimate_fatness,
    parse_descriptor,
)

CSV_SCHEMA = "# schema=1"

COMMANDS = ("fat-sample", "sgd", "identify", "mallows", "test",
            "oracle-dump", "bench")

_EXIT_CODES = (
    (ConfigError, 2),
    (FatnessDeficitError, 3),
    (RejectionBudgetError, 4),
    (IdentifiabilityError, 5),
    (IllConditionedError, 6),
)


# ---------------------------------------------------------------------------
# Configuration loading and validation
# ---------------------------------------------------------------------------

def _load_config(path):
    try:
        if path.endswith(".json"):
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path!r}: {exc}") from exc


def _require(cfg, field, types, where="config"):
    if field not in cfg:
        raise ConfigError(f"{where}: missing required field {field!r}")
    value = cfg[field]
    if not isinstance(value, types) or isinstance(value, bool):
        raise ConfigError(f"{where}.{field}: unexpected type {type(value).__name__}")
    return value


def _check_keys(cfg, allowed, where="config"):
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


_TRUTH_KEYS = {
    "explicit": {"kind", "p"},
    "random": {"kind", "low", "high", "seed"},
    "mallows": {"kind", "center", "phi"},
}


def _validate_truth(truth, d, command):
    if not isinstance(truth, dict):
        raise ConfigError("truth: expected a table")
    kind = _require(truth, "kind", str, "truth")
    if kind not in _TRUTH_KEYS:
        raise ConfigError(f"truth.kind: unknown kind {kind!r}")
    _check_keys(truth, _TRUTH_KEYS[kind], "truth")
    if command == "mallows" and kind != "mallows":
        raise ConfigError("the mallows command needs truth.kind = 'mallows'")
    if command != "mallows" and kind == "mallows":
        raise ConfigError(f"the {command} command cannot use a mallows truth")
    return truth


def _build_truth(truth, d):
    kind = truth["kind"]
    if kind == "explicit":
        p = np.asarray(truth["p"], dtype=float)
        if p.shape != (d,):
            raise ConfigError(f"truth.p must list {d} probabilities")
        return ProductDistribution(p)
    if kind == "random":
        low = float(truth.get("low", 0.2))
        high = float(truth.get("high", 0.8))
        if not 0.0 < low < high < 1.0:
            raise ConfigError("truth.random needs 0 < low < high < 1")
        rng = np.random.default_rng(int(_require(truth, "seed", int, "truth")))
        return ProductDistribution(low + (high - low) * rng.random(d))
    raise ConfigError(f"cannot build a product truth from kind {truth['kind']!r}")


def _build_mallows_truth(truth, d):
    center = truth["center"]
    if (not isinstance(center, list) or len(center) != d
            or sorted(center) != list(range(1, d + 1))):
        raise ConfigError(
            "truth.center must order the items 1..d (item listed first is ranked top)")
    order = np.asarray(center, dtype=np.int64) - 1
    phi = float(_require(truth, "phi", (int, float), "truth"))
    return mallows.MallowsModel(central=mallows.ranking_from_order(order), phi=phi)


def _build_set(cfg, d, key="set"):
    table = _require(cfg, key, dict)
    _check_keys(table, {"descriptor"}, key)
    return parse_descriptor(_require(table, "descriptor", str, key), d)


def _build_ranking_set(cfg, model, key="set"):
    table = _require(cfg, key, dict)
    kind = _require(table, "kind", str, key)
    if kind == "all":
        _check_keys(table, {"kind"}, key)
        return mallows.all_rankings(model.d)
    if kind == "kendall_ball":
        _check_keys(table, {"kind", "radius"}, key)
        return mallows.kendall_ball(model.central,
                                    _require(table, "radius", int, key))
    if kind == "fixed_position":
        _check_keys(table, {"kind", "item", "position"}, key)
        return mallows.fixed_position(model.d,
                                      _require(table, "item", int, key) - 1,
                                      _require(table, "position", int, key) - 1)
    raise ConfigError(f"{key}.kind: unknown ranking set kind {kind!r}")


_BASE_KEYS = {"command", "d", "seed", "truth", "set", "params", "repetitions"}

_PARAM_KEYS = {
    "fat-sample": {"n", "budget"},
    "sgd": {"steps", "eta", "ball_scale", "ball_min_radius", "init_samples",
            "alpha_hat", "rejection_budget", "repetitions", "delta",
            "mass_probe_samples"},
    "identify": set(),
    "mallows": {"eps", "delta", "gamma", "max_samples"},
    "test": {"mode", "eps", "set2", "n_fatness"},
    "oracle-dump": set(),
    "bench": {"n", "fatness_samples"},
}


def _validate(cfg, command):
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a table")
    _check_keys(cfg, _BASE_KEYS)
    declared = cfg.get("command", command)
    if declared != command:
        raise ConfigError(
            f"config declares command {declared!r} but {command!r} was invoked")
    d = _require(cfg, "d", int)
    if d < 1:
        raise ConfigError("d must be a positive integer")
    seed = _require(cfg, "seed", int)
    reps = cfg.get("repetitions", 1)
    if not isinstance(reps, int) or isinstance(reps, bool) or reps < 1:
        raise ConfigError("repetitions must be a positive integer")
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params: expected a table")
    _check_keys(params, _PARAM_KEYS[command], "params")
    if command != "identify":
        _validate_truth(_require(cfg, "truth", dict), d, command)
    return d, seed, params, reps


# ---------------------------------------------------------------------------
# Report plumbing
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _write_report(out_dir, payload):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "report.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _write_meta(out_dir, wall_time, command):
    path = os.path.join(out_dir, "run_meta.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"command": command, "wall_time_s": wall_time}, fh, indent=2)
        fh.write("\n")


def _write_csv(out_dir, name, header, rows):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(CSV_SCHEMA + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _error_metrics(truth: ProductDistribution, p_hat, z_hat):
    metrics = {
        "l2_z": float(np.linalg.norm(z_hat - truth.z)),
        "l2_p": float(np.linalg.norm(p_hat - truth.p)),
        "linf_p": float(np.abs(p_hat - truth.p).max()),
    }
    if truth.d <= 12:
        metrics["exact_tv"] = exact_tv(truth, ProductDistribution(p_hat))
    return metrics


def _map_reps(fn, n):
    threads = int(os.environ.get("TRUNC_ESTIMATE_THREADS", "1"))
    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(n)))
    return [fn(i) for i in range(n)]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _run_fat_sample(cfg, d, seed, params, out_dir):
    truth = _build_truth(cfg["truth"], d)
    ts = _build_set(cfg, d)
    td = TruncatedDistribution(truth, ts)
    n = _require(params, "n", int, "params")
    rng = np.random.default_rng(seed)
    samples, stats = fat_sampler.fat_sample_batch(
        td, n, rng, params.get("budget"))
    p_hat = fat_sampler.clamp_means(samples.mean(axis=0), n)
    z_hat = ProductDistribution(p_hat).z
    _write_csv(out_dir, "trace.csv", ["output", "truncated_samples"],
               list(enumerate(stats.per_output_consumed.tolist())))
    return {
        "command": "fat-sample",
        "config": cfg,
        "seed": seed,
        "estimate": {"p": p_hat, "z": z_hat},
        "metrics": _error_metrics(truth, p_hat, z_hat),
        "counters": {
            "outputs": n,
            "truncated_samples": int(stats.per_output_consumed.sum()),
            "mean_truncated_per_output": stats.mean_consumed,
            "oracle_queries": ts.query_counter,
        },
    }


def _run_sgd(cfg, d, seed, params, out_dir):
    truth = _build_truth(cfg["truth"], d)
    ts = _build_set(cfg, d)
    td = TruncatedDistribution(truth, ts)
    config = sgd.SgdConfig(
        steps=_require(params, "steps", int, "params"),
        eta=params.get("eta"),
        ball_scale=params.get("ball_scale", 3.0),
        ball_min_radius=params.get("ball_min_radius", 0.5),
        init_samples=params.get("init_samples", 10_000),
        alpha_hat=params.get("alpha_hat"),
        mass_probe_samples=params.get("mass_probe_samples", 10_000),
        rejection_budget=params.get("rejection_budget"),
        repetitions=params.get("repetitions", 1),
        seed=seed,
    )
    delta = params.get("delta", 0.1)
    if config.repetitions > 1:
        result = sgd.amplified_estimate(td, config, delta)
        z_bar = result.z
        trace = result.traces[result.selected_index]
        repetition_info = {
            "selected_index": result.selected_index,
            "median_distances": result.median_distances,
            "estimates_z": result.estimates,
        }
    else:
        z_bar, trace = sgd.run_sgd(td, config)
        repetition_info = None

    p_bar = ProductDistribution.from_natural(z_bar).p
    nll_at = {}
    if d <= ENUM_LIMIT:
        for step, avg in zip(trace.checkpoint_steps, trace.checkpoint_averages):
            nll_at[int(step)] = sgd.exact_population_nll(avg, td)
    rows = []
    for i in range(config.steps):
        step = i + 1
        rows.append([
            step,
            f"{nll_at[step]:.12g}" if step in nll_at else "",
            int(trace.grad_sq[i]),
            int(trace.projected[i]),
            int(trace.rejections[i]),
        ])
    _write_csv(out_dir, "trace.csv",
               ["step", "nll_exact_if_available", "grad_sq", "projected",
                "rejections"], rows)
    report = {
        "command": "sgd",
        "config": cfg,
        "seed": seed,
        "estimate": {"p": p_bar, "z": z_bar},
        "metrics": _error_metrics(truth, p_bar, z_bar),
        "diagnostics": {
            "alpha_hat": trace.alpha_hat,
            "eta": trace.eta,
            "ball_radius": trace.ball.radius,
            "projection_steps": int(trace.projected.sum()),
            "mean_grad_sq": float(trace.grad_sq.mean()),
        },
        "counters": {
            "truncated_samples": trace.truncated_samples,
            "oracle_queries": ts.query_counter,
        },
    }
    if repetition_info is not None:
        report["amplification"] = repetition_info
    return report


def _read_histogram(path, d=None):
    points = []
    probs = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#") or line.startswith("bitstring"):
                    continue
                bits_txt, _, prob_txt = line.partition(",")
                points.append(parse_bitstring(bits_txt, d))
                if d is None:
                    d = points[-1].shape[0]
                probs.append(float(prob_txt))
    except OSError as exc:
        raise ConfigError(f"cannot read histogram {path!r}: {exc}") from exc
    if not points:
        raise ConfigError(f"histogram {path!r} is empty")
    return np.array(points, dtype=np.uint8), np.array(probs, dtype=float)


def _run_identify(cfg, d, seed, params, out_dir, input_path=None):
    if input_path is not None:
        points, probs = _read_histogram(input_path, None)
        if points.shape[1] != d and "d" in cfg:
            raise ConfigError(
                f"histogram dimension {points.shape[1]} does not match d={d}")
        from .truncation import explicit_set
        ts = explicit_set(points)
        truth = None
    else:
        truth = _build_truth(cfg["truth"], d)
        ts = _build_set(cfg, d)
        td = TruncatedDistribution(truth, ts)
        pmf = td.exact_pmf()
        points, probs = pmf.points, pmf.probs
    system = identify.build_system(ts, (points, probs))
    z_hat = identify.solve_system(system)
    p_hat = ProductDistribution.from_natural(z_hat).p
    report = {
        "command": "identify",
        "config": cfg,
        "seed": seed,
        "estimate": {"p": p_hat, "z": z_hat},
        "diagnostics": {
            "condition_number": system.condition_number,
            "anchor": format_bitstring(system.anchor),
        },
    }
    if truth is not None:
        report["metrics"] = _error_metrics(truth, p_hat, z_hat)
    return report


def _run_mallows(cfg, d, seed, params, out_dir):
    model = _build_mallows_truth(cfg["truth"], d)
    rset = _build_ranking_set(cfg, model)
    tm = mallows.TruncatedMallows(model, rset)
    rng = np.random.default_rng(seed)
    eps = float(_require(params, "eps", (int, float), "params"))
    delta = float(_require(params, "delta", (int, float), "params"))
    learned = mallows.learn_mallows_tv(
        tm, eps, delta, rng,
        gamma=params.get("gamma", 0.25),
        max_samples=params.get("max_samples", mallows.DEFAULT_RANKING_BUDGET),
    )
    center_order = (mallows.order_from_ranking(learned.central) + 1).tolist()
    metrics = {
        "kendall_to_truth": mallows.kendall_tau(learned.central, model.central),
        "abs_phi_error": abs(learned.phi - model.phi),
    }
    if d <= mallows.ENUM_RANKING_LIMIT:
        metrics["exact_tv"] = mallows.exact_mallows_tv(model, learned)
    return {
        "command": "mallows",
        "config": cfg,
        "seed": seed,
        "estimate": {"center_order": center_order, "phi": learned.phi},
        "metrics": metrics,
        "counters": {
            "truncated_samples": tm.draw_counter,
            "oracle_queries": rset.query_counter,
        },
    }


def _run_test(cfg, d, seed, params, out_dir):
    truth = _build_truth(cfg["truth"], d)
    ts = _build_set(cfg, d)
    td = TruncatedDistribution(truth, ts)
    mode = _require(params, "mode", str, "params")
    eps = float(_require(params, "eps", (int, float), "params"))
    rng = np.random.default_rng(seed)
    tester = testers.baseline_tester()
    if mode == "identity":
        verdict = testers.identity_test(truth, td, eps, tester, rng)
    elif mode == "closeness":
        set2 = params.get("set2")
        ts2 = parse_descriptor(set2, d) if set2 else ts
        td2 = TruncatedDistribution(truth, ts2)
        verdict = testers.closeness_test(td, td2, eps, tester, rng)
    else:
        raise ConfigError("params.mode must be 'identity' or 'closeness'")
    return {
        "command": "test",
        "config": cfg,
        "seed": seed,
        "verdict": verdict.value,
        "counters": {
            "truncated_samples": td.draw_counter,
            "oracle_queries": ts.query_counter,
        },
    }


def _run_oracle_dump(cfg, d, seed, params, out_dir):
    truth = _build_truth(cfg["truth"], d)
    ts = _build_set(cfg, d)
    td = TruncatedDistribution(truth, ts)
    pmf = td.exact_pmf()
    rows = [[format_bitstring(pt), f"{pr:.17g}"]
            for pt, pr in zip(pmf.points, pmf.probs)]
    _write_csv(out_dir, "pmf.csv", ["bitstring", "probability"], rows)
    return {
        "command": "oracle-dump",
        "config": cfg,
        "seed": seed,
        "support_size": int(pmf.points.shape[0]),
        "mass_sum": float(pmf.probs.sum()),
        "set_mass": td.exact_mass(),
    }


def _run_bench(cfg, d, seed, params, out_dir):
    truth = _build_truth(cfg["truth"], d)
    ts = _build_set(cfg, d)
    td = TruncatedDistribution(truth, ts)
    rng = np.random.default_rng(seed)
    n = params.get("n", 2000)
    fatness = estimate_fatness(td, params.get("fatness_samples", 4000), rng)
    _, stats = fat_sampler.fat_sample_batch(td, n, rng)
    bound = 8.0 * math.log(max(d, 2)) / fatness.min_alpha
    return {
        "command": "bench",
        "config": cfg,
        "seed": seed,
        "overhead": {
            "mean_truncated_per_output": stats.mean_consumed,
            "bound_8logd_over_alpha": bound,
            "within_bound": stats.mean_consumed <= bound,
            "min_alpha_hat": fatness.min_alpha,
            "alpha_per_coordinate": fatness.per_coordinate,
        },
        "counters": {"oracle_queries": ts.query_counter},
    }


_RUNNERS = {
    "fat-sample": _run_fat_sample,
    "sgd": _run_sgd,
    "identify": _run_identify,
    "mallows": _run_mallows,
    "test": _run_test,
    "oracle-dump": _run_oracle_dump,
    "bench": _run_bench,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="trunc-estimate",
        description="Estimate product and Mallows distributions from truncated samples.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=(name != "identify"),
                         help="TOML or JSON experiment configuration")
        cmd.add_argument("--seed", type=int, help="override the config seed")
        cmd.add_argument("--out", default="out", help="output directory")
        cmd.add_argument("--d", type=int, help="override the config dimension")
        if name == "identify":
            cmd.add_argument("--input",
                             help="histogram CSV (bitstring,probability)")
    return parser


def run(args) -> dict:
    if args.command == "identify" and args.config is None:
        if args.input is None:
            raise ConfigError("identify needs --config or --input")
        cfg = {"command": "identify", "d": args.d or 0, "seed": args.seed or 0}
        points, _ = _read_histogram(args.input, None)
        cfg["d"] = points.shape[1]
    else:
        cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.d is not None:
        cfg["d"] = args.d
    d, seed, params, reps = _validate(cfg, args.command)
    runner = _RUNNERS[args.command]
    start = time.perf_counter()
    if args.command == "identify":
        report = runner(cfg, d, seed, params, args.out,
                        input_path=getattr(args, "input", None))
    elif reps == 1:
        report = runner(cfg, d, seed, params, args.out)
    else:
        # Repetitions fan out over a bounded worker pool with per-repetition
        # derived seeds; results are ordered by index, so reports stay
        # deterministic whatever the scheduling.
        children = np.random.SeedSequence(seed).spawn(reps)
        rep_seeds = [int(c.generate_state(1)[0]) for c in children]

        def one(idx):
            rep_out = os.path.join(args.out, f"rep{idx:03d}")
            return runner(cfg, d, rep_seeds[idx], params, rep_out)

        results = _map_reps(one, reps)
        report = {
            "command": args.command,
            "config": cfg,
            "seed": seed,
            "repetitions": results,
        }
    wall = time.perf_counter() - start
    _write_report(args.out, report)
    _write_meta(args.out, wall, args.command)
    return report


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run(args)
    except TruncEstimateError as exc:
        for klass, code in _EXIT_CODES:
            if isinstance(exc, klass):
                print(f"error: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
