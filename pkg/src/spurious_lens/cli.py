"""Command-line entry point.

Every subcommand writes machine-readable output files plus one run manifest
(<out stem>.manifest.json) recording the subcommand, a digest of all inputs,
the seed, the toolkit version and the produced paths.  The manifest is the
only place a timestamp appears, so report files from identical invocations
are byte-identical.  Human-readable notes go to stderr only.

Exit codes: 0 success, 1 completed-but-failed verification, 2 input error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .alignment import (
    alignment_gap,
    empirical_minimizer,
    latent_alignment_target,
    population_alignment_gap,
    population_alignment_target,
    prompt_embedding,
    subgroup_accuracy,
)
from .discrete import DiscreteConfig, run_discrete_experiment
from .errors import (
    ConfigError,
    DegenerateFitError,
    DomainError,
    InsufficientDataError,
    NonconvergenceError,
    ParseError,
    ShapeError,
)
from .evaluation import (
    confusing_labels,
    discover_spurious,
    effective_robustness_fit,
    fmt_pct,
    group_report,
    load_points,
    load_predictions,
    load_similarities,
)
from .svgplot import render_fit_svg
from .synthetic import GenerativeConfig, ood_dataset, sample_dataset
from .theory import format_report_table, verify_theorem

_INPUT_ERRORS = (ParseError, ConfigError, InsufficientDataError, ShapeError, OSError)
_NUMERIC_ERRORS = (NonconvergenceError, DomainError, DegenerateFitError,
                   FloatingPointError, ZeroDivisionError)


def _read_text(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _canonical(payload) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _digest(payload) -> str:
    return hashlib.sha256(_canonical(payload)).hexdigest()


def _file_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out: str, subcommand: str, digest: str, seed: int,
                    outputs: list[str]) -> str:
    manifest_path = str(Path(out).with_suffix(".manifest.json"))
    _write_json(manifest_path, {
        "subcommand": subcommand,
        "config_digest": digest,
        "seed": seed,
        "version": __version__,
        "outputs": [str(p) for p in outputs],
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    })
    return manifest_path


def cmd_verify_theorem(args) -> int:
    config = GenerativeConfig.from_json(_read_text(args.config))
    report = verify_theorem(config, args.mc, args.seed, args.tol)
    _write_json(args.out, {
        "config": config.to_json_dict(),
        "seed": args.seed,
        **report.to_json_dict(),
    })
    _write_manifest(args.out, "verify-theorem", _digest({
        "subcommand": "verify-theorem",
        "config": config.to_json_dict(),
        "mc": args.mc,
        "seed": args.seed,
        "tol": args.tol,
    }), args.seed, [args.out])
    print(format_report_table(config, report), file=sys.stderr)
    return 0 if report.passed else 1


def cmd_simulate_gaussian(args) -> int:
    config = GenerativeConfig.from_json(_read_text(args.config))
    trainset = sample_dataset(config, args.seed)
    matrix = empirical_minimizer(trainset, config.rho)
    testset = ood_dataset(config, trainset.dict_image, trainset.dict_text,
                          args.seed, config.n)
    prompts = (prompt_embedding(trainset.dict_text, 1),
               prompt_embedding(trainset.dict_text, -1))
    report = subgroup_accuracy(matrix, testset, prompts)
    _write_json(args.out, {
        **report.to_json_dict(),
        "alignment": {
            "target_gap": alignment_gap(
                matrix, config, trainset.dict_image, trainset.dict_text),
            "population_gap": population_alignment_gap(
                matrix, config, trainset.dict_image, trainset.dict_text),
            "latent_target": latent_alignment_target(config).tolist(),
            "population_target": population_alignment_target(config).tolist(),
        },
        "n_train": config.n,
        "n_test": len(testset),
        "config": config.to_json_dict(),
        "seed": args.seed,
    })
    _write_manifest(args.out, "simulate-gaussian", _digest({
        "subcommand": "simulate-gaussian",
        "config": config.to_json_dict(),
        "seed": args.seed,
    }), args.seed, [args.out])
    print(f"acc_overall {fmt_pct(report.acc_overall)}%", file=sys.stderr)
    return 0


def _pct_cell(mean: float, std: float) -> str:
    return f"{fmt_pct(mean)} ± {fmt_pct(std)}"


def cmd_simulate_discrete(args) -> int:
    config = DiscreteConfig.from_json(_read_text(args.config))
    if args.seeds < 1:
        raise ConfigError(f"--seeds must be >= 1, got {args.seeds}")
    summaries, per_seed = run_discrete_experiment(config, args.seeds)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "n", "p_inv", "p_spu", "method", "rand", "rev", "rest"])
        for s in summaries:
            rest = ("n/a" if s.rest_mean is None
                    else _pct_cell(s.rest_mean, s.rest_std))
            writer.writerow([
                config.num_classes, config.n_train, config.p_inv, config.p_spu,
                s.method,
                _pct_cell(s.rand_mean, s.rand_std),
                _pct_cell(s.rev_mean, s.rev_std),
                rest,
            ])
    json_path = str(Path(args.out).with_suffix(".json"))
    _write_json(json_path, {
        "config": config.to_json_dict(),
        "n_seeds": args.seeds,
        "summaries": [s.to_json_dict() for s in summaries],
        "per_seed": [asdict(r) for r in per_seed],
    })
    _write_manifest(args.out, "simulate-discrete", _digest({
        "subcommand": "simulate-discrete",
        "config": config.to_json_dict(),
        "seeds": args.seeds,
    }), config.seed, [args.out, json_path])
    return 0


def cmd_eval(args) -> int:
    records = load_predictions(args.predictions)
    report = group_report(records, args.topk)
    _write_json(args.out, report.to_json_dict())
    _write_manifest(args.out, "eval", _digest({
        "subcommand": "eval",
        "predictions_sha256": _file_digest(args.predictions),
        "topk": args.topk,
    }), 0, [args.out])
    print(
        f"balanced easy {fmt_pct(report.balanced_easy)}%  "
        f"hard {fmt_pct(report.balanced_hard)}%  "
        f"drop {fmt_pct(report.balanced_drop)} pp",
        file=sys.stderr,
    )
    return 0


def cmd_discover(args) -> int:
    records = load_predictions(args.predictions)
    split = discover_spurious(records, args.threshold, args.min_count)
    _write_json(args.out, split.to_json_dict())
    _write_manifest(args.out, "discover", _digest({
        "subcommand": "discover",
        "predictions_sha256": _file_digest(args.predictions),
        "threshold": args.threshold,
        "min_count": args.min_count,
    }), 0, [args.out])
    print(
        f"flagged {len(split.flagged)} classes, "
        f"skipped {len(split.skipped)}",
        file=sys.stderr,
    )
    return 0


def cmd_confuse(args) -> int:
    table = load_similarities(args.similarities)
    top = confusing_labels(table, args.k)
    means = {name: float(score)
             for name, score in zip(table.candidates, table.scores.mean(axis=0))}
    _write_json(args.out, {
        "k": args.k,
        "labels": top,
        "mean_scores": means,
        "n_samples": len(table.sample_ids),
    })
    _write_manifest(args.out, "confuse", _digest({
        "subcommand": "confuse",
        "similarities_sha256": _file_digest(args.similarities),
        "k": args.k,
    }), 0, [args.out])
    return 0


def cmd_fit(args) -> int:
    points = load_points(args.points)
    fit = effective_robustness_fit(points, args.transform)
    svg_path = args.svg or str(Path(args.out).with_suffix(".svg"))
    Path(svg_path).write_text(render_fit_svg(points, fit), encoding="utf-8")
    _write_json(args.out, {
        **fit.to_json_dict(),
        "n_points": len(points),
        "points": [
            {"name": p.name, "easy": p.easy, "hard": p.hard} for p in points
        ],
        "svg": svg_path,
    })
    _write_manifest(args.out, "fit", _digest({
        "subcommand": "fit",
        "points_sha256": _file_digest(args.points),
        "transform": args.transform,
    }), 0, [args.out, svg_path])
    print(
        f"{fit.transform.value} fit: slope {fit.slope:.4f} "
        f"intercept {fit.intercept:.4f}",
        file=sys.stderr,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spurious-lens",
        description="Simulation and evaluation toolkit for spurious-feature "
                    "reliance in contrastive image-text models.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("verify-theorem",
                       help="compare closed-form subgroup bounds to Monte-Carlo")
    p.add_argument("--config", required=True, help="GenerativeConfig JSON")
    p.add_argument("--mc", type=int, default=100_000, help="Monte-Carlo samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=0.01)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_verify_theorem)

    p = sub.add_parser("simulate-gaussian",
                       help="train the closed-form alignment and report "
                            "subgroup accuracy on an OOD testset")
    p.add_argument("--config", required=True, help="GenerativeConfig JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_simulate_gaussian)

    p = sub.add_parser("simulate-discrete",
                       help="run the discrete shortcut experiment for both "
                            "training methods")
    p.add_argument("--config", required=True, help="DiscreteConfig JSON")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.add_argument("--out", required=True, help="summary CSV path")
    p.set_defaults(func=cmd_simulate_discrete)

    p = sub.add_parser("eval", help="easy/hard metrics from a prediction log")
    p.add_argument("--predictions", required=True, help="prediction CSV")
    p.add_argument("--topk", type=int, default=1)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("discover",
                       help="flag classes whose accuracy varies across "
                            "backgrounds and split them easy/hard")
    p.add_argument("--predictions", required=True, help="prediction CSV")
    p.add_argument("--threshold", type=float, default=5.0,
                   help="gap threshold in percentage points (strict)")
    p.add_argument("--min-count", type=int, default=20, dest="min_count",
                   help="minimum records per background")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("confuse",
                       help="rank candidate labels by mean similarity")
    p.add_argument("--similarities", required=True, help="similarity CSV")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_confuse)

    p = sub.add_parser("fit",
                       help="least-squares hard-vs-easy accuracy trend "
                            "plus an SVG scatter")
    p.add_argument("--points", required=True, help="accuracy-pairs CSV")
    p.add_argument("--transform", choices=["linear", "probit"], default="linear")
    p.add_argument("--svg", default=None, help="SVG path (default: out stem .svg)")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
