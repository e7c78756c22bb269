"""``hwbo`` command line: profile, fit-hw, run, report.

Exit codes: 0 success, 2 configuration error, 3 data or journal error,
4 model error (rank-deficient fit, RMSPE above the refusal threshold).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .gp import GPFitError
from .harness import ConfigError, JournalError, load_config, load_journals, run_experiment
from .hwmodels import DataFormatError, RankDeficientError, fit_with_cv, read_profile, save_models, write_profile
from .reports import emit_reports
from .sim import InfeasibleError, profile_offline

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_MODEL = 0, 2, 3, 4
RMSPE_LIMIT = 10.0

log = logging.getLogger("hwbo")


class ModelRefused(RuntimeError):
    pass


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None):
        cfg = dataclasses.replace(cfg, seeds=tuple(args.seed))
    if getattr(args, "real_clock", False):
        cfg = dataclasses.replace(cfg, real_clock=True)
    return cfg


def cmd_profile(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed[0] if args.seed else cfg.profile.seed
    sc = cfg.scenario
    samples = profile_offline(sc, args.samples or cfg.profile.samples, np.random.default_rng(seed))
    out = Path(args.out or Path(cfg.out) / "profile.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_profile(out, sc.space.structural_names, samples)
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def cmd_fit_hw(args) -> int:
    names, samples = read_profile(args.profile)
    seed = args.seed[0] if args.seed else 0
    models = {
        m: fit_with_cv(samples, m, k=args.folds, seed=seed, intercept=args.intercept, names=names)
        for m in ("power", "memory")
    }
    report = {
        m: {"weights": mod.to_dict()["weights"], "residual_std": mod.residual_std, "cv_rmspe": mod.rmspe}
        for m, mod in models.items()
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    bad = [m for m, mod in models.items() if mod.rmspe > RMSPE_LIMIT]
    if bad and not args.force:
        raise ModelRefused(
            f"CV RMSPE above {RMSPE_LIMIT:g}% for {', '.join(bad)}; pass --force to write the model file anyway"
        )
    for m in bad:
        log.warning("%s model CV RMSPE %.2f%% exceeds %g%%", m, models[m].rmspe, RMSPE_LIMIT)
    out = Path(args.out or Path(args.profile).with_name("hw_models.json"))
    save_models(out, models, extra={"profile": str(args.profile), "folds": args.folds})
    print(f"wrote {out}", file=sys.stderr)
    return EXIT_OK


def _print_summary(summary: dict) -> None:
    print(f"scenario {summary['scenario']}  mode {summary['mode']}")
    print(f"{'method':<10} {'variant':<11} {'runs':>4} {'best err':>9} {'std':>8} {'queries':>8} {'evals':>7}")
    for method, entry in summary["methods"].items():
        for variant in ("gated", "default"):
            g = entry.get(variant)
            if g is None:
                continue
            print(
                f"{method:<10} {variant:<11} {g['runs']:>4} {g['mean_best_error']:>9.4f} "
                f"{g['std_best_error']:>8.4f} {g['mean_queries']:>8.1f} {g['mean_evaluations']:>7.1f}"
            )
        cmp_ = entry.get("comparison")
        if cmp_:
            fmt = lambda v: "n/a" if v is None else f"{v:.2f}x"  # noqa: E731
            print(
                f"{'':<10} samples {fmt(cmp_['geomean_samples_increase'])}, "
                f"time-to-count {fmt(cmp_['geomean_count_speedup'])}, "
                f"time-to-best {fmt(cmp_['geomean_best_speedup'])}"
            )


def cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg.out)
    bundle = run_experiment(cfg, out, resume=args.resume)
    _print_summary(bundle.summary)
    print(f"reports in {out / 'reports'}")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.out and not args.config:
        raise ConfigError("--out", "give --out or --config")
    out = Path(args.out or load_config(args.config).out)
    bundle = emit_reports(load_journals(out), out / "reports", allow_incomplete=args.allow_incomplete)
    _print_summary(bundle.summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hwbo", description="Power and memory constrained hyper-parameter search.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("profile", help="sample the scenario's hardware metrics to a CSV profile")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int, nargs=1)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--out", help="profile CSV path (default <config out>/profile.csv)")
    sp.set_defaults(func=cmd_profile)

    sp = sub.add_parser("fit-hw", help="fit linear power/memory models to a profile CSV")
    sp.add_argument("profile")
    sp.add_argument("--out", help="model JSON path (default next to the profile)")
    sp.add_argument("--seed", type=int, nargs=1, help="fold shuffling seed")
    sp.add_argument("--folds", type=int, default=10)
    sp.add_argument("--intercept", action="store_true")
    sp.add_argument("--force", action="store_true", help=f"write models even if CV RMSPE > {RMSPE_LIMIT:g}%%")
    sp.set_defaults(func=cmd_fit_hw)

    sp = sub.add_parser("run", help="run every method and seed of an experiment config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int, nargs="+", help="override the config's seed list")
    sp.add_argument("--out")
    sp.add_argument(
        "--resume", action=argparse.BooleanOptionalAction, default=True,
        help="continue existing journals (default); --no-resume starts over",
    )
    sp.add_argument("--real-clock", action="store_true", help="measure time budgets on the host clock")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("report", help="re-aggregate journals into series and summary files")
    sp.add_argument("--out")
    sp.add_argument("--config")
    sp.add_argument("--allow-incomplete", action="store_true")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, JournalError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RankDeficientError, GPFitError, ModelRefused, InfeasibleError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
