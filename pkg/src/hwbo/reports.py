"""Aggregate journals into plot-ready series and a summary table.

Every number here is recomputed from the journals alone. Best errors use
the measured (true) hardware metrics to decide feasibility whenever the
journal carries them.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .harness import Journal, JournalError
from .hwmodels import Budget
from .solvers import TrialRecord

SUMMARY_SCHEMA = "hwbo-summary"
SUMMARY_VERSION = 1
# best error assigned to a run that never found a feasible configuration
NO_FEASIBLE_ERROR = 1.0

SERIES_FILES = {
    "best_vs_evals": "best_error_vs_evals.csv",
    "best_vs_time": "best_error_vs_time.csv",
    "trials": "trials.csv",
}


@dataclass
class ReportBundle:
    best_vs_evals: list[dict]
    best_vs_time: list[dict]
    trials: list[dict]
    summary: dict

    def write(self, out: str | Path) -> None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for attr, name in SERIES_FILES.items():
            _write_csv(out / name, getattr(self, attr))
        (out / "summary.json").write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0]))
        for row in rows:
            w.writerow([_fmt(v) for v in row.values()])


def _feasibility_basis(rec: TrialRecord) -> str:
    return "predicted" if rec.true_power is None and rec.true_memory is None else "true"


def feasible_completed(rec: TrialRecord, budget: Budget) -> bool:
    return rec.status == "completed" and not rec.violates(budget, _feasibility_basis(rec))


def best_error_trace(records: Sequence[TrialRecord], budget: Budget) -> list[float]:
    """Running best feasible error after every record (``nan`` before the first)."""
    out, best = [], math.inf
    for r in records:
        if feasible_completed(r, budget):
            best = min(best, r.objective)
        out.append(best if best < math.inf else math.nan)
    return out


def run_stats(j: Journal) -> dict:
    budget = j.budget
    recs = j.records
    trace = best_error_trace(recs, budget)
    best = trace[-1] if trace else math.nan
    evaluated = [r for r in recs if r.evaluated]
    discrepancies = sum(
        r.violates(budget, "predicted") != r.violates(budget, "true")
        for r in recs
        if r.true_power is not None or r.true_memory is not None
    )
    return {
        "method": j.method,
        "variant": j.variant,
        "seed": j.seed,
        "feasible_found": not math.isnan(best),
        "best_error": None if math.isnan(best) else best,
        "queries": len(recs),
        "evaluations": len(evaluated),
        "completed": sum(r.status == "completed" for r in recs),
        "early_terminated": sum(r.status == "early_terminated" for r in recs),
        "skipped_infeasible": sum(r.status == "skipped_infeasible" for r in recs),
        "violations_predicted": sum(r.violates(budget, "predicted") for r in evaluated),
        "violations_true": sum(r.violates(budget, "true") for r in evaluated),
        "feasibility_discrepancies": discrepancies,
        "sim_time": recs[-1].sim_time_end if recs else 0.0,
    }


def reported_best(stats: dict) -> float:
    return stats["best_error"] if stats["feasible_found"] else NO_FEASIBLE_ERROR


def geometric_mean(values: Sequence[float]) -> float | None:
    vals = [v for v in values if v is not None and v > 0 and math.isfinite(v)]
    if not vals:
        return None
    return float(math.exp(sum(math.log(v) for v in vals) / len(vals)))


def time_to_queries(records: Sequence[TrialRecord], n: int) -> float | None:
    """Simulated time at which the ``n``-th query finished."""
    if n < 1 or len(records) < n:
        return None
    return records[n - 1].sim_time_end


def time_to_error(records: Sequence[TrialRecord], budget: Budget, target: float) -> float | None:
    """Simulated time at which the running best feasible error first reached ``target``."""
    for r, b in zip(records, best_error_trace(records, budget)):
        if b <= target:
            return r.sim_time_end
    return None


def _ratio(num: float | None, den: float | None) -> float | None:
    if num is None or den is None or den <= 0:
        return None
    return num / den


def compare_variants(hp: Journal, df: Journal) -> dict:
    """Throughput and time-to-quality ratios of one seed's gated run over its default run."""
    budget = hp.budget
    n_df = len(df.records)
    t_df_count = time_to_queries(df.records, n_df)
    t_hp_count = time_to_queries(hp.records, n_df)
    df_best = best_error_trace(df.records, budget)
    df_best = df_best[-1] if df_best else math.nan
    if math.isnan(df_best):
        t_df_err = t_hp_err = None
    else:
        t_df_err = time_to_error(df.records, budget, df_best)
        t_hp_err = time_to_error(hp.records, budget, df_best)
    n_hp_eval = sum(r.evaluated for r in hp.records)
    n_df_eval = sum(r.evaluated for r in df.records)
    return {
        "seed": hp.seed,
        "queries_gated": len(hp.records),
        "queries_default": n_df,
        "samples_increase": _ratio(len(hp.records), n_df),
        "evaluations_increase": _ratio(n_hp_eval, n_df_eval),
        "time_default_to_count": t_df_count,
        "time_gated_to_count": t_hp_count,
        "count_speedup": _ratio(t_df_count, t_hp_count),
        "default_best_error": None if math.isnan(df_best) else df_best,
        "time_default_to_best": t_df_err,
        "time_gated_to_best": t_hp_err,
        "best_speedup": _ratio(t_df_err, t_hp_err),
    }


def _group_summary(stats: list[dict]) -> dict:
    best = np.array([reported_best(s) for s in stats])
    mean = lambda key: float(np.mean([s[key] for s in stats]))  # noqa: E731
    return {
        "runs": len(stats),
        "seeds": [s["seed"] for s in stats],
        "mean_best_error": float(np.mean(best)),
        "std_best_error": float(np.std(best)),
        "runs_without_feasible": sum(not s["feasible_found"] for s in stats),
        "mean_queries": mean("queries"),
        "mean_evaluations": mean("evaluations"),
        "mean_early_terminated": mean("early_terminated"),
        "mean_skipped_infeasible": mean("skipped_infeasible"),
        "total_violations_predicted": sum(s["violations_predicted"] for s in stats),
        "total_violations_true": sum(s["violations_true"] for s in stats),
        "total_feasibility_discrepancies": sum(s["feasibility_discrepancies"] for s in stats),
        "mean_sim_time": mean("sim_time"),
    }


def validate_journals(journals: Sequence[Journal], allow_incomplete: bool = False) -> None:
    if not journals:
        raise JournalError("no journals to aggregate")
    fps = {j.header["fingerprint"] for j in journals}
    if len(fps) > 1:
        raise JournalError(f"journals come from different configurations: {sorted(fps)}")
    seen = set()
    for j in journals:
        key = (j.method, j.variant, j.seed)
        if key in seen:
            raise JournalError(f"duplicate journal for {key}")
        seen.add(key)
        if not j.complete and not allow_incomplete:
            raise JournalError(f"{j.path or key}: journal is incomplete; resume the run first")


def build_reports(journals: Sequence[Journal], allow_incomplete: bool = False) -> ReportBundle:
    validate_journals(journals, allow_incomplete)
    journals = sorted(journals, key=lambda j: (j.method, j.variant, j.seed))
    budget = journals[0].budget
    head = journals[0].header

    by_evals, by_time, trials, runs = [], [], [], []
    for j in journals:
        tag = {"method": j.method, "variant": j.variant, "seed": j.seed}
        trace = best_error_trace(j.records, budget)
        n_eval = vp = vt = 0
        for r, b in zip(j.records, trace):
            by_time.append({**tag, "trial": r.index, "queries": r.index + 1, "sim_time": r.sim_time_end, "best_error": b})
            trials.append({
                **tag,
                "trial": r.index,
                "status": r.status,
                "objective": r.objective,
                "epochs_run": r.epochs_run,
                "predicted_power": r.predicted_power,
                "predicted_memory": r.predicted_memory,
                "true_power": r.true_power,
                "true_memory": r.true_memory,
                "predicted_feasible": not r.violates(budget, "predicted"),
                "sim_time_start": r.sim_time_start,
                "sim_time_end": r.sim_time_end,
            })
            if not r.evaluated:
                continue
            n_eval += 1
            vp += r.violates(budget, "predicted")
            vt += r.violates(budget, "true")
            by_evals.append({
                **tag,
                "evaluation": n_eval,
                "trial": r.index,
                "best_error": b,
                "violations_predicted": vp,
                "violations_true": vt,
            })
        runs.append(run_stats(j))

    groups: dict[str, dict[str, list]] = defaultdict(lambda: defaultdict(list))
    for s in runs:
        groups[s["method"]][s["variant"]].append(s)
    index = {(j.method, j.variant, j.seed): j for j in journals}

    methods = {}
    for method, variants in sorted(groups.items()):
        entry = {v: _group_summary(stats) for v, stats in sorted(variants.items())}
        if "gated" in variants and "default" in variants:
            pairs = []
            for s in variants["gated"]:
                df = index.get((method, "default", s["seed"]))
                if df is not None:
                    pairs.append(compare_variants(index[(method, "gated", s["seed"])], df))
            entry["comparison"] = {
                "pairing": "seed",
                "per_seed": pairs,
                "geomean_samples_increase": geometric_mean([p["samples_increase"] for p in pairs]),
                "geomean_evaluations_increase": geometric_mean([p["evaluations_increase"] for p in pairs]),
                "geomean_count_speedup": geometric_mean([p["count_speedup"] for p in pairs]),
                "geomean_best_speedup": geometric_mean([p["best_speedup"] for p in pairs]),
            }
        methods[method] = entry

    summary = {
        "schema": SUMMARY_SCHEMA,
        "version": SUMMARY_VERSION,
        "fingerprint": head["fingerprint"],
        "scenario": head["scenario"],
        "mode": head["mode"],
        "max_evals": head["max_evals"],
        "time_budget": head["time_budget"],
        "budget": head["budget"],
        "no_feasible_error": NO_FEASIBLE_ERROR,
        "runs": runs,
        "methods": methods,
    }
    return ReportBundle(by_evals, by_time, trials, summary)


def emit_reports(journals: Sequence[Journal], out: str | Path, allow_incomplete: bool = False) -> ReportBundle:
    """Aggregate ``journals`` and write the series files and ``summary.json`` under ``out``."""
    bundle = build_reports(journals, allow_incomplete)
    bundle.write(out)
    return bundle
