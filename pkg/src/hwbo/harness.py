"""Experiment configuration, journal persistence and multi-seed races.

An experiment runs every (method, variant, seed) combination. The
``gated`` variant uses the configured feasibility gate and early
termination; the ``default`` variant turns both off and makes the BO
methods constraint-unaware. Each run appends to its own JSON-lines journal,
so an interrupted experiment resumes where it stopped.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np
import yaml

from .acquisition import ACQUISITIONS, AcquisitionChoice
from .hwmodels import Budget, HwLinearModel, fit_with_cv, read_profile, save_models, write_profile
from .sim import SimObjective, SimScenario, get_scenario, profile_offline
from .solvers import BO_METHODS, METHODS, EarlyTermPolicy, SolverConfig, TrialRecord, run_solver
from .space import SearchSpace

logger = logging.getLogger(__name__)

JOURNAL_SCHEMA = "hwbo-journal"
JOURNAL_VERSION = 1
VARIANTS = ("gated", "default")
MODES = ("fixed-evals", "fixed-time")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class JournalError(ValueError):
    """Unreadable, unsupported or mismatched journal."""


# -- configuration --------------------------------------------------------


@dataclass(frozen=True)
class ProfileSettings:
    samples: int = 200
    seed: int = 12345
    folds: int = 10
    intercept: bool = False
    file: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: SimScenario
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    budget: Budget
    mode: str = "fixed-evals"
    max_evals: int | None = None
    time_budget: float | None = None
    gating: bool = True
    early_termination: bool = True
    compare_default: bool = False
    acquisition: dict = field(default_factory=lambda: {"hw-ieci": "hw-ieci", "hw-cwei": "hw-cwei"})
    candidate_count: int = 10_000
    walk_sigma: float = 0.1
    early_term: EarlyTermPolicy = field(default_factory=EarlyTermPolicy)
    profile: ProfileSettings = field(default_factory=ProfileSettings)
    out: str = "runs"
    real_clock: bool = False

    @property
    def variants(self) -> tuple[str, ...]:
        return VARIANTS if self.compare_default else VARIANTS[:1]

    def solver_config(self, method: str, variant: str, seed: int) -> SolverConfig:
        hp = variant == "gated"
        return SolverConfig(
            method=method,
            seed=seed,
            max_evals=self.max_evals if self.mode == "fixed-evals" else None,
            time_budget=self.time_budget if self.mode == "fixed-time" else None,
            walk_sigma=self.walk_sigma,
            early_term=(
                self.early_term
                if hp and self.early_termination
                else EarlyTermPolicy.disabled(self.early_term.penalty_error)
            ),
            gating=hp and self.gating,
            acquisition=AcquisitionChoice(self.acquisition.get(method, "hw-ieci"), self.candidate_count),
            real_clock=self.real_clock,
        )

    def fingerprint(self) -> str:
        """Hash of everything that shapes a journal except method, variant and seed."""
        doc = {
            "scenario": self.scenario.to_dict(),
            "budget": [self.budget.power, self.budget.memory],
            "mode": self.mode,
            "max_evals": self.max_evals,
            "time_budget": self.time_budget,
            "gating": self.gating,
            "early_termination": self.early_termination,
            "acquisition": self.acquisition,
            "candidate_count": self.candidate_count,
            "walk_sigma": self.walk_sigma,
            "early_term": [self.early_term.probe_epochs, self.early_term.accuracy_floor, self.early_term.penalty_error],
            "profile": [self.profile.samples, self.profile.seed, self.profile.folds, self.profile.intercept, self.profile.file],
        }
        blob = json.dumps(doc, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _get(d: dict, key: str, kind, default=None, required: bool = False):
    if key not in d or d[key] is None:
        if required:
            raise ConfigError(key, "missing")
        return default
    v = d[key]
    try:
        if kind is bool:
            if not isinstance(v, bool):
                raise TypeError
            return v
        return kind(v)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected {kind.__name__}, got {v!r}") from None


def _scenario_from(doc: dict) -> SimScenario:
    spec = doc.get("scenario")
    if spec is None:
        raise ConfigError("scenario", "missing")
    try:
        if isinstance(spec, str):
            sc = get_scenario(spec)
        elif isinstance(spec, dict):
            spec = dict(spec)
            base = spec.pop("base", None)
            if base is not None:
                sc = get_scenario(base)
                if "space" in spec:
                    spec["space"] = SearchSpace.from_list(spec["space"])
                sc = sc.with_overrides(**spec)
            else:
                sc = SimScenario.from_dict(spec)
        else:
            raise ConfigError("scenario", "expected a name or a mapping")
        if "space" in doc:
            sc = sc.with_overrides(space=SearchSpace.from_list(doc["space"]))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("scenario", str(exc)) from None
    return sc


def config_from_dict(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a parsed config mapping; errors name the offending field."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a mapping")
    scenario = _scenario_from(doc)

    methods = doc.get("methods", list(METHODS))
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods", "need a nonempty list")
    for m in methods:
        if m not in METHODS:
            raise ConfigError("methods", f"unknown method {m!r}; choose from {list(METHODS)}")
    seeds = doc.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds", "need a nonempty list of integers")

    b = doc.get("budget", {}) or {}
    if not isinstance(b, dict):
        raise ConfigError("budget", "expected a mapping with power/memory")
    try:
        budget = Budget(
            _get(b, "power", float, scenario.power_budget),
            _get(b, "memory", float, scenario.memory_budget),
        )
    except ValueError as exc:
        raise ConfigError("budget", str(exc)) from None

    mode = _get(doc, "mode", str, "fixed-evals")
    if mode not in MODES:
        raise ConfigError("mode", f"expected one of {list(MODES)}")
    max_evals = _get(doc, "max_evals", int)
    time_budget = _get(doc, "time_budget", float)
    if mode == "fixed-evals" and (max_evals is None or max_evals < 1):
        raise ConfigError("max_evals", "fixed-evals mode needs a positive max_evals")
    if mode == "fixed-time" and (time_budget is None or time_budget <= 0):
        raise ConfigError("time_budget", "fixed-time mode needs a positive time_budget")

    acq = dict(ExperimentConfig.__dataclass_fields__["acquisition"].default_factory())
    user_acq = doc.get("acquisition") or {}
    if not isinstance(user_acq, dict):
        raise ConfigError("acquisition", "expected a mapping from BO method to acquisition")
    for k, v in user_acq.items():
        if k not in BO_METHODS:
            raise ConfigError("acquisition", f"{k!r} is not a BO method")
        if v not in ACQUISITIONS:
            raise ConfigError("acquisition", f"unknown acquisition {v!r}")
        acq[k] = v

    et = doc.get("early_term") or {}
    try:
        policy = EarlyTermPolicy(
            probe_epochs=_get(et, "probe_epochs", int, 2),
            accuracy_floor=_get(et, "accuracy_floor", float, 0.10),
            penalty_error=_get(et, "penalty_error", float, 0.9),
        )
    except ValueError as exc:
        raise ConfigError("early_term", str(exc)) from None
    if policy.probe_epochs >= scenario.total_epochs:
        raise ConfigError("early_term", "probe_epochs must be below the scenario's total_epochs")

    pr = doc.get("profile") or {}
    profile = ProfileSettings(
        samples=_get(pr, "samples", int, 200),
        seed=_get(pr, "seed", int, 12345),
        folds=_get(pr, "folds", int, 10),
        intercept=_get(pr, "intercept", bool, False),
        file=_get(pr, "file", str),
    )
    if profile.file is not None and base_dir is not None and not Path(profile.file).is_absolute():
        profile = ProfileSettings(**{**profile.__dict__, "file": str(base_dir / profile.file)})
    if profile.samples < profile.folds:
        raise ConfigError("profile", "samples must be at least folds")

    candidate_count = _get(doc, "candidate_count", int, 10_000)
    if candidate_count < 1:
        raise ConfigError("candidate_count", "must be positive")
    walk_sigma = _get(doc, "walk_sigma", float, 0.1)
    if not 0 < walk_sigma <= 1:
        raise ConfigError("walk_sigma", "must lie in (0, 1]")

    known = {
        "scenario", "space", "methods", "seeds", "budget", "mode", "max_evals", "time_budget",
        "gating", "early_termination", "compare_default", "acquisition", "candidate_count",
        "walk_sigma", "early_term", "profile", "out", "real_clock",
    }
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown config key")

    return ExperimentConfig(
        scenario=scenario,
        methods=tuple(methods),
        seeds=tuple(seeds),
        budget=budget,
        mode=mode,
        max_evals=max_evals,
        time_budget=time_budget,
        gating=_get(doc, "gating", bool, True),
        early_termination=_get(doc, "early_termination", bool, True),
        compare_default=_get(doc, "compare_default", bool, False),
        acquisition=acq,
        candidate_count=candidate_count,
        walk_sigma=walk_sigma,
        early_term=policy,
        profile=profile,
        out=_get(doc, "out", str, "runs"),
        real_clock=_get(doc, "real_clock", bool, False),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from None
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"not valid YAML: {exc}") from None
    return config_from_dict(doc, base_dir=path.parent)


# -- journals -------------------------------------------------------------


def _dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def journal_header(config: ExperimentConfig, method: str, variant: str, seed: int) -> dict:
    return {
        "kind": "header",
        "schema": JOURNAL_SCHEMA,
        "version": JOURNAL_VERSION,
        "fingerprint": config.fingerprint(),
        "scenario": config.scenario.name,
        "method": method,
        "variant": variant,
        "seed": seed,
        "mode": config.mode,
        "max_evals": config.max_evals,
        "time_budget": config.time_budget,
        "budget": {"power": config.budget.power, "memory": config.budget.memory},
        "num_classes": config.scenario.num_classes,
    }


@dataclass
class Journal:
    header: dict
    records: list[TrialRecord]
    complete: bool
    path: Path | None = None

    @property
    def method(self) -> str:
        return self.header["method"]

    @property
    def variant(self) -> str:
        return self.header["variant"]

    @property
    def seed(self) -> int:
        return self.header["seed"]

    @property
    def budget(self) -> Budget:
        b = self.header["budget"]
        return Budget(b["power"], b["memory"])


def read_journal(path: str | Path, repair: bool = False) -> Journal:
    """Parse a journal; with ``repair`` a torn final line is truncated away."""
    path = Path(path)
    raw = path.read_bytes()
    lines = raw.split(b"\n")
    tail = lines.pop()  # text after the last newline: empty unless the write was torn
    parsed = []
    for lineno, line in enumerate(lines, start=1):
        try:
            parsed.append(json.loads(line))
        except json.JSONDecodeError:
            if lineno == len(lines) and repair:
                tail = line
                break
            raise JournalError(f"{path}:{lineno}: corrupt journal line") from None
    if tail:
        if not repair:
            raise JournalError(f"{path}: torn final line")
        good = b"".join(l + b"\n" for l in lines[: len(parsed)])
        path.write_bytes(good)
        logger.info("%s: dropped torn final line", path)
    if not parsed or parsed[0].get("kind") != "header":
        raise JournalError(f"{path}: missing header")
    header = parsed[0]
    if header.get("schema") != JOURNAL_SCHEMA:
        raise JournalError(f"{path}: not a journal (schema {header.get('schema')!r})")
    if header.get("version") != JOURNAL_VERSION:
        raise JournalError(f"{path}: unsupported journal version {header.get('version')!r}")
    records, complete = [], False
    for i, entry in enumerate(parsed[1:], start=2):
        kind = entry.pop("kind", None)
        if kind == "trial":
            try:
                records.append(TrialRecord.from_dict(entry))
            except (TypeError, ValueError) as exc:
                raise JournalError(f"{path}:{i}: bad trial record: {exc}") from None
        elif kind == "end":
            complete = True
        else:
            raise JournalError(f"{path}:{i}: unknown entry kind {kind!r}")
    for i, r in enumerate(records):
        if r.index != i:
            raise JournalError(f"{path}: trial indices out of order at {i}")
    return Journal(header=header, records=records, complete=complete, path=path)


def journal_path(out: Path, method: str, variant: str, seed: int) -> Path:
    return out / "journals" / f"{method}__{variant}__seed{seed}.jsonl"


# -- experiment -----------------------------------------------------------


def fit_models(config: ExperimentConfig, out: Path | None = None) -> dict[str, HwLinearModel]:
    """Profile the scenario (or load the configured profile) and fit both metrics."""
    sc = config.scenario
    if config.profile.file:
        names, samples = read_profile(config.profile.file)
        if names != sc.space.structural_names:
            raise ConfigError("profile.file", f"columns {names} do not match {sc.space.structural_names}")
    else:
        names = sc.space.structural_names
        samples = profile_offline(sc, config.profile.samples, np.random.default_rng(config.profile.seed))
    models = {
        metric: fit_with_cv(
            samples, metric, k=config.profile.folds, seed=config.profile.seed,
            intercept=config.profile.intercept, names=names,
        )
        for metric in ("power", "memory")
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_profile(out / "profile.csv", names, samples)
        save_models(out / "hw_models.json", models)
    return models


def iter_runs(config: ExperimentConfig) -> Iterator[tuple[str, str, int]]:
    for method in config.methods:
        for variant in config.variants:
            for seed in config.seeds:
                yield method, variant, seed


def run_one(
    config: ExperimentConfig,
    models: dict[str, HwLinearModel],
    method: str,
    variant: str,
    seed: int,
    path: Path,
    resume: bool = True,
) -> Journal:
    header = journal_header(config, method, variant, seed)
    prior: list[TrialRecord] = []
    if resume and path.exists():
        j = read_journal(path, repair=True)
        if j.header != header:
            raise JournalError(f"{path}: journal belongs to a different configuration")
        if j.complete:
            return j
        prior = j.records
        logger.info("resuming %s after %d trials", path.name, len(prior))
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(_dumps(header) + "\n")

    with open(path, "a") as fh:

        def append(rec: TrialRecord) -> None:
            fh.write(_dumps({"kind": "trial", **rec.to_dict()}) + "\n")
            fh.flush()

        records = run_solver(
            config.scenario.space,
            SimObjective(config.scenario),
            models.get("power"),
            models.get("memory"),
            config.budget,
            config.solver_config(method, variant, seed),
            journal=prior,
            on_record=append,
        )
        fh.write(_dumps({"kind": "end", "trials": len(records)}) + "\n")
    return Journal(header=header, records=records, complete=True, path=path)


def run_experiment(config: ExperimentConfig, out: str | Path | None = None, resume: bool = True):
    """Run every (method, variant, seed), persist journals and write reports.

    Returns the :class:`~hwbo.reports.ReportBundle`.
    """
    from .reports import emit_reports

    out = Path(out if out is not None else config.out)
    models = fit_models(config, out)
    journals = []
    for method, variant, seed in iter_runs(config):
        path = journal_path(out, method, variant, seed)
        journals.append(run_one(config, models, method, variant, seed, path, resume=resume))
    return emit_reports(journals, out / "reports")


def load_journals(out: str | Path) -> list[Journal]:
    paths = sorted((Path(out) / "journals").glob("*.jsonl"))
    if not paths:
        raise JournalError(f"no journals under {out}/journals")
    return [read_journal(p) for p in paths]


def dump_config(config: ExperimentConfig) -> dict[str, Any]:
    """Plain mapping view of a config, suitable for YAML."""
    return {
        "scenario": config.scenario.name,
        "budget": {"power": config.budget.power, "memory": config.budget.memory},
        "methods": list(config.methods),
        "seeds": list(config.seeds),
        "mode": config.mode,
        "max_evals": config.max_evals,
        "time_budget": config.time_budget,
        "gating": config.gating,
        "early_termination": config.early_termination,
        "compare_default": config.compare_default,
        "out": config.out,
    }
