"""Budgeted search loop shared by Rand, Rand-Walk, HW-CWEI and HW-IECI.

Each iteration proposes a point, optionally skips it when the hardware
models predict a budget violation (the feasibility gate), trains it with
early termination of diverging runs, and appends a :class:`TrialRecord`.

Randomness for trial ``i`` comes from a generator seeded by ``(seed, i)``,
so a journal cut after any trial can be resumed without replaying the past.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal, Protocol, Sequence

import numpy as np

from .acquisition import (
    NO_INCUMBENT,
    AcquisitionChoice,
    AcquisitionContext,
    Incumbent,
    maximize_acquisition,
)
from .gp import GPFitError, gp_fit, optimize_hypers
from .hwmodels import Budget, HwLinearModel, check_budget
from .space import SearchSpace

logger = logging.getLogger(__name__)

Method = Literal["rand", "rand-walk", "hw-cwei", "hw-ieci"]
METHODS = ("rand", "rand-walk", "hw-cwei", "hw-ieci")
BO_METHODS = ("hw-cwei", "hw-ieci")
Status = Literal["completed", "early_terminated", "skipped_infeasible"]

SKIP_OVERHEAD = 1e-3
MIN_BO_TRIALS = 2


class Objective(Protocol):
    """What the loop needs from a trainable model family."""

    num_classes: int
    total_epochs: int

    def learning_curve(self, x: np.ndarray): ...

    def epoch_cost(self, x: np.ndarray) -> float: ...


@dataclass(frozen=True)
class EarlyTermPolicy:
    """Stop training when validation accuracy after ``probe_epochs`` is not above ``accuracy_floor``.

    An ``accuracy_floor`` of 0 disables the policy.
    """

    probe_epochs: int = 2
    accuracy_floor: float = 0.10
    penalty_error: float = 0.9

    def __post_init__(self) -> None:
        if self.probe_epochs < 1:
            raise ValueError("probe_epochs must be positive")
        if not 0 <= self.accuracy_floor < 1:
            raise ValueError("accuracy_floor must lie in [0, 1)")
        if not 0 < self.penalty_error <= 1:
            raise ValueError("penalty_error must lie in (0, 1]")
        if self.enabled and self.penalty_error < 1 - self.accuracy_floor:
            raise ValueError("penalty_error must be at least the error implied by accuracy_floor")

    @property
    def enabled(self) -> bool:
        return self.accuracy_floor > 0

    @classmethod
    def disabled(cls, penalty_error: float = 0.9) -> "EarlyTermPolicy":
        return cls(accuracy_floor=0.0, penalty_error=penalty_error)


@dataclass(frozen=True)
class SolverConfig:
    method: Method
    seed: int = 0
    max_evals: int | None = None
    time_budget: float | None = None
    walk_sigma: float = 0.1
    early_term: EarlyTermPolicy = field(default_factory=EarlyTermPolicy)
    gating: bool = True
    acquisition: AcquisitionChoice = field(default_factory=AcquisitionChoice)
    real_clock: bool = False
    skip_overhead: float = SKIP_OVERHEAD
    max_consecutive_skips: int = 100_000

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.max_evals is None and self.time_budget is None:
            raise ValueError("need max_evals or time_budget")
        if self.max_evals is not None and self.max_evals < 1:
            raise ValueError("max_evals must be positive")
        if self.time_budget is not None and not self.time_budget > 0:
            raise ValueError("time_budget must be positive")
        if not 0 < self.walk_sigma <= 1:
            raise ValueError("walk_sigma must lie in (0, 1]")

    @property
    def acquisition_kind(self) -> str:
        # constraint-unaware (default) BO falls back to plain EI
        return self.acquisition.kind if self.gating else "ei"


@dataclass(frozen=True)
class TrialRecord:
    index: int
    x: tuple[float, ...]
    z: tuple[int, ...]
    status: Status
    objective: float | None
    epochs_run: int
    predicted_power: float | None
    predicted_memory: float | None
    true_power: float | None
    true_memory: float | None
    sim_time_start: float
    sim_time_end: float
    note: str = ""

    def __post_init__(self) -> None:
        if self.status == "completed" and self.objective is None:
            raise ValueError("completed trials need an objective")
        if self.status == "skipped_infeasible" and self.epochs_run != 0:
            raise ValueError("skipped trials run no epochs")
        if self.sim_time_end < self.sim_time_start:
            raise ValueError("trial ends before it starts")

    @property
    def evaluated(self) -> bool:
        return self.status != "skipped_infeasible"

    @property
    def duration(self) -> float:
        return self.sim_time_end - self.sim_time_start

    def to_dict(self) -> dict:
        d = asdict(self)
        d["x"] = list(self.x)
        d["z"] = list(self.z)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        d = dict(d)
        d["x"] = tuple(float(v) for v in d["x"])
        d["z"] = tuple(int(v) for v in d["z"])
        return cls(**d)

    def violates(self, budget: Budget, which: Literal["predicted", "true"] = "predicted") -> bool:
        p = self.predicted_power if which == "predicted" else self.true_power
        m = self.predicted_memory if which == "predicted" else self.true_memory
        return bool(
            (budget.power is not None and p is not None and p > budget.power)
            or (budget.memory is not None and m is not None and m > budget.memory)
        )


def trial_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _is_known_feasible(rec: TrialRecord, budget: Budget, gating: bool) -> bool:
    # gated runs trust the models; default runs only learn a violation by measuring it
    if gating:
        return not rec.violates(budget, "predicted")
    if rec.true_power is None and rec.true_memory is None:
        return not rec.violates(budget, "predicted")
    return not rec.violates(budget, "true")


def incumbent(records: Sequence[TrialRecord], budget: Budget, gating: bool = True) -> Incumbent | None:
    """Lowest-objective completed trial that is feasible; first index wins ties."""
    best = None
    for r in records:
        if r.status != "completed" or not _is_known_feasible(r, budget, gating):
            continue
        if best is None or r.objective < best.objective:
            best = r
    return None if best is None else Incumbent(best.objective, np.array(best.x))


# -- proposals ------------------------------------------------------------


def propose_rand(space: SearchSpace, rng: np.random.Generator) -> np.ndarray:
    return space.sample_uniform(rng)


def propose_rand_walk(
    space: SearchSpace,
    best: Incumbent | None,
    sigma: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Gaussian step of std ``sigma`` (normalized units) around the incumbent."""
    if best is None:
        return propose_rand(space, rng)
    u = space.normalize(best.x) + sigma * rng.standard_normal(space.dim)
    return space.clip_round(space.denormalize(u))


def propose_bo(
    space: SearchSpace,
    records: Sequence[TrialRecord],
    choice: AcquisitionChoice,
    power_model: HwLinearModel | None,
    memory_model: HwLinearModel | None,
    budget: Budget,
    rng: np.random.Generator,
    gating: bool = True,
) -> tuple[np.ndarray, str]:
    """Refit the GP on every evaluated trial and maximize the acquisition.

    Returns the proposal and a short note (empty unless a fallback fired).
    """
    if sum(r.status == "completed" for r in records) < MIN_BO_TRIALS:
        return space.sample_uniform(rng), "bootstrap"
    train = [r for r in records if r.evaluated and r.objective is not None]
    X = space.normalize(np.array([r.x for r in train]))
    y = np.array([r.objective for r in train])
    try:
        hyper = optimize_hypers(X, y, rng)
        gp = gp_fit(X, y, hyper)
    except GPFitError as exc:
        logger.warning("GP fit failed (%s); drawing uniformly", exc)
        return space.sample_uniform(rng), "gp-fit-failed"
    best = incumbent(records, budget, gating)
    ctx = AcquisitionContext(
        space=space,
        gp=gp,
        y_best=NO_INCUMBENT if best is None else best.y,
        power_model=power_model,
        memory_model=memory_model,
        budget=budget,
    )
    x, score = maximize_acquisition(space, choice, ctx, rng)
    return x, "" if score > 0 else "acquisition-fallback"


# -- evaluation -----------------------------------------------------------


def evaluate_with_early_term(objective: Objective, x: np.ndarray, policy: EarlyTermPolicy):
    """Train ``x`` epoch by epoch.

    Returns ``(status, objective_value, epochs_run)``. Training stops after
    ``probe_epochs`` when accuracy has not risen above the floor.
    """
    curve = objective.learning_curve(x)
    chance = 1.0 / objective.num_classes
    total = len(curve.accuracies)
    for epoch in range(1, total + 1):
        acc = float(curve.accuracies[epoch - 1])
        if curve.diverged or not math.isfinite(acc):
            acc = chance
        if policy.enabled and epoch == policy.probe_epochs and acc <= policy.accuracy_floor:
            return "early_terminated", policy.penalty_error, epoch
    return "completed", float(curve.final_error), total


def run_solver(
    space: SearchSpace,
    objective: Objective,
    power_model: HwLinearModel | None,
    memory_model: HwLinearModel | None,
    budget: Budget,
    config: SolverConfig,
    journal: Sequence[TrialRecord] = (),
    on_record: Callable[[TrialRecord], None] | None = None,
) -> list[TrialRecord]:
    """Run one search until ``max_evals`` evaluations or the time budget is used.

    ``journal`` holds trials from an interrupted run with the same config;
    the loop continues from where it stopped. A trial started before the
    time budget expires always completes.
    """
    records = list(journal)
    n_eval = sum(r.evaluated for r in records)
    clock = records[-1].sim_time_end if records else 0.0
    host_start = time.monotonic()
    gate = config.gating and (power_model is not None or memory_model is not None)
    true_fn = getattr(objective, "true_metrics", None)
    skips = 0

    while True:
        if config.max_evals is not None and n_eval >= config.max_evals:
            break
        if config.time_budget is not None:
            used = time.monotonic() - host_start if config.real_clock else clock
            if used >= config.time_budget:
                break
        if skips >= config.max_consecutive_skips:
            logger.warning("stopping after %d consecutive infeasible proposals", skips)
            break

        index = len(records)
        rng = trial_rng(config.seed, index)
        note = ""
        if config.method == "rand":
            x = propose_rand(space, rng)
        elif config.method == "rand-walk":
            x = propose_rand_walk(space, incumbent(records, budget, config.gating), config.walk_sigma, rng)
        else:
            choice = AcquisitionChoice(config.acquisition_kind, config.acquisition.candidate_count)
            x, note = propose_bo(space, records, choice, power_model, memory_model, budget, rng, config.gating)

        z = space.extract_structural(x)
        feasible, p_pred, m_pred = check_budget(power_model, memory_model, z, budget)
        p_true, m_true = true_fn(z) if true_fn is not None else (None, None)
        base = dict(
            index=index,
            x=tuple(float(v) for v in x),
            z=tuple(int(v) for v in z),
            predicted_power=p_pred,
            predicted_memory=m_pred,
            true_power=p_true,
            true_memory=m_true,
            sim_time_start=clock,
        )

        if gate and not feasible:
            rec = TrialRecord(
                status="skipped_infeasible",
                objective=None,
                epochs_run=0,
                sim_time_end=clock + config.skip_overhead,
                note=note,
                **base,
            )
            skips += 1
        else:
            try:
                status, value, epochs = evaluate_with_early_term(objective, x, config.early_term)
            except Exception as exc:  # a failed training run must not end the search
                logger.warning("objective failed at trial %d: %s", index, exc)
                status, value, epochs = "early_terminated", config.early_term.penalty_error, 0
                note = "objective-error"
            cost = epochs * objective.epoch_cost(x)
            rec = TrialRecord(
                status=status,
                objective=value,
                epochs_run=epochs,
                sim_time_end=clock + cost,
                note=note,
                **base,
            )
            n_eval += 1
            skips = 0
        records.append(rec)
        clock = rec.sim_time_end
        if on_record is not None:
            on_record(rec)
    return records


def best_so_far(records: Sequence[TrialRecord], budget: Budget, which: str = "true") -> list[float]:
    """Best feasible completed objective after each evaluated trial (``nan`` until one exists)."""
    out, best = [], math.inf
    for r in records:
        if not r.evaluated:
            continue
        if r.status == "completed" and not r.violates(budget, which):
            best = min(best, r.objective)
        out.append(best if best < math.inf else math.nan)
    return out
