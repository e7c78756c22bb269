"""Expected improvement and its hardware-constrained variants.

Everything is written for minimization: ``y_best`` is the lowest feasible
objective seen so far and improvement is ``max(y_best - y, 0)``.

HW-IECI multiplies EI by hard indicators of the predicted power and memory
budgets. HW-CWEI multiplies EI by the Gaussian probability that each budget
holds, using the residual spread of the linear hardware models.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import ndtr

from .gp import GPState, gp_posterior_batch
from .hwmodels import Budget, HwLinearModel, feasible_mask, predict, satisfaction_probability
from .space import SearchSpace

logger = logging.getLogger(__name__)

AcquisitionKind = Literal["ei", "hw-ieci", "hw-cwei"]
ACQUISITIONS = ("ei", "hw-ieci", "hw-cwei")

INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
# before any feasible observation: the worst representable error
NO_INCUMBENT = 1.0
FALLBACK_BATCHES = 10


@dataclass(frozen=True)
class Incumbent:
    y: float
    x: np.ndarray


@dataclass(frozen=True)
class AcquisitionChoice:
    kind: AcquisitionKind = "hw-ieci"
    candidate_count: int = 10_000

    def __post_init__(self) -> None:
        if self.kind not in ACQUISITIONS:
            raise ValueError(f"unknown acquisition {self.kind!r}")
        if self.candidate_count < 1:
            raise ValueError("candidate_count must be at least 1")


@dataclass(frozen=True)
class AcquisitionContext:
    """Everything an acquisition needs besides the candidate itself."""

    space: SearchSpace
    gp: GPState
    y_best: float = NO_INCUMBENT
    power_model: HwLinearModel | None = None
    memory_model: HwLinearModel | None = None
    budget: Budget = Budget()


def expected_improvement(mean, var, y_best: float):
    """Closed-form EI of a Gaussian posterior below ``y_best``.

    Accepts scalars or arrays. A zero variance gives the deterministic
    improvement ``max(y_best - mean, 0)``.
    """
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    s = np.sqrt(np.maximum(var, 0.0))
    pos = s > 0
    safe_s = np.where(pos, s, 1.0)
    diff = y_best - mean
    # written without gamma * s so a tiny spread cannot overflow
    with np.errstate(over="ignore", divide="ignore"):
        gamma = diff / safe_s
        ei = diff * ndtr(gamma) + safe_s * INV_SQRT_2PI * np.exp(-0.5 * gamma * gamma)
    out = np.where(pos, ei, np.maximum(y_best - mean, 0.0))
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def _ei_batch(ctx: AcquisitionContext, X: np.ndarray) -> np.ndarray:
    U = ctx.space.normalize(X)
    mu, var = gp_posterior_batch(ctx.gp, U)
    return expected_improvement(mu, var, ctx.y_best)


def acquisition_values(kind: AcquisitionKind, X: np.ndarray, ctx: AcquisitionContext) -> np.ndarray:
    """Score each row of ``X`` (design points, not normalized)."""
    X = np.atleast_2d(X)
    ei = np.atleast_1d(_ei_batch(ctx, X))
    if kind == "ei":
        return ei
    Z = ctx.space.extract_structural(X)
    if kind == "hw-ieci":
        return ei * feasible_mask(ctx.power_model, ctx.memory_model, Z, ctx.budget)
    if kind == "hw-cwei":
        return (
            ei
            * satisfaction_probability(ctx.power_model, Z, ctx.budget.power)
            * satisfaction_probability(ctx.memory_model, Z, ctx.budget.memory)
        )
    raise ValueError(f"unknown acquisition {kind!r}")


def hw_ieci(x: np.ndarray, ctx: AcquisitionContext) -> float:
    """EI times the indicators of the predicted power and memory budgets."""
    return float(acquisition_values("hw-ieci", np.asarray(x)[None, :], ctx)[0])


def hw_cwei(x: np.ndarray, ctx: AcquisitionContext) -> float:
    """EI times the probabilities that the predicted budgets hold."""
    return float(acquisition_values("hw-cwei", np.asarray(x)[None, :], ctx)[0])


def budget_excess(X: np.ndarray, ctx: AcquisitionContext) -> np.ndarray:
    """Sum over metrics of the predicted overshoot, relative to each budget."""
    Z = ctx.space.extract_structural(np.atleast_2d(X))
    total = np.zeros(len(Z))
    for model, limit in ((ctx.power_model, ctx.budget.power), (ctx.memory_model, ctx.budget.memory)):
        if model is not None and limit is not None:
            total += np.maximum(0.0, predict(model, Z) - limit) / limit
    return total


def maximize_acquisition(
    space: SearchSpace,
    choice: AcquisitionChoice,
    ctx: AcquisitionContext,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """Argmax of the acquisition over uniformly sampled candidates.

    Ties go to the lowest candidate index. When every candidate scores zero
    (typically all masked by the budgets), up to ``FALLBACK_BATCHES`` fresh
    batches are drawn; if those are all zero too, the candidate with the
    smallest predicted budget excess is returned with score 0.
    """
    seen = []
    for _ in range(1 + FALLBACK_BATCHES):
        cand = space.sample_uniform(rng, choice.candidate_count)
        scores = acquisition_values(choice.kind, cand, ctx)
        i = int(np.argmax(scores))
        if scores[i] > 0:
            return cand[i], float(scores[i])
        seen.append(cand)
    logger.info("acquisition is zero on every candidate; proposing least-violating point")
    cand = np.concatenate(seen)
    i = int(np.argmin(budget_excess(cand, ctx)))
    return cand[i], 0.0
