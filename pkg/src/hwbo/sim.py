"""Deterministic stand-in for training CNNs on a GPU.

A :class:`SimScenario` gives every design point a learning curve, a final
test error, a ground-truth power and memory draw, and a per-epoch cost in
simulated time units. Curves follow

    acc(t) = (1 - floor(x)) * (1 - exp(-t / tau(x))) + jitter

where ``floor`` grows quadratically with the (sensitivity weighted) distance
from the scenario optimum in normalized coordinates. A point diverges when
its learning rate exceeds a critical rate that shrinks as the network grows;
diverged curves sit at chance accuracy.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .hwmodels import Budget, ProfileSample
from .space import ParamSpec, SearchSpace


class InfeasibleError(RuntimeError):
    """No grid point satisfies the budget under the true metrics."""


@dataclass(frozen=True)
class LearningCurve:
    accuracies: np.ndarray
    final_error: float
    diverged: bool = False


@dataclass(frozen=True)
class SimScenario:
    name: str
    space: SearchSpace
    true_power_weights: np.ndarray
    true_memory_weights: np.ndarray
    power_noise: float
    memory_noise: float
    base_error: float
    sensitivity: np.ndarray
    optimum: np.ndarray
    lr_param: str
    lr_crit_base: float
    coupling: float
    fixed_cost: float
    unit_cost: float
    total_epochs: int = 20
    num_classes: int = 10
    tau_min: float = 1.5
    tau_max: float = 4.0
    max_floor: float = 0.6
    jitter: float = 0.005
    power_budget: float | None = None
    memory_budget: float | None = None
    grid_levels: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("true_power_weights", "true_memory_weights", "sensitivity", "optimum"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        J, d = self.space.n_structural, self.space.dim
        if self.true_power_weights.shape != (J,) or self.true_memory_weights.shape != (J,):
            raise ValueError(f"true weight vectors need length {J}")
        if np.any(self.true_power_weights <= 0) or np.any(self.true_memory_weights <= 0):
            raise ValueError("true weights must be strictly positive")
        if not (0 <= self.power_noise < 0.2 and 0 <= self.memory_noise < 0.2):
            raise ValueError("noise fractions must lie in [0, 0.2)")
        if not 0 < self.base_error < 1:
            raise ValueError("base_error must lie in (0, 1)")
        if self.sensitivity.shape != (d,) or self.optimum.shape != (d,):
            raise ValueError(f"sensitivity and optimum need length {d}")
        if self.lr_param not in self.space.names:
            raise ValueError(f"unknown learning-rate parameter {self.lr_param!r}")
        if self.fixed_cost < 0 or self.unit_cost < 0 or self.fixed_cost + self.unit_cost <= 0:
            raise ValueError("epoch cost coefficients must be nonnegative and not both zero")
        if not 0 < self.tau_min <= self.tau_max:
            raise ValueError("need 0 < tau_min <= tau_max")

    @property
    def budget(self) -> Budget:
        return Budget(self.power_budget, self.memory_budget)

    @property
    def chance_accuracy(self) -> float:
        return 1.0 / self.num_classes

    def with_overrides(self, **kw) -> "SimScenario":
        return replace(self, **kw)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "space":
                v = v.to_list()
            elif isinstance(v, np.ndarray):
                v = [float(a) for a in v]
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SimScenario":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario fields {sorted(unknown)}")
        d["space"] = SearchSpace.from_list(d["space"])
        return cls(**d)

    # -- simulation -------------------------------------------------------

    def _parts(self, X: np.ndarray):
        X = np.atleast_2d(X)
        U = self.space.normalize(X)
        j_lr = self.space.index(self.lr_param)
        size = U[:, self.space.structural_index].mean(axis=1) if self.space.n_structural else 0.0
        lr_crit = self.lr_crit_base / (1.0 + self.coupling * size)
        diverged = X[:, j_lr] > lr_crit
        floor = self.base_error + ((U - self.optimum) ** 2 * self.sensitivity).sum(axis=1)
        floor = np.clip(floor, self.base_error, self.max_floor)
        tau = self.tau_max - (self.tau_max - self.tau_min) * U[:, j_lr]
        return diverged, floor, tau

    def final_errors(self, X: np.ndarray) -> np.ndarray:
        """Vectorized final test error of fully trained points."""
        diverged, floor, tau = self._parts(X)
        err = floor + (1.0 - floor) * np.exp(-self.total_epochs / tau)
        return np.where(diverged, 1.0 - self.chance_accuracy, err)

    def is_diverged(self, x: np.ndarray) -> bool:
        return bool(self._parts(x)[0][0])


def _point_seed(x: np.ndarray) -> int:
    digest = hashlib.blake2b(np.ascontiguousarray(x, dtype=np.float64).tobytes(), digest_size=8)
    return int.from_bytes(digest.digest(), "little")


def simulate_curve(scenario: SimScenario, x: np.ndarray) -> LearningCurve:
    """Per-epoch validation accuracy and final test error of training ``x``."""
    x = scenario.space.check(np.asarray(x, dtype=float))
    diverged, floor, tau = (a[0] for a in scenario._parts(x))
    T = scenario.total_epochs
    if diverged:
        acc = np.full(T, scenario.chance_accuracy)
        return LearningCurve(acc, 1.0 - scenario.chance_accuracy, diverged=True)
    t = np.arange(1, T + 1)
    rng = np.random.default_rng(_point_seed(x))
    noise = scenario.jitter * (rng.random(T) - 0.5)
    acc = np.clip((1.0 - floor) * (1.0 - np.exp(-t / tau)) + noise, 0.0, 1.0)
    final = float(floor + (1.0 - floor) * np.exp(-T / tau))
    return LearningCurve(acc, final, diverged=False)


def true_metrics(scenario: SimScenario, z: np.ndarray):
    """Noise-free power and memory of one structural vector, or of each row of a batch."""
    z = np.asarray(z, dtype=float)
    p, m = z @ scenario.true_power_weights, z @ scenario.true_memory_weights
    return (float(p), float(m)) if z.ndim == 1 else (p, m)


def profile_offline(scenario: SimScenario, L: int, rng: np.random.Generator) -> list[ProfileSample]:
    """Randomly sampled structural configurations with noisy measured power and memory."""
    if L < 1:
        raise ValueError("need at least one profiling sample")
    space = scenario.space
    idx = space.structural_index
    lo, hi = space.lower[idx], space.upper[idx]
    samples = []
    for _ in range(L):
        z = np.floor(lo + rng.random(len(idx)) * (hi - lo + 1)).astype(np.int64)
        z = np.minimum(z, hi.astype(np.int64))
        p, m = true_metrics(scenario, z)
        ep, em = rng.standard_normal(2)
        samples.append(
            ProfileSample(z, p * (1.0 + scenario.power_noise * ep), m * (1.0 + scenario.memory_noise * em))
        )
    return samples


def epoch_cost(scenario: SimScenario, x: np.ndarray) -> float:
    z = scenario.space.extract_structural(np.asarray(x, dtype=float))
    return float(scenario.fixed_cost + scenario.unit_cost * z.sum())


def brute_force_optimum(
    scenario: SimScenario,
    budget: Budget,
    levels: dict[str, Sequence[float]] | int | None = None,
    max_points: int = 1_000_000,
) -> tuple[np.ndarray, float]:
    """Exhaustive minimizer over a grid, skipping true-metric budget violations.

    ``levels`` defaults to the scenario's declared discretization. Ties go to
    the lexicographically lowest point.
    """
    levels = levels if levels is not None else scenario.grid_levels
    if not levels:
        raise ValueError(f"scenario {scenario.name!r} declares no discretization grid")
    X = scenario.space.grid(levels)
    if len(X) > max_points:
        raise ValueError(f"grid has {len(X)} points, more than {max_points}")
    Z = scenario.space.extract_structural(X)
    ok = np.ones(len(X), dtype=bool)
    if budget.power is not None:
        ok &= Z @ scenario.true_power_weights <= budget.power
    if budget.memory is not None:
        ok &= Z @ scenario.true_memory_weights <= budget.memory
    if not ok.any():
        raise InfeasibleError("no grid point satisfies the budget")
    err = scenario.final_errors(X)
    err = np.where(ok, err, np.inf)
    i = int(np.argmin(err))
    return X[i], float(err[i])


class SimObjective:
    """Adapter exposing a scenario through the solver's objective interface."""

    def __init__(self, scenario: SimScenario):
        self.scenario = scenario
        self.num_classes = scenario.num_classes
        self.total_epochs = scenario.total_epochs

    def learning_curve(self, x: np.ndarray) -> LearningCurve:
        return simulate_curve(self.scenario, x)

    def epoch_cost(self, x: np.ndarray) -> float:
        return epoch_cost(self.scenario, x)

    def true_metrics(self, z: np.ndarray) -> tuple[float, float]:
        return true_metrics(self.scenario, z)


# -- shipped scenarios ----------------------------------------------------


def _features(name: str) -> ParamSpec:
    return ParamSpec(name, "integer", 20, 80, structural=True)


TRAINING_PARAMS = (
    ParamSpec("learning_rate", "log-continuous", 0.001, 0.1),
    ParamSpec("momentum", "continuous", 0.8, 0.95),
    ParamSpec("weight_decay", "log-continuous", 0.0001, 0.01),
)


def mnist_like() -> SimScenario:
    """Six hyper-parameters, three structural (two conv layers and one FC layer)."""
    space = SearchSpace(
        [
            _features("conv1_features"),
            _features("conv2_features"),
            ParamSpec("fc_units", "integer", 200, 700, structural=True),
            *TRAINING_PARAMS,
        ]
    )
    return SimScenario(
        name="mnist-like",
        space=space,
        true_power_weights=[0.30, 0.35, 0.08],
        true_memory_weights=[0.004, 0.005, 0.0012],
        power_noise=0.05,
        memory_noise=0.05,
        base_error=0.008,
        sensitivity=[0.35, 0.35, 0.30, 0.45, 0.15, 0.15],
        optimum=[0.65, 0.60, 0.55, 0.60, 0.70, 0.30],
        lr_param="learning_rate",
        lr_crit_base=0.2,
        coupling=1.5,
        fixed_cost=0.0005,
        unit_cost=1e-5,
        power_budget=85.0,
        memory_budget=1.15,
        grid_levels={
            "conv1_features": [20, 35, 50, 65, 80],
            "conv2_features": [20, 35, 50, 65, 80],
            "fc_units": [200, 325, 450, 575, 700],
            "learning_rate": [0.001, 0.00464, 0.0158, 0.0464],
            "momentum": [0.8, 0.9],
            "weight_decay": [0.0001, 0.001],
        },
    )


def cifar_like() -> SimScenario:
    """Thirteen hyper-parameters, eight structural (three conv layers, two FC layers)."""
    space = SearchSpace(
        [
            _features("conv1_features"),
            _features("conv2_features"),
            _features("conv3_features"),
            ParamSpec("conv1_kernel", "integer", 2, 5, structural=True),
            ParamSpec("conv2_kernel", "integer", 2, 5, structural=True),
            ParamSpec("conv3_kernel", "integer", 2, 5, structural=True),
            ParamSpec("fc1_units", "integer", 200, 700, structural=True),
            ParamSpec("fc2_units", "integer", 200, 700, structural=True),
            ParamSpec("pool1_kernel", "integer", 1, 3),
            ParamSpec("pool2_kernel", "integer", 1, 3),
            *TRAINING_PARAMS,
        ]
    )
    return SimScenario(
        name="cifar-like",
        space=space,
        true_power_weights=[0.284, 0.313, 0.355, 1.42, 1.71, 1.99, 0.0426, 0.0497],
        true_memory_weights=[0.0040, 0.0048, 0.0056, 0.016, 0.0192, 0.0224, 0.00064, 0.0008],
        power_noise=0.05,
        memory_noise=0.05,
        base_error=0.18,
        sensitivity=[0.08, 0.08, 0.08, 0.04, 0.04, 0.04, 0.06, 0.06, 0.03, 0.03, 0.30, 0.08, 0.08],
        optimum=[0.8, 0.8, 0.8, 0.6, 0.6, 0.6, 0.8, 0.8, 0.5, 0.5, 0.45, 0.7, 0.3],
        lr_param="learning_rate",
        lr_crit_base=0.03,
        coupling=2.0,
        fixed_cost=0.0005,
        unit_cost=2.5e-5,
        power_budget=90.0,
        memory_budget=1.25,
    )


SCENARIOS = {"mnist-like": mnist_like, "cifar-like": cifar_like}


def get_scenario(name: str) -> SimScenario:
    try:
        return SCENARIOS[name]()
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
