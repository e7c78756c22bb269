"""Linear power and memory predictors over structural hyper-parameters.

Both metrics are modelled as a pure weighted sum of the structural vector,
``P(z) = sum_j w_j z_j``, fitted by ordinary least squares and scored with
k-fold cross-validated RMSPE.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy.special import ndtr

Metric = Literal["power", "memory"]
METRICS: tuple[Metric, ...] = ("power", "memory")
MODEL_FILE_VERSION = 1


class RankDeficientError(ValueError):
    """Structural design matrix lacks full column rank."""

    def __init__(self, column: str | int, message: str):
        super().__init__(message)
        self.column = column


class DataFormatError(ValueError):
    """Malformed profiling or model file."""


@dataclass(frozen=True)
class ProfileSample:
    z: np.ndarray
    power: float
    memory: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "z", np.asarray(self.z, dtype=np.int64))
        if not (self.power > 0 and self.memory > 0):
            raise ValueError("profiled power and memory must be positive")

    def value(self, metric: Metric) -> float:
        return self.power if metric == "power" else self.memory


@dataclass(frozen=True)
class HwLinearModel:
    weights: np.ndarray
    metric: Metric
    residual_std: float = 0.0
    rmspe: float = 0.0
    intercept: float = 0.0
    names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.residual_std < 0:
            raise ValueError("residual_std must be nonnegative")

    @property
    def n_features(self) -> int:
        return len(self.weights)

    def predict(self, z: np.ndarray) -> np.ndarray | float:
        return predict(self, z)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "weights": [float(w) for w in self.weights],
            "intercept": float(self.intercept),
            "residual_std": float(self.residual_std),
            "rmspe": float(self.rmspe),
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HwLinearModel":
        return cls(
            weights=np.asarray(d["weights"], dtype=float),
            metric=d["metric"],
            residual_std=float(d["residual_std"]),
            rmspe=float(d.get("rmspe", 0.0)),
            intercept=float(d.get("intercept", 0.0)),
            names=tuple(d.get("names", ())),
        )


@dataclass(frozen=True)
class Budget:
    """Power (watts) and memory (GB) limits; ``None`` disables a limit."""

    power: float | None = None
    memory: float | None = None

    def __post_init__(self) -> None:
        for name in ("power", "memory"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} budget must be positive")

    def limit(self, metric: Metric) -> float | None:
        return self.power if metric == "power" else self.memory


def _design(samples: Sequence[ProfileSample], intercept: bool) -> np.ndarray:
    Z = np.array([s.z for s in samples], dtype=float)
    if intercept:
        Z = np.hstack([Z, np.ones((len(Z), 1))])
    return Z


def fit_linear(
    samples: Sequence[ProfileSample],
    metric: Metric,
    intercept: bool = False,
    names: Sequence[str] = (),
) -> HwLinearModel:
    """Ordinary least squares fit of one metric on the structural vectors.

    Raises:
        RankDeficientError: if the design matrix does not have full column
            rank; the first dependent column is reported.
    """
    if not samples:
        raise ValueError("no profiling samples")
    A = _design(samples, intercept)
    t = np.array([s.value(metric) for s in samples])
    L, J = A.shape
    if L < J:
        raise RankDeficientError(J - 1, f"{L} samples cannot determine {J} weights")
    # locate the first column that adds no rank
    for j in range(1, J + 1):
        if np.linalg.matrix_rank(A[:, :j]) < j:
            col = names[j - 1] if j - 1 < len(names) else j - 1
            raise RankDeficientError(col, f"design matrix rank deficient at column {col!r}")
    coef, *_ = np.linalg.lstsq(A, t, rcond=None)
    resid = t - A @ coef
    w, b = (coef[:-1], float(coef[-1])) if intercept else (coef, 0.0)
    return HwLinearModel(
        weights=w,
        metric=metric,
        residual_std=float(np.std(resid)),
        intercept=b,
        names=tuple(names),
    )


def predict(model: HwLinearModel, z: np.ndarray) -> np.ndarray | float:
    """Weighted sum of structural coordinates; accepts one vector or a batch."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.n_features:
        raise ValueError(f"expected {model.n_features} structural values, got {z.shape[-1]}")
    out = z @ model.weights + model.intercept
    return float(out) if np.ndim(out) == 0 else out


def rmspe(preds: Sequence[float], actuals: Sequence[float]) -> float:
    """Root mean square percentage error, in percent."""
    p = np.asarray(preds, dtype=float)
    a = np.asarray(actuals, dtype=float)
    if p.shape != a.shape or p.size == 0:
        raise ValueError("preds and actuals must be nonempty and equal length")
    if np.any(a == 0):
        raise ValueError("RMSPE undefined for zero actual values")
    return float(100.0 * np.sqrt(np.mean(((p - a) / a) ** 2)))


def fold_indices(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Seeded shuffle then contiguous split into ``k`` folds (sizes differ by at most one)."""
    return np.array_split(rng.permutation(n), k)


def cross_validate(
    samples: Sequence[ProfileSample],
    metric: Metric,
    k: int = 10,
    rng: np.random.Generator | None = None,
    intercept: bool = False,
) -> float:
    """Pooled k-fold cross-validated RMSPE (percent) of :func:`fit_linear`."""
    n = len(samples)
    if n < k:
        raise ValueError(f"need at least k={k} samples, got {n}")
    rng = rng if rng is not None else np.random.default_rng(0)
    preds = np.empty(n)
    actual = np.array([s.value(metric) for s in samples])
    for fold in fold_indices(n, k, rng):
        held = set(fold.tolist())
        train = [s for i, s in enumerate(samples) if i not in held]
        model = fit_linear(train, metric, intercept=intercept)
        Zf = np.array([samples[i].z for i in fold], dtype=float)
        preds[fold] = predict(model, Zf)
    return rmspe(preds, actual)


def fit_with_cv(
    samples: Sequence[ProfileSample],
    metric: Metric,
    k: int = 10,
    seed: int = 0,
    intercept: bool = False,
    names: Sequence[str] = (),
) -> HwLinearModel:
    """Fit on all samples and attach the cross-validated RMSPE."""
    model = fit_linear(samples, metric, intercept=intercept, names=names)
    score = cross_validate(samples, metric, k=k, rng=np.random.default_rng(seed), intercept=intercept)
    return HwLinearModel(
        weights=model.weights,
        metric=metric,
        residual_std=model.residual_std,
        rmspe=score,
        intercept=model.intercept,
        names=model.names,
    )


def check_budget(
    power_model: HwLinearModel | None,
    memory_model: HwLinearModel | None,
    z: np.ndarray,
    budget: Budget,
) -> tuple[bool, float | None, float | None]:
    """Predicted feasibility of ``z``; equality with a budget counts as feasible."""
    p = predict(power_model, z) if power_model is not None else None
    m = predict(memory_model, z) if memory_model is not None else None
    ok = True
    if budget.power is not None and p is not None:
        ok = ok and p <= budget.power
    if budget.memory is not None and m is not None:
        ok = ok and m <= budget.memory
    return bool(ok), p, m


def feasible_mask(
    power_model: HwLinearModel | None,
    memory_model: HwLinearModel | None,
    Z: np.ndarray,
    budget: Budget,
) -> np.ndarray:
    """Vectorized :func:`check_budget` over rows of ``Z``."""
    Z = np.atleast_2d(Z)
    mask = np.ones(len(Z), dtype=bool)
    if budget.power is not None and power_model is not None:
        mask &= predict(power_model, Z) <= budget.power
    if budget.memory is not None and memory_model is not None:
        mask &= predict(memory_model, Z) <= budget.memory
    return mask


def satisfaction_probability(model: HwLinearModel | None, Z: np.ndarray, limit: float | None) -> np.ndarray:
    """Gaussian probability that the metric stays within ``limit`` for each row of ``Z``.

    With zero residual spread this is the hard indicator.
    """
    Z = np.atleast_2d(Z)
    if model is None or limit is None:
        return np.ones(len(Z))
    slack = limit - predict(model, Z)
    if model.residual_std == 0:
        return (slack >= 0).astype(float)
    with np.errstate(over="ignore"):
        return ndtr(slack / model.residual_std)


# -- file formats ---------------------------------------------------------


def write_profile(path: str | Path, names: Sequence[str], samples: Iterable[ProfileSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*names, "power", "memory"])
        for s in samples:
            w.writerow([*(int(v) for v in s.z), repr(float(s.power)), repr(float(s.memory))])


def read_profile(path: str | Path) -> tuple[list[str], list[ProfileSample]]:
    """Parse a profiling CSV; errors name the offending line number."""
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataFormatError(f"{path}: empty profile file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[-2:] != ["power", "memory"]:
        raise DataFormatError(f"{path}:1: header must end with 'power,memory'")
    names = header[:-2]
    samples = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            zf = [float(c) for c in row[:-2]]
            power, memory = float(row[-2]), float(row[-1])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
        if any(v != int(v) or v < 0 for v in zf):
            raise DataFormatError(f"{path}:{lineno}: structural values must be nonnegative integers")
        try:
            samples.append(ProfileSample(np.array(zf, dtype=np.int64), power, memory))
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if not samples:
        raise DataFormatError(f"{path}: no data rows")
    return names, samples


def save_models(path: str | Path, models: dict[str, HwLinearModel], extra: dict | None = None) -> None:
    doc = {"version": MODEL_FILE_VERSION, "models": {k: m.to_dict() for k, m in models.items()}}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_models(path: str | Path) -> dict[str, HwLinearModel]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: {exc}") from None
    if doc.get("version") != MODEL_FILE_VERSION:
        raise DataFormatError(f"{path}: unsupported model file version {doc.get('version')!r}")
    return {k: HwLinearModel.from_dict(v) for k, v in doc["models"].items()}
