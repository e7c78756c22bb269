"""Hyper-parameter search space: sampling, normalization and structural extraction.

A :class:`SearchSpace` is an ordered list of :class:`ParamSpec`. The order is
the canonical vector layout used everywhere else: design points, normalized
GP inputs and the structural subvector ``z`` fed to the hardware models.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np

Kind = Literal["integer", "continuous", "log-continuous"]
KINDS = ("integer", "continuous", "log-continuous")


@dataclass(frozen=True)
class ParamSpec:
    """A single hyper-parameter.

    Attributes:
        name: Unique identifier.
        kind: ``integer``, ``continuous`` or ``log-continuous``.
        lower: Inclusive lower bound.
        upper: Inclusive upper bound.
        structural: True when the parameter changes the network shape and
            therefore its power and memory footprint.
    """

    name: str
    kind: Kind
    lower: float
    upper: float
    structural: bool = False

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")
        if not self.lower < self.upper:
            raise ValueError(
                f"{self.name}: lower ({self.lower}) must be less than upper ({self.upper})"
            )
        if self.kind == "integer" and not (
            float(self.lower).is_integer() and float(self.upper).is_integer()
        ):
            raise ValueError(f"{self.name}: integer parameters need integer bounds")
        if self.kind == "log-continuous" and self.lower <= 0:
            raise ValueError(f"{self.name}: log-continuous parameters need lower > 0")
        if self.structural and self.lower < 0:
            raise ValueError(f"{self.name}: structural parameters must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "lower": self.lower,
            "upper": self.upper,
            "structural": self.structural,
        }


class SearchSpace:
    """Ordered collection of :class:`ParamSpec`.

    Examples:
        >>> space = SearchSpace([
        ...     ParamSpec("features", "integer", 20, 80, structural=True),
        ...     ParamSpec("lr", "log-continuous", 1e-3, 1e-1),
        ... ])
        >>> space.dim, space.n_structural
        (2, 1)
    """

    def __init__(self, params: Iterable[ParamSpec]):
        self.params: tuple[ParamSpec, ...] = tuple(params)
        if not self.params:
            raise ValueError("search space needs at least one parameter")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")

        self.lower = np.array([p.lower for p in self.params], dtype=float)
        self.upper = np.array([p.upper for p in self.params], dtype=float)
        self.is_integer = np.array([p.kind == "integer" for p in self.params])
        self.is_log = np.array([p.kind == "log-continuous" for p in self.params])
        self.structural_index = np.flatnonzero([p.structural for p in self.params])
        # bounds in the domain where the normalization is affine
        self._lo = np.where(self.is_log, np.log(np.where(self.is_log, self.lower, 1.0)), self.lower)
        self._hi = np.where(self.is_log, np.log(np.where(self.is_log, self.upper, 1.0)), self.upper)

    def __len__(self) -> int:
        return len(self.params)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SearchSpace) and self.params == other.params

    def __repr__(self) -> str:
        return f"SearchSpace({[p.name for p in self.params]})"

    @property
    def dim(self) -> int:
        return len(self.params)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def n_structural(self) -> int:
        return len(self.structural_index)

    @property
    def structural_names(self) -> list[str]:
        return [self.params[i].name for i in self.structural_index]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_list(self) -> list[dict]:
        return [p.to_dict() for p in self.params]

    @classmethod
    def from_list(cls, blocks: Sequence[dict]) -> "SearchSpace":
        return cls(
            ParamSpec(
                name=str(b["name"]),
                kind=b["kind"],
                lower=float(b["lower"]),
                upper=float(b["upper"]),
                structural=bool(b.get("structural", False)),
            )
            for b in blocks
        )

    # -- validation -------------------------------------------------------

    def contains(self, x: np.ndarray, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,) or not np.all(np.isfinite(x)):
            return False
        if np.any(x < self.lower - atol) or np.any(x > self.upper + atol):
            return False
        ints = x[self.is_integer]
        return bool(np.all(ints == np.round(ints)))

    def check(self, x: np.ndarray) -> np.ndarray:
        """Return ``x`` as a float array, raising ``ValueError`` if out of bounds."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise ValueError(f"expected {self.dim} coordinates, got shape {x.shape}")
        bad = (x < self.lower) | (x > self.upper) | ~np.isfinite(x)
        if np.any(bad):
            cols = sorted({self.params[j].name for j in np.nonzero(bad)[-1]})
            raise ValueError(f"design point out of bounds in {cols}")
        return x

    # -- operations -------------------------------------------------------

    def sample_uniform(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Draw one point (``n=None``) or an ``(n, dim)`` batch uniformly.

        Continuous coordinates are uniform on ``[lower, upper]``, integer
        coordinates uniform on the inclusive integer range and log-continuous
        coordinates uniform in log-space.
        """
        size = (1 if n is None else n, self.dim)
        u = rng.random(size)
        out = np.empty(size)
        ints = self.is_integer
        # integer range is inclusive: floor over (upper - lower + 1) bins
        span = self.upper[ints] - self.lower[ints] + 1.0
        out[:, ints] = self.lower[ints] + np.minimum(np.floor(u[:, ints] * span), span - 1)
        cont = ~ints
        out[:, cont] = self._from_affine(u[:, cont], cont)
        return out[0] if n is None else out

    def _from_affine(self, u: np.ndarray, cols: np.ndarray) -> np.ndarray:
        v = self._lo[cols] + u * (self._hi[cols] - self._lo[cols])
        v = np.where(self.is_log[cols], np.exp(v), v)
        # exp/log round-off must not leave the box
        return np.clip(v, self.lower[cols], self.upper[cols])

    def normalize(self, x: np.ndarray) -> np.ndarray:
        """Map in-bounds points to the unit cube (log-affine for log kinds)."""
        x = self.check(x)
        v = np.where(self.is_log, np.log(np.where(self.is_log, x, 1.0)), x)
        return (v - self._lo) / (self._hi - self._lo)

    def denormalize(self, u: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`normalize`; no rounding is applied."""
        u = np.asarray(u, dtype=float)
        v = self._lo + u * (self._hi - self._lo)
        return np.where(self.is_log, np.exp(v), v)

    def extract_structural(self, x: np.ndarray) -> np.ndarray:
        """Structural coordinates of ``x`` (or of each row) as integers."""
        x = np.asarray(x, dtype=float)
        z = np.trunc(x[..., self.structural_index]).astype(np.int64)
        if np.any(z < 0):
            raise ValueError("structural coordinates must be nonnegative")
        return z

    def clip_round(self, raw: np.ndarray) -> np.ndarray:
        """Clip into bounds, then round integer coordinates to the nearest whole value."""
        raw = np.asarray(raw, dtype=float)
        if raw.shape[-1:] != (self.dim,):
            raise ValueError(f"expected {self.dim} coordinates, got shape {raw.shape}")
        x = np.clip(raw, self.lower, self.upper)
        # bounds are whole numbers, so rounding cannot leave the box
        return np.where(self.is_integer, np.floor(x + 0.5), x)

    def grid(self, levels: dict[str, Sequence[float]] | int) -> np.ndarray:
        """Cartesian grid in canonical lexicographic order.

        ``levels`` is either a per-parameter list of values or a single count
        of evenly spaced (in the normalized domain) levels per parameter.
        """
        axes = []
        for j, p in enumerate(self.params):
            if isinstance(levels, int):
                vals = np.clip(self.denormalize_axis(j, np.linspace(0.0, 1.0, levels)), p.lower, p.upper)
            else:
                vals = np.asarray(levels[p.name], dtype=float)
            if p.kind == "integer":
                vals = np.unique(np.floor(vals + 0.5))
            axes.append(vals)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        self.check(pts)
        return pts

    def denormalize_axis(self, j: int, u: np.ndarray) -> np.ndarray:
        v = self._lo[j] + np.asarray(u) * (self._hi[j] - self._lo[j])
        return np.exp(v) if self.is_log[j] else v
