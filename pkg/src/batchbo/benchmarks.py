"""Synthetic test objectives with their usual domains and known optima."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .domain import SearchDomain

__all__ = [
    "Benchmark",
    "forrester",
    "dropwave",
    "hartmann",
    "alpine2",
    "gsobol",
    "REGISTRY",
    "get_benchmark",
]

# Hartmann constants (Dixon & Szego; as tabulated in the Surjanovic & Bingham
# virtual library of simulation experiments).
HARTMANN_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
HARTMANN3_A = np.array([
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
])
HARTMANN3_P = 1e-4 * np.array([
    [3689, 1170, 2673],
    [4699, 4387, 7470],
    [1091, 8732, 5547],
    [381, 5743, 8828],
])
HARTMANN6_A = np.array([
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
])
HARTMANN6_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
])
HARTMANN3_ARGMIN = np.array([0.114614, 0.555649, 0.852547])
HARTMANN6_ARGMIN = np.array([0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573])


def forrester(x) -> float:
    x = float(np.asarray(x, dtype=float).reshape(-1)[0])
    return (6.0 * x - 2.0) ** 2 * np.sin(12.0 * x - 4.0)


def dropwave(x) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != 2:
        raise ValueError("dropwave is two-dimensional")
    r2 = x[0] ** 2 + x[1] ** 2
    return float(-(1.0 + np.cos(12.0 * np.sqrt(r2))) / (0.5 * r2 + 2.0))


def hartmann(x) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size == 3:
        A, P = HARTMANN3_A, HARTMANN3_P
    elif x.size == 6:
        A, P = HARTMANN6_A, HARTMANN6_P
    else:
        raise ValueError("hartmann is defined for 3 or 6 dimensions")
    inner = np.sum(A * (x[None, :] - P) ** 2, axis=1)
    return float(-np.sum(HARTMANN_ALPHA * np.exp(-inner)))


def alpine2(x) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    return float(np.prod(np.sin(x) * np.sqrt(x)))


def gsobol(x, a=1.0) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    a = np.broadcast_to(np.asarray(a, dtype=float), x.shape)
    return float(np.prod((np.abs(4.0 * x - 2.0) + a) / (1.0 + a)))


@dataclass(frozen=True)
class Benchmark:
    """A registered objective.

    ``optimum`` is the analytic best value in the benchmark's own ``sense``;
    ``listed_optimum`` keeps the published value where the two differ.
    """

    name: str
    dim: int
    domain: SearchDomain
    function: Callable[[np.ndarray], float]
    optimum: float
    sense: str = "min"
    listed_optimum: Optional[float] = None
    argopt: Optional[np.ndarray] = None

    @property
    def key(self) -> str:
        return f"{self.name}-{self.dim}"

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise ValueError(f"{self.key} expects {self.dim} coordinates, got {x.size}")
        if not np.all(self.domain.contains(x, atol=1e-12)):
            raise ValueError(f"{x.tolist()} lies outside the {self.key} domain")
        y = float(self.function(x))
        if not np.isfinite(y):
            raise FloatingPointError(f"{self.key} returned {y} at {x.tolist()}")
        return y

    __call__ = evaluate

    def as_maximization(self) -> Callable[[np.ndarray], float]:
        """Objective to maximize: ``f`` itself or ``-f`` for minimization problems."""
        if self.sense == "max":
            return self.evaluate
        return lambda x: -self.evaluate(x)

    @property
    def max_optimum(self) -> float:
        """Optimum expressed in the maximization convention."""
        return self.optimum if self.sense == "max" else -self.optimum


def _make(name: str, dim: int) -> Benchmark:
    if name == "forrester":
        if dim != 1:
            raise ValueError("forrester is one-dimensional")
        return Benchmark("forrester", 1, SearchDomain([0.0], [1.0]), forrester, -6.020740055767083,
                         listed_optimum=-6.0, argopt=np.array([0.7572487144081974]))
    if name == "dropwave":
        if dim != 2:
            raise ValueError("dropwave is two-dimensional")
        return Benchmark("dropwave", 2, SearchDomain.cube(-5.12, 5.12, 2), dropwave, -1.0,
                         listed_optimum=-1.0, argopt=np.zeros(2))
    if name == "hartmann":
        if dim == 3:
            return Benchmark("hartmann", 3, SearchDomain.cube(0.0, 1.0, 3), hartmann, -3.86278,
                             listed_optimum=-3.86276, argopt=HARTMANN3_ARGMIN)
        if dim == 6:
            return Benchmark("hartmann", 6, SearchDomain.cube(0.0, 1.0, 6), hartmann, -3.32237,
                             listed_optimum=-3.32237, argopt=HARTMANN6_ARGMIN)
        raise ValueError("hartmann is defined for 3 or 6 dimensions")
    if name == "alpine2":
        # the product form peaks at +2.808^D; the listed optimum carries a minus sign
        return Benchmark("alpine2", dim, SearchDomain.cube(0.0, 10.0, dim), alpine2, 2.808 ** dim, sense="max",
                         listed_optimum=-(2.808 ** dim), argopt=np.full(dim, 7.917))
    if name == "gsobol":
        # with a_i = 1 every factor is at least 1/2, so the minimum is 0.5^D, not the listed 0
        return Benchmark("gsobol", dim, SearchDomain.cube(-4.0, 6.0, dim), gsobol, 0.5 ** dim,
                         listed_optimum=0.0, argopt=np.full(dim, 0.5))
    raise KeyError(name)


REGISTRY_KEYS = (
    "forrester-1",
    "dropwave-2",
    "hartmann-3",
    "hartmann-6",
    "alpine2-5",
    "alpine2-10",
    "gsobol-5",
    "gsobol-10",
)

REGISTRY: dict[str, Benchmark] = {}
for _key in REGISTRY_KEYS:
    _name, _dim = _key.rsplit("-", 1)
    REGISTRY[_key] = _make(_name, int(_dim))


def get_benchmark(key: str) -> Benchmark:
    """Look up ``name-dim`` (e.g. ``"hartmann-6"``)."""
    try:
        return REGISTRY[key]
    except KeyError:
        raise KeyError(f"unknown benchmark {key!r}; available: {', '.join(REGISTRY_KEYS)}") from None
