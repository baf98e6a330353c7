"""Core value types: search boxes, observation sets, random streams, run configuration."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "SearchDomain",
    "ObservationSet",
    "RngStream",
    "RunConfig",
    "uniform_point",
    "clip_to_domain",
]


class SearchDomain:
    """Axis-aligned box ``[lower, upper]`` in ``R^D``.

    Instances are immutable; the bound arrays are stored read-only.
    """

    __slots__ = ("_lower", "_upper")

    def __init__(self, lower: Sequence[float], upper: Sequence[float]):
        lo = np.array(lower, dtype=float).reshape(-1)
        hi = np.array(upper, dtype=float).reshape(-1)
        if lo.size == 0:
            raise ValueError("a search domain needs at least one dimension")
        if lo.shape != hi.shape:
            raise ValueError(f"bound lengths differ: {lo.size} vs {hi.size}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("domain bounds must be finite")
        bad = np.flatnonzero(~(lo < hi))
        if bad.size:
            raise ValueError(f"degenerate or inverted bounds on axes {bad.tolist()}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        self._lower = lo
        self._upper = hi

    @classmethod
    def cube(cls, low: float, high: float, dim: int) -> "SearchDomain":
        return cls([low] * dim, [high] * dim)

    @property
    def lower(self) -> np.ndarray:
        return self._lower

    @property
    def upper(self) -> np.ndarray:
        return self._upper

    @property
    def dim(self) -> int:
        return self._lower.size

    @property
    def width(self) -> np.ndarray:
        return self._upper - self._lower

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.width))

    @property
    def bounds(self) -> np.ndarray:
        """``(D, 2)`` array of ``[lower, upper]`` rows."""
        return np.column_stack([self._lower, self._upper])

    def contains(self, points, atol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self._lower - atol) & (pts <= self._upper + atol), axis=1)

    def to_unit(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self._lower) / self.width

    def from_unit(self, points) -> np.ndarray:
        return self._lower + np.asarray(points, dtype=float) * self.width

    def __eq__(self, other) -> bool:
        if not isinstance(other, SearchDomain):
            return NotImplemented
        return bool(np.array_equal(self._lower, other._lower) and np.array_equal(self._upper, other._upper))

    def __hash__(self) -> int:
        return hash((self._lower.tobytes(), self._upper.tobytes()))

    def __repr__(self) -> str:
        return f"SearchDomain(lower={self._lower.tolist()}, upper={self._upper.tolist()})"


class ObservationSet:
    """Evaluated inputs ``X`` (N x D) and their outcomes ``y`` (N,)."""

    __slots__ = ("_X", "_y")

    def __init__(self, inputs, outcomes, domain: Optional[SearchDomain] = None):
        X = np.array(inputs, dtype=float)
        y = np.array(outcomes, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(len(y), -1) if len(y) else X.reshape(0, 1 if domain is None else domain.dim)
        if X.ndim != 2:
            raise ValueError("inputs must be a 2-D array")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} outcomes")
        if domain is not None:
            if X.shape[1] != domain.dim:
                raise ValueError(f"inputs have {X.shape[1]} columns, domain has {domain.dim}")
            X = clip_to_domain(X, domain)
        X.flags.writeable = False
        y.flags.writeable = False
        self._X = X
        self._y = y

    @classmethod
    def empty(cls, dim: int) -> "ObservationSet":
        return cls(np.empty((0, dim)), np.empty(0))

    @property
    def inputs(self) -> np.ndarray:
        return self._X

    @property
    def outcomes(self) -> np.ndarray:
        return self._y

    @property
    def dim(self) -> int:
        return self._X.shape[1]

    def __len__(self) -> int:
        return self._y.shape[0]

    def append(self, inputs, outcomes) -> "ObservationSet":
        """Return a new set with the given rows added."""
        X = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.atleast_1d(np.asarray(outcomes, dtype=float))
        return ObservationSet(np.vstack([self._X, X]), np.concatenate([self._y, y]))

    def best(self) -> tuple[np.ndarray, float]:
        """Location and value of the largest outcome."""
        if len(self) == 0:
            raise ValueError("no observations")
        i = int(np.argmax(self._y))
        return self._X[i].copy(), float(self._y[i])

    def __repr__(self) -> str:
        return f"ObservationSet(N={len(self)}, D={self.dim})"


StreamId = Union[int, Sequence[int]]


class RngStream:
    """Deterministic random stream identified by ``(seed, stream_id)``.

    ``stream_id`` may be a single integer or a path of integers; ``child``
    extends the path so that replicates, iterations and sampler chains each
    receive an independent stream derived only from their coordinates.
    Streams are stateful and must not be shared between workers.
    """

    def __init__(self, seed: int = 0, stream_id: StreamId = ()):
        if int(seed) < 0:
            raise ValueError("seed must be non-negative")
        if isinstance(stream_id, (int, np.integer)):
            stream_id = (int(stream_id),)
        path = tuple(int(s) for s in stream_id)
        if any(s < 0 for s in path):
            raise ValueError("stream ids must be non-negative")
        self.seed = int(seed)
        self.stream_id = path
        ss = np.random.SeedSequence(self.seed, spawn_key=path)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id + tuple(int(i) for i in ids))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def uniform_point(domain: SearchDomain, rng: RngStream, size: Optional[int] = None) -> np.ndarray:
    """Draw one point (or ``size`` points) uniformly from ``domain``."""
    shape = (domain.dim,) if size is None else (size, domain.dim)
    return rng.uniform(domain.lower, domain.upper, shape)


def clip_to_domain(point, domain: SearchDomain) -> np.ndarray:
    return np.clip(np.asarray(point, dtype=float), domain.lower, domain.upper)


@dataclass(frozen=True)
class RunConfig:
    """Settings for one experiment.

    ``None`` for ``iterations``, ``initial_points``, ``batch_size`` or
    ``gamma`` means "use the dimension-dependent default": ``10*D``
    iterations, ``3*D`` initial points, a fixed batch of 3 below five
    dimensions and ``D`` otherwise, and a kernel ``gamma`` of ``0.1*D``.
    """

    function: str
    strategy: str = "b3o"
    dim: Optional[int] = None
    iterations: Optional[int] = None
    initial_points: Optional[int] = None
    batch_size: Optional[int] = None
    beta_sqrt: float = 2.0
    gamma: Optional[float] = None
    replicates: int = 20
    seed: int = 0
    normalize: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.dim is None and "-" in self.function:
            tail = self.function.rsplit("-", 1)[1]
            if tail.isdigit():
                object.__setattr__(self, "dim", int(tail))
        if self.dim is None or self.dim < 1:
            raise ValueError(f"cannot determine a positive dimension for {self.function!r}")
        for name in ("iterations", "initial_points", "batch_size", "replicates", "jobs"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.beta_sqrt <= 0:
            raise ValueError("beta_sqrt must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def T(self) -> int:
        return self.iterations if self.iterations is not None else 10 * self.dim

    @property
    def n0(self) -> int:
        return self.initial_points if self.initial_points is not None else 3 * self.dim

    @property
    def q(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 3 if self.dim < 5 else self.dim

    @property
    def kernel_gamma(self) -> float:
        return self.gamma if self.gamma is not None else 0.1 * self.dim

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
