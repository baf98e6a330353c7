"""Acquisition functions over a GP posterior and a box-constrained global search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .domain import RngStream, SearchDomain, uniform_point

__all__ = [
    "AcquisitionSpec",
    "Acquisition",
    "AcquisitionOptimum",
    "AcquisitionMinimum",
    "acq_from_moments",
    "acq_value",
    "minimize_on_box",
    "find_min",
    "find_max",
]

KINDS = ("PI", "EI", "UCB")


@dataclass(frozen=True)
class AcquisitionSpec:
    """Which acquisition to use and its parameters.

    ``incumbent`` is the best observed outcome (required by PI and EI);
    ``beta_sqrt`` scales the standard deviation in UCB.
    """

    kind: str = "UCB"
    beta_sqrt: float = 2.0
    incumbent: Optional[float] = None

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in KINDS:
            raise ValueError(f"unknown acquisition {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "UCB" and not self.beta_sqrt > 0:
            raise ValueError("beta_sqrt must be positive for UCB")
        if kind in ("PI", "EI") and self.incumbent is None:
            raise ValueError(f"{kind} needs an incumbent value")

    @classmethod
    def for_outcomes(cls, kind: str, outcomes, beta_sqrt: float = 2.0) -> "AcquisitionSpec":
        """Build a spec whose incumbent is the maximum of ``outcomes``."""
        y = np.asarray(outcomes, dtype=float)
        incumbent = float(np.max(y)) if y.size else None
        if kind.upper() == "UCB":
            incumbent = None
        return cls(kind, beta_sqrt, incumbent)


def acq_from_moments(spec: AcquisitionSpec, mean, std) -> np.ndarray:
    """Acquisition values from predictive means and standard deviations."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
        raise FloatingPointError("non-finite GP prediction")
    if spec.kind == "UCB":
        return mean + spec.beta_sqrt * std
    tau = spec.incumbent
    pos = std > 0
    safe = np.where(pos, std, 1.0)
    # a subnormal std can push u to +-inf; the limits below are still right
    with np.errstate(over="ignore"):
        u = (mean - tau) / safe
        if spec.kind == "PI":
            degenerate = np.where(mean > tau, 1.0, np.where(mean < tau, 0.0, 0.5))
            return np.where(pos, norm.cdf(u), degenerate)
        ei = (mean - tau) * norm.cdf(u) + safe * norm.pdf(u)
    # cancellation for very negative u can leave tiny negatives
    return np.where(pos, np.maximum(ei, 0.0), 0.0)


class Acquisition:
    """Acquisition surface bound to a model; callable on an ``(n, D)`` array.

    An unfitted model serves the prior ``(0, signal_variance)`` everywhere.
    """

    def __init__(self, spec: AcquisitionSpec, gp):
        self.spec = spec
        self.gp = gp

    def moments(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if hasattr(self.gp, "alpha_"):
            return self.gp.predict(X, return_std=True)
        n = X.shape[0]
        return np.zeros(n), np.full(n, np.sqrt(self.gp.signal_variance))

    def __call__(self, X) -> np.ndarray:
        mean, std = self.moments(X)
        return acq_from_moments(self.spec, mean, std)


def acq_value(spec: AcquisitionSpec, gp, x):
    """Acquisition at a single point (float) or at each row of a matrix."""
    x = np.asarray(x, dtype=float)
    vals = Acquisition(spec, gp)(x if x.ndim == 2 else x.reshape(1, -1))
    return float(vals[0]) if x.ndim < 2 else vals


@dataclass(frozen=True)
class AcquisitionOptimum:
    location: np.ndarray
    value: float


AcquisitionMinimum = AcquisitionOptimum


def _best_index(X: np.ndarray, f: np.ndarray) -> int:
    # lowest value, ties to the lexicographically smallest location
    keys = tuple(X[:, ::-1].T) + (f,)
    return int(np.lexsort(keys)[0])


def minimize_on_box(fun: Callable[[np.ndarray], np.ndarray], domain: SearchDomain, rng: RngStream,
                    n_screen: int = 1000, n_starts: Optional[int] = None, budget: Optional[int] = None,
                    step_frac: float = 0.1, tol: float = 1e-7) -> AcquisitionOptimum:
    """Multi-start compass search for the minimum of a vectorized function.

    ``fun`` maps an ``(n, D)`` array to ``n`` values. A uniform screen of
    ``n_screen`` points seeds ``n_starts`` (default ``20 + 5*D``) pattern
    searches that share ``budget`` (default ``2000*D``) further evaluations.
    The result is never worse than any screened point.
    """
    D = domain.dim
    n_starts = 20 + 5 * D if n_starts is None else n_starts
    budget = 2000 * D if budget is None else budget
    lo, hi, width = domain.lower, domain.upper, domain.width

    screen = uniform_point(domain, rng, size=max(n_screen, n_starts))
    fs = np.asarray(fun(screen), dtype=float)
    order = np.lexsort(tuple(screen[:, ::-1].T) + (fs,))[:n_starts]
    x = screen[order].copy()
    fx = fs[order].copy()
    step = np.full(len(x), step_frac)
    active = np.ones(len(x), dtype=bool)

    eye = np.eye(D)
    dirs = np.vstack([eye, -eye])  # (2D, D)
    used = 0
    while used < budget and active.any():
        idx = np.flatnonzero(active)
        per = 2 * D
        if used + per * len(idx) > budget:
            idx = idx[: max(1, (budget - used) // per)]
        polls = x[idx, None, :] + step[idx, None, None] * dirs[None, :, :] * width
        polls = np.clip(polls, lo, hi).reshape(-1, D)
        fp = np.asarray(fun(polls), dtype=float).reshape(len(idx), per)
        used += polls.shape[0]
        j = np.argmin(fp, axis=1)
        best = fp[np.arange(len(idx)), j]
        better = best < fx[idx]
        moved = idx[better]
        x[moved] = polls.reshape(len(idx), per, D)[better, j[better]]
        fx[moved] = best[better]
        stalled = idx[~better]
        step[stalled] *= 0.5
        active[stalled[step[stalled] < tol]] = False

    allx = np.vstack([screen, x])
    allf = np.concatenate([fs, fx])
    i = _best_index(allx, allf)
    return AcquisitionOptimum(allx[i].copy(), float(allf[i]))


def find_min(acquisition: Callable, domain: SearchDomain, rng: RngStream, **kwargs) -> AcquisitionOptimum:
    """Smallest acquisition value found over ``domain``."""
    return minimize_on_box(acquisition, domain, rng, **kwargs)


def find_max(acquisition: Callable, domain: SearchDomain, rng: RngStream, **kwargs) -> AcquisitionOptimum:
    """Largest acquisition value found over ``domain``."""
    res = minimize_on_box(lambda X: -np.asarray(acquisition(X), dtype=float), domain, rng, **kwargs)
    return AcquisitionOptimum(res.location, -res.value)
