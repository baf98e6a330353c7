"""Replicated experiments, trace files and a file-backed ask/tell session."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .benchmarks import REGISTRY_KEYS, get_benchmark
from .domain import ObservationSet, RngStream, RunConfig, SearchDomain, clip_to_domain, uniform_point
from .gp import GaussianProcess
from .strategies import STRATEGIES, B3OSettings, RunHistory, make_strategy, run_loop

__all__ = [
    "TRACE_HEADER",
    "CONFIG_KEYS",
    "ExperimentResult",
    "UsageError",
    "SessionError",
    "run_experiment",
    "write_traces",
    "write_summary",
    "read_config_file",
    "config_from_mapping",
    "init_session",
    "ask",
    "tell",
]

log = logging.getLogger(__name__)

TRACE_HEADER = ("replicate", "iteration", "batch_size", "cum_evaluations", "best_value", "wall_ms")

# config-file key -> RunConfig field
CONFIG_KEYS = {
    "function": "function",
    "strategy": "strategy",
    "iters": "iterations",
    "init": "initial_points",
    "batch": "batch_size",
    "beta-sqrt": "beta_sqrt",
    "gamma": "gamma",
    "replicates": "replicates",
    "seed": "seed",
    "jobs": "jobs",
    "normalize": "normalize",
}
_INT_FIELDS = {"iterations", "initial_points", "batch_size", "replicates", "seed", "jobs"}
_FLOAT_FIELDS = {"beta_sqrt", "gamma"}


class UsageError(ValueError):
    """Bad names or settings supplied by the caller."""


class SessionError(RuntimeError):
    """Ask/tell protocol violation."""


@dataclass
class ExperimentResult:
    """Replicate histories plus per-iteration aggregates.

    Aggregate arrays have length ``T + 1`` (index 0 is the initial design).
    A replicate that stopped early contributes its last best value to the
    remaining iterations.
    """

    config: RunConfig
    histories: list = field(default_factory=list)

    @property
    def best_matrix(self) -> np.ndarray:
        T = self.config.T
        out = np.empty((len(self.histories), T + 1))
        for r, h in enumerate(self.histories):
            best = h.best_values
            out[r, : best.size] = best
            out[r, best.size:] = best[-1] if best.size else np.nan
        return out

    @property
    def median_best(self) -> np.ndarray:
        return np.median(self.best_matrix, axis=0)

    @property
    def iqr_best(self) -> np.ndarray:
        q75, q25 = np.percentile(self.best_matrix, [75, 25], axis=0)
        return q75 - q25

    @property
    def total_evaluations(self) -> np.ndarray:
        return np.array([h.total_evaluations for h in self.histories], dtype=int)

    @property
    def mean_total_evaluations(self) -> float:
        return float(self.total_evaluations.mean())

    @property
    def mean_wall_ms(self) -> np.ndarray:
        T = self.config.T
        walls = np.full((len(self.histories), T + 1), np.nan)
        for r, h in enumerate(self.histories):
            for rec in h.records:
                walls[r, rec.iteration] = rec.wall_ms
        with np.errstate(all="ignore"):
            return np.nanmean(walls, axis=0) if walls.size else np.full(T + 1, np.nan)

    @property
    def final_best(self) -> np.ndarray:
        return self.best_matrix[:, -1]


def _check_names(config: RunConfig):
    if config.function not in REGISTRY_KEYS:
        raise UsageError(f"unknown function {config.function!r}; available: {', '.join(REGISTRY_KEYS)}")
    if config.strategy not in STRATEGIES:
        raise UsageError(f"unknown strategy {config.strategy!r}; available: {', '.join(STRATEGIES)}")
    bench = get_benchmark(config.function)
    if bench.dim != config.dim:
        raise UsageError(f"{config.function} is {bench.dim}-dimensional, config says {config.dim}")
    return bench


def _replicate(config: RunConfig, r: int, b3o: Optional[B3OSettings]) -> RunHistory:
    bench = get_benchmark(config.function)
    return run_loop(bench.as_maximization(), bench.domain, config.strategy, config,
                    RngStream(config.seed, (r,)), b3o=b3o)


def run_experiment(config: RunConfig, b3o: Optional[B3OSettings] = None) -> ExperimentResult:
    """Run ``config.replicates`` independent optimizations of a registered benchmark.

    Replicate ``r`` draws from ``RngStream(seed, (r,))``, so results do not
    depend on ``config.jobs``. Objectives are maximized; minimization
    benchmarks are negated.
    """
    _check_names(config)
    reps = range(config.replicates)
    if config.jobs > 1 and config.replicates > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            histories = list(pool.map(_replicate, [config] * len(reps), reps, [b3o] * len(reps)))
    else:
        histories = [_replicate(config, r, b3o) for r in reps]
    return ExperimentResult(config, histories)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_traces(result: ExperimentResult, path, timing: bool = False) -> None:
    """Write one CSV row per replicate and iteration (iteration 0 = initial design).

    Wall times vary from run to run, so the ``wall_ms`` column is left
    empty unless ``timing`` is set; this keeps repeated runs byte-identical.
    """
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r, h in enumerate(result.histories):
        for rec in h.records:
            w.writerow([r, rec.iteration, rec.batch_size, rec.cum_evaluations, _fmt(rec.best_value),
                        _fmt(rec.wall_ms) if timing else ""])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _jsonable(x):
    x = np.asarray(x, dtype=float)
    return [None if not np.isfinite(v) else float(v) for v in x.ravel()]


def write_summary(result: ExperimentResult, path, timing: bool = False) -> dict:
    """Write the JSON summary: config echo, final medians and evaluation totals.

    ``mean_wall_ms`` is included only with ``timing``, as in :func:`write_traces`.
    """
    cfg = result.config
    summary = {
        "config": {**cfg.as_dict(), "T": cfg.T, "n0": cfg.n0, "q": cfg.q, "kernel_gamma": cfg.kernel_gamma},
        "replicates": len(result.histories),
        "final_best_median": float(np.median(result.final_best)),
        "final_best": _jsonable(result.final_best),
        "median_best": _jsonable(result.median_best),
        "iqr_best": _jsonable(result.iqr_best),
        "total_evaluations": [int(n) for n in result.total_evaluations],
        "mean_total_evaluations": result.mean_total_evaluations,
        "fixed_batch_budget": cfg.n0 + 3 * cfg.T,
        "aborted": [bool(h.aborted) for h in result.histories],
    }
    if timing:
        summary["mean_wall_ms"] = _jsonable(result.mean_wall_ms)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary


# configuration files -------------------------------------------------------

def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("_", "-")
            if key not in CONFIG_KEYS and key not in ("out", "timing"):
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value
    return out


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {value!r}")


def config_from_mapping(values: dict) -> RunConfig:
    """Build a :class:`RunConfig` from CLI/config-file keys (``iters``, ``beta-sqrt``, ...)."""
    kwargs = {}
    for key, value in values.items():
        if value is None or key not in CONFIG_KEYS:
            continue
        name = CONFIG_KEYS[key]
        try:
            if name in _INT_FIELDS:
                kwargs[name] = int(value)
            elif name in _FLOAT_FIELDS:
                kwargs[name] = float(value)
            elif name == "normalize":
                kwargs[name] = _parse_bool(value)
            else:
                kwargs[name] = str(value)
        except ValueError as err:
            raise UsageError(f"bad value for {key}: {value!r}") from err
    if "function" not in kwargs:
        raise UsageError("a function (name-dim) is required")
    try:
        config = RunConfig(**kwargs)
    except ValueError as err:
        raise UsageError(str(err)) from err
    _check_names(config)
    return config


# ask / tell ----------------------------------------------------------------

SESSION_VERSION = 1


def _load(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            state = json.load(fh)
    except FileNotFoundError:
        raise SessionError(f"no session at {path}; run init first") from None
    if state.get("version") != SESSION_VERSION:
        raise SessionError(f"{path} is not a session file of version {SESSION_VERSION}")
    return state


def _save(state: dict, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(state, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def init_session(path, lower: Sequence[float], upper: Sequence[float], strategy: str = "b3o",
                 initial_points: Optional[int] = None, batch_size: Optional[int] = None,
                 beta_sqrt: float = 2.0, gamma: Optional[float] = None, seed: int = 0,
                 normalize: bool = False) -> dict:
    """Create a session file for optimizing an external objective over a box.

    The objective is maximized; report negated values to minimize.
    """
    try:
        domain = SearchDomain(lower, upper)
    except ValueError as err:
        raise UsageError(str(err)) from err
    if strategy not in STRATEGIES:
        raise UsageError(f"unknown strategy {strategy!r}; available: {', '.join(STRATEGIES)}")
    try:
        config = RunConfig(f"external-{domain.dim}", strategy, domain.dim, None, initial_points, batch_size,
                           beta_sqrt, gamma, 1, seed, normalize)
    except ValueError as err:
        raise UsageError(str(err)) from err
    state = {
        "version": SESSION_VERSION,
        "lower": domain.lower.tolist(),
        "upper": domain.upper.tolist(),
        "config": config.as_dict(),
        "iteration": 0,
        "inputs": [],
        "outcomes": [],
        "pending": None,
    }
    _save(state, path)
    return state


def _session_config(state: dict) -> RunConfig:
    return RunConfig(**state["config"])


def ask(path, b3o: Optional[B3OSettings] = None) -> np.ndarray:
    """Propose the next batch and mark it pending.

    The first ask returns the uniform initial design; later asks fit the GP
    to all told outcomes. The proposal depends only on the session contents
    and the seed, so replaying a session file gives the same points.
    """
    state = _load(path)
    if state["pending"] is not None:
        raise SessionError("the previous batch is still pending; tell its outcomes first")
    config = _session_config(state)
    domain = SearchDomain(state["lower"], state["upper"])
    work = SearchDomain.cube(0.0, 1.0, domain.dim) if config.normalize else domain
    rng = RngStream(config.seed, (0,))
    t = state["iteration"]
    X = np.asarray(state["inputs"], dtype=float).reshape(-1, domain.dim)
    y = np.asarray(state["outcomes"], dtype=float)
    ok = np.isfinite(y)
    if t == 0 or not ok.any():
        stream = rng.child(0) if t == 0 else rng.child(1, t)
        points = uniform_point(work, stream, size=config.n0)
    else:
        Xw = domain.to_unit(X[ok]) if config.normalize else X[ok]
        gp = GaussianProcess(gamma=config.kernel_gamma).fit(Xw, y[ok])
        propose = make_strategy(config.strategy, config.q, config.beta_sqrt, b3o)
        proposal = propose(gp, ObservationSet(Xw, y[ok]), work, rng.child(1, t))
        points = clip_to_domain(proposal.points, work)
    if config.normalize:
        points = domain.from_unit(points)
    state["pending"] = points.tolist()
    _save(state, path)
    return points


def tell(path, values: Iterable[float]) -> dict:
    """Record outcomes for the pending batch; NaN marks a failed evaluation."""
    state = _load(path)
    if state["pending"] is None:
        raise SessionError("nothing is pending; ask for a batch first")
    vals = [float(v) for v in values]
    pending = state["pending"]
    if len(vals) != len(pending):
        raise SessionError(f"expected {len(pending)} outcomes, got {len(vals)}")
    state["inputs"].extend(pending)
    state["outcomes"].extend(v if np.isfinite(v) else None for v in vals)
    state["pending"] = None
    state["iteration"] += 1
    _save(state, path)
    return state


def points_to_csv(points: np.ndarray) -> str:
    """One row per point, coordinates as full-precision decimals."""
    points = np.atleast_2d(points)
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(points.shape[1])])
    for p in points:
        w.writerow([_fmt(v) for v in p])
    return buf.getvalue()
