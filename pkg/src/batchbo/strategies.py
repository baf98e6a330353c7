"""Batch-proposal strategies and the outer optimization loop.

Every strategy maps ``(gp, acquisition spec, domain, rng)`` to a
:class:`BatchProposal`. Fixed-size strategies derive the stream for batch
slot ``j`` as ``rng.child(j)``, so with a batch of one they all coincide
with the sequential proposal.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .acquisition import Acquisition, AcquisitionSpec, find_max, find_min
from .domain import ObservationSet, RngStream, RunConfig, SearchDomain, clip_to_domain, uniform_point
from .gp import GaussianProcess
from .mixture import IgmmPrior, extract_peaks, fit_igmm
from .slice_sampling import SamplerConfig, TooFewSamplesError, bgss

__all__ = [
    "STRATEGIES",
    "BatchProposal",
    "B3OSettings",
    "IterationRecord",
    "RunHistory",
    "propose_b3o",
    "propose_sequential",
    "propose_random_batch",
    "propose_constant_liar",
    "propose_bucb",
    "make_strategy",
    "run_loop",
]

log = logging.getLogger(__name__)

STRATEGIES = ("b3o", "ei", "ucb", "rand-ei", "rand-ucb", "cl-ei", "cl-ucb", "bucb")


@dataclass(frozen=True)
class BatchProposal:
    """Points to evaluate in parallel.

    ``tags`` holds per-point provenance: the mixture weight of each peak for
    B3O, the slot index for fixed-size strategies.
    """

    points: np.ndarray
    tags: np.ndarray
    strategy: str
    fallback: bool = False
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class B3OSettings:
    """Tuning of the B3O proposal.

    ``merge_frac`` sets the peak merge distance as a fraction of the domain
    diagonal unless ``merge_tol`` gives it directly. ``height_band / D`` is
    the largest fraction of the sampled acquisition range by which a peak
    may trail the best one; the more dimensions, the more components a
    single broad hill is split into, so the band narrows with ``D``.
    ``valley_ratio`` switches on hill-valley merging on the acquisition
    surface.
    """

    sampler: SamplerConfig = SamplerConfig(max_iter=20)
    prior: IgmmPrior = IgmmPrior()
    weight_threshold: float = 0.02
    relative_threshold: float = 0.7
    merge_tol: Optional[float] = None
    merge_frac: float = 0.1
    height_band: Optional[float] = 0.3
    valley_ratio: Optional[float] = None
    tol: float = 1e-5
    max_sweeps: int = 100
    merge_moves: bool = False
    acquisition: str = "UCB"


def _single(point, strategy: str, fallback: bool = False, **info) -> BatchProposal:
    return BatchProposal(np.asarray(point, dtype=float).reshape(1, -1), np.zeros(1), strategy, fallback, info)


def propose_sequential(gp, spec: AcquisitionSpec, domain: SearchDomain, rng: RngStream,
                       strategy: str = "sequential", acquisition: Optional[Callable] = None) -> BatchProposal:
    """The acquisition maximizer as a batch of one.

    ``acquisition`` replaces the model's surface (any vectorized callable).
    """
    acq = Acquisition(spec, gp) if acquisition is None else acquisition
    best = find_max(acq, domain, rng.child(0))
    return _single(best.location, strategy, acq_value=best.value)


def propose_random_batch(gp, spec: AcquisitionSpec, domain: SearchDomain, q: int, rng: RngStream,
                         strategy: str = "rand") -> BatchProposal:
    """Acquisition maximizer followed by ``q - 1`` uniform points."""
    if q < 1:
        raise ValueError("q must be >= 1")
    first = find_max(Acquisition(spec, gp), domain, rng.child(0)).location
    rest = uniform_point(domain, rng.child(1), size=q - 1)
    return BatchProposal(np.vstack([first[None, :], rest]), np.arange(q, dtype=float), strategy)


def _refit(gp: GaussianProcess, X, y) -> GaussianProcess:
    return GaussianProcess(gp.gamma, gp.signal_variance, gp.jitter, gp.max_jitter_doublings).fit(X, y)


def propose_constant_liar(gp: GaussianProcess, spec: AcquisitionSpec, domain: SearchDomain, q: int,
                          rng: RngStream, strategy: str = "cl") -> BatchProposal:
    """Greedy batch: after each pick, pretend its outcome is the predictive mean.

    The lie at each point is the current model's mean there; the model is
    refit on the data plus all lies before the next pick. Improvement-based
    acquisitions take their incumbent from the augmented outcomes.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    X, y = gp.X_train_, gp.y_train_
    model = gp
    points, lies = [], []
    for j in range(q):
        spec_j = spec if spec.kind == "UCB" or j == 0 else AcquisitionSpec(spec.kind, spec.beta_sqrt, float(np.max(y)))
        x = find_max(Acquisition(spec_j, model), domain, rng.child(j)).location
        lie = float(model.predict(x[None, :])[0])
        points.append(x)
        lies.append(lie)
        if j + 1 < q:
            X = np.vstack([X, x[None, :]])
            y = np.append(y, lie)
            model = _refit(gp, X, y)
    return BatchProposal(np.array(points), np.arange(q, dtype=float), strategy, info={"lies": lies})


def propose_bucb(gp: GaussianProcess, domain: SearchDomain, q: int, beta_sqrt: float, rng: RngStream,
                 strategy: str = "bucb") -> BatchProposal:
    """Greedy UCB batch with variance-only (hallucinated) updates between picks."""
    if q < 1:
        raise ValueError("q must be >= 1")
    spec = AcquisitionSpec("UCB", beta_sqrt)
    model = gp
    points = []
    for j in range(q):
        x = find_max(Acquisition(spec, model), domain, rng.child(j)).location
        points.append(x)
        if j + 1 < q:
            model = model.hallucinate(x)
    return BatchProposal(np.array(points), np.arange(q, dtype=float), strategy)


def propose_b3o(gp, spec: AcquisitionSpec, domain: SearchDomain, settings: Optional[B3OSettings],
                rng: RngStream, acquisition: Optional[Callable] = None) -> BatchProposal:
    """Sample under the acquisition, fit the mixture, propose its peaks.

    Falls back to the acquisition maximizer (a batch of one) when the
    sampler accepts too few points for the mixture fit. ``acquisition``
    replaces the model's surface (any vectorized callable).
    """
    settings = settings or B3OSettings()
    acq = Acquisition(spec, gp) if acquisition is None else acquisition
    lowest = find_min(acq, domain, rng.child(0))
    try:
        samples = bgss(acq, domain, lowest.value, settings.sampler, rng.child(1))
    except TooFewSamplesError as err:
        log.info("b3o falling back to a single maximizer: %s", err)
        best = find_max(acq, domain, rng.child(3))
        return _single(best.location, "b3o", fallback=True, reason=str(err))
    post = fit_igmm(samples, settings.prior, settings.tol, settings.max_sweeps, rng.child(2),
                    settings.merge_moves)
    merge_tol = settings.merge_frac * domain.diagonal if settings.merge_tol is None else settings.merge_tol
    band = None if settings.height_band is None else settings.height_band / domain.dim
    use_surface = band is not None or settings.valley_ratio is not None
    peaks = extract_peaks(post, domain, settings.weight_threshold, merge_tol,
                          surface=acq if use_surface else None, floor=lowest.value,
                          valley_ratio=settings.valley_ratio,
                          relative_threshold=settings.relative_threshold,
                          height_band=band, top=float(samples.values.max()))
    return BatchProposal(peaks.means, peaks.weights, "b3o",
                         info={"alpha_min": lowest.value, "n_samples": len(samples),
                               "n_sweeps": len(post.elbo_trace) - 1})


Proposer = Callable[[GaussianProcess, ObservationSet, SearchDomain, RngStream], BatchProposal]


def make_strategy(name: str, q: int = 3, beta_sqrt: float = 2.0,
                  b3o: Optional[B3OSettings] = None) -> Proposer:
    """Return ``propose(gp, data, domain, rng)`` for a strategy identifier."""
    if name not in STRATEGIES:
        raise ValueError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}")
    settings = b3o or B3OSettings()

    def spec_for(kind: str, data: ObservationSet) -> AcquisitionSpec:
        return AcquisitionSpec.for_outcomes(kind, data.outcomes, beta_sqrt)

    def propose(gp, data, domain, rng):
        if name == "b3o":
            return propose_b3o(gp, spec_for(settings.acquisition, data), domain, settings, rng)
        if name in ("ei", "ucb"):
            return propose_sequential(gp, spec_for(name, data), domain, rng, name)
        family, kind = name.split("-") if "-" in name else (name, "ucb")
        if family == "rand":
            return propose_random_batch(gp, spec_for(kind, data), domain, q, rng, name)
        if family == "cl":
            return propose_constant_liar(gp, spec_for(kind, data), domain, q, rng, name)
        return propose_bucb(gp, domain, q, beta_sqrt, rng, name)

    propose.strategy = name
    return propose


@dataclass
class IterationRecord:
    iteration: int
    points: np.ndarray
    outcomes: np.ndarray          # NaN marks a failed evaluation
    best_value: float
    cum_evaluations: int
    wall_ms: float
    fallback: bool = False

    @property
    def batch_size(self) -> int:
        return self.points.shape[0]

    @property
    def n_failed(self) -> int:
        return int(np.count_nonzero(np.isnan(self.outcomes)))


@dataclass
class RunHistory:
    strategy: str
    records: list = field(default_factory=list)
    aborted: bool = False

    @property
    def batch_sizes(self) -> np.ndarray:
        """``n_t`` for iterations ``1..T`` (the initial design excluded)."""
        return np.array([r.batch_size for r in self.records[1:]], dtype=int)

    @property
    def best_values(self) -> np.ndarray:
        return np.array([r.best_value for r in self.records])

    @property
    def cum_evaluations(self) -> np.ndarray:
        return np.array([r.cum_evaluations for r in self.records], dtype=int)

    @property
    def total_evaluations(self) -> int:
        return int(self.records[-1].cum_evaluations) if self.records else 0

    @property
    def best_value(self) -> float:
        return float(self.records[-1].best_value)

    def observations(self) -> ObservationSet:
        X = np.vstack([r.points for r in self.records])
        y = np.concatenate([r.outcomes for r in self.records])
        ok = ~np.isnan(y)
        return ObservationSet(X[ok], y[ok])


def _evaluate(objective, points: np.ndarray) -> np.ndarray:
    out = np.empty(points.shape[0])
    for i, x in enumerate(points):
        try:
            out[i] = float(objective(x))
        except Exception as err:  # a failed experiment is recorded, not fatal
            log.warning("evaluation failed at %s: %s", x.tolist(), err)
            out[i] = np.nan
        if not np.isfinite(out[i]):
            out[i] = np.nan
    return out


def run_loop(objective: Callable[[np.ndarray], float], domain: SearchDomain,
             strategy: Union[str, Proposer], config: RunConfig, rng: RngStream,
             b3o: Optional[B3OSettings] = None) -> RunHistory:
    """Maximize ``objective`` over ``domain``.

    Draws ``config.n0`` uniform initial points, then for ``config.T``
    iterations fits a GP, asks the strategy for a batch and evaluates it.
    Failed evaluations become NaN outcomes; an iteration in which every
    evaluation fails ends the run early with ``aborted`` set.
    """
    propose = make_strategy(strategy, config.q, config.beta_sqrt, b3o) if isinstance(strategy, str) else strategy
    name = getattr(propose, "strategy", str(strategy))
    if config.normalize:
        work = SearchDomain.cube(0.0, 1.0, domain.dim)
        to_native = domain.from_unit
    else:
        work = domain
        to_native = np.asarray

    def f(u):
        return objective(to_native(u))

    history = RunHistory(name)
    t0 = time.perf_counter()
    X = uniform_point(work, rng.child(0), size=config.n0)
    y = _evaluate(f, X)
    ok = ~np.isnan(y)
    if not ok.any():
        history.aborted = True
        return history
    data = ObservationSet(X[ok], y[ok])
    history.records.append(IterationRecord(0, to_native(X), y, float(np.max(y[ok])), config.n0,
                                           1e3 * (time.perf_counter() - t0)))

    cum = config.n0
    for t in range(1, config.T + 1):
        t0 = time.perf_counter()
        gp = GaussianProcess(gamma=config.kernel_gamma).fit(data.inputs, data.outcomes)
        proposal = propose(gp, data, work, rng.child(1, t))
        points = clip_to_domain(proposal.points, work)
        y = _evaluate(f, points)
        ok = ~np.isnan(y)
        cum += points.shape[0]
        if ok.any():
            data = data.append(points[ok], y[ok])
        best = float(np.max(data.outcomes))
        history.records.append(IterationRecord(t, to_native(points), y, best, cum,
                                               1e3 * (time.perf_counter() - t0), proposal.fallback))
        if not ok.any():
            log.error("iteration %d: every evaluation failed, stopping", t)
            history.aborted = True
            break
    return history
