"""Generalized slice sampling under an acquisition surface, run as a batch of chains.

The target density over the box is proportional to ``alpha(x) - alpha_min``.
Each chain alternates a height ``u ~ U(alpha_min, alpha(s_prev))`` with
uniform box proposals until one lands above ``u``; the accepted point is
kept and becomes ``s_prev``. The normalizer is never needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .domain import RngStream, SearchDomain

__all__ = ["SamplerConfig", "SampleSet", "TooFewSamplesError", "gss_chain", "bgss", "run_chains"]


class TooFewSamplesError(RuntimeError):
    def __init__(self, n_samples: int, n_required: int):
        self.n_samples = n_samples
        self.n_required = n_required
        super().__init__(f"slice sampler accepted {n_samples} points, need at least {n_required}")


@dataclass(frozen=True)
class SamplerConfig:
    """Batch sampler settings.

    ``proposal_block`` is the largest number of uniform proposals a chain
    draws per evaluation round. A chain sizes its blocks from its own
    acceptance history, so the draws of one chain never depend on another.
    """

    chains: int = 200
    max_iter: int = 50
    rejection_cap: int = 1000
    flat_eps: float = 1e-9
    proposal_block: int = 64
    max_cap_hits: int = 3

    def __post_init__(self):
        for name in ("chains", "max_iter", "rejection_cap", "proposal_block", "max_cap_hits"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.flat_eps < 0:
            raise ValueError("flat_eps must be non-negative")


@dataclass(frozen=True)
class SampleSet:
    points: np.ndarray
    values: np.ndarray
    chain: np.ndarray
    n_evaluations: int = 0

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def chain_block(self, c: int) -> np.ndarray:
        return self.points[self.chain == c]


def _fast_uniform(gen: np.random.Generator):
    def draw(low, high, size=None):
        return low + (high - low) * gen.random(size)
    return draw


class _Chain:
    __slots__ = ("rng", "draw", "prev", "u", "flat", "rejected", "cap_hits", "points", "values",
                 "done", "proposed", "accepted")

    def __init__(self, rng):
        self.rng = rng
        # bypass the stream wrapper in the hot loop; any object with ``uniform`` works
        self.draw = _fast_uniform(rng.generator) if isinstance(rng, RngStream) else rng.uniform
        self.points = []
        self.values = []
        self.rejected = 0
        self.cap_hits = 0
        self.done = False
        self.proposed = 0
        self.accepted = 0

    def new_height(self, alpha_min: float, eps: float):
        self.flat = not (self.prev - alpha_min >= eps)
        self.u = alpha_min if self.flat else float(self.draw(alpha_min, self.prev))

    def block_size(self, cap: int, limit: int) -> int:
        # geometric expected wait from this chain's own acceptance history
        rate = (self.accepted + 1.0) / (self.proposed + 2.0)
        want = int(np.ceil(1.5 / rate))
        return max(1, min(want, limit, cap - self.rejected))


def run_chains(acq: Callable[[np.ndarray], np.ndarray], domain: SearchDomain, alpha_min: float,
               config: SamplerConfig, rngs: Sequence) -> SampleSet:
    """Advance one slice-sampling chain per entry of ``rngs`` to completion.

    Chains share vectorized evaluations of ``acq`` but each draws only from
    its own random source; the pooled output is ordered chain-major.
    """
    lo, hi, D = domain.lower, domain.upper, domain.dim
    chains = [_Chain(r) for r in rngs]
    starts = np.array([np.reshape(c.draw(lo, hi, (1, D)), D) for c in chains])
    start_vals = np.asarray(acq(starts), dtype=float)
    n_evals = len(chains)
    for c, v in zip(chains, start_vals):
        c.prev = float(v)
        c.new_height(alpha_min, config.flat_eps)

    active = list(chains)
    while active:
        sizes = [c.block_size(config.rejection_cap, config.proposal_block) for c in active]
        blocks = [np.reshape(c.draw(lo, hi, (b, D)), (b, D)) for c, b in zip(active, sizes)]
        vals = np.asarray(acq(np.vstack(blocks)), dtype=float)
        n_evals += vals.size
        offset = 0
        still = []
        for c, b, block in zip(active, sizes, blocks):
            v = vals[offset:offset + b]
            offset += b
            j = 0 if c.flat else int(np.argmax(v > c.u))
            if c.flat or v[j] > c.u:
                c.proposed += j + 1
                c.accepted += 1
                c.points.append(block[j])
                c.values.append(float(v[j]))
                c.prev = float(v[j])
                c.rejected = 0
                c.cap_hits = 0
                if len(c.points) >= config.max_iter:
                    c.done = True
                else:
                    c.new_height(alpha_min, config.flat_eps)
            else:
                c.proposed += b
                c.rejected += b
                if c.rejected >= config.rejection_cap:
                    c.cap_hits += 1
                    c.rejected = 0
                    if c.cap_hits >= config.max_cap_hits:
                        c.done = True
                    else:
                        c.new_height(alpha_min, config.flat_eps)
            if not c.done:
                still.append(c)
        active = still

    pts = [np.array(c.points, dtype=float).reshape(-1, D) for c in chains]
    points = np.vstack(pts) if pts else np.empty((0, D))
    values = np.concatenate([np.asarray(c.values, dtype=float) for c in chains]) if chains else np.empty(0)
    owner = np.concatenate([np.full(len(c.points), i) for i, c in enumerate(chains)]).astype(int)
    return SampleSet(points, values, owner, n_evals)


def gss_chain(acq: Callable[[np.ndarray], np.ndarray], domain: SearchDomain, alpha_min: float,
              config: SamplerConfig, rng) -> SampleSet:
    """A single generalized slice-sampling chain of ``config.max_iter`` steps.

    A step that exhausts ``config.rejection_cap`` proposals redraws its
    height from the current point; after ``config.max_cap_hits``
    consecutive exhaustions the chain stops and returns what it has.
    """
    return run_chains(acq, domain, alpha_min, config, [rng])


def bgss(acq: Callable[[np.ndarray], np.ndarray], domain: SearchDomain, alpha_min: float,
         config: SamplerConfig, rng: RngStream, min_samples: int | None = None) -> SampleSet:
    """Pool ``config.chains`` independent chains, chain ``c`` on ``rng.child(c)``.

    Raises :class:`TooFewSamplesError` when fewer than ``min_samples``
    (default ``D + 2``) points were accepted in total.
    """
    rngs = [rng.child(c) for c in range(config.chains)]
    samples = run_chains(acq, domain, alpha_min, config, rngs)
    need = domain.dim + 2 if min_samples is None else min_samples
    if len(samples) < need:
        raise TooFewSamplesError(len(samples), need)
    return samples
