"""Budgeted batch Bayesian optimization.

Gaussian-process surrogates with PI/EI/UCB acquisitions, a batch slice
sampler over the acquisition surface, a truncated Dirichlet-process
Gaussian mixture fitted by variational inference, and the batch
strategies built on them.
"""

from .acquisition import Acquisition, AcquisitionSpec, acq_value, find_max, find_min
from .benchmarks import REGISTRY, Benchmark, get_benchmark
from .domain import ObservationSet, RngStream, RunConfig, SearchDomain
from .gp import GaussianProcess, KernelParams
from .harness import ExperimentResult, run_experiment, write_traces
from .mixture import DPGaussianMixture, IgmmPrior, extract_peaks, fit_igmm
from .slice_sampling import SamplerConfig, bgss, gss_chain
from .strategies import STRATEGIES, B3OSettings, make_strategy, propose_b3o, run_loop

__version__ = "0.1.0"

__all__ = [
    "Acquisition",
    "AcquisitionSpec",
    "acq_value",
    "find_max",
    "find_min",
    "REGISTRY",
    "Benchmark",
    "get_benchmark",
    "ObservationSet",
    "RngStream",
    "RunConfig",
    "SearchDomain",
    "GaussianProcess",
    "KernelParams",
    "ExperimentResult",
    "run_experiment",
    "write_traces",
    "DPGaussianMixture",
    "IgmmPrior",
    "extract_peaks",
    "fit_igmm",
    "SamplerConfig",
    "bgss",
    "gss_chain",
    "STRATEGIES",
    "B3OSettings",
    "make_strategy",
    "propose_b3o",
    "run_loop",
]
