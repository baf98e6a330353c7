"""Truncated variational inference for a Dirichlet-process Gaussian mixture.

Generative model (truncation level ``K``)::

    v_k ~ Beta(1, concentration)            k < K,  v_K = 1
    pi_k = v_k * prod_{l<k} (1 - v_l)
    mu_k ~ N(mean_prior, I)
    Lambda_k ~ Wishart(dof, scale)          component precision
    z_i ~ Cat(pi),  s_i ~ N(mu_{z_i}, Lambda_{z_i}^{-1})

Mean-field posterior::

    q(v_k) = Beta(sticks[k])   q(mu_k) = N(means[k], mean_covs[k])
    q(Lambda_k) = Wishart(dof[k], scales[k])   q(z_i) = Cat(resp[i])

Coordinate ascent cycles responsibilities, sticks, means and precisions;
each block update is the exact maximizer of the bound given the others.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import betaln, digamma, gammaln, xlogy
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .domain import SearchDomain, clip_to_domain

__all__ = [
    "IgmmPrior",
    "IgmmPosterior",
    "IgmmFitError",
    "PeakSet",
    "DPGaussianMixture",
    "fit_igmm",
    "elbo",
    "extract_peaks",
]

LOG_2PI = np.log(2.0 * np.pi)


class IgmmFitError(ValueError):
    def __init__(self, message: str, sweep: Optional[int] = None):
        self.sweep = sweep
        super().__init__(message if sweep is None else f"{message} (sweep {sweep})")


@dataclass(frozen=True)
class IgmmPrior:
    """Hyper-parameters. ``None`` fields resolve against the data in :meth:`resolve`."""

    concentration: float = 1.0
    truncation: int = 10
    mean_prior: Optional[np.ndarray] = None
    dof: Optional[float] = None
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.concentration > 0:
            raise ValueError("concentration must be positive")
        if self.truncation < 1:
            raise ValueError("truncation must be >= 1")

    def resolve(self, X: np.ndarray) -> "IgmmPrior":
        D = X.shape[1]
        mean = np.mean(X, axis=0) if self.mean_prior is None else np.asarray(self.mean_prior, float).reshape(D)
        dof = D + 2.0 if self.dof is None else float(self.dof)
        scale = np.eye(D) if self.scale is None else np.asarray(self.scale, float).reshape(D, D)
        if not dof > D - 1:
            raise ValueError(f"Wishart dof must exceed D - 1 = {D - 1}")
        return IgmmPrior(self.concentration, self.truncation, mean, dof, scale)


@dataclass(frozen=True)
class IgmmPosterior:
    sticks: np.ndarray      # (K-1, 2) Beta parameters
    means: np.ndarray       # (K, D)
    mean_covs: np.ndarray   # (K, D, D)
    dof: np.ndarray         # (K,)
    scales: np.ndarray      # (K, D, D)
    resp: np.ndarray        # (N, K)
    prior: IgmmPrior
    elbo_trace: np.ndarray = field(default_factory=lambda: np.empty(0))
    converged: bool = False

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def weights(self) -> np.ndarray:
        """Expected mixing weights ``sum_i resp[i, k] / N``."""
        return self.resp.mean(axis=0)

    @property
    def precisions(self) -> np.ndarray:
        """``E[Lambda_k] = dof_k * scales_k``."""
        return self.dof[:, None, None] * self.scales

    @property
    def covariances(self) -> np.ndarray:
        return np.linalg.inv(self.precisions)


@dataclass(frozen=True)
class PeakSet:
    means: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return self.means.shape[0]


# expectations under q ----------------------------------------------------

def _log_det_pd(A: np.ndarray) -> np.ndarray:
    sign, ld = np.linalg.slogdet(A)
    if np.any(sign <= 0):
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return ld


def _expected_log_det(dof: np.ndarray, scales: np.ndarray) -> np.ndarray:
    D = scales.shape[-1]
    d = np.arange(1, D + 1)
    return digamma((dof[:, None] + 1 - d) / 2.0).sum(axis=1) + D * np.log(2.0) + _log_det_pd(scales)


def _expected_log_pi(sticks: np.ndarray) -> np.ndarray:
    tot = digamma(sticks.sum(axis=1))
    log_v = digamma(sticks[:, 0]) - tot
    log_1mv = digamma(sticks[:, 1]) - tot
    return np.concatenate([log_v, [0.0]]) + np.concatenate([[0.0], np.cumsum(log_1mv)])


def _expected_log_lik(X, means, mean_covs, dof, scales) -> np.ndarray:
    """``E_q[log N(x_i | mu_k, Lambda_k^{-1})]`` as an (N, K) array."""
    D = X.shape[1]
    prec = dof[:, None, None] * scales
    L = np.linalg.cholesky(prec)
    # ||L_k^T (x - m_k)||^2 without forming the (N, K, D) differences
    K = L.shape[0]
    z = (X @ L.transpose(1, 0, 2).reshape(D, K * D)).reshape(-1, K, D)
    z -= np.einsum("kd,kde->ke", means, L)[None]
    np.square(z, out=z)
    out = z.sum(axis=2)
    trace = np.einsum("kde,ked->k", prec, mean_covs)
    out -= _expected_log_det(dof, scales) - D * LOG_2PI - trace
    out *= -0.5
    return out


def _log_wishart_norm(scale: np.ndarray, dof) -> np.ndarray:
    """``log B(W, nu)`` of the Wishart density, vectorized over leading axes."""
    D = scale.shape[-1]
    dof = np.asarray(dof, dtype=float)
    d = np.arange(D)
    mg = 0.25 * D * (D - 1) * np.log(np.pi) + gammaln(dof[..., None] / 2.0 - 0.5 * d).sum(axis=-1)
    return -0.5 * dof * _log_det_pd(scale) - 0.5 * dof * D * np.log(2.0) - mg


def _bound_without_assignments(sticks, m, S, a, B, prior: IgmmPrior) -> float:
    """Every bound term that does not involve the responsibilities."""
    D = m.shape[1]
    gam = prior.concentration
    tot = digamma(sticks.sum(axis=1))
    e_log_1mv = digamma(sticks[:, 1]) - tot
    e_log_det = _expected_log_det(a, B)
    e_prec = a[:, None, None] * B
    W0_inv = np.linalg.inv(prior.scale)

    log_p_v = np.sum(np.log(gam) + (gam - 1.0) * e_log_1mv)
    dm = m - prior.mean_prior
    log_p_mu = np.sum(-0.5 * D * LOG_2PI - 0.5 * (np.einsum("kd,kd->k", dm, dm) + np.trace(S, axis1=1, axis2=2)))
    log_p_lam = np.sum(
        _log_wishart_norm(prior.scale, prior.dof)
        + 0.5 * (prior.dof - D - 1.0) * e_log_det
        - 0.5 * np.einsum("de,ked->k", W0_inv, e_prec)
    )
    h_v = np.sum(betaln(sticks[:, 0], sticks[:, 1])
                 - (sticks[:, 0] - 1.0) * digamma(sticks[:, 0])
                 - (sticks[:, 1] - 1.0) * digamma(sticks[:, 1])
                 + (sticks.sum(axis=1) - 2.0) * tot)
    h_mu = np.sum(0.5 * D * (1.0 + LOG_2PI) + 0.5 * _log_det_pd(S))
    h_lam = np.sum(-_log_wishart_norm(B, a) - 0.5 * (a - D - 1.0) * e_log_det + 0.5 * a * D)
    return float(log_p_v + log_p_mu + log_p_lam + h_v + h_mu + h_lam)


def elbo(posterior: IgmmPosterior, samples, prior: Optional[IgmmPrior] = None) -> float:
    """Evidence lower bound of ``posterior`` on ``samples``."""
    X = np.asarray(getattr(samples, "points", samples), dtype=float)
    prior = (posterior.prior if prior is None else prior).resolve(X)
    K, D = posterior.means.shape
    if posterior.resp.shape != (X.shape[0], K) or X.shape[1] != D:
        raise ValueError("samples and posterior shapes disagree")
    sticks, m, S = posterior.sticks, posterior.means, posterior.mean_covs
    a, B, phi = posterior.dof, posterior.scales, posterior.resp
    log_p_z = np.sum(phi * _expected_log_pi(sticks)[None, :])
    log_p_x = np.sum(phi * _expected_log_lik(X, m, S, a, B))
    h_z = -np.sum(xlogy(phi, phi))
    return _bound_without_assignments(sticks, m, S, a, B, prior) + float(log_p_z + log_p_x + h_z)


# coordinate updates ------------------------------------------------------

def _update_resp(sticks, log_lik) -> tuple[np.ndarray, np.ndarray]:
    """Optimal responsibilities and the per-sample log normalizers."""
    rho = log_lik + _expected_log_pi(sticks)
    top = rho.max(axis=1, keepdims=True)
    rho -= top
    np.exp(rho, out=rho)
    norm = (rho @ np.ones(rho.shape[1]))[:, None]  # row sums; faster than a short-axis reduce
    rho /= norm
    return rho, (top + np.log(norm))[:, 0]


class _Stats:
    """Responsibility-weighted counts, sums and outer products of centred data."""

    __slots__ = ("Nk", "center", "sx", "sxx")

    def __init__(self, phi, centred: "_CentredData"):
        D = centred.Xc.shape[1]
        self.center = centred.center
        self.Nk = phi.sum(axis=0)
        self.sx = phi.T @ centred.Xc
        self.sxx = (phi.T @ centred.outer).reshape(-1, D, D)


class _CentredData:
    __slots__ = ("center", "Xc", "outer")

    def __init__(self, X):
        self.center = X.mean(axis=0)
        self.Xc = X - self.center
        self.outer = (self.Xc[:, :, None] * self.Xc[:, None, :]).reshape(X.shape[0], -1)


def _update_sticks(stats: _Stats, gam) -> np.ndarray:
    Nk = stats.Nk
    tail = np.cumsum(Nk[::-1])[::-1]           # sum_{j >= k} N_j
    later = np.concatenate([tail[1:], [0.0]])  # sum_{j > k} N_j
    return np.column_stack([1.0 + Nk[:-1], gam + later[:-1]])


def _update_means(stats: _Stats, a, B, prior) -> tuple[np.ndarray, np.ndarray]:
    D = B.shape[-1]
    Nk = stats.Nk
    e_prec = a[:, None, None] * B
    P = np.eye(D)[None] + Nk[:, None, None] * e_prec
    S = np.linalg.inv(P)
    weighted_sum = stats.sx + Nk[:, None] * stats.center
    rhs = prior.mean_prior[None, :] + np.einsum("kde,ke->kd", e_prec, weighted_sum)
    m = np.einsum("kde,ke->kd", S, rhs)
    return m, 0.5 * (S + np.swapaxes(S, 1, 2))


def _update_precisions(stats: _Stats, m, S, prior) -> tuple[np.ndarray, np.ndarray]:
    Nk = stats.Nk
    mc = m - stats.center
    cross = stats.sx[:, :, None] * mc[:, None, :]
    # sum_n phi_nk (x_n - m_k)(x_n - m_k)^T from the centred statistics
    scatter = stats.sxx - cross - np.swapaxes(cross, 1, 2) + Nk[:, None, None] * mc[:, :, None] * mc[:, None, :]
    B_inv = np.linalg.inv(prior.scale)[None] + scatter + Nk[:, None, None] * S
    B = np.linalg.inv(B_inv)
    return prior.dof + Nk, 0.5 * (B + np.swapaxes(B, 1, 2))


def _kmeanspp_resp(X, K, rng, lloyd_steps: int = 10) -> np.ndarray:
    """Hard responsibilities from k-means++ seeding plus a few Lloyd steps."""
    N = X.shape[0]
    centers = [X[int(rng.integers(N))]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(N))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, N - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    C = np.array(centers)
    sq = np.einsum("nd,nd->n", X, X)[:, None]
    for step in range(lloyd_steps + 1):
        labels = np.argmin(sq - 2.0 * X @ C.T + np.einsum("kd,kd->k", C, C)[None], axis=1)
        if step == lloyd_steps:
            break
        counts = np.bincount(labels, minlength=K)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        filled = counts > 0
        C_new = C.copy()
        C_new[filled] = sums[filled] / counts[filled, None]
        if np.array_equal(C_new, C):
            break
        C = C_new
    phi = np.zeros((N, K))
    phi[np.arange(N), labels] = 1.0
    return phi


def _as_generator(rng):
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    return getattr(rng, "generator", rng)


def _coordinate_ascent(X, phi, prior: IgmmPrior, tol: float, max_sweeps: int) -> IgmmPosterior:
    """Cycle the updates starting from responsibilities ``phi``."""
    D = X.shape[1]
    centred = _CentredData(X)
    stats = _Stats(phi, centred)
    sticks = _update_sticks(stats, prior.concentration)
    # start q(mu) at the weighted means with a shrinking covariance, then refine
    Nk = stats.Nk
    m = (phi.T @ X + prior.mean_prior[None, :]) / (Nk[:, None] + 1.0)
    S = np.eye(D)[None] / (1.0 + Nk)[:, None, None]
    a, B = _update_precisions(stats, m, S, prior)
    m, S = _update_means(stats, a, B, prior)

    def state(converged=False, trace=()):
        return IgmmPosterior(sticks, m, S, a, B, phi, prior, np.asarray(trace, dtype=float), converged)

    trace = [elbo(state(), X, prior)]
    if not np.isfinite(trace[0]):
        raise IgmmFitError("non-finite evidence bound", 0)
    log_lik = _expected_log_lik(X, m, S, a, B)
    converged = False
    for sweep in range(1, max_sweeps + 1):
        phi, log_norm = _update_resp(sticks, log_lik)
        # with optimal responsibilities the assignment terms reduce to the log normalizers
        value = _bound_without_assignments(sticks, m, S, a, B, prior) + float(log_norm.sum())
        if not np.isfinite(value):
            raise IgmmFitError("non-finite evidence bound", sweep)
        trace.append(value)
        if abs(value - trace[-2]) <= tol * abs(trace[-2]):
            converged = True
            break
        if sweep == max_sweeps:
            break
        stats = _Stats(phi, centred)
        sticks = _update_sticks(stats, prior.concentration)
        m, S = _update_means(stats, a, B, prior)
        a, B = _update_precisions(stats, m, S, prior)
        log_lik = _expected_log_lik(X, m, S, a, B)
    return state(converged, trace)


def _merge_candidates(post: IgmmPosterior, min_count: float) -> list[tuple[int, int]]:
    # occupied pairs, closest first in the metric of their summed covariances
    occupied = np.flatnonzero(post.resp.sum(axis=0) > min_count)
    cov = post.covariances
    pairs = []
    for i, j in zip(*np.triu_indices(occupied.size, 1)):
        k, l = occupied[i], occupied[j]
        d = post.means[k] - post.means[l]
        pairs.append((float(d @ np.linalg.solve(cov[k] + cov[l], d)), int(k), int(l)))
    return [(k, l) for _, k, l in sorted(pairs)]


def _merge_moves(X, post: IgmmPosterior, tol: float, max_sweeps: int, max_trials: int) -> IgmmPosterior:
    """Greedily merge component pairs while the bound improves.

    Each trial pools two components' responsibilities and reruns the
    coordinate ascent; it replaces the current fit only if its final bound
    is higher, so the recorded trace stays nondecreasing.
    """
    trace = list(post.elbo_trace)
    trials = 0
    improved = True
    while improved and trials < max_trials:
        improved = False
        for k, l in _merge_candidates(post, min_count=1.0):
            if trials >= max_trials:
                break
            trials += 1
            phi = post.resp.copy()
            phi[:, k] += phi[:, l]
            phi[:, l] = 0.0
            trial = _coordinate_ascent(X, phi, post.prior, tol, max_sweeps)
            if trial.elbo_trace[-1] > trace[-1]:
                trace.append(float(trial.elbo_trace[-1]))
                post = trial
                improved = True
                break
    return replace(post, elbo_trace=np.asarray(trace))


def fit_igmm(samples, prior: Optional[IgmmPrior] = None, tol: float = 1e-5, max_sweeps: int = 200,
             rng=None, merge_moves: bool = False, max_merge_trials: Optional[int] = None) -> IgmmPosterior:
    """Fit the truncated mixture to ``samples`` by coordinate ascent.

    Stops when the relative change of the bound drops below ``tol`` or after
    ``max_sweeps`` sweeps. ``samples`` may be an array or a ``SampleSet``.

    Starting from k-means++ seeding, coordinate ascent often settles with a
    true cluster split over several components. ``merge_moves`` then tries
    pooling pairs of components (at most ``max_merge_trials`` times,
    default ``2 * truncation``), keeping a merge only when it raises the
    bound. ``elbo_trace`` lists the bound after every sweep of the initial
    ascent, then one value per accepted merge.
    """
    X = check_array(np.asarray(getattr(samples, "points", samples), dtype=float))
    N, D = X.shape
    if N < D + 2:
        raise IgmmFitError(f"need at least D + 2 = {D + 2} samples, got {N}")
    prior = (prior or IgmmPrior()).resolve(X)
    phi = _kmeanspp_resp(X, prior.truncation, _as_generator(rng))
    post = _coordinate_ascent(X, phi, prior, tol, max_sweeps)
    if merge_moves:
        trials = 2 * prior.truncation if max_merge_trials is None else max_merge_trials
        post = _merge_moves(X, post, tol, max_sweeps, trials)
    return post


def _same_hill(surface, floor, x, y, n_checks: int, ratio: float, vx: float, vy: float) -> bool:
    t = np.linspace(0.0, 1.0, n_checks + 2)[1:-1, None]
    inner = np.asarray(surface(x[None, :] + t * (y - x)[None, :]), dtype=float) - floor
    return bool(inner.min() >= ratio * min(vx - floor, vy - floor))


def extract_peaks(posterior: IgmmPosterior, domain: SearchDomain, weight_threshold: float = 0.02,
                  merge_tol: Optional[float] = None, surface: Optional[Callable] = None,
                  floor: Optional[float] = None, valley_ratio: Optional[float] = 0.9,
                  n_checks: int = 10, relative_threshold: float = 0.0,
                  height_band: Optional[float] = None, top: Optional[float] = None) -> PeakSet:
    """Component means to evaluate next.

    Components with expected weight below ``weight_threshold``, or below
    ``relative_threshold`` times the largest weight, are dropped and the
    survivors are clipped to the domain. With ``height_band`` and a
    ``surface``, a survivor is also dropped when its surface value lies
    more than ``height_band * (top - floor)`` below the best survivor;
    ``top`` defaults to that best value. Survivors closer than
    ``merge_tol`` (default 1% of the domain diagonal) are merged.

    When ``valley_ratio`` is set and ``surface`` given, two survivors are also merged if the
    surface, measured above ``floor``, never drops below ``valley_ratio``
    times the lower endpoint on the segment between them (no valley, so
    one hill); each group is then represented by its member with the
    highest surface value. Without a surface the heavier member is kept.
    At least one point is always returned.
    """
    merge_tol = 0.01 * domain.diagonal if merge_tol is None else merge_tol
    w = posterior.weights
    cand = np.flatnonzero(w >= max(weight_threshold, relative_threshold * w.max()))
    if cand.size == 0:
        cand = np.array([int(np.argmax(w))])
    means = clip_to_domain(posterior.means[cand], domain)
    vals = None if surface is None else np.asarray(surface(means), dtype=float)
    if vals is not None:
        if floor is None:
            floor = float(vals.min())
        if height_band is not None:
            best = float(vals.max())
            span = max(best if top is None else max(top, best), floor) - floor
            keep = vals >= best - height_band * span
            cand, means, vals = cand[keep], means[keep], vals[keep]
    hill = vals is not None and valley_ratio is not None
    if hill:
        order = np.lexsort((-w[cand], -vals))
    else:
        order = np.argsort(-w[cand], kind="stable")

    reps: list[int] = []
    for i in order:
        home = -1
        for r, j in enumerate(reps):
            if np.linalg.norm(means[i] - means[j]) < merge_tol:
                home = r
                break
            if hill and _same_hill(surface, floor, means[j], means[i], n_checks,
                                   valley_ratio, vals[j], vals[i]):
                home = r
                break
        if home < 0:
            reps.append(int(i))
    idx = np.array(reps, dtype=int)
    return PeakSet(means[idx], w[cand[idx]])


class DPGaussianMixture(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_igmm`.

    Parameters
    ----------
    n_components : int, default 10
        Truncation level.
    concentration : float, default 1.0
        Stick-breaking concentration.
    mean_prior : array-like or None
        Prior centre of the component means; ``None`` uses the data mean.
    dof, scale : Wishart prior on component precisions; ``None`` gives
        ``D + 2`` and the identity.
    tol, max_iter : convergence controls for the coordinate ascent.
    merge_moves : bool, default True
        Try merging split components after the ascent.
    random_state : int, RngStream, Generator or None
        Seeds the k-means++ initialization.
    """

    def __init__(self, n_components: int = 10, concentration: float = 1.0, mean_prior=None, dof=None,
                 scale=None, tol: float = 1e-5, max_iter: int = 200, merge_moves: bool = True,
                 random_state=None):
        self.n_components = n_components
        self.concentration = concentration
        self.mean_prior = mean_prior
        self.dof = dof
        self.scale = scale
        self.tol = tol
        self.max_iter = max_iter
        self.merge_moves = merge_moves
        self.random_state = random_state

    def _prior(self) -> IgmmPrior:
        return IgmmPrior(self.concentration, self.n_components, self.mean_prior, self.dof, self.scale)

    def fit(self, X, y=None):
        X = check_array(X)
        post = fit_igmm(X, self._prior(), self.tol, self.max_iter, self.random_state, self.merge_moves)
        self.posterior_ = post
        self.means_ = post.means
        self.weights_ = post.weights
        self.covariances_ = post.covariances
        self.elbo_trace_ = post.elbo_trace
        self.n_iter_ = len(post.elbo_trace) - 1  # sweeps plus accepted merges
        self.converged_ = post.converged
        self.labels_ = np.argmax(post.resp, axis=1)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "posterior_")
        X = check_array(X)
        p = self.posterior_
        return _update_resp(p.sticks, _expected_log_lik(X, p.means, p.mean_covs, p.dof, p.scales))[0]

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def score(self, X, y=None) -> float:
        """Evidence bound on the training data (``X`` must be that data)."""
        check_is_fitted(self, "posterior_")
        return elbo(self.posterior_, X)

    def peaks(self, domain: SearchDomain, weight_threshold: float = 0.02, merge_tol=None) -> PeakSet:
        check_is_fitted(self, "posterior_")
        return extract_peaks(self.posterior_, domain, weight_threshold, merge_tol)
