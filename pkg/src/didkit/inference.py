"""Cluster bootstrap and the joint pre-trend Wald test.

The bootstrap resamples whole units with replacement. Unit ``i`` of the
resample is the unit at sorted position ``k_i`` of the original data, with
``k_1..k_C`` the first ``C`` draws of the counter-based stream
``(seed, BOOTSTRAP, replicate)``. Replicate ``r`` therefore depends only on
``(seed, r)`` and the sorted unit ids, so results are identical whatever
the number of worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
from scipy import stats

from didkit import _rng
from didkit._log import quiet
from didkit.errors import BootstrapInstabilityError, EstimationError, InestimableError, NoPrePeriodsError
from didkit.panel import PanelDataset

__all__ = [
    "Statistic",
    "BootstrapPlan",
    "BootstrapResult",
    "WaldResult",
    "cluster_bootstrap",
    "draw_units",
    "pretrend_wald_test",
    "default_threads",
]

MAX_FAILED_SHARE = 0.20


class Statistic(Protocol):
    """Maps a dataset to a fixed-length vector of estimates.

    An implementation may also provide ``weighted(data)``, returning a
    function of the per-unit draw counts, or ``None`` to decline. The
    bootstrap then skips building resampled datasets; the two routes must
    agree up to rounding.
    """

    def __call__(self, data: PanelDataset) -> np.ndarray: ...


def default_threads() -> int:
    return os.cpu_count() or 1


@dataclass(frozen=True)
class BootstrapPlan:
    statistic: Callable[[PanelDataset], np.ndarray]
    replicates: int = 999
    seed: int = 0
    cluster_level: str = "unit"
    alpha: float = 0.05
    threads: int | None = None

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("replicates must be >= 2")
        if self.cluster_level != "unit":
            raise ValueError(f"unsupported cluster level {self.cluster_level!r}; only 'unit' is implemented")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        object.__setattr__(self, "seed", _rng.check_seed(self.seed))


@dataclass(frozen=True)
class BootstrapResult:
    point: np.ndarray
    replicate_matrix: np.ndarray  # surviving replicates x statistics
    ci_low: np.ndarray
    ci_high: np.ndarray
    covariance: np.ndarray
    n_failed: int
    failed: tuple[int, ...] = field(default=())

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def replicates(self) -> int:
        return self.replicate_matrix.shape[0] + self.n_failed


def draw_units(n_clusters: int, seed: int, replicate: int) -> np.ndarray:
    """Sorted-unit positions drawn for one bootstrap replicate."""
    return _rng.stream(seed, _rng.BOOTSTRAP, replicate).integers(0, n_clusters, size=n_clusters)


def cluster_bootstrap(data: PanelDataset, plan: BootstrapPlan) -> BootstrapResult:
    """Nonparametric bootstrap over units.

    Replicates where the statistic is inestimable (an empty cell, say) are
    dropped and counted in ``n_failed``; more than 20% failures raise
    :class:`~didkit.errors.BootstrapInstabilityError`. Percentile intervals
    come from the surviving replicates.
    """
    C = data.n_units
    if C < 2:
        raise EstimationError("cluster bootstrap needs at least two units")
    point = np.atleast_1d(np.asarray(plan.statistic(data), dtype=float))
    k = point.shape[0]

    weighted = getattr(plan.statistic, "weighted", None)
    fn = weighted(data) if weighted is not None else None
    if fn is not None:

        def one(r):
            counts = np.bincount(draw_units(C, plan.seed, r), minlength=C).astype(float)
            return fn(counts)
    else:

        def one(r):
            return plan.statistic(data.take_units(draw_units(C, plan.seed, r)))

    def task(r):
        with quiet():
            try:
                v = np.atleast_1d(np.asarray(one(r), dtype=float))
            except InestimableError:
                return None
        if v.shape != (k,):
            raise EstimationError(f"statistic returned shape {v.shape} on replicate {r}, expected ({k},)")
        return v

    threads = plan.threads or default_threads()
    R = plan.replicates
    if threads <= 1:
        results = [task(r) for r in range(R)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, range(R)))  # map preserves replicate order

    failed = tuple(r for r, v in enumerate(results) if v is None)
    if len(failed) > MAX_FAILED_SHARE * R:
        raise BootstrapInstabilityError(
            f"bootstrap instability: {len(failed)} of {R} replicates were inestimable (limit 20%)"
        )
    M = np.vstack([v for v in results if v is not None])
    if M.shape[0] < 2:
        raise BootstrapInstabilityError("bootstrap instability: fewer than two usable replicates")
    lo, hi = np.quantile(M, [plan.alpha / 2, 1 - plan.alpha / 2], axis=0)
    cov = np.atleast_2d(np.cov(M, rowvar=False, ddof=1))
    cov = (cov + cov.T) / 2
    return BootstrapResult(point, M, lo, hi, cov, len(failed), failed)


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    df: int
    p_value: float


def pretrend_wald_test(theta, covariance, rel_tol: float = 1e-10) -> WaldResult:
    """Joint Wald test that every pre-treatment estimate is zero.

    ``theta' S^+ theta`` against chi-square with ``df`` equal to the number
    of eigenvalues of ``S`` above ``rel_tol`` times the largest, where
    ``S^+`` is the pseudo-inverse on those eigenvectors.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.size == 0:
        raise NoPrePeriodsError("no pre-periods available: empty pre-treatment curve")
    S = np.atleast_2d(np.asarray(covariance, dtype=float))
    if S.shape != (theta.size, theta.size):
        raise ValueError(f"covariance has shape {S.shape}, expected ({theta.size}, {theta.size})")
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(S))):
        raise EstimationError("Wald test inputs contain non-finite values")
    vals, vecs = np.linalg.eigh((S + S.T) / 2)
    top = vals.max()
    if top <= 0:
        raise EstimationError("pre-trend covariance is zero; the Wald test is undefined")
    keep = vals > rel_tol * top
    proj = vecs[:, keep].T @ theta
    stat = float(np.sum(proj**2 / vals[keep]))
    df = int(keep.sum())
    return WaldResult(stat, df, float(stats.chi2.sf(stat, df)))
