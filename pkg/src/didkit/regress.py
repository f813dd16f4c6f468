"""Design matrices, least squares and cluster-robust covariance.

Every regression-form estimator in the package goes through three steps:
:func:`build_design` turns a :class:`DesignSpec` into a numeric matrix,
:func:`ols_fit` solves the least-squares problem, and
:func:`cluster_robust_vcov` computes the sandwich covariance with units as
clusters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from didkit._log import DidWarning, emit
from didkit.errors import EstimationError, PanelDataError
from didkit.panel import PanelDataset

__all__ = [
    "Intercept",
    "GroupIndicator",
    "TimeIndicator",
    "TreatedPostIndicator",
    "Covariate",
    "CovariateByTime",
    "SplineBasis",
    "SplineByTime",
    "Interaction",
    "DesignSpec",
    "Design",
    "OlsFit",
    "CollinearityWarning",
    "build_design",
    "ols_fit",
    "cluster_robust_vcov",
    "rcs_knots",
    "spline_basis",
]


class CollinearityWarning(DidWarning):
    """A design column was dropped because it is collinear with earlier ones."""


# -- terms ------------------------------------------------------------------


@dataclass(frozen=True)
class Intercept:
    pass


@dataclass(frozen=True)
class GroupIndicator:
    g: float  # np.inf selects never-treated units


@dataclass(frozen=True)
class TimeIndicator:
    t: int


@dataclass(frozen=True)
class TreatedPostIndicator:
    pass


@dataclass(frozen=True)
class Covariate:
    name: str


@dataclass(frozen=True)
class CovariateByTime:
    name: str
    t: int


@dataclass(frozen=True)
class SplineBasis:
    name: str
    n_knots: int = 3
    knots: tuple[float, ...] | None = None


@dataclass(frozen=True)
class SplineByTime:
    name: str
    n_knots: int
    t: int
    knots: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Interaction:
    left: object
    right: object


@dataclass(frozen=True)
class DesignSpec:
    terms: tuple = ()

    def __init__(self, terms: Sequence = ()):
        object.__setattr__(self, "terms", tuple(terms))


class Design(NamedTuple):
    X: np.ndarray
    y: np.ndarray
    cluster_ids: np.ndarray
    column_names: list[str]


def _group_name(g) -> str:
    return "never" if math.isinf(g) else str(int(g))


def _covariate_columns(data: PanelDataset, name: str) -> tuple[np.ndarray, list[str]]:
    if name not in data.covariates:
        raise PanelDataError(f"unknown covariate {name!r}; dataset has {data.covariate_names}")
    spec = data.covariate_spec(name)
    values = data.covariates[name]
    if not spec.is_categorical:
        return values[:, None].astype(float), [name]
    # reference level is the first level in schema order
    cols = [(values == i).astype(float) for i in range(1, len(spec.levels))]
    names = [f"{name}[{lvl}]" for lvl in spec.levels[1:]]
    if not cols:
        return np.empty((data.n_records, 0)), []
    return np.column_stack(cols), names


def _spline_columns(data: PanelDataset, name: str, n_knots: int, knots) -> tuple[np.ndarray, list[str]]:
    if name not in data.covariates:
        raise PanelDataError(f"unknown covariate {name!r}; dataset has {data.covariate_names}")
    if data.covariate_spec(name).is_categorical:
        raise PanelDataError(f"covariate {name!r} is categorical; a spline needs a numeric covariate")
    basis = spline_basis(data.covariates[name], n_knots, knots=knots)
    names = [name] + [name + "'" * j for j in range(1, basis.shape[1])]
    return basis, names


def _expand(data: PanelDataset, term) -> tuple[np.ndarray, list[str]]:
    n = data.n_records
    if isinstance(term, Intercept):
        return np.ones((n, 1)), ["(Intercept)"]
    if isinstance(term, GroupIndicator):
        g = float(term.g)
        col = np.isinf(data.record_group) if math.isinf(g) else data.record_group == g
        return col[:, None].astype(float), [f"G={_group_name(g)}"]
    if isinstance(term, TimeIndicator):
        return (data.time == term.t)[:, None].astype(float), [f"T={term.t}"]
    if isinstance(term, TreatedPostIndicator):
        return (data.time >= data.record_group)[:, None].astype(float), ["treated_post"]
    if isinstance(term, Covariate):
        return _covariate_columns(data, term.name)
    if isinstance(term, CovariateByTime):
        cols, names = _covariate_columns(data, term.name)
        on = (data.time == term.t).astype(float)[:, None]
        return cols * on, [f"{c}:T={term.t}" for c in names]
    if isinstance(term, SplineBasis):
        return _spline_columns(data, term.name, term.n_knots, term.knots)
    if isinstance(term, SplineByTime):
        cols, names = _spline_columns(data, term.name, term.n_knots, term.knots)
        on = (data.time == term.t).astype(float)[:, None]
        return cols * on, [f"{c}:T={term.t}" for c in names]
    if isinstance(term, Interaction):
        a, an = _expand(data, term.left)
        b, bn = _expand(data, term.right)
        cols = [a[:, i] * b[:, j] for i in range(a.shape[1]) for j in range(b.shape[1])]
        names = [f"{x}:{y}" for x in an for y in bn]
        return (np.column_stack(cols) if cols else np.empty((n, 0))), names
    raise TypeError(f"unknown design term {term!r}")


def build_design(data: PanelDataset, spec: DesignSpec | Sequence) -> Design:
    """Expand ``spec`` into a design matrix with one row per record.

    Cluster ids default to the unit index of each record.
    """
    terms = spec.terms if isinstance(spec, DesignSpec) else tuple(spec)
    blocks, names = [], []
    for term in terms:
        cols, cnames = _expand(data, term)
        blocks.append(cols)
        names.extend(cnames)
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"design has duplicate columns: {dupes}")
    X = np.column_stack(blocks) if blocks else np.empty((data.n_records, 0))
    return Design(X, np.asarray(data.outcome, dtype=float), np.asarray(data.unit_index), names)


# -- least squares ----------------------------------------------------------


@dataclass(frozen=True)
class OlsFit:
    column_names: list[str]
    coefficients: dict[str, float]  # NaN for dropped columns
    kept_names: list[str]
    dropped: list[str]
    beta: np.ndarray  # coefficients of kept columns
    X: np.ndarray  # kept columns, unscaled
    residuals: np.ndarray
    n: int
    rank: int
    xtx_inv: np.ndarray
    vcov_classical: np.ndarray
    vcov_cluster: np.ndarray | None = None
    n_clusters: int | None = None

    @property
    def X_rank(self) -> int:
        return self.rank

    def index(self, name: str) -> int:
        if name in self.dropped:
            raise KeyError(f"column {name!r} was dropped for collinearity")
        return self.kept_names.index(name)

    def se(self, name: str, cluster: bool = True) -> float:
        V = self.vcov_cluster if (cluster and self.vcov_cluster is not None) else self.vcov_classical
        i = self.index(name)
        return float(math.sqrt(max(V[i, i], 0.0)))


def ols_fit(X, y, column_names: Sequence[str] | None = None, rtol: float = 1e-9) -> OlsFit:
    """Least squares via Householder QR on unit-RMS scaled columns.

    A column whose QR diagonal falls below ``rtol`` times the largest one is
    linearly dependent on the columns before it and is dropped; the
    remaining columns are refit. Dropped columns keep a NaN coefficient and
    trigger a :class:`CollinearityWarning`.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EstimationError("regression needs at least one row")
    n, k = X.shape
    if y.shape != (n,):
        raise EstimationError(f"outcome has shape {y.shape}, expected ({n},)")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise EstimationError("design matrix or outcome has non-finite entries")
    names = list(column_names) if column_names is not None else [f"x{j}" for j in range(k)]
    if len(names) != k:
        raise ValueError("column_names length does not match design width")

    scale = np.sqrt(np.mean(X * X, axis=0))
    scale[scale == 0] = 1.0
    Xs = X / scale
    R = np.linalg.qr(Xs, mode="r")
    diag = np.zeros(k)
    m = min(n, k)
    diag[:m] = np.abs(np.diag(R)[:m])
    top = diag.max() if k else 0.0
    kept = diag > rtol * top if top > 0 else np.zeros(k, dtype=bool)
    dropped = [names[j] for j in range(k) if not kept[j]]
    if dropped:
        emit(f"dropped collinear column(s): {', '.join(dropped)}", CollinearityWarning)

    Xk = Xs[:, kept]
    sk = scale[kept]
    p = int(kept.sum())
    if p:
        Q, Rk = np.linalg.qr(Xk)
        bs = solve_triangular(Rk, Q.T @ y)
        Rinv = solve_triangular(Rk, np.eye(p))
        xtx_inv = (Rinv @ Rinv.T) / np.outer(sk, sk)
        beta = bs / sk
    else:
        beta = np.zeros(0)
        xtx_inv = np.zeros((0, 0))
    Xu = X[:, kept]
    resid = y - Xu @ beta
    dof = n - p
    sigma2 = float(resid @ resid) / dof if dof > 0 else math.nan
    vcov = sigma2 * xtx_inv
    coefs = dict.fromkeys(names, math.nan)
    kept_names = [names[j] for j in range(k) if kept[j]]
    coefs.update(zip(kept_names, beta.tolist()))
    return OlsFit(
        column_names=names,
        coefficients=coefs,
        kept_names=kept_names,
        dropped=dropped,
        beta=beta,
        X=Xu,
        residuals=resid,
        n=n,
        rank=p,
        xtx_inv=xtx_inv,
        vcov_classical=(vcov + vcov.T) / 2,
    )


def cluster_robust_vcov(fit: OlsFit, cluster_ids) -> np.ndarray:
    """Cluster sandwich covariance with the CR1 small-sample factor.

    ``(X'X)^-1 (sum_c X_c' r_c r_c' X_c) (X'X)^-1`` scaled by
    ``C/(C-1) * (n-1)/(n-k)``. With one observation per cluster this is HC1.
    """
    cluster_ids = np.asarray(cluster_ids)
    if cluster_ids.shape[0] != fit.n:
        raise ValueError(f"cluster_ids has length {cluster_ids.shape[0]}, fit has {fit.n} rows")
    _, codes = np.unique(cluster_ids, return_inverse=True)
    C = int(codes.max()) + 1 if codes.size else 0
    if C < 2:
        raise EstimationError("cluster-robust covariance needs at least two clusters")
    k = fit.rank
    scores = fit.X * fit.residuals[:, None]
    sums = np.zeros((C, k))
    np.add.at(sums, codes, scores)
    meat = sums.T @ sums
    bread = fit.xtx_inv
    V = bread @ meat @ bread
    n = fit.n
    factor = (C / (C - 1)) * ((n - 1) / (n - k)) if n > k else math.nan
    V = factor * V
    return (V + V.T) / 2


def with_cluster_vcov(fit: OlsFit, cluster_ids) -> OlsFit:
    V = cluster_robust_vcov(fit, cluster_ids)
    return replace(fit, vcov_cluster=V, n_clusters=int(np.unique(cluster_ids).shape[0]))


# -- restricted cubic splines -------------------------------------------------

# knot quantiles by number of knots (Harrell's defaults)
KNOT_QUANTILES = {
    3: (0.10, 0.50, 0.90),
    4: (0.05, 0.35, 0.65, 0.95),
    5: (0.05, 0.275, 0.50, 0.725, 0.95),
    6: (0.05, 0.23, 0.41, 0.59, 0.77, 0.95),
    7: (0.025, 0.1833, 0.3417, 0.50, 0.6583, 0.8167, 0.975),
}


def rcs_knots(x, n_knots: int = 3) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if n_knots not in KNOT_QUANTILES:
        raise ValueError(f"n_knots must be between 3 and 7, got {n_knots}")
    if np.unique(x).shape[0] < n_knots:
        raise ValueError(f"fewer distinct values ({np.unique(x).shape[0]}) than knots ({n_knots})")
    knots = np.quantile(x, KNOT_QUANTILES[n_knots])
    if np.any(np.diff(knots) <= 0):
        raise ValueError(
            f"quantile knots {knots.tolist()} are not distinct; too few distinct values for {n_knots} knots"
        )
    return knots


def spline_basis(x, n_knots: int = 3, knots=None) -> np.ndarray:
    """Restricted (natural) cubic spline basis.

    Returns ``len(knots) - 1`` columns: ``x`` itself followed by one
    truncated-cubic term per interior knot, each normalised by the squared
    knot range. The fitted function is linear below the first and above the
    last knot.
    """
    x = np.asarray(x, dtype=float)
    t = rcs_knots(x, n_knots) if knots is None else np.asarray(knots, dtype=float)
    k = t.shape[0]
    if k < 3 or np.any(np.diff(t) <= 0):
        raise ValueError("need at least 3 strictly increasing knots")
    norm = (t[-1] - t[0]) ** 2
    tail = t[-1] - t[-2]

    def cube(u):
        return np.maximum(u, 0.0) ** 3

    cols = [x]
    for j in range(k - 2):
        cols.append(
            (
                cube(x - t[j])
                - cube(x - t[-2]) * (t[-1] - t[j]) / tail
                + cube(x - t[-1]) * (t[-2] - t[j]) / tail
            )
            / norm
        )
    return np.column_stack(cols)
