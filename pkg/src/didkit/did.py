"""ATT estimators for staggered adoption.

Every group-time estimate compares the change in mean outcome of the units
first treated at ``g`` between a base period and period ``t`` with the same
change among comparison units. The estimators differ in how the comparison
change is formed:

* ``att_2x2_means``: difference of four cell means.
* ``att_2x2_regression``: interaction coefficient of a saturated 2x2
  regression, optionally with covariates.
* ``att_or_adjusted``: per-period outcome regressions fit on the comparison
  units, averaged over the treated units' covariates.

``att_gt_all`` runs one of them over every (g, t) pair; ``aggregate_event``
and ``aggregate_overall`` average the grid by event time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from didkit._log import SkippedPairWarning, SmallCellWarning, emit
from didkit.errors import (
    CollinearityError,
    EmptyCellError,
    EstimationError,
    InestimableError,
    NoPrePeriodsError,
    PanelDataError,
    SupportError,
)
from didkit.panel import (
    ControlRule,
    GroupPredicate,
    PanelDataset,
    control_predicate,
)
from didkit.regress import (
    Covariate,
    GroupIndicator,
    Intercept,
    Interaction,
    SplineBasis,
    TimeIndicator,
    TreatedPostIndicator,
    build_design,
    ols_fit,
    rcs_knots,
    with_cluster_vcov,
)

__all__ = [
    "Estimator",
    "CovariateMode",
    "GroupTimeATT",
    "EventEstimate",
    "AggregationResult",
    "EstimatorConfig",
    "TwfeResult",
    "att_2x2_means",
    "att_2x2_regression",
    "att_or_adjusted",
    "att_gt",
    "att_gt_all",
    "grid_pairs",
    "group_sizes",
    "aggregate_event",
    "aggregate_overall",
    "twfe_estimate",
    "stratified_att",
    "pretrend_atts",
    "CellTable",
]

SMALL_CELL = 30

ASSUME_UNCONDITIONAL = ("consistency", "unconditional parallel trends")
ASSUME_ADDITIVE = ASSUME_UNCONDITIONAL + ("effect homogeneous across covariates",)
ASSUME_INTERACTED = ("consistency", "conditional parallel trends", "effect homogeneous across covariates")
ASSUME_OR = ("consistency", "conditional parallel trends", "common support")
TWFE_CAVEAT = "valid only if the effect is homogeneous across groups and periods"


class Estimator(str, enum.Enum):
    MEANS = "means"
    REGRESSION = "regression"
    OUTCOME_REGRESSION = "outcome-regression"

    @classmethod
    def parse(cls, value) -> "Estimator":
        if isinstance(value, cls):
            return value
        v = str(value).lower().replace("_", "-")
        aliases = {"or": "outcome-regression", "outcomeregression": "outcome-regression"}
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise ValueError(f"unknown estimator {value!r}; expected one of {[e.value for e in cls]}") from None


class CovariateMode(str, enum.Enum):
    NONE = "none"
    ADDITIVE = "additive"
    INTERACTED = "interacted"

    @classmethod
    def parse(cls, value) -> "CovariateMode":
        if isinstance(value, cls):
            return value
        v = str(value).lower()
        aliases = {"interactedwithtime": "interacted", "interacted-with-time": "interacted"}
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise ValueError(f"unknown covariate mode {value!r}") from None


@dataclass(frozen=True)
class GroupTimeATT:
    g: int
    t: int
    estimate: float
    base_period: int
    n_treated: int
    n_control: int
    control_rule: ControlRule
    estimator: Estimator
    se: float = math.nan
    ci_low: float = math.nan
    ci_high: float = math.nan
    assumptions: tuple[str, ...] = ()

    @property
    def w(self) -> int:
        return self.t - self.g

    def with_ci(self, low: float, high: float) -> "GroupTimeATT":
        return replace(self, ci_low=float(low), ci_high=float(high))


@dataclass(frozen=True)
class EventEstimate:
    estimate: float
    groups: tuple[int, ...]
    weights: tuple[float, ...]
    partial: bool = False
    ci_low: float = math.nan
    ci_high: float = math.nan


@dataclass(frozen=True)
class AggregationResult:
    event_curve: dict[int, EventEstimate]
    group_weights: dict[int, float]
    overall: float | None
    included_pairs: list[tuple[int, int]]
    overall_ci: tuple[float, float] = (math.nan, math.nan)

    def curve(self) -> dict[int, float]:
        return {w: e.estimate for w, e in self.event_curve.items()}


def _normalise_covariate(term):
    if isinstance(term, str):
        name, _, knots = term.partition(":")
        return SplineBasis(name, int(knots)) if knots else Covariate(name)
    return term


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings shared by every pair of a group-time grid.

    Covariates are design terms (:class:`~didkit.regress.Covariate` or
    :class:`~didkit.regress.SplineBasis`); plain strings are accepted, with
    ``"age:3"`` meaning a 3-knot spline in ``age``.
    """

    covariates: tuple = ()
    control_rule: ControlRule = ControlRule.NOT_YET
    anticipation: int = 0
    min_cell: int = 1
    estimator: Estimator = Estimator.MEANS
    covariate_mode: CovariateMode = CovariateMode.ADDITIVE
    require_balanced: bool = False
    alpha: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(_normalise_covariate(c) for c in self.covariates))
        object.__setattr__(self, "control_rule", ControlRule.parse(self.control_rule))
        object.__setattr__(self, "estimator", Estimator.parse(self.estimator))
        object.__setattr__(self, "covariate_mode", CovariateMode.parse(self.covariate_mode))
        if self.anticipation < 0:
            raise ValueError("anticipation must be >= 0")
        if self.min_cell < 1:
            raise ValueError("min_cell must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.covariates and self.estimator is Estimator.MEANS:
            raise ValueError("the means estimator takes no covariates; use regression or outcome-regression")


# -- 2x2 building blocks ----------------------------------------------------


@dataclass(frozen=True)
class _Cells:
    treated_t: np.ndarray
    treated_b: np.ndarray
    control_t: np.ndarray
    control_b: np.ndarray
    n_treated: int
    n_control: int


def _cells(data, g, t, base, control, *, anticipation=0, require_balanced=False, min_cell=1) -> _Cells:
    treated = GroupPredicate.equals(g)
    ctrl = control_predicate(control, g, t, base, anticipation)
    groups = data.record_group
    is_t, is_c = treated(groups), ctrl(groups)
    at_t, at_b = data.time == t, data.time == base
    masks = [is_t & at_t, is_t & at_b, is_c & at_t, is_c & at_b]
    if require_balanced:
        seen = np.zeros((2, data.n_units), dtype=bool)
        for j, m in enumerate((at_t, at_b)):
            seen[j, data.unit_index[m]] = True
        both = (seen[0] & seen[1])[data.unit_index]
        masks = [m & both for m in masks]
    labels = (treated, treated, ctrl, ctrl)
    periods = (t, base, t, base)
    for m, lab, p in zip(masks, labels, periods):
        n = int(np.count_nonzero(m))
        if n == 0:
            raise EmptyCellError(f"empty cell: {lab} at period {p}")
        if n < min_cell:
            raise EmptyCellError(f"cell {lab} at period {p} has {n} records, below min_cell={min_cell}")
        if n < SMALL_CELL:
            emit(f"small cell: {lab} at period {p} has {n} records", SmallCellWarning)
    n_treated = np.unique(data.unit_index[masks[0] | masks[1]]).shape[0]
    n_control = np.unique(data.unit_index[masks[2] | masks[3]]).shape[0]
    return _Cells(*masks, n_treated, n_control)


def _mean(data, mask) -> float:
    return float(data.outcome[mask].sum() / np.count_nonzero(mask))


def att_2x2_means(
    data: PanelDataset,
    g: int,
    t: int,
    base: int,
    control: ControlRule | str = ControlRule.NOT_YET,
    *,
    anticipation: int = 0,
    require_balanced: bool = False,
    min_cell: int = 1,
) -> GroupTimeATT:
    """(treated change from ``base`` to ``t``) minus (control change)."""
    control = ControlRule.parse(control)
    c = _cells(data, g, t, base, control, anticipation=anticipation,
               require_balanced=require_balanced, min_cell=min_cell)
    est = (_mean(data, c.treated_t) - _mean(data, c.treated_b)) - (
        _mean(data, c.control_t) - _mean(data, c.control_b)
    )
    return GroupTimeATT(int(g), int(t), est, int(base), c.n_treated, c.n_control, control,
                        Estimator.MEANS, assumptions=ASSUME_UNCONDITIONAL)


def _normal_ci(est: float, se: float, alpha: float) -> tuple[float, float]:
    z = stats.norm.ppf(1 - alpha / 2)
    return est - z * se, est + z * se


def att_2x2_regression(
    data: PanelDataset,
    g: int,
    t: int,
    base: int,
    control: ControlRule | str = ControlRule.NOT_YET,
    covariate_mode: CovariateMode | str = CovariateMode.NONE,
    covariates: Sequence = (),
    *,
    alpha: float = 0.05,
    anticipation: int = 0,
    require_balanced: bool = False,
    min_cell: int = 1,
) -> GroupTimeATT:
    """Interaction coefficient of the 2x2 regression.

    The model is ``y ~ 1 + I{G=g} + I{T=t} + I{G=g}*I{T=t}`` on the
    restricted sample, plus covariates (``additive``) or covariates and their
    interactions with ``I{T=t}`` (``interacted``). The CI uses the cluster
    sandwich with units as clusters.
    """
    control = ControlRule.parse(control)
    mode = CovariateMode.parse(covariate_mode)
    terms = [_normalise_covariate(c) for c in covariates]
    if mode is CovariateMode.NONE and terms:
        raise ValueError("covariate_mode 'none' given together with covariates")
    c = _cells(data, g, t, base, control, anticipation=anticipation,
               require_balanced=require_balanced, min_cell=min_cell)
    sub = data.select(c.treated_t | c.treated_b | c.control_t | c.control_b)
    G, T = GroupIndicator(g), TimeIndicator(t)
    spec = [Intercept(), G, T, Interaction(G, T)]
    terms = _fix_knots(sub, terms)
    for term in terms:
        spec.append(term)
        if mode is CovariateMode.INTERACTED:
            spec.append(Interaction(term, T))
    X, y, clusters, names = build_design(sub, spec)
    fit = ols_fit(X, y, names)
    target = names[3]
    if target in fit.dropped:
        raise CollinearityError(f"treated x post column {target} is collinear with the design; ATT({g},{t}) is not identified")
    fit = with_cluster_vcov(fit, clusters)
    est = fit.coefficients[target]
    se = fit.se(target)
    lo, hi = _normal_ci(est, se, alpha)
    assumptions = {CovariateMode.NONE: ASSUME_UNCONDITIONAL, CovariateMode.ADDITIVE: ASSUME_ADDITIVE,
                   CovariateMode.INTERACTED: ASSUME_INTERACTED}[mode]
    return GroupTimeATT(int(g), int(t), est, int(base), c.n_treated, c.n_control, control,
                        Estimator.REGRESSION, se=se, ci_low=lo, ci_high=hi, assumptions=assumptions)


def _unit_rows(data: PanelDataset, mask: np.ndarray) -> np.ndarray:
    """First record of every unit touched by ``mask``."""
    rows = np.flatnonzero(mask)
    _, first = np.unique(data.unit_index[rows], return_index=True)
    return rows[first]


def _fix_knots(data: PanelDataset, terms):
    """Pin spline knots to unit-level quantiles of ``data``."""
    out = []
    rows = None
    for term in terms:
        if isinstance(term, SplineBasis) and term.knots is None:
            if term.name not in data.covariates:
                raise PanelDataError(f"unknown covariate {term.name!r}; dataset has {data.covariate_names}")
            if rows is None:
                rows = _unit_rows(data, np.ones(data.n_records, dtype=bool))
            knots = rcs_knots(data.covariates[term.name][rows], term.n_knots)
            term = replace(term, knots=tuple(knots.tolist()))
        out.append(term)
    return out


def att_or_adjusted(
    data: PanelDataset,
    g: int,
    t: int,
    base: int,
    control: ControlRule | str = ControlRule.NOT_YET,
    covariates: Sequence = (),
    *,
    anticipation: int = 0,
    require_balanced: bool = False,
    min_cell: int = 1,
) -> GroupTimeATT:
    """Outcome-regression ATT standardised over the treated covariates.

    One linear model per period (``t`` and ``base``) is fit on comparison
    units only, so every covariate effect may differ between the periods.
    The predicted change for each treated unit is averaged and subtracted
    from the treated units' observed mean change.
    """
    control = ControlRule.parse(control)
    c = _cells(data, g, t, base, control, anticipation=anticipation,
               require_balanced=require_balanced, min_cell=min_cell)
    terms = [_normalise_covariate(x) for x in covariates]
    sub_mask = c.treated_t | c.treated_b | c.control_t | c.control_b
    terms = _fix_knots(data.select(sub_mask), terms)

    for term in terms:
        spec = data.covariate_spec(term.name) if term.name in data.covariates else None
        if spec is not None and spec.is_categorical:
            treated_lv = set(np.unique(data.covariates[term.name][c.treated_t | c.treated_b]).tolist())
            for m, p in ((c.control_t, t), (c.control_b, base)):
                control_lv = set(np.unique(data.covariates[term.name][m]).tolist())
                missing = sorted(treated_lv - control_lv)
                if missing:
                    levels = [spec.levels[i] for i in missing]
                    raise SupportError(
                        f"common support fails for {term.name}: level(s) {levels} occur among treated "
                        f"units but not among comparison units at period {p}"
                    )

    design = [Intercept(), *terms]
    treated_rows = _unit_rows(data, c.treated_t | c.treated_b)
    Xt, *_ = build_design(data.select(_mask_from_rows(data, treated_rows)), design)
    predicted = []
    for m, p in ((c.control_t, t), (c.control_b, base)):
        X, y, _, names = build_design(data.select(m), design)
        fit = ols_fit(X, y, names)
        if fit.dropped:
            raise CollinearityError(
                f"comparison-unit design at period {p} is rank deficient (dropped {fit.dropped})"
            )
        predicted.append(Xt @ fit.beta)
    counterfactual = float(np.mean(predicted[0] - predicted[1]))
    observed = _mean(data, c.treated_t) - _mean(data, c.treated_b)
    return GroupTimeATT(int(g), int(t), observed - counterfactual, int(base), c.n_treated, c.n_control,
                        control, Estimator.OUTCOME_REGRESSION, assumptions=ASSUME_OR)


def _mask_from_rows(data, rows):
    m = np.zeros(data.n_records, dtype=bool)
    m[rows] = True
    return m


# -- the group-time grid ----------------------------------------------------


def att_gt(data: PanelDataset, g: int, t: int, base: int, config: EstimatorConfig) -> GroupTimeATT:
    """One ATT(g, t) with the estimator and settings of ``config``."""
    common = dict(anticipation=config.anticipation, require_balanced=config.require_balanced,
                  min_cell=config.min_cell)
    if config.estimator is Estimator.MEANS:
        return att_2x2_means(data, g, t, base, config.control_rule, **common)
    if config.estimator is Estimator.REGRESSION:
        mode = config.covariate_mode if config.covariates else CovariateMode.NONE
        return att_2x2_regression(data, g, t, base, config.control_rule, mode, config.covariates,
                                  alpha=config.alpha, **common)
    return att_or_adjusted(data, g, t, base, config.control_rule, config.covariates, **common)


def grid_pairs(data: PanelDataset, config: EstimatorConfig, include_pre: bool = False) -> list[tuple[int, int, int]]:
    """(g, t, base) triples of the grid, ordered by g then t.

    Post-treatment pairs use base ``g - 1 - anticipation``; pre-treatment
    placebo pairs use the preceding period as base.
    """
    first, last = int(data.periods[0]), int(data.periods[-1])
    pairs = []
    for g in data.treated_groups:
        if g > last:
            continue
        base = g - 1 - config.anticipation
        if base < first:
            emit(f"group {g} has no pre-treatment base period in the data; skipped", SkippedPairWarning)
            continue
        if include_pre:
            for t in range(first + 1, base + 1):
                pairs.append((g, t, t - 1))
        for t in range(g, last + 1):
            pairs.append((g, t, base))
    return pairs


def att_gt_all(data: PanelDataset, config: EstimatorConfig | None = None, include_pre: bool = False) -> list[GroupTimeATT]:
    """ATT(g, t) for every estimable group and period.

    Pairs whose cells are empty are skipped with a
    :class:`~didkit._log.SkippedPairWarning` naming the reason.
    """
    config = config or EstimatorConfig()
    out = []
    for g, t, base in grid_pairs(data, config, include_pre):
        try:
            out.append(att_gt(data, g, t, base, config))
        except InestimableError as exc:
            emit(f"ATT({g},{t}) skipped: {exc}", SkippedPairWarning)
    if not out:
        raise EstimationError("no estimable (g, t) pairs")
    return out


def group_sizes(data: PanelDataset) -> dict[int, int]:
    """Treated units per group, counted at the group's first treated period."""
    sizes = {}
    for g in data.treated_groups:
        in_group = data.unit_group == g
        observed = np.zeros(data.n_units, dtype=bool)
        observed[data.unit_index[data.time == g]] = True
        n = int(np.count_nonzero(in_group & observed))
        sizes[g] = n if n > 0 else int(np.count_nonzero(in_group))
    return sizes


def aggregate_event(atts: Sequence[GroupTimeATT], group_sizes: Mapping[int, float]) -> AggregationResult:
    """Event-time curve: size-weighted mean of ATT(g, g+w) over groups.

    At each event time the weights are renormalised over the groups that
    have an estimate there. An event time is flagged ``partial`` when a
    group that could reach it within the observed periods has no estimate.
    The overall value is the simple mean of the curve over w >= 0.
    """
    atts = list(atts)
    if not atts:
        raise EstimationError("nothing to aggregate")
    if len({(a.estimator, a.control_rule) for a in atts}) > 1:
        raise ValueError("ATTs to aggregate must share estimator and control rule")
    groups = sorted({a.g for a in atts})
    missing = [g for g in groups if g not in group_sizes]
    if missing:
        raise ValueError(f"group_sizes has no entry for group(s) {missing}")
    total = float(sum(group_sizes[g] for g in groups))
    weights = {g: group_sizes[g] / total for g in groups}
    t_min = min(min(a.t, a.base_period) for a in atts)
    t_max = max(a.t for a in atts)

    by_w: dict[int, dict[int, float]] = {}
    for a in atts:
        by_w.setdefault(a.w, {})
        if a.g in by_w[a.w]:
            raise ValueError(f"duplicate ATT for g={a.g}, w={a.w}")
        by_w[a.w][a.g] = a.estimate
    curve = {}
    for w in sorted(by_w):
        ests = by_w[w]
        gs = sorted(ests)
        sz = np.array([group_sizes[g] for g in gs], dtype=float)
        wt = sz / sz.sum()
        value = float(np.dot(wt, [ests[g] for g in gs]))
        reachable = [g for g in groups if t_min < g + w <= t_max] if w < 0 else [g for g in groups if g + w <= t_max]
        partial = any(g not in ests for g in reachable)
        curve[w] = EventEstimate(value, tuple(gs), tuple(wt.tolist()), partial)
    post = {w: e.estimate for w, e in curve.items() if w >= 0}
    overall = aggregate_overall(post) if post else None
    pairs = sorted((a.g, a.w) for a in atts)
    return AggregationResult(curve, weights, overall, pairs)


def aggregate_overall(event_curve: Mapping[int, float | EventEstimate]) -> float:
    """Unweighted mean of the event-time curve over w >= 0."""
    vals = [
        (v.estimate if isinstance(v, EventEstimate) else float(v)) for w, v in event_curve.items() if w >= 0
    ]
    if not vals:
        raise EstimationError("event curve has no post-treatment (w >= 0) entries")
    return float(math.fsum(vals) / len(vals))


# -- TWFE and diagnostics ---------------------------------------------------


@dataclass(frozen=True)
class TwfeResult:
    coefficient: float
    se: float
    ci_low: float
    ci_high: float
    n: int
    n_clusters: int
    caveat: str = TWFE_CAVEAT

    @property
    def ci(self) -> tuple[float, float]:
        return self.ci_low, self.ci_high


def twfe_estimate(data: PanelDataset, cluster_level: str = "unit", alpha: float = 0.05) -> TwfeResult:
    """Two-way fixed effects coefficient on I{t >= g}.

    Regresses the outcome on the treated-period indicator, group indicators
    and period indicators (first level of each as reference).
    """
    if cluster_level != "unit":
        raise ValueError(f"unsupported cluster level {cluster_level!r}; only 'unit' is implemented")
    groups = np.unique(data.unit_group)
    # the indicator goes last so that, under collinearity, it is the column dropped
    spec = [Intercept()]
    spec += [GroupIndicator(g) for g in groups[1:]]
    spec += [TimeIndicator(int(t)) for t in data.periods[1:]]
    spec.append(TreatedPostIndicator())
    X, y, clusters, names = build_design(data, spec)
    fit = ols_fit(X, y, names)
    if "treated_post" in fit.dropped:
        raise CollinearityError("treated-period indicator is collinear with the fixed effects; no identifying variation")
    fit = with_cluster_vcov(fit, clusters)
    est = fit.coefficients["treated_post"]
    se = fit.se("treated_post")
    lo, hi = _normal_ci(est, se, alpha)
    return TwfeResult(est, se, lo, hi, fit.n, int(fit.n_clusters))


def stratified_att(
    data: PanelDataset,
    g: int,
    t: int,
    base: int,
    control: ControlRule | str = ControlRule.NOT_YET,
    stratum_covariate: str = "",
    *,
    alpha: float = 0.05,
    require_balanced: bool = False,
) -> dict[str, GroupTimeATT]:
    """Unadjusted 2x2 ATT within each level of a categorical covariate.

    Levels lacking one of the four cells are skipped with a warning.
    """
    spec = data.covariate_spec(stratum_covariate)
    if not spec.is_categorical:
        raise PanelDataError(f"covariate {stratum_covariate!r} is numeric; stratification needs a categorical covariate")
    out = {}
    codes = data.covariates[stratum_covariate]
    for i, level in enumerate(spec.levels):
        mask = codes == i
        if not mask.any():
            continue
        try:
            out[level] = att_2x2_regression(data.select(mask), g, t, base, control, alpha=alpha,
                                            require_balanced=require_balanced)
        except InestimableError as exc:
            emit(f"stratum {stratum_covariate}={level} skipped: {exc}", SkippedPairWarning)
    return out


def pretrend_atts(data: PanelDataset, config: EstimatorConfig | None = None) -> list[GroupTimeATT]:
    """Placebo ATTs at negative event times (each against the preceding period)."""
    config = config or EstimatorConfig()
    pairs = [p for p in grid_pairs(data, config, include_pre=True) if p[1] < p[0]]
    if not pairs:
        raise NoPrePeriodsError("no pre-periods available")
    out = []
    for g, t, base in pairs:
        try:
            out.append(att_gt(data, g, t, base, config))
        except InestimableError as exc:
            emit(f"ATT({g},{t}) skipped: {exc}", SkippedPairWarning)
    if not out:
        raise NoPrePeriodsError("no pre-periods available: every placebo pair is inestimable")
    return out


# -- cell-sum engine for resampling loops -----------------------------------


class CellTable:
    """Weighted outcome sums and record counts per (group, period) cell.

    Every means-estimator ATT, group size and event curve is a function of
    these sums, so a cluster bootstrap replicate reduces to one weighted
    ``bincount`` with the number of times each unit was drawn as weight.
    Results agree with :func:`att_2x2_means` up to floating-point summation
    order.
    """

    def __init__(self, data: PanelDataset):
        self.data = data
        self.group_values = np.unique(data.unit_group)
        self.periods = data.periods
        self._g_of_unit = np.searchsorted(self.group_values, data.unit_group)
        t_idx = np.searchsorted(self.periods, data.time)
        self._cell = self._g_of_unit[data.unit_index] * self.periods.shape[0] + t_idx
        self._shape = (self.group_values.shape[0], self.periods.shape[0])
        self.sums, self.counts = self.tables(None)
        observed = np.zeros(data.n_units, dtype=bool)
        self._size_units = {}
        for g in data.treated_groups:
            observed[:] = False
            observed[data.unit_index[data.time == g]] = True
            in_group = data.unit_group == g
            at_g = in_group & observed
            self._size_units[g] = at_g if at_g.any() else in_group

    def tables(self, unit_weights: np.ndarray | None):
        d = self.data
        size = self._shape[0] * self._shape[1]
        if unit_weights is None:
            w = None
            y = d.outcome
        else:
            w = np.asarray(unit_weights, dtype=float)[d.unit_index]
            y = w * d.outcome
        sums = np.bincount(self._cell, weights=y, minlength=size).reshape(self._shape)
        counts = np.bincount(self._cell, weights=w, minlength=size).reshape(self._shape)
        return sums, counts

    def _col(self, t) -> int:
        j = int(np.searchsorted(self.periods, t))
        if j >= self.periods.shape[0] or self.periods[j] != t:
            raise EmptyCellError(f"period {t} is not in the data")
        return j

    def rows(self, predicate: GroupPredicate) -> np.ndarray:
        return predicate(self.group_values)

    def att(self, g, t, base, control, anticipation=0, min_cell=1, tables=None) -> float:
        sums, counts = tables if tables is not None else (self.sums, self.counts)
        treated = self.rows(GroupPredicate.equals(g))
        ctrl = self.rows(control_predicate(control, g, t, base, anticipation))
        jt, jb = self._col(t), self._col(base)
        out = 0.0
        for rows, sign in ((treated, 1.0), (ctrl, -1.0)):
            for j, s in ((jt, 1.0), (jb, -1.0)):
                n = counts[rows, j].sum()
                if n < min_cell or n == 0:
                    raise EmptyCellError(f"empty cell at period {self.periods[j]} for ATT({g},{t})")
                out += sign * s * sums[rows, j].sum() / n
        return out

    def group_sizes(self, unit_weights: np.ndarray | None = None) -> dict[int, float]:
        """Weighted analogue of :func:`group_sizes`."""
        if unit_weights is None:
            return {g: float(m.sum()) for g, m in self._size_units.items()}
        w = np.asarray(unit_weights, dtype=float)
        return {g: float(w[m].sum()) for g, m in self._size_units.items()}
