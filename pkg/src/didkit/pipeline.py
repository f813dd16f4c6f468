"""End-to-end estimation runs and their JSON result documents.

:func:`run_estimate` estimates the group-time grid, aggregates it, and
bootstraps the whole vector (grid, curve, overall) jointly so that every
replicate sees the same resample. :func:`run_pretest` does the same for the
pre-treatment placebos and adds the joint Wald test.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from didkit.did import (
    AggregationResult,
    CellTable,
    Estimator,
    EstimatorConfig,
    EventEstimate,
    GroupTimeATT,
    TwfeResult,
    aggregate_event,
    att_gt,
    att_gt_all,
    group_sizes,
    pretrend_atts,
    stratified_att,
    twfe_estimate,
)
from didkit.inference import BootstrapPlan, BootstrapResult, WaldResult, cluster_bootstrap, pretrend_wald_test
from didkit.panel import PanelDataset

__all__ = [
    "SCHEMA_VERSION",
    "GridStatistic",
    "EstimateResult",
    "PretestResult",
    "run_estimate",
    "run_pretest",
    "dumps",
    "schema",
]

SCHEMA_VERSION = "1.0"


@dataclass(frozen=True)
class GridStatistic:
    """Group-time grid, event curve and overall value as one flat vector.

    The vector is ``[ATT(g, t) for pairs] + [curve(w) for event_times]``
    followed by the overall value when ``with_overall`` is set.
    """

    config: EstimatorConfig
    pairs: tuple[tuple[int, int, int], ...]  # (g, t, base)
    event_times: tuple[int, ...]
    with_overall: bool = True

    @classmethod
    def for_atts(cls, atts: Sequence[GroupTimeATT], config: EstimatorConfig, with_overall: bool = True):
        pairs = tuple((a.g, a.t, a.base_period) for a in atts)
        ws = tuple(sorted({a.w for a in atts}))
        return cls(config, pairs, ws, with_overall and any(w >= 0 for w in ws))

    @property
    def labels(self) -> list[str]:
        out = [f"att({g},{t})" for g, t, _ in self.pairs]
        out += [f"event({w})" for w in self.event_times]
        if self.with_overall:
            out.append("overall")
        return out

    def _assemble(self, values: np.ndarray, sizes) -> np.ndarray:
        curve = []
        for w in self.event_times:
            num = den = 0.0
            for (g, t, _), v in zip(self.pairs, values):
                if t - g == w:
                    num += sizes[g] * v
                    den += sizes[g]
            curve.append(num / den)
        parts = [values, np.array(curve)]
        if self.with_overall:
            post = [c for w, c in zip(self.event_times, curve) if w >= 0]
            parts.append(np.array([math.fsum(post) / len(post)]))
        return np.concatenate(parts)

    def __call__(self, data: PanelDataset) -> np.ndarray:
        values = np.array([att_gt(data, g, t, b, self.config).estimate for g, t, b in self.pairs])
        return self._assemble(values, group_sizes(data))

    def weighted(self, data: PanelDataset):
        cfg = self.config
        if cfg.estimator is not Estimator.MEANS or cfg.require_balanced:
            return None
        table = CellTable(data)

        def fn(counts: np.ndarray) -> np.ndarray:
            tables = table.tables(counts)
            values = np.array(
                [
                    table.att(g, t, b, cfg.control_rule, cfg.anticipation, cfg.min_cell, tables)
                    for g, t, b in self.pairs
                ]
            )
            return self._assemble(values, table.group_sizes(counts))

        return fn


@dataclass(frozen=True)
class EstimateResult:
    atts: list[GroupTimeATT]
    aggregation: AggregationResult
    bootstrap: BootstrapResult | None
    twfe: TwfeResult | None = None
    stratified: dict[str, dict[str, GroupTimeATT]] = field(default_factory=dict)
    pretest: "PretestResult | None" = None
    ci_method: str = "none"


@dataclass(frozen=True)
class PretestResult:
    atts: list[GroupTimeATT]
    curve: dict[int, EventEstimate]
    wald: WaldResult | None
    bootstrap: BootstrapResult | None


def _attach_cis(atts, agg, boot: BootstrapResult, stat: GridStatistic):
    lo, hi = boot.ci_low, boot.ci_high
    n = len(stat.pairs)
    atts = [a.with_ci(lo[i], hi[i]) for i, a in enumerate(atts)]
    curve = {}
    for j, w in enumerate(stat.event_times):
        e = agg.event_curve[w]
        curve[w] = EventEstimate(e.estimate, e.groups, e.weights, e.partial, float(lo[n + j]), float(hi[n + j]))
    overall_ci = (float(lo[-1]), float(hi[-1])) if stat.with_overall else (math.nan, math.nan)
    agg = AggregationResult(curve, agg.group_weights, agg.overall, agg.included_pairs, overall_ci)
    return atts, agg


def _bootstrap(data, stat, reps, seed, alpha, threads):
    plan = BootstrapPlan(stat, replicates=reps, seed=seed, alpha=alpha, threads=threads)
    return cluster_bootstrap(data, plan)


def run_estimate(
    data: PanelDataset,
    config: EstimatorConfig | None = None,
    *,
    reps: int = 999,
    seed: int = 0,
    threads: int | None = None,
    include_pre: bool = False,
    stratify: str | None = None,
    pretest: bool = False,
    twfe: bool = True,
) -> EstimateResult:
    """Grid, aggregation and bootstrap CIs; ``reps=0`` skips the bootstrap."""
    config = config or EstimatorConfig()
    atts = att_gt_all(data, config, include_pre=include_pre)
    agg = aggregate_event(atts, group_sizes(data))
    boot = None
    ci_method = "none"
    if reps:
        stat = GridStatistic.for_atts(atts, config)
        boot = _bootstrap(data, stat, reps, seed, config.alpha, threads)
        atts, agg = _attach_cis(atts, agg, boot, stat)
        ci_method = "cluster bootstrap percentile"
    elif config.estimator is Estimator.REGRESSION:
        ci_method = "cluster-robust normal (grid only)"
    tw = twfe_estimate(data, alpha=config.alpha) if twfe else None
    strata = {}
    if stratify:
        for a in atts:
            if a.w >= 0:
                strata[f"{a.g},{a.t}"] = stratified_att(
                    data, a.g, a.t, a.base_period, config.control_rule, stratify, alpha=config.alpha,
                    require_balanced=config.require_balanced,
                )
    pre = run_pretest(data, config, reps=reps, seed=seed, threads=threads) if pretest else None
    return EstimateResult(atts, agg, boot, tw, strata, pre, ci_method)


def run_pretest(
    data: PanelDataset,
    config: EstimatorConfig | None = None,
    *,
    reps: int = 999,
    seed: int = 0,
    threads: int | None = None,
) -> PretestResult:
    """Placebo ATTs at w < 0, their event curve and the joint Wald test.

    The Wald test needs the bootstrap covariance; with ``reps=0`` only the
    point estimates are returned.
    """
    config = config or EstimatorConfig()
    atts = pretrend_atts(data, config)
    agg = aggregate_event(atts, group_sizes(data))
    if not reps:
        return PretestResult(atts, agg.event_curve, None, None)
    stat = GridStatistic.for_atts(atts, config, with_overall=False)
    boot = _bootstrap(data, stat, reps, seed, config.alpha, threads)
    atts, agg = _attach_cis(atts, agg, boot, stat)
    n = len(stat.pairs)
    theta = boot.point[n:]
    cov = boot.covariance[n:, n:]
    return PretestResult(atts, agg.event_curve, pretrend_wald_test(theta, cov), boot)


# -- JSON documents ---------------------------------------------------------


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def att_record(a: GroupTimeATT) -> dict:
    return {
        "g": a.g,
        "t": a.t,
        "w": a.w,
        "base_period": a.base_period,
        "estimate": _num(a.estimate),
        "ci_low": _num(a.ci_low),
        "ci_high": _num(a.ci_high),
        "n_treated": a.n_treated,
        "n_control": a.n_control,
        "control_rule": a.control_rule.value,
        "estimator": a.estimator.value,
        "assumptions": list(a.assumptions),
    }


def curve_records(curve: dict[int, EventEstimate]) -> list[dict]:
    return [
        {
            "w": w,
            "estimate": _num(e.estimate),
            "ci_low": _num(e.ci_low),
            "ci_high": _num(e.ci_high),
            "groups": list(e.groups),
            "weights": [_num(x) for x in e.weights],
            "partial": e.partial,
        }
        for w, e in sorted(curve.items())
    ]


def pretest_record(p: PretestResult) -> dict:
    return {
        "grid": [att_record(a) for a in p.atts],
        "event_curve": curve_records(p.curve),
        "wald": None
        if p.wald is None
        else {"statistic": _num(p.wald.statistic), "df": p.wald.df, "p_value": _num(p.wald.p_value)},
        "n_failed": None if p.bootstrap is None else p.bootstrap.n_failed,
    }


def estimate_record(r: EstimateResult) -> dict:
    agg = r.aggregation
    diag: dict[str, Any] = {}
    if r.twfe is not None:
        diag["twfe"] = {
            "coefficient": _num(r.twfe.coefficient),
            "se": _num(r.twfe.se),
            "ci_low": _num(r.twfe.ci_low),
            "ci_high": _num(r.twfe.ci_high),
            "caveat": r.twfe.caveat,
        }
    if r.stratified:
        diag["stratified"] = [
            {"pair": key, "level": level, **att_record(a)}
            for key, levels in r.stratified.items()
            for level, a in levels.items()
        ]
    if r.pretest is not None:
        diag["pretest"] = pretest_record(r.pretest)
    return {
        "grid": [att_record(a) for a in r.atts],
        "event_curve": curve_records(agg.event_curve),
        "group_weights": [{"g": g, "weight": _num(v)} for g, v in sorted(agg.group_weights.items())],
        "overall": {
            "estimate": _num(agg.overall),
            "ci_low": _num(agg.overall_ci[0]),
            "ci_high": _num(agg.overall_ci[1]),
        },
        "included_pairs": [{"g": g, "w": w} for g, w in agg.included_pairs],
        "bootstrap": {
            "replicates": 0 if r.bootstrap is None else r.bootstrap.replicates,
            "n_failed": 0 if r.bootstrap is None else r.bootstrap.n_failed,
            "ci_method": r.ci_method,
        },
        "diagnostics": diag,
    }


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        text = format(x, ".17g")
        return text
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(document: dict, indent: int = 2) -> str:
    """JSON text with floats at 17 significant digits and keys in insertion order."""
    return _encode(document, indent, 0) + "\n"


def schema() -> dict:
    """The published JSON schema of result documents."""
    path = Path(__file__).with_name("result_schema.json")
    return json.loads(path.read_text(encoding="utf-8"))
