"""Synthetic staggered-adoption panels with known treatment effects.

The outcome of unit ``i`` in period ``t`` is

    Y = intercept + a_i + l_t + sum_k f_k(X_ik, t) + d (t - t0) E_i + tau_i(g, t - g) 1{t >= g} + e

where ``E_i`` flags ever-treated units, ``t0`` is the first period and
``f_k`` holds each covariate's level effect plus its level-specific time
trend. Binary outcomes are Bernoulli draws with the mean clipped to
[0.01, 0.99]. Every replicate draws from its own counter-based stream, so
replicate ``r`` of a config is reproducible on its own.
"""

from __future__ import annotations

import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from didkit import _rng
from didkit._log import quiet
from didkit.errors import EstimationError
from didkit.panel import NEVER, NEVER_TOKEN, CovariateSpec, PanelDataset

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

__all__ = [
    "Constant",
    "ByEventTime",
    "ByGroup",
    "ByGroupAndEventTime",
    "ByCovariateLevel",
    "SimCovariate",
    "DgpConfig",
    "TruthTable",
    "InfeasibleConfigError",
    "MonteCarloReport",
    "StatisticSummary",
    "generate_panel",
    "truth_table",
    "monte_carlo_run",
    "load_config",
    "config_from_dict",
]

BINARY_CLIP = (0.01, 0.99)
BINARY_TOLERANCE = 0.05
MAX_FAILED_SHARE = 0.20


class InfeasibleConfigError(ValueError):
    pass


# -- effect specifications --------------------------------------------------


@dataclass(frozen=True)
class Constant:
    tau: float

    def lookup(self, g, w, levels=None) -> float:
        return self.tau


@dataclass(frozen=True)
class ByEventTime:
    """Effect depends on event time only; event times past the last key reuse it."""

    tau: Mapping[int, float]

    def lookup(self, g, w, levels=None) -> float:
        if w in self.tau:
            return self.tau[w]
        top = max(self.tau)
        if w > top:
            return self.tau[top]
        raise KeyError(f"no effect given for event time {w}")


@dataclass(frozen=True)
class ByGroup:
    tau: Mapping[int, float]

    def lookup(self, g, w, levels=None) -> float:
        if g not in self.tau:
            raise KeyError(f"no effect given for group {g}")
        return self.tau[g]


@dataclass(frozen=True)
class ByGroupAndEventTime:
    tau: Mapping[tuple[int, int], float]

    def lookup(self, g, w, levels=None) -> float:
        if (g, w) not in self.tau:
            raise KeyError(f"no effect given for group {g}, event time {w}")
        return self.tau[(g, w)]


@dataclass(frozen=True)
class ByCovariateLevel:
    covariate: str
    tau: Mapping[str, float]

    def lookup(self, g, w, levels=None) -> float:
        level = levels[self.covariate]
        if level not in self.tau:
            raise KeyError(f"no effect given for {self.covariate}={level}")
        return self.tau[level]


EffectSpec = Constant | ByEventTime | ByGroup | ByGroupAndEventTime | ByCovariateLevel


# -- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class SimCovariate:
    """A time-constant covariate.

    ``kind`` is ``"binary"`` (levels ``("0", "1")`` unless given),
    ``"categorical"`` or ``"normal"``. For discrete kinds ``probs`` gives the
    level probabilities among never-treated units; ever-treated units move
    ``group_association`` of probability mass from the first level to the
    last. For normal covariates ever-treated units have their mean shifted
    by ``group_association`` standard deviations. ``effect`` is the level
    effect on the outcome (per unit of X when normal) and ``time_trend`` the
    per-period trend by level (slope in X when normal).
    """

    name: str
    kind: str = "binary"
    levels: tuple[str, ...] = ()
    probs: tuple[float, ...] = ()
    mean: float = 0.0
    sd: float = 1.0
    group_association: float = 0.0
    effect: Mapping[str, float] | float = 0.0
    time_trend: Mapping[str, float] | float = 0.0

    def __post_init__(self):
        if self.kind not in ("binary", "categorical", "normal"):
            raise ValueError(f"covariate kind must be binary, categorical or normal, got {self.kind!r}")
        if self.kind == "normal":
            return
        levels = tuple(self.levels) or (("0", "1") if self.kind == "binary" else ())
        if len(levels) < 2:
            raise ValueError(f"covariate {self.name!r} needs at least two levels")
        if self.kind == "binary" and len(levels) != 2:
            raise ValueError(f"binary covariate {self.name!r} must have exactly two levels")
        probs = tuple(self.probs) or tuple([1 / len(levels)] * len(levels))
        if len(probs) != len(levels) or any(p < 0 for p in probs) or not math.isclose(sum(probs), 1.0):
            raise ValueError(f"covariate {self.name!r}: probs must be nonnegative, one per level, summing to 1")
        object.__setattr__(self, "levels", tuple(str(x) for x in levels))
        object.__setattr__(self, "probs", probs)
        if not probs[0] - self.group_association >= -1e-12 or not probs[-1] + self.group_association <= 1 + 1e-12:
            raise ValueError(f"covariate {self.name!r}: group_association moves probability outside [0, 1]")

    @property
    def discrete(self) -> bool:
        return self.kind != "normal"

    def level_probs(self, ever_treated: bool) -> np.ndarray:
        p = np.array(self.probs, dtype=float)
        if ever_treated:
            p[0] -= self.group_association
            p[-1] += self.group_association
        return np.clip(p, 0.0, 1.0)

    def _by_level(self, value, level: str) -> float:
        if isinstance(value, Mapping):
            return float(value.get(level, 0.0))
        return float(value)

    def contribution(self, x: np.ndarray, t_offset: np.ndarray) -> np.ndarray:
        """Outcome shift f(X, t) for code/value array ``x``."""
        if not self.discrete:
            return x * (float(self.effect) + float(self.time_trend) * t_offset)
        eff = np.array([self._by_level(self.effect, lv) for lv in self.levels])
        trend = np.array([self._by_level(self.time_trend, lv) for lv in self.levels])
        return eff[x] + trend[x] * t_offset


@dataclass(frozen=True)
class DgpConfig:
    n_units: int = 1000
    periods: tuple[int, int] = (2012, 2017)
    group_shares: Mapping[int | str, float] = field(
        default_factory=lambda: {2014: 0.25, 2015: 0.25, 2016: 0.25, NEVER_TOKEN: 0.25}
    )
    effect: EffectSpec = Constant(0.0)
    unit_effect_sd: float = 0.1
    time_effects: Mapping[int, float] = field(default_factory=dict)
    covariates: tuple[SimCovariate, ...] = ()
    noise_sd: float = 0.1
    pretrend_slope: float = 0.0
    outcome_kind: str = "continuous"
    intercept: float = 0.0
    random_entry: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_units < 2:
            raise ValueError("n_units must be >= 2")
        first, last = self.periods
        if not first < last:
            raise ValueError("periods must be (first, last) with first < last")
        shares = {}
        for k, v in self.group_shares.items():
            key = NEVER_TOKEN if (k is None or str(k).lower() == NEVER_TOKEN) else int(k)
            if v < 0 or v > 1:
                raise ValueError(f"group share for {k} must lie in [0, 1]")
            if key != NEVER_TOKEN and key <= first:
                raise ValueError(f"group {key} is treated from the first period; it has no pre-period")
            shares[key] = float(v)
        if not math.isclose(sum(shares.values()), 1.0, abs_tol=1e-9):
            raise ValueError(f"group shares sum to {sum(shares.values())}, not 1")
        object.__setattr__(self, "group_shares", shares)
        if self.noise_sd < 0 or self.unit_effect_sd < 0:
            raise ValueError("noise_sd and unit_effect_sd must be >= 0")
        if self.outcome_kind not in ("continuous", "binary"):
            raise ValueError(f"outcome_kind must be continuous or binary, got {self.outcome_kind!r}")
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "time_effects", {int(k): float(v) for k, v in self.time_effects.items()})
        object.__setattr__(self, "seed", _rng.check_seed(self.seed))
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ValueError("covariate names must be unique")
        if isinstance(self.effect, ByCovariateLevel):
            cov = {c.name: c for c in self.covariates}.get(self.effect.covariate)
            if cov is None or not cov.discrete:
                raise ValueError(f"effect depends on {self.effect.covariate!r}, which is not a discrete covariate")
        for g, w in self._grid():
            for levels in self._level_profiles():
                tau = self.effect.lookup(g, w, levels)
                if not math.isfinite(tau):
                    raise ValueError(f"effect for group {g}, event time {w} is not finite")

    @property
    def period_range(self) -> np.ndarray:
        return np.arange(self.periods[0], self.periods[1] + 1)

    @property
    def treated_groups(self) -> list[int]:
        return sorted(g for g in self.group_shares if g != NEVER_TOKEN)

    def _grid(self):
        last = self.periods[1]
        for g in self.treated_groups:
            for t in range(g, last + 1):
                yield g, t - g

    def _level_profiles(self):
        """Every combination of discrete covariate levels (one empty dict if none)."""
        profiles = [{}]
        for c in self.covariates:
            if c.discrete:
                profiles = [{**p, c.name: lv} for p in profiles for lv in c.levels]
        return profiles

    def lambda_t(self, t) -> float:
        return self.time_effects.get(int(t), 0.0)


# -- generation -------------------------------------------------------------


@dataclass(frozen=True)
class TruthTable:
    """Population ATT(g, t), its event-time curve and overall average.

    ``event_curve`` weights groups by their population shares, renormalised
    over the groups that reach each event time; ``overall`` is the simple
    mean of the curve over w >= 0. ``sample_att`` averages the realised unit
    effects over the treated units observed in each cell.
    """

    att: dict[tuple[int, int], float]
    event_curve: dict[int, float]
    overall: float
    sample_att: dict[tuple[int, int], float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "att": [{"g": g, "t": t, "w": t - g, "value": v} for (g, t), v in sorted(self.att.items())],
            "event_curve": [{"w": w, "value": v} for w, v in sorted(self.event_curve.items())],
            "overall": self.overall,
            "sample_att": [{"g": g, "t": t, "value": v} for (g, t), v in sorted(self.sample_att.items())],
        }


def _population_att(config: DgpConfig, g: int, w: int) -> float:
    """Expected effect among units of group g at event time w."""
    eff = config.effect
    if not isinstance(eff, ByCovariateLevel):
        return float(eff.lookup(g, w))
    cov = next(c for c in config.covariates if c.name == eff.covariate)
    p = cov.level_probs(ever_treated=True)
    return float(sum(pi * eff.lookup(g, w, {cov.name: lv}) for pi, lv in zip(p, cov.levels)))


def truth_table(config: DgpConfig) -> TruthTable:
    last = config.periods[1]
    att = {(g, g + w): _population_att(config, g, w) for g, w in config._grid()}
    curve = {}
    for w in sorted({w for _, w in config._grid()}):
        gs = [g for g in config.treated_groups if g + w <= last]
        shares = np.array([config.group_shares[g] for g in gs])
        if shares.sum() == 0:
            continue
        vals = np.array([att[(g, g + w)] for g in gs])
        curve[w] = float(np.dot(shares / shares.sum(), vals))
    post = [v for w, v in curve.items() if w >= 0]
    overall = float(math.fsum(post) / len(post)) if post else math.nan
    return TruthTable(att, curve, overall)


def _check_binary(config: DgpConfig) -> None:
    """Structural means (no unit effect, no noise) must lie in [0, 1] up to a tolerance."""
    lo, hi = -BINARY_TOLERANCE, 1 + BINARY_TOLERANCE
    first = config.periods[0]
    bad = []
    labels = config.treated_groups + [NEVER_TOKEN]
    for g in labels:
        for t in config.period_range:
            for prof in config._level_profiles():
                mu = config.intercept + config.lambda_t(t)
                for c in config.covariates:
                    if c.discrete:
                        code = np.array([c.levels.index(prof[c.name])])
                        mu += float(c.contribution(code, np.array([t - first]))[0])
                    else:
                        mu += float(c.contribution(np.array([c.mean]), np.array([t - first]))[0])
                if g != NEVER_TOKEN:
                    mu += config.pretrend_slope * (t - first)
                    if t >= g:
                        mu += config.effect.lookup(g, int(t - g), prof)
                if not lo <= mu <= hi:
                    where = ", ".join(f"{k}={v}" for k, v in prof.items())
                    bad.append(f"(G={g}, t={t}{', ' + where if where else ''}): mean {mu:.4g}")
    if bad:
        raise InfeasibleConfigError(
            "binary outcome mean falls outside [0, 1] beyond tolerance in cells: " + "; ".join(bad)
        )


def generate_panel(config: DgpConfig, replicate: int = 0) -> tuple[PanelDataset, TruthTable]:
    """Draw one panel from ``config``; replicate ``r`` uses its own stream."""
    if config.outcome_kind == "binary":
        _check_binary(config)
    rng = _rng.stream(config.seed, _rng.SIMULATION, replicate)
    n = config.n_units
    periods = config.period_range
    first, last = int(periods[0]), int(periods[-1])
    T = periods.shape[0]

    labels = list(config.group_shares)
    probs = np.array([config.group_shares[k] for k in labels])
    draw = rng.choice(len(labels), size=n, p=probs / probs.sum())
    unit_group = np.array([NEVER if labels[i] == NEVER_TOKEN else float(labels[i]) for i in draw])
    ever = np.isfinite(unit_group)

    alpha = rng.normal(0.0, config.unit_effect_sd, size=n) if config.unit_effect_sd > 0 else np.zeros(n)
    cov_codes, schema = {}, []
    for c in config.covariates:
        if c.discrete:
            u = rng.random(n)
            codes = np.empty(n, dtype=np.int64)
            for treated_flag in (False, True):
                m = ever == treated_flag
                cdf = np.cumsum(c.level_probs(treated_flag))
                codes[m] = np.minimum(np.searchsorted(cdf, u[m], side="right"), len(c.levels) - 1)
            cov_codes[c.name] = codes
            schema.append(CovariateSpec(c.name, "categorical", c.levels))
        else:
            z = rng.normal(size=n)
            cov_codes[c.name] = c.mean + c.sd * (z + c.group_association * ever)
            schema.append(CovariateSpec(c.name, "numeric"))

    if config.random_entry:
        entry = rng.integers(first, last, size=n)  # at least two observed periods
    else:
        entry = np.full(n, first)

    # long format, sorted by (unit, time)
    unit_index = np.repeat(np.arange(n), T)
    time = np.tile(periods, n)
    keep = time >= entry[unit_index]
    unit_index, time = unit_index[keep], time[keep]
    N = time.shape[0]
    offset = (time - first).astype(float)
    g_rec = unit_group[unit_index]
    post = time >= g_rec

    mu = config.intercept + alpha[unit_index] + np.array([config.lambda_t(t) for t in periods])[time - first]
    for c in config.covariates:
        mu = mu + c.contribution(cov_codes[c.name][unit_index], offset)
    mu = mu + config.pretrend_slope * offset * ever[unit_index]

    tau_unit = np.zeros(N)
    eff = config.effect
    if isinstance(eff, ByCovariateLevel):
        cov = next(c for c in config.covariates if c.name == eff.covariate)
        per_level = np.array([eff.tau.get(lv, math.nan) for lv in cov.levels])
        level_tau = per_level[cov_codes[cov.name][unit_index]]
        tau_unit[post] = level_tau[post]
    elif post.any():
        gw = np.stack([g_rec[post].astype(np.int64), (time[post] - g_rec[post]).astype(np.int64)], axis=1)
        uniq, inv = np.unique(gw, axis=0, return_inverse=True)
        vals = np.array([eff.lookup(int(g), int(w)) for g, w in uniq])
        tau_unit[post] = vals[inv.ravel()]
    if not np.all(np.isfinite(tau_unit)):
        raise InfeasibleConfigError("effect lookup is not total over the generated covariate levels")
    mu = mu + tau_unit

    if config.outcome_kind == "binary":
        p = np.clip(mu, *BINARY_CLIP)
        y = (rng.random(N) < p).astype(float)
    else:
        y = mu + (rng.normal(0.0, config.noise_sd, size=N) if config.noise_sd > 0 else 0.0)

    width = len(str(n - 1))
    unit_ids = np.char.add("u", np.char.zfill(np.arange(n).astype(str), width))
    covs = {name: v[unit_index] for name, v in cov_codes.items()}
    data = PanelDataset(unit_ids, unit_index, time.astype(np.int64), np.asarray(y, dtype=float),
                        post.astype(np.int8), unit_group, covs, schema)

    truth = truth_table(config)
    sample = {}
    for g, t in truth.att:
        m = (g_rec == g) & (time == t)
        if m.any():
            sample[(g, t)] = float(tau_unit[m].mean())
    return data, TruthTable(truth.att, truth.event_curve, truth.overall, sample)


# -- Monte Carlo ------------------------------------------------------------


@dataclass(frozen=True)
class StatisticSummary:
    name: str
    truth: float
    n: int
    mean: float
    bias: float
    sd: float
    mcse: float
    rmse: float
    coverage: float | None = None
    variance_undefined: bool = False

    @property
    def bias_in_mcse(self) -> float:
        return abs(self.bias) / self.mcse if self.mcse > 0 else math.inf


@dataclass(frozen=True)
class MonteCarloReport:
    n_reps: int
    n_failed: int
    statistics: dict[str, StatisticSummary]
    estimates: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> StatisticSummary:
        return self.statistics[name]

    def to_dict(self) -> dict:
        return {
            "n_reps": self.n_reps,
            "n_failed": self.n_failed,
            "statistics": [asdict(s) for s in self.statistics.values()],
        }


PipelineOutput = Mapping[str, float | tuple[float, float, float]]


def default_targets(truth: TruthTable) -> dict[str, float]:
    out = {f"att({g},{t})": v for (g, t), v in truth.att.items()}
    out.update({f"event({w})": v for w, v in truth.event_curve.items()})
    out["overall"] = truth.overall
    return out


def monte_carlo_run(
    config: DgpConfig,
    n_reps: int,
    pipeline: Callable[[PanelDataset, int], PipelineOutput],
    targets: Mapping[str, float] | Callable[[TruthTable], Mapping[str, float]] | None = None,
    threads: int | None = 1,
) -> MonteCarloReport:
    """Bias, Monte Carlo standard error, RMSE and CI coverage of a pipeline.

    ``pipeline(data, rep)`` returns named estimates, each a float or an
    ``(estimate, ci_low, ci_high)`` triple. Targets default to the truth
    table's cells, event curve and overall value; statistics without a
    target are ignored. Replicates whose pipeline raises an
    :class:`~didkit.errors.EstimationError` count as failed.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")

    def task(r):
        data, truth = generate_panel(config, r)
        with quiet():
            try:
                return truth, dict(pipeline(data, r))
            except EstimationError:
                return truth, None

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, range(n_reps)))
    else:
        results = [task(r) for r in range(n_reps)]

    failed = sum(1 for _, out in results if out is None)
    if failed > MAX_FAILED_SHARE * n_reps:
        raise EstimationError(f"pipeline failed on {failed} of {n_reps} Monte Carlo replicates (limit 20%)")
    truth = results[0][0]
    if targets is None:
        targets = default_targets(truth)
    elif callable(targets):
        targets = targets(truth)

    collected: dict[str, list] = {}
    for _, out in results:
        if out is None:
            continue
        for name, value in out.items():
            if name in targets:
                collected.setdefault(name, []).append(value)

    summaries, estimates = {}, {}
    for name, values in collected.items():
        truth_v = float(targets[name])
        triples = [v if isinstance(v, tuple) else (float(v), math.nan, math.nan) for v in values]
        est = np.array([v[0] for v in triples], dtype=float)
        lo = np.array([v[1] for v in triples], dtype=float)
        hi = np.array([v[2] for v in triples], dtype=float)
        R = est.shape[0]
        mean = float(est.mean())
        sd = float(est.std(ddof=1)) if R > 1 else math.nan
        coverage = float(np.mean((lo <= truth_v) & (truth_v <= hi))) if np.all(np.isfinite(lo)) else None
        summaries[name] = StatisticSummary(
            name=name,
            truth=truth_v,
            n=R,
            mean=mean,
            bias=mean - truth_v,
            sd=sd,
            mcse=sd / math.sqrt(R) if R > 1 else math.nan,
            rmse=float(np.sqrt(np.mean((est - truth_v) ** 2))),
            coverage=coverage,
            variance_undefined=R < 2,
        )
        estimates[name] = est
    return MonteCarloReport(n_reps, failed, summaries, estimates)


# -- config files -----------------------------------------------------------


def _effect_from_dict(d: Mapping) -> EffectSpec:
    kind = str(d.get("kind", "constant")).lower().replace("_", "").replace("-", "")
    if kind == "constant":
        return Constant(float(d["tau"]))
    if kind == "byeventtime":
        return ByEventTime({int(k): float(v) for k, v in d["tau"].items()})
    if kind == "bygroup":
        return ByGroup({int(k): float(v) for k, v in d["tau"].items()})
    if kind == "bygroupandeventtime":
        tau = {}
        for k, v in d["tau"].items():
            g, w = str(k).split(",")
            tau[(int(g), int(w))] = float(v)
        return ByGroupAndEventTime(tau)
    if kind == "bycovariatelevel":
        return ByCovariateLevel(d["covariate"], {str(k): float(v) for k, v in d["tau"].items()})
    raise ValueError(f"unknown effect kind {d.get('kind')!r}")


def config_from_dict(d: Mapping) -> DgpConfig:
    """Build a :class:`DgpConfig` from plain data (parsed JSON or TOML)."""
    d = dict(d)
    known = set(DgpConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "effect" in d:
        d["effect"] = _effect_from_dict(d["effect"])
    if "covariates" in d:
        d["covariates"] = tuple(
            SimCovariate(**{**c, "levels": tuple(c.get("levels", ())), "probs": tuple(c.get("probs", ()))})
            for c in d["covariates"]
        )
    if "periods" in d:
        d["periods"] = tuple(int(p) for p in d["periods"])
    if "group_shares" in d:
        d["group_shares"] = dict(d["group_shares"])
    return DgpConfig(**d)


def load_config(path) -> tuple[DgpConfig, dict]:
    """Read a JSON or TOML file with a ``[dgp]`` table and optional extra tables.

    Returns the DGP config and the remaining top-level entries (for example
    Monte Carlo settings).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    text = path.read_text(encoding="utf-8")
    raw = tomllib.loads(text) if path.suffix.lower() == ".toml" else json.loads(text)
    dgp = raw.pop("dgp", None)
    if dgp is None:
        raise ValueError(f"config file {path} has no 'dgp' section")
    return config_from_dict(dgp), raw
