"""Command-line interface.

Subcommands: ``estimate``, ``aggregate``, ``pretest``, ``simulate`` and
``benchmark``. Exit status is 0 on success, 1 for data errors (bad input
files, invalid panels, bad arguments) and 2 for estimation errors.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import pandas as pd

from didkit import __version__
from didkit._log import DidWarning
from didkit.did import (
    CovariateMode,
    Estimator,
    EstimatorConfig,
    GroupTimeATT,
    aggregate_event,
    att_gt_all,
    group_sizes,
    twfe_estimate,
)
from didkit.errors import EstimationError, PanelDataError
from didkit.inference import default_threads
from didkit.panel import ColumnMapping, ControlRule, load_csv, write_csv
from didkit.pipeline import (
    SCHEMA_VERSION,
    curve_records,
    dumps,
    estimate_record,
    pretest_record,
    run_estimate,
    run_pretest,
)
from didkit.regress import Covariate, SplineBasis
from didkit.simgen import default_targets, generate_panel, load_config, monte_carlo_run

EXIT_OK, EXIT_DATA, EXIT_ESTIMATION = 0, 1, 2
EXECUTION_ONLY = ("threads", "output", "emit_plot_data", "verbosity")
GRID_COLUMNS = ["g", "t", "w", "estimate", "ci_low", "ci_high", "n_treated", "n_control"]


@dataclass(frozen=True)
class RunConfig:
    """Parsed command line, echoed in result documents.

    Execution-only settings (thread cap, output destinations, verbosity)
    are left out of the echo: they never change results, and leaving them
    out keeps documents byte-identical across thread counts and output
    paths.
    """

    subcommand: str
    input: str | None = None
    unit_col: str = "unit"
    time_col: str = "time"
    outcome_col: str = "outcome"
    group_col: str | None = None
    treated_col: str | None = None
    covariates: tuple[str, ...] = ()
    categorical: tuple[str, ...] = ()
    spline: tuple[str, ...] = ()
    control: str = ControlRule.NOT_YET.value
    estimator: str = Estimator.MEANS.value
    covariate_mode: str = CovariateMode.ADDITIVE.value
    anticipation: int = 0
    min_cell: int = 1
    require_balanced: bool = False
    include_pre: bool = False
    stratify: str | None = None
    pretest: bool = False
    reps: int = 999
    seed: int | None = None
    alpha: float = 0.05
    threads: int | None = None
    output: str | None = None
    format: str = "json"
    emit_plot_data: str | None = None
    config: str | None = None
    sizes: str | None = None
    panel: str | None = None
    replicate: int = 0
    truth: str | None = None
    verbosity: int = 0

    def to_echo(self) -> dict:
        d = asdict(self)
        for k in EXECUTION_ONLY:
            d.pop(k)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_echo(cls, echo: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in echo.items() if k in names}
        return cls(**kw)

    def mapping(self) -> ColumnMapping:
        covs = list(self.covariates)
        for s in self.spline:
            name = _spline_name(s)
            if name not in covs:
                covs.append(name)
        treated = self.treated_col
        if treated is None and self.group_col is None:
            treated = "treated"
        return ColumnMapping(
            unit=self.unit_col,
            time=self.time_col,
            outcome=self.outcome_col,
            treated=treated,
            group=self.group_col,
            covariates=tuple(covs),
            categorical=tuple(self.categorical),
        )

    def estimator_config(self) -> EstimatorConfig:
        splined = {_spline_name(s) for s in self.spline}
        terms = [Covariate(c) for c in self.covariates if c not in splined]
        for s in self.spline:
            name, _, k = s.partition(":")
            terms.append(SplineBasis(name, int(k) if k else 3))
        return EstimatorConfig(
            covariates=tuple(terms),
            control_rule=self.control,
            anticipation=self.anticipation,
            min_cell=self.min_cell,
            estimator=self.estimator,
            covariate_mode=self.covariate_mode,
            require_balanced=self.require_balanced,
            alpha=self.alpha,
        )


def _spline_name(s: str) -> str:
    return s.partition(":")[0]


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argument errors are input errors: exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_DATA, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="didkit", description="Difference-in-differences under staggered adoption.")
    p.add_argument("--version", action="version", version=f"didkit {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def data_args(sp):
        sp.add_argument("--input", required=True, help="long-format CSV, one row per (unit, period)")
        sp.add_argument("--unit-col", default="unit")
        sp.add_argument("--time-col", default="time")
        sp.add_argument("--outcome-col", default="outcome")
        grp = sp.add_mutually_exclusive_group()
        grp.add_argument("--group-col", help="first-treated period or 'never'")
        grp.add_argument("--treated-col", help="0/1 treatment indicator (default 'treated')")
        sp.add_argument("--covariates", type=_csv_list, default=(), help="comma-separated covariate columns")
        sp.add_argument("--categorical", type=_csv_list, default=(), help="covariates to treat as categorical")
        sp.add_argument("--spline", action="append", default=[], metavar="NAME:KNOTS",
                        help="restricted cubic spline in a numeric covariate, e.g. age:3")
        sp.add_argument("--control", default="notyet", choices=[r.value for r in ControlRule])
        sp.add_argument("--estimator", default="means", choices=[e.value for e in Estimator])
        sp.add_argument("--covariate-mode", default="additive", choices=["additive", "interacted"])
        sp.add_argument("--anticipation", type=int, default=0)
        sp.add_argument("--min-cell", type=int, default=1)
        sp.add_argument("--require-balanced", action="store_true")
        sp.add_argument("--reps", type=int, default=999, help="bootstrap replicates (0 disables)")
        sp.add_argument("--seed", type=int, default=None, help="default: $DIDKIT_SEED, else 0")
        sp.add_argument("--alpha", type=float, default=0.05)
        sp.add_argument("--threads", type=int, default=None, help="worker cap (default: all cores)")
        out_args(sp)

    def out_args(sp):
        sp.add_argument("--output", help="output path (default: stdout)")
        sp.add_argument("--format", default="json", choices=["json", "csv"])
        sp.add_argument("-v", "--verbose", dest="verbosity", action="count", default=0)

    est = sub.add_parser("estimate", help="group-time ATTs, event curve and overall ATT")
    data_args(est)
    est.add_argument("--include-pre", action="store_true", help="also estimate pre-treatment placebos")
    est.add_argument("--stratify", help="categorical covariate for per-level 2x2 ATTs")
    est.add_argument("--pretest", action="store_true", help="add the joint pre-trend Wald test")
    est.add_argument("--emit-plot-data", metavar="PATH", help="tidy CSV of grid and curve for plotting")

    pre = sub.add_parser("pretest", help="pre-treatment placebos and joint Wald test")
    data_args(pre)
    pre.add_argument("--emit-plot-data", metavar="PATH")

    agg = sub.add_parser("aggregate", help="aggregate a grid CSV into an event curve and overall ATT")
    agg.add_argument("--input", required=True, help="grid CSV as written by 'estimate --format csv'")
    src = agg.add_mutually_exclusive_group(required=True)
    src.add_argument("--sizes", help="CSV with columns g,size")
    src.add_argument("--panel", help="panel CSV to count treated units per group")
    agg.add_argument("--unit-col", default="unit")
    agg.add_argument("--time-col", default="time")
    agg.add_argument("--outcome-col", default="outcome")
    grp = agg.add_mutually_exclusive_group()
    grp.add_argument("--group-col")
    grp.add_argument("--treated-col")
    out_args(agg)

    sim = sub.add_parser("simulate", help="draw a synthetic panel and its truth table")
    sim.add_argument("--config", required=True, help="TOML or JSON file with a [dgp] table")
    sim.add_argument("--replicate", type=int, default=0)
    sim.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    sim.add_argument("--output", required=True, help="panel CSV path")
    sim.add_argument("--truth", help="truth JSON path (default: truth.json next to the panel)")
    sim.add_argument("-v", "--verbose", dest="verbosity", action="count", default=0)

    bench = sub.add_parser("benchmark", help="Monte Carlo bias/coverage study from a config file")
    bench.add_argument("--config", required=True)
    bench.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    bench.add_argument("--threads", type=int, default=None)
    bench.add_argument("--output")
    bench.add_argument("-v", "--verbose", dest="verbosity", action="count", default=0)
    return p


def parse_args(argv: Sequence[str] | None = None) -> RunConfig:
    ns = build_parser().parse_args(argv)
    d = vars(ns)
    if d.get("seed") is None and d["subcommand"] in ("estimate", "pretest"):
        env = os.environ.get("DIDKIT_SEED")
        d["seed"] = int(env) if env else 0
    d["spline"] = tuple(d.get("spline") or ())
    for k in ("covariates", "categorical"):
        if k in d:
            d[k] = tuple(d[k])
    names = {f.name for f in fields(RunConfig)}
    return RunConfig(**{k: v for k, v in d.items() if k in names and v is not None})


# -- output -----------------------------------------------------------------


def _write(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if not math.isfinite(x) else format(x, ".17g")
    return str(x)


def grid_csv(atts: Sequence[GroupTimeATT]) -> str:
    lines = [",".join(GRID_COLUMNS)]
    for a in atts:
        row = [a.g, a.t, a.w, a.estimate, a.ci_low, a.ci_high, a.n_treated, a.n_control]
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def plot_csv(atts, curve) -> str:
    lines = ["kind,g,t,w,estimate,ci_low,ci_high"]
    for a in atts:
        lines.append(",".join(_fmt(v) for v in ["group_time", a.g, a.t, a.w, a.estimate, a.ci_low, a.ci_high]))
    for w, e in sorted(curve.items()):
        lines.append(",".join(_fmt(v) for v in ["event", None, None, w, e.estimate, e.ci_low, e.ci_high]))
    return "\n".join(lines) + "\n"


def _messages(caught) -> list[str]:
    """Distinct warning texts in order of first appearance."""
    return list(dict.fromkeys(str(w.message) for w in caught if issubclass(w.category, DidWarning)))


def _document(cfg: RunConfig, body: dict, caught) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "library_version": __version__,
        "command": cfg.subcommand,
        "seed": cfg.seed,
        "config": cfg.to_echo(),
    }
    doc.update(body)
    doc["warnings"] = _messages(caught)
    return doc


# -- subcommands ------------------------------------------------------------


def _cmd_estimate(cfg: RunConfig, caught) -> int:
    data = load_csv(cfg.input, cfg.mapping())
    result = run_estimate(
        data,
        cfg.estimator_config(),
        reps=cfg.reps,
        seed=cfg.seed,
        threads=cfg.threads,
        include_pre=cfg.include_pre,
        stratify=cfg.stratify,
        pretest=cfg.pretest,
    )
    if cfg.emit_plot_data:
        Path(cfg.emit_plot_data).write_text(plot_csv(result.atts, result.aggregation.event_curve), encoding="utf-8")
    if cfg.format == "csv":
        _write(grid_csv(result.atts), cfg.output)
    else:
        _write(dumps(_document(cfg, estimate_record(result), caught)), cfg.output)
    return EXIT_OK


def _cmd_pretest(cfg: RunConfig, caught) -> int:
    data = load_csv(cfg.input, cfg.mapping())
    result = run_pretest(data, cfg.estimator_config(), reps=cfg.reps, seed=cfg.seed, threads=cfg.threads)
    if cfg.emit_plot_data:
        Path(cfg.emit_plot_data).write_text(plot_csv(result.atts, result.curve), encoding="utf-8")
    if cfg.format == "csv":
        _write(grid_csv(result.atts), cfg.output)
    else:
        _write(dumps(_document(cfg, pretest_record(result), caught)), cfg.output)
    return EXIT_OK


def _read_grid(path: str) -> list[GroupTimeATT]:
    p = Path(path)
    if not p.exists():
        raise PanelDataError(f"grid file {p} does not exist")
    frame = pd.read_csv(p)
    missing = [c for c in ("g", "t", "estimate") if c not in frame.columns]
    if missing:
        raise PanelDataError(f"grid file {p} is missing column(s) {', '.join(missing)}")
    atts = []
    for row in frame.itertuples(index=False):
        g, t = int(row.g), int(row.t)
        base = g - 1 if t >= g else t - 1
        nt = int(getattr(row, "n_treated", 0) or 0)
        nc = int(getattr(row, "n_control", 0) or 0)
        atts.append(GroupTimeATT(g, t, float(row.estimate), base, nt, nc, ControlRule.NOT_YET, Estimator.MEANS))
    return atts


def _cmd_aggregate(cfg: RunConfig, caught) -> int:
    atts = _read_grid(cfg.input)
    if cfg.sizes:
        p = Path(cfg.sizes)
        if not p.exists():
            raise PanelDataError(f"sizes file {p} does not exist")
        frame = pd.read_csv(p)
        if not {"g", "size"} <= set(frame.columns):
            raise PanelDataError(f"sizes file {p} needs columns g,size")
        sizes = {int(g): float(s) for g, s in zip(frame["g"], frame["size"])}
    else:
        sizes = group_sizes(load_csv(cfg.panel, cfg.mapping()))
    agg = aggregate_event(atts, sizes)
    if cfg.format == "csv":
        lines = ["w,estimate,partial"] + [
            f"{w},{_fmt(e.estimate)},{str(e.partial).lower()}" for w, e in sorted(agg.event_curve.items())
        ]
        _write("\n".join(lines) + "\n", cfg.output)
        return EXIT_OK
    body = {
        "event_curve": curve_records(agg.event_curve),
        "group_weights": [{"g": g, "weight": v} for g, v in sorted(agg.group_weights.items())],
        "overall": {"estimate": agg.overall, "ci_low": None, "ci_high": None},
        "included_pairs": [{"g": g, "w": w} for g, w in agg.included_pairs],
    }
    _write(dumps(_document(cfg, body, caught)), cfg.output)
    return EXIT_OK


def _cmd_simulate(cfg: RunConfig, caught) -> int:
    dgp, _ = load_config(cfg.config)
    if cfg.seed is not None:
        dgp = _with_seed(dgp, cfg.seed)
    data, truth = generate_panel(dgp, cfg.replicate)
    out = Path(cfg.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(data, out)
    truth_path = Path(cfg.truth) if cfg.truth else out.with_name("truth.json")
    doc = {"schema_version": SCHEMA_VERSION, "library_version": __version__, "seed": dgp.seed,
           "replicate": cfg.replicate, **truth.to_dict()}
    truth_path.write_text(dumps(doc), encoding="utf-8")
    return EXIT_OK


def _with_seed(dgp, seed):
    return replace(dgp, seed=seed)


def _cmd_benchmark(cfg: RunConfig, caught) -> int:
    dgp, extra = load_config(cfg.config)
    if cfg.seed is not None:
        dgp = _with_seed(dgp, cfg.seed)
    settings = dict(extra.get("benchmark", {}))
    n_reps = int(settings.pop("n_reps", 100))
    reps = int(settings.pop("bootstrap_reps", 0))
    with_twfe = bool(settings.pop("twfe", True))
    est_cfg = EstimatorConfig(**settings)

    def pipeline(data, r):
        out = {}
        atts = att_gt_all(data, est_cfg)
        if reps:
            res = run_estimate(data, est_cfg, reps=reps, seed=dgp.seed + r, threads=1, twfe=False)
            for a in res.atts:
                out[f"att({a.g},{a.t})"] = (a.estimate, a.ci_low, a.ci_high)
            for w, e in res.aggregation.event_curve.items():
                out[f"event({w})"] = (e.estimate, e.ci_low, e.ci_high)
            out["overall"] = (res.aggregation.overall, *res.aggregation.overall_ci)
        else:
            agg = aggregate_event(atts, group_sizes(data))
            out.update({f"att({a.g},{a.t})": a.estimate for a in atts})
            out.update({f"event({w})": e.estimate for w, e in agg.event_curve.items()})
            out["overall"] = agg.overall
        if with_twfe:
            out["twfe"] = twfe_estimate(data).coefficient
        return out

    def targets(truth):
        t = default_targets(truth)
        t["twfe"] = truth.overall
        return t

    report = monte_carlo_run(dgp, n_reps, pipeline, targets, threads=cfg.threads or default_threads())
    body = {"dgp_seed": dgp.seed, **report.to_dict()}
    doc = {"schema_version": SCHEMA_VERSION, "library_version": __version__, "command": "benchmark",
           "seed": dgp.seed, "config": cfg.to_echo(), **body, "warnings": _messages(caught)}
    _write(dumps(doc), cfg.output)
    return EXIT_OK


COMMANDS = {
    "estimate": _cmd_estimate,
    "pretest": _cmd_pretest,
    "aggregate": _cmd_aggregate,
    "simulate": _cmd_simulate,
    "benchmark": _cmd_benchmark,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DidWarning)
        try:
            code = COMMANDS[cfg.subcommand](cfg, caught)
        except PanelDataError as exc:
            code = _fail(f"data error: {exc}", EXIT_DATA)
        except (OSError, ValueError, KeyError) as exc:
            code = _fail(f"input error: {exc}", EXIT_DATA)
        except EstimationError as exc:
            code = _fail(f"estimation error: {exc}", EXIT_ESTIMATION)
    for message in _messages(caught):
        print(f"didkit: warning: {message}", file=sys.stderr)
    return code


def _fail(message: str, code: int) -> int:
    print(f"didkit: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
