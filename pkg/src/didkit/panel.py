"""Long-format panel data with staggered, absorbing treatment.

A :class:`PanelDataset` holds one record per (unit, period). Each unit carries
a group label: the first period in which it is treated, or "never". Records
are stored column-wise in numpy arrays sorted by (unit, time) and the arrays
are read-only, so a dataset can be shared freely once built.

Group labels are stored as floats with ``np.inf`` standing in for
never-treated units, which makes "not yet treated by period t" a plain
``group > t`` comparison.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from didkit.errors import (
    DuplicateRecordError,
    EmptyCellError,
    EmptyCohortError,
    MissingColumnError,
    PanelDataError,
    TreatmentReversalError,
)

__all__ = [
    "NEVER",
    "ControlRule",
    "CovariateSpec",
    "ColumnMapping",
    "GroupPredicate",
    "PanelRecord",
    "PanelDataset",
    "cell_mean",
    "control_predicate",
    "derive_groups",
    "load_csv",
    "subset_2x2",
    "write_csv",
]

NEVER = math.inf
NEVER_TOKEN = "never"


class ControlRule(str, enum.Enum):
    """Which untreated units serve as the comparison cohort."""

    NEVER = "never"  # G = never
    NOT_YET = "notyet"  # G > t_post
    PAPER_LITERAL = "paperliteral"  # G > g

    @classmethod
    def parse(cls, value: "ControlRule | str") -> "ControlRule":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("_", "").replace("-", ""))
        except ValueError:
            choices = ", ".join(r.value for r in cls)
            raise ValueError(f"unknown control rule {value!r}; expected one of {choices}") from None


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    kind: str  # "numeric" or "categorical"
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise ValueError(f"covariate kind must be numeric or categorical, got {self.kind!r}")
        if self.kind == "categorical" and not self.levels:
            raise ValueError(f"categorical covariate {self.name!r} needs at least one level")

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"


@dataclass(frozen=True)
class PanelRecord:
    unit_id: str
    time: int
    outcome: float
    treated: int
    covariates: Mapping[str, float | str] = field(default_factory=dict)


@dataclass(frozen=True)
class GroupPredicate:
    """Selects units by group label.

    ``kind`` is ``"eq"`` (G = value), ``"gt"`` (G > value, never-treated
    included) or ``"never"``. ``exclude`` removes one group from the match.
    """

    kind: str
    value: float | None = None
    exclude: float | None = None

    def __call__(self, groups: np.ndarray) -> np.ndarray:
        if self.kind == "eq":
            mask = groups == self.value
        elif self.kind == "gt":
            mask = groups > self.value
        elif self.kind == "never":
            mask = np.isinf(groups)
        else:
            raise ValueError(f"unknown predicate kind {self.kind!r}")
        if self.exclude is not None:
            mask &= groups != self.exclude
        return mask

    def __str__(self) -> str:
        if self.kind == "never":
            text = "G=never"
        else:
            op = "=" if self.kind == "eq" else ">"
            text = f"G{op}{_fmt_group(self.value)}"
        if self.exclude is not None:
            text += f" excluding G={_fmt_group(self.exclude)}"
        return text

    @classmethod
    def equals(cls, g) -> "GroupPredicate":
        return cls("eq", float(g))

    @classmethod
    def above(cls, g, exclude=None) -> "GroupPredicate":
        return cls("gt", float(g), None if exclude is None else float(exclude))

    @classmethod
    def never(cls) -> "GroupPredicate":
        return cls("never")


def _fmt_group(g) -> str:
    if g is None or math.isinf(g):
        return NEVER_TOKEN
    return str(int(g))


def control_predicate(rule, g, t, base, anticipation: int = 0) -> GroupPredicate:
    """Comparison cohort for ATT(g, t) measured against period ``base``."""
    rule = ControlRule.parse(rule)
    if rule is ControlRule.NEVER:
        return GroupPredicate.never()
    if rule is ControlRule.PAPER_LITERAL:
        return GroupPredicate.above(g)
    # not yet treated in either compared period; g itself is excluded for
    # pre-period placebos where t < g
    return GroupPredicate.above(max(t, base) + anticipation, exclude=g)


@dataclass(frozen=True)
class ColumnMapping:
    unit: str = "unit"
    time: str = "time"
    outcome: str = "outcome"
    treated: str | None = "treated"
    group: str | None = None
    covariates: tuple[str, ...] = ()
    categorical: tuple[str, ...] = ()

    def __post_init__(self):
        if self.treated is None and self.group is None:
            raise ValueError("column mapping needs a treated column or a group column")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class PanelDataset:
    """Validated long-format panel.

    Build one with :meth:`from_arrays`, :meth:`from_records`,
    :meth:`from_frame` or :func:`load_csv`. Records are kept sorted by
    (unit, time); ``unit_ids`` is the sorted array of distinct unit labels
    and ``unit_index`` maps every record to its position in it.
    """

    __slots__ = (
        "unit_ids",
        "unit_index",
        "time",
        "outcome",
        "treated",
        "unit_group",
        "covariates",
        "schema",
        "periods",
        "_record_group",
    )

    def __init__(self, unit_ids, unit_index, time, outcome, treated, unit_group, covariates, schema):
        # trusted constructor: callers guarantee sorting and invariants
        self.unit_ids = _readonly(unit_ids)
        self.unit_index = _readonly(unit_index)
        self.time = _readonly(time)
        self.outcome = _readonly(outcome)
        self.treated = _readonly(treated)
        self.unit_group = _readonly(unit_group)
        self.covariates = {k: _readonly(v) for k, v in covariates.items()}
        self.schema = tuple(schema)
        self.periods = _readonly(np.unique(self.time))
        self._record_group = None

    # -- construction -------------------------------------------------------

    @classmethod
    def from_arrays(
        cls,
        unit,
        time,
        outcome,
        treated=None,
        group=None,
        covariates: Mapping[str, Sequence] | None = None,
        schema: Sequence[CovariateSpec] | None = None,
    ) -> "PanelDataset":
        """Validate column arrays and build a dataset.

        ``group`` holds each record's first-treated period (``np.inf``,
        ``None`` or ``"never"`` for never-treated units). When it is omitted
        the group is derived from ``treated`` as the first treated period.
        Categorical covariates may be passed as strings; their level order
        comes from ``schema`` or, failing that, sorted order.
        """
        unit = np.asarray([str(u) for u in unit], dtype=str) if len(unit) else np.asarray([], dtype=str)
        n = unit.shape[0]
        if n == 0:
            raise PanelDataError("dataset has no records")
        time = np.asarray(time)
        if time.shape != (n,):
            raise PanelDataError("time column length does not match unit column")
        if not np.issubdtype(time.dtype, np.integer):
            ftime = np.asarray(time, dtype=float)
            if not np.all(np.isfinite(ftime)) or np.any(ftime != np.round(ftime)):
                raise PanelDataError("time must hold integer periods")
            time = ftime.astype(np.int64)
        time = time.astype(np.int64)
        outcome = np.asarray(outcome, dtype=float)
        if outcome.shape != (n,):
            raise PanelDataError("outcome column length does not match unit column")
        bad = ~np.isfinite(outcome)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise PanelDataError(f"non-finite outcome for unit {unit[i]} at period {time[i]}")

        order = np.lexsort((time, unit))
        unit, time, outcome = unit[order], time[order], outcome[order]
        unit_ids, unit_index = np.unique(unit, return_inverse=True)
        dup = (np.diff(unit_index) == 0) & (np.diff(time) == 0)
        if dup.any():
            i = int(np.flatnonzero(dup)[0])
            raise DuplicateRecordError(f"duplicate (unit, time) record: unit {unit[i]}, period {time[i]}")

        if treated is not None:
            treated = np.asarray(treated, dtype=float)[order]
            if treated.shape != (n,) or not np.all(np.isin(treated, (0.0, 1.0))):
                raise PanelDataError("treated must be 0 or 1 on every record")
            treated = treated.astype(np.int8)
        if group is not None:
            group = _parse_groups(group)[order]
            unit_group = np.full(unit_ids.shape[0], np.nan)
            unit_group[unit_index] = group
            if np.any(unit_group[unit_index] != group):
                i = int(np.flatnonzero(unit_group[unit_index] != group)[0])
                raise PanelDataError(f"group label varies within unit {unit[i]}")
            implied = (time >= group).astype(np.int8)
            if treated is not None and np.any(treated != implied):
                i = int(np.flatnonzero(treated != implied)[0])
                raise PanelDataError(
                    f"treated indicator for unit {unit[i]} at period {time[i]} contradicts group "
                    f"{_fmt_group(group[i])}"
                )
            treated = implied
        elif treated is not None:
            unit_group = _groups_from_paths(unit, unit_index, unit_ids.shape[0], time, treated)
        else:
            raise PanelDataError("need a treated indicator or a group label")

        cov_arrays, schema = _encode_covariates(covariates or {}, schema, order, n)
        starts = np.searchsorted(unit_index, np.arange(unit_ids.shape[0]))
        for spec in schema:
            values = cov_arrays[spec.name]
            first = values[starts]
            if np.any(first[unit_index] != values):
                i = int(np.flatnonzero(first[unit_index] != values)[0])
                raise PanelDataError(f"covariate {spec.name!r} varies over time within unit {unit[i]}")

        return cls(unit_ids, unit_index, time, outcome, treated, unit_group, cov_arrays, schema)

    @classmethod
    def from_records(cls, records: Iterable[PanelRecord], schema=None) -> "PanelDataset":
        records = list(records)
        if not records:
            raise PanelDataError("dataset has no records")
        names = list(records[0].covariates)
        for r in records:
            if list(r.covariates) != names:
                raise PanelDataError(
                    f"record for unit {r.unit_id} at period {r.time} has covariates "
                    f"{list(r.covariates)}, expected {names}"
                )
        covs = {name: [r.covariates[name] for r in records] for name in names}
        return cls.from_arrays(
            [r.unit_id for r in records],
            [r.time for r in records],
            [r.outcome for r in records],
            treated=[r.treated for r in records],
            covariates=covs,
            schema=schema,
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, mapping: ColumnMapping | None = None) -> "PanelDataset":
        mapping = mapping or ColumnMapping()
        return _dataset_from_strings(frame.astype(str), mapping, source="frame")

    # -- accessors ----------------------------------------------------------

    @property
    def n_records(self) -> int:
        return int(self.time.shape[0])

    @property
    def n_units(self) -> int:
        return int(self.unit_ids.shape[0])

    @property
    def record_group(self) -> np.ndarray:
        """Group label of every record (``np.inf`` for never treated)."""
        if self._record_group is None:
            self._record_group = _readonly(self.unit_group[self.unit_index])
        return self._record_group

    @property
    def groups(self) -> dict[str, int | None]:
        """Unit id to first-treated period; ``None`` means never treated."""
        return {
            u: (None if math.isinf(g) else int(g)) for u, g in zip(self.unit_ids.tolist(), self.unit_group)
        }

    @property
    def treated_groups(self) -> list[int]:
        gs = np.unique(self.unit_group)
        return [int(g) for g in gs if not math.isinf(g)]

    @property
    def covariate_names(self) -> list[str]:
        return [s.name for s in self.schema]

    def covariate_spec(self, name: str) -> CovariateSpec:
        for spec in self.schema:
            if spec.name == name:
                return spec
        raise KeyError(f"unknown covariate {name!r}; dataset has {self.covariate_names}")

    def covariate_values(self, name: str) -> np.ndarray:
        """Covariate column decoded to level strings (categorical) or floats."""
        spec = self.covariate_spec(name)
        values = self.covariates[name]
        if spec.is_categorical:
            return np.asarray(spec.levels, dtype=object)[values]
        return values

    @property
    def records(self) -> list[PanelRecord]:
        decoded = {s.name: self.covariate_values(s.name) for s in self.schema}
        units = self.unit_ids[self.unit_index]
        out = []
        for i in range(self.n_records):
            covs = {}
            for s in self.schema:
                v = decoded[s.name][i]
                covs[s.name] = v if s.is_categorical else float(v)
            out.append(PanelRecord(str(units[i]), int(self.time[i]), float(self.outcome[i]), int(self.treated[i]), covs))
        return out

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "unit": self.unit_ids[self.unit_index],
                "time": self.time,
                "outcome": self.outcome,
                "treated": self.treated.astype(int),
                "group": [_fmt_group(g) for g in self.record_group],
            }
        )
        for s in self.schema:
            frame[s.name] = self.covariate_values(s.name)
        return frame

    # -- derived datasets ---------------------------------------------------

    def select(self, mask: np.ndarray) -> "PanelDataset":
        """Records where ``mask`` holds; units left without records are dropped."""
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise PanelDataError("selection leaves no records")
        kept_units, new_index = np.unique(self.unit_index[mask], return_inverse=True)
        return PanelDataset(
            self.unit_ids[kept_units],
            new_index,
            self.time[mask],
            self.outcome[mask],
            self.treated[mask],
            self.unit_group[kept_units],
            {k: v[mask] for k, v in self.covariates.items()},
            self.schema,
        )

    def take_units(self, positions: np.ndarray) -> "PanelDataset":
        """Dataset built from the units at ``positions`` (repeats allowed).

        Every draw becomes a distinct unit labelled by its draw position, so
        a unit drawn twice contributes two independent clusters. This is the
        resampling step of the cluster bootstrap.
        """
        positions = np.asarray(positions, dtype=np.int64)
        starts, counts = self._unit_slices()
        lens = counts[positions]
        total = int(lens.sum())
        draw_of_row = np.repeat(np.arange(positions.shape[0]), lens)
        offsets = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
        rows = starts[positions][draw_of_row] + offsets
        width = len(str(max(positions.shape[0] - 1, 0)))
        ids = np.char.zfill(np.arange(positions.shape[0]).astype(str), width)
        return PanelDataset(
            ids,
            draw_of_row,
            self.time[rows],
            self.outcome[rows],
            self.treated[rows],
            self.unit_group[positions],
            {k: v[rows] for k, v in self.covariates.items()},
            self.schema,
        )

    def _unit_slices(self):
        counts = np.bincount(self.unit_index, minlength=self.n_units)
        starts = np.cumsum(counts) - counts
        return starts, counts

    def shift_periods(self, offset: int) -> "PanelDataset":
        """Same data with every period and group label moved by ``offset``."""
        return PanelDataset(
            self.unit_ids,
            self.unit_index,
            self.time + int(offset),
            self.outcome,
            self.treated,
            self.unit_group + int(offset),
            dict(self.covariates),
            self.schema,
        )

    # -- comparison ---------------------------------------------------------

    def __eq__(self, other) -> bool:
        if not isinstance(other, PanelDataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and np.array_equal(self.unit_ids, other.unit_ids)
            and np.array_equal(self.unit_index, other.unit_index)
            and np.array_equal(self.time, other.time)
            and np.array_equal(self.outcome, other.outcome)
            and np.array_equal(self.treated, other.treated)
            and np.array_equal(self.unit_group, other.unit_group)
            and all(np.array_equal(self.covariates[k], other.covariates[k]) for k in self.covariates)
        )

    __hash__ = None

    def __repr__(self) -> str:
        groups = ", ".join(_fmt_group(g) for g in np.unique(self.unit_group))
        return (
            f"PanelDataset({self.n_units} units, {self.n_records} records, "
            f"periods {self.periods[0]}-{self.periods[-1]}, groups [{groups}], "
            f"covariates {self.covariate_names})"
        )


def _parse_groups(group) -> np.ndarray:
    out = np.empty(len(group), dtype=float)
    for i, g in enumerate(group):
        if g is None or (isinstance(g, str) and g.strip().lower() == NEVER_TOKEN):
            out[i] = NEVER
            continue
        try:
            v = float(g)
        except (TypeError, ValueError):
            raise PanelDataError(f"group label {g!r} is neither an integer period nor {NEVER_TOKEN!r}") from None
        if math.isnan(v) or (math.isfinite(v) and v != round(v)):
            raise PanelDataError(f"group label {g!r} is neither an integer period nor {NEVER_TOKEN!r}")
        out[i] = v
    return out


def _groups_from_paths(unit, unit_index, n_units, time, treated) -> np.ndarray:
    # records are sorted by (unit, time), so a reversal is a 1 -> 0 step
    same_unit = np.diff(unit_index) == 0
    reversal = same_unit & (np.diff(treated.astype(np.int16)) < 0)
    if reversal.any():
        i = int(np.flatnonzero(reversal)[0])
        raise TreatmentReversalError(
            f"treatment reversal for unit {unit[i]}: treated at period {time[i]}, "
            f"untreated at period {time[i + 1]}"
        )
    first = np.full(n_units, NEVER)
    on = treated == 1
    # first treated record per unit (records are time-sorted within unit)
    np.minimum.at(first, unit_index[on], time[on].astype(float))
    return first


def derive_groups(data: PanelDataset) -> PanelDataset:
    """Recompute group labels from the observed treatment paths."""
    group = _groups_from_paths(
        data.unit_ids[data.unit_index], data.unit_index, data.n_units, data.time, data.treated
    )
    return PanelDataset(
        data.unit_ids, data.unit_index, data.time, data.outcome, data.treated, group,
        dict(data.covariates), data.schema,
    )


def _encode_covariates(covariates, schema, order, n):
    specs = {s.name: s for s in (schema or ())}
    arrays = {}
    out_schema = []
    for name, values in covariates.items():
        values = np.asarray(values, dtype=object)
        if values.shape != (n,):
            raise PanelDataError(f"covariate {name!r} length does not match unit column")
        values = values[order]
        for i, v in enumerate(values):
            if v is None or (isinstance(v, float) and math.isnan(v)) or (isinstance(v, str) and v.strip() == ""):
                raise PanelDataError(f"missing value for covariate {name!r} (record {i}); imputation is not supported")
        spec = specs.get(name)
        if spec is None:
            numeric = all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in values)
            if numeric:
                spec = CovariateSpec(name, "numeric")
            else:
                spec = CovariateSpec(name, "categorical", tuple(sorted({str(v) for v in values})))
        if spec.is_categorical:
            lookup = {lvl: i for i, lvl in enumerate(spec.levels)}
            try:
                codes = np.fromiter((lookup[str(v)] for v in values), dtype=np.int64, count=n)
            except KeyError as exc:
                raise PanelDataError(f"covariate {name!r} has level {exc.args[0]!r} not in schema {spec.levels}") from None
            arrays[name] = codes
        else:
            try:
                arr = values.astype(float)
            except (TypeError, ValueError):
                raise PanelDataError(f"covariate {name!r} is declared numeric but has non-numeric values") from None
            if not np.all(np.isfinite(arr)):
                raise PanelDataError(f"covariate {name!r} has non-finite values")
            arrays[name] = arr
        out_schema.append(spec)
    return arrays, out_schema


def _dataset_from_strings(frame: pd.DataFrame, mapping: ColumnMapping, source: str) -> PanelDataset:
    needed = [mapping.unit, mapping.time, mapping.outcome]
    needed += [c for c in (mapping.treated, mapping.group) if c is not None]
    needed += list(mapping.covariates)
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise MissingColumnError(f"missing column(s) {', '.join(repr(c) for c in missing)} in {source}")
    units = frame[mapping.unit].to_numpy(dtype=str)

    def numeric(col: str, what: str) -> np.ndarray:
        raw = frame[col].to_numpy(dtype=str)
        try:
            return np.asarray([float(v) for v in raw])
        except ValueError:
            bad = next(i for i, v in enumerate(raw) if not _is_float(v))
            raise PanelDataError(
                f"non-numeric {what} {str(raw[bad])!r} in column {col!r} for unit {units[bad]}"
            ) from None

    time = numeric(mapping.time, "time")
    outcome = numeric(mapping.outcome, "outcome")
    treated = numeric(mapping.treated, "treatment indicator") if mapping.treated else None
    group = frame[mapping.group].to_numpy(dtype=str) if mapping.group else None
    covs, schema = {}, []
    for name in mapping.covariates:
        raw = frame[name].to_numpy(dtype=str)
        if name in mapping.categorical or not all(_is_float(v) for v in raw if v.strip()):
            covs[name] = raw.astype(object)
        else:
            covs[name] = np.asarray([float(v) if v.strip() else math.nan for v in raw], dtype=object)
            schema.append(CovariateSpec(name, "numeric"))
    return PanelDataset.from_arrays(units, time, outcome, treated=treated, group=group, covariates=covs, schema=schema)


def _is_float(v: str) -> bool:
    try:
        float(v)
    except ValueError:
        return False
    return True


def load_csv(path, mapping: ColumnMapping | None = None) -> PanelDataset:
    """Read a long-format CSV (UTF-8, header row) into a validated dataset."""
    path = Path(path)
    if not path.exists():
        raise PanelDataError(f"input file {path} does not exist")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    return _dataset_from_strings(frame, mapping or ColumnMapping(), source=str(path))


def write_csv(data: PanelDataset, path) -> None:
    """Write the canonical CSV: unit, time, outcome, treated, group, covariates."""
    frame = data.to_frame()
    frame.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")


CANONICAL_MAPPING = ColumnMapping(group="group")


def cell_mean(data: PanelDataset, group_filter: GroupPredicate, time: int) -> float:
    """Mean outcome over records with matching group at period ``time``."""
    mask = group_filter(data.record_group) & (data.time == time)
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise EmptyCellError(f"empty cell: {group_filter} at period {time}")
    return float(data.outcome[mask].sum() / n)


def _balanced_units(data: PanelDataset, mask_a: np.ndarray, mask_b: np.ndarray) -> np.ndarray:
    """Unit positions observed under both record masks."""
    seen_a = np.zeros(data.n_units, dtype=bool)
    seen_b = np.zeros(data.n_units, dtype=bool)
    seen_a[data.unit_index[mask_a]] = True
    seen_b[data.unit_index[mask_b]] = True
    return seen_a & seen_b


def subset_2x2(
    data: PanelDataset,
    g: int,
    t_pre: int,
    t_post: int,
    control: ControlRule | str = ControlRule.NOT_YET,
    require_balanced: bool = False,
    anticipation: int = 0,
) -> PanelDataset:
    """Restrict to periods {t_pre, t_post} and to group ``g`` plus its controls."""
    if not t_pre < t_post:
        raise ValueError(f"t_pre ({t_pre}) must precede t_post ({t_post})")
    treated_pred = GroupPredicate.equals(g)
    control_pred = control_predicate(control, g, t_post, t_pre, anticipation)
    groups = data.record_group
    in_periods = (data.time == t_pre) | (data.time == t_post)
    is_treated = treated_pred(groups)
    is_control = control_pred(groups)
    mask = in_periods & (is_treated | is_control)
    if require_balanced:
        both = _balanced_units(data, mask & (data.time == t_pre), mask & (data.time == t_post))
        mask &= both[data.unit_index]
    if not (mask & is_treated).any():
        raise EmptyCohortError(f"no treated units with G={g} in periods {t_pre}, {t_post}")
    if not (mask & is_control).any():
        raise EmptyCohortError(f"empty control cohort {control_pred} in periods {t_pre}, {t_post}")
    return data.select(mask)
