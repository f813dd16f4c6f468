import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from didkit.errors import (
    DuplicateRecordError,
    EmptyCellError,
    EmptyCohortError,
    MissingColumnError,
    PanelDataError,
    TreatmentReversalError,
)
from didkit.panel import (
    CANONICAL_MAPPING,
    ColumnMapping,
    ControlRule,
    CovariateSpec,
    GroupPredicate,
    PanelDataset,
    PanelRecord,
    cell_mean,
    derive_groups,
    load_csv,
    subset_2x2,
    write_csv,
)
from didkit.simgen import ByEventTime, DgpConfig, SimCovariate, generate_panel


def write(tmp_path, text, name="panel.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


@pytest.fixture
def staggered():
    cfg = DgpConfig(
        n_units=120,
        effect=ByEventTime({0: 0.1, 1: 0.2}),
        covariates=(SimCovariate("race", "categorical", levels=("b", "w", "o"), probs=(0.3, 0.5, 0.2)),
                    SimCovariate("age", "normal", mean=50, sd=10)),
        seed=3,
    )
    return generate_panel(cfg)[0]


class TestLoadCsv:
    def test_group_derived_from_treatment_path(self, tmp_path):
        p = write(tmp_path, "unit,time,outcome,treated\na,2013,1,0\na,2014,0,1\nb,2013,1,0\nb,2014,1,0\n")
        data = load_csv(p)
        assert data.groups == {"a": 2014, "b": None}
        assert data.n_records == 4
        assert data.periods.tolist() == [2013, 2014]

    def test_reversal_names_unit_and_periods(self, tmp_path):
        p = write(tmp_path, "unit,time,outcome,treated\nx,1,0,0\nx,2,0,1\nx,3,0,0\n")
        with pytest.raises(TreatmentReversalError, match=r"treatment reversal for unit x.*period 2.*period 3"):
            load_csv(p)

    def test_missing_column_named(self, tmp_path):
        p = write(tmp_path, "unit,time,y,treated\na,1,0,0\n")
        with pytest.raises(MissingColumnError, match="'outcome'"):
            load_csv(p)

    def test_non_numeric_outcome(self, tmp_path):
        p = write(tmp_path, "unit,time,outcome,treated\na,1,zero,0\n")
        with pytest.raises(PanelDataError, match="non-numeric outcome 'zero'.*unit a"):
            load_csv(p)

    def test_duplicate_record(self, tmp_path):
        p = write(tmp_path, "unit,time,outcome,treated\na,1,0,0\na,1,1,0\n")
        with pytest.raises(DuplicateRecordError, match="unit a, period 1"):
            load_csv(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(PanelDataError, match="does not exist"):
            load_csv(tmp_path / "nope.csv")

    def test_missing_covariate_value_is_an_error(self, tmp_path):
        p = write(tmp_path, "unit,time,outcome,treated,age\na,1,0,0,30\na,2,0,1,\n")
        with pytest.raises(PanelDataError, match="missing value for covariate 'age'"):
            load_csv(p, ColumnMapping(covariates=("age",)))

    def test_group_column_with_never_token(self, tmp_path):
        p = write(tmp_path, "id,year,y,g\na,2013,1,2014\na,2014,2,2014\nb,2013,1,never\nb,2014,1,never\n")
        data = load_csv(p, ColumnMapping(unit="id", time="year", outcome="y", treated=None, group="g"))
        assert data.groups == {"a": 2014, "b": None}
        assert data.treated.tolist() == [0, 1, 0, 0]

    def test_group_contradicting_treated(self, tmp_path):
        p = write(tmp_path, "unit,time,outcome,treated,group\na,1,0,1,2\na,2,0,1,2\n")
        with pytest.raises(PanelDataError, match="contradicts group 2"):
            load_csv(p, ColumnMapping(group="group"))

    def test_categorical_levels_detected(self, tmp_path):
        p = write(tmp_path, "unit,time,outcome,treated,sex\na,1,0,0,f\na,2,0,1,f\nb,1,0,0,m\nb,2,0,0,m\n")
        data = load_csv(p, ColumnMapping(covariates=("sex",)))
        assert data.covariate_spec("sex") == CovariateSpec("sex", "categorical", ("f", "m"))

    def test_unbalanced_panel_accepted(self, tmp_path):
        p = write(tmp_path, "unit,time,outcome,treated\na,1,0,0\na,2,0,1\nb,2,1,0\n")
        data = load_csv(p)
        assert data.n_units == 2 and data.n_records == 3

    def test_roundtrip_simulated_csv(self, tmp_path, staggered):
        p = tmp_path / "sim.csv"
        write_csv(staggered, p)
        mapping = ColumnMapping(group="group", covariates=("race", "age"), categorical=("race",))
        back = load_csv(p, mapping)
        # level order is re-derived (sorted) on reload; compare decoded values
        assert np.array_equal(back.outcome, staggered.outcome)
        assert np.array_equal(back.unit_group, staggered.unit_group)
        assert np.array_equal(back.time, staggered.time)
        assert np.array_equal(back.covariate_values("race"), staggered.covariate_values("race"))
        assert np.array_equal(back.covariates["age"], staggered.covariates["age"])

    def test_roundtrip_is_identity_with_schema_order(self, tmp_path):
        data, _ = generate_panel(DgpConfig(n_units=50, seed=11, noise_sd=1.0))
        p = tmp_path / "sim.csv"
        write_csv(data, p)
        assert load_csv(p, CANONICAL_MAPPING) == data


class TestDataset:
    def test_records_roundtrip(self):
        recs = [
            PanelRecord("u1", 2013, 0.5, 0, {"sex": "f"}),
            PanelRecord("u1", 2014, 0.7, 1, {"sex": "f"}),
            PanelRecord("u2", 2013, 0.1, 0, {"sex": "m"}),
            PanelRecord("u2", 2014, 0.2, 0, {"sex": "m"}),
        ]
        data = PanelDataset.from_records(recs)
        assert data.records == recs

    def test_arrays_are_read_only(self, staggered):
        with pytest.raises(ValueError):
            staggered.outcome[0] = 1.0

    def test_time_varying_covariate_rejected(self):
        with pytest.raises(PanelDataError, match="varies over time within unit a"):
            PanelDataset.from_arrays(["a", "a"], [1, 2], [0, 0], treated=[0, 0], covariates={"x": [1.0, 2.0]})

    def test_non_finite_outcome(self):
        with pytest.raises(PanelDataError, match="non-finite outcome for unit a at period 2"):
            PanelDataset.from_arrays(["a", "a"], [1, 2], [0, math.nan], treated=[0, 0])

    def test_derive_groups_idempotent(self, staggered):
        once = derive_groups(staggered)
        assert once == staggered
        assert derive_groups(once) == once

    def test_take_units_makes_duplicates_distinct(self, staggered):
        res = staggered.take_units(np.array([3, 3, 0]))
        assert res.n_units == 3
        first = staggered.select(staggered.unit_index == 3)
        assert np.array_equal(res.outcome[res.unit_index == 0], first.outcome)
        assert np.array_equal(res.outcome[res.unit_index == 1], first.outcome)

    def test_shift_periods(self, staggered):
        shifted = staggered.shift_periods(-2000)
        assert shifted.periods[0] == staggered.periods[0] - 2000
        assert sorted(shifted.treated_groups) == [g - 2000 for g in staggered.treated_groups]

    def test_control_rule_parse(self):
        assert ControlRule.parse("NotYet") is ControlRule.NOT_YET
        assert ControlRule.parse("paper_literal") is ControlRule.PAPER_LITERAL
        with pytest.raises(ValueError, match="unknown control rule"):
            ControlRule.parse("sometimes")


class TestCellMean:
    @pytest.fixture
    def three(self):
        return PanelDataset.from_arrays(["a", "b", "c"], [1, 1, 1], [1, 0, 1], group=[2, 2, 2])

    def test_arithmetic(self, three):
        assert cell_mean(three, GroupPredicate.equals(2), 1) == pytest.approx(2 / 3, abs=1e-12)

    def test_all_zero(self):
        data = PanelDataset.from_arrays(["a", "b"], [1, 1], [0, 0], group=["never", "never"])
        assert cell_mean(data, GroupPredicate.never(), 1) == 0

    def test_empty_cell_names_predicate_and_time(self, three):
        with pytest.raises(EmptyCellError, match=r"G=never at period 1"):
            cell_mean(three, GroupPredicate.never(), 1)

    def test_matches_summation_oracle(self, rng):
        n = 50
        y = rng.normal(size=n)
        group = rng.choice([2014, 2015], size=n)
        data = PanelDataset.from_arrays([f"u{i}" for i in range(n)], [2014] * n, y, group=group)
        for g in (2014, 2015):
            vals = [v for v, gg in zip(y, group) if gg == g]
            assert cell_mean(data, GroupPredicate.equals(g), 2014) == pytest.approx(sum(vals) / len(vals), abs=1e-12)


class TestSubset:
    def test_filter_semantics(self, staggered):
        sub = subset_2x2(staggered, 2014, 2013, 2014, ControlRule.PAPER_LITERAL)
        assert sub.periods.tolist() == [2013, 2014]
        gs = set(np.unique(sub.unit_group).tolist())
        assert 2014 in gs and all(g == 2014 or g > 2014 for g in gs)

    def test_no_treated_units(self, staggered):
        with pytest.raises(EmptyCohortError, match="no treated units with G=2013"):
            subset_2x2(staggered, 2013, 2012, 2013)

    def test_bad_period_order(self, staggered):
        with pytest.raises(ValueError, match="must precede"):
            subset_2x2(staggered, 2014, 2014, 2013)

    @pytest.mark.parametrize("rule", list(ControlRule))
    def test_counts_match_linear_scan(self, staggered, rule):
        sub = subset_2x2(staggered, 2015, 2014, 2016, rule)
        expected = 0
        for g, t in zip(staggered.record_group, staggered.time):
            if t not in (2014, 2016):
                continue
            if g == 2015:
                expected += 1
            elif rule is ControlRule.NEVER and math.isinf(g):
                expected += 1
            elif rule is ControlRule.NOT_YET and g > 2016:
                expected += 1
            elif rule is ControlRule.PAPER_LITERAL and g > 2015:
                expected += 1
        assert sub.n_records == expected

    def test_output_satisfies_invariants(self, staggered):
        # labels are kept from the full panel; rebuilding checks them against the indicators
        sub = subset_2x2(staggered, 2014, 2013, 2015, require_balanced=True)
        rebuilt = PanelDataset.from_arrays(
            sub.unit_ids[sub.unit_index], sub.time, sub.outcome, treated=sub.treated, group=sub.record_group,
            covariates={k: sub.covariate_values(k) for k in sub.covariate_names}, schema=sub.schema,
        )
        assert rebuilt == sub


@settings(max_examples=40, deadline=None)
@given(
    paths=st.lists(st.lists(st.integers(0, 1), min_size=1, max_size=6), min_size=1, max_size=8),
    data=st.data(),
)
def test_group_is_first_treated_period(paths, data):
    # absorbing paths only: sort each path so treatment never reverses
    units, times, treated = [], [], []
    for i, path in enumerate(paths):
        for t, z in enumerate(sorted(path)):
            units.append(f"u{i}")
            times.append(2010 + t)
            treated.append(z)
    ds = PanelDataset.from_arrays(units, times, np.zeros(len(units)), treated=treated)
    for i, path in enumerate(paths):
        s = sorted(path)
        expected = 2010 + s.index(1) if 1 in s else None
        assert ds.groups[f"u{i}"] == expected
