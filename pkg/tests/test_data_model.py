"""Ingestion, sample validation, cell assignment, and registry summaries."""

import json

import numpy as np
import pandas as pd
import pytest

from riskcal import (COHORT, SURVEY, CellRule, ColumnMap, RegistrySummary,
                     Sample, assign_cells, ingest_registry, ingest_sample)
from riskcal.data_model import registry_from_dict, registry_to_dict
from riskcal.errors import CellError, SchemaError, ValidationError

from conftest import make_sample


def _schema(covs=("z1",), **kw):
    return ColumnMap(time="time", event="event",
                     covariates={c: c for c in covs}, **kw)


def _write_csv(path, rows, columns):
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)


class TestIngestSample:
    def test_survey_weights_pass_through(self, tmp_path):
        p = tmp_path / "s.csv"
        _write_csv(p, [(1.0, 1, 0.3, 10.0), (2.0, 0, -0.1, 20.0),
                       (3.0, 1, 0.5, 30.0)], ["time", "event", "z1", "weight"])
        s = ingest_sample(str(p), _schema(weight="weight"), SURVEY)
        assert s.w.sum() == 60.0
        assert s.n == 3

    def test_negative_time_names_offending_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        _write_csv(p, [(7, 1.0, 1, 0.0), (9, -1.0, 0, 0.0)],
                   ["id", "time", "event", "z1"])
        with pytest.raises(ValidationError, match="9"):
            ingest_sample(str(p), _schema(id="id"), COHORT)

    def test_cohort_weights_coerced_to_one_with_warning(self, tmp_path):
        p = tmp_path / "c.csv"
        _write_csv(p, [(1.0, 1, 0.0, 2.0), (2.0, 0, 0.0, 2.0)],
                   ["time", "event", "z1", "weight"])
        with pytest.warns(UserWarning, match="coercing"):
            s = ingest_sample(str(p), _schema(weight="weight"), COHORT)
        assert np.all(s.w == 1.0)

    def test_missing_column_is_schema_error(self, tmp_path):
        p = tmp_path / "c.csv"
        _write_csv(p, [(1.0, 1)], ["time", "event"])
        with pytest.raises(SchemaError, match="z1"):
            ingest_sample(str(p), _schema(), COHORT)

    def test_missing_file(self):
        with pytest.raises(SchemaError, match="not found"):
            ingest_sample("/no/such/file.csv", _schema(), COHORT)

    def test_ingestion_is_lossless(self, tmp_path):
        rng = np.random.default_rng(5)
        df = pd.DataFrame({
            "time": rng.exponential(3.0, 20),
            "event": rng.integers(0, 2, 20),
            "z1": rng.standard_normal(20),
        })
        p = tmp_path / "round.csv"
        df.to_csv(p, index=False, float_format="%.17g")
        s = ingest_sample(str(p), _schema(), COHORT)
        assert np.array_equal(s.x, df["time"].to_numpy())
        assert np.array_equal(s.covariates["z1"], df["z1"].to_numpy())


class TestSampleInvariants:
    def test_cohort_weight_must_be_one(self):
        with pytest.raises(ValidationError):
            make_sample(COHORT, [1.0], [1.0], w=[2.0])

    def test_arrays_are_immutable(self):
        s = make_sample(COHORT, [1.0, 2.0], [1.0, 0.0])
        with pytest.raises(ValueError):
            s.x[0] = 5.0

    def test_survey_needs_two_psus_per_stratum(self):
        with pytest.raises(ValidationError):
            make_sample(SURVEY, [1.0, 2.0], [1.0, 0.0], w=[2.0, 3.0],
                        stratum=[0, 0], psu=[0, 0])


class TestAssignCells:
    def test_binning_rule(self):
        s = make_sample(COHORT, [1, 2, 3], [1, 1, 0],
                        covariates={"z2": [-0.5, 0.0, 1.2]})
        cells = assign_cells(s, [CellRule("z2", cuts=(0.0,), labels=("1", "2"))])
        assert list(cells) == ["1", "2", "2"]

    def test_crossed_rules_join_labels(self):
        s = make_sample(COHORT, [1, 2], [1, 0],
                        covariates={"a": [-1.0, 1.0], "b": [1.0, -1.0]})
        rules = [CellRule("a", cuts=(0.0,), labels=("lo", "hi")),
                 CellRule("b", cuts=(0.0,), labels=("L", "H"))]
        assert list(assign_cells(s, rules)) == ["lo|H", "hi|L"]

    def test_missing_column_errors_before_estimation(self):
        s = make_sample(COHORT, [1.0], [1.0])
        with pytest.raises((SchemaError, CellError)):
            assign_cells(s, [CellRule("nope", cuts=(0.0,), labels=("1", "2"))])

    def test_no_rules_rejected(self):
        s = make_sample(COHORT, [1.0], [1.0])
        with pytest.raises(ValidationError):
            assign_cells(s, [])


class TestRegistry:
    def test_direct_construction(self):
        reg = RegistrySummary(population_size=200_000,
                              event_cells={"g1": 50, "g2": 50},
                              hazard_start=[0.0], hazard_end=[15.0],
                              hazard_rate=[0.005])
        assert reg.m1 == 100.0

    def test_overlapping_intervals_rejected(self):
        with pytest.raises(ValidationError, match="overlap"):
            RegistrySummary(population_size=100, event_cells={"g": 1},
                            hazard_start=[0.0, 4.0], hazard_end=[5.0, 10.0],
                            hazard_rate=[0.01, 0.01])

    def test_count_consistency_with_population_size(self):
        with pytest.raises(ValidationError):
            RegistrySummary(population_size=200_000,
                            event_cells={"g": 100_001},
                            nonevent_cells={"g": 100_000},
                            hazard_start=[0.0], hazard_end=[1.0],
                            hazard_rate=[0.01])

    def test_negative_counts_rejected(self):
        with pytest.raises(ValidationError, match="negative"):
            RegistrySummary(population_size=100, event_cells={"g": -1},
                            hazard_start=[0.0], hazard_end=[1.0],
                            hazard_rate=[0.01])

    def test_gap_from_zero_rejected(self):
        with pytest.raises(ValidationError):
            RegistrySummary(population_size=100, event_cells={"g": 1},
                            hazard_start=[1.0], hazard_end=[2.0],
                            hazard_rate=[0.01])

    def test_cumulative_hazard_piecewise_linear(self):
        reg = RegistrySummary(population_size=100, event_cells={"g": 1},
                              hazard_start=[0.0, 5.0], hazard_end=[5.0, 10.0],
                              hazard_rate=[0.02, 0.04])
        assert reg.cumulative_hazard(5.0) == pytest.approx(0.10)
        assert reg.cumulative_hazard(7.5) == pytest.approx(0.10 + 0.04 * 2.5)

    def test_json_round_trip(self, tmp_path):
        reg = RegistrySummary(population_size=500,
                              event_cells={"1": 30, "2": 20},
                              nonevent_cells={"1": 250, "2": 200},
                              hazard_start=[0.0], hazard_end=[10.0],
                              hazard_rate=[0.01])
        p = tmp_path / "reg.json"
        p.write_text(json.dumps(registry_to_dict(reg)))
        back = ingest_registry(str(p))
        assert back.population_size == reg.population_size
        assert back.event_cells == reg.event_cells
        assert np.array_equal(back.hazard_rate, reg.hazard_rate)

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(SchemaError, match="malformed"):
            ingest_registry(str(p))

    def test_missing_key(self):
        with pytest.raises(SchemaError, match="composite_hazard"):
            registry_from_dict({"population_size": 10, "event_cells": {"g": 1}})
