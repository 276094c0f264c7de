"""Core record types and validated ingestion.

Unit-level samples (cohort, reference survey, or a full finite population)
are stored column-wise as immutable numpy arrays.  Registry summaries hold
post-stratum event counts and a piecewise-constant composite hazard table.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import SchemaError, ValidationError

COHORT = "cohort"
SURVEY = "survey"
FINITE_POPULATION = "finite_population"
_KINDS = (COHORT, SURVEY, FINITE_POPULATION)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Unit:
    """One person: identifier, follow-up, event flag, base weight, design ids."""

    id: object
    x: float
    d: int
    w: float
    stratum: int
    psu: int
    covariates: dict


@dataclass(frozen=True)
class Sample:
    """Column-wise sample container.

    Cohort units carry base weight 1 and a one-stratum, unit-per-PSU design.
    Survey samples must have >=2 PSUs in every stratum so a between-PSU
    variance is estimable.
    """

    kind: str
    ids: np.ndarray
    x: np.ndarray
    d: np.ndarray
    w: np.ndarray
    stratum: np.ndarray
    psu: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValidationError(f"unknown sample kind {self.kind!r}")
        n = len(self.ids)
        if n == 0:
            raise ValidationError("sample is empty")
        object.__setattr__(self, "ids", _freeze(self.ids))
        for name in ("x", "d", "w"):
            object.__setattr__(self, name, _freeze(np.asarray(getattr(self, name), dtype=float)))
        for name in ("stratum", "psu"):
            object.__setattr__(self, name, _freeze(np.asarray(getattr(self, name), dtype=int)))
        object.__setattr__(
            self, "covariates",
            {k: _freeze(np.asarray(v, dtype=float)) for k, v in self.covariates.items()},
        )
        for name in ("x", "d", "w", "stratum", "psu"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"column {name!r} has length {len(getattr(self, name))}, expected {n}")
        for k, v in self.covariates.items():
            if len(v) != n:
                raise ValidationError(f"covariate {k!r} has length {len(v)}, expected {n}")
        if len(np.unique(self.ids)) != n:
            raise ValidationError("unit ids are not unique")
        self._validate_rows()
        if self.kind == SURVEY:
            self._validate_survey_design()

    def _validate_rows(self):
        bad = ~np.isfinite(self.x) | (self.x < 0)
        bad |= ~np.isin(self.d, (0.0, 1.0))
        bad |= ~np.isfinite(self.w) | (self.w <= 0)
        for v in self.covariates.values():
            bad |= ~np.isfinite(v)
        if self.kind == COHORT and np.any(self.w != 1.0):
            raise ValidationError("cohort units must have base weight 1")
        if np.any(bad):
            ids = [repr(i) for i in self.ids[bad][:20]]
            raise ValidationError(
                f"{int(bad.sum())} invalid row(s); offending ids: {', '.join(ids)}"
            )

    def _validate_survey_design(self):
        for h in np.unique(self.stratum):
            if len(np.unique(self.psu[self.stratum == h])) < 2:
                raise ValidationError(f"survey stratum {h} has fewer than 2 PSUs")

    @property
    def n(self) -> int:
        return len(self.ids)

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Column-stack the named covariates into an (n, p) design block."""
        missing = [c for c in names if c not in self.covariates]
        if missing:
            raise SchemaError(f"covariate(s) not in sample: {missing}")
        return np.column_stack([self.covariates[c] for c in names])

    def unit(self, i: int) -> Unit:
        return Unit(
            id=self.ids[i], x=float(self.x[i]), d=int(self.d[i]), w=float(self.w[i]),
            stratum=int(self.stratum[i]), psu=int(self.psu[i]),
            covariates={k: float(v[i]) for k, v in self.covariates.items()},
        )

    def to_frame(self) -> pd.DataFrame:
        """Serialize back to a flat table; numeric content round-trips exactly."""
        data = {"id": self.ids, "time": self.x, "event": self.d.astype(int), "weight": self.w,
                "stratum": self.stratum, "psu": self.psu}
        data.update(self.covariates)
        return pd.DataFrame(data)


@dataclass(frozen=True)
class CellRule:
    """Post-stratum key contribution of one covariate.

    Without cuts, the covariate's values are used verbatim as labels
    (it must already be categorical).  With cuts ``(c_1, ..., c_k)`` the value
    is binned into ``k+1`` intervals ``(-inf, c_1), [c_1, c_2), ..., [c_k, inf)``
    and mapped to ``labels`` (length ``k+1``).
    """

    column: str
    cuts: tuple = ()
    labels: tuple = ()

    def apply(self, sample: Sample) -> np.ndarray:
        if self.column not in sample.covariates:
            raise SchemaError(f"cell covariate {self.column!r} not in sample")
        v = sample.covariates[self.column]
        if not self.cuts:
            return np.array([format(x, "g") for x in v], dtype=object)
        if len(self.labels) != len(self.cuts) + 1:
            raise ValidationError("cell rule needs len(labels) == len(cuts) + 1")
        idx = np.searchsorted(np.asarray(self.cuts, dtype=float), v, side="right")
        return np.asarray(self.labels, dtype=object)[idx]


def assign_cells(sample: Sample, rules: Sequence[CellRule]) -> np.ndarray:
    """Map every unit to its post-stratum key (labels joined with '|')."""
    if not rules:
        raise ValidationError("at least one cell rule is required")
    parts = [r.apply(sample) for r in rules]
    out = parts[0]
    for p in parts[1:]:
        out = np.array([a + "|" + b for a, b in zip(out, p)], dtype=object)
    return out


@dataclass(frozen=True)
class RegistrySummary:
    """Registry counts by post-stratum plus the composite hazard step function.

    The hazard ``rate`` column is an instantaneous rate per unit of follow-up
    time (same time unit as the samples' observed times); converting annual
    probabilities to rates is the caller's responsibility.
    """

    population_size: int
    event_cells: Mapping[str, float]
    hazard_start: np.ndarray
    hazard_end: np.ndarray
    hazard_rate: np.ndarray
    nonevent_cells: Mapping[str, float] | None = None

    def __post_init__(self):
        for name in ("hazard_start", "hazard_end", "hazard_rate"):
            object.__setattr__(self, name, _freeze(np.asarray(getattr(self, name), dtype=float)))
        if self.population_size <= 0:
            raise ValidationError("population_size must be positive")
        if any(c < 0 for c in self.event_cells.values()):
            raise ValidationError("negative event cell count")
        m1 = sum(self.event_cells.values())
        if m1 > self.population_size:
            raise ValidationError("sum of event cells exceeds population size")
        if self.nonevent_cells is not None:
            if any(c < 0 for c in self.nonevent_cells.values()):
                raise ValidationError("negative non-event cell count")
            total = m1 + sum(self.nonevent_cells.values())
            if total != self.population_size:
                raise ValidationError(
                    f"event + non-event cell counts ({total}) != population size ({self.population_size})"
                )
        t0, t1, r = self.hazard_start, self.hazard_end, self.hazard_rate
        if len(t0) == 0:
            raise ValidationError("composite hazard table is empty")
        if not (len(t0) == len(t1) == len(r)):
            raise ValidationError("hazard table columns have unequal lengths")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValidationError("hazard rates must be finite and nonnegative")
        if t0[0] != 0:
            raise ValidationError("hazard table must start at time 0")
        if np.any(t1 <= t0):
            raise ValidationError("hazard intervals must have positive length")
        if np.any(t0[1:] != t1[:-1]):
            if np.any(t0[1:] < t1[:-1]):
                raise ValidationError("hazard intervals overlap")
            raise ValidationError("hazard intervals leave a gap")

    @property
    def m1(self) -> float:
        return float(sum(self.event_cells.values()))

    @property
    def horizon(self) -> float:
        return float(self.hazard_end[-1])

    def cumulative_hazard(self, t) -> np.ndarray:
        """Integral of the composite rate over [0, t] (t within coverage)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.horizon + 1e-12):
            raise ValidationError("time outside hazard table coverage")
        seg = np.concatenate([[0.0], np.cumsum(self.hazard_rate * (self.hazard_end - self.hazard_start))])
        k = np.searchsorted(self.hazard_end, t, side="left")
        k = np.minimum(k, len(self.hazard_rate) - 1)
        return seg[k] + self.hazard_rate[k] * (t - self.hazard_start[k])


@dataclass(frozen=True)
class ColumnMap:
    """Maps logical fields to CSV column names."""

    time: str
    event: str
    covariates: Mapping[str, str]
    weight: str | None = None
    id: str | None = None
    stratum: str | None = None
    psu: str | None = None


def ingest_sample(file_path: str, schema: ColumnMap, kind: str) -> Sample:
    """Read a unit-level CSV, validate, and return an immutable Sample.

    Cohort weights are coerced to 1 (with a warning if the file disagrees).
    """
    try:
        # round_trip parsing keeps ingestion lossless for finite doubles
        df = pd.read_csv(file_path, float_precision="round_trip")
    except FileNotFoundError:
        raise SchemaError(f"file not found: {file_path}")
    required = [schema.time, schema.event, *schema.covariates.values()]
    for opt in (schema.weight, schema.id, schema.stratum, schema.psu):
        if opt is not None:
            required.append(opt)
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaError(f"missing column(s) in {file_path}: {missing}")
    n = len(df)
    if n == 0:
        raise ValidationError(f"{file_path} has no data rows")
    ids = df[schema.id].to_numpy() if schema.id else np.arange(n)
    if schema.weight is not None:
        w = df[schema.weight].to_numpy(dtype=float)
        if kind == COHORT and np.any(w != 1.0):
            warnings.warn(
                f"cohort file {file_path} carries non-unit weights; coercing to 1",
                stacklevel=2,
            )
            w = np.ones(n)
    else:
        w = np.ones(n)
    if kind == COHORT or kind == FINITE_POPULATION:
        stratum = np.zeros(n, dtype=int)
        psu = np.arange(n)
    else:
        stratum = df[schema.stratum].to_numpy(dtype=int) if schema.stratum else np.zeros(n, dtype=int)
        psu = df[schema.psu].to_numpy(dtype=int) if schema.psu else np.arange(n)
    covs = {name: df[col].to_numpy(dtype=float) for name, col in schema.covariates.items()}
    return Sample(
        kind=kind, ids=ids,
        x=df[schema.time].to_numpy(dtype=float),
        d=df[schema.event].to_numpy(dtype=float),
        w=w, stratum=stratum, psu=psu, covariates=covs,
    )


def ingest_registry(file_path: str) -> RegistrySummary:
    """Read a registry summary JSON document."""
    try:
        with open(file_path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise SchemaError(f"file not found: {file_path}")
    except json.JSONDecodeError as e:
        raise SchemaError(f"malformed JSON in {file_path}: {e}")
    return registry_from_dict(doc)


def registry_from_dict(doc: dict) -> RegistrySummary:
    for key in ("population_size", "event_cells", "composite_hazard"):
        if key not in doc:
            raise SchemaError(f"registry document missing {key!r}")
    hz = doc["composite_hazard"]
    try:
        t0 = [seg["t0"] for seg in hz]
        t1 = [seg["t1"] for seg in hz]
        rate = [seg["rate"] for seg in hz]
    except (TypeError, KeyError):
        raise SchemaError("composite_hazard entries need t0, t1, rate")
    return RegistrySummary(
        population_size=int(doc["population_size"]),
        event_cells={str(k): float(v) for k, v in doc["event_cells"].items()},
        nonevent_cells=(
            {str(k): float(v) for k, v in doc["nonevent_cells"].items()}
            if doc.get("nonevent_cells") else None
        ),
        hazard_start=t0, hazard_end=t1, hazard_rate=rate,
    )


def registry_to_dict(reg: RegistrySummary) -> dict:
    doc = {
        "population_size": reg.population_size,
        "event_cells": dict(reg.event_cells),
        "composite_hazard": [
            {"t0": float(a), "t1": float(b), "rate": float(r)}
            for a, b, r in zip(reg.hazard_start, reg.hazard_end, reg.hazard_rate)
        ],
    }
    if reg.nonevent_cells is not None:
        doc["nonevent_cells"] = dict(reg.nonevent_cells)
    return doc
