"""Referendum choice data: attribute schemas, CSV ingestion and numeric coding."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

TASK_COLUMNS = (
    "category",
    "time_horizon_years",
    "visit_reduction_pct",
    "distance_km",
    "levy_rial",
)
OBSERVATION_HEADER = ("respondent_id", "task_id", "block_id") + TASK_COLUMNS + ("vote",)

ATTRIBUTE_KINDS = ("categorical", "continuous")
ATTRIBUTE_TRANSFORMS = ("linear", "quadratic", "effects-coded", "none")
COVARIATE_KINDS = ("indicator", "count", "likert", "numeric")


class DataError(ValueError):
    """Raised when input data violate the schema; carries every problem found."""

    def __init__(self, problems: Sequence[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# ---------------------------------------------------------------------------
# Orthogonal polynomial coding
# ---------------------------------------------------------------------------


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        # go through repr so 0.1 becomes 1/10, not the binary expansion
        return Fraction(repr(value))
    return Fraction(value)


class OrthoPolyCoding:
    """Orthonormal polynomial contrasts over a numeric level set.

    Built by Gram-Schmidt on the monomials 1, x, x^2, ... evaluated at the
    levels, in exact rational arithmetic. Column k is a degree-k polynomial
    in the level value, so it can also be evaluated between levels.
    """

    def __init__(self, levels: Sequence[float], max_degree: int):
        lv = [_as_fraction(v) for v in levels]
        if len(set(lv)) != len(lv):
            raise ValueError("levels must be distinct")
        if max_degree < 1:
            raise ValueError("max_degree must be at least 1")
        if max_degree >= len(lv):
            raise ValueError(
                f"max_degree {max_degree} needs more than {len(lv)} levels"
            )
        self.levels = tuple(lv)
        self.max_degree = max_degree

        # basis[j] holds (values over levels, polynomial coefficients low->high)
        basis: list[tuple[list[Fraction], list[Fraction]]] = []
        for k in range(max_degree + 1):
            vals = [x**k for x in lv]
            coef = [Fraction(0)] * k + [Fraction(1)]
            for u_vals, u_coef in basis:
                num = sum(a * b for a, b in zip(vals, u_vals))
                den = sum(b * b for b in u_vals)
                c = num / den
                vals = [a - c * b for a, b in zip(vals, u_vals)]
                coef = [
                    a - c * (u_coef[i] if i < len(u_coef) else 0)
                    for i, a in enumerate(coef)
                ]
            basis.append((vals, coef))

        # drop the constant column; keep degrees 1..max_degree
        self.exact_columns = tuple(tuple(v) for v, _ in basis[1:])
        self.exact_coefficients = tuple(tuple(c) for _, c in basis[1:])
        self.squared_norms = tuple(sum(x * x for x in v) for v in self.exact_columns)
        self._scales = tuple(math.sqrt(float(n2)) for n2 in self.squared_norms)
        self._float_coefs = tuple(
            np.array([float(c) for c in coef[::-1]]) for coef in self.exact_coefficients
        )
        self._lookup = {
            float(x): tuple(
                float(col[i]) / s for col, s in zip(self.exact_columns, self._scales)
            )
            for i, x in enumerate(lv)
        }
        self._grid = np.array(sorted(self._lookup))
        self._table = np.array([self._lookup[k] for k in self._grid])

    @property
    def matrix(self) -> np.ndarray:
        """Levels x degrees matrix of normalized codes."""
        return np.array(
            [
                [float(c) / s for c, s in zip(row, self._scales)]
                for row in zip(*self.exact_columns)
            ]
        )

    def evaluate(self, x, degree: int) -> np.ndarray:
        """Evaluate the degree-``degree`` code at arbitrary level values."""
        if not 1 <= degree <= self.max_degree:
            raise ValueError(f"degree {degree} not available (max {self.max_degree})")
        x = np.asarray(x, dtype=float)
        out = np.polyval(self._float_coefs[degree - 1], x) / self._scales[degree - 1]
        # exact level values use the tabulated codes so grid and off-grid agree
        keys = self._grid
        flat, xf = out.reshape(-1), x.reshape(-1)
        pos = np.minimum(np.searchsorted(keys, xf), len(keys) - 1)
        hit = keys[pos] == xf
        flat[hit] = self._table[pos[hit], degree - 1]
        return flat.reshape(x.shape)


def orthogonal_poly_codes(levels: Sequence[float], max_degree: int) -> np.ndarray:
    """Return the (levels x max_degree) matrix of orthonormal polynomial codes.

    Columns are mutually orthogonal, sum to zero and have unit length; the
    degree-1 column increases with the level value.
    """
    return OrthoPolyCoding(levels, max_degree).matrix


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    kind: str
    levels: tuple
    transform: str = "linear"
    units: str = ""
    # multiplier applied when a term asks for the raw (uncoded) value
    raw_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ATTRIBUTE_KINDS:
            raise ValueError(f"attribute {self.name}: unknown kind {self.kind!r}")
        if self.transform not in ATTRIBUTE_TRANSFORMS:
            raise ValueError(
                f"attribute {self.name}: unknown transform {self.transform!r}"
            )
        if len(self.levels) == 0:
            raise ValueError(f"attribute {self.name}: levels must be non-empty")
        if len(set(self.levels)) != len(self.levels):
            raise ValueError(f"attribute {self.name}: levels must be distinct")
        if self.kind == "categorical":
            if not all(isinstance(v, str) for v in self.levels):
                raise ValueError(f"attribute {self.name}: categorical levels are labels")
        else:
            if any(isinstance(v, (str, bool)) for v in self.levels):
                raise ValueError(f"attribute {self.name}: continuous levels are numbers")
            object.__setattr__(self, "levels", tuple(sorted(float(v) for v in self.levels)))
        if self.transform == "quadratic" and len(self.levels) < 3:
            raise ValueError(
                f"attribute {self.name}: quadratic transform needs at least 3 levels"
            )

    @property
    def lower(self) -> float:
        return self.levels[0]

    @property
    def upper(self) -> float:
        return self.levels[-1]

    @cached_property
    def coding(self) -> OrthoPolyCoding:
        if self.kind != "continuous":
            raise TypeError(f"attribute {self.name} is categorical")
        return OrthoPolyCoding(self.levels, min(2, len(self.levels) - 1))

    def code(self, values, transform: str) -> np.ndarray:
        """Numeric column for ``values`` under a term transform.

        ``linear``/``quadratic`` select the degree-1/degree-2 orthogonal
        polynomial code; ``raw`` is the value times ``raw_scale``.
        """
        values = np.asarray(values, dtype=float)
        if transform == "linear":
            return self.coding.evaluate(values, 1)
        if transform == "quadratic":
            if self.coding.max_degree < 2:
                raise ValueError(f"attribute {self.name} has no degree-2 code")
            return self.coding.evaluate(values, 2)
        if transform == "raw":
            return values * self.raw_scale
        raise ValueError(f"attribute {self.name}: cannot apply transform {transform!r}")

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "levels": list(self.levels)}
        if self.transform != "linear":
            d["transform"] = self.transform
        if self.units:
            d["units"] = self.units
        if self.raw_scale != 1.0:
            d["raw_scale"] = self.raw_scale
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttributeSpec":
        return cls(
            name=d["name"],
            kind=d["kind"],
            levels=tuple(d["levels"]),
            transform=d.get("transform", "linear"),
            units=d.get("units", ""),
            raw_scale=float(d.get("raw_scale", 1.0)),
        )


DEFAULT_SCHEMA: tuple[AttributeSpec, ...] = (
    AttributeSpec("category", "categorical", ("Historical", "Religious", "Gardens"), transform="none"),
    AttributeSpec("time_horizon_years", "continuous", (10, 20, 40, 50), units="years"),
    AttributeSpec("visit_reduction_pct", "continuous", (5, 10, 15, 20), units="percent"),
    AttributeSpec("distance_km", "continuous", (1, 10, 25, 50), units="km"),
    AttributeSpec(
        "levy_rial",
        "continuous",
        (100_000, 250_000, 500_000, 750_000, 1_000_000, 1_500_000, 2_000_000, 2_500_000),
        units="Rial per annum",
        raw_scale=1e-6,
    ),
)


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    kind: str = "numeric"

    def __post_init__(self):
        if self.kind not in COVARIATE_KINDS:
            raise ValueError(f"covariate {self.name}: unknown kind {self.kind!r}")

    def check(self, value: float) -> str | None:
        if self.kind == "indicator" and value not in (0.0, 1.0):
            return "indicator must be 0 or 1"
        if self.kind == "count" and value < 0:
            return "count must be non-negative"
        if self.kind == "likert" and not 1.0 <= value <= 5.0:
            return "likert index must lie in [1, 5]"
        return None


@dataclass(frozen=True)
class RespondentProfile:
    respondent_id: str
    covariates: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ReferendumTask:
    task_id: int
    block_id: int
    category: str
    time_horizon_years: float
    visit_reduction_pct: float
    distance_km: float
    levy_rial: float

    def value(self, attribute: str):
        return getattr(self, attribute)


@dataclass(frozen=True)
class Observation:
    respondent_id: str
    task: ReferendumTask
    vote: int


@dataclass(frozen=True)
class DataArrays:
    """Columnar view of a Dataset used by the numerical modules."""

    respondent_index: np.ndarray  # (M,) index into respondents
    votes: np.ndarray  # (M,) 0/1
    covariates: np.ndarray  # (N, Q)
    task_values: Mapping[str, np.ndarray]  # attribute name -> (M,)
    offsets: np.ndarray  # (N+1,) row range of each respondent


@dataclass(frozen=True)
class Dataset:
    attributes: tuple[AttributeSpec, ...]
    respondents: tuple[RespondentProfile, ...]
    observations: tuple[Observation, ...]
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        problems = []
        ids = [r.respondent_id for r in self.respondents]
        index = {rid: i for i, rid in enumerate(ids)}
        if len(index) != len(ids):
            problems.append("duplicate respondent ids")
        names = set(self.covariate_names)
        for r in self.respondents:
            if set(r.covariates) != names:
                problems.append(f"respondent {r.respondent_id}: covariate schema mismatch")
        seen = set()
        last = -1
        counts = [0] * len(ids)
        for obs in self.observations:
            i = index.get(obs.respondent_id)
            if i is None:
                problems.append(f"observation references unknown respondent {obs.respondent_id}")
                continue
            if i < last:
                problems.append("observations are not grouped by respondent")
                break
            last = i
            counts[i] += 1
            key = (obs.respondent_id, obs.task.task_id)
            if key in seen:
                problems.append(f"duplicate (respondent, task) {key}")
            seen.add(key)
        for rid, c in zip(ids, counts):
            if c == 0:
                problems.append(f"respondent {rid} has no observations")
        if problems:
            raise DataError(problems)

    @property
    def n_respondents(self) -> int:
        return len(self.respondents)

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    def attribute(self, name: str) -> AttributeSpec:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(name)

    @property
    def categories(self) -> tuple[str, ...]:
        return self.attribute("category").levels

    @cached_property
    def arrays(self) -> DataArrays:
        index = {r.respondent_id: i for i, r in enumerate(self.respondents)}
        ridx = np.array([index[o.respondent_id] for o in self.observations], dtype=np.int64)
        votes = np.array([o.vote for o in self.observations], dtype=np.int8)
        cov = np.array(
            [[r.covariates[c] for c in self.covariate_names] for r in self.respondents],
            dtype=float,
        ).reshape(len(self.respondents), len(self.covariate_names))
        tv = {}
        for a in self.attributes:
            col = [o.task.value(a.name) for o in self.observations]
            tv[a.name] = np.array(col, dtype=object if a.kind == "categorical" else float)
        offsets = np.zeros(len(self.respondents) + 1, dtype=np.int64)
        np.cumsum(np.bincount(ridx, minlength=len(self.respondents)), out=offsets[1:])
        for arr in (ridx, votes, cov, offsets, *tv.values()):
            arr.setflags(write=False)
        return DataArrays(ridx, votes, cov, tv, offsets)

    def subset(self, respondent_ids: Iterable[str]) -> "Dataset":
        keep = set(respondent_ids)
        return Dataset(
            self.attributes,
            tuple(r for r in self.respondents if r.respondent_id in keep),
            tuple(o for o in self.observations if o.respondent_id in keep),
            self.covariate_names,
        )


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    f = float(value)
    if f.is_integer():
        return str(int(f))
    return repr(f)


def _parse_level(attr: AttributeSpec, raw: str):
    if attr.kind == "categorical":
        return raw if raw in attr.levels else None
    try:
        v = float(raw)
    except ValueError:
        return None
    return v if v in attr.levels else None


def load_dataset(
    observations_file: str | Path,
    respondents_file: str | Path,
    schema: Sequence[AttributeSpec] = DEFAULT_SCHEMA,
    covariates: Sequence[CovariateSpec] | None = None,
) -> Dataset:
    """Read and validate the observations and respondents CSV files.

    Every problem found is collected and raised together as a DataError, with
    line numbers counted from the header (line 1).
    """
    schema = tuple(schema)
    attr_by_name = {a.name: a for a in schema}
    missing_attrs = [c for c in TASK_COLUMNS if c not in attr_by_name]
    if missing_attrs:
        raise DataError(f"attribute schema lacks {', '.join(missing_attrs)}")

    problems: list[str] = []

    with open(respondents_file, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "respondent_id":
            raise DataError(f"{respondents_file}: first column must be respondent_id")
        available = header[1:]
        if covariates is None:
            covariates = [CovariateSpec(c) for c in available]
        cov_specs = list(covariates)
        cols = []
        for cs in cov_specs:
            if cs.name not in available:
                problems.append(f"{respondents_file}: missing column {cs.name}")
            else:
                cols.append(header.index(cs.name))
        if problems:
            raise DataError(problems)
        respondents = []
        seen_ids = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                problems.append(f"{respondents_file} line {lineno}: expected {len(header)} fields")
                continue
            rid = row[0]
            if rid in seen_ids:
                problems.append(f"{respondents_file} line {lineno}: duplicate respondent {rid}")
                continue
            seen_ids.add(rid)
            values = {}
            for cs, j in zip(cov_specs, cols):
                raw = row[j].strip()
                if raw == "":
                    problems.append(f"{respondents_file} line {lineno}: missing value for {cs.name}")
                    continue
                try:
                    v = float(raw)
                except ValueError:
                    problems.append(f"{respondents_file} line {lineno}: {cs.name}={raw!r} is not numeric")
                    continue
                msg = cs.check(v)
                if msg:
                    problems.append(f"{respondents_file} line {lineno}: {cs.name}={raw}: {msg}")
                values[cs.name] = v
            respondents.append(RespondentProfile(rid, values))

    resp_order = {r.respondent_id: i for i, r in enumerate(respondents)}
    grouped: list[list[Observation]] = [[] for _ in respondents]
    with open(observations_file, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{observations_file}: no observations")
        absent = [c for c in OBSERVATION_HEADER if c not in header]
        if absent:
            raise DataError(f"{observations_file}: missing column {', '.join(absent)}")
        pos = {c: header.index(c) for c in OBSERVATION_HEADER}
        seen = set()
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            n_rows += 1
            if len(row) != len(header):
                problems.append(f"{observations_file} line {lineno}: expected {len(header)} fields")
                continue
            rid = row[pos["respondent_id"]]
            vals = {}
            bad = False
            for c in TASK_COLUMNS:
                v = _parse_level(attr_by_name[c], row[pos[c]].strip())
                if v is None:
                    problems.append(
                        f"{observations_file} line {lineno}: {c}={row[pos[c]]!r} is not a declared level"
                    )
                    bad = True
                vals[c] = v
            try:
                task_id = int(row[pos["task_id"]])
                block_id = int(row[pos["block_id"]])
            except ValueError:
                problems.append(f"{observations_file} line {lineno}: task_id/block_id must be integers")
                bad = True
            vote_raw = row[pos["vote"]].strip()
            if vote_raw not in ("0", "1"):
                problems.append(f"{observations_file} line {lineno}: vote={vote_raw!r} must be 0 or 1")
                bad = True
            if rid not in resp_order:
                problems.append(f"{observations_file} line {lineno}: orphan observation for respondent {rid}")
                bad = True
            if bad:
                continue
            key = (rid, task_id)
            if key in seen:
                problems.append(f"{observations_file} line {lineno}: duplicate (respondent, task) {rid}/{task_id}")
                continue
            seen.add(key)
            task = ReferendumTask(task_id, block_id, **vals)
            grouped[resp_order[rid]].append(Observation(rid, task, int(vote_raw)))
        if n_rows == 0:
            raise DataError(f"{observations_file}: no observations")

    for r, obs in zip(respondents, grouped):
        if not obs:
            problems.append(f"{respondents_file}: respondent {r.respondent_id} has no observations")
    if problems:
        raise DataError(problems)
    return Dataset(
        schema,
        tuple(respondents),
        tuple(o for obs in grouped for o in obs),
        tuple(cs.name for cs in cov_specs),
    )


def save_dataset(dataset: Dataset, observations_file: str | Path, respondents_file: str | Path) -> None:
    with open(observations_file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBSERVATION_HEADER)
        for o in dataset.observations:
            t = o.task
            w.writerow(
                [o.respondent_id, t.task_id, t.block_id]
                + [_fmt(t.value(c)) for c in TASK_COLUMNS]
                + [o.vote]
            )
    with open(respondents_file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("respondent_id",) + dataset.covariate_names)
        for r in dataset.respondents:
            w.writerow([r.respondent_id] + [_fmt(r.covariates[c]) for c in dataset.covariate_names])


# ---------------------------------------------------------------------------
# Design matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignMatrix:
    columns: tuple[str, ...]
    values: np.ndarray  # (n_observations, n_columns)


def attribute_columns(attr: AttributeSpec, values, transform: str | None = None):
    """Main-effect columns of one attribute: list of (suffix, column)."""
    transform = transform or attr.transform
    values = np.asarray(values)
    if attr.kind == "categorical":
        if transform == "effects-coded":
            base = attr.levels[-1]
            return [
                (f"{lv}", np.where(values == lv, 1.0, np.where(values == base, -1.0, 0.0)))
                for lv in attr.levels[:-1]
            ]
        return [(f"{lv}", (values == lv).astype(float)) for lv in attr.levels]
    if transform == "none":
        return [("raw", values.astype(float))]
    if transform == "linear":
        return [("linear", attr.code(values, "linear"))]
    if transform == "quadratic":
        if len(attr.levels) < 3:
            raise ValueError(f"attribute {attr.name}: quadratic transform needs at least 3 levels")
        return [("linear", attr.code(values, "linear")), ("quadratic", attr.code(values, "quadratic"))]
    if transform == "effects-coded":
        base = attr.levels[-1]
        v = values.astype(float)
        return [
            (f"{_fmt(lv)}", np.where(v == lv, 1.0, np.where(v == base, -1.0, 0.0)))
            for lv in attr.levels[:-1]
        ]
    raise ValueError(f"attribute {attr.name}: unknown transform {transform!r}")


def build_design_matrix(
    dataset: Dataset, transforms: Mapping[str, str] | None = None
) -> DesignMatrix:
    """One row per observation; attributes in schema order.

    ``transforms`` overrides the per-attribute transform declared in the schema.
    """
    transforms = dict(transforms or {})
    unknown = set(transforms) - {a.name for a in dataset.attributes}
    if unknown:
        raise ValueError(f"transform for unknown attribute(s): {sorted(unknown)}")
    tv = dataset.arrays.task_values
    names, cols = [], []
    for a in dataset.attributes:
        for suffix, col in attribute_columns(a, tv[a.name], transforms.get(a.name)):
            names.append(f"{a.name}:{suffix}")
            cols.append(col)
    values = np.column_stack(cols) if cols else np.zeros((dataset.n_observations, 0))
    return DesignMatrix(tuple(names), values)


def schema_from_config(entries: Sequence[Mapping]) -> tuple[AttributeSpec, ...]:
    return tuple(AttributeSpec.from_dict(e) for e in entries)


def covariates_from_config(entries: Sequence[Mapping | str]) -> tuple[CovariateSpec, ...]:
    out = []
    for e in entries:
        if isinstance(e, str):
            out.append(CovariateSpec(e))
        else:
            out.append(CovariateSpec(e["name"], e.get("kind", "numeric")))
    return tuple(out)
