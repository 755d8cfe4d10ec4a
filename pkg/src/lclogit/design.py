"""Blocked, level-balanced main-effects designs for referendum tasks."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .choice_data import (
    DEFAULT_SCHEMA,
    TASK_COLUMNS,
    AttributeSpec,
    OrthoPolyCoding,
    ReferendumTask,
    _fmt,
)

log = logging.getLogger(__name__)

DESIGN_HEADER = ("task_id", "block_id") + TASK_COLUMNS


class DesignError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Levy bounds
# ---------------------------------------------------------------------------


def annuity_factor(rate: float, years: int) -> float:
    """Present value of 1 per year for ``years`` years: (1 - (1+r)^-T) / r."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    if years < 1:
        raise ValueError("years must be at least 1")
    return (1.0 - (1.0 + rate) ** -years) / rate


@dataclass(frozen=True)
class LevyBounds:
    lower: float
    base: float
    upper: float
    annuity_factor: float


def levy_bounds(
    total_households: float,
    annual_rate: float,
    years: int,
    adjustment: float = 0.25,
    target_npv: float = 1.0,
) -> LevyBounds:
    """Per-household annual levy that funds ``target_npv`` over ``years``.

    base = target_npv / (households * annuity factor); the bounds are
    base * (1 -/+ adjustment).
    """
    if total_households <= 0:
        raise ValueError("total_households must be positive")
    if not 0 <= adjustment < 1:
        raise ValueError("adjustment must lie in [0, 1)")
    a = annuity_factor(annual_rate, years)
    base = target_npv / (total_households * a)
    return LevyBounds((1.0 - adjustment) * base, base, (1.0 + adjustment) * base, a)


# ---------------------------------------------------------------------------
# Design types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignConfig:
    attributes: tuple[AttributeSpec, ...] = DEFAULT_SCHEMA
    n_tasks: int = 48
    n_blocks: int = 8
    iterations: int = 20000
    restarts: int = 4
    block_iterations: int = 4000
    threshold: float = 0.05
    seed: int = 0

    def problems(self) -> list[str]:
        out = []
        if self.n_tasks < 1:
            out.append("n_tasks must be positive")
        if self.n_blocks < 1:
            out.append("n_blocks must be positive")
        for a in self.attributes:
            if self.n_tasks % len(a.levels):
                out.append(
                    f"{self.n_tasks} tasks cannot balance the {len(a.levels)} levels of {a.name}"
                )
        if self.n_blocks >= 1 and self.n_tasks % self.n_blocks:
            out.append(f"{self.n_tasks} tasks cannot be split into {self.n_blocks} equal blocks")
        if self.threshold <= 0:
            out.append("threshold must be positive")
        if self.restarts < 1:
            out.append("restarts must be at least 1")
        return out

    def validate(self) -> None:
        probs = self.problems()
        if probs:
            raise DesignError("; ".join(probs))


@dataclass(frozen=True)
class DesignDiagnostics:
    level_counts: dict[str, dict]
    column_names: tuple[str, ...]
    correlation: np.ndarray
    max_abs_correlation: float
    d_efficiency: float
    block_sizes: tuple[int, ...]
    block_imbalance: float

    def to_dict(self) -> dict:
        return {
            "level_counts": {
                a: {_fmt(k): v for k, v in c.items()} for a, c in self.level_counts.items()
            },
            "columns": list(self.column_names),
            "correlation": [[float(x) for x in row] for row in self.correlation],
            "max_abs_correlation": float(self.max_abs_correlation),
            "d_efficiency": float(self.d_efficiency),
            "block_sizes": list(self.block_sizes),
            "block_imbalance": float(self.block_imbalance),
        }

    def __eq__(self, other):
        if not isinstance(other, DesignDiagnostics):
            return NotImplemented
        return self.to_dict() == other.to_dict()


@dataclass(frozen=True)
class Design:
    attributes: tuple[AttributeSpec, ...]
    tasks: tuple[ReferendumTask, ...]
    diagnostics: DesignDiagnostics
    warning: bool = False
    seed: int = 0
    notes: tuple[str, ...] = field(default=())

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def blocks(self) -> dict[int, list[ReferendumTask]]:
        out: dict[int, list[ReferendumTask]] = {}
        for t in self.tasks:
            out.setdefault(t.block_id, []).append(t)
        return dict(sorted(out.items()))

    @property
    def level_indices(self) -> np.ndarray:
        return _level_indices(self.attributes, self.tasks)


def _level_indices(attributes, tasks) -> np.ndarray:
    L = np.empty((len(tasks), len(attributes)), dtype=np.int64)
    for j, a in enumerate(attributes):
        pos = {v: i for i, v in enumerate(a.levels)}
        for i, t in enumerate(tasks):
            L[i, j] = pos[t.value(a.name) if a.kind == "categorical" else float(t.value(a.name))]
    return L


def _code_tables(attributes) -> tuple[list[np.ndarray], list[str]]:
    """Per attribute, a (levels x columns) table of orthonormal main-effect codes.

    Continuous attributes use the degree-1 polynomial code; categorical
    attributes use all k-1 polynomial contrasts on the level index, which span
    the same space as effects coding.
    """
    tables, names = [], []
    for a in attributes:
        k = len(a.levels)
        if k < 2:
            tables.append(np.zeros((k, 0)))
            continue
        if a.kind == "continuous":
            tab = OrthoPolyCoding(a.levels, 1).matrix
            names.append(f"{a.name}:linear")
        else:
            tab = OrthoPolyCoding(list(range(k)), k - 1).matrix
            names.extend(f"{a.name}:c{d}" for d in range(1, k))
        tables.append(tab)
    return tables, names


def _coded(L: np.ndarray, tables) -> np.ndarray:
    return np.column_stack([tab[L[:, j]] for j, tab in enumerate(tables) if tab.shape[1]])


def _correlation(C: np.ndarray) -> np.ndarray:
    Cc = C - C.mean(axis=0)
    ss = np.sqrt(np.sum(Cc * Cc, axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        R = (Cc.T @ Cc) / np.outer(ss, ss)
    R[~np.isfinite(R)] = 0.0
    np.fill_diagonal(R, 1.0)
    return R


def _objective(L: np.ndarray, tables) -> tuple[float, float]:
    R = _correlation(_coded(L, tables))
    off = R[~np.eye(R.shape[0], dtype=bool)]
    if off.size == 0:
        return 0.0, 0.0
    return float(np.max(np.abs(off))), float(np.sum(off * off))


def _d_efficiency(L: np.ndarray, attributes, tables) -> float:
    cols = [np.ones(L.shape[0])]
    for j, tab in enumerate(tables):
        k = len(attributes[j].levels)
        for d in range(tab.shape[1]):
            # sqrt(k) scaling gives unit mean square under level balance
            cols.append(tab[L[:, j], d] * np.sqrt(k))
    X = np.column_stack(cols)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        return 0.0
    M = X.T @ X / X.shape[0]
    sign, logdet = np.linalg.slogdet(M)
    if sign <= 0:
        return 0.0
    return float(np.exp(logdet / X.shape[1]))


def _block_counts(L: np.ndarray, blocks: np.ndarray, n_blocks: int, attributes):
    """List over attributes of (n_blocks x levels) count tables."""
    out = []
    for j, a in enumerate(attributes):
        cnt = np.zeros((n_blocks, len(a.levels)))
        np.add.at(cnt, (blocks, L[:, j]), 1.0)
        out.append(cnt)
    return out


def block_imbalance(L: np.ndarray, blocks: np.ndarray, n_blocks: int, attributes) -> float:
    """Sum over blocks, attributes and levels of squared deviation from proportional counts."""
    size = L.shape[0] / n_blocks
    total = 0.0
    for j, cnt in enumerate(_block_counts(L, blocks, n_blocks, attributes)):
        target = size / len(attributes[j].levels)
        total += float(np.sum((cnt - target) ** 2))
    return total


def _diagnostics(attributes, tasks) -> DesignDiagnostics:
    L = _level_indices(attributes, tasks)
    tables, names = _code_tables(attributes)
    R = _correlation(_coded(L, tables))
    off = R[~np.eye(R.shape[0], dtype=bool)]
    counts = {
        a.name: {lv: int(np.sum(L[:, j] == i)) for i, lv in enumerate(a.levels)}
        for j, a in enumerate(attributes)
    }
    block_ids = sorted({t.block_id for t in tasks})
    pos = {b: i for i, b in enumerate(block_ids)}
    blocks = np.array([pos[t.block_id] for t in tasks])
    sizes = tuple(int(np.sum(blocks == i)) for i in range(len(block_ids)))
    return DesignDiagnostics(
        level_counts=counts,
        column_names=tuple(names),
        correlation=R,
        max_abs_correlation=float(np.max(np.abs(off))) if off.size else 0.0,
        d_efficiency=_d_efficiency(L, attributes, tables),
        block_sizes=sizes,
        block_imbalance=block_imbalance(L, blocks, len(block_ids), attributes),
    )


def evaluate_design(design: Design) -> DesignDiagnostics:
    """Recompute balance counts, coded correlations, D-efficiency and block balance."""
    return _diagnostics(design.attributes, design.tasks)


def _tasks_from(attributes, L, blocks) -> tuple[ReferendumTask, ...]:
    out = []
    for i in range(L.shape[0]):
        vals = {a.name: a.levels[L[i, j]] for j, a in enumerate(attributes)}
        out.append(ReferendumTask(task_id=i + 1, block_id=int(blocks[i]) + 1, **vals))
    return tuple(out)


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


def balanced_start(attributes, n_tasks: int, rng: np.random.Generator) -> np.ndarray:
    """Each attribute's levels repeated n_tasks/levels times, shuffled per column."""
    L = np.empty((n_tasks, len(attributes)), dtype=np.int64)
    for j, a in enumerate(attributes):
        col = np.repeat(np.arange(len(a.levels)), n_tasks // len(a.levels))
        L[:, j] = rng.permutation(col)
    return L


def _swap_search(L, tables, iterations, threshold, rng, history=None):
    n, p = L.shape
    movable = [j for j, tab in enumerate(tables) if tab.shape[1]]
    cur = _objective(L, tables)
    for _ in range(iterations):
        if cur[0] <= threshold or not movable:
            break
        j = movable[rng.integers(len(movable))]
        a, b = rng.integers(n, size=2)
        if L[a, j] == L[b, j]:
            continue
        L[[a, b], j] = L[[b, a], j]
        new = _objective(L, tables)
        if new <= cur:
            cur = new
            if history is not None:
                history.append(cur)
        else:
            L[[a, b], j] = L[[b, a], j]
    return L, cur


def block_design(design: Design, n_blocks: int, seed: int = 0, iterations: int = 4000) -> np.ndarray:
    """Assign tasks to equal-size blocks by greedy swaps on level imbalance.

    Returns zero-based block indices aligned with ``design.tasks``.
    """
    n = design.n_tasks
    if n_blocks < 1 or n % n_blocks:
        raise DesignError(f"{n} tasks cannot be split into {n_blocks} equal blocks")
    L = design.level_indices
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB10C]))
    blocks = rng.permutation(np.repeat(np.arange(n_blocks), n // n_blocks))
    if n_blocks == 1:
        return blocks
    cur = block_imbalance(L, blocks, n_blocks, design.attributes)
    for _ in range(iterations):
        if cur == 0.0:
            break
        a, b = rng.integers(n, size=2)
        if blocks[a] == blocks[b]:
            continue
        blocks[[a, b]] = blocks[[b, a]]
        new = block_imbalance(L, blocks, n_blocks, design.attributes)
        if new <= cur:
            cur = new
        else:
            blocks[[a, b]] = blocks[[b, a]]
    return blocks


def _one_restart(config: DesignConfig, seed: int, r: int):
    rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
    tables, _ = _code_tables(config.attributes)
    L = balanced_start(config.attributes, config.n_tasks, rng)
    return _swap_search(L, tables, config.iterations, config.threshold, rng)


def generate_design(config: DesignConfig = DesignConfig(), seed: int | None = None, threads: int = 1) -> Design:
    """Balanced random start plus pairwise-swap descent on max |correlation|.

    Deterministic given the seed. When no restart reaches ``threshold`` the
    best design is returned with ``warning`` set.
    """
    config.validate()
    seed = config.seed if seed is None else seed
    runs = range(config.restarts)
    if threads > 1 and config.restarts > 1:
        with ThreadPoolExecutor(min(threads, config.restarts)) as ex:
            results = list(ex.map(lambda r: _one_restart(config, seed, r), runs))
    else:
        results = [_one_restart(config, seed, r) for r in runs]
    best = min(range(len(results)), key=lambda r: (results[r][1], r))
    L, obj = results[best]
    draft = Design(
        config.attributes,
        _tasks_from(config.attributes, L, np.zeros(config.n_tasks, dtype=int)),
        _diagnostics(config.attributes, _tasks_from(config.attributes, L, np.zeros(config.n_tasks, dtype=int))),
    )
    blocks = block_design(draft, config.n_blocks, seed, config.block_iterations)
    tasks = _tasks_from(config.attributes, L, blocks)
    diag = _diagnostics(config.attributes, tasks)
    warning = diag.max_abs_correlation > config.threshold
    notes = ()
    if warning:
        notes = (f"max |correlation| {diag.max_abs_correlation:.4f} above threshold {config.threshold}",)
        log.warning(notes[0])
    return Design(config.attributes, tasks, diag, warning, seed, notes)


def random_balanced_design(config: DesignConfig, seed: int) -> Design:
    """Level-balanced random design without any search (a baseline)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA5E]))
    L = balanced_start(config.attributes, config.n_tasks, rng)
    blocks = np.repeat(np.arange(config.n_blocks), config.n_tasks // config.n_blocks)
    tasks = _tasks_from(config.attributes, L, blocks)
    return Design(config.attributes, tasks, _diagnostics(config.attributes, tasks), False, seed)


def design_from_tasks(attributes: Sequence[AttributeSpec], tasks: Sequence[ReferendumTask]) -> Design:
    tasks = tuple(tasks)
    return Design(tuple(attributes), tasks, _diagnostics(tuple(attributes), tasks))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_design_csv(design: Design, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DESIGN_HEADER)
        for t in design.tasks:
            w.writerow([t.task_id, t.block_id] + [_fmt(t.value(c)) for c in TASK_COLUMNS])


def read_design_csv(path: str | Path, attributes: Sequence[AttributeSpec] = DEFAULT_SCHEMA) -> Design:
    attrs = {a.name: a for a in attributes}
    tasks = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in DESIGN_HEADER if c not in (reader.fieldnames or [])]
        if missing:
            raise DesignError(f"{path}: missing column(s) {missing}")
        for lineno, row in enumerate(reader, start=2):
            vals = {}
            for c in TASK_COLUMNS:
                a = attrs[c]
                raw = row[c]
                v = raw if a.kind == "categorical" else float(raw)
                if v not in a.levels:
                    raise DesignError(f"{path} line {lineno}: {c}={raw!r} is not a declared level")
                vals[c] = v
            tasks.append(ReferendumTask(int(row["task_id"]), int(row["block_id"]), **vals))
    if not tasks:
        raise DesignError(f"{path}: no tasks")
    return design_from_tasks(attributes, tasks)
