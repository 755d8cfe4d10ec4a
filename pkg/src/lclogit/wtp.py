"""Sample-enumeration shares and willingness to pay per segment and household.

Nay-saying entries are kept as ``None`` (displayed as "NW", not willing) and
count as zero in aggregates. Yea-saying entries equal the levy upper bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .choice_data import DEFAULT_SCHEMA, AttributeSpec, Dataset
from .likelihood import LikelihoodContext, PinnedCategoryError, yes_probability
from .model_spec import CONSTANT, ClassSpec, ModelSpec, pack

LEVY = "levy_rial"
NOT_WILLING = "NW"
SHAPES = (
    "flat",
    "monotone increasing",
    "monotone decreasing",
    "concave-interior-max",
    "convex-interior-min",
)


def _named(fit) -> dict[str, float]:
    return fit.named() if callable(getattr(fit, "named", None)) else dict(fit.params)


@dataclass(frozen=True)
class FittedModel:
    """Minimal stand-in for a fit: a spec plus named parameter values."""

    spec: ModelSpec
    params: Mapping[str, float]

    def named(self) -> dict[str, float]:
        return dict(self.params)

    @property
    def estimates(self) -> np.ndarray:
        return pack(self.spec, self.params).values


# ---------------------------------------------------------------------------
# Shares
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SegmentShares:
    classes: tuple[str, ...]
    shares: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.shares, dtype=float)
        if s.shape != (len(self.classes),):
            raise ValueError("one share per class is required")
        if np.any(s < 0) or abs(s.sum() - 1.0) > 1e-10:
            raise ValueError(f"shares must be non-negative and sum to 1 (sum={s.sum()!r})")
        object.__setattr__(self, "shares", s)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.classes, self.shares.tolist()))

    def __getitem__(self, cls: str) -> float:
        return float(self.shares[self.classes.index(cls)])


def segment_shares(fit, dataset: Dataset) -> SegmentShares:
    """Average membership prior over the sample's covariates."""
    ctx = LikelihoodContext(dataset, fit.spec)
    H = ctx.priors(pack(fit.spec, _named(fit)).values)
    shares = H.mean(axis=0)
    return SegmentShares(fit.spec.class_names, shares / shares.sum())


def posterior_shares(fit, dataset: Dataset) -> SegmentShares:
    ctx = LikelihoodContext(dataset, fit.spec)
    post = ctx.posterior(pack(fit.spec, _named(fit)).values)
    s = post.mean(axis=0)
    return SegmentShares(fit.spec.class_names, s / s.sum())


# ---------------------------------------------------------------------------
# Utility of arbitrary profiles
# ---------------------------------------------------------------------------


def _terms_for(cls: ClassSpec, category: str):
    return [t for t in cls.terms if t.category in (None, category)]


def _split_utility(cls: ClassSpec, category: str, params, attrs, profiles, covariates, n):
    """Non-levy utility (length n) and the list of (coef, transform) levy terms."""
    a = np.zeros(n)
    levy_terms = []
    for t in _terms_for(cls, category):
        coef = params[f"{cls.name}.{t.label}"]
        if t.name == CONSTANT:
            a += coef
        elif t.name == LEVY:
            levy_terms.append((coef, t.transform))
        elif t.name in attrs:
            a += coef * attrs[t.name].code(profiles[t.name], t.transform)
        else:
            a += coef * np.asarray(covariates[t.name], dtype=float)
    return a, levy_terms


def _levy_terms(cls: ClassSpec, category: str, params) -> list[tuple[float, str]]:
    return [(params[f"{cls.name}.{t.label}"], t.transform) for t in _terms_for(cls, category) if t.name == LEVY]


def _levy_part(levy_attr: AttributeSpec, terms, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for coef, tr in terms:
        out = out + coef * levy_attr.code(x, tr)
    return out


@dataclass(frozen=True)
class LevyRoot:
    """Indifference levy; ``value`` is None when no root is reported."""

    value: float | None
    flag: str  # root | zero | upper | pinned_yes | not_willing | non_monotone


def _levy_monotone(levy_attr, terms, lower, upper) -> bool:
    grid = np.linspace(lower, upper, 2001)
    f = _levy_part(levy_attr, terms, grid)
    return bool(np.all(np.diff(f) <= 1e-12 * max(1.0, float(np.max(np.abs(f))))))


def _bisect_levy(a: np.ndarray, levy_attr, terms, lower: float, upper: float, tol: float = 1.0):
    """Vectorized bisection of a + f(levy) = 0 for a decreasing f."""
    f_lo = a + _levy_part(levy_attr, terms, np.full_like(a, lower))
    f_hi = a + _levy_part(levy_attr, terms, np.full_like(a, upper))
    out = np.empty_like(a)
    low_mask = f_lo < 0
    high_mask = (f_hi > 0) & ~low_mask
    mid_mask = ~(low_mask | high_mask)
    out[low_mask] = 0.0
    out[high_mask] = upper
    if mid_mask.any():
        lo = np.full(mid_mask.sum(), lower)
        hi = np.full(mid_mask.sum(), upper)
        aa = a[mid_mask]
        for _ in range(int(math.ceil(math.log2(max((upper - lower) / tol, 1.0)))) + 1):
            m = 0.5 * (lo + hi)
            pos = aa + _levy_part(levy_attr, terms, m) > 0
            lo = np.where(pos, m, lo)
            hi = np.where(pos, hi, m)
        out[mid_mask] = 0.5 * (lo + hi)
    return out


def _levy_attribute(attributes) -> AttributeSpec:
    for a in attributes:
        if a.name == LEVY:
            return a
    raise KeyError(f"no {LEVY} attribute in the schema")


def indifference_levy(
    cls: str,
    category: str,
    profile: Mapping[str, float],
    covariates: Mapping[str, float],
    fit,
    attributes: Sequence[AttributeSpec] = DEFAULT_SCHEMA,
    upper_bound: float | None = None,
) -> LevyRoot:
    """Levy at which P(yes) = 0.5 for one profile, clamped to [0, upper]."""
    spec: ModelSpec = fit.spec
    c = spec.get(cls)
    levy_attr = _levy_attribute(attributes)
    upper = float(upper_bound if upper_bound is not None else levy_attr.upper)
    fx = c.fixity_for(category)
    if fx == "pinned_no":
        return LevyRoot(None, "not_willing")
    if fx == "pinned_yes":
        return LevyRoot(upper, "pinned_yes")
    attrs = {a.name: a for a in attributes}
    prof = {k: np.asarray([v], dtype=float) for k, v in profile.items() if k != "category"}
    cov = {k: np.asarray([v], dtype=float) for k, v in covariates.items()}
    a, terms = _split_utility(c, category, _named(fit), attrs, prof, cov, 1)
    if not _levy_monotone(levy_attr, terms, levy_attr.lower, upper):
        return LevyRoot(None, "non_monotone")
    v = float(_bisect_levy(a, levy_attr, terms, levy_attr.lower, upper)[0])
    flag = "zero" if v == 0.0 else ("upper" if v == upper else "root")
    return LevyRoot(v, flag)


# ---------------------------------------------------------------------------
# Segment and household WTP
# ---------------------------------------------------------------------------


def enumeration_profiles(dataset: Dataset, category: str, mode: str = "sample"):
    """Non-levy attribute profiles and their weights for one category.

    ``sample`` uses the empirical distribution of the tasks answered in the
    dataset; ``midpoint`` holds every continuous attribute at its midrange.
    """
    names = [a.name for a in dataset.attributes if a.kind == "continuous" and a.name != LEVY]
    if mode == "midpoint":
        prof = {a.name: np.array([0.5 * (a.lower + a.upper)]) for a in dataset.attributes if a.name in names}
        return prof, np.ones(1)
    if mode != "sample":
        raise ValueError(f"unknown enumeration mode {mode!r}")
    counts: dict[tuple, int] = {}
    for o in dataset.observations:
        if o.task.category == category:
            key = tuple(float(o.task.value(n)) for n in names)
            counts[key] = counts.get(key, 0) + 1
    if not counts:
        raise ValueError(f"no tasks of category {category!r} in the dataset")
    keys = sorted(counts)
    prof = {n: np.array([k[j] for k in keys]) for j, n in enumerate(names)}
    w = np.array([counts[k] for k in keys], dtype=float)
    return prof, w / w.sum()


@dataclass(frozen=True)
class SegmentWtp:
    value: float | None
    flag: str


def segment_wtp(
    cls: str,
    category: str,
    dataset: Dataset,
    fit,
    mode: str = "sample",
    weights: np.ndarray | None = None,
    upper_bound: float | None = None,
) -> SegmentWtp:
    """Indifference levy averaged over profiles and over class members.

    Respondents are weighted by their posterior probability of belonging to
    ``cls`` unless explicit ``weights`` (length N) are given.
    """
    spec: ModelSpec = fit.spec
    c = spec.get(cls)
    levy_attr = _levy_attribute(dataset.attributes)
    upper = float(upper_bound if upper_bound is not None else levy_attr.upper)
    fx = c.fixity_for(category)
    if fx == "pinned_no":
        return SegmentWtp(None, "not_willing")
    if fx == "pinned_yes":
        return SegmentWtp(upper, "pinned_yes")
    params = _named(fit)
    attrs = {a.name: a for a in dataset.attributes}
    prof, pw = enumeration_profiles(dataset, category, mode)
    J = len(pw)
    cov_terms = [t.name for t in _terms_for(c, category) if t.name != CONSTANT and t.name not in attrs]

    terms = _levy_terms(c, category, params)
    if not _levy_monotone(levy_attr, terms, levy_attr.lower, upper):
        return SegmentWtp(None, "non_monotone")

    if not cov_terms:
        a, _ = _split_utility(c, category, params, attrs, prof, {}, J)
        return SegmentWtp(float(pw @ _bisect_levy(a, levy_attr, terms, levy_attr.lower, upper)), "ok")

    if weights is None:
        ctx = LikelihoodContext(dataset, spec)
        weights = ctx.posterior(pack(spec, params).values)[:, spec.class_names.index(cls)]
    weights = np.asarray(weights, dtype=float)
    if weights.sum() <= 0:
        return SegmentWtp(None, "empty")
    cov_pos = {n: j for j, n in enumerate(dataset.covariate_names)}
    X = dataset.arrays.covariates
    N = dataset.n_respondents
    rep_prof = {k: np.tile(v, N) for k, v in prof.items()}
    rep_cov = {n: np.repeat(X[:, cov_pos[n]], J) for n in cov_terms}
    a, _ = _split_utility(c, category, params, attrs, rep_prof, rep_cov, N * J)
    w = _bisect_levy(a, levy_attr, terms, levy_attr.lower, upper).reshape(N, J) @ pw
    return SegmentWtp(float(weights @ w / weights.sum()), "ok")


def household_average_wtp(shares: SegmentShares, wtp: Mapping[str, float | None]) -> float:
    """Share-weighted sum of segment WTP for one category; None counts as 0."""
    if set(shares.classes) != set(wtp):
        raise ValueError(
            f"class sets differ: shares {sorted(shares.classes)} vs wtp {sorted(wtp)}"
        )
    return math.fsum(float(s) * float(wtp[c] or 0.0) for c, s in zip(shares.classes, shares.shares))


@dataclass
class WtpTable:
    classes: tuple[str, ...]
    categories: tuple[str, ...]
    shares: SegmentShares
    values: dict[tuple[str, str], float | None] = field(default_factory=dict)
    flags: dict[tuple[str, str], str] = field(default_factory=dict)

    def household_average(self, category: str) -> float:
        return household_average_wtp(self.shares, {c: self.values[(c, category)] for c in self.classes})

    def rows(self) -> list[list[str]]:
        """One row per category: household average first, then each segment."""
        out = [["category", "household_average"] + list(self.classes)]
        for cat in self.categories:
            row = [cat, f"{self.household_average(cat):.2f}"]
            for c in self.classes:
                v = self.values[(c, cat)]
                row.append(NOT_WILLING if v is None else f"{v:.2f}")
            out.append(row)
        return out


def wtp_table(
    fit,
    dataset: Dataset,
    mode: str = "sample",
    upper_bound: float | None = None,
    shares: SegmentShares | None = None,
) -> WtpTable:
    shares = shares or segment_shares(fit, dataset)
    spec = fit.spec
    params = _named(fit)
    post = None
    if any(
        t.name != CONSTANT and t.name not in {a.name for a in dataset.attributes}
        for c in spec.classes for t in c.terms
    ):
        post = LikelihoodContext(dataset, spec).posterior(pack(spec, params).values)
    table = WtpTable(spec.class_names, dataset.categories, shares)
    for s, c in enumerate(spec.class_names):
        for cat in dataset.categories:
            w = None if post is None else post[:, s]
            r = segment_wtp(c, cat, dataset, fit, mode=mode, weights=w, upper_bound=upper_bound)
            table.values[(c, cat)] = r.value
            table.flags[(c, cat)] = r.flag
    return table


# ---------------------------------------------------------------------------
# Choice probability curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbabilityCurve:
    attribute: str
    grid: np.ndarray
    p_yes: np.ndarray
    shape: str


def choice_prob_profile(
    cls: str,
    category: str,
    attribute: str,
    grid: Sequence[float],
    fit,
    attributes: Sequence[AttributeSpec] = DEFAULT_SCHEMA,
    reference: Mapping[str, float] | None = None,
    covariates: Mapping[str, float] | None = None,
) -> ProbabilityCurve:
    """P(yes) over ``grid`` with the other attributes at their midrange."""
    spec: ModelSpec = fit.spec
    c = spec.get(cls)
    if c.fixity_for(category) != "estimated":
        raise PinnedCategoryError(f"class {cls} pins category {category}")
    grid = np.asarray(grid, dtype=float)
    n = len(grid)
    attrs = {a.name: a for a in attributes}
    ref = {a.name: 0.5 * (a.lower + a.upper) for a in attributes if a.kind == "continuous"}
    ref.update(reference or {})
    prof = {k: np.full(n, v) for k, v in ref.items()}
    prof[attribute] = grid
    cov_names = [t.name for t in c.terms if t.name != CONSTANT and t.name not in attrs]
    cov = {k: np.full(n, float((covariates or {}).get(k, 0.0))) for k in cov_names}
    params = _named(fit)
    a, levy_terms = _split_utility(c, category, params, attrs, prof, cov, n)
    v = a + _levy_part(attrs[LEVY], levy_terms, prof[LEVY]) if LEVY in attrs else a
    p = np.asarray(yes_probability(v, spec.scale), dtype=float)

    quad = sum(
        params[f"{c.name}.{t.label}"]
        for t in _terms_for(c, category)
        if t.name == attribute and t.transform == "quadratic"
    )
    d = np.diff(p)
    if np.all(np.abs(d) <= 1e-12):
        shape = "flat"
    elif np.all(d >= -1e-15):
        shape = "monotone increasing"
    elif np.all(d <= 1e-15):
        shape = "monotone decreasing"
    else:
        shape = "concave-interior-max" if quad < 0 else "convex-interior-min"
    return ProbabilityCurve(attribute, grid, p, shape)
