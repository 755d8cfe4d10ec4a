"""Synthetic populations and referendum responses from a known latent-class model."""

from __future__ import annotations

import csv
import itertools
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .choice_data import (
    CovariateSpec,
    Dataset,
    Observation,
    RespondentProfile,
)
from .design import Design
from .estimation import FitOptions, FitResult, fit
from .likelihood import LikelihoodContext
from .model_spec import ClassSpec, ModelSpec, ParameterIndex, pack

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

DISTRIBUTIONS = ("bernoulli", "discrete", "uniform", "onehot")


# ---------------------------------------------------------------------------
# Covariate generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovariateGenerator:
    """One marginal: bernoulli(p), discrete values/weights, uniform(low, high).

    ``onehot`` draws one member of a mutually exclusive indicator group
    (e.g. age brackets) with the given weights.
    """

    dist: str
    names: tuple[str, ...]
    p: float = 0.5
    values: tuple[float, ...] = ()
    weights: tuple[float, ...] = ()
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if self.dist not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.dist!r}")
        if self.dist == "bernoulli" and not 0.0 <= self.p <= 1.0:
            raise ValueError(f"{self.names[0]}: p must lie in [0, 1]")
        if self.dist in ("discrete", "onehot"):
            n = len(self.names) if self.dist == "onehot" else len(self.values)
            if len(self.weights) != n or n == 0:
                raise ValueError(f"{self.names}: weights do not match outcomes")
            if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
                raise ValueError(f"{self.names}: weights must be non-negative")
        if self.dist == "uniform" and self.high < self.low:
            raise ValueError(f"{self.names[0]}: high < low")

    def draw(self, rng: np.random.Generator) -> dict[str, float]:
        if self.dist == "bernoulli":
            return {self.names[0]: float(rng.random() < self.p)}
        if self.dist == "uniform":
            return {self.names[0]: float(rng.uniform(self.low, self.high))}
        w = np.asarray(self.weights, dtype=float)
        k = int(rng.choice(len(w), p=w / w.sum()))
        if self.dist == "discrete":
            return {self.names[0]: float(self.values[k])}
        return {n: float(i == k) for i, n in enumerate(self.names)}

    @property
    def covariate_specs(self) -> list[CovariateSpec]:
        if self.dist in ("bernoulli", "onehot"):
            return [CovariateSpec(n, "indicator") for n in self.names]
        if self.dist == "discrete" and all(v >= 0 and float(v).is_integer() for v in self.values):
            return [CovariateSpec(self.names[0], "count")]
        return [CovariateSpec(self.names[0], "numeric")]

    @classmethod
    def from_dict(cls, d: Mapping) -> "CovariateGenerator":
        dist = d["dist"]
        names = tuple(d["group"]) if dist == "onehot" else (d["name"],)
        return cls(
            dist=dist,
            names=names,
            p=float(d.get("p", 0.5)),
            values=tuple(float(v) for v in d.get("values", ())),
            weights=tuple(float(v) for v in d.get("weights", ())),
            low=float(d.get("low", 0.0)),
            high=float(d.get("high", 1.0)),
        )


def load_covariate_generators(path: str | Path) -> tuple[CovariateGenerator, ...]:
    data = tomllib.loads(Path(path).read_text())
    return tuple(CovariateGenerator.from_dict(d) for d in data.get("covariate", []))


def generator_names(gens: Sequence[CovariateGenerator]) -> tuple[str, ...]:
    return tuple(n for g in gens for n in g.names)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    spec: ModelSpec
    params: Mapping[str, float]
    n_respondents: int
    design: Design
    covariates: tuple[CovariateGenerator, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.n_respondents < 1:
            raise ValueError("n_respondents must be at least 1")
        have = set(generator_names(self.covariates))
        need = set()
        attr_names = {a.name for a in self.design.attributes}
        for c in self.spec.classes:
            need.update(m for m in c.membership if m != "constant")
            need.update(t.name for t in c.terms if t.name != "constant" and t.name not in attr_names)
        missing = sorted(need - have)
        if missing:
            raise ValueError(f"no generator for covariate(s) {missing}")
        pack(self.spec, self.params)  # validates names


@dataclass(frozen=True)
class Simulation:
    dataset: Dataset
    true_class: Mapping[str, str]  # respondent_id -> class name

    def class_frequencies(self, class_names: Sequence[str]) -> np.ndarray:
        labels = [self.true_class[r.respondent_id] for r in self.dataset.respondents]
        return np.array([labels.count(c) for c in class_names], dtype=float) / len(labels)


def _respondent_id(i: int, n: int) -> str:
    return f"R{i + 1:0{max(4, len(str(n)))}d}"


def simulate_population(config: SimConfig) -> Simulation:
    """Draw covariates, a class from the membership priors and the votes.

    Every respondent uses its own stream seeded by (seed, respondent number),
    so the output does not depend on evaluation order or parallelism.
    """
    spec, n = config.spec, config.n_respondents
    blocks = config.design.blocks
    block_ids = list(blocks)
    cov_names = generator_names(config.covariates)

    streams = [np.random.default_rng(np.random.SeedSequence([config.seed, i])) for i in range(n)]
    respondents, draft = [], []
    for i in range(n):
        rng = streams[i]
        cov: dict[str, float] = {}
        for g in config.covariates:
            cov.update(g.draw(rng))
        rid = _respondent_id(i, n)
        respondents.append(RespondentProfile(rid, {c: cov[c] for c in cov_names}))
        for task in blocks[block_ids[i % len(block_ids)]]:
            draft.append(Observation(rid, task, 0))
    draft_ds = Dataset(config.design.attributes, tuple(respondents), tuple(draft), cov_names)

    ctx = LikelihoodContext(draft_ds, spec)
    theta = pack(spec, config.params).values
    priors = ctx.priors(theta)
    utilities = [ctx.utilities(theta, s) for s in range(ctx.n_classes)]
    offsets = ctx.offsets

    votes = np.zeros(draft_ds.n_observations, dtype=np.int8)
    labels = {}
    for i in range(n):
        rng = streams[i]
        s = int(rng.choice(ctx.n_classes, p=priors[i] / priors[i].sum()))
        labels[respondents[i].respondent_id] = spec.classes[s].name
        blk = ctx.blocks[s]
        lo, hi = offsets[i], offsets[i + 1]
        u = rng.random(hi - lo)
        for r in range(lo, hi):
            fx = blk.fixity[r]
            if fx == "pinned_yes":
                votes[r] = 1
            elif fx == "pinned_no":
                votes[r] = 0
            else:
                p_yes = 1.0 / (1.0 + np.exp(-spec.scale * utilities[s][r]))
                votes[r] = int(u[r - lo] < p_yes)

    observations = tuple(
        Observation(o.respondent_id, o.task, int(v)) for o, v in zip(draft, votes)
    )
    dataset = Dataset(config.design.attributes, tuple(respondents), observations, cov_names)
    sim = Simulation(dataset, labels)
    _check_pins(sim, spec)
    return sim


def _check_pins(sim: Simulation, spec: ModelSpec) -> None:
    for o in sim.dataset.observations:
        fx = spec.get(sim.true_class[o.respondent_id]).fixity_for(o.task.category)
        if (fx == "pinned_yes" and o.vote != 1) or (fx == "pinned_no" and o.vote != 0):
            raise RuntimeError(f"generator produced a vote that contradicts the pin of {o.respondent_id}")


def write_truth_csv(sim: Simulation, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("respondent_id", "true_class"))
        for r in sim.dataset.respondents:
            w.writerow((r.respondent_id, sim.true_class[r.respondent_id]))


def read_truth_csv(path: str | Path) -> dict[str, str]:
    with open(path, newline="") as fh:
        return {row["respondent_id"]: row["true_class"] for row in csv.DictReader(fh)}


# ---------------------------------------------------------------------------
# Recovery
# ---------------------------------------------------------------------------


def _signature(c: ClassSpec) -> tuple:
    return (c.kind, tuple(sorted(c.fixity.items())), tuple(t.label for t in c.terms))


def match_classes(spec: ModelSpec, truth: Mapping[str, float], estimate: Mapping[str, float]) -> dict[str, str]:
    """Map each true class to the fitted class with the nearest utility vector.

    Only classes with identical structure can swap labels; pinned classes
    always map to themselves.
    """
    groups: dict[tuple, list[ClassSpec]] = {}
    for c in spec.classes:
        groups.setdefault(_signature(c), []).append(c)
    mapping = {}
    for members in groups.values():
        names = [c.name for c in members]
        if len(members) == 1 or not members[0].terms:
            mapping.update({n: n for n in names})
            continue

        def vec(src, cname):
            return np.array([src[f"{cname}.{t.label}"] for t in members[0].terms])

        best, best_d = None, np.inf
        for perm in itertools.permutations(names):
            d = sum(float(np.sum((vec(truth, a) - vec(estimate, b)) ** 2)) for a, b in zip(names, perm))
            if d < best_d:
                best, best_d = perm, d
        mapping.update(dict(zip(names, best)))
    return mapping


@dataclass
class ParameterRecovery:
    name: str
    truth: float
    estimate: float
    se: float

    @property
    def bias(self) -> float:
        return self.estimate - self.truth

    @property
    def covered(self) -> bool:
        return bool(np.isfinite(self.se) and abs(self.bias) <= 1.96 * self.se)

    @property
    def within_3se(self) -> bool:
        return bool(np.isfinite(self.se) and abs(self.bias) <= 3.0 * self.se)


@dataclass
class ReplicationReport:
    seed: int
    fit: FitResult
    class_names: tuple[str, ...]
    true_shares: np.ndarray
    fitted_shares: np.ndarray
    parameters: list[ParameterRecovery]
    mapping: dict[str, str]

    @property
    def share_errors(self) -> np.ndarray:
        return self.fitted_shares - self.true_shares

    def utility_parameters(self) -> list[ParameterRecovery]:
        return [p for p in self.parameters if ".membership." not in p.name]


@dataclass
class RecoveryReport:
    replications: list[ReplicationReport] = field(default_factory=list)

    def coverage(self, utility_only: bool = True) -> float:
        ps = [p for r in self.replications for p in (r.utility_parameters() if utility_only else r.parameters)]
        return float(np.mean([p.covered for p in ps])) if ps else float("nan")

    def rmse(self) -> float:
        b = [p.bias for r in self.replications for p in r.utility_parameters()]
        return float(np.sqrt(np.mean(np.square(b)))) if b else float("nan")

    def max_share_error(self) -> float:
        return float(max(np.max(np.abs(r.share_errors)) for r in self.replications))

    def rows(self) -> list[dict]:
        out = []
        for r in self.replications:
            for p in r.parameters:
                out.append(
                    {
                        "seed": r.seed,
                        "parameter": p.name,
                        "truth": p.truth,
                        "estimate": p.estimate,
                        "std_err": p.se,
                        "bias": p.bias,
                        "covered_95": int(p.covered),
                        "within_3se": int(p.within_3se),
                    }
                )
        return out


def recovery_experiment(
    config: SimConfig,
    options: FitOptions = FitOptions(),
    replications: int = 1,
    fit_spec: ModelSpec | None = None,
) -> RecoveryReport:
    """Simulate, refit the same spec and compare against the truth.

    Replication k uses simulation seed ``config.seed + k`` and fit seed
    ``options.seed + k``.
    """
    from dataclasses import replace

    from .wtp import segment_shares

    spec = fit_spec or config.spec
    report = RecoveryReport()
    for k in range(replications):
        cfg = replace(config, seed=config.seed + k)
        sim = simulate_population(cfg)
        opts = replace(options, seed=options.seed + k)
        res = fit(sim.dataset, spec, opts)
        est = res.named()
        mapping = match_classes(spec, cfg.params, est)
        # relabel estimates so that names refer to the matched true class
        index = ParameterIndex.from_spec(spec)
        se = dict(zip(res.names, res.se if res.se is not None else np.full(res.k, np.nan)))
        params = []
        for name in index.names:
            cls, rest = name.split(".", 1)
            src = f"{mapping[cls]}.{rest}"
            if rest.startswith("membership.") and mapping[cls] != cls:
                continue  # membership contrasts change meaning under relabeling
            params.append(ParameterRecovery(name, float(cfg.params[name]), est[src], se[src]))
        fitted = segment_shares(res, sim.dataset)
        order = [spec.class_names.index(mapping[c]) for c in spec.class_names]
        report.replications.append(
            ReplicationReport(
                seed=cfg.seed,
                fit=res,
                class_names=spec.class_names,
                true_shares=sim.class_frequencies(spec.class_names),
                fitted_shares=fitted.shares[order],
                parameters=params,
                mapping=mapping,
            )
        )
    return report


# ---------------------------------------------------------------------------
# Nay-sayer exclusion bias
# ---------------------------------------------------------------------------


def _fully_pinned(c: ClassSpec, categories: Sequence[str]) -> bool:
    return not c.estimated_categories(categories)


def _drop_classes(spec: ModelSpec, keep) -> ModelSpec:
    classes = [c for c in spec.classes if keep(c)]
    if spec.base_class not in {c.name for c in classes}:
        raise ValueError("the base class cannot be dropped")
    return spec.replace_classes(classes)


def constant_membership(spec: ModelSpec, shares: Mapping[str, float]) -> tuple[ModelSpec, dict[str, float]]:
    """Spec and nominal parameters whose priors equal ``shares`` for everyone.

    Membership reduces to one constant per non-base class, log(share_s /
    share_base); utility terms and their nominal values are kept.
    """
    base = spec.base_class
    if set(shares) != set(spec.class_names) or min(shares.values()) <= 0:
        raise ValueError("need a positive share for every class")
    classes = []
    for c in spec.classes:
        if c.name == base:
            classes.append(ClassSpec(c.name, c.kind, c.terms, c.fixity, (), (), True))
        else:
            theta = float(np.log(shares[c.name] / shares[base]))
            classes.append(ClassSpec(c.name, c.kind, c.terms, c.fixity, ("constant",), (theta,), False))
    new = spec.replace_classes(classes)
    return new, new.nominal_parameters()


def all_no_respondents(dataset: Dataset) -> list[str]:
    arr = dataset.arrays
    yes = np.bincount(arr.respondent_index, weights=arr.votes, minlength=dataset.n_respondents)
    return [r.respondent_id for r, y in zip(dataset.respondents, yes) if y == 0]


@dataclass
class BiasVariant:
    name: str
    fit: FitResult | None
    n_respondents: int
    household_wtp: dict[str, float]


@dataclass
class BiasReport:
    seed: int
    truth: BiasVariant
    variants: list[BiasVariant]

    def relative_error(self, variant: str, category: str) -> float:
        v = next(x for x in self.variants if x.name == variant)
        t = self.truth.household_wtp[category]
        return (v.household_wtp[category] - t) / t

    def rows(self) -> list[dict]:
        out = []
        for v in [self.truth] + self.variants:
            for cat, w in v.household_wtp.items():
                out.append(
                    {
                        "seed": self.seed,
                        "variant": v.name,
                        "respondents": v.n_respondents,
                        "category": cat,
                        "household_wtp": w,
                        "relative_error": 0.0 if v is self.truth else self.relative_error(v.name, cat),
                    }
                )
        return out


def naysayer_bias_demo(
    config: SimConfig,
    options: FitOptions = FitOptions(),
    mode: str = "sample",
    upper_bound: float | None = None,
) -> BiasReport:
    """Compare household WTP from three estimation strategies with the truth.

    ``full``: the true spec on all data. ``drop_naysayers``: respondents who
    voted no on every task are deleted and pinned-no classes omitted.
    ``no_degenerate``: all data, classes pinned in every category omitted.
    """
    from .wtp import FittedModel, SegmentShares, household_average_wtp, segment_wtp, wtp_table

    spec = config.spec
    sim = simulate_population(config)
    data = sim.dataset
    cats = data.categories

    # truth: true parameters, members identified by their true labels
    labels = np.array([sim.true_class[r.respondent_id] for r in data.respondents])
    truth_model = FittedModel(spec, dict(config.params))
    shares = SegmentShares(spec.class_names, sim.class_frequencies(spec.class_names))
    truth_wtp = {}
    for cat in cats:
        seg = {
            c: segment_wtp(c, cat, data, truth_model, mode, (labels == c).astype(float), upper_bound).value
            for c in spec.class_names
        }
        truth_wtp[cat] = household_average_wtp(shares, seg)
    truth = BiasVariant("truth", None, data.n_respondents, truth_wtp)

    def run(name, dataset, vspec):
        res = fit(dataset, vspec, options)
        table = wtp_table(res, dataset, mode=mode, upper_bound=upper_bound)
        return BiasVariant(name, res, dataset.n_respondents, {c: table.household_average(c) for c in cats})

    dropped = set(all_no_respondents(data))
    kept = [r.respondent_id for r in data.respondents if r.respondent_id not in dropped]
    variants = [
        run("full", data, spec),
        run("drop_naysayers", data.subset(kept), _drop_classes(spec, lambda c: c.kind != "pinned_no")),
        run("no_degenerate", data, _drop_classes(spec, lambda c: not _fully_pinned(c, cats))),
    ]
    return BiasReport(config.seed, truth, variants)
