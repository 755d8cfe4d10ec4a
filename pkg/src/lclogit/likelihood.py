"""Mixture likelihood for latent-class binary logit with pinned classes.

Per class, the Yes-utility of each task row is a linear index ``X_s @ beta_s``
(the No/status-quo alternative is normalized to zero). Rows whose category is
pinned for the class contribute an exact 0/1 indicator; they never pass
through ``exp``. Class-membership priors are a softmax of ``Z_s @ theta_s``
with the base class fixed at zero. Everything is accumulated per respondent in
log space, and the sample total is an exactly-rounded sum (``math.fsum``) so it
does not depend on how respondents are partitioned across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .choice_data import Dataset
from .model_spec import CONSTANT, ModelSpec, ParameterIndex, ParameterVector


class PinnedCategoryError(ValueError):
    """A logit probability was requested for a pinned category."""


class ImpossibleResponseError(ValueError):
    """A respondent's votes have zero probability under every class."""

    def __init__(self, respondent_ids: Sequence[str]):
        self.respondent_ids = list(respondent_ids)
        shown = ", ".join(self.respondent_ids[:10])
        more = "" if len(self.respondent_ids) <= 10 else f" (+{len(self.respondent_ids) - 10} more)"
        super().__init__(
            f"votes of respondent(s) {shown}{more} are impossible under every class; "
            "the model needs a class that can produce them"
        )


def yes_probability(v, scale: float = 1.0):
    """P(yes) = exp(mu V) / (1 + exp(mu V)) for the binary referendum."""
    return expit(scale * np.asarray(v, dtype=float))


def binary_choice_prob(v_yes, v_no, scale: float = 1.0):
    """Logit probability of Yes with both alternatives' utilities given."""
    return expit(scale * (np.asarray(v_yes, dtype=float) - np.asarray(v_no, dtype=float)))


def degenerate_class_prob(fixity: str, vote: int) -> float:
    """Exact indicator probability for a pinned class or category."""
    if fixity == "pinned_yes":
        return 1.0 if vote == 1 else 0.0
    if fixity == "pinned_no":
        return 1.0 if vote == 0 else 0.0
    raise ValueError(f"fixity {fixity!r} is not pinned")


def softmax_priors(scores) -> np.ndarray:
    """Class priors from membership scores (last axis = classes)."""
    scores = np.asarray(scores, dtype=float)
    return np.exp(scores - logsumexp(scores, axis=-1, keepdims=True))


def _log_sigmoid(x):
    # log(expit(x)) without overflow
    return -np.logaddexp(0.0, -x)


@dataclass(frozen=True)
class ClassBlock:
    name: str
    X: np.ndarray  # (M, K) utility columns, zero on pinned rows
    estimated: np.ndarray  # (M,) bool, row category estimated for this class
    feasible: np.ndarray  # (N,) bool, respondent consistent with every pinned row
    fixity: np.ndarray  # (M,) object: fixity of each row's category
    utility: slice
    membership: slice


@dataclass(frozen=True)
class EvalResult:
    total: float
    per_respondent: np.ndarray
    gradient: np.ndarray | None = None


class LikelihoodContext:
    """Numerical arrays for one (dataset, spec) pair.

    Construction resolves every utility term to a design column, so
    evaluation is a handful of vector operations.
    """

    def __init__(self, dataset: Dataset, spec: ModelSpec, threads: int = 1):
        self.dataset = dataset
        self.spec = spec
        self.index: ParameterIndex = ParameterIndex.from_spec(spec)
        self.threads = max(1, int(threads))
        arr = dataset.arrays
        self.votes = arr.votes.astype(float)
        self.sign = 2.0 * self.votes - 1.0
        self.ridx = arr.respondent_index
        self.offsets = arr.offsets
        self.n_respondents = dataset.n_respondents
        self.n_rows = dataset.n_observations
        cats = arr.task_values["category"]
        attrs = {a.name: a for a in dataset.attributes}
        cov_pos = {c: j for j, c in enumerate(dataset.covariate_names)}

        blocks = []
        mem_design = {}
        base = spec.base_class
        for c in spec.classes:
            fix = np.array([c.fixity_for(k) for k in cats], dtype=object)
            estimated = fix == "estimated"
            cols = []
            for t in c.terms:
                if t.category is None:
                    mask = estimated
                else:
                    mask = estimated & (cats == t.category)
                if t.name == CONSTANT:
                    col = np.ones(self.n_rows)
                elif t.name in attrs:
                    col = attrs[t.name].code(arr.task_values[t.name], t.transform)
                elif t.name in cov_pos:
                    col = arr.covariates[self.ridx, cov_pos[t.name]]
                else:
                    raise KeyError(f"class {c.name}: unknown term {t.name!r}")
                cols.append(np.where(mask, col, 0.0))
            X = np.column_stack(cols) if cols else np.zeros((self.n_rows, 0))
            ok_row = np.ones(self.n_rows, dtype=bool)
            ok_row[fix == "pinned_yes"] = self.votes[fix == "pinned_yes"] == 1
            ok_row[fix == "pinned_no"] = self.votes[fix == "pinned_no"] == 0
            bad = np.bincount(self.ridx, weights=~ok_row, minlength=self.n_respondents)
            feasible = bad == 0
            for a in (X, estimated, feasible, fix):
                a.setflags(write=False)
            blocks.append(
                ClassBlock(c.name, X, estimated, feasible, fix, self.index.utility[c.name], self.index.membership[c.name])
            )
            if c.name != base:
                zc = []
                for m in c.membership:
                    if m == CONSTANT:
                        zc.append(np.ones(self.n_respondents))
                    else:
                        zc.append(arr.covariates[:, cov_pos[m]])
                Z = np.column_stack(zc) if zc else np.zeros((self.n_respondents, 0))
                Z.setflags(write=False)
                mem_design[c.name] = Z
        self.blocks: tuple[ClassBlock, ...] = tuple(blocks)
        self.membership_design: dict[str, np.ndarray] = mem_design
        self.base = base

    @property
    def n_parameters(self) -> int:
        return len(self.index)

    @property
    def n_classes(self) -> int:
        return len(self.blocks)

    def _params(self, params) -> np.ndarray:
        if isinstance(params, ParameterVector):
            params = params.values
        p = np.asarray(params, dtype=float)
        if p.shape != (self.n_parameters,):
            raise ValueError(f"expected {self.n_parameters} parameters, got {p.shape}")
        return p

    # -- building blocks -------------------------------------------------

    def utilities(self, params, cls: int, rows: slice = slice(None)) -> np.ndarray:
        """Yes-utility of class ``cls`` on ``rows`` (zero on pinned rows)."""
        p = self._params(params)
        blk = self.blocks[cls]
        beta = p[blk.utility]
        X = blk.X[rows]
        v = np.zeros(X.shape[0])
        # column-wise accumulation keeps each row's value independent of
        # how rows are chunked
        for k in range(X.shape[1]):
            v += X[:, k] * beta[k]
        return v

    def membership_scores(self, params, resp: slice = slice(None)) -> np.ndarray:
        p = self._params(params)
        n = len(range(self.n_respondents)[resp])
        U = np.zeros((n, self.n_classes))
        for s, blk in enumerate(self.blocks):
            if blk.name == self.base:
                continue
            Z = self.membership_design[blk.name][resp]
            theta = p[blk.membership]
            for k in range(Z.shape[1]):
                U[:, s] += Z[:, k] * theta[k]
        return U

    def priors(self, params, resp: slice = slice(None)) -> np.ndarray:
        return softmax_priors(self.membership_scores(params, resp))

    def _class_loglik(self, p, lo: int, hi: int):
        """log P_{i|s} for respondents lo..hi, plus per-row P(yes)."""
        r0, r1 = self.offsets[lo], self.offsets[hi]
        rows = slice(r0, r1)
        local = self.ridx[rows] - lo
        n = hi - lo
        logp = np.empty((n, self.n_classes))
        pyes = []
        for s, blk in enumerate(self.blocks):
            est = blk.estimated[rows]
            v = self.scale_utilities(p, s, rows)
            ll = np.where(est, _log_sigmoid(self.sign[rows] * v), 0.0)
            logp[:, s] = np.bincount(local, weights=ll, minlength=n)
            logp[~blk.feasible[lo:hi], s] = -np.inf
            pyes.append(expit(v))
        return logp, pyes

    def scale_utilities(self, p, s, rows):
        return self.spec.scale * self.utilities(p, s, rows)

    def _evaluate_range(self, p, lo: int, hi: int, want_grad: bool):
        logp, pyes = self._class_loglik(p, lo, hi)
        resp = slice(lo, hi)
        U = self.membership_scores(p, resp)
        logH = U - logsumexp(U, axis=1, keepdims=True)
        joint = logH + logp
        li = logsumexp(joint, axis=1)
        bad = ~np.isfinite(li)
        if bad.any():
            ids = [self.dataset.respondents[lo + i].respondent_id for i in np.flatnonzero(bad)]
            raise ImpossibleResponseError(ids)
        if not want_grad:
            return li, None
        post = np.exp(joint - li[:, None])
        H = np.exp(logH)
        # per-respondent score rows; summing the concatenated matrix once
        # keeps the gradient independent of the chunking
        G = np.zeros((hi - lo, self.n_parameters))
        rows = slice(self.offsets[lo], self.offsets[hi])
        local = self.ridx[rows] - lo
        mu = self.spec.scale
        for s, blk in enumerate(self.blocks):
            if blk.X.shape[1]:
                resid = np.where(blk.estimated[rows], self.votes[rows] - pyes[s], 0.0)
                w = mu * post[local, s] * resid
                X = blk.X[rows]
                for k, j in enumerate(range(*blk.utility.indices(self.n_parameters))):
                    G[:, j] = np.bincount(local, weights=X[:, k] * w, minlength=hi - lo)
            if blk.name != self.base:
                Z = self.membership_design[blk.name][resp]
                if Z.shape[1]:
                    G[:, blk.membership] = Z * (post[:, s] - H[:, s])[:, None]
        return li, G

    def _chunks(self, threads: int):
        n = self.n_respondents
        k = max(1, min(threads, n))
        edges = np.linspace(0, n, k + 1).round().astype(int)
        return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]

    # -- public evaluation -----------------------------------------------

    def evaluate(self, params, gradient: bool = False, threads: int | None = None) -> EvalResult:
        p = self._params(params)
        chunks = self._chunks(threads or self.threads)
        if len(chunks) == 1:
            parts = [self._evaluate_range(p, *chunks[0], gradient)]
        else:
            with ThreadPoolExecutor(len(chunks)) as ex:
                parts = list(ex.map(lambda c: self._evaluate_range(p, c[0], c[1], gradient), chunks))
        per = np.concatenate([li for li, _ in parts])
        total = math.fsum(per.tolist())
        g = None
        if gradient:
            g = np.concatenate([G for _, G in parts]).sum(axis=0)
        return EvalResult(total, per, g)

    def scores(self, params) -> np.ndarray:
        """(N, P) per-respondent gradient of log P_i."""
        p = self._params(params)
        return np.concatenate([G for _, G in (self._evaluate_range(p, a, b, True) for a, b in self._chunks(1))])

    def class_loglik(self, params) -> np.ndarray:
        """(N, S) matrix of log P_{i|s}; -inf where a pin is contradicted."""
        return self._class_loglik(self._params(params), 0, self.n_respondents)[0]

    def posterior(self, params) -> np.ndarray:
        p = self._params(params)
        logp = self.class_loglik(p)
        U = self.membership_scores(p)
        joint = U - logsumexp(U, axis=1, keepdims=True) + logp
        li = logsumexp(joint, axis=1)
        bad = ~np.isfinite(li)
        if bad.any():
            raise ImpossibleResponseError(
                [self.dataset.respondents[i].respondent_id for i in np.flatnonzero(bad)]
            )
        return np.exp(joint - li[:, None])

    def class_position(self, name: str) -> int:
        for s, blk in enumerate(self.blocks):
            if blk.name == name:
                return s
        raise KeyError(name)


# ---------------------------------------------------------------------------
# Operation-level functions
# ---------------------------------------------------------------------------


def class_conditional_choice_prob(ctx: LikelihoodContext, row: int, cls: str, params) -> float:
    """Logit probability of the observed vote on one task row for one class."""
    s = ctx.class_position(cls)
    blk = ctx.blocks[s]
    if not blk.estimated[row]:
        raise PinnedCategoryError(
            f"class {cls} pins category {ctx.dataset.observations[row].task.category}; "
            "use degenerate_class_prob"
        )
    v = ctx.utilities(params, s, slice(row, row + 1))[0]
    py = float(yes_probability(v, ctx.spec.scale))
    return py if ctx.votes[row] == 1 else 1.0 - py


def task_prob(ctx: LikelihoodContext, row: int, cls: str, params) -> float:
    s = ctx.class_position(cls)
    fx = ctx.blocks[s].fixity[row]
    if fx == "estimated":
        return class_conditional_choice_prob(ctx, row, cls, params)
    return degenerate_class_prob(fx, int(ctx.votes[row]))


def sequence_prob(ctx: LikelihoodContext, respondent: int, cls: str, params) -> float:
    """Joint probability of one respondent's vote sequence given the class."""
    lo, hi = ctx.offsets[respondent], ctx.offsets[respondent + 1]
    out = 1.0
    for r in range(lo, hi):
        out *= task_prob(ctx, r, cls, params)
    return out


def membership_priors(ctx: LikelihoodContext, respondent: int, params) -> np.ndarray:
    return ctx.priors(params, slice(respondent, respondent + 1))[0]


def individual_likelihood(ctx: LikelihoodContext, respondent: int, params) -> float:
    """P_i = sum_s H_is P_{i|s}; raises if the votes are impossible."""
    H = membership_priors(ctx, respondent, params)
    total = sum(h * sequence_prob(ctx, respondent, blk.name, params) for h, blk in zip(H, ctx.blocks))
    if total == 0.0 and not any(
        ctx.blocks[s].feasible[respondent] for s in range(ctx.n_classes)
    ):
        raise ImpossibleResponseError([ctx.dataset.respondents[respondent].respondent_id])
    return total


def total_log_likelihood(ctx: LikelihoodContext, params, threads: int | None = None) -> EvalResult:
    return ctx.evaluate(params, gradient=False, threads=threads)


def gradient(ctx: LikelihoodContext, params, threads: int | None = None) -> np.ndarray:
    return ctx.evaluate(params, gradient=True, threads=threads).gradient


def posterior_membership(ctx: LikelihoodContext, params, respondent: int | None = None) -> np.ndarray:
    post = ctx.posterior(params)
    return post if respondent is None else post[respondent]
