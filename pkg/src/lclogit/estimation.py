"""Maximum-likelihood estimation, inference and class-count search."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, stats
from scipy.special import logsumexp

from .choice_data import Dataset
from .likelihood import ImpossibleResponseError, LikelihoodContext, _log_sigmoid
from .model_spec import CONSTANT, ClassSpec, ModelSpec, ParameterIndex, SpecError, validate_spec

log = logging.getLogger(__name__)

OPTIMIZERS = ("bfgs", "em-bfgs")


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 2000
    grad_tol: float = 1e-4  # sup-norm of the ln L gradient
    loglik_tol: float = 1e-9  # relative ln L change (EM stage)
    multistarts: int = 20
    seed: int = 0
    optimizer: str = "bfgs"
    em_iterations: int = 30
    membership_sd: float = 0.5
    utility_sd: float = 1.0
    newton_polish: bool = True
    threads: int = 1
    compute_se: bool = True

    def __post_init__(self):
        if self.grad_tol <= 0 or self.loglik_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.multistarts < 1:
            raise ValueError("multistarts must be at least 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass
class StartResult:
    index: int
    params: np.ndarray
    loglik: float
    converged: bool
    grad_norm: float
    iterations: int
    message: str
    trace: list[float] = field(default_factory=list)


@dataclass
class FitResult:
    spec: ModelSpec
    names: tuple[str, ...]
    estimates: np.ndarray
    loglik: float
    converged: bool
    grad_norm: float
    start_logliks: list[float]
    n_respondents: int
    n_observations: int
    seed: int
    message: str = ""
    best_start: int = 0
    iterations: int = 0
    trace: list[float] = field(default_factory=list)
    se: np.ndarray | None = None
    hessian: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.estimates)

    @property
    def aic(self) -> float:
        return information_criteria(self.loglik, self.k, self.n_observations)[0]

    @property
    def bic(self) -> float:
        return information_criteria(self.loglik, self.k, self.n_observations)[1]

    @property
    def t(self) -> np.ndarray:
        se = self.se if self.se is not None else np.full(self.k, np.nan)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.estimates / se

    @property
    def p(self) -> np.ndarray:
        return 2.0 * stats.norm.sf(np.abs(self.t))

    def named(self) -> dict[str, float]:
        return dict(zip(self.names, self.estimates.tolist()))

    def table(self) -> list[dict]:
        """Rows of name / value / std err / t / p (NaN where undefined)."""
        se = self.se if self.se is not None else np.full(self.k, np.nan)
        return [
            {"parameter": n, "value": v, "std_err": s, "t": t, "p": p}
            for n, v, s, t, p in zip(self.names, self.estimates, se, self.t, self.p)
        ]


def information_criteria(loglik: float, k: int, n_obs: int) -> tuple[float, float]:
    """(AIC, BIC) with BIC penalized by the number of observations."""
    return -2.0 * loglik + 2.0 * k, -2.0 * loglik + k * math.log(n_obs)


# ---------------------------------------------------------------------------
# Starting values and local optimization
# ---------------------------------------------------------------------------


def _membership_mask(index: ParameterIndex) -> np.ndarray:
    mask = np.zeros(len(index), dtype=bool)
    for sl in index.membership.values():
        mask[sl] = True
    return mask


def random_start(index: ParameterIndex, seed: int, k: int, options: FitOptions) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
    mem = _membership_mask(index)
    return np.where(
        mem,
        rng.normal(0.0, options.membership_sd, len(index)),
        rng.normal(0.0, options.utility_sd, len(index)),
    )


def _check_feasible(ctx: LikelihoodContext) -> None:
    ok = np.zeros(ctx.n_respondents, dtype=bool)
    for blk in ctx.blocks:
        ok |= blk.feasible
    if not ok.all():
        raise ImpossibleResponseError(
            [ctx.dataset.respondents[i].respondent_id for i in np.flatnonzero(~ok)]
        )


def numerical_hessian(ctx: LikelihoodContext, params: np.ndarray) -> np.ndarray:
    """Central differences of the analytic gradient, symmetrized.

    Step per coordinate is max(1e-4 |theta|, 1e-5).
    """
    p = np.asarray(params, dtype=float)
    n = len(p)
    H = np.empty((n, n))
    for j in range(n):
        h = max(1e-4 * abs(p[j]), 1e-5)
        up, dn = p.copy(), p.copy()
        up[j] += h
        dn[j] -= h
        gu = ctx.evaluate(up, gradient=True).gradient
        gd = ctx.evaluate(dn, gradient=True).gradient
        H[:, j] = (gu - gd) / (2.0 * h)
    return 0.5 * (H + H.T)


def _newton_polish(ctx, p, ll, options, trace, steps: int = 8):
    for _ in range(steps):
        res = ctx.evaluate(p, gradient=True)
        g = res.gradient
        if np.max(np.abs(g)) < options.grad_tol:
            break
        H = numerical_hessian(ctx, p)
        w, V = np.linalg.eigh(-H)
        if w.min() <= 1e-10 * max(w.max(), 1.0):
            break
        step = V @ ((V.T @ g) / w)
        t = 1.0
        improved = False
        while t > 1e-6:
            cand = p + t * step
            try:
                cll = ctx.evaluate(cand).total
            except (FloatingPointError, ValueError):
                cll = -np.inf
            if np.isfinite(cll) and cll >= ll:
                p, ll = cand, cll
                trace.append(ll)
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    return p, ll


def _em_stage(ctx: LikelihoodContext, p: np.ndarray, options: FitOptions, trace: list[float]):
    """EM iterations: posterior weights, then a joint M-step on all blocks.

    Pinned classes contribute exact 0/1 indicators, so their E-step
    posteriors are exact and their M-step only touches membership.
    """
    mu = ctx.spec.scale
    ll = ctx.evaluate(p).total
    trace.append(ll)
    for _ in range(options.em_iterations):
        w = ctx.posterior(p)

        def q(x):
            U = ctx.membership_scores(x)
            logH = U - logsumexp(U, axis=1, keepdims=True)
            H = np.exp(logH)
            val = float(np.sum(w * logH))
            g = np.zeros_like(x)
            for s, blk in enumerate(ctx.blocks):
                if blk.X.shape[1]:
                    v = mu * ctx.utilities(x, s)
                    rw = w[ctx.ridx, s]
                    val += float(np.sum(np.where(blk.estimated, rw * _log_sigmoid(ctx.sign * v), 0.0)))
                    resid = np.where(blk.estimated, ctx.votes - 1.0 / (1.0 + np.exp(-v)), 0.0)
                    g[blk.utility] = mu * (blk.X.T @ (rw * resid))
                if blk.name != ctx.base:
                    Z = ctx.membership_design[blk.name]
                    if Z.shape[1]:
                        g[blk.membership] = Z.T @ (w[:, s] - H[:, s])
            return -val, -g

        r = optimize.minimize(q, p, jac=True, method="BFGS", options={"maxiter": 50})
        new_ll = ctx.evaluate(r.x).total
        if new_ll < ll:
            break
        p = r.x
        done = abs(new_ll - ll) <= options.loglik_tol * max(1.0, abs(ll))
        ll = new_ll
        trace.append(ll)
        if done:
            break
    return p


def _run_start(ctx: LikelihoodContext, k: int, x0: np.ndarray, options: FitOptions) -> StartResult:
    trace: list[float] = []
    try:
        p = np.asarray(x0, dtype=float).copy()
        if options.optimizer == "em-bfgs":
            p = _em_stage(ctx, p, options, trace)

        def f(x):
            with np.errstate(over="ignore"):
                res = ctx.evaluate(x, gradient=True)
            return -res.total, -res.gradient

        def cb(xk):
            trace.append(ctx.evaluate(xk).total)

        r = optimize.minimize(
            f,
            p,
            jac=True,
            method="BFGS",
            callback=cb,
            options={"maxiter": options.max_iter, "gtol": options.grad_tol, "norm": np.inf},
        )
        p = r.x
        ll = -float(r.fun)
        if options.newton_polish:
            p, ll = _newton_polish(ctx, p, ll, options, trace)
        g = ctx.evaluate(p, gradient=True).gradient
        gn = float(np.max(np.abs(g))) if len(g) else 0.0
        return StartResult(k, p, ll, gn < options.grad_tol, gn, int(r.nit), str(r.message), trace)
    except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        return StartResult(k, np.asarray(x0, float), -np.inf, False, np.inf, 0, f"failed: {exc}", trace)


def fit(
    dataset: Dataset,
    spec: ModelSpec,
    options: FitOptions = FitOptions(),
    starts: Sequence[np.ndarray] | None = None,
    context: LikelihoodContext | None = None,
) -> FitResult:
    """Maximize the mixture log-likelihood from several starting points.

    ``starts`` are tried before the seeded random starts (which still number
    ``options.multistarts``). The best finite optimum wins; ties go to the
    lower start index.
    """
    rep = validate_spec(spec)
    rep.raise_for_errors()
    ctx = context or LikelihoodContext(dataset, spec, threads=1)
    if ctx.n_parameters == 0:
        raise SpecError("spec has zero free parameters")
    _check_feasible(ctx)
    x0s = [np.asarray(s, dtype=float) for s in (starts or [])]
    x0s += [random_start(ctx.index, options.seed, k, options) for k in range(options.multistarts)]

    def run(args):
        k, x0 = args
        return _run_start(ctx, k, x0, options)

    jobs = list(enumerate(x0s))
    if options.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(min(options.threads, len(jobs))) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    finite = [r for r in results if np.isfinite(r.loglik)]
    if not finite:
        msgs = "; ".join(sorted({r.message for r in results}))
        best = results[0]
        return FitResult(
            spec, ctx.index.names, best.params, -np.inf, False, np.inf,
            [r.loglik for r in results], dataset.n_respondents, dataset.n_observations,
            options.seed, message=f"all starts failed: {msgs}",
        )
    best = max(finite, key=lambda r: (r.loglik, -r.index))
    log.info("best start %d: lnL=%.6f converged=%s", best.index, best.loglik, best.converged)
    result = FitResult(
        spec=spec,
        names=ctx.index.names,
        estimates=best.params,
        loglik=best.loglik,
        converged=best.converged,
        grad_norm=best.grad_norm,
        start_logliks=[r.loglik for r in results],
        n_respondents=dataset.n_respondents,
        n_observations=dataset.n_observations,
        seed=options.seed,
        message=best.message,
        best_start=best.index,
        iterations=best.iterations,
        trace=best.trace,
    )
    if options.compute_se:
        standard_errors(result, ctx)
    return result


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def covariance_from_hessian(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Covariance (pseudo-inverse of -H) and a per-parameter 'defined' mask.

    A parameter is undefined when it loads on a non-positive or numerically
    null eigen-direction of the negative Hessian.
    """
    A = -0.5 * (H + H.T)
    w, V = np.linalg.eigh(A)
    scale = max(np.max(np.abs(w)), 1e-300)
    good = w > 1e-10 * scale
    cov = (V[:, good] / w[good]) @ V[:, good].T
    if good.all():
        defined = np.ones(len(w), dtype=bool)
    else:
        defined = np.max(np.abs(V[:, ~good]), axis=1) < 1e-6
    return cov, defined


def standard_errors(result: FitResult, ctx: LikelihoodContext) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Standard errors from the inverse negative numerical Hessian.

    Undefined entries are NaN. Also stores ``se`` and ``hessian`` on the result.
    """
    H = numerical_hessian(ctx, result.estimates)
    cov, defined = covariance_from_hessian(H)
    diag = np.diag(cov).copy()
    se = np.where(defined & (diag > 0), np.sqrt(np.abs(diag)), np.nan)
    result.se = se
    result.hessian = H
    return se, result.t, result.p


# ---------------------------------------------------------------------------
# Number of classes
# ---------------------------------------------------------------------------


def expand_template(
    template: ClassSpec, n_classes: int, fixed: Sequence[ClassSpec] = (), prefix: str = "trader"
) -> ModelSpec:
    """S copies of a trader template (first copy is the base) plus fixed classes."""
    classes = []
    for s in range(1, n_classes + 1):
        classes.append(
            ClassSpec(
                name=f"{prefix}_{s}",
                kind=template.kind,
                terms=template.terms,
                fixity=template.fixity,
                membership=() if s == 1 else template.membership,
                base=(s == 1),
            )
        )
    for c in fixed:
        classes.append(ClassSpec(c.name, c.kind, c.terms, c.fixity, c.membership or template.membership, (), False))
    return ModelSpec(tuple(classes), name=f"{prefix}x{n_classes}")


def _nested_start(prev: FitResult, spec: ModelSpec) -> np.ndarray | None:
    """Embed an S-class optimum in the (S+1)-class layout at equal ln L.

    The new class copies the base class's utilities; every other non-base
    class gets log 2 added to its membership constant, which splits the base
    share in two without changing any respondent's mixture.
    """
    old = prev.named()
    new_index = ParameterIndex.from_spec(spec)
    base = spec.base_class
    new_cls = [c for c in spec.class_names if c not in prev.spec.class_names]
    if len(new_cls) != 1:
        return None
    added = spec.get(new_cls[0])
    if CONSTANT not in added.membership:
        return None
    x = np.zeros(len(new_index))
    for j, n in enumerate(new_index.names):
        cls, rest = n.split(".", 1)
        if n in old:
            x[j] = old[n]
            if rest == f"membership.{CONSTANT}":
                x[j] += math.log(2.0)
        elif cls == added.name and not rest.startswith("membership."):
            x[j] = old.get(f"{base}.{rest}", 0.0)
    return x


@dataclass
class ClassCountRow:
    n_classes: int
    fit: FitResult | None
    error: str = ""
    aic_best: bool = False
    bic_best: bool = False


def class_count_search(
    dataset: Dataset,
    template: ClassSpec,
    s_range: Sequence[int],
    options: FitOptions = FitOptions(),
    fixed: Sequence[ClassSpec] = (),
) -> list[ClassCountRow]:
    """Fit the template with each class count; flag AIC- and BIC-best rows.

    Each larger model also starts from the previous optimum embedded at equal
    likelihood, so ln L cannot fall as S grows (up to optimizer tolerance).
    """
    s_values = sorted(set(int(s) for s in s_range))
    if not s_values:
        raise ValueError("class-count range is empty")
    rows: list[ClassCountRow] = []
    prev: FitResult | None = None
    for s in s_values:
        spec = expand_template(template, s, fixed)
        try:
            starts = []
            if prev is not None and len(prev.spec.classes) == len(spec.classes) - 1:
                x = _nested_start(prev, spec)
                if x is not None:
                    starts.append(x)
            res = fit(dataset, spec, options, starts=starts)
            rows.append(ClassCountRow(s, res))
            prev = res
        except (EstimationError, SpecError, ImpossibleResponseError) as exc:
            rows.append(ClassCountRow(s, None, str(exc)))
            prev = None
    ok = [r for r in rows if r.fit is not None and np.isfinite(r.fit.loglik)]
    if ok:
        min(ok, key=lambda r: (r.fit.aic, r.n_classes)).aic_best = True
        min(ok, key=lambda r: (r.fit.bic, r.n_classes)).bic_best = True
    return rows
