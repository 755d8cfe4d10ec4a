import math

import numpy as np
import pytest

from lclogit.estimation import (
    FitOptions,
    class_count_search,
    covariance_from_hessian,
    expand_template,
    fit,
    information_criteria,
    numerical_hessian,
    random_start,
)
from lclogit.likelihood import LikelihoodContext
from lclogit.model_spec import ClassSpec, ModelSpec, SpecError, UtilityTerm
from lclogit.simulate import SimConfig, simulate_population

CATS = ("Historical", "Religious", "Gardens")
TRADER = (UtilityTerm("constant"), UtilityTerm("levy_rial", "raw"), UtilityTerm("distance_km", "linear"))


def _simulate(spec, params, n, design, seed=0):
    return simulate_population(SimConfig(spec, params, n, design, (), seed=seed)).dataset


def test_constant_only_fit_is_sample_logit(default_design):
    spec = ModelSpec((ClassSpec("t", "trader", (UtilityTerm("constant", value=0.4),), base=True),))
    data = _simulate(spec, spec.nominal_parameters(), 300, default_design, seed=4)
    res = fit(data, spec, FitOptions(multistarts=2))
    k = int(data.arrays.votes.sum())
    m = data.n_observations
    p = k / m
    assert res.converged
    assert res.estimates[0] == pytest.approx(math.log(p / (1 - p)), abs=1e-6)
    # inverse information of a Bernoulli logit
    assert res.se[0] == pytest.approx(1 / math.sqrt(m * p * (1 - p)), rel=1e-4)
    assert res.loglik == pytest.approx(k * math.log(p) + (m - k) * math.log(1 - p), abs=1e-8)
    aic, bic = information_criteria(res.loglik, 1, m)
    assert (res.aic, res.bic) == (aic, bic)
    assert bic == pytest.approx(-2 * res.loglik + math.log(m))


def test_fit_is_deterministic_and_recovers_mixture(default_design):
    spec = ModelSpec(
        (
            ClassSpec("t", "trader", TRADER, base=True),
            ClassSpec("n", "pinned_no", membership=("constant",)),
        )
    )
    truth = {"t.all.constant": 1.0, "t.all.levy_rial.raw": -1.2, "t.all.distance_km.linear": -0.5,
             "n.membership.constant": -1.0}
    data = _simulate(spec, truth, 1500, default_design, seed=9)
    opts = FitOptions(multistarts=3, seed=2)
    a = fit(data, spec, opts)
    b = fit(data, spec, opts)
    assert np.array_equal(a.estimates, b.estimates) and a.loglik == b.loglik
    assert a.converged and a.grad_norm <= opts.grad_tol
    est = a.named()
    for k, v in truth.items():
        j = a.names.index(k)
        assert abs(est[k] - v) < 4 * a.se[j]
    # the two-stage optimizer reaches the same optimum
    c = fit(data, spec, FitOptions(multistarts=3, seed=2, optimizer="em-bfgs"))
    assert c.loglik == pytest.approx(a.loglik, abs=1e-6)
    np.testing.assert_allclose(c.estimates, a.estimates, atol=1e-3)
    table = a.table()
    assert [r["parameter"] for r in table] == list(a.names)
    assert all(0 <= r["p"] <= 1 for r in table)


def test_explicit_start_is_used(default_design):
    spec = ModelSpec((ClassSpec("t", "trader", TRADER, base=True),))
    data = _simulate(spec, {"t.all.constant": 0.5, "t.all.levy_rial.raw": -1.0, "t.all.distance_km.linear": 0.0},
                     200, default_design)
    res = fit(data, spec, FitOptions(multistarts=1), starts=[np.zeros(3)])
    assert len(res.start_logliks) == 2
    assert res.converged


def test_non_identified_terms_get_nan_se(default_design):
    # a global constant next to a constant for every category: one flat direction
    terms = (UtilityTerm("constant"), UtilityTerm("levy_rial", "raw")) + tuple(
        UtilityTerm("constant", category=c) for c in CATS
    )
    spec = ModelSpec((ClassSpec("t", "trader", terms, base=True),))
    data = _simulate(spec, spec.nominal_parameters(), 400, default_design, seed=1)
    res = fit(data, spec, FitOptions(multistarts=1))
    se = dict(zip(res.names, res.se))
    assert np.isnan(se["t.all.constant"])
    assert all(np.isnan(se[f"t.{c}.constant"]) for c in CATS)
    assert np.isfinite(se["t.all.levy_rial.raw"])


def test_covariance_from_hessian():
    H = -np.diag([4.0, 1.0])
    cov, ok = covariance_from_hessian(H)
    np.testing.assert_allclose(cov, np.diag([0.25, 1.0]))
    assert ok.all()
    H = -np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 2.0]])
    cov, ok = covariance_from_hessian(H)
    assert ok.tolist() == [False, False, True]
    assert cov[2, 2] == pytest.approx(0.5)


def test_numerical_hessian_matches_closed_form(default_design):
    spec = ModelSpec((ClassSpec("t", "trader", (UtilityTerm("constant"), UtilityTerm("levy_rial", "raw")), base=True),))
    data = _simulate(spec, {"t.all.constant": 0.3, "t.all.levy_rial.raw": -0.8}, 100, default_design)
    ctx = LikelihoodContext(data, spec)
    p = np.array([0.2, -0.5])
    X = ctx.blocks[0].X
    q = 1 / (1 + np.exp(-(X @ p)))
    want = -(X * (q * (1 - q))[:, None]).T @ X
    np.testing.assert_allclose(numerical_hessian(ctx, p), want, rtol=1e-6)


def test_options_and_starts():
    with pytest.raises(ValueError):
        FitOptions(multistarts=0)
    with pytest.raises(ValueError):
        FitOptions(optimizer="newton")
    with pytest.raises(ValueError):
        FitOptions(grad_tol=0)
    spec = ModelSpec((ClassSpec("t", "trader", TRADER, base=True), ClassSpec("n", "pinned_no", membership=("constant",))))
    o = FitOptions()
    a = random_start(spec.index, 3, 1, o)
    assert np.array_equal(a, random_start(spec.index, 3, 1, o))
    assert not np.array_equal(a, random_start(spec.index, 3, 2, o))


def test_fit_rejects_invalid_spec(default_design):
    good = ModelSpec((ClassSpec("t", "trader", TRADER, base=True),))
    data = _simulate(good, good.nominal_parameters(), 10, default_design)
    bad = ModelSpec((ClassSpec("t", "trader", TRADER),))
    with pytest.raises(SpecError):
        fit(data, bad)


def test_class_count_search(default_design):
    template = ClassSpec("t", "trader", TRADER, membership=("constant",))
    truth_spec = expand_template(template, 2)
    truth = {n: 0.0 for n in truth_spec.index.names}
    truth.update({"trader_1.all.constant": 2.0, "trader_1.all.levy_rial.raw": -0.5,
                  "trader_2.all.constant": -1.5, "trader_2.all.levy_rial.raw": -2.0})
    data = _simulate(truth_spec, truth, 600, default_design, seed=5)
    rows = class_count_search(data, template, [3, 1, 2], FitOptions(multistarts=2, compute_se=False))
    assert [r.n_classes for r in rows] == [1, 2, 3]
    ll = [r.fit.loglik for r in rows]
    assert ll[0] < ll[1] <= ll[2] + 1e-6
    assert sum(r.aic_best for r in rows) == 1 and sum(r.bic_best for r in rows) == 1
    assert rows[1].bic_best
    with pytest.raises(ValueError):
        class_count_search(data, template, [])
