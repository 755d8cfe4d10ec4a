import numpy as np
import pytest

from lclogit.estimation import FitOptions
from lclogit.likelihood import LikelihoodContext
from lclogit.model_spec import ClassSpec, ModelSpec, SpecError, UtilityTerm, pack
from lclogit.simulate import (
    CovariateGenerator,
    SimConfig,
    all_no_respondents,
    constant_membership,
    load_covariate_generators,
    match_classes,
    read_truth_csv,
    recovery_experiment,
    simulate_population,
    write_truth_csv,
)
from conftest import SPECS

TRADER = (UtilityTerm("constant"), UtilityTerm("levy_rial", "raw"))


def _three_class():
    return ModelSpec(
        (
            ClassSpec("t", "trader", TRADER, base=True),
            ClassSpec("y", "pinned_yes", membership=("constant",)),
            ClassSpec("n", "pinned_no", membership=("constant",)),
        )
    )


def test_equal_priors_give_equal_frequencies(default_design):
    spec = _three_class()
    sim = simulate_population(SimConfig(spec, spec.nominal_parameters(), 10000, default_design, (), seed=1))
    freq = sim.class_frequencies(spec.class_names)
    assert np.all(np.abs(freq - 1 / 3) <= 0.015)
    # pins hold exactly, the zero-utility trader votes yes half the time
    arr = sim.dataset.arrays
    labels = np.array([sim.true_class[r.respondent_id] for r in sim.dataset.respondents])[arr.respondent_index]
    assert arr.votes[labels == "y"].min() == 1
    assert arr.votes[labels == "n"].max() == 0
    assert abs(arr.votes[labels == "t"].mean() - 0.5) <= 0.01


def test_tasks_rotate_through_blocks(default_design):
    spec = ModelSpec((ClassSpec("t", "trader", TRADER, base=True),))
    sim = simulate_population(SimConfig(spec, spec.nominal_parameters(), 16, default_design, (), seed=0))
    d = sim.dataset
    assert d.n_observations == 16 * 6
    blocks = [o.task.block_id for o in d.observations][::6]
    ids = sorted(default_design.blocks)
    assert blocks == ids + ids


def test_determinism_and_prefix_stability(default_design):
    spec = _three_class()
    gens = load_covariate_generators(SPECS / "shiraz_covariates.spec")
    params = spec.nominal_parameters()
    a = simulate_population(SimConfig(spec, params, 50, default_design, gens, seed=7))
    b = simulate_population(SimConfig(spec, params, 50, default_design, gens, seed=7))
    c = simulate_population(SimConfig(spec, params, 50, default_design, gens, seed=8))
    assert a == b
    assert a.dataset != c.dataset
    # respondent i's draws depend only on (seed, i)
    longer = simulate_population(SimConfig(spec, params, 60, default_design, gens, seed=7))
    assert [r.covariates for r in longer.dataset.respondents[:50]] == [r.covariates for r in a.dataset.respondents]


def test_truth_scores_better_than_perturbed(default_design):
    spec = ModelSpec(
        (ClassSpec("t", "trader", TRADER, base=True), ClassSpec("n", "pinned_no", membership=("constant",)))
    )
    truth = {"t.all.constant": 1.5, "t.all.levy_rial.raw": -1.0, "n.membership.constant": -1.0}
    sim = simulate_population(SimConfig(spec, truth, 3000, default_design, (), seed=3))
    ctx = LikelihoodContext(sim.dataset, spec)
    at_truth = ctx.evaluate(pack(spec, truth)).total
    rng = np.random.default_rng(0)
    for _ in range(5):
        bumped = {k: v + rng.normal(0, 0.3) for k, v in truth.items()}
        assert ctx.evaluate(pack(spec, bumped)).total < at_truth


def test_covariate_generators(default_design):
    rng = np.random.default_rng(0)
    g = CovariateGenerator("onehot", ("a", "b", "c"), weights=(0.2, 0.3, 0.5))
    draws = [g.draw(rng) for _ in range(4000)]
    assert all(sum(d.values()) == 1.0 for d in draws)
    assert np.mean([d["c"] for d in draws]) == pytest.approx(0.5, abs=0.03)
    u = CovariateGenerator("uniform", ("u",), low=1, high=5)
    assert all(1 <= u.draw(rng)["u"] <= 5 for _ in range(100))
    assert CovariateGenerator("discrete", ("k",), values=(0, 1, 2), weights=(1, 1, 1)).covariate_specs[0].kind == "count"
    with pytest.raises(ValueError):
        CovariateGenerator("bernoulli", ("x",), p=1.5)
    with pytest.raises(ValueError):
        CovariateGenerator("discrete", ("x",), values=(1, 2), weights=(1,))
    with pytest.raises(ValueError):
        CovariateGenerator("poisson", ("x",))


def test_marginals_of_shipped_generators():
    gens = load_covariate_generators(SPECS / "shiraz_covariates.spec")
    rng = np.random.default_rng(1)
    draws = [{k: v for g in gens for k, v in g.draw(rng).items()} for _ in range(5000)]
    assert np.mean([d["female"] for d in draws]) == pytest.approx(0.407, abs=0.02)
    assert np.mean([d["metro"] for d in draws]) == pytest.approx(0.781, abs=0.02)


def test_config_validation(default_design):
    spec = ModelSpec((ClassSpec("t", "trader", TRADER + (UtilityTerm("female"),), base=True),))
    params = spec.nominal_parameters()
    with pytest.raises(ValueError, match="at least 1"):
        SimConfig(spec, params, 0, default_design)
    with pytest.raises(ValueError):
        SimConfig(spec, params, 10, default_design)  # no generator for female
    with pytest.raises(SpecError, match="missing"):
        SimConfig(_three_class(), {"t.all.constant": 0.0}, 10, default_design)


def test_truth_sidecar_round_trip(tmp_path, default_design):
    spec = _three_class()
    sim = simulate_population(SimConfig(spec, spec.nominal_parameters(), 30, default_design, (), seed=0))
    p = tmp_path / "truth.csv"
    write_truth_csv(sim, p)
    assert read_truth_csv(p) == dict(sim.true_class)
    assert p.read_text().splitlines()[0] == "respondent_id,true_class"
    nos = set(all_no_respondents(sim.dataset))
    assert {r for r, c in sim.true_class.items() if c == "n"} <= nos


def test_constant_membership_priors(default_design):
    spec = _three_class()
    shares = {"t": 0.5, "y": 0.2, "n": 0.3}
    cspec, params = constant_membership(spec, shares)
    sim = simulate_population(SimConfig(cspec, params, 20, default_design, (), seed=0))
    H = LikelihoodContext(sim.dataset, cspec).priors(pack(cspec, params).values)
    np.testing.assert_allclose(H, np.tile([0.5, 0.2, 0.3], (20, 1)), atol=1e-14)
    with pytest.raises(ValueError):
        constant_membership(spec, {"t": 1.0})


def test_match_classes_swaps_twin_traders():
    spec = ModelSpec(
        (
            ClassSpec("a", "trader", TRADER, base=True),
            ClassSpec("b", "trader", TRADER, membership=("constant",)),
            ClassSpec("n", "pinned_no", membership=("constant",)),
        )
    )
    truth = {"a.all.constant": 2.0, "a.all.levy_rial.raw": -1.0, "b.all.constant": -2.0, "b.all.levy_rial.raw": -3.0}
    est = {"a.all.constant": -1.9, "a.all.levy_rial.raw": -2.8, "b.all.constant": 2.1, "b.all.levy_rial.raw": -1.1}
    assert match_classes(spec, truth, est) == {"a": "b", "b": "a", "n": "n"}


def test_small_recovery_experiment(default_design):
    spec = ModelSpec(
        (ClassSpec("t", "trader", TRADER, base=True), ClassSpec("n", "pinned_no", membership=("constant",)))
    )
    truth = {"t.all.constant": 1.5, "t.all.levy_rial.raw": -1.0, "n.membership.constant": -1.0}
    rep = recovery_experiment(SimConfig(spec, truth, 800, default_design, (), seed=0), FitOptions(multistarts=2), 2)
    assert len(rep.replications) == 2
    assert [r.seed for r in rep.replications] == [0, 1]
    assert rep.max_share_error() < 0.05
    assert all(p.within_3se for r in rep.replications for p in r.parameters)
    assert {row["parameter"] for row in rep.rows()} >= set(truth)
