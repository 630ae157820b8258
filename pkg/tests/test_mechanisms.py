import numpy as np
import pandas as pd
import pytest

from lagrca.errors import FitError, InsufficientData, MissingColumn, MissingDanglingValue, MissingNoise, MissingParentValue, NotInvertible
from lagrca.graph import SummaryGraph, UnfoldedNode, unfold
from lagrca.mechanisms import (
    FittedSCM,
    Mechanism,
    MechanismKind,
    MechanismPolicy,
    NoiseKind,
    NoiseModel,
    default_policy,
    evaluate,
    fit,
    invert_noise,
    observed_noises,
    propagate,
    sample_noise,
)
from lagrca.plant import BatteryController, load_plant_graph

from conftest import TOY_COEF, build_scm, simulate_toy, toy_graph

U = UnfoldedNode
LIN = MechanismKind.LINEAR


def two_parent_scm():
    g = SummaryGraph.from_triples(["A", "B", "C"], [("A", "C", 0), ("B", "C", 0)])
    gauss = NoiseModel.gaussian(0.0, 1.0)
    return build_scm(
        g, "C", 0,
        {"A": Mechanism(MechanismKind.ROOT), "B": Mechanism(MechanismKind.ROOT), "C": Mechanism(LIN, (("A", 0), ("B", 0)), [1.0, 1.0], 0.0)},
        {"A": gauss, "B": gauss, "C": gauss},
    )


def test_evaluate_and_invert_linear():
    scm = two_parent_scm()
    c = U("C", 0)
    assert evaluate(scm, c, [2.0, 3.0], 0.5) == 5.5
    assert invert_noise(scm, c, {U("A", 0): 2.0, U("B", 0): 3.0}, 5.5) == 0.5
    with pytest.raises(MissingParentValue):
        evaluate(scm, c, [2.0], 0.5)
    with pytest.raises(MissingParentValue):
        evaluate(scm, c, {U("A", 0): 2.0}, 0.5)


def test_root_evaluate_and_invert():
    g = SummaryGraph.from_triples(["A"], [])
    scm = build_scm(g, "A", 0, {"A": Mechanism(MechanismKind.ROOT, intercept=0.0)}, {"A": NoiseModel.gaussian(0, 1)})
    assert evaluate(scm, U("A", 0), [], 1.7) == 1.7
    scm2 = build_scm(g, "A", 0, {"A": Mechanism(MechanismKind.ROOT, intercept=2.0)}, {"A": NoiseModel.gaussian(0, 1)})
    assert invert_noise(scm2, U("A", 0), [], 5.0) == 3.0


def test_known_controller_mechanism():
    g, target = load_plant_graph()
    ctrl = BatteryController()
    mech = Mechanism(MechanismKind.DETERMINISTIC, ctrl.inputs, control=ctrl)
    assert not mech.consumes_noise
    values = {("Grid", 1): 1450.0, ("Grid", 2): 1450.0, ("SOC", 1): 0.8, ("BC", 1): 0.0}
    assert mech.deterministic_part(values) == -ctrl.p_unload
    values[("Grid", 1)] = values[("Grid", 2)] = 1300.0
    assert mech.deterministic_part(values) == 0.0


def test_known_node_has_no_noise_and_not_attributable(plant_month):
    g, target = load_plant_graph()
    scm = fit(unfold(g, target, 2), plant_month, default_policy())
    bcs = [n for n in scm.unfolded.window if n.node == "BC"]
    assert bcs and all(n not in scm.noise for n in bcs)
    assert all(n.node != "BC" for n in scm.attributable)
    with pytest.raises(NotInvertible):
        invert_noise(scm, bcs[0], {p: 0.0 for p in scm.mechanism_parents(bcs[0])}, 0.0)
    with pytest.raises(NotInvertible):
        sample_noise(scm, bcs[0], np.random.default_rng(0))


def test_grid_coefficients_are_unit(plant_month):
    g, target = load_plant_graph()
    scm = fit(unfold(g, target, 0), plant_month, default_policy())
    mech = scm.mechanisms[U("Grid", 0)]
    assert set(mech.parents) == {("TPa", 0), ("TPb", 0), ("CL", 0), ("BU", 0)}
    assert np.all(np.abs(mech.coefficients - 1.0) < 0.05)


def test_invert_evaluate_round_trip():
    scm = fit(unfold(toy_graph(), "X1", 3), simulate_toy(3000, seed=3))
    rng = np.random.default_rng(0)
    for _ in range(1000):
        node = scm.attributable[rng.integers(len(scm.attributable))]
        parents = {p: rng.normal(0, 10) for p in scm.mechanism_parents(node)}
        x = rng.normal(0, 10)
        n = invert_noise(scm, node, parents, x)
        assert abs(evaluate(scm, node, parents, n) - x) < 1e-9


def test_gaussian_sampling():
    nm = NoiseModel.gaussian(0.0, 30.0)
    draws = nm.sample(np.random.default_rng(1), 100_000)
    assert abs(draws.mean()) < 0.5
    a = nm.sample(np.random.default_rng(5), 10)
    b = nm.sample(np.random.default_rng(5), 10)
    assert np.array_equal(a, b)


def test_empirical_sampling():
    nm = NoiseModel.empirical(np.ones(30))
    assert np.all(nm.sample(np.random.default_rng(0), 500) == 1.0)
    with pytest.raises(FitError):
        NoiseModel.empirical([1.0, 1.0, 1.0])
    with pytest.raises(FitError):
        NoiseModel.gaussian(0.0, 0.0)


def test_empirical_downsampling_is_bounded():
    nm = NoiseModel.empirical(np.arange(50_000.0), np.random.default_rng(0), max_size=20_000)
    assert len(nm.residuals) == 20_000
    assert not nm.residuals.flags.writeable


def test_root_fit_on_gaussian_column():
    rng = np.random.default_rng(2)
    g = SummaryGraph.from_triples(["A"], [])
    frame = pd.DataFrame({"A": rng.normal(size=20_000)})
    scm = fit(unfold(g, "A", 0), frame, MechanismPolicy(noise=NoiseKind.GAUSSIAN))
    nm = scm.noise[U("A", 0)]
    mech = scm.mechanisms[U("A", 0)]
    assert nm.kind is NoiseKind.GAUSSIAN
    assert abs(mech.intercept) < 0.05 and abs(nm.std - 1.0) < 0.05


def ols_reference(y, X):
    X = np.column_stack([X, np.ones(len(y))])
    beta = np.linalg.solve(X.T @ X, X.T @ y)
    resid = y - X @ beta
    sigma2 = resid @ resid / (len(y) - X.shape[1])
    se = np.sqrt(np.diag(sigma2 * np.linalg.inv(X.T @ X)))
    return beta, se


def test_fit_recovers_toy_coefficients():
    data = simulate_toy(5000, seed=4)
    scm = fit(unfold(toy_graph(), "X1", 2), data)
    m1 = scm.mechanisms[U("X1", 0)]
    coef = dict(zip(m1.parents, m1.coefficients))
    # independent OLS with explicit lag shifts and textbook standard errors
    x1, x2, x3 = (data[c].to_numpy() for c in ("X1", "X2", "X3"))
    beta, se = ols_reference(x1[2:], np.column_stack([x2[:-2], x3[1:-1]]))
    assert abs(coef[("X2", 2)] - TOY_COEF[("X2", "X1", 2)]) < 3 * se[0]
    assert abs(coef[("X3", 1)] - TOY_COEF[("X3", "X1", 1)]) < 3 * se[1]
    assert np.allclose([coef[("X2", 2)], coef[("X3", 1)]], beta[:2], atol=1e-9)
    m2 = scm.mechanisms[U("X2", 0)]
    b2, se2 = ols_reference(x2, x1[:, None])
    assert abs(m2.coefficients[0] - 0.8) < 3 * se2[0]


def test_noise_models_shared_across_lags(toy_data):
    scm = fit(unfold(toy_graph(), "X1", 3), toy_data)
    for node in ("X1", "X2", "X3"):
        models = {id(scm.noise[U(node, l)]) for l in range(4)}
        mechs = {id(scm.mechanisms[U(node, l)]) for l in range(4)}
        assert len(models) == 1 and len(mechs) == 1


def test_per_lag_policy_fits_separately(toy_data):
    scm = fit(unfold(toy_graph(), "X1", 2), toy_data, MechanismPolicy(per_lag=True))
    assert len({id(scm.noise[U("X1", l)]) for l in range(3)}) == 3


def test_insufficient_data_and_missing_column(toy_data):
    uf = unfold(toy_graph(), "X1", 2)
    with pytest.raises(InsufficientData):
        fit(uf, toy_data.iloc[:50])
    with pytest.raises(MissingColumn):
        fit(uf, toy_data.drop(columns="X3"))


def test_ridge_fallback_is_flagged():
    rng = np.random.default_rng(0)
    a = rng.normal(size=500)
    frame = pd.DataFrame({"A": a, "C": a.copy(), "B": 2 * a + rng.normal(size=500)})
    g = SummaryGraph.from_triples(["A", "B", "C"], [("A", "B", 0), ("C", "B", 0)])
    scm = fit(unfold(g, "B", 0), frame)
    assert "B" in scm.training.ridge_fallback
    assert abs(sum(scm.mechanisms[U("B", 0)].coefficients) - 2.0) < 0.1


def test_reconstruction_identity(toy_data):
    scm = fit(unfold(toy_graph(), "X1", 2), toy_data)
    cols = {c: toy_data[c].to_numpy() for c in ("X1", "X2", "X3")}
    for t in range(10, len(toy_data), 97):
        observed = {n: cols[n.node][t - n.lag] for n in scm.unfolded.nodes}
        noises = observed_noises(scm, observed)
        dangling = {d: observed[d] for d in scm.unfolded.dangling}
        assert abs(propagate(scm, noises, dangling) - cols["X1"][t]) < 1e-6


def test_propagate_chain():
    g = SummaryGraph.from_triples(["A", "B"], [("A", "B", 0)])
    gauss = NoiseModel.gaussian(0, 1)
    scm = build_scm(g, "B", 0, {"A": Mechanism(MechanismKind.ROOT), "B": Mechanism(LIN, (("A", 0),), [1.0], 0.0)}, {"A": gauss, "B": gauss})
    assert propagate(scm, {U("A", 0): 2.0, U("B", 0): 0.25}) == 2.25
    with pytest.raises(MissingNoise):
        propagate(scm, {U("A", 0): 2.0})


def substitute(node, noises, dangling):
    """Recursive substitution through the toy equations, independent of the library."""
    if node in dangling:
        return dangling[node]
    name, l = node.node, node.lag
    n = noises[node]
    if name == "X1":
        return 0.4 * substitute(U("X2", l + 2), noises, dangling) + 0.3 * substitute(U("X3", l + 1), noises, dangling) + n
    if name == "X2":
        return 0.8 * substitute(U("X1", l), noises, dangling) + n
    return 0.5 * substitute(U("X2", l), noises, dangling) + n


def toy_true_scm(L, mode="truncated"):
    gauss = NoiseModel.gaussian(0, 1)
    mechs = {
        "X1": Mechanism(LIN, (("X2", 2), ("X3", 1)), [0.4, 0.3], 0.0),
        "X2": Mechanism(LIN, (("X1", 0),), [0.8], 0.0),
        "X3": Mechanism(LIN, (("X2", 0),), [0.5], 0.0),
    }
    return build_scm(toy_graph(), "X1", L, mechs, {k: gauss for k in mechs}, mode=mode)


def test_propagate_matches_recursive_substitution():
    scm = toy_true_scm(3)
    rng = np.random.default_rng(9)
    for _ in range(50):
        noises = {u: rng.normal() for u in scm.attributable}
        dangling = {d: rng.normal() for d in scm.unfolded.dangling}
        assert abs(propagate(scm, noises, dangling) - substitute(U("X1", 0), noises, dangling)) < 1e-12
    with pytest.raises(MissingDanglingValue):
        propagate(scm, noises, {})


def test_propagate_vectorized(toy_data):
    scm = fit(unfold(toy_graph(), "X1", 1), toy_data)
    rng = np.random.default_rng(0)
    noises = {u: rng.normal(size=7) for u in scm.attributable}
    dangling = {d: rng.normal(size=7) for d in scm.unfolded.dangling}
    vec = propagate(scm, noises, dangling)
    for i in range(7):
        scalar = propagate(scm, {k: v[i] for k, v in noises.items()}, {k: v[i] for k, v in dangling.items()})
        assert scalar == pytest.approx(vec[i], abs=1e-12)


def test_non_truncated_refits_dangling(toy_data):
    scm = fit(unfold(toy_graph(), "X1", 2, "non-truncated"), toy_data)
    for d in scm.unfolded.dangling:
        assert d in scm.mechanisms and d in scm.noise
    m = scm.mechanisms[U("X3", 3)]
    assert m.parents == (("X2", 0),)
    assert scm.mechanisms[U("X2", 3)].kind is MechanismKind.ROOT
    # the refit root absorbs X2's full marginal variance, wider than the in-window residual
    assert scm.noise[U("X2", 3)].std > scm.noise[U("X2", 0)].std


def test_non_truncated_keeps_known_controller_fixed(plant_month):
    g, target = load_plant_graph()
    scm = fit(unfold(g, target, 1, "non-truncated"), plant_month, default_policy())
    dangling_bc = [d for d in scm.unfolded.dangling if d.node == "BC"]
    assert dangling_bc and all(scm.is_fixed(d) for d in dangling_bc)


def test_serialization_round_trip(tmp_path, toy_data):
    scm = fit(unfold(toy_graph(), "X1", 2, "non-truncated"), toy_data)
    path = tmp_path / "m.json"
    scm.save(path)
    back = FittedSCM.load(path)
    assert back.order == scm.order and back.attributable == scm.attributable
    rng = np.random.default_rng(1)
    noises = {u: rng.normal() for u in scm.attributable}
    dangling = {d: rng.normal() for d in scm.unfolded.dangling if scm.is_fixed(d)}
    assert propagate(back, noises, dangling) == propagate(scm, noises, dangling)
    assert back.training.target_std == scm.training.target_std
