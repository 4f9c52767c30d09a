import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from conftest import random_instance
from pricelab.errors import AssumptionViolation, ConfigurationError
from pricelab.market_model import (
    ElasticityCoefficients,
    FeatureMatrix,
    MarketState,
    RevenueQuadratic,
    assemble_elasticity_operator,
    check_similarity,
    demand,
    pd_characterization,
    prices_from_attributes,
    realized_revenue,
    revenue_quadratic,
    static_optimum,
    v_inner,
)

I3 = FeatureMatrix(np.eye(3))
OVERLAP = FeatureMatrix(np.ones((2, 2)))


def toy_state(n=3, z=(60, 60, 60), v=None):
    z = np.asarray(z, dtype=float)
    v = np.eye(z.size) if v is None else v
    return MarketState(z=z, v=v, alpha=ElasticityCoefficients.uniform(n, 0.15))


# ---------------------------------------------------------------- types


def test_feature_matrix_rejects_bad_entries():
    with pytest.raises(ConfigurationError):
        FeatureMatrix(np.array([[1, 0], [0, 0]]))
    with pytest.raises(ConfigurationError):
        FeatureMatrix(np.array([[0.5, 1.0]]))
    with pytest.raises(ConfigurationError):
        FeatureMatrix(np.array([[2, 1]]), cap=1)
    assert FeatureMatrix(np.array([[2, 1]]), cap=2).n_attributes == 2


def test_negative_elasticity_is_an_assumption_violation():
    cross = np.array([[0.0, -0.1], [0.1, 0.0]])
    with pytest.raises(AssumptionViolation):
        ElasticityCoefficients(np.array([0.1, 0.1]), cross)


def test_market_state_rejects_asymmetric_or_indefinite_v():
    alpha = ElasticityCoefficients.uniform(2)
    with pytest.raises(AssumptionViolation):
        MarketState(z=np.ones(2), v=np.array([[1.0, 0.5], [0.0, 1.0]]), alpha=alpha)
    with pytest.raises(AssumptionViolation):
        MarketState(z=np.ones(2), v=np.diag([1.0, -1.0]), alpha=alpha)


# ---------------------------------------------------------------- v_inner, prices


def test_v_inner_examples():
    assert v_inner([1, 0, 0], [0, 1, 0], np.eye(3)) == 0
    assert v_inner([1, 1, 0], [0, 1, 1], np.eye(3)) == 1
    assert v_inner([1, 0, 0], [1, 0, 0], np.diag([1.5, 1.2, 1.0])) == 1.5
    with pytest.raises(ConfigurationError):
        v_inner([1, 0], [1, 0, 0], np.eye(3))


def test_prices_from_attributes_examples():
    np.testing.assert_allclose(prices_from_attributes(I3, [13.72, 13.70, 13.72]), [13.72, 13.70, 13.72])
    u = FeatureMatrix(np.array([[1, 1, 0], [0, 1, 1], [1, 0, 1]]))
    np.testing.assert_array_equal(prices_from_attributes(u, [1, 2, 3]), [3, 5, 4])
    np.testing.assert_array_equal(prices_from_attributes(u, np.zeros(3)), np.zeros(3))
    with pytest.raises(ConfigurationError):
        prices_from_attributes(u, [1, 2])


# ---------------------------------------------------------------- operator


def test_operator_identity_features():
    op = assemble_elasticity_operator(I3, toy_state())
    np.testing.assert_allclose(op.m, 0.15 * np.eye(3))
    np.testing.assert_allclose(op.laplacian_part, 0.0)


def test_operator_overlapping_pair():
    op = assemble_elasticity_operator(OVERLAP, toy_state(2, z=(1, 1)))
    assert op.weights[0, 1] == pytest.approx(0.3)
    np.testing.assert_allclose(op.m, [[0.6, -0.3], [-0.3, 0.6]])


def test_operator_matches_loop_oracle(rng):
    for _ in range(25):
        u, s = random_instance(rng)
        op = assemble_elasticity_operator(u, s)
        ref = oracles.operator_by_loops(u.entries, s.v, s.alpha.own, s.alpha.cross)
        np.testing.assert_allclose(op.m, ref, rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(op.m, op.self_part + op.laplacian_part)
        assert np.all(op.weights >= 0) and np.allclose(op.weights, op.weights.T)
        assert np.all(np.diag(op.weights) == 0)
        scale = np.linalg.norm(op.laplacian_part, 2)
        assert np.abs(op.laplacian_part.sum(axis=1)).max() <= 1e-9 * max(scale, 1.0)


def test_negative_similarity_names_the_pair():
    # V with a negative off-diagonal entry and disjoint rows gives a negative similarity
    v = np.array([[1.0, -0.4], [-0.4, 1.0]])
    u = FeatureMatrix(np.eye(2))
    state = MarketState(z=np.ones(2), v=v, alpha=ElasticityCoefficients.uniform(2))
    with pytest.raises(AssumptionViolation, match=r"\(0, 1\)"):
        assemble_elasticity_operator(u, state)
    with pytest.raises(AssumptionViolation):
        check_similarity(u, v)


# ---------------------------------------------------------------- demand and revenue


def test_demand_examples():
    np.testing.assert_allclose(demand(I3, toy_state(), np.full(3, 10.0)), [58.5, 58.5, 58.5])
    q = demand(OVERLAP, toy_state(2, z=(1, 1)), np.array([1.0, 2.0]))
    np.testing.assert_allclose(q, [2.0, 1.1])
    s = toy_state()
    np.testing.assert_allclose(demand(I3, s, np.zeros(3)), I3.entries @ s.z)


def test_revenue_examples():
    assert realized_revenue([10, 10, 10], [58.5, 58.5, 58.5]) == pytest.approx(1755)
    assert realized_revenue([0, 0], [3, 4]) == 0
    assert realized_revenue([1, 2], [2.0, 1.1]) == pytest.approx(4.2)


def test_revenue_quadratic_examples():
    q = revenue_quadratic(I3, toy_state())
    np.testing.assert_allclose(q.a, 0.15 * np.eye(3))
    np.testing.assert_allclose(q.b, [60, 60, 60])
    q2 = revenue_quadratic(OVERLAP, toy_state(2, z=(1, 1)))
    np.testing.assert_allclose(q2.b, [4, 4])
    np.testing.assert_allclose(q2.a, [[0.6, 0.6], [0.6, 0.6]])
    q0 = revenue_quadratic(I3, toy_state(z=(0, 0, 0)))
    theta = static_optimum(q0, -5, 5)
    np.testing.assert_allclose(theta, 0, atol=1e-12)
    assert q0.value(theta) >= 0


def test_literal_demand_equals_operator_form(rng):
    for _ in range(50):
        u, s = random_instance(rng)
        op = assemble_elasticity_operator(u, s)
        p = rng.uniform(0, 50, u.n_products)
        eps = rng.normal(size=u.n_products)
        lit = demand(u, s, p, eps)
        via = u.entries @ s.z - op.m @ p + eps
        np.testing.assert_allclose(lit, via, rtol=1e-9, atol=1e-9 * np.abs(via).max())
        # the operator is also minus the Jacobian of the literal demand
        jac = oracles.demand_jacobian(lambda x: demand(u, s, x), p)
        np.testing.assert_allclose(jac, op.m, atol=1e-9)


def test_asymmetric_alpha_is_symmetrised_in_the_operator(rng):
    u, s = random_instance(rng, n=5, d=3, sym=False)
    op = assemble_elasticity_operator(u, s)
    jac = oracles.demand_jacobian(lambda x: demand(u, s, x), np.zeros(5))
    # off the diagonal the operator is the symmetric part of the raw Jacobian;
    # the diagonal carries the symmetrised row sums instead of the raw ones
    off = ~np.eye(5, dtype=bool)
    np.testing.assert_allclose(op.m[off], (0.5 * (jac + jac.T))[off], atol=1e-9)
    ref = oracles.operator_by_loops(u.entries, s.v, s.alpha.own, s.alpha.cross)
    np.testing.assert_allclose(op.m, ref, atol=1e-12)


def test_expected_revenue_is_the_quadratic(rng):
    for _ in range(20):
        u, s = random_instance(rng)
        q = revenue_quadratic(u, s)
        theta = rng.uniform(-20, 20, u.n_attributes)
        p = u.entries @ theta
        assert q.value(theta) == pytest.approx(realized_revenue(p, demand(u, s, p)), rel=1e-9, abs=1e-9)


def test_substitution_sign():
    u = FeatureMatrix(np.array([[1, 1, 0], [0, 1, 1]]))
    s = MarketState(z=np.ones(3), v=np.eye(3), alpha=ElasticityCoefficients.uniform(2))
    p = np.array([5.0, 5.0])
    q0 = demand(u, s, p)
    q1 = demand(u, s, p + np.array([0.0, 1.0]))
    assert q1[0] > q0[0]
    assert q1[1] < q0[1]


# ---------------------------------------------------------------- optimisation


def test_static_optimum_examples():
    q = RevenueQuadratic(0.15 * np.eye(3), np.full(3, 60.0))
    np.testing.assert_allclose(static_optimum(q, 0, 1000), [200, 200, 200], atol=1e-6)
    np.testing.assert_allclose(static_optimum(q, 0, 50), [50, 50, 50])
    q0 = RevenueQuadratic(0.15 * np.eye(3), np.zeros(3))
    np.testing.assert_allclose(static_optimum(q0, -3, 3), 0, atol=1e-12)


def test_static_optimum_errors():
    q = RevenueQuadratic(0.15 * np.eye(2), np.ones(2))
    with pytest.raises(ConfigurationError):
        static_optimum(q, [1, 0], [0, 1])
    with pytest.raises(AssumptionViolation):
        static_optimum(RevenueQuadratic(-np.eye(2), np.ones(2)), 0, 1)


@given(st.integers(0, 2**32 - 1))
def test_static_optimum_projected_gradient_fixed_point(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 6))
    g = rng.normal(size=(d, d))
    a = g @ g.T * rng.uniform(0.01, 2)
    b = rng.normal(scale=20, size=d)
    lo = rng.uniform(-10, 0, d)
    hi = lo + rng.uniform(0.1, 20, d)
    q = RevenueQuadratic(a, b)
    theta = static_optimum(q, lo, hi)
    assert np.all(theta >= lo) and np.all(theta <= hi)
    lam = max(np.linalg.eigvalsh(q.a)[-1], 1e-12)
    step = 1.0 / (2 * lam)
    resid = np.abs(theta - np.clip(theta + step * q.gradient(theta), lo, hi)).max()
    assert resid <= 1e-6
    # no box corner or random point beats it
    for c in oracles.corner_points(lo, hi):
        assert q.value(c) <= q.value(theta) + 1e-7 * max(1.0, abs(q.value(theta)))


def test_static_optimum_matches_grid_at_d2(rng):
    for _ in range(5):
        g = rng.normal(size=(2, 2))
        a = g @ g.T + 0.05 * np.eye(2)
        b = rng.normal(scale=5, size=2)
        lo, hi = np.array([-3.0, -2.0]), np.array([2.0, 4.0])
        theta = static_optimum(RevenueQuadratic(a, b), lo, hi)
        x, val = oracles.grid_box_max(a, b, lo, hi)
        np.testing.assert_allclose(theta, x, atol=1e-3)
        assert RevenueQuadratic(a, b).value(theta) == pytest.approx(val, abs=1e-5)


# ---------------------------------------------------------------- PD characterisation


def test_pd_report_examples():
    rep = pd_characterization(assemble_elasticity_operator(I3, toy_state()))
    assert rep.is_pd and rep.gershgorin_dominant and len(rep.components) == 3
    state = MarketState(z=np.ones(2), v=np.eye(2),
                        alpha=ElasticityCoefficients(np.zeros(3), np.full((3, 3), 0.2) - 0.2 * np.eye(3)))
    rep = pd_characterization(assemble_elasticity_operator(FeatureMatrix(np.ones((3, 2))), state))
    assert rep.is_psd and not rep.is_pd and rep.components == [[0, 1, 2]]
    rep = pd_characterization(assemble_elasticity_operator(OVERLAP, toy_state(2, z=(1, 1))))
    assert rep.is_pd and rep.components == [[0, 1]]
    assert rep.min_eigenvalue == pytest.approx(0.3)
