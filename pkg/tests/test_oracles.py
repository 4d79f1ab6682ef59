"""Brute-force optimality oracles vs the closed-form acceptance rule."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obrs_align.categorical import make_categorical
from obrs_align.oracles import (
    AcceptanceRule,
    finite_difference_gradient,
    near_optimal_rules,
    obrs_rule,
    oracle_optimal_rule,
    rule_acceptance_mass,
    rule_objective,
    verify_obrs_optimality,
)

P_CANON = (0.2, 0.3, 0.5)
Q_CANON = (0.5, 0.3, 0.2)


def canon():
    return make_categorical(P_CANON), make_categorical(Q_CANON)


def random_pair(seed, vocab):
    rng = np.random.default_rng(seed)
    return (
        make_categorical(rng.dirichlet(np.ones(vocab))),
        make_categorical(rng.dirichlet(np.ones(vocab))),
    )


def test_oracle_canonical_example():
    p, q = canon()
    rule = oracle_optimal_rule(p, q, 0.7)
    assert rule.alphas == pytest.approx([0.4, 1.0, 1.0], abs=1e-9)


def test_oracle_full_budget_accepts_everything():
    p, q = canon()
    rule = oracle_optimal_rule(p, q, 1.0)
    assert rule.alphas == pytest.approx([1.0, 1.0, 1.0], abs=1e-12)


def test_oracle_identical_pair_uniform_scaling():
    p = make_categorical(P_CANON)
    rule = oracle_optimal_rule(p, p, 0.5)
    assert rule.alphas == pytest.approx([0.5, 0.5, 0.5], abs=1e-9)


def test_oracle_budget_validation():
    p, q = canon()
    with pytest.raises(ValueError, match="budget"):
        oracle_optimal_rule(p, q, 0.0)
    with pytest.raises(ValueError, match="budget"):
        oracle_optimal_rule(p, q, 1.5)
    big = make_categorical(np.ones(17))
    with pytest.raises(ValueError, match="vocab"):
        oracle_optimal_rule(big, big, 0.5)


def test_oracle_infeasible_budget_raises():
    # Proposal mass on p's support is 0.5; a budget above that has no rule.
    p = make_categorical([1.0, 1.0, 0.0, 0.0])
    q = make_categorical([0.25, 0.25, 0.25, 0.25])
    with pytest.raises(ValueError, match="exceeds the proposal mass"):
        oracle_optimal_rule(p, q, 0.8)
    # At exactly that mass the rule saturates p's support.
    rule = oracle_optimal_rule(p, q, 0.5)
    assert rule.alphas[:2] == pytest.approx([1.0, 1.0], abs=1e-9)


def test_oracle_budget_constraint_self_consistency():
    for seed in range(10):
        p, q = random_pair(seed, 6)
        for budget in (0.3, 0.5, 0.8):
            rule = oracle_optimal_rule(p, q, budget)
            assert abs(rule_acceptance_mass(q, rule) - budget) <= 1e-9


@given(
    seed=st.integers(min_value=0, max_value=3_000),
    vocab=st.integers(min_value=3, max_value=8),
    budget=st.sampled_from([0.3, 0.5, 0.8]),
)
@settings(max_examples=60, deadline=None)
def test_obrs_matches_oracle_objective(seed, vocab, budget):
    p, q = random_pair(seed, vocab)
    closed = obrs_rule(p, q, budget)
    oracle = oracle_optimal_rule(p, q, budget)
    gap = rule_objective(p, oracle) - rule_objective(p, closed)
    assert gap <= 1e-6
    assert np.allclose(closed.alphas, oracle.alphas, atol=1e-6)


def test_uniqueness_probe_near_optimal_rules_coincide():
    for seed in range(20):
        p, q = random_pair(seed, 6)
        for budget in (0.3, 0.5, 0.8):
            closed = obrs_rule(p, q, budget)
            for cand in near_optimal_rules(p, q, budget, tol=1e-9):
                assert np.allclose(cand.alphas, closed.alphas, atol=1e-6)


def test_perturbations_never_improve_canonical():
    p, q = canon()
    report = verify_obrs_optimality(p, q, 0.7, trials=1000, seed=0)
    assert report.passed
    assert report.improving_trials == 0
    assert report.max_improvement <= 1e-9


def test_perturbations_never_improve_random():
    for seed in range(5):
        p, q = random_pair(seed, 8)
        report = verify_obrs_optimality(p, q, 0.5, trials=500, seed=seed)
        assert report.passed, f"seed {seed}: improvement {report.max_improvement}"


def test_adversarial_spike_pair_passes():
    # p concentrates on q's rarest token.
    q = make_categorical([0.55, 0.25, 0.15, 0.05])
    p = make_categorical([0.01, 0.01, 0.01, 0.97])
    closed = obrs_rule(p, q, 0.3)
    oracle = oracle_optimal_rule(p, q, 0.3)
    assert rule_objective(p, oracle) - rule_objective(p, closed) <= 1e-6
    report = verify_obrs_optimality(p, q, 0.3, trials=1000, seed=3)
    assert report.passed


def test_rule_objective_minus_inf_on_blocked_support():
    p = make_categorical([0.5, 0.5])
    rule = AcceptanceRule(np.array([0.0, 1.0]))
    assert rule_objective(p, rule) == -math.inf


def test_acceptance_rule_validation():
    with pytest.raises(ValueError, match="\\[0, 1\\]"):
        AcceptanceRule(np.array([1.5, 0.0]))
    with pytest.raises(ValueError, match="1-D"):
        AcceptanceRule(np.zeros((2, 2)))


def test_finite_difference_gradient_exact_on_quadratic():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    b = np.array([1.0, -2.0])

    def f(x):
        return 0.5 * float(x @ A @ x) + float(b @ x)

    x0 = np.array([0.3, -0.7])
    grad = finite_difference_gradient(f, x0, h=1e-4)
    assert np.allclose(grad, A @ x0 + b, atol=1e-10)
