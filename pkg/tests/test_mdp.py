import itertools

import numpy as np
import pytest

from _instances import SMALL, grid_for, random_distribution, random_policy, random_population
from carma.bottleneck import BottleneckParams, QueueProfile, slow_lane_cost
from carma.mdp import (
    CommuterType,
    Population,
    SocialContext,
    UrgencyProcess,
    best_response,
    evaluate_value,
    feasible_mask,
    immediate_reward,
    policy_reward,
    policy_transition,
    q_function,
    single_q,
    state_transition_kernel,
    stationary_distribution,
    type_values,
)


def hand_context(params, psi, queue_len, p_bar=0.0):
    T, B = psi.shape
    q = np.asarray(queue_len, dtype=float)
    return SocialContext(params=params, nu=np.full((T, B), 1 / (T * B)), nu_by_type=np.zeros((1, T, B)),
                         psi=psi, b_star=np.zeros(T, dtype=int), p_bar=p_bar, frac=p_bar % 1,
                         slow_inflow=np.zeros(T), queue=QueueProfile(q, q / params.s_slow),
                         redist_level=p_bar)


def random_context(rng, K=6, eps=1e-4):
    pop = random_population(rng)
    d = random_distribution(rng, pop, K)
    pi = random_policy(rng, (pop.n_types, pop.n_urgency), K, SMALL.n_intervals)
    return pop, d, pi, SocialContext.from_state(d, pi, SMALL, eps)


def test_urgency_process_checks():
    with pytest.raises(ValueError):
        UrgencyProcess([1, 2], [[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(ValueError):
        UrgencyProcess([1, 2], [[1, 0], [0, 1]])  # two stationary distributions
    p = UrgencyProcess.iid([1, 6], [0.8, 0.2])
    np.testing.assert_allclose(p.stationary(), [0.8, 0.2])
    assert p.mean == pytest.approx(2.0)


def test_population_padding():
    pop = Population([CommuterType(0.5, UrgencyProcess.iid([1, 11], [0.9, 0.1])),
                      CommuterType(0.5, UrgencyProcess.constant(2.0))])
    assert pop.n_urgency == 2
    np.testing.assert_array_equal(pop.active, [[True, True], [True, False]])
    np.testing.assert_allclose(pop.type_average_vot(), [2.0, 2.0])
    np.testing.assert_allclose(pop.phi.sum(axis=-1), 1.0)


def test_immediate_reward_examples():
    params = BottleneckParams(dt=10.0, n_intervals=16)
    T, B = params.n_intervals, 3
    q = np.zeros(T)
    q[11] = 480.0  # t = 110
    fast = hand_context(params, np.ones((T, B)), q)
    slow = hand_context(params, np.zeros((T, B)), q)
    half = hand_context(params, np.full((T, B), 0.5), q)
    assert immediate_reward(6.0, 12, 0, fast) == 0.0  # t = 120 = t*
    assert immediate_reward(1.0, 11, 0, slow) == pytest.approx(-6.4 * 10 / 60, rel=1e-12)
    assert immediate_reward(1.0, 11, 0, slow) == pytest.approx(-slow_lane_cost(1.0, 110, 480, params))
    mean = 0.5 * (immediate_reward(2.0, 11, 1, fast) + immediate_reward(2.0, 11, 1, slow))
    assert immediate_reward(2.0, 11, 1, half) == pytest.approx(mean, rel=1e-14)


def test_state_transition_kernel_iid_rows():
    rng = np.random.default_rng(0)
    pop = Population([CommuterType(1.0, UrgencyProcess.iid([1, 6], [0.8, 0.2]))])
    K = 6
    d = random_distribution(rng, pop, K)
    pi = random_policy(rng, (1, 2), K, SMALL.n_intervals)
    ctx = SocialContext.from_state(d, pi, SMALL, 1e-4)
    a = state_transition_kernel(pop, 0, 0, 3, 1, 2, ctx, grid_for(K))
    b = state_transition_kernel(pop, 0, 1, 3, 1, 2, ctx, grid_for(K))
    np.testing.assert_allclose(a, b)
    np.testing.assert_allclose(a.sum(axis=1), [0.8, 0.2])
    assert a.sum() == pytest.approx(1.0, abs=1e-15)


def test_state_transition_kernel_point_mass():
    pop = Population([CommuterType(1.0, UrgencyProcess([1, 2], [[0, 1], [1, 0]]))])
    K, T = 6, SMALL.n_intervals
    psi = np.zeros((T, K))
    psi[2, 3] = 1.0
    ctx = hand_context(SMALL, psi, np.zeros(T), p_bar=1.0)
    rho = state_transition_kernel(pop, 0, 0, 4, 2, 3, ctx, grid_for(K))
    expected = np.zeros((2, K))
    expected[1, 4 - 3 + 1] = 1.0
    np.testing.assert_array_equal(rho, expected)


def test_policy_reward_and_transition_brute_force():
    rng = np.random.default_rng(5)
    K, T = 6, SMALL.n_intervals
    pop, d, pi, ctx = random_context(rng, K)
    grid = grid_for(K)
    R = policy_reward(pop, pi, ctx)
    P = policy_transition(pop, pi, ctx, K - 1)
    X, U = pop.n_types, pop.n_urgency
    for x, u, k in itertools.product(range(X), range(U), range(K)):
        r = sum(pi[x, u, k, t, b] * immediate_reward(pop.levels[x, u], t, b, ctx)
                for t in range(T) for b in range(k + 1))
        rho = sum(pi[x, u, k, t, b] * state_transition_kernel(pop, x, u, k, t, b, ctx, grid)
                  for t in range(T) for b in range(k + 1))
        assert R[x, u, k] == pytest.approx(r, rel=1e-12, abs=1e-14)
        np.testing.assert_allclose(P[x, u, k], rho, atol=1e-14)
    np.testing.assert_allclose(P.sum(axis=(-2, -1)), 1.0, atol=1e-12)


def test_policy_transition_point_mass_and_uniform():
    rng = np.random.default_rng(6)
    K, T = 5, SMALL.n_intervals
    pop, d, _, ctx = random_context(rng, K)
    grid = grid_for(K)
    X, U = pop.n_types, pop.n_urgency
    point = np.zeros((X, U, K, T, K))
    point[..., 1, 0] = 1.0
    P = policy_transition(pop, point, ctx, K - 1)
    np.testing.assert_allclose(P[0, 0, 3], state_transition_kernel(pop, 0, 0, 3, 1, 0, ctx, grid))
    mask = feasible_mask(K, T)
    uni = np.broadcast_to(mask / mask.sum(axis=(-2, -1), keepdims=True), (X, U, K, T, K))
    P = policy_transition(pop, uni, ctx, K - 1)
    k = 2
    mean = np.mean([state_transition_kernel(pop, 0, 0, k, t, b, ctx, grid)
                    for t in range(T) for b in range(k + 1)], axis=0)
    np.testing.assert_allclose(P[0, 0, k], mean, atol=1e-15)


def test_evaluate_value_limits():
    rng = np.random.default_rng(7)
    R = rng.normal(size=5)
    P = rng.dirichlet(np.ones(5), size=5)
    np.testing.assert_allclose(evaluate_value(R, P, 1e-12), R, atol=1e-11)
    V = evaluate_value(np.array([-2.0]), np.array([[1.0]]), 0.9, tol=1e-13)
    assert V[0] == pytest.approx(-20.0, rel=1e-11)
    with pytest.raises(ValueError):
        evaluate_value(R, P, 1.0)


def test_evaluate_value_matches_direct_solve():
    rng = np.random.default_rng(8)
    for _ in range(20):
        n = int(rng.integers(2, 50))
        R = rng.normal(size=n)
        P = rng.dirichlet(np.ones(n) * 0.3, size=n)
        delta = rng.uniform(0.1, 0.99)
        direct = evaluate_value(R, P, delta, method="direct")
        np.testing.assert_allclose(evaluate_value(R, P, delta, tol=1e-13), direct, atol=1e-10)
        # Bellman residual checked independently of the solve path
        assert np.max(np.abs(R + delta * P @ direct - direct)) < 1e-11


def test_q_function_brute_force():
    rng = np.random.default_rng(9)
    K, T = 6, SMALL.n_intervals
    pop, d, pi, ctx = random_context(rng, K)
    delta = 0.95
    grid = grid_for(K)
    V = type_values(policy_reward(pop, pi, ctx), policy_transition(pop, pi, ctx, K - 1), delta)
    Q = q_function(pop, V, ctx, delta, K - 1)
    for x, u, k in itertools.product(range(pop.n_types), range(pop.n_urgency), range(K)):
        for t, b in itertools.product(range(T), range(K)):
            if b > k:
                assert Q[x, u, k, t, b] == -np.inf
            else:
                ref = single_q(pop, V, ctx, delta, grid, x, u, k, t, b)
                assert Q[x, u, k, t, b] == pytest.approx(ref, rel=1e-12, abs=1e-12)
    # V is the policy-weighted Q
    Qf = np.where(np.isfinite(Q), Q, 0.0)
    np.testing.assert_allclose(np.sum(pi * Qf, axis=(-2, -1)), V, rtol=1e-10)


def test_q_function_zero_discount_is_reward():
    rng = np.random.default_rng(10)
    K = 4
    pop, d, pi, ctx = random_context(rng, K)
    Q = q_function(pop, np.zeros((pop.n_types, pop.n_urgency, K)), ctx, 0.0, K - 1)
    for x, u in itertools.product(range(pop.n_types), range(pop.n_urgency)):
        assert Q[x, u, 3, 2, 1] == pytest.approx(immediate_reward(pop.levels[x, u], 2, 1, ctx))


def test_best_response_examples():
    Q = np.array([1.0, 3.0, 3.0, 0.0]).reshape(1, 4)
    np.testing.assert_array_equal(best_response(Q), [[0, 0.5, 0.5, 0]])
    Q = np.array([1.0, 5.0, 3.0, -np.inf]).reshape(2, 2)
    np.testing.assert_array_equal(best_response(Q), [[0, 1], [0, 0]])


def test_best_response_beats_random_mixtures():
    rng = np.random.default_rng(11)
    K, T = 5, 3
    Q = rng.normal(size=(K, T, K))
    Q = np.where(feasible_mask(K, T), Q, -np.inf)
    br = best_response(Q)
    assert np.all(br[~feasible_mask(K, T)] == 0)
    Qf = np.where(np.isfinite(Q), Q, 0.0)
    val = np.sum(br * Qf, axis=(-2, -1))
    for _ in range(1000):
        mix = random_policy(rng, (), K, T, sparsity=0.0)
        assert np.all(val >= np.sum(mix * Qf, axis=(-2, -1)) - 1e-12)


def test_stationary_distribution():
    d0 = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(stationary_distribution(np.eye(3), d0), d0)
    ds = np.array([[0.2, 0.5, 0.3], [0.5, 0.1, 0.4], [0.3, 0.4, 0.3]])
    np.testing.assert_allclose(stationary_distribution(ds, d0), [1 / 3] * 3, atol=1e-12)
    rng = np.random.default_rng(12)
    P = rng.dirichlet(np.ones(8), size=8)
    oracle = np.linalg.matrix_power(P, 2 ** 12)[0]
    np.testing.assert_allclose(stationary_distribution(P), oracle, atol=1e-8)
