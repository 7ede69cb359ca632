import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from auvsvr.kernel_density import KernelParams, kernel_matrix
from auvsvr.svr_core import (Hyperparams, Sample, SupportSet, SvrSolution, as_samples, dual_objective,
                             fit_batch, fitted_values, predict, predict_many, prune_weights,
                             solve_dual)
from oracles import dense_svr_qp, primal_bias


def _problem(seed, n=12, dim=3, gamma=2.0):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, dim))
    y = np.sin(X[:, 0]) + 0.3 * X[:, 1] + 0.05 * r.normal(size=n)
    return X, y, KernelParams(np.ones(dim), gamma)


def test_matches_dense_qp():
    X, y, kp = _problem(0)
    hp = Hyperparams(epsilon=0.05, cost=2.0, gamma=kp.gamma)
    sol = solve_dual((X, y), hp, kp, tol=1e-10)
    K = kernel_matrix(X, X, kp)
    w_ref, obj_ref = dense_svr_qp(K, y, hp.epsilon, hp.cost)
    assert sol.converged
    assert sol.objective == pytest.approx(obj_ref, abs=1e-7)
    assert np.allclose(K @ sol.weights, K @ w_ref, atol=1e-5)
    assert sol.bias == pytest.approx(primal_bias(K, y, w_ref, hp.epsilon), abs=1e-5)


def test_objective_consistent():
    X, y, kp = _problem(1)
    hp = Hyperparams(epsilon=0.02, cost=5.0, gamma=kp.gamma)
    sol = solve_dual((X, y), hp, kp)
    K = kernel_matrix(X, X, kp)
    assert sol.objective == pytest.approx(dual_objective(K, y, hp.epsilon, sol.alphas, sol.betas),
                                          rel=1e-12)


def test_sample_list_and_tuple_inputs_agree():
    X, y, kp = _problem(2)
    hp = Hyperparams(epsilon=0.01, cost=1.0, gamma=kp.gamma)
    a = solve_dual(as_samples(X, y), hp, kp)
    b = solve_dual((X, y), hp, kp)
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias


def test_warm_start_agrees_with_cold():
    X, y, kp = _problem(3, n=20)
    hp = Hyperparams(epsilon=0.02, cost=3.0, gamma=kp.gamma)
    prev = solve_dual((X[:-1], y[:-1]), hp, kp, tol=1e-10)
    warm = solve_dual((X, y), hp, kp, prev, tol=1e-10)
    cold = solve_dual((X, y), hp, kp, tol=1e-10)
    assert warm.objective == pytest.approx(cold.objective, abs=1e-9)
    assert warm.iterations <= cold.iterations


def test_warm_start_after_deletion_is_repaired():
    X, y, kp = _problem(4, n=15)
    hp = Hyperparams(epsilon=0.01, cost=2.0, gamma=kp.gamma)
    full = solve_dual((X, y), hp, kp)
    keep = np.ones(15, dtype=bool)
    keep[np.flatnonzero(np.abs(full.weights) > 0)[:2]] = False
    start = SvrSolution.from_weights(full.weights[keep])
    assert abs(start.weights.sum()) > 1e-6
    sol = solve_dual((X[keep], y[keep]), hp, kp, start, tol=1e-10)
    ref = solve_dual((X[keep], y[keep]), hp, kp, tol=1e-10)
    assert sol.objective == pytest.approx(ref.objective, abs=1e-9)


def test_warm_start_too_long_rejected():
    X, y, kp = _problem(5)
    hp = Hyperparams(gamma=kp.gamma)
    with pytest.raises(ValueError):
        solve_dual((X[:3], y[:3]), hp, kp, SvrSolution.from_weights(np.zeros(5)))


def test_larger_gram_block_accepted():
    X, y, kp = _problem(6)
    hp = Hyperparams(epsilon=0.01, cost=1.0, gamma=kp.gamma)
    big = np.full((20, 20), np.nan)
    big[:12, :12] = kernel_matrix(X, X, kp)
    assert np.array_equal(solve_dual((X, y), hp, kp, gram=big).weights, solve_dual((X, y), hp, kp).weights)


def test_single_sample_has_zero_weight_and_bias_at_target():
    kp = KernelParams(np.ones(2), 1.0)
    sol = solve_dual([Sample(np.zeros(2), 0.7, 0.0)], Hyperparams(epsilon=0.1, gamma=1.0), kp)
    assert sol.weights[0] == 0.0
    assert sol.bias == pytest.approx(0.7)


def test_wide_tube_gives_bias_only_model():
    X, y, kp = _problem(7)
    hp = Hyperparams(epsilon=10.0, cost=1.0, gamma=kp.gamma)
    sol = solve_dual((X, y), hp, kp)
    assert np.all(sol.weights == 0)
    assert sol.bias == pytest.approx(np.mean(y))


def test_iteration_cap_reports_nonconvergence():
    X, y, kp = _problem(8, n=25)
    sol = solve_dual((X, y), Hyperparams(epsilon=1e-4, cost=100.0, gamma=kp.gamma), kp, max_iter=2)
    assert not sol.converged and sol.iterations == 2
    sol.check_feasible(100.0)


@pytest.mark.parametrize("bad", ["empty", "nan"])
def test_solve_errors(bad):
    kp = KernelParams(np.ones(2), 1.0)
    hp = Hyperparams(gamma=1.0)
    if bad == "empty":
        samples = (np.empty((0, 2)), np.empty(0))
    else:
        samples = (np.zeros((2, 2)), np.array([0.0, np.nan]))
    with pytest.raises(ValueError):
        solve_dual(samples, hp, kp)


@pytest.mark.parametrize("field,value", [("epsilon", -1.0), ("cost", 0.0), ("gamma", 0.0),
                                         ("buffer_size", 0), ("a", 1.0), ("xi", 0.0), ("b", 0.0)])
def test_hyperparams_validation(field, value):
    with pytest.raises(ValueError):
        Hyperparams(**{field: value})


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 15), st.floats(0.0, 0.5), st.floats(0.1, 50), st.integers(0, 2**31 - 1))
def test_solution_feasible_and_kkt(n, eps, cost, seed):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, 2))
    y = r.normal(size=n)
    kp = KernelParams(np.ones(2), 1.0)
    sol = solve_dual((X, y), Hyperparams(epsilon=eps, cost=cost, gamma=1.0), kp)
    sol.check_feasible(cost)
    assert sol.converged
    assert np.all(sol.alphas * sol.betas == 0)
    # residuals of free SVs sit on the tube edge
    K = kernel_matrix(X, X, kp)
    f = K @ sol.weights + sol.bias
    free = (np.abs(sol.weights) > 1e-8 * cost) & (np.abs(sol.weights) < cost * (1 - 1e-8))
    assert np.all(np.abs(np.abs(f[free] - y[free]) - eps) < 1e-2)


# prediction and pruning

def test_predict_matches_expansion():
    X, y, kp = _problem(9)
    model, sol = fit_batch(X, y, Hyperparams(epsilon=0.01, cost=2.0, gamma=kp.gamma), kp)
    q = np.array([0.3, -0.2, 0.1])
    direct = sum(w * np.exp(-np.sum((q - xi) ** 2 * kp.gamma)) for xi, w in zip(model.X, model.weights))
    assert predict(model, q) == pytest.approx(direct + model.bias, rel=1e-12)
    assert predict_many(model, q[None])[0] == pytest.approx(predict(model, q), rel=1e-12)
    assert np.allclose(fitted_values(model), predict_many(model, model.X), atol=1e-12)


def test_empty_model_predicts_bias():
    kp = KernelParams(np.ones(3), 1.0)
    model = SupportSet.empty(kp, bias=0.25)
    assert predict(model, np.zeros(3)) == 0.25
    assert np.all(predict_many(model, np.zeros((4, 3))) == 0.25)
    with pytest.raises(ValueError):
        predict(model, np.zeros(2))


def test_prune_removes_only_zero_weights():
    X, y, kp = _problem(10)
    hp = Hyperparams(epsilon=0.1, cost=1.0, gamma=kp.gamma)
    sol = solve_dual((X, y), hp, kp)
    model = SupportSet(X, y, np.arange(12.0), sol.weights, sol.bias, kp)
    pruned = prune_weights(model, hp)
    assert len(pruned) == np.count_nonzero(sol.weights)
    assert np.allclose(predict_many(pruned, X), predict_many(model, X), atol=1e-12)


def test_supportset_subset_slices_gram():
    X, y, kp = _problem(11)
    model = SupportSet(X, y, np.zeros(12), np.zeros(12), 0.0, kp, gram=kernel_matrix(X, X, kp))
    sub = model.subset([0, 3, 5])
    assert np.array_equal(sub.get_gram(), kernel_matrix(X[[0, 3, 5]], X[[0, 3, 5]], kp))
    grown = sub.append(X[7], y[7], 1.0)
    assert np.allclose(grown.get_gram(), kernel_matrix(X[[0, 3, 5, 7]], X[[0, 3, 5, 7]], kp), atol=1e-15)
