import numpy as np

from .optimizer import LbfgsHessianApproximation, minimize_lbfgs, minimize_nelder_mead


def _rosenbrock(x: np.ndarray) -> tuple[float, np.ndarray]:
    f = (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
    g = np.array(
        [-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)]
    )
    return f, g


def _quadratic(a: np.ndarray, b: np.ndarray):
    def fun_and_grad(x):
        return 0.5 * x @ a @ x - b @ x, a @ x - b

    return fun_and_grad


def _assert_non_increasing(trace: list[float]):
    for before, after in zip(trace, trace[1:]):
        if after > before:
            raise Exception(f"コストが増加しています。{before} -> {after}")


def test_rosenbrock():
    result = minimize_lbfgs(_rosenbrock, np.array([-1.2, 1.0]), tol_cost=0.0, gtol=1e-6)
    assert result.converged
    assert not result.line_search_failed
    assert np.max(np.abs(result.x - 1.0)) < 1e-5
    _assert_non_increasing(result.cost_trace)
    assert len(result.cost_trace) == result.iterations + 1


def test_quadratic():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(6, 6))
    a = m @ m.T + 6 * np.eye(6)
    b = rng.normal(size=6)
    result = minimize_lbfgs(_quadratic(a, b), np.zeros(6), gtol=1e-10, tol_cost=0.0)
    assert np.max(np.abs(result.x - np.linalg.solve(a, b))) < 1e-7
    _assert_non_increasing(result.cost_trace)


def test_iteration_cap():
    result = minimize_lbfgs(_rosenbrock, np.array([-1.2, 1.0]), max_iter=3)
    assert result.iterations == 3
    assert result.converged
    assert result.fun <= result.cost_trace[0]


def test_line_search_failure():
    def wrong_gradient(x):
        return float(x @ x), -2 * x

    result = minimize_lbfgs(wrong_gradient, np.array([1.0, -2.0]))
    assert result.line_search_failed
    assert not result.converged
    assert result.fun == 5.0


def test_hessian_approximation():
    a = np.diag([1.0, 4.0])
    hessian = LbfgsHessianApproximation(history=10)
    hessian.append(np.array([1.0, 0.0]), a @ np.array([1.0, 0.0]))
    hessian.append(np.array([0.0, 1.0]), a @ np.array([0.0, 1.0]))
    g = np.array([2.0, 8.0])
    assert np.max(np.abs(hessian.inverse_action(g) - np.linalg.solve(a, g))) < 1e-12

    assert not hessian.append(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert len(hessian) == 2


def test_nelder_mead():
    def fun(x):
        return float((x[0] - 0.5) ** 2 + 2 * (x[1] + 0.25) ** 2)

    result = minimize_nelder_mead(fun, np.array([0.0, 0.0]), max_iter=2000, tol_cost=1e-14)
    assert np.max(np.abs(result.x - np.array([0.5, -0.25]))) < 1e-4
    _assert_non_increasing(result.cost_trace)
