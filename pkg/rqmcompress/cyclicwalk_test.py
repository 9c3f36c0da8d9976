import numpy as np
import pytest

from .cyclicwalk import (
    GramMatrix,
    ShiftDistribution,
    TransitionMatrix,
    _interval_masses,
    build_model,
    build_walk,
    classical_complexity,
    default_shift,
    discretize_shift,
    gram_matrix,
    memory_states,
    transition_matrix,
)
from .errors import NonPsdGramError
from .qcore import is_unitary, ket, kron
from .rqm import cq, exact_stationary, kraus_from_unitary, sample_outputs


def _assert_close(actual, expected, atol: float, label: str):
    error = np.max(np.abs(np.asarray(actual) - np.asarray(expected)))
    if error > atol:
        raise Exception(f"{label}が正しくありません。誤差: {error:.3e}")


def _assert_gram(states: np.ndarray, gram: GramMatrix, label: str):
    _assert_close(states.conj() @ states.T, gram.g, 1e-9, label)


def _riemann_masses(mean: float, sigma: float, n_sites: int, points: int) -> np.ndarray:
    x = (np.arange(points) + 0.5) / points
    density = np.zeros(points)
    for image in range(-3, 4):
        density += np.exp(-((x + image - mean) ** 2) / (2 * sigma**2))
    density /= sigma * np.sqrt(2 * np.pi)
    sites = np.floor(x * n_sites + 0.5).astype(int) % n_sites
    return np.bincount(sites, weights=density / points, minlength=n_sites)


def test_discretize_shift_closed_forms():
    masses = discretize_shift(ShiftDistribution.point_mass(1 / 8), 8)
    _assert_close(masses, ket(1, 8).real, 0.0, "点質量")

    masses = discretize_shift(ShiftDistribution.uniform_interval(0.0, 1.0), 8)
    _assert_close(masses, np.full(8, 1 / 8), 1e-15, "一様分布")

    masses = discretize_shift(ShiftDistribution.from_table([0.5, 0.25, 0.25, 0.0]), 4)
    _assert_close(masses, [0.5, 0.25, 0.25, 0.0], 1e-15, "確率表")

    with pytest.raises(ValueError):
        discretize_shift(ShiftDistribution.point_mass(0.0), 6)
    with pytest.raises(ValueError):
        discretize_shift(ShiftDistribution.point_mass(0.0), 1)


def test_discretize_shift_gaussian():
    masses = discretize_shift(ShiftDistribution.wrapped_gaussian(0.0, 0.05), 8)
    assert abs(masses.sum() - 1.0) < 1e-9
    _assert_close(masses, _riemann_masses(0.0, 0.05, 8, 1000000), 1e-6, "wrapped-gaussianの質量")


def test_discretize_refinement():
    # 中心が揃う奇数倍の細分では、I_mはちょうど3つの子区間に分かれる
    for shift in (
        ShiftDistribution.wrapped_gaussian(0.3, 0.07),
        ShiftDistribution.uniform_interval(0.1, 0.45),
    ):
        coarse = _interval_masses(shift, 4)
        fine = _interval_masses(shift, 12)
        children = np.array([fine[[3 * m - 1, 3 * m, (3 * m + 1) % 12]].sum() for m in range(4)])
        _assert_close(coarse, children, 1e-9, f"{shift.kind}の細分")


def test_shift_distribution_validation():
    with pytest.raises(ValueError):
        ShiftDistribution.wrapped_gaussian(0.0, 0.0)
    with pytest.raises(ValueError):
        ShiftDistribution.uniform_interval(0.5, 0.4)
    with pytest.raises(ValueError):
        ShiftDistribution.point_mass(1.0)
    with pytest.raises(ValueError):
        ShiftDistribution.from_table([0.5, 0.2])
    with pytest.raises(ValueError):
        ShiftDistribution.from_dict({"kind": "cauchy", "params": {}})

    shift = ShiftDistribution.wrapped_gaussian(0.25, 0.1)
    assert ShiftDistribution.from_dict(shift.to_dict()) == shift
    assert shift.with_sigma(0.2).sigma == 0.2
    assert default_shift(8).sigma == 1 / 16


def test_transition_matrix():
    _assert_close(transition_matrix([1.0, 0.0, 0.0, 0.0]).p, np.eye(4), 0.0, "恒等遷移")
    _assert_close(transition_matrix(np.full(4, 0.25)).p, np.full((4, 4), 0.25), 0.0, "一様遷移")

    p = transition_matrix([0.5, 0.5, 0.0, 0.0]).p
    _assert_close(p[:, 0], [0.5, 0.5, 0.0, 0.0], 0.0, "第0列")
    _assert_close(p[:, 1], [0.0, 0.5, 0.5, 0.0], 0.0, "第1列")
    _assert_close(p[:, 3], [0.5, 0.0, 0.0, 0.5], 0.0, "第3列")

    with pytest.raises(ValueError):
        TransitionMatrix(n_sites=2, p=np.array([[1.0, 0.5], [0.0, 0.5]]))
    with pytest.raises(ValueError):
        transition_matrix([0.6, 0.6])


def test_gram_matrix():
    _assert_close(gram_matrix(transition_matrix([1.0, 0.0, 0.0, 0.0])).g, np.eye(4), 0.0, "恒等")
    _assert_close(gram_matrix(transition_matrix(np.full(4, 0.25))).g, np.ones((4, 4)), 1e-15, "一様")

    transition = transition_matrix(
        discretize_shift(ShiftDistribution.wrapped_gaussian(0.0, 0.1), 4)
    )
    gram = gram_matrix(transition)
    p = transition.p
    expected = np.array(
        [[sum(np.sqrt(p[k, i] * p[k, j]) for k in range(4)) for j in range(4)] for i in range(4)]
    )
    _assert_close(gram.g, expected, 1e-12, "グラム行列")
    assert np.linalg.eigvalsh(gram.g).min() > -1e-9


def test_memory_states():
    for masses in ([1.0, 0.0, 0.0, 0.0], np.full(4, 0.25)):
        gram = gram_matrix(transition_matrix(masses))
        _assert_gram(memory_states(gram), gram, "メモリ状態の重なり")

    states = memory_states(gram_matrix(transition_matrix(np.full(4, 0.25))))
    for j in range(1, 4):
        assert abs(abs(np.vdot(states[0], states[j])) - 1.0) < 1e-12

    gram = gram_matrix(transition_matrix(discretize_shift(default_shift(8), 8)))
    _assert_gram(memory_states(gram), gram, "ランダムウォークの重なり")

    with pytest.raises(NonPsdGramError):
        memory_states(GramMatrix(g=np.array([[1.0, 2.0], [2.0, 1.0]])))


def test_build_model_isometry():
    for shift, n in (
        (ShiftDistribution.wrapped_gaussian(0.0, 0.1), 2),
        (default_shift(8), 3),
        (ShiftDistribution.uniform_interval(0.0, 1.0), 2),
        (ShiftDistribution.from_table([0.7, 0.3]), 3),
    ):
        walk = build_walk(n, shift)
        model = walk.model
        assert is_unitary(model.u)

        p = walk.transition.p
        sigma = memory_states(gram_matrix(walk.transition))
        d = model.d_out
        for j in range(d):
            expected = sum(np.sqrt(p[k, j]) * kron(sigma[k], ket(k, d)) for k in range(d))
            _assert_close(model.apply(kron(sigma[j], ket(0, d))), expected, 1e-9, f"{shift.kind}のU")


def test_build_model_identity():
    transition = transition_matrix([1.0, 0.0, 0.0, 0.0])
    model = build_model(transition)
    sigma = memory_states(gram_matrix(transition))
    for j in range(4):
        _assert_close(
            model.apply(kron(sigma[j], ket(0, 4))), kron(sigma[j], ket(j, 4)), 1e-12, "恒等遷移のU"
        )


def test_build_model_single_memory_state():
    walk = build_walk(1, ShiftDistribution.from_table([0.5, 0.5]))
    rho_m = exact_stationary(kraus_from_unitary(walk.model)).rho
    assert cq(rho_m) < 1e-9


def test_build_model_pair_statistics():
    walk = build_walk(2, ShiftDistribution.wrapped_gaussian(0.0, 0.1))
    outputs = np.array(sample_outputs(walk.model, 100001, seed=11))

    pairs = np.zeros((4, 4))
    np.add.at(pairs, (outputs[1:], outputs[:-1]), 1.0)
    expected = walk.transition.p / 4
    tv = 0.5 * np.sum(np.abs(pairs / pairs.sum() - expected))
    assert tv < 0.02


def test_complexity_trend():
    values = []
    for sigma in (0.02, 0.05, 0.1, 0.2, 0.4):
        model = build_walk(3, ShiftDistribution.wrapped_gaussian(0.0, sigma)).model
        values.append(cq(exact_stationary(kraus_from_unitary(model)).rho))
    for left, right in zip(values, values[1:]):
        assert right <= left + 1e-9
    assert all(v <= 3.0 + 1e-9 for v in values)

    point = build_walk(3, ShiftDistribution.point_mass(0.125)).model
    assert abs(cq(exact_stationary(kraus_from_unitary(point)).rho) - 3.0) < 1e-9
    uniform = build_walk(3, ShiftDistribution.uniform_interval(0.0, 1.0)).model
    assert cq(exact_stationary(kraus_from_unitary(uniform)).rho) < 1e-9


def test_classical_complexity():
    assert classical_complexity(transition_matrix(np.full(8, 1 / 8))) == 0.0
    walk = build_walk(3)
    assert abs(classical_complexity(walk.transition) - 3.0) < 1e-12
