import numpy as np
import pytest
import scipy.optimize

from .ansatz import (
    CNOT,
    AnsatzSpec,
    build_unitary,
    circuit_gates,
    gate_counts,
    gradient,
    init_params,
    param_count,
    shifted_unitaries,
    u3,
)
from .errors import DimensionError
from .qcore import is_unitary, ket, random_state, random_unitary

rng = np.random.default_rng(99)
pauli_z = np.diag([1.0, -1.0]).astype(complex)


def _assert_close(actual, expected, atol: float, label: str):
    error = np.max(np.abs(np.asarray(actual) - np.asarray(expected)))
    if error > atol:
        raise Exception(f"{label}が正しくありません。誤差: {error:.3e}")


def _expectation_cost(observable: np.ndarray, psi: np.ndarray):
    def cost(u: np.ndarray) -> float:
        phi = u @ psi
        return float(np.real(np.vdot(phi, observable @ phi)))

    return cost


def test_param_count():
    assert param_count(AnsatzSpec(2, 1)) == 18
    assert param_count(AnsatzSpec(3, 2)) == 51
    assert param_count(AnsatzSpec(1, 0)) == 3
    for n in range(1, 6):
        for layers in range(0, 5):
            spec = AnsatzSpec(n, layers)
            assert param_count(spec) == n * (3 + 9 * layers) - 6 * layers
            counts = gate_counts(spec)
            assert counts["cnot"] == layers * (n - 1)
            assert counts["u3"] == n + layers * (3 * n - 2)
            assert 3 * counts["u3"] == param_count(spec)

    with pytest.raises(ValueError):
        AnsatzSpec(0, 1)
    with pytest.raises(ValueError):
        AnsatzSpec(2, -1)


def test_chain_order():
    gates = [g for g in circuit_gates(AnsatzSpec(3, 2)) if g.name == "cnot"]
    assert [g.qubits for g in gates] == [(0, 1), (1, 2), (1, 2), (0, 1)]


def test_zero_angles():
    spec = AnsatzSpec(2, 1)
    _assert_close(build_unitary(spec, np.zeros(param_count(spec))), CNOT, 1e-15, "CNOT01")

    # 偶数層では昇順と降順の鎖が打ち消し合う
    spec = AnsatzSpec(3, 2)
    _assert_close(build_unitary(spec, np.zeros(param_count(spec))), np.eye(8), 1e-15, "V(0)")

    # 奇数層でも|0...0>は固定される
    spec = AnsatzSpec(3, 3)
    u = build_unitary(spec, np.zeros(param_count(spec)))
    _assert_close(u[:, 0], ket(0, 8), 1e-15, "V(0)|000>")


def test_u3():
    _assert_close(u3(np.pi, 0.0, np.pi), [[0, 1], [1, 0]], 1e-15, "U3(π,0,π)")
    _assert_close(u3(0.0, 0.0, 0.0), np.eye(2), 0.0, "U3(0,0,0)")

    spec = AnsatzSpec(1, 0)
    u = build_unitary(spec, [np.pi, 0.0, np.pi])
    assert abs(abs(u[1, 0]) - 1.0) < 1e-15


def test_build_unitary_unitarity():
    spec = AnsatzSpec(3, 2)
    for _ in range(100):
        theta = init_params(spec, rng, mode="uniform")
        assert is_unitary(build_unitary(spec, theta))

    with pytest.raises(DimensionError):
        build_unitary(spec, np.zeros(param_count(spec) - 1))


def test_shifted_unitaries():
    spec = AnsatzSpec(2, 2)
    theta = init_params(spec, rng, mode="uniform")
    plus, minus = shifted_unitaries(spec, theta, shift=0.3)
    columns = [0, 2]
    plus_cols, minus_cols = shifted_unitaries(spec, theta, shift=0.3, columns=columns)

    for k in range(param_count(spec)):
        step = np.zeros_like(theta)
        step[k] = 0.3
        _assert_close(plus[k], build_unitary(spec, theta + step), 1e-12, f"U(θ+s e_{k})")
        _assert_close(minus[k], build_unitary(spec, theta - step), 1e-12, f"U(θ-s e_{k})")
        _assert_close(plus_cols[k], plus[k][:, columns], 1e-12, "列を絞ったU(θ+s e_k)")
        _assert_close(minus_cols[k], minus[k][:, columns], 1e-12, "列を絞ったU(θ-s e_k)")


def test_gradient_constant_cost():
    spec = AnsatzSpec(2, 1)
    theta = init_params(spec, rng)
    for method in ("parameter-shift", "finite-difference"):
        grad = gradient(spec, theta, lambda u: 1.5, method=method)
        assert np.max(np.abs(grad)) == 0.0


def test_gradient_single_rotation():
    spec = AnsatzSpec(1, 0)
    cost = _expectation_cost(pauli_z, ket(0, 2))
    grad = gradient(spec, [np.pi / 3, 0.0, 0.0], cost)
    assert abs(grad[0] - (-0.8660254037844386)) < 1e-12
    assert abs(grad[1]) < 1e-12
    assert abs(grad[2]) < 1e-12


def test_gradient_methods_agree():
    spec = AnsatzSpec(2, 2)
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    cost = _expectation_cost(m + m.conj().T, random_state(4, rng))
    for _ in range(5):
        theta = init_params(spec, rng, mode="uniform")
        shift_grad = gradient(spec, theta, cost, method="parameter-shift")
        fd_grad = gradient(spec, theta, cost, method="finite-difference")
        scale = max(1.0, np.max(np.abs(shift_grad)))
        assert np.max(np.abs(shift_grad - fd_grad)) <= 1e-5 * scale


def test_init_params():
    spec = AnsatzSpec(3, 2)
    theta = init_params(spec, np.random.default_rng(1))
    assert theta.shape == (51,)
    assert np.max(np.abs(theta)) <= 0.1
    assert np.array_equal(theta, init_params(spec, np.random.default_rng(1)))

    theta = init_params(spec, rng, mode="uniform")
    assert theta.min() >= 0.0 and theta.max() < 2 * np.pi

    with pytest.raises(ValueError):
        init_params(spec, rng, mode="zeros")


def test_expressivity():
    spec = AnsatzSpec(2, 4)
    target = random_unitary(4, np.random.default_rng(5))

    def cost(u: np.ndarray) -> float:
        return 1.0 - abs(np.trace(target.conj().T @ u)) ** 2 / 16

    def fun(theta):
        return cost(build_unitary(spec, theta)), gradient(spec, theta, cost)

    best = np.inf
    for seed in range(5):
        theta0 = init_params(spec, np.random.default_rng(seed), mode="uniform")
        result = scipy.optimize.minimize(fun, theta0, jac=True, method="L-BFGS-B")
        u = build_unitary(spec, result.x)
        overlap = abs(np.trace(target.conj().T @ u))
        best = min(best, np.sqrt(max(0.0, 8.0 - 2.0 * overlap)))
        if best < 0.05:
            break
    assert best < 0.05
