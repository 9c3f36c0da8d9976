import numpy as np
import pytest

from .errors import DimensionError, QuantumStateError
from .qcore import (
    SubsystemLayout,
    apply_on_subsystems,
    clamp_psd,
    complete_isometry,
    cosine_similarity,
    embed_operator,
    is_unitary,
    ket,
    kron,
    leading_eigenpair,
    partial_trace,
    projector,
    qubits,
    random_state,
    reduced_density,
    trace_distance,
    von_neumann_entropy,
)

rng = np.random.default_rng(2024)

pauli_x = np.array([[0, 1], [1, 0]], dtype=complex)
cnot = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


def _assert_close(actual, expected, atol: float, label: str):
    error = np.max(np.abs(np.asarray(actual) - np.asarray(expected)))
    if error > atol:
        raise Exception(f"{label}が正しくありません。誤差: {error:.3e}")


def _random_density(dim: int) -> np.ndarray:
    m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = m @ m.conj().T
    return rho / np.trace(rho)


def test_layout():
    layout = SubsystemLayout(dims=(4, 2), names=("memory", "output"))
    assert layout.total_dim == 8
    assert layout.index("output") == 1
    assert layout.resolve(["output", 0]) == [1, 0]

    with pytest.raises(ValueError):
        SubsystemLayout(dims=(2, 0))
    with pytest.raises(DimensionError):
        layout.resolve([0, 0])
    with pytest.raises(DimensionError):
        layout.resolve([2])


def test_apply_on_subsystems():
    layout = qubits(3)

    result = apply_on_subsystems(pauli_x, ket(0, 8), layout, [1])
    _assert_close(result, ket(2, 8), 1e-15, "Xの作用")

    expected = kron(kron(np.eye(2), pauli_x), np.eye(2))
    _assert_close(embed_operator(pauli_x, layout, ["q1"]), expected, 1e-15, "埋め込み")

    # 制御q2, 標的q0: |001> -> |101>
    embedded = embed_operator(cnot, layout, [2, 0])
    _assert_close(embedded @ ket(1, 8), ket(5, 8), 1e-15, "順序を入れ替えたCNOT")
    assert is_unitary(embedded)

    batch = np.column_stack([ket(0, 8), ket(1, 8)])
    result = apply_on_subsystems(cnot, batch, layout, [2, 0])
    _assert_close(result, embedded @ batch, 1e-15, "複数列への作用")

    with pytest.raises(DimensionError):
        apply_on_subsystems(cnot, ket(0, 8), layout, [1])
    with pytest.raises(DimensionError):
        apply_on_subsystems(pauli_x, ket(0, 4), layout, [1])


def test_partial_trace():
    rho_a = _random_density(2)
    rho_b = _random_density(3)
    layout = SubsystemLayout(dims=(2, 3), names=("a", "b"))
    joint = kron(rho_a, rho_b)

    _assert_close(partial_trace(joint, layout, ["a"]), rho_a, 1e-12, "Aの縮約")
    _assert_close(partial_trace(joint, layout, ["b"]), rho_b, 1e-12, "Bの縮約")

    psi = random_state(12, rng)
    layout = SubsystemLayout(dims=(2, 3, 2))
    _assert_close(
        reduced_density(psi, layout, [2, 0]),
        partial_trace(projector(psi), layout, [0, 2]),
        1e-12,
        "純粋状態の縮約",
    )


def test_cosine_similarity():
    rho = _random_density(4)
    assert abs(cosine_similarity(rho, rho) - 1.0) < 1e-12
    assert cosine_similarity(projector(ket(0, 2)), projector(ket(1, 2))) == 0.0

    with pytest.raises(QuantumStateError):
        cosine_similarity(np.zeros((2, 2)), rho[:2, :2])
    with pytest.raises(DimensionError):
        cosine_similarity(np.eye(2) / 2, np.eye(4) / 4)


def test_entropy():
    assert abs(von_neumann_entropy(np.eye(4) / 4) - 2.0) < 1e-12
    assert von_neumann_entropy(projector(random_state(4, rng))) < 1e-9
    assert abs(trace_distance(projector(ket(0, 2)), projector(ket(1, 2))) - 1.0) < 1e-12


def test_clamp_psd():
    rho = np.diag([1.0, -1e-12]).astype(complex)
    clamped = clamp_psd(rho)
    assert np.linalg.eigvalsh(clamped).min() >= 0.0

    with pytest.raises(QuantumStateError):
        clamp_psd(np.diag([1.0, -1e-6]))


def test_leading_eigenpair():
    m = np.diag([0.5, 2.0, -1.0]).astype(complex)
    for method in ("dense", "power"):
        value, vector = leading_eigenpair(m, method=method, v0=np.ones(3))
        assert abs(value - 2.0) < 1e-10
        assert abs(abs(vector[1]) - 1.0) < 1e-10

    with pytest.raises(DimensionError):
        leading_eigenpair(np.zeros((2, 3)))


def test_complete_isometry():
    column = (ket(0, 4) + ket(3, 4)) / np.sqrt(2)
    u = complete_isometry([column])
    assert is_unitary(u)
    _assert_close(u[:, 0], column, 1e-15, "先頭列")

    with pytest.raises(QuantumStateError):
        complete_isometry([ket(0, 4), column])
