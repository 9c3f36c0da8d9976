"""
層状パラメータ化回路（U3回転と隣接CNOTブロック）。

構造:
    初期層: 各量子ビットにU3（3n個のパラメータ）
    各層: 各量子ビットにU3、続いて隣接ペアのブロック（CNOT → 両ビットにU3）をn-1個
          ブロックの並びは奇数層で昇順 (0,1),(1,2),...、偶数層で降順
    パラメータ数: n(3 + 9L) - 6L
"""

from dataclasses import dataclass
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from .errors import DimensionError
from .logger import CustomLogger
from .qcore import apply_on_subsystems, qubits

logger = CustomLogger(name=__name__)

PARAMETER_SHIFT = np.pi / 2
FINITE_DIFFERENCE_STEP = 1e-5

CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)

GradientMethod = Literal["parameter-shift", "finite-difference"]
InitMode = Literal["near-identity", "uniform"]


@dataclass(frozen=True)
class AnsatzSpec:
    """
    回路の形。
    Attributes:
        n_qubits (int): 量子ビット数（1以上）。
        n_layers (int): 層数（0以上）。
    """

    n_qubits: int
    n_layers: int

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError(f"量子ビット数は1以上である必要があります。{self.n_qubits}")
        if self.n_layers < 0:
            raise ValueError(f"層数は0以上である必要があります。{self.n_layers}")

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def to_dict(self) -> dict:
        return {"n_qubits": self.n_qubits, "n_layers": self.n_layers}

    @classmethod
    def from_dict(cls, data: dict) -> "AnsatzSpec":
        return cls(n_qubits=int(data["n_qubits"]), n_layers=int(data["n_layers"]))


@dataclass(frozen=True)
class Gate:
    """
    回路中の1ゲート。
    Attributes:
        name (Literal["u3", "cnot"]): ゲートの種類。
        qubits (tuple[int, ...]): 作用する量子ビット。CNOTは(制御, 標的)。
        offset (int): U3の3つのパラメータの先頭位置。CNOTは-1。
    """

    name: Literal["u3", "cnot"]
    qubits: tuple[int, ...]
    offset: int = -1


def param_count(spec: AnsatzSpec) -> int:
    return spec.n_qubits * (3 + 9 * spec.n_layers) - 6 * spec.n_layers


def u3(theta: float, phi: float, lam: float) -> np.ndarray:
    """U3(θ,φ,λ) = [[cos(θ/2), -e^{iλ}sin(θ/2)], [e^{iφ}sin(θ/2), e^{i(φ+λ)}cos(θ/2)]]"""

    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    return np.array(
        [
            [c, -np.exp(1j * lam) * s],
            [np.exp(1j * phi) * s, np.exp(1j * (phi + lam)) * c],
        ],
        dtype=complex,
    )


def circuit_gates(spec: AnsatzSpec) -> list[Gate]:
    """回路を適用順のゲート列として返します。"""

    n = spec.n_qubits
    gates = []
    offset = 0

    def add_u3(qubit: int):
        nonlocal offset
        gates.append(Gate(name="u3", qubits=(qubit,), offset=offset))
        offset += 3

    for q in range(n):
        add_u3(q)

    for layer in range(1, spec.n_layers + 1):
        for q in range(n):
            add_u3(q)
        pairs = [(q, q + 1) for q in range(n - 1)]
        if layer % 2 == 0:
            pairs.reverse()
        for control, target in pairs:
            gates.append(Gate(name="cnot", qubits=(control, target)))
            add_u3(control)
            add_u3(target)

    if offset != param_count(spec):
        raise RuntimeError(f"パラメータ数が一致しません。{offset} != {param_count(spec)}")
    return gates


def check_params(spec: AnsatzSpec, theta: Sequence[float]) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (param_count(spec),):
        raise DimensionError(
            f"パラメータ数が回路と一致しません。{theta.shape} != ({param_count(spec)},)"
        )
    return theta


def _gate_matrix(gate: Gate, theta: np.ndarray) -> np.ndarray:
    if gate.name == "cnot":
        return CNOT
    return u3(*theta[gate.offset : gate.offset + 3])


def _initial_columns(spec: AnsatzSpec, columns: Optional[Sequence[int]]) -> np.ndarray:
    identity = np.eye(spec.dim, dtype=complex)
    return identity if columns is None else identity[:, list(columns)]


def build_unitary(
    spec: AnsatzSpec, theta: Sequence[float], columns: Optional[Sequence[int]] = None
) -> np.ndarray:
    """回路のユニタリ（columnsを指定した場合はその列のみ）を返します。"""

    theta = check_params(spec, theta)
    layout = qubits(spec.n_qubits)
    state = _initial_columns(spec, columns)
    for gate in circuit_gates(spec):
        state = apply_on_subsystems(_gate_matrix(gate, theta), state, layout, gate.qubits)
    return state


def shifted_unitaries(
    spec: AnsatzSpec,
    theta: Sequence[float],
    shift: float = PARAMETER_SHIFT,
    columns: Optional[Sequence[int]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """各パラメータを±shiftずらした回路を一度に計算します。

    前方の積（状態側）と後方の積（行列側）を使い回すため、全パラメータ分をゲート数に比例する回数の積で求めます。

    Args:
        spec (AnsatzSpec): 回路の形
        theta (Sequence[float]): パラメータ
        shift (float): ずらし幅
        columns (Optional[Sequence[int]]): 必要な列。省略時は全列

    Returns:
        tuple[np.ndarray, np.ndarray]: U(θ + shift·e_k), U(θ - shift·e_k)。形状はいずれも(P, 2^n, 列数)
    """

    theta = check_params(spec, theta)
    layout = qubits(spec.n_qubits)
    gates = circuit_gates(spec)

    prefixes = [_initial_columns(spec, columns)]
    for gate in gates:
        prefixes.append(
            apply_on_subsystems(_gate_matrix(gate, theta), prefixes[-1], layout, gate.qubits)
        )

    # suffixes[k] = G_last ... G_k
    suffixes = [None] * (len(gates) + 1)
    suffixes[len(gates)] = np.eye(spec.dim, dtype=complex)
    for k in reversed(range(len(gates))):
        gate = gates[k]
        suffixes[k] = apply_on_subsystems(
            _gate_matrix(gate, theta).T, suffixes[k + 1].T, layout, gate.qubits
        ).T

    n_params = param_count(spec)
    shape = (n_params,) + prefixes[0].shape
    plus = np.zeros(shape, dtype=complex)
    minus = np.zeros(shape, dtype=complex)
    for k, gate in enumerate(gates):
        if gate.name != "u3":
            continue
        angles = theta[gate.offset : gate.offset + 3]
        for a in range(3):
            for sign, out in ((1.0, plus), (-1.0, minus)):
                moved = angles.copy()
                moved[a] += sign * shift
                applied = apply_on_subsystems(u3(*moved), prefixes[k], layout, gate.qubits)
                out[gate.offset + a] = suffixes[k + 1] @ applied
    return plus, minus


def gradient(
    spec: AnsatzSpec,
    theta: Sequence[float],
    cost: Callable[[np.ndarray], float],
    method: GradientMethod = "parameter-shift",
    h: float = FINITE_DIFFERENCE_STEP,
) -> np.ndarray:
    """回路ユニタリの関数costの勾配。

    パラメータシフト則は、costがUρU†について線形（期待値型）のときに厳密です。

    Args:
        spec (AnsatzSpec): 回路の形
        theta (Sequence[float]): パラメータ
        cost (Callable[[np.ndarray], float]): ユニタリを受け取りスカラーを返す関数
        method (GradientMethod): "parameter-shift"（±π/2）または"finite-difference"（中心差分）
        h (float): 中心差分の刻み

    Returns:
        np.ndarray: 勾配
    """

    theta = check_params(spec, theta)
    if method == "parameter-shift":
        plus, minus = shifted_unitaries(spec, theta)
        return np.array([(cost(p) - cost(m)) / 2 for p, m in zip(plus, minus)])

    if method == "finite-difference":
        grad = np.zeros_like(theta)
        for k in range(len(theta)):
            step = np.zeros_like(theta)
            step[k] = h
            grad[k] = (cost(build_unitary(spec, theta + step)) - cost(build_unitary(spec, theta - step))) / (2 * h)
        return grad

    raise ValueError(f"未対応の勾配計算方法です。{method}")


def init_params(
    spec: AnsatzSpec,
    rng: np.random.Generator,
    mode: InitMode = "near-identity",
    scale: float = 0.1,
) -> np.ndarray:
    """初期パラメータ。near-identityは[-scale, scale]、uniformは[0, 2π)の一様分布。"""

    n = param_count(spec)
    if mode == "near-identity":
        return rng.uniform(-scale, scale, size=n)
    if mode == "uniform":
        return rng.uniform(0.0, 2 * np.pi, size=n)
    raise ValueError(f"未対応の初期化方法です。{mode}")


def gate_counts(spec: AnsatzSpec) -> dict[str, int]:
    gates = circuit_gates(spec)
    return {
        "u3": sum(1 for g in gates if g.name == "u3"),
        "cnot": sum(1 for g in gates if g.name == "cnot"),
    }
