"""
密な複素線形代数の基本操作。

行列・状態ベクトル・密度行列はすべてcomplex128のnumpy配列で扱います。
テンソル因子の並びは常にSubsystemLayoutで明示し、暗黙の順序は使いません。
"""

from dataclasses import dataclass
from math import prod
from typing import Literal, Optional, Sequence, Union

import numpy as np
import scipy.linalg
from scipy.stats import unitary_group

from .errors import DimensionError, QuantumStateError
from .logger import CustomLogger

logger = CustomLogger(name=__name__)

PSD_TOLERANCE = 1e-9
ENTROPY_CUTOFF = 1e-12
ISOMETRY_TOLERANCE = 1e-10


@dataclass(frozen=True)
class SubsystemLayout:
    """
    テンソル積空間の因子分解。
    Attributes:
        dims (tuple[int, ...]): テンソル順の各因子の次元。
        names (tuple[str, ...]): 各因子の名前。省略時は"f0","f1",...。
    Methods:
        total_dim -> int:
            全体の次元（因子次元の積）。
        index(name) -> int:
            名前から因子インデックスを返します。
    """

    dims: tuple[int, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) == 0 or any(d < 1 for d in dims):
            raise ValueError(f"因子の次元は1以上である必要があります。{self.dims}")
        object.__setattr__(self, "dims", dims)

        names = tuple(self.names) or tuple(f"f{i}" for i in range(len(dims)))
        if len(names) != len(dims) or len(set(names)) != len(names):
            raise ValueError(f"因子名が次元と一致しません。{names} / {dims}")
        object.__setattr__(self, "names", names)

    @property
    def total_dim(self) -> int:
        return prod(self.dims)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"因子が見つかりません。: {name} in {self.names}")

    def resolve(self, targets: Sequence[Union[int, str]]) -> list[int]:
        result = [self.index(t) if isinstance(t, str) else int(t) for t in targets]
        if any(t < 0 or t >= len(self.dims) for t in result):
            raise DimensionError(f"因子インデックスが範囲外です。{targets}")
        if len(set(result)) != len(result):
            raise DimensionError(f"因子インデックスが重複しています。{targets}")
        return result


def qubits(n: int, prefix: str = "q") -> SubsystemLayout:
    return SubsystemLayout(dims=(2,) * n, names=tuple(f"{prefix}{i}" for i in range(n)))


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(np.asarray(a), np.asarray(b))


def ket(index: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def projector(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def is_unitary(u: np.ndarray, atol: float = ISOMETRY_TOLERANCE) -> bool:
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    return bool(np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0])) <= atol)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 1:
        return np.exp(2j * np.pi * rng.random()).reshape(1, 1)
    return unitary_group.rvs(dim, random_state=rng)


def random_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def apply_on_subsystems(
    u: np.ndarray,
    state: np.ndarray,
    layout: SubsystemLayout,
    targets: Sequence[Union[int, str]],
) -> np.ndarray:
    """指定した因子にのみuを作用させます。

    Args:
        u (np.ndarray): 対象因子の次元積と同じサイズの正方行列
        state (np.ndarray): 形状(total_dim,)または(total_dim, m)。後者は各列に作用します。
        layout (SubsystemLayout): stateの因子分解
        targets (Sequence[int | str]): 作用させる因子（uのテンソル順）

    Raises:
        DimensionError: 次元が一致しない場合

    Returns:
        np.ndarray: stateと同じ形状の結果
    """

    state = np.asarray(state)
    if state.shape[0] != layout.total_dim:
        raise DimensionError(
            f"状態の次元がレイアウトと一致しません。{state.shape[0]} != {layout.total_dim}"
        )

    target_index = layout.resolve(targets)
    target_dims = [layout.dims[t] for t in target_index]
    d_t = prod(target_dims)
    if u.shape != (d_t, d_t):
        raise DimensionError(f"演算子の次元が対象因子と一致しません。{u.shape} != {d_t}")

    front = list(range(len(target_index)))
    batch_shape = state.shape[1:]
    psi = state.reshape(layout.dims + batch_shape)
    psi = np.moveaxis(psi, target_index, front)
    rest_shape = psi.shape[len(target_index):]
    psi = (u @ psi.reshape(d_t, -1)).reshape(tuple(target_dims) + rest_shape)
    psi = np.moveaxis(psi, front, target_index)
    return psi.reshape((layout.total_dim,) + batch_shape)


def embed_operator(
    u: np.ndarray, layout: SubsystemLayout, targets: Sequence[Union[int, str]]
) -> np.ndarray:
    """対象因子に作用するuを全空間の行列に埋め込みます。"""

    identity = np.eye(layout.total_dim, dtype=complex)
    return apply_on_subsystems(u, identity, layout, targets)


def partial_trace(
    rho: np.ndarray, layout: SubsystemLayout, keep: Sequence[Union[int, str]]
) -> np.ndarray:
    """keepに含まれない因子をトレースアウトします。残る因子はレイアウト順に並びます。"""

    rho = np.asarray(rho)
    d = layout.total_dim
    if rho.shape != (d, d):
        raise DimensionError(f"密度行列の次元がレイアウトと一致しません。{rho.shape} != {d}")

    keep_index = sorted(layout.resolve(keep))
    n = len(layout.dims)
    rho_t = rho.reshape(layout.dims + layout.dims)

    row_index = list(range(n))
    col_index = list(range(n, 2 * n))
    for k in range(n):
        if k not in keep_index:
            col_index[k] = row_index[k]
    out_index = [row_index[k] for k in keep_index] + [col_index[k] for k in keep_index]

    reduced = np.einsum(rho_t, row_index + col_index, out_index)
    d_keep = prod(layout.dims[k] for k in keep_index)
    return reduced.reshape(d_keep, d_keep)


def reduced_density(
    psi: np.ndarray, layout: SubsystemLayout, keep: Sequence[Union[int, str]]
) -> np.ndarray:
    """純粋状態psiの縮約密度行列。partial_trace(|psi><psi|)と同値で、密度行列を作りません。"""

    psi = np.asarray(psi)
    if psi.shape != (layout.total_dim,):
        raise DimensionError(f"状態の次元がレイアウトと一致しません。{psi.shape}")

    keep_index = sorted(layout.resolve(keep))
    rest = [k for k in range(len(layout.dims)) if k not in keep_index]
    tensor = np.moveaxis(
        psi.reshape(layout.dims), keep_index, list(range(len(keep_index)))
    )
    d_keep = prod(layout.dims[k] for k in keep_index)
    mat = tensor.reshape(d_keep, prod(layout.dims[k] for k in rest))
    return mat @ mat.conj().T


def clamp_psd(rho: np.ndarray) -> np.ndarray:
    """[-1e-9, 0)の負の固有値を0に丸めたエルミート行列を返します。"""

    rho = (np.asarray(rho) + np.asarray(rho).conj().T) / 2
    values, vectors = np.linalg.eigh(rho)
    if values.min() < -PSD_TOLERANCE:
        raise QuantumStateError(f"半正定値ではありません。最小固有値: {values.min()}")
    if values.min() < 0:
        logger.debug(f"PSDのずれを補正します。最小固有値: {values.min()}")
        values = np.clip(values, 0.0, None)
        rho = (vectors * values) @ vectors.conj().T
    return rho


def purity(rho: np.ndarray) -> float:
    rho = np.asarray(rho)
    return float(np.real(np.vdot(rho, rho)))


def cosine_similarity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Tr[ρσ]/√(Tr[ρ²]Tr[σ²])。結果は[0, 1]に丸めます。"""

    rho = np.asarray(rho)
    sigma = np.asarray(sigma)
    if rho.shape != sigma.shape or rho.ndim != 2:
        raise DimensionError(f"密度行列の次元が一致しません。{rho.shape} != {sigma.shape}")

    p_rho = purity(rho)
    p_sigma = purity(sigma)
    if p_rho <= 0.0 or p_sigma <= 0.0:
        raise QuantumStateError("純度0の状態は比較できません。")

    overlap = float(np.real(np.vdot(rho, sigma)))
    return float(np.clip(overlap / np.sqrt(p_rho * p_sigma), 0.0, 1.0))


def von_neumann_entropy(rho: np.ndarray) -> float:
    """フォン・ノイマンエントロピー（ビット）"""

    values = np.linalg.eigvalsh(clamp_psd(rho))
    values = values[values > ENTROPY_CUTOFF]
    return float(max(0.0, -np.sum(values * np.log2(values))))


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    diff = np.asarray(rho) - np.asarray(sigma)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh((diff + diff.conj().T) / 2))))


def spectrum_by_magnitude(m: np.ndarray) -> np.ndarray:
    values = np.linalg.eigvals(np.asarray(m))
    return values[np.argsort(-np.abs(values), kind="stable")]


def leading_eigenpair(
    m: np.ndarray,
    method: Literal["dense", "power"] = "dense",
    tol: float = 1e-12,
    max_iter: int = 10000,
    v0: Optional[np.ndarray] = None,
) -> tuple[complex, np.ndarray]:
    """絶対値最大の固有値と右固有ベクトル（2ノルム1）を返します。

    Args:
        m (np.ndarray): 正方行列
        method (Literal["dense", "power"]): denseは全固有値分解、powerはべき乗法
        tol (float): べき乗法の収束判定（残差）
        max_iter (int): べき乗法の反復上限。超えた場合はdenseにフォールバックします。
        v0 (Optional[np.ndarray]): べき乗法の初期ベクトル

    Returns:
        tuple[complex, np.ndarray]: 固有値, 固有ベクトル
    """

    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"正方行列ではありません。{m.shape}")

    if method == "power":
        v = np.ones(m.shape[0], dtype=complex) if v0 is None else np.asarray(v0, complex)
        v = v / np.linalg.norm(v)
        for _ in range(max_iter):
            w = m @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                break
            value = np.vdot(v, w)
            w = w / norm
            if np.linalg.norm(m @ w - value * w) <= tol * max(1.0, abs(value)):
                return complex(np.vdot(w, m @ w)), w
            v = w
        logger.debug("べき乗法が収束しないため全固有値分解を使用します。")

    values, vectors = np.linalg.eig(m)
    i = int(np.argmax(np.abs(values)))
    v = vectors[:, i]
    return complex(values[i]), v / np.linalg.norm(v)


def complete_isometry(columns: Union[np.ndarray, Sequence[np.ndarray]]) -> np.ndarray:
    """正規直交な列を先頭に持つユニタリ行列を返します。

    Raises:
        QuantumStateError: 列が正規直交でない場合
    """

    if isinstance(columns, np.ndarray) and columns.ndim == 2:
        q = np.asarray(columns, dtype=complex)
    else:
        q = np.column_stack([np.asarray(c, dtype=complex) for c in columns])

    dim, k = q.shape
    if k > dim:
        raise DimensionError(f"列数が次元を超えています。{k} > {dim}")
    if np.linalg.norm(q.conj().T @ q - np.eye(k)) > ISOMETRY_TOLERANCE:
        raise QuantumStateError("入力列が正規直交ではありません。")

    if k == dim:
        return q
    complement = scipy.linalg.null_space(q.conj().T)
    return np.hstack([q, complement[:, : dim - k]])
