"""
再帰量子モデルの動作：クラウス分解・1ステップの測定とリセット・定常状態・メモリアンサンブル。
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NumericalError, QuantumStateError
from .logger import CustomLogger
from .model import KrausFamily, MemoryEnsemble, Rqm
from .qcore import clamp_psd, ket, projector, von_neumann_entropy

logger = CustomLogger(name=__name__)

MIN_PROBABILITY = 1e-14
FIXED_POINT_RCOND = 1e-9


@dataclass(frozen=True, eq=False)
class StationaryState:
    """
    メモリチャネルの定常状態。
    Attributes:
        rho (np.ndarray): 定常密度行列ρ_M。
        degenerate (bool): 固有値1の固有空間が縮退している場合True。|0><0|から到達する状態を返します。
        residual (float): ||ε(ρ_M) - ρ_M||_F
    """

    rho: np.ndarray = field(repr=False)
    degenerate: bool
    residual: float


def kraus_from_unitary(model: Rqm) -> KrausFamily:
    """A^x(i, j) = U((i, x), (j, 0))"""

    d_mem = model.memory_dim
    u = model.u.reshape(d_mem, model.d_out, d_mem, model.d_out)
    return KrausFamily(operators=np.transpose(u[:, :, :, 0], (1, 0, 2)))


def step(
    kraus: KrausFamily, mem: np.ndarray, rng: np.random.Generator
) -> tuple[int, np.ndarray, float]:
    """出力を1つ測定し、メモリを更新します。

    Args:
        kraus (KrausFamily): クラウス演算子
        mem (np.ndarray): 正規化されたメモリ状態
        rng (np.random.Generator): 乱数生成器

    Raises:
        QuantumStateError: 全ての出力確率が1e-14未満の場合（モデルが壊れている）

    Returns:
        tuple[int, np.ndarray, float]: 出力記号, 更新後のメモリ状態, その出力の確率
    """

    amplitudes = kraus.operators @ mem
    probabilities = np.sum(np.abs(amplitudes) ** 2, axis=1)
    if np.all(probabilities < MIN_PROBABILITY):
        raise QuantumStateError("全ての出力確率が0です。クラウス演算子が不正です。")

    total = probabilities.sum()
    x = int(rng.choice(len(probabilities), p=probabilities / total))
    p = float(probabilities[x])
    return x, amplitudes[x] / np.sqrt(p), p


def sample_outputs(model: Rqm, length: int, seed: int) -> list[int]:
    """|0>から測定とリセットを繰り返した出力列"""

    kraus = kraus_from_unitary(model)
    rng = np.random.default_rng(seed)
    mem = ket(0, model.memory_dim)
    outputs = []
    for _ in range(length):
        x, mem, _ = step(kraus, mem, rng)
        outputs.append(x)
    return outputs


def sample_memory_ensemble(
    model: Rqm, k: int, burn_in: int, seed: int
) -> MemoryEnsemble:
    """
    |0>から burn_in ステップ測定とリセットを行った後のメモリ状態をk個サンプリングします。
    各軌道はSeedSequence(seed)から派生した独立なシードを使うため、結果は軌道番号順に決まります。
    """

    if burn_in < 1:
        raise ValueError(f"burn_inは1以上である必要があります。{burn_in}")
    if k < 0:
        raise ValueError(f"サンプル数が負です。{k}")

    kraus = kraus_from_unitary(model)
    states = np.zeros((k, model.memory_dim), dtype=complex)
    histories = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(k)):
        rng = np.random.default_rng(child)
        mem = ket(0, model.memory_dim)
        history = []
        for _ in range(burn_in):
            x, mem, _ = step(kraus, mem, rng)
            history.append(x)
        states[i] = mem / np.linalg.norm(mem)
        histories.append(history)

    logger.debug(f"メモリアンサンブルを生成しました。K={k}, burn_in={burn_in}, seed={seed}")
    return MemoryEnsemble(
        n_mem=model.n_mem,
        d_out=model.d_out,
        states=states,
        histories=histories,
        burn_in=burn_in,
        seed=seed,
    )


def ensemble_density(ensemble: MemoryEnsemble) -> np.ndarray:
    weights = ensemble.effective_weights()
    return np.einsum("k,ki,kj->ij", weights, ensemble.states, ensemble.states.conj())


def channel_superoperator(kraus: KrausFamily) -> np.ndarray:
    """行優先のvec(ρ)に作用するΣ_x A^x ⊗ conj(A^x)"""

    ops = kraus.operators
    d = kraus.dim
    return np.einsum("xij,xkl->ikjl", ops, ops.conj()).reshape(d * d, d * d)


def exact_stationary(kraus: KrausFamily) -> StationaryState:
    """メモリチャネルε(ρ)=Σ A^x ρ A^x†の不動点を求めます。

    Raises:
        NumericalError: 固有値1が見つからない場合

    Returns:
        StationaryState: 定常状態と縮退フラグ
    """

    d = kraus.dim
    shifted = channel_superoperator(kraus) - np.eye(d * d)
    right = scipy.linalg.null_space(shifted, rcond=FIXED_POINT_RCOND)
    left = scipy.linalg.null_space(shifted.conj().T, rcond=FIXED_POINT_RCOND)
    if right.shape[1] == 0 or right.shape[1] != left.shape[1]:
        raise NumericalError(
            f"メモリチャネルの不動点が求まりません。right={right.shape[1]}, left={left.shape[1]}"
        )

    degenerate = right.shape[1] > 1
    if degenerate:
        # |0><0|を固有値1の固有空間へ射影（チャネルのチェザロ平均の極限）
        start = projector(ket(0, d)).reshape(-1)
        coefficients = np.linalg.solve(left.conj().T @ right, left.conj().T @ start)
        vec = right @ coefficients
        logger.warn(f"定常状態が縮退しています。次元: {right.shape[1]}")
    else:
        vec = right[:, 0]

    rho = vec.reshape(d, d)
    trace = np.trace(rho)
    if abs(trace) < 1e-12:
        raise NumericalError("定常状態のトレースが0です。")
    rho = rho / trace
    rho = clamp_psd((rho + rho.conj().T) / 2)
    rho = rho / np.real(np.trace(rho))

    residual = float(np.linalg.norm(kraus.channel(rho) - rho))
    if residual > 1e-9:
        logger.warn(f"定常状態の残差が大きいです。{residual:.3e}")
    return StationaryState(rho=rho, degenerate=degenerate, residual=residual)


def cq(rho_m: np.ndarray) -> float:
    return von_neumann_entropy(rho_m)


def max_entropy(rho_m: np.ndarray, tol: float = 1e-10) -> float:
    """レニー0エントロピー log2 rank(ρ)"""

    values = np.linalg.eigvalsh((rho_m + rho_m.conj().T) / 2)
    rank = int(np.count_nonzero(values > tol))
    return float(np.log2(rank)) if rank > 0 else 0.0
