"""
量子忠実度発散率（QFDR）。

2つの過程の出力レジスタの状態ρ_L, σ_Lをコサイン類似度で比べたときの1ステップあたりの減衰率（ビット）です。

    r_f = -(1/2)[log2 λ_AB - (1/2)(log2 λ_AA + log2 λ_BB)]

λ_XYはTr[ρ_L σ_L]などを1ステップ進める二重転送演算子の絶対値最大の固有値です。
二重転送演算子は混合転送行列E_XY = Σ_x X^x ⊗ conj(Y^x)とその複素共役のテンソル積と同じスペクトルを持つため、
λ_XY = |μ(E_XY)|²として計算します。
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DimensionError
from .logger import CustomLogger
from .model import Rqm, UniformMps
from .qcore import cosine_similarity, partial_trace, spectrum_by_magnitude
from .rqm import exact_stationary, kraus_from_unitary
from .training import memory_layout, reduced_model

logger = CustomLogger(name=__name__)

ORTHOGONAL_THRESHOLD = 1e-300
NEGATIVE_RATE_TOLERANCE = 1e-10
DEGENERACY_TOLERANCE = 1e-9
MAX_BRUTE_FORCE_STRINGS = 2**14


@dataclass(frozen=True)
class QfdrResult:
    """
    QFDRの計算結果。
    Attributes:
        r_f (float): 発散率（ビット/ステップ）。出力が漸近的に直交する場合は+∞。
        lambda_ab (float): Tr[ρσ]の転送演算子の主固有値の絶対値。
        lambda_aa (float): Tr[ρ²]の転送演算子の主固有値の絶対値。
        lambda_bb (float): Tr[σ²]の転送演算子の主固有値の絶対値。
        degenerate (bool): いずれかの主固有値の絶対値が縮退している場合True。
    """

    r_f: float
    lambda_ab: float
    lambda_aa: float
    lambda_bb: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "r_f": self.r_f if math.isfinite(self.r_f) else "inf",
            "lambda_ab": self.lambda_ab,
            "lambda_aa": self.lambda_aa,
            "lambda_bb": self.lambda_bb,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QfdrResult":
        lambdas = [float(data[key]) for key in ("lambda_ab", "lambda_aa", "lambda_bb")]
        return cls(
            r_f=rate_from_eigenvalues(*lambdas),
            lambda_ab=lambdas[0],
            lambda_aa=lambdas[1],
            lambda_bb=lambdas[2],
            degenerate=bool(data.get("degenerate", False)),
        )


@dataclass(frozen=True)
class BruteForceRate:
    """
    有限長Lでの忠実度と隣接差分による傾き。
    Attributes:
        lengths (np.ndarray): L = 1..l_max
        fidelities (np.ndarray): F_L = cos(ρ_L, σ_L)
        slopes (np.ndarray): slope_L = -(1/2)(log2 F_{L+1} - log2 F_L)（L = 1..l_max-1）
    """

    lengths: np.ndarray
    fidelities: np.ndarray
    slopes: np.ndarray

    def slope(self, length: int) -> float:
        if not 1 <= length < len(self.lengths):
            raise ValueError(f"傾きが定義されない長さです。{length}")
        return float(self.slopes[length - 1])


def mps_from_model(model: Union[Rqm, tuple[np.ndarray, int]], d_out: Optional[int] = None) -> UniformMps:
    """モデル（またはŨと保持量子ビット数の組）のクラウス演算子をMPSテンソルとして返します。"""

    if not isinstance(model, Rqm):
        u_tilde, n_reduced = model
        if d_out is None:
            d_out = np.asarray(u_tilde).shape[0] // 2**n_reduced
        model = reduced_model(u_tilde, n_reduced, d_out)
    return UniformMps.from_kraus(kraus_from_unitary(model))


def _check_pair(a: UniformMps, b: UniformMps):
    if a.d_out != b.d_out:
        raise DimensionError(f"出力アルファベットが一致しません。{a.d_out} != {b.d_out}")


def mixed_transfer_matrix(a: UniformMps, b: UniformMps) -> np.ndarray:
    """E_AB = Σ_x A^x ⊗ conj(B^x)"""

    _check_pair(a, b)
    da, db = a.bond_dim, b.bond_dim
    e = np.einsum("xij,xkl->ikjl", a.tensors, b.tensors.conj())
    return e.reshape(da * db, da * db)


def doubled_transfer(a: UniformMps, b: UniformMps) -> np.ndarray:
    """
    Tr[ρ_L σ_L]を1ステップ進める演算子
    T = Σ_{x,x'} (A^x ⊗ conj(A^x')) ⊗ (B^x' ⊗ conj(B^x))
    を行列として返します。次元は(D_A² D_B²)²なので小さいモデル専用です。
    """

    _check_pair(a, b)
    da, db = a.bond_dim, b.bond_dim
    t = np.einsum("xia,yjp,ykb,xlq->ijklapbq", a.tensors, a.tensors.conj(), b.tensors, b.tensors.conj())
    dim = da * da * db * db
    return t.reshape(dim, dim)


def _leading_magnitude(m: np.ndarray) -> tuple[float, bool]:
    values = np.abs(spectrum_by_magnitude(m))
    degenerate = len(values) > 1 and values[0] - values[1] <= DEGENERACY_TOLERANCE * max(1.0, values[0])
    return float(values[0]), bool(degenerate)


def rate_from_eigenvalues(lambda_ab: float, lambda_aa: float, lambda_bb: float) -> float:
    if lambda_ab < ORTHOGONAL_THRESHOLD:
        return math.inf
    rate = -0.5 * (math.log2(lambda_ab) - 0.5 * (math.log2(lambda_aa) + math.log2(lambda_bb)))
    if -NEGATIVE_RATE_TOLERANCE < rate <= 0.0:
        rate = 0.0
    return rate


def qfdr(a: UniformMps, b: UniformMps) -> QfdrResult:
    """2つの過程のQFDRを転送行列のスペクトルから計算します。

    Args:
        a (UniformMps): 元の過程
        b (UniformMps): 比較する過程

    Raises:
        DimensionError: 出力アルファベットが異なる場合

    Returns:
        QfdrResult: 発散率と3つの固有値
    """

    mu_ab, deg_ab = _leading_magnitude(mixed_transfer_matrix(a, b))
    mu_aa, deg_aa = _leading_magnitude(mixed_transfer_matrix(a, a))
    mu_bb, deg_bb = _leading_magnitude(mixed_transfer_matrix(b, b))
    lambda_ab, lambda_aa, lambda_bb = mu_ab**2, mu_aa**2, mu_bb**2

    rate = rate_from_eigenvalues(lambda_ab, lambda_aa, lambda_bb)
    if rate < 0.0:
        logger.warn(f"QFDRが負になりました。{rate:.3e}")
    degenerate = deg_ab or deg_aa or deg_bb
    if degenerate:
        logger.warn("転送行列の主固有値が縮退しています。")
    logger.debug(f"QFDR: r_f={rate}, λ_AB={lambda_ab:.12e}, λ_AA={lambda_aa:.12e}, λ_BB={lambda_bb:.12e}")
    return QfdrResult(
        r_f=rate,
        lambda_ab=lambda_ab,
        lambda_aa=lambda_aa,
        lambda_bb=lambda_bb,
        degenerate=degenerate,
    )


def _pair_traces(a: UniformMps, b: UniformMps, rho: np.ndarray, sigma: np.ndarray, l_max: int) -> np.ndarray:
    """L = 1..l_maxのTr[ρ_L σ_L]。4脚テンソルX[a, a', b, b']に転送演算子を順に作用させます。"""

    at, bt = a.tensors, b.tensors
    x = np.einsum("ap,bq->apbq", rho, sigma)
    traces = np.zeros(l_max)
    for length in range(l_max):
        z = np.einsum("xia,xlq,apbq->ilpb", at, bt.conj(), x, optimize=True)
        x = np.einsum("yjp,ykb,ilpb->ijkl", at.conj(), bt, z, optimize=True)
        traces[length] = np.real(np.einsum("iikk->", x))
    return traces


def stationary_boundary(mps: UniformMps) -> np.ndarray:
    return exact_stationary(mps.to_kraus()).rho


def transfer_fidelities(
    a: UniformMps,
    b: UniformMps,
    l_max: int,
    boundary_a: Optional[np.ndarray] = None,
    boundary_b: Optional[np.ndarray] = None,
) -> np.ndarray:
    """転送演算子によるF_L（L = 1..l_max）。境界の省略時は各過程の定常状態を使います。"""

    if l_max < 1:
        raise ValueError(f"l_maxは1以上である必要があります。{l_max}")
    _check_pair(a, b)
    rho = stationary_boundary(a) if boundary_a is None else np.asarray(boundary_a, dtype=complex)
    sigma = stationary_boundary(b) if boundary_b is None else np.asarray(boundary_b, dtype=complex)

    t_ab = _pair_traces(a, b, rho, sigma, l_max)
    t_aa = _pair_traces(a, a, rho, rho, l_max)
    t_bb = _pair_traces(b, b, sigma, sigma, l_max)
    return np.clip(t_ab / np.sqrt(t_aa * t_bb), 0.0, 1.0)


def _rate_from_fidelities(fidelities: np.ndarray) -> BruteForceRate:
    with np.errstate(divide="ignore"):
        logs = np.log2(fidelities)
    return BruteForceRate(
        lengths=np.arange(1, len(fidelities) + 1), fidelities=fidelities, slopes=-0.5 * np.diff(logs)
    )


def transfer_rate(
    a: UniformMps,
    b: UniformMps,
    l_max: int,
    boundary_a: Optional[np.ndarray] = None,
    boundary_b: Optional[np.ndarray] = None,
) -> BruteForceRate:
    """transfer_fidelitiesによる有限長の傾き。総当たりでは届かない長いLまで見られます。"""

    return _rate_from_fidelities(transfer_fidelities(a, b, l_max, boundary_a, boundary_b))


def _sqrt_psd(rho: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eigh((rho + rho.conj().T) / 2)
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.conj().T


def _string_stack(mps: UniformMps, boundary: np.ndarray, length: int) -> np.ndarray:
    """行x⃗ = (x_1..x_L)にA^{x_L}…A^{x_1}√ρを平坦化して並べた行列（d^L × D²）"""

    stack = _sqrt_psd(boundary)[None]
    for _ in range(length):
        stack = np.einsum("xij,sjk->sxik", mps.tensors, stack).reshape(-1, *stack.shape[1:])
    return stack.reshape(stack.shape[0], -1)


def output_density(mps: UniformMps, boundary: np.ndarray, length: int) -> np.ndarray:
    """L個の出力レジスタの縮約密度行列ρ_L（d^L × d^L）"""

    if mps.d_out**length > MAX_BRUTE_FORCE_STRINGS:
        raise ValueError(f"出力列が多すぎます。{mps.d_out}^{length} > {MAX_BRUTE_FORCE_STRINGS}")
    stack = _string_stack(mps, boundary, length)
    return stack @ stack.conj().T


def brute_force_rate(
    a: UniformMps,
    b: UniformMps,
    l_max: int,
    boundary_a: Optional[np.ndarray] = None,
    boundary_b: Optional[np.ndarray] = None,
) -> BruteForceRate:
    """
    出力列をすべて列挙してF_Lを求めます。
    ρ_L = M M†（Mは_string_stack）と分解し、Tr[ρ_L σ_L] = ||M_A† M_B||_F²で評価します。
    """

    _check_pair(a, b)
    if l_max < 1:
        raise ValueError(f"l_maxは1以上である必要があります。{l_max}")
    if a.d_out**l_max > MAX_BRUTE_FORCE_STRINGS:
        raise ValueError(f"出力列が多すぎます。{a.d_out}^{l_max} > {MAX_BRUTE_FORCE_STRINGS}")

    rho = stationary_boundary(a) if boundary_a is None else boundary_a
    sigma = stationary_boundary(b) if boundary_b is None else boundary_b

    fidelities = np.zeros(l_max)
    for length in range(1, l_max + 1):
        m_a = _string_stack(a, rho, length)
        m_b = _string_stack(b, sigma, length)
        t_ab = np.sum(np.abs(m_a.conj().T @ m_b) ** 2)
        t_aa = np.sum(np.abs(m_a.conj().T @ m_a) ** 2)
        t_bb = np.sum(np.abs(m_b.conj().T @ m_b) ** 2)
        fidelities[length - 1] = min(1.0, t_ab / np.sqrt(t_aa * t_bb))

    return _rate_from_fidelities(fidelities)


def output_fidelity(a: UniformMps, b: UniformMps, length: int, boundary_a: np.ndarray, boundary_b: np.ndarray) -> float:
    """ρ_L, σ_Lを明示的に作ってコサイン類似度を求めます（小さいL専用）。"""

    return cosine_similarity(output_density(a, boundary_a, length), output_density(b, boundary_b, length))


def compressed_boundary(rho_m: np.ndarray, v: np.ndarray, n_reduced: int) -> np.ndarray:
    """Tr_T[V ρ_M V†]"""

    n_mem = rho_m.shape[0].bit_length() - 1
    return partial_trace(v @ rho_m @ v.conj().T, memory_layout(n_mem, n_reduced), ["retained"])


def rate_convergence(brute: BruteForceRate, rate: float, start: int = 3) -> Sequence[float]:
    """L ≥ startでの|slope_L - r_f|。有限長の傾きがr_fへ近づく様子を見るのに使います。"""

    return [abs(brute.slope(length) - rate) for length in range(start, len(brute.lengths))]
