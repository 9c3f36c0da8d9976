"""
離散化した円周上のランダムウォークと、その量子モデル（圧縮対象のブラックボックス）の構築。

円周の長さは1、サイトはy_k = k/N、区間I_k = {y : |y - y_k| < 1/2N}（周期的）です。
"""

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
import scipy.linalg
from scipy.special import ndtr

from .errors import NonPsdGramError, NumericalError
from .logger import CustomLogger
from .model import Rqm, _is_power_of_two
from .qcore import PSD_TOLERANCE, complete_isometry, ket

logger = CustomLogger(name=__name__)

MASS_TOLERANCE = 1e-9
STOCHASTIC_TOLERANCE = 1e-10
RANK_TOLERANCE = 1e-9
GAUSSIAN_IMAGE_WIDTH = 8.0

ShiftKind = Literal["wrapped-gaussian", "uniform-interval", "point-mass", "table"]


@dataclass(frozen=True)
class ShiftDistribution:
    """
    1ステップの移動量Xの分布Q(X)。位置と幅は円周の単位で表します。
    Attributes:
        kind (ShiftKind): 分布の種類。
        mean (float): wrapped-gaussianの平均。
        sigma (float): wrapped-gaussianの標準偏差。
        a (float): uniform-intervalの始点。
        b (float): uniform-intervalの終点（a < b ≤ a + 1）。
        x0 (float): point-massの位置。
        table (tuple[float, ...]): tableの確率。i番目は位置i/Mの確率です。
    Methods:
        wrapped_gaussian(mean, sigma) / uniform_interval(a, b) / point_mass(x0) / from_table(probs):
            各種類の分布を生成します。
        with_sigma(sigma) -> ShiftDistribution:
            標準偏差だけを差し替えたwrapped-gaussianを返します。
    """

    kind: ShiftKind
    mean: float = 0.0
    sigma: float = 0.0
    a: float = 0.0
    b: float = 1.0
    x0: float = 0.0
    table: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "wrapped-gaussian":
            if not 0.0 <= self.mean < 1.0:
                raise ValueError(f"平均は[0, 1)の範囲で指定してください。{self.mean}")
            if self.sigma <= 0.0:
                raise ValueError(f"標準偏差は正の値で指定してください。{self.sigma}")
        elif self.kind == "uniform-interval":
            if not 0.0 <= self.a < 1.0 or not self.a < self.b <= self.a + 1.0:
                raise ValueError(f"区間が不正です。[{self.a}, {self.b})")
        elif self.kind == "point-mass":
            if not 0.0 <= self.x0 < 1.0:
                raise ValueError(f"位置は[0, 1)の範囲で指定してください。{self.x0}")
        elif self.kind == "table":
            table = tuple(float(v) for v in self.table)
            if len(table) == 0 or any(v < 0.0 for v in table):
                raise ValueError("確率表が空か、負の値を含んでいます。")
            total = sum(table)
            if abs(total - 1.0) > MASS_TOLERANCE:
                raise ValueError(f"確率表の合計が1ではありません。{total}")
            object.__setattr__(self, "table", tuple(v / total for v in table))
        else:
            raise ValueError(f"未対応の分布です。{self.kind}")

    @classmethod
    def wrapped_gaussian(cls, mean: float, sigma: float) -> "ShiftDistribution":
        return cls(kind="wrapped-gaussian", mean=mean, sigma=sigma)

    @classmethod
    def uniform_interval(cls, a: float, b: float) -> "ShiftDistribution":
        return cls(kind="uniform-interval", a=a, b=b)

    @classmethod
    def point_mass(cls, x0: float) -> "ShiftDistribution":
        return cls(kind="point-mass", x0=x0)

    @classmethod
    def from_table(cls, probs) -> "ShiftDistribution":
        return cls(kind="table", table=tuple(probs))

    def with_sigma(self, sigma: float) -> "ShiftDistribution":
        return ShiftDistribution.wrapped_gaussian(
            self.mean if self.kind == "wrapped-gaussian" else 0.0, sigma
        )

    def to_dict(self) -> dict:
        params = {
            "wrapped-gaussian": {"mean": self.mean, "sigma": self.sigma},
            "uniform-interval": {"a": self.a, "b": self.b},
            "point-mass": {"x0": self.x0},
            "table": {"probs": list(self.table)},
        }[self.kind]
        return {"kind": self.kind, "params": params}

    @classmethod
    def from_dict(cls, data: dict) -> "ShiftDistribution":
        kind = data.get("kind")
        params = data.get("params") or {}
        try:
            if kind == "wrapped-gaussian":
                return cls.wrapped_gaussian(float(params["mean"]), float(params["sigma"]))
            if kind == "uniform-interval":
                return cls.uniform_interval(float(params["a"]), float(params["b"]))
            if kind == "point-mass":
                return cls.point_mass(float(params["x0"]))
            if kind == "table":
                return cls.from_table(params["probs"])
        except (KeyError, TypeError) as e:
            raise ValueError(f"分布のパラメータが不足しています。{kind}: {e}")
        raise ValueError(f"未対応の分布です。{kind}")


def default_shift(n_sites: int) -> ShiftDistribution:
    """スイープの既定値：平均0、σ = 1/(2N)のwrapped-gaussian"""

    return ShiftDistribution.wrapped_gaussian(0.0, 1.0 / (2 * n_sites))


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """
    巡回的な遷移行列。p[k, j]はサイトjからサイトkへ移る確率です。
    Attributes:
        n_sites (int): サイト数N。
        p (np.ndarray): N×Nの列確率行列。
    """

    n_sites: int
    p: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        n = self.n_sites
        if p.shape != (n, n):
            raise ValueError(f"遷移行列の形状が不正です。{p.shape} != ({n}, {n})")
        if np.any(p < 0.0):
            raise ValueError("遷移行列に負の要素があります。")
        column_error = np.max(np.abs(p.sum(axis=0) - 1.0))
        if column_error > STOCHASTIC_TOLERANCE:
            raise ValueError(f"遷移行列の列和が1ではありません。誤差: {column_error:.3e}")
        if np.max(np.abs(p - scipy.linalg.circulant(p[:, 0]))) > STOCHASTIC_TOLERANCE:
            raise ValueError("遷移行列が巡回行列ではありません。")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def offset_masses(self) -> np.ndarray:
        return self.p[:, 0].copy()


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """
    メモリ状態の重なり行列 G_ij = <σ_i|σ_j>。
    半正定値性はmemory_statesで検査します。
    """

    g: np.ndarray = field(repr=False)

    def __post_init__(self):
        g = np.array(self.g, dtype=complex)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError(f"グラム行列が正方行列ではありません。{g.shape}")
        if np.max(np.abs(g - g.conj().T)) > STOCHASTIC_TOLERANCE:
            raise ValueError("グラム行列がエルミートではありません。")
        if np.max(np.abs(np.diag(g) - 1.0)) > STOCHASTIC_TOLERANCE:
            raise ValueError("グラム行列の対角成分が1ではありません。")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    @property
    def size(self) -> int:
        return self.g.shape[0]


@dataclass(frozen=True, eq=False)
class CyclicWalk:
    """
    分布から量子モデルまでの一式。
    Attributes:
        shift (ShiftDistribution): 移動量の分布。
        masses (np.ndarray): オフセット質量q_m。
        transition (TransitionMatrix): 遷移行列。
        model (Rqm): 量子モデル。
    """

    shift: ShiftDistribution
    masses: np.ndarray = field(repr=False)
    transition: TransitionMatrix
    model: Rqm


def _site_interval_mass(lower: np.ndarray, upper: np.ndarray, shift: ShiftDistribution) -> np.ndarray:
    """X（実数直線上、周期化前）が[lower, upper)に入る確率"""

    if shift.kind == "wrapped-gaussian":
        return ndtr((upper - shift.mean) / shift.sigma) - ndtr((lower - shift.mean) / shift.sigma)

    # uniform-interval
    overlap = np.clip(np.minimum(upper, shift.b) - np.maximum(lower, shift.a), 0.0, None)
    return overlap / (shift.b - shift.a)


def _interval_masses(shift: ShiftDistribution, n_sites: int) -> np.ndarray:
    """frac(X)がI_mに入る確率。Nに2のべきの制約はありません。"""

    if n_sites < 1:
        raise ValueError(f"サイト数は1以上である必要があります。{n_sites}")

    if shift.kind == "point-mass":
        masses = np.zeros(n_sites)
        masses[int(np.floor(shift.x0 * n_sites + 0.5)) % n_sites] = 1.0
        return masses

    if shift.kind == "table":
        masses = np.zeros(n_sites)
        m = len(shift.table)
        sites = np.floor(np.arange(m) * n_sites / m + 0.5).astype(int) % n_sites
        np.add.at(masses, sites, shift.table)
        return masses

    if shift.kind == "wrapped-gaussian":
        reach = int(np.ceil(GAUSSIAN_IMAGE_WIDTH * shift.sigma)) + 1
    else:
        reach = 2
    images = np.arange(-reach, reach + 1)

    centers = np.arange(n_sites) / n_sites
    half = 0.5 / n_sites
    lower = (centers[:, None] - half) + images[None, :]
    upper = (centers[:, None] + half) + images[None, :]
    masses = _site_interval_mass(lower, upper, shift).sum(axis=1)
    return np.clip(masses, 0.0, None)


def discretize_shift(shift: ShiftDistribution, n_sites: int) -> np.ndarray:
    """移動量の分布をN個のオフセット質量に離散化します。

    Args:
        shift (ShiftDistribution): 移動量の分布
        n_sites (int): サイト数（2以上の2のべき）

    Returns:
        np.ndarray: q_m (m = 0..N-1)
    """

    if n_sites < 2 or not _is_power_of_two(n_sites):
        raise ValueError(f"サイト数は2以上の2のべきである必要があります。{n_sites}")

    masses = _interval_masses(shift, n_sites)
    total = masses.sum()
    if abs(total - 1.0) > MASS_TOLERANCE:
        raise NumericalError(f"離散化した質量の合計が1になりません。{total}")
    return masses / total


def transition_matrix(masses: np.ndarray) -> TransitionMatrix:
    """p_kj = q_{(k-j) mod N}"""

    masses = np.asarray(masses, dtype=float)
    return TransitionMatrix(n_sites=len(masses), p=scipy.linalg.circulant(masses))


def gram_matrix(transition: TransitionMatrix) -> GramMatrix:
    """G = MᵀM、M_kj = √p_kj"""

    m = np.sqrt(transition.p)
    return GramMatrix(g=m.T @ m)


def memory_states(gram: GramMatrix) -> np.ndarray:
    """重なりがGとなるN個のメモリ状態を返します。

    Args:
        gram (GramMatrix): グラム行列

    Raises:
        NonPsdGramError: 最小固有値が-1e-9より小さい場合

    Returns:
        np.ndarray: 形状(N, N)。j行目がσ_jです。ランクrのとき先頭r成分のみ非零です。
    """

    values, vectors = np.linalg.eigh(gram.g)
    if values.min() < -PSD_TOLERANCE:
        raise NonPsdGramError(f"グラム行列が半正定値ではありません。最小固有値: {values.min()}")

    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    rank = int(np.count_nonzero(values > RANK_TOLERANCE))

    n = gram.size
    states = np.zeros((n, n), dtype=complex)
    states[:, :rank] = (vectors[:, :rank] * np.sqrt(values[:rank])).conj()
    states /= np.linalg.norm(states, axis=1, keepdims=True)
    return states


def _polar(y: np.ndarray) -> np.ndarray:
    left, _, right = np.linalg.svd(y, full_matrices=False)
    return left @ right


def build_model(transition: TransitionMatrix) -> Rqm:
    """U|σ_j>|0> = Σ_k √p_kj |σ_k>|k> を満たすユニタリを構成します。

    メモリ状態の張る空間の外（ジャンク入力）は、張る空間の中に写るように補完します。
    このためジャンク成分は1ステップで消え、定常状態は張る空間の中に収まります。

    Args:
        transition (TransitionMatrix): 遷移行列

    Raises:
        NumericalError: 等長性の検査に失敗した場合（構成上は起こりません）

    Returns:
        Rqm: n = log2 N のメモリ量子ビットと、N記号の出力を持つモデル
    """

    n_sites = transition.n_sites
    if not _is_power_of_two(n_sites):
        raise ValueError(f"サイト数は2のべきである必要があります。{n_sites}")
    d_mem = n_sites
    d_out = n_sites
    e0 = ket(0, d_out)

    sqrt_p = np.sqrt(transition.p)
    gram = gram_matrix(transition)
    states = memory_states(gram)
    sigma = states.T

    # 像 Φ_j = Σ_k √p_kj σ_k⊗e_k
    images = np.einsum("ka,kj->akj", states, sqrt_p).reshape(d_mem * d_out, n_sites)
    gram_error = np.max(np.abs(images.conj().T @ images - sigma.conj().T @ sigma))
    if gram_error > 1e-8:
        raise NumericalError(f"モデルの等長性が成り立ちません。誤差: {gram_error:.3e}")

    q, r, _ = scipy.linalg.qr(sigma, pivoting=True, mode="economic")
    diag = np.abs(np.diag(r))
    rank = int(np.count_nonzero(diag > RANK_TOLERANCE * max(1.0, diag[0])))
    span = q[:, :rank]

    extension = np.linalg.pinv(sigma) @ span
    y = _polar(images @ extension)
    domain = np.kron(span, e0[:, None])

    # ジャンク入力 → span⊗C^d のうちYに直交する部分
    junk = np.kron(scipy.linalg.null_space(span.conj().T), e0[:, None])
    target_basis = np.kron(span, np.eye(d_out))
    coefficients = target_basis.conj().T @ y
    free = scipy.linalg.null_space(coefficients.conj().T)
    n_junk = d_mem - rank
    if free.shape[1] < n_junk:
        raise NumericalError(f"ジャンク入力の写し先が足りません。{free.shape[1]} < {n_junk}")
    z = target_basis @ free[:, :n_junk]

    left = complete_isometry(np.hstack([y, z]))
    right = complete_isometry(np.hstack([domain, junk]))
    u = left @ right.conj().T

    logger.debug(f"量子モデルを構成しました。N={n_sites}, rank={rank}")
    return Rqm(n_mem=n_sites.bit_length() - 1, d_out=d_out, u=u)


def build_walk(n: int, shift: Optional[ShiftDistribution] = None) -> CyclicWalk:
    """n量子ビット（N = 2^n サイト）のウォークを離散化からモデル構築まで一度に行います。"""

    if n < 1:
        raise ValueError(f"量子ビット数は1以上である必要があります。{n}")
    n_sites = 2**n
    shift = shift or default_shift(n_sites)
    masses = discretize_shift(shift, n_sites)
    transition = transition_matrix(masses)
    return CyclicWalk(shift=shift, masses=masses, transition=transition, model=build_model(transition))


def classical_complexity(transition: TransitionMatrix) -> float:
    """
    古典的な統計的複雑度（ビット）。
    未来の分布が同じサイト（遷移行列の列が一致するサイト）をまとめ、定常分布のシャノンエントロピーを返します。
    巡回行列は二重確率行列なので、定常分布は一様です。
    """

    p = transition.p
    n = transition.n_sites
    labels = -np.ones(n, dtype=int)
    for j in range(n):
        if labels[j] >= 0:
            continue
        same = np.max(np.abs(p - p[:, [j]]), axis=0) <= STOCHASTIC_TOLERANCE
        labels[same & (labels < 0)] = j

    weights = np.bincount(labels, minlength=n) / n
    weights = weights[weights > 0]
    return float(max(0.0, -np.sum(weights * np.log2(weights))))
