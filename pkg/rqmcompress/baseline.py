"""
一様MPSの変分的な打ち切り（比較用の従来法）。

1. 元のMPSと初期値Ã（乱数）を混合ゲージ{A_l, A_c, A_r, C}にする
2. 混合転送行列Ē_l = Σ A_l^x ⊗ conj(Ã_l^x)、Ē_r = Σ A_r^x ⊗ conj(Ã_r^x)の主固有ベクトルからG_l, G_rを得る
3. Ã_c ← G_l A_c G_r、C̃ ← G_l C G_r とし、極分解でÃ_l, Ã_rを取り出す
4. Δ = ||Ã_c/η - Ã_l C̃||_F が閾値未満になるまで2〜3を繰り返す

テンソルはクラウス演算子と同じ(d, D, D)の並びで扱います。
"""

from dataclasses import dataclass, field
from typing import Literal, Optional, Union

import numpy as np
import scipy.linalg

from .errors import NumericalError
from .logger import CustomLogger
from .model import UniformMps
from .qcore import leading_eigenpair, spectrum_by_magnitude

logger = CustomLogger(name=__name__)

CANONICAL_TOLERANCE = 1e-14
CANONICAL_MAX_ITER = 10000
DEGENERACY_TOLERANCE = 1e-9
DELTA_THRESHOLD = 1e-8
MAX_ITER = 500
RESTARTS = 20

UpdateRule = Literal["projection", "literal"]


@dataclass(frozen=True, eq=False)
class CanonicalForms:
    """
    混合ゲージ。
    Attributes:
        a_l (np.ndarray): 左正準テンソル（Σ A_l^x† A_l^x = I）。
        a_r (np.ndarray): 右正準テンソル（Σ A_r^x A_r^x† = I）。
        a_c (np.ndarray): 中心テンソル A_c^x = A_l^x C = C A_r^x。
        c (np.ndarray): 中心行列（対角、フロベニウスノルム1）。
        degenerate (bool): 転送行列の主固有値が縮退している場合True。
    """

    a_l: np.ndarray = field(repr=False)
    a_r: np.ndarray = field(repr=False)
    a_c: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)
    degenerate: bool = False

    @property
    def bond_dim(self) -> int:
        return self.c.shape[0]

    @property
    def d_out(self) -> int:
        return self.a_l.shape[0]


@dataclass
class TruncationState:
    """
    打ち切りの反復状態。
    Attributes:
        a_l (np.ndarray): 固有ベクトルの計算に使ったÃ_l。
        a_c (np.ndarray): 更新後のÃ_c。
        c (np.ndarray): 更新後のC̃（フロベニウスノルム1）。
        eta (complex): 混合転送行列の主固有値。
        g_l (np.ndarray): 左ゲージ行列（d̃ × d）。
        g_r (np.ndarray): 右ゲージ行列（d × d̃）。
        delta (float): 収束判定量Δ。
        iteration (int): 反復回数。
    """

    a_l: np.ndarray = field(repr=False)
    a_c: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)
    eta: complex
    g_l: np.ndarray = field(repr=False)
    g_r: np.ndarray = field(repr=False)
    delta: float
    iteration: int


@dataclass
class TruncationRun:
    seed: int
    tensors: np.ndarray = field(repr=False)
    per_site_overlap: float
    final_delta: float
    iterations: int
    converged: bool
    stalled: bool
    non_monotone_steps: int = 0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "per_site_overlap": self.per_site_overlap,
            "final_delta": self.final_delta,
            "iterations": self.iterations,
            "converged": self.converged,
            "stalled": self.stalled,
            "non_monotone_steps": self.non_monotone_steps,
        }


@dataclass
class TruncationResult:
    """
    再出発を含む打ち切りの結果。
    Attributes:
        mps (UniformMps): 重なりが最大の打ち切り後のMPS。
        d (int): 元のボンド次元。
        d_tilde (int): 打ち切り後のボンド次元。
        seed (int): 乱数シード。
        runs (list[TruncationRun]): 各再出発の結果。
        best_index (int): mpsを与えた再出発の番号。
    """

    mps: UniformMps
    d: int
    d_tilde: int
    seed: int
    runs: list[TruncationRun]
    best_index: int

    @property
    def best(self) -> TruncationRun:
        return self.runs[self.best_index]

    @property
    def converged(self) -> bool:
        return self.best.converged

    @property
    def converged_runs(self) -> int:
        return sum(run.converged for run in self.runs)

    def to_dict(self) -> dict:
        best = self.best
        return {
            "d": self.d,
            "d_tilde": self.d_tilde,
            "seed": self.seed,
            "iterations": best.iterations,
            "final_delta": best.final_delta,
            "per_site_overlap": best.per_site_overlap,
            "converged": best.converged,
            "best_index": self.best_index,
            "runs": [run.to_dict() for run in self.runs],
            "mps": self.mps.to_dict(),
        }


def _tensors(a: Union[UniformMps, np.ndarray]) -> np.ndarray:
    return np.asarray(a.tensors if isinstance(a, UniformMps) else a, dtype=complex)


def _signs(r: np.ndarray) -> np.ndarray:
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1
    return signs


def qr_pos(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rの対角を正にしたQR分解"""

    q, r = scipy.linalg.qr(m, mode="economic")
    signs = _signs(r)
    return q * signs, signs[:, None] * r


def rq_pos(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rの対角を正にしたRQ分解"""

    r, q = scipy.linalg.rq(m, mode="economic")
    signs = _signs(r)
    return r * signs, signs[:, None] * q


def transfer_matrix(a: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    """Σ_x A^x ⊗ conj(B^x)"""

    b = a if b is None else b
    d_a, d_b = a.shape[1], b.shape[1]
    return np.einsum("xij,xkl->ikjl", a, b.conj()).reshape(d_a * d_b, d_a * d_b)


def normalize(a: np.ndarray) -> np.ndarray:
    """転送行列の主固有値が1になるようにスケールします。"""

    value = abs(spectrum_by_magnitude(transfer_matrix(a))[0])
    if value == 0.0:
        raise NumericalError("転送行列の主固有値が0です。")
    return a / np.sqrt(value)


def left_orthonormalize(
    a: np.ndarray, tol: float = CANONICAL_TOLERANCE, max_iter: int = CANONICAL_MAX_ITER
) -> tuple[np.ndarray, np.ndarray]:
    """L A^x = A_l^x L となるL, A_lを求めます。"""

    d, bond, _ = a.shape
    l = np.eye(bond, dtype=complex) / np.sqrt(bond)
    for _ in range(max_iter):
        stacked = np.einsum("ij,xjk->xik", l, a).reshape(d * bond, bond)
        a_l, l_new = qr_pos(stacked)
        l_new = l_new / np.linalg.norm(l_new)
        change = np.linalg.norm(l_new - l)
        l = l_new
        if change <= tol:
            break
    else:
        logger.warn(f"左正準化が収束しません。{change:.3e}")
    return l, a_l.reshape(d, bond, bond)


def right_orthonormalize(
    a: np.ndarray, tol: float = CANONICAL_TOLERANCE, max_iter: int = CANONICAL_MAX_ITER
) -> tuple[np.ndarray, np.ndarray]:
    """A^x R = R A_r^x となるR, A_rを求めます。"""

    d, bond, _ = a.shape
    r = np.eye(bond, dtype=complex) / np.sqrt(bond)
    for _ in range(max_iter):
        stacked = np.einsum("xij,jk->ixk", a, r).reshape(bond, d * bond)
        r_new, a_r = rq_pos(stacked)
        r_new = r_new / np.linalg.norm(r_new)
        change = np.linalg.norm(r_new - r)
        r = r_new
        if change <= tol:
            break
    else:
        logger.warn(f"右正準化が収束しません。{change:.3e}")
    return r, a_r.reshape(bond, d, bond).transpose(1, 0, 2)


def canonicalize(a: Union[UniformMps, np.ndarray]) -> CanonicalForms:
    """一様MPSを混合ゲージにします。

    Args:
        a (Union[UniformMps, np.ndarray]): MPSまたは形状(d, D, D)のテンソル（正規化は不要）

    Returns:
        CanonicalForms: A_l, A_r, A_c, C
    """

    tensors = normalize(_tensors(a))
    magnitudes = np.abs(spectrum_by_magnitude(transfer_matrix(tensors)))
    degenerate = len(magnitudes) > 1 and magnitudes[0] - magnitudes[1] <= DEGENERACY_TOLERANCE
    if degenerate:
        logger.warn("転送行列の主固有値が縮退しています（単射でないMPS）。")

    l, a_l = left_orthonormalize(tensors)
    r, a_r = right_orthonormalize(tensors)
    u, s, vh = np.linalg.svd(l @ r)
    a_l = np.einsum("ij,xjk,kl->xil", u.conj().T, a_l, u)
    a_r = np.einsum("ij,xjk,kl->xil", vh, a_r, vh.conj().T)
    c = np.diag(s / np.linalg.norm(s)).astype(complex)
    a_c = a_l @ c
    return CanonicalForms(a_l=a_l, a_r=a_r, a_c=a_c, c=c, degenerate=bool(degenerate))


def gauge_transform(a: UniformMps, w: np.ndarray) -> UniformMps:
    """A^x → W A^x W†（Wはユニタリ）"""

    return UniformMps(tensors=np.einsum("ij,xjk,lk->xil", w, a.tensors, w.conj()))


def mixed_transfer(a: CanonicalForms, b: CanonicalForms, side: Literal["left", "right"]) -> np.ndarray:
    """Ē_l = Σ A_l^x ⊗ conj(Ã_l^x)、Ē_r = Σ A_r^x ⊗ conj(Ã_r^x)（次元はd·d̃）"""

    if a.d_out != b.d_out:
        raise ValueError(f"出力アルファベットが一致しません。{a.d_out} != {b.d_out}")
    if side == "left":
        return transfer_matrix(a.a_l, b.a_l)
    if side == "right":
        return transfer_matrix(a.a_r, b.a_r)
    raise ValueError(f"未対応の向きです。{side}")


def _gauges(a: CanonicalForms, b: CanonicalForms) -> tuple[complex, np.ndarray, np.ndarray]:
    """Σ Ã_l† G_l A_l = η G_l と Σ A_r G_r Ã_r† = η G_r の解"""

    eta, left = leading_eigenpair(mixed_transfer(a, b, "left").T)
    _, right = leading_eigenpair(mixed_transfer(a, b, "right"))
    g_l = left.reshape(a.bond_dim, b.bond_dim).T
    g_r = right.reshape(a.bond_dim, b.bond_dim)
    return eta, g_l, g_r


def delta(state: TruncationState) -> float:
    """Δ = ||Ã_c/η - Ã_l C̃||_F（出力記号についてまとめたフロベニウスノルム）"""

    return float(np.linalg.norm(state.a_c / state.eta - state.a_l @ state.c))


def _extract(a_c: np.ndarray, c: np.ndarray) -> CanonicalForms:
    """{Ã_c, C̃}から極分解でÃ_l, Ã_rを取り出します。"""

    d, bond, _ = a_c.shape
    u_c, _ = scipy.linalg.polar(c)
    u_l, _ = scipy.linalg.polar(a_c.reshape(d * bond, bond))
    u_r, _ = scipy.linalg.polar(a_c.transpose(1, 0, 2).reshape(bond, d * bond), side="left")
    a_l = (u_l @ u_c.conj().T).reshape(d, bond, bond)
    a_r = (u_c.conj().T @ u_r).reshape(bond, d, bond).transpose(1, 0, 2)
    return CanonicalForms(a_l=a_l, a_r=a_r, a_c=a_c, c=c)


def _update(
    target: CanonicalForms, current: CanonicalForms, update: UpdateRule, iteration: int
) -> TruncationState:
    eta, g_l, g_r = _gauges(target, current)
    if update == "projection":
        a_c = np.einsum("ij,xjk,kl->xil", g_l, target.a_c, g_r)
        c = g_l @ target.c @ g_r
    else:
        a_c = np.einsum("ij,xjk,kl->xil", g_l, current.a_c, g_r)
        c = g_l @ current.c @ g_r

    scale = np.linalg.norm(c)
    if scale < 1e-14:
        raise NumericalError("ゲージ行列の積が0になりました。")
    state = TruncationState(
        a_l=current.a_l,
        a_c=a_c / scale,
        c=c / scale,
        eta=eta,
        g_l=g_l,
        g_r=g_r,
        delta=0.0,
        iteration=iteration,
    )
    state.delta = delta(state)
    return state


def per_site_overlap(a: Union[UniformMps, np.ndarray], b: Union[UniformMps, np.ndarray]) -> float:
    """正規化した2つのMPSの1サイトあたりの重なり|η|"""

    a = normalize(_tensors(a))
    b = normalize(_tensors(b))
    return float(abs(spectrum_by_magnitude(transfer_matrix(a, b))[0]))


def random_initial(d_out: int, d_tilde: int, rng: np.random.Generator) -> np.ndarray:
    shape = (d_out, d_tilde, d_tilde)
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def truncate_once(
    target: CanonicalForms,
    d_tilde: int,
    rng: np.random.Generator,
    seed: int = 0,
    delta_thresh: float = DELTA_THRESHOLD,
    max_iter: int = MAX_ITER,
    update: UpdateRule = "projection",
    initial: Optional[np.ndarray] = None,
) -> TruncationRun:
    """乱数の初期値から1回分の打ち切りを行い、Δが最小だった反復のÃ_lを返します。"""

    current = canonicalize(random_initial(target.d_out, d_tilde, rng) if initial is None else initial)
    best_delta = np.inf
    best_tensors = current.a_l
    overlap = 0.0
    non_monotone = 0
    converged = False
    iteration = 0

    for iteration in range(1, max_iter + 1):
        state = _update(target, current, update, iteration)
        new_overlap = abs(state.eta)
        if new_overlap < overlap - 1e-14:
            non_monotone += 1
            logger.debug(f"重なりが減少しました。{overlap:.15f} -> {new_overlap:.15f}")
        overlap = new_overlap

        if state.delta < best_delta:
            best_delta = state.delta
            best_tensors = state.a_l
        if state.delta < delta_thresh:
            converged = True
            break
        current = _extract(state.a_c, state.c)

    stalled = not converged
    if stalled:
        logger.warn(f"打ち切りが収束しません。最小のΔ={best_delta:.3e}, 反復={iteration}")
    return TruncationRun(
        seed=seed,
        tensors=best_tensors,
        per_site_overlap=per_site_overlap(target.a_l, best_tensors),
        final_delta=float(best_delta),
        iterations=iteration,
        converged=converged,
        stalled=stalled,
        non_monotone_steps=non_monotone,
    )


def truncate(
    a: UniformMps,
    d_tilde: int,
    delta_thresh: float = DELTA_THRESHOLD,
    max_iter: int = MAX_ITER,
    restarts: int = RESTARTS,
    seed: int = 0,
    update: UpdateRule = "projection",
) -> TruncationResult:
    """MPSをボンド次元d̃に打ち切ります。

    Args:
        a (UniformMps): 元のMPS
        d_tilde (int): 打ち切り後のボンド次元（d̃ ≤ d）
        delta_thresh (float): Δの収束閾値
        max_iter (int): 1回の打ち切りの反復上限
        restarts (int): 乱数初期値からの再出発回数
        seed (int): 乱数シード。各再出発のシードはSeedSequence(seed).spawnで作ります
        update (UpdateRule): "projection"はÃ_c ← G_l A_c G_r、"literal"はÃ_c ← G_l Ã_c G_r（d̃ = dのみ）

    Raises:
        ValueError: d̃が不正な場合

    Returns:
        TruncationResult: 重なりが最大の結果と各再出発の記録
    """

    if not 1 <= d_tilde <= a.bond_dim:
        raise ValueError(f"打ち切り後のボンド次元が不正です。{d_tilde} (d={a.bond_dim})")
    if restarts < 1:
        raise ValueError(f"再出発回数は1以上である必要があります。{restarts}")
    if update == "literal" and d_tilde != a.bond_dim:
        raise ValueError("literal更新はd̃ = dの場合のみ定義されます。")

    target = canonicalize(a)
    runs = []
    for index, child in enumerate(np.random.SeedSequence(seed).spawn(restarts)):
        run = truncate_once(
            target,
            d_tilde,
            np.random.default_rng(child),
            seed=index,
            delta_thresh=delta_thresh,
            max_iter=max_iter,
            update=update,
        )
        runs.append(run)

    best_index = int(np.argmax([run.per_site_overlap for run in runs]))
    logger.info(
        f"打ち切り: d={a.bond_dim} → d̃={d_tilde}, 重なり={runs[best_index].per_site_overlap:.12f}, "
        f"収束={sum(run.converged for run in runs)}/{restarts}"
    )
    return TruncationResult(
        mps=UniformMps(tensors=runs[best_index].tensors),
        d=a.bond_dim,
        d_tilde=d_tilde,
        seed=seed,
        runs=runs,
        best_index=best_index,
    )
