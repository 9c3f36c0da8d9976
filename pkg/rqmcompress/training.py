"""
量子次元削減の学習。

エンコーダV(θ1)でメモリ状態を保持部⊗トラッシュ部に分け、トラッシュ部を|0...0>へ寄せつつ、
保持部と出力に作用する小さいユニタリŨ(θ2)で元のモデルの1ステップを再現します。

    D_i = <0|_T Tr_M̃[V|s_i><s_i|V†] |0>_T
    ρ_i = Tr_T[(V⊗I) U (|s_i><s_i|⊗|0><0|) U† (V†⊗I)]
    σ_i = Tr_T[V|s_i><s_i|V†] ⊗ |0><0|
    F_i = Tr[Ũ†ρ_iŨ σ_i] / √(Tr[ρ_i²] Tr[σ_i²])
    C   = -Σ_i w_i (α D_i + β F_i)

メモリ量子ビットの並びは[保持部(ñ), トラッシュ部(n - ñ)]、結合系は[保持部, トラッシュ部, 出力]です。
元のモデルは結合状態への作用（Rqm.apply）とサンプリングでのみ使います。
"""

import time
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Sequence

import numpy as np

from .ansatz import (
    AnsatzSpec,
    GradientMethod,
    InitMode,
    build_unitary,
    check_params,
    init_params,
    param_count,
    shifted_unitaries,
)
from .errors import CheckpointError
from .logger import CustomLogger
from .model import MemoryEnsemble, Rqm
from .optimizer import OptimizeResult, minimize_lbfgs, minimize_nelder_mead
from .qcore import (
    SubsystemLayout,
    apply_on_subsystems,
    cosine_similarity,
    embed_operator,
    ket,
    kron,
    projector,
    reduced_density,
)
from .rqm import sample_memory_ensemble
from .util import array_digest, read_json_file, sha256_of, write_json_file

logger = CustomLogger(name=__name__)

FINITE_DIFFERENCE_STEP = 1e-5


def memory_layout(n_mem: int, n_reduced: int) -> SubsystemLayout:
    return SubsystemLayout(
        dims=(2**n_reduced, 2 ** (n_mem - n_reduced)), names=("retained", "trash")
    )


def joint_layout(n_mem: int, n_reduced: int, d_out: int) -> SubsystemLayout:
    return SubsystemLayout(
        dims=(2**n_reduced, 2 ** (n_mem - n_reduced), d_out),
        names=("retained", "trash", "output"),
    )


@dataclass(frozen=True, eq=False)
class ReductionProblem:
    """
    圧縮問題。
    Attributes:
        target (Rqm): 元のモデル（ブラックボックス）。
        ensemble (MemoryEnsemble): 学習に使うメモリ状態。
        n_reduced (int): 保持するメモリ量子ビット数ñ（0 ≤ ñ < n）。
        v_spec (AnsatzSpec): n量子ビットのエンコーダVの回路。
        u_spec (AnsatzSpec): ñ + log2(d_out)量子ビットのŨの回路。
        alpha (float): デカップリング項の重み。
        beta (float): ダイナミカル項の重み。
        seed (int): 初期値の乱数シード。
    """

    target: Rqm
    ensemble: MemoryEnsemble
    n_reduced: int
    v_spec: AnsatzSpec
    u_spec: AnsatzSpec
    alpha: float = 1.0
    beta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        n_mem = self.target.n_mem
        if not 0 <= self.n_reduced < n_mem:
            raise ValueError(f"保持量子ビット数は0以上{n_mem}未満である必要があります。{self.n_reduced}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError(f"重みは正である必要があります。α={self.alpha}, β={self.beta}")
        if self.ensemble.n_mem != n_mem or self.ensemble.d_out != self.target.d_out:
            raise ValueError("アンサンブルとモデルの次元が一致しません。")
        if self.v_spec.n_qubits != n_mem:
            raise ValueError(f"Vの量子ビット数が不正です。{self.v_spec.n_qubits} != {n_mem}")
        u_qubits = self.n_reduced + self.target.out_qubits
        if self.u_spec.n_qubits != u_qubits:
            raise ValueError(f"Ũの量子ビット数が不正です。{self.u_spec.n_qubits} != {u_qubits}")

    @property
    def n_mem(self) -> int:
        return self.target.n_mem

    @property
    def d_out(self) -> int:
        return self.target.d_out

    @property
    def retained_dim(self) -> int:
        return 2**self.n_reduced

    @property
    def trash_dim(self) -> int:
        return 2 ** (self.n_mem - self.n_reduced)

    @property
    def n_params(self) -> int:
        return param_count(self.v_spec) + param_count(self.u_spec)

    def split(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        n1 = param_count(self.v_spec)
        if theta.shape != (self.n_params,):
            raise ValueError(f"パラメータ数が一致しません。{theta.shape} != ({self.n_params},)")
        return theta[:n1], theta[n1:]

    def fingerprint(self) -> str:
        return sha256_of(
            {
                "target": array_digest(self.target.u),
                "states": array_digest(self.ensemble.states),
                "weights": self.ensemble.effective_weights().tolist(),
                "n_reduced": self.n_reduced,
                "v_spec": self.v_spec.to_dict(),
                "u_spec": self.u_spec.to_dict(),
                "alpha": self.alpha,
                "beta": self.beta,
            }
        )


@dataclass
class CostTerms:
    decoupling: np.ndarray
    dynamical: np.ndarray
    cost: float

    @property
    def d_bar(self) -> float:
        return float(np.mean(self.decoupling)) if self.decoupling.size else 0.0


def weighted_cost(
    decoupling: np.ndarray, dynamical: np.ndarray, weights: np.ndarray, alpha: float, beta: float
) -> float:
    return -float(np.sum(weights * (alpha * decoupling + beta * dynamical)))


def _gram_norm(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """各iについて||x_i† y_i||_F²"""

    return np.sum(np.abs(np.matmul(x.conj().transpose(0, 2, 1), y)) ** 2, axis=(1, 2))


def _recovery_overlap(psi: np.ndarray, trash: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Tr[ρ_i W τ_i W†] = ||Ψ_i† W T_i||_F²。wは(rd, r)または(P, rd, r)"""

    if w.ndim == 2:
        b = np.einsum("kxt,xa->kta", psi.conj(), w)
        return np.sum(np.abs(b @ trash) ** 2, axis=(1, 2))
    b = np.einsum("kxt,pxa->pkta", psi.conj(), w)
    return np.sum(np.abs(b @ trash[None]) ** 2, axis=(2, 3))


class CostFunction:
    """
    (θ1, θ2)から学習コストと勾配を計算します。

    ρ_i = Ψ_iΨ_i†、τ_i = T_iT_i†と分解して保持します（Ψ_i: (rd, t)、T_i: (r, t)）。
    勾配はパラメータシフトを状態について線形な量（D_i, ρ_i, τ_i, Tr[ρ_iWτ_iW†]）に適用し、
    コサイン類似度の正規化は連鎖律で微分します。

    Methods:
        terms(theta1, theta2) -> CostTerms:
            各状態のD_i, F_iとコスト。
        value(theta) -> float:
            連結したパラメータのコスト。
        value_and_grad(theta, wrt) -> tuple[float, np.ndarray]:
            コストと勾配。wrtで微分するパラメータを選びます。
        decoupling_value_and_grad(theta1) -> tuple[float, np.ndarray]:
            デカップリング項のみのコストと勾配（二段階学習の前段）。
    """

    def __init__(self, problem: ReductionProblem, gradient: GradientMethod = "parameter-shift"):
        self._logger = CustomLogger(name="CostFunction")
        self.problem = problem
        self.gradient = gradient
        self.weights = problem.ensemble.effective_weights()

        d_mem = 2**problem.n_mem
        d_out = problem.d_out
        states = problem.ensemble.states
        k = states.shape[0]

        joint = np.zeros((d_mem, d_out, k), dtype=complex)
        joint[:, 0, :] = states.T
        self._states = states.T
        self._chi = problem.target.apply(joint.reshape(d_mem * d_out, k)).reshape(d_mem, d_out, k)
        self._columns = [a * d_out for a in range(problem.retained_dim)]
        self.evaluations = 0

    def _memory_parts(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r = self.problem.retained_dim
        t = self.problem.trash_dim
        d = self.problem.d_out
        k = self._states.shape[1]

        trash = (v @ self._states).reshape(r, t, k).transpose(2, 0, 1)
        psi = np.einsum("mn,nok->mok", v, self._chi).reshape(r, t, d, k)
        psi = psi.transpose(3, 0, 2, 1).reshape(k, r * d, t)
        return trash, psi

    @staticmethod
    def _decoupling(trash: np.ndarray) -> np.ndarray:
        return np.sum(np.abs(trash[:, :, 0]) ** 2, axis=1)

    def _fidelity_parts(self, trash, psi, w):
        a = _recovery_overlap(psi, trash, w)
        b = _gram_norm(psi, psi)
        c = _gram_norm(trash, trash)
        return a, b, c, np.sqrt(b * c)

    def terms(self, theta1: Sequence[float], theta2: Sequence[float]) -> CostTerms:
        v = build_unitary(self.problem.v_spec, theta1)
        w = build_unitary(self.problem.u_spec, theta2, columns=self._columns)
        trash, psi = self._memory_parts(v)
        decoupling = self._decoupling(trash)
        a, _, _, norm = self._fidelity_parts(trash, psi, w)
        # コストは勾配と同じ値から計算し、表示用の値だけを丸めます
        fidelity = a / norm
        cost = weighted_cost(decoupling, fidelity, self.weights, self.problem.alpha, self.problem.beta)
        self.evaluations += 1
        return CostTerms(decoupling=decoupling, dynamical=np.clip(fidelity, 0.0, 1.0), cost=cost)

    def value(self, theta: np.ndarray) -> float:
        theta1, theta2 = self.problem.split(theta)
        return self.terms(theta1, theta2).cost

    def value_and_grad(
        self, theta: np.ndarray, wrt: Literal["all", "theta1", "theta2"] = "all"
    ) -> tuple[float, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if self.gradient == "finite-difference":
            return self._finite_difference(theta, wrt)
        if self.gradient != "parameter-shift":
            raise ValueError(f"未対応の勾配計算方法です。{self.gradient}")

        problem = self.problem
        alpha, beta = problem.alpha, problem.beta
        theta1, theta2 = problem.split(theta)
        v = build_unitary(problem.v_spec, theta1)
        w = build_unitary(problem.u_spec, theta2, columns=self._columns)
        trash, psi = self._memory_parts(v)
        decoupling = self._decoupling(trash)
        a, b, c, norm = self._fidelity_parts(trash, psi, w)
        fidelity = a / norm
        cost = weighted_cost(decoupling, fidelity, self.weights, alpha, beta)
        self.evaluations += 1

        grad1 = np.zeros(param_count(problem.v_spec))
        grad2 = np.zeros(param_count(problem.u_spec))

        if wrt in ("all", "theta2"):
            w_plus, w_minus = shifted_unitaries(problem.u_spec, theta2, columns=self._columns)
            d_a = (_recovery_overlap(psi, trash, w_plus) - _recovery_overlap(psi, trash, w_minus)) / 2
            grad2 = -beta * (d_a / norm[None, :]) @ self.weights

        if wrt in ("all", "theta1"):
            v_plus, v_minus = shifted_unitaries(problem.v_spec, theta1)
            for p in range(len(grad1)):
                trash_p, psi_p = self._memory_parts(v_plus[p])
                trash_m, psi_m = self._memory_parts(v_minus[p])
                d_d = (self._decoupling(trash_p) - self._decoupling(trash_m)) / 2
                d_a = (
                    _recovery_overlap(psi_p, trash, w)
                    - _recovery_overlap(psi_m, trash, w)
                    + _recovery_overlap(psi, trash_p, w)
                    - _recovery_overlap(psi, trash_m, w)
                ) / 2
                d_b = _gram_norm(psi, psi_p) - _gram_norm(psi, psi_m)
                d_c = _gram_norm(trash, trash_p) - _gram_norm(trash, trash_m)
                d_f = d_a / norm - fidelity / 2 * (d_b / b + d_c / c)
                grad1[p] = -np.sum(self.weights * (alpha * d_d + beta * d_f))

        if wrt == "theta1":
            return cost, grad1
        if wrt == "theta2":
            return cost, grad2
        return cost, np.concatenate([grad1, grad2])

    def _finite_difference(self, theta: np.ndarray, wrt: str) -> tuple[float, np.ndarray]:
        n1 = param_count(self.problem.v_spec)
        indices = {
            "all": range(len(theta)),
            "theta1": range(n1),
            "theta2": range(n1, len(theta)),
        }[wrt]
        grad = []
        for i in indices:
            step = np.zeros_like(theta)
            step[i] = FINITE_DIFFERENCE_STEP
            grad.append((self.value(theta + step) - self.value(theta - step)) / (2 * FINITE_DIFFERENCE_STEP))
        return self.value(theta), np.array(grad)

    def decoupling_value_and_grad(self, theta1: np.ndarray) -> tuple[float, np.ndarray]:
        spec = self.problem.v_spec
        alpha = self.problem.alpha
        v = build_unitary(spec, theta1)
        value = -alpha * float(self.weights @ self._decoupling(self._memory_parts(v)[0]))

        v_plus, v_minus = shifted_unitaries(spec, theta1)
        grad = np.zeros(param_count(spec))
        for p in range(len(grad)):
            d_plus = self._decoupling(self._memory_parts(v_plus[p])[0])
            d_minus = self._decoupling(self._memory_parts(v_minus[p])[0])
            grad[p] = -alpha * float(self.weights @ (d_plus - d_minus)) / 2
        return value, grad


def decoupling_fidelity(v: np.ndarray, s: np.ndarray, n_reduced: int) -> float:
    """トラッシュ部が|0...0>に見つかる確率D_i"""

    n_mem = len(s).bit_length() - 1
    trash = reduced_density(v @ s, memory_layout(n_mem, n_reduced), ["trash"])
    return float(np.clip(np.real(trash[0, 0]), 0.0, 1.0))


def reduced_state(target: Rqm, v: np.ndarray, s: np.ndarray, n_reduced: int) -> np.ndarray:
    """元のモデルを1ステップ作用させ、Vで符号化した後の(保持部, 出力)の状態ρ_i"""

    layout = joint_layout(target.n_mem, n_reduced, target.d_out)
    joint = target.apply(kron(s, ket(0, target.d_out)))
    psi = apply_on_subsystems(v, joint, layout, ["retained", "trash"])
    return reduced_density(psi, layout, ["retained", "output"])


def reference_state(v: np.ndarray, s: np.ndarray, n_reduced: int, d_out: int) -> np.ndarray:
    """σ_i = Tr_T[V|s><s|V†] ⊗ |0><0|"""

    n_mem = len(s).bit_length() - 1
    tau = reduced_density(v @ s, memory_layout(n_mem, n_reduced), ["retained"])
    return kron(tau, projector(ket(0, d_out)))


def dynamical_fidelity(u_tilde: np.ndarray, rho_i: np.ndarray, sigma_i: np.ndarray) -> float:
    return cosine_similarity(u_tilde.conj().T @ rho_i @ u_tilde, sigma_i)


def combined_cost(problem: ReductionProblem, theta1: Sequence[float], theta2: Sequence[float]) -> float:
    theta1 = check_params(problem.v_spec, theta1)
    theta2 = check_params(problem.u_spec, theta2)
    return CostFunction(problem).terms(theta1, theta2).cost


@dataclass
class TrainOptions:
    """
    学習の設定。
    Attributes:
        max_iter (int): 反復上限。
        tol_cost (float): コスト変化の収束判定。
        window (int): 収束判定の窓幅。
        gtol (float): 勾配の最大ノルムの収束判定。
        history (int): L-BFGSの履歴数。
        restarts (int): 直線探索失敗時の再開回数。
        perturbation (float): 再開時に加える乱れの標準偏差。
        gradient (GradientMethod): 勾配の計算方法。
        init (InitMode): 初期値の生成方法。
        two_phase (bool): θ1をデカップリング項で学習した後、θ2を学習します。
        method (Literal["lbfgs", "nelder-mead"]): 最適化手法。
        checkpoint_every (int): チェックポイントを保存する反復間隔。
    """

    max_iter: int = 2000
    tol_cost: float = 1e-9
    window: int = 5
    gtol: float = 1e-7
    history: int = 10
    restarts: int = 3
    perturbation: float = 0.05
    gradient: GradientMethod = "parameter-shift"
    init: InitMode = "near-identity"
    two_phase: bool = False
    method: Literal["lbfgs", "nelder-mead"] = "lbfgs"
    checkpoint_every: int = 50


@dataclass
class TrainResult:
    """
    学習結果。
    Attributes:
        theta1 (np.ndarray): Vのパラメータ。
        theta2 (np.ndarray): Ũのパラメータ。
        cost_trace (list[float]): コストの推移（再開をまたいで最良値）。
        final_cost (float): 最終コスト。
        d_bar (float): 平均デカップリング忠実度（重み付き）。
        f_bar (float): 平均ダイナミカル忠実度（重み付き）。
        iterations (int): 反復回数の合計。
        converged (bool): 収束したか。
        restarts (int): 直線探索失敗からの再開回数。
        seed (int): 初期値の乱数シード。
        wall_time_s (float): 実行時間。
        start (int): train_startsで選ばれた初期値の番号。
    """

    theta1: np.ndarray
    theta2: np.ndarray
    cost_trace: list[float]
    final_cost: float
    d_bar: float
    f_bar: float
    iterations: int
    converged: bool
    restarts: int = 0
    seed: int = 0
    wall_time_s: float = 0.0
    start: int = 0

    def to_dict(self) -> dict:
        return {
            "theta1": np.asarray(self.theta1).tolist(),
            "theta2": np.asarray(self.theta2).tolist(),
            "cost_trace": list(map(float, self.cost_trace)),
            "final_cost": self.final_cost,
            "d_bar": self.d_bar,
            "f_bar": self.f_bar,
            "iterations": self.iterations,
            "converged": self.converged,
            "restarts": self.restarts,
            "seed": self.seed,
            "wall_time_s": self.wall_time_s,
            "start": self.start,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainResult":
        return cls(
            theta1=np.asarray(data["theta1"], dtype=float),
            theta2=np.asarray(data["theta2"], dtype=float),
            cost_trace=[float(c) for c in data["cost_trace"]],
            final_cost=float(data["final_cost"]),
            d_bar=float(data["d_bar"]),
            f_bar=float(data["f_bar"]),
            iterations=int(data["iterations"]),
            converged=bool(data["converged"]),
            restarts=int(data.get("restarts", 0)),
            seed=int(data.get("seed", 0)),
            wall_time_s=float(data.get("wall_time_s", 0.0)),
            start=int(data.get("start", 0)),
        )


def _optimize(
    fun_and_grad, fun, x0: np.ndarray, options: TrainOptions, rng, callback=None
) -> tuple[OptimizeResult, int]:
    """直線探索に失敗したら最良点に乱れを加えて再開します。"""

    if options.method == "nelder-mead":
        return minimize_nelder_mead(fun, x0, options.max_iter, options.tol_cost), 0
    if options.method != "lbfgs":
        raise ValueError(f"未対応の最適化手法です。{options.method}")

    best: Optional[OptimizeResult] = None
    trace = []
    total = 0
    restarts = 0
    x = np.asarray(x0, dtype=float)
    while True:
        run = minimize_lbfgs(
            fun_and_grad,
            x,
            history=options.history,
            max_iter=max(options.max_iter - total, 0),
            tol_cost=options.tol_cost,
            window=options.window,
            gtol=options.gtol,
            callback=callback,
        )
        total += run.iterations
        trace.extend(run.cost_trace)
        if best is None or run.fun < best.fun:
            best = run
        if not run.line_search_failed or restarts >= options.restarts or total >= options.max_iter:
            break
        restarts += 1
        logger.warn(f"直線探索に失敗しました。最良点から再開します。({restarts}/{options.restarts})")
        x = best.x + rng.normal(scale=options.perturbation, size=best.x.shape)

    result = OptimizeResult(
        x=best.x,
        fun=best.fun,
        cost_trace=list(np.minimum.accumulate(trace)),
        iterations=total,
        converged=run.converged and not run.line_search_failed,
        line_search_failed=run.line_search_failed,
        message=run.message,
    )
    return result, restarts


def train(
    problem: ReductionProblem,
    options: Optional[TrainOptions] = None,
    seed: Optional[int] = None,
    theta1: Optional[Sequence[float]] = None,
    theta2: Optional[Sequence[float]] = None,
    checkpoint_path: Optional[str] = None,
) -> TrainResult:
    """学習コストを最小化して(θ1, θ2)を求めます。

    Args:
        problem (ReductionProblem): 圧縮問題
        options (Optional[TrainOptions]): 学習の設定
        seed (Optional[int]): 初期値のシード。省略時はproblem.seed
        theta1 (Optional[Sequence[float]]): Vの初期値。省略時は乱数
        theta2 (Optional[Sequence[float]]): Ũの初期値。省略時は乱数
        checkpoint_path (Optional[str]): 指定した場合、途中経過と最終結果を保存します

    Returns:
        TrainResult: 学習結果
    """

    options = options or TrainOptions()
    seed = problem.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    start = time.perf_counter()

    theta1 = (
        init_params(problem.v_spec, rng, options.init)
        if theta1 is None
        else check_params(problem.v_spec, theta1)
    )
    theta2 = (
        init_params(problem.u_spec, rng, options.init)
        if theta2 is None
        else check_params(problem.u_spec, theta2)
    )

    cost = CostFunction(problem, options.gradient)
    n1 = len(theta1)

    def save(iteration: int, x: np.ndarray, value: float):
        if checkpoint_path is not None and iteration % options.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, problem, x[:n1], x[n1:], [value], seed)

    restarts = 0
    if options.two_phase:
        logger.debug("二段階学習: θ1をデカップリング項で学習します。")
        phase1, r1 = _optimize(
            cost.decoupling_value_and_grad,
            lambda x: cost.decoupling_value_and_grad(x)[0],
            theta1,
            options,
            rng,
        )
        theta1 = phase1.x

        def phase2_fun_and_grad(x):
            return cost.value_and_grad(np.concatenate([theta1, x]), wrt="theta2")

        phase2, r2 = _optimize(
            phase2_fun_and_grad,
            lambda x: cost.value(np.concatenate([theta1, x])),
            theta2,
            options,
            rng,
        )
        theta2 = phase2.x
        restarts = r1 + r2
        iterations = phase1.iterations + phase2.iterations
        converged = phase1.converged and phase2.converged
        trace = phase2.cost_trace
    else:
        x0 = np.concatenate([theta1, theta2])

        result, restarts = _optimize(cost.value_and_grad, cost.value, x0, options, rng, callback=save)
        theta1, theta2 = problem.split(result.x)
        iterations = result.iterations
        converged = result.converged
        trace = result.cost_trace

    terms = cost.terms(theta1, theta2)
    weights = cost.weights
    train_result = TrainResult(
        theta1=np.asarray(theta1),
        theta2=np.asarray(theta2),
        cost_trace=trace,
        final_cost=terms.cost,
        d_bar=float(weights @ terms.decoupling),
        f_bar=float(weights @ terms.dynamical),
        iterations=iterations,
        converged=converged,
        restarts=restarts,
        seed=seed,
        wall_time_s=time.perf_counter() - start,
    )
    logger.info(
        f"学習が終了しました。C={train_result.final_cost:.9f}, D̄={train_result.d_bar:.6f}, "
        f"F̄={train_result.f_bar:.6f}, 反復={iterations}, 収束={converged}"
    )
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, problem, theta1, theta2, trace, seed)
    return train_result


@dataclass
class MultiStartResult:
    results: list[TrainResult] = field(default_factory=list)

    @property
    def best(self) -> TrainResult:
        return min(self.results, key=lambda r: r.final_cost)

    def final_costs(self) -> np.ndarray:
        return np.array([r.final_cost for r in self.results])


def multistart(
    problem: ReductionProblem, seeds: Sequence[int], options: Optional[TrainOptions] = None
) -> MultiStartResult:
    return MultiStartResult(results=[train(problem, options, seed=s) for s in seeds])


def start_seeds(seed: int, starts: int) -> list[int]:
    """1個目はseed、2個目以降はSeedSequence(seed)から派生させたシード"""

    if starts < 1:
        raise ValueError(f"初期値の数は1以上である必要があります。{starts}")
    return [seed] + [int(s) for s in np.random.SeedSequence(seed).generate_state(starts - 1)]


def train_starts(
    problem: ReductionProblem,
    options: Optional[TrainOptions] = None,
    seed: Optional[int] = None,
    starts: int = 1,
    checkpoint_path: Optional[str] = None,
) -> TrainResult:
    """
    seedから派生したstarts個の初期値で学習し、最終コストが最小の結果を返します。
    1個目はoptions.init、2個目以降は一様乱数の初期値を使います。
    返す結果のseedは引数のseed、startは選ばれた初期値の番号です。
    """

    options = options or TrainOptions()
    seed = problem.seed if seed is None else seed
    runs = MultiStartResult()
    for index, start_seed in enumerate(start_seeds(seed, starts)):
        start_options = options if index == 0 else replace(options, init="uniform")
        path = checkpoint_path if index == 0 else None
        runs.results.append(train(problem, start_options, seed=start_seed, checkpoint_path=path))

    costs = runs.final_costs()
    index = int(np.argmin(costs))
    best = replace(runs.results[index], seed=seed, start=index)
    if starts > 1:
        logger.info(f"初期値{starts}個のうち{index}番目を採用します。C=[{', '.join(f'{c:.6f}' for c in costs)}]")
    if checkpoint_path is not None and index != 0:
        save_checkpoint(checkpoint_path, problem, best.theta1, best.theta2, best.cost_trace, seed)
    return best


def save_checkpoint(
    path: str,
    problem: ReductionProblem,
    theta1: np.ndarray,
    theta2: np.ndarray,
    cost_trace: Sequence[float],
    seed: int,
    config: Optional[dict] = None,
):
    data = {
        "problem_hash": problem.fingerprint(),
        "theta1": np.asarray(theta1).tolist(),
        "theta2": np.asarray(theta2).tolist(),
        "cost_trace": [float(c) for c in cost_trace],
        "seed": seed,
        "config": config or {},
    }
    ok, message = write_json_file(path, data)
    if not ok:
        raise CheckpointError(f"チェックポイントを保存できません。{message}")


def load_checkpoint(path: str, problem: Optional[ReductionProblem] = None) -> dict:
    """チェックポイントを読み込みます。problemを指定した場合は問題のハッシュを照合します。"""

    data, error = read_json_file(path)
    if error is not None:
        raise CheckpointError(f"チェックポイントを読み込めません。{error}")
    for key in ("problem_hash", "theta1", "theta2", "cost_trace", "seed"):
        if key not in data:
            raise CheckpointError(f"チェックポイントに{key}がありません。: {path}")
    if problem is not None and data["problem_hash"] != problem.fingerprint():
        raise CheckpointError(f"チェックポイントの問題が一致しません。: {path}")
    return data


def resume(problem: ReductionProblem, path: str, options: Optional[TrainOptions] = None) -> TrainResult:
    data = load_checkpoint(path, problem)
    logger.info(f"チェックポイントから再開します。: {path}")
    return train(
        problem,
        options,
        seed=int(data["seed"]),
        theta1=data["theta1"],
        theta2=data["theta2"],
        checkpoint_path=path,
    )


@dataclass(frozen=True, eq=False)
class PlantedProblem:
    """
    厳密に圧縮できる問題と、その解。
    Attributes:
        problem (ReductionProblem): 圧縮問題。
        theta2 (np.ndarray): 解のθ2。
        permutation (np.ndarray): メモリの基底の並べ替えP（P|i> = |permutation[i]>）。
        decoupler (np.ndarray): 学習データの台を|r>|0>_Tへ写す置換行列（Vの正解）。
        theta1 (Optional[np.ndarray]): P = V(0)の場合のみ、解のθ1（すべて0）。
    """

    problem: ReductionProblem
    theta2: np.ndarray
    permutation: np.ndarray
    decoupler: np.ndarray
    theta1: Optional[np.ndarray] = None


def planted_problem(
    n_mem: int,
    n_reduced: int,
    d_out: int,
    seed: int,
    v_layers: Optional[int] = None,
    u_layers: int = 2,
    k: int = 16,
    burn_in: int = 8,
    alpha: float = 1.0,
    beta: float = 1.0,
    shuffle: bool = True,
) -> PlantedProblem:
    """
    U = (P†⊗I)(W ⊗ I_T)(P⊗I)の形の元モデルを作ります。W = Ũ(θ2*)（θ2*は乱数）。
    shuffleならPはシードから引いたメモリの基底の並べ替え、そうでなければP = V(0)です。
    v_layersの省略時はn_mem層とします。
    """

    rng = np.random.default_rng(seed)
    out_qubits = d_out.bit_length() - 1
    dim = 2**n_mem
    trash_dim = 2 ** (n_mem - n_reduced)
    v_spec = AnsatzSpec(n_qubits=n_mem, n_layers=v_layers or n_mem)
    u_spec = AnsatzSpec(n_qubits=n_reduced + out_qubits, n_layers=u_layers)

    theta2 = init_params(u_spec, rng, mode="uniform")
    theta1 = None
    if shuffle:
        order = rng.permutation(dim)
        p = np.eye(dim, dtype=complex)[:, order]
    else:
        theta1 = np.zeros(param_count(v_spec))
        p = build_unitary(v_spec, theta1)
        order = np.argmax(np.abs(p), axis=0)

    # P|0>のトラッシュ成分t0は時間発展で変わらないので、Vの正解は(I ⊗ X^t0)P
    t0 = int(order[0]) % trash_dim
    flip = np.eye(trash_dim)[:, np.arange(trash_dim) ^ t0]
    decoupler = np.kron(np.eye(2**n_reduced), flip) @ p

    layout = joint_layout(n_mem, n_reduced, d_out)
    permutation = embed_operator(p, layout, ["retained", "trash"])
    recovery = embed_operator(build_unitary(u_spec, theta2), layout, ["retained", "output"])
    u = permutation.conj().T @ recovery @ permutation

    target = Rqm(n_mem=n_mem, d_out=d_out, u=u)
    ensemble = sample_memory_ensemble(target, k=k, burn_in=burn_in, seed=seed)
    problem = ReductionProblem(
        target=target,
        ensemble=ensemble,
        n_reduced=n_reduced,
        v_spec=v_spec,
        u_spec=u_spec,
        alpha=alpha,
        beta=beta,
        seed=seed,
    )
    return PlantedProblem(problem=problem, theta2=theta2, permutation=order, decoupler=decoupler, theta1=theta1)


def reduced_model(u_tilde: np.ndarray, n_reduced: int, d_out: int) -> Rqm:
    """学習したŨを、ñ量子ビットのメモリを持つモデルとして返します。"""

    return Rqm(n_mem=n_reduced, d_out=d_out, u=u_tilde)
