"""
L-BFGS（強いWolfe条件の直線探索）とNelder-Mead。
"""

import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.optimize

from .logger import CustomLogger

logger = CustomLogger(name=__name__)

FunAndGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class OptimizeResult:
    """
    最適化の結果。
    Attributes:
        x (np.ndarray): 最良点。
        fun (float): 最良点のコスト。
        cost_trace (list[float]): 初期値と受理した各ステップのコスト。
        iterations (int): 受理したステップ数。
        converged (bool): 収束判定を満たした、または反復上限に達した場合True。
        line_search_failed (bool): 直線探索が失敗して終了した場合True。
        message (str): 終了理由。
    """

    x: np.ndarray
    fun: float
    cost_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    line_search_failed: bool = False
    message: str = ""


class LbfgsHessianApproximation:
    """直近history組の(s, y)からヘッセ行列の逆の作用を近似します。"""

    def __init__(self, history: int):
        self._iterates = deque(maxlen=history)
        self.theta = 1.0

    def __len__(self) -> int:
        return len(self._iterates)

    def append(self, s: np.ndarray, y: np.ndarray) -> bool:
        s_inner_y = float(s @ y)
        if s_inner_y <= 1e-14 * max(1.0, float(y @ y)):
            return False
        self._iterates.append((1.0 / s_inner_y, s.copy(), y.copy()))
        self.theta = float(y @ y) / s_inner_y
        return True

    def reset(self):
        self._iterates.clear()
        self.theta = 1.0

    def inverse_action(self, g: np.ndarray) -> np.ndarray:
        q = g.copy()
        alphas = []
        for rho, s, y in reversed(self._iterates):
            alpha = rho * (s @ q)
            q -= alpha * y
            alphas.append(alpha)
        alphas.reverse()

        r = q / self.theta
        for (rho, s, y), alpha in zip(self._iterates, alphas):
            beta = rho * (y @ r)
            r += (alpha - beta) * s
        return r


class _Memo:
    """直線探索がfとf'を別々に呼ぶため、同じ点の評価を1回にまとめます。"""

    def __init__(self, fun_and_grad: FunAndGrad):
        self._fun_and_grad = fun_and_grad
        self._key: Optional[bytes] = None
        self._value: Optional[tuple[float, np.ndarray]] = None
        self.calls = 0

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        key = np.asarray(x, dtype=float).tobytes()
        if key != self._key:
            f, g = self._fun_and_grad(np.array(x, dtype=float))
            self._key = key
            self._value = (float(f), np.asarray(g, dtype=float))
            self.calls += 1
        return self._value

    def fun(self, x: np.ndarray) -> float:
        return self(x)[0]

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self(x)[1]


def _stalled(trace: list[float], window: int, tol_cost: float) -> bool:
    if len(trace) <= window:
        return False
    recent = np.asarray(trace[-(window + 1):])
    return bool(np.max(np.abs(np.diff(recent))) < tol_cost)


def minimize_lbfgs(
    fun_and_grad: FunAndGrad,
    x0: np.ndarray,
    history: int = 10,
    c1: float = 1e-4,
    c2: float = 0.9,
    max_iter: int = 2000,
    tol_cost: float = 1e-9,
    window: int = 5,
    gtol: float = 1e-7,
    callback: Optional[Callable[[int, np.ndarray, float], None]] = None,
) -> OptimizeResult:
    """L-BFGSでコストを最小化します。

    Args:
        fun_and_grad (FunAndGrad): xから(コスト, 勾配)を返す関数
        x0 (np.ndarray): 初期値
        history (int): 保持する(s, y)の組数
        c1 (float): Armijo条件の定数
        c2 (float): 曲率条件の定数
        max_iter (int): 反復上限
        tol_cost (float): 直近window回のコスト変化がすべてこれ未満なら収束
        window (int): 収束判定の窓幅
        gtol (float): 勾配の最大ノルムがこれ未満なら収束
        callback (Optional[Callable]): 各反復後に(反復回数, x, コスト)で呼ばれます

    Returns:
        OptimizeResult: 結果。直線探索が失敗した場合はその直前の点を返します。
    """

    memo = _Memo(fun_and_grad)
    x = np.array(x0, dtype=float)
    f, g = memo(x)
    trace = [f]
    hessian = LbfgsHessianApproximation(history)
    result = OptimizeResult(x=x, fun=f, cost_trace=trace)

    iteration = 0
    while True:
        grad_norm = float(np.max(np.abs(g))) if g.size else 0.0
        logger.debug(f"L-BFGS: 反復 {iteration}, コスト {f:.12e}, 勾配ノルム {grad_norm:.3e}")
        if grad_norm < gtol:
            result.converged, result.message = True, "勾配ノルムが閾値未満になりました。"
            break
        if _stalled(trace, window, tol_cost):
            result.converged, result.message = True, "コストの変化が閾値未満になりました。"
            break
        if iteration >= max_iter:
            result.converged, result.message = True, "反復上限に達しました。"
            break

        direction = -hessian.inverse_action(g)
        if g @ direction >= 0.0:
            logger.debug("L-BFGS: 降下方向ではないため履歴を破棄します。")
            hessian.reset()
            direction = -g

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            alpha, _, _, f_new, _, g_new = scipy.optimize.line_search(
                memo.fun, memo.grad, x, direction, gfk=g, old_fval=f, c1=c1, c2=c2
            )

        if alpha is None or f_new is None or f_new > f:
            if len(hessian) > 0:
                logger.debug("L-BFGS: 直線探索に失敗したため最急降下方向で再試行します。")
                hessian.reset()
                continue
            result.line_search_failed, result.message = True, "直線探索に失敗しました。"
            break

        s = alpha * direction
        x_new = x + s
        if g_new is None:
            g_new = memo.grad(x_new)
        hessian.append(s, g_new - g)

        x, f, g = x_new, float(f_new), np.asarray(g_new, dtype=float)
        trace.append(f)
        iteration += 1
        if callback is not None:
            callback(iteration, x, f)

    result.x = x
    result.fun = f
    result.cost_trace = trace
    result.iterations = iteration
    return result


def minimize_nelder_mead(
    fun: Callable[[np.ndarray], float],
    x0: np.ndarray,
    max_iter: int = 2000,
    tol_cost: float = 1e-9,
) -> OptimizeResult:
    """勾配を使わない代替の最適化（scipyのNelder-Mead）"""

    trace = [float(fun(np.asarray(x0, dtype=float)))]

    def record(xk):
        trace.append(float(fun(xk)))

    raw = scipy.optimize.minimize(
        fun,
        np.asarray(x0, dtype=float),
        method="Nelder-Mead",
        callback=record,
        options={"maxiter": max_iter, "fatol": tol_cost, "xatol": 1e-8, "adaptive": True},
    )
    best = min(trace[0], float(raw.fun))
    x = raw.x if float(raw.fun) <= trace[0] else np.asarray(x0, dtype=float)
    return OptimizeResult(
        x=np.asarray(x, dtype=float),
        fun=best,
        cost_trace=trace,
        iterations=int(raw.nit),
        converged=bool(raw.success) or int(raw.nit) >= max_iter,
        message=str(raw.message),
    )
