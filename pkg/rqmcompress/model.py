from dataclasses import dataclass, field, fields
from typing import List, Literal, Optional

import numpy as np

from .qcore import SubsystemLayout, is_unitary
from .util import decode_complex, encode_complex

COMPLETENESS_TOLERANCE = 1e-10


def _is_power_of_two(value: int) -> bool:
    return value >= 1 and (value & (value - 1)) == 0


def _check_completeness(operators: np.ndarray, name: str):
    if operators.ndim != 3 or operators.shape[1] != operators.shape[2]:
        raise ValueError(f"{name}の形状が不正です。(d, D, D)が必要です。: {operators.shape}")
    gram = np.einsum("xij,xik->jk", operators.conj(), operators)
    error = np.linalg.norm(gram - np.eye(operators.shape[1]))
    if error > COMPLETENESS_TOLERANCE:
        raise ValueError(f"{name}が完全性条件を満たしません。誤差: {error:.3e}")


@dataclass(frozen=True, eq=False)
class Rqm:
    """
    再帰量子モデル。メモリ⊗出力に作用する結合ユニタリを保持します。
    Attributes:
        n_mem (int): メモリ量子ビット数。
        d_out (int): 出力アルファベットのサイズ（2のべき）。
        u (np.ndarray): 2^n_mem·d_out次元のユニタリ。添字は(memory, output)の順。
    Methods:
        layout() -> SubsystemLayout:
            [memory, output]の因子分解を返します。
        apply(joint_state) -> np.ndarray:
            結合状態にUを作用させます。学習側が利用する唯一の操作です。
        to_dict() / from_dict():
            JSON形式（[re, im]ペア）との相互変換。
    """

    n_mem: int
    d_out: int
    u: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n_mem < 0:
            raise ValueError(f"メモリ量子ビット数が負です。{self.n_mem}")
        if not _is_power_of_two(self.d_out):
            raise ValueError(f"出力アルファベットは2のべきである必要があります。{self.d_out}")

        u = np.array(self.u, dtype=complex)
        dim = self.memory_dim * self.d_out
        if u.shape != (dim, dim):
            raise ValueError(f"ユニタリの次元が不正です。{u.shape} != ({dim}, {dim})")
        if not is_unitary(u):
            raise ValueError("結合演算子がユニタリではありません。")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def memory_dim(self) -> int:
        return 2**self.n_mem

    @property
    def out_qubits(self) -> int:
        return self.d_out.bit_length() - 1

    def layout(self) -> SubsystemLayout:
        return SubsystemLayout(
            dims=(self.memory_dim, self.d_out), names=("memory", "output")
        )

    def apply(self, joint_state: np.ndarray) -> np.ndarray:
        return self.u @ joint_state

    def to_dict(self) -> dict:
        return {
            "n_mem": self.n_mem,
            "d_out": self.d_out,
            "u": encode_complex(self.u),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Rqm":
        try:
            return cls(
                n_mem=int(data["n_mem"]),
                d_out=int(data["d_out"]),
                u=decode_complex(data["u"]),
            )
        except (KeyError, TypeError) as e:
            raise ValueError(f"モデルの形式が不正です。: {e}")


@dataclass(frozen=True, eq=False)
class KrausFamily:
    """
    メモリ空間のクラウス演算子 A^x = (I⊗<x|)U(I⊗|0>)。
    Attributes:
        operators (np.ndarray): 形状(d_out, D, D)。
    """

    operators: np.ndarray = field(repr=False)

    def __post_init__(self):
        operators = np.array(self.operators, dtype=complex)
        _check_completeness(operators, "クラウス演算子")
        operators.setflags(write=False)
        object.__setattr__(self, "operators", operators)

    @property
    def d_out(self) -> int:
        return self.operators.shape[0]

    @property
    def dim(self) -> int:
        return self.operators.shape[1]

    def channel(self, rho: np.ndarray) -> np.ndarray:
        """ε(ρ) = Σ_x A^x ρ A^x†"""

        return np.einsum("xij,jk,xlk->il", self.operators, rho, self.operators.conj())


@dataclass(frozen=True, eq=False)
class UniformMps:
    """
    並進不変MPS。テンソルはクラウス演算子と同じ(d_out, D, D)の形で保持します。
    Attributes:
        tensors (np.ndarray): 形状(d_out, D, D)。Σ_x A^x†A^x = I を満たします。
    """

    tensors: np.ndarray = field(repr=False)

    def __post_init__(self):
        tensors = np.array(self.tensors, dtype=complex)
        _check_completeness(tensors, "MPSテンソル")
        tensors.setflags(write=False)
        object.__setattr__(self, "tensors", tensors)

    @property
    def d_out(self) -> int:
        return self.tensors.shape[0]

    @property
    def bond_dim(self) -> int:
        return self.tensors.shape[1]

    @classmethod
    def from_kraus(cls, kraus: KrausFamily) -> "UniformMps":
        return cls(tensors=kraus.operators)

    def to_kraus(self) -> KrausFamily:
        return KrausFamily(operators=self.tensors)

    def to_dict(self) -> dict:
        return {"d_out": self.d_out, "bond_dim": self.bond_dim, "tensors": encode_complex(self.tensors)}

    @classmethod
    def from_dict(cls, data: dict) -> "UniformMps":
        return cls(tensors=decode_complex(data["tensors"]))


@dataclass(frozen=True, eq=False)
class MemoryEnsemble:
    """
    サンプリングされたメモリ状態の集合（学習データ）。
    Attributes:
        n_mem (int): メモリ量子ビット数。
        d_out (int): 出力アルファベットのサイズ。
        states (np.ndarray): 形状(K, 2^n_mem)の正規化済み状態。
        histories (List[List[int]]): 各状態を生成した出力列。
        burn_in (int): 各軌道のステップ数。
        seed (int): 乱数シード。
        weights (Optional[np.ndarray]): 各状態の重み（合計1）。省略時は一様。
    """

    n_mem: int
    d_out: int
    states: np.ndarray = field(repr=False)
    histories: List[List[int]] = field(repr=False)
    burn_in: int
    seed: int
    weights: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        dim = 2**self.n_mem
        states = np.array(self.states, dtype=complex).reshape(-1, dim)
        if len(self.histories) != states.shape[0]:
            raise ValueError(
                f"状態数と履歴数が一致しません。{states.shape[0]} != {len(self.histories)}"
            )
        if states.shape[0] > 0:
            norms = np.linalg.norm(states, axis=1)
            if np.max(np.abs(norms - 1.0)) > COMPLETENESS_TOLERANCE:
                raise ValueError("正規化されていない状態が含まれています。")

        weights = self.weights
        if weights is not None:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (states.shape[0],) or np.any(weights < 0):
                raise ValueError("重みの形状または値が不正です。")
            total = weights.sum()
            if total <= 0:
                raise ValueError("重みの合計が0です。")
            weights = weights / total

        states.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def effective_weights(self) -> np.ndarray:
        if self.weights is not None:
            return self.weights
        if self.size == 0:
            return np.zeros(0)
        return np.full(self.size, 1.0 / self.size)

    def to_dict(self) -> dict:
        data = {
            "n_mem": self.n_mem,
            "d_out": self.d_out,
            "seed": self.seed,
            "burn_in": self.burn_in,
            "states": encode_complex(self.states),
            "histories": [list(map(int, h)) for h in self.histories],
        }
        if self.weights is not None:
            data["weights"] = self.weights.tolist()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "MemoryEnsemble":
        states = data.get("states") or []
        dim = 2 ** int(data["n_mem"])
        return cls(
            n_mem=int(data["n_mem"]),
            d_out=int(data["d_out"]),
            states=decode_complex(states) if states else np.zeros((0, dim), complex),
            histories=[list(h) for h in data.get("histories", [])],
            burn_in=int(data["burn_in"]),
            seed=int(data["seed"]),
            weights=data.get("weights"),
        )


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class ExperimentRecord:
    """
    スイープ結果の1行（n, ñ, 手法, シード）。
    Attributes:
        n (int): 元のメモリ量子ビット数。
        n_tilde (int): 圧縮後のメモリ量子ビット数。
        method (Literal["trained", "baseline"]): 手法。
        seed (int): 乱数シード。
        r_f (float): 量子忠実度発散率（bit/step）。
        c_q (float): 元モデルのC_q（bit）。
        final_cost (float): 学習の最終コスト（ベースラインはnan）。
        d_bar (float): 平均デカップリング忠実度（ベースラインはnan）。
        f_bar (float): 平均ダイナミカル忠実度（ベースラインはnan）。
        iterations (int): 反復回数。
        wall_time_s (float): 実行時間（秒）。
        config_hash (str): 設定のSHA-256。
    Methods:
        csv_header() -> str:
            CSVのヘッダー行を返します。
        to_csv_row() -> str:
            CSVの1行を返します。wall_time_s以外は再実行で完全に一致します。
    """

    n: int
    n_tilde: int
    method: Literal["trained", "baseline"]
    seed: int
    r_f: float
    c_q: float
    final_cost: float
    d_bar: float
    f_bar: float
    iterations: int
    wall_time_s: float
    config_hash: str

    def __post_init__(self):
        if self.method not in ("trained", "baseline"):
            raise ValueError(f"手法が不正です。{self.method}")
        if self.r_f < 0:
            raise ValueError(f"r_fが負です。{self.r_f}")

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.columns())

    def to_csv_row(self) -> str:
        values = []
        for name in self.columns():
            value = getattr(self, name)
            if name == "wall_time_s":
                values.append(f"{value:.3f}")
            else:
                values.append(_format_value(value))
        return ",".join(values)

    @classmethod
    def from_csv_row(cls, row: dict) -> "ExperimentRecord":
        return cls(
            n=int(row["n"]),
            n_tilde=int(row["n_tilde"]),
            method=row["method"],
            seed=int(row["seed"]),
            r_f=float(row["r_f"]),
            c_q=float(row["c_q"]),
            final_cost=float(row["final_cost"]),
            d_bar=float(row["d_bar"]),
            f_bar=float(row["f_bar"]),
            iterations=int(row["iterations"]),
            wall_time_s=float(row["wall_time_s"]),
            config_hash=row["config_hash"],
        )
