import copy
import os
from dataclasses import dataclass
from typing import Any, List, Optional, Union

from .cyclicwalk import ShiftDistribution
from .errors import ConfigError
from .logger import CustomLogger
from .util import read_json_file, sha256_of, write_json_file

OUTPUT_DIR_ENV = "RQMC_OUTPUT_DIR"


def get_output_path() -> str:
    return "results"


SettingValueClass = Union[type, Any]


@dataclass
class SettingsValueInfo:
    name: str
    required: bool
    type: SettingValueClass
    description: str = None
    default: Any = None
    type_literals: Union[List[str], List[int]] = None
    dict_children: dict[str, "SettingsValueInfo"] = None
    minimum: Optional[float] = None
    maximum: Optional[float] = None

    def __post_init__(self):
        if not self.description:
            self.description = self.name

        if self.default is not None:
            if not _check_type(self.default, self.type):
                raise Exception(
                    f"typeとdefaultの値の型を合わせる必要があります。{self}"
                )

        if self.dict_children is not None and self.type is not dict:
            raise Exception(f"dict_childrenはdict型の場合のみ使用できます。{self}")

        if self.type_literals and self.type not in [str, int]:
            raise Exception(f"type_literalsはstr, int型の場合のみ使用できます。{self}")

        if self.type is dict and self.dict_children is None:
            raise Exception(f"dict型の場合、dict_childrenは必須です。{self}")

    def __repr__(self):
        return f"""
name: {self.name}
description: {self.description}
"""


def _check_type(value: Any, value_type: SettingValueClass) -> bool:
    if value is None:
        return True

    if value_type == List[str]:
        return isinstance(value, list) and all(type(v) is str for v in value)

    if value_type == List[int]:
        return isinstance(value, list) and all(type(v) is int for v in value)

    if value_type == List[float]:
        return isinstance(value, list) and all(type(v) in (int, float) for v in value)

    # JSONでは1.0が1として書かれることがある
    if value_type is float:
        return type(value) in (int, float)

    return type(value) is value_type


def _in_range(value: Any, key_info: SettingsValueInfo) -> bool:
    values = value if isinstance(value, list) else [value]
    for v in values:
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            continue
        if key_info.minimum is not None and v < key_info.minimum:
            return False
        if key_info.maximum is not None and v > key_info.maximum:
            return False
    return True


class Settings:
    """
    実験設定ファイル（JSON）の読み込みと検証。
    省略されたキーは既定値で補い、型・範囲・選択肢の誤りはConfigErrorにします。
    """

    _key_name_map: dict[str, SettingsValueInfo] = {
        "model": SettingsValueInfo(
            name="元モデルの設定",
            required=True,
            type=dict,
            dict_children={
                "n": SettingsValueInfo(
                    name="メモリ量子ビット数のリスト",
                    required=True,
                    type=List[int],
                    default=[2, 3, 4],
                    minimum=1,
                    description="""
元モデルのメモリ量子ビット数nのリストです。サイト数はN = 2^nです。
""",
                ),
                "shift": SettingsValueInfo(
                    name="移動量の分布",
                    required=True,
                    type=dict,
                    default={"kind": "wrapped-gaussian", "params": {}},
                    dict_children={
                        "kind": SettingsValueInfo(
                            name="分布の種類",
                            required=True,
                            type=str,
                            type_literals=[
                                "wrapped-gaussian",
                                "uniform-interval",
                                "point-mass",
                                "table",
                            ],
                            default="wrapped-gaussian",
                            description="""
1ステップの移動量の分布を設定します。
wrapped-gaussian: params = {mean, sigma}。sigmaを省略するとσ = 1/(2N)
uniform-interval: params = {a, b}
point-mass: params = {x0}
table: params = {probs}
""",
                        ),
                        "params": SettingsValueInfo(
                            name="分布のパラメータ",
                            required=False,
                            type=dict,
                            default={},
                            dict_children={},
                        ),
                    },
                ),
                "sigma_values": SettingsValueInfo(
                    name="σのスイープ",
                    required=False,
                    type=List[float],
                    minimum=0.0,
                    description="""
指定すると、σごとにoutput_dir/sigma_<値>/へスイープ全体を実行します。
""",
                ),
            },
        ),
        "reduction": SettingsValueInfo(
            name="次元削減の設定",
            required=True,
            type=dict,
            dict_children={
                "n_tilde": SettingsValueInfo(
                    name="保持量子ビット数のリスト",
                    required=True,
                    type=List[int],
                    default=[1, 2],
                    minimum=0,
                ),
                "v_layers": SettingsValueInfo(
                    name="エンコーダVの層数", required=True, type=int, default=4, minimum=0
                ),
                "u_layers": SettingsValueInfo(
                    name="Ũの層数", required=True, type=int, default=4, minimum=0
                ),
                "alpha": SettingsValueInfo(
                    name="デカップリング項の重みα",
                    required=True,
                    type=float,
                    default=1.0,
                    minimum=0.0,
                ),
                "beta": SettingsValueInfo(
                    name="ダイナミカル項の重みβ",
                    required=True,
                    type=float,
                    default=1.0,
                    minimum=0.0,
                ),
                "k": SettingsValueInfo(
                    name="学習に使うメモリ状態の数K",
                    required=True,
                    type=int,
                    default=256,
                    minimum=1,
                ),
                "burn_in": SettingsValueInfo(
                    name="メモリ状態を得るまでのステップ数",
                    required=False,
                    type=int,
                    minimum=1,
                    description="""
省略するとサイト数Nの16倍です。
""",
                ),
            },
        ),
        "optimizer": SettingsValueInfo(
            name="学習の設定",
            required=True,
            type=dict,
            dict_children={
                "method": SettingsValueInfo(
                    name="最適化手法",
                    required=True,
                    type=str,
                    type_literals=["lbfgs", "nelder-mead"],
                    default="lbfgs",
                ),
                "gradient": SettingsValueInfo(
                    name="勾配の計算方法",
                    required=True,
                    type=str,
                    type_literals=["parameter-shift", "finite-difference"],
                    default="parameter-shift",
                ),
                "init": SettingsValueInfo(
                    name="初期値",
                    required=True,
                    type=str,
                    type_literals=["near-identity", "uniform"],
                    default="near-identity",
                ),
                "max_iter": SettingsValueInfo(
                    name="反復上限", required=True, type=int, default=2000, minimum=1
                ),
                "tol": SettingsValueInfo(
                    name="コスト変化の収束判定",
                    required=True,
                    type=float,
                    default=1e-9,
                    minimum=0.0,
                ),
                "gtol": SettingsValueInfo(
                    name="勾配の収束判定", required=True, type=float, default=1e-7, minimum=0.0
                ),
                "history": SettingsValueInfo(
                    name="L-BFGSの履歴数", required=True, type=int, default=10, minimum=1
                ),
                "restarts": SettingsValueInfo(
                    name="直線探索失敗時の再開回数",
                    required=True,
                    type=int,
                    default=3,
                    minimum=0,
                ),
                "two_phase": SettingsValueInfo(
                    name="二段階学習", required=False, type=bool, default=False
                ),
                "starts": SettingsValueInfo(
                    name="シードあたりの初期値の数",
                    required=True,
                    type=int,
                    default=3,
                    minimum=1,
                    description="""
1個目はinitの方法、2個目以降は一様乱数で初期化し、最終コストが最小の結果を採用します。
""",
                ),
            },
        ),
        "baseline": SettingsValueInfo(
            name="比較手法（MPSの打ち切り）の設定",
            required=True,
            type=dict,
            dict_children={
                "delta_thresh": SettingsValueInfo(
                    name="Δの収束閾値",
                    required=True,
                    type=float,
                    default=1e-8,
                    minimum=0.0,
                ),
                "max_iter": SettingsValueInfo(
                    name="反復上限", required=True, type=int, default=500, minimum=1
                ),
                "restarts": SettingsValueInfo(
                    name="乱数初期値の数", required=True, type=int, default=20, minimum=1
                ),
                "update": SettingsValueInfo(
                    name="更新式",
                    required=True,
                    type=str,
                    type_literals=["projection", "literal"],
                    default="projection",
                    description="""
projection: Ã_c ← G_l A_c G_r（元のMPSを射影）
literal: Ã_c ← G_l Ã_c G_r（d̃ = dの場合のみ）
""",
                ),
            },
        ),
        "seeds": SettingsValueInfo(
            name="乱数シードのリスト",
            required=True,
            type=List[int],
            default=list(range(10)),
            minimum=0,
        ),
        "ensemble_seed": SettingsValueInfo(
            name="メモリアンサンブルの乱数シード",
            required=True,
            type=int,
            default=1234,
            minimum=0,
        ),
        "output_dir": SettingsValueInfo(
            name="出力ディレクトリ",
            required=True,
            type=str,
            default=get_output_path(),
            description=f"""
結果の出力先です。環境変数{OUTPUT_DIR_ENV}、--output-dirの順で上書きされます。
""",
        ),
        "workers": SettingsValueInfo(
            name="ワーカー数",
            required=False,
            type=int,
            minimum=1,
            description="""
省略すると物理コア数です。
""",
        ),
    }

    def __init__(self, file_path: Optional[str] = None):
        self._settings = None
        self._file_path = file_path
        self._logger = CustomLogger(name="Settings")

    def get_help_text(self) -> str:
        lines = []
        self._help_lines(self._key_name_map, "", lines)
        return "\n".join(lines)

    def _help_lines(self, key_name_map: dict[str, SettingsValueInfo], prefix: str, lines: list):
        for key, key_info in key_name_map.items():
            default = "" if key_info.default is None else f" (default: {key_info.default})"
            lines.append(f"{prefix}{key} : {key_info.name}{default}")
            if key_info.description != key_info.name:
                lines.append(key_info.description.strip())
            if key_info.dict_children:
                self._help_lines(key_info.dict_children, f"{prefix}{key}.", lines)

    def load(self, data: Optional[dict] = None) -> dict:
        """設定を読み込み、既定値で補って検証します。

        Args:
            data (Optional[dict]): 指定した場合はファイルの代わりに使います

        Raises:
            ConfigError: ファイルが読めない場合、または設定値が不正な場合

        Returns:
            dict: 既定値で補った設定
        """

        if data is None:
            data = {}
            if self._file_path is not None:
                data, error = read_json_file(self._file_path)
                if error is not None:
                    raise ConfigError(f"設定ファイルを読み込めません。{error}")
        if not isinstance(data, dict):
            raise ConfigError("設定ファイルの最上位はオブジェクトである必要があります。")

        settings = self._fill_defaults(data, self._key_name_map)
        for key, key_info in self._key_name_map.items():
            result, message = self._check_setting_value(settings.get(key), key_info)
            if not result:
                raise ConfigError(message)

        self._settings = settings
        return self._settings

    def save(self, file_path: Optional[str] = None):
        file_path = file_path or self._file_path
        if self._settings is None:
            raise ConfigError("設定値が読み込まれていません。")
        success, message = write_json_file(file_path, self._settings)
        if not success:
            raise ConfigError(f"設定ファイルの保存に失敗しました。: {message}")

    def get_setting_value(self, key: str) -> Any:
        """「reduction.alpha」のようにドット区切りで入れ子のキーを指定できます。"""

        if self._settings is None:
            raise ConfigError("設定値が読み込まれていません。")

        value = self._settings
        key_info = None
        key_name_map = self._key_name_map
        for part in key.split("."):
            key_info = (key_name_map or {}).get(part)
            if key_info is None or not isinstance(value, dict):
                raise ConfigError(f"設定値が見つかりません。: {key}")
            value = value.get(part)
            key_name_map = key_info.dict_children

        if value is None:
            return key_info.default
        return value

    def set_setting_value(self, key: str, value: Any) -> Any:
        if self._settings is None:
            raise ConfigError("設定値が読み込まれていません。")

        parts = key.split(".")
        key_name_map = self._key_name_map
        target = self._settings
        for part in parts[:-1]:
            key_info = key_name_map.get(part)
            if key_info is None or not key_info.dict_children:
                raise ConfigError(f"設定値が見つかりません。: {key}")
            target = target.setdefault(part, {})
            key_name_map = key_info.dict_children

        key_info = key_name_map.get(parts[-1])
        if key_info is None:
            raise ConfigError(f"設定値が見つかりません。: {key}")

        result, message = self._check_setting_value(value, key_info)
        if not result:
            raise ConfigError(message)

        target[parts[-1]] = value
        return value

    def _fill_defaults(self, data: dict, key_name_map: dict[str, SettingsValueInfo]) -> dict:
        result = {}
        for key in data:
            if key not in key_name_map:
                self._logger.warn(f"未知の設定値は無視します。: {key}")

        for key, key_info in key_name_map.items():
            value = data.get(key)
            if value is None:
                value = copy.deepcopy(key_info.default)
            if value is None and key_info.type is dict and key_info.required:
                value = {}

            if key_info.type is dict and isinstance(value, dict) and key_info.dict_children:
                value = self._fill_defaults(value, key_info.dict_children)
            if value is not None:
                result[key] = value
        return result

    def _check_setting_value(self, value: Any, key_info: SettingsValueInfo) -> tuple[bool, str]:
        name = key_info.name
        value_type = key_info.type
        value_literals = key_info.type_literals
        value_type_err_msg = f"{name}の値が不正です。: required_type: {value_type}, current_type: {type(value)}, value: {value}"

        if value is None:
            if key_info.required:
                return False, f"{name}は省略できません。"
            return True, ""

        if not _check_type(value, value_type):
            return False, value_type_err_msg

        if value_literals and value not in value_literals:
            return (
                False,
                f"{name}の値が不正です。入力範囲 : [{','.join(map(str, value_literals))}], 設定値 : {value}",
            )

        if not _in_range(value, key_info):
            return (
                False,
                f"{name}の値が範囲外です。範囲 : [{key_info.minimum}, {key_info.maximum}], 設定値 : {value}",
            )

        if key_info.dict_children:
            for child_key, child_info in key_info.dict_children.items():
                result, message = self._check_setting_value(value.get(child_key), child_info)
                if not result:
                    return result, message

        return True, ""


@dataclass(frozen=True)
class ExperimentConfig:
    """
    検証・既定値補完済みの実験設定。
    Attributes:
        data (dict): 既定値で補った設定（summary.jsonにそのまま出力します）。
        output_dir (str): 出力先（環境変数・引数による上書き後）。
    Methods:
        shift_for(n) -> ShiftDistribution:
            n量子ビットのモデルに使う移動量の分布を返します。
        with_sigma(sigma) -> ExperimentConfig:
            移動量をσのwrapped-gaussianに差し替えた設定を返します。
        config_hash -> str:
            設定のSHA-256（出力先は含みません）。
    """

    data: dict
    output_dir: str

    def __post_init__(self):
        n_values = self.n_values
        if len(n_values) == 0:
            raise ConfigError("model.nが空です。")
        if len(self.n_tilde_values) == 0:
            raise ConfigError("reduction.n_tildeが空です。")
        if len(self.seeds) == 0:
            raise ConfigError("seedsが空です。")
        if max(self.n_tilde_values) >= min(n_values):
            raise ConfigError(
                f"保持量子ビット数は最小のnより小さい必要があります。{self.n_tilde_values} (n={n_values})"
            )
        if self.reduction["alpha"] <= 0 or self.reduction["beta"] <= 0:
            raise ConfigError("重みα, βは正である必要があります。")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seedsに重複があります。{self.seeds}")
        for n in n_values:
            self.shift_for(n)

    @classmethod
    def load(
        cls, file_path: Optional[str] = None, data: Optional[dict] = None, output_dir: Optional[str] = None
    ) -> "ExperimentConfig":
        settings = Settings(file_path).load(data)
        resolved = output_dir or os.environ.get(OUTPUT_DIR_ENV) or settings["output_dir"]
        return cls(data=settings, output_dir=resolved)

    @property
    def n_values(self) -> list[int]:
        return list(self.data["model"]["n"])

    @property
    def n_tilde_values(self) -> list[int]:
        return list(self.data["reduction"]["n_tilde"])

    @property
    def seeds(self) -> list[int]:
        return list(self.data["seeds"])

    @property
    def sigma_values(self) -> list[float]:
        return list(self.data["model"].get("sigma_values") or [])

    @property
    def reduction(self) -> dict:
        return self.data["reduction"]

    @property
    def optimizer(self) -> dict:
        return self.data["optimizer"]

    @property
    def baseline(self) -> dict:
        return self.data["baseline"]

    @property
    def ensemble_seed(self) -> int:
        return self.data["ensemble_seed"]

    @property
    def workers(self) -> Optional[int]:
        return self.data.get("workers")

    @property
    def config_hash(self) -> str:
        return sha256_of({k: v for k, v in self.data.items() if k != "output_dir"})

    def burn_in(self, n: int) -> int:
        return self.reduction.get("burn_in") or 16 * 2**n

    def shift_for(self, n: int) -> ShiftDistribution:
        shift = self.data["model"]["shift"]
        if not isinstance(shift.get("params") or {}, dict):
            raise ConfigError(f"移動量のparamsが不正です。{shift}")
        params = dict(shift.get("params") or {})
        if shift["kind"] == "wrapped-gaussian":
            params.setdefault("mean", 0.0)
            params.setdefault("sigma", 1.0 / (2 * 2**n))
        try:
            return ShiftDistribution.from_dict({"kind": shift["kind"], "params": params})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"移動量の分布が不正です。{e}")

    def with_sigma(self, sigma: float) -> "ExperimentConfig":
        data = copy.deepcopy(self.data)
        data["model"]["shift"] = {"kind": "wrapped-gaussian", "params": {"mean": 0.0, "sigma": sigma}}
        data["model"].pop("sigma_values", None)
        return ExperimentConfig(data=data, output_dir=os.path.join(self.output_dir, f"sigma_{sigma:g}"))


if __name__ == "__main__":
    print(Settings().get_help_text())
