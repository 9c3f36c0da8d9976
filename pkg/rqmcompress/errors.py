class RqmcError(Exception):
    """rqmcompressの例外基底クラス。exit_codeはCLIの終了コードに対応します。"""

    exit_code = 1


class ConfigError(RqmcError):
    """設定ファイル・コマンド引数の誤り"""

    exit_code = 2


class DataError(RqmcError):
    """入力ファイル・チェックポイントの不整合"""

    exit_code = 3


class NumericalError(RqmcError):
    """数値計算の失敗（収束しない・状態が不正など）"""

    exit_code = 4


class DimensionError(DataError, ValueError):
    pass


class CheckpointError(DataError):
    pass


class QuantumStateError(NumericalError, ValueError):
    pass


class NonPsdGramError(NumericalError):
    pass


class LineSearchError(NumericalError):
    pass
