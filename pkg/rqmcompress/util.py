import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from typing import Any, Optional, Tuple

import numpy as np

from .logger import CustomLogger

logger = CustomLogger(name=__name__)


@dataclass
class OpenFileResult:
    text: str = ""
    error_message: str = None

    def is_error(self) -> bool:
        return self.error_message is not None


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"JSONに変換できない型です。: {type(obj)}")


def safe_json_dumps(data: Any, ensure_ascii=False, indent=4) -> Optional[str]:
    try:
        return json.dumps(
            data, ensure_ascii=ensure_ascii, indent=indent, default=_json_default
        )
    except Exception as e:
        logger.warn(f"JSON dumps error: {e}")
        return None


def safe_json_loads(json_str: str) -> Optional[Any]:
    try:
        return json.loads(json_str)
    except Exception as e:
        logger.warn(f"JSON loads error: {e}")
        return None


def canonical_json(data: Any) -> str:
    """キー順を固定した改行なしのJSON文字列（ハッシュ計算用）"""

    return json.dumps(
        data, sort_keys=True, separators=(",", ":"), default=_json_default
    )


def sha256_of(data: Any) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def open_file(file_path: str, encoding="utf-8") -> OpenFileResult:
    result = OpenFileResult()
    try:
        with open(file_path, "r", encoding=encoding) as file:
            result.text = file.read()
    except FileNotFoundError:
        result.error_message = f"File not found: {file_path}"
    except Exception as e:
        result.error_message = f"Open file error: {e}"

    return result


def write_file(file_path: str, text: str, encoding="utf-8") -> Tuple[bool, str]:
    """一時ファイルに書き込んでから置き換えます。途中で中断しても既存ファイルは壊れません。"""

    tmp_path = None
    try:
        directory = os.path.dirname(os.path.abspath(file_path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-")
        with os.fdopen(fd, "w", encoding=encoding) as file:
            file.write(text)
            file.flush()
            os.fsync(file.fileno())
        os.replace(tmp_path, file_path)
    except Exception as e:
        if tmp_path and os.path.exists(tmp_path):
            os.remove(tmp_path)
        return False, f"Write file error: {e}"

    return True, ""


def append_lines(file_path: str, lines: list[str], encoding="utf-8") -> Tuple[bool, str]:
    """完全な行のみを1回の書き込みで追記します。"""

    try:
        directory = os.path.dirname(os.path.abspath(file_path))
        os.makedirs(directory, exist_ok=True)
        payload = "".join(line if line.endswith("\n") else line + "\n" for line in lines)
        with open(file_path, "a", encoding=encoding, newline="") as file:
            file.write(payload)
            file.flush()
            os.fsync(file.fileno())
    except Exception as e:
        return False, f"Append file error: {e}"

    return True, ""


def read_json_file(file_path: str) -> Tuple[Optional[Any], Optional[str]]:
    result = open_file(file_path)
    if result.is_error():
        return None, result.error_message

    data = safe_json_loads(result.text)
    if data is None:
        return None, f"JSONとして読み込めません。: {file_path}"

    return data, None


def write_json_file(file_path: str, data: Any) -> Tuple[bool, str]:
    text = safe_json_dumps(data)
    if text is None:
        return False, f"JSONに変換できません。: {file_path}"
    return write_file(file_path, text + "\n")


def encode_complex(array: np.ndarray) -> list:
    """複素配列を[re, im]ペアの入れ子リストに変換します。"""

    array = np.asarray(array, dtype=complex)
    return np.stack([array.real, array.imag], axis=-1).tolist()


def decode_complex(data: list) -> np.ndarray:
    pairs = np.asarray(data, dtype=float)
    if pairs.ndim == 0 or pairs.shape[-1] != 2:
        raise ValueError(f"[re, im]ペアの形式ではありません。shape: {pairs.shape}")
    return pairs[..., 0] + 1j * pairs[..., 1]


def array_digest(array: np.ndarray) -> str:
    """配列の形状と内容（complex128）のSHA-256"""

    array = np.ascontiguousarray(np.asarray(array, dtype=complex))
    digest = hashlib.sha256(str(array.shape).encode("utf-8"))
    digest.update(array.tobytes())
    return digest.hexdigest()
