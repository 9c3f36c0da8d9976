import numpy as np
import pytest

from .util import (
    append_lines,
    array_digest,
    decode_complex,
    encode_complex,
    open_file,
    read_json_file,
    sha256_of,
    write_file,
    write_json_file,
)
from .view import AppView


def test_write_and_append(tmp_path):
    path = tmp_path / "nested" / "out.csv"
    success, message = write_file(str(path), "a,b\n")
    assert success and message == ""

    success, _ = append_lines(str(path), ["1,2", "3,4\n"])
    assert success
    assert path.read_text() == "a,b\n1,2\n3,4\n"
    assert [p.name for p in path.parent.iterdir()] == ["out.csv"]


def test_open_missing_file(tmp_path):
    result = open_file(str(tmp_path / "missing.txt"))
    assert result.is_error()

    data, error = read_json_file(str(tmp_path / "missing.json"))
    assert data is None and error is not None

    broken = tmp_path / "broken.json"
    broken.write_text("{")
    data, error = read_json_file(str(broken))
    assert data is None and "broken.json" in error


def test_json_numpy_values(tmp_path):
    path = tmp_path / "data.json"
    success, _ = write_json_file(str(path), {"x": np.arange(3), "y": np.float64(0.5), "flag": np.bool_(True)})
    assert success
    data, error = read_json_file(str(path))
    assert error is None
    assert data == {"x": [0, 1, 2], "y": 0.5, "flag": True}


def test_complex_encoding():
    array = np.array([[1 + 2j, -0.5j], [3.0, 0.0]])
    encoded = encode_complex(array)
    assert encoded[0][0] == [1.0, 2.0]
    assert np.array_equal(decode_complex(encoded), array)

    with pytest.raises(ValueError):
        decode_complex([1.0, 2.0, 3.0])


def test_hashes():
    assert sha256_of({"a": 1, "b": [1, 2]}) == sha256_of({"b": [1, 2], "a": 1})
    assert sha256_of({"a": 1}) != sha256_of({"a": 2})

    array = np.eye(2)
    assert array_digest(array) == array_digest(array.astype(complex))
    assert array_digest(array) != array_digest(array.reshape(1, 4))


def test_view(tmp_path):
    view = AppView(quiet=True)
    view.push("開始")
    view.table([{"n": 2, "r_f": "1.0e-03"}, {"n": 10, "r_f": "2.0e-01"}])
    assert view.lines[0] == "開始"
    assert view.lines[1].split() == ["n", "r_f"]
    assert view.lines[3].split() == ["10", "2.0e-01"]

    path = tmp_path / "view.log"
    view.dump(str(path))
    assert path.read_text().splitlines() == view.lines
