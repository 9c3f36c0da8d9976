import csv
import json
import math
import os

import pytest

from . import cli
from .cli import (
    CellResult,
    build_problem,
    checkpoint_path,
    cmd_train,
    compare_methods,
    desk_sweep_checks,
    main,
    model_path,
    summarize,
    sweep_cells,
    trained_convergence,
    trained_rate,
)
from .ansatz import build_unitary
from .cyclicwalk import build_walk
from .model import ExperimentRecord
from .qfdr import compressed_boundary, mps_from_model, output_fidelity, rate_convergence, stationary_boundary
from .training import TrainOptions, train
from .setting import ExperimentConfig
from .view import AppView

small_config = {
    "model": {"n": [2]},
    "reduction": {"n_tilde": [1], "v_layers": 1, "u_layers": 1, "k": 6, "burn_in": 4},
    "optimizer": {"max_iter": 15, "restarts": 1},
    "baseline": {"max_iter": 40, "restarts": 2},
    "seeds": [0, 1],
    "workers": 1,
}


def _assert_close(actual, expected, atol: float, label: str):
    error = abs(actual - expected)
    if error > atol:
        raise Exception(f"{label}が正しくありません。誤差: {error:.3e}")


def _write_config(tmp_path, data: dict) -> str:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return str(path)


def _read_rows(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as file:
        return list(csv.DictReader(file))


def _run(tmp_path, *args: str, config: dict = None) -> int:
    prefix = ["--output-dir", str(tmp_path / "out"), "--quiet"]
    if config is not None:
        prefix += ["--config", _write_config(tmp_path, config)]
    return main(prefix + list(args))


def test_build_model_memory_complexity(tmp_path):
    shift = json.dumps({"kind": "point-mass", "params": {"x0": 0.25}})
    assert _run(tmp_path, "build-model", "--n", "2", "--shift", shift) == 0
    data = json.loads(open(model_path(str(tmp_path / "out"), 2), encoding="utf-8").read())
    _assert_close(data["c_q"], 2.0, 1e-8, "確定的なウォークのC_q")
    _assert_close(data["classical_complexity"], 2.0, 1e-8, "確定的なウォークのC_μ")

    shift = json.dumps({"kind": "uniform-interval", "params": {"a": 0.0, "b": 1.0}})
    assert _run(tmp_path, "build-model", "--n", "1", "--shift", shift) == 0
    data = json.loads(open(model_path(str(tmp_path / "out"), 1), encoding="utf-8").read())
    _assert_close(data["c_q"], 0.0, 1e-8, "一様なウォークのC_q")
    _assert_close(data["transition"][0][1], 0.5, 1e-12, "一様なウォークの遷移確率")


@pytest.mark.parametrize("shift", ["{not json", '{"kind": "cauchy"}', "[1, 2]", '{"kind": "point-mass", "params": {}}'])
def test_build_model_invalid_shift(tmp_path, shift):
    assert _run(tmp_path, "build-model", "--n", "2", "--shift", shift) == 2


def test_empty_seed_list(tmp_path):
    assert _run(tmp_path, "sweep", config={**small_config, "seeds": []}) == 2


def test_missing_model_file(tmp_path):
    assert _run(tmp_path, "evaluate", "--model", str(tmp_path / "missing.json"), "--identical") == 2


def test_corrupt_checkpoint(tmp_path):
    assert _run(tmp_path, "build-model", "--n", "2") == 0
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    model = model_path(str(tmp_path / "out"), 2)
    assert _run(tmp_path, "evaluate", "--model", model, "--checkpoint", str(broken)) == 3


def test_evaluate_identical(tmp_path):
    assert _run(tmp_path, "build-model", "--n", "2") == 0
    model = model_path(str(tmp_path / "out"), 2)
    assert _run(tmp_path, "evaluate", "--model", model, "--identical") == 0
    assert _run(tmp_path, "evaluate", "--model", model, "--identical") == 0

    rows = _read_rows(str(tmp_path / "out" / "evaluations.csv"))
    assert len(rows) == 2
    record = ExperimentRecord.from_csv_row(rows[0])
    assert record.r_f == 0.0
    assert record.method == "baseline"
    assert record.n_tilde == 2


def test_evaluate_requires_target(tmp_path):
    assert _run(tmp_path, "build-model", "--n", "2") == 0
    model = model_path(str(tmp_path / "out"), 2)
    assert _run(tmp_path, "evaluate", "--model", model) == 2
    assert _run(tmp_path, "evaluate", "--model", model, "--baseline") == 2


def test_train_and_evaluate(tmp_path):
    assert _run(tmp_path, "build-model", "--n", "2", config=small_config) == 0
    model = model_path(str(tmp_path / "out"), 2)
    assert _run(tmp_path, "--seed", "3", "train", "--model", model, config=small_config) == 0

    checkpoint = checkpoint_path(str(tmp_path / "out"), 2, 1, 3)
    saved = json.loads(open(checkpoint, encoding="utf-8").read())
    assert saved["config"]["finished"] is True
    assert saved["config"]["n_tilde"] == 1

    assert _run(tmp_path, "evaluate", "--model", model, "--checkpoint", checkpoint, config=small_config) == 0
    assert _run(tmp_path, "--seed", "3", "evaluate", "--model", model, "--baseline", "--n-tilde", "1", config=small_config) == 0

    rows = [ExperimentRecord.from_csv_row(r) for r in _read_rows(str(tmp_path / "out" / "evaluations.csv"))]
    assert [r.method for r in rows] == ["trained", "baseline"]
    assert all(r.seed == 3 and r.n == 2 and r.n_tilde == 1 for r in rows)
    assert all(r.r_f >= 0 for r in rows)
    assert math.isnan(rows[1].final_cost)
    assert -2.0 <= rows[0].final_cost <= 0.0


def test_train_skips_finished(tmp_path):
    config = ExperimentConfig.load(data={**small_config, "seeds": [0]}, output_dir=str(tmp_path))
    assert _run(tmp_path, "build-model", "--n", "2", config=small_config) == 0
    model = model_path(str(tmp_path / "out"), 2)

    cmd_train(config, AppView(quiet=True), model)
    view = AppView(quiet=True)
    cmd_train(config, view, model)
    assert any("学習済み" in line for line in view.lines)

    other = {**small_config, "seeds": [0], "reduction": {**small_config["reduction"], "alpha": 2.0}}
    assert _run(tmp_path, "--output-dir", str(tmp_path), "train", "--model", model, config=other) == 3


def test_sweep(tmp_path):
    assert _run(tmp_path, "sweep", config=small_config) == 0
    out = tmp_path / "out"
    for name in ("config.json", "results.csv", "summary.json", "rf_vs_n.dat", "rf_vs_n.gp"):
        assert (out / name).exists()

    lines = (out / "results.csv").read_text().splitlines()
    assert lines[0] == ExperimentRecord.csv_header()
    rows = [ExperimentRecord.from_csv_row(r) for r in _read_rows(str(out / "results.csv"))]
    assert [(r.method, r.seed) for r in rows] == [("trained", 0), ("trained", 1), ("baseline", 0), ("baseline", 1)]

    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == {"ok": 4, "failed": 0}
    assert summary["resolved"] == [
        {"n": 2, "burn_in": 4, "shift": {"kind": "wrapped-gaussian", "params": {"mean": 0.0, "sigma": 0.125}}}
    ]
    assert [(row["n"], row["n_tilde"]) for row in summary["comparison"]] == [(2, 1)]
    assert all(0 <= cell["unconverged"] <= cell["count"] for cell in summary["cells"])
    assert {(c["method"], c["count"]) for c in summary["cells"]} == {("trained", 2), ("baseline", 2)}
    for cell in summary["cells"]:
        assert cell["r_f"]["best"] <= cell["r_f"]["mean"] + 1e-15
        _assert_close(cell["c_q"], rows[0].c_q, 1e-12, "C_q")

    # 実行時間以外は再実行で一致します
    def strip(line: str) -> str:
        index = ExperimentRecord.columns().index("wall_time_s")
        return ",".join(v for i, v in enumerate(line.split(",")) if i != index)

    assert _run(tmp_path, "sweep", config=small_config) == 0
    again = (out / "results.csv").read_text().splitlines()
    assert list(map(strip, again)) == list(map(strip, lines))


def test_sweep_cells_order():
    config = ExperimentConfig.load(data={**small_config, "model": {"n": [2, 3]}}, output_dir="out")
    cells = sweep_cells(config)
    assert [(c.n, c.method, c.seed) for c in cells][:4] == [
        (2, "trained", 0),
        (2, "trained", 1),
        (2, "baseline", 0),
        (2, "baseline", 1),
    ]
    assert len(cells) == 8


def test_summarize_non_finite():
    config = ExperimentConfig.load(data=small_config, output_dir="out")

    def record(seed: int, r_f: float) -> ExperimentRecord:
        return ExperimentRecord(
            n=2, n_tilde=1, method="baseline", seed=seed, r_f=r_f, c_q=1.0,
            final_cost=math.nan, d_bar=math.nan, f_bar=math.nan,
            iterations=1, wall_time_s=0.0, config_hash=config.config_hash,
        )

    results = [
        CellResult(2, 1, "baseline", 0, "ok", record(0, 0.5)),
        CellResult(2, 1, "baseline", 1, "ok", record(1, math.inf), converged=False),
        CellResult(2, 1, "baseline", 2, "failed", message="失敗"),
    ]
    summary = summarize(config, results)
    cell = summary["cells"][0]
    assert cell["count"] == 2 and cell["failed"] == 1
    assert cell["unconverged"] == 1
    assert summary["comparison"] == []
    assert cell["r_f"]["mean"] is None
    assert cell["r_f"]["best"] == 0.5
    assert cell["final_cost"] is None
    assert summary["status"] == {"ok": 2, "failed": 1}
    assert summary["failures"][0]["seed"] == 2
    json.dumps(summary, allow_nan=False)


def test_sigma_sweep(tmp_path):
    data = {**small_config, "seeds": [0], "model": {"n": [2], "sigma_values": [0.1, 0.2]}}
    data["optimizer"] = {"max_iter": 5, "restarts": 1}
    assert _run(tmp_path, "sweep", config=data) == 0
    for sigma in ("0.1", "0.2"):
        assert os.path.exists(tmp_path / "out" / f"sigma_{sigma}" / "summary.json")


def test_selftest(tmp_path):
    assert main(["--quiet", "selftest", "--suite", "param-count", "--suite", "model"]) == 0
    assert main(["--quiet", "selftest", "--help-config"]) == 0


def test_baseline_iteration_cap_is_flagged(tmp_path):
    data = {**small_config, "optimizer": {"max_iter": 3, "restarts": 0}, "baseline": {"max_iter": 1, "restarts": 1}}
    assert _run(tmp_path, "sweep", config=data) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    baseline = next(c for c in summary["cells"] if c["method"] == "baseline")
    assert baseline["count"] == 2
    assert baseline["unconverged"] == 2


def _cell(n: int, n_tilde: int, method: str, best: float) -> dict:
    return {"n": n, "n_tilde": n_tilde, "method": method, "r_f": {"best": best}}


def test_compare_methods():
    cells = [
        _cell(2, 1, "trained", 0.01),
        _cell(2, 1, "baseline", 0.2),
        _cell(3, 1, "trained", 0.0),
        _cell(3, 1, "baseline", 0.1),
        _cell(3, 2, "trained", 0.05),
        {"n": 3, "n_tilde": 2, "method": "baseline", "r_f": None},
    ]
    rows = compare_methods(cells)
    assert [(r["n"], r["n_tilde"]) for r in rows] == [(2, 1), (3, 1)]
    _assert_close(rows[0]["ratio"], 20.0, 1e-12, "比")
    assert rows[0]["trained_better"]
    assert rows[1]["ratio"] is None and rows[1]["trained_better"]


def _row(n: int, n_tilde: int, trained: float, baseline: float) -> dict:
    return {
        "n": n,
        "n_tilde": n_tilde,
        "trained_best": trained,
        "baseline_best": baseline,
        "ratio": baseline / trained,
        "trained_better": trained < baseline,
    }


def test_desk_sweep_checks():
    good = [
        _row(2, 1, 0.01, 0.02),
        _row(3, 1, 0.01, 0.05),
        _row(4, 1, 0.01, 0.2),
        _row(3, 2, 0.001, 0.01),
        _row(4, 2, 0.002, 0.02),
    ]
    assert all(c["passed"] for c in desk_sweep_checks(good))

    worse = [_row(2, 1, 0.13, 0.086), _row(3, 1, 0.26, 0.083), _row(3, 2, 0.01, 0.02)]
    checks = {c["name"]: c["passed"] for c in desk_sweep_checks(worse)}
    assert checks == {
        "ñ=1, n≥3で学習がベースラインを下回る": False,
        "10倍以上の差があるセル": False,
        "ñ=2の学習のr_fの幅": False,
        "ñ=1のベースラインのr_fがnとともに増加": False,
    }


def test_desk_sweep_suite(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "DESK_SWEEP", {**small_config, "seeds": [0]})
    code = main(["--quiet", "--output-dir", str(tmp_path), "selftest", "--suite", "desk-sweep"])
    assert code in (0, 4)
    summary = json.loads((tmp_path / "desk-sweep" / "summary.json").read_text())
    assert len(summary["checks"]) == 4
    assert summary["comparison"][0]["n"] == 2
    assert (code == 0) == all(c["passed"] for c in summary["checks"])


def test_trained_convergence_starts_from_compressed_state():
    config = ExperimentConfig.load(data=small_config, output_dir="out")
    model = build_walk(2, config.shift_for(2)).model
    problem = build_problem(config, model, 1, seed=0)
    result = train(problem, TrainOptions(max_iter=10), seed=0)

    brute = trained_convergence(problem, result, l_max=30)
    target = mps_from_model(problem.target)
    reduced = mps_from_model((build_unitary(problem.u_spec, result.theta2), 1), problem.d_out)
    rho_m = stationary_boundary(target)
    sigma = compressed_boundary(rho_m, build_unitary(problem.v_spec, result.theta1), 1)
    expected = output_fidelity(target, reduced, 2, rho_m, sigma)
    _assert_close(brute.fidelities[1], expected, 1e-10, "圧縮した境界からのF_2")

    assert len(rate_convergence(brute, trained_rate(problem, result.theta2).r_f)) == 27
