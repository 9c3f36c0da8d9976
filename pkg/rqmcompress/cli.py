"""
コマンドラインの各処理（build-model, train, evaluate, sweep, selftest）。

出力ディレクトリの構成:
    models/model_n{n}.json          元モデル（build-model）
    checkpoints/n{n}_nt{ñ}_seed{s}.json  学習のチェックポイント（train）
    evaluations.csv                 evaluateの結果
    results.csv, summary.json       sweepの結果（画面出力はsweep.log）
    rf_vs_n.dat, rf_vs_n.gp         作図用データとgnuplotスクリプト
"""

import asyncio
import copy
import json
import logging
import math
import os
import time
from argparse import ArgumentParser, Namespace
from dataclasses import dataclass, field
from typing import Awaitable, Callable, Literal, Optional, Sequence

import numpy as np

from . import report
from .ansatz import AnsatzSpec, build_unitary, param_count
from .baseline import canonicalize, gauge_transform, truncate, truncate_once
from .cyclicwalk import (
    ShiftDistribution,
    build_walk,
    classical_complexity,
    gram_matrix,
    memory_states,
)
from .errors import ConfigError, DataError, NumericalError, RqmcError
from .logger import CustomLogger, set_level
from .model import ExperimentRecord, Rqm, UniformMps
from .qcore import kron, ket, random_unitary
from .qfdr import (
    BruteForceRate,
    QfdrResult,
    brute_force_rate,
    compressed_boundary,
    mps_from_model,
    qfdr,
    rate_convergence,
    stationary_boundary,
    transfer_rate,
)
from .rqm import cq, exact_stationary, kraus_from_unitary, max_entropy, sample_memory_ensemble
from .setting import OUTPUT_DIR_ENV, ExperimentConfig, Settings
from .training import (
    CostFunction,
    ReductionProblem,
    TrainOptions,
    TrainResult,
    combined_cost,
    decoupling_fidelity,
    dynamical_fidelity,
    load_checkpoint,
    planted_problem,
    reduced_state,
    reference_state,
    resume,
    save_checkpoint,
    train,
    train_starts,
)
from .util import append_lines, read_json_file, write_json_file
from .view import AppView
from .worker import OrderedCsvWriter, run_cells

logger = CustomLogger(name=__name__)

Method = Literal["trained", "baseline"]


def model_path(output_dir: str, n: int) -> str:
    return os.path.join(output_dir, "models", f"model_n{n}.json")


def checkpoint_path(output_dir: str, n: int, n_tilde: int, seed: int) -> str:
    return os.path.join(output_dir, "checkpoints", f"n{n}_nt{n_tilde}_seed{seed}.json")


def with_seeds(config: ExperimentConfig, seeds: Optional[Sequence[int]]) -> ExperimentConfig:
    if seeds is None:
        return config
    data = copy.deepcopy(config.data)
    data["seeds"] = list(seeds)
    return ExperimentConfig(data=data, output_dir=config.output_dir)


def memory_complexity(model: Rqm) -> tuple[float, float]:
    """定常状態のC_q（フォンノイマンエントロピー）とレニー0エントロピー"""

    rho = exact_stationary(kraus_from_unitary(model)).rho
    return cq(rho), max_entropy(rho)


def build_problem(config: ExperimentConfig, model: Rqm, n_tilde: int, seed: int = 0) -> ReductionProblem:
    reduction = config.reduction
    n = model.n_mem
    ensemble = sample_memory_ensemble(
        model, k=reduction["k"], burn_in=config.burn_in(n), seed=config.ensemble_seed
    )
    return ReductionProblem(
        target=model,
        ensemble=ensemble,
        n_reduced=n_tilde,
        v_spec=AnsatzSpec(n_qubits=n, n_layers=reduction["v_layers"]),
        u_spec=AnsatzSpec(n_qubits=n_tilde + model.out_qubits, n_layers=reduction["u_layers"]),
        alpha=float(reduction["alpha"]),
        beta=float(reduction["beta"]),
        seed=seed,
    )


def train_options(config: ExperimentConfig) -> TrainOptions:
    optimizer = config.optimizer
    return TrainOptions(
        max_iter=optimizer["max_iter"],
        tol_cost=float(optimizer["tol"]),
        gtol=float(optimizer["gtol"]),
        history=optimizer["history"],
        restarts=optimizer["restarts"],
        gradient=optimizer["gradient"],
        init=optimizer["init"],
        two_phase=optimizer.get("two_phase", False),
        method=optimizer["method"],
    )


def trained_rate(problem: ReductionProblem, theta2: np.ndarray) -> QfdrResult:
    u_tilde = build_unitary(problem.u_spec, theta2)
    reduced = mps_from_model((u_tilde, problem.n_reduced), problem.d_out)
    return qfdr(mps_from_model(problem.target), reduced)


def trained_convergence(problem: ReductionProblem, result: TrainResult, l_max: int = 40) -> BruteForceRate:
    """
    学習したモデルの有限長の傾き。元モデルは定常状態、削減後のモデルは
    元モデルの定常状態をVで圧縮した状態Tr_T[V ρ V†]から始めます。
    """

    target = mps_from_model(problem.target)
    reduced = mps_from_model((build_unitary(problem.u_spec, result.theta2), problem.n_reduced), problem.d_out)
    rho_m = stationary_boundary(target)
    v = build_unitary(problem.v_spec, result.theta1)
    return transfer_rate(target, reduced, l_max, rho_m, compressed_boundary(rho_m, v, problem.n_reduced))


def trained_record(
    problem: ReductionProblem, result: TrainResult, c_q: float, config_hash: str
) -> ExperimentRecord:
    rate = trained_rate(problem, result.theta2)
    return ExperimentRecord(
        n=problem.n_mem,
        n_tilde=problem.n_reduced,
        method="trained",
        seed=result.seed,
        r_f=rate.r_f,
        c_q=c_q,
        final_cost=result.final_cost,
        d_bar=result.d_bar,
        f_bar=result.f_bar,
        iterations=result.iterations,
        wall_time_s=result.wall_time_s,
        config_hash=config_hash,
    )


def baseline_record(
    config: ExperimentConfig, model: Rqm, n_tilde: int, seed: int, c_q: float
) -> tuple[ExperimentRecord, bool]:
    """ベースラインの結果行と、最良の再出発がΔの閾値に達したか"""

    start = time.perf_counter()
    settings = config.baseline
    mps = mps_from_model(model)
    result = truncate(
        mps,
        2**n_tilde,
        delta_thresh=float(settings["delta_thresh"]),
        max_iter=settings["max_iter"],
        restarts=settings["restarts"],
        seed=seed,
        update=settings["update"],
    )
    rate = qfdr(mps, result.mps)
    if not result.converged:
        logger.warn(
            f"ベースラインが反復上限に達しました。n={model.n_mem} ñ={n_tilde} seed={seed}: "
            f"Δ={result.best.final_delta:.3e}"
        )
    record = ExperimentRecord(
        n=model.n_mem,
        n_tilde=n_tilde,
        method="baseline",
        seed=seed,
        r_f=rate.r_f,
        c_q=c_q,
        final_cost=math.nan,
        d_bar=math.nan,
        f_bar=math.nan,
        iterations=result.best.iterations,
        wall_time_s=time.perf_counter() - start,
        config_hash=config.config_hash,
    )
    return record, result.converged


def load_model_file(path: str) -> tuple[Rqm, dict]:
    """build-modelで書き出したモデルを読み込みます。

    Raises:
        ConfigError: ファイルが無い場合
        DataError: ファイルの形式が不正な場合
    """

    if not os.path.exists(path):
        raise ConfigError(f"モデルファイルが見つかりません。: {path}")
    data, error = read_json_file(path)
    if error is not None:
        raise DataError(f"モデルファイルを読み込めません。{error}")
    try:
        return Rqm.from_dict(data["model"]), data
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"モデルファイルの形式が不正です。: {path}: {e}")


def cmd_build_model(config: ExperimentConfig, view: AppView, n_values: Optional[Sequence[int]] = None) -> list[str]:
    """config.model.nの各nについてウォークのモデルを構築し、JSONに保存します。"""

    paths = []
    rows = []
    for n in n_values or config.n_values:
        shift = config.shift_for(n)
        walk = build_walk(n, shift)
        c_q, d_0 = memory_complexity(walk.model)
        c_classical = classical_complexity(walk.transition)
        data = {
            "n": n,
            "shift": shift.to_dict(),
            "masses": walk.masses.tolist(),
            "transition": walk.transition.p.tolist(),
            "c_q": c_q,
            "max_entropy": d_0,
            "classical_complexity": c_classical,
            "model": walk.model.to_dict(),
            "config_hash": config.config_hash,
        }
        path = model_path(config.output_dir, n)
        success, message = write_json_file(path, data)
        if not success:
            raise DataError(f"モデルファイルを保存できません。{message}")
        paths.append(path)
        rows.append({"n": n, "kind": shift.kind, "C_q": f"{c_q:.6f}", "D_0": f"{d_0:.6f}", "C_μ": f"{c_classical:.6f}"})
        logger.info(f"モデルを保存しました。n={n}, C_q={c_q:.6f}: {path}")

    view.table(rows)
    return paths


def _finished(path: str, problem: ReductionProblem) -> Optional[dict]:
    if not os.path.exists(path):
        return None
    data = load_checkpoint(path, problem)
    if (data.get("config") or {}).get("finished"):
        return data
    return None


def cmd_train(
    config: ExperimentConfig,
    view: AppView,
    model_file: str,
    n_tilde_values: Optional[Sequence[int]] = None,
) -> list[str]:
    """シードごとに学習し、チェックポイントを保存します。完了済みのチェックポイントは飛ばします。"""

    model, info = load_model_file(model_file)
    c_q = float(info.get("c_q", memory_complexity(model)[0]))
    options = train_options(config)
    paths = []
    for n_tilde in n_tilde_values or [t for t in config.n_tilde_values if t < model.n_mem]:
        for seed in config.seeds:
            problem = build_problem(config, model, n_tilde, seed)
            path = checkpoint_path(config.output_dir, model.n_mem, n_tilde, seed)
            paths.append(path)
            if _finished(path, problem) is not None:
                view.push(f"学習済みのため飛ばします。: {path}")
                continue

            if os.path.exists(path):
                result = resume(problem, path, options)
            else:
                result = train_starts(problem, options, seed, config.optimizer["starts"], checkpoint_path=path)
            save_checkpoint(
                path,
                problem,
                result.theta1,
                result.theta2,
                result.cost_trace,
                seed,
                config={
                    "finished": True,
                    "n": model.n_mem,
                    "n_tilde": n_tilde,
                    "config_hash": config.config_hash,
                    "c_q": c_q,
                    "result": result.to_dict(),
                },
            )
            view.push(
                f"n={model.n_mem} ñ={n_tilde} seed={seed}: C={result.final_cost:.9f} 収束={result.converged}"
            )
    return paths


def cmd_evaluate(
    config: ExperimentConfig,
    view: AppView,
    model_file: str,
    checkpoint: Optional[str] = None,
    baseline_n_tilde: Optional[int] = None,
    identical: bool = False,
) -> list[ExperimentRecord]:
    """
    チェックポイント（学習）またはベースラインのr_fを求め、evaluations.csvに追記します。
    identical=Trueの場合は元モデル同士を比較します（r_f = 0）。
    """

    model, info = load_model_file(model_file)
    c_q = float(info.get("c_q", memory_complexity(model)[0]))
    records = []

    if checkpoint is not None:
        raw = load_checkpoint(checkpoint)
        snapshot = raw.get("config") or {}
        if "n_tilde" not in snapshot:
            raise DataError(f"チェックポイントに保持量子ビット数がありません。: {checkpoint}")
        if snapshot.get("n", model.n_mem) != model.n_mem:
            raise DataError(f"チェックポイントとモデルのnが一致しません。{snapshot.get('n')} != {model.n_mem}")
        problem = build_problem(config, model, int(snapshot["n_tilde"]), int(raw["seed"]))
        data = load_checkpoint(checkpoint, problem)
        if "result" in snapshot:
            result = TrainResult.from_dict(snapshot["result"])
        else:
            terms = CostFunction(problem).terms(data["theta1"], data["theta2"])
            weights = problem.ensemble.effective_weights()
            result = TrainResult(
                theta1=np.asarray(data["theta1"]),
                theta2=np.asarray(data["theta2"]),
                cost_trace=data["cost_trace"],
                final_cost=terms.cost,
                d_bar=float(weights @ terms.decoupling),
                f_bar=float(weights @ terms.dynamical),
                iterations=len(data["cost_trace"]),
                converged=False,
                seed=int(data["seed"]),
            )
        records.append(trained_record(problem, result, c_q, config.config_hash))

    for seed in config.seeds if baseline_n_tilde is not None else []:
        record, converged = baseline_record(config, model, baseline_n_tilde, seed, c_q)
        if not converged:
            view.push(f"seed={seed}: ベースラインがΔの閾値に達していません。", warn=True)
        records.append(record)

    if identical:
        mps = mps_from_model(model)
        records.append(
            ExperimentRecord(
                n=model.n_mem,
                n_tilde=model.n_mem,
                method="baseline",
                seed=0,
                r_f=qfdr(mps, mps).r_f,
                c_q=c_q,
                final_cost=math.nan,
                d_bar=math.nan,
                f_bar=math.nan,
                iterations=0,
                wall_time_s=0.0,
                config_hash=config.config_hash,
            )
        )

    if not records:
        raise ConfigError("評価対象がありません。--checkpoint、--baselineまたは--identicalを指定してください。")

    path = os.path.join(config.output_dir, "evaluations.csv")
    lines = [] if os.path.exists(path) else [ExperimentRecord.csv_header()]
    success, message = append_lines(path, lines + [r.to_csv_row() for r in records])
    if not success:
        raise DataError(f"評価結果を書き込めません。{message}")

    view.table([{"n": r.n, "ñ": r.n_tilde, "method": r.method, "seed": r.seed, "r_f": f"{r.r_f:.6e}"} for r in records])
    return records


@dataclass(frozen=True)
class SweepCell:
    n: int
    n_tilde: int
    method: Method
    seed: int
    config: dict = field(repr=False)
    output_dir: str = field(repr=False)


@dataclass
class CellResult:
    """
    セルの実行結果。
    Attributes:
        n, n_tilde, method, seed: セルの識別子。
        status (Literal["ok", "failed"]): 実行結果。
        record (Optional[ExperimentRecord]): 成功した場合の結果行。
        message (str): 失敗した場合のメッセージ。
        converged (bool): 学習またはベースラインが収束判定に達したか。反復上限で止まった場合はFalse。
    """

    n: int
    n_tilde: int
    method: Method
    seed: int
    status: Literal["ok", "failed"]
    record: Optional[ExperimentRecord] = None
    message: str = ""
    converged: bool = True


def sweep_cells(config: ExperimentConfig) -> list[SweepCell]:
    """n × ñ × {trained, baseline} × seedsの格子（この順に並べます）"""

    return [
        SweepCell(n=n, n_tilde=n_tilde, method=method, seed=seed, config=config.data, output_dir=config.output_dir)
        for n in config.n_values
        for n_tilde in config.n_tilde_values
        if n_tilde < n
        for method in ("trained", "baseline")
        for seed in config.seeds
    ]


def run_cell(cell: SweepCell) -> CellResult:
    """1セルを実行します。失敗はCellResultのstatusに記録し、例外は送出しません。"""

    label = f"n={cell.n} ñ={cell.n_tilde} {cell.method} seed={cell.seed}"
    logger.info(f"セルを開始します。{label}")
    try:
        config = ExperimentConfig(data=cell.config, output_dir=cell.output_dir)
        model = build_walk(cell.n, config.shift_for(cell.n)).model
        c_q, _ = memory_complexity(model)
        if cell.method == "trained":
            problem = build_problem(config, model, cell.n_tilde, cell.seed)
            result = train_starts(
                problem,
                train_options(config),
                cell.seed,
                config.optimizer["starts"],
                checkpoint_path=checkpoint_path(cell.output_dir, cell.n, cell.n_tilde, cell.seed),
            )
            record = trained_record(problem, result, c_q, config.config_hash)
            converged = result.converged
        else:
            record, converged = baseline_record(config, model, cell.n_tilde, cell.seed, c_q)
    except (RqmcError, ValueError, np.linalg.LinAlgError) as e:
        logger.error(f"セルが失敗しました。{label}: {e}")
        return CellResult(cell.n, cell.n_tilde, cell.method, cell.seed, status="failed", message=str(e))

    logger.info(f"セルが終了しました。{label}: r_f={record.r_f:.6e}")
    return CellResult(cell.n, cell.n_tilde, cell.method, cell.seed, status="ok", record=record, converged=converged)


def _stats(values: Sequence[float]) -> Optional[dict]:
    values = [v for v in values if not math.isnan(v)]
    if not values:
        return None
    finite = [v for v in values if math.isfinite(v)]

    def clean(v: float) -> Optional[float]:
        return float(v) if math.isfinite(v) else None

    mean = float(np.mean(values))
    std = float(np.std(finite, ddof=1)) if len(finite) > 1 and len(finite) == len(values) else 0.0
    return {"mean": clean(mean), "std": std, "best": clean(min(values)), "count": len(values)}


def compare_methods(cells: Sequence[dict]) -> list[dict]:
    """(n, ñ)ごとに学習とベースラインの最良のr_fを並べます。ratioはベースライン/学習。"""

    best: dict[tuple[int, int], dict[str, Optional[float]]] = {}
    for cell in cells:
        rate = cell["r_f"]["best"] if cell["r_f"] else None
        best.setdefault((cell["n"], cell["n_tilde"]), {})[cell["method"]] = rate

    rows = []
    for (n, n_tilde), methods in sorted(best.items()):
        trained, baseline = methods.get("trained"), methods.get("baseline")
        if trained is None or baseline is None:
            continue
        ratio = baseline / trained if trained > 0 else (None if baseline > 0 else 1.0)
        rows.append(
            {
                "n": n,
                "n_tilde": n_tilde,
                "trained_best": trained,
                "baseline_best": baseline,
                "ratio": ratio,
                "trained_better": trained < baseline,
            }
        )
    return rows


def summarize(config: ExperimentConfig, results: Sequence[CellResult]) -> dict:
    """セル（n, ñ, 手法）ごとの平均・標準偏差・最良値と、手法の比較"""

    groups: dict[tuple[int, int, str], list[CellResult]] = {}
    for result in results:
        groups.setdefault((result.n, result.n_tilde, result.method), []).append(result)

    cells = []
    for (n, n_tilde, method), members in groups.items():
        finished = [m for m in members if m.status == "ok"]
        records = [m.record for m in finished]
        cell = {
            "n": n,
            "n_tilde": n_tilde,
            "method": method,
            "count": len(records),
            "failed": len(members) - len(records),
            "unconverged": sum(not m.converged for m in finished),
            "c_q": records[0].c_q if records else None,
        }
        for name in ("r_f", "final_cost", "d_bar", "f_bar"):
            cell[name] = _stats([getattr(r, name) for r in records])
        cells.append(cell)

    status = {"ok": 0, "failed": 0}
    for result in results:
        status[result.status] += 1

    return {
        "config": config.data,
        "config_hash": config.config_hash,
        "ensemble_seed": config.ensemble_seed,
        "resolved": [
            {"n": n, "burn_in": config.burn_in(n), "shift": config.shift_for(n).to_dict()}
            for n in sorted({r.n for r in results})
        ],
        "status": status,
        "cells": cells,
        "comparison": compare_methods(cells),
        "failures": [
            {"n": r.n, "n_tilde": r.n_tilde, "method": r.method, "seed": r.seed, "message": r.message}
            for r in results
            if r.status == "failed"
        ],
    }


async def _sweep_once(
    config: ExperimentConfig, view: AppView, cell_fn: Callable[[SweepCell], CellResult]
) -> dict:
    cells = sweep_cells(config)
    if not cells:
        raise ConfigError("スイープのセルがありません。")

    os.makedirs(config.output_dir, exist_ok=True)
    success, message = write_json_file(os.path.join(config.output_dir, "config.json"), config.data)
    if not success:
        raise DataError(f"設定を保存できません。{message}")

    writer = OrderedCsvWriter(os.path.join(config.output_dir, "results.csv"), ExperimentRecord.csv_header())

    async def on_result(index: int, result: CellResult):
        rows = [result.record.to_csv_row()] if result.status == "ok" else []
        await writer.enquere_async((index, rows))

    try:
        results = await run_cells(cells, cell_fn, on_result, workers=config.workers)
    finally:
        await writer.close()

    summary = summarize(config, results)
    success, message = write_json_file(os.path.join(config.output_dir, "summary.json"), summary)
    if not success:
        raise DataError(f"summary.jsonを保存できません。{message}")
    report.flush_plot(config.output_dir, summary["cells"], config.config_hash)

    view.table(
        [
            {
                "n": row["n"],
                "ñ": row["n_tilde"],
                "学習": f"{row['trained_best']:.3e}",
                "ベースライン": f"{row['baseline_best']:.3e}",
                "比": "-" if row["ratio"] is None else f"{row['ratio']:.2f}",
            }
            for row in summary["comparison"]
        ]
    )
    view.push(f"スイープが終了しました。成功={summary['status']['ok']}, 失敗={summary['status']['failed']}: {config.output_dir}")
    view.dump(os.path.join(config.output_dir, "sweep.log"))
    return summary


async def cmd_sweep(
    config: ExperimentConfig, view: AppView, cell_fn: Callable[[SweepCell], CellResult] = run_cell
) -> list[dict]:
    """スイープを実行します。model.sigma_valuesがある場合はσごとに実行します。"""

    configs = [config.with_sigma(s) for s in config.sigma_values] or [config]
    summaries = []
    for item in configs:
        summaries.append(await _sweep_once(item, view, cell_fn))
    return summaries


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


def _suite_param_count() -> SuiteResult:
    mismatches = [
        (n, layers)
        for n in range(1, 6)
        for layers in range(0, 5)
        if param_count(AnsatzSpec(n_qubits=n, n_layers=layers)) != n * (3 + 9 * layers) - 6 * layers
    ]
    return SuiteResult("パラメータ数", not mismatches, f"不一致: {mismatches}")


def _suite_model_construction() -> SuiteResult:
    worst = 0.0
    for n in (1, 2, 3):
        n_sites = 2**n
        shifts = [
            ShiftDistribution.wrapped_gaussian(0.0, 1.0 / (2 * n_sites)),
            ShiftDistribution.uniform_interval(0.0, 0.5),
            ShiftDistribution.point_mass(1.0 / n_sites),
        ]
        for shift in shifts:
            walk = build_walk(n, shift)
            u = walk.model.u
            worst = max(worst, float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0])))))
            states = memory_states(gram_matrix(walk.transition))
            sqrt_p = np.sqrt(walk.transition.p)
            for j in range(n_sites):
                expected = sum(sqrt_p[k, j] * kron(states[k], ket(k, n_sites)) for k in range(n_sites))
                actual = u @ kron(states[j], ket(0, n_sites))
                worst = max(worst, float(np.max(np.abs(actual - expected))))
    return SuiteResult("モデル構成", worst < 1e-9, f"最大誤差: {worst:.3e}")


def _random_problem(rng: np.random.Generator, seed: int) -> ReductionProblem:
    target = Rqm(n_mem=2, d_out=2, u=random_unitary(8, rng))
    ensemble = sample_memory_ensemble(target, k=6, burn_in=4, seed=seed)
    return ReductionProblem(
        target=target,
        ensemble=ensemble,
        n_reduced=1,
        v_spec=AnsatzSpec(n_qubits=2, n_layers=1),
        u_spec=AnsatzSpec(n_qubits=2, n_layers=1),
        alpha=float(rng.uniform(0.5, 2.0)),
        beta=float(rng.uniform(0.5, 2.0)),
    )


def _suite_cost_oracle(instances: int = 50) -> SuiteResult:
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(instances):
        problem = _random_problem(rng, i)
        theta1 = rng.uniform(0, 2 * np.pi, param_count(problem.v_spec))
        theta2 = rng.uniform(0, 2 * np.pi, param_count(problem.u_spec))
        v = build_unitary(problem.v_spec, theta1)
        u_tilde = build_unitary(problem.u_spec, theta2)
        expected = 0.0
        for w, s in zip(problem.ensemble.effective_weights(), problem.ensemble.states):
            d = decoupling_fidelity(v, s, problem.n_reduced)
            rho = reduced_state(problem.target, v, s, problem.n_reduced)
            sigma = reference_state(v, s, problem.n_reduced, problem.d_out)
            f = dynamical_fidelity(u_tilde, rho, sigma)
            expected -= w * (problem.alpha * d + problem.beta * f)
        worst = max(worst, abs(combined_cost(problem, theta1, theta2) - expected))
    return SuiteResult("コストの独立計算との一致", worst < 1e-10, f"最大誤差: {worst:.3e}")


def _suite_gradient(instances: int = 20) -> SuiteResult:
    rng = np.random.default_rng(11)
    worst = 0.0
    for i in range(instances):
        problem = _random_problem(rng, 100 + i)
        theta = rng.uniform(0, 2 * np.pi, problem.n_params)
        _, exact = CostFunction(problem, "parameter-shift").value_and_grad(theta)
        _, approx = CostFunction(problem, "finite-difference").value_and_grad(theta)
        worst = max(worst, float(np.linalg.norm(exact - approx) / max(np.linalg.norm(approx), 1e-12)))
    return SuiteResult("パラメータシフト勾配", worst < 1e-5, f"最大相対誤差: {worst:.3e}")


def _suite_qfdr() -> SuiteResult:
    walk = mps_from_model(build_walk(2, ShiftDistribution.wrapped_gaussian(0.0, 0.125)).model)
    truncated = truncate(walk, 2, restarts=5, seed=0).mps
    rate = qfdr(walk, truncated).r_f
    slope = brute_force_rate(walk, truncated, 6).slope(5)
    deviations = rate_convergence(transfer_rate(walk, truncated, 40), rate)
    zero = max(qfdr(m, m).r_f for m in (walk, truncated))

    # 学習したモデルは圧縮した定常状態から始めても同じ傾きに近づきます
    model = build_walk(2, ShiftDistribution.wrapped_gaussian(0.0, 0.125)).model
    ensemble = sample_memory_ensemble(model, k=8, burn_in=8, seed=0)
    problem = ReductionProblem(model, ensemble, 1, AnsatzSpec(2, 1), AnsatzSpec(1 + model.out_qubits, 1))
    result = train(problem, TrainOptions(max_iter=50), seed=0)
    trained = rate_convergence(trained_convergence(problem, result), trained_rate(problem, result.theta2).r_f)

    passed = (
        abs(slope - rate) < 1e-3
        and deviations[-1] < 1e-4
        and deviations[-1] <= deviations[0]
        and trained[-1] < 1e-3
        and zero <= 1e-12
    )
    return SuiteResult(
        "QFDRの総当たりとの一致",
        passed,
        f"r_f={rate:.6e}, slope_5={slope:.6e}, |slope_L-r_f|: {deviations[0]:.1e}→{deviations[-1]:.1e}, "
        f"学習={trained[-1]:.1e}, 自己比較={zero:.1e}",
    )


def _random_corpus(rng: np.random.Generator) -> list[tuple[UniformMps, int]]:
    """ボンド次元4以下の乱数MPSと、それより小さい打ち切り後の次元"""

    raw_bond3 = rng.normal(size=(2, 3, 3)) + 1j * rng.normal(size=(2, 3, 3))
    return [
        (mps_from_model(Rqm(n_mem=1, d_out=2, u=random_unitary(4, rng))), 1),
        (UniformMps(tensors=raw_bond3), 2),
        (mps_from_model(Rqm(n_mem=2, d_out=2, u=random_unitary(8, rng))), 2),
        (mps_from_model(Rqm(n_mem=2, d_out=2, u=random_unitary(8, rng))), 3),
        (mps_from_model(Rqm(n_mem=2, d_out=4, u=random_unitary(16, rng))), 2),
    ]


def _suite_baseline() -> SuiteResult:
    rng = np.random.default_rng(5)
    mps = mps_from_model(Rqm(n_mem=2, d_out=2, u=random_unitary(8, rng)))
    start = gauge_transform(mps, random_unitary(4, rng)).tensors
    run = truncate_once(canonicalize(mps), 4, rng, initial=start, delta_thresh=1e-10)

    walk = mps_from_model(build_walk(2, ShiftDistribution.wrapped_gaussian(0.0, 0.125)).model)
    first = truncate(walk, 2, seed=0).best.per_site_overlap
    second = truncate(walk, 2, seed=1).best.per_site_overlap

    converged = 0
    total = 0
    full = 0.0
    for index, (target, d_tilde) in enumerate(_random_corpus(np.random.default_rng(43))):
        result = truncate(target, d_tilde, delta_thresh=1e-8, restarts=4, seed=index)
        converged += result.converged_runs
        total += len(result.runs)
        recovered = truncate(target, target.bond_dim, delta_thresh=1e-10, restarts=1, seed=index)
        full = max(full, qfdr(target, recovered.mps).r_f)

    passed = run.converged and abs(first - second) < 1e-6 and converged >= math.ceil(0.9 * total) and full <= 1e-10
    return SuiteResult(
        "ベースラインの不動点と再出発の一致",
        passed,
        f"Δ={run.final_delta:.3e}, 重なり={first:.12f}/{second:.12f}, 収束={converged}/{total}, d̃=dのr_f={full:.1e}",
    )


def _suite_planted(seeds: int = 10) -> SuiteResult:
    details = []
    passed = True
    for n_mem, n_reduced in ((2, 1), (3, 2)):
        hits = 0
        for seed in range(seeds):
            planted = planted_problem(n_mem, n_reduced, 2, seed)
            problem = planted.problem
            result = train(problem, TrainOptions(), seed=seed)
            if result.final_cost <= -(problem.alpha + problem.beta) + 1e-4:
                hits += 1
        details.append(f"n={n_mem},ñ={n_reduced}: {hits}/{seeds}")
        passed = passed and hits >= math.ceil(0.8 * seeds)
    return SuiteResult("埋め込み解の再現", passed, ", ".join(details))


DESK_SWEEP = {
    "model": {"n": [2, 3, 4]},
    "reduction": {"n_tilde": [1, 2]},
    "seeds": list(range(10)),
}


def desk_sweep_checks(comparison: Sequence[dict]) -> list[dict]:
    """
    スイープの比較結果に対する判定。
    - ñ=1、n≥3のすべてのセルで学習の最良値がベースラインの最良値を下回る
    - 少なくとも1つのセルで10倍以上の差がある
    - ñ=2の学習の最良値がnによらず10倍以内に収まる
    - ñ=1のベースラインの最良値がnについて単調に増える
    """

    gated = [r for r in comparison if r["n_tilde"] == 1 and r["n"] >= 3]
    ratios = [r["ratio"] for r in comparison if r["ratio"] is not None]
    flat = [r["trained_best"] for r in comparison if r["n_tilde"] == 2]
    spread = (max(flat) / min(flat) if min(flat) > 0 else math.inf) if len(flat) > 1 else None
    rising = [r["baseline_best"] for r in sorted(comparison, key=lambda r: r["n"]) if r["n_tilde"] == 1]

    return [
        {
            "name": "ñ=1, n≥3で学習がベースラインを下回る",
            "passed": bool(gated) and all(r["trained_better"] for r in gated),
            "value": [f"n={r['n']}: {r['trained_best']:.3e} / {r['baseline_best']:.3e}" for r in gated],
        },
        {
            "name": "10倍以上の差があるセル",
            "passed": any(ratio >= 10 for ratio in ratios),
            "value": max(ratios) if ratios else None,
        },
        {
            "name": "ñ=2の学習のr_fの幅",
            "passed": spread is not None and spread < 10,
            "value": None if spread is None or not math.isfinite(spread) else spread,
        },
        {
            "name": "ñ=1のベースラインのr_fがnとともに増加",
            "passed": len(rising) > 1 and all(a < b for a, b in zip(rising, rising[1:])),
            "value": rising,
        },
    ]


async def _suite_desk_sweep(output_dir: Optional[str] = None) -> SuiteResult:
    config = ExperimentConfig.load(data=copy.deepcopy(DESK_SWEEP), output_dir=output_dir)
    config = ExperimentConfig(data=config.data, output_dir=os.path.join(config.output_dir, "desk-sweep"))
    summary = await _sweep_once(config, AppView(quiet=True), run_cell)
    checks = desk_sweep_checks(summary["comparison"])
    summary["checks"] = checks
    success, message = write_json_file(os.path.join(config.output_dir, "summary.json"), summary)
    if not success:
        raise DataError(f"summary.jsonを保存できません。{message}")
    return SuiteResult(
        "机上スイープでの比較",
        all(c["passed"] for c in checks),
        ", ".join(f"{c['name']}={'OK' if c['passed'] else 'NG'}" for c in checks),
    )


SUITES: dict[str, Callable[[], SuiteResult]] = {
    "param-count": _suite_param_count,
    "model": _suite_model_construction,
    "cost": _suite_cost_oracle,
    "gradient": _suite_gradient,
    "qfdr": _suite_qfdr,
    "baseline": _suite_baseline,
    "planted": _suite_planted,
}

# 時間がかかるため、名前を指定した場合のみ実行します
SWEEP_SUITES: dict[str, Callable[[Optional[str]], Awaitable[SuiteResult]]] = {
    "desk-sweep": _suite_desk_sweep,
}


async def cmd_selftest(
    view: AppView, names: Optional[Sequence[str]] = None, output_dir: Optional[str] = None
) -> list[SuiteResult]:
    results = []
    for name in names or list(SUITES):
        if name not in SUITES and name not in SWEEP_SUITES:
            raise ConfigError(f"未知のテストです。{name} (選択肢: {', '.join([*SUITES, *SWEEP_SUITES])})")
        start = time.perf_counter()
        try:
            result = SUITES[name]() if name in SUITES else await SWEEP_SUITES[name](output_dir)
        except RqmcError as e:
            result = SuiteResult(name, False, f"例外: {e}")
        view.push(
            f"[{'PASS' if result.passed else 'FAIL'}] {result.name} ({time.perf_counter() - start:.1f}s): {result.detail}",
            warn=not result.passed,
        )
        results.append(result)
    return results


def parse_json_option(text: Optional[str], name: str) -> Optional[dict]:
    if text is None:
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{name}をJSONとして読み込めません。{e}")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="rqmcompress", description="量子確率モデルの学習による圧縮とベースラインの比較")
    parser.add_argument("--config", help="設定ファイル（JSON）。省略時は既定値を使います。")
    parser.add_argument("--output-dir", help=f"出力ディレクトリ。環境変数{OUTPUT_DIR_ENV}より優先します。")
    parser.add_argument("--seed", type=int, action="append", help="シード（複数指定可）。設定のseedsを置き換えます。")
    parser.add_argument("--verbose", action="store_true", help="デバッグログを出力します。")
    parser.add_argument("--quiet", action="store_true", help="画面出力を抑制します。")
    sub = parser.add_subparsers(dest="command", required=True)

    build = sub.add_parser("build-model", help="ウォークのモデルを構築して保存します。")
    build.add_argument("--n", type=int, action="append", help="メモリ量子ビット数（複数指定可）")
    build.add_argument("--shift", help='シフト分布（JSON）。例: {"kind": "point-mass", "params": {"x0": 0.25}}')

    training = sub.add_parser("train", help="圧縮モデルを学習します。")
    training.add_argument("--model", required=True, help="build-modelで保存したモデルファイル")
    training.add_argument("--n-tilde", type=int, action="append", help="保持量子ビット数（複数指定可）")

    evaluate = sub.add_parser("evaluate", help="r_fを求めてevaluations.csvに追記します。")
    evaluate.add_argument("--model", required=True, help="build-modelで保存したモデルファイル")
    evaluate.add_argument("--checkpoint", help="trainで保存したチェックポイント")
    evaluate.add_argument("--baseline", action="store_true", help="ベースラインの打ち切りを評価します。")
    evaluate.add_argument("--n-tilde", type=int, help="ベースラインの保持量子ビット数")
    evaluate.add_argument("--identical", action="store_true", help="元モデル同士を比較します。")

    sub.add_parser("sweep", help="n × ñ × 手法 × シードの格子を実行します。")

    selftest = sub.add_parser("selftest", help="数値的な自己検査を実行します。")
    selftest.add_argument(
        "--suite",
        action="append",
        choices=[*SUITES, *SWEEP_SUITES],
        help="実行する検査（複数指定可）。desk-sweepは指定した場合のみ実行します。",
    )
    selftest.add_argument("--help-config", action="store_true", help="設定項目の説明を表示します。")
    return parser


def _load_config(args: Namespace) -> ExperimentConfig:
    config = ExperimentConfig.load(file_path=args.config, output_dir=args.output_dir)
    if getattr(args, "shift", None) is not None:
        shift = parse_json_option(args.shift, "--shift")
        if not isinstance(shift, dict) or not isinstance(shift.get("kind"), str):
            raise ConfigError(f"--shiftにはkindを持つオブジェクトを指定してください。{args.shift}")
        data = copy.deepcopy(config.data)
        data["model"]["shift"] = shift
        config = ExperimentConfig(data=data, output_dir=config.output_dir)
    return with_seeds(config, args.seed)


async def execute(args: Namespace, view: AppView) -> int:
    view.print_app_info()
    if args.command == "selftest":
        if args.help_config:
            view.push(Settings().get_help_text())
            return 0
        results = await cmd_selftest(view, args.suite, args.output_dir)
        return 0 if all(r.passed for r in results) else NumericalError.exit_code

    config = _load_config(args)
    if args.command == "build-model":
        cmd_build_model(config, view, args.n)
    elif args.command == "train":
        cmd_train(config, view, args.model, args.n_tilde)
    elif args.command == "evaluate":
        if args.baseline and args.n_tilde is None:
            raise ConfigError("--baselineには--n-tildeが必要です。")
        cmd_evaluate(
            config,
            view,
            args.model,
            checkpoint=args.checkpoint,
            baseline_n_tilde=args.n_tilde if args.baseline else None,
            identical=args.identical,
        )
    elif args.command == "sweep":
        await cmd_sweep(config, view)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """コマンドを実行して終了コードを返します。

    Returns:
        int: 0 成功, 1 想定外のエラー, 2 設定エラー, 3 データエラー, 4 数値エラー
    """

    args = build_parser().parse_args(argv)
    if args.verbose:
        set_level(logging.DEBUG)
    view = AppView(quiet=args.quiet)

    try:
        return asyncio.run(execute(args, view))
    except RqmcError as e:
        logger.error(f"{type(e).__name__}: {e}")
        view.push(str(e), warn=True)
        return e.exit_code
    except Exception as e:
        logger.error(f"想定外のエラーです。{type(e).__name__}: {e}")
        view.push(f"想定外のエラーです。{e}", warn=True)
        return 1
