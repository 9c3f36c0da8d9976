"""
スイープのセルをプロセスプールで実行し、結果を1つの書き込みキューでCSVへ追記します。

セルは完了順に返りますが、書き込みキューはセル番号順に並べ替えてから追記するため、
ファイルの内容はワーカー数や完了順に依存しません。
"""

import asyncio
import os
from abc import ABC, abstractmethod
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from typing import Any, Awaitable, Callable, Optional, Sequence

import psutil

from .errors import DataError
from .logger import CustomLogger
from .util import append_lines

logger = CustomLogger(name=__name__)


def default_workers() -> int:
    return psutil.cpu_count(logical=False) or 1


class AsyncQueue(ABC):
    def __init__(self):
        self.queue = asyncio.Queue()
        self._loop_task = asyncio.create_task(self._process_queue())
        self._logger = CustomLogger(name=__name__)

    async def enquere_async(self, data: Any) -> Any:
        self._logger.debug(f"Enquere: {data}")
        result_future = asyncio.get_running_loop().create_future()
        await self.queue.put((data, result_future))
        return await result_future

    async def close(self):
        await self.queue.join()
        self._loop_task.cancel()
        try:
            await self._loop_task
        except asyncio.CancelledError:
            pass

    async def _process_queue(self):
        while True:
            data, result_future = await self.queue.get()
            try:
                result = await self.execute(data)
                result_future.set_result(result)
            except Exception as e:
                self._logger.error(f"Queue task error: {e}")
                result_future.set_exception(e)
            finally:
                self.queue.task_done()

    @abstractmethod
    async def execute(self, data: Any) -> Any:
        pass


class OrderedCsvWriter(AsyncQueue):
    """
    (セル番号, 行のリスト)を受け取り、番号順に追記します。
    ヘッダーを書き込んだ新しいファイルから始めます。
    """

    def __init__(self, file_path: str, header: str):
        super().__init__()
        self.file_path = file_path
        self._pending: dict[int, list[str]] = {}
        self._next_index = 0
        self.written_rows = 0

        if os.path.exists(file_path):
            os.remove(file_path)
        self._append([header])

    @property
    def next_index(self) -> int:
        return self._next_index

    async def execute(self, data: tuple[int, list[str]]) -> int:
        index, lines = data
        if index < self._next_index or index in self._pending:
            raise ValueError(f"セル番号が重複しています。{index}")
        self._pending[index] = lines

        written = 0
        while self._next_index in self._pending:
            rows = self._pending.pop(self._next_index)
            if rows:
                self._append(rows)
                written += len(rows)
            self._next_index += 1
        self.written_rows += written
        return written

    def _append(self, lines: list[str]):
        success, message = append_lines(self.file_path, lines)
        if not success:
            raise DataError(f"結果ファイルへの追記に失敗しました。{message}")


def _executor(workers: int) -> Executor:
    if workers <= 1:
        return ThreadPoolExecutor(max_workers=1)
    return ProcessPoolExecutor(max_workers=workers)


async def run_cells(
    cells: Sequence[Any],
    fn: Callable[[Any], Any],
    on_result: Callable[[int, Any], Awaitable[None]],
    workers: Optional[int] = None,
) -> list[Any]:
    """各セルをfn(cell)で実行し、完了ごとにon_result(番号, 結果)を呼びます。

    Args:
        cells (Sequence[Any]): セルのリスト（pickle可能であること）
        fn (Callable[[Any], Any]): モジュールレベルの関数（プロセス間で渡すため）
        on_result (Callable[[int, Any], Awaitable[None]]): 結果を受け取るコルーチン
        workers (Optional[int]): ワーカー数。省略時は物理コア数

    Returns:
        list[Any]: セル順の結果
    """

    workers = workers or default_workers()
    loop = asyncio.get_running_loop()
    logger.info(f"セルの実行を開始します。セル数={len(cells)}, ワーカー数={workers}")

    with _executor(workers) as executor:

        async def run(index: int, cell: Any) -> Any:
            result = await loop.run_in_executor(executor, fn, cell)
            await on_result(index, result)
            return result

        return await asyncio.gather(*(run(i, c) for i, c in enumerate(cells)))
