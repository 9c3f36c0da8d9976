import asyncio

import pytest

from .worker import OrderedCsvWriter, default_workers, run_cells


def test_writer_reorders(tmp_path):
    path = tmp_path / "results.csv"

    async def main():
        writer = OrderedCsvWriter(str(path), "index,value")
        assert await writer.enquere_async((2, ["2,c"])) == 0
        assert await writer.enquere_async((0, ["0,a"])) == 1
        assert await writer.enquere_async((1, [])) == 1
        assert writer.next_index == 3
        with pytest.raises(ValueError):
            await writer.enquere_async((1, ["1,b"]))
        await writer.close()
        return writer.written_rows

    assert asyncio.run(main()) == 2
    assert path.read_text().splitlines() == ["index,value", "0,a", "2,c"]


def test_writer_starts_new_file(tmp_path):
    path = tmp_path / "results.csv"
    path.write_text("old\n")

    async def main():
        writer = OrderedCsvWriter(str(path), "header")
        await writer.close()

    asyncio.run(main())
    assert path.read_text() == "header\n"


@pytest.mark.parametrize("workers", [1, 2])
def test_run_cells(tmp_path, workers):
    path = tmp_path / "results.csv"
    cells = [-3, 1, -4, 1, -5]

    async def main():
        writer = OrderedCsvWriter(str(path), "value")

        async def on_result(index, result):
            await writer.enquere_async((index, [str(result)]))

        results = await run_cells(cells, abs, on_result, workers=workers)
        await writer.close()
        return results

    assert asyncio.run(main()) == [3, 1, 4, 1, 5]
    assert path.read_text().splitlines() == ["value", "3", "1", "4", "1", "5"]


def test_default_workers():
    assert default_workers() >= 1
