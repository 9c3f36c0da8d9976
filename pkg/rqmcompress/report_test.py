from .report import flush_plot, plot_blocks, render_dat, render_gp


def _cell(n, n_tilde, method, mean, count=3):
    return {
        "n": n,
        "n_tilde": n_tilde,
        "method": method,
        "count": count,
        "r_f": {"mean": mean, "std": 0.1 * mean, "best": 0.5 * mean} if count else {},
    }


cells = [
    _cell(3, 1, "baseline", 0.2),
    _cell(2, 1, "baseline", 0.1),
    _cell(2, 1, "trained", 0.001),
    _cell(3, 1, "trained", 0.002),
    _cell(4, 1, "trained", 0.0, count=0),
]


def _data_lines(text: str) -> list[list[str]]:
    return [line.split() for line in text.splitlines() if line and not line.startswith("#")]


def test_plot_blocks():
    blocks = plot_blocks(cells)
    assert [(b.method, b.n_tilde) for b in blocks] == [("trained", 1), ("baseline", 1)]
    assert [row.n for row in blocks[0].rows] == [2, 3]
    assert [row.n for row in blocks[1].rows] == [2, 3]


def test_render_dat():
    text = render_dat(plot_blocks(cells), "abc")
    assert "# config_hash: abc" in text
    assert text.count("# index") == 2
    rows = _data_lines(text)
    assert len(rows) == 4
    assert rows[0][0] == "2" and float(rows[0][1]) == 0.001
    assert float(rows[3][3]) == 0.5 * 0.2
    # gnuplotのindexは2行以上の空行で区切る
    assert "\n\n\n" in text


def test_render_gp():
    text = render_gp(plot_blocks(cells))
    assert '"rf_vs_n.dat" index 0' in text
    assert '"rf_vs_n.dat" index 1' in text
    assert "dt 2" in text
    assert text.rstrip().endswith('"baseline, ñ=1"')


def test_flush_plot(tmp_path):
    paths = flush_plot(str(tmp_path), cells, "abc")
    assert [p.split("/")[-1] for p in paths] == ["rf_vs_n.dat", "rf_vs_n.gp"]
    assert (tmp_path / "rf_vs_n.dat").read_text().startswith("# r_f")
