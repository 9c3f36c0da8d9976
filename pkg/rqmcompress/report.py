import os
from dataclasses import dataclass
from typing import List

from jinja2 import Template

from .errors import DataError
from .util import write_file

dat_template = """# r_f [bit/step] versus n
# config_hash: {{ config_hash }}
{%- for block in blocks %}
# index {{ loop.index0 }}: method={{ block.method }} n_tilde={{ block.n_tilde }}
# n mean_r_f std_r_f best_r_f
{%- for row in block.rows %}
{{ row.n }} {{ "%.12e" | format(row.mean) }} {{ "%.12e" | format(row.std) }} {{ "%.12e" | format(row.best) }}
{%- endfor %}
{% if not loop.last %}

{% endif %}
{%- endfor %}
"""

gp_template = """set terminal pngcairo size 800,600
set output "{{ image }}"
set logscale y
set xlabel "n"
set ylabel "R_F [bit/step]"
set key outside right
plot \\
{%- for block in blocks %}
  "{{ data }}" index {{ loop.index0 }} using 1:2:3 with yerrorlines {{ "dt 2 " if block.method == "baseline" else "" }}title "{{ block.method }}, ñ={{ block.n_tilde }}"{{ ", \\\\" if not loop.last else "" }}
{%- endfor %}
"""


@dataclass
class PlotRow:
    n: int
    mean: float
    std: float
    best: float


@dataclass
class PlotBlock:
    method: str
    n_tilde: int
    rows: List[PlotRow]


def plot_blocks(cells: List[dict]) -> List[PlotBlock]:
    """summary.jsonのセル一覧から、手法×ñごとのブロックを作ります（r_fが有限の行のみ）。"""

    blocks: dict[tuple[str, int], List[PlotRow]] = {}
    for cell in cells:
        r_f = cell.get("r_f") or {}
        if cell.get("count", 0) == 0 or r_f.get("mean") is None:
            continue
        key = (cell["method"], int(cell["n_tilde"]))
        blocks.setdefault(key, []).append(
            PlotRow(n=int(cell["n"]), mean=r_f["mean"], std=r_f["std"], best=r_f["best"])
        )

    return [
        PlotBlock(method=method, n_tilde=n_tilde, rows=sorted(rows, key=lambda r: r.n))
        for (method, n_tilde), rows in sorted(blocks.items(), key=lambda item: (item[0][0] != "trained", item[0]))
    ]


def render_dat(blocks: List[PlotBlock], config_hash: str) -> str:
    return Template(dat_template).render(blocks=blocks, config_hash=config_hash)


def render_gp(blocks: List[PlotBlock], data: str = "rf_vs_n.dat", image: str = "rf_vs_n.png") -> str:
    return Template(gp_template).render(blocks=blocks, data=data, image=image)


def flush_plot(output_dir: str, cells: List[dict], config_hash: str) -> List[str]:
    """rf_vs_n.datとrf_vs_n.gpを書き込み、書き込んだパスを返します。"""

    blocks = plot_blocks(cells)
    files = {
        "rf_vs_n.dat": render_dat(blocks, config_hash),
        "rf_vs_n.gp": render_gp(blocks),
    }

    paths = []
    for name, text in files.items():
        file_path = os.path.join(output_dir, name)
        success, error_message = write_file(file_path, text)
        if not success:
            raise DataError(f"{file_path}の書き込みに失敗しました：{error_message}")
        paths.append(file_path)
    return paths
