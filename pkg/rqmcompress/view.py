from .app_info import app_name, version
from .logger import CustomLogger
from .util import write_file


class AppView:
    """CLIの画面出力。出力した行はdumpでファイルに保存できます。"""

    def __init__(self, quiet: bool = False):
        self._view_lines = []
        self._quiet = quiet
        self._logger = CustomLogger(name="AppView")

    def line(self):
        self._write("------------------------------------------------")

    def push(self, message: str, warn: bool = False):
        self._view_lines.append(message)
        if warn:
            message = f"\033[91m{message}\033[0m"  # ANSI escape code for red text
        if not self._quiet:
            print(message)

    def table(self, rows: list[dict]):
        if not rows:
            return
        keys = list(rows[0].keys())
        widths = {k: max(len(k), *(len(str(r.get(k, ""))) for r in rows)) for k in keys}
        self.push("  ".join(k.ljust(widths[k]) for k in keys))
        for row in rows:
            self.push("  ".join(str(row.get(k, "")).ljust(widths[k]) for k in keys))

    def dump(self, file_path: str):
        success, _ = write_file(file_path, "\n".join(self._view_lines) + "\n")
        if not success:
            self._logger.error(f"ファイルの書き込みに失敗しました。{file_path}")

    def print_app_info(self):
        self.line()
        self.push(f"{app_name()} {version()}")
        self.line()

    @property
    def lines(self) -> list[str]:
        return list(self._view_lines)

    def _write(self, message: str):
        self.push(message)
