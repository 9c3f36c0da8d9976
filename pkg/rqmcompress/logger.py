import logging
import os

level = logging.getLevelName(os.environ.get("RQMC_LOG_LEVEL", "INFO").upper())
if not isinstance(level, int):
    level = logging.INFO
log_file = os.environ.get("RQMC_LOG_FILE")
log_word_size = 1000

log_format = "%(asctime)s [%(levelname)s] %(message)s : %(name)s at %(lineno)d"
date_format = "%Y-%m-%d %H:%M:%S"

formatter = logging.Formatter(fmt=log_format, datefmt=date_format)


def set_level(new_level: int):
    """全CustomLoggerのログレベルを変更します。(CLIの--verbose用)"""

    global level
    level = new_level
    for name in CustomLogger.names:
        logging.getLogger(name).setLevel(new_level)


class CustomLogger:
    names: set[str] = set()

    def __init__(self, name: str = None):
        self.logger = logging.getLogger(name)
        self.logger.setLevel(level)
        CustomLogger.names.add(name)

        # 同名ロガーへのハンドラ多重登録を防ぐ
        if not self.logger.handlers:
            if log_file:
                handler = logging.FileHandler(log_file)
            else:
                handler = logging.StreamHandler()

            handler.setFormatter(formatter)
            self.logger.addHandler(handler)
            self.logger.propagate = False

    def debug(self, obj: any):
        if self.logger.isEnabledFor(logging.DEBUG):
            self.logger.debug(self._log(obj), stacklevel=2)

    def info(self, obj: any):
        self.logger.info(self._log(obj), stacklevel=2)

    def warn(self, obj: any):
        self.logger.warning(self._log(obj), stacklevel=2)

    def error(self, obj: any):
        self.logger.error(self._log(obj), stacklevel=2)

    def _log(self, obj: any) -> str:
        message = str(obj or "None")
        if len(message) > log_word_size:
            return message[:log_word_size] + "..."
        return message
