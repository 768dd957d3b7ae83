"""
Logging setup for the command-line front end.

Library modules only call logging.getLogger(__name__) and emit tagged
messages ("[SIM] ...", "[QUAD] ..."). Handlers are installed here, once,
by the CLI.
"""

import logging
import sys
from pathlib import Path
from typing import Optional

LOG_FORMAT = "%(asctime)s.%(msecs)03d %(levelname)s %(message)s"
DATE_FORMAT = "%H:%M:%S"


def configure_logging(verbose: bool = False, log_file: Optional[Path] = None):
    """Attach stderr (and optionally file) handlers to the package logger."""
    logger = logging.getLogger("mpp_verifier")
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(formatter)
    logger.addHandler(stream)

    if log_file is not None:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(str(log_file), mode="w", encoding="utf-8")
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    logger.propagate = False
    return logger
