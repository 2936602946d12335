"""
Logging setup.

Library modules call ``get_logger(__name__)``; verbosity comes from the
``VLOC_LOG_LEVEL`` environment variable (default INFO) unless the CLI
overrides it with ``configure(level)``.
"""

from __future__ import annotations

import logging
import os
import time

LOG_LEVEL_ENV = "VLOC_LOG_LEVEL"
_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_configured = False


def configure(level: str | int | None = None) -> None:
    global _configured

    if level is None:
        level = os.getenv(LOG_LEVEL_ENV, "INFO")
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    root = logging.getLogger("src")
    if not _configured:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(_FORMAT))
        root.addHandler(handler)
        root.propagate = False
        _configured = True
    root.setLevel(level)


def get_logger(name: str) -> logging.Logger:
    if not _configured:
        configure()
    return logging.getLogger(name)


class ProgressReporter:
    """
    Periodic one-line progress summaries for long loops.

    Parameters
    ----------
    logger : destination logger.
    total  : number of units the loop will process.
    every  : report every ``every`` units (and at the last one).
    label  : noun printed in front of the counter, e.g. ``"step"``.
    """

    def __init__(self, logger: logging.Logger, total: int, every: int = 25, label: str = "step"):
        self.logger = logger
        self.total = max(int(total), 0)
        self.every = max(int(every), 1)
        self.label = label
        self.start = time.perf_counter()

    def update(self, done: int, **fields: float) -> None:
        if done % self.every != 0 and done != self.total:
            return

        elapsed = time.perf_counter() - self.start
        rate = done / elapsed if elapsed > 0 else 0.0
        remaining = self.total - done
        eta_mins = (remaining / rate) / 60 if rate > 0 else 0.0
        pct = (done / self.total * 100) if self.total > 0 else 100.0

        extra = "  ".join(f"{k}={v:.4g}" for k, v in fields.items())
        self.logger.info(
            f"[{pct:5.1f}%] {self.label}={done:,}/{self.total:,}  {extra}  "
            f"Elapsed={elapsed:.1f}s  ETA={eta_mins:.1f}m"
        )

    def elapsed(self) -> float:
        return time.perf_counter() - self.start
