"""
Opt-in diagnostic log.

Env:
  ICRP_SIM_DEBUG      (enable when set)
  ICRP_SIM_DEBUG_LOG  (log file; default /tmp/icrp-sim.log)
"""

from __future__ import annotations

import logging
import os

DEBUG_MODE = bool(os.getenv("ICRP_SIM_DEBUG"))
DEBUG_PATH = os.getenv("ICRP_SIM_DEBUG_LOG") or "/tmp/icrp-sim.log"

logger = logging.getLogger("icrp_sim")
logger.propagate = False


def _attach_handler() -> None:
    if logger.handlers:
        return
    try:
        handler = logging.FileHandler(DEBUG_PATH, encoding="utf-8")
    except OSError:
        handler = logging.NullHandler()
    handler.setFormatter(logging.Formatter("%(asctime)s %(process)d %(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG)


def debug_log(message: str) -> None:
    if not DEBUG_MODE:
        return
    _attach_handler()
    logger.debug(message)
