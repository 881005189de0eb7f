import logging
import os
from datetime import datetime, timezone
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np

TOOL_NAME = "dispml"
__version__ = "0.4.0"

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Pole proximity threshold on denominator magnitudes.
POLE_TOL = 1e-14


class DispmlError(Exception):
    """Base class for every error raised by the toolkit"""


class Expectation(Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"


def configure_logging(level: Union[str, int, None] = None) -> None:
    """Install one stream handler on the root logger.

    Called once by the CLI; library modules only create named loggers.
    """
    if level is None:
        level = os.getenv("DISPML_LOG_LEVEL", "INFO")
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_dispml", False):
            root.removeHandler(handler)

    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._dispml = True
    root.addHandler(handler)
    root.setLevel(level)


def make_rng(seed: Optional[int]) -> np.random.Generator:
    return np.random.default_rng(seed)


def as_complex_array(z) -> Tuple[np.ndarray, bool]:
    """Coerce scalars, ComplexFreq-likes and arrays to a complex ndarray.

    Returns the array and whether the input was a scalar.
    """
    if hasattr(z, "nu") and hasattr(z, "t"):
        z = complex(z.nu, z.t)
    arr = np.asarray(z, dtype=complex)
    return arr, arr.ndim == 0


def unwrap(values: np.ndarray, scalar: bool):
    if scalar:
        return complex(values) if np.iscomplexobj(values) else float(values)
    return values


def run_timestamp() -> str:
    """ISO timestamp for manifests; pinned by DISPML_TIMESTAMP when set."""
    pinned = os.getenv("DISPML_TIMESTAMP")
    if pinned:
        return pinned
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()
