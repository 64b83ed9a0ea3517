"""Targeted estimators of a mean outcome under missingness, with the simulation harness."""

from ._core import (
    TmleError,
    ate,
    compute_oracle,
    estimate,
    frozen_oracle,
    run_cli,
    simulate,
    version,
)

__version__ = version()

__all__ = [
    "TmleError",
    "ate",
    "compute_oracle",
    "estimate",
    "frozen_oracle",
    "run_cli",
    "simulate",
    "version",
]
