"""Input validation helpers used by the estimator-style classes."""
from __future__ import annotations

from typing import Iterable, Sequence

from .errors import ConfigurationError, DataError


def check_text_sequence(X: Iterable) -> list[str]:
    """Materialize X as a list of strings, rejecting anything else."""
    out = list(X)
    for item in out:
        if not isinstance(item, str):
            raise DataError(f"expected a sequence of strings, got {type(item).__name__}")
    return out


def config_check(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigurationError(message)


def data_check(condition: bool, message: str) -> None:
    if not condition:
        raise DataError(message)


def check_fraction(value: float, name: str) -> None:
    config_check(0.0 <= value <= 1.0, f"{name} must lie in [0, 1], got {value}")


def check_positive(value: float, name: str) -> None:
    config_check(value > 0, f"{name} must be positive, got {value}")
