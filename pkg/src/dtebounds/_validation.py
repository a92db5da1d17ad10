import numpy as np


def check_probability(p, name: str = "p") -> None:
    arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any((arr < 0) | (arr > 1)):
        raise ValueError(f"{name} must lie in [0, 1]")


def check_probability_open(p, name: str = "q") -> None:
    arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any((arr <= 0) | (arr >= 1)):
        raise ValueError(f"{name} must lie in the open interval (0, 1)")


def check_positive(x: float, name: str) -> None:
    if not np.isfinite(x) or x <= 0:
        raise ValueError(f"{name} must be positive, got {x}")
