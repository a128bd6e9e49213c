"""Parameter checks shared by the estimator, the config and the CLI."""

from __future__ import annotations

import numbers

from sklearn.utils import check_scalar


def check_exponent(p, supercritical: bool = False) -> float:
    """``p > 2`` always; ``p > 6`` when the solve pipeline is requested."""
    p = check_scalar(p, "p", numbers.Real, min_val=2.0, include_boundaries="neither")
    if supercritical and not p > 6:
        raise ValueError(f"solving requires p > 6 (got p={p:g})")
    return float(p)


def check_positive(value, name: str) -> float:
    return float(check_scalar(value, name, numbers.Real, min_val=0.0, include_boundaries="neither"))


def check_count(value, name: str, min_val: int = 1) -> int:
    return int(check_scalar(value, name, numbers.Integral, min_val=min_val))


def check_N(values) -> list[int]:
    """Sorted, de-duplicated minimax parameters, each at least 2."""
    if isinstance(values, numbers.Integral):
        values = range(2, int(values) + 1)
    out = sorted({check_count(v, "N", min_val=2) for v in values})
    if not out:
        raise ValueError("N needs at least one value >= 2")
    return out


def check_rho_grid(grid) -> list[float]:
    grid = [float(r) for r in grid]
    if not grid or grid[-1] != 1.0:
        raise ValueError("rho grid must end at 1")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("rho grid must be strictly ascending")
    if grid[0] < 0.5:
        raise ValueError("rho grid must lie in [1/2, 1]")
    return grid
