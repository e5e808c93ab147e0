"""Seeded high-contrast streak fields."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def generate_streak_field(n: int, background: float = 1.0, streak_value: float = 1e6, seed: int = 0,
                          density: float = 0.3, min_length: int = 10, max_length: int = 40) -> np.ndarray:
    """Background value plus horizontal/vertical one-cell-thick streaks.

    ``round(density * n)`` streaks (at least one) of length ``min_length`` to
    ``max_length`` cells are placed uniformly at random and clipped at the
    domain edge. The geometry depends only on ``seed``, ``n``, ``density``
    and the length range, so a contrast sweep reuses the same streaks.
    """
    if background <= 0 or streak_value <= 0:
        raise ConfigError("field values must be positive")
    if density < 0 or min_length < 1 or max_length < min_length:
        raise ConfigError("invalid streak density or length range")
    rng = np.random.default_rng(seed)
    grid = np.full((n, n), float(background))  # grid[cy, cx]
    count = max(1, int(round(density * n)))
    for _ in range(count):
        horizontal = rng.random() < 0.5
        length = int(rng.integers(min_length, max_length + 1))
        row, start = (int(v) for v in rng.integers(0, n, size=2))
        if horizontal:
            grid[row, start:start + length] = streak_value
        else:
            grid[start:start + length, row] = streak_value
    return grid.ravel()
