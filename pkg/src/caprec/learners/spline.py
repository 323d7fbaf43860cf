"""Natural cubic spline basis (truncated power form).

With knots xi_1 < ... < xi_m the basis is x together with
N_{j}(x) = d_j(x) - d_{m-1}(x), j = 1..m-2, where
d_j(x) = ((x - xi_j)_+^3 - (x - xi_m)_+^3) / (xi_m - xi_j).
The fitted function is linear beyond the boundary knots. Counting the
intercept this spans m degrees of freedom.
"""

from __future__ import annotations

import numpy as np


def quantile_knots(x, df: int) -> np.ndarray:
    """``df`` knots at the interior quantiles j/(df+1); duplicates dropped."""
    probs = np.arange(1, df + 1) / (df + 1)
    return np.unique(np.quantile(np.asarray(x, dtype=float), probs))


def natural_spline_basis(x, knots) -> np.ndarray:
    """Columns ``[x, N_1(x), ..., N_{m-2}(x)]``; just ``x`` if fewer than 3 knots."""
    x = np.asarray(x, dtype=float)
    knots = np.asarray(knots, dtype=float)
    m = knots.size
    if m < 3:
        return x[:, None]

    def d(j):
        return (np.maximum(x - knots[j], 0.0) ** 3
                - np.maximum(x - knots[-1], 0.0) ** 3) / (knots[-1] - knots[j])

    last = d(m - 2)
    cols = [x] + [d(j) - last for j in range(m - 2)]
    return np.column_stack(cols)
