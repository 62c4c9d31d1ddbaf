import numpy as np
import pytest

from sbftl.kernels import Bandwidths, EvalGrid
from sbftl.smoother import Sample


def wls_local_linear(x, r, w, grid, h, kernel_weights):
    """Direct per-gridpoint weighted least squares local-linear fit.

    Minimizes sum_i w_i K(x_g, X_i) (r_i - a - b (X_i - x_g)/h)^2 at every
    grid point and returns (a, b) arrays.
    """
    a = np.empty(grid.size)
    b = np.empty(grid.size)
    for g, xg in enumerate(grid.points):
        k = kernel_weights[g]
        z = np.column_stack([np.ones_like(x), (x - xg) / h])
        wk = w * k
        lhs = z.T @ (wk[:, None] * z)
        rhs = z.T @ (wk * r)
        a[g], b[g] = np.linalg.solve(lhs, rhs)
    return a, b


def additive_sample(n, d, rng, noise=0.3):
    x = rng.uniform(size=(n, d))
    y = np.sin(2 * np.pi * x[:, 0]) + (2 * x[:, 1] - 1) ** 2 + noise * rng.standard_normal(n)
    if d > 2:
        y = y + 0.5 * x[:, 2]
    return Sample(x, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_sample(rng):
    return additive_sample(120, 4, rng)


@pytest.fixture
def grid101():
    return EvalGrid.uniform(101)


@pytest.fixture
def bw4():
    return Bandwidths.constant(0.2, 4)
