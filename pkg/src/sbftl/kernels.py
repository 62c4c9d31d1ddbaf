"""Baseline kernels, evaluation grids and the boundary-normalized kernel.

The normalized kernel is

    K_h(u, v) = K_h(u - v) / int_0^1 K_h(w - v) dw,      K_h(t) = K(t / h) / h,

so that it integrates to one in ``u`` over [0, 1] for every ``v``.  Two
discretizations are provided by :func:`weight_field`:

* ``"grid"`` (default): the denominator is the trapezoid integral on the
  evaluation grid, so every column integrates to one *exactly* under the
  grid's own quadrature.  All estimation code relies on this.
* ``"analytic"``: the denominator comes from the kernel's closed-form CDF and
  the field equals :func:`normalized_weight` entrywise.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import sparse

from .errors import DomainError, InvalidBandwidthError

__all__ = [
    "BaselineKernel",
    "EvalGrid",
    "Bandwidths",
    "WeightField",
    "check_bandwidth",
    "normalized_weight",
    "weight_field",
    "kernel_moments",
]


class BaselineKernel(Enum):
    EPANECHNIKOV = "epanechnikov"
    QUARTIC = "quartic"

    def eval(self, u):
        u = np.asarray(u, dtype=float)
        inside = np.abs(u) <= 1.0
        if self is BaselineKernel.EPANECHNIKOV:
            val = 0.75 * (1.0 - u * u)
        else:
            val = 15.0 / 16.0 * (1.0 - u * u) ** 2
        return np.where(inside, val, 0.0)

    def cdf(self, u):
        """int_{-1}^{u} K(s) ds."""
        u = np.clip(np.asarray(u, dtype=float), -1.0, 1.0)
        if self is BaselineKernel.EPANECHNIKOV:
            return 0.5 + 0.75 * (u - u**3 / 3.0)
        return 0.5 + 15.0 / 16.0 * (u - 2.0 * u**3 / 3.0 + u**5 / 5.0)

    @property
    def mu2(self):
        """Second moment int v^2 K(v) dv."""
        return 0.2 if self is BaselineKernel.EPANECHNIKOV else 1.0 / 7.0

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        return cls(str(name).lower())


@dataclass(frozen=True, eq=False)
class EvalGrid:
    """Equally spaced grid on [0, 1] including both endpoints."""

    points: np.ndarray
    spacing: float
    weights: np.ndarray = field(repr=False)

    @classmethod
    def uniform(cls, size=401):
        if size < 3:
            raise ValueError("grid needs at least 3 points")
        pts = np.linspace(0.0, 1.0, int(size))
        spacing = 1.0 / (size - 1)
        w = np.full(size, spacing)
        w[0] = w[-1] = spacing / 2.0
        pts.setflags(write=False)
        w.setflags(write=False)
        return cls(points=pts, spacing=spacing, weights=w)

    @property
    def size(self):
        return self.points.shape[0]

    def integrate(self, values, axis=-1):
        """Trapezoid rule over the grid axis."""
        return np.tensordot(np.asarray(values), self.weights, axes=([axis], [0]))

    def same_as(self, other):
        return self.size == other.size


def check_bandwidth(h):
    h = float(h)
    if not np.isfinite(h) or h <= 0.0 or h > 0.5:
        raise InvalidBandwidthError(f"bandwidth must lie in (0, 0.5], got {h!r}")
    return h


@dataclass(frozen=True, eq=False)
class Bandwidths:
    """Per-covariate bandwidths h_j plus a reference bandwidth h.

    ``c_lower`` / ``c_upper`` record the constants with
    c_lower * h <= h_j <= c_upper * h.
    """

    per_covariate: np.ndarray
    reference: float

    def __post_init__(self):
        h = np.asarray(self.per_covariate, dtype=float).ravel()
        if h.size == 0:
            raise InvalidBandwidthError("empty bandwidth vector")
        for v in h:
            check_bandwidth(v)
        check_bandwidth(self.reference)
        h.setflags(write=False)
        object.__setattr__(self, "per_covariate", h)
        object.__setattr__(self, "reference", float(self.reference))

    @classmethod
    def from_values(cls, values, reference=None):
        h = np.asarray(values, dtype=float).ravel()
        if reference is None:
            reference = float(np.exp(np.mean(np.log(h)))) if h.size else 0.0
        return cls(per_covariate=h, reference=reference)

    @classmethod
    def constant(cls, h, d):
        return cls.from_values(np.full(d, float(h)), reference=float(h))

    @property
    def d(self):
        return self.per_covariate.shape[0]

    @property
    def c_lower(self):
        return float(self.per_covariate.min() / self.reference)

    @property
    def c_upper(self):
        return float(self.per_covariate.max() / self.reference)

    def __getitem__(self, j):
        return float(self.per_covariate[j])

    def __len__(self):
        return self.d


def _denominator(v, h, kernel):
    v = np.asarray(v, dtype=float)
    return kernel.cdf((1.0 - v) / h) - kernel.cdf(-v / h)


def normalized_weight(u, v, h, kernel=BaselineKernel.EPANECHNIKOV):
    """Boundary-normalized kernel K_h(u, v) with a closed-form denominator.

    Broadcasts over ``u`` and ``v``.
    """
    h = check_bandwidth(h)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    out = kernel.eval((u - v) / h) / h / _denominator(v, h, kernel)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class WeightField:
    """Normalized kernel weights K_h(grid[g], X_i), stored band-sparse.

    ``k0[g, i]`` is the weight, ``k1`` and ``k2`` carry the extra factors
    (X_i - x_g)/h and ((X_i - x_g)/h)^2.  ``k01`` stacks k0 over k1 (2G x n)
    so a single sparse product yields both local-linear rows.  ``denom``
    holds the per-sample normalizers int_0^1 K_h(w - X_i) dw.
    """

    k0: sparse.csr_matrix
    k1: sparse.csr_matrix
    k2: sparse.csr_matrix
    h: float
    n: int
    grid_size: int
    denom: np.ndarray = None

    @property
    def k01(self):
        return self._k01

    @property
    def k01_t(self):
        return self._k01_t

    def dense(self):
        return self.k0.toarray()


def _banded_offsets(samples, grid, h):
    # grid indices g with |x_g - X_i| < h, padded to a common band width
    lo = np.ceil((samples - h) / grid.spacing - 1e-12).astype(np.int64)
    lo = np.maximum(lo, 0)
    band = int(np.ceil(2.0 * h / grid.spacing)) + 2
    idx = lo[:, None] + np.arange(band)[None, :]
    valid = idx < grid.size
    idx = np.minimum(idx, grid.size - 1)
    return idx, valid


def weight_field(samples, grid, h, kernel=BaselineKernel.EPANECHNIKOV, normalization="grid"):
    """Band-sparse matrix of normalized kernel weights for one covariate.

    Raises :class:`DomainError` for samples outside [0, 1] and
    :class:`InvalidBandwidthError` when some column carries no grid mass
    (bandwidth too small for the grid).
    """
    h = check_bandwidth(h)
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("empty sample vector")
    bad = np.flatnonzero(~np.isfinite(x) | (x < 0.0) | (x > 1.0))
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"sample {i} = {x[i]!r} lies outside [0, 1]", index=i)
    if normalization not in ("grid", "analytic"):
        raise ValueError(f"unknown normalization {normalization!r}")

    n = x.size
    idx, valid = _banded_offsets(x, grid, h)
    dist = (x[:, None] - grid.points[idx]) / h
    raw = kernel.eval(dist) / h
    raw = np.where(valid, raw, 0.0)
    if normalization == "grid":
        denom = (raw * grid.weights[idx]).sum(axis=1)
    else:
        denom = _denominator(x, h, kernel)
    if np.any(denom <= 0.0):
        i = int(np.flatnonzero(denom <= 0.0)[0])
        raise InvalidBandwidthError(
            f"bandwidth {h} too small for a grid of spacing {grid.spacing}: "
            f"no kernel mass for sample {i}"
        )
    w = raw / denom[:, None]
    keep = w > 0.0
    rows = idx[keep]
    cols = np.broadcast_to(np.arange(n)[:, None], idx.shape)[keep]
    vals = w[keep]
    dd = dist[keep]
    shape = (grid.size, n)
    k0 = sparse.csr_matrix((vals, (rows, cols)), shape=shape)
    k1 = sparse.csr_matrix((vals * dd, (rows, cols)), shape=shape)
    k2 = sparse.csr_matrix((vals * dd * dd, (rows, cols)), shape=shape)
    wf = WeightField(k0=k0, k1=k1, k2=k2, h=h, n=n, grid_size=grid.size, denom=denom)
    k01 = sparse.vstack([k0, k1], format="csr")
    object.__setattr__(wf, "_k01", k01)
    object.__setattr__(wf, "_k01_t", k01.T.tocsr())
    return wf


KERNEL_IDS = {BaselineKernel.EPANECHNIKOV: 0, BaselineKernel.QUARTIC: 1}


def kernel_moments(grid, h, kernel=BaselineKernel.EPANECHNIKOV):
    """Incomplete moments mu_l(v) = int ((u - v)/h)^l K_h(u, v) du, l = 0, 1, 2.

    Evaluated at every grid point ``v`` with the grid-normalized kernel, so
    mu_0 is one up to rounding.  Returns a (G, 3) array.
    """
    wf = weight_field(grid.points, grid, h, kernel)
    wq = grid.weights
    mu0 = wf.k0.T @ wq
    # k1 carries (v - u)/h, hence the sign flip
    mu1 = -(wf.k1.T @ wq)
    mu2 = wf.k2.T @ wq
    return np.column_stack([mu0, mu1, mu2])
