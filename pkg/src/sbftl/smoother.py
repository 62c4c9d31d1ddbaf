"""Empirical local-linear smoothing objects for one (possibly pooled) sample.

Everything is discretized on a shared :class:`~sbftl.kernels.EvalGrid` and
integrals use its trapezoid weights.  A component is stored as a
:class:`ComponentCurve` holding the value and the *raw* derivative; the
local-linear tuple vector (g, h * g') is formed at the point of use with
whatever bandwidth the consuming design carries.

A design may pool several populations.  Each observation i then carries a
weight omega_i = w_a / n_a and a response centered by its own population
mean, so that sum_i omega_i (...) equals sum_a w_a (1/n_a) sum_{i in a} (...).
"""

from dataclasses import dataclass

import numpy as np

from . import _engine
from .errors import DegenerateMarginalError, DimensionError, DomainError, IllConditionedError
from .kernels import KERNEL_IDS, BaselineKernel, Bandwidths, EvalGrid, weight_field

__all__ = [
    "Sample",
    "ComponentCurve",
    "DesignField",
    "build_design",
    "build_pooled_design",
    "marginal_ll",
    "sample_scores",
    "cross_term",
    "tuple_norm",
    "center_constraint",
    "pi00_constant",
]

RIDGE_FLOOR = 1e-10
SINGULAR_EIG = 1e-8
SINGULAR_MIN_N = 50


@dataclass(eq=False)
class Sample:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise DimensionError("covariates must form an n x d matrix")
        if x.shape[0] != y.shape[0]:
            raise DimensionError(f"{x.shape[0]} covariate rows but {y.shape[0]} responses")
        if x.shape[0] < 2:
            raise DimensionError("a sample needs at least two observations")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DomainError("sample contains missing or non-finite values")
        bad = np.argwhere((x < 0.0) | (x > 1.0))
        if bad.size:
            i, j = (int(v) for v in bad[0])
            raise DomainError(f"covariate ({i}, {j}) = {x[i, j]!r} lies outside [0, 1]", index=(i, j))
        self.x = x
        self.y = y

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    def subset(self, rows):
        return Sample(self.x[rows], self.y[rows])


@dataclass(eq=False)
class ComponentCurve:
    value: np.ndarray
    deriv: np.ndarray

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=float)
        self.deriv = np.asarray(self.deriv, dtype=float)
        if self.value.shape != self.deriv.shape or self.value.ndim != 1:
            raise DimensionError("value and derivative must be equal-length vectors")

    @classmethod
    def zeros(cls, size):
        return cls(np.zeros(size), np.zeros(size))

    @classmethod
    def from_vector(cls, vec, h):
        """Inverse of :meth:`vector`: vec has shape (G, 2) = (g, h g')."""
        return cls(vec[:, 0].copy(), vec[:, 1] / h)

    @property
    def size(self):
        return self.value.shape[0]

    def vector(self, h):
        """The tuple vector (g, h * g') on the grid, shape (G, 2)."""
        return np.column_stack([self.value, h * self.deriv])

    def is_zero(self):
        return not (np.any(self.value) or np.any(self.deriv))

    def copy(self):
        return ComponentCurve(self.value.copy(), self.deriv.copy())

    def __add__(self, other):
        return ComponentCurve(self.value + other.value, self.deriv + other.deriv)

    def __sub__(self, other):
        return ComponentCurve(self.value - other.value, self.deriv - other.deriv)

    def __mul__(self, c):
        return ComponentCurve(c * self.value, c * self.deriv)

    __rmul__ = __mul__


class DesignField:
    """M_jj, p_j and the marginal numerator for every covariate, on the grid.

    Attributes of note: ``m00, m01, m11`` (d, G) hold the entries of the
    symmetric 2x2 matrices M_jj(x); ``numer`` (d, G, 2) the numerators
    sum_i omega_i Z_j^i(x) K(x, X_j^i) r_i with centered responses r_i.
    ``p_j`` is the first column of M_jj.  In Nadaraya-Watson mode
    (``local_linear=False``) only ``m00`` and ``numer[..., 0]`` are used.
    """

    def __init__(self, x, resp, obs_weight, bandwidths, grid, kernel, local_linear, intercept,
                 ridge_floor=RIDGE_FLOOR, n_raw=None):
        self.x = x
        self.resp = resp
        self.obs_weight = obs_weight
        self.bandwidths = bandwidths
        self.grid = grid
        self.kernel = kernel
        self.local_linear = local_linear
        self.intercept = float(intercept)
        self.ridge_floor = ridge_floor
        self.n = x.shape[0] if n_raw is None else n_raw
        self.d = x.shape[1]
        if bandwidths.d != self.d:
            raise DimensionError(f"{bandwidths.d} bandwidths for {self.d} covariates")

        G = grid.size
        self.fields = []
        N = x.shape[0]
        width = int(np.ceil(2.0 * float(np.max(bandwidths.per_covariate)) / grid.spacing)) + 2
        self.band_lo = np.empty((self.d, N), dtype=np.int64)
        self.band_len = np.empty((self.d, N), dtype=np.int64)
        self.band_w0 = np.empty((self.d, N, width))
        self.band_w1 = np.empty((self.d, N, width))
        self.m00 = np.empty((self.d, G))
        self.m01 = np.zeros((self.d, G))
        self.m11 = np.zeros((self.d, G))
        self.numer = np.zeros((self.d, G, 2))
        wr = obs_weight * resp
        for j in range(self.d):
            wf = weight_field(x[:, j], grid, bandwidths[j], kernel)
            self.fields.append(wf)
            _engine.band_weights(np.ascontiguousarray(x[:, j]), wf.denom, bandwidths[j], KERNEL_IDS[kernel],
                                 grid.points, grid.spacing, width, self.band_lo[j], self.band_len[j],
                                 self.band_w0[j], self.band_w1[j])
            self.m00[j] = wf.k0 @ obs_weight
            self.numer[j, :, 0] = wf.k0 @ wr
            if local_linear:
                self.m01[j] = wf.k1 @ obs_weight
                self.m11[j] = wf.k2 @ obs_weight
                self.numer[j, :, 1] = wf.k1 @ wr
        self._prepare_inverse()

    def _prepare_inverse(self):
        # ridge-regularized inverse; grid points whose smallest eigenvalue is
        # below SINGULAR_EIG get the pseudo-inverse instead (the right-hand
        # sides always lie in the range of M_jj, so this is a minimizer)
        r = self.ridge_floor
        a = self.m00 + r
        zeros = np.zeros_like(self.m00)
        if not self.local_linear:
            self.min_eig = self.m00.copy()
            self.singular = self.min_eig < SINGULAR_EIG
            self.inv00 = np.where(self.singular, 0.0, 1.0 / np.where(self.singular, 1.0, a))
            self.inv01 = zeros
            self.inv11 = zeros.copy()
            return
        b = self.m01
        c = self.m11 + r
        tr = self.m00 + self.m11
        disc = np.sqrt((self.m00 - self.m11) ** 2 + 4.0 * b * b)
        self.min_eig = 0.5 * (tr - disc)
        det = a * c - b * b
        self.singular = self.min_eig < SINGULAR_EIG
        safe = np.where(self.singular, 1.0, det)
        self.inv00 = c / safe
        self.inv01 = -b / safe
        self.inv11 = a / safe
        if np.any(self.singular):
            jj, gg = np.nonzero(self.singular)
            mats = np.empty((jj.size, 2, 2))
            mats[:, 0, 0] = self.m00[jj, gg]
            mats[:, 0, 1] = mats[:, 1, 0] = self.m01[jj, gg]
            mats[:, 1, 1] = self.m11[jj, gg]
            evals, evecs = np.linalg.eigh(mats)
            inv_evals = np.where(evals > SINGULAR_EIG, 1.0 / np.where(evals > SINGULAR_EIG, evals, 1.0), 0.0)
            pinv = np.einsum("kab,kb,kcb->kac", evecs, inv_evals, evecs)
            self.inv00[jj, gg] = pinv[:, 0, 0]
            self.inv01[jj, gg] = pinv[:, 0, 1]
            self.inv11[jj, gg] = pinv[:, 1, 1]

    @property
    def G(self):
        return self.grid.size

    def h(self, j):
        return self.bandwidths[j]

    def mjj(self, j):
        """M_jj(x) as a (G, 2, 2) array (without ridge)."""
        out = np.empty((self.G, 2, 2))
        out[:, 0, 0] = self.m00[j]
        out[:, 0, 1] = out[:, 1, 0] = self.m01[j]
        out[:, 1, 1] = self.m11[j]
        return out

    def pj(self, j):
        """p_j^v(x) as a (G, 2) array."""
        return np.column_stack([self.m00[j], self.m01[j]])

    def check_conditioning(self, j):
        if self.n < SINGULAR_MIN_N:
            return
        bad = np.flatnonzero(self.min_eig[j] < SINGULAR_EIG)
        if bad.size:
            g = int(bad[0])
            raise IllConditionedError(
                f"smoother matrix for covariate {j} is singular at grid point "
                f"x={self.grid.points[g]:.6g} (min eigenvalue {self.min_eig[j, g]:.3g})",
                covariate=j, grid_point=float(self.grid.points[g]),
            )

    def solve(self, j, rhs):
        """Apply (M_jj(x) + ridge)^{-1} (pseudo-inverse where singular) to rhs (G, 2)."""
        out = np.zeros_like(rhs)
        out[:, 0] = self.inv00[j] * rhs[:, 0] + self.inv01[j] * rhs[:, 1]
        out[:, 1] = self.inv01[j] * rhs[:, 0] + self.inv11[j] * rhs[:, 1]
        return out

    def quad_form(self, j, vec):
        """int vec(x)^T M_jj(x) vec(x) dx for a (G, 2) tuple vector."""
        v0, v1 = vec[:, 0], vec[:, 1]
        if self.local_linear:
            integrand = self.m00[j] * v0 * v0 + 2.0 * self.m01[j] * v0 * v1 + self.m11[j] * v1 * v1
        else:
            integrand = self.m00[j] * v0 * v0
        return float(self.grid.weights @ integrand)

    def vector(self, j, curve):
        """Tuple vector of ``curve`` under this design's bandwidth for j."""
        if not self.local_linear:
            return np.column_stack([curve.value, np.zeros(self.G)])
        return curve.vector(self.h(j))

    def curve(self, j, vec):
        if not self.local_linear:
            return ComponentCurve(vec[:, 0].copy(), np.zeros(self.G))
        return ComponentCurve.from_vector(vec, self.h(j))

    def scores_from_vector(self, k, vec):
        """Per-observation scalars s_i = int Z_k^i(x)^T vec(x) K(x, X_k^i) dx."""
        wq = self.grid.weights
        rhs = np.concatenate([wq * vec[:, 0], wq * vec[:, 1]])
        return self.fields[k].k01_t @ rhs

    def field_from_scores(self, j, s):
        """x -> sum_i omega_i Z_j^i(x) K(x, X_j^i) s_i, shape (G, 2)."""
        out = self.fields[j].k01 @ (self.obs_weight * s)
        return out.reshape(2, self.G).T


def _check_grid(curve, design):
    if curve.size != design.G:
        raise DimensionError(f"curve has {curve.size} grid points, design uses {design.G}")


def build_design(sample, bandwidths, grid=None, kernel=BaselineKernel.EPANECHNIKOV,
                 local_linear=True, ridge_floor=RIDGE_FLOOR):
    """Design field for a single sample (weights 1/n, response centered by its mean)."""
    grid = grid or EvalGrid.uniform()
    if bandwidths.d != sample.d:
        raise DimensionError(f"{bandwidths.d} bandwidths for {sample.d} covariates")
    ybar = float(sample.y.mean())
    w = np.full(sample.n, 1.0 / sample.n)
    return DesignField(sample.x, sample.y - ybar, w, bandwidths, grid, kernel, local_linear,
                       intercept=ybar, ridge_floor=ridge_floor)


def build_pooled_design(samples, weights, bandwidths, grid=None, kernel=BaselineKernel.EPANECHNIKOV,
                        local_linear=True, ridge_floor=RIDGE_FLOOR):
    """Weighted multi-sample design: M_A = sum_a w_a M_a, p_A likewise.

    Each population's response is centered by its own mean.  The design
    intercept is the weighted mean sum_a w_a Ybar_a.
    """
    samples = list(samples)
    weights = np.asarray(weights, dtype=float)
    if len(samples) == 0 or len(samples) != weights.size:
        raise DimensionError("need one weight per sample and at least one sample")
    d = samples[0].d
    if any(s.d != d for s in samples):
        raise DimensionError("pooled samples must share the covariate dimension")
    grid = grid or EvalGrid.uniform()
    xs, rs, ws = [], [], []
    for s, wa in zip(samples, weights):
        ybar = s.y.mean()
        xs.append(s.x)
        rs.append(s.y - ybar)
        ws.append(np.full(s.n, wa / s.n))
    intercept = float(sum(wa * s.y.mean() for s, wa in zip(samples, weights)))
    return DesignField(np.vstack(xs), np.concatenate(rs), np.concatenate(ws), bandwidths, grid,
                       kernel, local_linear, intercept=intercept, ridge_floor=ridge_floor,
                       n_raw=sum(s.n for s in samples))


def marginal_ll(design, j):
    """Marginal local-linear pilot m_j^v = M_jj^{-1} (numerator), as a curve."""
    design.check_conditioning(j)
    return design.curve(j, design.solve(j, design.numer[j]))


def sample_scores(design, k, curve):
    """Per-observation scalars int Z_k^i(x)^T g_k^v(x) K(x, X_k^i) dx."""
    _check_grid(curve, design)
    return design.scores_from_vector(k, design.vector(k, curve))


def cross_term(design, j, k, other):
    """x -> int M_jk(x, u) g_k^v(u) du without materializing M_jk."""
    if j == k:
        raise ValueError("cross_term needs two distinct covariates")
    s = sample_scores(design, k, other)
    return design.field_from_scores(j, s)


def tuple_norm(curve, design, j):
    """||g_j||_M = sqrt(int g^v(x)^T M_jj(x) g^v(x) dx)."""
    _check_grid(curve, design)
    q = design.quad_form(j, design.vector(j, curve))
    return float(np.sqrt(max(q, 0.0)))


def pi00_constant(curve, design, j):
    """int g^v(x)^T p_j^v(x) dx."""
    _check_grid(curve, design)
    vec = design.vector(j, curve)
    integrand = vec[:, 0] * design.m00[j]
    if design.local_linear:
        integrand = integrand + vec[:, 1] * design.m01[j]
    return float(design.grid.weights @ integrand)


def center_constraint(curve, design, j):
    """Subtract the constant that makes int g^v . p_j^v = 0 (value only)."""
    mass = float(design.grid.weights @ design.m00[j])
    if mass <= 0.0:
        raise DegenerateMarginalError(f"covariate {j} has zero smoothed marginal mass")
    c = pi00_constant(curve, design, j) / mass
    return ComponentCurve(curve.value - c, curve.deriv.copy())
