"""Penalized local-linear smooth backfitting (fLasso-SBF).

The engine minimizes

    L(g) = 1/2 sum_i omega_i int (r_i - sum_j Z_j^i(x_j)^T g_j^v(x_j))^2 prod_l K(x_l, X_l^i) dx
           + lam * sum_j ||g_j||_M

by cyclic block updates.  Each block update solves the unpenalized
componentwise problem pointwise (M_jj(x) g = numerator - cross terms) and then
applies the groupwise soft-threshold (1 - lam / ||g*||)_+ g*.

Because every kernel column integrates to one on the grid, the d-fold loss
collapses to per-observation scalars a_ij = int Z_j^i g_j^v K dx:

    L = 1/2 sum_i omega_i [(r_i - sum_j a_ij)^2 - sum_j a_ij^2] + 1/2 sum_j int g_j^T M_jj g_j.

An optional fixed ``offset`` (one curve per covariate) turns the loss into
L(offset + g) with the penalty on g only.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _engine
from .errors import ConfigError, DomainError
from .kernels import BaselineKernel, EvalGrid
from .smoother import build_design

__all__ = [
    "FitConfig",
    "FitDiagnostics",
    "AdditiveFit",
    "component_update",
    "fit",
    "fit_design",
    "penalized_objective",
    "predict",
]

log = logging.getLogger(__name__)


@dataclass
class FitConfig:
    lam: float = 0.0
    max_outer_iters: int = 200
    tol: float = 1e-6
    grid_size: int = 101
    ridge_floor: float = 1e-10
    anderson: int = 5

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ConfigError(f"penalty must be a nonnegative real, got {self.lam!r}")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if int(self.max_outer_iters) < 1:
            raise ConfigError("max_outer_iters must be at least 1")
        if int(self.grid_size) < 3:
            raise ConfigError("grid_size must be at least 3")
        if int(self.anderson) < 0 or int(self.anderson) == 1:
            raise ConfigError("anderson depth must be 0 (off) or at least 2")

    def with_lambda(self, lam):
        return FitConfig(lam, self.max_outer_iters, self.tol, self.grid_size, self.ridge_floor, self.anderson)


@dataclass
class FitDiagnostics:
    outer_iters: int = 0
    objective_trace: list = field(default_factory=list)
    converged: bool = False


@dataclass(eq=False)
class AdditiveFit:
    intercept: float
    components: list
    active_set: tuple
    bandwidths: object
    grid: EvalGrid
    diagnostics: FitDiagnostics = field(default_factory=FitDiagnostics)
    local_linear: bool = True
    kernel: BaselineKernel = BaselineKernel.EPANECHNIKOV
    lam: float = 0.0

    @property
    def d(self):
        return len(self.components)

    def predict(self, x):
        return predict(self, x)

    def component_values(self, x):
        """(m, d) matrix of fitted component values at the rows of x."""
        x = _check_points(x, self.d)
        out = np.zeros_like(x)
        for j, c in enumerate(self.components):
            if np.any(c.value):
                out[:, j] = np.interp(x[:, j], self.grid.points, c.value)
        return out


def _check_points(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != d:
        raise DomainError(f"expected {d} coordinates, got {x.shape[1]}")
    bad = np.argwhere(~np.isfinite(x) | (x < 0.0) | (x > 1.0))
    if bad.size:
        i, j = (int(v) for v in bad[0])
        raise DomainError(f"coordinate ({i}, {j}) = {x[i, j]!r} lies outside [0, 1]", index=(i, j))
    return x


def predict(f, x):
    """Intercept plus linearly interpolated component values.

    ``x`` may be a single d-vector (returns a float) or an (m, d) matrix.
    """
    single = np.ndim(x) == 1
    xx = _check_points(x, f.d)
    out = np.full(xx.shape[0], f.intercept)
    for j, c in enumerate(f.components):
        if np.any(c.value):
            out += np.interp(xx[:, j], f.grid.points, c.value)
    return float(out[0]) if single else out


class _Backfitter:
    """Mutable state of one backfitting run on a fixed design.

    Components live in a (d, G, 2) array of tuple vectors; ``scores`` (N, d)
    holds a_ij for offset + component and ``total`` their row sums.
    """

    def __init__(self, design, lam, offset=None, init=None):
        self.design = design
        self.lam = float(lam)
        d, G = design.d, design.G
        n = design.x.shape[0]
        self.vecs = np.zeros((d, G, 2))
        if init is not None:
            if len(init) != d:
                raise DomainError(f"initial fit has {len(init)} components, design has {d}")
            for j, c in enumerate(init):
                if not c.is_zero():
                    self.vecs[j] = design.vector(j, c)
        self.has_off = offset is not None
        if self.has_off:
            if len(offset) != d:
                raise DomainError(f"offset has {len(offset)} curves, design has {d}")
            self.off_vec = np.stack([design.vector(j, c) for j, c in enumerate(offset)])
            self.off_scores = np.zeros((n, d))
            for j in range(d):
                if np.any(self.off_vec[j]):
                    self.off_scores[:, j] = self._scores(j, self.off_vec[j])
        else:
            self.off_vec = np.zeros((1, 1, 2))
            self.off_scores = np.zeros((1, 1))
        self.scores = self.off_scores.copy() if self.has_off else np.zeros((n, d))
        self.norms = np.zeros(d)
        for j in range(d):
            if np.any(self.vecs[j]):
                self.scores[:, j] += self._scores(j, self.vecs[j])
                self.norms[j] = np.sqrt(max(design.quad_form(j, self.vecs[j]), 0.0))
        self.total = self.scores.sum(axis=1)
        G = design.G
        self._work = (np.empty(G), np.empty(G), np.empty(G), np.empty(G), np.empty(n), np.empty(n))

    def _scores(self, j, vec):
        des = self.design
        out = np.empty(des.x.shape[0])
        _engine.scores(des.band_lo[j], des.band_len[j], des.band_w0[j], des.band_w1[j], des.grid.weights,
                       np.ascontiguousarray(vec[:, 0]), np.ascontiguousarray(vec[:, 1]), out)
        return out

    def _shared(self):
        des = self.design
        return (self.vecs, self.off_vec, self.has_off, self.scores, self.off_scores, self.total,
                self.norms, des.band_lo, des.band_len, des.band_w0, des.band_w1,
                des.grid.weights, des.obs_weight, des.numer,
                des.inv00, des.inv01, des.inv11, des.m00, des.m01, des.m11)

    def curve(self, j):
        return self.design.curve(j, self.vecs[j])

    def set_state(self, vecs):
        """Replace every component at once and rebuild scores, totals and norms."""
        des = self.design
        self.vecs[:] = vecs
        self.scores = self.off_scores.copy() if self.has_off else np.zeros_like(self.scores)
        for j in range(des.d):
            if np.any(vecs[j]):
                self.scores[:, j] += self._scores(j, vecs[j])
        self.total = self.scores.sum(axis=1)
        v0, v1 = vecs[:, :, 0], vecs[:, :, 1]
        quad = (des.m00 * v0 * v0 + 2.0 * des.m01 * v0 * v1 + des.m11 * v1 * v1) @ des.grid.weights
        self.norms = np.sqrt(np.maximum(quad, 0.0))

    @property
    def comps(self):
        return [self.curve(j) for j in range(self.design.d)]

    def is_zero(self, j):
        return not np.any(self.vecs[j])

    def update(self, j):
        """Stage 1 + stage 2 for covariate j; commits and returns (new, star, ||star||)."""
        a, b, f0, f1, coef, snew = self._work
        sh = self._shared()
        _, norm_star = _engine.update_one(j, self.lam, *sh, a, b, f0, f1, coef, snew)
        star = self.design.curve(j, np.column_stack([a, b]))
        return self.curve(j), star, float(norm_star)

    def cycle(self, order, visit):
        """One sweep over ``order`` restricted to ``visit``; returns per-covariate value changes."""
        changes = np.zeros(self.design.d)
        _engine.cycle(order, visit, self.lam, *self._shared(), changes)
        return changes

    def objective(self):
        des = self.design
        w = des.obs_weight
        resid = des.resp - self.total
        val = 0.5 * float(w @ (resid * resid)) - 0.5 * float(w @ (self.scores * self.scores).sum(axis=1))
        vec = self.vecs + self.off_vec if self.has_off else self.vecs
        v0, v1 = vec[:, :, 0], vec[:, :, 1]
        quad = des.m00 * v0 * v0 + 2.0 * des.m01 * v0 * v1 + des.m11 * v1 * v1
        val += 0.5 * float(quad.sum(axis=0) @ des.grid.weights)
        return val + self.lam * float(self.norms.sum())


def _grid_for(cfg, grid):
    return grid if grid is not None else EvalGrid.uniform(cfg.grid_size)


def _try_extrapolation(bf, history, obj):
    """Anderson step from consecutive iterates; commits it only if the objective drops."""
    xs = np.array(history)
    res = np.diff(xs, axis=0)
    gram = res @ res.T
    gram += 1e-12 * max(np.trace(gram), 1e-300) * np.eye(gram.shape[0])
    try:
        z = np.linalg.solve(gram, np.ones(gram.shape[0]))
    except np.linalg.LinAlgError:
        return obj
    if not np.all(np.isfinite(z)) or z.sum() == 0.0:
        return obj
    c = z / z.sum()
    cand = (c @ xs[1:]).reshape(bf.vecs.shape)
    saved = (bf.vecs.copy(), bf.scores, bf.total, bf.norms)
    bf.set_state(cand)
    new = bf.objective()
    if new < obj:
        return new
    bf.vecs[:] = saved[0]
    bf.scores, bf.total, bf.norms = saved[1:]
    return obj


def fit_design(design, cfg, offset=None, init=None, order=None, skip_inactive=True):
    """Run the penalized backfitting on a prebuilt design.

    ``order`` fixes the cyclic update order (default 0..d-1).  ``init`` gives
    starting components (warm start); default is all zero.  Components that
    stayed zero for three consecutive visits are re-examined only every fifth
    cycle, and convergence is declared only after a cycle that visited every
    covariate.

    With ``cfg.anderson = m > 0`` every m cycles an Anderson extrapolation of
    the last m + 1 iterates is tried and kept only if it lowers the penalized
    objective, so the recorded trace stays non-increasing.
    """
    d = design.d
    order = np.arange(d) if order is None else np.asarray([int(j) for j in order], dtype=np.int64)
    if sorted(order.tolist()) != list(range(d)):
        raise ConfigError("update order must be a permutation of the covariates")
    bf = _Backfitter(design, cfg.lam, offset=offset, init=init)
    diag = FitDiagnostics()
    zero_streak = np.zeros(d, dtype=int)
    force_full = True
    depth = int(cfg.anderson)
    history = []
    for it in range(int(cfg.max_outer_iters)):
        full = force_full or not skip_inactive or it % 5 == 4
        force_full = False
        visit = np.ones(d, dtype=np.bool_) if full else zero_streak < 3
        changes = bf.cycle(order, visit)
        nonzero = np.any(bf.vecs[:, :, 0] != 0.0, axis=1) | np.any(bf.vecs[:, :, 1] != 0.0, axis=1)
        zero_streak = np.where(visit, np.where(nonzero, 0, zero_streak + 1), zero_streak)
        obj = bf.objective()
        if depth:
            history.append(bf.vecs.ravel().copy())
            if len(history) == depth + 1:
                obj = _try_extrapolation(bf, history, obj)
                history.clear()
        diag.objective_trace.append(obj)
        diag.outer_iters = it + 1
        scale = 1.0 + float(np.max(np.abs(bf.vecs[:, :, 0])))
        if float(changes.max()) / scale < cfg.tol:
            if visit.all():
                diag.converged = True
                break
            force_full = True
    if not diag.converged:
        log.info("backfitting stopped after %d cycles without converging (lam=%g)",
                    diag.outer_iters, cfg.lam)
    comps = bf.comps
    active = tuple(j for j in range(d) if not bf.is_zero(j))
    return AdditiveFit(
        intercept=design.intercept,
        components=comps,
        active_set=active,
        bandwidths=design.bandwidths,
        grid=design.grid,
        diagnostics=diag,
        local_linear=design.local_linear,
        kernel=design.kernel,
        lam=cfg.lam,
    )


def fit(sample, bandwidths, cfg=None, offset=None, *, grid=None, kernel=BaselineKernel.EPANECHNIKOV,
        local_linear=True, init=None, order=None):
    """LL-fLasso-SBF fit of ``sample`` (intercept = sample mean of Y)."""
    cfg = cfg or FitConfig()
    design = build_design(sample, bandwidths, _grid_for(cfg, grid), kernel, local_linear,
                          ridge_floor=cfg.ridge_floor)
    return fit_design(design, cfg, offset=offset, init=init, order=order)


def component_update(j, components, design, lam, offset=None):
    """One two-stage update of covariate j given the other components.

    Returns ``(new_curve, unpenalized_curve, unpenalized_norm)``.
    """
    bf = _Backfitter(design, lam, offset=offset, init=components)
    return bf.update(j)


def penalized_objective(design, components, lam, offset=None):
    """Smoothed squared loss of (offset + components) plus lam * sum_j ||component_j||."""
    bf = _Backfitter(design, lam, offset=offset, init=components)
    return bf.objective()
