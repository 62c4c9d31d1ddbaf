"""Rule-of-thumb bandwidths and BIC selection of penalty parameters."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientSampleError, SBFError
from .flasso import FitConfig, fit_design
from .kernels import Bandwidths, BaselineKernel, EvalGrid
from .smoother import build_design

__all__ = [
    "C_ROT",
    "LambdaGrid",
    "rot_bandwidth",
    "bic_score",
    "select_lambda",
    "select_lambda_pair",
]

log = logging.getLogger(__name__)

C_ROT = 2.34
H_MIN, H_MAX = 0.01, 0.5


@dataclass(frozen=True, eq=False)
class LambdaGrid:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size == 0:
            raise ConfigError("lambda grid is empty")
        if np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise ConfigError("lambda grid values must be positive")
        if np.any(np.diff(v) <= 0):
            raise ConfigError("lambda grid must be strictly increasing")
        object.__setattr__(self, "values", v)

    @classmethod
    def log_spaced(cls, scale, size=20, lo=1e-3, hi=1.0):
        if scale <= 0:
            raise ConfigError("lambda grid scale must be positive")
        if size == 1:
            return cls(np.array([scale * hi]))
        return cls(scale * np.logspace(math.log10(lo), math.log10(hi), size))

    @classmethod
    def for_response(cls, y, size=20):
        sd = float(np.std(y, ddof=1))
        return cls.log_spaced(sd if sd > 0 else 1.0, size)

    def __len__(self):
        return self.values.size

    def __iter__(self):
        return iter(self.values.tolist())


def rot_bandwidth(sample, n_eff=None, c_rot=C_ROT, warnings=None):
    """h_j = c_rot * sd(X_j) * n^{-1/5}, clipped to [0.01, 0.5].

    ``n_eff`` replaces n in the rate (e.g. pooled sizes).  Constant covariates
    get the floor 0.01; their indices are appended to ``warnings`` if given.
    """
    x = sample.x if hasattr(sample, "x") else np.asarray(sample, dtype=float)
    n = x.shape[0] if n_eff is None else n_eff
    if x.shape[0] < 10:
        raise InsufficientSampleError("rule-of-thumb bandwidths need at least 10 observations")
    sd = x.std(axis=0, ddof=1)
    h = c_rot * sd * float(n) ** (-0.2)
    const = np.flatnonzero(np.ptp(x, axis=0) == 0)
    if const.size:
        log.warning("constant covariate(s) %s: bandwidth set to %g", const.tolist(), H_MIN)
        if warnings is not None:
            warnings.extend(int(j) for j in const)
    h = np.clip(h, H_MIN, H_MAX)
    h[const] = H_MIN
    return Bandwidths.from_values(h)


def _bic_penalty(active, bandwidths, n):
    h = bandwidths.per_covariate
    return float(sum(math.log(n * h[j]) / (n * h[j]) for j in active))


def bic_score(sample, f, bandwidths=None, active=None):
    """log((1/2n) sum (Y - fhat(X))^2) + sum_{j active} log(n h_j) / (n h_j).

    A zero residual sum returns ``-inf``.
    """
    bw = bandwidths or f.bandwidths
    act = f.active_set if active is None else active
    resid = sample.y - f.predict(sample.x)
    rss = float(resid @ resid) / (2.0 * sample.n)
    if rss <= 0.0:
        log.warning("zero residual sum of squares: BIC degenerate")
        return -math.inf
    return math.log(rss) + _bic_penalty(act, bw, sample.n)


def _argmin_larger(scores):
    """Index of the minimum; ties resolved toward the larger index."""
    best = None
    for i, s in enumerate(scores):
        if s is None or (isinstance(s, float) and math.isnan(s)):
            continue
        if best is None or s <= scores[best]:
            best = i
    return best


def select_lambda(sample, bandwidths, grid=None, cfg=None, *, design=None, kernel=BaselineKernel.EPANECHNIKOV,
                  local_linear=True, warm_start=True, return_scores=False):
    """Fit every lambda in ``grid`` and keep the BIC minimizer (ties -> larger lambda).

    Fits run from the largest lambda down, each warm-started from the
    previous solution.  Returns ``(lambda, fit)`` or, with
    ``return_scores=True``, ``(lambda, fit, scores)`` where ``scores`` lines up
    with ``grid.values`` (``None`` for failed fits).
    """
    cfg = cfg or FitConfig()
    grid = grid or LambdaGrid.for_response(sample.y)
    if design is None:
        design = build_design(sample, bandwidths, EvalGrid.uniform(cfg.grid_size), kernel, local_linear,
                              ridge_floor=cfg.ridge_floor)
    scores = [None] * len(grid)
    fits = [None] * len(grid)
    prev = None
    for i in reversed(range(len(grid))):
        lam = grid.values[i]
        try:
            f = fit_design(design, cfg.with_lambda(lam), init=prev.components if (warm_start and prev) else None)
        except SBFError as exc:
            log.warning("fit at lambda=%g failed: %s", lam, exc)
            continue
        fits[i] = f
        scores[i] = bic_score(sample, f)
        prev = f
    best = _argmin_larger(scores)
    if best is None:
        raise SBFError("every lambda in the grid failed to fit")
    out = (float(grid.values[best]), fits[best])
    return out + (scores,) if return_scores else out


def select_lambda_pair(mset, tl_cfg, grid1=None, grid2=None, *, cache_step1=True, return_scores=False):
    """Two-dimensional BIC grid search over (lambda1, lambda2) for the transfer estimator.

    The step-1 pooled fit depends only on lambda1 and is computed once per
    lambda1 when ``cache_step1`` is set.  Ties go to the larger lambda2, then
    the larger lambda1.
    """
    from .transfer import debias_fit, center_to_target, pooled_design, pooled_fit_design, target_design, TLFit, combine

    target = mset.target
    grid1 = grid1 or LambdaGrid.for_response(np.concatenate([target.y] + [a.y for a in mset.auxiliaries]), 10)
    grid2 = grid2 or LambdaGrid.for_response(target.y, 10)
    pdes = pooled_design(mset, tl_cfg)
    tdes = target_design(mset, tl_cfg)
    n0 = target.n
    bw0 = tl_cfg.bw_target

    scores = np.full((len(grid1), len(grid2)), np.nan)
    best = None
    best_key = None
    best_fit = None
    cache = {}
    prev_pooled = None
    for a in reversed(range(len(grid1))):
        lam1 = float(grid1.values[a])
        if cache_step1:
            if a not in cache:
                cache[a] = pooled_fit_design(pdes, tl_cfg.inner.with_lambda(lam1),
                                             init=prev_pooled.components if prev_pooled else None)
            pooled = cache[a]
            prev_pooled = pooled
        offset = None
        prev = None
        for b in reversed(range(len(grid2))):
            lam2 = float(grid2.values[b])
            if not cache_step1:
                pooled = pooled_fit_design(pdes, tl_cfg.inner.with_lambda(lam1),
                                           init=prev_pooled.components if prev_pooled else None)
                if b == 0:
                    prev_pooled = pooled
            if offset is None or not cache_step1:
                offset = center_to_target(pooled, tdes)
            try:
                corr = debias_fit(tdes, offset, tl_cfg.inner.with_lambda(lam2),
                                  init=prev.components if prev else None)
            except SBFError as exc:
                log.warning("debias fit at (%g, %g) failed: %s", lam1, lam2, exc)
                continue
            prev = corr
            tl = combine(pooled, offset, corr, target)
            score = bic_score(target, tl.final, bandwidths=bw0)
            scores[a, b] = score
            key = (score, -b, -a)
            if best_key is None or key < best_key:
                best_key = key
                best = (lam1, lam2)
                best_fit = TLFit(pooled=pooled, correction=corr, final=tl.final, offset=offset)
    if best is None:
        raise SBFError("every (lambda1, lambda2) pair failed to fit")
    out = (best[0], best[1], best_fit)
    return out + (scores,) if return_scores else out
