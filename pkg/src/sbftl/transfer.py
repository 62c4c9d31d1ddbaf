"""Two-stage transfer learning for sparse additive regression.

Step 1 fits a penalized aggregated estimator on the auxiliary samples (and by
default the target too) with pooled bandwidths.  Step 2 recenters each pooled
component to satisfy the target sample's constraint.  Step 3 fits a penalized
correction on the target sample with the centered pooled fit as a fixed
offset.  Step 4 adds the two.

:func:`detect_sources` screens candidate auxiliary samples by comparing
split-sample target-only fits with two-population pooled fits.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, InsufficientSampleError
from .flasso import AdditiveFit, FitConfig, FitDiagnostics, fit_design
from .kernels import BaselineKernel, Bandwidths, EvalGrid
from .smoother import ComponentCurve, Sample, build_design, build_pooled_design, pi00_constant

__all__ = [
    "MultiSampleSet",
    "TLConfig",
    "TLFit",
    "SourceScore",
    "pooled_fit",
    "center_to_target",
    "debias_fit",
    "tl_fit",
    "detect_sources",
]

log = logging.getLogger(__name__)


@dataclass(eq=False)
class MultiSampleSet:
    """A target sample plus labeled auxiliary samples."""

    target: Sample
    auxiliaries: list = field(default_factory=list)
    labels: list = None

    def __post_init__(self):
        if isinstance(self.auxiliaries, dict):
            self.labels = list(self.auxiliaries)
            self.auxiliaries = list(self.auxiliaries.values())
        self.auxiliaries = list(self.auxiliaries)
        if self.labels is None:
            self.labels = [str(i + 1) for i in range(len(self.auxiliaries))]
        if len(self.labels) != len(self.auxiliaries):
            raise DimensionError("one label per auxiliary sample is required")
        d = self.target.d
        for lab, s in zip(self.labels, self.auxiliaries):
            if s.d != d:
                raise DimensionError(f"auxiliary {lab!r} has {s.d} covariates, target has {d}")

    @property
    def d(self):
        return self.target.d

    @property
    def weights(self):
        """w_a = n_a / n_A over the auxiliaries."""
        n = np.array([s.n for s in self.auxiliaries], dtype=float)
        return n / n.sum() if n.size else n

    def pool(self, include_target=True):
        """(samples, weights) entering the step-1 loss; weights sum to one."""
        samples = ([self.target] if include_target else []) + self.auxiliaries
        if not samples:
            raise ConfigError("no samples to pool: give auxiliaries or include the target")
        n = np.array([s.n for s in samples], dtype=float)
        return samples, n / n.sum()

    def pooled_x(self, include_target=True):
        return np.vstack([s.x for s in self.pool(include_target)[0]])


@dataclass
class TLConfig:
    lambda1: float
    lambda2: float
    bw_pooled: Bandwidths
    bw_target: Bandwidths
    include_target_in_pool: bool = True
    inner: FitConfig = field(default_factory=FitConfig)
    kernel: BaselineKernel = BaselineKernel.EPANECHNIKOV

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("penalties must be nonnegative")
        if self.bw_pooled.d != self.bw_target.d:
            raise DimensionError("pooled and target bandwidth vectors differ in length")

    def grid(self):
        return EvalGrid.uniform(self.inner.grid_size)


@dataclass(eq=False)
class TLFit:
    pooled: AdditiveFit
    correction: AdditiveFit
    final: AdditiveFit
    offset: list = None

    def predict(self, x):
        return self.final.predict(x)


@dataclass
class SourceScore:
    label: str
    score: float
    accepted: bool
    split_scores: list = field(default_factory=list)


def pooled_design(mset, cfg, grid=None):
    samples, weights = mset.pool(cfg.include_target_in_pool)
    return build_pooled_design(samples, weights, cfg.bw_pooled, grid or cfg.grid(), cfg.kernel,
                               ridge_floor=cfg.inner.ridge_floor)


def target_design(mset, cfg, grid=None):
    return build_design(mset.target, cfg.bw_target, grid or cfg.grid(), cfg.kernel,
                        ridge_floor=cfg.inner.ridge_floor)


def pooled_fit_design(design, inner, init=None):
    return fit_design(design, inner, init=init)


def pooled_fit(mset, cfg):
    """Step 1: penalized fit of the weighted pooled loss with bandwidths bw_pooled."""
    return pooled_fit_design(pooled_design(mset, cfg), cfg.inner.with_lambda(cfg.lambda1))


def center_to_target(pooled, target_des):
    """Step 2: subtract the target-constraint constant from every pooled component.

    The derivative enters through the target design's bandwidths, the same
    representation the step-3 loss uses.
    """
    out = []
    mass = target_des.grid.weights @ target_des.m00.T
    for j, c in enumerate(pooled.components):
        if c.is_zero():
            out.append(c.copy())
            continue
        shift = pi00_constant(c, target_des, j) / mass[j]
        out.append(ComponentCurve(c.value - shift, c.deriv.copy()))
    return out


def debias_fit(target_des, centered_offset, inner, init=None):
    """Step 3: penalized correction on the target with the centered pooled fit as offset."""
    return fit_design(target_des, inner, offset=centered_offset, init=init)


def combine(pooled, offset, correction, target):
    """Step 4: final components = centered pooled + correction; intercept = target mean."""
    comps = [o + c for o, c in zip(offset, correction.components)]
    active = tuple(j for j, c in enumerate(comps) if not c.is_zero())
    final = AdditiveFit(
        intercept=float(target.y.mean()),
        components=comps,
        active_set=active,
        bandwidths=correction.bandwidths,
        grid=correction.grid,
        diagnostics=FitDiagnostics(
            outer_iters=pooled.diagnostics.outer_iters + correction.diagnostics.outer_iters,
            objective_trace=list(correction.diagnostics.objective_trace),
            converged=pooled.diagnostics.converged and correction.diagnostics.converged,
        ),
        local_linear=True,
        kernel=correction.kernel,
        lam=correction.lam,
    )
    return TLFit(pooled=pooled, correction=correction, final=final, offset=offset)


def tl_fit(mset, cfg):
    """Steps 1-4 with fixed (lambda1, lambda2)."""
    pooled = pooled_fit(mset, cfg)
    tdes = target_design(mset, cfg)
    offset = center_to_target(pooled, tdes)
    corr = debias_fit(tdes, offset, cfg.inner.with_lambda(cfg.lambda2))
    return combine(pooled, offset, corr, mset.target)


# ---------------------------------------------------------------------------
# transferable source detection

def _halves(n, rng):
    perm = rng.permutation(n)
    m = n // 2
    return perm[:m], perm[m:2 * m]


def _bic_fit(sample, design, inner, grid_size):
    from .model_select import LambdaGrid, select_lambda

    grid = LambdaGrid.for_response(sample.y, grid_size)
    _, f = select_lambda(sample, design.bandwidths, grid, inner, design=design)
    return f


def detect_sources(target, candidates, cfg=None, c_sd=1.0, n_splits=2, seed=0, lambda_grid_size=10,
                   lambdas=None):
    """Score each candidate auxiliary sample; accept when score < c_sd / 4.

    For each of ``n_splits`` random halvings of the target and r = 1, 2, a
    target-only fit (bandwidths ~ n0^{-1/5}) and a pooled fit of the same
    target half with the full candidate (bandwidths ~ (n0 + 2 n_b)^{-1/5})
    are built on the complement of half r; the score is the mean absolute
    difference of the two fits over that half, averaged over r and splits.

    ``candidates`` is a dict label -> Sample (or a list).  Penalties are
    chosen by BIC per fit unless ``lambdas = (lambda0, lambda1)`` is given.
    """
    from .model_select import C_ROT, rot_bandwidth

    if isinstance(candidates, dict):
        items = list(candidates.items())
    else:
        items = [(str(i + 1), s) for i, s in enumerate(candidates)]
    if c_sd <= 0:
        raise ConfigError("c_sd must be positive")
    for lab, s in items:
        if s.n < 10:
            raise InsufficientSampleError(f"candidate {lab!r} has only {s.n} observations")
        if s.d != target.d:
            raise DimensionError(f"candidate {lab!r} has {s.d} covariates, target has {target.d}")
    if target.n < 20:
        raise InsufficientSampleError("source detection needs at least 20 target observations")
    inner = cfg.inner if cfg is not None else FitConfig()
    kernel = cfg.kernel if cfg is not None else BaselineKernel.EPANECHNIKOV
    grid = EvalGrid.uniform(inner.grid_size)
    n0 = target.n

    def fitted(sample, design, which):
        if lambdas is None:
            return _bic_fit(sample, design, inner, lambda_grid_size)
        return fit_design(design, inner.with_lambda(lambdas[which]))

    per_label = {lab: [] for lab, _ in items}
    for rep in range(int(n_splits)):
        rng = np.random.default_rng([int(seed), rep])
        halves = _halves(n0, rng)
        for r in (0, 1):
            # the estimators for split r are built on the complementary half
            train = target.subset(halves[1 - r])
            bw0 = rot_bandwidth(train, n_eff=n0)
            des0 = build_design(train, bw0, grid, kernel, ridge_floor=inner.ridge_floor)
            f0 = fitted(train, des0, 0)
            pred0 = f0.predict(train.x)
            for lab, cand in items:
                x_pool = np.vstack([train.x, cand.x])
                sd = x_pool.std(axis=0, ddof=1)
                h = np.clip(C_ROT * sd * float(n0 + 2 * cand.n) ** (-0.2), 0.01, 0.5)
                bwp = Bandwidths.from_values(h)
                w = np.array([train.n, cand.n], dtype=float)
                pdes = build_pooled_design([train, cand], w / w.sum(), bwp, grid, kernel,
                                           ridge_floor=inner.ridge_floor)
                fb = fitted(train, pdes, 1)
                diff = np.abs(fb.predict(train.x) - pred0)
                per_label[lab].append(2.0 / n0 * float(diff.sum()))

    out = []
    for lab, _ in items:
        vals = per_label[lab]
        # mean over r (the 1/2 sum) and over repetitions
        score = float(np.mean(vals))
        out.append(SourceScore(label=lab, score=score, accepted=score < c_sd / 4.0, split_scores=vals))
    return out
