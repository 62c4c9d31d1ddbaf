"""NW / LL / TL estimators with rule-of-thumb bandwidths and BIC penalties."""

import numpy as np

from .errors import ConfigError
from .flasso import FitConfig
from .kernels import Bandwidths
from .model_select import C_ROT, LambdaGrid, rot_bandwidth, select_lambda, select_lambda_pair
from .transfer import MultiSampleSet, TLConfig

__all__ = ["fit_method", "target_only", "transfer_bic"]


def _inner(options):
    return FitConfig(grid_size=options.get("grid_size", 101),
                     max_outer_iters=options.get("max_outer_iters", 200),
                     tol=options.get("tol", 1e-6))


def target_only(target, local_linear=True, **options):
    """BIC-tuned target-only fit (local linear, or Nadaraya-Watson)."""
    bw = rot_bandwidth(target)
    grid = LambdaGrid.for_response(target.y, options.get("lambda_grid_size", 20))
    _, f = select_lambda(target, bw, grid, _inner(options), local_linear=local_linear)
    return f


def pooled_bandwidth(mset, include_target=True):
    x = mset.pooled_x(include_target)
    sd = x.std(axis=0, ddof=1)
    return Bandwidths.from_values(np.clip(C_ROT * sd * float(x.shape[0]) ** (-0.2), 0.01, 0.5))


def transfer_bic(target, auxiliaries, include_target=True, **options):
    """Transfer estimator with (lambda1, lambda2) from the 2-D BIC grid."""
    mset = MultiSampleSet(target, list(auxiliaries))
    cfg = TLConfig(lambda1=0.0, lambda2=0.0, bw_pooled=pooled_bandwidth(mset, include_target),
                   bw_target=rot_bandwidth(target), include_target_in_pool=include_target,
                   inner=_inner(options))
    size = options.get("pair_grid_size", 10)
    pooled_y = np.concatenate([s.y for s in mset.pool(include_target)[0]])
    g1 = LambdaGrid.for_response(pooled_y, size)
    g2 = LambdaGrid.for_response(target.y, size)
    _, _, tl = select_lambda_pair(mset, cfg, g1, g2)
    return tl


def fit_method(method, target, auxiliaries, options=None):
    options = dict(options or {})
    method = method.upper()
    if method == "LL":
        return target_only(target, True, **options)
    if method == "NW":
        return target_only(target, False, **options)
    if method == "TL":
        return transfer_bic(target, auxiliaries, **options)
    raise ConfigError(f"unknown method {method!r}")
