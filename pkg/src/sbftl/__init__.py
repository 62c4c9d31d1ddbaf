"""Sparse additive regression by penalized local-linear smooth backfitting,
with a two-stage transfer-learning estimator."""

from .errors import (ConfigError, DataError, DegenerateMarginalError, DimensionError, DomainError,
                     IllConditionedError, InsufficientSampleError, InvalidBandwidthError, SBFError)
from .flasso import AdditiveFit, FitConfig, fit, fit_design
from .kernels import BaselineKernel, Bandwidths, EvalGrid, normalized_weight, weight_field
from .model_select import LambdaGrid, bic_score, rot_bandwidth, select_lambda, select_lambda_pair
from .smoother import ComponentCurve, Sample, build_design, build_pooled_design
from .transfer import MultiSampleSet, TLConfig, detect_sources, tl_fit

__version__ = "0.1.0"
