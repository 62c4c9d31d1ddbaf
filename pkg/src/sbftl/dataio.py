"""CSV ingestion, the screening/scaling/rescaling pipeline and fit serialization.

The preprocessing order is screen -> scale to [0, 1] -> rescale the response,
which is what the ``screen`` subcommand runs.
"""

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .flasso import AdditiveFit, FitDiagnostics
from .kernels import BaselineKernel, Bandwidths, EvalGrid
from .smoother import ComponentCurve, Sample

__all__ = [
    "RawTable",
    "ScaleInfo",
    "FitArtifact",
    "SCHEMA_VERSION",
    "load_csv",
    "write_csv",
    "screen_features",
    "scale_unit_interval",
    "normalize_response",
    "file_digest",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(eq=False)
class RawTable:
    """Numeric covariate matrix plus one response column."""

    columns: list
    x: np.ndarray
    y: np.ndarray
    response: str = "y"
    dropped_count: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.columns = [str(c) for c in self.columns]
        if self.x.ndim != 2 or self.x.shape[1] != len(self.columns):
            raise DataError(f"{len(self.columns)} column names for a matrix of shape {self.x.shape}")
        if self.x.shape[0] != self.y.shape[0]:
            raise DataError(f"{self.x.shape[0]} covariate rows but {self.y.shape[0]} responses")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    def select(self, idx):
        idx = list(idx)
        return replace(self, columns=[self.columns[i] for i in idx], x=self.x[:, idx])

    def to_sample(self):
        return Sample(self.x, self.y)


def _as_float(token):
    try:
        v = float(token)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(path, response):
    """Read a numeric CSV with a header row.

    Rows holding a non-numeric, missing or non-finite cell (or the wrong
    number of fields) are dropped and counted in ``dropped_count``.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    if all(_as_float(c) is not None for c in header):
        raise DataError(f"{path}: first row is numeric; a header row naming the columns is required")
    if response not in header:
        raise DataError(f"{path}: response column {response!r} not found")
    values = []
    dropped = 0
    for r in rows[1:]:
        parsed = [_as_float(c.strip()) for c in r] if len(r) == len(header) else [None]
        if any(v is None for v in parsed):
            dropped += 1
            continue
        values.append(parsed)
    if dropped:
        log.warning("%s: dropped %d malformed or incomplete row(s)", path, dropped)
    if not values:
        raise DataError(f"{path}: no complete numeric rows")
    arr = np.array(values, dtype=float)
    k = header.index(response)
    keep = [i for i in range(len(header)) if i != k]
    return RawTable([header[i] for i in keep], arr[:, keep], arr[:, k], response, dropped)


def write_csv(table, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.columns + [table.response])
        for xi, yi in zip(table.x, table.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


def _top(scores, k):
    # descending by score, ties by original column order
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def screen_features(table, top_var=3000, top_cor=450):
    """Keep the ``top_var`` highest-variance columns, then the ``top_cor`` of those
    most correlated (in absolute value) with the response.

    Selected columns keep their original relative order.  When the table has
    fewer columns than requested, everything available is kept with a warning.
    """
    if top_var < 1 or top_cor < 1:
        raise DataError("top_var and top_cor must be positive")
    if table.p < top_var or top_var < top_cor:
        log.warning("screening asks for top_var=%d, top_cor=%d from %d columns; keeping what is available",
                    top_var, top_cor, table.p)
    var = table.x.var(axis=0, ddof=1) if table.n > 1 else np.zeros(table.p)
    first = _top(var, min(top_var, table.p))
    sub = table.x[:, first]
    xc = sub - sub.mean(axis=0)
    yc = table.y - table.y.mean()
    denom = np.sqrt((xc * xc).sum(axis=0) * float(yc @ yc))
    with np.errstate(invalid="ignore", divide="ignore"):
        cor = np.where(denom > 0, np.abs(xc.T @ yc) / np.where(denom > 0, denom, 1.0), 0.0)
    second = _top(cor, min(top_cor, first.size))
    return table.select(first[second])


@dataclass
class ScaleInfo:
    minimum: np.ndarray
    maximum: np.ndarray
    constant: np.ndarray = None
    clipped_count: int = 0

    def to_dict(self):
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist(),
                "constant": [int(j) for j in np.flatnonzero(self.constant)]}


def scale_unit_interval(table, bounds=None):
    """Map every column to [0, 1] by (x - min) / (max - min).

    ``bounds`` reuses a previous :class:`ScaleInfo` (e.g. for held-out data);
    values falling outside are clipped and counted in ``clipped_count``.
    Constant columns become 0.5 and are flagged in ``constant``.
    """
    x = table.x
    if bounds is None:
        lo, hi = x.min(axis=0), x.max(axis=0)
    else:
        lo, hi = np.asarray(bounds.minimum, float), np.asarray(bounds.maximum, float)
    span = hi - lo
    const = span <= 0
    if np.any(const):
        log.warning("constant column(s) %s mapped to 0.5", [table.columns[j] for j in np.flatnonzero(const)])
    z = np.where(const, 0.5, (x - lo) / np.where(const, 1.0, span))
    outside = (z < 0.0) | (z > 1.0)
    clipped = int(outside.sum())
    if clipped:
        log.warning("%d value(s) outside the stored range were clipped to [0, 1]", clipped)
        z = np.clip(z, 0.0, 1.0)
    info = ScaleInfo(lo, hi, const, clipped)
    return replace(table, x=z), info


def normalize_response(table, target_sd=2.5):
    """Rescale the response so its sample standard deviation is ``target_sd``."""
    sd = float(np.std(table.y, ddof=1)) if table.n > 1 else 0.0
    if not sd > 0:
        raise DataError("response has zero variance and cannot be rescaled")
    if target_sd <= 0:
        raise DataError("target_sd must be positive")
    return replace(table, y=table.y * (target_sd / sd))


def file_digest(*paths):
    """sha256 over the bytes of the given files, in order."""
    h = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 16), b""):
                h.update(chunk)
    return h.hexdigest()


@dataclass(eq=False)
class FitArtifact:
    """JSON-serializable snapshot of an :class:`~sbftl.flasso.AdditiveFit`."""

    intercept: float
    grid_points: list
    values: list
    derivs: list
    active_set: list
    bandwidths: list
    reference_bandwidth: float
    config: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        G = len(self.grid_points)
        if len(self.values) != len(self.derivs) or len(self.values) != len(self.bandwidths):
            raise DataError("fit artifact: component and bandwidth counts disagree")
        for v, dv in zip(self.values, self.derivs):
            if len(v) != G or len(dv) != G:
                raise DataError("fit artifact: component arrays do not match the grid length")

    @classmethod
    def from_fit(cls, fit, config=None, seed=None, input_digest=None):
        return cls(
            intercept=float(fit.intercept),
            grid_points=fit.grid.points.tolist(),
            values=[c.value.tolist() for c in fit.components],
            derivs=[c.deriv.tolist() for c in fit.components],
            active_set=[int(j) for j in fit.active_set],
            bandwidths=fit.bandwidths.per_covariate.tolist(),
            reference_bandwidth=float(fit.bandwidths.reference),
            config={"lambda": float(fit.lam), "local_linear": bool(fit.local_linear),
                    "kernel": fit.kernel.value, "outer_iters": fit.diagnostics.outer_iters,
                    "converged": bool(fit.diagnostics.converged), **(config or {})},
            provenance={"seed": seed, "input_digest": input_digest},
        )

    def to_fit(self):
        pts = np.asarray(self.grid_points, dtype=float)
        grid = EvalGrid.uniform(pts.size)
        if np.max(np.abs(grid.points - pts)) > 1e-12:
            raise DataError("fit artifact grid is not an equally spaced grid on [0, 1]")
        comps = [ComponentCurve(np.asarray(v, float), np.asarray(dv, float))
                 for v, dv in zip(self.values, self.derivs)]
        cfg = self.config
        return AdditiveFit(
            intercept=float(self.intercept),
            components=comps,
            active_set=tuple(self.active_set),
            bandwidths=Bandwidths.from_values(self.bandwidths, self.reference_bandwidth),
            grid=grid,
            diagnostics=FitDiagnostics(outer_iters=int(cfg.get("outer_iters", 0)),
                                       converged=bool(cfg.get("converged", False))),
            local_linear=bool(cfg.get("local_linear", True)),
            kernel=BaselineKernel.parse(cfg.get("kernel", "epanechnikov")),
            lam=float(cfg.get("lambda", 0.0)),
        )

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "intercept": self.intercept,
            "grid_points": self.grid_points,
            "components": [{"value": v, "deriv": dv} for v, dv in zip(self.values, self.derivs)],
            "active_set": self.active_set,
            "bandwidths": self.bandwidths,
            "reference_bandwidth": self.reference_bandwidth,
            "config": self.config,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data):
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise DataError(f"unsupported fit artifact schema version {version!r}")
        try:
            return cls(
                intercept=float(data["intercept"]),
                grid_points=list(data["grid_points"]),
                values=[c["value"] for c in data["components"]],
                derivs=[c["deriv"] for c in data["components"]],
                active_set=list(data["active_set"]),
                bandwidths=list(data["bandwidths"]),
                reference_bandwidth=float(data["reference_bandwidth"]),
                config=dict(data.get("config", {})),
                provenance=dict(data.get("provenance", {})),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed fit artifact: {exc}") from exc

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())
