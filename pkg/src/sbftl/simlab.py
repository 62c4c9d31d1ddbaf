"""Simulation populations, MISE evaluation and the replication harness.

Covariates: X_j = (U_j + t V) / (1 + t) with U_j, V iid Uniform[0, 1].
Auxiliary covariates mix in the average with an independent copy,
(X_j + X'_j) / 2, on rows where W > 1 - delta_p (one W per row).

Responses use twelve active target components; auxiliary populations 1 and 2
perturb components 5-8 and 9-12 respectively and switch on component 13.
"""

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import ConfigError
from .smoother import Sample

__all__ = [
    "ScenarioConfig",
    "TrueModel",
    "covariate_density",
    "gen_target",
    "gen_auxiliary",
    "gen_scaled_source",
    "true_regression",
    "mise",
    "run_experiment",
    "study_cells",
    "CSV_HEADER",
]

log = logging.getLogger(__name__)

CSV_HEADER = ["cell", "method", "rep", "seed", "mise", "mc_se", "runtime_s", "status"]
N_ACTIVE = 12


@dataclass
class ScenarioConfig:
    n0: int = 100
    n_aux: list = field(default_factory=lambda: [200, 200])
    d: int = 200
    t: float = 0.1
    delta_p: float = 0.1
    delta_f: float = 0.5
    noise_sd: float = 1.0
    seed: int = 0
    replications: int = 1

    def __post_init__(self):
        self.n_aux = [int(v) for v in self.n_aux]
        if self.d < 13:
            raise ConfigError("d must be at least 13")
        if self.n0 < 20:
            raise ConfigError("n0 must be at least 20")
        if self.t < 0:
            raise ConfigError("t must be nonnegative")
        if not 0.0 <= self.delta_p <= 1.0:
            raise ConfigError("delta_p must lie in [0, 1]")
        if self.delta_f < 0:
            raise ConfigError("delta_f must be nonnegative")
        if self.noise_sd <= 0:
            raise ConfigError("noise_sd must be positive")
        if any(n < 2 for n in self.n_aux):
            raise ConfigError("auxiliary sample sizes must be at least 2")

    def label(self):
        return (f"n0={self.n0},d={self.d},t={self.t:g},dp={self.delta_p:g},"
                f"df={self.delta_f:g}")


# ---------------------------------------------------------------------------
# component functions

def _base(k, u):
    """Uncentered target components 1..4."""
    u = np.asarray(u, dtype=float)
    if k == 1:
        return u
    if k == 2:
        return (2.0 * u - 1.0) ** 2
    s = np.sin(2.0 * np.pi * u)
    if k == 3:
        return s / (2.0 - s)
    if k == 4:
        c = np.cos(2.0 * np.pi * u)
        # both sin(2 pi u) terms (weights 1/10 and 2/10) are kept on purpose
        return 0.1 * s + 0.2 * s + 0.3 * s**2 + 0.4 * c**3 + 0.5 * s**3
    raise ValueError(k)


def covariate_density(x, t):
    """Density of (U + t V) / (1 + t) on [0, 1] (trapezoidal; uniform at t=0)."""
    x = np.asarray(x, dtype=float)
    if t == 0:
        return np.where((x >= 0) & (x <= 1), 1.0, 0.0)
    s = (1.0 + t) * x
    overlap = np.clip(np.minimum(s, 1.0) - np.maximum(s - t, 0.0), 0.0, None)
    return (1.0 + t) * overlap / t


@lru_cache(maxsize=64)
def centering_constants(t, resolution=1_000_000):
    """E f_k(X) for the four base shapes under the target covariate law.

    Midpoint rule on ``resolution`` cells, split at the density's kinks.
    """
    t = float(t)
    kinks = sorted({0.0, 1.0, *(v for v in (1.0 / (1.0 + t), t / (1.0 + t)) if 0.0 < v < 1.0)})
    consts = np.zeros(4)
    for a, b in zip(kinks[:-1], kinks[1:]):
        m = max(int(resolution * (b - a)), 10)
        u = a + (np.arange(m) + 0.5) * (b - a) / m
        wts = covariate_density(u, t) * (b - a) / m
        for k in range(4):
            consts[k] += float(wts @ _base(k + 1, u))
    return tuple(consts)


class TrueModel:
    """Active component functions of the target and auxiliary populations."""

    def __init__(self, t, delta_f=0.0, resolution=1_000_000):
        self.t = float(t)
        self.delta_f = float(delta_f)
        self.centers = np.array(centering_constants(self.t, resolution))

    def f0(self, j, u):
        """Target component j (1-based); zero for j > 12."""
        if j < 1:
            raise ValueError(j)
        if j > N_ACTIVE:
            return np.zeros_like(np.asarray(u, dtype=float))
        k = (j - 1) % 4 + 1
        mult = (1.0, 1.5, 2.0)[(j - 1) // 4]
        return mult * (_base(k, u) - self.centers[k - 1])

    def component(self, pop, j, u):
        """Component j of population ``pop`` (0 = target, 1, 2 = auxiliaries)."""
        df = self.delta_f
        if pop == 0:
            return self.f0(j, u)
        if pop == 1:
            if j in (5, 6, 7):
                return self.f0(j, u) + df * self.f0(j - 3, u)
            if j == 8:
                return self.f0(j, u) + df * self.f0(j - 7, u)
            if j == 13:
                return df * sum(self.component(1, k, u) for k in (5, 6, 7, 8))
            return self.f0(j, u)
        if pop == 2:
            if j in (9, 10, 11):
                return self.f0(j, u) + df * self.f0(j - 7, u)
            if j == 12:
                return self.f0(j, u) + df * self.f0(j - 11, u)
            if j == 13:
                return df * sum(self.component(2, k, u) for k in (9, 10, 11, 12))
            return self.f0(j, u)
        raise ConfigError(f"population must be 0, 1 or 2, got {pop!r}")

    def active(self, pop):
        return tuple(range(1, N_ACTIVE + 1)) if pop == 0 else tuple(range(1, N_ACTIVE + 2))

    def regression(self, pop, x):
        """Sum of the active components at the rows of x (n x d, or a d-vector)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xx = x[None, :] if single else x
        out = np.zeros(xx.shape[0])
        for j in self.active(pop):
            if j <= xx.shape[1]:
                out += self.component(pop, j, xx[:, j - 1])
        return float(out[0]) if single else out


def true_regression(model, pop, x):
    return model.regression(pop, x)


# ---------------------------------------------------------------------------
# generators

def target_covariates(n, d, t, rng):
    u = rng.uniform(size=(n, d))
    v = rng.uniform(size=(n, 1))
    return (u + t * v) / (1.0 + t)


def gen_target(cfg, rng, model=None):
    model = model or TrueModel(cfg.t, cfg.delta_f)
    x = target_covariates(cfg.n0, cfg.d, cfg.t, rng)
    y = model.regression(0, x) + cfg.noise_sd * rng.standard_normal(cfg.n0)
    return Sample(x, y)


def gen_auxiliary(cfg, pop, rng, model=None, n=None):
    """Auxiliary sample for population 1 or 2 from fresh target-law draws."""
    if pop not in (1, 2):
        raise ConfigError(f"auxiliary population must be 1 or 2, got {pop!r}")
    model = model or TrueModel(cfg.t, cfg.delta_f)
    n = cfg.n_aux[pop - 1] if n is None else n
    x0 = target_covariates(n, cfg.d, cfg.t, rng)
    x0p = target_covariates(n, cfg.d, cfg.t, rng)
    w = rng.uniform(size=(n, 1))
    x = np.where(w <= 1.0 - cfg.delta_p, x0, 0.5 * (x0 + x0p))
    y = model.regression(pop, x) + cfg.noise_sd * rng.standard_normal(n)
    return Sample(x, y)


def gen_scaled_source(cfg, rng, n, scale, model=None):
    """Candidate source with regression (1 + scale) * f_0 under the target covariate law.

    ``scale = 0`` is an exact copy of the target population; in general
    E|f_b - f_0| = |scale| * E|f_0(X)|, which gives a separated source of any size.
    """
    model = model or TrueModel(cfg.t, cfg.delta_f)
    x = target_covariates(n, cfg.d, cfg.t, rng)
    y = (1.0 + scale) * model.regression(0, x) + cfg.noise_sd * rng.standard_normal(n)
    return Sample(x, y)


# ---------------------------------------------------------------------------
# evaluation

def mise(estimate, model, cfg, rng, mc_size=100_000, pop=0, chunk=20_000):
    """Monte-Carlo MISE under the target covariate law; returns (value, std. error).

    ``estimate`` is anything with ``predict`` on (m, d) arrays.  The truth
    has mean zero (all active target components are centered).
    """
    if mc_size < 1000:
        raise ConfigError("mc_size must be at least 1000")
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < mc_size:
        m = min(chunk, mc_size - done)
        x = target_covariates(m, cfg.d, cfg.t, rng)
        err = (estimate.predict(x) - model.regression(pop, x)) ** 2
        total += float(err.sum())
        total_sq += float((err * err).sum())
        done += m
    mean = total / mc_size
    var = max(total_sq / mc_size - mean * mean, 0.0)
    return mean, float(np.sqrt(var / mc_size))


def study_cells(n0, seed=0, replications=50, n_aux=(200, 200)):
    """The 32 (d, t, delta_p, delta_f) cells of one target sample size."""
    cells = []
    for d in (200, 400):
        for t in (0.1, 1.0):
            for df in (0.5, 1.0, 2.0, 3.0):
                for dp in (0.1, 0.9):
                    cells.append(ScenarioConfig(n0=n0, n_aux=list(n_aux), d=d, t=t, delta_p=dp,
                                                delta_f=df, seed=seed, replications=replications))
    return cells


def replication_seed(cfg, cell_index, rep):
    """Deterministic 63-bit sub-seed for one (cell, replication)."""
    ss = np.random.SeedSequence([int(cfg.seed) & 0xFFFFFFFFFFFFFFFF, int(cell_index), int(rep)])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def _run_unit(args):
    from .methods import fit_method

    cell_index, cfg, rep, methods, options = args
    seed = replication_seed(cfg, cell_index, rep)
    rng = np.random.default_rng(seed)
    model = TrueModel(cfg.t, cfg.delta_f)
    target = gen_target(cfg, rng, model)
    auxes = [gen_auxiliary(cfg, pop, rng, model) for pop in (1, 2)[: len(cfg.n_aux)]]
    rows = []
    for method in methods:
        start = time.perf_counter()
        mc_rng = np.random.default_rng([seed, 1 + ("NW", "LL", "TL").index(method)])
        try:
            est = fit_method(method, target, auxes, options)
            value, se = mise(est, model, cfg, mc_rng, mc_size=options.get("mc_size", 100_000))
            status = "ok"
        except Exception as exc:  # harness keeps going; failure recorded in the row
            log.warning("cell %d rep %d method %s failed: %s", cell_index, rep, method, exc)
            value, se, status = float("nan"), float("nan"), f"error:{type(exc).__name__}"
        runtime = time.perf_counter() - start if options.get("timing", False) else 0.0
        rows.append([cell_index, method, rep, seed, value, se, runtime, status])
    return rows


def _format_row(row):
    cell, method, rep, seed, value, se, runtime, status = row
    return [str(cell), method, str(rep), str(seed), repr(float(value)), repr(float(se)),
            f"{runtime:.3f}", status]


def run_experiment(cells, methods=("NW", "LL", "TL"), out=None, threads=1, **options):
    """Run every (cell, replication, method) and write the replication table.

    ``out`` is a text stream (or path) receiving CSV rows with header
    ``cell,method,rep,seed,mise,mc_se,runtime_s,status``.  Returns the rows.
    Options: ``mc_size``, ``timing`` (record wall time, else 0), ``lambda_grid_size``,
    ``pair_grid_size``, ``grid_size``.
    """
    methods = [m.upper() for m in methods]
    bad = [m for m in methods if m not in ("NW", "LL", "TL")]
    if bad:
        raise ConfigError(f"unknown method(s): {', '.join(bad)}")
    units = [(ci, cfg, rep, methods, options) for ci, cfg in enumerate(cells) for rep in range(cfg.replications)]
    if threads > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_run_unit, units))
    else:
        results = [_run_unit(u) for u in units]
    rows = [r for unit_rows in results for r in unit_rows]
    if out is not None:
        close = False
        if isinstance(out, (str, bytes)) or hasattr(out, "__fspath__"):
            out = open(out, "w", newline="")
            close = True
        try:
            w = csv.writer(out, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in rows:
                w.writerow(_format_row(r))
        finally:
            if close:
                out.close()
    return rows


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(_format_row(r))
    return buf.getvalue()


def scenario_to_dict(cfg):
    return asdict(cfg)


def scenario_from_dict(data, **overrides):
    allowed = set(ScenarioConfig.__dataclass_fields__)
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
    return replace(ScenarioConfig(**data), **overrides)
