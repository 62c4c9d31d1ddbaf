import numpy as np
import pytest

from conftest import additive_sample, wls_local_linear
from sbftl.errors import DegenerateMarginalError, DimensionError, DomainError, IllConditionedError
from sbftl.kernels import Bandwidths, EvalGrid, weight_field
from sbftl.smoother import (ComponentCurve, Sample, build_design, build_pooled_design, center_constraint,
                            cross_term, marginal_ll, pi00_constant, sample_scores, tuple_norm)


def test_sample_validation():
    with pytest.raises(DimensionError):
        Sample(np.zeros((3, 2)), np.zeros(4))
    with pytest.raises(DimensionError):
        Sample(np.zeros((1, 2)), np.zeros(1))
    with pytest.raises(DomainError) as exc:
        Sample(np.array([[0.1, 0.2], [0.3, -0.1]]), np.zeros(2))
    assert exc.value.index == (1, 1)
    with pytest.raises(DomainError):
        Sample(np.array([[0.1], [np.nan]]), np.zeros(2))
    s = Sample(np.linspace(0, 1, 5), np.arange(5.0))
    assert s.x.shape == (5, 1) and s.d == 1
    assert s.subset([0, 2]).n == 2


def test_curve_vector_round_trip(rng):
    c = ComponentCurve(rng.normal(size=11), rng.normal(size=11))
    back = ComponentCurve.from_vector(c.vector(0.2), 0.2)
    assert np.allclose(back.value, c.value) and np.allclose(back.deriv, c.deriv)
    assert ComponentCurve.zeros(4).is_zero()
    assert np.allclose((2 * c - c).value, c.value)
    with pytest.raises(DimensionError):
        ComponentCurve(np.zeros(3), np.zeros(4))


@pytest.mark.parametrize("h", [0.08, 0.2])
def test_marginal_ll_matches_weighted_least_squares(rng, h):
    s = additive_sample(200, 2, rng)
    grid = EvalGrid.uniform(101)
    des = build_design(s, Bandwidths.constant(h, 2), grid, ridge_floor=0.0)
    wf = weight_field(s.x[:, 0], grid, h)
    a, b = wls_local_linear(s.x[:, 0], s.y - s.y.mean(), np.full(s.n, 1 / s.n), grid, h, wf.dense())
    m = marginal_ll(des, 0)
    assert np.max(np.abs(m.value - a)) < 1e-9
    assert np.max(np.abs(h * m.deriv - b)) < 1e-9


def test_marginal_ll_reproduces_linear_response(rng):
    x = rng.uniform(size=(300, 1))
    s = Sample(x, x[:, 0])
    m = marginal_ll(build_design(s, Bandwidths.constant(0.1, 1), EvalGrid.uniform(101), ridge_floor=0.0), 0)
    # local linear is exact on linear functions, boundary included
    assert np.max(np.abs(m.value - (np.linspace(0, 1, 101) - x.mean()))) < 1e-10
    assert np.max(np.abs(m.deriv - 1.0)) < 1e-8


def test_nadaraya_watson_mode(small_sample, grid101, bw4):
    des = build_design(small_sample, bw4, grid101, local_linear=False)
    m = marginal_ll(des, 0)
    assert not np.any(m.deriv)
    expected = des.numer[0, :, 0] / des.m00[0]
    assert np.allclose(m.value, expected, atol=1e-8)


def _dense_mjk(des, j, k):
    """M_jk(x, u) = sum_i w_i Z_j(x) Z_k(u)^T K_j(x, X_ij) K_k(u, X_ik), shape (G, G, 2, 2)."""
    fj, fk = des.fields[j], des.fields[k]
    zj = np.stack([fj.k0.toarray(), fj.k1.toarray()])  # (2, G, n)
    zk = np.stack([fk.k0.toarray(), fk.k1.toarray()])
    return np.einsum("agi,bhi,i->ghab", zj, zk, des.obs_weight)


def test_cross_term_matches_dense_operator(rng):
    s = additive_sample(40, 3, rng)
    grid = EvalGrid.uniform(41)
    des = build_design(s, Bandwidths.from_values([0.2, 0.25, 0.3]), grid)
    other = ComponentCurve(np.sin(3 * grid.points), np.cos(3 * grid.points))
    mjk = _dense_mjk(des, 0, 2)
    vec = des.vector(2, other)
    expected = np.einsum("ghab,hb,h->ga", mjk, vec, grid.weights)
    assert np.max(np.abs(cross_term(des, 0, 2, other) - expected)) < 1e-12
    with pytest.raises(ValueError):
        cross_term(des, 1, 1, other)


def test_mjj_and_pj(small_sample, grid101, bw4):
    des = build_design(small_sample, bw4, grid101)
    m = des.mjj(1)
    assert m.shape == (101, 2, 2)
    assert np.allclose(m[:, 0, 1], m[:, 1, 0])
    assert np.allclose(des.pj(1)[:, 0], m[:, 0, 0])
    # p_j integrates to one: every column of the kernel has unit mass
    assert grid101.integrate(des.pj(1)[:, 0]) == pytest.approx(1.0, abs=1e-12)


def test_scores_and_norm(small_sample, grid101, bw4):
    des = build_design(small_sample, bw4, grid101)
    c = ComponentCurve(grid101.points ** 2, 2 * grid101.points)
    s = sample_scores(des, 1, c)
    dense = des.fields[1]
    vec = des.vector(1, c)
    expected = (dense.k0.toarray() * (grid101.weights * vec[:, 0])[:, None]).sum(0) + \
               (dense.k1.toarray() * (grid101.weights * vec[:, 1])[:, None]).sum(0)
    assert np.allclose(s, expected, atol=1e-13)
    q = des.quad_form(1, vec)
    assert tuple_norm(c, des, 1) == pytest.approx(np.sqrt(q))


def test_center_constraint(small_sample, grid101, bw4):
    des = build_design(small_sample, bw4, grid101)
    c = ComponentCurve(np.exp(grid101.points), np.exp(grid101.points))
    centered = center_constraint(c, des, 2)
    assert abs(pi00_constant(centered, des, 2)) < 1e-12
    assert np.allclose(centered.deriv, c.deriv)
    assert np.allclose(np.diff(centered.value), np.diff(c.value))


def test_center_constraint_degenerate(small_sample, grid101, bw4):
    des = build_design(small_sample, bw4, grid101)
    des.m00[0] = 0.0
    with pytest.raises(DegenerateMarginalError):
        center_constraint(ComponentCurve.zeros(101), des, 0)


def test_pooled_design_is_weighted_sum(rng, grid101):
    a = additive_sample(60, 3, rng)
    b = additive_sample(90, 3, rng)
    bw = Bandwidths.constant(0.2, 3)
    w = np.array([0.3, 0.7])
    pooled = build_pooled_design([a, b], w, bw, grid101)
    da, db = build_design(a, bw, grid101), build_design(b, bw, grid101)
    assert np.allclose(pooled.m00, w[0] * da.m00 + w[1] * db.m00)
    assert np.allclose(pooled.m11, w[0] * da.m11 + w[1] * db.m11)
    assert np.allclose(pooled.numer, w[0] * da.numer + w[1] * db.numer)
    assert pooled.intercept == pytest.approx(w[0] * a.y.mean() + w[1] * b.y.mean())
    assert pooled.n == 150
    with pytest.raises(DimensionError):
        build_pooled_design([a], w, bw, grid101)


def test_singular_points_use_pseudo_inverse(rng, grid101):
    # no data in [0.4, 0.6]: with h = 0.05 the local design is empty there
    x = np.concatenate([rng.uniform(0, 0.4, 40), rng.uniform(0.6, 1.0, 40)])[:, None]
    s = Sample(x, np.sin(4 * x[:, 0]))
    des = build_design(s, Bandwidths.constant(0.05, 1), grid101)
    assert des.singular[0].any()
    out = des.solve(0, des.numer[0])
    assert np.all(np.isfinite(out))
    with pytest.raises(IllConditionedError) as exc:
        marginal_ll(des, 0)
    assert exc.value.covariate == 0
    assert 0.4 <= exc.value.grid_point <= 0.6


def test_bandwidth_dimension_mismatch(small_sample, grid101):
    with pytest.raises(DimensionError):
        build_design(small_sample, Bandwidths.constant(0.2, 3), grid101)
