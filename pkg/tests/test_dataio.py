import json

import numpy as np
import pytest

from sbftl.dataio import (FitArtifact, RawTable, file_digest, load_csv, normalize_response, scale_unit_interval,
                          screen_features, write_csv)
from sbftl.errors import DataError
from sbftl.flasso import FitConfig, fit
from sbftl.kernels import Bandwidths


def _write(path, text):
    path.write_text(text)
    return str(path)


def test_load_small_csv(tmp_path):
    p = _write(tmp_path / "a.csv", "x1,y,x2\n0.1,1.0,0.5\n0.2,2.0,0.6\n0.3,3.0,0.7\n")
    t = load_csv(p, "y")
    assert t.columns == ["x1", "x2"]
    assert np.array_equal(t.x, [[0.1, 0.5], [0.2, 0.6], [0.3, 0.7]])
    assert np.array_equal(t.y, [1.0, 2.0, 3.0])
    assert t.dropped_count == 0 and t.n == 3 and t.p == 2


def test_load_requires_header(tmp_path):
    with pytest.raises(DataError, match="header"):
        load_csv(_write(tmp_path / "a.csv", "0.1,1.0\n0.2,2.0\n"), "y")
    with pytest.raises(DataError, match="not found"):
        load_csv(_write(tmp_path / "b.csv", "x,z\n0.1,1.0\n"), "y")
    with pytest.raises(DataError):
        load_csv(_write(tmp_path / "c.csv", ""), "y")


def test_malformed_rows_are_dropped(tmp_path):
    body = "x,y\n0.1,1\n0.2,oops\n0.3,3\n0.4,4\n0.5,5\n"
    t = load_csv(_write(tmp_path / "a.csv", body), "y")
    assert t.n == 4 and t.dropped_count == 1
    t = load_csv(_write(tmp_path / "b.csv", "x,y\n0.1,1\n0.2,NA\n0.3\n,\n"), "y")
    assert t.n == 1 and t.dropped_count == 2
    with pytest.raises(DataError):
        load_csv(_write(tmp_path / "c.csv", "x,y\nNA,1\n"), "y")


def test_write_round_trip(tmp_path, rng):
    t = RawTable(["a", "b"], rng.normal(size=(5, 2)), rng.normal(size=5), "y")
    write_csv(t, tmp_path / "out.csv")
    back = load_csv(tmp_path / "out.csv", "y")
    assert np.array_equal(back.x, t.x) and np.array_equal(back.y, t.y)


def test_screen_keeps_higher_variance():
    t = RawTable(["lo", "hi"], np.array([[0.0, 0.0], [0.1, 1.0], [0.2, 3.0]]), np.array([1.0, 2.0, 3.0]), "y")
    assert screen_features(t, top_var=1, top_cor=1).columns == ["hi"]


def test_screen_planted_order(rng):
    n = 200
    y = rng.standard_normal(n)
    cols, names = [], []
    # variances 5 > 4 > ... and correlations planted in a known order
    for k, (scale, rho) in enumerate([(5, 0.1), (4, 0.9), (3, 0.5), (2, 0.95), (1, 0.99)]):
        z = rho * y + np.sqrt(1 - rho ** 2) * rng.standard_normal(n)
        cols.append(scale * z)
        names.append(f"c{k}")
    t = RawTable(names, np.column_stack(cols), y, "y")
    out = screen_features(t, top_var=4, top_cor=2)
    assert out.columns == ["c1", "c3"]
    assert screen_features(out, top_var=4, top_cor=2).columns == out.columns


def test_screen_ties_and_shortfall():
    x = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])
    t = RawTable(["a", "b", "c"], x, np.array([0.0, 1.0, 2.0]), "y")
    assert screen_features(t, top_var=2, top_cor=2).columns == ["a", "b"]
    assert screen_features(t, top_var=10, top_cor=5).columns == ["a", "b", "c"]
    with pytest.raises(DataError):
        screen_features(t, top_var=0)


def test_scale_unit_interval():
    t = RawTable(["a", "b"], np.array([[1.0, 7.0], [2.0, 7.0], [3.0, 7.0]]), np.zeros(3), "y")
    out, info = scale_unit_interval(t)
    assert np.allclose(out.x[:, 0], [0, 0.5, 1])
    assert np.all(out.x[:, 1] == 0.5)
    assert info.constant.tolist() == [False, True]
    held = RawTable(["a", "b"], np.array([[0.0, 7.0], [4.0, 7.0], [2.0, 7.0]]), np.zeros(3), "y")
    out2, info2 = scale_unit_interval(held, bounds=info)
    assert info2.clipped_count == 2
    assert out2.x.min() >= 0 and out2.x.max() <= 1
    assert json.dumps(info.to_dict())


def test_normalize_response(rng):
    t = RawTable(["a"], rng.uniform(size=(50, 1)), 3 * rng.standard_normal(50), "y")
    out = normalize_response(t)
    assert np.std(out.y, ddof=1) == pytest.approx(2.5, abs=1e-12)
    same = normalize_response(t, float(np.std(t.y, ddof=1)))
    assert np.allclose(same.y, t.y, atol=1e-12)
    r0 = np.corrcoef(t.x[:, 0], t.y)[0, 1]
    assert np.corrcoef(out.x[:, 0], out.y)[0, 1] == pytest.approx(r0, abs=1e-12)
    with pytest.raises(DataError):
        normalize_response(RawTable(["a"], np.zeros((3, 1)), np.ones(3), "y"))


def test_fit_artifact_round_trip(tmp_path, small_sample, bw4, rng):
    f = fit(small_sample, bw4, FitConfig(lam=0.03))
    art = FitArtifact.from_fit(f, seed=3, input_digest="abc")
    art.save(tmp_path / "fit.json")
    back = FitArtifact.load(tmp_path / "fit.json").to_fit()
    x = rng.uniform(size=(100, 4))
    assert np.max(np.abs(back.predict(x) - f.predict(x))) <= 1e-12
    assert back.active_set == f.active_set
    assert back.bandwidths.reference == pytest.approx(f.bandwidths.reference)
    data = json.loads((tmp_path / "fit.json").read_text())
    assert data["schema_version"] == 1 and data["provenance"] == {"seed": 3, "input_digest": "abc"}


def test_fit_artifact_rejects_bad_input(small_sample, bw4):
    f = fit(small_sample, bw4, FitConfig(lam=0.03))
    data = FitArtifact.from_fit(f).to_dict()
    with pytest.raises(DataError, match="schema"):
        FitArtifact.from_dict({**data, "schema_version": 99})
    with pytest.raises(DataError):
        FitArtifact.from_dict({k: v for k, v in data.items() if k != "intercept"})
    bad = dict(data, components=[{"value": [0.0], "deriv": [0.0]}] * 4)
    with pytest.raises(DataError):
        FitArtifact.from_dict(bad)


def test_file_digest(tmp_path):
    a = _write(tmp_path / "a", "hello")
    b = _write(tmp_path / "b", "world")
    assert file_digest(a) != file_digest(b)
    assert file_digest(a, b) == file_digest(a, b)
    assert len(file_digest(a)) == 64
