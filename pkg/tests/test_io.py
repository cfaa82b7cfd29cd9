import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hierflow.errors import ConfigError, DataError, HeaderMismatchError
from hierflow.io import (
    ScalingTransform,
    apply_scaling,
    fit_scaling,
    load_config,
    load_samples,
    load_truth,
    parse_config,
    read_matrix,
    save_samples,
    save_truth,
    write_matrix,
)
from hierflow.model import Dataset
from hierflow.synthetic import desk_spec, generate_synthetic


def _csv(path, header, rows):
    path.write_text(",".join(header) + "\n" + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return path


def test_load_two_files(tmp_path):
    rng = np.random.default_rng(0)
    a = _csv(tmp_path / "s1.csv", ["CD4", "CD8", "CD3"], rng.normal(size=(5, 3)).tolist())
    b = _csv(tmp_path / "s2.csv", ["CD4", "CD8", "CD3"], rng.normal(size=(7, 3)).tolist())
    ds = load_samples([a, b])
    assert ds.J == 2 and ds.d == 3 and ds.sizes.tolist() == [5, 7]
    assert ds.sample_ids == ("s1", "s2") or list(ds.sample_ids) == ["s1", "s2"]
    assert list(ds.marker_names) == ["CD4", "CD8", "CD3"]


def test_header_mismatch_names_both(tmp_path):
    a = _csv(tmp_path / "a.csv", ["CD4", "CD8"], [[1, 2]])
    b = _csv(tmp_path / "b.csv", ["CD4", "CD3"], [[1, 2]])
    with pytest.raises(HeaderMismatchError) as ei:
        load_samples([a, b])
    msg = str(ei.value)
    assert "CD8" in msg and "CD3" in msg and "b.csv" in msg
    assert ei.value.to_dict()["expected"] == ["CD4", "CD8"]


@pytest.mark.parametrize("content, fragment", [
    ("", "empty"),
    ("a,b\n", "no data rows"),
    ("a,b\n1,2\n3,x\n", "row 2, column 1 (b)"),
    ("a,b\n1,2\nnan,2\n", "row 2, column 0 (a): non-finite"),
    ("a,b\n1,2,3\n", "3 fields"),
])
def test_malformed_files(tmp_path, content, fragment):
    p = tmp_path / "bad.csv"
    p.write_text(content)
    with pytest.raises(DataError, match=fragment.replace("(", r"\(").replace(")", r"\)")):
        load_samples([p])


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_samples([tmp_path / "nope.csv"])


@given(st.integers(0, 10**6))
def test_round_trip_bit_exact(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    Y = [rng.normal(scale=10.0 ** rng.integers(-8, 8), size=(int(rng.integers(1, 6)), 2)) for _ in range(2)]
    ds = Dataset(Y, marker_names=["m1", "m2"], sample_ids=["x", "y"])
    out = tmp_path_factory.mktemp("rt")
    back = load_samples(save_samples(ds, out))
    for u, v in zip(ds.samples, back.samples):
        np.testing.assert_array_equal(u, v)


def test_scaling_on_grid():
    ds = Dataset([np.column_stack([np.arange(101.0), 2 * np.arange(101.0) - 7])], marker_names=["a", "b"])
    tr = fit_scaling(ds)
    np.testing.assert_allclose(tr.q01, [1.0, -5.0])
    np.testing.assert_allclose(tr.q99, [99.0, 191.0])
    scaled = apply_scaling(ds, tr)
    q = np.percentile(scaled.pooled(), [1, 99], axis=0)
    np.testing.assert_allclose(q, [[0, 0], [1, 1]], atol=1e-12)
    with pytest.raises(DataError, match="already scaled"):
        apply_scaling(scaled, tr)
    np.testing.assert_allclose(tr.invert(tr.apply(ds.pooled())), ds.pooled(), atol=1e-12)
    assert ScalingTransform.from_dict(tr.to_dict()).q99.tolist() == tr.q99.tolist()


@given(st.integers(0, 10**6))
def test_scaling_is_affine(seed):
    rng = np.random.default_rng(seed)
    ds = Dataset([rng.normal(size=(120, 2))], marker_names=["a", "b"])
    tr = fit_scaling(ds)
    x, y = rng.normal(size=(2, 2))
    lam = rng.uniform()
    np.testing.assert_allclose(tr.apply(lam * x + (1 - lam) * y), lam * tr.apply(x) + (1 - lam) * tr.apply(y),
                               atol=1e-10)


def test_scaling_errors():
    with pytest.raises(DataError, match="at least 100"):
        fit_scaling(Dataset([np.ones((50, 1))], marker_names=["a"]))
    Y = np.column_stack([np.arange(200.0), np.full(200, 4.0)])
    with pytest.raises(DataError, match="marker b is constant"):
        fit_scaling(Dataset([Y], marker_names=["a", "b"]))


def _sample(tmp_path):
    return _csv(tmp_path / "s.csv", ["a", "b"], np.random.default_rng(1).normal(size=(20, 2)).tolist())


def test_config_parse(tmp_path):
    _sample(tmp_path)
    cfg = parse_config({"data": {"samples": ["s.csv"]}, "prior": {"K": 2}, "mcmc": {"burn_in": 3}}, tmp_path)
    assert cfg.K == 2 and cfg.mcmc.burn_in == 3 and cfg.samples == [tmp_path / "s.csv"]
    assert cfg.output == tmp_path / "hierflow-out"
    prior = cfg.build_prior(cfg.load_data())
    assert prior.K == 2 and prior.d == 2


@pytest.mark.parametrize("raw, fragment", [
    ({"data": {"samples": ["s.csv"]}, "prior": {"K": 2}, "extra": {}}, "unknown key"),
    ({"data": {"samples": ["s.csv"]}, "prior": {"K": 2, "bogus": 1}}, "bogus"),
    ({"data": {"samples": ["s.csv"]}, "prior": {"K": 2}, "mcmc": {"sweeps": 1}}, "sweeps"),
    ({"data": {"samples": ["missing.csv"]}, "prior": {"K": 2}}, "not found"),
    ({"data": {"samples": ["s.csv"]}, "prior": {}}, "K is required"),
    ({"data": {"samples": ["s.csv"]}, "prior": {"K": 2, "preset": "nope"}}, "unknown prior preset"),
    ({"data": {"samples": ["s.csv"]}, "prior": {"K": 2, "preset": "inline", "t": [[0, 0]]}}, "t has 1 rows"),
    ({"data": {"samples": ["s.csv"]}, "prior": {"K": 2}, "init": {"theta": [[0, 0]]}}, "expected K = 2"),
    ({"data": {"samples": ["s.csv"]}, "prior": {"K": 2}, "mcmc": {"burn_in": -1}}, "burn_in"),
])
def test_config_errors(tmp_path, raw, fragment):
    _sample(tmp_path)
    with pytest.raises(ConfigError, match=fragment):
        parse_config(raw, tmp_path)


def test_load_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[data\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_truth_and_matrix_round_trip(tmp_path):
    _, truth = generate_synthetic(desk_spec(), 3)
    save_truth(truth, tmp_path)
    back = load_truth(tmp_path)
    np.testing.assert_array_equal(back.mu, truth.mu)
    np.testing.assert_array_equal(back.Z, truth.Z)
    for a, b in zip(back.x, truth.x):
        np.testing.assert_array_equal(a, b)
    X = np.random.default_rng(0).random((3, 2))
    write_matrix(tmp_path / "m.csv", X, ["r1", "r2", "r3"], ["c1", "c2"])
    Xb, ids, cols = read_matrix(tmp_path / "m.csv")
    np.testing.assert_array_equal(X, Xb)
    assert list(ids) == ["r1", "r2", "r3"] and list(cols) == ["c1", "c2"]
