import json

import numpy as np
import pytest

from conftest import simple_prior
from hierflow.engine import McmcConfig, run_chain
from hierflow.errors import DataError
from hierflow.trace_io import config_hash, load_manifest, load_trace, save_trace


def test_round_trip_bit_exact(tmp_path, small_data):
    tr = run_chain(small_data, simple_prior(), McmcConfig(burn_in=5, production=6, seed=1))
    save_trace(tr, tmp_path, config={"a": 1}, extra={"note": "x"})
    back = load_trace(tmp_path)
    for name in ("theta", "sigma_theta", "psi", "nu", "mu", "sigma", "pi", "Z", "iterations",
                 "log_posterior", "log_likelihood", "predictive"):
        np.testing.assert_array_equal(getattr(back, name), getattr(tr, name), err_msg=name)
    assert back.Z.dtype == bool and back.nu.dtype.kind == "i"
    assert len(back.soft_counts) == len(tr.soft_counts) == 3
    for a, b in zip(back.soft_counts, tr.soft_counts):
        np.testing.assert_array_equal(a, b)
    man = load_manifest(tmp_path)
    assert man["config_hash"] == config_hash({"a": 1}) and man["note"] == "x"
    assert man["shape"] == {"draws": 6, "J": 3, "K": 2, "d": 2}


def test_config_hash_is_order_free():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_truncated_trace_rejected(tmp_path, small_data):
    tr = run_chain(small_data, simple_prior(), McmcConfig(burn_in=2, production=3, seed=1))
    save_trace(tr, tmp_path)
    lines = (tmp_path / "theta.csv").read_text().splitlines()
    (tmp_path / "theta.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DataError, match="theta.csv"):
        load_trace(tmp_path)
    with pytest.raises(DataError, match="manifest"):
        load_trace(tmp_path / "missing")
    json.loads((tmp_path / "manifest.json").read_text())
