import numpy as np
import pytest

from hierflow.distributions import RngStream
from hierflow.engine import prior_draw_state
from hierflow.errors import ConfigError
from hierflow.gir import (
    default_prior,
    functional_names,
    functionals,
    geweke_z,
    getting_it_right,
    regenerate_data,
)


def test_functional_count_and_order():
    prior = default_prior()
    names = functional_names(prior.K, prior.d)
    assert len(names) >= 20 and len(set(names)) == len(names)
    st = prior_draw_state(prior, 3, [20] * 3, RngStream(0))
    f = functionals(st)
    assert f.shape == (len(names),) and np.all(np.isfinite(f))
    assert f[names.index("Z_total")] == st.Z.sum()


def test_regenerate_data_follows_assignments():
    prior = default_prior()
    st = prior_draw_state(prior, 2, [500, 500], RngStream(1), rj_enabled=False)
    ds = regenerate_data(st, RngStream(2))
    for j in range(2):
        for k in range(prior.K):
            sel = st.x[j] == k + 1
            if sel.sum() > 100:
                assert np.all(np.abs(ds.samples[j][sel].mean(0) - st.mu[j, k]) < 5 * np.sqrt(
                    np.diag(st.sigma[j, k]) / sel.sum()))


def test_geweke_z_basic():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4000, 2))
    b = rng.normal(size=(4000, 2))
    z, ea, eb = geweke_z(a, b)
    assert np.all(np.abs(z) < 4)
    assert np.all(ea > 3000)
    z, _, _ = geweke_z(a + np.array([0.0, 0.5]), b)
    assert abs(z[1]) > 10
    c = np.ones((100, 1))
    assert geweke_z(c, c)[0][0] == 0.0


def test_short_run_reports_every_functional():
    rep = getting_it_right(iterations=200, rng=4)
    assert len(rep.z) == len(rep.names) >= 20
    assert np.all(np.isfinite(rep.z))
    d = rep.to_dict()
    assert len(d["functionals"]) == len(rep.names)
    assert d["settings"]["J"] == 3


def test_argument_errors():
    with pytest.raises(ConfigError):
        getting_it_right(iterations=5)
    with pytest.raises(ConfigError):
        getting_it_right(iterations=20, mutation="other")
