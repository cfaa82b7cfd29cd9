"""Joint-distribution check of the sampler ("getting it right").

Two chains target the same joint distribution of parameters and data:

* the forward chain draws every parameter, the assignments and the data
  independently from the model;
* the successive-conditional chain alternates one full sampler sweep
  (parameters given data) with regenerating the data given the parameters
  and assignments.

If the sampler leaves the posterior invariant, every scalar functional of
the parameters has the same distribution in both chains. Means are compared
with z-scores whose standard errors use effective sample sizes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import effective_sample_size
from .distributions import RngStream
from .engine import GibbsSampler, McmcConfig, prior_draw_state
from .errors import ConfigError
from .model import ChainState, Dataset, PriorSpec

FORWARD_STREAM = 2**32 + 3
REGEN_STREAM = 2**32 + 4
START_STREAM = 2**32 + 5


def default_prior(d: int = 2, K: int = 2) -> PriorSpec:
    """Small proper prior with light enough tails for stable z-scores."""
    n_theta = d + 6.0
    n_psi = d + 4.0
    return PriorSpec(t=np.zeros((K, d)), S=np.eye(d), Q=0.5 * (n_theta - d - 1.0) * np.eye(d),
                     H=np.eye(d) / n_psi, lam=0.3, n_theta=n_theta, n_psi=n_psi, a=1.0, c_s=1.0,
                     mu0=np.zeros(d), sigma0=4.0 * np.eye(d))


def functional_names(K: int, d: int) -> list:
    names = []
    for k in range(K):
        names += [f"theta[{k},{i}]" for i in range(d)]
        names += [f"theta_sq[{k},{i}]" for i in range(d)]
        names += [f"log_sigma_theta[{k},{i},{i}]" for i in range(d)]
        names += [f"log_psi[{k},{i},{i}]" for i in range(d)]
        names += [f"nu[{k}]"]
        names += [f"mu[0,{k},{i}]" for i in range(d)]
        names += [f"log_sigma[0,{k},{i},{i}]" for i in range(d)]
        names += [f"Z[0,{k}]"]
    names += ["Z_total", "pi_outlier_mean", "outlier_fraction"]
    return names


def functionals(state: ChainState) -> np.ndarray:
    """Scalar test functions in the order of :func:`functional_names`."""
    K, d = state.K, state.d
    out = []
    for k in range(K):
        out += list(state.theta[k])
        out += list(state.theta[k] ** 2)
        out += list(np.log(np.diag(state.sigma_theta[k])))
        out += list(np.log(np.diag(state.psi[k])))
        out.append(float(state.nu[k]))
        out += list(state.mu[0, k])
        out += list(np.log(np.diag(state.sigma[0, k])))
        out.append(float(state.Z[0, k]))
    x = np.concatenate(state.x)
    out += [float(state.Z.sum()), float(state.pi[:, 0].mean()), float(np.mean(x == 0))]
    return np.asarray(out, dtype=np.float64)


def regenerate_data(state: ChainState, rng: RngStream, chol=None) -> Dataset:
    """Draw cells given assignments and component parameters.

    ``chol`` may supply the covariance factors; by default they are computed.
    """
    L = np.linalg.cholesky(state.sigma) if chol is None else chol
    L0 = np.linalg.cholesky(state.sigma0)
    samples = []
    for j, x in enumerate(state.x):
        z = rng.normal((x.size, state.d))
        y = np.empty_like(z)
        out = x == 0
        y[out] = state.mu0 + z[out] @ L0.T
        for k in range(state.K):
            m = x == k + 1
            y[m] = state.mu[j, k] + z[m] @ L[j, k].T
        samples.append(y)
    return Dataset(samples)


@dataclass
class GewekeReport:
    """Per-functional chain means, effective sample sizes and z-scores."""

    names: list
    z: np.ndarray
    mean_forward: np.ndarray
    mean_successive: np.ndarray
    ess_forward: np.ndarray
    ess_successive: np.ndarray
    iterations: int
    elapsed: float
    mutation: str | None = None
    settings: dict = field(default_factory=dict)

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    def passed(self, threshold: float = 4.0) -> bool:
        return bool(np.all(np.isfinite(self.z)) and self.max_abs_z < threshold)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "elapsed_s": self.elapsed,
            "mutation": self.mutation,
            "settings": self.settings,
            "max_abs_z": self.max_abs_z,
            "functionals": [
                {"name": n, "z": float(z), "mean_forward": float(a), "mean_successive": float(b),
                 "ess_forward": float(ea), "ess_successive": float(eb)}
                for n, z, a, b, ea, eb in zip(self.names, self.z, self.mean_forward, self.mean_successive,
                                              self.ess_forward, self.ess_successive)
            ],
        }


def geweke_z(a: np.ndarray, b: np.ndarray):
    """Column-wise z-scores of ``mean(a) - mean(b)`` with ESS-based standard errors.

    Returns ``(z, ess_a, ess_b)``. Two constant, equal columns give ``z = 0``.
    """
    ess_a = np.array([effective_sample_size(c) for c in a.T])
    ess_b = np.array([effective_sample_size(c) for c in b.T])
    se2 = a.var(axis=0, ddof=1) / ess_a + b.var(axis=0, ddof=1) / ess_b
    diff = a.mean(axis=0) - b.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se2 > 0, diff / np.sqrt(se2), np.where(diff == 0, 0.0, np.inf))
    return z, ess_a, ess_b


def getting_it_right(prior: PriorSpec | None = None, J: int = 3, n: int = 20, iterations: int = 10_000,
                     rng: int = 0, mutation: str | None = None, rj_enabled: bool = True) -> GewekeReport:
    """Run both chains for ``iterations`` steps and compare their functionals.

    ``rng`` is an integer seed; the forward chain, the starting point, the
    data regeneration and the sampler each get their own stream.
    ``mutation`` is passed to :class:`hierflow.engine.GibbsSampler`.
    """
    if iterations < 10:
        raise ConfigError("getting_it_right needs at least 10 iterations")
    prior = prior or default_prior()
    seed = int(rng)
    sizes = np.full(J, int(n))
    t0 = time.perf_counter()

    fwd_rng = RngStream(seed, FORWARD_STREAM)
    F = np.empty((iterations, len(functional_names(prior.K, prior.d))))
    for i in range(iterations):
        F[i] = functionals(prior_draw_state(prior, J, sizes, fwd_rng, rj_enabled))

    state = prior_draw_state(prior, J, sizes, RngStream(seed, START_STREAM), rj_enabled)
    regen = RngStream(seed, REGEN_STREAM)
    cfg = McmcConfig(burn_in=0, production=1, seed=seed, rj_enabled=rj_enabled,
                     predictive_pooled=False, record_soft_assignments=False)
    sampler = GibbsSampler(regenerate_data(state, regen), prior, cfg, init=state, mutation=mutation)
    G = np.empty_like(F)
    for i in range(iterations):
        sampler.sweep()
        G[i] = functionals(sampler.state)
        sampler.set_data(regenerate_data(sampler.state, regen, sampler.sigma_chol))

    z, ea, eb = geweke_z(F, G)
    return GewekeReport(names=functional_names(prior.K, prior.d), z=z, mean_forward=F.mean(0),
                        mean_successive=G.mean(0), ess_forward=ea, ess_successive=eb, iterations=iterations,
                        elapsed=time.perf_counter() - t0, mutation=mutation,
                        settings={"J": J, "n": int(n), "K": prior.K, "d": prior.d, "seed": seed,
                                  "rj_enabled": rj_enabled})


__all__ = ["default_prior", "functional_names", "functionals", "regenerate_data", "GewekeReport",
           "geweke_z", "getting_it_right"]
