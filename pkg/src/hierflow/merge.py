"""Post-hoc merging of latent clusters into super-clusters.

Latent clusters are indexed ``0..K-1``. Soft weights are per-sample arrays of
shape ``(n_j, K + 1)`` whose column 0 is the outlier component and column
``k + 1`` is latent cluster ``k``, matching the layout of mixture weights.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ._linalg import cholesky, logdet_from_chol
from .dip import dip_test
from .distributions import RngStream
from .errors import ConfigError, DataError, NotPositiveDefiniteError
from .model import Dataset


@dataclass(frozen=True)
class GaussianSummary:
    """Moment summary of a (super-)cluster; ``weight`` is its share of all cells."""

    mean: np.ndarray
    cov: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.asarray(self.cov, dtype=np.float64).reshape(mean.size, mean.size)
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "weight", float(self.weight))


@dataclass
class MergeConfig:
    """Thresholds and test settings for :func:`merge_clusters`.

    ``axes`` lists the coordinate axes used as dip-test projections (``None``
    means all of them) and ``fisher`` adds the discriminant coordinate.
    ``hard`` replaces soft weights by one-hot maximum-frequency labels.
    ``fisher_pooled`` weights the two covariances by cluster size in the
    discriminant direction instead of averaging them. Projections with more
    than ``max_dip_points`` weighted cells are tested on a weighted subsample
    of that size.
    """

    d1: float = 0.2
    d2: float = 1.0
    dip_alpha: float = 0.05
    dip_bootstrap: int = 1000
    axes: tuple | None = None
    fisher: bool = True
    hard: bool = False
    fisher_pooled: bool = False
    max_dip_points: int = 5000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.d1 <= self.d2:
            raise ConfigError("thresholds must satisfy 0 < d1 <= d2")
        if not 0 < self.dip_alpha < 1:
            raise ConfigError("dip_alpha must lie in (0, 1)")
        if self.dip_bootstrap < 1:
            raise ConfigError("dip_bootstrap must be positive")
        if self.max_dip_points < 4:
            raise ConfigError("max_dip_points must be at least 4")
        if self.axes is not None:
            self.axes = tuple(int(a) for a in self.axes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["axes"] = None if self.axes is None else list(self.axes)
        return out


@dataclass
class MergeStep:
    """One considered pair. ``criterion`` is ``"d1"`` or ``"dip"``."""

    pair: tuple
    distance: float
    criterion: str
    merged: bool
    dip_pvalues: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"pair": [list(p) for p in self.pair], "distance": self.distance, "criterion": self.criterion,
                "merged": self.merged, "dip_pvalues": self.dip_pvalues}


@dataclass
class MergeResult:
    """Partition of latent clusters plus the log that produced it.

    ``partition[k]`` is the super-cluster id of latent cluster ``k``; ids are
    ``0..M-1`` ordered by the smallest member. ``soft_weights[j]`` has shape
    ``(n_j, M + 1)`` with the outlier in column 0.
    """

    partition: np.ndarray
    merge_log: list
    soft_weights: list
    summaries: list

    @property
    def n_populations(self) -> int:
        return int(self.partition.max()) + 1 if self.partition.size else 0

    def members(self) -> list:
        return [np.flatnonzero(self.partition == m).tolist() for m in range(self.n_populations)]

    def to_dict(self) -> dict:
        return {"partition": self.partition.tolist(), "members": self.members(),
                "merge_log": [s.to_dict() for s in self.merge_log],
                "summaries": [{"mean": s.mean.tolist(), "cov": s.cov.tolist(), "weight": s.weight}
                              for s in self.summaries]}


# ---------------------------------------------------------------------------
# Distances and projections


def bhattacharyya(g1: GaussianSummary, g2: GaussianSummary) -> float:
    """Bhattacharyya distance between two Gaussians.

    ``(1/8) dm' Sbar^{-1} dm + (1/2) log(|Sbar| / sqrt(|S1||S2|))`` with
    ``Sbar`` the average covariance; all determinants via Cholesky.
    """
    L1 = cholesky(g1.cov, "first covariance")
    L2 = cholesky(g2.cov, "second covariance")
    Lb = cholesky(0.5 * (g1.cov + g2.cov), "average covariance")
    dm = g1.mean - g2.mean
    z = np.linalg.solve(Lb, dm)
    quad = float(z @ z)
    ld = float(logdet_from_chol(Lb) - 0.5 * (logdet_from_chol(L1) + logdet_from_chol(L2)))
    return 0.125 * quad + 0.5 * ld


def fisher_coordinate(g1: GaussianSummary, g2: GaussianSummary, pooled: bool = False) -> np.ndarray:
    """Unit vector along ``(S1 + S2)^{-1} (m1 - m2)``.

    With ``pooled`` the covariances are weighted by the summaries' weights.

    Raises
    ------
    ValueError
        If the means coincide and the direction is undefined.
    """
    dm = g1.mean - g2.mean
    if not np.any(dm != 0):
        raise ValueError("equal means leave the discriminant direction undefined")
    if pooled:
        tot = g1.weight + g2.weight
        if tot <= 0:
            raise ValueError("pooled discriminant needs positive weights")
        Sw = (g1.weight * g1.cov + g2.weight * g2.cov) / tot
    else:
        Sw = g1.cov + g2.cov
    L = cholesky(Sw, "within-cluster covariance")
    w = np.linalg.solve(L.T, np.linalg.solve(L, dm))
    return w / np.linalg.norm(w)


# ---------------------------------------------------------------------------
# Soft clusters


def soft_cluster_weights(trace, data: Dataset | None = None) -> list:
    """Per-cell assignment frequencies ``w_ijk`` over production sweeps.

    Returns one ``(n_j, K + 1)`` array per sample; every row sums to 1.
    """
    if trace.n_soft == 0 or not trace.soft_counts:
        raise DataError("trace holds no assignment frequencies; enable record_soft_assignments")
    w = [trace.soft_weights(j) for j in range(len(trace.soft_counts))]
    if data is not None:
        for j, (wj, n) in enumerate(zip(w, data.sizes)):
            if wj.shape[0] != n:
                raise DataError(f"sample {j}: {wj.shape[0]} weight rows for {n} cells")
    return w


def hard_weights(w: list) -> list:
    """One-hot rows at each cell's most frequent assignment."""
    out = []
    for wj in w:
        h = np.zeros_like(wj)
        h[np.arange(wj.shape[0]), np.argmax(wj, axis=1)] = 1.0
        out.append(h)
    return out


def _cluster_weights(w: list, members) -> np.ndarray:
    cols = np.asarray(sorted(members), dtype=np.intp) + 1
    return np.concatenate([wj[:, cols].sum(axis=1) for wj in w])


def gaussian_approx(members, w: list, data: Dataset) -> GaussianSummary:
    """Weighted pooled moments of all cells over the latent clusters in ``members``.

    ``weight`` is the summed soft weight divided by the total cell count.
    The covariance is the weighted second central moment (no small-sample
    correction), so hard weights give the population covariance of the
    assigned cells.
    """
    Y = data.pooled()
    v = _cluster_weights(w, members)
    tot = v.sum()
    if not tot > 0:
        raise DataError(f"clusters {sorted(members)} carry no weight")
    mean = v @ Y / tot
    D = Y - mean
    cov = (D * v[:, None]).T @ D / tot
    return GaussianSummary(mean=mean, cov=0.5 * (cov + cov.T), weight=tot / Y.shape[0])


# ---------------------------------------------------------------------------
# Greedy agglomeration


def _pair_stream(seed: int, a, b, K: int) -> RngStream:
    # a bitmask of both member sets identifies the pair independently of merge history
    key = sum(1 << int(k) for k in a) | (sum(1 << int(k) for k in b) << K)
    return RngStream(seed, key)


def _projection_pvalues(a, b, w, Y, config: MergeConfig, ga: GaussianSummary, gb: GaussianSummary) -> dict:
    K = w[0].shape[1] - 1
    v = _cluster_weights(w, a) + _cluster_weights(w, b)
    keep = v > 0
    Yk, vk = Y[keep], v[keep]
    rng = _pair_stream(config.seed, a, b, K)
    if Yk.shape[0] > config.max_dip_points:
        idx = rng.gen.choice(Yk.shape[0], config.max_dip_points, replace=False, p=vk / vk.sum())
        Yk, vk = Yk[np.sort(idx)], np.ones(config.max_dip_points)
    axes = range(Y.shape[1]) if config.axes is None else config.axes
    out = {}
    for ax in axes:
        out[f"axis{ax}"] = _dip_p(Yk[:, ax], vk, rng, config)
    if config.fisher:
        try:
            f = fisher_coordinate(ga, gb, pooled=config.fisher_pooled)
        except ValueError:
            f = None
        if f is not None:
            out["fisher"] = _dip_p(Yk @ f, vk, rng, config)
    return out


def _dip_p(xs, v, rng, config: MergeConfig) -> float:
    if np.count_nonzero(v) < 4:
        return 1.0
    return dip_test(xs, B=config.dip_bootstrap, rng=rng, weights=v)


def merge_clusters(summaries, w: list, data: Dataset, config: MergeConfig | None = None) -> MergeResult:
    """Greedily merge latent clusters by Bhattacharyya distance and dip tests.

    Repeatedly take the closest pair of current super-clusters that has not
    been excluded. Below ``d1`` the pair merges. Between ``d1`` and ``d2``
    it merges only if no projection rejects unimodality at ``dip_alpha``;
    otherwise the pair is excluded from further consideration. The loop
    stops once the closest remaining pair is at least ``d2`` apart.

    ``summaries`` gives the starting summary of each latent cluster (``None``
    entries, or ``summaries=None``, are computed from ``w``). Clusters with
    no soft weight stay singletons.
    """
    config = config or MergeConfig()
    K = w[0].shape[1] - 1
    if config.hard:
        w = hard_weights(w)
    Y = data.pooled()
    if summaries is None:
        summaries = [None] * K
    if len(summaries) != K:
        raise ConfigError(f"{len(summaries)} summaries for {K} clusters")

    cache: dict = {}

    def summary(members: frozenset) -> GaussianSummary | None:
        if members not in cache:
            if len(members) == 1 and summaries[next(iter(members))] is not None:
                cache[members] = summaries[next(iter(members))]
            else:
                try:
                    g = gaussian_approx(members, w, data)
                    cholesky(g.cov, "cluster covariance")
                    cache[members] = g
                except (DataError, NotPositiveDefiniteError):
                    # empty or degenerate clusters cannot be compared and stay singletons
                    cache[members] = None
        return cache[members]

    groups = [frozenset([k]) for k in range(K)]
    live = [g for g in groups if summary(g) is not None]
    excluded: set = set()
    dist_cache: dict = {}
    log: list = []
    while len(live) > 1:
        best = None
        for i in range(len(live)):
            for j in range(i + 1, len(live)):
                key = frozenset([live[i], live[j]])
                if key in excluded:
                    continue
                if key not in dist_cache:
                    dist_cache[key] = bhattacharyya(summary(live[i]), summary(live[j]))
                dd = dist_cache[key]
                # ties broken by the smallest member ids for determinism
                tag = (dd, min(live[i] | live[j]), sorted(live[i]), sorted(live[j]))
                if best is None or tag < best[0]:
                    best = (tag, i, j)
        if best is None or best[0][0] >= config.d2:
            break
        dd, i, j = best[0][0], best[1], best[2]
        a, b = sorted([live[i], live[j]], key=min)
        pair = (tuple(sorted(a)), tuple(sorted(b)))
        if dd < config.d1:
            log.append(MergeStep(pair, float(dd), "d1", True))
        else:
            pv = _projection_pvalues(a, b, w, Y, config, summary(a), summary(b))
            ok = all(p >= config.dip_alpha for p in pv.values())
            log.append(MergeStep(pair, float(dd), "dip", ok, pv))
            if not ok:
                excluded.add(frozenset([a, b]))
                continue
        live = [g for g in live if g not in (a, b)] + [a | b]

    partition = replay(log, K)
    M = int(partition.max()) + 1
    soft = [np.column_stack([wj[:, 0]] + [wj[:, 1:][:, partition == m].sum(axis=1) for m in range(M)])
            for wj in w]
    out_summaries = [summary(frozenset(np.flatnonzero(partition == m).tolist())) for m in range(M)]
    return MergeResult(partition=partition, merge_log=log, soft_weights=soft, summaries=out_summaries)


def replay(merge_log: list, K: int) -> np.ndarray:
    """Partition obtained by applying the accepted merges of a log in order."""
    parent = list(range(K))

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    for step in merge_log:
        merged = step.merged if isinstance(step, MergeStep) else step["merged"]
        pair = step.pair if isinstance(step, MergeStep) else step["pair"]
        if merged:
            ra, rb = find(pair[0][0]), find(pair[1][0])
            parent[max(ra, rb)] = min(ra, rb)
    roots = [find(k) for k in range(K)]
    ids: dict = {}
    return np.array([ids.setdefault(r, len(ids)) for r in roots], dtype=np.intp)


# ---------------------------------------------------------------------------
# Quantile summaries

QUANTILE_LEVELS = (0.01, 0.25, 0.75, 0.99)


def weighted_quantile(values, weights, alpha: float) -> float:
    """Smallest value whose strictly-smaller weighted mass exceeds ``alpha`` of the total.

    If no value qualifies (``alpha`` at or above the mass below the maximum),
    the maximum is returned.
    """
    v = np.asarray(values, dtype=np.float64)
    wt = np.asarray(weights, dtype=np.float64)
    keep = wt > 0
    v, wt = v[keep], wt[keep]
    if v.size == 0:
        raise DataError("empty population")
    order = np.argsort(v, kind="mergesort")
    v, wt = v[order], wt[order]
    ux, start = np.unique(v, return_index=True)
    mass = np.add.reduceat(wt, start)
    below = np.concatenate([[0.0], np.cumsum(mass)[:-1]])
    hit = np.flatnonzero(below > alpha * wt.sum())
    return float(ux[hit[0]] if hit.size else ux[-1])


def population_quantiles(w: list, data: Dataset, alphas=QUANTILE_LEVELS, partition=None) -> np.ndarray:
    """Weighted per-population, per-marker quantiles.

    ``w`` holds per-sample weights with the outlier in column 0, either per
    latent cluster or already merged (``MergeResult.soft_weights``). With a
    ``partition`` the latent columns are first summed per population.
    Returns an array of shape ``(M, d, len(alphas))``.
    """
    if partition is not None:
        partition = np.asarray(partition)
        M = int(partition.max()) + 1
        w = [np.column_stack([wj[:, 0]] + [wj[:, 1:][:, partition == m].sum(axis=1) for m in range(M)])
             for wj in w]
    W = np.concatenate(w)
    Y = data.pooled()
    M = W.shape[1] - 1
    out = np.empty((M, Y.shape[1], len(alphas)))
    for m in range(M):
        for i in range(Y.shape[1]):
            for a, alpha in enumerate(alphas):
                out[m, i, a] = weighted_quantile(Y[:, i], W[:, m + 1], alpha)
    return out


__all__ = [
    "GaussianSummary", "MergeConfig", "MergeStep", "MergeResult", "bhattacharyya", "fisher_coordinate",
    "soft_cluster_weights", "hard_weights", "gaussian_approx", "merge_clusters", "replay",
    "weighted_quantile", "population_quantiles", "QUANTILE_LEVELS",
]
