"""Trace serialisation: one long-format CSV per parameter family plus a manifest.

Every family file has the columns ``iteration,k,j,coordinate,value``. ``k``
is the 0-based latent cluster (the mixture-weight family uses 0 for the
outlier and ``k + 1`` for cluster ``k``), ``j`` is the sample index or -1 for
latent-layer families, and ``coordinate`` is the row-major flat index within
the vector or matrix. Values are written with 17 significant digits, so a
save/load round trip is exact.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
from pathlib import Path

import numpy as np

from . import __version__
from .engine import Trace
from .errors import DataError

HEADER = "iteration,k,j,coordinate,value"

# family -> (axes after the draw axis, is latent)
_FAMILIES = {
    "theta": ("k", "c"),
    "sigma_theta": ("k", "c"),
    "psi": ("k", "c"),
    "nu": ("k",),
    "mu": ("j", "k", "c"),
    "sigma": ("j", "k", "c"),
    "pi": ("j", "k"),
    "Z": ("j", "k"),
}
SERIES = ("log_posterior", "log_likelihood")


def _long_rows(name: str, arr: np.ndarray, iterations: np.ndarray) -> np.ndarray:
    axes = _FAMILIES[name]
    R = arr.shape[0]
    if "c" in axes:
        lead = arr.shape[1:1 + len(axes) - 1]
        arr = arr.reshape(R, *lead, -1)
    grids = np.meshgrid(np.arange(R), *[np.arange(s) for s in arr.shape[1:]], indexing="ij")
    cols = dict(zip(("r",) + axes, grids))
    n = arr.size
    out = np.empty((n, 5))
    out[:, 0] = iterations[cols["r"].ravel()]
    out[:, 1] = cols["k"].ravel()
    out[:, 2] = cols["j"].ravel() if "j" in cols else -1
    out[:, 3] = cols["c"].ravel() if "c" in cols else 0
    out[:, 4] = arr.astype(np.float64).ravel()
    return out


def _write_rows(path: Path, rows: np.ndarray) -> None:
    np.savetxt(path, rows, fmt=["%d", "%d", "%d", "%d", "%.17g"], delimiter=",", header=HEADER, comments="")


def config_hash(obj) -> str:
    """SHA-256 of the canonical JSON form of ``obj``."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def save_trace(trace: Trace, outdir, config: dict | None = None, extra: dict | None = None) -> Path:
    """Write every family CSV, the predictive draws, soft counts and ``manifest.json``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    it = trace.iterations
    for name in _FAMILIES:
        _write_rows(out / f"{name}.csv", _long_rows(name, getattr(trace, name), it))
    series = np.column_stack([it] + [getattr(trace, s) for s in SERIES])
    np.savetxt(out / "series.csv", series, fmt=["%d", "%.17g", "%.17g"], delimiter=",",
               header="iteration," + ",".join(SERIES), comments="")
    R, P, d = trace.predictive.shape
    pred = np.column_stack([np.repeat(it, P), np.tile(np.arange(P), R), trace.predictive.reshape(R * P, d)])
    np.savetxt(out / "predictive.csv", pred, fmt=["%d", "%d"] + ["%.17g"] * d, delimiter=",",
               header="iteration,slot," + ",".join(f"y{i}" for i in range(d)), comments="")
    if trace.soft_counts:
        rows = [np.column_stack([np.full(c.shape[0], j), np.arange(c.shape[0]), c])
                for j, c in enumerate(trace.soft_counts)]
        K1 = trace.soft_counts[0].shape[1]
        np.savetxt(out / "soft_counts.csv", np.vstack(rows), fmt="%d", delimiter=",",
                   header="j,cell," + ",".join(f"k{k}" for k in range(K1)), comments="")
    manifest = {
        "format": "hierflow-trace/1",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "shape": {"draws": int(trace.n_draws), "J": int(trace.J), "K": int(trace.K), "d": int(trace.d)},
        "predictive_labels": list(trace.predictive_labels),
        "n_soft": int(trace.n_soft),
        "diagnostics": trace.diagnostics,
        "config": config or {},
        "config_hash": config_hash(config or {}),
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
    return out


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, os.PathLike):
        return os.fspath(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _read(path: Path, ncols: int) -> np.ndarray:
    if not path.exists():
        raise DataError(f"trace file missing: {path}")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if arr.size == 0:
        return np.empty((0, ncols))
    if arr.shape[1] != ncols:
        raise DataError(f"{path} has {arr.shape[1]} columns, expected {ncols}")
    return arr


def load_manifest(tracedir) -> dict:
    path = Path(tracedir) / "manifest.json"
    if not path.exists():
        raise DataError(f"no manifest.json in {tracedir}")
    with open(path) as fh:
        return json.load(fh)


def load_trace(tracedir) -> Trace:
    """Inverse of :func:`save_trace`."""
    root = Path(tracedir)
    man = load_manifest(root)
    shp = man["shape"]
    R, J, K, d = shp["draws"], shp["J"], shp["K"], shp["d"]
    dims = {"theta": (R, K, d), "sigma_theta": (R, K, d, d), "psi": (R, K, d, d), "nu": (R, K),
            "mu": (R, J, K, d), "sigma": (R, J, K, d, d), "pi": (R, J, K + 1), "Z": (R, J, K)}
    series = _read(root / "series.csv", 1 + len(SERIES))
    iterations = series[:, 0].astype(np.int64)
    fields = {}
    for name, shape in dims.items():
        rows = _read(root / f"{name}.csv", 5)
        if rows.shape[0] != int(np.prod(shape)):
            raise DataError(f"{name}.csv has {rows.shape[0]} rows, expected {int(np.prod(shape))}")
        # rows were written in C order of the array, so the value column reshapes directly
        fields[name] = rows[:, 4].reshape(shape)
    fields["nu"] = fields["nu"].astype(np.int64)
    fields["Z"] = fields["Z"].astype(bool)
    labels = man["predictive_labels"]
    P = len(labels)
    pred = _read(root / "predictive.csv", 2 + d)
    predictive = pred[:, 2:].reshape(R, P, d) if P else np.empty((R, 0, d))
    soft = []
    if man["n_soft"] and (root / "soft_counts.csv").exists():
        sc = _read(root / "soft_counts.csv", 2 + K + 1).astype(np.int64)
        for j in range(J):
            soft.append(sc[sc[:, 0] == j][:, 2:].astype(np.int32))
    return Trace(iterations=iterations, log_posterior=series[:, 1], log_likelihood=series[:, 2],
                 predictive=predictive, predictive_labels=labels, soft_counts=soft,
                 n_soft=int(man["n_soft"]) if soft else 0, diagnostics=man.get("diagnostics", {}), **fields)


def write_json(path, obj) -> None:
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)


__all__ = ["save_trace", "load_trace", "load_manifest", "config_hash", "write_json", "HEADER"]
