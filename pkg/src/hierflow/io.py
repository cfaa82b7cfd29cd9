"""CSV ingestion, percentile scaling, run configuration and ground-truth files.

Sample files are RFC-4180 CSV in UTF-8 with a header row of marker names and
one row per cell. Values are written with 17 significant digits so that a
save/load round trip reproduces every finite double exactly.

Run configuration file (TOML)::

    [data]
    samples = ["samples/sample001.csv", "samples/sample002.csv"]  # relative to this file
    scale = true            # 1%/99% percentile scaling of the pooled data

    [prior]
    preset = "noninformative"   # or "table1" or "inline"
    K = 4
    # preset options (e.g. lam, c_s, s_scale) or, for "inline", the
    # hyperparameters t, S, Q, H, lam, n_theta, n_psi, a, c_s [, mu0, sigma0, nu_min]

    [init]                  # optional starting values
    theta = [[0.2, 0.2, 0.7], ...]

    [mcmc]                  # any McmcConfig field
    burn_in = 2000
    production = 10000
    seed = 1

    [merge]                 # any MergeConfig field
    d1 = 0.2

    [output]
    dir = "run1"

Unknown sections or keys raise :class:`hierflow.errors.ConfigError`.
"""

from __future__ import annotations

import csv
import inspect
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .engine import InitSpec, McmcConfig
from .errors import ConfigError, DataError, HeaderMismatchError
from .merge import MergeConfig
from .model import Dataset, PriorSpec, default_outlier
from .priors import PRESETS as PRIOR_PRESETS
from .synthetic import GeneratorSpec, GroundTruth

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FLOAT_FMT = "%.17g"
MIN_SCALING_CELLS = 100


# ---------------------------------------------------------------------------
# Sample CSVs


def _read_csv(path: Path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except UnicodeDecodeError as exc:
        raise DataError(f"{path} is not valid UTF-8: {exc}") from None
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if len(rows) == 1:
        raise DataError(f"{path} has a header but no data rows")
    d = len(header)
    out = np.empty((len(rows) - 1, d))
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != d:
            raise DataError(f"{path} row {r}: {len(row)} fields, header has {d}")
        for c, val in enumerate(row):
            try:
                out[r - 1, c] = float(val)
            except ValueError:
                raise DataError(f"{path} row {r}, column {c} ({header[c]}): cannot parse {val!r}") from None
    bad = np.argwhere(~np.isfinite(out))
    if bad.size:
        r, c = bad[0]
        raise DataError(f"{path} row {r + 1}, column {c} ({header[c]}): non-finite value {rows[r + 1][c]!r}")
    return header, out


def load_samples(paths, sample_ids=None) -> Dataset:
    """Read one CSV per sample; headers must agree across files.

    Sample ids default to the file stems. Rows are numbered from 1 after the
    header and columns from 0 in error messages.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise DataError("no sample files given")
    header0, samples = None, []
    for p in paths:
        if not p.exists():
            raise DataError(f"sample file not found: {p}")
        header, arr = _read_csv(p)
        if header0 is None:
            header0 = header
        elif header != header0:
            raise HeaderMismatchError(header0, header, p, paths[0])
        samples.append(arr)
    ids = [p.stem for p in paths] if sample_ids is None else list(sample_ids)
    return Dataset(samples, marker_names=header0, sample_ids=ids)


def save_samples(dataset: Dataset, outdir) -> list:
    """Write ``<sample_id>.csv`` per sample and return the paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for sid, Y in zip(dataset.sample_ids, dataset.samples):
        p = out / f"{sid}.csv"
        np.savetxt(p, Y, fmt=FLOAT_FMT, delimiter=",", header=",".join(dataset.marker_names), comments="")
        paths.append(p)
    return paths


def write_table(path, rows: list, columns: list | None = None) -> None:
    """Write a list of dicts as CSV; floats keep 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = columns or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(columns)
        for r in rows:
            wr.writerow([FLOAT_FMT % r[c] if isinstance(r[c], (float, np.floating)) else r[c] for c in columns])


def write_matrix(path, X, row_ids, columns) -> None:
    """Write a labelled matrix with an ``id`` first column."""
    rows = [dict(id=rid, **{c: float(v) for c, v in zip(columns, row)}) for rid, row in zip(row_ids, X)]
    write_table(path, rows, ["id"] + list(columns))


def read_matrix(path):
    """Inverse of :func:`write_matrix`: returns ``(X, row_ids, columns)``.

    A file without a non-numeric first column is read as a plain matrix
    with row ids ``0..J-1``.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise DataError(f"{path} needs a header and at least one row")
    header, body = rows[0], rows[1:]
    has_id = header[0].strip().lower() in ("id", "sample_id", "sample")
    start = 1 if has_id else 0
    try:
        X = np.array([[float(v) for v in r[start:]] for r in body])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    ids = [r[0] for r in body] if has_id else [str(i) for i in range(len(body))]
    return X, ids, header[start:]


# ---------------------------------------------------------------------------
# Percentile scaling


@dataclass(frozen=True)
class ScalingTransform:
    """Per-marker affine map sending the pooled ``q_lo`` to 0 and ``q_hi`` to 1.

    Percentiles use linear interpolation between closest ranks (the
    ``"linear"`` method of :func:`numpy.percentile`).
    """

    q01: np.ndarray
    q99: np.ndarray
    marker_names: tuple = ()
    lower: float = 0.01
    upper: float = 0.99

    def __post_init__(self):
        q01 = np.asarray(self.q01, dtype=np.float64)
        q99 = np.asarray(self.q99, dtype=np.float64)
        if q01.shape != q99.shape or q01.ndim != 1:
            raise DataError("q01 and q99 must be vectors of equal length")
        if np.any(q99 <= q01):
            raise DataError("every marker needs q99 > q01")
        object.__setattr__(self, "q01", q01)
        object.__setattr__(self, "q99", q99)
        object.__setattr__(self, "marker_names", tuple(self.marker_names))

    def apply(self, Y) -> np.ndarray:
        return (np.asarray(Y, dtype=np.float64) - self.q01) / (self.q99 - self.q01)

    def invert(self, Y) -> np.ndarray:
        return np.asarray(Y, dtype=np.float64) * (self.q99 - self.q01) + self.q01

    def to_dict(self) -> dict:
        return {"q01": self.q01.tolist(), "q99": self.q99.tolist(), "marker_names": list(self.marker_names),
                "lower": self.lower, "upper": self.upper, "percentile_method": "linear"}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingTransform":
        return cls(q01=d["q01"], q99=d["q99"], marker_names=d.get("marker_names", ()),
                   lower=d.get("lower", 0.01), upper=d.get("upper", 0.99))


def fit_scaling(dataset: Dataset, lower: float = 0.01, upper: float = 0.99) -> ScalingTransform:
    """Pooled per-marker percentiles; needs at least 100 cells and no constant marker."""
    Y = dataset.pooled()
    if Y.shape[0] < MIN_SCALING_CELLS:
        raise DataError(f"scaling needs at least {MIN_SCALING_CELLS} pooled cells, got {Y.shape[0]}")
    if not 0 <= lower < upper <= 1:
        raise DataError("percentile levels must satisfy 0 <= lower < upper <= 1")
    q = np.percentile(Y, [100 * lower, 100 * upper], axis=0, method="linear")
    flat = np.flatnonzero(q[1] <= q[0])
    if flat.size:
        raise DataError(f"marker {dataset.marker_names[flat[0]]} is constant between its percentiles")
    return ScalingTransform(q[0], q[1], dataset.marker_names, lower, upper)


def apply_scaling(dataset: Dataset, transform: ScalingTransform) -> Dataset:
    """Scale every sample by ``transform``; refuses data that is already scaled."""
    if dataset.scaling is not None:
        raise DataError("dataset is already scaled; scaling twice is not allowed")
    if transform.q01.size != dataset.d:
        raise DataError(f"transform has {transform.q01.size} markers, data has {dataset.d}")
    return Dataset([transform.apply(Y) for Y in dataset.samples], marker_names=dataset.marker_names,
                   sample_ids=dataset.sample_ids, scaling=transform)


# ---------------------------------------------------------------------------
# Run configuration

_SECTIONS = {"data", "prior", "init", "mcmc", "merge", "output"}
_DATA_KEYS = {"samples", "scale", "sample_ids"}
_INLINE_KEYS = {"t", "S", "Q", "H", "lam", "n_theta", "n_psi", "a", "c_s", "mu0", "sigma0", "nu_min"}
_INIT_KEYS = {f.name for f in fields(InitSpec)}


def _check_keys(section: str, got, allowed) -> None:
    extra = sorted(set(got) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(extra)}")


def _build(cls, section: str, values: dict):
    _check_keys(section, values, {f.name for f in fields(cls)})
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


@dataclass
class RunConfig:
    """Parsed run configuration; relative paths are resolved against the file."""

    samples: list
    scale: bool = False
    sample_ids: list | None = None
    prior: dict = field(default_factory=dict)
    init: dict = field(default_factory=dict)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    merge: MergeConfig = field(default_factory=MergeConfig)
    output: Path = Path("hierflow-out")
    raw: dict = field(default_factory=dict)
    source: Path | None = None

    @property
    def K(self) -> int:
        return int(self.prior["K"])

    def load_data(self) -> Dataset:
        """Read the samples and apply scaling when requested."""
        data = load_samples(self.samples, self.sample_ids)
        return apply_scaling(data, fit_scaling(data)) if self.scale else data

    def build_prior(self, data: Dataset) -> PriorSpec:
        opts = {k: v for k, v in self.prior.items() if k not in ("preset", "K")}
        preset = self.prior.get("preset", "noninformative")
        K = self.K
        try:
            if preset == "inline":
                mu0, sigma0 = default_outlier(data)
                opts.setdefault("mu0", mu0)
                opts.setdefault("sigma0", sigma0)
                spec = PriorSpec(**{k: np.asarray(v, dtype=np.float64) if isinstance(v, list) else v
                                    for k, v in opts.items()})
                if spec.K != K:
                    raise ConfigError(f"[prior] K = {K} but t has {spec.K} rows")
                return spec
            return PRIOR_PRESETS[preset](data, K, **opts)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[prior]: {exc}") from None

    def init_spec(self) -> InitSpec:
        vals = {k: (np.asarray(v) if isinstance(v, list) else v) for k, v in self.init.items()}
        return InitSpec(**vals)

    def to_dict(self) -> dict:
        return {"data": {"samples": [str(p) for p in self.samples], "scale": self.scale,
                         "sample_ids": self.sample_ids},
                "prior": self.prior, "init": self.init, "mcmc": self.mcmc.to_dict(),
                "merge": self.merge.to_dict(), "output": {"dir": str(self.output)}}


def parse_config(raw: dict, base: Path | None = None) -> RunConfig:
    """Validate a configuration tree and build a :class:`RunConfig`."""
    base = Path(base or ".")
    _check_keys("top level", raw, _SECTIONS)
    data = raw.get("data", {})
    _check_keys("data", data, _DATA_KEYS)
    if "samples" not in data or not data["samples"]:
        raise ConfigError("[data] samples must list at least one file")
    samples = [(base / p) if not Path(p).is_absolute() else Path(p) for p in data["samples"]]
    missing = [str(p) for p in samples if not p.exists()]
    if missing:
        raise ConfigError(f"sample file(s) not found: {', '.join(missing)}")

    prior = dict(raw.get("prior", {}))
    preset = prior.setdefault("preset", "noninformative")
    if "K" not in prior:
        raise ConfigError("[prior] K is required")
    if not isinstance(prior["K"], int) or prior["K"] < 1:
        raise ConfigError("[prior] K must be a positive integer")
    if preset == "inline":
        _check_keys("prior", prior, _INLINE_KEYS | {"preset", "K"})
        if "t" in prior and len(prior["t"]) != prior["K"]:
            raise ConfigError(f"[prior] K = {prior['K']} but t has {len(prior['t'])} rows")
    elif preset in PRIOR_PRESETS:
        params = inspect.signature(PRIOR_PRESETS[preset]).parameters
        _check_keys("prior", prior, (set(params) - {"data", "K"}) | {"preset", "K"})
    else:
        raise ConfigError(f"unknown prior preset {preset!r}; choose from inline, {', '.join(PRIOR_PRESETS)}")

    init = dict(raw.get("init", {}))
    _check_keys("init", init, _INIT_KEYS)
    if "theta" in init and len(init["theta"]) != prior["K"]:
        raise ConfigError(f"[init] theta has {len(init['theta'])} rows, expected K = {prior['K']}")

    mcmc = _build(McmcConfig, "mcmc", dict(raw.get("mcmc", {})))
    merge = _build(MergeConfig, "merge", dict(raw.get("merge", {})))
    output = raw.get("output", {})
    _check_keys("output", output, {"dir"})
    out = Path(output.get("dir", "hierflow-out"))
    return RunConfig(samples=samples, scale=bool(data.get("scale", False)), sample_ids=data.get("sample_ids"),
                     prior=prior, init=init, mcmc=mcmc, merge=merge,
                     output=out if out.is_absolute() else base / out, raw=raw)


def load_config(path) -> RunConfig:
    """Read and validate a TOML run configuration."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = parse_config(raw, path.parent)
    cfg.source = path
    return cfg


def load_generator_spec(path) -> GeneratorSpec:
    """Read a :class:`GeneratorSpec` from TOML; keys are its field names."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"generator spec not found: {path}")
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    if "fixed_weights" in raw:
        raw["fixed_weights"] = {int(k): float(v) for k, v in raw["fixed_weights"].items()}
    return _build(GeneratorSpec, "spec", raw)


# ---------------------------------------------------------------------------
# Ground truth

_TRUTH_ARRAYS = ("theta", "sigma_theta", "psi", "nu", "mu", "sigma", "pi", "Z", "mu0", "sigma0")


def save_truth(truth: GroundTruth, outdir) -> Path:
    """``truth.json`` with every parameter plus ``truth_assignments.csv`` (``j,cell,x``)."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    obj = {name: np.asarray(getattr(truth, name)).tolist() for name in _TRUTH_ARRAYS}
    obj["sizes"] = [int(x.size) for x in truth.x]
    with open(out / "truth.json", "w") as fh:
        json.dump(obj, fh, indent=1)
    rows = np.vstack([np.column_stack([np.full(x.size, j), np.arange(x.size), x]) for j, x in enumerate(truth.x)])
    np.savetxt(out / "truth_assignments.csv", rows, fmt="%d", delimiter=",", header="j,cell,x", comments="")
    return out / "truth.json"


def load_truth(path) -> GroundTruth:
    """Read ``truth.json`` (and the assignments file beside it, if present)."""
    path = Path(path)
    if path.is_dir():
        path = path / "truth.json"
    if not path.exists():
        raise DataError(f"truth file not found: {path}")
    with open(path) as fh:
        obj = json.load(fh)
    arrs = {name: np.asarray(obj[name], dtype=np.float64) for name in _TRUTH_ARRAYS}
    arrs["Z"] = arrs["Z"].astype(bool)
    x = []
    xa = path.parent / "truth_assignments.csv"
    if xa.exists():
        rows = np.loadtxt(xa, delimiter=",", skiprows=1, ndmin=2).astype(np.int64)
        x = [rows[rows[:, 0] == j, 2].astype(np.intp) for j in range(len(obj["sizes"]))]
    return GroundTruth(x=x, **arrs)


__all__ = [
    "load_samples", "save_samples", "write_table", "write_matrix", "read_matrix", "ScalingTransform",
    "fit_scaling", "apply_scaling", "RunConfig", "parse_config", "load_config", "load_generator_spec",
    "save_truth", "load_truth",
]
