"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 1 anything else. Failures print a JSON object to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import latent_recovery_counts, outlier_proportions, pca_biplot, population_sizes, summarize
from .em import em_baseline
from .engine import run_chain
from .errors import DataError, HierflowError
from .gir import getting_it_right
from .io import (
    load_config,
    load_generator_spec,
    load_samples,
    load_truth,
    read_matrix,
    save_samples,
    save_truth,
    write_matrix,
    write_table,
)
from .merge import QUANTILE_LEVELS, merge_clusters, population_quantiles, soft_cluster_weights
from .synthetic import PRESETS as SYNTH_PRESETS
from .synthetic import generate_synthetic
from .trace_io import config_hash, load_manifest, load_trace, save_trace, write_json

log = logging.getLogger("hierflow")


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(args, extra: dict | None = None) -> dict:
    out = {"command": args.command, "argv": list(args.argv), "version": __version__,
           "python": platform.python_version(), "numpy": np.__version__}
    out.update(extra or {})
    return out


# ---------------------------------------------------------------------------
# Subcommands


def cmd_simulate(args) -> int:
    if args.spec:
        spec = load_generator_spec(args.spec)
        source = {"spec": str(args.spec)}
    else:
        spec = SYNTH_PRESETS[args.preset](args.scale) if args.preset == "sec31" else SYNTH_PRESETS[args.preset]()
        source = {"preset": args.preset, "scale": args.scale}
    data, truth = generate_synthetic(spec, args.seed)
    out = Path(args.out)
    paths = save_samples(data, out / "samples")
    save_truth(truth, out)
    fit_cfg = out / "fit.toml"
    sample_list = ", ".join(f'"samples/{p.name}"' for p in paths)
    fit_cfg.write_text(
        "[data]\n"
        f"samples = [{sample_list}]\n\n"
        "[prior]\n"
        'preset = "noninformative"\n'
        f"K = {spec.K}\n\n"
        "[mcmc]\n"
        "burn_in = 2000\nproduction = 10000\nseed = 1\n\n"
        "[output]\n"
        'dir = "fit"\n'
    )
    write_json(out / "manifest.json", _manifest(args, {
        "seed": args.seed, **source, "J": data.J, "d": data.d, "K": spec.K,
        "sizes": data.sizes.tolist(), "metadata": spec.metadata}))
    print(f"wrote {data.J} samples to {out / 'samples'}")
    return 0


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg.mcmc.workers = args.workers
    if args.seed is not None:
        cfg.mcmc.seed = args.seed
    data = cfg.load_data()
    prior = cfg.build_prior(data)
    out = Path(args.out) if args.out else cfg.output
    log.info("fitting J=%d d=%d K=%d for %d sweeps", data.J, data.d, prior.K,
             cfg.mcmc.burn_in + cfg.mcmc.production)
    trace = run_chain(data, prior, cfg.mcmc, init=cfg.init_spec())
    conf = cfg.to_dict()
    save_trace(trace, out, config=conf, extra=_manifest(args, {
        "seed": cfg.mcmc.seed,
        "sample_ids": list(data.sample_ids),
        "marker_names": list(data.marker_names),
        "scaling": None if data.scaling is None else data.scaling.to_dict(),
        "data_files": {str(p): _file_sha256(p) for p in cfg.samples},
        "config_file": None if cfg.source is None else str(cfg.source),
    }))
    print(f"wrote trace with {trace.n_draws} draws to {out}")
    return 0


def cmd_merge(args) -> int:
    cfg = load_config(args.config)
    trace = load_trace(args.trace)
    data = cfg.load_data()
    w = soft_cluster_weights(trace, data)
    res = merge_clusters(None, w, data, cfg.merge)
    out = Path(args.out) if args.out else Path(args.trace) / "merge"
    write_json(out / "merge.json", res.to_dict())
    sizes = population_sizes(trace, res.partition)
    cols = [f"pop{m}" for m in range(res.n_populations)]
    write_matrix(out / "populations.csv", sizes, data.sample_ids, cols)
    write_matrix(out / "outliers.csv", outlier_proportions(trace)[:, None], data.sample_ids, ["outlier"])
    q = population_quantiles(res.soft_weights, data)
    rows = [{"population": m, "marker": data.marker_names[i], **{f"q{a:g}": float(q[m, i, t])
                                                               for t, a in enumerate(QUANTILE_LEVELS)}}
            for m in range(q.shape[0]) for i in range(q.shape[1])]
    write_table(out / "quantiles.csv", rows)
    write_json(out / "manifest.json", _manifest(args, {
        "trace": str(args.trace), "merge_config": cfg.merge.to_dict(),
        "config_hash": config_hash(cfg.to_dict()), "n_populations": res.n_populations}))
    print(f"merged {trace.K} clusters into {res.n_populations} populations; wrote {out}")
    return 0


def cmd_summarize(args) -> int:
    trace = load_trace(args.trace)
    man = load_manifest(args.trace)
    truth = load_truth(args.truth) if args.truth else None
    s = summarize(trace, truth, level=args.level)
    out = Path(args.out) if args.out else Path(args.trace) / "summary"
    ids = man.get("sample_ids") or [str(j) for j in range(trace.J)]
    report = {"level": s.level, "theta": s.theta, "latent_cov": s.latent_cov, "nu": s.nu,
              "intervals": {k: {"lower": v[0], "upper": v[1]} for k, v in s.intervals.items()
                            if k in ("theta", "latent_cov", "nu")}}
    if truth is not None:
        cov = latent_recovery_counts(s, truth)
        report["coverage"] = {k: {"inside": v[0], "total": v[1]} for k, v in cov.items()}
        write_table(out / "recovery.csv", s.recovery)
    write_json(out / "summary.json", report)
    write_matrix(out / "activation.csv", s.activation, ids, [f"k{k}" for k in range(trace.K)])
    write_matrix(out / "pi.csv", s.pi, ids, ["outlier"] + [f"k{k}" for k in range(trace.K)])
    write_json(out / "manifest.json", _manifest(args, {"trace": str(args.trace), "truth": args.truth}))
    print(f"wrote summary to {out}")
    return 0


def cmd_pca(args) -> int:
    X, ids, cols = read_matrix(args.populations)
    res = pca_biplot(X, standardize=args.standardize)
    out = Path(args.out) if args.out else Path(args.populations).parent / "pca"
    pcs = [f"PC{i + 1}" for i in range(res.scores.shape[1])]
    write_matrix(out / "scores.csv", res.scores, ids, pcs)
    write_matrix(out / "loadings.csv", res.loadings, cols, pcs)
    write_table(out / "variance.csv", [{"component": p, "explained_variance_ratio": float(r),
                                        "singular_value": float(sv)}
                                       for p, r, sv in zip(pcs, res.explained_variance_ratio, res.singular_values)])
    write_json(out / "manifest.json", _manifest(args, {"populations": str(args.populations),
                                                       "standardize": args.standardize}))
    print(f"first two components explain {res.explained_variance_ratio[:2].sum():.4f}; wrote {out}")
    return 0


def cmd_validate(args) -> int:
    rep = getting_it_right(J=args.J, n=args.n, iterations=args.iterations, rng=args.seed, mutation=args.mutation)
    out = Path(args.out)
    write_json(out, {**rep.to_dict(), "passed": rep.passed(args.threshold), "threshold": args.threshold,
                     **_manifest(args)})
    print(f"max |z| = {rep.max_abs_z:.2f} over {len(rep.names)} functionals "
          f"({'pass' if rep.passed(args.threshold) else 'FAIL'}); wrote {out}")
    return 0


def cmd_em(args) -> int:
    data = load_samples([args.sample])
    res = em_baseline(data.samples[0], args.k, rng=args.seed, restarts=args.restarts)
    out = Path(args.out) if args.out else Path(args.sample).with_suffix(".em.json")
    write_json(out, {"K": args.k, "weights": res.weights, "means": res.means, "covs": res.covs,
                     "loglik": res.loglik, "n_iter": res.n_iter, "converged": res.converged,
                     "restart_logliks": res.restart_logliks, "n_jitter_restarts": res.n_jitter_restarts,
                     "marker_names": list(data.marker_names), **_manifest(args, {"seed": args.seed})})
    print(f"EM log-likelihood {res.loglik:.6f} after {res.n_iter} iterations; wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser


class _JsonArgumentParser(argparse.ArgumentParser):
    """Reports usage errors as JSON with the configuration exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, json.dumps({"error": "config", "message": message}) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = _JsonArgumentParser(prog="hierflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hierflow {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_JsonArgumentParser)

    s = sub.add_parser("simulate", help="generate a synthetic dataset with ground truth")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=sorted(SYNTH_PRESETS))
    g.add_argument("--spec", type=Path, help="TOML generator spec")
    s.add_argument("--scale", type=float, default=1.0, help="cell-count scale for the sec31 preset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="run the sampler")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--out", type=Path, help="override [output] dir")
    s.add_argument("--workers", type=int, help="override [mcmc] workers")
    s.add_argument("--seed", type=int, help="override [mcmc] seed")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("merge", help="merge latent clusters into populations")
    s.add_argument("--trace", type=Path, required=True)
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_merge)

    s = sub.add_parser("summarize", help="posterior summaries and recovery tables")
    s.add_argument("--trace", type=Path, required=True)
    s.add_argument("--truth", type=Path)
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("pca", help="PCA of a population-size matrix")
    s.add_argument("--populations", type=Path, required=True)
    s.add_argument("--standardize", action="store_true")
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_pca)

    s = sub.add_parser("validate", help="getting-it-right check of the sampler")
    s.add_argument("--iterations", type=int, default=10_000)
    s.add_argument("--J", type=int, default=3)
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mutation", choices=["sigma_drop_prior"])
    s.add_argument("--threshold", type=float, default=4.0)
    s.add_argument("--out", type=Path, default=Path("geweke.json"))
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("em-baseline", help="independent EM fit of one sample")
    s.add_argument("--sample", type=Path, required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--restarts", type=int, default=10)
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_em)
    return p


def _fail(code: int, payload: dict) -> int:
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HierflowError as exc:
        return _fail(exc.exit_code, exc.to_dict())
    except OSError as exc:
        return _fail(DataError.exit_code, {"error": "data", "message": str(exc)})
    except Exception as exc:  # noqa: BLE001 - the CLI contract is a JSON error for any failure
        return _fail(1, {"error": "internal", "type": type(exc).__name__, "message": str(exc)})


if __name__ == "__main__":
    sys.exit(main())
