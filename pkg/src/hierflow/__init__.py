"""Hierarchical Gaussian mixtures for grouped flow cytometry samples."""

__version__ = "0.1.0"

from .analysis import PosteriorSummary, activation_accuracy, pca_biplot, population_sizes, summarize  # noqa: E402
from .em import em_baseline  # noqa: E402
from .engine import GibbsSampler, InitSpec, McmcConfig, Trace, run_chain  # noqa: E402
from .errors import ConfigError, DataError, HierflowError, NumericalError  # noqa: E402
from .gir import getting_it_right  # noqa: E402
from .io import apply_scaling, fit_scaling, load_config, load_samples, save_samples  # noqa: E402
from .kernels import BACKEND  # noqa: E402
from .merge import MergeConfig, MergeResult, bhattacharyya, merge_clusters  # noqa: E402
from .model import ChainState, Dataset, PriorSpec  # noqa: E402
from .synthetic import GeneratorSpec, GroundTruth, generate_synthetic  # noqa: E402
from .trace_io import load_trace, save_trace  # noqa: E402

__all__ = [
    "__version__", "BACKEND", "Dataset", "PriorSpec", "ChainState", "McmcConfig", "InitSpec", "Trace",
    "GibbsSampler", "run_chain", "MergeConfig", "MergeResult", "bhattacharyya", "merge_clusters",
    "PosteriorSummary", "summarize", "population_sizes", "pca_biplot", "activation_accuracy", "em_baseline",
    "getting_it_right", "GeneratorSpec", "GroundTruth", "generate_synthetic", "load_samples", "save_samples",
    "fit_scaling", "apply_scaling", "load_config", "save_trace", "load_trace", "HierflowError", "ConfigError",
    "DataError", "NumericalError",
]
