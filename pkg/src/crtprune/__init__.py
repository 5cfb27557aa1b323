"""Continuum Galton-Watson trees under leaf intensity and pruning dynamics."""

from .mechanism import Mechanism, evaluate, invert, shift, landmarks, conjugate, theta_lambda
from .errors import (
    CrtpruneError,
    DomainError,
    DegenerateError,
    ConvergenceError,
    EmbeddingError,
    ParseError,
    ConfigError,
)
from .rng import stream
from .tree import Tree, bare_root, single_edge
from .newick import serialize, parse
from .galton_watson import (
    OffspringLaw,
    TreeLaw,
    FlatForest,
    offspring_law,
    offspring_probability,
    tree_law,
    extinction_probability,
    sample_gw,
    sample_forest,
    sample_flat,
)
from .dynamics import (
    MarkedTree,
    mark_tree,
    pruned_law,
    prune_at,
    prune_trajectory,
    growth_offspring_law,
    grow_step,
)
from .leaf_stats import (
    mean_leaf_count,
    leaf_pgf,
    joint_leaf_pgf,
    leaf_count_martingale,
    restricted_tilt,
    crossing_martingale,
)
from .ascension import (
    ascension_cdf,
    ascension_pdf,
    sample_ascension_time,
    sample_spine_tree,
    sample_ascension_tree,
)
from .metric import (
    AtomicMeasure,
    prohorov_atomic,
    hausdorff_nested,
    ghp_nested_upper,
    ghp_localized,
    sample_excursion_subtrees,
)
from .config import Config, parse_config, load_config, default_config
from .experiments import Report, run_experiment, run_suite

__all__ = [
    "Mechanism",
    "evaluate",
    "invert",
    "shift",
    "landmarks",
    "conjugate",
    "theta_lambda",
    "CrtpruneError",
    "DomainError",
    "DegenerateError",
    "ConvergenceError",
    "EmbeddingError",
    "ParseError",
    "ConfigError",
    "stream",
    "Tree",
    "bare_root",
    "single_edge",
    "serialize",
    "parse",
    "OffspringLaw",
    "TreeLaw",
    "FlatForest",
    "offspring_law",
    "offspring_probability",
    "tree_law",
    "extinction_probability",
    "sample_gw",
    "sample_forest",
    "sample_flat",
    "MarkedTree",
    "mark_tree",
    "pruned_law",
    "prune_at",
    "prune_trajectory",
    "growth_offspring_law",
    "grow_step",
    "mean_leaf_count",
    "leaf_pgf",
    "joint_leaf_pgf",
    "leaf_count_martingale",
    "restricted_tilt",
    "crossing_martingale",
    "ascension_cdf",
    "ascension_pdf",
    "sample_ascension_time",
    "sample_spine_tree",
    "sample_ascension_tree",
    "AtomicMeasure",
    "prohorov_atomic",
    "hausdorff_nested",
    "ghp_nested_upper",
    "ghp_localized",
    "sample_excursion_subtrees",
    "Config",
    "parse_config",
    "load_config",
    "default_config",
    "Report",
    "run_experiment",
    "run_suite",
]

__version__ = "0.1.0"
