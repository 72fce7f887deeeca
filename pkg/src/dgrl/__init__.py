"""Directed-graph representation learning: direction-aware message
passing, magnetic-Laplacian positional encodings, and the training,
tuning, and ranking protocol around them.

The train and tune callables live in their modules (`dgrl.train.train`,
`dgrl.tune.tune`) so the submodule paths stay importable.
"""

from .config import RunConfig, parse_run_config
from .errors import DGRLError
from .estimator import (DirectedGraphClassifier, DirectedGraphRegressor,
                        MagneticLaplacianEmbedding)
from .graphs import Dataset, DirectedGraph, TaskSpec, build_graph
from .layers import DirectionMode
from .model import (Model, ModelConfig, build_model, load_checkpoint,
                    method_name, save_checkpoint, validate_combo)
from .pe import (PECache, PEConfig, compute_pe_basis, epe, magnetic_laplacian,
                 npe)
from .rank import (ResultsTable, rank_table, render_ranks, render_results,
                   top_score)
from .synthetic import SyntheticSpec, generate_synthetic
from .train import TrainConfig, evaluate, run_protocol
from .tune import SearchSpace, Trial, default_space, tpe_suggest

__version__ = "0.1.0"

__all__ = [
    "DGRLError",
    "DirectedGraph", "Dataset", "TaskSpec", "build_graph",
    "SyntheticSpec", "generate_synthetic",
    "DirectionMode",
    "PEConfig", "PECache", "compute_pe_basis", "magnetic_laplacian",
    "npe", "epe",
    "Model", "ModelConfig", "build_model", "method_name", "validate_combo",
    "save_checkpoint", "load_checkpoint",
    "TrainConfig", "evaluate", "run_protocol",
    "SearchSpace", "Trial", "default_space", "tpe_suggest",
    "ResultsTable", "rank_table", "top_score", "render_results",
    "render_ranks",
    "RunConfig", "parse_run_config",
    "DirectedGraphRegressor", "DirectedGraphClassifier",
    "MagneticLaplacianEmbedding",
]
