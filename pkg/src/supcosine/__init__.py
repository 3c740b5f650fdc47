"""Graph classification with cascade-based structure inference and a
supervised graph contrastive objective."""

from .graph import Dataset, Graph, add_edges, bfs_subgraphs, load_tu_dataset, save_tu_dataset
from .cascades import Cascade, CascadeSet, simulate_cascade, simulate_cascades
from .inference import (
    SolverConfig,
    SolverReport,
    TransmissionMatrix,
    augment_graph,
    cascade_nll,
    cascade_nll_grad,
    infer_structure,
    select_edges,
)
from .losses import ContrastBatch, cross_entropy, self_con_loss, sup_gcon_loss, total_loss
from .model import ModelConfig, ModelParams, forward, init_params
from .pipeline import RunConfig, cross_validate, preprocess, run_all, train

__version__ = "0.1.0"
