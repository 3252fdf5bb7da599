"""Shapley-value attribution of transformer layers and layer-wise sparsity allocation."""

from .allocation import SparsityPlan, allocate_ratios, normalize_contributions
from .checkpoint import load_checkpoint, save_checkpoint
from .coalition import (
    CoalitionCache,
    LayerSet,
    ShapleyReport,
    evaluate_cached,
    exact_shapley,
    shapley_weight,
    swsv,
    window_for_layer,
)
from .data import CalibrationBatch, bundled_corpus, contiguous_batch, make_calibration, split_corpus
from .evaluation import PerplexityOracle, activation_cosine, perplexity, value_of
from .model import ModelCheckpoint, ModelConfig, forward, init_model
from .pruning import PruneMethod, achieved_sparsity, apply_plan, magnitude_prune_matrix, wanda_prune_matrix
from .stats import magnitude_stats
from .training import TrainConfig, train

__version__ = "0.1.0"
