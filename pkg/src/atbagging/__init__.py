"""Seed-subset selection for transfer active learning with bagged-tree
information gain and determinantal point processes."""

from .active import ALConfig, LearningCurve, run_al_trial
from .baselines import SelectionResult, select_loss_coreset, select_pca_grid, select_random
from .dataset import TabularDataset, load_csv, make_synthetic_transfer
from .dpp import build_l_ensemble, sample_k, solve_scale
from .ensemble import BaggedEnsemble, fit_ensemble, min_ensemble_size_check
from .infogain import score_all
from .metrics import TrialTable, naulc, summarize
from .rff import embed, fit_feature_map
from .selection import SelectionParams, select, select_atbagging
from .transfer import fit_metric, match_selection

__version__ = "0.1.0"

__all__ = [
    "ALConfig", "BaggedEnsemble", "LearningCurve", "SelectionParams", "SelectionResult", "TabularDataset",
    "TrialTable", "build_l_ensemble", "embed", "fit_ensemble", "fit_feature_map", "fit_metric", "load_csv",
    "make_synthetic_transfer", "match_selection", "min_ensemble_size_check", "naulc", "run_al_trial",
    "sample_k", "score_all", "select", "select_atbagging", "select_loss_coreset", "select_pca_grid",
    "select_random", "solve_scale", "summarize",
]
