"""Open-set recognition over pre-extracted feature vectors.

A dropout-sampled softmax head produces per-class predictive means and
uncertainties; an elected council of classifiers votes those uncertainties
into a novelty score; samples voted novel can be routed to embedding-based
classifiers instead of being forced onto a known label.
"""

from .baselines import (DiagonalGMM, RbfOneClassSVM, softmax_confidence_score,
                        softmax_confidence_scores)
from .council import (CouncilTable, build_true_positive_sets, council_members,
                      elect_councils, load_council, save_council, select_leader,
                      uncertainty_variance)
from .data import (FeatureDataset, generate_synthetic, load_features,
                   save_features, synthetic_embeddings)
from .errors import (CalibrationError, DataError, DimensionError,
                     NumericalError, ParameterError)
from .experiment import ExperimentConfig, run_experiment
from .head import MCDropoutClassifier, MCPrediction
from .metrics import accuracy, eer, harmonic_mean, pr_auc, roc_auc
from .numeric import l2_normalize_rows
from .novelty import (NoveltyDetector, NoveltyVerdict, VARIANTS, calibrate_tau,
                      load_score_dump, vote_score, write_score_dump)
from .splits import SplitSpec, load_splits, make_splits, save_splits
from .zsl import (GZSL_MODES, DeviseRegressor, EmbeddingTable, conse_embed,
                  devise_train, gzsl_predict, nn_classify)

__version__ = "0.1.0"

__all__ = [
    "CalibrationError", "CouncilTable", "DataError", "DiagonalGMM",
    "DeviseRegressor", "DimensionError", "EmbeddingTable", "ExperimentConfig",
    "FeatureDataset", "GZSL_MODES", "MCDropoutClassifier", "MCPrediction",
    "NoveltyDetector", "NoveltyVerdict", "NumericalError", "ParameterError",
    "RbfOneClassSVM", "SplitSpec", "VARIANTS", "accuracy",
    "build_true_positive_sets", "calibrate_tau", "conse_embed",
    "council_members", "devise_train", "eer", "elect_councils",
    "generate_synthetic", "gzsl_predict", "harmonic_mean", "l2_normalize_rows", "load_council",
    "load_features", "load_score_dump", "load_splits", "make_splits",
    "nn_classify", "pr_auc", "roc_auc", "run_experiment", "save_council",
    "save_features", "save_splits", "select_leader", "softmax_confidence_score",
    "softmax_confidence_scores", "synthetic_embeddings", "uncertainty_variance",
    "vote_score", "write_score_dump",
]
