"""Uncertainty-aware feature attributions for tabular regressors."""

from .data import UncertaintySpec, load_wine, make_uncertainty_spec
from .explainer import LinearExplanation, fit_lime, fit_regularized_lime, ig_linear_explanation, sample_neighborhood
from .metrics import expected_faithfulness, point_faithfulness, prob_improvement_curve
from .predictor import MlpPredictor, TrainConfig, integrated_gradients, train_mlp, train_regularized_mlp

__version__ = "0.1.0"

__all__ = [
    "LinearExplanation",
    "MlpPredictor",
    "TrainConfig",
    "UncertaintySpec",
    "expected_faithfulness",
    "fit_lime",
    "fit_regularized_lime",
    "ig_linear_explanation",
    "integrated_gradients",
    "load_wine",
    "make_uncertainty_spec",
    "point_faithfulness",
    "prob_improvement_curve",
    "sample_neighborhood",
    "train_mlp",
    "train_regularized_mlp",
]
