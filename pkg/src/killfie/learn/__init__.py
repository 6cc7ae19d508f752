"""Classifiers, cross-validation and feature assembly."""
from __future__ import annotations

from .features import (
    BLOCKS, TABLE4_CONFIGS, ColumnSelector, FeatureMatrix, InsufficientPositives, RiskTask,
    SelfieDataset, SelfieFeaturizer, TextConfig, feature_config, risk_dataset, risk_labels,
    parse_blocks, risk_selector,
)
from .metrics import CvReport, EvalMetrics, metrics
from .models import (
    FAMILIES, InvalidHyperparameter, ModelSpec, TrainedModel, default_grid, hinge_objective, train,
)
from .selection import (
    ArrayFeaturizer, Imputer, LeakageAudit, cross_validate, grid_search, grid_search_scores, stratified_kfold,
    undersample, undersample_indices,
)

__all__ = [
    "BLOCKS", "TABLE4_CONFIGS", "ColumnSelector", "FeatureMatrix", "InsufficientPositives", "RiskTask",
    "SelfieDataset", "SelfieFeaturizer", "TextConfig", "feature_config", "risk_dataset", "risk_labels",
    "parse_blocks", "risk_selector", "grid_search_scores",
    "CvReport", "EvalMetrics", "metrics", "FAMILIES", "InvalidHyperparameter", "ModelSpec",
    "TrainedModel", "default_grid", "hinge_objective", "train", "ArrayFeaturizer", "Imputer",
    "LeakageAudit", "cross_validate", "grid_search", "stratified_kfold", "undersample",
    "undersample_indices",
]
