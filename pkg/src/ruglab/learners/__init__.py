from .ensemble import (
    BOOSTING,
    DEFAULT_PARAMS,
    FAMILIES,
    EnsembleModel,
    FeatureMismatch,
    UnsupportedWarmStart,
    decision_function,
    fit_dtree,
    fit_forest,
    fit_gboost,
    fit_model,
    fit_reg2boost,
    importance,
    logistic_grad_hess,
    logistic_loss,
    predict_proba,
    resolve_params,
    staged_decision_function,
    warm_start,
)
from .serialize import (
    ModelLoadError,
    dumps_model,
    load_model,
    load_pipeline,
    model_hash,
    save_model,
)
from .tree import DecisionTree, fit_tree

__all__ = [
    "BOOSTING", "DEFAULT_PARAMS", "FAMILIES", "DecisionTree", "EnsembleModel",
    "FeatureMismatch", "ModelLoadError", "UnsupportedWarmStart", "decision_function",
    "dumps_model", "fit_dtree", "fit_forest", "fit_gboost", "fit_model", "fit_reg2boost",
    "fit_tree", "importance", "load_model", "load_pipeline", "logistic_grad_hess",
    "logistic_loss", "model_hash", "predict_proba", "resolve_params", "save_model",
    "staged_decision_function", "warm_start",
]
