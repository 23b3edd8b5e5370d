"""Tree ensembles: single tree, bagged forest, Newton-step boosting and
regularised second-order boosting, plus warm-start continuation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .tree import (
    LEAF,
    DecisionTree,
    fit_tree,
    gini_stats,
    gini_criterion,
    grow_tree,
    newton_criterion,
    second_order_criterion,
)

FAMILIES = ("dtree", "rforest", "gboost", "reg2boost")
BOOSTING = ("gboost", "reg2boost")
BASE_SCORE_CLAMP = 15.0

DEFAULT_PARAMS = {
    "dtree": {"max_depth": 5, "min_samples_split": 2, "max_features": "all", "class_weight": None},
    "rforest": {"n_estimators": 100, "max_depth": 8, "min_samples_split": 2,
                "max_features": "sqrt", "class_weight": None},
    "gboost": {"learning_rate": 0.1, "max_depth": 3, "n_estimators": 100, "subsample": 1.0,
               "loss": "logistic", "min_samples_split": 2, "max_features": "all"},
    "reg2boost": {"learning_rate": 0.1, "max_depth": 3, "n_estimators": 100, "subsample": 1.0,
                  "colsample_bytree": 1.0, "gamma": 0.0, "reg_alpha": 0.0, "reg_lambda": 1.0,
                  "scale_pos_weight": 1.0},
}


class UnsupportedWarmStart(ValueError):
    pass


class FeatureMismatch(ValueError):
    pass


@dataclass
class EnsembleModel:
    family: str
    params: dict
    feature_names: tuple[str, ...]
    trees: list[DecisionTree] = field(default_factory=list)
    # per-tree multiplier on leaf values (the shrinkage in effect when the tree was added)
    tree_weights: list[float] = field(default_factory=list)
    base_score: float = 0.0
    learning_rate: float = 1.0
    class_weight: Optional[tuple[float, float]] = None
    seed: int = 0
    warm_starts: list[dict] = field(default_factory=list)

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def resolve_params(family: str, params: Optional[dict] = None) -> dict:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    out = dict(DEFAULT_PARAMS[family])
    for k, v in (params or {}).items():
        if k not in out:
            raise ValueError(f"{family} has no hyperparameter {k!r}")
        out[k] = v
    if "learning_rate" in out and not out["learning_rate"] > 0:
        raise ValueError("learning_rate must be > 0")
    if "n_estimators" in out and (int(out["n_estimators"]) != out["n_estimators"]
                                  or out["n_estimators"] < 1):
        raise ValueError("n_estimators must be an integer >= 1")
    for k in ("subsample", "colsample_bytree"):
        if k in out and not 0 < out[k] <= 1:
            raise ValueError(f"{k} must lie in (0, 1]")
    for k in ("gamma", "reg_alpha", "reg_lambda"):
        if k in out and out[k] < 0:
            raise ValueError(f"{k} must be >= 0")
    if out.get("loss", "logistic") != "logistic":
        raise ValueError("only the logistic loss is supported")
    if out.get("max_depth") is not None and out["max_depth"] < 1:
        raise ValueError("max_depth must be >= 1")
    if "scale_pos_weight" in out and not out["scale_pos_weight"] > 0:
        raise ValueError("scale_pos_weight must be > 0")
    return out


def class_weights(y: np.ndarray, rule) -> Optional[tuple[float, float]]:
    if rule is None or rule == "none":
        return None
    if rule == "balanced":
        n = len(y)
        counts = [int(np.sum(y == 0)), int(np.sum(y == 1))]
        return tuple(n / (2.0 * c) if c else 1.0 for c in counts)
    if isinstance(rule, dict):
        rule = (rule.get(0, rule.get("0", 1.0)), rule.get(1, rule.get("1", 1.0)))
    w0, w1 = (float(v) for v in rule)
    if not (w0 > 0 and w1 > 0):
        raise ValueError("class weights must be positive")
    return (w0, w1)


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty 2-D matrix")
    if len(y) != X.shape[0]:
        raise ValueError("X and y lengths differ")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if np.isnan(X).any():
        raise ValueError("X contains missing values; impute first")
    return X, y


def _names(feature_names, d):
    if feature_names is None:
        return tuple(f"f{i}" for i in range(d))
    if len(feature_names) != d:
        raise FeatureMismatch("feature_names length does not match X")
    return tuple(feature_names)


def _sample_weights(y, cw):
    if cw is None:
        return np.ones(len(y))
    return np.where(y == 1, cw[1], cw[0])


# ---------------------------------------------------------------- tree / forest


def fit_dtree(X, y, params=None, seed: int = 0, feature_names=None) -> EnsembleModel:
    X, y = _check_xy(X, y)
    p = resolve_params("dtree", params)
    cw = class_weights(y, p["class_weight"])
    tree = fit_tree(X, y, _sample_weights(y, cw), p, seed)
    return EnsembleModel("dtree", p, _names(feature_names, X.shape[1]), [tree], [1.0],
                         class_weight=cw, seed=seed)


def fit_forest(X, y, params=None, seed: int = 0, feature_names=None) -> EnsembleModel:
    X, y = _check_xy(X, y)
    p = resolve_params("rforest", params)
    cw = class_weights(y, p["class_weight"])
    w = _sample_weights(y, cw)
    n = len(y)
    trees = []
    for i in range(int(p["n_estimators"])):
        rng = np.random.default_rng([seed, i])
        idx = rng.integers(0, n, size=n)
        trees.append(grow_tree(X[idx], gini_stats(y[idx], w[idx]), gini_criterion(),
                               max_depth=p["max_depth"],
                               min_samples_split=p["min_samples_split"],
                               max_features=p["max_features"], rng=rng))
    return EnsembleModel("rforest", p, _names(feature_names, X.shape[1]), trees,
                         [1.0] * len(trees), class_weight=cw, seed=seed)


# ---------------------------------------------------------------- boosting


def logistic_loss(F: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-row -[y log s(F) + (1-y) log(1-s(F))], stable for large |F|."""
    return np.logaddexp(0.0, F) - y * F


def logistic_grad_hess(F: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = expit(F)
    return p - y, p * (1.0 - p)


def base_score_for(y: np.ndarray) -> float:
    prev = float(np.mean(y))
    if prev in (0.0, 1.0):
        warnings.warn("training labels contain a single class; boosting adds no signal",
                      RuntimeWarning, stacklevel=3)
        return math.copysign(BASE_SCORE_CLAMP, prev - 0.5)
    return float(np.clip(math.log(prev / (1.0 - prev)), -BASE_SCORE_CLAMP, BASE_SCORE_CLAMP))


def _boost_stage(model: EnsembleModel, X, y, F, stage: int) -> DecisionTree:
    p = model.params
    n, d = X.shape
    rng = np.random.default_rng([model.seed, stage])
    if p["subsample"] < 1.0:
        rows = np.sort(rng.choice(n, size=max(1, int(p["subsample"] * n)), replace=False))
    else:
        rows = np.arange(n)
    g, h = logistic_grad_hess(F[rows], y[rows])
    Xs = X[rows]
    if model.family == "gboost":
        stats = np.column_stack([-g, h, np.ones(len(rows))])
        return grow_tree(Xs, stats, newton_criterion(), max_depth=p["max_depth"],
                         min_samples_split=p["min_samples_split"],
                         max_features=p["max_features"], rng=rng)
    w = np.where(y[rows] == 1, p["scale_pos_weight"], 1.0)
    cols = None
    if p["colsample_bytree"] < 1.0:
        cols = rng.choice(d, size=max(1, int(p["colsample_bytree"] * d)), replace=False)
    crit = second_order_criterion(p["reg_lambda"], p["reg_alpha"], p["gamma"])
    return grow_tree(Xs, np.column_stack([w * g, w * h]), crit, max_depth=p["max_depth"],
                     allowed_features=cols, rng=rng)


def _run_stages(model: EnsembleModel, X, y, F, n_stages: int, lr: float,
                single_class: bool) -> EnsembleModel:
    for _ in range(n_stages):
        stage = len(model.trees)
        if single_class:
            tree = DecisionTree.leaf(0.0, len(y))
        else:
            tree = _boost_stage(model, X, y, F, stage)
        F += lr * tree.predict(X)
        model.trees.append(tree)
        model.tree_weights.append(lr)
    return model


def _fit_boosting(family, X, y, params, seed, feature_names) -> EnsembleModel:
    X, y = _check_xy(X, y)
    p = resolve_params(family, params)
    base = base_score_for(y)
    model = EnsembleModel(family, p, _names(feature_names, X.shape[1]), [], [],
                          base_score=base, learning_rate=float(p["learning_rate"]), seed=seed)
    F = np.full(len(y), base)
    single = bool(np.all(y == y[0]))
    return _run_stages(model, X, y, F, int(p["n_estimators"]), model.learning_rate, single)


def fit_gboost(X, y, params=None, seed: int = 0, feature_names=None) -> EnsembleModel:
    """Logistic-loss boosting: trees fit the residual y - s(F) by squared error,
    each leaf then takes one Newton step."""
    return _fit_boosting("gboost", X, y, params, seed, feature_names)


def fit_reg2boost(X, y, params=None, seed: int = 0, feature_names=None) -> EnsembleModel:
    """Second-order boosting with gamma/alpha/lambda regularisation and row/column sampling."""
    return _fit_boosting("reg2boost", X, y, params, seed, feature_names)


FITTERS = {"dtree": fit_dtree, "rforest": fit_forest, "gboost": fit_gboost,
           "reg2boost": fit_reg2boost}


def fit_model(family: str, X, y, params=None, seed: int = 0, feature_names=None) -> EnsembleModel:
    if family not in FITTERS:
        raise ValueError(f"unknown family {family!r}")
    return FITTERS[family](X, y, params, seed, feature_names)


def warm_start(model: EnsembleModel, X_new, y_new, n_additional_estimators: int,
               learning_rate: Optional[float] = None) -> EnsembleModel:
    """Freeze the fitted trees and append new stages fitted on (X_new, y_new)."""
    if model.family not in BOOSTING:
        raise UnsupportedWarmStart(f"warm start needs a boosting family, got {model.family!r}")
    if n_additional_estimators < 0:
        raise ValueError("n_additional_estimators must be >= 0")
    X, y = _check_xy(X_new, y_new)
    _check_columns(model, X)
    lr = model.learning_rate if learning_rate is None else float(learning_rate)
    if not lr > 0:
        raise ValueError("learning_rate must be > 0")
    out = replace(model, trees=list(model.trees), tree_weights=list(model.tree_weights),
                  warm_starts=model.warm_starts + [
                      {"n_additional_estimators": int(n_additional_estimators),
                       "learning_rate": lr}])
    F = decision_function(model, X)
    return _run_stages(out, X, y, F, int(n_additional_estimators), lr, False)


# ---------------------------------------------------------------- prediction


def _check_columns(model: EnsembleModel, X, feature_names=None):
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise FeatureMismatch(
            f"model expects {len(model.feature_names)} columns, got shape {X.shape}")
    if feature_names is not None and tuple(feature_names) != model.feature_names:
        raise FeatureMismatch("column names differ from the model's feature_names")


def decision_function(model: EnsembleModel, X) -> np.ndarray:
    """Raw log-odds margin of a boosting model."""
    X = np.asarray(X, dtype=float)
    _check_columns(model, X)
    F = np.full(X.shape[0], model.base_score)
    for w, t in zip(model.tree_weights, model.trees):
        F += w * t.predict(X)
    return F


def staged_decision_function(model: EnsembleModel, X):
    X = np.asarray(X, dtype=float)
    _check_columns(model, X)
    F = np.full(X.shape[0], model.base_score)
    yield F.copy()
    for w, t in zip(model.tree_weights, model.trees):
        F += w * t.predict(X)
        yield F.copy()


def predict_proba(model: EnsembleModel, X, feature_names: Optional[Sequence[str]] = None):
    """Class-1 score per row in [0, 1]."""
    X = np.asarray(X, dtype=float)
    _check_columns(model, X, feature_names)
    if model.family in BOOSTING:
        return expit(decision_function(model, X))
    if not model.trees:
        raise ValueError("model has no trees")
    out = np.zeros(X.shape[0])
    for t in model.trees:
        out += t.predict(X)
    return np.clip(out / len(model.trees), 0.0, 1.0)


def importance(model: EnsembleModel) -> dict[str, float]:
    """Total split gain per feature across all trees, normalised to sum to 1."""
    totals = np.zeros(len(model.feature_names))
    for t in model.trees:
        internal = t.feature != LEAF
        np.add.at(totals, t.feature[internal], t.gain[internal])
    s = totals.sum()
    if s > 0:
        totals = totals / s
    return {n: float(v) for n, v in zip(model.feature_names, totals)}
