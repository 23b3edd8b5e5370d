"""Stratified splits, cross-validated grid search, the five cross-exchange fusion
protocols and recursive feature elimination."""

from __future__ import annotations

import itertools
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .evaluation import MetricsReport, UndefinedAuc, report, roc_auc
from .features import (
    FEATURE_NAMES,
    Preprocessor,
    extract_features,
    feature_matrix,
    fit_preprocessor,
)
from .labeling import LabelConfig, LabelResult, is_early_rug, label_history, NO_LIQUIDITY
from .learners import (
    BOOSTING,
    EnsembleModel,
    UnsupportedWarmStart,
    fit_model,
    importance,
    predict_proba,
    warm_start,
)
from .market_data import SOURCES, TokenHistory

PREPROCESSING_KEYS = ("scale_numeric", "scale_time")

FULL_GRIDS = {
    "reg2boost": {
        "learning_rate": [0.05, 0.1, 0.3], "max_depth": [3, 5, 8], "n_estimators": [100, 300],
        "subsample": [0.8, 1.0], "colsample_bytree": [0.8, 1.0], "gamma": [0, 1],
        "reg_alpha": [0, 1], "reg_lambda": [1, 10],
        "scale_numeric": ["none", "zscore"], "scale_time": ["none", "zscore"],
    },
    "gboost": {
        "learning_rate": [0.05, 0.1, 0.3], "max_depth": [3, 5, 8], "n_estimators": [100, 300],
        "subsample": [0.8, 1.0], "loss": ["logistic"], "min_samples_split": [2, 20],
        "max_features": ["all", "sqrt"],
        "scale_numeric": ["none", "zscore"], "scale_time": ["none", "zscore"],
    },
    "rforest": {
        "n_estimators": [100, 300], "max_depth": [3, 5, 8], "min_samples_split": [2, 20],
        "max_features": ["all", "sqrt"], "class_weight": [None, "balanced"],
        "scale_numeric": ["none", "zscore"], "scale_time": ["none", "zscore"],
    },
    "dtree": {
        "max_depth": [3, 5, 8], "min_samples_split": [2, 20], "max_features": ["all", "sqrt"],
        "scale_numeric": ["none", "zscore"], "scale_time": ["none", "zscore"],
    },
}

# Small grids for desk-scale runs; same axes, fewer values.
QUICK_GRIDS = {
    "reg2boost": {"learning_rate": [0.1], "max_depth": [3, 5], "n_estimators": [100],
                  "subsample": [0.8], "colsample_bytree": [0.8]},
    "gboost": {"learning_rate": [0.1], "max_depth": [3, 5], "n_estimators": [100],
               "subsample": [0.8]},
    "rforest": {"n_estimators": [100], "max_depth": [5, 8], "min_samples_split": [20],
                "max_features": ["sqrt"], "class_weight": ["balanced"]},
    "dtree": {"max_depth": [3, 5, 8], "min_samples_split": [20]},
}


class ExperimentError(RuntimeError):
    pass


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("RUGLAB_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- datasets


@dataclass(frozen=True)
class LabeledDataset:
    X: np.ndarray  # raw features, NaN = missing; transformed per fold
    y: np.ndarray
    source: np.ndarray
    token_id: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES
    label_config: Optional[LabelConfig] = None

    def __post_init__(self):
        n = len(self.y)
        if not (self.X.shape[0] == len(self.source) == len(self.token_id) == n):
            raise ValueError("parallel arrays differ in length")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.X[idx], self.y[idx], self.source[idx], self.token_id[idx],
                              self.feature_names, self.label_config)

    def select_features(self, names: Sequence[str]) -> "LabeledDataset":
        cols = [self.feature_names.index(n) for n in names]
        return LabeledDataset(self.X[:, cols], self.y, self.source, self.token_id,
                              tuple(names), self.label_config)

    def from_source(self, source: str) -> "LabeledDataset":
        return self.subset(np.flatnonzero(self.source == source))

    @staticmethod
    def concat(parts: Sequence["LabeledDataset"]) -> "LabeledDataset":
        first = parts[0]
        return LabeledDataset(
            np.vstack([p.X for p in parts]), np.concatenate([p.y for p in parts]),
            np.concatenate([p.source for p in parts]),
            np.concatenate([p.token_id for p in parts]),
            first.feature_names, first.label_config)


def build_dataset(histories: Sequence[TokenHistory], cfg: LabelConfig,
                  drop_early_rugs: bool = False,
                  exclude_no_liquidity: bool = False) -> tuple[LabeledDataset, list[LabelResult]]:
    labels, vectors = [], []
    for h in histories:
        lab = label_history(h, cfg)
        if drop_early_rugs and is_early_rug(lab, cfg):
            continue
        if exclude_no_liquidity and lab.annotation == NO_LIQUIDITY:
            continue
        labels.append(lab)
        vectors.append(extract_features(h, cfg.observation_minutes))
    ds = LabeledDataset(
        X=feature_matrix(vectors),
        y=np.array([lab.label for lab in labels], dtype=np.int64),
        source=np.array([v.source for v in vectors], dtype=object),
        token_id=np.array([v.token_id for v in vectors], dtype=object),
        label_config=cfg,
    )
    return ds, labels


# ---------------------------------------------------------------- splitting


def stratum_keys(dataset: LabeledDataset, strata: Sequence[str]) -> list[tuple]:
    cols = []
    for s in strata:
        if s == "class":
            cols.append(dataset.y.tolist())
        elif s == "source":
            cols.append(dataset.source.tolist())
        else:
            raise ValueError(f"unknown stratum key {s!r}; use 'class' or 'source'")
    return list(zip(*cols)) if cols else [()] * len(dataset)


def _groups(keys: list[tuple]) -> list[np.ndarray]:
    by: dict[tuple, list[int]] = {}
    for i, k in enumerate(keys):
        by.setdefault(k, []).append(i)
    return [np.array(by[k], dtype=np.int64) for k in sorted(by, key=repr)]


def stratified_split(dataset: LabeledDataset, test_fraction: float = 0.2,
                     strata: Sequence[str] = ("class",), seed: int = 0):
    """Per-stratum shuffled holdout; returns sorted (train_idx, test_idx)."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for rows in _groups(stratum_keys(dataset, strata)):
        rows = rng.permutation(rows)
        if len(rows) == 1:
            warnings.warn("stratum with a single row kept in the training part", RuntimeWarning,
                          stacklevel=2)
            train.append(rows)
            continue
        n_test = int(round(test_fraction * len(rows)))
        test.append(rows[:n_test])
        train.append(rows[n_test:])
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.empty(0, np.int64)
    return cat(train), cat(test)


def stratified_kfold(dataset: LabeledDataset, k: int = 3, strata: Sequence[str] = ("class",),
                     seed: int = 0) -> list[np.ndarray]:
    """k disjoint folds covering every row; per-stratum fold counts differ by at most one."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(dataset):
        raise ValueError(f"k={k} exceeds the number of rows ({len(dataset)})")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for rows in _groups(stratum_keys(dataset, strata)):
        rows = rng.permutation(rows)
        for i, r in enumerate(rows):
            folds[(offset + i) % k].append(int(r))
        offset += len(rows)
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


# ---------------------------------------------------------------- pipelines


@dataclass
class Pipeline:
    preprocessor: Preprocessor
    model: EnsembleModel

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self.model, self.preprocessor.transform(X))


def split_params(params: dict) -> tuple[dict, dict]:
    pre = {k: params[k] for k in PREPROCESSING_KEYS if k in params}
    model = {k: v for k, v in params.items() if k not in PREPROCESSING_KEYS}
    return pre, model


def fit_pipeline(family: str, params: dict, X, y, seed: int = 0,
                 feature_names: Sequence[str] = FEATURE_NAMES) -> Pipeline:
    pre_params, model_params = split_params(params)
    pre = fit_preprocessor(X, feature_names, pre_params.get("scale_numeric", "none"),
                           pre_params.get("scale_time", "none"))
    model = fit_model(family, pre.transform(X), y, model_params, seed, feature_names)
    return Pipeline(pre, model)


# ---------------------------------------------------------------- grid search


def expand_grid(grid: dict) -> list[dict]:
    if not grid:
        raise ValueError("empty grid")
    keys = list(grid)
    values = [v if isinstance(v, (list, tuple)) else [v] for v in grid.values()]
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


@dataclass
class GridResult:
    best_params: dict
    best_score: float
    table: list[dict]  # one row per grid point: params, fold_aucs, mean_auc


def _cv_cell(task):
    family, params, X, y, names, train, val, seed = task
    try:
        pipe = fit_pipeline(family, params, X[train], y[train], seed, names)
        return roc_auc(pipe.predict_proba(X[val]), y[val])
    except UndefinedAuc:
        return float("nan")


def grid_search(family: str, grid: dict, dataset: LabeledDataset, k: int = 3, seed: int = 0,
                strata: Sequence[str] = ("class",)) -> GridResult:
    """Exhaustive search; each point scored by mean validation AUC over k stratified folds."""
    points = expand_grid(grid)
    folds = stratified_kfold(dataset, k, strata, seed)
    every = np.arange(len(dataset))
    tasks = []
    for i, params in enumerate(points):
        for j, val in enumerate(folds):
            train = np.setdiff1d(every, val, assume_unique=True)
            tasks.append((family, params, dataset.X, dataset.y, dataset.feature_names,
                          train, val, derive_seed(seed, i, j)))
    workers = min(worker_count(), len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            scores = list(ex.map(_cv_cell, tasks))
    else:
        scores = [_cv_cell(t) for t in tasks]

    table, best, best_score = [], None, -np.inf
    for i, params in enumerate(points):
        fold_aucs = scores[i * k:(i + 1) * k]
        failed = any(np.isnan(fold_aucs))
        mean = float("nan") if failed else float(np.mean(fold_aucs))
        table.append({"params": params, "fold_aucs": fold_aucs, "mean_auc": mean})
        if not failed and mean > best_score:
            best, best_score = params, mean
    if best is None:
        raise ExperimentError("every grid point failed (single-class folds)")
    return GridResult(best, float(best_score), table)


# ---------------------------------------------------------------- fusion protocols


@dataclass(frozen=True)
class FusionProtocol:
    id: int
    train_sources: tuple[str, ...]
    test_source: Optional[str]
    warm_start: bool

    @classmethod
    def of(cls, pid: int, test_source: str = "stonfi") -> "FusionProtocol":
        if pid == 1:
            return cls(1, ("stonfi",), "stonfi", False)
        if pid == 2:
            return cls(2, ("dedust",), "dedust", False)
        if pid == 3:
            if test_source not in SOURCES:
                raise ValueError(f"unknown test source {test_source!r}")
            return cls(3, ("stonfi", "dedust"), test_source, False)
        if pid == 4:
            return cls(4, ("stonfi", "dedust"), "dedust", True)
        if pid == 5:
            return cls(5, ("dedust", "stonfi"), "stonfi", True)
        raise ValueError(f"protocol must be 1..5, got {pid}")

    @property
    def train_label(self) -> str:
        if self.warm_start:
            return "->".join(self.train_sources)
        return "+".join(self.train_sources)


@dataclass
class ExperimentConfig:
    approach: str = "tvl"
    protocol: int = 1
    family: str = "reg2boost"
    grid: Optional[dict] = None
    seed: int = 0
    test_fraction: float = 0.2
    k: int = 3
    label: LabelConfig = field(default_factory=LabelConfig)
    test_source: str = "stonfi"  # protocol 3 only
    n_additional: Optional[int] = None  # warm-start stages; default = source n_estimators
    warm_learning_rate: Optional[float] = None
    threshold: float = 0.5

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.k < 2:
            raise ValueError("k must be >= 2")

    def resolved_grid(self) -> dict:
        return self.grid if self.grid is not None else QUICK_GRIDS[self.family]


@dataclass
class ExperimentReport:
    identity: dict
    metrics: MetricsReport
    importances: dict[str, float]
    best_params: dict
    cv_table: list[dict]
    extras: dict
    pipeline: Pipeline

    def to_json_dict(self) -> dict:
        d = self.metrics.to_dict()
        d.update(self.identity)
        d["best_params"] = self.best_params
        d["extras"] = self.extras
        return d


def _need(ds: Optional[LabeledDataset], source: str) -> LabeledDataset:
    if ds is None or len(ds) == 0:
        raise ExperimentError(f"protocol needs a {source} dataset")
    if len(np.unique(ds.y)) < 2:
        raise ExperimentError(f"{source} dataset holds a single class; nothing to train")
    return ds


def run_protocol(config: ExperimentConfig, dataset_stonfi: Optional[LabeledDataset],
                 dataset_dedust: Optional[LabeledDataset]) -> ExperimentReport:
    proto = FusionProtocol.of(config.protocol, config.test_source)
    if proto.warm_start and config.family not in BOOSTING:
        raise UnsupportedWarmStart(
            f"protocols 4 and 5 need a boosting family, got {config.family!r}")
    data = {"stonfi": dataset_stonfi, "dedust": dataset_dedust}
    for s in set(proto.train_sources) | {proto.test_source}:
        _need(data[s], s)
    grid = config.resolved_grid()
    seed = config.seed
    extras: dict = {}

    if proto.id in (1, 2):
        ds = data[proto.test_source]
        tr, te = stratified_split(ds, config.test_fraction, ("class",), seed)
        train, test = ds.subset(tr), ds.subset(te)
        search = grid_search(config.family, grid, train, config.k, seed, ("class",))
        pipe = fit_pipeline(config.family, search.best_params, train.X, train.y, seed,
                            train.feature_names)
    elif proto.id == 3:
        ds = LabeledDataset.concat([data["stonfi"], data["dedust"]])
        tr, te = stratified_split(ds, config.test_fraction, ("class", "source"), seed)
        train, test_all = ds.subset(tr), ds.subset(te)
        test = test_all.from_source(proto.test_source)
        search = grid_search(config.family, grid, train, config.k, seed, ("class", "source"))
        pipe = fit_pipeline(config.family, search.best_params, train.X, train.y, seed,
                            train.feature_names)
    else:
        src, dst = proto.train_sources
        a, b = data[src], data[dst]
        a_tr, _ = stratified_split(a, config.test_fraction, ("class",), seed)
        b_tr, b_te = stratified_split(b, config.test_fraction, ("class",), seed)
        train_a, train_b, test = a.subset(a_tr), b.subset(b_tr), b.subset(b_te)
        search = grid_search(config.family, grid, train_a, config.k, seed, ("class",))
        base = fit_pipeline(config.family, search.best_params, train_a.X, train_a.y, seed,
                            train_a.feature_names)
        n_add = config.n_additional
        if n_add is None:
            n_add = int(base.model.params["n_estimators"])
        warmed = warm_start(base.model, base.preprocessor.transform(train_b.X), train_b.y,
                            n_add, config.warm_learning_rate)
        frozen = report(base.predict_proba(test.X), test.y, config.threshold)
        extras.update({
            "n_trees_base": base.model.n_trees,
            "n_additional": n_add,
            "n_trees_final": warmed.n_trees,
            "frozen_auc": frozen.auc,
            "n_train_target": int(len(train_b)),
        })
        pipe = Pipeline(base.preprocessor, warmed)
        train = train_a

    if len(test) == 0:
        raise ExperimentError("empty test split")
    metrics = report(pipe.predict_proba(test.X), test.y, config.threshold)
    extras.setdefault("n_train", int(len(train)))
    extras["n_test"] = int(len(test))
    extras["cv_auc"] = search.best_score
    identity = {
        "approach": config.approach, "protocol": proto.id, "family": config.family,
        "train_source": proto.train_label, "test_source": proto.test_source, "seed": seed,
    }
    return ExperimentReport(identity, metrics, importance(pipe.model), search.best_params,
                            search.table, extras, pipe)


# ---------------------------------------------------------------- RFE


@dataclass
class RfeResult:
    retained: list[str]
    eliminated: list[str]  # in elimination order
    trace: list[tuple[int, float]]  # (n_features, validation AUC) after each refit

    @property
    def ranking(self) -> list[str]:
        """Most important first: survivors, then eliminations in reverse order."""
        return self.retained + self.eliminated[::-1]


def rfe(family: str, params: dict, dataset: LabeledDataset, n_target_features: int,
        step: int = 1, seed: int = 0, test_fraction: float = 0.2) -> RfeResult:
    """Refit, drop the ``step`` least important features, repeat until the target count."""
    names = list(dataset.feature_names)
    if not 1 <= n_target_features <= len(names):
        raise ValueError(f"n_target_features must lie in [1, {len(names)}]")
    if step < 1:
        raise ValueError("step must be >= 1")
    if n_target_features < len(names) and step >= len(names):
        raise ValueError(f"step={step} is not below the feature count {len(names)}")
    tr, va = stratified_split(dataset, test_fraction, ("class",), seed)
    train, val = dataset.subset(tr), dataset.subset(va)
    active = list(names)
    eliminated: list[str] = []
    trace = []
    while True:
        t = train.select_features(active)
        pipe = fit_pipeline(family, params, t.X, t.y, seed, active)
        try:
            auc = roc_auc(pipe.predict_proba(val.select_features(active).X), val.y)
        except UndefinedAuc:
            auc = float("nan")
        trace.append((len(active), auc))
        if len(active) <= n_target_features:
            break
        imp = importance(pipe.model)
        drop = min(step, len(active) - n_target_features)
        order = sorted(range(len(active)), key=lambda i: (imp[active[i]], i))
        gone = [active[i] for i in order[:drop]]
        eliminated += gone
        active = [f for f in active if f not in gone]
    return RfeResult(active, eliminated, trace)
