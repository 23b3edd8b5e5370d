"""JSON model files.

Floats are written with Python's shortest round-trip repr, so a reloaded model
predicts bit-for-bit identically. A sha256 checksum over the canonical body
guards against truncation and hand edits.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import IO, Optional, Union

import numpy as np

from ..features import Preprocessor
from .ensemble import FAMILIES, EnsembleModel
from .tree import LEAF, DecisionTree

FORMAT_VERSION = 1


class ModelLoadError(ValueError):
    pass


def _tree_to_dict(t: DecisionTree) -> dict:
    nodes = []
    for i in range(t.n_nodes):
        internal = t.feature[i] != LEAF
        nodes.append({
            "feature": int(t.feature[i]),
            "threshold": float(t.threshold[i]) if internal else None,
            "left": int(t.left[i]),
            "right": int(t.right[i]),
            "value": float(t.value[i]),
            "gain": float(t.gain[i]),
            "n_samples": int(t.n_samples[i]),
        })
    return {"nodes": nodes}


def _tree_from_dict(d: dict) -> DecisionTree:
    nodes = d["nodes"]
    if not nodes:
        raise ModelLoadError("tree with no nodes")
    n = len(nodes)
    t = DecisionTree(
        feature=np.array([x["feature"] for x in nodes], dtype=np.int64),
        threshold=np.array([0.0 if x["threshold"] is None else x["threshold"] for x in nodes],
                           dtype=float),
        left=np.array([x["left"] for x in nodes], dtype=np.int64),
        right=np.array([x["right"] for x in nodes], dtype=np.int64),
        value=np.array([x["value"] for x in nodes], dtype=float),
        gain=np.array([x["gain"] for x in nodes], dtype=float),
        n_samples=np.array([x.get("n_samples", 0) for x in nodes], dtype=np.int64),
    )
    internal = t.feature != LEAF
    if np.any(internal & ((t.left < 0) | (t.left >= n) | (t.right < 0) | (t.right >= n))):
        raise ModelLoadError("tree node points outside the node table")
    return t


def model_to_dict(model: EnsembleModel, preprocessor: Optional[Preprocessor] = None) -> dict:
    body = {
        "format_version": FORMAT_VERSION,
        "family": model.family,
        "params": model.params,
        "base_score": float(model.base_score),
        "learning_rate": float(model.learning_rate),
        "class_weight": None if model.class_weight is None else list(model.class_weight),
        "feature_names": list(model.feature_names),
        "seed": int(model.seed),
        "warm_starts": model.warm_starts,
        "trees": [dict(_tree_to_dict(t), weight=float(w))
                  for t, w in zip(model.trees, model.tree_weights)],
    }
    if preprocessor is not None:
        body["preprocessor"] = preprocessor.to_dict()
    body["checksum"] = _checksum(body)
    return body


def _canonical(body: dict) -> str:
    return json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _checksum(body: dict) -> str:
    payload = {k: v for k, v in body.items() if k != "checksum"}
    return hashlib.sha256(_canonical(payload).encode()).hexdigest()


def dumps_model(model: EnsembleModel, preprocessor: Optional[Preprocessor] = None) -> str:
    return json.dumps(model_to_dict(model, preprocessor), sort_keys=True, indent=1,
                      allow_nan=False) + "\n"


def save_model(model: EnsembleModel, sink: Union[str, Path, IO[str]],
               preprocessor: Optional[Preprocessor] = None):
    text = dumps_model(model, preprocessor)
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8")
    else:
        sink.write(text)


def model_from_dict(body: dict) -> tuple[EnsembleModel, Optional[Preprocessor]]:
    if body.get("format_version") != FORMAT_VERSION:
        raise ModelLoadError(
            f"unsupported format_version {body.get('format_version')!r}; expected {FORMAT_VERSION}")
    if body.get("checksum") != _checksum(body):
        raise ModelLoadError("checksum mismatch; the model file was altered or truncated")
    if body.get("family") not in FAMILIES:
        raise ModelLoadError(f"unknown family tag {body.get('family')!r}")
    try:
        trees = [_tree_from_dict(t) for t in body["trees"]]
        model = EnsembleModel(
            family=body["family"],
            params=body["params"],
            feature_names=tuple(body["feature_names"]),
            trees=trees,
            tree_weights=[float(t["weight"]) for t in body["trees"]],
            base_score=float(body["base_score"]),
            learning_rate=float(body["learning_rate"]),
            class_weight=None if body["class_weight"] is None else tuple(body["class_weight"]),
            seed=int(body["seed"]),
            warm_starts=list(body.get("warm_starts", [])),
        )
    except (KeyError, TypeError) as e:
        raise ModelLoadError(f"malformed model file: {e}") from None
    pre = body.get("preprocessor")
    return model, (Preprocessor.from_dict(pre) if pre is not None else None)


def loads_pipeline(text: str) -> tuple[EnsembleModel, Optional[Preprocessor]]:
    try:
        body = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelLoadError(f"model file is not valid JSON ({e}); truncated?") from None
    if not isinstance(body, dict):
        raise ModelLoadError("model file must hold a JSON object")
    return model_from_dict(body)


def load_pipeline(source: Union[str, Path, IO[str]]):
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    return loads_pipeline(text)


def load_model(source: Union[str, Path, IO[str]]) -> EnsembleModel:
    return load_pipeline(source)[0]


def model_hash(model: EnsembleModel, preprocessor: Optional[Preprocessor] = None) -> str:
    return hashlib.sha256(dumps_model(model, preprocessor).encode()).hexdigest()
