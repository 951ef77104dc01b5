"""Checkpoint and result serialisation: UTF-8 JSON with sorted keys so that
identical runs produce identical bytes."""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .config import RunConfig
from .errors import DataError
from .estimators import (
    EGLayerSnapshot,
    LinearHeadSnapshot,
    LPLayerSnapshot,
)
from .knowledge import GlobalGraph
from .layer import EGLayerParams, LinearHeadParams, LPLayerParams
from .prototypes import PrototypeBank


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_text(path, text: str) -> None:
    """Atomic write: the target file appears complete or not at all."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def graph_to_dict(graph: GlobalGraph) -> dict:
    return {
        "class_names": list(graph.class_names),
        "Z": graph.Z.tolist(),
        "A": graph.A.tolist(),
    }


def graph_from_dict(d: dict) -> GlobalGraph:
    try:
        return GlobalGraph(class_names=tuple(d["class_names"]),
                           Z=np.array(d["Z"], dtype=np.float64),
                           A=np.array(d["A"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed graph record: {e}") from None


def load_semantic_graph(path) -> GlobalGraph:
    try:
        with open(path, encoding="utf-8") as fh:
            return graph_from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read graph file {path}: {e}") from None


def checkpoint_dict(estimator, config: RunConfig, full_graph: GlobalGraph | None) -> dict:
    """Serialise a fitted head.  The stored graph is the full input graph (it
    may cover more classes than were trained on, which zero-shot needs)."""
    d = {"head": config.head, "config": config.to_dict(),
         "classes": [str(c) for c in estimator.classes_]}
    params = estimator.params_
    if config.head == "eglayer":
        d["W_a"] = params.W_a.tolist()
        d["W_gcn"] = params.gcn_weights[-1].tolist()
        if len(params.gcn_weights) == 2:
            d["W_gcn_hidden"] = params.gcn_weights[0].tolist()
        d["bank"] = estimator.bank_.to_dict()
    elif config.head == "lplayer":
        d["W_p"] = params.W_p.tolist()
    else:
        d["W"] = params.W.tolist()
    if full_graph is not None:
        d["global_graph"] = graph_to_dict(full_graph)
    return d


def load_checkpoint(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from None
    if not isinstance(d, dict) or "head" not in d or "config" not in d:
        raise DataError(f"checkpoint {path} is missing required keys")
    return d


def snapshot_from_checkpoint(d: dict):
    """Rebuild the frozen evaluation snapshot stored in a checkpoint dict."""
    config = RunConfig.from_dict(d["config"])
    head = d["head"]
    try:
        classes = tuple(str(c) for c in d["classes"])
    except KeyError:
        raise DataError("checkpoint is missing the class list") from None

    def arr(key):
        try:
            return np.array(d[key], dtype=np.float64)
        except KeyError:
            raise DataError(f"checkpoint is missing '{key}'") from None

    if head == "eglayer":
        weights = [arr("W_gcn")]
        if "W_gcn_hidden" in d:
            weights.insert(0, arr("W_gcn_hidden"))
        bank = PrototypeBank.from_dict(d.get("bank") or {})
        graph = graph_from_dict(d.get("global_graph") or {}).subset(classes)
        return EGLayerSnapshot(
            class_names=classes,
            params=EGLayerParams(W_a=arr("W_a"), gcn_weights=weights),
            bank=bank,
            Z=graph.Z,
            amend_mode=config.amend_mode,
            activation=config.activation,
        )
    if head == "lplayer":
        graph = graph_from_dict(d.get("global_graph") or {}).subset(classes)
        return LPLayerSnapshot(class_names=classes,
                               params=LPLayerParams(W_p=arr("W_p")), Z=graph.Z)
    if head == "linear":
        return LinearHeadSnapshot(class_names=classes,
                                  params=LinearHeadParams(W=arr("W")))
    raise DataError(f"checkpoint head '{head}' is not recognised")


def full_graph_from_checkpoint(d: dict) -> GlobalGraph:
    if "global_graph" not in d:
        raise DataError("checkpoint does not embed a global graph")
    return graph_from_dict(d["global_graph"])


def losses_to_csv(history) -> str:
    lines = ["step,L,L_sup,L_a,L_reg"]
    for row in history:
        lines.append(f"{row['step']},{row['L']!r},{row['L_sup']!r},"
                     f"{row['L_a']!r},{row['L_reg']!r}")
    return "\n".join(lines) + "\n"
