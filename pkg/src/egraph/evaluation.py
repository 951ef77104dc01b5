"""Evaluation protocols over frozen model snapshots: episodic few-shot,
cross-domain, zero-shot against graph node embeddings, and threshold-based
open-set classification.

Every function here is pure given (snapshot, data, seed): repeated calls
return identical numbers.  A snapshot is anything with ``class_names``,
``project(X) -> ndarray`` and ``predict_proba(X) -> ndarray``.
"""

from __future__ import annotations

import numpy as np

from .datasets import DatasetSplit, Episode, EpisodeSpec, sample_episodes
from .errors import DataError, ParameterError
from .knowledge import GlobalGraph
from .validation import cosine_rows

OUTLIER = -1


def mean_ci95(values) -> tuple[float, float]:
    """Mean and normal-approximation 95% half-width (1.96 * stderr)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ParameterError("cannot aggregate zero values")
    if values.size == 1:
        return float(values[0]), 0.0
    stderr = values.std(ddof=1) / np.sqrt(values.size)
    return float(values.mean()), float(1.96 * stderr)


def episode_accuracy(snapshot, episode: Episode) -> float:
    """Nearest-prototype accuracy for one episode.

    Support and query features are pushed through the snapshot's projection
    in a single pass, class prototypes are the means of the projected support
    rows, and queries match by cosine similarity.
    """
    if episode.support_x.shape[0] == 0:
        raise DataError("episode has no support samples; use the zero-shot protocol")
    stacked = np.vstack([episode.support_x, episode.query_x])
    projected = snapshot.project(stacked)
    k = episode.support_x.shape[0]
    proj_s, proj_q = projected[:k], projected[k:]
    ways = np.unique(episode.support_y)
    protos = np.vstack([proj_s[episode.support_y == w].mean(axis=0) for w in ways])
    preds = ways[np.argmax(cosine_rows(proj_q, protos), axis=1)]
    return float(np.mean(preds == episode.query_y))


def prototype_eval(snapshot, episodes) -> tuple[float, float]:
    """Mean episode accuracy with its 95% confidence half-width."""
    accs = [episode_accuracy(snapshot, ep) for ep in episodes]
    return mean_ci95(accs)


def fewshot_eval(snapshot, split: DatasetSplit, spec: EpisodeSpec) -> tuple[float, float]:
    """Sample ``spec.episodes`` episodes from the split and evaluate them."""
    return prototype_eval(snapshot, sample_episodes(split, spec))


def zero_shot_eval(snapshot, graph: GlobalGraph, novel: DatasetSplit) -> float:
    """Classify projected queries against the graph embeddings of the novel
    classes; no support samples are used at all."""
    if novel.n_samples == 0:
        raise ParameterError("novel split is empty")
    reps = np.vstack([graph.Z[graph.index_of(name)] for name in novel.class_names])
    projected = snapshot.project(novel.features)
    if projected.shape[1] != reps.shape[1]:
        raise DataError(
            f"snapshot projects to {projected.shape[1]} dimensions but graph "
            f"embeddings have {reps.shape[1]}; zero-shot needs a projecting head"
        )
    preds = np.argmax(cosine_rows(projected, reps), axis=1)
    return float(np.mean(preds == novel.labels))


def open_set_classify(probs: np.ndarray, threshold: float) -> np.ndarray:
    """Argmax labels, demoted to the outlier label when the winning
    probability falls below the threshold."""
    if not 0.0 < threshold < 1.0:
        raise ParameterError(f"threshold must lie in (0, 1), got {threshold}")
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] < 1:
        raise DataError(f"probabilities must be a 2-D matrix, got shape {probs.shape}")
    sums = probs.sum(axis=1)
    if probs.size and (np.any(probs < -1e-9) or np.any(np.abs(sums - 1.0) > 1e-6)):
        raise DataError("probability rows must be nonnegative and sum to 1")
    labels = np.argmax(probs, axis=1)
    labels[probs.max(axis=1) < threshold] = OUTLIER
    return labels


def cross_domain_eval(snapshot, target: DatasetSplit) -> float:
    """Plain accuracy on a target-domain split with no adaptation.

    Every target class must be one of the snapshot's training classes.
    """
    if target.n_samples == 0:
        raise ParameterError("target split is empty")
    lookup = {name: i for i, name in enumerate(snapshot.class_names)}
    mapped = []
    for name in target.class_names:
        if name not in lookup:
            raise DataError(f"target class '{name}' was not a training class")
        mapped.append(lookup[name])
    truth = np.array(mapped)[target.labels]
    preds = np.argmax(snapshot.predict_proba(target.features), axis=1)
    return float(np.mean(preds == truth))


def open_set_eval(snapshot, split: DatasetSplit, threshold: float) -> float:
    """Accuracy where samples of classes unknown to the snapshot count as
    correct only when rejected as outliers."""
    if split.n_samples == 0:
        raise ParameterError("evaluation split is empty")
    lookup = {name: i for i, name in enumerate(snapshot.class_names)}
    mapped = np.array([lookup.get(name, OUTLIER) for name in split.class_names])
    truth = mapped[split.labels]
    preds = open_set_classify(snapshot.predict_proba(split.features), threshold)
    return float(np.mean(preds == truth))
