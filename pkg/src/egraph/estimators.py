"""Scikit-learn style classifier heads over precomputed feature vectors.

Three interchangeable heads share the fit/predict surface:

* ``EGLayerClassifier`` — the graph layer: an EMA prototype bank, learnable
  adjacency amplification, one or two rounds of symmetric-normalised graph
  aggregation, and cosine-softmax scoring against global graph embeddings,
  trained with the supervised + alignment + regularisation objective.
* ``LPLayerClassifier`` — a single learned projection into the graph
  dimension followed by cosine-softmax against the same embeddings.
* ``LinearSoftmaxClassifier`` — plain softmax over linear logits, no graph.

All heads expect row features; inputs are L2-normalised internally.  Labels
may be any hashable values; for the graph-backed heads each distinct label
must name a node of the supplied ``GlobalGraph``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .autodiff import Tape
from .config import substream
from .errors import DataError, ParameterError
from .knowledge import GlobalGraph
from .layer import (
    EGLayerParams,
    LayerConfig,
    LinearHeadParams,
    LPLayerParams,
    cosine_softmax,
    cross_entropy,
    layer_forward,
    linear_forward,
    lp_forward,
    train_step,
)
from .prototypes import PrototypeBank
from .validation import check_labels, normalize_rows

# ---------------------------------------------------------------------------
# Frozen snapshots consumed by the evaluation protocols


@dataclass
class EGLayerSnapshot:
    class_names: tuple
    params: EGLayerParams
    bank: PrototypeBank
    Z: np.ndarray
    amend_mode: str
    activation: str

    def project(self, x) -> np.ndarray:
        """Push features through the aggregation path; returns the projected
        query rows in the graph dimension."""
        x = normalize_rows(x)
        tape = Tape()
        fwd = layer_forward(tape, self.params, self.bank, x,
                            amend_mode=self.amend_mode, activation=self.activation)
        return fwd.x_prime.value

    def predict_proba(self, x) -> np.ndarray:
        x = normalize_rows(x)
        tape = Tape()
        fwd = layer_forward(tape, self.params, self.bank, x,
                            amend_mode=self.amend_mode, activation=self.activation)
        return cosine_softmax(fwd.x_prime, self.Z).value


@dataclass
class LPLayerSnapshot:
    class_names: tuple
    params: LPLayerParams
    Z: np.ndarray

    def project(self, x) -> np.ndarray:
        return normalize_rows(x) @ self.params.W_p.T

    def predict_proba(self, x) -> np.ndarray:
        tape = Tape()
        return lp_forward(tape.leaf(self.params.W_p), normalize_rows(x), self.Z).value


@dataclass
class LinearHeadSnapshot:
    class_names: tuple
    params: LinearHeadParams

    def project(self, x) -> np.ndarray:
        # The plain baseline has no projection: raw features.
        return normalize_rows(x)

    def predict_proba(self, x) -> np.ndarray:
        tape = Tape()
        return linear_forward(tape.leaf(self.params.W), normalize_rows(x)).value


# ---------------------------------------------------------------------------
# Estimators


class _FeatureHead(BaseEstimator, ClassifierMixin, TransformerMixin):
    """Shared fit loop: uniform batches, one gradient step per batch."""

    def _validate_fit_args(self, x, y):
        x = normalize_rows(x)
        y = check_labels(y, x.shape[0])
        if self.steps < 0:
            raise ParameterError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            raise ParameterError(f"lr must be >= 0, got {self.lr}")
        classes, y_idx = np.unique(y, return_inverse=True)
        if classes.shape[0] < 2:
            raise DataError("need at least two classes to fit a classifier")
        return x, y_idx, classes

    def _graph_for(self, classes) -> GlobalGraph:
        if self.global_graph is None:
            raise ParameterError(f"{type(self).__name__} requires global_graph")
        if not isinstance(self.global_graph, GlobalGraph):
            raise ParameterError("global_graph must be a GlobalGraph instance")
        return self.global_graph.subset([str(c) for c in classes])

    def _batches(self, n_samples):
        rng = substream(self.seed, "batches")
        size = min(self.batch_size, n_samples)
        for _ in range(self.steps):
            yield rng.choice(n_samples, size=size, replace=False)

    def predict_proba(self, x) -> np.ndarray:
        check_is_fitted(self)
        return self.snapshot().predict_proba(x)

    def predict(self, x) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(x), axis=1)]

    def transform(self, x) -> np.ndarray:
        check_is_fitted(self)
        return self.snapshot().project(x)


class EGLayerClassifier(_FeatureHead):
    def __init__(self, global_graph=None, sigma_local=0.05, beta=0.9,
                 alpha1=1.0, alpha2=0.01, gcn_layers=1, activation="rectified",
                 adjacency_loss="bce", regularizer="l2", amend_mode="hadamard",
                 lr=0.1, steps=200, batch_size=32, seed=0):
        self.global_graph = global_graph
        self.sigma_local = sigma_local
        self.beta = beta
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.gcn_layers = gcn_layers
        self.activation = activation
        self.adjacency_loss = adjacency_loss
        self.regularizer = regularizer
        self.amend_mode = amend_mode
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, x, y):
        x, y_idx, classes = self._validate_fit_args(x, y)
        graph = self._graph_for(classes)
        cfg = LayerConfig(alpha1=self.alpha1, alpha2=self.alpha2,
                          adjacency_loss=self.adjacency_loss,
                          regularizer=self.regularizer,
                          amend_mode=self.amend_mode,
                          activation=self.activation, lr=self.lr)
        params = EGLayerParams.init(len(classes), x.shape[1], graph.dim,
                                    self.gcn_layers, substream(self.seed, "init"))
        bank = PrototypeBank.create(graph.class_names, x.shape[1],
                                    beta=self.beta, sigma_local=self.sigma_local)
        history = []
        for step, idx in enumerate(self._batches(x.shape[0])):
            res = train_step(bank, params, x[idx], y_idx[idx],
                             graph.Z, graph.A, cfg)
            if not res.warmup:
                history.append({"step": step, **res.losses})
        self.classes_ = classes
        self.params_ = params
        self.bank_ = bank
        self.graph_ = graph
        self.loss_history_ = history
        self.n_features_in_ = x.shape[1]
        return self

    def snapshot(self) -> EGLayerSnapshot:
        check_is_fitted(self)
        return EGLayerSnapshot(
            class_names=self.graph_.class_names,
            params=EGLayerParams(W_a=self.params_.W_a.copy(),
                                 gcn_weights=[w.copy() for w in self.params_.gcn_weights]),
            bank=PrototypeBank(class_names=self.bank_.class_names,
                               S=self.bank_.snapshot(),
                               seen=self.bank_.seen.copy(),
                               beta=self.bank_.beta,
                               sigma_local=self.bank_.sigma_local),
            Z=self.graph_.Z,
            amend_mode=self.amend_mode,
            activation=self.activation,
        )


class LPLayerClassifier(_FeatureHead):
    def __init__(self, global_graph=None, lr=0.1, steps=200, batch_size=32, seed=0):
        self.global_graph = global_graph
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, x, y):
        x, y_idx, classes = self._validate_fit_args(x, y)
        graph = self._graph_for(classes)
        params = LPLayerParams.init(x.shape[1], graph.dim, substream(self.seed, "init"))
        history = []
        for step, idx in enumerate(self._batches(x.shape[0])):
            tape = Tape()
            w_p = tape.leaf(params.W_p)
            probs = lp_forward(w_p, x[idx], graph.Z)
            loss = cross_entropy(probs, y_idx[idx])
            grads = tape.backward(loss)
            params.W_p -= self.lr * grads[w_p.id]
            history.append({"step": step, "L": float(loss.value[0, 0]),
                            "L_sup": float(loss.value[0, 0]), "L_a": 0.0, "L_reg": 0.0})
        self.classes_ = classes
        self.params_ = params
        self.graph_ = graph
        self.loss_history_ = history
        self.n_features_in_ = x.shape[1]
        return self

    def snapshot(self) -> LPLayerSnapshot:
        check_is_fitted(self)
        return LPLayerSnapshot(
            class_names=self.graph_.class_names,
            params=LPLayerParams(W_p=self.params_.W_p.copy()),
            Z=self.graph_.Z,
        )


class LinearSoftmaxClassifier(_FeatureHead):
    def __init__(self, lr=0.1, steps=200, batch_size=32, seed=0):
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, x, y):
        x, y_idx, classes = self._validate_fit_args(x, y)
        params = LinearHeadParams.init(len(classes), x.shape[1],
                                       substream(self.seed, "init"))
        history = []
        for step, idx in enumerate(self._batches(x.shape[0])):
            tape = Tape()
            w = tape.leaf(params.W)
            probs = linear_forward(w, x[idx])
            loss = cross_entropy(probs, y_idx[idx])
            grads = tape.backward(loss)
            params.W -= self.lr * grads[w.id]
            history.append({"step": step, "L": float(loss.value[0, 0]),
                            "L_sup": float(loss.value[0, 0]), "L_a": 0.0, "L_reg": 0.0})
        self.classes_ = classes
        self.params_ = params
        self.loss_history_ = history
        self.n_features_in_ = x.shape[1]
        return self

    def snapshot(self) -> LinearHeadSnapshot:
        check_is_fitted(self)
        return LinearHeadSnapshot(
            class_names=tuple(str(c) for c in self.classes_),
            params=LinearHeadParams(W=self.params_.W.copy()),
        )


def make_head(config, global_graph=None):
    """Estimator instance for a RunConfig; CLI glue."""
    kwargs = dict(lr=config.lr, steps=config.steps,
                  batch_size=config.batch_size, seed=config.seed)
    if config.head == "eglayer":
        return EGLayerClassifier(
            global_graph=global_graph, sigma_local=config.sigma_local,
            beta=config.beta, alpha1=config.alpha1, alpha2=config.alpha2,
            gcn_layers=config.gcn_layers, activation=config.activation,
            adjacency_loss=config.adjacency_loss, regularizer=config.regularizer,
            amend_mode=config.amend_mode, **kwargs)
    if config.head == "lplayer":
        return LPLayerClassifier(global_graph=global_graph, **kwargs)
    if config.head == "linear":
        return LinearSoftmaxClassifier(**kwargs)
    raise ParameterError(f"unknown head '{config.head}'")
