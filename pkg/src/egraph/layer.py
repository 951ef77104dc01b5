"""The graph layer itself: adjacency amendment, symmetric-normalised graph
aggregation, cosine-softmax prediction, the supervised / alignment /
regularisation losses with their ablation variants, the two baseline heads,
and a single gradient-descent training step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .errors import (
    DataError,
    DimensionError,
    GraphError,
    NumericError,
    ParameterError,
)
from .knowledge import symmetric_affinity
from .prototypes import (
    PrototypeBank,
    assemble_local,
    batch_class_means,
    ema_update,
    local_adjacency,
)

AMEND_MODES = ("hadamard", "matmul")
ADJACENCY_LOSSES = ("bce", "l1", "l2")
REGULARIZERS = ("l2", "l1", "none")
ACTIVATIONS = ("identity", "rectified")


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class EGLayerParams:
    """Trainable state: the per-edge adjacency amplifier and the aggregation
    weights (one matrix per layer, last one mapping into the graph dimension)."""

    W_a: np.ndarray
    gcn_weights: list

    @classmethod
    def init(cls, n_classes: int, feature_dim: int, embed_dim: int,
             gcn_layers: int = 1, rng: np.random.Generator | None = None) -> "EGLayerParams":
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(feature_dim)
        if gcn_layers == 1:
            weights = [_uniform(rng, bound, (feature_dim, embed_dim))]
        elif gcn_layers == 2:
            weights = [
                _uniform(rng, bound, (feature_dim, feature_dim)),
                _uniform(rng, bound, (feature_dim, embed_dim)),
            ]
        else:
            raise ParameterError(f"gcn_layers must be 1 or 2, got {gcn_layers}")
        return cls(W_a=np.ones((n_classes, n_classes)), gcn_weights=weights)


@dataclass
class LPLayerParams:
    """Plain learned projection from feature space into the graph dimension."""

    W_p: np.ndarray

    @classmethod
    def init(cls, feature_dim: int, embed_dim: int,
             rng: np.random.Generator | None = None) -> "LPLayerParams":
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(feature_dim)
        return cls(W_p=_uniform(rng, bound, (embed_dim, feature_dim)))


@dataclass
class LinearHeadParams:
    """Standard linear classifier weight, no bias."""

    W: np.ndarray

    @classmethod
    def init(cls, n_classes: int, feature_dim: int,
             rng: np.random.Generator | None = None) -> "LinearHeadParams":
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(feature_dim)
        return cls(W=_uniform(rng, bound, (n_classes, feature_dim)))


@dataclass
class LossWeights:
    alpha1: float = 1.0
    alpha2: float = 0.01

    def __post_init__(self):
        if self.alpha1 < 0:
            raise ParameterError(f"alpha1 must be >= 0, got {self.alpha1}")
        if self.alpha2 < 0:
            raise ParameterError(f"alpha2 must be >= 0, got {self.alpha2}")


# ---------------------------------------------------------------------------
# Forward-pass operations


def amend_adjacency(w_a: Var, a_s, mode: str = "hadamard") -> Var:
    """Apply the learnable amplifier to the fixed prototype adjacency.

    Default is the per-edge (Hadamard) product; ``matmul`` applies the
    amplifier as a matrix product instead, kept selectable because the two
    readings are worth comparing empirically.
    """
    a_val = a_s.value if isinstance(a_s, Var) else ad.as_matrix(a_s)
    if w_a.shape != a_val.shape:
        raise DimensionError(
            f"amplifier shape {w_a.shape} does not match adjacency {a_val.shape}"
        )
    if mode == "hadamard":
        return ad.mul(w_a, a_s)
    if mode == "matmul":
        return ad.matmul(w_a, a_s)
    raise ParameterError(f"amend_mode must be one of {AMEND_MODES}, got '{mode}'")


def gcn_aggregate(z_l: Var, a_l: Var, weights, hidden_activation: str = "rectified") -> Var:
    """Symmetric-normalised propagation: D~^-1/2 (A+I) D~^-1/2 H W per layer.

    The final layer has an identity activation because its output feeds
    cosine similarities, which need signed values; the hidden layer of the
    two-layer variant uses the configured nonlinearity.
    """
    m = a_l.shape[0]
    if a_l.shape != (m, m):
        raise DimensionError(f"adjacency must be square, got {a_l.shape}")
    if z_l.shape[0] != m:
        raise DimensionError(
            f"node matrix has {z_l.shape[0]} rows but adjacency is {m}x{m}"
        )
    if hidden_activation not in ACTIVATIONS:
        raise ParameterError(
            f"activation must be one of {ACTIVATIONS}, got '{hidden_activation}'"
        )
    a_tilde = ad.add(a_l, np.eye(m))
    deg = ad.row_sum(a_tilde)
    bad = np.nonzero(deg.value[:, 0] <= 0)[0]
    if bad.size:
        raise GraphError(f"non-positive degree at node {bad[0]}")
    # Normalise by 1/sqrt(deg_i * deg_j) in one step: exact when the product
    # is a perfect square, which the self-loop-only reduction relies on.
    norm = ad.mul(a_tilde, ad.rsqrt(ad.matmul(deg, ad.transpose(deg))))
    h = z_l
    last = len(weights) - 1
    for i, w in enumerate(weights):
        h = ad.matmul(ad.matmul(norm, h), w)
        if i < last and hidden_activation == "rectified":
            h = ad.relu(h)
    return h


def cosine_softmax(x: Var, z) -> Var:
    """Row-stochastic class probabilities from cosine similarity to ``z`` rows."""
    return ad.row_softmax(ad.cosine_sim(x, z))


def cross_entropy(probs: Var, labels) -> Var:
    """Mean negative log-probability of the true class."""
    labels = np.asarray(labels, dtype=int)
    q, n = probs.shape
    if labels.ndim != 1 or labels.shape[0] != q:
        raise DataError(f"labels shape {labels.shape} does not match {q} rows")
    if q == 0:
        raise DataError("cross_entropy needs at least one query")
    if labels.min() < 0 or labels.max() >= n:
        bad = labels[(labels < 0) | (labels >= n)][0]
        raise DataError(f"label {bad} outside [0, {n})")
    onehot = np.zeros((q, n))
    onehot[np.arange(q), labels] = 1.0
    picked = ad.row_sum(ad.mul(probs, onehot))
    return ad.scale(ad.mean_all(ad.log(picked)), -1.0)


# ---------------------------------------------------------------------------
# Loss terms


def alignment_loss(a_global, a_sp: Var) -> Var:
    """Soft-label binary cross-entropy pulling the squashed amended adjacency
    toward the global adjacency, averaged over all n^2 entries."""
    a = ad.as_matrix(a_global)
    if a.shape != a_sp.shape:
        raise DimensionError(f"adjacency shapes differ: {a.shape} vs {a_sp.shape}")
    if np.any(a < 0) or np.any(a > 1):
        raise DataError("global adjacency entries must lie in [0, 1]")
    s = ad.sigmoid(a_sp)
    term = ad.add(ad.mul(a, ad.log(s)), ad.mul(1.0 - a, ad.log(ad.sub(1.0, s))))
    return ad.scale(ad.mean_all(term), -1.0)


def l1_adjacency_loss(a_global, a_sp: Var) -> Var:
    """Mean signed difference between global and amended adjacencies."""
    a = ad.as_matrix(a_global)
    if a.shape != a_sp.shape:
        raise DimensionError(f"adjacency shapes differ: {a.shape} vs {a_sp.shape}")
    return ad.mean_all(ad.sub(a, a_sp))


def l2_adjacency_loss(a_global, a_sp: Var) -> Var:
    """Mean squared difference between global and amended adjacencies."""
    a = ad.as_matrix(a_global)
    if a.shape != a_sp.shape:
        raise DimensionError(f"adjacency shapes differ: {a.shape} vs {a_sp.shape}")
    d = ad.sub(a, a_sp)
    return ad.mean_all(ad.mul(d, d))


def cosine_regularizer(s_prime: Var) -> Var:
    """Frobenius norm of the pairwise cosine-similarity matrix of the
    aggregated prototypes (full matrix, diagonal included)."""
    return ad.frobenius(ad.cosine_sim(s_prime, s_prime))


def l1_regularizer(s_prime: Var) -> Var:
    """Entrywise L1 norm of the pairwise cosine-similarity matrix."""
    return ad.sum_all(ad.absval(ad.cosine_sim(s_prime, s_prime)))


def ablation_losses(a_global, a_sp: Var, s_prime: Var) -> dict[str, Var]:
    """The appendix study variants, selectable in place of the default terms."""
    return {
        "l1_adj": l1_adjacency_loss(a_global, a_sp),
        "l2_adj": l2_adjacency_loss(a_global, a_sp),
        "l_reg1": l1_regularizer(s_prime),
    }


def total_loss(l_sup: Var, l_a: Var, l_reg: Var, weights: LossWeights) -> Var:
    """Weighted sum of the supervised, alignment, and regulariser terms."""
    return ad.add(l_sup, ad.add(ad.scale(l_a, weights.alpha1),
                                ad.scale(l_reg, weights.alpha2)))


# ---------------------------------------------------------------------------
# Baseline heads


def lp_forward(w_p: Var, x, z) -> Var:
    """Project features into the graph dimension, then cosine-softmax."""
    return cosine_softmax(ad.matmul(x, ad.transpose(w_p)), z)


def linear_forward(w: Var, x) -> Var:
    """Softmax over plain linear logits."""
    return ad.row_softmax(ad.matmul(x, ad.transpose(w)))


# ---------------------------------------------------------------------------
# Full-layer forward and one training step


@dataclass
class LayerConfig:
    """Everything ``train_step`` needs beyond the bank and the parameters."""

    alpha1: float = 1.0
    alpha2: float = 0.01
    adjacency_loss: str = "bce"
    regularizer: str = "l2"
    amend_mode: str = "hadamard"
    activation: str = "rectified"
    lr: float = 0.1

    def __post_init__(self):
        if self.adjacency_loss not in ADJACENCY_LOSSES:
            raise ParameterError(
                f"adjacency_loss must be one of {ADJACENCY_LOSSES}, got '{self.adjacency_loss}'"
            )
        if self.regularizer not in REGULARIZERS:
            raise ParameterError(
                f"regularizer must be one of {REGULARIZERS}, got '{self.regularizer}'"
            )
        if self.amend_mode not in AMEND_MODES:
            raise ParameterError(
                f"amend_mode must be one of {AMEND_MODES}, got '{self.amend_mode}'"
            )
        if self.activation not in ACTIVATIONS:
            raise ParameterError(
                f"activation must be one of {ACTIVATIONS}, got '{self.activation}'"
            )
        if self.lr < 0:
            raise ParameterError(f"lr must be >= 0, got {self.lr}")
        LossWeights(self.alpha1, self.alpha2)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha1, self.alpha2)


@dataclass
class LayerForward:
    """Handles to the interesting intermediates of one tape forward pass."""

    tape: Tape
    w_a: Var
    gcn_weights: list
    a_s: np.ndarray
    a_sp: Var
    s_prime: Var
    x_prime: Var


def _forward_from_vars(tape: Tape, w_a: Var, weights, bank: PrototypeBank, x,
                       amend_mode: str, activation: str) -> LayerForward:
    a_s = local_adjacency(bank)
    x_var = x if isinstance(x, Var) else tape.leaf(x)
    a_sp = amend_adjacency(w_a, a_s, amend_mode)
    asm = assemble_local(bank, x_var, a_sp)
    z_lp = gcn_aggregate(asm.Z_l, asm.A_l, weights, activation)
    s_prime = ad.slice_rows(z_lp, 0, bank.n)
    x_prime = ad.slice_rows(z_lp, bank.n, bank.n + asm.q)
    return LayerForward(tape=tape, w_a=w_a, gcn_weights=list(weights), a_s=a_s,
                        a_sp=a_sp, s_prime=s_prime, x_prime=x_prime)


def layer_forward(tape: Tape, params: EGLayerParams, bank: PrototypeBank, x,
                  amend_mode: str = "hadamard",
                  activation: str = "rectified") -> LayerForward:
    """Record the full aggregation path for a batch of query features."""
    w_a = tape.leaf(params.W_a)
    weights = [tape.leaf(w) for w in params.gcn_weights]
    return _forward_from_vars(tape, w_a, weights, bank, x, amend_mode, activation)


def layer_losses(fwd: LayerForward, probs: Var, labels, a_global,
                 config: LayerConfig) -> dict[str, Var]:
    l_sup = cross_entropy(probs, labels)
    if config.adjacency_loss == "bce":
        l_a = alignment_loss(a_global, fwd.a_sp)
    elif config.adjacency_loss == "l1":
        l_a = l1_adjacency_loss(a_global, fwd.a_sp)
    else:
        l_a = l2_adjacency_loss(a_global, fwd.a_sp)
    if config.regularizer == "l2":
        l_reg = cosine_regularizer(fwd.s_prime)
    elif config.regularizer == "l1":
        l_reg = l1_regularizer(fwd.s_prime)
    else:
        l_reg = fwd.tape.leaf(np.zeros((1, 1)))
    total = total_loss(l_sup, l_a, l_reg, config.weights)
    return {"L": total, "L_sup": l_sup, "L_a": l_a, "L_reg": l_reg}


@dataclass
class TrainStepResult:
    warmup: bool
    losses: dict = field(default_factory=dict)


def train_step(bank: PrototypeBank, params: EGLayerParams, x, labels,
               graph_z: np.ndarray, graph_a: np.ndarray,
               config: LayerConfig) -> TrainStepResult:
    """One ordered training step.

    Effects, in order: blend the batch into the bank; recompute the prototype
    adjacency; run the tape forward with all loss terms; backpropagate; apply
    one gradient-descent update to the amplifier and aggregation weights.
    Until every class has been seen, only the bank update runs (warm-up).
    A non-finite loss or gradient aborts the step before any parameter write.
    """
    x = ad.as_matrix(x)
    means = batch_class_means(x, labels, bank.n)
    ema_update(bank, means)
    if not bank.all_seen():
        return TrainStepResult(warmup=True)

    tape = Tape()
    fwd = layer_forward(tape, params, bank, x,
                        amend_mode=config.amend_mode, activation=config.activation)
    probs = cosine_softmax(fwd.x_prime, graph_z)
    losses = layer_losses(fwd, probs, labels, graph_a, config)
    grads = tape.backward(losses["L"])

    updates = [(params.W_a, grads[fwd.w_a.id])]
    updates += [(w, grads[v.id]) for w, v in zip(params.gcn_weights, fwd.gcn_weights)]
    for where, g in updates:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; step aborted without update")
    for where, g in updates:
        where -= config.lr * g
    return TrainStepResult(
        warmup=False,
        losses={name: float(v.value[0, 0]) for name, v in losses.items()},
    )


# ---------------------------------------------------------------------------
# Full-layer gradient check


def full_layer_gradcheck(n: int = 5, feature_dim: int = 8, embed_dim: int = 4,
                         q: int = 3, seed: int = 0, h: float = 1e-4,
                         tol: float = 1e-4, gcn_layers: int = 1,
                         config: LayerConfig | None = None) -> ad.GradCheckReport:
    """Finite-difference check of the total loss w.r.t. every trainable entry
    on a small randomly generated instance."""
    config = config or LayerConfig()
    rng = np.random.default_rng(seed)

    def unit_rows(shape):
        m = rng.standard_normal(shape)
        return m / np.linalg.norm(m, axis=1, keepdims=True)

    bank = PrototypeBank.create([f"c{i}" for i in range(n)], feature_dim,
                                sigma_local=0.5)
    bank.S = unit_rows((n, feature_dim))
    bank.seen[:] = True
    x = unit_rows((q, feature_dim))
    labels = rng.integers(0, n, size=q)
    z = unit_rows((n, embed_dim))
    a_global = symmetric_affinity(z, 1.0)
    params = EGLayerParams.init(n, feature_dim, embed_dim, gcn_layers, rng)

    names = ["W_a"] + (["W_gcn"] if gcn_layers == 1 else ["W_gcn_hidden", "W_gcn"])
    arrays = [params.W_a] + params.gcn_weights

    def f(tape, leaves):
        fwd = _forward_from_vars(tape, leaves["W_a"], [leaves[k] for k in names[1:]],
                                 bank, x, config.amend_mode, config.activation)
        probs = cosine_softmax(fwd.x_prime, z)
        losses = layer_losses(fwd, probs, labels, a_global, config)
        return losses["L"]

    return ad.gradcheck(f, dict(zip(names, arrays)), h=h, tol=tol)
