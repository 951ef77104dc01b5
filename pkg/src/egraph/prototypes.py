"""Per-class prototype memory updated by exponential moving average, and the
local graph pieces built from it: the prototype affinity matrix, the
query-prototype affinity, and the stacked node/adjacency assembly fed to the
aggregation layer.

Prototype rows enter tape computations as captured constants, so no loss
gradient ever reaches them: the EMA update is their only writer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import (
    DataError,
    DimensionError,
    NumericError,
    ParameterError,
    StateError,
)
from .knowledge import symmetric_affinity


@dataclass
class PrototypeBank:
    """EMA prototype matrix S (n x D) with per-class initialisation flags."""

    class_names: tuple
    S: np.ndarray
    seen: np.ndarray
    beta: float
    sigma_local: float

    @classmethod
    def create(cls, class_names, feature_dim: int, beta: float = 0.9,
               sigma_local: float = 0.05) -> "PrototypeBank":
        names = tuple(str(n) for n in class_names)
        if not names:
            raise ParameterError("prototype bank needs at least one class")
        if feature_dim < 1:
            raise ParameterError(f"feature_dim must be >= 1, got {feature_dim}")
        if not 0.0 <= beta <= 1.0:
            raise ParameterError(f"beta must lie in [0, 1], got {beta}")
        if sigma_local <= 0:
            raise ParameterError(f"sigma_local must be positive, got {sigma_local}")
        return cls(
            class_names=names,
            S=np.zeros((len(names), feature_dim)),
            seen=np.zeros(len(names), dtype=bool),
            beta=float(beta),
            sigma_local=float(sigma_local),
        )

    @property
    def n(self) -> int:
        return len(self.class_names)

    @property
    def feature_dim(self) -> int:
        return self.S.shape[1]

    def all_seen(self) -> bool:
        return bool(self.seen.all())

    def snapshot(self) -> np.ndarray:
        """Copy of S for read-only use outside the training loop."""
        return self.S.copy()

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "sigma_local": self.sigma_local,
            "classes": list(self.class_names),
            "S": self.S.tolist(),
            "seen": [bool(v) for v in self.seen],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrototypeBank":
        try:
            names = tuple(str(n) for n in d["classes"])
            s = np.array(d["S"], dtype=np.float64)
            seen = np.array(d["seen"], dtype=bool)
            beta = float(d["beta"])
            sigma = float(d["sigma_local"])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed bank checkpoint: {e}") from None
        if s.ndim != 2 or s.shape[0] != len(names) or seen.shape != (len(names),):
            raise DataError("bank checkpoint shapes are inconsistent")
        if not np.all(np.isfinite(s)):
            raise DataError("bank checkpoint contains non-finite prototypes")
        if not 0.0 <= beta <= 1.0 or sigma <= 0:
            raise DataError("bank checkpoint hyperparameters out of range")
        return cls(class_names=names, S=s, seen=seen, beta=beta, sigma_local=sigma)


def batch_class_means(x: np.ndarray, labels, n_classes: int) -> dict[int, np.ndarray]:
    """Mean feature row per class present in the batch; absent classes omitted."""
    x = ad.as_matrix(x)
    labels = np.asarray(labels, dtype=int)
    if labels.ndim != 1 or labels.shape[0] != x.shape[0]:
        raise DataError(f"labels shape {labels.shape} does not match {x.shape[0]} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise DataError(f"label {bad} outside [0, {n_classes})")
    means = {}
    for k in np.unique(labels):
        means[int(k)] = x[labels == k].mean(axis=0)
    return means


def ema_update(bank: PrototypeBank, means: dict[int, np.ndarray]) -> PrototypeBank:
    """Blend batch means into the bank; first sight of a class sets it directly."""
    for k in sorted(means):
        if not 0 <= k < bank.n:
            raise DataError(f"class id {k} outside [0, {bank.n})")
        m = np.asarray(means[k], dtype=np.float64)
        if bank.seen[k]:
            bank.S[k] = bank.beta * bank.S[k] + (1.0 - bank.beta) * m
        else:
            bank.S[k] = m
            bank.seen[k] = True
    if not np.all(np.isfinite(bank.S)):
        raise NumericError("prototype update produced non-finite entries")
    return bank


def local_adjacency(bank: PrototypeBank) -> np.ndarray:
    """Gaussian affinity between prototypes; requires a fully warmed bank.

    Recomputed at the start of each training step and held fixed within it,
    so it is returned as a plain constant matrix.
    """
    if not bank.all_seen():
        missing = [bank.class_names[i] for i in np.nonzero(~bank.seen)[0]]
        raise StateError(f"bank not warmed up; unseen classes: {missing}")
    return symmetric_affinity(bank.S, bank.sigma_local)


def query_adjacency(bank: PrototypeBank, x: Var) -> Var:
    """Affinity between every prototype and every query row (n x q).

    Differentiable w.r.t. the queries; the prototypes are captured constants.
    """
    if not bank.all_seen():
        raise StateError("bank not warmed up")
    if x.shape[1] != bank.feature_dim:
        raise DimensionError(
            f"query width {x.shape[1]} does not match prototype width {bank.feature_dim}"
        )
    s = bank.S
    ssq = (s * s).sum(axis=1)[:, None]  # n x 1 constant
    xsq_col = ad.row_sum(ad.mul(x, x))  # q x 1
    cross = ad.matmul(s, ad.transpose(x))  # n x q
    d2 = ad.add(ad.sub(ssq, ad.scale(cross, 2.0)), ad.transpose(xsq_col))
    d2 = ad.relu(d2)  # clamp roundoff negatives so affinities stay in (0, 1]
    return ad.exp(ad.scale(d2, -1.0 / (2.0 * bank.sigma_local ** 2)))


@dataclass
class LocalAssembly:
    """Stacked node matrix Z_l and block adjacency A_l for one forward pass."""

    Z_l: Var
    A_l: Var
    n: int
    q: int


def assemble_local(bank: PrototypeBank, x: Var, amended_As: Var) -> LocalAssembly:
    """Stack prototypes over queries and build the block adjacency.

    Top-left: the amended prototype adjacency.  Off-diagonal: the
    query-prototype affinity and its transpose.  Bottom-right: the identity,
    since queries do not interact with each other.
    """
    n = bank.n
    if amended_As.shape != (n, n):
        raise DimensionError(
            f"amended adjacency must be {n}x{n}, got {amended_As.shape}"
        )
    q = x.shape[0]
    axs = query_adjacency(bank, x)
    z_l = ad.vstack(bank.S, x)
    top = ad.hstack(amended_As, axs)
    bottom = ad.hstack(ad.transpose(axs), np.eye(q))
    a_l = ad.vstack(top, bottom)
    return LocalAssembly(Z_l=z_l, A_l=a_l, n=n, q=q)
