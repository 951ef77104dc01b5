"""Run configuration: one serialisable record of every hyperparameter, plus
the named sub-stream seeding that keeps all randomness reproducible."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError

HEADS = ("eglayer", "lplayer", "linear")
ACTIVATIONS = ("identity", "rectified")
ADJACENCY_LOSSES = ("bce", "l1", "l2")
REGULARIZERS = ("l2", "l1", "none")
AMEND_MODES = ("hadamard", "matmul")
DATASET_PROFILES = ("office31", "office-home")

# Default top-k for graph exports, per dataset profile.
PROFILE_TOP_K = {"office31": 70, "office-home": 150}
DEFAULT_TOP_K = 150


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator derived from one base seed and a stream name.

    Hash-based so that, e.g., changing the episode count can never perturb
    parameter initialisation.
    """
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


@dataclass
class RunConfig:
    head: str = "eglayer"
    sigma_local: float = 0.05
    sigma_global: float = 0.05
    beta: float = 0.9
    alpha1: float = 1.0
    alpha2: float = 0.01
    gcn_layers: int = 1
    activation: str = "rectified"
    adjacency_loss: str = "bce"
    regularizer: str = "l2"
    amend_mode: str = "hadamard"
    lr: float = 0.1
    steps: int = 200
    batch_size: int = 32
    seed: int = 0
    open_set_threshold: float = 0.5
    embedding_dim: int = 8
    dataset_profile: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        def expect(cond, field, detail):
            if not cond:
                raise ConfigError(f"config field '{field}': {detail}")

        expect(self.head in HEADS, "head", f"must be one of {HEADS}, got '{self.head}'")
        expect(self.sigma_local > 0, "sigma_local", f"must be > 0, got {self.sigma_local}")
        expect(self.sigma_global > 0, "sigma_global", f"must be > 0, got {self.sigma_global}")
        expect(0.0 <= self.beta <= 1.0, "beta", f"must lie in [0, 1], got {self.beta}")
        expect(self.alpha1 >= 0, "alpha1", f"must be >= 0, got {self.alpha1}")
        expect(self.alpha2 >= 0, "alpha2", f"must be >= 0, got {self.alpha2}")
        expect(self.gcn_layers in (1, 2), "gcn_layers",
               f"must be 1 or 2, got {self.gcn_layers}")
        expect(self.activation in ACTIVATIONS, "activation",
               f"must be one of {ACTIVATIONS}, got '{self.activation}'")
        expect(self.adjacency_loss in ADJACENCY_LOSSES, "adjacency_loss",
               f"must be one of {ADJACENCY_LOSSES}, got '{self.adjacency_loss}'")
        expect(self.regularizer in REGULARIZERS, "regularizer",
               f"must be one of {REGULARIZERS}, got '{self.regularizer}'")
        expect(self.amend_mode in AMEND_MODES, "amend_mode",
               f"must be one of {AMEND_MODES}, got '{self.amend_mode}'")
        expect(self.lr >= 0, "lr", f"must be >= 0, got {self.lr}")
        expect(self.steps >= 0, "steps", f"must be >= 0, got {self.steps}")
        expect(self.batch_size >= 1, "batch_size", f"must be >= 1, got {self.batch_size}")
        expect(0.0 < self.open_set_threshold < 1.0, "open_set_threshold",
               f"must lie in (0, 1), got {self.open_set_threshold}")
        expect(self.embedding_dim >= 1, "embedding_dim",
               f"must be >= 1, got {self.embedding_dim}")
        expect(self.dataset_profile is None or self.dataset_profile in DATASET_PROFILES,
               "dataset_profile",
               f"must be one of {DATASET_PROFILES} or null, got '{self.dataset_profile}'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config field '{unknown[0]}'")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"malformed config: {e}") from None

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "RunConfig":
        """Read a JSON config file and apply explicit overrides on top."""
        base = {}
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    base = json.load(fh)
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read config file {path}: {e}") from None
            if not isinstance(base, dict):
                raise ConfigError(f"config file {path} must hold a JSON object")
        if overrides:
            base.update(overrides)
        return cls.from_dict(base)

    def export_top_k(self, explicit: int | None, n_nodes: int) -> int:
        """Edge count for graph exports: explicit flag wins, then the dataset
        profile default, then the stock default clamped to the pair count."""
        if explicit is not None:
            return explicit
        if self.dataset_profile is not None:
            return PROFILE_TOP_K[self.dataset_profile]
        return min(DEFAULT_TOP_K, n_nodes * (n_nodes - 1) // 2)
