"""Feature-level datasets: the CSV loader, the episode sampler, and a
synthetic generator whose semantic-alignment knob has an analytically
predictable effect on how informative the companion graph is."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .config import substream
from .errors import DataError, DegenerateVectorError, FormatError, ParameterError
from .knowledge import GlobalGraph, build_global_graph
from .validation import check_features, normalize_rows

UNIT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class DatasetSplit:
    """Feature rows (unit-norm), integer labels, and the class-name order."""

    class_names: tuple
    features: np.ndarray
    labels: np.ndarray
    domain_tag: str = ""

    def __post_init__(self):
        names = tuple(str(n) for n in self.class_names)
        object.__setattr__(self, "class_names", names)
        feats = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=int)
        check_features(feats)
        if labels.ndim != 1 or labels.shape[0] != feats.shape[0]:
            raise DataError(
                f"labels shape {labels.shape} does not match {feats.shape[0]} rows"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= len(names)):
            raise DataError(f"labels must lie in [0, {len(names)})")
        norms = np.linalg.norm(feats, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise DataError("feature rows must be unit-norm (normalise at ingestion)")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def label_names(self) -> np.ndarray:
        """Per-sample class names, the natural y for the estimators."""
        return np.array(self.class_names, dtype=object)[self.labels]

    def class_indices(self, label: int) -> np.ndarray:
        return np.nonzero(self.labels == label)[0]


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int = 5
    k_shot: int = 1
    q_query: int = 15
    episodes: int = 600
    seed: int = 0

    def __post_init__(self):
        if self.n_way < 1:
            raise ParameterError(f"n_way must be >= 1, got {self.n_way}")
        if self.k_shot < 0:
            raise ParameterError(f"k_shot must be >= 0, got {self.k_shot}")
        if self.q_query < 1:
            raise ParameterError(f"q_query must be >= 1, got {self.q_query}")
        if self.episodes < 1:
            raise ParameterError(f"episodes must be >= 1, got {self.episodes}")


@dataclass(frozen=True)
class Episode:
    """One n-way task: disjoint support and query samples with way-local labels."""

    classes: np.ndarray  # original class indices of the ways
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 10
    feature_dim: int = 16
    semantic_dim: int = 8
    cluster_noise: float = 0.05
    semantic_alignment: float = 0.8
    samples_per_class: int = 50
    seed: int = 0
    sigma_global: float = 1.0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ParameterError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.feature_dim < 1:
            raise ParameterError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.semantic_dim < 1:
            raise ParameterError(f"semantic_dim must be >= 1, got {self.semantic_dim}")
        if self.cluster_noise < 0:
            raise ParameterError(f"cluster_noise must be >= 0, got {self.cluster_noise}")
        if not 0.0 <= self.semantic_alignment <= 1.0:
            raise ParameterError(
                f"semantic_alignment must lie in [0, 1], got {self.semantic_alignment}"
            )
        if self.samples_per_class < 1:
            raise ParameterError(
                f"samples_per_class must be >= 1, got {self.samples_per_class}"
            )
        if self.sigma_global <= 0:
            raise ParameterError(f"sigma_global must be > 0, got {self.sigma_global}")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        import dataclasses

        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ParameterError(f"unknown synthetic spec field '{unknown[0]}'")
        return cls(**d)

    def to_dict(self) -> dict:
        import dataclasses

        return dataclasses.asdict(self)


def _unit_rows(rng: np.random.Generator, shape) -> np.ndarray:
    return normalize_rows(rng.standard_normal(shape))


def generate_synthetic(spec: SyntheticSpec) -> tuple[DatasetSplit, DatasetSplit, GlobalGraph]:
    """Clustered unit-norm features plus a semantic graph over all classes.

    ``n_classes`` base classes form the train split and another ``n_classes``
    disjoint novel classes form the evaluation split.  Class semantic vectors
    live on the unit sphere in the semantic space; feature-space class means
    mix an isometric image of the semantics with independent noise in ratio
    alignment : (1 - alignment).  At alignment 1 the graph mirrors feature
    geometry exactly (the map is an isometry); at 0 it is uninformative.
    """
    n, d, dim = spec.n_classes, spec.semantic_dim, spec.feature_dim
    total = 2 * n
    names = tuple(f"class_{i:03d}" for i in range(total))

    semantics = _unit_rows(substream(spec.seed, "semantics"), (total, d))
    basis = np.linalg.qr(substream(spec.seed, "map").standard_normal((dim, d)))[0]
    aligned = semantics @ basis.T  # unit rows: isometric image of the semantics
    free = _unit_rows(substream(spec.seed, "mean-noise"), (total, dim))
    rho = spec.semantic_alignment
    means = normalize_rows(rho * aligned + (1.0 - rho) * free)

    graph = build_global_graph(names, semantics, spec.sigma_global)

    rng = substream(spec.seed, "samples")
    per = spec.samples_per_class

    def draw(class_ids, tag):
        feats = np.empty((len(class_ids) * per, dim))
        labels = np.empty(len(class_ids) * per, dtype=int)
        for row, cid in enumerate(class_ids):
            block = means[cid] + spec.cluster_noise * rng.standard_normal((per, dim))
            feats[row * per:(row + 1) * per] = block
            labels[row * per:(row + 1) * per] = row
        try:
            feats = normalize_rows(feats)
        except DegenerateVectorError:
            raise DegenerateVectorError(
                "synthetic sample collapsed to the zero vector"
            ) from None
        return DatasetSplit(
            class_names=tuple(names[c] for c in class_ids),
            features=feats,
            labels=labels,
            domain_tag=tag,
        )

    train = draw(range(n), "synthetic-train")
    novel = draw(range(n, total), "synthetic-novel")
    return train, novel, graph


def sample_episode(split: DatasetSplit, spec: EpisodeSpec,
                   rng: np.random.Generator) -> Episode:
    """Draw one episode: ways without replacement, then disjoint support and
    query samples within each way."""
    if spec.n_way > split.n_classes:
        raise DataError(
            f"n_way={spec.n_way} exceeds the {split.n_classes} available classes"
        )
    ways = np.sort(rng.choice(split.n_classes, size=spec.n_way, replace=False))
    need = spec.k_shot + spec.q_query
    sx, sy, qx, qy = [], [], [], []
    for local, cls in enumerate(ways):
        pool = split.class_indices(int(cls))
        if pool.size < need:
            raise DataError(
                f"class '{split.class_names[cls]}' has {pool.size} samples, "
                f"episode needs {need}"
            )
        pick = rng.choice(pool, size=need, replace=False)
        sx.append(split.features[pick[:spec.k_shot]])
        sy.append(np.full(spec.k_shot, local))
        qx.append(split.features[pick[spec.k_shot:]])
        qy.append(np.full(spec.q_query, local))
    return Episode(
        classes=ways,
        support_x=np.vstack(sx) if spec.k_shot else np.empty((0, split.feature_dim)),
        support_y=np.concatenate(sy) if spec.k_shot else np.empty(0, dtype=int),
        query_x=np.vstack(qx),
        query_y=np.concatenate(qy).astype(int),
    )


def sample_episodes(split: DatasetSplit, spec: EpisodeSpec) -> list[Episode]:
    """Episodes with per-episode generators seeded ``base_seed + index`` so a
    parallel fan-out would reproduce the serial stream exactly."""
    return [
        sample_episode(split, spec, np.random.default_rng(spec.seed + i))
        for i in range(spec.episodes)
    ]


# ---------------------------------------------------------------------------
# Feature CSV interchange


def load_features(path, manifest_path=None, domain_tag: str | None = None) -> DatasetSplit:
    """Parse ``class,f0,...,f{D-1}`` CSV rows into a unit-normalised split.

    Class index order is first appearance unless a manifest (one class name
    per line) fixes it; in manifest mode unknown classes are an error.
    """
    manifest = None
    if manifest_path is not None:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = [line.strip() for line in fh if line.strip()]
        if len(set(manifest)) != len(manifest):
            raise FormatError(f"{manifest_path}: duplicate class names in manifest")

    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}:1: file is empty") from None
        if not header or header[0] != "class":
            raise FormatError(f"{path}:1: header must start with 'class'")
        width = len(header) - 1
        if width < 1:
            raise FormatError(f"{path}:1: header declares no feature columns")

        order: dict[str, int] = {}
        if manifest is not None:
            order = {name: i for i, name in enumerate(manifest)}
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width + 1:
                raise FormatError(
                    f"{path}:{lineno}: expected {width + 1} fields, found {len(rec)}"
                )
            name = rec[0]
            if name not in order:
                if manifest is not None:
                    raise FormatError(
                        f"{path}:{lineno}: class '{name}' not in manifest"
                    )
                order[name] = len(order)
            try:
                row = np.array([float(v) for v in rec[1:]], dtype=np.float64)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric feature value") from None
            if not np.all(np.isfinite(row)):
                raise FormatError(f"{path}:{lineno}: non-finite feature value")
            nrm = np.linalg.norm(row)
            if nrm <= 1e-12:
                raise FormatError(f"{path}:{lineno}: zero-norm feature row")
            rows.append(row / nrm)
            labels.append(order[name])

    if not rows:
        raise FormatError(f"{path}: no data rows")
    names = [None] * len(order)
    for name, idx in order.items():
        names[idx] = name
    return DatasetSplit(
        class_names=tuple(names),
        features=np.array(rows),
        labels=np.array(labels, dtype=int),
        domain_tag=domain_tag if domain_tag is not None else str(path),
    )


def save_features(split: DatasetSplit, path) -> None:
    """Inverse of ``load_features``; output bytes are deterministic."""
    width = split.feature_dim
    lines = ["class," + ",".join(f"f{i}" for i in range(width))]
    for label, row in zip(split.labels, split.features):
        lines.append(split.class_names[label] + ","
                     + ",".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
