"""Feature-set ingestion, synthetic generation, and gallery/probe splits.

A dataset is an ordered list of labeled feature sets, each an n x D matrix
with one sample per row. On disk a dataset is a JSON manifest pointing at
plain CSV files (no header, decimal floats), so any feature extractor can
produce them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "FeatureSet",
    "Dataset",
    "SyntheticSpec",
    "load_dataset",
    "save_dataset",
    "generate_synthetic",
    "split_gallery_probe",
    "standardize_dataset",
]


@dataclass(frozen=True)
class FeatureSet:
    """One labeled set: an id, an integer class label, and an n x D matrix."""

    id: str
    label: int
    features: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.ndim != 2:
            raise ValueError(f"set {self.id!r}: features must be an n x D matrix, got shape {features.shape}")
        n, d = features.shape
        if n < 2:
            raise ValueError(f"set {self.id!r}: n >= 2 violated (got n={n})")
        if d < 1:
            raise ValueError(f"set {self.id!r}: D >= 1 violated")
        if not np.all(np.isfinite(features)):
            raise ValueError(f"set {self.id!r}: features contain non-finite entries")
        if int(self.label) < 0:
            raise ValueError(f"set {self.id!r}: label must be >= 0, got {self.label}")
        features = features.copy()
        features.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "id", str(self.id))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of feature sets sharing one feature dimension."""

    sets: tuple[FeatureSet, ...]

    def __post_init__(self):
        sets = tuple(self.sets)
        if not sets:
            raise ValueError("dataset must contain at least one set")
        dim = sets[0].dim
        for fs in sets[1:]:
            if fs.dim != dim:
                raise ValueError(
                    f"dimension mismatch: set {sets[0].id!r} has D={dim} "
                    f"but set {fs.id!r} has D={fs.dim}"
                )
        object.__setattr__(self, "sets", sets)

    @property
    def dim(self) -> int:
        return self.sets[0].dim

    @property
    def size(self) -> int:
        return len(self.sets)

    @property
    def labels(self) -> np.ndarray:
        return np.array([fs.label for fs in self.sets], dtype=int)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def class_indices(self, label: int) -> list[int]:
        return [i for i, fs in enumerate(self.sets) if fs.label == label]


def _read_feature_csv(path: Path, set_id: str) -> np.ndarray:
    if not path.exists():
        raise ValueError(f"set {set_id!r}: feature file {path} does not exist")
    rows: list[list[float]] = []
    width = None
    with path.open() as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ValueError(
                    f"set {set_id!r}: ragged row in {path} at row {line_no} "
                    f"({len(cells)} cells, expected {width})"
                )
            parsed = []
            for col, cell in enumerate(cells):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"set {set_id!r}: non-numeric cell {cell!r} in {path} "
                        f"at row {line_no}, column {col + 1}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ValueError(f"set {set_id!r}: feature file {path} is empty")
    return np.array(rows, dtype=float)


def load_dataset(manifest_path) -> Dataset:
    """Load a dataset from a JSON manifest.

    Manifest format: {"sets": [{"id": str, "label": str, "path": str}, ...]}
    with feature-file paths relative to the manifest's directory. String
    labels are remapped to dense integers 0..C-1 in first-seen order; set
    order is preserved.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ValueError(f"manifest {manifest_path} does not exist")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    entries = manifest.get("sets")
    if not isinstance(entries, list) or not entries:
        raise ValueError(f"manifest {manifest_path} must contain a non-empty 'sets' list")

    label_map: dict[str, int] = {}
    sets: list[FeatureSet] = []
    base = manifest_path.parent
    for idx, entry in enumerate(entries):
        for key in ("id", "label", "path"):
            if key not in entry:
                raise ValueError(f"manifest entry {idx} is missing the {key!r} field")
        raw_label = str(entry["label"])
        if raw_label not in label_map:
            label_map[raw_label] = len(label_map)
        features = _read_feature_csv(base / entry["path"], str(entry["id"]))
        sets.append(FeatureSet(id=str(entry["id"]), label=label_map[raw_label], features=features))
    return Dataset(sets=tuple(sets))


def save_dataset(dataset: Dataset, manifest_path, label_names: dict[int, str] | None = None) -> None:
    """Write a dataset as a manifest plus one CSV per set.

    Values are written with 17 significant digits, so reload reproduces
    every float exactly.
    """
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, fs in enumerate(dataset.sets):
        rel = f"{manifest_path.stem}_set{i:04d}.csv"
        np.savetxt(manifest_path.parent / rel, fs.features, delimiter=",", fmt="%.17g")
        label = label_names[fs.label] if label_names else str(fs.label)
        entries.append({"id": fs.id, "label": label, "path": rel})
    manifest_path.write_text(json.dumps({"sets": entries}, indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a labeled synthetic dataset of Gaussian-cloud sets."""

    classes: int
    sets_per_class: int
    samples_per_set: int
    dim: int
    class_separation: float
    within_class_jitter: float
    seed: int = 0

    def __post_init__(self):
        for name in ("classes", "sets_per_class", "samples_per_set", "dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.samples_per_set < 2:
            raise ValueError(f"samples_per_set must be >= 2, got {self.samples_per_set}")
        if self.class_separation < 0:
            raise ValueError(f"class_separation must be >= 0, got {self.class_separation}")
        if self.within_class_jitter < 0:
            raise ValueError(f"within_class_jitter must be >= 0, got {self.within_class_jitter}")


def _class_means(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Class means on a sphere of radius class_separation.

    When C <= D the directions are rows of a Haar-random orthonormal frame,
    which keeps all pairwise mean distances equal to sqrt(2) * separation;
    otherwise directions are independent points on the unit sphere.
    """
    c, d = spec.classes, spec.dim
    if spec.class_separation == 0:
        return np.zeros((c, d))
    if c <= d:
        gauss = rng.standard_normal((d, c))
        q, r = np.linalg.qr(gauss)
        q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
        dirs = q.T
    else:
        gauss = rng.standard_normal((c, d))
        dirs = gauss / np.linalg.norm(gauss, axis=1, keepdims=True)
    return spec.class_separation * dirs


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic synthetic dataset.

    Every set draws samples_per_set points from a unit-covariance Gaussian
    centered at its class mean plus a jitter-scaled per-set offset.
    """
    rng = np.random.default_rng(spec.seed)
    means = _class_means(spec, rng)
    sets = []
    for c in range(spec.classes):
        for s in range(spec.sets_per_class):
            offset = spec.within_class_jitter * rng.standard_normal(spec.dim)
            center = means[c] + offset
            features = center + rng.standard_normal((spec.samples_per_set, spec.dim))
            sets.append(FeatureSet(id=f"c{c}s{s}", label=c, features=features))
    return Dataset(sets=tuple(sets))


def split_gallery_probe(dataset: Dataset, per_class_gallery: int, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint gallery/probe partition with a fixed number of gallery sets
    per class, chosen uniformly at random under `seed`. Set order within
    each side follows the input dataset."""
    if per_class_gallery < 1:
        raise ValueError(f"per_class_gallery must be >= 1, got {per_class_gallery}")
    rng = np.random.default_rng(seed)
    gallery_idx: set[int] = set()
    for label in range(dataset.num_classes):
        members = dataset.class_indices(label)
        if len(members) <= per_class_gallery:
            raise ValueError(
                f"class {label} has {len(members)} sets; needs more than "
                f"per_class_gallery={per_class_gallery} so the probe side is non-empty"
            )
        chosen = rng.permutation(len(members))[:per_class_gallery]
        gallery_idx.update(members[i] for i in chosen)
    gallery = tuple(fs for i, fs in enumerate(dataset.sets) if i in gallery_idx)
    probe = tuple(fs for i, fs in enumerate(dataset.sets) if i not in gallery_idx)
    return Dataset(sets=gallery), Dataset(sets=probe)


def standardize_dataset(dataset: Dataset) -> Dataset:
    """Per-dimension standardization over the pooled samples of all sets.

    Off by default in every pipeline; exposed behind a config flag.
    Constant dimensions are left unscaled.
    """
    pooled = np.vstack([fs.features for fs in dataset.sets])
    mean = pooled.mean(axis=0)
    sd = pooled.std(axis=0, ddof=1)
    sd = np.where(sd == 0, 1.0, sd)
    sets = tuple(
        FeatureSet(id=fs.id, label=fs.label, features=(fs.features - mean) / sd)
        for fs in dataset.sets
    )
    return Dataset(sets=sets)
