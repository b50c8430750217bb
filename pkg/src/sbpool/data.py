"""Synthetic hierarchical dataset generation, file round-trip, batching.

Every coarse class owns a low-frequency cosine template at a
class-specific orientation (easy, shape-scale signal); every fine class
adds a small high-frequency grating patch whose orientation and location
depend on the child index (hard, detail-scale signal).  The coarse
amplitude is twice the fine amplitude so the coarse signal survives
noise levels that swamp the fine one.

On disk a split is a directory holding ``manifest.json`` (label tree,
shapes, counts, generator spec) and ``samples.csv`` whose rows are
``coarse_index, fine_index`` followed by the image values in row-major
order at full precision.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyDataset,
    InconsistentLabels,
    InvalidSpec,
    MalformedDocument,
)
from .labels import LabelTree, build_label_tree, tree_from_json_obj

COARSE_AMP = 1.0
FINE_AMP = 0.5  # half the coarse amplitude: fine details are strictly harder
COARSE_CYCLES = 1.25  # low-frequency cycles across the template window
FINE_PERIOD = 5.0  # grating period in pixels; survives one 2x pooling stage
BAND_SPREAD = 1.45  # >1 pushes edge children toward the neighbor parent's band
GENERATOR_STREAM = 77


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of the generated task and its noise level."""

    n_coarse: int = 4
    fines_per_coarse: int = 3
    train_per_fine: int = 50
    eval_per_fine: int = 25
    extent: int = 16
    noise_sigma: float = 1.1
    seed: int = 0

    def __post_init__(self):
        counts = (self.n_coarse, self.fines_per_coarse, self.train_per_fine, self.eval_per_fine)
        if any(c < 1 for c in counts):
            raise InvalidSpec(f"all counts must be >= 1, got {counts}")
        if self.extent < 4:
            raise InvalidSpec(f"extent must be >= 4, got {self.extent}")
        if self.noise_sigma < 0 or not np.isfinite(self.noise_sigma):
            raise InvalidSpec(f"bad noise_sigma {self.noise_sigma}")

    def to_json_obj(self) -> dict:
        return {
            "n_coarse": self.n_coarse,
            "fines_per_coarse": self.fines_per_coarse,
            "train_per_fine": self.train_per_fine,
            "eval_per_fine": self.eval_per_fine,
            "extent": self.extent,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }

    @staticmethod
    def from_json_obj(obj) -> "SyntheticSpec":
        try:
            return SyntheticSpec(**obj)
        except TypeError as exc:
            raise InvalidSpec(f"bad synthetic spec: {exc}") from exc


@dataclass
class Sample:
    x: np.ndarray  # (D0, H, W)
    coarse: int
    fine: int


@dataclass
class Dataset:
    """Samples held as batched arrays; immutable by convention once built."""

    x: np.ndarray  # (N, D0, H, W)
    coarse: np.ndarray  # (N,)
    fine: np.ndarray  # (N,)

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.x[i], int(self.coarse[i]), int(self.fine[i]))

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.x[idx], self.coarse[idx], self.fine[idx])

    @property
    def sample_shape(self) -> tuple[int, int, int]:
        return tuple(self.x.shape[1:])


Batch = Dataset  # a batch is just a small dataset slice


def _patch_size(e: int) -> int:
    return max(4, (2 * e) // 3)


def _coarse_template(spec: SyntheticSpec, k: int) -> np.ndarray:
    """Low-frequency cosine at a class-specific orientation.

    The template lives on a centered window of the same area as the fine
    detail patch; with twice the amplitude it carries four times the
    energy, so the coarse signal is strictly easier than the fine one
    but not unbreakable under noise.
    """
    e = spec.extent
    size = _patch_size(e)
    top = (e - size) // 2
    theta = np.pi * k / spec.n_coarse
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    phase = 2.0 * np.pi * COARSE_CYCLES * (np.cos(theta) * xx + np.sin(theta) * yy) / size
    template = np.zeros((e, e), dtype=np.float64)
    template[top : top + size, top : top + size] = COARSE_AMP * np.cos(phase)
    return template


def _fine_detail(spec: SyntheticSpec, k: int, j: int) -> np.ndarray:
    """High-frequency grating patch for child j of coarse k.

    Each coarse class owns a contiguous band of grating orientations.
    Within a band the children are spread slightly wider than the band
    itself, so a band-edge child's nearest texture neighbor belongs to
    the adjacent coarse class and sits closer than any sibling does.
    Texture alone cannot resolve those boundary pairs; the coarse
    template can, which is exactly the structure the hierarchy penalty
    is meant to exploit.
    """
    e = spec.extent
    m = spec.fines_per_coarse
    patch = _patch_size(e)
    margin = max(1, (e - patch) // 3)
    anchors = [
        (margin, margin),
        (margin, e - patch - margin),
        (e - patch - margin, margin),
        (e - patch - margin, e - patch - margin),
    ]
    top, left = anchors[(k + j) % len(anchors)]
    band_pos = 0.5 + BAND_SPREAD * ((j + 0.5) / m - 0.5)
    phi = np.pi * (k + band_pos) / spec.n_coarse
    yy, xx = np.mgrid[0:patch, 0:patch].astype(np.float64)
    grating = FINE_AMP * np.cos(2.0 * np.pi * (np.cos(phi) * xx + np.sin(phi) * yy) / FINE_PERIOD)
    detail = np.zeros((e, e), dtype=np.float64)
    detail[top : top + patch, left : left + patch] = grating
    return detail


def synthetic_label_tree(spec: SyntheticSpec) -> LabelTree:
    pairs = [
        (f"C{k:02d}", f"C{k:02d}_F{j:02d}")
        for k in range(spec.n_coarse)
        for j in range(spec.fines_per_coarse)
    ]
    return build_label_tree(pairs)


def _generate_split(spec: SyntheticSpec, per_fine: int, stream: int) -> Dataset:
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([GENERATOR_STREAM, spec.seed, stream]))
    )
    e = spec.extent
    images, coarse, fine = [], [], []
    for k in range(spec.n_coarse):
        base = _coarse_template(spec, k)
        for j in range(spec.fines_per_coarse):
            template = base + _fine_detail(spec, k, j)
            noise = rng.standard_normal((per_fine, e, e)) * spec.noise_sigma
            images.append(template[None] + noise)
            f = k * spec.fines_per_coarse + j
            coarse.extend([k] * per_fine)
            fine.extend([f] * per_fine)
    x = np.concatenate(images, axis=0)[:, None, :, :]
    return Dataset(
        np.ascontiguousarray(x),
        np.asarray(coarse, dtype=np.int64),
        np.asarray(fine, dtype=np.int64),
    )


def generate_synthetic(spec: SyntheticSpec):
    """Deterministic (train, eval, tree); the splits use independent
    noise streams derived from the base seed."""
    tree = synthetic_label_tree(spec)
    train = _generate_split(spec, spec.train_per_fine, stream=0)
    eval_ = _generate_split(spec, spec.eval_per_fine, stream=1)
    return train, eval_, tree


def save_dataset(dataset: Dataset, tree: LabelTree, path, spec: SyntheticSpec | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "sbpool-dataset-v1",
        "tree": tree.to_json_obj(),
        "sample_shape": list(dataset.sample_shape),
        "count": len(dataset),
        "spec": spec.to_json_obj() if spec is not None else None,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    with open(path / "samples.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        n_values = int(np.prod(dataset.sample_shape))
        writer.writerow(["coarse_index", "fine_index"] + [f"v{i}" for i in range(n_values)])
        for i in range(len(dataset)):
            row = [int(dataset.coarse[i]), int(dataset.fine[i])]
            row += [repr(float(v)) for v in dataset.x[i].ravel()]
            writer.writerow(row)


def load_dataset(path):
    """Load a split directory; returns (Dataset, LabelTree)."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise MalformedDocument(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"manifest is not valid JSON: {exc}") from exc
    for key in ("tree", "sample_shape", "count"):
        if key not in manifest:
            raise MalformedDocument(f"manifest missing key {key!r}")
    tree = tree_from_json_obj(manifest["tree"])
    shape = tuple(manifest["sample_shape"])
    if len(shape) != 3 or any(not isinstance(d, int) or d < 1 for d in shape):
        raise MalformedDocument(f"bad sample_shape {shape}")
    n_values = int(np.prod(shape))
    samples_path = path / "samples.csv"
    if not samples_path.is_file():
        raise MalformedDocument(f"missing samples file: {samples_path}")
    xs, coarse, fine = [], [], []
    with open(samples_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["coarse_index", "fine_index"]:
            raise MalformedDocument("samples.csv header must start with coarse_index,fine_index")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2 + n_values:
                raise MalformedDocument(
                    f"samples.csv line {lineno}: expected {2 + n_values} fields, got {len(row)}"
                )
            try:
                coarse.append(int(row[0]))
                fine.append(int(row[1]))
                xs.append(np.array([float(v) for v in row[2:]], dtype=np.float64).reshape(shape))
            except ValueError as exc:
                raise MalformedDocument(f"samples.csv line {lineno}: {exc}") from exc
    if len(xs) != manifest["count"]:
        raise MalformedDocument(
            f"manifest count {manifest['count']} != {len(xs)} rows in samples.csv"
        )
    if not xs:
        raise MalformedDocument("dataset has no samples")
    dataset = Dataset(
        np.stack(xs), np.asarray(coarse, dtype=np.int64), np.asarray(fine, dtype=np.int64)
    )
    _validate_labels(dataset, tree)
    return dataset, tree


def _validate_labels(dataset: Dataset, tree: LabelTree) -> None:
    if dataset.fine.size and (dataset.fine.min() < 0 or dataset.fine.max() >= tree.n_fine):
        raise InconsistentLabels("fine index out of range for the tree")
    if dataset.coarse.size and (dataset.coarse.min() < 0 or dataset.coarse.max() >= tree.n_coarse):
        raise InconsistentLabels("coarse index out of range for the tree")
    parents = np.asarray(tree.parent)[dataset.fine]
    bad = np.nonzero(parents != dataset.coarse)[0]
    if bad.size:
        i = int(bad[0])
        raise InconsistentLabels(
            f"sample {i}: fine {int(dataset.fine[i])} has parent {int(parents[i])}, "
            f"not coarse {int(dataset.coarse[i])}"
        )


def make_batches(dataset: Dataset, batch_size: int, seed: int, epoch: int) -> list[Batch]:
    """Epoch-seeded deterministic shuffle into batches; short tail kept."""
    if len(dataset) == 0:
        raise EmptyDataset("cannot batch an empty dataset")
    if batch_size < 1:
        raise InvalidSpec(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(seed), int(epoch), 1]))
    )
    order = rng.permutation(len(dataset))
    return [
        dataset.subset(order[start : start + batch_size])
        for start in range(0, len(dataset), batch_size)
    ]
