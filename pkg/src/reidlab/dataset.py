"""Identity-labelled feature datasets, synthetic generators and file IO.

A dataset is stored column-wise (ids, cameras, vectors) so the numeric
stages can work on whole arrays; :attr:`FeatureDataset.records` gives the
row view when needed.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, ParseError, SplitError


@dataclass(frozen=True)
class LabeledFeature:
    id: int
    camera: int
    vector: np.ndarray


class FeatureDataset:
    """Immutable collection of labelled feature vectors sharing one dimensionality."""

    def __init__(self, ids, cameras, vectors):
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        cameras = np.asarray(cameras, dtype=np.int64).reshape(-1)
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ConfigurationError(f"vectors must be 2-D, got shape {vectors.shape}")
        if not (len(ids) == len(cameras) == vectors.shape[0]):
            raise ConfigurationError("ids, cameras and vectors disagree in length")
        if vectors.shape[1] < 1:
            raise ConfigurationError("feature dimensionality must be >= 1")
        if np.any(ids < 0) or np.any(cameras < 0):
            raise ConfigurationError("identity and camera labels must be non-negative")
        if not np.all(np.isfinite(vectors)):
            raise ConfigurationError("feature vectors contain non-finite values")
        for arr in (ids, cameras, vectors):
            arr.setflags(write=False)
        self.ids = ids
        self.cameras = cameras
        self.vectors = vectors

    def __len__(self):
        return len(self.ids)

    def __repr__(self):
        return (f"FeatureDataset(n={len(self)}, dim={self.dim}, "
                f"identities={self.num_identities})")

    def __eq__(self, other):
        if not isinstance(other, FeatureDataset):
            return NotImplemented
        return (np.array_equal(self.ids, other.ids)
                and np.array_equal(self.cameras, other.cameras)
                and self.vectors.shape == other.vectors.shape
                and np.array_equal(self.vectors, other.vectors))

    __hash__ = None

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def num_identities(self) -> int:
        return len(np.unique(self.ids))

    @property
    def identities(self) -> np.ndarray:
        return np.unique(self.ids)

    @property
    def records(self) -> list[LabeledFeature]:
        return list(self)

    def __iter__(self) -> Iterator[LabeledFeature]:
        for i in range(len(self)):
            yield LabeledFeature(int(self.ids[i]), int(self.cameras[i]), self.vectors[i])

    @classmethod
    def from_records(cls, records: Sequence[LabeledFeature]) -> "FeatureDataset":
        if not records:
            raise ConfigurationError("cannot build a dataset from zero records")
        dims = {len(r.vector) for r in records}
        if len(dims) != 1:
            raise ConfigurationError(f"records have mixed dimensionalities {sorted(dims)}")
        return cls([r.id for r in records], [r.camera for r in records],
                   np.stack([np.asarray(r.vector, dtype=np.float64) for r in records]))

    def subset(self, indices) -> "FeatureDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return FeatureDataset(self.ids[indices], self.cameras[indices], self.vectors[indices])

    def with_vectors(self, vectors) -> "FeatureDataset":
        """Same labels, new feature vectors (e.g. after projection or extraction)."""
        return FeatureDataset(self.ids, self.cameras, vectors)

    def dense_labels(self) -> tuple[np.ndarray, np.ndarray]:
        """Identity labels re-indexed to 0..C-1, plus the sorted original ids."""
        classes, labels = np.unique(self.ids, return_inverse=True)
        return labels.astype(np.int64), classes

    def tobytes(self) -> bytes:
        return self.ids.tobytes() + self.cameras.tobytes() + self.vectors.tobytes()


def concatenate(datasets: Sequence[FeatureDataset]) -> FeatureDataset:
    return FeatureDataset(np.concatenate([d.ids for d in datasets]),
                          np.concatenate([d.cameras for d in datasets]),
                          np.concatenate([d.vectors for d in datasets]))


@dataclass(frozen=True)
class SyntheticSpec:
    num_identities: int = 20
    records_per_identity: int = 10
    num_cameras: int = 4
    dim: int = 32
    intra_class_stddev: float = 1.0
    camera_shift_stddev: float = 1.0
    class_center_stddev: float = 1.0

    def validate(self):
        bounds = [
            ("num_identities", self.num_identities >= 2, ">= 2"),
            ("records_per_identity", self.records_per_identity >= 2, ">= 2"),
            ("num_cameras", self.num_cameras >= 2, ">= 2"),
            ("dim", self.dim >= 2, ">= 2"),
            ("intra_class_stddev", self.intra_class_stddev > 0, "> 0"),
            ("camera_shift_stddev", self.camera_shift_stddev >= 0, ">= 0"),
            ("class_center_stddev", self.class_center_stddev > 0, "> 0"),
        ]
        for name, ok, bound in bounds:
            if not ok:
                raise ConfigurationError(
                    f"SyntheticSpec.{name} must be {bound}, got {getattr(self, name)!r}")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction_of_identities: float = 0.5
    queries_per_test_identity: int = 1

    def validate(self):
        if not 0.0 < self.train_fraction_of_identities < 1.0:
            raise ConfigurationError("train_fraction_of_identities must lie in (0, 1)")
        if self.queries_per_test_identity < 1:
            raise ConfigurationError("queries_per_test_identity must be >= 1")


def _camera_layout(spec: SyntheticSpec, rng) -> np.ndarray:
    # Each identity starts at a random camera and cycles, so it is seen by
    # min(records, cameras) distinct views.
    starts = rng.integers(0, spec.num_cameras, size=spec.num_identities)
    offsets = np.arange(spec.records_per_identity)
    return (starts[:, None] + offsets[None, :]) % spec.num_cameras


def generate_synthetic(spec: SyntheticSpec, seed: int) -> FeatureDataset:
    """Gaussian identity clusters with additive per-camera offsets.

    Record vectors are ``center[id] + offset[camera] + noise``.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, spec.class_center_stddev, size=(spec.num_identities, spec.dim))
    offsets = rng.normal(0.0, 1.0, size=(spec.num_cameras, spec.dim)) * spec.camera_shift_stddev
    cams = _camera_layout(spec, rng)
    n = spec.num_identities * spec.records_per_identity
    noise = rng.normal(0.0, spec.intra_class_stddev, size=(n, spec.dim))
    ids = np.repeat(np.arange(spec.num_identities), spec.records_per_identity)
    cams = cams.reshape(-1)
    vectors = centers[ids] + offsets[cams] + noise
    return FeatureDataset(ids, cams, vectors)


# ---------------------------------------------------------------------------
# Image corpus


@dataclass(frozen=True)
class Image:
    """RGB image; ``pixels`` is a (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] * px.shape[1] == 0:
            raise ConfigurationError(f"image must be a non-empty HxWx3 array, got {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ConfigurationError("channel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class ImageCorpus:
    images: list
    ids: np.ndarray
    cameras: np.ndarray

    def __len__(self):
        return len(self.images)

    def subset(self, indices) -> "ImageCorpus":
        indices = np.asarray(indices, dtype=np.int64)
        return ImageCorpus([self.images[i] for i in indices],
                           self.ids[indices], self.cameras[indices])


HEAD_COLOR = np.array([224.0, 172.0, 140.0])


def generate_synthetic_images(spec: SyntheticSpec, image_height: int, image_width: int,
                              seed: int) -> ImageCorpus:
    """Person-like crops: a head block, an identity-coloured torso and legs.

    Labels follow the same layout as :func:`generate_synthetic`. Camera
    brightness offsets are ``camera_shift_stddev * 255`` in pixel units and
    pixel noise is ``intra_class_stddev * 255``.
    """
    spec.validate()
    if image_height < 8 or image_width < 8:
        raise ConfigurationError(
            f"image size must be at least 8x8, got {image_height}x{image_width}")
    rng = np.random.default_rng(seed)
    torso = rng.integers(0, 256, size=(spec.num_identities, 3)).astype(np.float64)
    legs = rng.integers(0, 256, size=(spec.num_identities, 3)).astype(np.float64)
    brightness = rng.normal(0.0, 1.0, size=spec.num_cameras) * spec.camera_shift_stddev * 255.0
    cams = _camera_layout(spec, rng).reshape(-1)
    ids = np.repeat(np.arange(spec.num_identities), spec.records_per_identity)

    head_end = max(1, image_height // 8)
    torso_end = image_height // 2
    images = []
    for k in range(len(ids)):
        base = np.empty((image_height, image_width, 3))
        base[:head_end] = HEAD_COLOR
        base[head_end:torso_end] = torso[ids[k]]
        base[torso_end:] = legs[ids[k]]
        base += brightness[cams[k]]
        base += rng.normal(0.0, spec.intra_class_stddev * 255.0, size=base.shape)
        images.append(Image(np.clip(np.rint(base), 0, 255).astype(np.uint8)))
    return ImageCorpus(images, ids.astype(np.int64), cams.astype(np.int64))


def write_ppm(image: Image, path):
    h, w = image.height, image.width
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image.pixels).tobytes())


def read_ppm(path) -> Image:
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    # Header: magic, width, height, maxval separated by whitespace; '#' starts a comment.
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated PPM header")
        fields.append(data[start:pos])
    pos += 1
    if fields[0] != b"P6":
        raise ParseError(f"{path}: not a binary PPM (P6) file")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ParseError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise ParseError(f"{path}: unsupported maxval {maxval}")
    if len(data) - pos < h * w * 3:
        raise ParseError(f"{path}: pixel data truncated")
    raw = np.frombuffer(data, dtype=np.uint8, count=h * w * 3, offset=pos)
    return Image(raw.reshape(h, w, 3).copy())


def image_filename(identity: int, camera: int, index: int) -> str:
    return f"{identity:04d}_{camera:02d}_{index:04d}.ppm"


def save_image_corpus(corpus: ImageCorpus, directory):
    """Write one PPM per record plus ``manifest.csv`` (filename,id,camera)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    counters: dict[int, int] = {}
    rows = []
    for img, ident, cam in zip(corpus.images, corpus.ids, corpus.cameras):
        index = counters.get(int(ident), 0)
        counters[int(ident)] = index + 1
        name = image_filename(int(ident), int(cam), index)
        write_ppm(img, directory / name)
        rows.append((name, int(ident), int(cam)))
    with open(directory / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["filename", "id", "camera"])
        writer.writerows(rows)


def load_image_corpus(directory) -> ImageCorpus:
    directory = Path(directory)
    manifest = directory / "manifest.csv"
    with open(manifest, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["filename", "id", "camera"]:
            raise ParseError(f"{manifest}: bad header {header}", line=1)
        images, ids, cams = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ParseError(f"{manifest}: expected 3 fields", line=lineno)
            try:
                ident, cam = int(row[1]), int(row[2])
            except ValueError:
                raise ParseError(f"{manifest}: non-integer label", line=lineno) from None
            images.append(read_ppm(directory / row[0]))
            ids.append(ident)
            cams.append(cam)
    return ImageCorpus(images, np.array(ids, dtype=np.int64), np.array(cams, dtype=np.int64))


# ---------------------------------------------------------------------------
# Splits


def split_indices(ids, split: SplitSpec, seed: int):
    """Index-level version of :func:`split_train_query_gallery`.

    Returns ``(train_idx, query_idx, gallery_idx)`` each in ascending order.
    """
    split.validate()
    ids = np.asarray(ids)
    rng = np.random.default_rng(seed)
    identities = np.unique(ids)
    if len(identities) < 2:
        raise SplitError("need at least 2 identities to form disjoint train/test pools")
    n_train = int(round(split.train_fraction_of_identities * len(identities)))
    n_train = min(max(n_train, 1), len(identities) - 1)
    order = rng.permutation(identities)
    train_ids = np.sort(order[:n_train])
    test_ids = np.sort(order[n_train:])

    need = split.queries_per_test_identity + 1
    short = [int(t) for t in test_ids if np.count_nonzero(ids == t) < need]
    if short:
        raise SplitError(f"test identities with fewer than {need} records: {short}", short)

    train_idx = np.flatnonzero(np.isin(ids, train_ids))
    query_idx = []
    for t in test_ids:
        members = np.flatnonzero(ids == t)
        query_idx.extend(rng.permutation(members)[:split.queries_per_test_identity])
    query_idx = np.sort(np.asarray(query_idx, dtype=np.int64))
    test_mask = np.isin(ids, test_ids)
    test_mask[query_idx] = False
    gallery_idx = np.flatnonzero(test_mask)
    return train_idx, query_idx, gallery_idx


def split_train_query_gallery(ds: FeatureDataset, split: SplitSpec, seed: int):
    """Identity-disjoint train/test split; test identities are divided into query and gallery."""
    train_idx, query_idx, gallery_idx = split_indices(ds.ids, split, seed)
    return ds.subset(train_idx), ds.subset(query_idx), ds.subset(gallery_idx)


# ---------------------------------------------------------------------------
# CSV interchange


def save_csv(ds: FeatureDataset, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "camera"] + [f"f{j}" for j in range(ds.dim)])
        for ident, cam, vec in zip(ds.ids, ds.cameras, ds.vectors):
            writer.writerow([int(ident), int(cam)] + [repr(float(v)) for v in vec])


def load_csv(path) -> FeatureDataset:
    path = os.fspath(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["id", "camera"] or len(header) < 3:
            raise ParseError(f"{path}: header must start with id,camera,f0", line=1)
        dim = len(header) - 2
        if header[2:] != [f"f{j}" for j in range(dim)]:
            raise ParseError(f"{path}: feature columns must be f0..f{dim - 1}", line=1)
        ids, cams, rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 2:
                raise ParseError(f"{path}: expected {dim + 2} fields, got {len(row)}", line=lineno)
            try:
                ident, cam = int(row[0]), int(row[1])
                vec = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", line=lineno) from None
            if ident < 0 or cam < 0:
                raise ParseError(f"{path}: negative label", line=lineno)
            if not all(math.isfinite(v) for v in vec):
                raise ParseError(f"{path}: non-finite value", line=lineno)
            ids.append(ident)
            cams.append(cam)
            rows.append(vec)
    if not rows:
        raise ParseError(f"{path}: dataset is empty (header only)")
    return FeatureDataset(ids, cams, np.array(rows, dtype=np.float64))
