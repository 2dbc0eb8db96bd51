"""Dataset ingestion and persistence.

IDX-format image/label files (big-endian, as distributed with MNIST),
comma-separated feature tables with a leading text label column, and
seeded synthetic generators for fixtures and desk-scale experiments.
Readers reject malformed input rather than silently truncating.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, ParseError, TruncatedFile
from .images import RasterImage

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledSet:
    """Immutable dataset: feature rows plus one text label per row."""

    features: np.ndarray
    labels: tuple

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != len(self.labels):
            raise ValueError("features must be (n, d) with one label per row")
        feats = feats.copy()
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", tuple(str(l) for l in self.labels))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> tuple:
        return tuple(sorted(set(self.labels)))


def read_idx_images(path) -> list[RasterImage]:
    """Parse a big-endian IDX image file into [0,1]-scaled images."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise TruncatedFile(f"{path}: header needs 16 bytes, file has {len(data)}")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise BadMagic(f"{path}: magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")
    expected = 16 + count * rows * cols
    if len(data) < expected:
        raise TruncatedFile(f"{path}: {len(data)} bytes, header implies {expected}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16)
    pixels = pixels.reshape(count, rows, cols).astype(np.float64) / 255.0
    return [RasterImage(p) for p in pixels]


def read_idx_labels(path) -> list[int]:
    """Parse a big-endian IDX label file (one unsigned byte per label)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8:
        raise TruncatedFile(f"{path}: header needs 8 bytes, file has {len(data)}")
    magic, count = struct.unpack(">II", data[:8])
    if magic != IDX_LABELS_MAGIC:
        raise BadMagic(f"{path}: magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")
    if len(data) < 8 + count:
        raise TruncatedFile(f"{path}: {len(data)} bytes, header implies {8 + count}")
    return [int(b) for b in data[8 : 8 + count]]


def write_idx_images(path, images) -> None:
    """Write images as a big-endian IDX file (intensities rescaled to bytes)."""
    images = list(images)
    if images:
        rows, cols = images[0].pixels.shape
    else:
        rows = cols = 0
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(images), rows, cols))
        for img in images:
            if img.pixels.shape != (rows, cols):
                raise ValueError("all images in one IDX file must share a shape")
            fh.write(np.round(img.pixels * 255.0).astype(np.uint8).tobytes())


def write_idx_labels(path, labels) -> None:
    labels = [int(l) for l in labels]
    if any(not 0 <= l <= 255 for l in labels):
        raise ValueError("IDX labels must fit in one byte")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(bytes(labels))


def read_feature_table(path) -> LabeledSet:
    """Parse a comma-separated table: label, then a constant-width row of reals.

    Width mismatches and non-finite entries are rejected with the 1-based
    line number.
    """
    labels = []
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise ParseError(lineno, "need a label and at least one feature")
            if width is None:
                width = len(parts) - 1
            elif len(parts) - 1 != width:
                raise ParseError(lineno, f"expected {width} features, got {len(parts) - 1}")
            try:
                values = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise ParseError(lineno, "non-numeric feature value") from None
            if not np.all(np.isfinite(values)):
                raise ParseError(lineno, "non-finite feature value")
            labels.append(parts[0])
            rows.append(values)
    if not rows:
        raise ParseError(1, "empty table")
    return LabeledSet(features=np.array(rows), labels=labels)


def write_feature_table(path, dataset: LabeledSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label, row in zip(dataset.labels, dataset.features):
            fh.write(label + "," + ",".join(repr(float(v)) for v in row) + "\n")


def make_blobs(classes: int, per_class: int, d: int, sigma: float, seed: int) -> LabeledSet:
    """Gaussian blobs around seeded class centers on the radius-5 sphere."""
    if classes < 1 or per_class < 1 or d < 1 or sigma < 0:
        raise ValueError("counts must be >= 1 and sigma >= 0")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((classes, d))
    centers *= 5.0 / np.linalg.norm(centers, axis=1, keepdims=True)
    feats = []
    labels = []
    for ci in range(classes):
        pts = centers[ci] + sigma * rng.standard_normal((per_class, d))
        feats.append(pts)
        labels.extend([f"c{ci}"] * per_class)
    return LabeledSet(features=np.vstack(feats), labels=labels)


def make_glyph_set(
    classes: int,
    per_class: int,
    side: int = 28,
    shift_px: int = 2,
    noise: float = 0.05,
    seed: int = 0,
) -> tuple[list[RasterImage], list[int]]:
    """Synthetic digit-like raster dataset.

    Each class gets a random smooth blob prototype; samples are the
    prototype under a random integer shift of up to shift_px pixels plus
    clamped pixel noise. Carries the shift structure the invariant-metric
    experiments rely on.
    """
    from scipy import ndimage as ndi

    rng = np.random.default_rng(seed)
    protos = []
    for _ in range(classes):
        spots = np.zeros((side, side))
        k = rng.integers(3, 7)
        rr = rng.integers(side // 4, 3 * side // 4, size=k)
        cc = rng.integers(side // 4, 3 * side // 4, size=k)
        spots[rr, cc] = rng.uniform(3.0, 6.0, size=k)
        proto = ndi.gaussian_filter(spots, sigma=rng.uniform(1.2, 2.2))
        protos.append(np.clip(proto / max(proto.max(), 1e-12), 0.0, 1.0))

    images = []
    labels = []
    for ci, proto in enumerate(protos):
        for _ in range(per_class):
            dx, dy = rng.integers(-shift_px, shift_px + 1, size=2)
            px = np.zeros_like(proto)
            h, w = proto.shape
            src_r = slice(max(0, -dy), min(h, h - dy))
            src_c = slice(max(0, -dx), min(w, w - dx))
            dst_r = slice(max(0, dy), min(h, h + dy))
            dst_c = slice(max(0, dx), min(w, w + dx))
            px[dst_r, dst_c] = proto[src_r, src_c]
            px = np.clip(px + noise * rng.standard_normal(px.shape), 0.0, 1.0)
            images.append(RasterImage(px))
            labels.append(ci)

    order = rng.permutation(len(images))
    return [images[i] for i in order], [labels[i] for i in order]


def images_to_set(images, labels) -> LabeledSet:
    """Flatten raster images into a labeled feature set."""
    return LabeledSet(
        features=np.array([img.flatten() for img in images]),
        labels=[str(l) for l in labels],
    )
