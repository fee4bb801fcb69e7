"""Image ingestion, dataset assembly, fold splitting and synthetic data.

Datasets live in a directory with two class subdirectories, ``healthy``
(label 0) and ``ALL`` (label 1), holding binary .pgm/.ppm files. Feature
datasets serialize to CSV with a ``label,f0,...`` header. Synthetic
datasets exist so the pipeline can be exercised end to end without any
external imagery.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    DatasetError,
    TruncatedFileError,
    UnsupportedMaxvalError,
)
from .rng import PinnedRng, derive_seed

HEALTHY_DIR = "healthy"
ALL_DIR = "ALL"
CLASS_DIRS = {0: HEALTHY_DIR, 1: ALL_DIR}
LABEL_NAMES = {0: "healthy", 1: "ALL"}
IMAGE_EXTENSIONS = (".pgm", ".ppm")

IMAGES = "images"
FEATURE_VECTORS = "feature_vectors"


@dataclass(frozen=True)
class ImageU8:
    width: int
    height: int
    channels: int
    pixels: bytes  # row-major, channel-interleaved

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if len(self.pixels) != self.width * self.height * self.channels:
            raise ValueError(
                f"pixel buffer has {len(self.pixels)} bytes, expected "
                f"{self.width * self.height * self.channels}"
            )


@dataclass(frozen=True)
class LabeledDataset:
    kind: str  # IMAGES or FEATURE_VECTORS
    samples: np.ndarray  # (N, side, side) or (N, d)
    labels: np.ndarray  # (N,) ints in {0, 1}
    names: tuple[str, ...]
    skipped: int = 0  # files ignored during directory loads

    def __post_init__(self):
        if self.kind not in (IMAGES, FEATURE_VECTORS):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if len(self.samples) != len(self.labels) or len(self.labels) != len(self.names):
            raise ValueError("samples, labels and names must have equal length")

    def __len__(self) -> int:
        return len(self.labels)

    def class_count(self, label: int) -> int:
        return int(np.sum(self.labels == label))


# ---------------------------------------------------------------------------
# netpbm decode / encode
# ---------------------------------------------------------------------------

def decode_pnm(data: bytes) -> ImageU8:
    """Decode binary P5 (gray) or P6 (RGB) bytes with maxval 255.

    Headers may contain arbitrary whitespace and ``#`` comments between
    tokens; exactly one whitespace byte separates the maxval from the
    pixel payload.
    """
    if len(data) < 2 or data[0:1] != b"P":
        raise BadMagicError("not a netpbm file")
    magic = data[0:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise BadMagicError(f"unsupported netpbm magic {magic!r}")

    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        if pos >= len(data):
            raise TruncatedFileError("header ended before width/height/maxval")
        byte = data[pos : pos + 1]
        if byte.isspace():
            pos += 1
        elif byte == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif byte.isdigit():
            start = pos
            while pos < len(data) and data[pos : pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise BadMagicError(f"unexpected byte {byte!r} in netpbm header")
    width, height, maxval = fields
    if maxval != 255:
        raise UnsupportedMaxvalError(f"maxval must be 255, got {maxval}")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise TruncatedFileError("missing whitespace between header and payload")
    pos += 1
    need = width * height * channels
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise TruncatedFileError(f"payload has {len(payload)} bytes, expected {need}")
    if len(data) - pos > need:
        raise ValueError(f"{len(data) - pos - need} trailing bytes after pixel payload")
    return ImageU8(width=width, height=height, channels=channels, pixels=payload)


def encode_pnm(img: ImageU8) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + b"\n" + f"{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def _to_gray(img: ImageU8) -> np.ndarray:
    arr = np.frombuffer(img.pixels, dtype=np.uint8).astype(np.float64)
    if img.channels == 1:
        return arr.reshape(img.height, img.width)
    rgb = arr.reshape(img.height, img.width, 3)
    luma = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return np.floor(luma + 0.5)  # nearest, halves up


def _resize_bilinear(gray: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = gray.shape
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    y0c = np.clip(y0, 0, in_h - 1)
    y1c = np.clip(y0 + 1, 0, in_h - 1)
    x0c = np.clip(x0, 0, in_w - 1)
    x1c = np.clip(x0 + 1, 0, in_w - 1)
    tl = gray[np.ix_(y0c, x0c)]
    tr = gray[np.ix_(y0c, x1c)]
    bl = gray[np.ix_(y1c, x0c)]
    br = gray[np.ix_(y1c, x1c)]
    top = tl * (1.0 - fx) + tr * fx
    bottom = bl * (1.0 - fx) + br * fx
    return top * (1.0 - fy) + bottom * fy


def preprocess(img: ImageU8, side: int) -> np.ndarray:
    """Grayscale (luma), bilinear resize with half-pixel centers and edge
    clamping, then scale into [0, 1]."""
    if side < 1:
        raise ValueError("side must be positive")
    gray = _to_gray(img)
    resized = _resize_bilinear(gray, side, side)
    return resized / 255.0


# ---------------------------------------------------------------------------
# directory datasets
# ---------------------------------------------------------------------------

def load_dataset(dir_path, side: int = 64) -> LabeledDataset:
    """Load ``healthy/`` (label 0) then ``ALL/`` (label 1), each ordered
    lexicographically by path. Files with other extensions are skipped and
    counted."""
    root = os.fspath(dir_path)
    samples: list[np.ndarray] = []
    labels: list[int] = []
    names: list[str] = []
    skipped = 0
    for label in sorted(CLASS_DIRS):
        class_dir = os.path.join(root, CLASS_DIRS[label])
        if not os.path.isdir(class_dir):
            raise DatasetError(f"missing class directory {class_dir!r}")
        usable = 0
        for entry in sorted(os.listdir(class_dir)):
            path = os.path.join(class_dir, entry)
            if not os.path.isfile(path):
                continue
            if not entry.lower().endswith(IMAGE_EXTENSIONS):
                skipped += 1
                continue
            with open(path, "rb") as fh:
                img = decode_pnm(fh.read())
            samples.append(preprocess(img, side))
            labels.append(label)
            names.append(os.path.join(CLASS_DIRS[label], entry))
            usable += 1
        if usable == 0:
            raise DatasetError(f"no usable images in class {CLASS_DIRS[label]!r}")
    return LabeledDataset(
        kind=IMAGES,
        samples=np.stack(samples),
        labels=np.array(labels, dtype=np.int64),
        names=tuple(names),
        skipped=skipped,
    )


# ---------------------------------------------------------------------------
# stratified folds
# ---------------------------------------------------------------------------

def stratified_kfold(labels, k: int, seed: int) -> list[np.ndarray]:
    """Disjoint index folds covering everything, per-class counts differing
    by at most one across folds. Within-class order comes from the pinned
    generator, so splits are reproducible."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise ValueError("labels must be a nonempty 1-D sequence")
    k = int(k)
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    rng = PinnedRng(derive_seed(seed, 0x666F6C64))  # tag: "fold"
    folds: list[list[int]] = [[] for _ in range(k)]
    for c in sorted(int(v) for v in np.unique(labels)):
        idx = np.flatnonzero(labels == c)
        if idx.size < k:
            raise ValueError(f"class {c} has {idx.size} samples, fewer than k={k}")
        shuffled = idx[rng.permutation(idx.size)]
        base, extra = divmod(idx.size, k)
        start = 0
        for f in range(k):
            size = base + (1 if f < extra else 0)
            folds[f].extend(shuffled[start : start + size].tolist())
            start += size
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


# ---------------------------------------------------------------------------
# synthetic datasets
# ---------------------------------------------------------------------------

SYNTH_SIGNAL_DIRECTIONS = 6
SYNTH_SIGNAL_AMPLITUDE = 0.75  # per-direction std as a fraction of separation


def synth_dataset(seed: int, per_class: int, dim_or_side: int,
                  separation: float, kind: str = FEATURE_VECTORS) -> LabeledDataset:
    """Deterministic two-class synthetic data.

    Feature kind: Gaussian classes with means at +/-(separation/2) along a
    random unit direction; on top of unit isotropic noise each class adds
    energy along its own random orthonormal directions, scaled by the
    separation, so that subspace and neighbor classifiers both have signal
    to find. At separation 0 both classes are exactly standard normal.

    Image kind: square images of soft bright blobs on a noisy background;
    blob count and size grow with the class-1 separation.
    """
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    if dim_or_side < 1:
        raise ValueError("dim_or_side must be positive")
    if separation < 0:
        raise ValueError("separation must be nonnegative")
    if kind == FEATURE_VECTORS:
        return _synth_features(seed, per_class, dim_or_side, float(separation))
    if kind == IMAGES:
        return _synth_images(seed, per_class, dim_or_side, float(separation))
    raise ValueError(f"unknown dataset kind {kind!r}")


def _synth_features(seed, per_class, dim, separation):
    rng = PinnedRng(derive_seed(seed, 0x73796E46))  # tag: "synF"
    u = rng.normal(dim)
    u /= np.linalg.norm(u)
    r = min(SYNTH_SIGNAL_DIRECTIONS, dim)
    frames = []
    for _ in range(2):
        q, _ = np.linalg.qr(rng.normal(dim * r).reshape(dim, r))
        frames.append(q)
    amp = SYNTH_SIGNAL_AMPLITUDE * separation
    blocks, labels, names = [], [], []
    for c in (0, 1):
        mean = (separation / 2.0) * u * (1.0 if c == 1 else -1.0)
        noise = rng.normal(per_class * dim).reshape(per_class, dim)
        weights = rng.normal(per_class * r).reshape(per_class, r) * amp
        blocks.append(mean[None, :] + noise + weights @ frames[c].T)
        labels.extend([c] * per_class)
        names.extend(f"synth:{LABEL_NAMES[c]}:{i:04d}" for i in range(per_class))
    return LabeledDataset(
        kind=FEATURE_VECTORS,
        samples=np.concatenate(blocks, axis=0),
        labels=np.array(labels, dtype=np.int64),
        names=tuple(names),
    )


def _synth_images(seed, per_class, side, separation):
    rng = PinnedRng(derive_seed(seed, 0x73796E49))  # tag: "synI"
    base_blobs = 2
    base_sigma = max(2.0, side / 16.0)
    yy, xx = np.mgrid[0:side, 0:side]
    images, labels, names = [], [], []
    for c in (0, 1):
        n_blobs = base_blobs + (int(round(separation)) if c == 1 else 0)
        sigma = base_sigma * (1.0 + (separation / 10.0 if c == 1 else 0.0))
        for i in range(per_class):
            img = np.full((side, side), 0.08)
            for _ in range(n_blobs):
                cy = (0.15 + 0.7 * rng.uniform(1)[0]) * side
                cx = (0.15 + 0.7 * rng.uniform(1)[0]) * side
                amp = 0.45 + 0.3 * rng.uniform(1)[0]
                img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
            img += 0.04 * rng.normal(side * side).reshape(side, side)
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(c)
            names.append(f"synth:{LABEL_NAMES[c]}:{i:04d}")
    return LabeledDataset(
        kind=IMAGES,
        samples=np.stack(images),
        labels=np.array(labels, dtype=np.int64),
        names=tuple(names),
    )


def write_image_dataset(dataset: LabeledDataset, out_dir) -> None:
    """Write an image dataset as .pgm files in the class-directory layout."""
    if dataset.kind != IMAGES:
        raise ValueError("only image datasets can be written as directories")
    root = os.fspath(out_dir)
    for label, sub in CLASS_DIRS.items():
        os.makedirs(os.path.join(root, sub), exist_ok=True)
        idx = np.flatnonzero(dataset.labels == label)
        for n, i in enumerate(idx):
            pixels = np.clip(np.rint(dataset.samples[i] * 255.0), 0, 255).astype(np.uint8)
            img = ImageU8(width=pixels.shape[1], height=pixels.shape[0],
                          channels=1, pixels=pixels.tobytes())
            path = os.path.join(root, sub, f"{sub.lower()}_{n:04d}.pgm")
            with open(path, "wb") as fh:
                fh.write(encode_pnm(img))


# ---------------------------------------------------------------------------
# feature CSV
# ---------------------------------------------------------------------------

def save_features_csv(dataset: LabeledDataset, path) -> None:
    """``label,f0,...`` rows with shortest-roundtrip decimal floats."""
    if dataset.kind != FEATURE_VECTORS:
        raise ValueError("only feature datasets serialize to CSV")
    d = dataset.samples.shape[1]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("label," + ",".join(f"f{i}" for i in range(d)) + "\n")
        for label, row in zip(dataset.labels, dataset.samples):
            fh.write(str(int(label)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def load_features_csv(path) -> LabeledDataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        cols = header.split(",")
        if cols[0] != "label" or any(c != f"f{i}" for i, c in enumerate(cols[1:])):
            raise DatasetError(f"unexpected CSV header {header!r}")
        d = len(cols) - 1
        labels, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != d + 1:
                raise DatasetError(f"line {lineno}: expected {d + 1} fields, got {len(parts)}")
            labels.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    if not rows:
        raise DatasetError("feature CSV contains no samples")
    return LabeledDataset(
        kind=FEATURE_VECTORS,
        samples=np.array(rows, dtype=np.float64),
        labels=np.array(labels, dtype=np.int64),
        names=tuple(f"csv:{i:04d}" for i in range(len(rows))),
    )
