"""Per-class subspace training and minimal-residual classification.

Vector mode learns, for each class, the span of the leading left singular
vectors of that class's sample matrix. Matrix mode stacks each class's
images into an order-3 tensor, takes a truncated HOSVD, and turns the core's
mode-3 slices into mutually orthonormal basis matrices. Classification
assigns the class whose subspace leaves the smallest relative residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import serialize
from .errors import ShapeError
from .tensor import as_matrix, hosvd, svd

VECTOR_MODE = "vector"
MATRIX_MODE = "matrix"
_MODE_CODES = {VECTOR_MODE: 0, MATRIX_MODE: 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}

DEFAULT_VECTOR_RANK = 8
DEFAULT_MATRIX_RANKS = (16, 16, 4)


@dataclass(frozen=True)
class HosvdModel:
    """Trained per-class subspace bases.

    ``bases[i]`` belongs to ``class_labels[i]``: a (d, k) orthonormal-column
    matrix in vector mode, or a (k3_retained, h, w) stack of basis matrices
    orthonormal under the Frobenius inner product in matrix mode. ``ranks``
    keeps the ranks the model was trained with; in matrix mode a class may
    retain fewer than ranks[2] basis matrices if core slices degenerated.
    """

    mode: str
    class_labels: tuple[int, ...]
    bases: tuple[np.ndarray, ...]
    input_shape: tuple[int, ...]
    ranks: tuple[int, ...]
    format_version: int = serialize.FORMAT_VERSION


@dataclass(frozen=True)
class ClassificationResult:
    label: int
    residuals: dict[int, float]
    margin: float


def _split_by_class(labels) -> dict[int, np.ndarray]:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise ValueError("labels must be a nonempty 1-D sequence")
    classes = sorted(int(c) for c in np.unique(labels))
    if any(c not in (0, 1) for c in classes):
        raise ValueError(f"labels must be 0 or 1, got classes {classes}")
    if len(classes) < 2:
        raise ValueError(f"training needs both classes, got only {classes}")
    return {c: np.flatnonzero(labels == c) for c in classes}


def train_vector_mode(features, labels, rank: int = DEFAULT_VECTOR_RANK) -> HosvdModel:
    """Per class: basis = first ``rank`` left singular vectors of its samples.

    ``features`` is d x N with one column per sample.
    """
    f = as_matrix(features, "features")
    d, n = f.shape
    labels = np.asarray(labels)
    if labels.size != n:
        raise ShapeError(f"{n} samples but {labels.size} labels")
    rank = int(rank)
    if rank < 1 or rank > d:
        raise ValueError(f"rank must be in 1..{d} (feature dimension), got {rank}")
    by_class = _split_by_class(labels)
    bases = []
    for c, idx in by_class.items():
        if idx.size < rank:
            raise ValueError(f"class {c} has {idx.size} samples, fewer than rank {rank}")
        q = svd(f[:, idx]).u[:, :rank]
        assert np.max(np.abs(q.T @ q - np.eye(rank))) <= 1e-10
        bases.append(q)
    return HosvdModel(
        mode=VECTOR_MODE,
        class_labels=tuple(by_class.keys()),
        bases=tuple(bases),
        input_shape=(d,),
        ranks=(rank,),
    )


def _orthonormal_basis_stack(slices: list[np.ndarray]) -> np.ndarray:
    """Modified Gram-Schmidt over matrices under the Frobenius inner product.

    Slices of an exact all-orthogonal core pass through unchanged up to
    scaling; spatially truncated cores lose exact slice orthogonality, and
    this restores it without changing the span. Dependent or zero slices
    are dropped.
    """
    kept: list[np.ndarray] = []
    scale = max(float(np.linalg.norm(s)) for s in slices)
    if scale == 0.0:
        return np.zeros((0,) + slices[0].shape)
    for s in slices:
        v = s.copy()
        for q in kept:
            v -= np.sum(v * q) * q
        norm = float(np.linalg.norm(v))
        if norm > 1e-12 * scale:
            kept.append(v / norm)
    return np.stack(kept, axis=0) if kept else np.zeros((0,) + slices[0].shape)


def train_matrix_mode(images, labels, ranks=DEFAULT_MATRIX_RANKS) -> HosvdModel:
    """Per class: HOSVD the (h, w, n_c) image stack and keep the mode-3
    core slices, mapped back to image space, as an orthonormal basis."""
    if len(images) == 0:
        raise ValueError("images must be nonempty")
    imgs = [as_matrix(im, f"images[{i}]") for i, im in enumerate(images)]
    h, w = imgs[0].shape
    if any(im.shape != (h, w) for im in imgs):
        raise ShapeError("all images must share one shape")
    labels = np.asarray(labels)
    if labels.size != len(imgs):
        raise ShapeError(f"{len(imgs)} images but {labels.size} labels")
    k1, k2, k3 = (int(k) for k in ranks)
    if not (1 <= k1 <= h and 1 <= k2 <= w):
        raise ValueError(f"spatial ranks ({k1},{k2}) must fit image shape ({h},{w})")
    if k3 < 1:
        raise ValueError("mode-3 rank must be at least 1")
    by_class = _split_by_class(labels)
    bases = []
    for c, idx in by_class.items():
        if idx.size < k3:
            raise ValueError(f"class {c} has {idx.size} samples, fewer than rank {k3}")
        stack = np.stack([imgs[i] for i in idx], axis=2)
        dec = hosvd(stack, (k1, k2, k3))
        u1, u2 = dec.factors[0], dec.factors[1]
        slices = [u1 @ dec.core[:, :, j] @ u2.T for j in range(k3)]
        basis = _orthonormal_basis_stack(slices)
        if basis.shape[0] == 0:
            raise ValueError(f"class {c} produced no usable basis matrices")
        gram = np.einsum("ihw,jhw->ij", basis, basis)
        assert np.max(np.abs(gram - np.eye(basis.shape[0]))) <= 1e-8
        bases.append(basis)
    return HosvdModel(
        mode=MATRIX_MODE,
        class_labels=tuple(by_class.keys()),
        bases=tuple(bases),
        input_shape=(h, w),
        ranks=(k1, k2, k3),
    )


def classify(model: HosvdModel, sample) -> ClassificationResult:
    """Minimal relative residual over the model's class subspaces.

    Residuals are norm-divided so they lie in [0, 1] and are invariant to
    positive scaling of the sample. Ties go to the lowest class id.
    """
    z = np.asarray(sample, dtype=np.float64)
    if z.shape != model.input_shape:
        raise ShapeError(f"sample shape {z.shape} != model input shape {model.input_shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("sample contains non-finite entries")
    norm2 = float(np.sum(z * z))
    if norm2 == 0.0:
        raise ValueError("cannot classify a zero-norm sample")
    norm = np.sqrt(norm2)
    residuals: dict[int, float] = {}
    for c, basis in zip(model.class_labels, model.bases):
        # ||z - proj(z)|| evaluated directly: algebraically equal to
        # sqrt(||z||^2 - ||coef||^2) but immune to cancellation near 0
        if model.mode == VECTOR_MODE:
            rest = z - basis @ (basis.T @ z)
        else:
            coef = np.einsum("jhw,hw->j", basis, z)
            rest = z - np.einsum("j,jhw->hw", coef, basis)
        residuals[c] = min(float(np.linalg.norm(rest) / norm), 1.0)
    ordered = sorted(residuals.items())  # ascending class id
    values = [r for _, r in ordered]
    best = int(np.argmin(values))  # first minimum -> lowest class id
    label = ordered[best][0]
    rest = sorted(values[:best] + values[best + 1 :])
    margin = (rest[0] - values[best]) if rest else 0.0
    return ClassificationResult(label=label, residuals=residuals, margin=margin)


def save_model(model: HosvdModel, path) -> None:
    """Write the model container; see the package docs for the exact layout."""
    w = serialize.ByteWriter(serialize.MODEL_MAGIC, model.format_version)
    w.u8(_MODE_CODES[model.mode])
    w.u32(len(model.class_labels))
    for label, basis in zip(model.class_labels, model.bases):
        w.u32(label)
        if model.mode == VECTOR_MODE:
            d, k = basis.shape
            w.u32(d)
            w.u32(k)
        else:
            k3_retained, h, ww = basis.shape
            w.u32(h)
            w.u32(ww)
            w.u32(model.ranks[0])
            w.u32(model.ranks[1])
            w.u32(model.ranks[2])
            w.u32(k3_retained)
        w.f64_block(basis)
    with open(path, "wb") as fh:
        fh.write(w.finish())


def load_model(path) -> HosvdModel:
    with open(path, "rb") as fh:
        data = fh.read()
    return _model_from_bytes(data)


def _model_from_bytes(data: bytes) -> HosvdModel:
    r = serialize.ByteReader(data, serialize.MODEL_MAGIC)
    mode_code = r.u8()
    if mode_code not in _MODE_NAMES:
        raise ValueError(f"unknown model mode code {mode_code}")
    mode = _MODE_NAMES[mode_code]
    n_classes = r.u32()
    if n_classes == 0:
        raise ValueError("model file declares zero classes")
    labels: list[int] = []
    bases: list[np.ndarray] = []
    input_shape: tuple[int, ...] | None = None
    ranks: tuple[int, ...] | None = None
    for _ in range(n_classes):
        labels.append(r.u32())
        if mode == VECTOR_MODE:
            d, k = r.u32(), r.u32()
            basis = r.f64_block().reshape(d, k)
            shape, rk = (d,), (k,)
        else:
            h, ww = r.u32(), r.u32()
            k1, k2, k3 = r.u32(), r.u32(), r.u32()
            k3_retained = r.u32()
            basis = r.f64_block().reshape(k3_retained, h, ww)
            shape, rk = (h, ww), (k1, k2, k3)
        if input_shape is None:
            input_shape, ranks = shape, rk
        elif input_shape != shape or ranks != rk:
            raise ValueError("model file mixes input shapes or ranks across classes")
        bases.append(basis)
    r.finish()
    if labels != sorted(set(labels)):
        raise ValueError(f"class labels must be strictly increasing, got {labels}")
    return HosvdModel(
        mode=mode,
        class_labels=tuple(labels),
        bases=tuple(bases),
        input_shape=input_shape,
        ranks=ranks,
    )
