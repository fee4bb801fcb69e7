"""Dense matrix and order-3 tensor algebra.

Matrices are 2-D float64 ``numpy`` arrays and tensors are 3-D float64
arrays. Modes are numbered 1..3. The unfolding convention is fixed: the
mode-n unfolding has the mode-n index along rows, and its columns run over
the remaining indices in increasing mode order with the earlier mode
varying fastest. All operations are pure functions; inputs are never
mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SvdConvergenceError

MODES = (1, 2, 3)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return ``a`` as a 2-D float64 array with finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be 2-D and nonempty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_tensor3(t, name: str = "tensor") -> np.ndarray:
    """Validate and return ``t`` as a 3-D float64 array with finite entries."""
    a = np.asarray(t, dtype=np.float64)
    if a.ndim != 3 or min(a.shape) < 1:
        raise ShapeError(f"{name} must be 3-D and nonempty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def _check_mode(mode: int) -> int:
    if mode not in MODES:
        raise ShapeError(f"mode must be one of {MODES}, got {mode!r}")
    return mode - 1


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a = u @ diag(sigma) @ vt`` with a pinned sign convention."""

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray


def svd(a) -> SvdResult:
    """Thin SVD with deterministic signs.

    In every column of ``u`` the entry of largest magnitude is made
    nonnegative (first such index on ties), and the matching row of ``vt``
    is negated to compensate, so the factorization is canonical for golden
    tests.
    """
    m = as_matrix(a)
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(f"SVD did not converge for shape {m.shape}: {exc}") from exc
    u = np.ascontiguousarray(u)
    vt = np.ascontiguousarray(vt)
    for j in range(u.shape[1]):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0.0:
            u[:, j] = -u[:, j]
            vt[j, :] = -vt[j, :]
    return SvdResult(u=u, sigma=s, vt=vt)


def unfold(t, mode: int) -> np.ndarray:
    """Mode-n unfolding of an order-3 tensor.

    Element ``(i1, i2, i3)`` lands in row ``i_mode``; the column index runs
    over the remaining indices in increasing mode order with the earlier
    mode varying fastest.
    """
    a = as_tensor3(t)
    axis = _check_mode(mode)
    return np.reshape(np.moveaxis(a, axis, 0), (a.shape[axis], -1), order="F")


def fold(m, mode: int, dims: tuple[int, int, int]) -> np.ndarray:
    """Exact inverse of :func:`unfold` under the same convention."""
    a = as_matrix(m)
    axis = _check_mode(mode)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ShapeError(f"dims must be a triple of positive counts, got {dims}")
    rest = [d for i, d in enumerate(dims) if i != axis]
    if a.shape[0] != dims[axis] or a.shape[1] != rest[0] * rest[1]:
        raise ShapeError(
            f"matrix shape {a.shape} does not match mode-{mode} unfolding of dims {dims}"
        )
    t = np.reshape(a, (dims[axis], rest[0], rest[1]), order="F")
    return np.ascontiguousarray(np.moveaxis(t, 0, axis))


def mode_product(t, m, mode: int) -> np.ndarray:
    """n-mode product: multiply ``m`` onto the mode-``mode`` fibers of ``t``."""
    a = as_tensor3(t)
    w = as_matrix(m)
    axis = _check_mode(mode)
    if w.shape[1] != a.shape[axis]:
        raise ShapeError(
            f"matrix has {w.shape[1]} columns but tensor mode {mode} has size {a.shape[axis]}"
        )
    new_dims = list(a.shape)
    new_dims[axis] = w.shape[0]
    return fold(w @ unfold(a, mode), mode, tuple(new_dims))


def _left_singular_basis(m: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """First ``k`` left singular vectors plus the full (thin) spectrum.

    Uses the complete left basis so ``k`` may exceed min(m.shape) when the
    unfolding is wide the other way; the extra columns span the orthogonal
    complement and carry zero singular value. Signs follow :func:`svd`.
    """
    try:
        u, sigma, _ = np.linalg.svd(m, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(f"SVD did not converge for shape {m.shape}: {exc}") from exc
    u = np.ascontiguousarray(u[:, :k])
    for j in range(u.shape[1]):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0.0:
            u[:, j] = -u[:, j]
    return u, sigma


@dataclass(frozen=True)
class HosvdDecomposition:
    """Truncated higher-order SVD of an order-3 tensor.

    ``core`` has shape ``ranks``; ``factors[n]`` holds the leading left
    singular vectors of the mode-(n+1) unfolding; ``mode_singular_values``
    keeps each unfolding's full spectrum for error bounds.
    """

    core: np.ndarray
    factors: tuple[np.ndarray, np.ndarray, np.ndarray]
    mode_singular_values: tuple[np.ndarray, np.ndarray, np.ndarray]

    @property
    def ranks(self) -> tuple[int, int, int]:
        return self.core.shape


def hosvd(t, ranks: tuple[int, int, int]) -> HosvdDecomposition:
    """Truncated HOSVD via one thin SVD per mode-n unfolding."""
    a = as_tensor3(t)
    ranks = tuple(int(k) for k in ranks)
    if len(ranks) != 3:
        raise ShapeError(f"ranks must be a triple, got {ranks}")
    for n, (k, size) in enumerate(zip(ranks, a.shape), start=1):
        if not 1 <= k <= size:
            raise ShapeError(f"rank {k} for mode {n} is outside 1..{size}")
    factors = []
    spectra = []
    for mode in MODES:
        factor, sigma = _left_singular_basis(unfold(a, mode), ranks[mode - 1])
        factors.append(factor)
        spectra.append(sigma)
    core = a
    for mode, f in zip(MODES, factors):
        core = mode_product(core, f.T, mode)
    return HosvdDecomposition(
        core=core, factors=tuple(factors), mode_singular_values=tuple(spectra)
    )


def reconstruct(d: HosvdDecomposition) -> np.ndarray:
    """Map a decomposition back to tensor space: core x1 U1 x2 U2 x3 U3."""
    out = d.core
    for mode, f in zip(MODES, d.factors):
        out = mode_product(out, f, mode)
    return out


def truncation_error_bound(
    mode_singular_values, ranks: tuple[int, int, int]
) -> float:
    """Upper bound on the Frobenius error of rank-``ranks`` truncation.

    sqrt of the summed squares of every singular value discarded from each
    mode's spectrum.
    """
    if len(mode_singular_values) != 3 or len(ranks) != 3:
        raise ShapeError("expected three spectra and three ranks")
    total = 0.0
    for sigma, k in zip(mode_singular_values, ranks):
        sigma = np.asarray(sigma, dtype=np.float64)
        k = int(k)
        if k < 0:
            raise ShapeError(f"rank must be nonnegative, got {k}")
        # ranks past the thin spectrum discard nothing (those values are 0)
        total += float(np.sum(sigma[k:] ** 2))
    return float(np.sqrt(total))


def frobenius(t) -> float:
    """Frobenius norm of a matrix or tensor."""
    return float(np.linalg.norm(np.asarray(t, dtype=np.float64).ravel()))
