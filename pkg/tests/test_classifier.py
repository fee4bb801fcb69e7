import numpy as np
import pytest

from hosvdkit.classifier import (
    HosvdModel,
    classify,
    load_model,
    save_model,
    train_matrix_mode,
    train_vector_mode,
)
from hosvdkit.errors import ShapeError


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------

def top_k_projector_oracle(samples, k):
    """Dense eigen-decomposition of F F^T; returns the rank-k projector."""
    g = samples @ samples.T
    w, v = np.linalg.eigh(g)
    top = v[:, np.argsort(w)[::-1][:k]]
    return top @ top.T


def matrix_residual_oracle(basis_stack, z):
    """Least-squares fit of z over the stored basis matrices via the
    normal equations; returns the relative residual."""
    b = basis_stack.reshape(basis_stack.shape[0], -1).T
    gram = b.T @ b
    coef = np.linalg.solve(gram, b.T @ z.ravel())
    resid = z.ravel() - b @ coef
    return float(np.linalg.norm(resid) / np.linalg.norm(z))


def e(i, d=3):
    v = np.zeros(d)
    v[i] = 1.0
    return v


# ---------------------------------------------------------------------------
# vector mode
# ---------------------------------------------------------------------------

def unit_vector_model():
    feats = np.stack([e(0), e(0), e(1), e(1)], axis=1)  # 3 x 4
    return train_vector_mode(feats, [0, 0, 1, 1], rank=1)


def test_vector_mode_repeated_unit_vectors():
    m = unit_vector_model()
    q0, q1 = m.bases
    assert np.allclose(np.abs(q0.ravel()), e(0))
    assert np.allclose(np.abs(q1.ravel()), e(1))


def test_training_sample_in_span_has_zero_residual():
    m = unit_vector_model()
    res = classify(m, e(0))
    assert res.label == 0
    assert res.residuals[0] <= 1e-12
    assert abs(res.residuals[1] - 1.0) <= 1e-12


def test_vector_bases_match_eigendecomposition_oracle():
    rng = np.random.default_rng(71)
    for _ in range(10):
        d, n = 10, 14
        f0 = rng.standard_normal((d, n)) + 2.0
        f1 = rng.standard_normal((d, n)) - 2.0
        feats = np.concatenate([f0, f1], axis=1)
        labels = [0] * n + [1] * n
        k = 3
        m = train_vector_mode(feats, labels, rank=k)
        for c, part in ((0, f0), (1, f1)):
            q = m.bases[c]
            assert np.max(np.abs(q @ q.T - top_k_projector_oracle(part, k))) <= 1e-8


def test_vector_mode_errors_name_the_class():
    feats = np.stack([e(0), e(1), e(1), e(1)], axis=1)
    with pytest.raises(ValueError, match="class 0"):
        train_vector_mode(feats, [0, 1, 1, 1], rank=2)
    with pytest.raises(ValueError, match="both classes"):
        train_vector_mode(feats, [1, 1, 1, 1], rank=1)
    with pytest.raises(ValueError, match="rank"):
        train_vector_mode(feats, [0, 0, 1, 1], rank=9)


def test_residual_equivalence_with_explicit_projection():
    rng = np.random.default_rng(73)
    for _ in range(50):
        d, n, k = 9, 12, 4
        feats = rng.standard_normal((d, 2 * n))
        labels = [0] * n + [1] * n
        m = train_vector_mode(feats, labels, rank=k)
        z = rng.standard_normal(d)
        res = classify(m, z)
        for c, q in zip(m.class_labels, m.bases):
            direct = np.linalg.norm(z - q @ (q.T @ z))
            assert abs(res.residuals[c] * np.linalg.norm(z) - direct) <= 1e-10


def test_prediction_scale_invariance():
    rng = np.random.default_rng(79)
    feats = rng.standard_normal((8, 20))
    m = train_vector_mode(feats, [0] * 10 + [1] * 10, rank=3)
    for _ in range(20):
        z = rng.standard_normal(8)
        alpha = float(rng.uniform(0.01, 100.0))
        a, b = classify(m, z), classify(m, alpha * z)
        assert a.label == b.label
        for c in m.class_labels:
            assert abs(a.residuals[c] - b.residuals[c]) <= 1e-12


def test_orthogonal_consistency():
    rng = np.random.default_rng(83)
    d, n, k = 7, 9, 3
    feats = rng.standard_normal((d, 2 * n))
    labels = [0] * n + [1] * n
    w, _ = np.linalg.qr(rng.standard_normal((d, d)))
    m = train_vector_mode(feats, labels, rank=k)
    m_rot = train_vector_mode(w @ feats, labels, rank=k)
    for _ in range(20):
        z = rng.standard_normal(d)
        a, b = classify(m, z), classify(m_rot, w @ z)
        for c in m.class_labels:
            assert abs(a.residuals[c] - b.residuals[c]) <= 1e-10


def test_memorization_at_full_sample_rank():
    rng = np.random.default_rng(89)
    for _ in range(10):
        d, n = 8, 3
        feats = rng.standard_normal((d, 2 * n))
        labels = np.array([0] * n + [1] * n)
        m = train_vector_mode(feats, labels, rank=n)  # rank = class sample rank
        for j in range(2 * n):
            res = classify(m, feats[:, j])
            own = int(labels[j])
            other = 1 - own
            assert res.residuals[own] <= res.residuals[other] + 1e-12
            assert res.residuals[own] <= 1e-8


def test_tie_breaks_to_lowest_class_id():
    m = unit_vector_model()
    res = classify(m, np.array([1.0, 1.0, 0.0]))
    assert res.residuals[0] == res.residuals[1]
    assert res.label == 0
    assert res.margin == 0.0


def test_classify_rejects_zero_norm_and_bad_shape():
    m = unit_vector_model()
    with pytest.raises(ValueError, match="zero-norm"):
        classify(m, np.zeros(3))
    with pytest.raises(ShapeError):
        classify(m, np.zeros(4))


def test_residuals_lie_in_unit_interval():
    rng = np.random.default_rng(97)
    feats = rng.standard_normal((6, 16))
    m = train_vector_mode(feats, [0] * 8 + [1] * 8, rank=2)
    for _ in range(100):
        res = classify(m, rng.standard_normal(6))
        for r in res.residuals.values():
            assert 0.0 <= r <= 1.0 + 1e-12
        assert res.margin >= 0.0


# ---------------------------------------------------------------------------
# matrix mode
# ---------------------------------------------------------------------------

def one_hot_image(i, j, h=4, w=4):
    z = np.zeros((h, w))
    z[i, j] = 1.0
    return z


def test_matrix_mode_identical_copies_give_zero_residual():
    rng = np.random.default_rng(101)
    z = rng.standard_normal((5, 5))
    images = [z, z, z, one_hot_image(0, 0, 5, 5), one_hot_image(1, 1, 5, 5), one_hot_image(2, 2, 5, 5)]
    labels = [0, 0, 0, 1, 1, 1]
    m = train_matrix_mode(images, labels, ranks=(5, 5, 1))
    res = classify(m, z)
    assert res.label == 0
    assert res.residuals[0] <= 1e-10


def test_matrix_mode_orthogonal_one_hot_classes():
    images = [one_hot_image(0, 0)] * 3 + [one_hot_image(1, 1)] * 3
    labels = [0, 0, 0, 1, 1, 1]
    m = train_matrix_mode(images, labels, ranks=(2, 2, 1))
    res = classify(m, one_hot_image(0, 0))
    assert res.label == 0
    assert res.residuals[0] <= 1e-12
    assert abs(res.residuals[1] - 1.0) <= 1e-12


def test_matrix_mode_basis_matrices_are_orthonormal():
    rng = np.random.default_rng(103)
    images = [rng.standard_normal((6, 6)) for _ in range(10)]
    labels = [0] * 5 + [1] * 5
    # spatial truncation exercises the re-orthonormalization path
    m = train_matrix_mode(images, labels, ranks=(3, 3, 4))
    for basis in m.bases:
        gram = np.einsum("ihw,jhw->ij", basis, basis)
        assert np.max(np.abs(gram - np.eye(basis.shape[0]))) <= 1e-8


def test_matrix_mode_residuals_match_normal_equations_oracle():
    rng = np.random.default_rng(107)
    for trial in range(10):
        images = [rng.standard_normal((6, 6)) for _ in range(10)]
        labels = [0] * 5 + [1] * 5
        ranks = (6, 6, 3) if trial % 2 == 0 else (4, 4, 3)
        m = train_matrix_mode(images, labels, ranks=ranks)
        for _ in range(5):
            z = rng.standard_normal((6, 6))
            res = classify(m, z)
            oracle = {c: matrix_residual_oracle(b, z) for c, b in zip(m.class_labels, m.bases)}
            for c in m.class_labels:
                assert abs(res.residuals[c] - oracle[c]) <= 1e-9
            want = min(sorted(oracle), key=lambda c: oracle[c])
            assert res.label == want


def test_matrix_mode_drops_degenerate_core_slices():
    z = np.arange(12.0).reshape(3, 4) + 1.0
    images = [z, z, one_hot_image(0, 0, 3, 4), one_hot_image(1, 1, 3, 4)]
    labels = [0, 0, 1, 1]
    # class 0 stacks two identical images: mode-3 rank 1, so k3=2 must shrink
    m = train_matrix_mode(images, labels, ranks=(3, 4, 2))
    assert m.bases[0].shape[0] == 1
    assert m.bases[1].shape[0] == 2
    assert m.ranks == (3, 4, 2)
    assert classify(m, z).label == 0


def test_matrix_mode_precondition_errors():
    images = [one_hot_image(0, 0)] * 2 + [one_hot_image(1, 1)] * 2
    labels = [0, 0, 1, 1]
    with pytest.raises(ValueError, match="class 0"):
        train_matrix_mode(images, labels, ranks=(2, 2, 3))
    with pytest.raises(ValueError, match="spatial"):
        train_matrix_mode(images, labels, ranks=(5, 2, 1))
    with pytest.raises(ShapeError):
        train_matrix_mode([one_hot_image(0, 0, 4, 4), one_hot_image(0, 0, 3, 3)], [0, 1], (1, 1, 1))


# ---------------------------------------------------------------------------
# save / load
# ---------------------------------------------------------------------------

def models_bitwise_equal(a: HosvdModel, b: HosvdModel) -> bool:
    return (
        a.mode == b.mode
        and a.class_labels == b.class_labels
        and a.input_shape == b.input_shape
        and a.ranks == b.ranks
        and a.format_version == b.format_version
        and len(a.bases) == len(b.bases)
        and all(x.shape == y.shape and x.tobytes() == y.tobytes() for x, y in zip(a.bases, b.bases))
    )


def test_model_roundtrip_vector(tmp_path):
    rng = np.random.default_rng(109)
    feats = rng.standard_normal((12, 20))
    m = train_vector_mode(feats, [0] * 10 + [1] * 10, rank=4)
    p = tmp_path / "m.hsvd"
    save_model(m, p)
    assert models_bitwise_equal(load_model(p), m)


def test_model_roundtrip_matrix(tmp_path):
    rng = np.random.default_rng(113)
    images = [rng.standard_normal((5, 7)) for _ in range(8)]
    m = train_matrix_mode(images, [0] * 4 + [1] * 4, ranks=(3, 4, 2))
    p = tmp_path / "m.hsvd"
    save_model(m, p)
    assert models_bitwise_equal(load_model(p), m)
