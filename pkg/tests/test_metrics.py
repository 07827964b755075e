import numpy as np
import pytest
from helpers import random_symmetric

from covsketch.metrics import (
    eigenvector_to_pgm,
    normalized_error,
    save_eigenvectors_csv,
    spectral_norm,
    stable_rank,
    top_eigenvectors,
)


def test_spectral_norm_identity():
    assert spectral_norm(np.eye(7)) == 1.0


def test_spectral_norm_uses_absolute_eigenvalues():
    assert spectral_norm(np.diag([3.0, -5.0])) == 5.0


def test_spectral_norm_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        spectral_norm(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_spectral_norm_matches_eigh_small():
    rng = np.random.default_rng(1)
    for _ in range(20):
        A = random_symmetric(rng, 16)
        oracle = np.max(np.abs(np.linalg.eigvalsh(A)))
        assert spectral_norm(A) == pytest.approx(oracle, rel=1e-8)


def test_spectral_norm_matches_eigh_power_iteration_route():
    rng = np.random.default_rng(2)
    for _ in range(5):
        A = random_symmetric(rng, 128)
        oracle = np.max(np.abs(np.linalg.eigvalsh(A)))
        assert spectral_norm(A) == pytest.approx(oracle, rel=1e-7)


def test_spectral_norm_tied_magnitudes_fall_back_to_exact():
    # lambda_1 = -lambda_2 stalls plain power iteration; the residual guard
    # must push this case to the dense fallback instead of a wrong answer.
    p = 80
    diag = np.zeros(p)
    diag[0], diag[1] = 3.0, -3.0
    diag[2:] = np.linspace(0.1, 0.5, p - 2)
    rng = np.random.default_rng(3)
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    A = (Q * diag) @ Q.T
    A = (A + A.T) / 2
    assert spectral_norm(A) == pytest.approx(3.0, rel=1e-8)


def test_spectral_norm_homogeneity_and_sign():
    rng = np.random.default_rng(4)
    A = random_symmetric(rng, 24)
    n = spectral_norm(A)
    assert spectral_norm(-A) == pytest.approx(n, rel=1e-12)
    assert spectral_norm(2.5 * A) == pytest.approx(2.5 * n, rel=1e-12)


def test_norm_sandwich():
    rng = np.random.default_rng(5)
    for p in (4, 16, 33):
        A = random_symmetric(rng, p)
        spec = spectral_norm(A)
        fro = np.linalg.norm(A, "fro")
        assert spec <= fro * (1 + 1e-12)
        assert fro <= np.sqrt(p) * spec * (1 + 1e-12)


def test_spectral_norm_zero_matrix():
    assert spectral_norm(np.zeros((5, 5))) == 0.0
    assert spectral_norm(np.zeros((100, 100))) == 0.0


def test_normalized_error_identical():
    C = np.diag([2.0, 1.0])
    report = normalized_error(C, C)
    assert report.normalized_error == 0.0


def test_normalized_error_doubled():
    rng = np.random.default_rng(6)
    C = random_symmetric(rng, 8)
    report = normalized_error(2.0 * C, C)
    assert report.normalized_error == pytest.approx(1.0, rel=1e-10)


def test_normalized_error_identity_shift():
    p = 9
    report = normalized_error(np.eye(p) + 0.1 * np.eye(p), np.eye(p))
    assert report.normalized_error == pytest.approx(0.1, rel=1e-10)
    assert report.spectral_norm_target == pytest.approx(1.0)


def test_normalized_error_zero_reference_rejected():
    with pytest.raises(ValueError):
        normalized_error(np.eye(3), np.zeros((3, 3)))


def test_normalized_error_carries_estimate_provenance():
    from covsketch.estimator import estimate
    from covsketch.projection import DistributionSpec, ProjectionSpec
    from covsketch.sketch import sketch_dataset

    spec = ProjectionSpec(DistributionSpec.sparse_sign(4), p=5, m=2, master_seed=0)
    est = estimate(sketch_dataset(spec, [np.ones(5)] * 2), "unbiased")
    report = normalized_error(est, np.eye(5))
    assert report.kind == "unbiased"
    assert report.gamma == pytest.approx(0.5)


def test_stable_rank_rank_one():
    v = np.array([1.0, -2.0, 0.5])
    assert stable_rank(np.outer(v, v)) == pytest.approx(1.0, rel=1e-10)


def test_stable_rank_identity_is_exactly_p():
    for p in (3, 17, 64, 100):
        assert stable_rank(np.eye(p)) == float(p)


def test_stable_rank_zero_rejected():
    with pytest.raises(ValueError):
        stable_rank(np.zeros((4, 4)))


def test_top_eigenvectors_diagonal():
    summary = top_eigenvectors(np.diag([5.0, 1.0, 1.0]), k=1)
    assert summary.eigenvalues[0] == pytest.approx(5.0)
    np.testing.assert_allclose(summary.eigenvectors[:, 0], [1.0, 0.0, 0.0], atol=1e-12)


def test_top_eigenvectors_degenerate_leading_eigenvalue():
    summary = top_eigenvectors(np.diag([2.0, 2.0]), k=1)
    assert summary.eigenvalues[0] == pytest.approx(2.0)
    assert np.linalg.norm(summary.eigenvectors[:, 0]) == pytest.approx(1.0)


def test_top_eigenvectors_match_dense_oracle():
    rng = np.random.default_rng(7)
    A = random_symmetric(rng, 16)
    summary = top_eigenvectors(A, k=3)
    vals, vecs = np.linalg.eigh(A)
    order = np.argsort(-np.abs(vals))[:3]
    for i, j in enumerate(order):
        assert summary.eigenvalues[i] == pytest.approx(vals[j], rel=1e-6)
        dot = abs(float(summary.eigenvectors[:, i] @ vecs[:, j]))
        assert dot == pytest.approx(1.0, abs=1e-6)


def test_top_eigenvectors_deflation_route():
    rng = np.random.default_rng(8)
    A = random_symmetric(rng, 100)
    summary = top_eigenvectors(A, k=2)
    vals = np.linalg.eigvalsh(A)
    order = np.argsort(-np.abs(vals))[:2]
    np.testing.assert_allclose(summary.eigenvalues, vals[order], rtol=1e-6)
    # residual check: A v ~ lambda v
    for i in range(2):
        v = summary.eigenvectors[:, i]
        lam = summary.eigenvalues[i]
        assert np.linalg.norm(A @ v - lam * v) <= 1e-5 * np.abs(vals).max()


def test_sign_fixing_is_deterministic():
    rng = np.random.default_rng(9)
    A = random_symmetric(rng, 12)
    a = top_eigenvectors(A, k=2)
    b = top_eigenvectors(A, k=2)
    assert np.array_equal(a.eigenvectors, b.eigenvectors)
    for i in range(2):
        v = a.eigenvectors[:, i]
        assert v[np.argmax(np.abs(v))] > 0


def test_top_eigenvectors_k_bounds():
    with pytest.raises(ValueError):
        top_eigenvectors(np.eye(3), k=0)
    with pytest.raises(ValueError):
        top_eigenvectors(np.eye(3), k=4)


def test_eigenvector_csv_export(tmp_path):
    summary = top_eigenvectors(np.diag([4.0, 2.0, 1.0]), k=2)
    path = tmp_path / "vecs.csv"
    save_eigenvectors_csv(summary, path)
    loaded = np.loadtxt(path, delimiter=",", skiprows=1)
    assert loaded.shape == (3, 2)
    np.testing.assert_allclose(loaded, summary.eigenvectors, atol=1e-12)


def test_pgm_export(tmp_path):
    vec = np.linspace(-1.0, 1.0, 12)
    path = tmp_path / "v.pgm"
    eigenvector_to_pgm(vec, width=4, height=3, path=path)
    blob = path.read_bytes()
    assert blob.startswith(b"P5\n4 3\n255\n")
    pixels = np.frombuffer(blob.split(b"255\n", 1)[1], dtype=np.uint8)
    assert pixels.size == 12
    assert pixels.min() == 0 and pixels.max() == 255


def test_pgm_dimension_mismatch(tmp_path):
    with pytest.raises(ValueError, match="do not match"):
        eigenvector_to_pgm(np.ones(10), width=3, height=3, path=tmp_path / "x.pgm")


def test_pgm_constant_vector(tmp_path):
    path = tmp_path / "c.pgm"
    eigenvector_to_pgm(np.ones(4), width=2, height=2, path=path)
    pixels = np.frombuffer(path.read_bytes().split(b"255\n", 1)[1], dtype=np.uint8)
    assert np.all(pixels == 128)
