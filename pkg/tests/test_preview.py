import numpy as np

from gaussbev.formats import read_pnm
from gaussbev.preview import preview_pca, preview_rgb, principal_components


def test_constant_grid_is_uniform():
    img = read_pnm(preview_pca(np.full((6, 5, 4), 3.0)))
    assert img.shape == (6, 5, 3)
    assert np.all(img == 128)


def test_header_and_size(rng):
    data = preview_pca(rng.normal(size=(7, 9, 5)))
    assert data.startswith(b"P6\n9 7\n255\n")
    assert len(data) == len(b"P6\n9 7\n255\n") + 7 * 9 * 3


def test_gray_for_few_channels(rng):
    img = preview_rgb(rng.normal(size=(4, 4, 1)))
    assert np.all(img[..., 0] == img[..., 1]) and np.all(img[..., 1] == img[..., 2])
    assert img.min() == 0 and img.max() == 255


def test_power_iteration_matches_eigh(rng):
    A = rng.normal(size=(500, 6)) * np.array([5.0, 3.0, 2.0, 1.0, 0.5, 0.1])
    vals, vecs = principal_components(A, k=3)
    X = A - A.mean(axis=0)
    w, v = np.linalg.eigh(X.T @ X / len(X))
    np.testing.assert_allclose(vals, w[::-1][:3], rtol=1e-8)
    for j in range(3):
        assert abs(abs(vecs[:, j] @ v[:, -1 - j]) - 1.0) < 1e-8


def test_orthogonal_patterns_land_in_distinct_channels():
    H, W = 12, 12
    r, c = np.mgrid[0:H, 0:W]
    p1 = np.where(c < W // 2, 1.0, -1.0)
    p2 = np.where(r < H // 2, 1.0, -1.0)
    p3 = p1 * p2
    grid = np.stack([3.0 * p1, 2.0 * p2, 1.0 * p3], axis=2)
    # oracle: eigen-decomposition of the 3x3 covariance says the channels are the components
    X = grid.reshape(-1, 3)
    w, v = np.linalg.eigh(np.cov(X.T, bias=True))
    np.testing.assert_allclose(np.abs(v), np.eye(3)[:, ::-1] * 0 + np.abs(v), atol=0)
    assert np.allclose(np.abs(v[:, ::-1]), np.eye(3), atol=1e-12)
    img = preview_rgb(grid).astype(float)
    for k, pat in enumerate((p1, p2, p3)):
        corr = [abs(np.corrcoef(img[..., ch].ravel(), pat.ravel())[0, 1]) for ch in range(3)]
        assert np.argmax(corr) == k
        assert max(corr) > 0.999


def test_preview_deterministic(rng):
    g = rng.normal(size=(10, 10, 8))
    assert preview_pca(g) == preview_pca(g.copy())
