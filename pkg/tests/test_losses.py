import math

import numpy as np
import pytest

from gaussbev.errors import EmptyMask, NonPositiveDepth
from gaussbev.gradcheck import check_losses, numeric_jacobian, rel_error
from gaussbev.losses import LossWeights, bce_loss, depth_loss, total_loss


def _bce_direct(x, y):
    # 1 - sigma(x) is taken as sigma(-x) to keep the reference accurate at |x| = 30
    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))
    return float(np.mean(-(y * np.log(sig(x)) + (1 - y) * np.log(sig(-x)))))


def test_bce_examples():
    v, g = bce_loss(np.zeros((1, 1)), np.ones((1, 1)))
    assert v == pytest.approx(math.log(2.0), abs=1e-12)
    assert g[0, 0] == pytest.approx(-0.5)
    v, _ = bce_loss(np.full((1, 1), 50.0), np.ones((1, 1)))
    assert 0.0 <= v < 1e-9


def test_bce_matches_direct_reference(rng):
    x = rng.uniform(-30, 30, (20, 20))
    y = (rng.random((20, 20)) < 0.4).astype(float)
    assert bce_loss(x, y)[0] == pytest.approx(_bce_direct(x, y), abs=1e-9)


def test_bce_extreme_logits_are_finite():
    x = np.array([[-500.0, 500.0], [500.0, -500.0]])
    y = np.array([[0.0, 1.0], [0.0, 1.0]])
    v, g = bce_loss(x, y)
    assert np.isfinite(v) and np.all(np.isfinite(g))
    assert v == pytest.approx(250.0)  # two of four entries are wrong by 500


def test_bce_mask():
    x = np.array([[0.0, 100.0]])
    y = np.array([[1.0, 0.0]])
    v, g = bce_loss(x, y, mask=[[True, False]])
    assert v == pytest.approx(math.log(2.0))
    assert g[0, 1] == 0.0
    with pytest.raises(EmptyMask):
        bce_loss(x, y, mask=np.zeros((1, 2), bool))


def test_depth_examples():
    z = np.array([1.0, 2.0, 30.0])
    assert depth_loss(z, z)[0] == 0.0
    np.testing.assert_array_equal(depth_loss(z, z)[1], 0.0)
    assert depth_loss(math.e * z, z)[0] == pytest.approx(1.0)
    assert depth_loss(z / math.e ** 2, z)[0] == pytest.approx(2.0)


def test_depth_symmetric(rng):
    a = rng.uniform(0.1, 50, 10)
    b = rng.uniform(0.1, 50, 10)
    assert depth_loss(a, b)[0] == depth_loss(b, a)[0]


def test_depth_errors():
    with pytest.raises(NonPositiveDepth):
        depth_loss([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(NonPositiveDepth):
        depth_loss([1.0, 1.0], [1.0, -2.0])
    # masked-out entries are not inspected
    v, g = depth_loss([0.0, 2.0], [1.0, 2.0], mask=[False, True])
    assert v == 0.0 and g[0] == 0.0


def test_total_fixed():
    w = LossWeights(1.0, 1.0)
    v, dp, ds = total_loss({"sem": 0.5, "sem_early": 0.3, "depth": 0.2}, w)
    assert v == pytest.approx(1.0)
    assert dp == {"sem": 1.0, "sem_early": 1.0, "depth": 1.0} and ds == {}
    v, dp, _ = total_loss({"sem_early": 0.3, "depth": 0.2}, LossWeights(2.0, 0.05))
    assert v == pytest.approx(0.6 + 0.01)
    assert dp["depth"] == 0.05


def test_total_uncertainty():
    parts = {"sem": 0.5, "sem_early": 0.3, "depth": 0.2}
    v, dp, ds = total_loss(parts, LossWeights(mode="uncertainty"))
    assert v == pytest.approx(1.0)
    s = {"sem": 0.3, "sem_early": -1.0, "depth": 2.0}
    v, dp, ds = total_loss(parts, LossWeights(mode="uncertainty", s_params=s))
    assert v == pytest.approx(sum(math.exp(-s[k]) * parts[k] + s[k] for k in parts))
    for k in parts:
        assert ds[k] == pytest.approx(-math.exp(-s[k]) * parts[k] + 1.0)


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(-1.0, 0.0)
    with pytest.raises(ValueError):
        LossWeights(mode="adaptive")
    with pytest.raises(KeyError):
        total_loss({"ctr": 1.0}, LossWeights())


def test_loss_gradients_fd():
    res = check_losses(seed=3, n=30)
    assert res.passed, res.line()


def test_bce_gradient_fd_large_logits(rng):
    x = rng.uniform(-25, 25, (4, 4))
    y = (rng.random((4, 4)) < 0.5).astype(float)
    assert rel_error(numeric_jacobian(lambda v: bce_loss(v, y)[0], x), bce_loss(x, y)[1]) < 1e-6
